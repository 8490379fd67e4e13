use ppp_bayes::forward::*;
use ppp_bayes::bayes::ForwardModel;
fn main() {
    for y in [0.1, 0.2, 0.55, 0.7] {
        let sensors: Vec<(f64,f64)> = (1..=5).map(|k| (k as f64 / 6.0, y)).collect();
        let setup = HeatSetup::new(65, 15.0,
            [Disk{center:(0.3,0.4),radius:0.15}, Disk{center:(0.7,0.4),radius:0.15}],
            200.0, 2000.0, sensors).unwrap();
        let model = HeatModel::new(setup);
        let t = param_from_conductivity(32.0);
        let g_true = model.apply(&[t, -t]).unwrap();
        let g_lo = model.apply(&[-1.0, 1.0]).unwrap();
        let g_hi = model.apply(&[1.0, -1.0]).unwrap();
        let range: f64 = g_lo.iter().zip(&g_hi).map(|(a,b)| (a-b).abs()).fold(0.0, f64::max);
        let mean: f64 = g_true.iter().sum::<f64>() / 5.0;
        println!("y={y}: mean u {:.1}, max sensor swing lo<->hi {:.3} K, 1% noise would be {:.2}", mean, range, 0.01*mean);
    }
}
