#![allow(dead_code)]

use chemobranch::model::ModelParams;

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Small 1-d setup with the field decoupled and no population dynamics.
pub fn quiet_1d() -> ModelParams {
    ModelParams {
        sigma: 1.0,
        alpha: 0.0,
        grid_n: 64,
        extent: 20.0,
        dt: 0.02,
        horizon: 1.0,
        ..Default::default()
    }
}
