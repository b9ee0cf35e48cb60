use crate::error::{Error, Result};

/// Gaussian ramp-up `w_max * exp(-5 (1 - t/t_max)^2)`, exactly `w_max` at
/// `t >= t_max`.
pub fn lambda_schedule(t: u64, t_max: u64, w_max: f64) -> Result<f64> {
    if t_max == 0 {
        return Err(Error::Invalid("ramp-up needs t_max > 0".into()));
    }
    if t >= t_max {
        return Ok(w_max);
    }
    let phase = 1.0 - t as f64 / t_max as f64;
    Ok(w_max * (-5.0 * phase * phase).exp())
}

/// Polynomial decay `lr0 * (1 - t/t_max)^0.9`.
pub fn poly_lr(lr0: f64, t: u64, t_max: u64) -> f64 {
    if t_max == 0 {
        return lr0;
    }
    let frac = (t as f64 / t_max as f64).min(1.0);
    lr0 * (1.0 - frac).powf(0.9)
}

/// Uncertainty threshold ramped from `0.75 ln 2` towards `u_th_max`.
pub fn uncertainty_threshold(t: u64, t_max: u64, u_th_max: f64) -> Result<f64> {
    let start = 0.75 * std::f64::consts::LN_2;
    Ok(start + (u_th_max - start) * lambda_schedule(t, t_max, 1.0)?)
}
