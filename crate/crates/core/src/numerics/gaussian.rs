use crate::error::{Error, Result};

/// `-½ ln(2π)`.
pub const LOG_NORM_CONST: f64 = -0.918_938_533_204_672_8;

/// Sum of independent univariate Gaussian log densities.
pub fn gaussian_log_density(v: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if v.len() != mu.len() || v.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "gaussian_log_density: lengths {} / {} / {}",
            v.len(),
            mu.len(),
            sigma.len()
        )));
    }
    let mut total = 0.0;
    for ((&x, &m), &s) in v.iter().zip(mu).zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {s}")));
        }
        let r = (x - m) / s;
        total += LOG_NORM_CONST - s.ln() - 0.5 * r * r;
    }
    Ok(total)
}

/// Unit-variance special case, the only one the flow prior uses.
pub fn unit_gaussian_log_density(v: &[f64], mu: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), mu.len());
    let sq: f64 = v.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum();
    LOG_NORM_CONST * v.len() as f64 - 0.5 * sq
}
