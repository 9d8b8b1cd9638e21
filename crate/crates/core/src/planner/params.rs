//! Parameter choices under which the planners' sub-optimality guarantees
//! hold. Real-valued intermediates are kept unrounded; only `n`, `K` and `m`
//! are rounded up at the end.

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub tau: f64,
    /// Politex step size, computed from the unrounded `K`.
    pub alpha: Option<f64>,
    pub n_raw: f64,
    pub k_raw: f64,
    pub m_raw: f64,
    pub n: u64,
    pub k: u64,
    pub m: u64,
    /// Guaranteed sub-optimality under misspecification `ε`.
    pub bound: Option<f64>,
}

fn check_common(gamma: f64, b: f64, delta: f64, d: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid("b", format!("must be positive, got {b}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    Ok(())
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {value}")))
    }
}

fn check_actions(action_count: usize) -> Result<()> {
    if action_count < 2 {
        return Err(invalid("actions", "politex needs at least two actions"));
    }
    Ok(())
}

fn round_up(x: f64, min: u64) -> u64 {
    // `as` saturates for values beyond u64::MAX.
    (x.ceil().max(0.0) as u64).max(min)
}

/// `1 + ln(1 + 1/λ)`, the recurring log factor.
fn log_factor(lambda: f64) -> f64 {
    1.0 + (1.0 / lambda).ln_1p()
}

fn finish(
    algorithm: Algorithm,
    lambda: f64,
    alpha: Option<f64>,
    n_raw: f64,
    k_raw: f64,
    m_raw: f64,
    bound: Option<f64>,
) -> TheoremParams {
    TheoremParams {
        algorithm,
        lambda,
        tau: 1.0,
        alpha,
        n_raw,
        k_raw,
        m_raw,
        n: round_up(n_raw, 0),
        k: round_up(k_raw, 1),
        m: round_up(m_raw, 1),
        bound,
    }
}

/// Realizable-case parameters for Confident MC-LSPI, target accuracy `κ`.
pub fn lspi_params_from_theorem(kappa: f64, gamma: f64, b: f64, delta: f64, d: usize) -> Result<TheoremParams> {
    check_positive("kappa", kappa)?;
    check_common(gamma, b, delta, d)?;
    let h = 1.0 - gamma;
    let d = d as f64;
    let lambda = kappa * kappa * h.powi(4) / (1024.0 * b * b);
    let lf = log_factor(lambda);
    let n = (3.0 / h) * (4.0 * (1.0 + (1.0 / lambda).ln_1p() * d) / (kappa * h)).ln();
    let k = 2.0 + (2.0 / h) * (3.0 / (kappa * h)).ln();
    let m = 4096.0 * d * lf / (kappa * kappa * h.powi(6)) * (8.0 * k * d * lf / delta).ln();
    Ok(finish(Algorithm::Lspi, lambda, None, n, k, m, None))
}

/// Realizable-case parameters for Confident MC-Politex.
pub fn politex_params_from_theorem(
    kappa: f64,
    gamma: f64,
    b: f64,
    delta: f64,
    d: usize,
    action_count: usize,
) -> Result<TheoremParams> {
    check_positive("kappa", kappa)?;
    check_common(gamma, b, delta, d)?;
    check_actions(action_count)?;
    let h = 1.0 - gamma;
    let d = d as f64;
    let ln_a = (action_count as f64).ln();
    let lambda = kappa * kappa * h * h / (256.0 * b * b);
    let lf = log_factor(lambda);
    let k = 32.0 * ln_a / (kappa * kappa * h.powi(4));
    let alpha = h * (2.0 * ln_a / k).sqrt();
    let n = (1.0 / h) * (32.0 * d.sqrt() * lf / (h * h * kappa)).ln();
    let m = 1024.0 * d * lf / (kappa * kappa * h.powi(4)) * (8.0 * k * d * lf / delta).ln();
    Ok(finish(Algorithm::Politex, lambda, Some(alpha), n, k, m, None))
}

/// Parameters for misspecification level `ε`, with the resulting
/// sub-optimality bound in `bound`.
pub fn misspecified_params_from_theorem(
    epsilon: f64,
    gamma: f64,
    b: f64,
    delta: f64,
    d: usize,
    algorithm: Algorithm,
    action_count: usize,
) -> Result<TheoremParams> {
    check_positive("epsilon", epsilon)?;
    check_common(gamma, b, delta, d)?;
    let h = 1.0 - gamma;
    let df = d as f64;
    let lambda = epsilon * epsilon * df / (b * b);
    let lf = log_factor(lambda);
    let n = (1.0 / h) * (1.0 / (epsilon * h)).ln();
    let bound_log = 1.0 + (b * b / (epsilon * epsilon * df)).ln_1p();
    let (k, alpha, bound) = match algorithm {
        Algorithm::Lspi => {
            let k = 2.0 + (1.0 / h) * (1.0 / (epsilon * df.sqrt())).ln();
            (k, None, 74.0 * epsilon * df.sqrt() / (h * h) * bound_log)
        }
        Algorithm::Politex => {
            check_actions(action_count)?;
            let ln_a = (action_count as f64).ln();
            let k = 2.0 * ln_a / (epsilon * epsilon * df * h * h);
            let alpha = h * (2.0 * ln_a / k).sqrt();
            (k, Some(alpha), 42.0 * epsilon * df.sqrt() / h * bound_log)
        }
    };
    // The LSPI `K` goes negative once `ε√d` is large; `m` uses the clamped
    // iteration count so it stays finite.
    let m = 1.0 / (epsilon * epsilon * h * h) * (8.0 * k.max(1.0) * df * lf / delta).ln();
    Ok(finish(algorithm, lambda, alpha, n, k, m, Some(bound)))
}
