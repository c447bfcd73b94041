use super::HyperParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Fedx1,
    Fedx2,
}

/// `ceil` that ignores floating-point noise just above an integer.
fn ceil_tol(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize
}

/// Hyperparameters from a target accuracy `eps`, the client count `n` and
/// the largest local positive count `m`.
///
/// FedX1: `R = ceil(scale / eps^3)`, `eta = scale N eps^2`,
/// `K = max(1, ceil(1 / (N eps)))`.
/// FedX2: `R = ceil(scale sqrt(M) / eps^3)`, `eta = scale eps^2 / M`,
/// `gamma = scale eps^2`, `beta = scale eps^2 / sqrt(M)`,
/// `K = max(1, ceil(sqrt(M) / eps))`, with `gamma` and `beta` clamped to `(0, 1]`.
/// Fields not named here keep `base`'s values.
pub fn theory_schedule(
    kind: ScheduleKind,
    eps: f64,
    n: usize,
    m: usize,
    scale: f64,
    base: &HyperParams,
) -> Result<HyperParams> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("target eps must lie in (0, 1)"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale must be positive"));
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid("N and M must be positive"));
    }
    let mut h = base.clone();
    let eps2 = eps * eps;
    let eps3 = eps2 * eps;
    match kind {
        ScheduleKind::Fedx1 => {
            h.rounds = ceil_tol(scale / eps3).max(1);
            h.eta = scale * n as f64 * eps2;
            h.local_steps = ceil_tol(1.0 / (n as f64 * eps)).max(1);
        }
        ScheduleKind::Fedx2 => {
            let m = m as f64;
            h.rounds = ceil_tol(scale * m.sqrt() / eps3).max(1);
            h.eta = scale * eps2 / m;
            h.gamma = (scale * eps2).min(1.0);
            h.beta = (scale * eps2 / m.sqrt()).min(1.0);
            h.local_steps = ceil_tol(m.sqrt() / eps).max(1);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fedx1_example() {
        let h = theory_schedule(ScheduleKind::Fedx1, 0.1, 4, 1, 1.0, &HyperParams::default()).unwrap();
        assert_eq!(h.local_steps, 3);
        assert!((h.eta - 0.04).abs() < 1e-15);
        assert_eq!(h.rounds, 1000);
    }

    #[test]
    fn fedx2_example() {
        let h = theory_schedule(ScheduleKind::Fedx2, 0.1, 4, 100, 1.0, &HyperParams::default()).unwrap();
        assert_eq!(h.local_steps, 100);
        assert!((h.gamma - 0.01).abs() < 1e-15);
        assert!((h.beta - 0.001).abs() < 1e-15);
        assert_eq!(h.rounds, 10_000);
    }

    #[test]
    fn bad_inputs() {
        let b = HyperParams::default();
        assert!(theory_schedule(ScheduleKind::Fedx1, 1.0, 4, 1, 1.0, &b).is_err());
        assert!(theory_schedule(ScheduleKind::Fedx1, 0.1, 4, 1, 0.0, &b).is_err());
    }

    proptest! {
        #[test]
        fn always_valid(eps in 0.001f64..0.999, n in 1usize..1000, m in 1usize..1000, scale in 0.01f64..100.0, fedx2 in any::<bool>()) {
            let kind = if fedx2 { ScheduleKind::Fedx2 } else { ScheduleKind::Fedx1 };
            let h = theory_schedule(kind, eps, n, m, scale, &HyperParams::default()).unwrap();
            prop_assert!(h.local_steps >= 1);
            prop_assert!(h.rounds >= 1);
            prop_assert!(h.gamma > 0.0 && h.gamma <= 1.0);
            prop_assert!(h.beta > 0.0 && h.beta <= 1.0);
        }
    }
}
