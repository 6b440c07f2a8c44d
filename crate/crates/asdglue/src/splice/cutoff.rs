//! Radial cutoff functions, all built on the quintic smoothstep.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{legendre, smoothstep, Point4};

/// ζ(t): 0 for t ≤ ½, 1 for t ≥ 1. Returns (value, dζ/dt).
pub fn zeta(t: f64) -> (f64, f64) {
    let (v, d) = smoothstep(2.0 * t - 1.0);
    (v, 2.0 * d)
}

/// γ(t): 0 for t ≤ ½, 1 for t ≥ 2, smoothstep in log t, with γ(1/t) = 1 − γ(t).
pub fn gamma(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let u = (t.ln() + LN_2) / (2.0 * LN_2);
    let (v, d) = smoothstep(u);
    (v, d / (2.0 * LN_2 * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CutoffFn {
    /// ζ(|x|/b): zero on B(b/2), one outside B(b).
    Psi { b: f64 },
    /// γ(|x|/√λ): zero on B(½√λ), one outside B(2√λ).
    Gamma { lambda: f64 },
    /// Zero on B(√λ/N), one outside B(√λ/√N), smoothstep in log|x|.
    Beta { lambda: f64, n: f64 },
}

impl CutoffFn {
    /// Radii bounding the transition annulus.
    pub fn transition(&self) -> (f64, f64) {
        match *self {
            CutoffFn::Psi { b } => (0.5 * b, b),
            CutoffFn::Gamma { lambda } => (0.5 * lambda.sqrt(), 2.0 * lambda.sqrt()),
            CutoffFn::Beta { lambda, n } => (lambda.sqrt() / n, lambda.sqrt() / n.sqrt()),
        }
    }
}

/// Value and gradient of the cutoff at `x` (about the origin).
pub fn cutoff_eval(c: &CutoffFn, x: &Point4) -> (f64, Point4) {
    let r = x.norm();
    let (v, dr) = match *c {
        CutoffFn::Psi { b } => {
            let (v, d) = zeta(r / b);
            (v, d / b)
        }
        CutoffFn::Gamma { lambda } => {
            let s = lambda.sqrt();
            let (v, d) = gamma(r / s);
            (v, d / s)
        }
        CutoffFn::Beta { lambda, n } => {
            if r <= 0.0 {
                (0.0, 0.0)
            } else {
                let w = 0.5 * n.ln();
                let (v, d) = smoothstep((r * n / lambda.sqrt()).ln() / w);
                (v, d / (w * r))
            }
        }
    };
    let grad = if dr == 0.0 || r == 0.0 {
        Point4::zeros()
    } else {
        x * (dr / r)
    };
    (v, grad)
}

/// ‖dc‖_{L^p(ℝ⁴)} by Gauss–Legendre in log r over the transition annulus.
pub fn gradient_lp_norm(c: &CutoffFn, p: f64) -> f64 {
    let (r0, r1) = c.transition();
    let span = (r1 / r0).ln();
    let panels = 8;
    let rule = legendre(16);
    let mut total = 0.0;
    for k in 0..panels {
        let (a, b) = (
            span * k as f64 / panels as f64,
            span * (k + 1) as f64 / panels as f64,
        );
        for &(t, w) in &rule {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let r = r0 * s.exp();
            let (_, g) = cutoff_eval(c, &Point4::new(r, 0.0, 0.0, 0.0));
            // r³dr = r⁴ds
            total += 0.5 * (b - a) * w * g.norm().powf(p) * r.powi(4);
        }
    }
    (2.0 * PI * PI * total).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    #[test]
    fn gamma_is_antisymmetric_in_log() {
        for t in [0.3, 0.7, 1.0, 1.3, 1.9, 3.0] {
            assert!((gamma(1.0 / t).0 - (1.0 - gamma(t).0)).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_differences() {
        let x = pt(0.3, 0.1, -0.2, 0.05);
        let cs = [
            CutoffFn::Psi { b: 0.5 },
            CutoffFn::Gamma { lambda: 0.04 },
            CutoffFn::Beta {
                lambda: 2.0,
                n: 8.0,
            },
        ];
        for c in cs {
            let (_, g) = cutoff_eval(&c, &x);
            for m in 0..4 {
                let mut e = Point4::zeros();
                e[m] = 1e-6;
                let fd = (cutoff_eval(&c, &(x + e)).0 - cutoff_eval(&c, &(x - e)).0) / 2e-6;
                assert!(
                    (fd - g[m]).abs() < 1e-6,
                    "{c:?} component {m}: {fd} vs {}",
                    g[m]
                );
            }
        }
    }
}
