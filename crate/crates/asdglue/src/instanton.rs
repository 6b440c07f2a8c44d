//! The BPST one-instanton family with closed-form curvature.
//!
//! Chart index 0 plays the role of the fourth ('t Hooft) coordinate. With
//! this labelling the regular-gauge symbols η^a are anti-self-dual for the
//! orientation dx⁰∧dx¹∧dx²∧dx³ and η̄^a are self-dual.

use std::f64::consts::SQRT_2;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{
    ad_inv, rotate_constant, zero_one_form, zero_two_form, Alg, ConnectionField, OneForm,
    Provenance, TwoForm,
};
use crate::geometry::{Point4, PAIRS};

/// 't Hooft symbol η^a_{μν} (chart indices), or η̄ when `bar` is set.
pub fn thooft(a: usize, m: usize, n: usize, bar: bool) -> f64 {
    let sign = if bar { -1.0 } else { 1.0 };
    match (m, n) {
        (0, 0) => 0.0,
        (i, 0) => {
            if i == a + 1 {
                sign
            } else {
                0.0
            }
        }
        (0, j) => {
            if j == a + 1 {
                -sign
            } else {
                0.0
            }
        }
        (i, j) => levi_civita(a, i - 1, j - 1),
    }
}

fn levi_civita(a: usize, b: usize, c: usize) -> f64 {
    if a == b || b == c || a == c {
        return 0.0;
    }
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        _ => -1.0,
    }
}

/// η^a (or η̄^a) as a 2-form with components in [`PAIRS`] order.
pub fn thooft_form(a: usize, bar: bool) -> [f64; 6] {
    std::array::from_fn(|i| {
        let (m, n) = PAIRS[i];
        thooft(a, m, n, bar)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaugeFlavor {
    Regular,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpstParams {
    pub q: [f64; 4],
    pub lambda: f64,
    /// Global gauge rotation as [w, x, y, z].
    #[serde(default = "identity_rho")]
    pub rho: [f64; 4],
    #[serde(default = "default_flavor")]
    pub flavor: GaugeFlavor,
}

fn identity_rho() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn default_flavor() -> GaugeFlavor {
    GaugeFlavor::Regular
}

impl BpstParams {
    pub fn new(q: Point4, lambda: f64, flavor: GaugeFlavor) -> Self {
        Self {
            q: [q[0], q[1], q[2], q[3]],
            lambda,
            rho: identity_rho(),
            flavor,
        }
    }

    pub fn unit() -> Self {
        Self::new(Point4::zeros(), 1.0, GaugeFlavor::Regular)
    }

    pub fn with_rho(mut self, rho: UnitQuaternion<f64>) -> Self {
        let q = rho.into_inner();
        self.rho = [q.w, q.i, q.j, q.k];
        self
    }

    pub fn centre(&self) -> Point4 {
        Point4::from(self.q)
    }

    pub fn rotation(&self) -> Result<UnitQuaternion<f64>> {
        let [w, x, y, z] = self.rho;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rho must be a unit quaternion, |rho| = {}",
                q.norm()
            )));
        }
        Ok(UnitQuaternion::new_normalize(q))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "scale must be positive, got {}",
                self.lambda
            )));
        }
        if self.q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("centre must be finite".into()));
        }
        self.rotation().map(|_| ())
    }
}

/// Regular-gauge potential √2 η^a_{μν} y_ν/(|y|²+λ²).
fn regular_potential(y: &Point4, lambda: f64) -> OneForm {
    let f = SQRT_2 / (y.norm_squared() + lambda * lambda);
    eta_contract(y, false, f)
}

fn eta_contract(y: &Point4, bar: bool, f: f64) -> OneForm {
    std::array::from_fn(|m| {
        Alg::from_fn(|a, _| (0..4).map(|n| thooft(a, m, n, bar) * y[n]).sum::<f64>() * f)
    })
}

/// Regular-gauge curvature −2√2 η λ²/(|y|²+λ²)².
fn regular_curvature(y: &Point4, lambda: f64) -> TwoForm {
    let d = y.norm_squared() + lambda * lambda;
    let f = -2.0 * SQRT_2 * lambda * lambda / (d * d);
    std::array::from_fn(|i| {
        let (m, n) = PAIRS[i];
        Alg::from_fn(|a, _| thooft(a, m, n, false) * f)
    })
}

/// Unit quaternion relating the two gauges: singular = g⁻¹ regular g + g⁻¹dg.
pub fn singular_gauge_map(y: &Point4) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(y[0], -y[1], -y[2], -y[3]))
}

/// Singular-gauge potential √2 η̄^a_{μν} λ² y_ν/(|y|²(|y|²+λ²)).
fn singular_potential(y: &Point4, lambda: f64) -> Result<OneForm> {
    let r2 = y.norm_squared();
    if r2 == 0.0 {
        return Err(Error::Domain(
            "singular-gauge BPST evaluated at its centre".into(),
        ));
    }
    let f = SQRT_2 * lambda * lambda / (r2 * (r2 + lambda * lambda));
    Ok(eta_contract(y, true, f))
}

fn singular_curvature(y: &Point4, lambda: f64) -> Result<TwoForm> {
    if y.norm_squared() == 0.0 {
        return Err(Error::Domain(
            "singular-gauge BPST evaluated at its centre".into(),
        ));
    }
    let g = singular_gauge_map(y);
    let f = regular_curvature(y, lambda);
    Ok(f.map(|v| ad_inv(&g, &v)))
}

/// Analytic energy density 48λ⁴/(λ²+r²)⁴.
pub fn energy_density(r: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    48.0 * l2 * l2 / (l2 + r * r).powi(4)
}

/// The BPST instanton with the given centre, scale, rotation and gauge.
pub fn bpst(params: &BpstParams) -> Result<ConnectionField> {
    params.validate()?;
    let q = params.centre();
    let lambda = params.lambda;
    let field = match params.flavor {
        GaugeFlavor::Regular => ConnectionField::new(Provenance::Bpst, move |x| {
            Ok(regular_potential(&(x - q), lambda))
        })
        .with_curvature(move |x| Ok(regular_curvature(&(x - q), lambda))),
        GaugeFlavor::Singular => ConnectionField::new(Provenance::Bpst, move |x| {
            singular_potential(&(x - q), lambda)
        })
        .with_curvature(move |x| singular_curvature(&(x - q), lambda)),
    };
    let rho = params.rotation()?;
    if rho == UnitQuaternion::identity() {
        return Ok(field);
    }
    Ok(rotate_constant(&field, rho))
}

/// The flat product connection Θ.
pub fn product_connection() -> ConnectionField {
    ConnectionField::new(Provenance::Product, |_| Ok(zero_one_form()))
        .with_curvature(|_| Ok(zero_two_form()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{curvature_fd, two_form_norm_sq};
    use crate::geometry::pt;

    fn hodge_flat(f: &[f64; 6]) -> [f64; 6] {
        // *(01)=23, *(02)=−13, *(03)=12 and back.
        [f[5], -f[4], f[3], f[2], -f[1], f[0]]
    }

    #[test]
    fn thooft_symbols_have_expected_duality() {
        for a in 0..3 {
            let e = thooft_form(a, false);
            let eb = thooft_form(a, true);
            let (se, seb) = (hodge_flat(&e), hodge_flat(&eb));
            for i in 0..6 {
                assert_eq!(se[i], -e[i]);
                assert_eq!(seb[i], eb[i]);
            }
        }
    }

    #[test]
    fn density_at_centre_is_48() {
        let a = bpst(&BpstParams::unit()).unwrap();
        let f = curvature_fd(&a, &Point4::zeros(), 1e-4).unwrap();
        assert!((two_form_norm_sq(&f) / 48.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn analytic_curvature_matches_differences() {
        for flavor in [GaugeFlavor::Regular, GaugeFlavor::Singular] {
            let p = BpstParams::new(pt(0.1, -0.2, 0.3, 0.0), 0.7, flavor);
            let a = bpst(&p).unwrap();
            for x in [
                pt(0.5, 0.3, -0.2, 0.9),
                pt(-1.0, 0.2, 0.4, 0.1),
                pt(2.0, 1.0, 0.0, -1.0),
            ] {
                let fa = a.curvature(&x).unwrap();
                let fd = curvature_fd(&a, &x, 1e-4).unwrap();
                let err: f64 = (0..6)
                    .map(|i| (fa[i] - fd[i]).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                let scale = two_form_norm_sq(&fa).sqrt();
                assert!(
                    err < 1e-6 * scale.max(1.0),
                    "{flavor:?} at {x:?}: {err:e} vs {scale:e}"
                );
            }
        }
    }

    #[test]
    fn singular_centre_is_a_domain_error() {
        let p = BpstParams::new(pt(1.0, 0.0, 0.0, 0.0), 1.0, GaugeFlavor::Singular);
        let a = bpst(&p).unwrap();
        assert!(matches!(
            a.eval(&pt(1.0, 0.0, 0.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn params_roundtrip_json() {
        let p = BpstParams::new(pt(0.0, 1.0, 0.0, 0.0), 0.5, GaugeFlavor::Singular);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"flavor\":\"singular\""));
        let back: BpstParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = BpstParams::unit();
        p.lambda = 0.0;
        assert!(bpst(&p).is_err());
        let mut p = BpstParams::unit();
        p.rho = [2.0, 0.0, 0.0, 0.0];
        assert!(bpst(&p).is_err());
    }

    #[test]
    fn product_connection_vanishes() {
        let a = product_connection();
        let x = pt(3.0, 1.0, 2.0, 0.0);
        assert!(a.eval(&x).unwrap().iter().all(|v| v.norm() == 0.0));
        assert_eq!(a.energy_density(&x).unwrap(), 0.0);
    }
}
