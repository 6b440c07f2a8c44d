//! SU(2) connections as su(2)-valued 1-forms on a chart.
//!
//! Lie algebra values are stored as coefficient 3-vectors in the basis
//! eₐ = σₐ/(i√2), which is orthonormal for ⟨ξ,η⟩ = −tr(ξη). In this basis
//! [ξ,η] = √2 ξ×η, and ξ corresponds to the imaginary quaternion
//! (ξ¹i + ξ²j + ξ³k)/√2.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{pair_index, ConformalMap, Point4, PAIRS};

pub type Alg = Vector3<f64>;
/// Components A_μ, μ = 0..3.
pub type OneForm = [Alg; 4];
/// Components F_{μν}, μ < ν, in [`PAIRS`] order.
pub type TwoForm = [Alg; 6];

pub fn bracket(a: &Alg, b: &Alg) -> Alg {
    a.cross(b) * SQRT_2
}

pub fn alg_to_quat(a: &Alg) -> Quaternion<f64> {
    Quaternion::new(0.0, a[0], a[1], a[2]) / SQRT_2
}

pub fn quat_to_alg(q: &Quaternion<f64>) -> Alg {
    Vector3::new(q.i, q.j, q.k) * SQRT_2
}

/// u⁻¹ξu.
pub fn ad_inv(u: &UnitQuaternion<f64>, a: &Alg) -> Alg {
    u.inverse_transform_vector(a)
}

/// exp of a Lie algebra element as a unit quaternion.
pub fn exp_alg(a: &Alg) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(alg_to_quat(a).exp())
}

/// Principal logarithm of a unit quaternion as a Lie algebra element. Fails
/// near the cut at −1, where the logarithm is not continuous.
pub fn log_alg(u: &UnitQuaternion<f64>) -> Result<Alg> {
    let half_angle = u.w.clamp(-1.0, 1.0).acos();
    if half_angle > std::f64::consts::PI - 1e-3 {
        return Err(Error::Numerical(format!(
            "gauge rotation too close to -1 for a continuous logarithm (angle {half_angle})"
        )));
    }
    Ok(quat_to_alg(&u.into_inner().ln()))
}

pub fn zero_one_form() -> OneForm {
    [Alg::zeros(); 4]
}

pub fn zero_two_form() -> TwoForm {
    [Alg::zeros(); 6]
}

pub fn one_form_norm_sq(a: &OneForm) -> f64 {
    a.iter().map(|v| v.norm_squared()).sum()
}

pub fn two_form_norm_sq(f: &TwoForm) -> f64 {
    f.iter().map(|v| v.norm_squared()).sum()
}

/// F_{μν} for any ordered pair, using antisymmetry.
pub fn component(f: &TwoForm, m: usize, n: usize) -> Alg {
    match pair_index(m, n) {
        Some((i, s)) => f[i] * s,
        None => Alg::zeros(),
    }
}

/// (ι_v F)_μ = v^ν F_{νμ}.
pub fn interior(f: &TwoForm, v: &Point4) -> OneForm {
    std::array::from_fn(|m| (0..4).map(|n| component(f, n, m) * v[n]).sum())
}

/// ι_v A = v^μ A_μ.
pub fn contract(a: &OneForm, v: &Point4) -> Alg {
    (0..4).map(|m| a[m] * v[m]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Bpst,
    Product,
    Spliced,
    PulledBack,
    Transformed,
    Sum,
    RadialGauge,
    Custom(String),
}

type PotentialFn = dyn Fn(&Point4) -> Result<OneForm> + Send + Sync;
type CurvatureFn = dyn Fn(&Point4) -> Result<TwoForm> + Send + Sync;

/// A connection on the trivial bundle over a chart, as a pointwise evaluator.
#[derive(Clone)]
pub struct ConnectionField {
    potential: Arc<PotentialFn>,
    curvature: Option<Arc<CurvatureFn>>,
    pub provenance: Provenance,
}

impl std::fmt::Debug for ConnectionField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectionField")
            .field("provenance", &self.provenance)
            .field("analytic_curvature", &self.curvature.is_some())
            .finish()
    }
}

impl ConnectionField {
    pub fn new<F>(provenance: Provenance, potential: F) -> Self
    where
        F: Fn(&Point4) -> Result<OneForm> + Send + Sync + 'static,
    {
        Self {
            potential: Arc::new(potential),
            curvature: None,
            provenance,
        }
    }

    pub fn with_curvature<F>(mut self, curvature: F) -> Self
    where
        F: Fn(&Point4) -> Result<TwoForm> + Send + Sync + 'static,
    {
        self.curvature = Some(Arc::new(curvature));
        self
    }

    pub fn without_curvature(mut self) -> Self {
        self.curvature = None;
        self
    }

    pub fn zero() -> Self {
        Self::new(Provenance::Product, |_| Ok(zero_one_form()))
            .with_curvature(|_| Ok(zero_two_form()))
    }

    pub fn eval(&self, x: &Point4) -> Result<OneForm> {
        (self.potential)(x)
    }

    pub fn has_analytic_curvature(&self) -> bool {
        self.curvature.is_some()
    }

    pub fn analytic_curvature(&self, x: &Point4) -> Option<Result<TwoForm>> {
        self.curvature.as_ref().map(|f| f(x))
    }

    /// Curvature at `x`: analytic when attached, otherwise central differences.
    pub fn curvature(&self, x: &Point4) -> Result<TwoForm> {
        match &self.curvature {
            Some(f) => f(x),
            None => curvature_fd(self, x, default_step(x)),
        }
    }

    pub fn energy_density(&self, x: &Point4) -> Result<f64> {
        Ok(two_form_norm_sq(&self.curvature(x)?))
    }
}

/// Default spatial step, relative for large |x|.
pub fn default_step(x: &Point4) -> f64 {
    1e-4 * x.norm().max(1.0)
}

/// Curvature by central differences of A plus the exact bracket term.
pub fn curvature_fd(a: &ConnectionField, x: &Point4, h: f64) -> Result<TwoForm> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let mut d = [[Alg::zeros(); 4]; 4]; // d[μ][ν] = ∂_μ A_ν
    for (m, row) in d.iter_mut().enumerate() {
        let mut e = Point4::zeros();
        e[m] = h;
        let ap = a.eval(&(x + e))?;
        let am = a.eval(&(x - e))?;
        for n in 0..4 {
            row[n] = (ap[n] - am[n]) / (2.0 * h);
        }
    }
    let a0 = a.eval(x)?;
    Ok(std::array::from_fn(|i| {
        let (m, n) = PAIRS[i];
        d[m][n] - d[n][m] + bracket(&a0[m], &a0[n])
    }))
}

/// One Richardson step on [`curvature_fd`]: (4F(h/2) − F(h))/3.
pub fn curvature_richardson(a: &ConnectionField, x: &Point4, h: f64) -> Result<TwoForm> {
    let coarse = curvature_fd(a, x, h)?;
    let fine = curvature_fd(a, x, 0.5 * h)?;
    Ok(std::array::from_fn(|i| (fine[i] * 4.0 - coarse[i]) / 3.0))
}

/// Curvature at `x`; forces finite differences when `analytic` is false.
pub fn curvature(a: &ConnectionField, x: &Point4, h: f64, analytic: bool) -> Result<TwoForm> {
    if analytic {
        if let Some(f) = a.analytic_curvature(x) {
            return f;
        }
    }
    curvature_fd(a, x, h)
}

fn unit_volume_coframe(g: &Matrix4<f64>) -> Result<(Matrix4<f64>, f64)> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Domain("metric is not positive definite".into()))?;
    let l = chol.l();
    let det = (0..4).map(|i| l[(i, i)]).product::<f64>();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Domain("degenerate metric".into()));
    }
    let s = det.powf(0.25);
    Ok((l / s, s))
}

/// Self-dual part ½(1 + *_g)F, as coefficients on the orthonormal basis
/// (e⁰¹+e²³)/√2, (e⁰²+e³¹)/√2, (e⁰³+e¹²)/√2 of a coframe normalised to unit
/// volume. The normalisation makes the output depend only on the conformal
/// class of g.
pub fn selfdual_part(f: &TwoForm, g: &Matrix4<f64>) -> Result<[Alg; 3]> {
    let (l, _) = unit_volume_coframe(g)?;
    let m = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Domain("singular coframe".into()))?;
    let mut frame = [[Alg::zeros(); 4]; 4];
    for (i, row) in frame.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let mut acc = Alg::zeros();
            for mu in 0..4 {
                for nu in 0..4 {
                    let c = m[(mu, i)] * m[(nu, j)];
                    if c != 0.0 && mu != nu {
                        acc += component(f, mu, nu) * c;
                    }
                }
            }
            *slot = acc;
        }
    }
    let r = 1.0 / SQRT_2;
    Ok([
        (frame[0][1] + frame[2][3]) * r,
        (frame[0][2] + frame[3][1]) * r,
        (frame[0][3] + frame[1][2]) * r,
    ])
}

/// Inverse of [`selfdual_part`] on self-dual forms: coordinate components of
/// the self-dual 2-form with the given coefficients.
pub fn selfdual_embed(c: &[Alg; 3], g: &Matrix4<f64>) -> Result<TwoForm> {
    let (l, _) = unit_volume_coframe(g)?;
    let r = 1.0 / SQRT_2;
    let mut frame = [[Alg::zeros(); 4]; 4];
    let mut set = |i: usize, j: usize, v: Alg| {
        frame[i][j] = v;
        frame[j][i] = -v;
    };
    set(0, 1, c[0] * r);
    set(2, 3, c[0] * r);
    set(0, 2, c[1] * r);
    set(3, 1, c[1] * r);
    set(0, 3, c[2] * r);
    set(1, 2, c[2] * r);
    Ok(std::array::from_fn(|k| {
        let (mu, nu) = PAIRS[k];
        let mut acc = Alg::zeros();
        for (i, row) in frame.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                acc += v * (l[(mu, i)] * l[(nu, j)]);
            }
        }
        acc
    }))
}

/// |F⁺|_g^p · √det g at one point.
pub fn selfdual_density(f: &TwoForm, g: &Matrix4<f64>, p: f64) -> Result<f64> {
    let c = selfdual_part(f, g)?;
    let (_, s) = unit_volume_coframe(g)?;
    let s4 = s.powi(4);
    let n2: f64 = c.iter().map(|v| v.norm_squared()).sum::<f64>() / (s4 * s4);
    Ok(n2.powf(0.5 * p) * s4)
}

type UnitFn = dyn Fn(&Point4) -> UnitQuaternion<f64> + Send + Sync;
type DerivFn = dyn Fn(&Point4) -> [Quaternion<f64>; 4] + Send + Sync;

/// A gauge transformation x ↦ u(x) ∈ SU(2), as unit quaternions.
#[derive(Clone)]
pub struct GaugeTransform {
    value: Arc<UnitFn>,
    derivative: Option<Arc<DerivFn>>,
}

impl GaugeTransform {
    pub fn new<F>(value: F) -> Self
    where
        F: Fn(&Point4) -> UnitQuaternion<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            derivative: None,
        }
    }

    /// Attach ∂_μ u as quaternions.
    pub fn with_derivative<F>(mut self, d: F) -> Self
    where
        F: Fn(&Point4) -> [Quaternion<f64>; 4] + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn identity() -> Self {
        Self::new(|_| UnitQuaternion::identity())
            .with_derivative(|_| [Quaternion::new(0.0, 0.0, 0.0, 0.0); 4])
    }

    /// u(x) = exp(ξ(x)).
    pub fn exp_of<F>(xi: F) -> Self
    where
        F: Fn(&Point4) -> Alg + Send + Sync + 'static,
    {
        Self::new(move |x| exp_alg(&xi(x)))
    }

    pub fn at(&self, x: &Point4) -> UnitQuaternion<f64> {
        (self.value)(x)
    }

    pub fn derivative(&self, x: &Point4, h: f64) -> [Quaternion<f64>; 4] {
        if let Some(d) = &self.derivative {
            return d(x);
        }
        std::array::from_fn(|m| {
            let mut e = Point4::zeros();
            e[m] = h;
            let up = self.at(&(x + e)).into_inner();
            let um = self.at(&(x - e)).into_inner();
            (up - um) / (2.0 * h)
        })
    }
}

/// u⁻¹Au + u⁻¹du. Analytic curvature, when present, is carried as u⁻¹Fu.
pub fn gauge_transform(a: &ConnectionField, u: &GaugeTransform, h: Option<f64>) -> ConnectionField {
    let (a1, u1) = (a.clone(), u.clone());
    let mut out = ConnectionField::new(Provenance::Transformed, move |x| {
        let uu = u1.at(x);
        let du = u1.derivative(x, h.unwrap_or_else(|| default_step(x)));
        let av = a1.eval(x)?;
        let uinv = uu.inverse().into_inner();
        Ok(std::array::from_fn(|m| {
            ad_inv(&uu, &av[m]) + quat_to_alg(&(uinv * du[m]))
        }))
    });
    if a.has_analytic_curvature() {
        let (a2, u2) = (a.clone(), u.clone());
        out = out.with_curvature(move |x| {
            let f = a2.curvature(x)?;
            let uu = u2.at(x);
            Ok(std::array::from_fn(|i| ad_inv(&uu, &f[i])))
        });
    }
    out
}

/// Constant gauge rotation A ↦ ρ⁻¹Aρ.
pub fn rotate_constant(a: &ConnectionField, rho: UnitQuaternion<f64>) -> ConnectionField {
    let a1 = a.clone();
    let mut out = ConnectionField::new(a.provenance.clone(), move |x| {
        let v = a1.eval(x)?;
        Ok(std::array::from_fn(|m| ad_inv(&rho, &v[m])))
    });
    if a.has_analytic_curvature() {
        let a2 = a.clone();
        out = out.with_curvature(move |x| {
            let f = a2.curvature(x)?;
            Ok(std::array::from_fn(|i| ad_inv(&rho, &f[i])))
        });
    }
    out
}

fn pull_one_form(j: &Matrix4<f64>, a: &OneForm) -> OneForm {
    std::array::from_fn(|m| (0..4).map(|al| a[al] * j[(al, m)]).sum())
}

fn pull_two_form(j: &Matrix4<f64>, f: &TwoForm) -> TwoForm {
    std::array::from_fn(|i| {
        let (m, n) = PAIRS[i];
        let mut acc = Alg::zeros();
        for al in 0..4 {
            for be in 0..4 {
                let c = j[(al, m)] * j[(be, n)];
                if c != 0.0 && al != be {
                    acc += component(f, al, be) * c;
                }
            }
        }
        acc
    })
}

/// (f*A)_μ(x) = J_{αμ} A_α(f(x)), with curvature pulled back by two
/// Jacobian factors.
pub fn pullback_connection(f: &ConformalMap, a: &ConnectionField) -> ConnectionField {
    let (m1, a1) = (f.clone(), a.clone());
    let mut out = ConnectionField::new(Provenance::PulledBack, move |x| {
        let (y, j) = m1.eval(x);
        Ok(pull_one_form(&j, &a1.eval(&y)?))
    });
    if a.has_analytic_curvature() {
        let (m2, a2) = (f.clone(), a.clone());
        out = out.with_curvature(move |x| {
            let (y, j) = m2.eval(x);
            Ok(pull_two_form(&j, &a2.curvature(&y)?))
        });
    }
    out
}

/// A + B; curvature F_A + F_B + [A_μ,B_ν] + [B_μ,A_ν] when both are analytic.
pub fn sum(a: &ConnectionField, b: &ConnectionField) -> ConnectionField {
    let (a1, b1) = (a.clone(), b.clone());
    let mut out = ConnectionField::new(Provenance::Sum, move |x| {
        let (u, v) = (a1.eval(x)?, b1.eval(x)?);
        Ok(std::array::from_fn(|m| u[m] + v[m]))
    });
    if a.has_analytic_curvature() && b.has_analytic_curvature() {
        let (a2, b2) = (a.clone(), b.clone());
        out = out.with_curvature(move |x| {
            let (fa, fb) = (a2.curvature(x)?, b2.curvature(x)?);
            let (u, v) = (a2.eval(x)?, b2.eval(x)?);
            Ok(std::array::from_fn(|i| {
                let (m, n) = PAIRS[i];
                fa[i] + fb[i] + bracket(&u[m], &v[n]) + bracket(&v[m], &u[n])
            }))
        });
    }
    out
}

/// ψA for a scalar cutoff ψ given as (value, gradient). Curvature:
/// dψ∧A + ψF_A + (ψ² − ψ)[A∧A].
pub fn multiply_by<S>(a: &ConnectionField, psi: S) -> ConnectionField
where
    S: Fn(&Point4) -> (f64, Point4) + Send + Sync + Clone + 'static,
{
    let (a1, p1) = (a.clone(), psi.clone());
    let mut out = ConnectionField::new(a.provenance.clone(), move |x| {
        let (v, _) = p1(x);
        if v == 0.0 {
            return Ok(zero_one_form());
        }
        let av = a1.eval(x)?;
        Ok(av.map(|c| c * v))
    });
    if a.has_analytic_curvature() {
        let a2 = a.clone();
        out = out.with_curvature(move |x| {
            let (v, dv) = psi(x);
            if v == 0.0 && dv.norm_squared() == 0.0 {
                return Ok(zero_two_form());
            }
            let av = a2.eval(x)?;
            let f = if v != 0.0 {
                a2.curvature(x)?
            } else {
                zero_two_form()
            };
            Ok(std::array::from_fn(|i| {
                let (m, n) = PAIRS[i];
                av[n] * dv[m] - av[m] * dv[n] + f[i] * v + bracket(&av[m], &av[n]) * (v * v - v)
            }))
        });
    }
    out
}

/// Result of parallel transport along one ray.
#[derive(Debug, Clone)]
pub struct RayTransport {
    /// σ(x): the gauge transformation taking A to radial gauge at x.
    pub sigma: UnitQuaternion<f64>,
    /// Radial-gauge potential at x.
    pub potential: OneForm,
}

fn quat_norm_drift(q: &Quaternion<f64>) -> f64 {
    (q.norm() - 1.0).abs()
}

/// Transport from `centre` to `x` along the straight ray with RK4, integrating
/// dσ/ds = −(ι_d A)σ together with A'_μ(x) = ∫₀¹ s d^ν σ⁻¹F_{νμ}σ ds.
pub fn transport_ray(
    a: &ConnectionField,
    centre: &Point4,
    x: &Point4,
    steps: usize,
) -> Result<RayTransport> {
    let d = x - centre;
    let len = d.norm();
    if len == 0.0 {
        return Ok(RayTransport {
            sigma: UnitQuaternion::identity(),
            potential: zero_one_form(),
        });
    }
    let n = steps.max(1) * (len.ceil() as usize).max(1);
    let h = 1.0 / n as f64;
    // State derivative at parameter s.
    let rhs = |s: f64, sig: &Quaternion<f64>| -> Result<(Quaternion<f64>, OneForm)> {
        let y = centre + d * s;
        let av = match a.eval(&y) {
            // A field singular at the centre (singular gauge) enters through
            // its value just along the ray.
            Err(Error::Domain(_)) if s == 0.0 => a.eval(&(centre + d * (1e-6 * h)))?,
            other => other?,
        };
        let ds = -(alg_to_quat(&contract(&av, &d)) * sig);
        if s == 0.0 {
            return Ok((ds, zero_one_form()));
        }
        let f = a.curvature(&y)?;
        let unit = UnitQuaternion::new_normalize(*sig);
        let fi = interior(&f, &d);
        let di: OneForm = std::array::from_fn(|m| ad_inv(&unit, &fi[m]) * s);
        Ok((ds, di))
    };
    let mut sig = Quaternion::identity();
    let mut acc = zero_one_form();
    for k in 0..n {
        let s = k as f64 * h;
        let (k1, i1) = rhs(s, &sig)?;
        let (k2, i2) = rhs(s + 0.5 * h, &(sig + k1 * (0.5 * h)))?;
        let (k3, i3) = rhs(s + 0.5 * h, &(sig + k2 * (0.5 * h)))?;
        let (k4, i4) = rhs(s + h, &(sig + k3 * h))?;
        sig += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        for m in 0..4 {
            acc[m] += (i1[m] + i2[m] * 2.0 + i3[m] * 2.0 + i4[m]) * (h / 6.0);
        }
        let drift = quat_norm_drift(&sig);
        if !drift.is_finite() {
            return Err(Error::Numerical(
                "transport produced a non-finite value".into(),
            ));
        }
        if drift > 1e-6 {
            return Err(Error::Numerical(format!(
                "transport lost unitarity (drift {drift:e}); increase ode_steps"
            )));
        }
        sig = sig.normalize();
    }
    Ok(RayTransport {
        sigma: UnitQuaternion::new_normalize(sig),
        potential: acc,
    })
}

/// Radial gauge about `centre`, computed per point by ray transport with
/// `ode_steps` RK4 steps per unit length. The output carries the transported
/// curvature σ⁻¹Fσ. Potential and curvature are consistent only when A is
/// smooth at the centre; for a field singular there (singular-gauge BPST) the
/// potential is the smooth radial gauge rotated by a direction-dependent
/// constant.
pub fn radial_gauge(a: &ConnectionField, centre: &Point4, ode_steps: usize) -> ConnectionField {
    let (a1, c1) = (a.clone(), *centre);
    let (a2, c2) = (a.clone(), *centre);
    ConnectionField::new(Provenance::RadialGauge, move |x| {
        Ok(transport_ray(&a1, &c1, x, ode_steps)?.potential)
    })
    .with_curvature(move |x| {
        let t = transport_ray(&a2, &c2, x, ode_steps)?;
        let f = a2.curvature(x)?;
        Ok(std::array::from_fn(|i| ad_inv(&t.sigma, &f[i])))
    })
}

/// ι_x F_A(x) = x^ν F_{νμ}(x), the radial Lie derivative of A. Requires A to
/// be in radial gauge about the origin.
pub fn lie_derivative_radial(a: &ConnectionField, x: &Point4) -> Result<OneForm> {
    let f = a.curvature(x)?;
    let av = a.eval(x)?;
    let radial = contract(&av, x).norm();
    let scale = two_form_norm_sq(&f).sqrt().max(1e-12);
    if radial > 1e-6 * x.norm() * scale {
        return Err(Error::Precondition(format!(
            "connection is not in radial gauge at {x:?}: |ι_x A| = {radial:e}"
        )));
    }
    Ok(interior(&f, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;

    #[test]
    fn bracket_matches_quaternion_commutator() {
        let a = Alg::new(0.3, -1.2, 0.5);
        let b = Alg::new(1.1, 0.4, -0.7);
        let (qa, qb) = (alg_to_quat(&a), alg_to_quat(&b));
        let comm = quat_to_alg(&(qa * qb - qb * qa));
        assert!((comm - bracket(&a, &b)).norm() < 1e-14);
    }

    #[test]
    fn embed_inverts_projection_on_selfdual_forms() {
        let g = Matrix4::new(
            2.0, 0.3, 0.0, 0.1, 0.3, 1.5, 0.2, 0.0, 0.0, 0.2, 1.0, -0.1, 0.1, 0.0, -0.1, 3.0,
        );
        let c = [
            Alg::new(1.0, 0.0, 2.0),
            Alg::new(-0.5, 1.0, 0.0),
            Alg::new(0.0, 0.3, 0.7),
        ];
        let f = selfdual_embed(&c, &g).unwrap();
        let back = selfdual_part(&f, &g).unwrap();
        for k in 0..3 {
            assert!((back[k] - c[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn flat_selfdual_form_is_unchanged() {
        let v = Alg::new(0.2, -0.4, 1.0);
        let mut f = zero_two_form();
        f[0] = v; // dx0∧dx1
        f[5] = v; // dx2∧dx3
        let g = Matrix4::identity();
        let back = selfdual_embed(&selfdual_part(&f, &g).unwrap(), &g).unwrap();
        for i in 0..6 {
            assert!((back[i] - f[i]).norm() < 1e-14);
        }
        let mut asd = zero_two_form();
        asd[0] = v;
        asd[5] = -v;
        let c = selfdual_part(&asd, &g).unwrap();
        assert!(c.iter().all(|a| a.norm() < 1e-15));
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let g = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 0.0, 1.0));
        assert!(selfdual_part(&zero_two_form(), &g).is_err());
    }

    #[test]
    fn zero_connection_has_zero_curvature() {
        let f = curvature_fd(&ConnectionField::zero(), &pt(0.1, 0.2, 0.3, 0.4), 1e-4).unwrap();
        assert!(f.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn linear_pure_gauge_is_flat_to_second_order() {
        // u(x) = exp(x₁ e₁) to first order: A = u⁻¹du ≈ e₁ dx₁ (constant), so F = 0.
        let a = ConnectionField::new(Provenance::Custom("linear".into()), |_| {
            let mut w = zero_one_form();
            w[1] = Alg::new(1.0, 0.0, 0.0);
            Ok(w)
        });
        let f = curvature_fd(&a, &pt(0.3, 0.1, 0.0, 0.2), 1e-4).unwrap();
        assert!(two_form_norm_sq(&f).sqrt() < 1e-8);
    }

    #[test]
    fn exp_of_alg_is_unit() {
        let u = exp_alg(&Alg::new(0.3, 2.0, -1.0));
        assert!((u.into_inner().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lie_derivative_of_flat_is_zero() {
        let v = lie_derivative_radial(&ConnectionField::zero(), &pt(1.0, 2.0, 0.0, 0.0)).unwrap();
        assert!(v.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn lie_derivative_rejects_non_radial_gauge() {
        let a = ConnectionField::new(Provenance::Custom("const".into()), |_| {
            Ok([Alg::new(1.0, 0.0, 0.0); 4])
        });
        assert!(matches!(
            lie_derivative_radial(&a, &pt(1.0, 0.0, 0.0, 0.0)),
            Err(Error::Precondition(_))
        ));
    }
}
