//! Chart coordinates on S⁴, conformal maps, metrics and the radial × S³
//! quadrature used for every integral in the crate.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// A point in a stereographic chart. Component 0 is the real part when the
/// point is read as a quaternion.
pub type Point4 = Vector4<f64>;

pub fn pt(a: f64, b: f64, c: f64, d: f64) -> Point4 {
    Point4::new(a, b, c, d)
}

/// Quintic smoothstep on [0, 1], clamped outside. Returns (value, derivative).
pub fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let t2 = t * t;
        (
            t2 * t * (10.0 - 15.0 * t + 6.0 * t2),
            30.0 * t2 * (1.0 - t) * (1.0 - t),
        )
    }
}

/// h₁²(x) = 4 / (1 + |x|²)², the round conformal factor in a stereographic chart.
pub fn round_factor_sq(x: &Point4) -> f64 {
    let d = 1.0 + x.norm_squared();
    4.0 / (d * d)
}

/// The round metric tensor of the unit four-sphere at chart point `x`.
pub fn round_metric(x: &Point4) -> Matrix4<f64> {
    Matrix4::identity() * round_factor_sq(x)
}

/// North-to-south chart transition, x ↦ x⁻¹ as a quaternion.
pub fn chart_transition(x: &Point4) -> Result<Point4> {
    let n2 = x.norm_squared();
    if n2 == 0.0 || !n2.is_finite() {
        return Err(Error::Domain(
            "chart transition is undefined at the origin".into(),
        ));
    }
    Ok(pt(x[0], -x[1], -x[2], -x[3]) / n2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// x ↦ R(x − q)/λ
    Forward,
    /// y ↦ q + λRᵀy
    Inverse,
}

/// The similarity f_{λ,q} = c_λ ∘ τ_q, optionally followed by a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalMap {
    pub lambda: f64,
    pub q: Point4,
    pub rotation: Matrix4<f64>,
    pub direction: Direction,
}

impl ConformalMap {
    pub fn new(lambda: f64, q: Point4) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "scale must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            q,
            rotation: Matrix4::identity(),
            direction: Direction::Forward,
        })
    }

    pub fn identity() -> Self {
        Self::new(1.0, Point4::zeros()).expect("unit scale")
    }

    pub fn dilation(lambda: f64) -> Result<Self> {
        Self::new(lambda, Point4::zeros())
    }

    pub fn translation(q: Point4) -> Self {
        Self::new(1.0, q).expect("unit scale")
    }

    pub fn with_rotation(mut self, rotation: Matrix4<f64>) -> Result<Self> {
        let defect = (rotation.transpose() * rotation - Matrix4::identity())
            .abs()
            .max();
        if defect > 1e-12 {
            return Err(Error::Config(format!(
                "rotation is not orthogonal (defect {defect:e})"
            )));
        }
        self.rotation = rotation;
        Ok(self)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = self.clone();
        inv.direction = match self.direction {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        };
        inv
    }

    /// Linear part and offset: the map is x ↦ Mx + t.
    pub fn affine(&self) -> (Matrix4<f64>, Point4) {
        match self.direction {
            Direction::Forward => {
                let m = self.rotation / self.lambda;
                (m, -(m * self.q))
            }
            Direction::Inverse => (self.rotation.transpose() * self.lambda, self.q),
        }
    }

    pub fn apply(&self, x: &Point4) -> Point4 {
        let (m, t) = self.affine();
        m * x + t
    }

    pub fn jacobian(&self) -> Matrix4<f64> {
        self.affine().0
    }

    /// Image of `x` together with the (constant) Jacobian.
    pub fn eval(&self, x: &Point4) -> (Point4, Matrix4<f64>) {
        let (m, t) = self.affine();
        (m * x + t, m)
    }

    /// Linear dilation factor |df|: lengths are multiplied by this.
    pub fn stretch(&self) -> f64 {
        match self.direction {
            Direction::Forward => 1.0 / self.lambda,
            Direction::Inverse => self.lambda,
        }
    }

    /// The map x ↦ next(self(x)), written in forward form.
    pub fn then(&self, next: &ConformalMap) -> ConformalMap {
        let (a, ta) = self.affine();
        let (b, tb) = next.affine();
        let m = b * a;
        let t = b * ta + tb;
        let s = self.stretch() * next.stretch();
        let lambda = 1.0 / s;
        let rotation = m * lambda;
        let q = -(rotation.transpose() * t) * lambda;
        ConformalMap {
            lambda,
            q,
            rotation,
            direction: Direction::Forward,
        }
    }
}

type TensorFn = Arc<dyn Fn(&Point4) -> Matrix4<f64> + Send + Sync>;

/// Pointwise metric description.
#[derive(Clone)]
pub enum MetricField {
    Flat,
    Round,
    /// g = φ²(x)·δ, storing x ↦ φ²(x).
    Conformal(Arc<dyn Fn(&Point4) -> f64 + Send + Sync>),
    General(TensorFn),
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            MetricField::Flat => "flat",
            MetricField::Round => "round",
            MetricField::Conformal(_) => "conformal",
            MetricField::General(_) => "general",
        };
        f.write_str(tag)
    }
}

impl MetricField {
    pub fn conformal<F>(factor_sq: F) -> Self
    where
        F: Fn(&Point4) -> f64 + Send + Sync + 'static,
    {
        MetricField::Conformal(Arc::new(factor_sq))
    }

    pub fn general<F>(tensor: F) -> Self
    where
        F: Fn(&Point4) -> Matrix4<f64> + Send + Sync + 'static,
    {
        MetricField::General(Arc::new(tensor))
    }

    /// φ² when the metric is a multiple of δ.
    pub fn conformal_factor_sq(&self, x: &Point4) -> Option<f64> {
        match self {
            MetricField::Flat => Some(1.0),
            MetricField::Round => Some(round_factor_sq(x)),
            MetricField::Conformal(f) => Some(f(x)),
            MetricField::General(_) => None,
        }
    }

    pub fn tensor(&self, x: &Point4) -> Matrix4<f64> {
        match self {
            MetricField::General(g) => g(x),
            _ => Matrix4::identity() * self.conformal_factor_sq(x).unwrap_or(1.0),
        }
    }

    /// Symmetric and positive definite at `x`.
    pub fn check_at(&self, x: &Point4) -> Result<()> {
        let g = self.tensor(x);
        let asym = (g - g.transpose()).abs().max();
        if asym > 1e-12 * g.abs().max().max(1.0) {
            return Err(Error::Domain(format!("metric not symmetric at {x:?}")));
        }
        if g.cholesky().is_none() {
            return Err(Error::Domain(format!(
                "metric not positive definite at {x:?}"
            )));
        }
        Ok(())
    }

    /// Riemannian volume density √det g.
    pub fn volume_density(&self, x: &Point4) -> Result<f64> {
        match self.conformal_factor_sq(x) {
            Some(c) if c > 0.0 => Ok(c * c),
            Some(_) => Err(Error::Domain(format!("degenerate metric at {x:?}"))),
            None => {
                let d = self.tensor(x).determinant();
                if d > 0.0 {
                    Ok(d.sqrt())
                } else {
                    Err(Error::Domain(format!("degenerate metric at {x:?}")))
                }
            }
        }
    }

    /// Pointwise norm² of a tensor with indices raised by this metric.
    pub fn norm_sq(&self, x: &Point4, value: &TensorValue) -> Result<f64> {
        if let Some(c) = self.conformal_factor_sq(x) {
            if !(c > 0.0) {
                return Err(Error::Domain(format!("degenerate metric at {x:?}")));
            }
            return Ok(match value {
                TensorValue::Scalar(s) => s * s,
                TensorValue::OneForm(w) => w.iter().map(|a| a.norm_squared()).sum::<f64>() / c,
                TensorValue::TwoForm(f) => {
                    f.iter().map(|a| a.norm_squared()).sum::<f64>() / (c * c)
                }
            });
        }
        let ginv = self
            .tensor(x)
            .try_inverse()
            .ok_or_else(|| Error::Domain(format!("degenerate metric at {x:?}")))?;
        Ok(match value {
            TensorValue::Scalar(s) => s * s,
            TensorValue::OneForm(w) => {
                let mut acc = 0.0;
                for m in 0..4 {
                    for n in 0..4 {
                        acc += ginv[(m, n)] * w[m].dot(&w[n]);
                    }
                }
                acc
            }
            TensorValue::TwoForm(f) => {
                let mut acc = 0.0;
                for (i, &(m, n)) in PAIRS.iter().enumerate() {
                    for (j, &(r, s)) in PAIRS.iter().enumerate() {
                        let k = ginv[(m, r)] * ginv[(n, s)] - ginv[(m, s)] * ginv[(n, r)];
                        acc += k * f[i].dot(&f[j]);
                    }
                }
                acc
            }
        })
    }
}

/// Index pairs (μ, ν), μ < ν, in the storage order used for 2-forms.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Storage slot of the pair (μ, ν) and the sign relative to (min, max).
pub fn pair_index(m: usize, n: usize) -> Option<(usize, f64)> {
    if m == n {
        return None;
    }
    let (a, b, s) = if m < n { (m, n, 1.0) } else { (n, m, -1.0) };
    PAIRS.iter().position(|&p| p == (a, b)).map(|i| (i, s))
}

/// A Lie-algebra-valued tensor at one point, for pointwise norms.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorValue {
    Scalar(f64),
    OneForm([Vector3<f64>; 4]),
    TwoForm([Vector3<f64>; 6]),
}

impl TensorValue {
    pub fn is_finite(&self) -> bool {
        match self {
            TensorValue::Scalar(s) => s.is_finite(),
            TensorValue::OneForm(w) => w.iter().all(|a| a.iter().all(|v| v.is_finite())),
            TensorValue::TwoForm(f) => f.iter().all(|a| a.iter().all(|v| v.is_finite())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Ball,
    Annulus,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub panels: usize,
    pub gauss_order: usize,
    pub s3_order: usize,
    pub region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<[f64; 4]>,
}

impl GridSpec {
    pub fn new(region: Region, r_min: f64, r_max: f64) -> Self {
        Self {
            r_min,
            r_max,
            panels: 24,
            gauss_order: 8,
            s3_order: 8,
            region,
            centre: None,
        }
    }

    /// The default full-chart grid used by the instanton diagnostics.
    pub fn default_full() -> Self {
        Self::new(Region::Full, 1e-2, 1e2)
    }

    pub fn with_orders(mut self, panels: usize, gauss_order: usize, s3_order: usize) -> Self {
        self.panels = panels;
        self.gauss_order = gauss_order;
        self.s3_order = s3_order;
        self
    }

    pub fn centred_at(mut self, c: &Point4) -> Self {
        self.centre = Some([c[0], c[1], c[2], c[3]]);
        self
    }

    pub fn centre_point(&self) -> Point4 {
        self.centre.map(Point4::from).unwrap_or_else(Point4::zeros)
    }
}

/// Anything that can integrate functions against d⁴x.
pub trait Integrator: Sync {
    /// Origin of the radial structure of the rule.
    fn centre(&self) -> Point4;

    /// Integrates K quantities in one sweep over the nodes.
    fn integrate_array<const K: usize, F>(&self, f: F) -> Result<[f64; K]>
    where
        F: Fn(&Point4) -> Result<[f64; K]> + Sync + Send;

    fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&Point4) -> Result<f64> + Sync + Send,
    {
        let [v] = self.integrate_array(|x| Ok([f(x)?]))?;
        Ok(v)
    }

    /// Nodes with their effective weights; zero-weight nodes are dropped.
    fn weighted_nodes(&self) -> Vec<(Point4, f64)>;
}

/// Composite radial Gauss–Legendre × product S³ rule. Weights include the
/// flat volume element r³ dr dΩ, so Σ wᵢ f(xᵢ) ≈ ∫ f d⁴x.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub spec: GridSpec,
    pub breakpoints: Vec<f64>,
    pub infinite_tail: bool,
    /// (radius, weight including r³)
    pub radial: Vec<(f64, f64)>,
    pub s3: Vec<(Point4, f64)>,
    pub nodes: Vec<Point4>,
    pub weights: Vec<f64>,
}

pub(crate) fn legendre(order: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(order).expect("order checked by caller");
    GaussLegendre::new(n)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (x, w))
        .collect()
}

/// Product rule on the unit three-sphere with 2n³ nodes; weights sum to 2π².
pub fn s3_rule(n: usize) -> Vec<(Point4, f64)> {
    // χ ∈ (0, π) with weight sin²χ: Gauss–Chebyshev of the second kind in cos χ.
    let chi: Vec<(f64, f64)> = (1..=n)
        .map(|k| {
            let a = k as f64 * PI / (n as f64 + 1.0);
            (a, PI / (n as f64 + 1.0) * a.sin().powi(2))
        })
        .collect();
    let theta = legendre(n);
    let m = 2 * n;
    let mut out = Vec::with_capacity(2 * n * n * n);
    for &(a, wa) in &chi {
        let (sa, ca) = a.sin_cos();
        for &(ct, wt) in &theta {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for j in 0..m {
                let phi = 2.0 * PI * j as f64 / m as f64;
                let (sp, cp) = phi.sin_cos();
                let w = wa * wt * 2.0 * PI / m as f64;
                out.push((pt(ca, sa * ct, sa * st * cp, sa * st * sp), w));
            }
        }
    }
    out
}

fn log_breaks(a: f64, b: f64, panels: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..=panels)
        .map(|i| {
            if i == 0 {
                a
            } else if i == panels {
                b
            } else {
                (la + (lb - la) * i as f64 / panels as f64).exp()
            }
        })
        .collect()
}

pub fn build_grid(spec: &GridSpec) -> Result<QuadratureGrid> {
    let bad = |m: &str| Err(Error::Config(m.to_string()));
    if !(spec.r_min >= 0.0) || !(spec.r_max > spec.r_min) || !spec.r_max.is_finite() {
        return bad("need 0 <= r_min < r_max < inf");
    }
    if spec.gauss_order < 2 || spec.s3_order < 2 || spec.panels < 1 {
        return bad("orders must be >= 2 and panels >= 1");
    }
    if spec.region == Region::Annulus && spec.r_min == 0.0 {
        return bad("annulus needs r_min > 0");
    }
    let floor = spec.r_max * 1e-4;
    let mut breaks = Vec::new();
    match spec.region {
        Region::Annulus => breaks.extend(log_breaks(spec.r_min, spec.r_max, spec.panels)),
        Region::Ball | Region::Full => {
            let start = if spec.r_min > 0.0 { spec.r_min } else { floor };
            breaks.push(0.0);
            breaks.extend(log_breaks(start, spec.r_max, spec.panels));
        }
    }
    let gl = legendre(spec.gauss_order);
    let mut radial = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        for &(t, wt) in &gl {
            let r = a + half * (t + 1.0);
            radial.push((r, wt * half * r.powi(3)));
        }
    }
    let infinite_tail = spec.region == Region::Full;
    if infinite_tail {
        // r = r_max / u on u ∈ (0, 1], dr = r_max / u² du
        let rm = spec.r_max;
        for &(t, wt) in &gl {
            let u = 0.5 * (t + 1.0);
            let r = rm / u;
            radial.push((r, 0.5 * wt * rm / (u * u) * r.powi(3)));
        }
    }
    let s3 = s3_rule(spec.s3_order);
    let c = spec.centre_point();
    let mut nodes = Vec::with_capacity(radial.len() * s3.len());
    let mut weights = Vec::with_capacity(radial.len() * s3.len());
    for &(r, wr) in &radial {
        for (u, ws) in &s3 {
            nodes.push(c + u * r);
            weights.push(wr * ws);
        }
    }
    Ok(QuadratureGrid {
        spec: spec.clone(),
        breakpoints: breaks,
        infinite_tail,
        radial,
        s3,
        nodes,
        weights,
    })
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Integrator for QuadratureGrid {
    fn centre(&self) -> Point4 {
        self.spec.centre_point()
    }

    fn integrate_array<const K: usize, F>(&self, f: F) -> Result<[f64; K]>
    where
        F: Fn(&Point4) -> Result<[f64; K]> + Sync + Send,
    {
        let vals = par::try_map_indexed(self.nodes.len(), |i| {
            let x = &self.nodes[i];
            let v = f(x)?;
            if v.iter().any(|a| !a.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    point: [x[0], x[1], x[2], x[3]],
                });
            }
            Ok(v)
        })?;
        let mut out = [0.0; K];
        let mut column = vec![0.0; vals.len()];
        for (k, o) in out.iter_mut().enumerate() {
            for (c, v) in column.iter_mut().zip(&vals) {
                *c = v[k];
            }
            *o = par::pairwise_dot(&self.weights, &column);
        }
        Ok(out)
    }

    fn weighted_nodes(&self) -> Vec<(Point4, f64)> {
        self.nodes
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }
}

/// (∫ |field|_g^p dV_g)^{1/p} over the grid region.
pub fn lp_norm<F, G: Integrator>(field: F, p: f64, metric: &MetricField, grid: &G) -> Result<f64>
where
    F: Fn(&Point4) -> Result<TensorValue> + Sync + Send,
{
    if !(p >= 1.0) {
        return Err(Error::Config(format!("L^p exponent must be >= 1, got {p}")));
    }
    let total = grid.integrate(|x| {
        let v = field(x)?;
        if !v.is_finite() {
            return Ok(f64::NAN);
        }
        let n2 = metric.norm_sq(x, &v)?;
        Ok(n2.powf(0.5 * p) * metric.volume_density(x)?)
    })?;
    Ok(total.max(0.0).powf(1.0 / p))
}

/// A ball around `centre` integrated on its own grid and blended into a
/// background grid with a smooth partition of unity.
#[derive(Debug, Clone)]
pub struct Patch {
    pub grid: QuadratureGrid,
    pub radius: f64,
}

impl Patch {
    /// Weight of the patch at `x`: 1 inside radius/2, 0 outside radius.
    pub fn weight(&self, x: &Point4) -> f64 {
        let d = (x - self.grid.centre()).norm();
        1.0 - smoothstep(2.0 * d / self.radius - 1.0).0
    }
}

/// A background grid plus disjoint refinement patches.
#[derive(Debug, Clone)]
pub struct CompositeGrid {
    pub background: QuadratureGrid,
    pub patches: Vec<Patch>,
}

impl CompositeGrid {
    pub fn single(grid: QuadratureGrid) -> Self {
        Self {
            background: grid,
            patches: Vec::new(),
        }
    }
}

impl Integrator for CompositeGrid {
    fn centre(&self) -> Point4 {
        self.background.centre()
    }

    fn integrate_array<const K: usize, F>(&self, f: F) -> Result<[f64; K]>
    where
        F: Fn(&Point4) -> Result<[f64; K]> + Sync + Send,
    {
        let mut out = self.background.integrate_array(|x| {
            let w: f64 = 1.0 - self.patches.iter().map(|p| p.weight(x)).sum::<f64>();
            if w <= 0.0 {
                return Ok([0.0; K]);
            }
            let mut v = f(x)?;
            v.iter_mut().for_each(|a| *a *= w);
            Ok(v)
        })?;
        for p in &self.patches {
            let part = p.grid.integrate_array(|x| {
                let w = p.weight(x);
                if w <= 0.0 {
                    return Ok([0.0; K]);
                }
                let mut v = f(x)?;
                v.iter_mut().for_each(|a| *a *= w);
                Ok(v)
            })?;
            out.iter_mut().zip(part).for_each(|(o, a)| *o += a);
        }
        Ok(out)
    }

    fn weighted_nodes(&self) -> Vec<(Point4, f64)> {
        let mut out: Vec<(Point4, f64)> = self
            .background
            .weighted_nodes()
            .into_iter()
            .map(|(x, w)| {
                (
                    x,
                    w * (1.0 - self.patches.iter().map(|p| p.weight(&x)).sum::<f64>()),
                )
            })
            .filter(|(_, w)| *w > 0.0)
            .collect();
        for p in &self.patches {
            out.extend(
                p.grid
                    .weighted_nodes()
                    .into_iter()
                    .map(|(x, w)| (x, w * p.weight(&x)))
                    .filter(|(_, w)| *w > 0.0),
            );
        }
        out
    }
}
