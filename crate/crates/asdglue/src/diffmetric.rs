//! Finite-difference differentials of the splice in its parameters, L²
//! pairings, and log-log exponent fits.
//!
//! Derivatives are represented per vertex chart, like the splice itself: the
//! X-field of vertex J is the central difference of A′_J(θ ± δ) at fixed
//! chart points, and its norm is taken over the region of J with the metric
//! m_J h₁². The base field is the central difference of Â′(θ ± δ) at fixed
//! points of the root chart, normed with the round metric there. The gauge
//! is held fixed across the difference by pinning the radial-patch anchors
//! at their values for θ.
//!
//! The pairing reported is the raw L² inner product, an upper bound for the
//! moduli-space metric (no horizontal projection is applied).

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{
    alg_to_quat, bracket, gauge_transform, one_form_norm_sq, pullback_connection, selfdual_part,
    Alg, ConnectionField, GaugeTransform, OneForm, Provenance,
};
use crate::geometry::{round_factor_sq, Integrator, MetricField, Point4, TensorValue};
use crate::par;
use crate::splice::{
    gamma, pullback_to_base, splice_with, Assignment, GluingTree, SpliceOptions, SplicedConnection,
    TreeGrid, TreeGridOptions,
};

/// Which parameter of a vertex is varied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Scale λ_I of the edge into the vertex; b_I co-varies as √λ_I.
    Scale,
    /// Attachment point x_I, moved along `p`.
    Centre { p: [f64; 4] },
    /// Gluing rotation ρ_I, moved by exp(s·v).
    Rotation { v: [f64; 3] },
    /// Scale of the vertex's own instanton.
    BubbleScale,
    /// Centre of the vertex's own instanton, moved along `p`.
    BubbleCentre { p: [f64; 4] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDirection {
    pub vertex: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamDirection {
    pub fn new(vertex: &str, kind: ParamKind) -> Self {
        Self {
            vertex: vertex.into(),
            kind,
        }
    }

    /// Short label used in tables.
    pub fn label(&self) -> &'static str {
        match self.kind {
            ParamKind::Scale => "lambda",
            ParamKind::Centre { .. } => "centre",
            ParamKind::Rotation { .. } => "rotation",
            ParamKind::BubbleScale => "bubble_scale",
            ParamKind::BubbleCentre { .. } => "bubble_centre",
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::Config(format!(
                "direction for vertex {}: {m}",
                self.vertex
            )))
        };
        match self.kind {
            ParamKind::Centre { p } | ParamKind::BubbleCentre { p } => {
                let n = Point4::from(p).norm();
                if !(n > 0.0 && n <= 1.0 + 1e-12) {
                    return bad("centre direction must have 0 < |p| ≤ 1");
                }
            }
            ParamKind::Rotation { v } if Alg::from(v).norm() > 1.0 + 1e-12 => {
                return bad("rotation direction must have |v| ≤ 1");
            }
            _ => {}
        }
        Ok(())
    }
}

/// A parameter derivative of the splice.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub direction: ParamDirection,
    /// Per-vertex chart fields, in the vertex order of the resolved tree.
    pub vertices: Vec<ConnectionField>,
    /// The same derivative read on the root chart.
    pub base: ConnectionField,
    /// Parameter step actually used (absolute).
    pub step: f64,
}

fn derivative_field<F>(f: F) -> ConnectionField
where
    F: Fn(&Point4) -> Result<OneForm> + Send + Sync + 'static,
{
    ConnectionField::new(Provenance::Custom("derivative".into()), f)
}

fn zero_field() -> ConnectionField {
    derivative_field(|_| Ok([Alg::zeros(); 4]))
}

fn central(plus: &ConnectionField, minus: &ConnectionField, delta: f64) -> ConnectionField {
    let (p, m) = (plus.clone(), minus.clone());
    derivative_field(move |x| {
        let (a, b) = (p.eval(x)?, m.eval(x)?);
        Ok(std::array::from_fn(|i| (a[i] - b[i]) / (2.0 * delta)))
    })
}

/// The tree with the parameter of `dir` moved by `s` (absolute).
fn perturbed(tree: &GluingTree, dir: &ParamDirection, s: f64) -> Result<GluingTree> {
    let mut t = tree.clone();
    let node = t
        .node_mut(&dir.vertex)
        .ok_or_else(|| Error::Config(format!("no vertex {}", dir.vertex)))?;
    let bpst = |node: &mut crate::splice::TreeNode| match node.conn.as_mut() {
        Some(Assignment::Bpst(p)) => Ok(p.clone()),
        _ => Err(Error::Config(format!(
            "vertex {} carries no instanton",
            node.id
        ))),
    };
    match dir.kind {
        ParamKind::Scale => {
            let l0 = node
                .lambda
                .ok_or_else(|| Error::Config("the root has no scale".into()))?;
            let l = l0 + s;
            node.lambda = Some(l);
            if let Some(b) = node.b {
                node.b = Some(b * (l / l0).sqrt());
            }
        }
        ParamKind::Centre { p } => {
            let x = node
                .x
                .ok_or_else(|| Error::Config("the root has no attachment point".into()))?;
            node.x = Some(std::array::from_fn(|i| x[i] + s * p[i]));
        }
        ParamKind::Rotation { .. } => {
            return Err(Error::Precondition(
                "rotations are differentiated by a gauge family".into(),
            ));
        }
        ParamKind::BubbleScale => {
            let mut p = bpst(node)?;
            p.lambda += s;
            node.conn = Some(Assignment::Bpst(p));
        }
        ParamKind::BubbleCentre { p: dirn } => {
            let mut p = bpst(node)?;
            p.q = std::array::from_fn(|i| p.q[i] + s * dirn[i]);
            node.conn = Some(Assignment::Bpst(p));
        }
    }
    Ok(t)
}

/// Absolute step for a relative step `h` at θ.
fn absolute_step(tree: &GluingTree, dir: &ParamDirection, h: f64) -> Result<f64> {
    let node = tree
        .node(&dir.vertex)
        .ok_or_else(|| Error::Config(format!("no vertex {}", dir.vertex)))?;
    let lambda = node.lambda.unwrap_or(1.0);
    Ok(match dir.kind {
        ParamKind::Scale | ParamKind::Centre { .. } => h * lambda,
        ParamKind::Rotation { .. } => h,
        ParamKind::BubbleScale | ParamKind::BubbleCentre { .. } => match &node.conn {
            Some(Assignment::Bpst(p)) => h * p.lambda,
            _ => {
                return Err(Error::Config(format!(
                    "vertex {} carries no instanton",
                    dir.vertex
                )))
            }
        },
    })
}

/// γ_I in the parent chart: 1 on B(site, ½√λ), 0 outside B(site, 2√λ).
fn neck_weight(
    site: Point4,
    lambda: f64,
) -> impl Fn(&Point4) -> (f64, Point4) + Clone + Send + Sync {
    let s = lambda.sqrt();
    move |x: &Point4| {
        let y = x - site;
        let r = y.norm();
        let (g, dg) = gamma(r / s);
        let grad = if r > 0.0 && dg != 0.0 {
            y * (-dg / (s * r))
        } else {
            Point4::zeros()
        };
        (1.0 - g, grad)
    }
}

/// The gauge family exp(s·γ_I·v) on the parent of vertex `child`, which
/// realizes a change of ρ_I by exp(s·v).
fn rotation_family(spliced: &SplicedConnection, child: usize, v: Alg, s: f64) -> GaugeTransform {
    let node = &spliced.tree.nodes[child];
    let w = neck_weight(node.site, node.lambda);
    let w2 = w.clone();
    GaugeTransform::new(move |x| crate::gauge::exp_alg(&(v * (s * w(x).0)))).with_derivative(
        move |x| {
            // d exp(sγv) = exp(sγv)·(s dγ)v, since v commutes with itself.
            let (g, dg) = w2(x);
            let u = crate::gauge::exp_alg(&(v * (s * g))).into_inner();
            let vq = alg_to_quat(&v);
            std::array::from_fn(|m| u * vq * (s * dg[m]))
        },
    )
}

/// Pushes per-vertex fields supported on one region forward to the root chart.
fn push_to_base(spliced: &SplicedConnection, j: usize, field: &ConnectionField) -> ConnectionField {
    let metric = spliced.metric.clone();
    let f = field.clone();
    let masked = derivative_field(move |x| {
        if metric.in_region(j, x) {
            f.eval(x)
        } else {
            Ok([Alg::zeros(); 4])
        }
    });
    let pulled = pullback_connection(&spliced.vertices[j].to_base.inverse(), &masked);
    derivative_field(move |y| pulled.eval(y))
}

fn resolve_vertex(spliced: &SplicedConnection, id: &str) -> Result<usize> {
    spliced
        .tree
        .index_of(id)
        .ok_or_else(|| Error::Config(format!("no vertex {id}")))
}

/// The analytic rotation derivative d_{A′}(γ_I v) = dγ_I⊗v + [A′, γ_I v] on
/// the parent region of vertex I, zero elsewhere.
pub fn gluing_rotation_derivative(
    spliced: &SplicedConnection,
    vertex: &str,
    v: Alg,
) -> Result<DerivativeField> {
    let i = resolve_vertex(spliced, vertex)?;
    let parent = spliced.tree.nodes[i]
        .parent
        .ok_or_else(|| Error::Config("the root has no gluing rotation".into()))?;
    let node = &spliced.tree.nodes[i];
    let w = neck_weight(node.site, node.lambda);
    let a = spliced.vertices[parent].field.clone();
    let metric = spliced.metric.clone();
    let field = derivative_field(move |x| {
        if !metric.in_region(parent, x) {
            return Ok([Alg::zeros(); 4]);
        }
        let (g, dg) = w(x);
        if g == 0.0 {
            return Ok([Alg::zeros(); 4]);
        }
        let av = a.eval(x)?;
        let gv = v * g;
        Ok(std::array::from_fn(|m| v * dg[m] + bracket(&av[m], &gv)))
    });
    let mut vertices = vec![zero_field(); spliced.vertices.len()];
    vertices[parent] = field.clone();
    Ok(DerivativeField {
        direction: ParamDirection::new(
            vertex,
            ParamKind::Rotation {
                v: [v[0], v[1], v[2]],
            },
        ),
        base: push_to_base(spliced, parent, &field),
        vertices,
        step: 0.0,
    })
}

/// Central-difference derivative of the splice in `dir` with relative step
/// `h`, gauge pinned at θ. `spliced` must be the splice of `tree`.
pub fn param_derivative(
    tree: &GluingTree,
    spliced: &SplicedConnection,
    dir: &ParamDirection,
    h: f64,
) -> Result<DerivativeField> {
    dir.check()?;
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let delta = absolute_step(tree, dir, h)?;
    if let ParamKind::Rotation { v } = dir.kind {
        let i = resolve_vertex(spliced, &dir.vertex)?;
        let parent = spliced.tree.nodes[i]
            .parent
            .ok_or_else(|| Error::Config("the root has no gluing rotation".into()))?;
        let v = Alg::from(v);
        let a = &spliced.vertices[parent].field;
        let plus = gauge_transform(a, &rotation_family(spliced, i, v, delta), None);
        let minus = gauge_transform(a, &rotation_family(spliced, i, v, -delta), None);
        let field = central(&plus, &minus, delta);
        let mut vertices = vec![zero_field(); spliced.vertices.len()];
        vertices[parent] = field.clone();
        return Ok(DerivativeField {
            direction: dir.clone(),
            base: push_to_base(spliced, parent, &field),
            vertices,
            step: delta,
        });
    }
    let opts = SpliceOptions {
        anchors: Some(spliced.anchor_table()),
        ..SpliceOptions::default()
    };
    let plus = splice_with(&perturbed(tree, dir, delta)?, &opts)?;
    let minus = splice_with(&perturbed(tree, dir, -delta)?, &opts)?;
    let vertices = plus
        .vertices
        .iter()
        .zip(&minus.vertices)
        .map(|(p, m)| central(&p.field, &m.field, delta))
        .collect();
    Ok(DerivativeField {
        direction: dir.clone(),
        vertices,
        base: central(&pullback_to_base(&plus), &pullback_to_base(&minus), delta),
        step: delta,
    })
}

/// ‖ω‖_{L²(X, g)} = (Σ_J ∫_{region J} m_J h₁² |ω_J|² d⁴x)^{1/2}.
pub fn norm_x(d: &DerivativeField, spliced: &SplicedConnection, grid: &TreeGrid) -> Result<f64> {
    let [s] = grid.integrate_regions(|j, x| {
        let w = d.vertices[j].eval(x)?;
        let n2 = one_form_norm_sq(&w);
        if n2 == 0.0 {
            return Ok([0.0]);
        }
        Ok([spliced.metric.conformal_sq(j, x) * n2])
    })?;
    Ok(s.max(0.0).sqrt())
}

/// ‖ω̂‖_{L²(base, g₀)} with g₀ the round metric of the root chart.
pub fn norm_base(d: &DerivativeField, grid: &TreeGrid) -> Result<f64> {
    let s = grid.base().integrate(|y| {
        let w = d.base.eval(y)?;
        let n2 = one_form_norm_sq(&w);
        Ok(if n2 == 0.0 {
            0.0
        } else {
            round_factor_sq(y) * n2
        })
    })?;
    Ok(s.max(0.0).sqrt())
}

/// ‖∂F⁺(A′)/∂θ‖_{L²(X, g)} by central differences of the per-vertex
/// curvatures; 2-form L² norms are conformally invariant, so no weight.
pub fn selfdual_derivative_norm(
    tree: &GluingTree,
    spliced: &SplicedConnection,
    dir: &ParamDirection,
    h: f64,
    grid: &TreeGrid,
) -> Result<f64> {
    dir.check()?;
    if matches!(dir.kind, ParamKind::Rotation { .. }) {
        // A gauge family: F⁺ rotates pointwise and its norm is unchanged.
        return Err(Error::Precondition(
            "self-dual curvature is gauge-equivariant along rotations".into(),
        ));
    }
    let delta = absolute_step(tree, dir, h)?;
    let opts = SpliceOptions {
        anchors: Some(spliced.anchor_table()),
        ..SpliceOptions::default()
    };
    let plus = splice_with(&perturbed(tree, dir, delta)?, &opts)?;
    let minus = splice_with(&perturbed(tree, dir, -delta)?, &opts)?;
    let id = Matrix4::identity();
    let [s] = grid.integrate_regions(|j, x| {
        let a = selfdual_part(&plus.vertices[j].field.curvature(x)?, &id)?;
        let b = selfdual_part(&minus.vertices[j].field.curvature(x)?, &id)?;
        Ok([a
            .iter()
            .zip(&b)
            .map(|(p, m)| ((p - m) / (2.0 * delta)).norm_squared())
            .sum()])
    })?;
    Ok(s.max(0.0).sqrt())
}

/// Norms of the derivative at steps h and h/2 and their relative change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub norm_h: f64,
    pub norm_half: f64,
    pub relative_change: f64,
}

pub fn richardson_check(
    tree: &GluingTree,
    spliced: &SplicedConnection,
    dir: &ParamDirection,
    h: f64,
    grid: &TreeGrid,
) -> Result<StepCheck> {
    let a = norm_x(&param_derivative(tree, spliced, dir, h)?, spliced, grid)?;
    let b = norm_x(
        &param_derivative(tree, spliced, dir, 0.5 * h)?,
        spliced,
        grid,
    )?;
    Ok(StepCheck {
        norm_h: a,
        norm_half: b,
        relative_change: (a - b).abs() / b.abs().max(f64::MIN_POSITIVE),
    })
}

/// ∫⟨a, b⟩ dV_g for Lie-algebra-valued 1-forms. This is the raw pairing,
/// an upper bound for the moduli-space metric on the corresponding classes.
pub fn l2_pairing<G: Integrator>(
    a: &ConnectionField,
    b: &ConnectionField,
    metric: &MetricField,
    grid: &G,
) -> Result<f64> {
    grid.integrate(|x| {
        let (u, v) = (a.eval(x)?, b.eval(x)?);
        // ⟨u, v⟩ by polarization keeps every metric kind on one code path.
        let sum: [Alg; 4] = std::array::from_fn(|m| u[m] + v[m]);
        let diff: [Alg; 4] = std::array::from_fn(|m| u[m] - v[m]);
        let p = metric.norm_sq(x, &TensorValue::OneForm(sum))?;
        let q = metric.norm_sq(x, &TensorValue::OneForm(diff))?;
        Ok(0.25 * (p - q) * metric.volume_density(x)?)
    })
}

/// Least-squares fit of log(value) against log(λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn exponent_fit(samples: &[(f64, f64)]) -> Result<ScalingFit> {
    if samples.len() < 3 {
        return Err(Error::Config(format!(
            "need ≥ 3 samples, got {}",
            samples.len()
        )));
    }
    for &(l, v) in samples {
        if !(l > 0.0 && v > 0.0) {
            return Err(Error::Domain(format!(
                "samples must be positive, got ({l}, {v})"
            )));
        }
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(l, v)| (l.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("samples must have distinct λ".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(ScalingFit {
        samples: samples.to_vec(),
        slope,
        intercept: my - slope * mx,
        r2,
        n: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub direction: String,
    pub vertex: String,
    pub lambda: f64,
    #[serde(rename = "norm_X")]
    pub norm_x: f64,
    pub norm_base: f64,
}

/// Template with the scale of `vertex` set to λ. An explicit b is scaled
/// with √λ; otherwise it follows the default 4N√λ.
pub fn at_scale(template: &GluingTree, vertex: &str, lambda: f64) -> Result<GluingTree> {
    let mut t = template.clone();
    let node = t
        .node_mut(vertex)
        .ok_or_else(|| Error::Config(format!("no vertex {vertex}")))?;
    let l0 = node
        .lambda
        .ok_or_else(|| Error::Config("the root has no scale".into()))?;
    node.lambda = Some(lambda);
    if let Some(b) = node.b {
        node.b = Some(b * (lambda / l0).sqrt());
    }
    Ok(t)
}

/// One row per (direction, λ): norms over X and over the base. Cells are
/// computed in parallel and returned in input order.
pub fn differential_table(
    template: &GluingTree,
    lambdas: &[f64],
    directions: &[ParamDirection],
    h: f64,
    grid_opts: &TreeGridOptions,
) -> Result<Vec<TableRow>> {
    let cells: Vec<(usize, usize)> = (0..directions.len())
        .flat_map(|d| (0..lambdas.len()).map(move |l| (d, l)))
        .collect();
    par::try_map_indexed(cells.len(), |c| {
        let (d, l) = cells[c];
        let dir = &directions[d];
        let tree = at_scale(template, &dir.vertex, lambdas[l])?;
        let spliced = crate::splice::splice(&tree)?;
        let grid = TreeGrid::build(&spliced.tree, grid_opts)?;
        let der = param_derivative(&tree, &spliced, dir, h)?;
        Ok(TableRow {
            direction: dir.label().into(),
            vertex: dir.vertex.clone(),
            lambda: lambdas[l],
            norm_x: norm_x(&der, &spliced, &grid)?,
            norm_base: norm_base(&der, &grid)?,
        })
    })
}
