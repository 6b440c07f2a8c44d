//! Spliced connections: cut-off vertex fields on each chart and their
//! composite on the root chart.

use std::sync::Arc;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::gauge::{
    ad_inv, exp_alg, log_alg, multiply_by, pullback_connection, quat_to_alg, rotate_constant, sum,
    transport_ray, zero_one_form, zero_two_form, ConnectionField, OneForm, Provenance,
};
use crate::geometry::{ConformalMap, Point4};
use crate::instanton::{bpst, product_connection, GaugeFlavor};

use super::cutoff::zeta;
use super::metric::ConnectedSumMetric;
use super::tree::{Assignment, GluingTree, ResolvedTree};

/// Centre and radius of a radial-gauge patch. The vertex field is put in
/// radial gauge about `centre` on B(centre, radius) and blended back to its
/// own gauge by B(centre, 2·radius).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub centre: Point4,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct SpliceOptions {
    /// RK4 steps per unit length for radial-gauge transport.
    pub ode_steps: usize,
    /// Per-vertex, per-child anchor overrides (indices of the resolved tree).
    /// Used to hold the gauge fixed while parameters move.
    pub anchors: Option<Vec<Vec<Anchor>>>,
}

impl Default for SpliceOptions {
    fn default() -> Self {
        Self {
            ode_steps: 16,
            anchors: None,
        }
    }
}

/// One summand of the splice.
#[derive(Debug, Clone)]
pub struct SplicedVertex {
    /// The assigned connection A_J in the chart of J.
    pub raw: ConnectionField,
    /// A_J with radial-gauge patches about the child sites.
    pub prepared: ConnectionField,
    /// A′_J = ψ_J·(prepared).
    pub field: ConnectionField,
    /// A′_J plus every descendant pulled back into the chart of J.
    pub composite: ConnectionField,
    /// Chart of J to the root chart.
    pub to_base: ConformalMap,
    /// Chart of the parent to the chart of J.
    pub from_parent: Option<ConformalMap>,
    /// Radial patches actually used, one per child (`None` where the field
    /// is already radial or flat).
    pub anchors: Vec<Option<Anchor>>,
    cutoff: CutoffProduct,
}

/// The spliced connection A′ as per-vertex chart fields.
#[derive(Debug, Clone)]
pub struct SplicedConnection {
    pub tree: ResolvedTree,
    pub metric: ConnectedSumMetric,
    pub vertices: Vec<SplicedVertex>,
}

impl SplicedConnection {
    /// The anchors in the override layout of [`SpliceOptions`].
    pub fn anchor_table(&self) -> Vec<Vec<Anchor>> {
        self.vertices
            .iter()
            .zip(&self.tree.nodes)
            .map(|(v, node)| {
                v.anchors
                    .iter()
                    .zip(&node.children)
                    .map(|(a, &c)| {
                        a.unwrap_or(Anchor {
                            centre: self.tree.nodes[c].site,
                            radius: self.tree.nodes[c].b,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// The total cutoff ψ_J of vertex J at `x`, with gradient.
    pub fn cutoff(&self, j: usize, x: &Point4) -> (f64, Point4) {
        self.vertices[j].cutoff.eval(x)
    }
}

/// ψ_J = ζ(1/(b_J|x|)) · Π_K ζ(|x − x_K|/b_K).
#[derive(Debug, Clone)]
struct CutoffProduct {
    south: Option<f64>,
    sites: Vec<(Point4, f64)>,
}

impl CutoffProduct {
    fn eval(&self, x: &Point4) -> (f64, Point4) {
        let mut value = 1.0;
        let mut grad = Point4::zeros();
        let mut factor = |v: f64, g: Point4| {
            grad = grad * v + g * value;
            value *= v;
        };
        if let Some(b) = self.south {
            let r = x.norm();
            if r == 0.0 {
                factor(1.0, Point4::zeros());
            } else {
                let t = 1.0 / (b * r);
                let (v, d) = zeta(t);
                factor(v, x * (-d / (b * r * r * r)));
            }
        }
        for (site, b) in &self.sites {
            let y = x - site;
            let r = y.norm();
            let (v, d) = zeta(r / b);
            let g = if r > 0.0 && d != 0.0 {
                y * (d / (b * r))
            } else {
                Point4::zeros()
            };
            factor(v, g);
        }
        (value, grad)
    }
}

/// Zero outside B(centre, radius); skips evaluating `a` there.
fn restrict_to_ball(a: &ConnectionField, centre: Point4, radius: f64) -> ConnectionField {
    let a1 = a.clone();
    let mut out = ConnectionField::new(a.provenance.clone(), move |x| {
        if (x - centre).norm() > radius {
            return Ok(zero_one_form());
        }
        a1.eval(x)
    });
    if a.has_analytic_curvature() {
        let a2 = a.clone();
        out = out.with_curvature(move |x| {
            if (x - centre).norm() > radius {
                return Ok(zero_two_form());
            }
            a2.curvature(x)
        });
    }
    out
}

/// ũ(x) = exp(χ(x)·log σ(x)) with σ the transport to radial gauge about the
/// anchor and χ = 1 − ζ(|x − c|/(2r)). Identity outside every patch.
fn patch_transform(
    raw: &ConnectionField,
    anchors: &[Anchor],
    steps: usize,
    x: &Point4,
) -> Result<UnitQuaternion<f64>> {
    for a in anchors {
        let d = (x - a.centre).norm();
        if d >= 2.0 * a.radius {
            continue;
        }
        let chi = 1.0 - zeta(d / (2.0 * a.radius)).0;
        let sigma = transport_ray(raw, &a.centre, x, steps)?.sigma;
        if chi == 1.0 {
            return Ok(sigma);
        }
        return Ok(exp_alg(&(log_alg(&sigma)? * chi)));
    }
    Ok(UnitQuaternion::identity())
}

/// A_J in radial gauge near each anchor: ũ⁻¹Aũ + ũ⁻¹dũ, with dũ by central
/// differences on the scale of the patch. Curvature is ũ⁻¹Fũ.
fn radial_patches(raw: &ConnectionField, anchors: Vec<Anchor>, steps: usize) -> ConnectionField {
    if anchors.is_empty() {
        return raw.clone();
    }
    let anchors = Arc::new(anchors);
    let (a1, an1) = (raw.clone(), anchors.clone());
    let (a2, an2) = (raw.clone(), anchors);
    ConnectionField::new(Provenance::Transformed, move |x| {
        let near = an1.iter().find(|a| (x - a.centre).norm() < 2.0 * a.radius);
        let Some(anchor) = near else {
            return a1.eval(x);
        };
        let u = patch_transform(&a1, &an1, steps, x)?;
        let h = 2e-4 * anchor.radius;
        let du: [Quaternion<f64>; 4] = std::array::from_fn(|m| {
            let mut e = Point4::zeros();
            e[m] = h;
            let up = patch_transform(&a1, &an1, steps, &(x + e));
            let um = patch_transform(&a1, &an1, steps, &(x - e));
            match (up, um) {
                (Ok(p), Ok(q)) => (p.into_inner() - q.into_inner()) / (2.0 * h),
                _ => Quaternion::new(f64::NAN, 0.0, 0.0, 0.0),
            }
        });
        if du.iter().any(|q| !q.w.is_finite()) {
            return Err(Error::Numerical(
                "radial patch transport failed near a patch point".into(),
            ));
        }
        let av = a1.eval(x)?;
        let uinv = u.inverse().into_inner();
        let out: OneForm =
            std::array::from_fn(|m| ad_inv(&u, &av[m]) + quat_to_alg(&(uinv * du[m])));
        Ok(out)
    })
    .with_curvature(move |x| {
        let f = a2.curvature(x)?;
        let u = patch_transform(&a2, &an2, steps, x)?;
        Ok(std::array::from_fn(|i| ad_inv(&u, &f[i])))
    })
}

pub fn splice(tree: &GluingTree) -> Result<SplicedConnection> {
    splice_with(tree, &SpliceOptions::default())
}

/// Build A′ from a gluing tree. Fails on structural violations only.
pub fn splice_with(tree: &GluingTree, opts: &SpliceOptions) -> Result<SplicedConnection> {
    let t = tree.resolve()?;
    let metric = ConnectedSumMetric::new(&t);
    let count = t.nodes.len();
    if let Some(table) = &opts.anchors {
        if table.len() != count
            || table
                .iter()
                .zip(&t.nodes)
                .any(|(a, v)| a.len() != v.children.len())
        {
            return Err(Error::Config("anchor table does not match the tree".into()));
        }
    }

    // Per-vertex chart data, root first.
    let mut from_parent = Vec::with_capacity(count);
    let mut to_base: Vec<ConformalMap> = Vec::with_capacity(count);
    for v in &t.nodes {
        match v.parent {
            None => {
                from_parent.push(None);
                to_base.push(ConformalMap::identity());
            }
            Some(p) => {
                let down = ConformalMap::new(v.lambda, v.site)?.with_rotation(v.frame)?;
                to_base.push(down.inverse().then(&to_base[p]));
                from_parent.push(Some(down));
            }
        }
    }

    let mut partial: Vec<Option<SplicedVertex>> = vec![None; count];
    for j in 0..count {
        let v = &t.nodes[j];
        let conn = v
            .conn
            .as_ref()
            .ok_or_else(|| Error::Config(format!("vertex {} has no connection assigned", v.id)))?;
        let raw = match conn {
            Assignment::Product => product_connection(),
            Assignment::Bpst(p) => bpst(p)?,
        };
        let anchors: Vec<Option<Anchor>> = v
            .children
            .iter()
            .enumerate()
            .map(|(slot, &c)| {
                let child = &t.nodes[c];
                let anchor = match &opts.anchors {
                    Some(table) => table[j][slot],
                    None => Anchor {
                        centre: child.site,
                        radius: child.b,
                    },
                };
                match conn {
                    Assignment::Product => None,
                    Assignment::Bpst(p)
                        if p.flavor == GaugeFlavor::Regular && anchor.centre == p.centre() =>
                    {
                        None
                    }
                    Assignment::Bpst(_) => Some(anchor),
                }
            })
            .collect();
        let prepared = radial_patches(
            &raw,
            anchors.iter().flatten().copied().collect(),
            opts.ode_steps,
        );
        let cutoff = CutoffProduct {
            south: v.parent.map(|_| v.b),
            sites: v
                .children
                .iter()
                .map(|&c| (t.nodes[c].site, t.nodes[c].b))
                .collect(),
        };
        let cut = cutoff.clone();
        let mut field = multiply_by(&prepared, move |x| cut.eval(x));
        field.provenance = Provenance::Spliced;
        partial[j] = Some(SplicedVertex {
            raw,
            prepared,
            field: field.clone(),
            composite: field,
            to_base: to_base[j].clone(),
            from_parent: from_parent[j].clone(),
            anchors,
            cutoff,
        });
    }

    // Composites, leaves first: each child is cut off beyond |x′| = 2/b,
    // i.e. beyond 2λ/b around its site in the parent chart.
    for j in (0..count).rev() {
        let v = &t.nodes[j];
        let mut acc = partial[j].as_ref().expect("filled above").field.clone();
        for &c in &v.children {
            let child = &t.nodes[c];
            let inner = partial[c].as_ref().expect("filled above");
            let rotated = rotate_constant(&inner.composite, child.rho);
            let pulled =
                pullback_connection(inner.from_parent.as_ref().expect("child map"), &rotated);
            let reach = 2.0 * child.lambda / child.b * (1.0 + 1e-9);
            acc = sum(&acc, &restrict_to_ball(&pulled, child.site, reach));
        }
        acc.provenance = Provenance::Spliced;
        partial[j].as_mut().expect("filled above").composite = acc;
    }

    Ok(SplicedConnection {
        tree: t,
        metric,
        vertices: partial
            .into_iter()
            .map(|v| v.expect("filled above"))
            .collect(),
    })
}

/// Â′ on the root chart: every vertex field pulled back through the chain of
/// blow-up maps and glued by the constant rotations ρ.
pub fn pullback_to_base(spliced: &SplicedConnection) -> ConnectionField {
    spliced.vertices[0].composite.clone()
}
