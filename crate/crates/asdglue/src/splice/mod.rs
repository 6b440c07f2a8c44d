//! Approximate gluing along a bubble tree.
//!
//! A [`GluingTree`] lists the vertex connections and, per edge, where the
//! child sphere is attached, its scale λ, cutoff radius b, gluing rotation ρ
//! and frame. [`splice`] cuts each vertex field off near its child sites
//! (ζ(|x − x_K|/b_K)) and near its own south pole (ζ(1/(b|x|))), producing
//! A′ as one field per vertex chart. [`pullback_to_base`] composes everything
//! onto the root chart. Integrals over the connected sum use a [`TreeGrid`]:
//! one grid per chart, masked to the region of that vertex, with each neck
//! counted on the parent side.

mod cutoff;
mod field;
mod grid;
mod metric;
mod tree;

pub use cutoff::{cutoff_eval, gamma, gradient_lp_norm, zeta, CutoffFn};
pub use field::{
    pullback_to_base, splice, splice_with, Anchor, SpliceOptions, SplicedConnection, SplicedVertex,
};
pub use grid::{BaseIntegrator, TreeGrid, TreeGridOptions};
pub use metric::{Band, ConnectedSumMetric, Neck};
pub use tree::{
    default_cutoff, validate_gluing_tree, Assignment, GluingTree, ResolvedNode, ResolvedTree,
    TreeNode, Violation, ViolationKind, CHART_RADIUS,
};

use nalgebra::Matrix4;

use crate::error::Result;
use crate::gauge::{one_form_norm_sq, selfdual_part, two_form_norm_sq};
use crate::geometry::{round_factor_sq, s3_rule, Point4};

/// Σ_J ∫_{region J} |F(A′_J)|², the Yang–Mills energy of A′ over X.
pub fn energy(spliced: &SplicedConnection, grid: &TreeGrid) -> Result<f64> {
    let [e] = grid.integrate_regions(|j, x| {
        Ok([two_form_norm_sq(&spliced.vertices[j].field.curvature(x)?)])
    })?;
    Ok(e)
}

/// Σ_J ‖F⁺(A′_J)‖_{L^p(region J, g)}. The projection uses the flat conformal
/// class of each chart; the L^p weight is φ^{4−2p} with φ² = m_J h₁².
pub fn selfdual_error(spliced: &SplicedConnection, grid: &TreeGrid, p: f64) -> Result<f64> {
    if !(1.0..4.0).contains(&p) {
        return Err(crate::Error::Config(format!(
            "L^p exponent must lie in [1, 4), got {p}"
        )));
    }
    let id = Matrix4::identity();
    let mut total = 0.0;
    for j in 0..spliced.vertices.len() {
        let [v] = grid.integrate_regions(|i, x| {
            if i != j {
                return Ok([0.0]);
            }
            let f = spliced.vertices[j].field.curvature(x)?;
            let c = selfdual_part(&f, &id)?;
            let n2: f64 = c.iter().map(|a| a.norm_squared()).sum();
            if n2 == 0.0 {
                return Ok([0.0]);
            }
            let phi2 = spliced.metric.conformal_sq(j, x);
            Ok([n2.powf(0.5 * p) * phi2.powf(2.0 - p)])
        })?;
        total += v.max(0.0).powf(1.0 / p);
    }
    Ok(total)
}

/// sup |A_J − A′_J|_{g_J} over the cutoff annuli of vertex J, sampled on
/// `radii` radial points times a fixed S³ stencil. g_J is the round metric
/// of the summand; the field compared is the radially patched A_J.
pub fn cutoff_defect(spliced: &SplicedConnection, j: usize, radii: usize) -> Result<f64> {
    let node = &spliced.tree.nodes[j];
    let v = &spliced.vertices[j];
    let dirs: Vec<Point4> = s3_rule(3).into_iter().map(|(u, _)| u).collect();
    let mut annuli: Vec<(Point4, f64, f64)> = node
        .children
        .iter()
        .map(|&c| {
            let ch = &spliced.tree.nodes[c];
            (ch.site, 0.5 * ch.b, ch.b)
        })
        .collect();
    if node.parent.is_some() {
        annuli.push((Point4::zeros(), 1.0 / node.b, 2.0 / node.b));
    }
    let mut worst: f64 = 0.0;
    for (centre, r0, r1) in annuli {
        for i in 0..radii {
            let t = (i as f64 + 0.5) / radii as f64;
            let r = r0 * (r1 / r0).powf(t);
            for u in &dirs {
                let x = centre + u * r;
                let a = v.prepared.eval(&x)?;
                let (psi, _) = spliced.cutoff(j, &x);
                let defect = (1.0 - psi) * one_form_norm_sq(&a).sqrt() / round_factor_sq(&x).sqrt();
                worst = worst.max(defect);
            }
        }
    }
    Ok(worst)
}

/// The gluing trees shipped with the crate, by name.
pub fn bundled() -> Vec<(&'static str, GluingTree)> {
    const SOURCES: [(&str, &str); 6] = [
        ("one_bubble", include_str!("../../configs/one_bubble.json")),
        (
            "bubble_on_instanton",
            include_str!("../../configs/bubble_on_instanton.json"),
        ),
        (
            "two_bubbles",
            include_str!("../../configs/two_bubbles.json"),
        ),
        (
            "theta_parent",
            include_str!("../../configs/theta_parent.json"),
        ),
        (
            "bubble_on_bubble",
            include_str!("../../configs/bubble_on_bubble.json"),
        ),
        ("chain3", include_str!("../../configs/chain3.json")),
    ];
    SOURCES
        .iter()
        .map(|(name, src)| {
            (
                *name,
                GluingTree::from_json(src).expect("bundled configs parse"),
            )
        })
        .collect()
}
