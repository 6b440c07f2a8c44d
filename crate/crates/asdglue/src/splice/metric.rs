//! Conformal factors of the connected-sum metric.
//!
//! Every summand carries the round metric h₁²δ of its chart. The factor m_J
//! of a parent interpolates, smoothstep in log|y| with |y| = |x − x_K|, between
//! the pulled-back child metric (|y| ≤ ½√λ_K) and 1 (|y| ≥ 2√λ_K). Each neck
//! point belongs to the parent region, so the metric on X is m_J·h₁² on the
//! region of J.

use crate::geometry::{round_factor_sq, ConformalMap, MetricField, Point4};

use super::cutoff::gamma;
use super::tree::ResolvedTree;

#[derive(Debug, Clone)]
pub struct Neck {
    pub child: usize,
    pub site: Point4,
    pub lambda: f64,
}

impl Neck {
    /// Ratio of the pulled-back child metric to the parent's round metric at
    /// y = x − site: λ⁻²h₁²(y/λ)/h₁²(x).
    pub fn ratio(&self, x: &Point4) -> f64 {
        let y = x - self.site;
        let l = self.lambda;
        let d = l * l + y.norm_squared();
        4.0 * l * l / (d * d) / round_factor_sq(x)
    }

    /// Interpolation weight s: 0 at |y| ≤ ½√λ, 1 at |y| ≥ 2√λ.
    pub fn blend(&self, x: &Point4) -> f64 {
        gamma((x - self.site).norm() / self.lambda.sqrt()).0
    }
}

#[derive(Debug, Clone)]
struct MetricVertex {
    parent: Option<usize>,
    region_radius: f64,
    lambda: f64,
    necks: Vec<Neck>,
    to_parent: Option<ConformalMap>,
}

/// Which of the nested bands X′ ⊃ X″ ⊃ X‴ a point lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// X′ minus X″: deep in a neck, within ½√λ of the small end.
    Neck,
    /// X″ minus X‴: the interpolation annulus.
    Inner,
    /// X‴, where m = 1.
    Plain,
}

#[derive(Debug, Clone)]
pub struct ConnectedSumMetric {
    pub n: f64,
    vertices: Vec<MetricVertex>,
}

impl ConnectedSumMetric {
    pub fn new(tree: &ResolvedTree) -> Self {
        let n = tree.n;
        let vertices = tree
            .nodes
            .iter()
            .map(|v| MetricVertex {
                parent: v.parent,
                region_radius: v.region_radius(n),
                lambda: v.lambda,
                necks: v
                    .children
                    .iter()
                    .map(|&c| Neck {
                        child: c,
                        site: tree.nodes[c].site,
                        lambda: tree.nodes[c].lambda,
                    })
                    .collect(),
                to_parent: v.parent.map(|_| {
                    ConformalMap::new(v.lambda, v.site)
                        .and_then(|m| m.with_rotation(v.frame))
                        .expect("resolved nodes carry valid maps")
                        .inverse()
                }),
            })
            .collect();
        Self { n, vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn necks(&self, j: usize) -> &[Neck] {
        &self.vertices[j].necks
    }

    /// Whether `x` (chart of J) lies in the region of J.
    pub fn in_region(&self, j: usize, x: &Point4) -> bool {
        let v = &self.vertices[j];
        if x.norm() >= v.region_radius {
            return false;
        }
        v.necks
            .iter()
            .all(|k| (x - k.site).norm() >= k.lambda.sqrt() / self.n)
    }

    /// m_J at `x`, from the necks of the children of J.
    pub fn factor(&self, j: usize, x: &Point4) -> f64 {
        self.vertices[j]
            .necks
            .iter()
            .map(|k| {
                let s = k.blend(x);
                if s >= 1.0 {
                    1.0
                } else {
                    k.ratio(x).powf(1.0 - s)
                }
            })
            .product()
    }

    /// m_J extended over the south neck of J, where it is forced by the
    /// parent: m_J(x) = m_parent(y)/R(y) with y the parent-chart point.
    pub fn factor_extended(&self, j: usize, x: &Point4) -> f64 {
        let v = &self.vertices[j];
        let own = self.factor(j, x);
        match (v.parent, &v.to_parent) {
            (Some(p), Some(up)) if x.norm() >= v.region_radius => {
                let y = up.apply(x);
                let neck = self.vertices[p]
                    .necks
                    .iter()
                    .find(|k| k.child == j)
                    .expect("child listed under its parent");
                own * self.factor(p, &y) / neck.ratio(&y)
            }
            _ => own,
        }
    }

    /// φ² = m_J·h₁² at `x` in the chart of J.
    pub fn conformal_sq(&self, j: usize, x: &Point4) -> f64 {
        self.factor(j, x) * round_factor_sq(x)
    }

    pub fn metric_field(&self, j: usize) -> MetricField {
        let me = self.clone();
        MetricField::conformal(move |x| me.conformal_sq(j, x))
    }

    /// Whether `x` lies in the extended region of vertex `j`: the chart ball of radius
    /// Nλ^{-1/2} (all of the chart for the root) minus the child balls of
    /// radius N⁻¹√λ_K. This includes the far half of the south neck.
    pub fn in_extended(&self, j: usize, x: &Point4) -> bool {
        let v = &self.vertices[j];
        if v.parent.is_some() && x.norm() >= self.n / v.lambda.sqrt() {
            return false;
        }
        v.necks
            .iter()
            .all(|k| (x - k.site).norm() >= k.lambda.sqrt() / self.n)
    }

    /// Band of a point of the extended X′_J, or `None` outside it.
    pub fn band(&self, j: usize, x: &Point4) -> Option<Band> {
        if !self.in_extended(j, x) {
            return None;
        }
        let v = &self.vertices[j];
        // Distance to the small end of each neck, in units of √λ.
        let mut t = f64::INFINITY;
        for k in &v.necks {
            t = t.min((x - k.site).norm() / k.lambda.sqrt());
        }
        if v.parent.is_some() {
            let r = x.norm();
            if r > 0.0 {
                // South neck: |w| = 1/|x|, measured against √λ of J itself.
                t = t.min(1.0 / (r * v.lambda.sqrt()));
            }
        }
        Some(if t < 0.5 {
            Band::Neck
        } else if t < 2.0 {
            Band::Inner
        } else {
            Band::Plain
        })
    }

    /// Relative mismatch |m_J g_J − f_K*(m_K g_K)| / |m_J g_J| at the
    /// parent-chart point `x` of the neck of child K.
    pub fn matching_residual(&self, child: usize, x: &Point4) -> f64 {
        let v = &self.vertices[child];
        let (p, up) = (
            v.parent.expect("child has a parent"),
            v.to_parent.as_ref().expect("child has a map"),
        );
        let down = up.inverse();
        let xc = down.apply(x);
        let parent_side = self.conformal_sq(p, x);
        let l = v.lambda;
        let child_side = self.factor_extended(child, &xc) * round_factor_sq(&xc) / (l * l);
        (parent_side - child_side).abs() / parent_side
    }
}
