//! Gluing trees: the combinatorial and numerical data of a bubble-tree splice.

use std::collections::HashMap;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point4;
use crate::instanton::{BpstParams, GaugeFlavor};

/// Chart radius used in place of the injectivity radius of the base.
pub const CHART_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Product,
    Bpst(BpstParams),
}

impl Assignment {
    pub fn charge(&self) -> u32 {
        match self {
            Assignment::Product => 0,
            Assignment::Bpst(_) => 1,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Assignment::Product)
    }
}

/// One vertex of the tree together with the edge to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub k: u32,
    /// Attachment point in the parent chart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Cutoff radius; defaults to 4N√λ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// Gluing rotation as [w, x, y, z].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<[f64; 4]>,
    /// Frame, an SO(4) matrix given by rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<[[f64; 4]; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conn: Option<Assignment>,
}

impl TreeNode {
    pub fn root(k: u32, conn: Assignment) -> Self {
        Self {
            id: "0".into(),
            parent: None,
            k,
            x: None,
            lambda: None,
            b: None,
            rho: None,
            v: None,
            conn: Some(conn),
        }
    }

    pub fn child(id: &str, parent: &str, x: Point4, lambda: f64, conn: Assignment) -> Self {
        Self {
            id: id.into(),
            parent: Some(parent.into()),
            k: conn.charge(),
            x: Some([x[0], x[1], x[2], x[3]]),
            lambda: Some(lambda),
            b: None,
            rho: None,
            v: None,
            conn: Some(conn),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluingTree {
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Not a tree, duplicate or dangling ids, missing edge data.
    Structure,
    /// Vertex without a connection.
    Assignment,
    /// Charges inconsistent with assignments, or no bubble at all.
    Charge,
    /// Terminal non-root vertex without charge.
    Terminal,
    /// A flat non-root vertex with fewer than two children.
    ThetaBranching,
    /// b below 4N√λ.
    CutoffLower,
    /// b at or above ¼ min(1, ϱ₀, d₀).
    CutoffUpper,
    /// Sibling centres closer than 4(b + b′).
    Separation,
    /// Cut-out balls of siblings intersect, or the neck annuli overlap the cutoffs.
    CutoffOverlap,
    /// Bad rotation data.
    Frame,
    /// Non-root instanton not in singular gauge, or a child too close to a
    /// singular-gauge centre.
    Gauge,
    /// A child site (with its cutoff ball) leaves its parent's region.
    Reach,
}

impl ViolationKind {
    /// Whether splicing is impossible (as opposed to a scale bound that the
    /// estimates assume but the construction does not need).
    pub fn is_structural(self) -> bool {
        !matches!(
            self,
            ViolationKind::CutoffLower
                | ViolationKind::CutoffUpper
                | ViolationKind::Separation
                | ViolationKind::Charge
                | ViolationKind::Terminal
                | ViolationKind::ThetaBranching
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::Structure => "structure",
            ViolationKind::Assignment => "assignment",
            ViolationKind::Charge => "charge",
            ViolationKind::Terminal => "terminal",
            ViolationKind::ThetaBranching => "Θ branching",
            ViolationKind::CutoffLower => "cutoff lower bound",
            ViolationKind::CutoffUpper => "cutoff upper bound",
            ViolationKind::Separation => "separation",
            ViolationKind::CutoffOverlap => "cutoff overlap",
            ViolationKind::Frame => "frame",
            ViolationKind::Gauge => "gauge",
            ViolationKind::Reach => "reach",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.node {
            Some(id) => write!(f, "{} at {id}: {}", self.kind.label(), self.message),
            None => write!(f, "{}: {}", self.kind.label(), self.message),
        }
    }
}

/// A vertex with every default filled in and indices resolved.
#[derive(Debug, Clone)]
pub struct ResolvedNode {
    pub id: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub k: u32,
    pub site: Point4,
    pub lambda: f64,
    pub b: f64,
    pub rho: UnitQuaternion<f64>,
    pub frame: Matrix4<f64>,
    pub conn: Option<Assignment>,
}

impl ResolvedNode {
    /// Radius of the vertex region in its own chart, N⁻¹λ^{-1/2}; infinite at the root.
    pub fn region_radius(&self, n: f64) -> f64 {
        if self.parent.is_none() {
            f64::INFINITY
        } else {
            1.0 / (n * self.lambda.sqrt())
        }
    }

    /// Inner radius of the neck around this vertex in the parent chart, N⁻¹√λ.
    pub fn neck_inner(&self, n: f64) -> f64 {
        self.lambda.sqrt() / n
    }
}

/// The tree in parent-before-child order with indices in place of ids.
#[derive(Debug, Clone)]
pub struct ResolvedTree {
    pub n: f64,
    pub nodes: Vec<ResolvedNode>,
}

impl ResolvedTree {
    pub fn total_charge(&self) -> u32 {
        self.nodes.iter().map(|v| v.k).sum()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|v| v.id == id)
    }

    /// Indices of `j` and all of its descendants.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut out = vec![j];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[out[i]].children.iter().copied());
            i += 1;
        }
        out
    }
}

pub fn default_cutoff(n: f64, lambda: f64) -> f64 {
    4.0 * n * lambda.sqrt()
}

fn rotation_from(rho: &[f64; 4]) -> std::result::Result<UnitQuaternion<f64>, String> {
    let q = Quaternion::new(rho[0], rho[1], rho[2], rho[3]);
    if (q.norm() - 1.0).abs() > 1e-9 {
        return Err(format!(
            "rho is not a unit quaternion (|rho| = {})",
            q.norm()
        ));
    }
    Ok(UnitQuaternion::new_normalize(q))
}

fn frame_from(v: &[[f64; 4]; 4]) -> std::result::Result<Matrix4<f64>, String> {
    let m = Matrix4::from_fn(|i, j| v[i][j]);
    let defect = (m.transpose() * m - Matrix4::identity()).abs().max();
    if defect > 1e-9 {
        return Err(format!("frame is not orthogonal (defect {defect:e})"));
    }
    if m.determinant() < 0.0 {
        return Err("frame reverses orientation".into());
    }
    Ok(m)
}

impl GluingTree {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("gluing tree: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialises")
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.iter().find(|v| v.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut TreeNode> {
        self.nodes.iter_mut().find(|v| v.id == id)
    }

    /// Resolve ids and defaults. Returns the resolved tree plus the violations
    /// found on the way (only structural ones can prevent resolution).
    fn resolve_collect(&self) -> (Option<ResolvedTree>, Vec<Violation>) {
        let mut out = Vec::new();
        let mut push = |kind, node: Option<&str>, message: String| {
            out.push(Violation {
                kind,
                node: node.map(str::to_string),
                message,
            })
        };
        if !(self.n > 4.0) || !self.n.is_finite() {
            push(
                ViolationKind::Structure,
                None,
                format!("N must exceed 4, got {}", self.n),
            );
        }
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for (i, v) in self.nodes.iter().enumerate() {
            if by_id.insert(v.id.as_str(), i).is_some() {
                push(ViolationKind::Structure, Some(&v.id), "duplicate id".into());
            }
        }
        let roots: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].parent.is_none())
            .collect();
        if roots.len() != 1
            || self
                .nodes
                .get(roots.first().copied().unwrap_or(0))
                .map(|v| v.id.as_str())
                != Some("0")
        {
            push(
                ViolationKind::Structure,
                None,
                format!(
                    "need exactly one parentless vertex with id \"0\", found {}",
                    roots.len()
                ),
            );
            return (None, out);
        }
        let mut parent_idx = vec![None; self.nodes.len()];
        for (i, v) in self.nodes.iter().enumerate() {
            if let Some(p) = &v.parent {
                match by_id.get(p.as_str()) {
                    Some(&j) if j != i => parent_idx[i] = Some(j),
                    _ => push(
                        ViolationKind::Structure,
                        Some(&v.id),
                        format!("unknown parent {p}"),
                    ),
                }
            }
        }
        // Breadth-first order from the root; anything unreached sits on a cycle.
        let mut order = vec![roots[0]];
        let mut k = 0;
        while k < order.len() {
            let cur = order[k];
            for (i, p) in parent_idx.iter().enumerate() {
                if *p == Some(cur) {
                    order.push(i);
                }
            }
            k += 1;
        }
        if order.len() != self.nodes.len() {
            push(
                ViolationKind::Structure,
                None,
                "tree is not connected or contains a cycle".into(),
            );
            return (None, out);
        }
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(a, &b)| (b, a)).collect();
        let mut nodes: Vec<ResolvedNode> = Vec::with_capacity(order.len());
        let mut broken = false;
        for &i in &order {
            let v = &self.nodes[i];
            let parent = parent_idx[i].map(|p| pos[&p]);
            let depth = parent.map_or(0, |p: usize| nodes[p].depth + 1);
            let (site, lambda) = if parent.is_some() {
                match (v.x, v.lambda) {
                    (Some(x), Some(l))
                        if l > 0.0 && l.is_finite() && x.iter().all(|c| c.is_finite()) =>
                    {
                        (Point4::from(x), l)
                    }
                    _ => {
                        push(
                            ViolationKind::Structure,
                            Some(&v.id),
                            "edge needs a finite x and a positive lambda".into(),
                        );
                        broken = true;
                        (Point4::zeros(), 1.0)
                    }
                }
            } else {
                (Point4::zeros(), 1.0)
            };
            let b = if parent.is_some() {
                v.b.unwrap_or_else(|| default_cutoff(self.n, lambda))
            } else {
                0.0
            };
            if parent.is_some() && !(b > 0.0) {
                push(
                    ViolationKind::Structure,
                    Some(&v.id),
                    "cutoff radius must be positive".into(),
                );
                broken = true;
            }
            let rho = match v.rho.as_ref().map(rotation_from) {
                None => UnitQuaternion::identity(),
                Some(Ok(r)) => r,
                Some(Err(m)) => {
                    push(ViolationKind::Frame, Some(&v.id), m);
                    broken = true;
                    UnitQuaternion::identity()
                }
            };
            let frame = match v.v.as_ref().map(frame_from) {
                None => Matrix4::identity(),
                Some(Ok(m)) => m,
                Some(Err(m)) => {
                    push(ViolationKind::Frame, Some(&v.id), m);
                    broken = true;
                    Matrix4::identity()
                }
            };
            nodes.push(ResolvedNode {
                id: v.id.clone(),
                parent,
                children: Vec::new(),
                depth,
                k: v.k,
                site,
                lambda,
                b,
                rho,
                frame,
                conn: v.conn.clone(),
            });
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        if broken {
            return (None, out);
        }
        (Some(ResolvedTree { n: self.n, nodes }), out)
    }

    /// Resolve the tree, failing only on structural violations.
    pub fn resolve(&self) -> Result<ResolvedTree> {
        let violations = validate_gluing_tree(self);
        let structural: Vec<String> = violations
            .iter()
            .filter(|v| v.kind.is_structural())
            .map(|v| v.to_string())
            .collect();
        if !structural.is_empty() {
            return Err(Error::Config(structural.join("; ")));
        }
        let (tree, _) = self.resolve_collect();
        tree.ok_or_else(|| Error::Config("gluing tree could not be resolved".into()))
    }
}

/// Every invariant of a gluing tree, as data. Empty iff the tree is valid.
pub fn validate_gluing_tree(tree: &GluingTree) -> Vec<Violation> {
    let (resolved, mut out) = tree.resolve_collect();
    let Some(t) = resolved else {
        return out;
    };
    let n = t.n;
    let mut push = |kind, node: &str, message: String| {
        out.push(Violation {
            kind,
            node: Some(node.to_string()),
            message,
        })
    };

    // Upper cutoff bound uses d₀: given, or the least sibling distance.
    let mut d0 = tree.d0.unwrap_or(f64::INFINITY);
    if tree.d0.is_none() {
        for v in &t.nodes {
            for (a, &i) in v.children.iter().enumerate() {
                for &j in &v.children[a + 1..] {
                    d0 = d0.min((t.nodes[i].site - t.nodes[j].site).norm());
                }
            }
        }
    }
    let upper = 0.25 * CHART_RADIUS.min(d0);

    let mut bubble = false;
    for v in &t.nodes {
        match &v.conn {
            None => push(
                ViolationKind::Assignment,
                &v.id,
                "no connection assigned".into(),
            ),
            Some(c) => {
                if c.charge() != v.k {
                    push(
                        ViolationKind::Charge,
                        &v.id,
                        format!(
                            "charge {} does not match the assigned connection (charge {})",
                            v.k,
                            c.charge()
                        ),
                    );
                }
                if let Assignment::Bpst(p) = c {
                    if let Err(e) = p.validate() {
                        push(ViolationKind::Assignment, &v.id, e.to_string());
                    }
                    if v.parent.is_some() && p.flavor != GaugeFlavor::Singular {
                        push(
                            ViolationKind::Gauge,
                            &v.id,
                            "a bubble must be in singular gauge to be cut off near its south pole"
                                .into(),
                        );
                    }
                }
            }
        }
        if v.parent.is_some() && v.k > 0 {
            bubble = true;
        }
        if v.parent.is_some() && v.children.is_empty() && v.k == 0 {
            push(
                ViolationKind::Terminal,
                &v.id,
                "terminal bubble carries no charge".into(),
            );
        }
        if v.parent.is_some() && v.k == 0 && !v.children.is_empty() && v.children.len() < 2 {
            push(
                ViolationKind::ThetaBranching,
                &v.id,
                format!(
                    "flat vertex has {} outgoing edge(s), needs at least 2",
                    v.children.len()
                ),
            );
        }
        if let Some(pi) = v.parent {
            let lower = default_cutoff(n, v.lambda);
            if v.b < lower * (1.0 - 1e-12) {
                push(
                    ViolationKind::CutoffLower,
                    &v.id,
                    format!("b = {} < 4N√λ = {lower}", v.b),
                );
            }
            if v.b >= upper {
                push(
                    ViolationKind::CutoffUpper,
                    &v.id,
                    format!("b = {} ≥ ¼min(1, ϱ₀, d₀) = {upper}", v.b),
                );
            }
            // Parent cutoff must vanish on the neck and the child cutoff must
            // finish inside the child region: b/2 > 2√λ and 2λ/b < N⁻¹√λ.
            let s = v.lambda.sqrt();
            if v.b <= 4.0 * s || 2.0 * v.lambda / v.b >= s / n {
                push(
                    ViolationKind::CutoffOverlap,
                    &v.id,
                    format!(
                        "cutoff b = {} leaves no flat gap around the neck at √λ = {s}",
                        v.b
                    ),
                );
            }
            let parent = &t.nodes[pi];
            let reach = parent.region_radius(n);
            if v.site.norm() + v.b >= reach {
                push(
                    ViolationKind::Reach,
                    &v.id,
                    format!(
                        "site |x| + b = {} is outside the parent region (radius {reach})",
                        v.site.norm() + v.b
                    ),
                );
            }
            if let Some(Assignment::Bpst(p)) = &parent.conn {
                if p.flavor == GaugeFlavor::Singular && (v.site - p.centre()).norm() <= 2.0 * v.b {
                    push(
                        ViolationKind::Gauge,
                        &v.id,
                        "site within 2b of the parent's singular-gauge centre".into(),
                    );
                }
            }
        }
        for (a, &i) in v.children.iter().enumerate() {
            for &j in &v.children[a + 1..] {
                let (ci, cj) = (&t.nodes[i], &t.nodes[j]);
                let d = (ci.site - cj.site).norm();
                if d <= ci.b + cj.b {
                    push(
                        ViolationKind::CutoffOverlap,
                        &ci.id,
                        format!("cut-out balls of {} and {} intersect", ci.id, cj.id),
                    );
                } else if d <= 4.0 * (ci.b + cj.b) {
                    push(
                        ViolationKind::Separation,
                        &ci.id,
                        format!(
                            "|x_{} − x_{}| = {d} ≤ 4(b + b′) = {}",
                            ci.id,
                            cj.id,
                            4.0 * (ci.b + cj.b)
                        ),
                    );
                }
            }
        }
        if let Some(l0) = tree.lambda0 {
            if v.parent.is_some() && v.lambda >= l0 {
                push(
                    ViolationKind::CutoffUpper,
                    &v.id,
                    format!("λ = {} ≥ λ₀ = {l0}", v.lambda),
                );
            }
        }
        if let Some(b0) = tree.b0 {
            if v.parent.is_some() && v.b >= b0 {
                push(
                    ViolationKind::CutoffUpper,
                    &v.id,
                    format!("b = {} ≥ b₀ = {b0}", v.b),
                );
            }
        }
    }
    if t.total_charge() == 0 || !bubble {
        out.push(Violation {
            kind: ViolationKind::Charge,
            node: None,
            message: "need total charge ≥ 1 with charge on some vertex other than the root".into(),
        });
    }
    out
}
