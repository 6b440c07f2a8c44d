//! Bubble-tree extraction from a degenerating family.
//!
//! The algorithm works on mass clouds: the nodes of a quadrature rule that
//! resolves the family, each carrying the curvature density |F|² and its
//! weight. Concentration is found by growing moment windows around density
//! peaks and keeping the windows whose scale shrinks along α. Each
//! concentration point is blown up with its own centre and scale, which maps
//! the cloud into the next chart, and the search repeats there.
//!
//! Energy is conformally invariant, so a blow-up only relabels positions and
//! rescales density and weight; no field needs to be re-evaluated.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{two_form_norm_sq, ConnectionField};
use crate::geometry::{ConformalMap, Integrator, Point4};
use crate::instanton::{BpstParams, GaugeFlavor};
use crate::par;
use crate::splice::{
    splice, Assignment, GluingTree, SplicedConnection, TreeGrid, TreeGridOptions, TreeNode,
};

/// Energy of one unit of charge, 8π².
pub const UNIT_MASS: f64 = 8.0 * PI * PI;

/// 8k − 3(1 − b₁ + b⁺), the expected dimension of the charge-k moduli space.
pub fn moduli_dimension(k: u32, b1: u32, bplus: u32) -> i64 {
    8 * k as i64 - 3 * (1 - b1 as i64 + bplus as i64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: Point4,
    pub density: f64,
    pub weight: f64,
}

impl CloudPoint {
    pub fn mass(&self) -> f64 {
        self.density * self.weight
    }
}

/// Quadrature nodes carrying an energy density.
#[derive(Debug, Clone, Default)]
pub struct MassCloud {
    pub points: Vec<CloudPoint>,
}

/// Mass, centre and scale of the part of a cloud inside a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub centre: Point4,
    pub radius: f64,
    pub mass: f64,
    pub scale: f64,
}

impl MassCloud {
    pub fn from_density<G, F>(density: F, grid: &G) -> Result<Self>
    where
        G: Integrator,
        F: Fn(&Point4) -> Result<f64> + Sync + Send,
    {
        let nodes = grid.weighted_nodes();
        let points = par::try_map_indexed(nodes.len(), |i| {
            let (x, weight) = nodes[i];
            let density = density(&x)?;
            if !density.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    point: [x[0], x[1], x[2], x[3]],
                });
            }
            Ok(CloudPoint { x, density, weight })
        })?;
        Ok(Self { points })
    }

    /// Cloud of |F_A|².
    pub fn from_field<G: Integrator>(a: &ConnectionField, grid: &G) -> Result<Self> {
        Self::from_density(|x| Ok(two_form_norm_sq(&a.curvature(x)?)), grid)
    }

    /// Cloud of |F(A′_J)|² over the vertex regions, read on the root chart.
    pub fn from_splice(spliced: &SplicedConnection, grid: &TreeGrid) -> Result<Self> {
        let nodes = grid.region_nodes();
        let points = par::try_map_indexed(nodes.len(), |i| {
            let (j, x, w) = nodes[i];
            let map = &grid.to_base[j];
            let jac = map.stretch().powi(4);
            let density = two_form_norm_sq(&spliced.vertices[j].field.curvature(&x)?) / jac;
            if !density.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    point: [x[0], x[1], x[2], x[3]],
                });
            }
            Ok(CloudPoint {
                x: map.apply(&x),
                density,
                weight: w * jac,
            })
        })?;
        Ok(Self { points })
    }

    pub fn total(&self) -> f64 {
        let m: Vec<f64> = self.points.iter().map(CloudPoint::mass).collect();
        par::pairwise_sum(&m)
    }

    pub fn translated(&self, p: &Point4) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|c| CloudPoint { x: c.x + p, ..*c })
                .collect(),
        }
    }

    /// Points of B(c, r) in the chart y = (x − c)/s.
    pub fn blow_up(&self, c: &Point4, s: f64, r: f64) -> Self {
        let s4 = s.powi(4);
        Self {
            points: self
                .points
                .iter()
                .filter(|p| (p.x - c).norm() < r)
                .map(|p| CloudPoint {
                    x: (p.x - c) / s,
                    density: p.density * s4,
                    weight: p.weight / s4,
                })
                .collect(),
        }
    }

    /// Moments over B(c, r), skipping points flagged in `skip`.
    pub fn window(&self, c: &Point4, r: f64, skip: Option<&[bool]>) -> Window {
        let inside = |i: usize, p: &CloudPoint| skip.is_none_or(|s| !s[i]) && (p.x - c).norm() < r;
        let mut mass = Vec::new();
        let mut first: [Vec<f64>; 4] = Default::default();
        for (i, p) in self.points.iter().enumerate() {
            if inside(i, p) {
                let m = p.mass();
                mass.push(m);
                for (k, f) in first.iter_mut().enumerate() {
                    f.push(m * (p.x[k] - c[k]));
                }
            }
        }
        let total = par::pairwise_sum(&mass);
        if total <= 0.0 {
            return Window {
                centre: *c,
                radius: r,
                mass: 0.0,
                scale: 0.0,
            };
        }
        let offset = Point4::from_fn(|k, _| par::pairwise_sum(&first[k]) / total);
        let centre = c + offset;
        let second: Vec<f64> = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, p)| inside(*i, p))
            .map(|(_, p)| p.mass() * (p.x - centre).norm_squared())
            .collect();
        Window {
            centre,
            radius: r,
            mass: total,
            scale: (par::pairwise_sum(&second) / total).sqrt(),
        }
    }

    fn claim(&self, c: &Point4, r: f64, claimed: &mut [bool]) {
        for (i, p) in self.points.iter().enumerate() {
            if (p.x - c).norm() < r {
                claimed[i] = true;
            }
        }
    }
}

/// Extraction knobs. Masses are in units of 8π², lengths in chart units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Smallest mass a concentration point may carry.
    pub epsilon: f64,
    /// Moment windows have radius `window` × scale.
    pub window: f64,
    /// A point concentrates when its scale at the last α is at most
    /// `shrink` times its scale at the first.
    pub shrink: f64,
    /// Largest scale a concentration point may have at the last α.
    pub max_scale: f64,
    /// Residual mass below this makes a vertex flat.
    pub flat_mass: f64,
    /// Allowed distance of window masses from integers.
    pub accounting: f64,
    /// A blown-up cloud with fewer points is kept as a point mass.
    pub min_points: usize,
    /// Peak searches per cloud.
    pub max_peaks: usize,
    /// Relative agreement required between the r₀ and r₀/2 windows.
    pub stability: f64,
    /// N of the neck annuli Ω(x, N⁻¹√λ, N√λ).
    pub neck_n: f64,
    /// Depth limit; the charge k when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            window: 10.0,
            shrink: 0.5,
            max_scale: 0.25,
            flat_mass: 0.5,
            accounting: 0.01,
            min_points: 32,
            max_peaks: 64,
            stability: 0.02,
            neck_n: 8.0,
            max_depth: None,
        }
    }
}

impl Thresholds {
    fn check(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.window > 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.max_scale > 0.0
            && self.flat_mass > 0.0
            && self.accounting > 0.0
            && self.max_peaks > 0
            && self.stability > 0.0
            && self.neck_n > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad extraction thresholds {self:?}")))
        }
    }
}

/// Centre, scale, mass and window radius of a point at every α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub centres: Vec<[f64; 4]>,
    pub scales: Vec<f64>,
    pub masses: Vec<f64>,
    pub radii: Vec<f64>,
}

impl Track {
    fn from_windows(w: &[Window]) -> Self {
        Self {
            centres: w.iter().map(|w| arr(&w.centre)).collect(),
            scales: w.iter().map(|w| w.scale).collect(),
            masses: w.iter().map(|w| w.mass).collect(),
            radii: w.iter().map(|w| w.radius).collect(),
        }
    }

    pub fn centre(&self, a: usize) -> Point4 {
        Point4::from(self.centres[a])
    }

    fn last(&self) -> usize {
        self.scales.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub charge: u32,
    pub track: Track,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub alphas: Vec<f64>,
    pub candidates: Vec<Candidate>,
    /// Cap on window radii, ¼ min(1, d₀).
    pub r0: f64,
    /// Whether the last-α windows agree for caps r₀ and r₀/2.
    pub r0_stable: bool,
    pub total_mass: Vec<f64>,
    /// Mass outside every candidate window at the last α.
    pub residual_mass: f64,
}

fn arr(p: &Point4) -> [f64; 4] {
    [p[0], p[1], p[2], p[3]]
}

/// Radius cap of peak windows before r₀ is known.
const PEAK_CAP: f64 = 0.25;

/// Scale of a unit-charge instanton whose peak density is `rho`.
fn peak_scale(rho: f64) -> f64 {
    SQRT_2 * (48.0 / rho).powf(0.25)
}

/// Iterate a window to a fixed point of centre and radius = R × scale.
fn settle(
    cloud: &MassCloud,
    c: Point4,
    r: f64,
    cap: f64,
    th: &Thresholds,
    skip: Option<&[bool]>,
) -> Window {
    let mut w = cloud.window(&c, r.min(cap), skip);
    for _ in 0..12 {
        if w.mass <= 0.0 {
            break;
        }
        let r_next = (th.window * w.scale).min(cap);
        let next = cloud.window(&w.centre, r_next, skip);
        let moved = (next.centre - w.centre).norm();
        let done = moved <= 1e-9 * r_next && (next.radius - w.radius).abs() <= 1e-6 * r_next;
        w = next;
        if done {
            break;
        }
    }
    w
}

/// Greedy peak windows of one cloud, each carrying at least ε.
fn peak_windows(cloud: &MassCloud, cap: f64, th: &Thresholds) -> Vec<Window> {
    let mut order: Vec<usize> = (0..cloud.points.len()).collect();
    order.sort_by(|&a, &b| {
        cloud.points[b]
            .density
            .total_cmp(&cloud.points[a].density)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; cloud.points.len()];
    let mut out = Vec::new();
    let mut attempts = 0;
    for i in order {
        if attempts >= th.max_peaks {
            break;
        }
        let p = cloud.points[i];
        if p.density <= 0.0 {
            break;
        }
        if claimed[i] {
            continue;
        }
        attempts += 1;
        let w = settle(
            cloud,
            p.x,
            th.window * peak_scale(p.density),
            cap,
            th,
            Some(&claimed),
        );
        let r = w.radius.max(1e-12);
        cloud.claim(&w.centre, r, &mut claimed);
        claimed[i] = true;
        if w.mass >= th.epsilon * UNIT_MASS {
            out.push(w);
        }
    }
    out
}

/// Follow a last-α window back through the earlier clouds. Where no peak
/// window lies within the window cap, one is settled around the later
/// centre instead.
fn track_back(
    clouds: &[MassCloud],
    per_alpha: &[Vec<Window>],
    last: &Window,
    th: &Thresholds,
) -> Vec<Window> {
    let n = per_alpha.len();
    let mut out = vec![*last; n];
    for a in (0..n - 1).rev() {
        let prev = out[a + 1];
        let cost = |w: &Window| {
            let d = (w.centre - prev.centre).norm() / w.scale.max(prev.scale);
            d + (w.scale / prev.scale).ln().abs()
        };
        out[a] = match per_alpha[a]
            .iter()
            .min_by(|x, y| cost(x).total_cmp(&cost(y)))
        {
            Some(w) if (w.centre - prev.centre).norm() <= PEAK_CAP => *w,
            _ => settle(
                &clouds[a],
                prev.centre,
                th.window * prev.scale,
                PEAK_CAP,
                th,
                None,
            ),
        };
    }
    out
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

/// Window around a set of member windows, widened to R × its own scale.
fn group_window(cloud: &MassCloud, members: &[Window], cap: f64, th: &Thresholds) -> Window {
    let m: f64 = members.iter().map(|w| w.mass).sum();
    let c = members
        .iter()
        .fold(Point4::zeros(), |acc, w| acc + w.centre * (w.mass / m));
    let r = members
        .iter()
        .map(|w| (w.centre - c).norm() + th.window * w.scale)
        .fold(0.0, f64::max)
        .min(cap);
    let w = cloud.window(&c, r, None);
    let r2 = r.max(th.window * w.scale).min(cap);
    if r2 > r {
        cloud.window(&w.centre, r2, None)
    } else {
        w
    }
}

/// Find the concentration points of a family given as one cloud per α,
/// ordered from the least to the most concentrated member.
pub fn detect_concentration(
    clouds: &[MassCloud],
    alphas: &[f64],
    th: &Thresholds,
) -> Result<ConcentrationReport> {
    th.check()?;
    if clouds.len() < 2 || clouds.len() != alphas.len() {
        return Err(Error::Config(format!(
            "need one cloud per α and at least two α values, got {} clouds for {} values",
            clouds.len(),
            alphas.len()
        )));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("α values must increase".into()));
    }
    let last = clouds.len() - 1;
    let per_alpha: Vec<Vec<Window>> =
        par::map_indexed(clouds.len(), |a| peak_windows(&clouds[a], PEAK_CAP, th));

    let tracks: Vec<Vec<Window>> = per_alpha[last]
        .iter()
        .map(|w| track_back(clouds, &per_alpha, w, th))
        .filter(|t| t[last].scale <= th.shrink * t[0].scale && t[last].scale <= th.max_scale)
        .collect();

    // Merge points that sit inside each other's window or converge along α.
    let mut parent: Vec<usize> = (0..tracks.len()).collect();
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            let (a, b) = (&tracks[i], &tracks[j]);
            let d_last = (a[last].centre - b[last].centre).norm();
            let d_first = (a[0].centre - b[0].centre).norm();
            let nested = d_last <= th.window * a[last].scale.max(b[last].scale);
            if nested || d_last <= th.shrink * d_first {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..tracks.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let members: Vec<Vec<usize>> = groups.into_values().collect();

    let centres: Vec<Point4> = members
        .iter()
        .map(|g| {
            let m: f64 = g.iter().map(|&i| tracks[i][last].mass).sum();
            g.iter().fold(Point4::zeros(), |acc, &i| {
                acc + tracks[i][last].centre * (tracks[i][last].mass / m)
            })
        })
        .collect();
    let mut d0 = f64::INFINITY;
    for i in 0..centres.len() {
        for j in i + 1..centres.len() {
            d0 = d0.min((centres[i] - centres[j]).norm());
        }
    }
    let r0 = 0.25 * d0.min(1.0);

    let windows_at = |a: usize, g: &[usize], cap: f64| {
        let ws: Vec<Window> = g.iter().map(|&i| tracks[i][a]).collect();
        group_window(&clouds[a], &ws, cap, th)
    };
    let mut candidates = Vec::with_capacity(members.len());
    let mut r0_stable = true;
    for g in &members {
        let ws: Vec<Window> = (0..clouds.len()).map(|a| windows_at(a, g, r0)).collect();
        let half = windows_at(last, g, 0.5 * r0);
        let w = ws[last];
        if (half.centre - w.centre).norm() > th.stability * w.scale
            || (half.scale / w.scale - 1.0).abs() > th.stability
        {
            r0_stable = false;
        }
        let charge = (w.mass / UNIT_MASS).round();
        if charge < 1.0 || (w.mass - charge * UNIT_MASS).abs() > th.accounting * UNIT_MASS {
            return Err(Error::Numerical(format!(
                "inconsistent family: a concentration point carries {:.6} × 8π²",
                w.mass / UNIT_MASS
            )));
        }
        candidates.push(Candidate {
            charge: charge as u32,
            track: Track::from_windows(&ws),
        });
    }
    candidates.sort_by(|a, b| {
        let (x, y) = (a.track.centres[last], b.track.centres[last]);
        x.iter()
            .zip(&y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut skip = vec![false; clouds[last].points.len()];
    for c in &candidates {
        clouds[last].claim(&c.track.centre(last), c.track.radii[last], &mut skip);
    }
    let residual: Vec<f64> = clouds[last]
        .points
        .iter()
        .zip(&skip)
        .filter(|(_, s)| !**s)
        .map(|(p, _)| p.mass())
        .collect();
    Ok(ConcentrationReport {
        alphas: alphas.to_vec(),
        candidates,
        r0,
        r0_stable,
        total_mass: clouds.iter().map(MassCloud::total).collect(),
        residual_mass: par::pairwise_sum(&residual),
    })
}

/// Energies on the neck Ω(x_α, N⁻¹√λ_α, N√λ_α) and ball defects
/// |E(B(x_α, N√λ_α)) − 8π²k| along α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckReport {
    pub alphas: Vec<f64>,
    pub neck: Vec<f64>,
    pub ball_defect: Vec<f64>,
    /// False when the scales do not shrink; the other fields are then empty.
    pub degenerating: bool,
}

impl NeckReport {
    pub fn is_decreasing(&self) -> bool {
        self.neck.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn neck_loss_check(
    clouds: &[MassCloud],
    alphas: &[f64],
    track: &Track,
    charge: u32,
    th: &Thresholds,
) -> NeckReport {
    let n = th.neck_n;
    let last = track.last();
    if clouds.len() != track.scales.len() || track.scales[last] > th.shrink * track.scales[0] {
        return NeckReport {
            alphas: alphas.to_vec(),
            neck: Vec::new(),
            ball_defect: Vec::new(),
            degenerating: false,
        };
    }
    let (neck, ball_defect) = clouds
        .iter()
        .enumerate()
        .map(|(a, cloud)| {
            let c = track.centre(a);
            let s = track.scales[a].sqrt();
            let (inner, outer) = (s / n, s * n);
            let (mut ring, mut ball) = (Vec::new(), Vec::new());
            for p in &cloud.points {
                let d = (p.x - c).norm();
                if d < outer {
                    ball.push(p.mass());
                    if d >= inner {
                        ring.push(p.mass());
                    }
                }
            }
            (
                par::pairwise_sum(&ring),
                (par::pairwise_sum(&ball) - charge as f64 * UNIT_MASS).abs(),
            )
        })
        .unzip();
    NeckReport {
        alphas: alphas.to_vec(),
        neck,
        ball_defect,
        degenerating: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limit {
    /// The root: the background connection on the base.
    Base,
    /// A flat bubble carrying only children.
    Theta,
    Bpst,
    /// Could not be classified; see the diagnostics.
    Open,
}

/// One vertex of an extracted tree. Attachment point and scale live in the
/// chart of the parent as produced by its centred blow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealVertex {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub limit: Limit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conn: Option<Assignment>,
    /// |Centre| and Scale of the subtree mass after the blow-up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centring: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Track>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neck: Option<NeckReport>,
}

/// A concentration point that could not be resolved further.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub vertex: String,
    pub x: [f64; 4],
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealConnection {
    pub k: u32,
    pub alphas: Vec<f64>,
    pub nodes: Vec<IdealVertex>,
    #[serde(default)]
    pub point_masses: Vec<PointMass>,
    pub thresholds: Thresholds,
    /// Whether every level passed the r₀ / (r₀/2) comparison.
    pub r0_stable: bool,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl IdealConnection {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ideal connections serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn node(&self, id: &str) -> Option<&IdealVertex> {
        self.nodes.iter().find(|v| v.id == id)
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .map(|v| depth_of(&v.id))
            .max()
            .unwrap_or(0)
    }

    pub fn total_charge(&self) -> u32 {
        self.nodes.iter().map(|v| v.k).sum::<u32>()
            + self
                .point_masses
                .iter()
                .map(|p| p.multiplicity)
                .sum::<u32>()
    }

    /// Invariant violations, empty when the tree is a valid bubble-tree ideal.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.total_charge() != self.k {
            out.push(format!(
                "charges sum to {} instead of {}",
                self.total_charge(),
                self.k
            ));
        }
        for v in &self.nodes {
            let children = self
                .nodes
                .iter()
                .filter(|c| c.parent.as_deref() == Some(v.id.as_str()))
                .count();
            if v.parent.is_some() {
                if children == 0 && v.k == 0 {
                    out.push(format!("terminal vertex {} has no charge", v.id));
                }
                if v.limit == Limit::Theta && children < 2 {
                    out.push(format!("flat vertex {} has {children} children", v.id));
                }
                if v.x.is_none_or(|x| !x.iter().all(|c| c.is_finite())) {
                    out.push(format!("vertex {} is attached at the south pole", v.id));
                }
            }
            if v.limit == Limit::Open {
                out.push(format!("vertex {} is open", v.id));
            }
        }
        out
    }

    /// The tree as splice input, with the fitted limits as vertex connections.
    pub fn to_gluing_tree(&self, n: f64) -> GluingTree {
        let nodes = self
            .nodes
            .iter()
            .map(|v| TreeNode {
                id: v.id.clone(),
                parent: v.parent.clone(),
                k: v.k,
                x: v.x,
                lambda: v.lambda,
                b: None,
                rho: None,
                v: None,
                conn: Some(v.conn.clone().unwrap_or(Assignment::Product)),
            })
            .collect();
        GluingTree {
            n,
            lambda0: None,
            b0: None,
            d0: None,
            nodes,
        }
    }

    /// Chart-to-base map of every vertex, composed from the blow-ups.
    pub fn base_maps(&self) -> Result<BTreeMap<String, ConformalMap>> {
        let mut out: BTreeMap<String, ConformalMap> = BTreeMap::new();
        let mut order: Vec<&IdealVertex> = self.nodes.iter().collect();
        order.sort_by_key(|v| depth_of(&v.id));
        for v in order {
            let map = match (&v.parent, v.x, v.lambda) {
                (None, _, _) => ConformalMap::identity(),
                (Some(p), Some(x), Some(l)) => {
                    let up = out
                        .get(p)
                        .ok_or_else(|| Error::Config(format!("unknown parent {p}")))?;
                    ConformalMap::new(l, Point4::from(x))?.inverse().then(up)
                }
                _ => return Err(Error::Config(format!("vertex {} lacks edge data", v.id))),
            };
            out.insert(v.id.clone(), map);
        }
        Ok(out)
    }

    /// The Uhlenbeck limit: the root connection and one point mass per
    /// root-level bubble, weighted by the charge of its subtree.
    pub fn uhlenbeck_projection(&self) -> (Option<Assignment>, Vec<PointMass>) {
        let root = self.nodes.iter().find(|v| v.parent.is_none());
        let subtree = |id: &str| -> u32 {
            self.nodes
                .iter()
                .filter(|v| is_descendant(&v.id, id))
                .map(|v| v.k)
                .sum::<u32>()
                + self
                    .point_masses
                    .iter()
                    .filter(|p| is_descendant(&p.vertex, id))
                    .map(|p| p.multiplicity)
                    .sum::<u32>()
        };
        let mut masses: Vec<PointMass> = self
            .nodes
            .iter()
            .filter(|v| v.parent.as_deref() == Some("0"))
            .map(|v| PointMass {
                vertex: "0".into(),
                x: v.x.unwrap_or_default(),
                multiplicity: subtree(&v.id),
            })
            .collect();
        masses.extend(
            self.point_masses
                .iter()
                .filter(|p| p.vertex == "0")
                .cloned(),
        );
        (root.and_then(|r| r.conn.clone()), masses)
    }

    pub fn signature(&self) -> String {
        let triples: Vec<(String, Option<String>, u32)> = self
            .nodes
            .iter()
            .map(|v| (v.id.clone(), v.parent.clone(), v.k))
            .collect();
        tree_signature(&triples)
    }
}

fn depth_of(id: &str) -> usize {
    if id == "0" {
        0
    } else {
        id.len()
    }
}

/// Whether `id` is `root` or lies below it (ids extend their parent's id).
fn is_descendant(id: &str, root: &str) -> bool {
    root == "0" || id.starts_with(root)
}

/// Canonical form of a rooted tree labelled by vertex charge, equal for two
/// trees exactly when they are isomorphic.
pub fn tree_signature(nodes: &[(String, Option<String>, u32)]) -> String {
    fn canon(id: &str, nodes: &[(String, Option<String>, u32)]) -> String {
        let k = nodes.iter().find(|n| n.0 == id).map_or(0, |n| n.2);
        let mut kids: Vec<String> = nodes
            .iter()
            .filter(|n| n.1.as_deref() == Some(id))
            .map(|n| canon(&n.0, nodes))
            .collect();
        kids.sort();
        format!("{k}({})", kids.join(","))
    }
    match nodes.iter().find(|n| n.1.is_none()) {
        Some(root) => canon(&root.0, nodes),
        None => String::new(),
    }
}

pub fn gluing_tree_signature(tree: &GluingTree) -> String {
    let triples: Vec<(String, Option<String>, u32)> = tree
        .nodes
        .iter()
        .map(|n| (n.id.clone(), n.parent.clone(), n.k))
        .collect();
    tree_signature(&triples)
}

struct Level<'a> {
    id: String,
    parent: Option<String>,
    depth: usize,
    k: u32,
    edge: Option<&'a Candidate>,
}

#[derive(Default)]
struct Partial {
    nodes: Vec<IdealVertex>,
    point_masses: Vec<PointMass>,
    diagnostics: Vec<String>,
    r0_stable: bool,
}

fn child_id(parent: &str, i: usize) -> String {
    if parent == "0" {
        format!("{}", i + 1)
    } else {
        format!("{parent}{}", i + 1)
    }
}

fn extract_level(
    clouds: &[MassCloud],
    alphas: &[f64],
    max_depth: usize,
    level: Level,
    th: &Thresholds,
) -> Result<Partial> {
    let report = detect_concentration(clouds, alphas, th)?;
    let last = clouds.len() - 1;
    let own = report.residual_mass / UNIT_MASS;
    let children_charge: u32 = report.candidates.iter().map(|c| c.charge).sum();
    let mut out = Partial {
        r0_stable: report.r0_stable,
        ..Partial::default()
    };
    if !report.r0_stable {
        out.diagnostics.push(format!(
            "vertex {}: windows differ between r₀ and r₀/2",
            level.id
        ));
    }
    let k_own = own.round().max(0.0) as u32;
    if k_own + children_charge != level.k {
        return Err(Error::Algorithm(format!(
            "vertex {}: residual {own:.4} and children {children_charge} do not add up to charge {}",
            level.id, level.k
        )));
    }

    let is_root = level.parent.is_none();
    let (limit, conn) = if own < th.flat_mass {
        if is_root {
            (Limit::Base, Some(Assignment::Product))
        } else if report.candidates.len() >= 2 {
            (Limit::Theta, Some(Assignment::Product))
        } else {
            out.diagnostics.push(format!(
                "vertex {}: flat with {} concentration point(s)",
                level.id,
                report.candidates.len()
            ));
            (Limit::Open, None)
        }
    } else {
        let mut skip = vec![false; clouds[last].points.len()];
        for c in &report.candidates {
            clouds[last].claim(&c.track.centre(last), c.track.radii[last], &mut skip);
        }
        let w = clouds[last].window(&Point4::zeros(), f64::INFINITY, Some(&skip));
        let fit_ok = k_own == 1 && (w.mass / UNIT_MASS - 1.0).abs() <= 0.05;
        if !fit_ok {
            out.diagnostics.push(format!(
                "vertex {}: residual mass {:.4} × 8π² is not one instanton",
                level.id,
                w.mass / UNIT_MASS
            ));
        }
        let flavor = if is_root {
            GaugeFlavor::Regular
        } else {
            GaugeFlavor::Singular
        };
        let conn =
            fit_ok.then(|| Assignment::Bpst(BpstParams::new(w.centre, w.scale / SQRT_2, flavor)));
        match (is_root, fit_ok) {
            (true, _) => (Limit::Base, conn),
            (false, true) => (Limit::Bpst, conn),
            (false, false) => (Limit::Open, None),
        }
    };

    let (x, lambda, centring) = match level.edge {
        None => (None, None, None),
        Some(c) => {
            let w = clouds[last].window(&Point4::zeros(), f64::INFINITY, None);
            (
                Some(c.track.centres[last]),
                Some(c.track.scales[last]),
                Some([w.centre.norm(), w.scale]),
            )
        }
    };
    out.nodes.push(IdealVertex {
        id: level.id.clone(),
        parent: level.parent.clone(),
        k: k_own,
        x,
        lambda,
        limit,
        conn,
        centring,
        track: level.edge.map(|c| c.track.clone()),
        neck: None,
    });

    if !report.candidates.is_empty() && level.depth + 1 > max_depth {
        return Err(Error::Algorithm(format!(
            "vertex {} would need depth {} beyond the cap {max_depth}",
            level.id,
            level.depth + 1
        )));
    }
    let subs = par::try_map_indexed(report.candidates.len(), |i| {
        let cand = &report.candidates[i];
        let id = child_id(&level.id, i);
        let neck = neck_loss_check(clouds, alphas, &cand.track, cand.charge, th);
        let child: Vec<MassCloud> = (0..clouds.len())
            .map(|a| {
                clouds[a].blow_up(
                    &cand.track.centre(a),
                    cand.track.scales[a],
                    cand.track.radii[a],
                )
            })
            .collect();
        if child.iter().any(|c| c.points.len() < th.min_points) {
            return Ok(Partial {
                point_masses: vec![PointMass {
                    vertex: level.id.clone(),
                    x: cand.track.centres[last],
                    multiplicity: cand.charge,
                }],
                diagnostics: vec![format!(
                    "point at {:?} kept as a point mass",
                    cand.track.centres[last]
                )],
                r0_stable: true,
                ..Partial::default()
            });
        }
        let mut sub = extract_level(
            &child,
            alphas,
            max_depth,
            Level {
                id,
                parent: Some(level.id.clone()),
                depth: level.depth + 1,
                k: cand.charge,
                edge: Some(cand),
            },
            th,
        )?;
        sub.nodes[0].neck = Some(neck);
        Ok(sub)
    })?;
    for s in subs {
        out.nodes.extend(s.nodes);
        out.point_masses.extend(s.point_masses);
        out.diagnostics.extend(s.diagnostics);
        out.r0_stable &= s.r0_stable;
    }
    Ok(out)
}

/// Extract the bubble tree of a family of total charge k, given as one mass
/// cloud per α on the base.
pub fn extract_bubble_tree(
    clouds: &[MassCloud],
    alphas: &[f64],
    k: u32,
    th: &Thresholds,
) -> Result<IdealConnection> {
    th.check()?;
    let last = clouds
        .last()
        .ok_or_else(|| Error::Config("empty family".into()))?;
    let total = last.total() / UNIT_MASS;
    if (total - k as f64).abs() > th.accounting.max(0.01) * (k.max(1) as f64) {
        return Err(Error::Numerical(format!(
            "inconsistent family: last member carries {total:.6} × 8π², expected {k}"
        )));
    }
    let p = extract_level(
        clouds,
        alphas,
        th.max_depth.unwrap_or(k as usize),
        Level {
            id: "0".into(),
            parent: None,
            depth: 0,
            k,
            edge: None,
        },
        th,
    )?;
    let mut nodes = p.nodes;
    nodes.sort_by(|a, b| depth_of(&a.id).cmp(&depth_of(&b.id)).then(a.id.cmp(&b.id)));
    let ideal = IdealConnection {
        k,
        alphas: alphas.to_vec(),
        nodes,
        point_masses: p.point_masses,
        thresholds: th.clone(),
        r0_stable: p.r0_stable,
        diagnostics: p.diagnostics,
    };
    if ideal.total_charge() != k {
        return Err(Error::Algorithm(format!(
            "extracted charges sum to {} instead of {k}",
            ideal.total_charge()
        )));
    }
    Ok(ideal)
}

/// A degenerating family of splices: every non-root scale follows
/// λ(α) = λ_template · 2^{−rate·α}, and b = c N √λ when a cutoff factor c
/// is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub template: GluingTree,
    pub alphas: Vec<f64>,
    /// Per-vertex rates; unlisted vertices use 1.
    #[serde(default)]
    pub rates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TreeGridOptions>,
}

impl FamilySpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family specs serialize")
    }

    pub fn charge(&self) -> u32 {
        self.template.nodes.iter().map(|n| n.k).sum()
    }

    pub fn tree_at(&self, alpha: f64) -> GluingTree {
        let mut t = self.template.clone();
        let n = t.n;
        for node in t.nodes.iter_mut().filter(|v| v.parent.is_some()) {
            let rate = self.rates.get(&node.id).copied().unwrap_or(1.0);
            if let Some(l) = node.lambda.as_mut() {
                *l *= (-rate * alpha).exp2();
                if let Some(c) = self.cutoff_factor {
                    node.b = Some(c * n * l.sqrt());
                }
            }
        }
        t
    }

    /// One base mass cloud per α, each from the splice of that member.
    pub fn clouds(&self) -> Result<Vec<MassCloud>> {
        let opts = self.grid.unwrap_or_else(TreeGridOptions::coarse);
        par::try_map_indexed(self.alphas.len(), |a| {
            let s = splice(&self.tree_at(self.alphas[a]))?;
            let g = TreeGrid::build(&s.tree, &opts)?;
            MassCloud::from_splice(&s, &g)
        })
    }
}

/// Extraction families shipped with the crate, by name.
pub fn bundled_families() -> Vec<(&'static str, FamilySpec)> {
    const SOURCES: [(&str, &str); 6] = [
        (
            "one_bubble",
            include_str!("../configs/families/one_bubble.json"),
        ),
        (
            "bubble_on_instanton",
            include_str!("../configs/families/bubble_on_instanton.json"),
        ),
        (
            "two_bubbles",
            include_str!("../configs/families/two_bubbles.json"),
        ),
        (
            "theta_parent",
            include_str!("../configs/families/theta_parent.json"),
        ),
        (
            "bubble_on_bubble",
            include_str!("../configs/families/bubble_on_bubble.json"),
        ),
        ("chain3", include_str!("../configs/families/chain3.json")),
    ];
    SOURCES
        .iter()
        .map(|(name, src)| {
            (
                *name,
                FamilySpec::from_json(src).expect("bundled families parse"),
            )
        })
        .collect()
}

/// Per-vertex comparison of an extraction with the tree it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexError {
    pub truth: String,
    pub extracted: String,
    /// Base distance of the attachment points over √λ in the parent chart.
    pub centre: f64,
    /// |λ_extracted / λ_true − 1| with both scales read on the base.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub isomorphic: bool,
    pub vertices: Vec<VertexError>,
}

impl RoundTrip {
    pub fn max_centre(&self) -> f64 {
        self.vertices.iter().map(|v| v.centre).fold(0.0, f64::max)
    }

    pub fn max_scale(&self) -> f64 {
        self.vertices.iter().map(|v| v.scale).fold(0.0, f64::max)
    }
}

/// Compare an extraction with the tree it was extracted from. Children are
/// matched to the nearest unmatched truth vertex on the base.
pub fn compare_with_tree(ideal: &IdealConnection, truth: &GluingTree) -> Result<RoundTrip> {
    let isomorphic = ideal.signature() == gluing_tree_signature(truth);
    let resolved = truth.resolve()?;
    let mut truth_maps: Vec<ConformalMap> = Vec::with_capacity(resolved.nodes.len());
    for v in &resolved.nodes {
        truth_maps.push(match v.parent {
            None => ConformalMap::identity(),
            Some(p) => ConformalMap::new(v.lambda, v.site)?
                .with_rotation(v.frame)?
                .inverse()
                .then(&truth_maps[p]),
        });
    }
    let maps = ideal.base_maps()?;
    let mut vertices = Vec::new();
    let mut pairs: Vec<(String, usize)> = vec![("0".into(), 0)];
    while let Some((eid, tj)) = pairs.pop() {
        let mut free: Vec<usize> = resolved.nodes[tj].children.clone();
        let up = &maps[&eid];
        for c in ideal
            .nodes
            .iter()
            .filter(|v| v.parent.as_deref() == Some(eid.as_str()))
        {
            let (Some(x), Some(l)) = (c.x, c.lambda) else {
                continue;
            };
            let pos = up.apply(&Point4::from(x));
            let scale = l * up.stretch();
            let Some((slot, &t)) = free.iter().enumerate().min_by(|a, b| {
                let da = (truth_maps[tj].apply(&resolved.nodes[*a.1].site) - pos).norm();
                let db = (truth_maps[tj].apply(&resolved.nodes[*b.1].site) - pos).norm();
                da.total_cmp(&db)
            }) else {
                continue;
            };
            free.remove(slot);
            let tn = &resolved.nodes[t];
            let unit = truth_maps[tj].stretch();
            let tpos = truth_maps[tj].apply(&tn.site);
            vertices.push(VertexError {
                truth: tn.id.clone(),
                extracted: c.id.clone(),
                centre: (pos - tpos).norm() / (unit * tn.lambda.sqrt()),
                scale: (scale / (tn.lambda * unit) - 1.0).abs(),
            });
            pairs.push((c.id.clone(), t));
        }
    }
    vertices.sort_by(|a, b| a.extracted.cmp(&b.extracted));
    Ok(RoundTrip {
        isomorphic,
        vertices,
    })
}
