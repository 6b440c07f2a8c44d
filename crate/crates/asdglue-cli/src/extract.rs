//! `asdglue extract`: splice a degenerating family, extract its bubble tree
//! and compare with the tree it came from.

use asdglue::bubbletree::{
    bundled_families, compare_with_tree, extract_bubble_tree, gluing_tree_signature, FamilySpec,
    RoundTrip, Thresholds,
};
use asdglue::splice::TreeGridOptions;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{failures, Check, OutDir};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FamilySource {
    Bundled(String),
    Inline(Box<FamilySpec>),
}

impl FamilySource {
    pub fn resolve(&self) -> CliResult<FamilySpec> {
        match self {
            FamilySource::Inline(f) => Ok((**f).clone()),
            FamilySource::Bundled(name) => bundled_families()
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, f)| f)
                .ok_or_else(|| CliError::Config(format!("no bundled family named {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RoundTripTolerance {
    /// Centre error in units of √λ.
    pub centre: f64,
    /// Relative scale error.
    pub scale: f64,
}

impl Default for RoundTripTolerance {
    fn default() -> Self {
        Self {
            centre: 0.05,
            scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub family: FamilySource,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Total charge; defaults to the template's.
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub tolerance: RoundTripTolerance,
}

#[derive(Debug, Serialize)]
struct NeckRow {
    vertex: String,
    alpha: f64,
    neck: f64,
    ball_defect: f64,
}

#[derive(Debug, Serialize)]
pub struct RoundTripReport {
    pub extracted: String,
    pub truth: String,
    pub charge: u32,
    pub depth: usize,
    pub comparison: RoundTrip,
    pub violations: Vec<String>,
    pub checks: Vec<Check>,
}

pub fn run(
    cfg: &ExtractConfig,
    grid: Option<TreeGridOptions>,
    out: &OutDir,
) -> CliResult<Vec<String>> {
    let mut family = cfg.family.resolve()?;
    if grid.is_some() {
        family.grid = grid;
    }
    let k = cfg.k.unwrap_or_else(|| family.charge());
    let clouds = family.clouds()?;
    let ideal = extract_bubble_tree(&clouds, &family.alphas, k, &cfg.thresholds)?;
    out.json("ideal.json", &ideal)?;

    let necks: Vec<NeckRow> = ideal
        .nodes
        .iter()
        .filter_map(|v| v.neck.as_ref().map(|n| (v, n)))
        .flat_map(|(v, n)| {
            n.alphas.iter().enumerate().map(move |(i, &alpha)| NeckRow {
                vertex: v.id.clone(),
                alpha,
                neck: n.neck[i],
                ball_defect: n.ball_defect[i],
            })
        })
        .collect();
    out.csv(
        "necks.csv",
        &["vertex", "alpha", "neck", "ball_defect"],
        &necks,
    )?;

    let (first, last) = match (family.alphas.first(), family.alphas.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(CliError::Config("family has no α values".into())),
    };
    // A constant family has nothing to compare against: its limit is itself.
    if family.tree_at(first) == family.tree_at(last) {
        return Ok(Vec::new());
    }
    let truth = family.tree_at(last);
    let comparison = compare_with_tree(&ideal, &truth)?;
    let violations = ideal.violations();
    let tol = cfg.tolerance;
    let flag = |name: &str, ok: bool| Check::at_most(name, if ok { 0.0 } else { 1.0 }, 0.0);
    let checks = vec![
        flag("isomorphic", comparison.isomorphic),
        flag("charge_conserved", ideal.total_charge() == family.charge()),
        Check::at_most("depth", ideal.depth() as f64, k as f64),
        Check::at_most("centre_error", comparison.max_centre(), tol.centre),
        Check::at_most("scale_error", comparison.max_scale(), tol.scale),
        flag(
            "necks_decreasing",
            ideal
                .nodes
                .iter()
                .filter_map(|v| v.neck.as_ref())
                .all(|n| n.is_decreasing()),
        ),
        Check::at_most("violations", violations.len() as f64, 0.0),
    ];
    let report = RoundTripReport {
        extracted: ideal.signature(),
        truth: gluing_tree_signature(&truth),
        charge: ideal.total_charge(),
        depth: ideal.depth(),
        comparison,
        violations,
        checks,
    };
    out.json("roundtrip.json", &report)?;
    Ok(failures(&report.checks))
}
