//! `asdglue scan`: derivative norms and self-dual errors across a λ grid,
//! with log-log exponent fits.

use std::collections::BTreeSet;

use asdglue::diffmetric::{
    at_scale, differential_table, exponent_fit, ParamDirection, ScalingFit, TableRow,
};
use asdglue::par;
use asdglue::splice::{bundled, selfdual_error, splice, GluingTree, TreeGrid, TreeGridOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{failures, Check, OutDir};

/// A bundled tree by name, or an inline one.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TreeSource {
    Bundled(String),
    Inline(GluingTree),
}

impl TreeSource {
    pub fn resolve(&self) -> CliResult<GluingTree> {
        match self {
            TreeSource::Inline(t) => Ok(t.clone()),
            TreeSource::Bundled(name) => bundled()
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| CliError::Config(format!("no bundled tree named {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct NamedDirection {
    /// Series name; defaults to the direction's label.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub direction: ParamDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    X,
    Base,
}

/// A tolerance on one fitted series.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub series: String,
    #[serde(default)]
    pub norm: Norm,
    /// Expected exponent, checked to within `tol`.
    #[serde(default)]
    pub slope: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Bound on max/min of the raw values.
    #[serde(default)]
    pub max_spread: Option<f64>,
    /// Bound on max/min of value/λ^slope (needs `slope`).
    #[serde(default)]
    pub max_scaled_spread: Option<f64>,
}

fn default_tol() -> f64 {
    0.15
}

fn default_h() -> f64 {
    1e-3
}

fn default_vertex() -> String {
    "1".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub template: TreeSource,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub directions: Vec<NamedDirection>,
    /// Relative finite-difference step.
    #[serde(default = "default_h")]
    pub h: f64,
    /// L^p exponents for the self-dual error series.
    #[serde(default)]
    pub p_list: Vec<f64>,
    /// Vertex whose scale the self-dual series varies.
    #[serde(default = "default_vertex")]
    pub vertex: String,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Serialize)]
struct SelfdualRow {
    p: f64,
    vertex: String,
    lambda: f64,
    value: f64,
}

#[derive(Debug, Serialize)]
pub struct SeriesFit {
    pub series: String,
    pub norm: Norm,
    pub values: Vec<(f64, f64)>,
    /// Absent when a value is not positive (e.g. an identically zero norm).
    pub fit: Option<ScalingFit>,
}

#[derive(Debug, Serialize)]
pub struct ScanReport {
    pub lambdas: Vec<f64>,
    pub fits: Vec<SeriesFit>,
    pub checks: Vec<Check>,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn series_fit(series: &str, norm: Norm, values: Vec<(f64, f64)>) -> CliResult<SeriesFit> {
    let fit = match exponent_fit(&values) {
        Ok(f) => Some(f),
        Err(asdglue::Error::Domain(_)) if values.iter().any(|&(_, v)| v <= 0.0) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(SeriesFit {
        series: series.into(),
        norm,
        values,
        fit,
    })
}

fn judge(e: &Expectation, fits: &[SeriesFit]) -> CliResult<Vec<Check>> {
    let s = fits
        .iter()
        .find(|f| f.series == e.series && f.norm == e.norm)
        .ok_or_else(|| {
            CliError::Config(format!("expectation names unknown series {:?}", e.series))
        })?;
    let label = |what: &str| {
        format!(
            "{}_{}_{what}",
            e.series,
            if e.norm == Norm::X { "x" } else { "base" }
        )
    };
    let mut checks = Vec::new();
    if let Some(want) = e.slope {
        let got = s.fit.as_ref().map_or(f64::NAN, |f| f.slope);
        checks.push(
            Check::at_most(&label("slope"), (got - want).abs(), e.tol)
                .with_detail(format!("slope {got}, expected {want}")),
        );
    }
    if let Some(bound) = e.max_spread {
        let (lo, hi) = min_max(s.values.iter().map(|v| v.1));
        checks.push(Check::at_most(&label("spread"), hi / lo, bound));
    }
    if let Some(bound) = e.max_scaled_spread {
        let slope = e.slope.ok_or_else(|| {
            CliError::Config(format!("{}: max_scaled_spread needs slope", e.series))
        })?;
        let (lo, hi) = min_max(s.values.iter().map(|&(l, v)| v / l.powf(slope)));
        checks.push(Check::at_most(&label("scaled_spread"), hi / lo, bound));
    }
    Ok(checks)
}

pub fn run(
    cfg: &ScanConfig,
    grid: Option<TreeGridOptions>,
    out: &OutDir,
) -> CliResult<Vec<String>> {
    if cfg.lambdas.len() < 3 {
        return Err(
            asdglue::Error::Config(format!("need ≥ 3 samples, got {}", cfg.lambdas.len())).into(),
        );
    }
    let template = cfg.template.resolve()?;
    let opts = grid.unwrap_or_default();

    let names: Vec<String> = cfg
        .directions
        .iter()
        .map(|d| {
            d.name
                .clone()
                .unwrap_or_else(|| d.direction.label().to_string())
        })
        .collect();
    let mut seen = BTreeSet::new();
    for n in names.iter().chain(
        cfg.p_list
            .iter()
            .map(|p| format!("selfdual_p{p}"))
            .collect::<Vec<_>>()
            .iter(),
    ) {
        if !seen.insert(n.clone()) {
            return Err(CliError::Config(format!(
                "duplicate series {n:?}; give directions distinct names"
            )));
        }
    }

    let dirs: Vec<ParamDirection> = cfg.directions.iter().map(|d| d.direction.clone()).collect();
    let rows: Vec<TableRow> = differential_table(&template, &cfg.lambdas, &dirs, cfg.h, &opts)?;

    let cells: Vec<(f64, f64)> = cfg
        .p_list
        .iter()
        .flat_map(|&p| cfg.lambdas.iter().map(move |&l| (p, l)))
        .collect();
    let sd_values = par::try_map_indexed(cells.len(), |c| {
        let (p, l) = cells[c];
        let s = splice(&at_scale(&template, &cfg.vertex, l)?)?;
        let g = TreeGrid::build(&s.tree, &opts)?;
        selfdual_error(&s, &g, p)
    })?;
    let sd_rows: Vec<SelfdualRow> = cells
        .iter()
        .zip(&sd_values)
        .map(|(&(p, lambda), &value)| SelfdualRow {
            p,
            vertex: cfg.vertex.clone(),
            lambda,
            value,
        })
        .collect();

    let n = cfg.lambdas.len();
    let mut fits = Vec::new();
    for (d, name) in names.iter().enumerate() {
        let chunk = &rows[d * n..(d + 1) * n];
        fits.push(series_fit(
            name,
            Norm::X,
            chunk.iter().map(|r| (r.lambda, r.norm_x)).collect(),
        )?);
        fits.push(series_fit(
            name,
            Norm::Base,
            chunk.iter().map(|r| (r.lambda, r.norm_base)).collect(),
        )?);
    }
    for (i, p) in cfg.p_list.iter().enumerate() {
        let chunk = &sd_rows[i * n..(i + 1) * n];
        fits.push(series_fit(
            &format!("selfdual_p{p}"),
            Norm::X,
            chunk.iter().map(|r| (r.lambda, r.value)).collect(),
        )?);
    }

    let mut checks = Vec::new();
    for e in &cfg.expect {
        checks.extend(judge(e, &fits)?);
    }

    out.csv(
        "table.csv",
        &["direction", "vertex", "lambda", "norm_X", "norm_base"],
        &rows,
    )?;
    out.csv(
        "selfdual.csv",
        &["p", "vertex", "lambda", "value"],
        &sd_rows,
    )?;
    let report = ScanReport {
        lambdas: cfg.lambdas.clone(),
        fits,
        checks,
    };
    out.json("fits.json", &report)?;
    Ok(failures(&report.checks))
}
