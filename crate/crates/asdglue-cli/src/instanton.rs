//! `asdglue instanton`: energy, moments, tails and ASD residual of one
//! connection on a radial grid.

use asdglue::bubbletree::UNIT_MASS;
use asdglue::gauge::{selfdual_part, two_form_norm_sq};
use asdglue::geometry::{build_grid, GridSpec, Integrator};
use asdglue::instanton::{bpst, product_connection, BpstParams};
use asdglue::moments::{centre_scale, MomentFlag};
use asdglue::splice::Assignment;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::output::{failures, Check, OutDir};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstantonConfig {
    #[serde(default = "unit_bpst")]
    pub connection: Assignment,
    /// Multiples of the scale at which the tail mass is reported.
    #[serde(default = "default_radii")]
    pub tail_radii: Vec<f64>,
    #[serde(default = "default_charge_tol")]
    pub charge_tolerance: f64,
    #[serde(default = "default_asd_tol")]
    pub asd_tolerance: f64,
}

impl Default for InstantonConfig {
    fn default() -> Self {
        Self {
            connection: unit_bpst(),
            tail_radii: default_radii(),
            charge_tolerance: default_charge_tol(),
            asd_tolerance: default_asd_tol(),
        }
    }
}

fn unit_bpst() -> Assignment {
    Assignment::Bpst(BpstParams::unit())
}

fn default_radii() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

fn default_charge_tol() -> f64 {
    5e-3
}

fn default_asd_tol() -> f64 {
    1e-6
}

#[derive(Debug, Serialize)]
pub struct TailRow {
    pub r: f64,
    pub tail: f64,
    pub bound: f64,
}

#[derive(Debug, Serialize)]
pub struct InstantonReport {
    pub connection: Assignment,
    pub grid: GridSpec,
    pub energy: f64,
    pub charge_raw: f64,
    pub charge: i64,
    pub centre: [f64; 4],
    pub scale: f64,
    pub tails: Vec<TailRow>,
    /// ‖F⁺‖_{L²} / ‖F‖_{L²}, zero for a flat connection.
    pub asd_residual: f64,
    pub flags: Vec<MomentFlag>,
    pub checks: Vec<Check>,
}

pub fn run(cfg: &InstantonConfig, grid: Option<GridSpec>, out: &OutDir) -> CliResult<Vec<String>> {
    let spec = grid.unwrap_or_else(GridSpec::default_full);
    let g = build_grid(&spec)?;
    let a = match &cfg.connection {
        Assignment::Product => product_connection(),
        Assignment::Bpst(p) => bpst(p)?,
    };
    let moments = centre_scale(&a, &g)?.with_tails(&a, &g, &cfg.tail_radii)?;
    let id = Matrix4::identity();
    let [plus, full] = g.integrate_array(|x| {
        let f = a.curvature(x)?;
        let c = selfdual_part(&f, &id)?;
        Ok([
            c.iter().map(|v| v.norm_squared()).sum(),
            two_form_norm_sq(&f),
        ])
    })?;
    let asd_residual = if full > 0.0 {
        (plus / full).sqrt()
    } else {
        0.0
    };

    let k = moments.charge.max(0) as f64;
    let tails: Vec<TailRow> = moments
        .tails
        .iter()
        .map(|&(r, tail)| TailRow {
            r,
            tail,
            bound: UNIT_MASS * k / (r * r) + 0.01 * UNIT_MASS * k,
        })
        .collect();

    let nearest = moments.charge_raw.round();
    let mut checks = vec![
        Check::at_most(
            "charge_integral",
            (moments.charge_raw - nearest).abs() / nearest.max(1.0),
            cfg.charge_tolerance,
        ),
        Check::at_most("asd_residual", asd_residual, cfg.asd_tolerance),
    ];
    for t in &tails {
        checks.push(Check::at_most(
            &format!("tchebychev_r{}", t.r),
            t.tail,
            t.bound,
        ));
    }

    let report = InstantonReport {
        connection: cfg.connection.clone(),
        grid: spec,
        energy: moments.total_mass,
        charge_raw: moments.charge_raw,
        charge: moments.charge,
        centre: moments.centre,
        scale: moments.scale,
        tails,
        asd_residual,
        flags: moments.flags.clone(),
        checks,
    };
    out.json("instanton.json", &report)?;
    Ok(failures(&report.checks))
}
