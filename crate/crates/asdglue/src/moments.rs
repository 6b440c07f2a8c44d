//! Mass centre, scale and tail mass of curvature densities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{pullback_connection, ConnectionField};
use crate::geometry::{
    build_grid, ConformalMap, GridSpec, Integrator, Point4, QuadratureGrid, Region,
};

/// One instanton's worth of energy, 8π².
pub const UNIT_MASS: f64 = 8.0 * PI * PI;
/// Below this total mass a density is treated as the flat connection.
pub const FLAT_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentFlag {
    /// Mass below [`FLAT_MASS`]; centre and scale set to zero by convention.
    Flat,
    /// total_mass/8π² is more than 0.05 from the nearest integer.
    NonIntegerCharge,
    /// The second moment came out negative (possible with a subtracted
    /// background) and the scale was clamped to zero.
    NegativeSpread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub total_mass: f64,
    pub charge_raw: f64,
    pub charge: i64,
    pub centre: [f64; 4],
    pub scale: f64,
    /// (R, ∫_{|x−centre| ≥ R·scale} density)
    pub tails: Vec<(f64, f64)>,
    pub flags: Vec<MomentFlag>,
}

impl MomentReport {
    pub fn centre_point(&self) -> Point4 {
        Point4::from(self.centre)
    }

    pub fn is_flat(&self) -> bool {
        self.flags.contains(&MomentFlag::Flat)
    }

    fn flat(total_mass: f64) -> Self {
        Self {
            total_mass,
            charge_raw: total_mass / UNIT_MASS,
            charge: 0,
            centre: [0.0; 4],
            scale: 0.0,
            tails: Vec::new(),
            flags: vec![MomentFlag::Flat],
        }
    }

    /// Normaliser for the moments: 8π²k, or the raw mass when k rounds to 0.
    pub fn normaliser(&self) -> f64 {
        if self.charge > 0 {
            UNIT_MASS * self.charge as f64
        } else {
            self.total_mass
        }
    }

    /// Fill the tail table at the given multiples of the scale.
    pub fn with_tails(
        mut self,
        a: &ConnectionField,
        grid: &QuadratureGrid,
        radii: &[f64],
    ) -> Result<Self> {
        self.tails = radii
            .iter()
            .map(|&r| Ok((r, tchebychev_tail(a, r, &self, grid)?)))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

/// Builds a report from the raw integrals ∫ρ, ∫yρ, ∫|y|²ρ taken about `origin`.
fn assemble(origin: &Point4, sums: &[f64; 6]) -> MomentReport {
    let mass = sums[0];
    if mass.abs() < FLAT_MASS {
        return MomentReport::flat(mass);
    }
    let raw = mass / UNIT_MASS;
    let k = raw.round() as i64;
    let mut report = MomentReport::flat(mass);
    report.flags.clear();
    report.charge = k.max(0);
    if (raw - k as f64).abs() > 0.05 {
        report.flags.push(MomentFlag::NonIntegerCharge);
    }
    let norm = report.normaliser();
    let first = Point4::new(sums[1], sums[2], sums[3], sums[4]) / norm;
    // ∫|y − m|²ρ with m = first, expanded about the grid origin.
    let second = sums[5] / norm - 2.0 * first.norm_squared() + first.norm_squared() * mass / norm;
    let centre = origin + first;
    report.centre = [centre[0], centre[1], centre[2], centre[3]];
    if second < 0.0 {
        report.flags.push(MomentFlag::NegativeSpread);
        report.scale = 0.0;
    } else {
        report.scale = second.sqrt();
    }
    report
}

fn moment_sums<G: Integrator, D>(grid: &G, density: D) -> Result<(Point4, [f64; 6])>
where
    D: Fn(&Point4) -> Result<f64> + Sync + Send,
{
    let origin = grid.centre();
    let sums = grid.integrate_array(|x| {
        let rho = density(x)?;
        let y = x - origin;
        Ok([
            rho,
            y[0] * rho,
            y[1] * rho,
            y[2] * rho,
            y[3] * rho,
            y.norm_squared() * rho,
        ])
    })?;
    Ok((origin, sums))
}

/// Centre and scale of |F_A|² on the flat chart. The tail table is left
/// empty; see [`MomentReport::with_tails`].
pub fn centre_scale<G: Integrator>(a: &ConnectionField, grid: &G) -> Result<MomentReport> {
    let (origin, sums) = moment_sums(grid, |x| a.energy_density(x))?;
    Ok(assemble(&origin, &sums))
}

/// Moments of the background-subtracted density |F_A|² − |F_{A₀}|² over the
/// ball B(x_i, r0). `grid` must be centred at `x_i` and reach radius r0.
pub fn centre_scale_ball(
    a: &ConnectionField,
    background: &ConnectionField,
    x_i: &Point4,
    r0: f64,
    grid: &QuadratureGrid,
) -> Result<MomentReport> {
    if !(r0 > 0.0) {
        return Err(Error::Config(format!(
            "ball radius must be positive, got {r0}"
        )));
    }
    if (grid.centre() - x_i).norm() > 1e-12 * (1.0 + x_i.norm()) {
        return Err(Error::Precondition(
            "ball grid is not centred at the ball centre".into(),
        ));
    }
    if grid.spec.region != Region::Full && grid.spec.r_max < r0 * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "grid radius {} does not cover the ball radius {r0}",
            grid.spec.r_max
        )));
    }
    let (origin, sums) = moment_sums(grid, |x| {
        if (x - x_i).norm() > r0 {
            return Ok(0.0);
        }
        Ok(a.energy_density(x)? - background.energy_density(x)?)
    })?;
    if sums[0] < -1e-3 * UNIT_MASS {
        return Err(Error::Precondition(format!(
            "background carries more energy than the field on the ball (net {:e})",
            sums[0]
        )));
    }
    Ok(assemble(&origin, &sums))
}

/// ∫_{|x−q| ≥ R·scale} |F_A|², with q and scale from `report`. The radial rule
/// is rebuilt about q with a panel break at R·scale so the cut is exact.
pub fn tchebychev_tail(
    a: &ConnectionField,
    r: f64,
    report: &MomentReport,
    grid: &QuadratureGrid,
) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::Config(format!(
            "tail radius multiple must be >= 1, got {r}"
        )));
    }
    if report.is_flat() || report.scale == 0.0 {
        return Ok(0.0);
    }
    let q = report.centre_point();
    let cut = r * report.scale;
    let spec = &grid.spec;
    let bounded = spec.region != Region::Full;
    let outer_centre = grid.centre();
    let reach = (outer_centre - q).norm() + spec.r_max;
    if bounded && cut >= reach {
        return Ok(0.0);
    }
    let mut tail_spec = GridSpec::new(
        if bounded {
            Region::Annulus
        } else {
            Region::Full
        },
        cut,
        if bounded {
            reach
        } else {
            spec.r_max.max(4.0 * cut)
        },
    )
    .with_orders(spec.panels, spec.gauss_order, spec.s3_order)
    .centred_at(&q);
    if !bounded {
        tail_spec.r_min = cut;
    }
    let tail_grid = build_grid(&tail_spec)?;
    tail_grid.integrate(|x| {
        if (x - q).norm() < cut {
            return Ok(0.0);
        }
        if bounded && (x - outer_centre).norm() > spec.r_max {
            return Ok(0.0);
        }
        a.energy_density(x)
    })
}

/// ∫_{|x−q| ≥ R·scale} |F_A|² on an arbitrary rule, by masking. Less exact
/// than [`tchebychev_tail`] when the cut crosses a panel, but works on any
/// [`Integrator`] (e.g. the connected-sum rule read on the base).
pub fn tail_mass<G: Integrator>(
    a: &ConnectionField,
    r: f64,
    report: &MomentReport,
    grid: &G,
) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::Config(format!(
            "tail radius multiple must be >= 1, got {r}"
        )));
    }
    if report.is_flat() || report.scale == 0.0 {
        return Ok(0.0);
    }
    let q = report.centre_point();
    let cut = r * report.scale;
    grid.integrate(|x| {
        if (x - q).norm() < cut {
            Ok(0.0)
        } else {
            a.energy_density(x)
        }
    })
}

/// Pull `a` back by f_{s,q}⁻¹ so the result has centre 0 and scale 1. Returns
/// the pulled-back field and f_{s,q}: x ↦ (x − q)/s.
pub fn centre_normalize(
    a: &ConnectionField,
    report: &MomentReport,
) -> Result<(ConnectionField, ConformalMap)> {
    if report.is_flat() || !(report.scale > 0.0) {
        return Err(Error::Precondition(
            "cannot normalise a connection with zero scale".into(),
        ));
    }
    let f = ConformalMap::new(report.scale, report.centre_point())?;
    Ok((pullback_connection(&f.inverse(), a), f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instanton::{bpst, product_connection, BpstParams};

    #[test]
    fn flat_connection_uses_theta_convention() {
        let g = build_grid(&GridSpec::default_full().with_orders(4, 4, 3)).unwrap();
        let r = centre_scale(&product_connection(), &g).unwrap();
        assert!(r.is_flat());
        assert_eq!(r.scale, 0.0);
        assert_eq!(r.centre, [0.0; 4]);
    }

    #[test]
    fn assemble_two_point_masses() {
        // Half a unit of mass at ±e₀ each: centre 0, scale 1.
        let sums = [UNIT_MASS, 0.0, 0.0, 0.0, 0.0, UNIT_MASS];
        let r = assemble(&Point4::zeros(), &sums);
        assert_eq!(r.charge, 1);
        assert!((r.scale - 1.0).abs() < 1e-15);
        let shifted = assemble(
            &Point4::new(1.0, 0.0, 0.0, 0.0),
            &[UNIT_MASS, -UNIT_MASS, 0.0, 0.0, 0.0, 2.0 * UNIT_MASS],
        );
        assert!(shifted.centre_point().norm() < 1e-15);
        assert!((shifted.scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalising_zero_scale_fails() {
        let r = MomentReport::flat(0.0);
        assert!(centre_normalize(&bpst(&BpstParams::unit()).unwrap(), &r).is_err());
    }
}
