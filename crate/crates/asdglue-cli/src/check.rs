//! `asdglue check`: a seeded invariant suite over every module.
//!
//! Every check is deterministic given the seed: random inputs come from a
//! ChaCha stream drawn in a fixed order, and the library's reductions do not
//! depend on the thread count.

use std::f64::consts::SQRT_2;

use asdglue::bubbletree::{bundled_families, moduli_dimension, FamilySpec, UNIT_MASS};
use asdglue::diffmetric::exponent_fit;
use asdglue::gauge::{
    bracket, contract, gauge_transform, lie_derivative_radial, one_form_norm_sq,
    pullback_connection, radial_gauge, selfdual_embed, selfdual_part, two_form_norm_sq, Alg,
    GaugeTransform, TwoForm,
};
use asdglue::geometry::{build_grid, ConformalMap, GridSpec, Integrator, Point4, Region};
use asdglue::instanton::{bpst, BpstParams, GaugeFlavor};
use asdglue::moments::centre_scale;
use asdglue::par::pairwise_sum;
use asdglue::splice::{
    bundled, energy, gradient_lp_norm, splice, validate_gluing_tree, zeta, CutoffFn, GluingTree,
    TreeGrid, TreeGridOptions,
};
use nalgebra::Matrix4;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliResult;
use crate::output::{failures, Check, OutDir};

/// Radial profile of the ψ cutoff as a function of |x|/b: value and
/// derivative.
pub type Profile = fn(f64) -> (f64, f64);

/// A profile that overshoots one in the transition band. Only reachable
/// through the hidden `--inject-bad-cutoff` flag, as a negative control.
fn overshooting_profile(t: f64) -> (f64, f64) {
    let (v, d) = zeta(t);
    (1.2 * v, 1.2 * d)
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn rand_alg(rng: &mut ChaCha8Rng) -> Alg {
    Alg::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    )
}

fn rand_point(rng: &mut ChaCha8Rng, r: f64) -> Point4 {
    Point4::from(std::array::from_fn(|_| rng.random_range(-r..r)))
}

fn rand_unit(rng: &mut ChaCha8Rng) -> Point4 {
    loop {
        let p = rand_point(rng, 1.0);
        let n = p.norm();
        if n > 0.1 && n <= 1.0 {
            return p / n;
        }
    }
}

fn rand_spd(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let b = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
    b * b.transpose() + Matrix4::identity() * 0.5
}

fn rel_diff(a: &[Alg; 3], b: &[Alg; 3]) -> f64 {
    (0..3)
        .map(|k| (a[k] - b[k]).norm() / (1.0 + a[k].norm()))
        .fold(0.0, f64::max)
}

fn lie_algebra(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b, c) = (rand_alg(rng), rand_alg(rng), rand_alg(rng));
        let anti = (bracket(&a, &b) + bracket(&b, &a)).norm();
        let jacobi = (bracket(&a, &bracket(&b, &c))
            + bracket(&b, &bracket(&c, &a))
            + bracket(&c, &bracket(&a, &b)))
        .norm();
        worst = worst.max(anti).max(jacobi);
    }
    Check::at_most("su2_bracket", worst, 1e-12)
}

fn projections(rng: &mut ChaCha8Rng) -> CliResult<Vec<Check>> {
    let (mut conformal, mut idempotent) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let f: TwoForm = std::array::from_fn(|_| rand_alg(rng));
        let g = rand_spd(rng);
        let c = rng.random_range(0.01..100.0);
        let a = selfdual_part(&f, &g)?;
        conformal = conformal.max(rel_diff(&a, &selfdual_part(&f, &(g * c))?));
        idempotent = idempotent.max(rel_diff(&a, &selfdual_part(&selfdual_embed(&a, &g)?, &g)?));
    }
    Ok(vec![
        Check::at_most("conformal_class", conformal, 1e-12),
        Check::at_most("selfdual_idempotent", idempotent, 1e-12),
    ])
}

fn instanton_oracles() -> CliResult<Vec<Check>> {
    let g = build_grid(&GridSpec::default_full())?;
    let unit = bpst(&BpstParams::unit())?;
    let e = g.integrate(|x| unit.energy_density(x))?;
    let id = Matrix4::identity();
    let [plus, full] = g.integrate_array(|x| {
        let f = unit.curvature(x)?;
        let c = selfdual_part(&f, &id)?;
        Ok([
            c.iter().map(|v| v.norm_squared()).sum(),
            two_form_norm_sq(&f),
        ])
    })?;
    let mut scale_err = 0.0f64;
    for lambda in [1.0, 0.1, 0.01] {
        let a = bpst(&BpstParams::new(
            Point4::zeros(),
            lambda,
            GaugeFlavor::Regular,
        ))?;
        let grid = build_grid(
            &GridSpec::new(Region::Full, 1e-2 * lambda, 1e2 * lambda).with_orders(24, 8, 6),
        )?;
        let r = centre_scale(&a, &grid)?;
        scale_err = scale_err.max((r.scale / (SQRT_2 * lambda) - 1.0).abs());
    }
    Ok(vec![
        Check::at_most("bpst_energy", (e / UNIT_MASS - 1.0).abs(), 5e-3),
        Check::at_most("bpst_asd", (plus / full).sqrt(), 1e-8),
        Check::at_most("bpst_scale", scale_err, 1e-2),
    ])
}

fn gauge_invariance(rng: &mut ChaCha8Rng) -> CliResult<Check> {
    let a = bpst(&BpstParams::new(
        Point4::new(0.1, 0.0, 0.2, 0.0),
        0.9,
        GaugeFlavor::Regular,
    ))?;
    let mut worst = 0.0f64;
    for _ in 0..32 {
        let c = [rand_alg(rng), rand_alg(rng), rand_alg(rng)];
        let u = GaugeTransform::exp_of(move |x| c[0] + c[1] * x[0] + c[2] * (x[1] * x[2] - x[3]));
        let t = gauge_transform(&a, &u, None);
        let x = rand_point(rng, 1.5);
        let n = two_form_norm_sq(&a.curvature(&x)?).sqrt();
        let m = two_form_norm_sq(&t.curvature(&x)?).sqrt();
        worst = worst.max((m - n).abs() / n.max(1.0));
    }
    Ok(Check::at_most("gauge_invariance", worst, 1e-8))
}

fn radial_gauge_bound(rng: &mut ChaCha8Rng) -> CliResult<Vec<Check>> {
    let lambda: f64 = 0.5;
    let k = 48f64.sqrt() / lambda.powi(2);
    let c = Point4::new(0.2, -0.1, 0.0, 0.3);
    let a = bpst(&BpstParams::new(
        Point4::zeros(),
        lambda,
        GaugeFlavor::Regular,
    ))?;
    let r = radial_gauge(&a, &c, 24);
    let (mut ratio, mut radial) = (0.0f64, 0.0f64);
    for _ in 0..32 {
        let y = rand_unit(rng) * rng.random_range(0.01..1.0);
        let v = r.eval(&(c + y))?;
        ratio = ratio.max(one_form_norm_sq(&v).sqrt() / (k * y.norm()));
        radial = radial.max(contract(&v, &y).norm() / y.norm());
    }
    Ok(vec![
        Check::at_most("radial_gauge_bound", ratio, 1.05),
        Check::at_most("radial_gauge_contraction", radial, 1e-6),
    ])
}

fn lie_derivative() -> CliResult<Check> {
    let a = bpst(&BpstParams::unit())?;
    let g = build_grid(&GridSpec::new(Region::Ball, 0.0, 3.0).with_orders(6, 6, 4))?;
    let h = 1e-4;
    let up = pullback_connection(&ConformalMap::dilation(1.0 + h)?, &a);
    let dn = pullback_connection(&ConformalMap::dilation(1.0 - h)?, &a);
    let [num, den] = g.integrate_array(|x| {
        let (p, m) = (up.eval(x)?, dn.eval(x)?);
        let exact = lie_derivative_radial(&a, x)?;
        let d: f64 = (0..4)
            .map(|k| (-(p[k] - m[k]) / (2.0 * h) - exact[k]).norm_squared())
            .sum();
        Ok([d, one_form_norm_sq(&exact)])
    })?;
    Ok(Check::at_most("lie_derivative", (num / den).sqrt(), 1e-4))
}

/// Largest violation of: 0 ≤ ζ ≤ 1, ζ = 0 on t ≤ ½, ζ = 1 on t ≥ 1 and
/// |ζ'| ≤ 4 (so |dψ| ≤ 4/b for ψ = ζ(|x|/b)).
fn psi_bounds(profile: Profile) -> Check {
    let mut worst = 0.0f64;
    for i in 0..=800 {
        let t = 2.0 * i as f64 / 800.0;
        let (v, d) = profile(t);
        let mut bad = (-v).max(v - 1.0).max(d.abs() - 4.0).max(0.0);
        if t <= 0.5 {
            bad = bad.max(v.abs());
        }
        if t >= 1.0 {
            bad = bad.max((v - 1.0).abs());
        }
        worst = worst.max(bad);
    }
    Check::at_most("psi_bounds", worst, 0.0)
}

fn beta_law() -> CliResult<Check> {
    let samples: Vec<(f64, f64)> = [8.0f64, 32.0, 128.0]
        .iter()
        .map(|&n| {
            (
                n.ln(),
                gradient_lp_norm(&CutoffFn::Beta { lambda: 1e-3, n }, 4.0),
            )
        })
        .collect();
    let slope = exponent_fit(&samples)?.slope;
    Ok(Check::at_most("beta_log_law", (slope + 0.75).abs(), 0.15)
        .with_detail(format!("slope {slope}")))
}

fn trees() -> CliResult<Vec<Check>> {
    let all: Vec<(&str, GluingTree)> = bundled();
    let violations: usize = all.iter().map(|(_, t)| validate_gluing_tree(t).len()).sum();
    let round_trip = all
        .iter()
        .filter(|(_, t)| GluingTree::from_json(&t.to_json()).ok().as_ref() != Some(t))
        .count();
    let families: Vec<(&str, FamilySpec)> = bundled_families();
    let family_trip = families
        .iter()
        .filter(|(_, f)| FamilySpec::from_json(&f.to_json()).ok().as_ref() != Some(f))
        .count();
    let mut additivity = 0.0f64;
    for name in ["one_bubble", "two_bubbles"] {
        let tree = &all
            .iter()
            .find(|(n, _)| *n == name)
            .expect("bundled tree")
            .1;
        let s = splice(tree)?;
        let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse())?;
        let k = s.tree.total_charge() as f64;
        additivity = additivity.max((energy(&s, &g)? / (UNIT_MASS * k) - 1.0).abs());
    }
    let dims = (1..=4).all(|k| moduli_dimension(k, 0, 0) == 8 * k as i64 - 3);
    Ok(vec![
        Check::at_most("bundled_trees_valid", violations as f64, 0.0),
        Check::at_most(
            "tree_json_round_trip",
            (round_trip + family_trip) as f64,
            0.0,
        ),
        Check::at_most("charge_additivity", additivity, 1e-2),
        Check::at_most("moduli_dimension", if dims { 0.0 } else { 1.0 }, 0.0),
    ])
}

fn numerics(rng: &mut ChaCha8Rng) -> CliResult<Vec<Check>> {
    // Multiples of 2⁻¹⁰ below 2⁴⁰ add exactly, so any order gives the same sum.
    let xs: Vec<f64> = (0..10_000)
        .map(|_| rng.random_range(0..1_000_000i64) as f64 / 1024.0)
        .collect();
    let exact: f64 = xs.iter().rev().sum();
    let mut fit_err = 0.0f64;
    for _ in 0..8 {
        let slope = rng.random_range(-1.0..2.0);
        let c = rng.random_range(0.1..10.0);
        let samples: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&l: &f64| (l, c * l.powf(slope)))
            .collect();
        fit_err = fit_err.max((exponent_fit(&samples)?.slope - slope).abs());
    }
    Ok(vec![
        Check::at_most("pairwise_sum", (pairwise_sum(&xs) - exact).abs(), 0.0),
        Check::at_most("exponent_fit", fit_err, 1e-10),
    ])
}

pub fn run(seed: u64, inject_bad_cutoff: bool, out: &OutDir) -> CliResult<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile: Profile = if inject_bad_cutoff {
        overshooting_profile
    } else {
        zeta
    };
    let mut checks = vec![lie_algebra(&mut rng)];
    checks.extend(projections(&mut rng)?);
    checks.extend(instanton_oracles()?);
    checks.push(gauge_invariance(&mut rng)?);
    checks.extend(radial_gauge_bound(&mut rng)?);
    checks.push(lie_derivative()?);
    checks.push(psi_bounds(profile));
    checks.push(beta_law()?);
    checks.extend(trees()?);
    checks.extend(numerics(&mut rng)?);
    let report = CheckReport {
        seed,
        passed: checks.iter().all(|c| c.pass),
        checks,
    };
    out.json("check.json", &report)?;
    Ok(failures(&report.checks))
}
