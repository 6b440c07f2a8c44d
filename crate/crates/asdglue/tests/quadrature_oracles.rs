use std::f64::consts::PI;

use asdglue::geometry::{
    build_grid, lp_norm, round_factor_sq, CompositeGrid, GridSpec, Integrator, MetricField, Patch,
    Point4, Region, TensorValue,
};
use asdglue::instanton::{bpst, BpstParams};

#[test]
fn unit_ball_volume() {
    let g = build_grid(&GridSpec::new(Region::Ball, 0.0, 1.0)).unwrap();
    let v = g.integrate(|_| Ok(1.0)).unwrap();
    assert!((v / (PI * PI / 2.0) - 1.0).abs() < 1e-10, "{v}");
}

#[test]
fn annulus_volume() {
    let g = build_grid(&GridSpec::new(Region::Annulus, 1.0, 2.0)).unwrap();
    let v = g.integrate(|_| Ok(1.0)).unwrap();
    assert!((v / (7.5 * PI * PI) - 1.0).abs() < 1e-10, "{v}");
}

#[test]
fn round_sphere_volume_on_full_chart() {
    // vol(S⁴) = 8π²/3, integrating the round volume density φ⁴ over ℝ⁴.
    let g = build_grid(&GridSpec::default_full()).unwrap();
    let v = g.integrate(|x| Ok(round_factor_sq(x).powi(2))).unwrap();
    assert!((v / (8.0 * PI * PI / 3.0) - 1.0).abs() < 1e-6, "{v}");
}

#[test]
fn bpst_curvature_l2_norm() {
    let g = build_grid(&GridSpec::default_full()).unwrap();
    let a = bpst(&BpstParams::unit()).unwrap();
    let n = lp_norm(
        |x| Ok(TensorValue::TwoForm(a.curvature(x)?)),
        2.0,
        &MetricField::Flat,
        &g,
    )
    .unwrap();
    assert!((n / (8.0 * PI * PI).sqrt() - 1.0).abs() < 1e-3, "{n}");
}

#[test]
fn off_centre_gaussian_on_shifted_grid() {
    // ∫ exp(−|x−c|²) d⁴x = π².
    let c = Point4::new(3.0, -1.0, 0.5, 2.0);
    let g = build_grid(&GridSpec::default_full().centred_at(&c)).unwrap();
    let v = g
        .integrate(|x| Ok((-(x - c).norm_squared()).exp()))
        .unwrap();
    assert!((v / (PI * PI) - 1.0).abs() < 1e-8, "{v}");
}

#[test]
fn refinement_converges() {
    let f = |x: &Point4| Ok(1.0 / (1.0 + x.norm_squared()).powi(3));
    // ∫ (1+r²)⁻³ d⁴x = 2π² · ½ B(2,1) = π²/2
    let exact = PI * PI / 2.0;
    let mut errs = Vec::new();
    for order in [2, 4, 8] {
        let g = build_grid(&GridSpec::default_full().with_orders(8, order, 3)).unwrap();
        errs.push((g.integrate(f).unwrap() - exact).abs());
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    assert!(errs[2] < 1e-6 * exact);
}

#[test]
fn composite_grid_integrates_a_concentrated_bump() {
    // A narrow instanton density away from the background centre needs a patch.
    let c = Point4::new(1.0, 0.0, 0.0, 0.0);
    let lambda = 1e-3;
    let a = bpst(&BpstParams::new(
        c,
        lambda,
        asdglue::instanton::GaugeFlavor::Regular,
    ))
    .unwrap();
    let background = build_grid(&GridSpec::default_full()).unwrap();
    let patch = Patch {
        grid: build_grid(&GridSpec::new(Region::Ball, 0.0, 0.5).centred_at(&c)).unwrap(),
        radius: 0.5,
    };
    let comp = CompositeGrid {
        background,
        patches: vec![patch],
    };
    let e = comp.integrate(|x| a.energy_density(x)).unwrap();
    assert!((e / (8.0 * PI * PI) - 1.0).abs() < 5e-3, "{e}");
}
