use std::f64::consts::PI;

use asdglue::gauge::{curvature_fd, pullback_connection, selfdual_part, two_form_norm_sq};
use asdglue::geometry::{build_grid, ConformalMap, GridSpec, Integrator, Point4};
use asdglue::instanton::{bpst, energy_density, BpstParams, GaugeFlavor};
use nalgebra::{Matrix4, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn asd_ratio(flavor: GaugeFlavor, analytic: bool) -> f64 {
    let p = BpstParams::new(Point4::new(0.2, 0.0, -0.1, 0.3), 0.8, flavor);
    let a = bpst(&p).unwrap();
    // Offset centre keeps nodes away from the singular point.
    let g = build_grid(
        &GridSpec::default_full()
            .with_orders(12, 6, 4)
            .centred_at(&Point4::new(0.01, 0.02, 0.0, 0.0)),
    )
    .unwrap();
    let id = Matrix4::identity();
    let [plus, full] = g
        .integrate_array(|x| {
            let f = if analytic {
                a.curvature(x)?
            } else {
                curvature_fd(&a, x, 1e-4 * x.norm().max(1.0))?
            };
            let c = selfdual_part(&f, &id)?;
            Ok([
                c.iter().map(|v| v.norm_squared()).sum(),
                two_form_norm_sq(&f),
            ])
        })
        .unwrap();
    (plus / full).sqrt()
}

#[test]
fn bpst_is_anti_self_dual() {
    for flavor in [GaugeFlavor::Regular, GaugeFlavor::Singular] {
        assert!(asd_ratio(flavor, true) < 1e-8, "{flavor:?}");
        assert!(asd_ratio(flavor, false) < 1e-5, "{flavor:?}");
    }
}

#[test]
fn total_energy_is_eight_pi_squared() {
    for lambda in [0.1, 1.0, 3.0] {
        let a = bpst(&BpstParams::new(
            Point4::zeros(),
            lambda,
            GaugeFlavor::Regular,
        ))
        .unwrap();
        let g = build_grid(&GridSpec::default_full()).unwrap();
        let e = g.integrate(|x| a.energy_density(x)).unwrap();
        assert!((e / (8.0 * PI * PI) - 1.0).abs() < 5e-3, "λ={lambda}: {e}");
    }
}

#[test]
fn singular_potential_decay_bound() {
    // Per-component bound max_μ |A_μ| ≤ 2λ²/|y|³ at |y| = 10λ.
    let lambda = 0.3;
    let q = Point4::new(1.0, 0.0, 0.0, 0.0);
    let a = bpst(&BpstParams::new(q, lambda, GaugeFlavor::Singular)).unwrap();
    for dir in [
        Point4::new(1.0, 0.0, 0.0, 0.0),
        Point4::new(0.5, 0.5, 0.5, 0.5),
        Point4::new(0.0, 0.6, 0.0, 0.8),
    ] {
        let y = dir * (10.0 * lambda);
        let v = a.eval(&(q + y)).unwrap();
        let worst = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(
            worst <= 2.0 * lambda.powi(2) / y.norm().powi(3) * 1.01,
            "{worst}"
        );
    }
}

#[test]
fn density_matches_closed_form() {
    let a = bpst(&BpstParams::new(Point4::zeros(), 0.5, GaugeFlavor::Regular)).unwrap();
    for r in [0.0, 0.2, 0.5, 1.0, 4.0] {
        let x = Point4::new(0.0, r, 0.0, 0.0);
        let d = a.energy_density(&x).unwrap();
        assert!((d / energy_density(r, 0.5) - 1.0).abs() < 1e-12);
    }
}

fn arb_point() -> impl Strategy<Value = Point4> {
    prop::array::uniform4(-2.0f64..2.0).prop_map(Point4::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equivariance_under_dilation_translation_and_rotation(
        x in arb_point(), q in arb_point(), lambda in 0.05f64..3.0,
        axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.0f64..3.0,
    ) {
        let rho = UnitQuaternion::from_scaled_axis(Vector3::from(axis) * angle);
        let direct = bpst(&BpstParams::new(q, lambda, GaugeFlavor::Regular).with_rho(rho)).unwrap();
        let unit = bpst(&BpstParams::unit().with_rho(rho)).unwrap();
        let pulled = pullback_connection(&ConformalMap::new(lambda, q).unwrap(), &unit);
        let (u, v) = (direct.eval(&x).unwrap(), pulled.eval(&x).unwrap());
        let scale = 1.0 / lambda;
        for m in 0..4 {
            prop_assert!((u[m] - v[m]).norm() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn regular_and_singular_densities_agree(x in arb_point()) {
        prop_assume!(x.norm() > 1e-3);
        let p = BpstParams::new(Point4::zeros(), 0.7, GaugeFlavor::Regular);
        let mut s = p.clone();
        s.flavor = GaugeFlavor::Singular;
        let (a, b) = (bpst(&p).unwrap(), bpst(&s).unwrap());
        let (da, db) = (a.energy_density(&x).unwrap(), b.energy_density(&x).unwrap());
        prop_assert!((da - db).abs() <= 1e-8 * da.max(1e-300));
        let fd = two_form_norm_sq(&curvature_fd(&b, &x, 1e-5).unwrap());
        prop_assert!((fd - da).abs() <= 1e-5 * da);
    }
}
