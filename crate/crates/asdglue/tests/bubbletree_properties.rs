use std::sync::OnceLock;

use asdglue::bubbletree::*;
use asdglue::geometry::{build_grid, pt, CompositeGrid, GridSpec, Patch, Point4, Region};
use asdglue::instanton::{bpst, energy_density, BpstParams};
use asdglue::splice::{energy, splice, Assignment, TreeGrid, TreeGridOptions};
use asdglue::Error;
use proptest::prelude::*;

struct Family {
    name: &'static str,
    spec: FamilySpec,
    clouds: Vec<MassCloud>,
}

fn families() -> &'static [Family] {
    static CACHE: OnceLock<Vec<Family>> = OnceLock::new();
    CACHE.get_or_init(|| {
        bundled_families()
            .into_iter()
            .map(|(name, spec)| {
                let clouds = spec.clouds().unwrap();
                Family { name, spec, clouds }
            })
            .collect()
    })
}

fn family(name: &str) -> &'static Family {
    families().iter().find(|f| f.name == name).unwrap()
}

fn extract(f: &Family) -> IdealConnection {
    extract_bubble_tree(
        &f.clouds,
        &f.spec.alphas,
        f.spec.charge(),
        &Thresholds::default(),
    )
    .unwrap()
}

fn alphas(n: usize) -> Vec<f64> {
    (0..n).map(|a| a as f64).collect()
}

#[test]
fn constant_density_has_no_concentration() {
    let grid = build_grid(&GridSpec::new(Region::Ball, 1e-3, 2.0).with_orders(8, 4, 4)).unwrap();
    let cloud = MassCloud::from_density(|_| Ok(10.0), &grid).unwrap();
    let clouds = vec![cloud; 4];
    let r = detect_concentration(&clouds, &alphas(4), &Thresholds::default()).unwrap();
    assert!(r.candidates.is_empty());
}

#[test]
fn shrinking_instanton_concentrates_at_its_centre() {
    let grid = build_grid(&GridSpec::new(Region::Full, 1e-4, 1e2).with_orders(36, 6, 4)).unwrap();
    let clouds: Vec<MassCloud> = (0..7)
        .map(|a| {
            let l = (-(a as f64)).exp2();
            MassCloud::from_density(|x| Ok(energy_density(x.norm(), l)), &grid).unwrap()
        })
        .collect();
    let r = detect_concentration(&clouds, &alphas(7), &Thresholds::default()).unwrap();
    assert_eq!(r.candidates.len(), 1);
    let c = &r.candidates[0];
    assert_eq!(c.charge, 1);
    assert!(c.track.centre(6).norm() < 1e-6);
    assert!(
        (c.track.masses[6] / UNIT_MASS - 1.0).abs() < 0.02,
        "{:?}",
        c.track.masses
    );
}

#[test]
fn separated_bubbles_are_two_points() {
    let sites = [pt(0.25, 0.0, 0.0, 0.0), pt(-0.25, 0.0, 0.0, 0.0)];
    let background =
        build_grid(&GridSpec::new(Region::Full, 1e-2, 1e2).with_orders(16, 6, 4)).unwrap();
    let patches = sites
        .iter()
        .map(|s| Patch {
            grid: build_grid(
                &GridSpec::new(Region::Ball, 1e-5, 0.2)
                    .with_orders(28, 6, 4)
                    .centred_at(s),
            )
            .unwrap(),
            radius: 0.2,
        })
        .collect();
    let grid = CompositeGrid {
        background,
        patches,
    };
    let clouds: Vec<MassCloud> = (0..6)
        .map(|a| {
            let l = 0.02 * (-(a as f64)).exp2();
            MassCloud::from_density(
                |x| {
                    Ok(sites
                        .iter()
                        .map(|s| energy_density((x - s).norm(), l))
                        .sum())
                },
                &grid,
            )
            .unwrap()
        })
        .collect();
    let r = detect_concentration(&clouds, &alphas(6), &Thresholds::default()).unwrap();
    assert_eq!(r.candidates.len(), 2);
    for (c, s) in r.candidates.iter().zip(sites.iter().rev()) {
        assert!((c.track.centre(5) - s).norm() < 1e-6);
        assert!((c.track.masses[5] / UNIT_MASS - 1.0).abs() < 0.02);
    }
    assert!(r.r0_stable);
}

#[test]
fn round_trip_recovers_every_bundled_family() {
    assert!(families().len() >= 5);
    for f in families() {
        let ideal = extract(f);
        let truth = f.spec.tree_at(*f.spec.alphas.last().unwrap());
        let rt = compare_with_tree(&ideal, &truth).unwrap();
        assert!(
            rt.isomorphic,
            "{}: {} vs {}",
            f.name,
            ideal.signature(),
            gluing_tree_signature(&truth)
        );
        assert_eq!(ideal.total_charge(), f.spec.charge(), "{}", f.name);
        assert!(
            ideal.violations().is_empty(),
            "{}: {:?}",
            f.name,
            ideal.violations()
        );
        assert!(
            rt.max_centre() <= 0.05 && rt.max_scale() <= 0.1,
            "{}: {rt:?}",
            f.name
        );
        assert!(ideal.depth() <= f.spec.charge() as usize);
        assert!(ideal.r0_stable, "{}", f.name);
        for v in ideal.nodes.iter().filter(|v| v.parent.is_some()) {
            let neck = v.neck.as_ref().unwrap();
            assert!(
                neck.degenerating && neck.is_decreasing(),
                "{} {}: {neck:?}",
                f.name,
                v.id
            );
            assert!(*neck.neck.last().unwrap() <= 0.05 * UNIT_MASS);
            assert!(*neck.ball_defect.last().unwrap() < Thresholds::default().epsilon * UNIT_MASS);
        }
    }
}

#[test]
fn bubbles_are_centred_after_their_blow_up() {
    for f in families() {
        for v in extract(f).nodes.iter().filter(|v| v.limit == Limit::Bpst) {
            let [c, s] = v.centring.unwrap();
            assert!(
                c <= 2e-2 && (s - 1.0).abs() <= 5e-2,
                "{} {}: {c} {s}",
                f.name,
                v.id
            );
        }
    }
}

#[test]
fn theta_vertex_and_uhlenbeck_projection() {
    let ideal = extract(family("theta_parent"));
    let theta = ideal.node("1").unwrap();
    assert_eq!(theta.limit, Limit::Theta);
    assert_eq!(
        ideal
            .nodes
            .iter()
            .filter(|v| v.parent.as_deref() == Some("1"))
            .count(),
        2
    );
    let (root, points) = ideal.uhlenbeck_projection();
    assert_eq!(root, Some(Assignment::Product));
    assert_eq!(points.len(), 1);
    assert_eq!(points[0].multiplicity, 2);
    assert!((Point4::from(points[0].x) - pt(0.3, 0.0, 0.0, 0.0)).norm() < 1e-6);
}

#[test]
fn depth_beyond_the_cap_is_an_algorithm_failure() {
    let f = family("chain3");
    let th = Thresholds {
        max_depth: Some(2),
        ..Thresholds::default()
    };
    let err = extract_bubble_tree(&f.clouds, &f.spec.alphas, 3, &th).unwrap_err();
    assert!(matches!(err, Error::Algorithm(_)), "{err}");
}

#[test]
fn wrong_total_charge_is_inconsistent() {
    let f = family("one_bubble");
    let err =
        extract_bubble_tree(&f.clouds, &f.spec.alphas, 2, &Thresholds::default()).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn constant_family_is_a_single_vertex() {
    let grid = build_grid(&GridSpec::default_full().with_orders(24, 6, 4)).unwrap();
    let a = bpst(&BpstParams::unit()).unwrap();
    let cloud = MassCloud::from_field(&a, &grid).unwrap();
    let clouds = vec![cloud; 4];
    let ideal = extract_bubble_tree(&clouds, &alphas(4), 1, &Thresholds::default()).unwrap();
    assert_eq!(ideal.nodes.len(), 1);
    let root = &ideal.nodes[0];
    assert_eq!((root.limit, root.k), (Limit::Base, 1));
    let Some(Assignment::Bpst(p)) = &root.conn else {
        panic!("{root:?}")
    };
    assert!(
        Point4::from(p.q).norm() < 1e-8 && (p.lambda - 1.0).abs() < 0.02,
        "{p:?}"
    );

    let track = Track {
        centres: vec![[0.0; 4]; 4],
        scales: vec![1.0; 4],
        masses: vec![UNIT_MASS; 4],
        radii: vec![10.0; 4],
    };
    let neck = neck_loss_check(&clouds, &alphas(4), &track, 1, &Thresholds::default());
    assert!(!neck.degenerating && neck.neck.is_empty());
}

#[test]
fn extracted_tree_splices_back_to_the_same_charge() {
    let ideal = extract(family("one_bubble"));
    let back = IdealConnection::from_json(&ideal.to_json()).unwrap();
    assert_eq!(back, ideal);
    let tree = ideal.to_gluing_tree(8.0);
    assert_eq!(gluing_tree_signature(&tree), ideal.signature());
    let s = splice(&tree).unwrap();
    let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse()).unwrap();
    let e = energy(&s, &g).unwrap();
    assert!((e / UNIT_MASS - 1.0).abs() < 0.01, "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn translation_moves_level_one_attachments(p in prop::array::uniform4(-0.5f64..0.5)) {
        let p = Point4::from(p);
        for name in ["one_bubble", "two_bubbles"] {
            let f = family(name);
            let moved: Vec<MassCloud> = f.clouds.iter().map(|c| c.translated(&p)).collect();
            let th = Thresholds::default();
            let a = extract_bubble_tree(&f.clouds, &f.spec.alphas, f.spec.charge(), &th).unwrap();
            let b = extract_bubble_tree(&moved, &f.spec.alphas, f.spec.charge(), &th).unwrap();
            prop_assert_eq!(a.signature(), b.signature());
            for (u, v) in a.nodes.iter().zip(&b.nodes).filter(|(u, _)| u.parent.as_deref() == Some("0")) {
                let shift = Point4::from(v.x.unwrap()) - Point4::from(u.x.unwrap());
                prop_assert!((shift - p).norm() < 1e-6, "{} {}", name, (shift - p).norm());
            }
        }
    }
}
