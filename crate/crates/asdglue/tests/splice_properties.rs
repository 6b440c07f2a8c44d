use std::f64::consts::{FRAC_1_SQRT_2, PI};

use asdglue::gauge::{contract, two_form_norm_sq};
use asdglue::geometry::{pt, s3_rule, Integrator, Point4};
use asdglue::instanton::{bpst, BpstParams, GaugeFlavor};
use asdglue::splice::*;

const EIGHT_PI_SQ: f64 = 8.0 * PI * PI;

fn singular_bubble() -> Assignment {
    Assignment::Bpst(BpstParams::new(
        Point4::zeros(),
        FRAC_1_SQRT_2,
        GaugeFlavor::Singular,
    ))
}

fn one_bubble(lambda: f64) -> GluingTree {
    GluingTree {
        n: 8.0,
        lambda0: None,
        b0: None,
        d0: None,
        nodes: vec![
            TreeNode::root(0, Assignment::Product),
            TreeNode::child("1", "0", pt(0.3, 0.0, 0.0, 0.0), lambda, singular_bubble()),
        ],
    }
}

fn bundled_tree(name: &str) -> GluingTree {
    bundled().into_iter().find(|(n, _)| *n == name).unwrap().1
}

fn kinds(t: &GluingTree) -> Vec<ViolationKind> {
    validate_gluing_tree(t)
        .into_iter()
        .map(|v| v.kind)
        .collect()
}

fn directions() -> Vec<Point4> {
    s3_rule(2).into_iter().map(|(u, _)| u).collect()
}

#[test]
fn bundled_configs_are_valid() {
    for (name, t) in bundled() {
        assert!(
            kinds(&t).is_empty(),
            "{name}: {:?}",
            validate_gluing_tree(&t)
        );
    }
}

#[test]
fn validator_flags_only_the_upper_cutoff_bound_at_moderate_scale() {
    // b = 4N√λ ≈ 1.01 exceeds ¼ at λ = 1e-3.
    assert_eq!(kinds(&one_bubble(1e-3)), vec![ViolationKind::CutoffUpper]);
    assert!(kinds(&one_bubble(1e-5)).is_empty());
}

#[test]
fn validator_flags_close_siblings() {
    let lambda = 1e-6;
    let b = default_cutoff(8.0, lambda);
    let mut t = one_bubble(lambda);
    t.nodes[1].x = Some([0.0; 4]);
    t.nodes.push(TreeNode::child(
        "2",
        "0",
        pt(3.0 * 2.0 * b, 0.0, 0.0, 0.0),
        lambda,
        singular_bubble(),
    ));
    assert_eq!(kinds(&t), vec![ViolationKind::Separation]);
}

#[test]
fn validator_flags_theta_vertex_with_one_child() {
    let mut t = one_bubble(1e-5);
    t.nodes[1].conn = Some(Assignment::Product);
    t.nodes[1].k = 0;
    t.nodes.push(TreeNode::child(
        "11",
        "1",
        pt(2.0, 0.0, 0.0, 0.0),
        1e-5,
        singular_bubble(),
    ));
    let k = kinds(&t);
    assert!(k.contains(&ViolationKind::ThetaBranching), "{k:?}");
    assert_eq!(ViolationKind::ThetaBranching.label(), "Θ branching");
}

#[test]
fn tree_json_round_trips() {
    for (_, t) in bundled() {
        assert_eq!(GluingTree::from_json(&t.to_json()).unwrap(), t);
    }
}

#[test]
fn psi_plateau_and_support() {
    let c = CutoffFn::Psi { b: 0.1 };
    let (v, g) = cutoff_eval(&c, &pt(0.2, 0.0, 0.0, 0.0));
    assert_eq!((v, g.norm()), (1.0, 0.0));
    assert_eq!(cutoff_eval(&c, &pt(0.0, 0.025, 0.0, 0.0)).0, 0.0);
}

#[test]
fn beta_gradient_follows_the_log_law() {
    // ‖dβ‖_{L⁴} ∝ (½ log N)^{-3/4}, exactly, for the log-smoothstep profile.
    let norm = |n: f64| gradient_lp_norm(&CutoffFn::Beta { lambda: 1e-3, n }, 4.0);
    let (a, b) = (norm(8.0), norm(128.0));
    let slope = (b / a).ln() / ((128f64).ln() / 8f64.ln()).ln();
    assert!((slope + 0.75).abs() < 1e-6, "{slope}");
}

#[test]
fn charge_is_additive() {
    let grid_opts = TreeGridOptions::coarse();
    for name in ["one_bubble", "bubble_on_instanton", "two_bubbles"] {
        let s = splice(&bundled_tree(name)).unwrap();
        let g = TreeGrid::build(&s.tree, &grid_opts).unwrap();
        let e = energy(&s, &g).unwrap();
        let k = s.tree.total_charge() as f64;
        assert!(
            (e / (EIGHT_PI_SQ * k) - 1.0).abs() < 0.03,
            "{name}: {}",
            e / EIGHT_PI_SQ
        );
    }
}

#[test]
fn root_field_is_untouched_outside_the_cutoff_balls() {
    let s = splice(&bundled_tree("bubble_on_instanton")).unwrap();
    let root = &s.vertices[0];
    let b = s.tree.nodes[1].b;
    for u in directions() {
        let x = u * (1.5 * b);
        assert_eq!(root.field.eval(&x).unwrap(), root.raw.eval(&x).unwrap());
    }
}

#[test]
fn spliced_field_is_flat_on_the_cut_out_balls() {
    for name in ["one_bubble", "bubble_on_instanton", "bubble_on_bubble"] {
        let s = splice(&bundled_tree(name)).unwrap();
        for (j, node) in s.tree.nodes.iter().enumerate() {
            for &c in &node.children {
                let child = &s.tree.nodes[c];
                for r in [0.05, 0.2, 0.45] {
                    for u in directions() {
                        let x = child.site + u * (r * child.b);
                        let v = &s.vertices[j].field;
                        assert_eq!(two_form_norm_sq(&v.curvature(&x).unwrap()), 0.0, "{name}");
                        assert!(v.eval(&x).unwrap().iter().all(|a| a.norm() == 0.0));
                    }
                }
            }
        }
    }
}

#[test]
fn neck_representations_agree() {
    // On the neck the parent composite is the child's composite carried
    // through the blow-up map and the constant rotation.
    let s = splice(&bundled_tree("bubble_on_bubble")).unwrap();
    for c in 1..s.tree.nodes.len() {
        let child = &s.tree.nodes[c];
        let p = child.parent.unwrap();
        let to_child = s.vertices[c].from_parent.clone().unwrap();
        let parent_comp = &s.vertices[p].composite;
        let child_comp = asdglue::gauge::rotate_constant(&s.vertices[c].composite, child.rho);
        let pulled = asdglue::gauge::pullback_connection(&to_child, &child_comp);
        let lo = child.lambda.sqrt() / s.tree.n;
        let hi = (s.tree.n * child.lambda.sqrt()).min(0.45 * child.b);
        for t in [0.0, 0.5, 1.0] {
            let r = lo * (hi / lo).powf(t);
            for u in directions() {
                let x = child.site + u * r;
                let a = parent_comp.eval(&x).unwrap();
                let b = pulled.eval(&x).unwrap();
                let scale = b.iter().map(|v| v.norm()).fold(1e-300, f64::max);
                let diff = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                assert!(
                    diff <= 1e-8 * scale,
                    "vertex {c} at r = {r:e}: {diff:e} vs {scale:e}"
                );
            }
        }
    }
}

#[test]
fn base_field_near_a_bubble_is_the_scaled_singular_instanton() {
    let t = bundled_tree("one_bubble");
    let s = splice(&t).unwrap();
    let node = &s.tree.nodes[1];
    let expected = bpst(&BpstParams::new(
        node.site,
        node.lambda * FRAC_1_SQRT_2,
        GaugeFlavor::Singular,
    ))
    .unwrap();
    let base = pullback_to_base(&s);
    for r in [1e-7, 1e-6, 1e-5, 0.5 * node.lambda / node.b] {
        for u in directions() {
            let y = node.site + u * r;
            let a = base.eval(&y).unwrap();
            let e = expected.eval(&y).unwrap();
            let scale = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let diff = a
                .iter()
                .zip(&e)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8 * scale, "r = {r:e}: {diff:e} vs {scale:e}");
        }
    }
}

#[test]
fn base_energy_matches_energy_over_the_connected_sum() {
    for name in ["one_bubble", "two_bubbles", "bubble_on_bubble"] {
        let s = splice(&bundled_tree(name)).unwrap();
        let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse()).unwrap();
        let base = pullback_to_base(&s);
        let e_x = energy(&s, &g).unwrap();
        let e_base = g.base().integrate(|y| base.energy_density(y)).unwrap();
        assert!(
            (e_base / e_x - 1.0).abs() < 0.01,
            "{name}: {e_base} vs {e_x}"
        );
    }
}

#[test]
fn cutoff_defect_is_linear_in_the_cutoff_radius() {
    let bs = [0.04, 0.08, 0.16];
    let defects: Vec<f64> = bs
        .iter()
        .map(|&b| {
            let mut t = bundled_tree("bubble_on_instanton");
            t.nodes[1].lambda = Some(1e-7);
            t.nodes[1].b = Some(b);
            cutoff_defect(&splice(&t).unwrap(), 0, 6).unwrap()
        })
        .collect();
    for w in [0, 1] {
        let slope = (defects[w + 1] / defects[w]).ln() / (bs[w + 1] / bs[w]).ln();
        assert!((slope - 1.0).abs() < 0.2, "{defects:?}");
    }
}

#[test]
fn metric_bands_hold_on_samples() {
    let t = bundled_tree("bubble_on_bubble");
    let s = splice(&t).unwrap();
    let m = &s.metric;
    let n4 = s.tree.n.powi(4);
    // κ grows with 1/h₁² at the gluing sites.
    let kappa = 100.0
        * s.tree
            .nodes
            .iter()
            .map(|v| (1.0 + v.site.norm_squared()).powi(2) / 4.0)
            .fold(1.0, f64::max);
    let mut seen = [0usize; 3];
    for (j, node) in s.tree.nodes.iter().enumerate() {
        let mut centres: Vec<(Point4, f64)> = node
            .children
            .iter()
            .map(|&c| (s.tree.nodes[c].site, s.tree.nodes[c].lambda))
            .collect();
        centres.push((Point4::zeros(), node.lambda));
        for (c, lambda) in centres {
            for k in 0..40 {
                let r = lambda.sqrt() * 10f64.powf(-1.2 + 2.4 * k as f64 / 39.0);
                for u in directions() {
                    // The south neck sits at |x| = 1/r in the chart of J.
                    let x = if c == Point4::zeros() && j > 0 {
                        u / r
                    } else {
                        c + u * r
                    };
                    let Some(band) = m.band(j, &x) else { continue };
                    let f = m.factor_extended(j, &x);
                    match band {
                        Band::Plain => {
                            seen[2] += 1;
                            assert_eq!(f, 1.0);
                        }
                        Band::Inner => {
                            seen[1] += 1;
                            assert!((1.0 / kappa..=kappa).contains(&f), "inner {f}");
                        }
                        Band::Neck => {
                            seen[0] += 1;
                            assert!(
                                (1.0 / kappa..=kappa * n4).contains(&f),
                                "neck {f} at vertex {j}, x = {x:?}, r = {r:e}"
                            );
                        }
                    }
                }
            }
        }
    }
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}

#[test]
fn radial_patches_kill_the_radial_component() {
    let s = splice(&bundled_tree("bubble_on_bubble")).unwrap();
    let v = &s.vertices[1];
    let anchor = v.anchors[0].expect("singular vertex is patched");
    let scale = v
        .raw
        .eval(&(anchor.centre + pt(0.0, anchor.radius, 0.0, 0.0)))
        .unwrap();
    let scale = scale.iter().map(|a| a.norm()).fold(0.0, f64::max) * anchor.radius;
    for r in [0.1, 0.5, 0.9] {
        for u in directions() {
            let d = u * (r * anchor.radius);
            let a = v.prepared.eval(&(anchor.centre + d)).unwrap();
            assert!(
                contract(&a, &d).norm() < 1e-6 * scale,
                "{:e}",
                contract(&a, &d).norm()
            );
        }
    }
}

#[test]
fn selfdual_error_vanishes_without_splicing() {
    let single = GluingTree {
        n: 8.0,
        lambda0: None,
        b0: None,
        d0: None,
        nodes: vec![TreeNode::root(
            1,
            Assignment::Bpst(BpstParams::new(
                pt(0.1, 0.0, 0.0, 0.0),
                1.0,
                GaugeFlavor::Regular,
            )),
        )],
    };
    let s = splice(&single).unwrap();
    let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse()).unwrap();
    assert!(selfdual_error(&s, &g, 2.0).unwrap() <= 1e-5);

    let mut flat = bundled_tree("theta_parent");
    for node in &mut flat.nodes {
        node.conn = Some(Assignment::Product);
    }
    let s = splice(&flat).unwrap();
    let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse()).unwrap();
    assert_eq!(selfdual_error(&s, &g, 2.0).unwrap(), 0.0);
}

#[test]
fn selfdual_error_decreases_with_scale() {
    let values: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&l| {
            let s = splice(&one_bubble(l)).unwrap();
            let g = TreeGrid::build(&s.tree, &TreeGridOptions::coarse()).unwrap();
            selfdual_error(&s, &g, 2.0).unwrap()
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}
