use super::*;
use crate::lp::{solve_lp, LinearModel, LpStatus, Relation};
use crate::milp::solve_milp;
use crate::net::fixtures::abs_net;
use crate::net::he_initialize;
use crate::rng;
use crate::encode::{embed_network_with, EmbedOptions, EncodingStyle};
use rand::Rng as _;

fn scheme(s: &str) -> BtScheme {
    s.parse().unwrap()
}

fn run(net: &ReluNetwork, d: &BoxBounds, e: Option<&BoxBounds>, s: &str) -> BtReport {
    tighten(net, d, e, &scheme(s), &BtParams::default()).unwrap()
}

#[test]
fn scheme_strings() {
    assert_eq!(scheme("no-r(60)").subproblem_time_limit, Some(60.0));
    assert_eq!(scheme("SEMI-RR").kind, BtKind::SemiRr);
    assert_eq!(scheme(" lr(0.5) ").to_string(), "LR(0.5)");
    assert_eq!(scheme("lrr").to_string(), "LRR");
    for bad in ["xr(5)", "lrr(5)", "rr(1)", "no-r(", "no-r(-1)", "no-r(x)", ""] {
        assert!(bad.parse::<BtScheme>().is_err(), "{bad}");
    }
    assert!(BtScheme::new(BtKind::Rr).with_rounds(0).is_err());
}

#[test]
fn interval_examples() {
    let net = ReluNetwork::from_rows(vec![(vec![vec![1.0, -1.0]], vec![0.5]), (vec![vec![1.0]], vec![0.0])]).unwrap();
    let r = run(&net, &[(-1.0, 1.0), (-1.0, 1.0)], None, "lrr");
    assert_eq!(r.bounds.get(NodeId::new(1, 0)), (-1.5, 2.5));

    let net = ReluNetwork::from_rows(vec![
        (vec![vec![1.0], vec![1.0]], vec![0.0, 0.0]),
        (vec![vec![1.0, -2.0]], vec![0.0]),
        (vec![vec![1.0]], vec![0.0]),
    ])
    .unwrap();
    let mut b = BoundSet::unbounded(net.layer_dims());
    b.set(NodeId::new(1, 0), -1.0, 3.0);
    b.set(NodeId::new(1, 1), 2.0, 4.0);
    assert_eq!(interval_bounds(&net, &b, NodeId::new(2, 0)), (-8.0, -1.0));
}

#[test]
fn abs_net_output_zero() {
    let net = abs_net();
    let e = [(0.0, 0.0)];
    let r = run(&net, &[(-1.0, 1.0)], Some(&e), "no-r");
    assert_eq!(r.bounds.get(NodeId::new(0, 0)), (0.0, 0.0));
    assert_eq!(r.mrd, Some(0.0));
    let r = run(&net, &[(-1.0, 1.0)], Some(&e), "lrr");
    assert_eq!(r.bounds.get(NodeId::new(0, 0)), (-1.0, 1.0));
    let err = tighten(&net, &[(-1.0, 1.0)], Some(&[(-2.0, -1.0)]), &scheme("no-r"), &BtParams::default());
    assert!(matches!(err, Err(BtError::Infeasible { .. })));
    assert!(tighten(&net, &[(-1.0, f64::INFINITY)], None, &scheme("lrr"), &BtParams::default()).is_err());
    assert!(tighten(&net, &[(-1.0, 1.0)], Some(&[(0.0, 1.0), (0.0, 1.0)]), &scheme("lrr"), &BtParams::default()).is_err());
}

/// The LP over the box of the previous layer's outputs.
fn lp_interval(net: &ReluNetwork, b: &BoundSet, id: NodeId) -> (f64, f64) {
    let k = id.layer;
    let mut m = LinearModel::new();
    let mut terms = Vec::new();
    for (i, &w) in net.layer(k).row(id.index).iter().enumerate() {
        let (mut l, mut u) = b.get(NodeId::new(k - 1, i));
        if k > 1 {
            l = l.max(0.0);
            u = u.max(0.0);
        }
        let v = m.add_var(format!("x{i}"), l, u).unwrap();
        terms.push((v, w));
    }
    let t = m.add_var("t", f64::NEG_INFINITY, f64::INFINITY).unwrap();
    terms.push((t, -1.0));
    m.add_constraint(&terms, Relation::Eq, -net.layer(k).bias()[id.index]).unwrap();
    let mut out = [0.0; 2];
    for (slot, sense) in [Sense::Minimize, Sense::Maximize].into_iter().enumerate() {
        m.set_objective(sense, &[(t, 1.0)], 0.0).unwrap();
        let s = solve_lp(&m).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        out[slot] = s.objective_value;
    }
    (out[0], out[1])
}

#[test]
fn interval_arithmetic_matches_lp_form() {
    for seed in 0..10 {
        let net = he_initialize(&[3, 6, 5, 2], seed).unwrap();
        let r = run(&net, &[(-1.0, 1.0), (-0.5, 2.0), (0.0, 1.0)], None, "lrr");
        for k in 1..=net.depth() {
            for j in 0..net.layer_dims()[k] {
                let id = NodeId::new(k, j);
                let (l, u) = lp_interval(&net, &r.bounds, id);
                let (cl, cu) = r.bounds.get(id);
                assert!((l - cl).abs() <= 1e-9 && (u - cu).abs() <= 1e-9, "{id:?}");
            }
        }
    }
}

/// Output band covering the middle of the sampled outputs.
fn output_band(net: &ReluNetwork, d: &[(f64, f64)], seed: u64) -> Vec<(f64, f64)> {
    let mut r = rng::stream(seed, "band");
    let mut ys: Vec<f64> = (0..400)
        .map(|_| {
            let x: Vec<f64> = d.iter().map(|&(l, u)| r.random_range(l..=u)).collect();
            net.forward(&x).unwrap()[0]
        })
        .collect();
    ys.sort_by(f64::total_cmp);
    vec![(ys[100], ys[260])]
}

fn check_validity(net: &ReluNetwork, d: &[(f64, f64)], e: &[(f64, f64)], b: &BoundSet, seed: u64) -> usize {
    let mut r = rng::stream(seed, "sample");
    let mut accepted = 0;
    for _ in 0..20_000 {
        let x: Vec<f64> = d.iter().map(|&(l, u)| r.random_range(l..=u)).collect();
        let tr = net.forward_trace(&x).unwrap();
        let y = tr.output();
        if y.iter().zip(e).any(|(&v, &(l, u))| v < l || v > u) {
            continue;
        }
        accepted += 1;
        assert!(b.violation(&tr, 1e-8).is_none(), "{:?}", b.violation(&tr, 1e-8));
        if accepted == 300 {
            break;
        }
    }
    accepted
}

#[test]
fn every_scheme_gives_valid_bounds() {
    let d = [(-1.0, 1.0), (-1.0, 1.0)];
    for seed in 0..3 {
        let net = he_initialize(&[2, 6, 6, 1], seed).unwrap();
        let e = output_band(&net, &d, seed);
        for s in ["lrr", "rr", "lr", "semi-rr", "no-r", "no-r(0)", "semi-rr(0)", "lr(0)"] {
            let rep = run(&net, &d, Some(&e), s);
            assert!(check_validity(&net, &d, &e, &rep.bounds, seed) >= 100, "{s}");
            if s.ends_with("(0)") {
                assert!(rep.subproblem_timeouts <= rep.subproblems);
            }
        }
    }
}

fn mads(net: &ReluNetwork, d: &BoxBounds, e: Option<&BoxBounds>) -> Vec<f64> {
    BtKind::ALL
        .iter()
        .map(|&k| tighten(net, d, e, &BtScheme::new(k), &BtParams::default()).unwrap().mad)
        .collect()
}

#[test]
fn dominance_ordering() {
    let d = [(-1.0, 1.0), (-1.0, 1.0)];
    for seed in 0..4 {
        let net = he_initialize(&[2, 5, 5, 1], seed).unwrap();
        let e = output_band(&net, &d, seed);
        let m = mads(&net, &d, Some(&e));
        let (lrr, rr, lr, semi, nor) = (m[0], m[1], m[2], m[3], m[4]);
        assert!(nor <= semi + 1e-9 && semi <= lr + 1e-9, "{m:?}");
        assert!(semi <= rr + 1e-9 && rr <= lrr + 1e-9, "{m:?}");
        let m = mads(&net, &d, None);
        assert!((m[4] - m[3]).abs() <= 1e-9 && (m[3] - m[2]).abs() <= 1e-9, "{m:?}");
    }
}

#[test]
fn repeated_rounds_never_loosen() {
    let d = [(-1.0, 1.0), (-1.0, 1.0)];
    for seed in 0..3 {
        let net = he_initialize(&[2, 6, 6, 1], seed).unwrap();
        let e = output_band(&net, &d, seed);
        for kind in [BtKind::Rr, BtKind::SemiRr] {
            let mut last = f64::INFINITY;
            for rounds in 1..=3 {
                let s = BtScheme::new(kind).with_rounds(rounds).unwrap();
                let m = tighten(&net, &d, Some(&e), &s, &BtParams::default()).unwrap().mad;
                assert!(m <= last + 1e-9);
                last = m;
            }
        }
    }
}

/// `y = w.x + b` over an input box; the output bound is pulled in by `delta`
/// and the first input's upper bound is checked against the threshold.
#[test]
fn backward_threshold() {
    let mut r = rng::stream(5, "bbp");
    for _ in 0..20 {
        let n = r.random_range(2..6);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..2.0)).collect();
        let boxes: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let l = r.random_range(-1.0..0.5);
                (l, l + r.random_range(0.1..2.0))
            })
            .collect();
        let b0 = r.random_range(-1.0..1.0);
        let net = ReluNetwork::from_rows(vec![(vec![w.clone()], vec![b0])]).unwrap();
        let lf: f64 = w.iter().zip(&boxes).map(|(wi, bx)| wi * bx.0).sum::<f64>() + b0;
        let uf: f64 = w.iter().zip(&boxes).map(|(wi, bx)| wi * bx.1).sum::<f64>() + b0;
        let a = bbp_threshold(&w, &boxes, 0).unwrap();
        for frac in [0.3, 0.7, 0.95] {
            let delta = frac * (uf - lf);
            let rep = run(&net, &boxes, Some(&[(lf, uf - delta)]), "no-r");
            let (_, u0) = rep.bounds.get(NodeId::new(0, 0));
            if delta < a.delta_threshold {
                assert!((u0 - boxes[0].1).abs() <= 1e-9);
            } else {
                let want = ((delta - a.delta_threshold) / w[0]).min(boxes[0].1 - boxes[0].0);
                assert!(boxes[0].1 - u0 >= want - 1e-9, "{u0} {want}");
            }
        }
    }
}

#[test]
fn fixing_stable_nodes_keeps_optimum() {
    let d = [(-1.0, 1.0), (-1.0, 1.0)];
    for seed in 0..6 {
        let net = he_initialize(&[2, 6, 6, 1], seed).unwrap();
        let rep = run(&net, &d, None, "no-r");
        let opts = EmbedOptions {
            index: 0,
            style: EncodingStyle::Full,
        };
        let mut fixed = MilpModel::default();
        let emb = embed_network_with(&mut fixed, &net, &rep.bounds, &RelaxSpec::exact(), None, &opts).unwrap();
        let out = emb.output(0).unwrap();
        let mut free = fixed.clone();
        for z in emb.z_vars() {
            free.base.set_bounds(z, 0.0, 1.0).unwrap();
        }
        for k in 1..net.depth() {
            for j in 0..net.layer_dims()[k] {
                let id = NodeId::new(k, j);
                let (l, u) = rep.bounds.get(id);
                free.base.set_bounds(emb.x(id).unwrap(), 0.0, u.max(0.0)).unwrap();
                free.base.set_bounds(emb.s(id).unwrap(), 0.0, (-l).max(0.0)).unwrap();
            }
        }
        for sense in [Sense::Minimize, Sense::Maximize] {
            fixed.base.set_objective(sense, &[(out, 1.0)], 0.0).unwrap();
            free.base.set_objective(sense, &[(out, 1.0)], 0.0).unwrap();
            let a = solve_milp(&fixed, &SolveParams::default()).unwrap().objective_value.unwrap();
            let b = solve_milp(&free, &SolveParams::default()).unwrap().objective_value.unwrap();
            assert!((a - b).abs() <= 1e-7, "{a} {b}");
        }
    }
}

#[test]
fn report_fractions() {
    let net = he_initialize(&[2, 8, 8, 1], 3).unwrap();
    let rep = run(&net, &[(-1.0, 1.0), (-1.0, 1.0)], None, "rr");
    assert!(rep.dead_fraction >= 0.0 && rep.active_fraction >= 0.0 && rep.unstable_fraction() >= -1e-12);
    assert_eq!(rep.node_times.len(), 4);
    assert_eq!(rep.subproblems, 2 * (2 + 8 + 8 + 1));
    assert!(rep.mrd.is_none());
    assert!(rep.is_exact());
}

#[test]
fn singleton_output_at_attained_level() {
    for seed in 0..6 {
        let net = he_initialize(&[1, 10, 5, 1], seed).unwrap();
        let mid = net.forward(&[0.3]).unwrap()[0];
        for s in ["rr", "semi-rr", "no-r"] {
            let r = run(&net, &[(-1.0, 1.0)], Some(&[(mid, mid)]), s);
            let (l, u) = r.bounds.get(NodeId::new(0, 0));
            assert!(l <= 0.3 + 1e-9 && 0.3 <= u + 1e-9, "{s} seed {seed}");
        }
    }
}
