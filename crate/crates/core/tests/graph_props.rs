use blanket_core::scm::{select_target, MbBand};
use blanket_core::{generate_er_dag, Dag, NodeSet};
use proptest::prelude::*;

/// Every simple path in the skeleton from `a` to `b`.
fn simple_paths(dag: &Dag, a: usize, b: usize) -> Vec<Vec<usize>> {
    let n = dag.node_count();
    let mut adj = vec![Vec::new(); n];
    for (p, c) in dag.edges() {
        adj[p].push(c);
        adj[c].push(p);
    }
    let mut out = Vec::new();
    let mut stack = vec![(vec![a], 0usize)];
    while let Some((path, next)) = stack.pop() {
        let v = *path.last().unwrap();
        if v == b {
            out.push(path);
            continue;
        }
        if next < adj[v].len() {
            let w = adj[v][next];
            stack.push((path.clone(), next + 1));
            if !path.contains(&w) {
                let mut p = path;
                p.push(w);
                stack.push((p, 0));
            }
        }
    }
    out
}

fn is_ancestor_or_self(dag: &Dag, a: usize, of: usize) -> bool {
    let mut stack = vec![of];
    let mut seen = vec![false; dag.node_count()];
    while let Some(v) = stack.pop() {
        if v == a {
            return true;
        }
        for &p in dag.parents(v) {
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    false
}

/// A path is blocked by `z` when some interior node is a non-collider in `z`
/// or a collider with no descendant (itself included) in `z`.
fn oracle_d_separated(dag: &Dag, a: usize, b: usize, z: &NodeSet) -> bool {
    let edge = |p: usize, c: usize| dag.parents(c).contains(&p);
    simple_paths(dag, a, b).iter().all(|path| {
        path.windows(3).any(|w| {
            let (u, v, x) = (w[0], w[1], w[2]);
            if edge(u, v) && edge(x, v) {
                !z.iter().any(|s| is_ancestor_or_self(dag, v, s))
            } else {
                z.contains(v)
            }
        })
    })
}

fn small_dag() -> impl Strategy<Value = Dag> {
    (2usize..9, 0.0f64..0.9, any::<u64>()).prop_map(|(n, d, s)| generate_er_dag(n, d, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn d_separation_agrees_with_path_enumeration(dag in small_dag(), picks in proptest::collection::vec(any::<u32>(), 3..12)) {
        let n = dag.node_count();
        let a = picks[0] as usize % n;
        let b = picks[1] as usize % n;
        prop_assume!(a != b);
        let z: NodeSet = picks[2..].iter().map(|&p| p as usize % n).filter(|&v| v != a && v != b).collect();
        let expected = oracle_d_separated(&dag, a, b, &z);
        prop_assert_eq!(dag.d_separated(a, b, &z).unwrap(), expected);
        prop_assert_eq!(dag.d_separated_reachability(a, b, &z).unwrap(), expected);
    }

    #[test]
    fn boundary_shields_target(dag in small_dag(), y in any::<u32>()) {
        let y = y as usize % dag.node_count();
        let mb = dag.markov_boundary(y).unwrap();
        prop_assert!(!mb.contains(y));
        for v in (0..dag.node_count()).filter(|&v| v != y && !mb.contains(v)) {
            prop_assert!(dag.d_separated(y, v, &mb).unwrap());
        }
        // removing any member breaks the separation from something
        for m in mb.iter() {
            let mut smaller = mb.clone();
            smaller.remove(m);
            let shielded = (0..dag.node_count()).filter(|&v| v != y && !smaller.contains(v))
                .all(|v| dag.d_separated(y, v, &smaller).unwrap());
            prop_assert!(!shielded);
        }
    }

    #[test]
    fn topological_order_respects_edges(dag in small_dag()) {
        let order = dag.topological_order();
        let mut pos = vec![0; dag.node_count()];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        for (p, c) in dag.edges() {
            prop_assert!(pos[p] < pos[c]);
        }
    }

    #[test]
    fn layers_nest_and_start_at_boundary(dag in small_dag(), y in any::<u32>()) {
        let y = y as usize % dag.node_count();
        let layers = dag.layered_blankets(y, 4).unwrap();
        prop_assert_eq!(&layers[0], &dag.markov_boundary(y).unwrap());
        for w in layers.windows(2) {
            prop_assert!(w[0].is_subset(&w[1]));
        }
        let rank = dag.blanket_rank(y).unwrap();
        for v in 0..dag.node_count() {
            prop_assert_eq!(rank[v] == Some(1), layers[0].contains(v));
        }
        let neighbours: NodeSet = dag.parents(y).iter().chain(dag.children(y)).copied().collect();
        prop_assert_eq!(dag.proximity_mask(y, 1).unwrap(), neighbours);
    }

    #[test]
    fn json_round_trip(dag in small_dag()) {
        let text = serde_json::to_string(&dag).unwrap();
        let back: Dag = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.edges(), dag.edges());
        prop_assert_eq!(back.target(), dag.target());
    }
}

#[test]
fn er_edge_count_matches_binomial_mean() {
    let (n, d, reps) = (30usize, 0.15, 400u64);
    let pairs = (n * (n - 1) / 2) as f64;
    let total: usize = (0..reps).map(|s| generate_er_dag(n, d, s).unwrap().edge_count()).sum();
    let mean = total as f64 / reps as f64;
    let se = (pairs * d * (1.0 - d) / reps as f64).sqrt();
    assert!((mean - pairs * d).abs() < 4.0 * se, "mean {mean} vs {}", pairs * d);
}

#[test]
fn target_choice_is_uniform_over_qualifying_nodes() {
    let dag = generate_er_dag(12, 0.3, 5).unwrap();
    let band = MbBand::new(0.1, 0.9).unwrap();
    let qualifying: Vec<usize> = (0..12).filter(|&v| band.contains(dag.mb_ratio_of(v).unwrap())).collect();
    assert!(qualifying.len() >= 3);
    let draws = 6000;
    let mut counts = vec![0usize; 12];
    for s in 0..draws {
        counts[select_target(&dag, &band, s).unwrap()] += 1;
    }
    assert!(counts.iter().enumerate().all(|(v, &c)| c == 0 || qualifying.contains(&v)));
    let expected = draws as f64 / qualifying.len() as f64;
    let chi2: f64 = qualifying.iter().map(|&v| (counts[v] as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantiles of chi-square, 1..=11 degrees of freedom
    const Q999: [f64; 11] = [10.83, 13.82, 16.27, 18.47, 20.52, 22.46, 24.32, 26.12, 27.88, 29.59, 31.26];
    let limit = Q999[qualifying.len() - 2];
    assert!(chi2 < limit, "chi2 {chi2} over {} cells (limit {limit})", qualifying.len());
}
