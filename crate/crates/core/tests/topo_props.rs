use proptest::prelude::*;
use rand::{seq::IndexedRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitonion_core::topo::{anonymity_sets, multi_compromise, observe, oracle, AsGraph, CompromiseScenario};

const MAX_NODES: usize = 7;

/// Random connected-ish graph on up to 8 ASes and a simple path in it.
fn random_case(seed: u64) -> (AsGraph, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8u32);
    let mut g = AsGraph::new();
    for a in 0..n {
        g.add_as(a, rng.random_range(0..20));
    }
    // spanning chain keeps the graph connected, extra edges add alternatives
    for a in 1..n {
        let b = rng.random_range(0..a);
        g.add_edge(a, b).unwrap();
    }
    let p = rng.random_range(0.0..0.6);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                g.add_edge(a, b).unwrap();
            }
        }
    }
    let target = rng.random_range(1..=MAX_NODES);
    let mut path = vec![rng.random_range(0..n)];
    while path.len() < target {
        let tip = *path.last().unwrap();
        let next: Vec<u32> = g.neighbors(tip).filter(|w| !path.contains(w)).collect();
        match next.choose(&mut rng) {
            Some(&w) => path.push(w),
            None => break,
        }
    }
    (g, path)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_brute_force(seed: u64) {
        let (g, path) = random_case(seed);
        for j in 0..path.len() {
            for known in [false, true] {
                let fast = observe(&g, &path, j, known, MAX_NODES).unwrap();
                let (s, d) = oracle::observe(&g, &path, j, known, MAX_NODES);
                prop_assert_eq!(&fast.senders, &s, "senders j={} known={} path={:?}", j, known, path);
                prop_assert_eq!(&fast.receivers, &d, "receivers j={} known={} path={:?}", j, known, path);
            }
        }
    }

    #[test]
    fn product_law_and_monotonicity(seed: u64) {
        let (g, path) = random_case(seed);
        for j in 0..path.len() {
            let sc = CompromiseScenario { path: path.clone(), compromised: vec![j], position_known: false, correlating: false };
            let unknown = anonymity_sets(&g, &sc, MAX_NODES).unwrap();
            prop_assert_eq!(unknown.s_r, unknown.s_s as u128 * unknown.s_d as u128);
            let known = anonymity_sets(&g, &CompromiseScenario { position_known: true, ..sc }, MAX_NODES).unwrap();
            prop_assert!(known.senders.is_subset_of(&unknown.senders));
            prop_assert!(known.receivers.is_subset_of(&unknown.receivers));
            prop_assert!(known.s_r <= unknown.s_r);
            // the true endpoints are always admitted
            prop_assert!(known.s_s >= 1 || g.hosts(path[0]) == Some(0));
        }
    }

    #[test]
    fn correlation_never_helps_the_user(seed: u64, mask: u8, known: bool) {
        let (g, path) = random_case(seed);
        let mut compromised: Vec<usize> = (0..path.len()).filter(|i| mask & (1 << i) != 0).collect();
        if compromised.is_empty() {
            compromised.push(0);
        }
        let sc = CompromiseScenario { path, compromised, position_known: known, correlating: true };
        let corr = multi_compromise(&g, &sc, MAX_NODES).unwrap();
        let indep = multi_compromise(&g, &CompromiseScenario { correlating: false, ..sc.clone() }, MAX_NODES).unwrap();
        prop_assert!(corr <= indep);
        if sc.compromised.len() == 1 {
            prop_assert_eq!(corr, indep);
        }
    }
}
