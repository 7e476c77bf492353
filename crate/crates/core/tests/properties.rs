use astopo_core::evaluation::{log_q, naive_reconstruction, ranking_auc, threshold_reconstruction, EdgePosteriors};
use astopo_core::inference::{em_fit, fit, log_density, posterior_edge_prob, EmOptions, ModelParams};
use astopo_core::ingest::parse_paths;
use astopo_core::observation::{compact_classes, PairStore};
use astopo_core::pipeline::observe;
use astopo_core::simulator::{generate_ground_truth, SimConfig};
use proptest::prelude::*;

fn arb_params(m: usize) -> impl Strategy<Value = ModelParams> {
    (proptest::collection::vec(0.01f64..0.99, m), proptest::collection::vec(0.01f64..0.99, m), 0.01f64..0.99)
        .prop_map(|(a, b, r)| ModelParams::new(a, b, r).unwrap())
}

fn arb_vector(m: usize, t: u16) -> impl Strategy<Value = Vec<u16>> {
    proptest::collection::vec((0..=t).prop_flat_map(move |e| (Just(e), 0..=t - e)), m)
        .prop_map(|v| v.into_iter().flat_map(|(e, f)| [e, f]).collect())
}

fn arb_store() -> impl Strategy<Value = PairStore> {
    (2usize..25, 1usize..4, 1u16..5).prop_flat_map(|(n, m, t)| {
        let pairs: Vec<(u32, u32)> = (0..n as u32).flat_map(|a| (a + 1..n as u32).map(move |b| (a, b))).collect();
        let rows = proptest::collection::vec(proptest::option::weighted(0.4, arb_vector(m, t)), pairs.len());
        rows.prop_map(move |rows| {
            let rows =
                pairs.iter().zip(rows).filter_map(|(&p, v)| v.filter(|v| v.iter().any(|&x| x > 0)).map(|v| (p, v)));
            PairStore::from_rows(m, t as usize, n, rows.collect::<Vec<_>>()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn posterior_is_a_probability((p, v) in (1usize..6).prop_flat_map(|m| (arb_params(m), arb_vector(m, 8)))) {
        let q = posterior_edge_prob(&v, &p);
        prop_assert!((0.0..=1.0).contains(&q));
        let q_swapped = posterior_edge_prob(&v, &p.swapped());
        prop_assert!((q + q_swapped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positive_evidence_raises_the_posterior(
        (p, v, k) in (1usize..6).prop_flat_map(|m| (arb_params(m), arb_vector(m, 6), 0..m))
    ) {
        let mut more = v.clone();
        more[2 * k] += 1;
        let (q, q_more) = (posterior_edge_prob(&v, &p), posterior_edge_prob(&more, &p));
        if p.alpha[k] > p.beta[k] {
            prop_assert!(q_more >= q);
        } else if p.alpha[k] < p.beta[k] {
            prop_assert!(q_more <= q);
        }
    }

    #[test]
    fn em_never_decreases_the_density(store in arb_store()) {
        let table = compact_classes(&store).unwrap().table;
        let init = ModelParams::initial(&table);
        let model = em_fit(&table, &init, EmOptions { tol: 0.0, max_iters: 40 }).unwrap();
        let start = log_density(&table, &init);
        prop_assert!(model.trajectory[0] >= start - 1e-9 * start.abs().max(1.0));
        for w in model.trajectory.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(model.params.rho <= 0.5);
    }

    #[test]
    fn thresholds_nest_and_scores_order(store in arb_store(), lo in 0.05f64..0.5, gap in 0.0f64..0.45) {
        let table = compact_classes(&store).unwrap().table;
        let model = fit(&table).unwrap();
        let post = EdgePosteriors::new(&store, &model.params).unwrap();
        let wide = threshold_reconstruction(&post, lo).unwrap();
        let narrow = threshold_reconstruction(&post, lo + gap).unwrap();
        prop_assert!(narrow.edges.iter().all(|&(a, b)| wide.contains(a, b)));
        // Thresholding at one half is the posterior mode, so no edge list scores higher.
        let mode = threshold_reconstruction(&post, 0.5).unwrap();
        let naive = naive_reconstruction(&store);
        if !naive.is_empty() {
            prop_assert!(log_q(&mode, &post).unwrap().0 >= log_q(&naive, &post).unwrap().0 - 1e-9);
        }
        if !wide.is_empty() && wide.len() < post.total_pairs() as usize {
            let auc = ranking_auc(&post, &wide).unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_counts_cover_every_pair(seed in 0u64..1000, nodes in 10usize..80, periods in 1usize..4) {
        let cfg = SimConfig { nodes, periods, collectors: 3, p_false_edge: 0.3, seed, ..SimConfig::default() };
        let sim = generate_ground_truth(&cfg).unwrap();
        let set = parse_paths(sim.paths_text().as_bytes()).unwrap();
        let store = observe(&set).unwrap();
        let table = compact_classes(&store).unwrap().table;
        let n = store.num_nodes() as u64;
        prop_assert_eq!(table.classes().iter().map(|c| c.multiplicity).sum::<u64>(), n * (n - 1) / 2);
        for (_, v) in store.iter() {
            for k in 0..3 {
                prop_assert!((v[2 * k] + v[2 * k + 1]) as usize <= periods);
            }
        }
    }
}
