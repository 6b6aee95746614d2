mod common;

use common::oracle::{brute_force, instance, mul, node, sequence, Expected};
use proptest::prelude::*;
use trustreg_core::fixed::TrustWeight;
use trustreg_core::graph::{trust_score, PathOutcome, TrustEdge};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn agrees_with_brute_force(inst in instance()) {
        let got = inst.graph().find_trusted_path(&inst.query(), inst.max_depth).unwrap();
        let expected = brute_force(&inst);
        match (&got, &expected) {
            (PathOutcome::Found(path), Expected::Found { ties, score }) => {
                let seq = sequence(&path.edges, inst.target);
                prop_assert_eq!(path.score.raw(), *score);
                prop_assert_eq!(seq.len(), ties[0].len());
                prop_assert!(ties.contains(&seq));
                prop_assert_eq!(Some(&seq), expected.pick(inst.nonce));
            }
            (PathOutcome::NoPath { searched_depth }, Expected::NoPath { searched_depth: want }) => {
                prop_assert_eq!(searched_depth, want);
            }
            _ => prop_assert!(false, "engine {:?} vs oracle {:?}", got, expected),
        }
    }

    #[test]
    fn prefixes_never_score_below_the_path(inst in instance()) {
        if let PathOutcome::Found(path) = inst.graph().find_trusted_path(&inst.query(), inst.max_depth).unwrap() {
            let total = path.score;
            prop_assert!(total.raw() >= inst.threshold && total.raw() <= 10_000);
            prop_assert_eq!(trust_score(&path.edges).unwrap(), total);
            let mut running = 10_000u64;
            for (i, e) in path.edges.iter().enumerate() {
                running = mul(running, e.weight.raw() as u64);
                prop_assert!(trust_score(&path.edges[..=i]).unwrap().raw() as u64 == running);
                prop_assert!(running >= total.raw() as u64);
            }
        }
    }

    #[test]
    fn same_inputs_same_answer(inst in instance()) {
        let g = inst.graph();
        let q = inst.query();
        let first = g.find_trusted_path(&q, inst.max_depth).unwrap();
        prop_assert_eq!(&first, &g.find_trusted_path(&q, inst.max_depth).unwrap());

        // same edge set inserted in reverse order
        let mut rebuilt = trustreg_core::graph::TrustGraph::new();
        for i in (0..inst.nodes).rev() {
            rebuilt.add_issuer(g.issuer(&node(i)).unwrap().clone()).unwrap();
        }
        let mut edges: Vec<TrustEdge> = g.edges().collect();
        edges.reverse();
        for e in edges {
            rebuilt.upsert_edge(e).unwrap();
        }
        prop_assert_eq!(first, rebuilt.find_trusted_path(&q, inst.max_depth).unwrap());
    }

    #[test]
    fn raising_the_threshold_never_helps(inst in instance(), bump in 1u32..5_000) {
        let g = inst.graph();
        let mut strict = inst.query();
        strict.threshold = trustreg_core::fixed::Fixed4::from_raw((inst.threshold + bump).min(10_000));
        let loose = g.find_trusted_path(&inst.query(), inst.max_depth).unwrap();
        if let PathOutcome::Found(tight) = g.find_trusted_path(&strict, inst.max_depth).unwrap() {
            let loose = loose.found().expect("a stricter query found a path, so the looser one must");
            prop_assert!(loose.hop_count() <= tight.hop_count());
        }
    }

    /// Trust is one-way: edges leaving the credential issuer can only be
    /// used by paths that already passed through it.
    #[test]
    fn edges_out_of_the_target_change_nothing(inst in instance(), to in 0usize..12, w in 1u32..=10_000) {
        let to = to % inst.nodes;
        prop_assume!(to != inst.target);
        let mut g = inst.graph();
        let before = g.find_trusted_path(&inst.query(), inst.max_depth).unwrap();
        g.upsert_edge(TrustEdge::new(node(inst.target), node(to), TrustWeight::from_raw(w).unwrap())).unwrap();
        prop_assert_eq!(before, g.find_trusted_path(&inst.query(), inst.max_depth).unwrap());
    }
}

#[test]
fn a_single_edge_is_one_way() {
    let mut inst = common::oracle::Instance::random(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
    inst.nodes = 2;
    inst.edges = [((0, 1), 9_000)].into();
    inst.max_depth = 6;
    inst.threshold = 0;
    inst.sources = [0].into();
    inst.target = 1;
    assert!(inst.graph().find_trusted_path(&inst.query(), 6).unwrap().found().is_some());
    inst.sources = [1].into();
    inst.target = 0;
    assert_eq!(inst.graph().find_trusted_path(&inst.query(), 6).unwrap(), PathOutcome::NoPath { searched_depth: 1 });
}
