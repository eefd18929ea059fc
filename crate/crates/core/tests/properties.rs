mod support;

use kgprompt_core::kg::{EntityId, QueryKey, RelationId, Split, TripleIdx};
use kgprompt_core::prompt::{self, PipelineLine, PromptConfig, NEGATIVE_HEADER, NEIGHBOR_HEADER_PREFIX};
use kgprompt_core::subgraph::{self, ContextPath, Hop, NegativeSet};
use proptest::prelude::*;
use support::*;

fn is_subsequence<T: PartialEq>(sub: &[T], of: &[T]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

fn fake_path(i: u32) -> ContextPath {
    ContextPath {
        anchor: EntityId(0),
        hops: vec![Hop {
            triple: TripleIdx(i),
            relation: RelationId(0),
            entity: EntityId(i + 1),
            reversed: false,
            timestamp: None,
        }],
    }
}

fn lines(records: &[prompt::PromptRecord]) -> Vec<PipelineLine> {
    records.iter().map(PipelineLine::from).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enumeration_matches_brute_force(seed in any::<u64>()) {
        let kg = random_graph(seed);
        let brute = Brute::new(&kg);
        let queries = all_queries(&kg);
        let stride = (queries.len() / 60).max(1);
        for q in queries.iter().step_by(stride) {
            let errs = oracle_mismatches(&brute, q);
            prop_assert!(errs.is_empty(), "{}", errs.join("\n"));
        }
    }

    #[test]
    fn distances_are_symmetric_and_metric(seed in any::<u64>(), picks in prop::collection::vec(any::<u32>(), 3..30)) {
        let kg = random_graph(seed);
        let n = kg.entity_count() as u32;
        let es: Vec<EntityId> = picks.iter().map(|p| EntityId(p % n)).collect();
        let d = |a, b| kg.shortest_path_distance(a, b, 1_000).unwrap();
        for w in es.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            prop_assert_eq!(d(a, b), brute_distance(&kg, a, b));
            prop_assert_eq!(d(a, b), d(b, a));
            if let (Some(ab), Some(bc)) = (d(a, b), d(b, c)) {
                prop_assert!(d(a, c).unwrap() <= ab + bc);
            }
        }
    }

    #[test]
    fn capped_distance_agrees_with_uncapped(seed in any::<u64>(), a in any::<u32>(), b in any::<u32>(), cap in 0u32..4) {
        let kg = random_graph(seed);
        let n = kg.entity_count() as u32;
        let (a, b) = (EntityId(a % n), EntityId(b % n));
        let want = brute_distance(&kg, a, b).filter(|d| *d <= cap);
        prop_assert_eq!(kg.shortest_path_distance(a, b, cap).unwrap(), want);
    }

    #[test]
    fn ego_graph_is_the_radius_ball(seed in any::<u64>(), center in any::<u32>(), radius in 0u32..3) {
        let kg = random_graph(seed);
        let center = EntityId(center % kg.entity_count() as u32);
        let ego = subgraph::ego_graph(&kg, center, radius).unwrap();
        let within = |e| brute_distance(&kg, center, e).is_some_and(|d| d <= radius);
        let want: Vec<TripleIdx> = kg
            .triples(Split::Train)
            .iter()
            .enumerate()
            .filter(|(_, t)| within(t.head) || within(t.tail))
            .map(|(i, _)| TripleIdx(i as u32))
            .collect();
        prop_assert_eq!(ego.triples, want);
    }

    #[test]
    fn merge_respects_budget_and_priority(
        negs in 0usize..150,
        paths in 0usize..150,
        budget in 0usize..=150,
        seed in any::<u64>(),
        id in any::<u32>(),
    ) {
        let set = NegativeSet {
            query: QueryKey { split: Split::Test, id: id as u64 },
            entities: (0..negs as u32).map(EntityId).collect(),
        };
        let ps: Vec<ContextPath> = (0..paths as u32).map(fake_path).collect();
        let m = subgraph::merge_budget(&set, &ps, budget, seed);
        prop_assert_eq!(m.len(), budget.min(negs + paths));
        if !m.neighbors.is_empty() {
            prop_assert!(negs < budget);
            prop_assert_eq!(&m.negatives, &set.entities);
        }
        prop_assert!(is_subsequence(&m.negatives, &set.entities));
        prop_assert!(is_subsequence(&m.neighbors, &ps));
        prop_assert_eq!(m, subgraph::merge_budget(&set, &ps, budget, seed));
    }

    #[test]
    fn gold_is_never_a_negative(seed in any::<u64>()) {
        let kg = random_graph(seed);
        for q in all_queries(&kg) {
            prop_assert!(!subgraph::negatives(&kg, &q).entities.contains(&q.gold));
        }
    }

    #[test]
    fn heldout_prompts_do_not_leak(seed in any::<u64>(), p in 0usize..=2, budget in 0usize..=100) {
        let kg = random_graph(seed);
        let cfg = PromptConfig { p, budget, ..PromptConfig::default() };
        for split in [Split::Valid, Split::Test] {
            let records = prompt::build_dataset(&kg, split, &cfg, None).unwrap();
            let report = leakage_scan(&kg, &lines(&records));
            prop_assert!(report.clean(), "{:?}", report);
            prop_assert_eq!(report.prompts, 2 * kg.triples(split).len());
        }
    }

    #[test]
    fn contexts_are_deterministic(seed in any::<u64>(), sample_seed in any::<u64>(), budget in 0usize..=100) {
        let kg = random_graph(seed);
        let cfg = PromptConfig { p: 2, budget, seed: sample_seed, ..PromptConfig::default() };
        let opts = cfg.context_options();
        let queries = kg.build_queries(Split::Test);
        let forward: Vec<_> = queries.iter().map(|q| subgraph::extract(&kg, q, &opts).unwrap().merged).collect();
        let mut backward: Vec<_> = queries.iter().rev().map(|q| subgraph::extract(&kg, q, &opts).unwrap().merged).collect();
        backward.reverse();
        prop_assert_eq!(forward, backward);

        let write = || {
            let records = prompt::build_dataset(&kg, Split::Test, &cfg, None).unwrap();
            let mut buf = Vec::new();
            prompt::write_pipeline(&mut buf, "synthetic", Split::Test, &cfg.hash(), &records).unwrap();
            buf
        };
        prop_assert_eq!(write(), write());
    }

    #[test]
    fn ablations_drop_their_header(seed in any::<u64>()) {
        let kg = random_graph(seed);
        let no_negs = PromptConfig { use_negatives: false, ..PromptConfig::default() };
        let no_nbrs = PromptConfig { use_neighbors: false, p: 2, ..PromptConfig::default() };
        for r in prompt::build_dataset(&kg, Split::Test, &no_negs, None).unwrap() {
            prop_assert!(!r.prompt.contains(NEGATIVE_HEADER));
        }
        for r in prompt::build_dataset(&kg, Split::Test, &no_nbrs, None).unwrap() {
            prop_assert!(!r.prompt.contains(NEIGHBOR_HEADER_PREFIX));
        }
    }
}

#[test]
fn generator_respects_size_limits() {
    for seed in 0..50 {
        let kg = random_graph(seed);
        assert!(kg.entity_count() <= MAX_ENTITIES);
        assert!(kg.triples(Split::Train).len() <= MAX_TRIPLES);
        assert!(!kg.triples(Split::Test).is_empty());
    }
}
