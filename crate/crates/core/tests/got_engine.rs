use proptest::prelude::*;

use salm_core::episode::{PlannerConfig, PlannerKind};
use salm_core::eval::{run_spec, EpisodeSpec};
use salm_core::lfm::{GotGraph, Thought, ThoughtRole};
use salm_core::llm::{BackendConfig, FaultConfig};
use salm_core::types::TaskKind;

#[derive(Debug, Clone)]
enum Op {
    Generate { at: usize, k: usize },
    Aggregate { picks: Vec<usize> },
    Refine { at: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<usize>(), 1usize..4).prop_map(|(at, k)| Op::Generate { at, k }),
        prop::collection::vec(any::<usize>(), 1..5).prop_map(|picks| Op::Aggregate { picks }),
        any::<usize>().prop_map(|at| Op::Refine { at }),
    ]
}

fn note(c: &str) -> Thought {
    Thought::new(0, ThoughtRole::Note, c)
}

proptest! {
    #[test]
    fn random_operation_sequences_stay_acyclic(ops in prop::collection::vec(op(), 100)) {
        let mut g = GotGraph::new();
        g.add_vertex(note("root"));
        for o in ops {
            let n = g.vertices.len();
            match o {
                Op::Generate { at, k } => {
                    g.apply_generation(at % n, k, |p, i| note(&format!("{}.{i}", p.content))).unwrap();
                }
                Op::Aggregate { picks } => {
                    let mut src: Vec<usize> = picks.iter().map(|p| p % n).collect();
                    src.sort_unstable();
                    src.dedup();
                    g.apply_aggregation(&src, |ts| note(&format!("agg of {}", ts.len()))).unwrap();
                }
                Op::Refine { at } => {
                    g.apply_refine(at % n, |t| note(&format!("{}'", t.content))).unwrap();
                }
            }
            prop_assert!(g.is_acyclic());
        }
    }
}

#[test]
fn operations_on_missing_vertices_fail() {
    let mut g = GotGraph::new();
    assert!(g.apply_generation(0, 1, |_, _| note("x")).is_err());
    assert!(g.apply_aggregation(&[], |_| note("x")).is_err());
    assert!(g.apply_refine(3, |_| note("x")).is_err());
}

fn assert_topology(g: &GotGraph) {
    assert_eq!(g.vertices.len(), 10);
    for role in [ThoughtRole::VerifyRl, ThoughtRole::VerifyLm, ThoughtRole::VerifyPair] {
        assert_eq!(g.count(1, role), 1);
    }
    assert_eq!(g.count(1, ThoughtRole::Checklist), 3);
    assert_eq!(g.count(2, ThoughtRole::ScoreIndividual), 2);
    assert_eq!(g.count(3, ThoughtRole::Aggregate), 1);
    assert_eq!(g.count(4, ThoughtRole::FinalScores), 1);
    assert!(g.is_acyclic());
}

fn check_episode(backend: BackendConfig, seed: u64) -> usize {
    let factory = PlannerConfig::new(PlannerKind::Salm).with_backend(backend).prepare().unwrap();
    let r = run_spec(&EpisodeSpec::new(TaskKind::P2p, seed), &factory);
    assert!(!r.crashed());
    let mut invocations = 0;
    for s in &r.log.steps {
        let w = s.weights.expect("SALM fuses every step");
        assert!((w.s1 + w.s2 - 1.0).abs() <= 1e-9, "{w:?}");
        if s.lfm_ran {
            invocations += 1;
            assert_topology(s.got.as_ref().expect("graphs are logged"));
        }
    }
    invocations
}

#[test]
fn every_evaluation_has_the_fixed_topology() {
    assert!(check_episode(BackendConfig::mock(), 3) > 0);
}

#[test]
fn topology_and_weight_sum_survive_faults() {
    let mut b = BackendConfig::mock();
    b.faults = Some(FaultConfig { probability: 0.3, seed: 5 });
    assert!(check_episode(b, 4) > 0);
}
