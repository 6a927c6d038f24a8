use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salm_core::guidance::GlobalGuidance;
use salm_core::rlnm::graph::{build_st_graph, StGraph};
use salm_core::rlnm::network::{encode, output_hash, st_forward, PolicyWeights};
use salm_core::rlnm::tensor::{attention, multi_head, MultiHeadWeights};
use salm_core::sim::spawn_scenario;
use salm_core::types::TaskKind;
use salm_core::Matrix;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

// plain loops, nothing shared with the code under test
fn brute_attention(q: &Matrix, k: &Matrix, v: &Matrix, d_h: usize) -> Vec<Vec<f64>> {
    let (n, m, dv) = (q.rows(), k.rows(), v.cols());
    let mut out = vec![vec![0.0; dv]; n];
    for i in 0..n {
        let logits: Vec<f64> = (0..m)
            .map(|j| (0..q.cols()).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() / (d_h as f64).sqrt())
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..m {
            for c in 0..dv {
                out[i][c] += e[j] / z * v[(j, c)];
            }
        }
    }
    out
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..12));
        let scale = [1.0, 10.0, 300.0][rng.gen_range(0..3)];
        let s = random(&mut rng, r, c, scale).softmax_rows();
        for i in 0..r {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
            assert!(s.row(i).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

#[test]
fn attention_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (n, m, d, dv) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..9), rng.gen_range(1..6));
        let (q, k, v) = (random(&mut rng, n, d, 2.0), random(&mut rng, m, d, 2.0), random(&mut rng, m, dv, 2.0));
        let got = attention(&q, &k, &v, d).unwrap();
        let want = brute_attention(&q, &k, &v, d);
        for i in 0..n {
            for c in 0..dv {
                assert!((got[(i, c)] - want[i][c]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn multi_head_matches_per_head_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (dim, heads, n) = (8, 2, 5);
    let w = MultiHeadWeights {
        w_q: random(&mut rng, dim, dim, 0.5),
        w_k: random(&mut rng, dim, dim, 0.5),
        w_v: random(&mut rng, dim, dim, 0.5),
        w_o: random(&mut rng, dim, dim, 0.5),
        b_o: random(&mut rng, 1, dim, 0.5),
    };
    let x = random(&mut rng, n, dim, 1.0);
    let got = multi_head(&x, &x, &x, &w, heads).unwrap();
    let (q, k, v) = (x.matmul(&w.w_q).unwrap(), x.matmul(&w.w_k).unwrap(), x.matmul(&w.w_v).unwrap());
    let d_h = dim / heads;
    let mut concat = vec![vec![0.0; dim]; n];
    for h in 0..heads {
        let cols = h * d_h..(h + 1) * d_h;
        let part = brute_attention(
            &q.slice_cols(cols.start, cols.end),
            &k.slice_cols(cols.start, cols.end),
            &v.slice_cols(cols.start, cols.end),
            d_h,
        );
        for i in 0..n {
            concat[i][cols.clone()].copy_from_slice(&part[i]);
        }
    }
    for i in 0..n {
        for j in 0..dim {
            let want: f64 = (0..dim).map(|c| concat[i][c] * w.w_o[(c, j)]).sum::<f64>() + w.b_o[(0, j)];
            assert!((got[(i, j)] - want).abs() < 1e-9);
        }
    }
}

fn permuted(g: &StGraph, perm: &[usize]) -> StGraph {
    let rows: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|p| p + 1)).collect();
    StGraph {
        agent_ids: rows.iter().map(|&r| g.agent_ids[r]).collect(),
        frames: g.frames.iter().map(|f| f.select_rows(&rows)).collect(),
    }
}

#[test]
fn spatial_permutation_equivariance() {
    let w: PolicyWeights<f64> = PolicyWeights::seeded(11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut world = spawn_scenario(5, 10, TaskKind::P2p).unwrap();
    let g = GlobalGuidance::point_to_point(world.robot.goal);
    let mut hist = vec![world.clone()];
    for _ in 0..3 {
        world = salm_core::sim::step_world(&world, salm_core::types::LocalAction::new(0.0, 0.8), &Default::default());
        hist.push(world.clone());
    }
    let graph = build_st_graph(&hist, &g, 4);
    let base = st_forward(&graph, &w).unwrap();
    let fused: Matrix = encode(&graph, &w).unwrap();
    let n = graph.agents() - 1;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pg = permuted(&graph, &perm);
        let out = st_forward(&pg, &w).unwrap();
        let rows: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|p| p + 1)).collect();
        assert!(out.x_s.max_abs_diff(&base.x_s.select_rows(&rows)) < 1e-9);
        assert!(out.x_t.max_abs_diff(&base.x_t.select_rows(&rows)) < 1e-9);
        let pf = encode(&pg, &w).unwrap();
        assert!(pf.max_abs_diff(&fused.select_rows(&rows)) < 1e-9);
    }
}

#[test]
fn encoder_output_is_pinned() {
    // ten pedestrians, seeded weights: a change here means the network math changed
    let world = spawn_scenario(7, 10, TaskKind::P2p).unwrap();
    let g = GlobalGuidance::point_to_point(world.robot.goal);
    let graph = build_st_graph(&[world], &g, 4);
    let w: PolicyWeights<f64> = PolicyWeights::seeded(0);
    assert_eq!(w.hash(), WEIGHTS_HASH);
    assert_eq!(output_hash(&encode(&graph, &w).unwrap()), ENCODER_HASH);
}

const WEIGHTS_HASH: &str = "b84a6cd29e1e5e81860df90c94b907926c1c14047bb78535b94e0f2f74021b23";
const ENCODER_HASH: &str = "04c2dcf3a3ae774b";
