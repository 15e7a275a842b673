//! Oracle tests for the marking and refinement operations and the adaptive
//! loop: hand-computed marking sets, structural effects of each refinement
//! branch, and whole-run invariants on the benchmark problem.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttsgfem::adapt::{
    mark_doerfler, refine_rank, refine_stochastic, run, AdaptConfig, AdaptError, RefineTag,
};
use ttsgfem::lognormal::FieldSpec;
use ttsgfem::tt::{Core, TTTensor};

fn random_tt(dims: &[usize], ranks: &[usize], rng: &mut ChaCha8Rng) -> TTTensor {
    assert_eq!(ranks.len(), dims.len() + 1);
    let cores = dims
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let (rl, rr) = (ranks[k], ranks[k + 1]);
            let mut c = Core::zeros(rl, n, rr);
            for v in &mut c.data {
                *v = rng.gen_range(-1.0..1.0);
            }
            c
        })
        .collect();
    TTTensor::new(cores)
}

fn bench_cfg(decay: f64, seed: u64) -> AdaptConfig {
    let mut cfg = AdaptConfig::new(Some(FieldSpec::benchmark(100, decay)));
    cfg.seed = seed;
    cfg
}

#[test]
fn doerfler_takes_the_minimal_descending_prefix() {
    assert_eq!(mark_doerfler(&[4.0, 3.0, 2.0, 1.0], 0.5), vec![0, 1]);
    assert_eq!(mark_doerfler(&[1.0, 4.0, 2.0, 3.0], 0.5), vec![1, 3]);
    // A tiny fraction still marks the largest contributor.
    assert_eq!(mark_doerfler(&[4.0, 3.0, 2.0, 1.0], 0.01), vec![0]);
}

#[test]
fn doerfler_threshold_near_one_marks_everything() {
    assert_eq!(mark_doerfler(&[4.0, 3.0, 2.0, 1.0], 0.999_999), vec![0, 1, 2, 3]);
    assert_eq!(mark_doerfler(&[7.0], 0.5), vec![0]);
}

#[test]
fn doerfler_handles_zeros_and_ties() {
    assert_eq!(mark_doerfler(&[0.0, 0.0, 0.0], 0.5), Vec::<usize>::new());
    // Equal values: the lower original index wins the prefix slot.
    assert_eq!(mark_doerfler(&[2.0, 1.0, 2.0], 0.3), vec![0]);
    assert_eq!(mark_doerfler(&[1.0, 2.0, 2.0], 0.5), vec![1, 2]);
}

#[test]
fn doerfler_prefix_is_sufficient_and_minimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let theta = rng.gen_range(0.05..0.95);
        let marked = mark_doerfler(&values, theta);
        let total: f64 = values.iter().sum();
        let marked_sum: f64 = marked.iter().map(|&i| values[i]).sum();
        assert!(marked_sum >= theta * total * (1.0 - 1e-12));
        // Dropping the smallest marked value must fall below the target.
        let smallest = marked.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        assert!(marked_sum - smallest < theta * total);
    }
}

#[test]
fn stochastic_refinement_increments_marked_dimensions() {
    assert_eq!(refine_stochastic(&[2, 2], &[0]), vec![3, 2]);
    assert_eq!(refine_stochastic(&[2, 2], &[]), vec![2, 2]);
    // Marking one past the active dimensions activates a new one at degree 2.
    assert_eq!(refine_stochastic(&[2], &[1]), vec![2, 2]);
    assert_eq!(refine_stochastic(&[2, 3], &[0, 2]), vec![3, 3, 2]);
}

#[test]
fn rank_refinement_adds_a_unit_kick() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_tt(&[5, 3, 4], &[1, 2, 2, 1], &mut rng);
    let wp = refine_rank(&w, 10, &mut rng).unwrap();
    assert_eq!(wp.ranks(), vec![1, 3, 3, 1]);
    assert_eq!(wp.dims(), w.dims());

    let delta = 1e-6 * w.norm();
    let diff = wp.add(&w.scale(-1.0));
    assert!((diff.norm_orthogonal() - delta).abs() <= 1e-9 * delta);
    // The kick is rank one with unit norm, so no entry moves by more than delta.
    let max_move = diff.dense().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_move <= delta * (1.0 + 1e-12));
}

#[test]
fn rank_refinement_of_zero_uses_a_unit_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = TTTensor::zeros(&[3, 2]);
    let wp = refine_rank(&w, 10, &mut rng).unwrap();
    assert_eq!(wp.ranks(), vec![1, 2, 1]);
    assert!((wp.norm() - 1.0).abs() <= 1e-12);
}

#[test]
fn rank_refinement_respects_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_tt(&[5, 3, 4], &[1, 2, 2, 1], &mut rng);
    let err = refine_rank(&w, 2, &mut rng).unwrap_err();
    assert!(matches!(err, AdaptError::RankCap { cap: 2 }));
}

#[test]
fn huge_tolerance_stops_after_one_iteration() {
    let mut cfg = bench_cfg(2.0, 1);
    cfg.tolerance = 1e12;
    let state = run(&cfg).unwrap();
    assert_eq!(state.log.len(), 1);
    assert_eq!(state.iterates.len(), 1);
    // No refinement was applied: initial mesh, degrees and ranks survive.
    assert_eq!(state.meshes.len(), 1);
    assert_eq!(state.mesh.n_triangles(), 32);
    assert_eq!(state.degrees, vec![2]);
    assert_eq!(state.w.dims(), vec![9, 2]);
    assert_eq!(state.w.ranks(), vec![1, 2, 1]);
    let rec = &state.log[0];
    assert_eq!(rec.iteration, 1);
    assert!(rec.report.eta_all <= cfg.tolerance);
}

#[test]
fn unit_coefficient_always_refines_the_mesh() {
    let mut cfg = AdaptConfig::new(None);
    cfg.tolerance = 1e-12;
    cfg.max_iterations = 4;
    cfg.seed = 2;
    let state = run(&cfg).unwrap();
    assert_eq!(state.log.len(), 4);
    for rec in &state.log {
        assert_eq!(rec.tag, RefineTag::Det);
        // A deterministic coefficient has no parametric tail at all.
        assert_eq!(rec.report.eta_param, 0.0);
        assert!(rec.report.eta_param_m.iter().all(|&v| v == 0.0));
        assert!(rec.report.eta_disc <= 1e-8, "eta_disc = {}", rec.report.eta_disc);
        assert!(rec.report.eta_det > 1e-3);
    }
    for pair in state.log.windows(2) {
        assert!(pair[1].m_dofs > pair[0].m_dofs);
    }
    assert_eq!(state.degrees, vec![2]);
    assert_eq!(state.w.ranks(), vec![1, 2, 1]);
}

#[test]
fn benchmark_run_decreases_the_total_estimator() {
    let mut cfg = bench_cfg(2.0, 7);
    cfg.tolerance = 1e-9;
    cfg.max_iterations = 15;
    let state = run(&cfg).unwrap();
    assert_eq!(state.log.len(), 15);
    assert_eq!(state.iterates.len(), 15);
    let first = &state.log[0];
    let last = &state.log[14];
    assert!(last.report.eta_all <= first.report.eta_all);

    for (i, rec) in state.log.iter().enumerate() {
        assert_eq!(rec.iteration, i + 1);
        // The logged branch is the argmax with DET > PARAM > RANK on ties.
        let (det, par, disc) = (rec.report.eta_det, rec.report.eta_param, rec.report.eta_disc);
        let expect = if det >= par && det >= disc {
            RefineTag::Det
        } else if par >= disc {
            RefineTag::Param
        } else {
            RefineTag::Rank
        };
        assert_eq!(rec.tag, expect, "iteration {}", rec.iteration);
        for (eta, name) in
            [(det, "det"), (par, "param"), (disc, "disc"), (rec.report.eta_all, "all")]
        {
            assert!(eta.is_finite() && eta >= 0.0, "eta_{name} at iteration {}", rec.iteration);
        }
    }

    for pair in state.log.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(b.tt_dofs > a.tt_dofs, "tt-dofs must grow on every branch");
        assert!(b.m_dofs >= a.m_dofs);
        assert!(b.op_dofs >= a.op_dofs);
    }

    // Exactly one of mesh, degrees, ranks changes per iteration.
    for i in 0..state.iterates.len() - 1 {
        let (a, b) = (&state.iterates[i], &state.iterates[i + 1]);
        match state.log[i].tag {
            RefineTag::Det => {
                assert_eq!(b.mesh_level, a.mesh_level + 1);
                assert_eq!(b.degrees, a.degrees);
                assert_eq!(b.w.ranks(), a.w.ranks());
            }
            RefineTag::Param => {
                assert_eq!(b.mesh_level, a.mesh_level);
                assert_ne!(b.degrees, a.degrees);
                let grown: usize = b.degrees.iter().sum();
                let old: usize = a.degrees.iter().sum();
                assert!(grown > old);
                for (m, &d) in a.degrees.iter().enumerate() {
                    assert!(b.degrees[m] >= d);
                }
                for &d in &b.degrees[a.degrees.len()..] {
                    assert_eq!(d, 2);
                }
                let ra = a.w.ranks();
                let rb = b.w.ranks();
                assert_eq!(&rb[..ra.len()], &ra[..]);
                assert!(rb[ra.len()..].iter().all(|&r| r == 1));
            }
            RefineTag::Rank => {
                assert_eq!(b.mesh_level, a.mesh_level);
                assert_eq!(b.degrees, a.degrees);
                let ra = a.w.ranks();
                let rb = b.w.ranks();
                assert_eq!(ra.len(), rb.len());
                for j in 1..ra.len() - 1 {
                    assert_eq!(rb[j], ra[j] + 1);
                }
            }
        }
    }
}

#[test]
fn fast_decay_shortens_the_expansion() {
    let mut slow = bench_cfg(2.0, 3);
    slow.tolerance = 1e-9;
    slow.max_iterations = 100;
    slow.max_tt_dofs = 20_000;
    let mut fast = slow.clone();
    fast.field = Some(FieldSpec::benchmark(100, 4.0));
    let state2 = run(&slow).unwrap();
    let state4 = run(&fast).unwrap();
    // Both runs must end on the tt-dofs budget for a fair comparison.
    assert!(state2.log.last().unwrap().tt_dofs >= slow.max_tt_dofs);
    assert!(state4.log.last().unwrap().tt_dofs >= fast.max_tt_dofs);
    let (m2, m4) = (state2.degrees.len(), state4.degrees.len());
    let d2 = *state2.degrees.iter().max().unwrap();
    let d4 = *state4.degrees.iter().max().unwrap();
    assert!(m4 < m2, "fast decay activated {m4} dimensions, slow decay {m2}");
    assert!(d4 > d2, "fast decay reached degree {d4}, slow decay {d2}");
}

#[test]
fn identical_seeds_reproduce_the_run() {
    let mut cfg = bench_cfg(2.0, 9);
    cfg.tolerance = 1e-9;
    cfg.max_iterations = 6;
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.log.len(), b.log.len());
    for (ra, rb) in a.log.iter().zip(&b.log) {
        assert_eq!(ra.tag, rb.tag);
        assert_eq!(ra.tt_dofs, rb.tt_dofs);
        assert!(ra.report.eta_all.to_bits() == rb.report.eta_all.to_bits());
        assert!(ra.report.eta_det.to_bits() == rb.report.eta_det.to_bits());
        assert!(ra.report.eta_param.to_bits() == rb.report.eta_param.to_bits());
        assert!(ra.report.eta_disc.to_bits() == rb.report.eta_disc.to_bits());
    }
}
