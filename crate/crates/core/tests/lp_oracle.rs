use gridmpc_core::lpcore::{
    enumerate_vertices_oracle, solve, solve_with, LpProblem, LpStatus, PivotRule, SolverOptions,
    Tolerances,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lp(rng: &mut ChaCha8Rng) -> LpProblem {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let coef = |rng: &mut ChaCha8Rng| rng.gen_range(-5..=5) as f64;
    let mut p = LpProblem {
        cost: (0..n).map(|_| coef(rng)).collect(),
        ..Default::default()
    };
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| coef(rng)).collect();
        let rhs = coef(rng);
        if rng.gen_bool(0.25) {
            p.a_eq.push(row);
            p.b_eq.push(rhs);
        } else {
            p.a_ub.push(row);
            p.b_ub.push(rhs);
        }
    }
    for _ in 0..n {
        let (l, u) = match rng.gen_range(0..10) {
            0 => (f64::NEG_INFINITY, f64::INFINITY),
            1 => (f64::NEG_INFINITY, rng.gen_range(0..=5) as f64),
            2 | 3 => (0.0, rng.gen_range(1..=5) as f64),
            4 => (rng.gen_range(-3..=0) as f64, rng.gen_range(1..=4) as f64),
            _ => (0.0, f64::INFINITY),
        };
        p.lb.push(l);
        p.ub.push(u);
    }
    p
}

#[test]
fn solver_matches_vertex_enumeration_on_random_tiny_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; 3];
    for case in 0..300 {
        let p = random_lp(&mut rng);
        let s = solve(&p, Tolerances::default()).unwrap();
        let o = enumerate_vertices_oracle(&p).unwrap();
        assert_eq!(s.status, o.status, "case {case}: {p:?}");
        if s.status == LpStatus::Optimal {
            assert!(
                (s.objective - o.objective).abs() <= 1e-8,
                "case {case}: {} vs {}",
                s.objective,
                o.objective
            );
            assert!(p.max_violation(&s.x) <= 1e-8);
        }
        counts[s.status as usize] += 1;
    }
    // The generator should exercise every status.
    assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
}

#[test]
fn dantzig_rule_matches_bland_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions {
        pivot_rule: PivotRule::Dantzig,
        ..Default::default()
    };
    for _ in 0..200 {
        let p = random_lp(&mut rng);
        let a = solve(&p, Tolerances::default()).unwrap();
        let b = solve_with(&p, &opts).unwrap();
        assert_eq!(a.status, b.status);
        if a.is_optimal() {
            assert!((a.objective - b.objective).abs() < 1e-8);
        }
    }
}

proptest! {
    #[test]
    fn duplicating_a_constraint_keeps_the_optimum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_lp(&mut rng);
        let mut q = p.clone();
        if !q.a_ub.is_empty() {
            q.a_ub.push(q.a_ub[0].clone());
            q.b_ub.push(q.b_ub[0]);
        } else {
            q.a_eq.push(q.a_eq[0].clone());
            q.b_eq.push(q.b_eq[0]);
        }
        let a = solve(&p, Tolerances::default()).unwrap();
        let b = solve(&q, Tolerances::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.is_optimal() {
            prop_assert!((a.objective - b.objective).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_the_cost_scales_the_objective(seed in 0u64..10_000, k in 1u32..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_lp(&mut rng);
        let k = k as f64 * 0.75;
        let mut q = p.clone();
        q.cost.iter_mut().for_each(|c| *c *= k);
        let a = solve(&p, Tolerances::default()).unwrap();
        let b = solve(&q, Tolerances::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.is_optimal() {
            prop_assert!((k * a.objective - b.objective).abs() < 1e-8 * (1.0 + b.objective.abs()));
            // The scaled problem's optimizer is optimal for the original.
            prop_assert!((p.objective_at(&b.x) - a.objective).abs() < 1e-8 * (1.0 + a.objective.abs()));
        }
    }
}
