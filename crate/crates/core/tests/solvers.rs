use dualsched::mdp::{Action, TransitionKernel};
use dualsched::policy::point_mass;
use dualsched::simplex::{DenseSimplex, LpMethod, RevisedSimplex};
use dualsched::solvers::{policy_evaluation, relative_value_iteration, solve_lp, RviOptions};
use proptest::prelude::*;

const ACTIONS: [Action; 2] = [Action::IDLE, Action::ALL[2]];

/// Random dense MDP: `n` states, one or two actions each, all transition
/// probabilities positive (so every policy is unichain and aperiodic).
fn mdp() -> impl Strategy<Value = (Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|n| {
        let row = prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect::<Vec<f64>>()
        });
        let state = prop::collection::vec(row, 1..=2);
        (prop::collection::vec(state, n), prop::collection::vec(0.0f64..10.0, n))
    })
}

fn kernel(rows: &[Vec<Vec<f64>>]) -> TransitionKernel {
    TransitionKernel::from_rows(
        rows.iter()
            .map(|acts| acts.iter().enumerate().map(|(a, p)| (ACTIONS[a], p.iter().copied().enumerate().filter(|(_, x)| *x > 0.0).collect())).collect())
            .collect(),
    )
    .unwrap()
}

/// Stationary law by Gaussian elimination on `pi (P - I) = 0`, `sum pi = 1`.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut r: Vec<f64> = (0..n).map(|i| p[i][j] - if i == j { 1.0 } else { 0.0 }).collect();
            r.push(0.0);
            r
        })
        .collect();
    a[n - 1] = vec![1.0; n + 1];
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// Minimum average cost over all deterministic policies.
fn enumerate(rows: &[Vec<Vec<f64>>], cost: &[f64]) -> f64 {
    let n = rows.len();
    let total: usize = rows.iter().map(Vec::len).product();
    let mut best = f64::INFINITY;
    for mut code in 0..total {
        let p: Vec<Vec<f64>> = rows
            .iter()
            .map(|acts| {
                let a = code % acts.len();
                code /= acts.len();
                acts[a].clone()
            })
            .collect();
        let pi = stationary(&p);
        best = best.min((0..n).map(|s| pi[s] * cost[s]).sum());
    }
    best
}

fn rvi_opts() -> RviOptions {
    RviOptions { tol: 1e-12, max_iter: 200_000, tie_tol: 1e-12 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solvers_match_policy_enumeration((rows, cost) in mdp()) {
        let k = kernel(&rows);
        let oracle = enumerate(&rows, &cost);
        let (v, _) = relative_value_iteration(&k, &cost, 0, &rvi_opts()).unwrap();
        let revised = solve_lp(&k, &cost, 0, &LpMethod::Revised(RevisedSimplex::default())).unwrap();
        let dense = solve_lp(&k, &cost, 0, &DenseSimplex::default()).unwrap();
        prop_assert!((v.avg_cost - oracle).abs() < 1e-8, "rvi {} oracle {}", v.avg_cost, oracle);
        prop_assert!((revised.avg_cost - oracle).abs() < 1e-8, "revised {} oracle {}", revised.avg_cost, oracle);
        prop_assert!((dense.avg_cost - oracle).abs() < 1e-8, "dense {} oracle {}", dense.avg_cost, oracle);
    }

    #[test]
    fn occupation_measure_is_feasible((rows, cost) in mdp()) {
        let k = kernel(&rows);
        let lp = solve_lp(&k, &cost, 0, &LpMethod::default()).unwrap();
        prop_assert!(lp.balance_residual < 1e-8);
        prop_assert!(lp.occupation.mass.iter().all(|&q| q >= -1e-12));
        prop_assert!((lp.occupation.total() - 1.0).abs() < 1e-9);
        let e = policy_evaluation(&k, lp.policy.dists(), &cost).unwrap();
        prop_assert!((e.avg_cost - lp.avg_cost).abs() < 1e-8);
    }

    #[test]
    fn rvi_is_shift_invariant((rows, cost) in mdp(), shift in -50.0f64..50.0) {
        let k = kernel(&rows);
        let shifted: Vec<f64> = cost.iter().map(|c| c + shift).collect();
        let (v1, p1) = relative_value_iteration(&k, &cost, 0, &rvi_opts()).unwrap();
        let (v2, p2) = relative_value_iteration(&k, &shifted, 0, &rvi_opts()).unwrap();
        prop_assert!((v2.avg_cost - v1.avg_cost - shift).abs() < 1e-8);
        let e1 = policy_evaluation(&k, p1.dists(), &cost).unwrap().avg_cost;
        let e2 = policy_evaluation(&k, p2.dists(), &cost).unwrap().avg_cost;
        // argmin sets agree; tie-break may differ only between equal-cost actions
        prop_assert!((e1 - e2).abs() < 1e-8);
    }
}

#[test]
fn rvi_policy_is_greedy_for_its_own_bias() {
    let rows = vec![
        vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]],
        vec![vec![0.5, 0.0, 0.5], vec![0.0, 0.5, 0.5]],
        vec![vec![0.3, 0.3, 0.4]],
    ];
    let cost = [0.0, 1.0, 5.0];
    let k = kernel(&rows);
    let (v, p) = relative_value_iteration(&k, &cost, 0, &rvi_opts()).unwrap();
    for s in 0..3 {
        let value = |a: Action| cost[s] + k.expect(k.pair_of(s, a).unwrap(), &v.h);
        let chosen = value(p.mode(s));
        for &a in k.actions(s) {
            assert!(chosen <= value(a) + 1e-9);
        }
    }
    assert!(v.h[0].abs() < 1e-12);
    let modes: Vec<_> = (0..3).map(|s| point_mass(p.mode(s))).collect();
    assert!((policy_evaluation(&k, &modes, &cost).unwrap().avg_cost - v.avg_cost).abs() < 1e-9);
}
