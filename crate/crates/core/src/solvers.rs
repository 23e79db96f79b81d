//! Exact average-cost planning: relative value iteration, the
//! occupation-measure linear program, policy extraction and exact policy
//! evaluation.

use std::collections::VecDeque;
use std::io::Write;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, MdpError, TransitionKernel};
use crate::policy::{point_mass, ActionDist, Policy};
use crate::simplex::{LpError, LpSolver, StandardLp};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("relative value iteration did not converge in {iterations} iterations (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
    #[error("induced chain has {0} closed classes; a unichain policy is required")]
    Multichain(usize),
    #[error("policy puts mass on an infeasible action in state {0}")]
    InfeasiblePolicy(usize),
    #[error("stationary residual {0:e} exceeds tolerance")]
    Residual(f64),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviOptions {
    /// Stop once `span(h_{i+1} - h_i)` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Action values within this of the minimum count as tied; ties go to
    /// the lexicographically first action.
    pub tie_tol: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100_000, tie_tol: 1e-9 }
    }
}

/// Differential costs from relative value iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTable {
    pub h: Vec<f64>,
    pub avg_cost: f64,
    pub iterations: usize,
    pub final_span: f64,
    pub reference: usize,
}

impl ValueTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MdpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state_id", "h"])?;
        for (i, h) in self.h.iter().enumerate() {
            w.write_record([i.to_string(), format!("{h:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `C(s) + sum_s' P(s'|s,a) h(s')` for every feasible action of `s`.
fn action_values<'a>(kernel: &'a TransitionKernel, cost: &'a [f64], h: &'a [f64], s: usize) -> impl Iterator<Item = (Action, f64)> + 'a {
    kernel.pairs(s).map(move |p| (kernel.action(p), cost[s] + kernel.expect(p, h)))
}

/// Greedy action under `h` with tolerance-based lexicographic tie-break.
pub fn greedy_action(kernel: &TransitionKernel, cost: &[f64], h: &[f64], s: usize, tie_tol: f64) -> Action {
    let vals: Vec<(Action, f64)> = action_values(kernel, cost, h, s).collect();
    let min = vals.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    vals.iter().find(|(_, v)| *v <= min + tie_tol).map(|(a, _)| *a).expect("state has actions")
}

/// Relative value iteration for the average-cost criterion.
pub fn relative_value_iteration(
    kernel: &TransitionKernel,
    cost: &[f64],
    reference: usize,
    opts: &RviOptions,
) -> Result<(ValueTable, Policy), SolverError> {
    let n = kernel.n_states();
    assert_eq!(cost.len(), n, "one cost per state");
    let mut h = vec![0.0; n];
    let mut th = vec![0.0; n];
    let mut span = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for (s, t) in th.iter_mut().enumerate() {
            *t = action_values(kernel, cost, &h, s).map(|(_, v)| v).fold(f64::INFINITY, f64::min);
        }
        let avg_cost = th[reference];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (hs, ts) in h.iter_mut().zip(&th) {
            let next = ts - avg_cost;
            let d = next - *hs;
            lo = lo.min(d);
            hi = hi.max(d);
            *hs = next;
        }
        span = hi - lo;
        if span < opts.tol {
            let actions: Vec<Action> = (0..n).map(|s| greedy_action(kernel, cost, &h, s, opts.tie_tol)).collect();
            let policy = Policy::deterministic_unbound(&actions, "rvi");
            return Ok((ValueTable { h, avg_cost, iterations: it, final_span: span, reference }, policy));
        }
    }
    Err(SolverError::NoConvergence { iterations: opts.max_iter, span })
}

/// Stationary state-action frequencies, indexed like the kernel's pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupationMeasure {
    pub mass: Vec<f64>,
    pair_start: Vec<usize>,
}

impl OccupationMeasure {
    pub fn new(kernel: &TransitionKernel, mass: Vec<f64>) -> Self {
        assert_eq!(mass.len(), kernel.n_pairs());
        let pair_start = (0..=kernel.n_states()).map(|s| if s == kernel.n_states() { kernel.n_pairs() } else { kernel.pairs(s).start }).collect();
        Self { mass, pair_start }
    }

    pub fn n_states(&self) -> usize {
        self.pair_start.len() - 1
    }

    pub fn state_mass(&self, s: usize) -> f64 {
        self.mass[self.pair_start[s]..self.pair_start[s + 1]].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Largest violation of `sum_a q(s,a) = sum_{s',a} q(s',a) P(s|s',a)`.
    pub fn balance_residual(&self, kernel: &TransitionKernel) -> f64 {
        let n = kernel.n_states();
        let mut inflow = vec![0.0; n];
        for (p, &q) in self.mass.iter().enumerate() {
            if q != 0.0 {
                for (j, prob) in kernel.transitions(p) {
                    inflow[j] += q * prob;
                }
            }
        }
        (0..n).map(|s| (self.state_mass(s) - inflow[s]).abs()).fold(0.0, f64::max)
    }

    /// Writes `(state_id, action_id, mass)` rows for nonzero pairs.
    pub fn write_csv<W: Write>(&self, kernel: &TransitionKernel, out: W) -> Result<(), MdpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state_id", "action_id", "mass"])?;
        for s in 0..kernel.n_states() {
            for p in kernel.pairs(s) {
                if self.mass[p] > 0.0 {
                    w.write_record([s.to_string(), kernel.action(p).index().to_string(), format!("{:e}", self.mass[p])])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub occupation: OccupationMeasure,
    pub avg_cost: f64,
    pub policy: Policy,
    pub pivots: usize,
    pub balance_residual: f64,
    /// Number of states in the closed set the program was posed on.
    pub lp_states: usize,
}

/// States reachable from `start` under any action.
pub fn reachable_states(kernel: &TransitionKernel, start: usize) -> Vec<usize> {
    let mut seen = vec![false; kernel.n_states()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        for p in kernel.pairs(s) {
            for (j, _) in kernel.transitions(p) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    (0..kernel.n_states()).filter(|&s| seen[s]).collect()
}

/// Pair masses below this are treated as round-off.
const MASS_FLOOR: f64 = 1e-14;

/// Minimizes `sum q(s,a) C(s)` over occupation measures: balance in every
/// state, total mass one, `q >= 0`. The program is posed on the states
/// reachable from `reference`, which is closed; one redundant balance row is
/// dropped.
pub fn solve_lp(kernel: &TransitionKernel, cost: &[f64], reference: usize, solver: &dyn LpSolver) -> Result<LpOutcome, SolverError> {
    let n = kernel.n_states();
    let states = reachable_states(kernel, reference);
    let mut local = vec![usize::MAX; n];
    for (i, &s) in states.iter().enumerate() {
        local[s] = i;
    }
    let mut var_pair = Vec::new();
    let mut var_start = Vec::with_capacity(states.len());
    for &s in &states {
        var_start.push(var_pair.len());
        var_pair.extend(kernel.pairs(s));
    }
    let m = states.len();
    let balance = |delta: f64| {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (v, &p) in var_pair.iter().enumerate() {
            let s = local[kernel.state_of_pair(p)];
            rows[s].push((v, 1.0));
            for (j, prob) in kernel.transitions(p) {
                rows[local[j]].push((v, -(1.0 - delta) * prob));
            }
        }
        rows
    };
    let mut rows = balance(0.0);
    rows.pop();
    let mut rhs = vec![0.0; m - 1];
    rows.push((0..var_pair.len()).map(|v| (v, 1.0)).collect());
    rhs.push(1.0);
    let objective = var_pair.iter().map(|&p| cost[kernel.state_of_pair(p)]).collect();
    let lp = StandardLp { objective, rows, rhs };

    // Crash basis: the optimum of the program with a uniform restart inflow
    // of rate delta. Its bases are nondegenerate with conditioning near
    // 1/delta. A unichain deterministic policy is a feasible basis of the
    // exact program: its stationary law on the closed class, zero elsewhere.
    let perturbed = StandardLp { objective: lp.objective.clone(), rows: balance(RESTART_RATE), rhs: vec![RESTART_RATE / m as f64; m] };
    let crash = solver.solve_from(&perturbed, &var_start)?;
    let pick_max = |i: usize| {
        let end = var_start.get(i + 1).copied().unwrap_or(var_pair.len());
        (var_start[i]..end).max_by(|&a, &b| crash.x[a].total_cmp(&crash.x[b])).expect("every state has an action")
    };
    let candidates = [(0..m).map(pick_max).collect::<Vec<_>>(), var_start.clone()];
    let start = candidates
        .into_iter()
        .find(|basis| closed_classes(kernel, &states, &local, basis.iter().map(|&v| var_pair[v])) == 1);
    let sol = match &start {
        Some(basis) => solver.solve_from(&lp, basis)?,
        None => solver.solve(&lp)?,
    };

    let mut mass = vec![0.0; kernel.n_pairs()];
    for (v, &p) in var_pair.iter().enumerate() {
        mass[p] = if sol.x[v] < MASS_FLOOR { 0.0 } else { sol.x[v] };
    }
    let occupation = OccupationMeasure::new(kernel, mass);
    let balance_residual = occupation.balance_residual(kernel);
    let avg_cost = (0..n).map(|s| occupation.state_mass(s) * cost[s]).sum();
    let policy = extract_policy(&occupation, kernel, None, 1e-9);
    Ok(LpOutcome { occupation, avg_cost, policy, pivots: sol.pivots + crash.pivots, balance_residual, lp_states: m })
}

const RESTART_RATE: f64 = 1e-7;

/// Closed communicating classes of the chain that plays `pairs` (one per
/// entry of `states`, which must be closed).
fn closed_classes(kernel: &TransitionKernel, states: &[usize], local: &[usize], pairs: impl Iterator<Item = usize>) -> usize {
    let mut graph = DiGraph::<(), ()>::with_capacity(states.len(), 0);
    let nodes: Vec<_> = states.iter().map(|_| graph.add_node(())).collect();
    for (i, p) in pairs.enumerate() {
        for (j, prob) in kernel.transitions(p) {
            if prob > 0.0 {
                graph.add_edge(nodes[i], nodes[local[j]], ());
            }
        }
    }
    count_closed(&graph)
}

fn count_closed(graph: &DiGraph<(), ()>) -> usize {
    let sccs = tarjan_scc(graph);
    let mut comp = vec![0usize; graph.node_count()];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    sccs.iter()
        .enumerate()
        .filter(|(c, members)| members.iter().all(|&v| graph.neighbors(v).all(|w| comp[w.index()] == *c)))
        .count()
}

/// Fallback used by [`extract_policy`] for zero-mass states.
pub struct GreedyFallback<'a> {
    pub cost: &'a [f64],
    pub values: &'a ValueTable,
    pub tie_tol: f64,
}

/// `pi(a|s) = q(s,a) / sum_a q(s,a)` where the state mass exceeds `tol`.
/// Other states are flagged transient and get the greedy action under the
/// fallback value table, or `(0,0)`.
pub fn extract_policy(occ: &OccupationMeasure, kernel: &TransitionKernel, fallback: Option<&GreedyFallback>, tol: f64) -> Policy {
    let n = kernel.n_states();
    let mut dist = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    for s in 0..n {
        let total = occ.state_mass(s);
        if total > tol {
            let mut d: ActionDist = [0.0; 4];
            for p in kernel.pairs(s) {
                d[kernel.action(p).index()] = occ.mass[p] / total;
            }
            dist.push(d);
            flagged.push(false);
        } else {
            let a = match fallback {
                Some(f) => greedy_action(kernel, f.cost, &f.values.h, s, f.tie_tol),
                None => Action::IDLE,
            };
            dist.push(point_mass(a));
            flagged.push(true);
        }
    }
    Policy::unbound(dist, flagged, "lp")
}

/// States whose occupation mass exceeds `tol`.
pub fn recurrent_states(occ: &OccupationMeasure, tol: f64) -> Vec<usize> {
    (0..occ.n_states()).filter(|&s| occ.state_mass(s) > tol).collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub avg_cost: f64,
    /// Stationary distribution of the induced chain over all states.
    pub stationary: Vec<f64>,
    pub residual: f64,
}

/// Stationary average cost of the chain induced by `policy`.
///
/// The induced chain must have exactly one closed class; its stationary law
/// is computed by GTH elimination and checked to a residual below 1e-10.
pub fn policy_evaluation(kernel: &TransitionKernel, policy: &[ActionDist], cost: &[f64]) -> Result<Evaluation, SolverError> {
    let n = kernel.n_states();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for s in 0..n {
        let d = &policy[s];
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut covered = 0.0;
        for p in kernel.pairs(s) {
            let w = d[kernel.action(p).index()];
            if w > 0.0 {
                covered += w;
                row.extend(kernel.transitions(p).map(|(j, prob)| (j, w * prob)));
            }
        }
        if (covered - d.iter().sum::<f64>()).abs() > 1e-12 || covered == 0.0 {
            return Err(SolverError::InfeasiblePolicy(s));
        }
        row.sort_by_key(|(j, _)| *j);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        rows.push(row);
    }

    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (s, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            graph.add_edge(nodes[s], nodes[j], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let closed: Vec<&Vec<_>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| members.iter().all(|v| rows[v.index()].iter().all(|(j, _)| comp[*j] == *c)))
        .map(|(_, m)| m)
        .collect();
    if closed.len() != 1 {
        return Err(SolverError::Multichain(closed.len()));
    }
    let mut class: Vec<usize> = closed[0].iter().map(|v| v.index()).collect();
    class.sort_unstable();
    let k = class.len();
    let mut local = vec![usize::MAX; n];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }
    let mut dense = vec![0.0; k * k];
    for (i, &s) in class.iter().enumerate() {
        for &(j, p) in &rows[s] {
            dense[i * k + local[j]] += p;
        }
    }
    let pi_local = gth(dense, k);
    let mut stationary = vec![0.0; n];
    for (i, &s) in class.iter().enumerate() {
        stationary[s] = pi_local[i];
    }
    let mut next = vec![0.0; n];
    for (s, row) in rows.iter().enumerate() {
        if stationary[s] != 0.0 {
            for &(j, p) in row {
                next[j] += stationary[s] * p;
            }
        }
    }
    let residual: f64 = next.iter().zip(&stationary).map(|(a, b)| (a - b).abs()).sum();
    if residual >= 1e-10 {
        return Err(SolverError::Residual(residual));
    }
    let avg_cost = stationary.iter().zip(cost).map(|(p, c)| p * c).sum();
    Ok(Evaluation { avg_cost, stationary, residual })
}

/// Grassmann-Taksar-Heyman elimination for an irreducible chain given as a
/// dense row-major `k x k` matrix.
fn gth(mut a: Vec<f64>, k: usize) -> Vec<f64> {
    for n in (1..k).rev() {
        let s: f64 = a[n * k..n * k + n].iter().sum();
        if s <= 0.0 {
            continue;
        }
        for i in 0..n {
            let f = a[i * k + n] / s;
            if f != 0.0 {
                for j in 0..n {
                    a[i * k + j] += f * a[n * k + j];
                }
            }
        }
    }
    let mut pi = vec![0.0; k];
    pi[0] = 1.0;
    for j in 1..k {
        let s: f64 = a[j * k..j * k + j].iter().sum();
        pi[j] = (0..j).map(|i| pi[i] * a[i * k + j]).sum::<f64>() / s;
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}
