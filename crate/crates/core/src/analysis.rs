//! Structural checks on optimal policies: the queue-state projection of the
//! recurrent set, the threshold and routing rules expected of the coupled
//! channel setup, and a row-by-row comparison with a reference policy table.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::channel::{stationary_distribution, ChannelError, LinkState, Matrix, PerLink, Sub6State};
use crate::mdp::{Action, SystemModel};
use crate::policy::Policy;
use crate::solvers::OccupationMeasure;

/// Reference table for the coupled experiment.
pub const REFERENCE_POLICY_A: &str = include_str!("../configs/reference_policy_a.json");

/// `(q0, q1, s_mm, s_sub6)` of every state whose mass exceeds `tol`.
pub fn recurrent_queue_states(model: &SystemModel, occ: &OccupationMeasure, tol: f64) -> BTreeSet<(usize, usize, u8, u8)> {
    let space = model.space();
    (0..space.len())
        .filter(|&s| occ.state_mass(s) > tol)
        .map(|s| {
            let q = space.parts(s).0;
            (q.q0, q.q1, q.s_mm, q.s_sub6)
        })
        .collect()
}

/// One row of a reference policy table: the action prescribed for queue
/// states `(q0, s_mm, s_sub6)` with `q1 = 0` and `q0` in `q0`, under the
/// channel conditions matching `mm` (a capacity label such as `n2`) and
/// `sub6`. Absent fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub servers: [u8; 2],
    /// Inclusive range; an open upper end is capped at `q0_max`.
    pub q0: (usize, Option<usize>),
    #[serde(default)]
    pub mm: Option<String>,
    #[serde(default)]
    pub sub6: Option<Sub6State>,
    pub action: [u8; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    pub fn bundled_a() -> Self {
        serde_json::from_str(REFERENCE_POLICY_A).expect("bundled reference table is valid")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RowComparison {
    pub row: usize,
    pub description: String,
    pub expected: String,
    /// States of the model covered by the row.
    pub states: usize,
    /// `(state, channel, computed action)` where the computed action differs.
    pub mismatches: Vec<(String, String, String)>,
}

impl RowComparison {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn compare_with_reference(model: &SystemModel, policy: &Policy, table: &ReferenceTable) -> Vec<RowComparison> {
    let space = model.space();
    let q0_max = space.q0_max();
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let hi = row.q0.1.unwrap_or(q0_max).min(q0_max);
            let expected = Action::new(row.action[0], row.action[1]);
            let mut states = 0;
            let mut mismatches = Vec::new();
            for id in 0..space.len() {
                let st = space.state(id);
                let q = st.queue;
                if q.q1 != 0 || q.s_mm != row.servers[0] || q.s_sub6 != row.servers[1] || q.q0 < row.q0.0 || q.q0 > hi {
                    continue;
                }
                let label = model.channel.capacities().label(st.channel.mm);
                if row.mm.as_ref().is_some_and(|m| *m != label) || row.sub6.is_some_and(|s| st.channel.sub6 != Some(s)) {
                    continue;
                }
                states += 1;
                let got = policy.mode(id);
                if got != expected {
                    mismatches.push((q.to_string(), model.channel.label(&st.channel), got.to_string()));
                }
            }
            let upper = row.q0.1.map_or("..".to_string(), |h| format!("..{h}"));
            let description = format!(
                "q0 {}{upper}, servers ({},{}), C_mm {}, sub6 {}",
                row.q0.0,
                row.servers[0],
                row.servers[1],
                row.mm.as_deref().unwrap_or("x"),
                row.sub6.map_or("x", |s| s.as_str())
            );
            RowComparison { row: i, description, expected: expected.to_string(), states, mismatches }
        })
        .collect()
}

/// Violations of the expected policy structure over states with `q1 = 0`
/// and `q0 >= 1`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StructureReport {
    /// Sub-6 busy, mmWave idle: hold in outage, route to mmWave otherwise.
    pub sub6_busy: Vec<String>,
    /// Both servers busy: idle.
    pub both_busy: Vec<String>,
    /// `a_sub6` must be nondecreasing in `q0` for fixed servers and channel.
    pub threshold: Vec<String>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.sub6_busy.is_empty() && self.both_busy.is_empty() && self.threshold.is_empty()
    }
}

pub fn policy_structure(model: &SystemModel, policy: &Policy) -> StructureReport {
    let space = model.space();
    let caps = model.channel.capacities();
    let mut report = StructureReport::default();
    for id in 0..space.len() {
        let st = space.state(id);
        let q = st.queue;
        if q.q1 != 0 || q.q0 == 0 {
            continue;
        }
        let a = policy.mode(id);
        let outage = caps.level(st.channel.mm).capacity == 0.0;
        let at = || format!("{} {} -> {a}", q, model.channel.label(&st.channel));
        match (q.s_mm, q.s_sub6) {
            (0, 1) => {
                let want = if outage { Action::IDLE } else { Action::new(1, 0) };
                if a != want {
                    report.sub6_busy.push(at());
                }
            }
            (1, 1) if a != Action::IDLE => report.both_busy.push(at()),
            _ => {}
        }
    }
    let nc = space.conditions().len();
    for servers in [(0u8, 0u8), (1, 0)] {
        for c in 0..nc {
            let mut prev: Option<(usize, u8)> = None;
            for q0 in 1..=space.q0_max() {
                let q = crate::mdp::QueueState::new(q0, 0, servers.0, servers.1);
                let id = space.id_from_parts(&q, c).expect("state in range");
                let a = policy.mode(id).a_sub6;
                if let Some((pq, pa)) = prev {
                    if a < pa {
                        report.threshold.push(format!(
                            "{} {}: a_sub6 {pa} at q0={pq} but {a} at q0={q0}",
                            q,
                            model.channel.label(&space.conditions()[c])
                        ));
                    }
                }
                prev = Some((q0, a));
            }
        }
    }
    report
}

/// Stationary law of a link-state chain and the mean of `times` under it.
pub fn link_weighted_mean(link_kernel: &Matrix, times: &PerLink<f64>) -> Result<([f64; 3], f64), ChannelError> {
    let pi = stationary_distribution(link_kernel)?;
    if pi.len() != 3 {
        return Err(ChannelError::InvalidModel(format!("link kernel has {} states, expected 3", pi.len())));
    }
    let law = [pi[0], pi[1], pi[2]];
    let mean = LinkState::ALL.iter().map(|&l| law[l.index()] * times.get(l)).sum();
    Ok((law, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_reference_parses() {
        let t = ReferenceTable::bundled_a();
        assert!(t.rows.iter().all(|r| r.servers.iter().chain(&r.action).all(|&x| x <= 1)));
        assert!(t.rows.iter().any(|r| r.sub6 == Some(Sub6State::Good)));
    }
}
