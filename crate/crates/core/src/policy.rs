//! Scheduling policies and what they are allowed to observe.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelCondition, LinkState};
use crate::mdp::{feasible_mask, Action, MdpError, QueueState, StateSpace, SystemModel, SystemState, Variant};

/// Probabilities over [`Action::ALL`].
pub type ActionDist = [f64; 4];

pub fn point_mass(a: Action) -> ActionDist {
    let mut d = [0.0; 4];
    d[a.index()] = 1.0;
    d
}

/// Channel state information available to a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InfoLevel {
    /// Full instantaneous CSI: link state, capacity level and sub-6 state.
    #[default]
    FullCsi,
    /// Link state only.
    LargeScaleCsi,
    /// Queue state only.
    QsiOnly,
}

/// What a policy sees in one slot. Fields hidden by the information level
/// are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub queue: QueueState,
    pub link: Option<LinkState>,
    pub channel: Option<ChannelCondition>,
}

impl Observation {
    pub fn of(state: &SystemState, level: InfoLevel) -> Self {
        match level {
            InfoLevel::FullCsi => Self { queue: state.queue, link: Some(state.channel.mm.link), channel: Some(state.channel) },
            InfoLevel::LargeScaleCsi => Self { queue: state.queue, link: Some(state.channel.mm.link), channel: None },
            InfoLevel::QsiOnly => Self { queue: state.queue, link: None, channel: None },
        }
    }
}

/// A stationary, possibly randomized scheduling policy.
pub trait SchedulingPolicy: Sync {
    /// Action distribution for `obs`, or `None` when the policy does not
    /// cover this observation.
    fn decide(&self, obs: &Observation) -> Option<ActionDist>;

    fn name(&self) -> String;
}

/// Policy over full system states, indexed by state id.
#[derive(Debug, Clone)]
pub struct Policy {
    /// Needed to answer [`SchedulingPolicy::decide`]; solver output on a bare
    /// kernel has none until attached with [`Policy::with_space`].
    space: Option<StateSpace>,
    dist: Vec<ActionDist>,
    /// States whose entry came from a fallback rather than the solver.
    flagged: Vec<bool>,
    label: String,
}

impl Policy {
    pub fn new(space: StateSpace, dist: Vec<ActionDist>, flagged: Vec<bool>, label: impl Into<String>) -> Self {
        Self::unbound(dist, flagged, label).with_space(space)
    }

    pub fn unbound(dist: Vec<ActionDist>, flagged: Vec<bool>, label: impl Into<String>) -> Self {
        assert_eq!(dist.len(), flagged.len());
        Self { space: None, dist, flagged, label: label.into() }
    }

    /// Deterministic policy from one action per state id.
    pub fn deterministic(space: StateSpace, actions: &[Action], label: impl Into<String>) -> Self {
        Self::deterministic_unbound(actions, label).with_space(space)
    }

    pub fn deterministic_unbound(actions: &[Action], label: impl Into<String>) -> Self {
        let dist = actions.iter().map(|&a| point_mass(a)).collect();
        Self::unbound(dist, vec![false; actions.len()], label)
    }

    pub fn with_space(mut self, space: StateSpace) -> Self {
        assert_eq!(space.len(), self.dist.len(), "policy and state space sizes differ");
        self.space = Some(space);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    pub fn dist(&self, id: usize) -> &ActionDist {
        &self.dist[id]
    }

    pub fn dists(&self) -> &[ActionDist] {
        &self.dist
    }

    pub fn is_flagged(&self, id: usize) -> bool {
        self.flagged[id]
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    /// Most probable action; ties go to the lexicographically first.
    pub fn mode(&self, id: usize) -> Action {
        let d = &self.dist[id];
        let mut best = 0;
        for i in 1..4 {
            if d[i] > d[best] + 1e-12 {
                best = i;
            }
        }
        Action::from_index(best)
    }

    pub fn is_deterministic(&self) -> bool {
        self.dist.iter().all(|d| d.iter().filter(|p| **p > 1e-12).count() == 1)
    }

    /// Writes rows `(q0, q1, s_mm, s_sub6, C_mm, st_sub6, a_mm, a_sub6, prob)`
    /// for every action with positive probability.
    pub fn write_csv<W: Write>(&self, model: &SystemModel, out: W) -> Result<(), MdpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q0", "q1", "s_mm", "s_sub6", "C_mm", "st_sub6", "a_mm", "a_sub6", "prob"])?;
        let space = model.space();
        for (id, d) in self.dist.iter().enumerate() {
            let s = space.state(id);
            for a in Action::ALL {
                let p = d[a.index()];
                if p <= 0.0 {
                    continue;
                }
                w.write_record([
                    s.queue.q0.to_string(),
                    s.queue.q1.to_string(),
                    s.queue.s_mm.to_string(),
                    s.queue.s_sub6.to_string(),
                    model.channel.capacities().label(s.channel.mm),
                    s.channel.sub6.map_or("-", |x| x.as_str()).to_string(),
                    a.a_mm.to_string(),
                    a.a_sub6.to_string(),
                    format!("{p}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl SchedulingPolicy for Policy {
    fn decide(&self, obs: &Observation) -> Option<ActionDist> {
        let channel = obs.channel?;
        let id = self.space.as_ref()?.index_of(&SystemState { queue: obs.queue, channel })?;
        Some(self.dist[id])
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Queue-length threshold baseline: mmWave whenever feasible, sub-6 as
/// well once `q0 >= theta`. Ignores all channel information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub theta: usize,
    pub variant: Variant,
    pub q1_max: usize,
}

impl ThresholdPolicy {
    pub fn new(theta: usize, variant: Variant, q1_max: usize) -> Self {
        assert!(theta >= 1, "threshold must be at least 1");
        Self { theta, variant, q1_max }
    }

    pub fn for_model(theta: usize, model: &SystemModel) -> Self {
        Self::new(theta, model.config.variant, model.config.q1_max)
    }

    pub fn action(&self, q: &QueueState) -> Action {
        let mask = feasible_mask(q, self.variant, self.q1_max);
        let a_mm = u8::from(mask[Action::new(1, 0).index()]);
        let with_sub6 = Action::new(a_mm, 1);
        if q.q0 >= self.theta && mask[with_sub6.index()] {
            with_sub6
        } else {
            Action::new(a_mm, 0)
        }
    }
}

/// Deterministic policy from a function of the queue state only.
pub fn threshold_policy(theta: usize, model: &SystemModel) -> ThresholdPolicy {
    ThresholdPolicy::for_model(theta, model)
}

impl SchedulingPolicy for ThresholdPolicy {
    fn decide(&self, obs: &Observation) -> Option<ActionDist> {
        Some(point_mass(self.action(&obs.queue)))
    }

    fn name(&self) -> String {
        format!("threshold(theta={})", self.theta)
    }
}

/// Uses only the sub-6 interface, whenever it is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sub6OnlyPolicy;

impl SchedulingPolicy for Sub6OnlyPolicy {
    fn decide(&self, obs: &Observation) -> Option<ActionDist> {
        let q = obs.queue;
        Some(point_mass(if q.q0 >= 1 && q.s_sub6 == 0 { Action::new(0, 1) } else { Action::IDLE }))
    }

    fn name(&self) -> String {
        "sub6-only".into()
    }
}

/// Deterministic policy over (queue, link state) observations.
#[derive(Debug, Clone, Default)]
pub struct LinkAwarePolicy {
    pub actions: HashMap<(QueueState, LinkState), Action>,
    pub label: String,
}

impl SchedulingPolicy for LinkAwarePolicy {
    fn decide(&self, obs: &Observation) -> Option<ActionDist> {
        let link = obs.link?;
        self.actions.get(&(obs.queue, link)).map(|&a| point_mass(a))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Expands any policy into a full-state [`Policy`] for exact evaluation,
/// feeding it the observation it would see at `level`. Uncovered or
/// infeasible decisions become `(0,0)` and are flagged.
pub fn tabulate(policy: &dyn SchedulingPolicy, model: &SystemModel, level: InfoLevel) -> Policy {
    let space = model.space().clone();
    let mut dist = Vec::with_capacity(space.len());
    let mut flagged = Vec::with_capacity(space.len());
    for s in space.states() {
        let mask = model.feasible_mask(&s.queue);
        match policy.decide(&Observation::of(&s, level)) {
            Some(d) if d.iter().zip(mask).all(|(p, ok)| ok || *p == 0.0) => {
                dist.push(d);
                flagged.push(false);
            }
            _ => {
                dist.push(point_mass(Action::IDLE));
                flagged.push(true);
            }
        }
    }
    Policy::new(space, dist, flagged, policy.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        let p = ThresholdPolicy::new(3, Variant::Base, 0);
        assert_eq!(p.action(&QueueState::new(0, 0, 0, 0)), Action::IDLE);
        assert_eq!(p.action(&QueueState::new(2, 0, 0, 0)), Action::new(1, 0));
        assert_eq!(p.action(&QueueState::new(5, 0, 0, 0)), Action::new(1, 1));
        assert_eq!(p.action(&QueueState::new(5, 0, 1, 0)), Action::new(0, 1));
        assert_eq!(p.action(&QueueState::new(2, 0, 1, 0)), Action::IDLE);
        // q0 = 1 forbids using both servers
        let p1 = ThresholdPolicy::new(1, Variant::Base, 0);
        assert_eq!(p1.action(&QueueState::new(1, 0, 0, 0)), Action::new(1, 0));
        assert_eq!(p1.action(&QueueState::new(1, 0, 1, 0)), Action::new(0, 1));
    }

    #[test]
    fn sub6_only_never_uses_mmwave() {
        let p = Sub6OnlyPolicy;
        let obs = Observation { queue: QueueState::new(3, 0, 0, 0), link: None, channel: None };
        assert_eq!(p.decide(&obs), Some(point_mass(Action::new(0, 1))));
    }
}
