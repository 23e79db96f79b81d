//! Slotted average-cost MDP of the dual-interface scheduler.
//!
//! A slot runs as follows. The scheduler observes the state and picks an
//! action; the action moves head-of-line packets from `q0` into the mmWave
//! server (or, in the buffered variant, into the mmWave buffer `q1`, from
//! which an idle server loads immediately) and into the sub-6 server. Then at
//! most one event happens: an arrival with probability `lambda*tau`, an
//! mmWave departure with probability `mu_mm*tau` if that server is busy, a
//! sub-6 departure with probability `mu_sub6*tau` if that server is busy, or
//! nothing. Independently the channel moves one step along its kernel.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelCondition, ChannelError, ChannelProcess, ChannelState, LinkState, PerLink, Sub6State};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Scheduling decision: route the head packet(s) to mmWave and/or sub-6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub a_mm: u8,
    pub a_sub6: u8,
}

impl Action {
    /// Lexicographic order on `(a_mm, a_sub6)`; this is also the tie-break order.
    pub const ALL: [Action; 4] = [
        Action { a_mm: 0, a_sub6: 0 },
        Action { a_mm: 0, a_sub6: 1 },
        Action { a_mm: 1, a_sub6: 0 },
        Action { a_mm: 1, a_sub6: 1 },
    ];
    pub const IDLE: Action = Action { a_mm: 0, a_sub6: 0 };

    pub fn new(a_mm: u8, a_sub6: u8) -> Self {
        debug_assert!(a_mm <= 1 && a_sub6 <= 1);
        Self { a_mm, a_sub6 }
    }

    pub fn index(self) -> usize {
        (self.a_mm as usize) * 2 + self.a_sub6 as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a_mm, self.a_sub6)
    }
}

/// Queue occupancy. `q1` is always 0 in the base variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueueState {
    pub q0: usize,
    pub q1: usize,
    pub s_mm: u8,
    pub s_sub6: u8,
}

impl QueueState {
    pub const EMPTY: QueueState = QueueState { q0: 0, q1: 0, s_mm: 0, s_sub6: 0 };

    pub fn new(q0: usize, q1: usize, s_mm: u8, s_sub6: u8) -> Self {
        Self { q0, q1, s_mm, s_sub6 }
    }

    /// Packets in the system.
    pub fn total(&self) -> usize {
        self.q0 + self.q1 + self.s_mm as usize + self.s_sub6 as usize
    }
}

impl fmt::Display for QueueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.q0, self.q1, self.s_mm, self.s_sub6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub queue: QueueState,
    pub channel: ChannelCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Head queue feeding both servers directly.
    #[default]
    Base,
    /// Extra buffer `q1` in front of the mmWave server.
    MmwaveBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Arrival rate, packets per second.
    pub lambda: f64,
    /// Mean packet size in bits.
    pub mean_pkt_bits: f64,
    /// Slot length in seconds.
    pub tau: f64,
    pub q0_max: usize,
    #[serde(default)]
    pub q1_max: usize,
    #[serde(default)]
    pub variant: Variant,
}

/// mmWave departure rates, either per capacity level or from mean
/// per-packet departure times per link state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MmwaveRates {
    PerLevel(PerLink<Vec<f64>>),
    MeanDeparture { mean_departure_ms: PerLink<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sub6Rates {
    Single(f64),
    PerState { bad: f64, good: f64 },
}

/// Departure rates in packets per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTables {
    pub mmwave: MmwaveRates,
    pub sub6: Sub6Rates,
}

/// Service rate implied by a bit rate and the mean packet size.
pub fn departure_rate(bit_rate: f64, mean_pkt_bits: f64) -> f64 {
    bit_rate / mean_pkt_bits
}

impl RateTables {
    pub fn mu_mm(&self, state: ChannelState) -> f64 {
        match &self.mmwave {
            MmwaveRates::PerLevel(t) => t.get(state.link)[state.level],
            MmwaveRates::MeanDeparture { mean_departure_ms } => 1000.0 / mean_departure_ms.get(state.link),
        }
    }

    pub fn mu_sub6(&self, state: Option<Sub6State>) -> Option<f64> {
        match (&self.sub6, state) {
            (Sub6Rates::Single(r), _) => Some(*r),
            (Sub6Rates::PerState { bad, .. }, Some(Sub6State::Bad)) => Some(*bad),
            (Sub6Rates::PerState { good, .. }, Some(Sub6State::Good)) => Some(*good),
            (Sub6Rates::PerState { .. }, None) => None,
        }
    }

    /// Copy with a single sub-6 rate.
    pub fn with_sub6(&self, rate: f64) -> Self {
        Self { mmwave: self.mmwave.clone(), sub6: Sub6Rates::Single(rate) }
    }

    fn validate(&self, channel: &ChannelProcess) -> Result<(), MdpError> {
        let caps = channel.capacities();
        match &self.mmwave {
            MmwaveRates::PerLevel(t) => {
                for link in LinkState::ALL {
                    if t.get(link).len() != caps.levels(link) {
                        return Err(MdpError::InvalidConfig(format!(
                            "mmWave rate table for link {link} has {} entries, channel has {} levels",
                            t.get(link).len(),
                            caps.levels(link)
                        )));
                    }
                }
                if t.outage.iter().any(|&r| r != 0.0) {
                    return Err(MdpError::InvalidConfig("outage level must have zero mmWave rate".into()));
                }
            }
            MmwaveRates::MeanDeparture { mean_departure_ms } => {
                for link in LinkState::ALL {
                    if !(*mean_departure_ms.get(link) > 0.0) {
                        return Err(MdpError::InvalidConfig("mean departure times must be positive".into()));
                    }
                }
            }
        }
        for c in channel.conditions() {
            let mm = self.mu_mm(c.mm);
            let sub6 = self
                .mu_sub6(c.sub6)
                .ok_or_else(|| MdpError::InvalidConfig("per-state sub-6 rates need a sub-6 channel state".into()))?;
            if !(mm >= 0.0 && sub6 >= 0.0 && mm.is_finite() && sub6.is_finite()) {
                return Err(MdpError::InvalidConfig("departure rates must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Enumeration of all system states. Ids are dense, ordered by
/// `(q0, q1, s_mm, s_sub6, channel condition)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    q0_max: usize,
    q1_levels: usize,
    conditions: Vec<ChannelCondition>,
}

impl StateSpace {
    pub fn new(q0_max: usize, q1_max: Option<usize>, conditions: Vec<ChannelCondition>) -> Self {
        Self { q0_max, q1_levels: q1_max.map_or(1, |m| m + 1), conditions }
    }

    pub fn len(&self) -> usize {
        (self.q0_max + 1) * self.q1_levels * 4 * self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn conditions(&self) -> &[ChannelCondition] {
        &self.conditions
    }

    pub fn q0_max(&self) -> usize {
        self.q0_max
    }

    pub fn queue_index(&self, q: &QueueState) -> Option<usize> {
        if q.q0 > self.q0_max || q.q1 >= self.q1_levels || q.s_mm > 1 || q.s_sub6 > 1 {
            return None;
        }
        Some(((q.q0 * self.q1_levels + q.q1) * 2 + q.s_mm as usize) * 2 + q.s_sub6 as usize)
    }

    pub fn queue_states(&self) -> usize {
        (self.q0_max + 1) * self.q1_levels * 4
    }

    pub fn id_from_parts(&self, q: &QueueState, condition: usize) -> Option<usize> {
        (condition < self.conditions.len())
            .then(|| self.queue_index(q).map(|qi| qi * self.conditions.len() + condition))
            .flatten()
    }

    pub fn index_of(&self, s: &SystemState) -> Option<usize> {
        let c = self.conditions.iter().position(|x| *x == s.channel)?;
        self.id_from_parts(&s.queue, c)
    }

    pub fn state(&self, id: usize) -> SystemState {
        let (queue, c) = self.parts(id);
        SystemState { queue, channel: self.conditions[c] }
    }

    /// Queue state and channel-condition index of a state id.
    pub fn parts(&self, id: usize) -> (QueueState, usize) {
        let nc = self.conditions.len();
        let c = id % nc;
        let mut r = id / nc;
        let s_sub6 = (r % 2) as u8;
        r /= 2;
        let s_mm = (r % 2) as u8;
        r /= 2;
        let q1 = r % self.q1_levels;
        let q0 = r / self.q1_levels;
        (QueueState { q0, q1, s_mm, s_sub6 }, c)
    }

    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}

/// The four mutually exclusive per-slot events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Arrival,
    MmDeparture,
    Sub6Departure,
    Nothing,
}

impl Event {
    pub const ALL: [Event; 4] = [Event::Arrival, Event::MmDeparture, Event::Sub6Departure, Event::Nothing];

    pub fn as_str(self) -> &'static str {
        match self {
            Event::Arrival => "arrival",
            Event::MmDeparture => "mm_departure",
            Event::Sub6Departure => "sub6_departure",
            Event::Nothing => "nothing",
        }
    }
}

/// Branch probabilities in [`Event::ALL`] order.
pub type EventProbs = [f64; 4];

/// Actions allowed in queue state `q`.
pub fn feasible_mask(q: &QueueState, variant: Variant, q1_max: usize) -> [bool; 4] {
    let mut mask = [false; 4];
    for a in Action::ALL {
        mask[a.index()] = is_feasible(q, a, variant, q1_max);
    }
    mask
}

pub fn is_feasible(q: &QueueState, a: Action, variant: Variant, q1_max: usize) -> bool {
    if q.q0 == 0 {
        return a == Action::IDLE;
    }
    let mm_ok = match variant {
        Variant::Base => a.a_mm + q.s_mm < 2,
        Variant::MmwaveBuffer => q.q1 + (a.a_mm as usize) <= q1_max,
    };
    let sub6_ok = a.a_sub6 + q.s_sub6 < 2;
    let joint_ok = q.q0 >= 2 || a.a_mm + a.a_sub6 < 2;
    mm_ok && sub6_ok && joint_ok
}

/// Queue after the scheduling action, including the buffered variant's load
/// of an idle mmWave server from `q1`.
pub fn route(q: &QueueState, a: Action, variant: Variant) -> QueueState {
    let mut r = *q;
    r.q0 -= (a.a_mm + a.a_sub6) as usize;
    r.s_sub6 = (r.s_sub6 + a.a_sub6).min(1);
    match variant {
        Variant::Base => r.s_mm = (r.s_mm + a.a_mm).min(1),
        Variant::MmwaveBuffer => {
            r.q1 += a.a_mm as usize;
            load_mm(&mut r);
        }
    }
    r
}

fn load_mm(q: &mut QueueState) {
    if q.s_mm == 0 && q.q1 > 0 {
        q.q1 -= 1;
        q.s_mm = 1;
    }
}

/// Queue after `event` is applied to a routed queue. Returns `true` as the
/// second element when an arrival is dropped at `q0_max`.
pub fn apply_event(routed: &QueueState, event: Event, variant: Variant, q0_max: usize) -> (QueueState, bool) {
    let mut n = *routed;
    let mut dropped = false;
    match event {
        Event::Arrival => {
            if n.q0 >= q0_max {
                dropped = true;
            } else {
                n.q0 += 1;
            }
        }
        Event::MmDeparture => {
            n.s_mm = 0;
            if variant == Variant::MmwaveBuffer {
                load_mm(&mut n);
            }
        }
        Event::Sub6Departure => n.s_sub6 = 0,
        Event::Nothing => {}
    }
    (n, dropped)
}

/// Validated scheduler model: configuration, rates and channel process.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub config: ModelConfig,
    pub rates: RateTables,
    pub channel: ChannelProcess,
    space: StateSpace,
    mu_mm: Vec<f64>,
    mu_sub6: Vec<f64>,
}

impl SystemModel {
    pub fn new(config: ModelConfig, rates: RateTables, channel: ChannelProcess) -> Result<Self, MdpError> {
        if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
            return Err(MdpError::InvalidConfig("lambda must be finite and nonnegative".into()));
        }
        if !(config.tau > 0.0) {
            return Err(MdpError::InvalidConfig("tau must be positive".into()));
        }
        if config.lambda * config.tau >= 1.0 {
            return Err(MdpError::InvalidConfig(format!("lambda*tau = {} must be < 1", config.lambda * config.tau)));
        }
        rates.validate(&channel)?;
        let mu_mm: Vec<f64> = channel.conditions().iter().map(|c| rates.mu_mm(c.mm)).collect();
        let mu_sub6: Vec<f64> = channel.conditions().iter().map(|c| rates.mu_sub6(c.sub6).unwrap()).collect();
        for (c, (m, s)) in mu_mm.iter().zip(&mu_sub6).enumerate() {
            let total = (config.lambda + m + s) * config.tau;
            if total > 1.0 {
                return Err(MdpError::InvalidConfig(format!(
                    "(lambda + mu_mm + mu_sub6)*tau = {total} > 1 in channel condition {}",
                    channel.label(&channel.conditions()[c])
                )));
            }
        }
        let q1_max = match config.variant {
            Variant::Base => None,
            Variant::MmwaveBuffer => Some(config.q1_max),
        };
        let space = StateSpace::new(config.q0_max, q1_max, channel.conditions().to_vec());
        Ok(Self { config, rates, channel, space, mu_mm, mu_sub6 })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn mu_mm(&self, condition: usize) -> f64 {
        self.mu_mm[condition]
    }

    pub fn mu_sub6(&self, condition: usize) -> f64 {
        self.mu_sub6[condition]
    }

    pub fn feasible_mask(&self, q: &QueueState) -> [bool; 4] {
        feasible_mask(q, self.config.variant, self.config.q1_max)
    }

    pub fn feasible_actions(&self, state: &SystemState) -> Vec<Action> {
        let mask = self.feasible_mask(&state.queue);
        Action::ALL.into_iter().filter(|a| mask[a.index()]).collect()
    }

    /// Event probabilities for a routed queue under channel condition `c`.
    /// An idle server contributes no departure probability.
    pub fn event_probs(&self, routed: &QueueState, condition: usize) -> EventProbs {
        let tau = self.config.tau;
        let arrival = self.config.lambda * tau;
        let mm = if routed.s_mm == 1 { self.mu_mm[condition] * tau } else { 0.0 };
        let sub6 = if routed.s_sub6 == 1 { self.mu_sub6[condition] * tau } else { 0.0 };
        [arrival, mm, sub6, 1.0 - arrival - mm - sub6]
    }

    pub fn route(&self, q: &QueueState, a: Action) -> QueueState {
        route(q, a, self.config.variant)
    }

    pub fn apply_event(&self, routed: &QueueState, event: Event) -> (QueueState, bool) {
        apply_event(routed, event, self.config.variant, self.config.q0_max)
    }

    /// Empty system in the most likely channel condition.
    pub fn reference_state(&self) -> Result<usize, MdpError> {
        let c = self.channel.most_likely()?;
        Ok(self.space.id_from_parts(&QueueState::EMPTY, c).expect("empty state exists"))
    }

    pub fn cost_vector(&self) -> Vec<f64> {
        self.space.states().map(|s| cost(&s)).collect()
    }

    /// Copy of the model with another sub-6 rate.
    pub fn with_sub6_rate(&self, rate: f64) -> Result<Self, MdpError> {
        Self::new(self.config.clone(), self.rates.with_sub6(rate), self.channel.clone())
    }

    pub fn with_channel(&self, channel: ChannelProcess) -> Result<Self, MdpError> {
        Self::new(self.config.clone(), self.rates.clone(), channel)
    }
}

/// Holding cost: packets in the system, including the mmWave buffer.
pub fn cost(state: &SystemState) -> f64 {
    state.queue.total() as f64
}

/// Default reward of the empty system.
pub const DEFAULT_EMPTY_REWARD: f64 = 2.0;

/// Reciprocal of packets in the system; `empty_reward` when empty.
pub fn reward(queue: &QueueState, empty_reward: f64) -> f64 {
    match queue.total() {
        0 => empty_reward,
        n => 1.0 / n as f64,
    }
}

/// One `(state, action)` row: successors with probabilities.
#[derive(Debug, Clone, Copy)]
pub struct PairRef {
    pub state: usize,
    pub action: Action,
    pub pair: usize,
}

/// Sparse finite-MDP kernel: for each state its feasible actions in
/// lexicographic order, and for each pair a probability-weighted successor
/// list.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pair_start: Vec<usize>,
    actions: Vec<Action>,
    succ_start: Vec<usize>,
    succ: Vec<u32>,
    prob: Vec<f64>,
}

impl TransitionKernel {
    /// Builds a kernel from per-state `(action, successors)` rows, checking
    /// that every row is a probability distribution over valid states.
    pub fn from_rows(rows: Vec<Vec<(Action, Vec<(usize, f64)>)>>) -> Result<Self, MdpError> {
        let n = rows.len();
        let mut k = TransitionKernel {
            pair_start: Vec::with_capacity(n + 1),
            actions: Vec::new(),
            succ_start: vec![0],
            succ: Vec::new(),
            prob: Vec::new(),
        };
        k.pair_start.push(0);
        for (s, mut acts) in rows.into_iter().enumerate() {
            if acts.is_empty() {
                return Err(MdpError::InvalidKernel(format!("state {s} has no actions")));
            }
            acts.sort_by_key(|(a, _)| *a);
            for (a, mut succ) in acts {
                succ.retain(|(_, p)| *p > 0.0);
                succ.sort_by_key(|(j, _)| *j);
                let mut sum = 0.0;
                let mut last: Option<usize> = None;
                for (j, p) in succ {
                    if j >= n {
                        return Err(MdpError::InvalidKernel(format!("successor {j} out of range")));
                    }
                    if !(0.0..=1.0 + 1e-12).contains(&p) {
                        return Err(MdpError::InvalidKernel(format!("probability {p} outside [0, 1]")));
                    }
                    sum += p;
                    if last == Some(j) {
                        *k.prob.last_mut().unwrap() += p;
                    } else {
                        k.succ.push(j as u32);
                        k.prob.push(p);
                        last = Some(j);
                    }
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(MdpError::InvalidKernel(format!("row ({s}, {a}) sums to {sum}")));
                }
                k.actions.push(a);
                k.succ_start.push(k.succ.len());
            }
            k.pair_start.push(k.actions.len());
        }
        Ok(k)
    }

    pub fn n_states(&self) -> usize {
        self.pair_start.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.actions.len()
    }

    /// Pair indices of state `s`.
    pub fn pairs(&self, s: usize) -> Range<usize> {
        self.pair_start[s]..self.pair_start[s + 1]
    }

    pub fn action(&self, pair: usize) -> Action {
        self.actions[pair]
    }

    pub fn actions(&self, s: usize) -> &[Action] {
        &self.actions[self.pairs(s)]
    }

    pub fn pair_of(&self, s: usize, a: Action) -> Option<usize> {
        self.pairs(s).find(|&p| self.actions[p] == a)
    }

    pub fn transitions(&self, pair: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.succ_start[pair]..self.succ_start[pair + 1];
        self.succ[r.clone()].iter().map(|&j| j as usize).zip(self.prob[r].iter().copied())
    }

    /// Expected value of `h` at the successor of `pair`.
    pub fn expect(&self, pair: usize, h: &[f64]) -> f64 {
        let r = self.succ_start[pair]..self.succ_start[pair + 1];
        self.succ[r.clone()].iter().zip(&self.prob[r]).map(|(&j, p)| p * h[j as usize]).sum()
    }

    pub fn state_of_pair(&self, pair: usize) -> usize {
        self.pair_start.partition_point(|&start| start <= pair) - 1
    }

    /// Writes `(state_id, action_id, successor_id, probability)` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MdpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state_id", "action_id", "successor_id", "probability"])?;
        for s in 0..self.n_states() {
            for p in self.pairs(s) {
                for (j, prob) in self.transitions(p) {
                    w.write_record([s.to_string(), self.actions[p].index().to_string(), j.to_string(), format!("{prob:e}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact slotted transition kernel of the scheduler.
pub fn build_kernel(model: &SystemModel) -> Result<TransitionKernel, MdpError> {
    let space = model.space();
    let ck = model.channel.kernel();
    let nc = space.conditions().len();
    let rows = (0..space.len())
        .map(|id| {
            let (q, c) = space.parts(id);
            let mask = model.feasible_mask(&q);
            Action::ALL
                .into_iter()
                .filter(|a| mask[a.index()])
                .map(|a| {
                    let routed = model.route(&q, a);
                    let probs = model.event_probs(&routed, c);
                    let mut succ = Vec::with_capacity(4 * nc);
                    for (event, p) in Event::ALL.into_iter().zip(probs) {
                        if !(0.0..=1.0).contains(&p) {
                            return Err(MdpError::InvalidConfig(format!(
                                "branch probability {p} for {} outside [0, 1]",
                                event.as_str()
                            )));
                        }
                        if p == 0.0 {
                            continue;
                        }
                        let (next, _) = model.apply_event(&routed, event);
                        for (c2, pc) in ck[c].iter().enumerate() {
                            if *pc > 0.0 {
                                let j = space.id_from_parts(&next, c2).expect("successor inside state space");
                                succ.push((j, p * pc));
                            }
                        }
                    }
                    Ok((a, succ))
                })
                .collect::<Result<Vec<_>, MdpError>>()
        })
        .collect::<Result<Vec<_>, MdpError>>()?;
    TransitionKernel::from_rows(rows)
}

/// Writes the `(state_id, q0, q1, s_mm, s_sub6, link_state, capacity_level,
/// st_sub6)` legend for kernel and value exports.
pub fn write_state_legend<W: Write>(model: &SystemModel, out: W) -> Result<(), MdpError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state_id", "q0", "q1", "s_mm", "s_sub6", "link_state", "capacity_level", "st_sub6"])?;
    for (id, s) in model.space().states().enumerate() {
        w.write_record([
            id.to_string(),
            s.queue.q0.to_string(),
            s.queue.q1.to_string(),
            s.queue.s_mm.to_string(),
            s.queue.s_sub6.to_string(),
            s.channel.mm.link.symbol().to_string(),
            (s.channel.mm.level + 1).to_string(),
            s.channel.sub6.map_or("-", |x| x.as_str()).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Capacities, ChannelProcess, CoupledConditional, CoupledModel, Sub6Model};

    fn caps() -> Capacities {
        Capacities(PerLink { los: vec![1.0], nlos: vec![0.05, 0.004, 0.002], outage: vec![0.0] })
    }

    fn coupled() -> ChannelProcess {
        ChannelProcess::from_coupled(&CoupledModel {
            capacities: caps(),
            sub6: Sub6Model { bad: 0.2, good: 0.8, kernel: None },
            conditional: CoupledConditional {
                bad: vec![0.1, 0.15, 0.15, 0.15, 0.45],
                good: vec![0.7, 0.15, 0.05, 0.05, 0.05],
            },
            persistence: 0.0,
            redraw_interval_s: None,
        })
        .unwrap()
    }

    fn rates() -> RateTables {
        RateTables {
            mmwave: MmwaveRates::PerLevel(PerLink {
                los: vec![49.54],
                nlos: vec![13.22, 1.64, 0.84],
                outage: vec![0.0],
            }),
            sub6: Sub6Rates::PerState { bad: 0.99, good: 1.45 },
        }
    }

    fn model(variant: Variant, lambda: f64, tau: f64) -> SystemModel {
        SystemModel::new(
            ModelConfig { lambda, mean_pkt_bits: 5e5, tau, q0_max: 4, q1_max: 2, variant },
            rates(),
            coupled(),
        )
        .unwrap()
    }

    fn acts(q: QueueState) -> Vec<Action> {
        let mask = feasible_mask(&q, Variant::Base, 0);
        Action::ALL.into_iter().filter(|a| mask[a.index()]).collect()
    }

    #[test]
    fn action_sets_follow_queue_cases() {
        for s_mm in 0..2 {
            for s_sub6 in 0..2 {
                assert_eq!(acts(QueueState::new(0, 0, s_mm, s_sub6)), vec![Action::IDLE]);
            }
        }
        assert_eq!(acts(QueueState::new(1, 0, 0, 0)), vec![Action::new(0, 0), Action::new(0, 1), Action::new(1, 0)]);
        assert_eq!(acts(QueueState::new(2, 0, 1, 0)), vec![Action::new(0, 0), Action::new(0, 1)]);
        assert_eq!(acts(QueueState::new(2, 0, 0, 0)).len(), 4);
        assert_eq!(acts(QueueState::new(3, 0, 1, 1)), vec![Action::IDLE]);
    }

    #[test]
    fn buffered_variant_caps_mmwave_buffer() {
        let q = QueueState::new(3, 2, 1, 0);
        assert!(!is_feasible(&q, Action::new(1, 0), Variant::MmwaveBuffer, 2));
        assert!(is_feasible(&q, Action::new(1, 0), Variant::MmwaveBuffer, 3));
        // routing into the buffer while the server is busy
        let r = route(&QueueState::new(3, 0, 1, 0), Action::new(1, 0), Variant::MmwaveBuffer);
        assert_eq!(r, QueueState::new(2, 1, 1, 0));
        // idle server loads at once
        let r = route(&QueueState::new(3, 0, 0, 0), Action::new(1, 0), Variant::MmwaveBuffer);
        assert_eq!(r, QueueState::new(2, 0, 1, 0));
    }

    #[test]
    fn scheduled_packet_may_leave_in_same_slot() {
        let routed = route(&QueueState::new(1, 0, 0, 0), Action::new(1, 0), Variant::Base);
        let (next, _) = apply_event(&routed, Event::MmDeparture, Variant::Base, 4);
        assert_eq!(next, QueueState::new(0, 0, 0, 0));
    }

    #[test]
    fn arrival_branch_mass_is_lambda_tau() {
        let m = model(Variant::Base, 1.0, 1e-3);
        let k = build_kernel(&m).unwrap();
        let s = m.reference_state().unwrap();
        let pair = k.pair_of(s, Action::IDLE).unwrap();
        let arrival: f64 = k
            .transitions(pair)
            .filter(|(j, _)| m.space().parts(*j).0.q0 == 1)
            .map(|(_, p)| p)
            .sum();
        assert!((arrival - 0.001).abs() < 1e-15);
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        for variant in [Variant::Base, Variant::MmwaveBuffer] {
            let m = model(variant, 1.0, 1e-3);
            let k = build_kernel(&m).unwrap();
            for pair in 0..k.n_pairs() {
                let s: f64 = k.transitions(pair).map(|(_, p)| p).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cost_and_reward() {
        let c = coupled().conditions()[0];
        let empty = SystemState { queue: QueueState::EMPTY, channel: c };
        assert_eq!(cost(&empty), 0.0);
        assert_eq!(cost(&SystemState { queue: QueueState::new(2, 0, 1, 0), channel: c }), 3.0);
        assert_eq!(cost(&SystemState { queue: QueueState::new(2, 1, 1, 0), channel: c }), 4.0);
        assert_eq!(reward(&QueueState::new(2, 1, 1, 0), DEFAULT_EMPTY_REWARD), 0.25);
        assert_eq!(reward(&QueueState::new(0, 0, 1, 0), DEFAULT_EMPTY_REWARD), 1.0);
        assert_eq!(reward(&QueueState::EMPTY, DEFAULT_EMPTY_REWARD), 2.0);
    }

    #[test]
    fn rejects_invalid_probabilities() {
        let err = SystemModel::new(
            ModelConfig { lambda: 1.0, mean_pkt_bits: 5e5, tau: 0.1, q0_max: 4, q1_max: 0, variant: Variant::Base },
            rates(),
            coupled(),
        );
        assert!(matches!(err, Err(MdpError::InvalidConfig(_))));
    }

    #[test]
    fn state_ids_round_trip() {
        let m = model(Variant::MmwaveBuffer, 1.0, 1e-3);
        assert_eq!(m.space().len(), 5 * 3 * 4 * 10);
        for id in 0..m.space().len() {
            assert_eq!(m.space().index_of(&m.space().state(id)), Some(id));
        }
    }
}
