//! Tabular Q-learning with masked maximization over feasible actions.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::LinkState;
use crate::mdp::{reward, Action, MdpError, QueueState, StateSpace, SystemModel};
use crate::policy::{point_mass, ActionDist, InfoLevel, Observation, SchedulingPolicy};
use crate::sim::{SimState, Simulator};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("action {action} is infeasible in observed state {state}")]
    Infeasible { state: String, action: Action },
    #[error("Q-value {value:e} exceeds the divergence bound {bound:e} at step {step}")]
    Diverged { step: u64, value: f64, bound: f64 },
    #[error("invalid learning configuration: {0}")]
    InvalidConfig(String),
    #[error("Q-table does not match the environment: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What the learner sees at the large-scale CSI level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedState {
    pub queue: QueueState,
    pub link: LinkState,
}

/// Per-slot reward signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `1/(packets in system)`, `r_empty` when empty.
    #[default]
    Reciprocal,
    /// Minus the number of packets in the system.
    NegativeCost,
}

/// Initial Q-value of every entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QInit {
    /// `r_max / (1 - gamma)`.
    #[default]
    Optimistic,
    Zero,
    /// `r / (1 - gamma)`: the value of receiving `r` every slot.
    Reward(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub steps: u64,
    pub gamma: f64,
    /// Step size `1 / (1 + visits)^alpha_exponent`.
    pub alpha_exponent: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training over which epsilon decays exponentially.
    pub epsilon_decay_fraction: f64,
    pub seed: u64,
    pub reward: RewardKind,
    pub r_empty: f64,
    /// Subtracted from the reward in slots where the head buffer is full,
    /// so that arrivals would be dropped.
    pub overflow_penalty: f64,
    pub init: QInit,
    /// Steps per convergence-log window.
    pub log_window: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            steps: 5_000_000,
            gamma: 0.99,
            alpha_exponent: 0.6,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.5,
            seed: 1,
            reward: RewardKind::Reciprocal,
            r_empty: crate::mdp::DEFAULT_EMPTY_REWARD,
            overflow_penalty: 0.0,
            init: QInit::Optimistic,
            log_window: 100_000,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |m: &str| Err(LearningError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad("epsilon decay fraction must lie in (0, 1]");
        }
        if !(self.alpha_exponent > 0.5 && self.alpha_exponent <= 1.0) {
            return bad("alpha exponent must lie in (0.5, 1]");
        }
        if !(self.overflow_penalty >= 0.0 && self.overflow_penalty.is_finite()) {
            return bad("overflow penalty must be finite and nonnegative");
        }
        if let QInit::Reward(r) = self.init {
            if !r.is_finite() {
                return bad("initial reward level must be finite");
            }
        }
        if self.log_window == 0 {
            return bad("log window must be positive");
        }
        Ok(())
    }

    /// Exploration rate at step `t`.
    pub fn epsilon(&self, t: u64) -> f64 {
        let horizon = self.epsilon_decay_fraction * self.steps as f64;
        let x = t as f64 / horizon;
        if x >= 1.0 {
            return self.epsilon_end;
        }
        if self.epsilon_end <= 0.0 {
            // exponential decay towards zero, reaching it at the end of the window
            return self.epsilon_start * (1.0 - x) * (-5.0 * x).exp();
        }
        self.epsilon_start * (self.epsilon_end / self.epsilon_start).powf(x)
    }

    pub fn alpha(&self, visits: u64) -> f64 {
        (1.0 + visits as f64).powf(-self.alpha_exponent)
    }

    pub fn initial_value(&self) -> f64 {
        match self.init {
            QInit::Optimistic => self.r_max() / (1.0 - self.gamma),
            QInit::Zero => 0.0,
            QInit::Reward(r) => r / (1.0 - self.gamma),
        }
    }

    /// Largest reward the environment can emit.
    pub fn r_max(&self) -> f64 {
        match self.reward {
            RewardKind::Reciprocal => self.r_empty.max(1.0),
            RewardKind::NegativeCost => 0.0,
        }
    }
}

/// A learning environment with a finite observation space.
pub trait Environment {
    fn n_observations(&self) -> usize;
    fn observe(&self) -> usize;
    fn feasible(&self, obs: usize) -> [bool; 4];
    /// Applies `a` for one step and returns the reward of the state it was
    /// taken in.
    fn step(&mut self, a: Action, rng: &mut ChaCha8Rng) -> f64;
    /// Stable text key of an observation, used for persistence.
    fn describe(&self, obs: usize) -> String;
    /// Largest `|reward|` the environment can emit.
    fn reward_bound(&self) -> f64;
}

/// Dense Q-table over observation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 4]>,
    visits: Vec<[u64; 4]>,
    mask: Vec<[bool; 4]>,
}

impl QTable {
    pub fn new(masks: Vec<[bool; 4]>, init: f64) -> Self {
        let n = masks.len();
        let values = masks.iter().map(|m| m.map(|ok| if ok { init } else { 0.0 })).collect();
        Self { values, visits: vec![[0; 4]; n], mask: masks }
    }

    pub fn for_env(env: &dyn Environment, init: f64) -> Self {
        Self::new((0..env.n_observations()).map(|o| env.feasible(o)).collect(), init)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, s: usize, a: Action) -> Option<f64> {
        self.mask[s][a.index()].then(|| self.values[s][a.index()])
    }

    pub fn visits(&self, s: usize, a: Action) -> u64 {
        self.visits[s][a.index()]
    }

    pub fn is_visited(&self, s: usize) -> bool {
        self.visits[s].iter().any(|&v| v > 0)
    }

    pub fn feasible(&self, s: usize) -> [bool; 4] {
        self.mask[s]
    }

    /// `max_a Q(s, a)` over feasible actions.
    pub fn max_value(&self, s: usize) -> f64 {
        Action::ALL
            .iter()
            .filter(|a| self.mask[s][a.index()])
            .map(|a| self.values[s][a.index()])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Feasible argmax; exact ties go to the lexicographically first action.
    pub fn greedy(&self, s: usize) -> Action {
        let mut best: Option<(Action, f64)> = None;
        for a in Action::ALL {
            if self.mask[s][a.index()] {
                let v = self.values[s][a.index()];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((a, v));
                }
            }
        }
        best.expect("every state has a feasible action").0
    }

    /// `Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a'))`.
    /// Returns the absolute change.
    pub fn update(&mut self, s: usize, a: Action, r: f64, next: usize, alpha: f64, gamma: f64) -> Result<f64, LearningError> {
        if !self.mask[s][a.index()] {
            return Err(LearningError::Infeasible { state: s.to_string(), action: a });
        }
        let target = r + gamma * self.max_value(next);
        let q = &mut self.values[s][a.index()];
        let old = *q;
        *q = (1.0 - alpha) * old + alpha * target;
        self.visits[s][a.index()] += 1;
        Ok((*q - old).abs())
    }
}

/// Free-function form of [`QTable::update`].
pub fn q_update(q: &mut QTable, s: usize, a: Action, r: f64, next: usize, alpha: f64, gamma: f64) -> Result<f64, LearningError> {
    q.update(s, a, r, next, alpha, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epsilon: f64,
    /// Largest `|Delta Q|` within the window.
    pub max_delta: f64,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub table: QTable,
    pub log: Vec<LogEntry>,
}

/// Epsilon-greedy Q-learning for `cfg.steps` steps. Deterministic given
/// `cfg.seed`.
pub fn train(env: &mut dyn Environment, cfg: &LearningConfig) -> Result<Training, LearningError> {
    cfg.validate()?;
    let bound_r = env.reward_bound().max(cfg.r_max().abs());
    let init = cfg.initial_value();
    let guard = 10.0 * bound_r.max(f64::MIN_POSITIVE) / (1.0 - cfg.gamma);
    let mut table = QTable::for_env(env, init);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut window_max = 0.0f64;
    let mut s = env.observe();
    for t in 0..cfg.steps {
        let eps = cfg.epsilon(t);
        let a = if rng.gen::<f64>() < eps {
            let feasible: Vec<Action> = Action::ALL.into_iter().filter(|a| table.mask[s][a.index()]).collect();
            feasible[rng.gen_range(0..feasible.len())]
        } else {
            table.greedy(s)
        };
        let r = env.step(a, &mut rng);
        let next = env.observe();
        let alpha = cfg.alpha(table.visits[s][a.index()]);
        let delta = table.update(s, a, r, next, alpha, cfg.gamma)?;
        let v = table.values[s][a.index()];
        if v.abs() > guard || !v.is_finite() {
            return Err(LearningError::Diverged { step: t, value: v, bound: guard });
        }
        window_max = window_max.max(delta);
        if (t + 1) % cfg.log_window == 0 {
            log.push(LogEntry { step: t + 1, epsilon: eps, max_delta: window_max });
            window_max = 0.0;
        }
        s = next;
    }
    Ok(Training { table, log })
}

/// Greedy action per observation; unvisited observations get `(0,0)` and are
/// flagged.
pub fn greedy_policy(q: &QTable) -> (Vec<Action>, Vec<bool>) {
    (0..q.len())
        .map(|s| if q.is_visited(s) { (q.greedy(s), false) } else { (Action::IDLE, true) })
        .unzip()
}

/// The scheduler MDP, simulated, seen through an information level.
pub struct ModelEnv<'a> {
    sim: Simulator<'a>,
    state: SimState,
    level: InfoLevel,
    reward: RewardKind,
    r_empty: f64,
    overflow_penalty: f64,
}

impl<'a> ModelEnv<'a> {
    pub fn new(model: &'a SystemModel, level: InfoLevel, cfg: &LearningConfig) -> Result<Self, LearningError> {
        let sim = Simulator::new(model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        let state = sim.initial(&mut rng);
        Ok(Self { sim, state, level, reward: cfg.reward, r_empty: cfg.r_empty, overflow_penalty: cfg.overflow_penalty })
    }

    pub fn model(&self) -> &SystemModel {
        self.sim.model()
    }

    pub fn level(&self) -> InfoLevel {
        self.level
    }
}

/// Index of an observation within the observation space of `level`.
fn observation_index(space: &StateSpace, level: InfoLevel, obs: &Observation) -> Option<usize> {
    let qi = space.queue_index(&obs.queue)?;
    match level {
        InfoLevel::QsiOnly => Some(qi),
        InfoLevel::LargeScaleCsi => Some(qi * 3 + obs.link?.index()),
        InfoLevel::FullCsi => space.id_from_parts(&obs.queue, space.conditions().iter().position(|c| Some(*c) == obs.channel)?),
    }
}

fn observation_count(space: &StateSpace, level: InfoLevel) -> usize {
    match level {
        InfoLevel::QsiOnly => space.queue_states(),
        InfoLevel::LargeScaleCsi => space.queue_states() * 3,
        InfoLevel::FullCsi => space.len(),
    }
}

/// Queue state (and link, where observed) of an observation index.
fn observation_queue(space: &StateSpace, level: InfoLevel, obs: usize) -> (QueueState, Option<LinkState>) {
    let qi = match level {
        InfoLevel::QsiOnly => obs,
        InfoLevel::LargeScaleCsi => obs / 3,
        InfoLevel::FullCsi => return (space.parts(obs).0, Some(space.state(obs).channel.mm.link)),
    };
    let link = (level == InfoLevel::LargeScaleCsi).then(|| LinkState::from_index(obs % 3).unwrap());
    (space.parts(qi * space.conditions().len()).0, link)
}

impl Environment for ModelEnv<'_> {
    fn n_observations(&self) -> usize {
        observation_count(self.sim.model().space(), self.level)
    }

    fn observe(&self) -> usize {
        let st = self.sim.system_state(&self.state);
        observation_index(self.sim.model().space(), self.level, &Observation::of(&st, self.level)).expect("state inside space")
    }

    fn feasible(&self, obs: usize) -> [bool; 4] {
        let (q, _) = observation_queue(self.sim.model().space(), self.level, obs);
        self.sim.model().feasible_mask(&q)
    }

    fn step(&mut self, a: Action, rng: &mut ChaCha8Rng) -> f64 {
        let r = match self.reward {
            RewardKind::Reciprocal => reward(&self.state.queue, self.r_empty),
            RewardKind::NegativeCost => -(self.state.queue.total() as f64),
        };
        let full = self.state.queue.q0 == self.sim.model().config.q0_max;
        let r = if full { r - self.overflow_penalty } else { r };
        self.state = self.sim.step(&self.state, a, rng).next;
        r
    }

    fn describe(&self, obs: usize) -> String {
        let space = self.sim.model().space();
        match self.level {
            InfoLevel::FullCsi => {
                let s = space.state(obs);
                format!("{}|{}", s.queue, self.sim.model().channel.label(&s.channel))
            }
            _ => {
                let (q, link) = observation_queue(space, self.level, obs);
                match link {
                    Some(l) => format!("{q}|{l}"),
                    None => q.to_string(),
                }
            }
        }
    }

    fn reward_bound(&self) -> f64 {
        let base = match self.reward {
            RewardKind::Reciprocal => self.r_empty.max(1.0),
            RewardKind::NegativeCost => {
                let c = &self.sim.model().config;
                (c.q0_max + c.q1_max + 2) as f64
            }
        };
        base + self.overflow_penalty
    }
}

/// Deterministic policy over the observations of one information level.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    space: StateSpace,
    level: InfoLevel,
    actions: Vec<Action>,
    flagged: Vec<bool>,
    label: String,
}

impl LearnedPolicy {
    pub fn from_table(q: &QTable, model: &SystemModel, level: InfoLevel, label: impl Into<String>) -> Result<Self, LearningError> {
        let space = model.space().clone();
        if q.len() != observation_count(&space, level) {
            return Err(LearningError::Mismatch(format!("{} entries for {} observations", q.len(), observation_count(&space, level))));
        }
        let (actions, flagged) = greedy_policy(q);
        Ok(Self { space, level, actions, flagged, label: label.into() })
    }

    pub fn level(&self) -> InfoLevel {
        self.level
    }

    pub fn action(&self, obs: usize) -> Action {
        self.actions[obs]
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    /// Action for a queue state and link, at the large-scale CSI level.
    pub fn action_for(&self, queue: &QueueState, link: LinkState) -> Option<Action> {
        let obs = Observation { queue: *queue, link: Some(link), channel: None };
        observation_index(&self.space, self.level, &obs).map(|i| self.actions[i])
    }
}

impl SchedulingPolicy for LearnedPolicy {
    fn decide(&self, obs: &Observation) -> Option<ActionDist> {
        let i = observation_index(&self.space, self.level, obs)?;
        (!self.flagged[i]).then(|| point_mass(self.actions[i]))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableHeader {
    pub version: String,
    pub info_level: InfoLevel,
    pub config: LearningConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QEntry {
    pub state: String,
    pub action: String,
    pub value: f64,
    pub visits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableDoc {
    pub header: QTableHeader,
    pub entries: Vec<QEntry>,
}

impl QTable {
    /// Entries for feasible pairs only, keyed by the environment's descriptions.
    pub fn to_doc(&self, env: &dyn Environment, header: QTableHeader) -> QTableDoc {
        let mut entries = Vec::new();
        for s in 0..self.len() {
            let key = env.describe(s);
            for a in Action::ALL {
                if self.mask[s][a.index()] {
                    entries.push(QEntry {
                        state: key.clone(),
                        action: a.to_string(),
                        value: self.values[s][a.index()],
                        visits: self.visits[s][a.index()],
                    });
                }
            }
        }
        QTableDoc { header, entries }
    }

    pub fn from_doc(doc: &QTableDoc, env: &dyn Environment) -> Result<Self, LearningError> {
        let n = env.n_observations();
        let index: std::collections::HashMap<String, usize> = (0..n).map(|s| (env.describe(s), s)).collect();
        let mut table = QTable::for_env(env, 0.0);
        let mut seen = vec![[false; 4]; n];
        for e in &doc.entries {
            let s = *index.get(&e.state).ok_or_else(|| LearningError::Mismatch(format!("unknown state {}", e.state)))?;
            let a = Action::ALL
                .into_iter()
                .find(|a| a.to_string() == e.action)
                .ok_or_else(|| LearningError::Mismatch(format!("unknown action {}", e.action)))?;
            if !table.mask[s][a.index()] {
                return Err(LearningError::Infeasible { state: e.state.clone(), action: a });
            }
            table.values[s][a.index()] = e.value;
            table.visits[s][a.index()] = e.visits;
            seen[s][a.index()] = true;
        }
        if seen != table.mask {
            return Err(LearningError::Mismatch("document does not cover every feasible pair".into()));
        }
        Ok(table)
    }
}

pub fn write_qtable<W: Write>(doc: &QTableDoc, out: W) -> Result<(), LearningError> {
    serde_json::to_writer_pretty(out, doc)?;
    Ok(())
}

pub fn read_qtable<R: Read>(input: R) -> Result<QTableDoc, LearningError> {
    Ok(serde_json::from_reader(input)?)
}
