//! Slotted discrete-event simulator of the scheduler.
//!
//! Each slot samples the same four-branch event and channel step that
//! [`build_kernel`](crate::mdp::build_kernel) writes down, so long-run
//! averages can be checked against the exact solvers. The channel is
//! exogenous, so a replication draws its path (holding times and jumps) from
//! a random stream of its own. Stretches of slots in which a deterministic
//! decision leaves the queue untouched are skipped in one geometric draw,
//! cut at the next channel change; the resulting path law is identical to
//! slot-by-slot stepping.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::channel::KernelSampler;
use crate::mdp::{Action, Event, MdpError, QueueState, SystemModel, SystemState};
use crate::policy::{point_mass, ActionDist, InfoLevel, Observation, SchedulingPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Slots per replication, warmup included.
    pub horizon: u64,
    /// Leading slots excluded from the statistics; must be below `horizon`.
    pub warmup: u64,
    pub seed: u64,
    pub replications: usize,
    #[serde(default)]
    pub info: InfoLevel,
    /// Record the first this many slots of replication 0.
    #[serde(default)]
    pub trace_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { horizon: 1_100_000, warmup: 100_000, seed: 1, replications: 10, info: InfoLevel::FullCsi, trace_len: 0 }
    }
}

/// Statistics of one replication, all over post-warmup slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub slots: u64,
    /// Time-average number of packets in the system.
    pub mean_occupancy: f64,
    pub arrivals: u64,
    pub drops: u64,
    /// Accepted arrivals per second.
    pub lambda_eff: f64,
    /// Little's-law delay `L / lambda_eff`, seconds.
    pub mean_delay_s: f64,
    /// Mean sojourn of packets that both arrived and left after warmup.
    pub tagged_delay_s: f64,
    pub tagged_packets: u64,
    /// Decisions the policy did not cover; `(0,0)` was used instead.
    pub fallbacks: u64,
    /// Fraction of slots spent in each state id.
    pub state_freq: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub policy: String,
    pub sub6_rate: Option<f64>,
    pub mean_occupancy: f64,
    pub lambda_eff: f64,
    pub mean_delay_s: f64,
    /// Half-width of the 95% Student-t interval for the mean delay across
    /// replications; NaN with a single replication.
    pub ci_halfwidth: f64,
    pub drops: u64,
    pub fallbacks: u64,
    /// Replication-averaged fraction of slots per state id.
    pub state_freq: Vec<f64>,
    /// Mean occupancy reached 90% of the buffer capacity: the queue is
    /// pinned at its truncation and the delay estimate is meaningless.
    pub saturated: bool,
    pub replications: Vec<RepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub q0: usize,
    pub q1: usize,
    pub s_mm: u8,
    pub s_sub6: u8,
    pub link_state: String,
    pub capacity_level: usize,
    pub a_mm: u8,
    pub a_sub6: u8,
    pub event: String,
}

/// Mean and 95% half-width of a sample.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Draws an action from a distribution over [`Action::ALL`].
pub fn sample_action<R: Rng + ?Sized>(d: &ActionDist, rng: &mut R) -> Action {
    let u: f64 = rng.gen::<f64>() * d.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in d.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_index(i);
        }
    }
    Action::from_index(d.iter().rposition(|p| *p > 0.0).unwrap_or(0))
}

fn deterministic(d: &ActionDist) -> Option<Action> {
    let mut it = d.iter().enumerate().filter(|(_, p)| **p > 0.0);
    match (it.next(), it.next()) {
        (Some((i, _)), None) => Some(Action::from_index(i)),
        _ => None,
    }
}

/// Simulation state: queue plus channel condition index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimState {
    pub queue: QueueState,
    pub condition: usize,
}

/// Outcome of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub event: Event,
    pub dropped: bool,
    pub next: SimState,
}

/// Shared sampler over one model.
pub struct Simulator<'a> {
    model: &'a SystemModel,
    channel: KernelSampler,
    stationary: KernelSampler,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a SystemModel) -> Result<Self, MdpError> {
        let pi = model.channel.stationary()?;
        Ok(Self { model, channel: KernelSampler::new(model.channel.kernel()), stationary: KernelSampler::new(&vec![pi]) })
    }

    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn system_state(&self, s: &SimState) -> SystemState {
        SystemState { queue: s.queue, channel: self.model.channel.conditions()[s.condition] }
    }

    /// Empty queue, channel drawn from its stationary law.
    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> SimState {
        SimState { queue: QueueState::EMPTY, condition: self.stationary.sample(0, rng) }
    }

    /// One exact slot under action `a`, which must be feasible.
    pub fn step<R: Rng + ?Sized>(&self, s: &SimState, a: Action, rng: &mut R) -> StepOutcome {
        debug_assert!(self.model.feasible_mask(&s.queue)[a.index()], "infeasible action {a} in {}", s.queue);
        let routed = self.model.route(&s.queue, a);
        let probs = self.model.event_probs(&routed, s.condition);
        let event = Self::sample_event(&probs, 4, 1.0, rng);
        let (queue, dropped) = self.model.apply_event(&routed, event);
        let condition = self.channel.sample(s.condition, rng);
        StepOutcome { event, dropped, next: SimState { queue, condition } }
    }

    fn sample_event<R: Rng + ?Sized>(probs: &[f64; 4], take: usize, scale: f64, rng: &mut R) -> Event {
        let u: f64 = rng.gen::<f64>() * scale;
        let mut acc = 0.0;
        for (e, p) in Event::ALL.into_iter().zip(probs).take(take) {
            acc += p;
            if u < acc {
                return e;
            }
        }
        Event::ALL[..take].iter().rev().zip(probs[..take].iter().rev()).find(|(_, p)| **p > 0.0).map_or(Event::Nothing, |(e, _)| *e)
    }
}

/// Channel path of one replication, drawn from its own random stream so that
/// every policy simulated with the same seed sees the same channel.
struct ChannelPath {
    rng: ChaCha8Rng,
    condition: usize,
    /// First slot spent in a different condition; `u64::MAX` if absorbing.
    change_at: u64,
}

impl ChannelPath {
    fn new(sim: &Simulator, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let condition = sim.stationary.sample(0, &mut rng);
        let mut path = Self { rng, condition, change_at: 0 };
        path.change_at = path.hold(sim, 0);
        path
    }

    /// Slot at which the current condition, entered at `from`, is left.
    fn hold(&mut self, sim: &Simulator, from: u64) -> u64 {
        let stay = sim.model.channel.kernel()[self.condition][self.condition];
        if stay >= 1.0 {
            return u64::MAX;
        }
        let extra = if stay <= 0.0 { 0 } else { Geometric::new(1.0 - stay).expect("probability in (0,1]").sample(&mut self.rng) };
        from.saturating_add(1).saturating_add(extra)
    }

    /// Moves to the next condition, drawn from the kernel row without its
    /// diagonal.
    fn advance(&mut self, sim: &Simulator) {
        let row = &sim.model.channel.kernel()[self.condition];
        let v: f64 = self.rng.gen::<f64>() * (1.0 - row[self.condition]);
        let mut acc = 0.0;
        let mut pick = None;
        for (j, &p) in row.iter().enumerate() {
            if j == self.condition || p == 0.0 {
                continue;
            }
            acc += p;
            pick = Some(j);
            if v < acc {
                break;
            }
        }
        self.condition = pick.expect("channel leaves its state with positive probability");
        self.change_at = self.hold(sim, self.change_at);
    }
}

/// FIFO arrival stamps of packets in each part of the system.
#[derive(Default)]
struct Tags {
    q0: VecDeque<u64>,
    q1: VecDeque<u64>,
    mm: Option<u64>,
    sub6: Option<u64>,
}

impl Tags {
    fn route(&mut self, a: Action, buffered: bool) {
        if a.a_sub6 == 1 {
            self.sub6 = self.q0.pop_front();
        }
        if a.a_mm == 1 {
            let p = self.q0.pop_front();
            if buffered {
                self.q1.extend(p);
            } else {
                self.mm = p;
            }
        }
        if buffered {
            self.load_mm();
        }
    }

    fn load_mm(&mut self) {
        if self.mm.is_none() {
            self.mm = self.q1.pop_front();
        }
    }

    /// Returns the arrival stamp of a departing packet.
    fn apply(&mut self, event: Event, slot: u64, dropped: bool, buffered: bool) -> Option<u64> {
        match event {
            Event::Arrival if !dropped => {
                self.q0.push_back(slot);
                None
            }
            Event::MmDeparture => {
                let p = self.mm.take();
                if buffered {
                    self.load_mm();
                }
                p
            }
            Event::Sub6Departure => self.sub6.take(),
            _ => None,
        }
    }
}

/// One replication. Slot numbers include warmup.
pub fn run_replication(
    sim: &Simulator,
    policy: &dyn SchedulingPolicy,
    cfg: &SimConfig,
    rep: usize,
) -> Result<(RepMetrics, Vec<TraceRow>), MdpError> {
    let model = sim.model();
    let buffered = model.variant() == crate::mdp::Variant::MmwaveBuffer;
    let tau = model.config.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2 * rep as u64);
    let mut channel = ChannelPath::new(sim, cfg.seed, 2 * rep as u64 + 1);
    let end = cfg.horizon;
    let space = model.space();
    let mut visits = vec![0u64; space.len()];
    let mut fallbacks = 0u64;
    let trace_len = if rep == 0 { cfg.trace_len as u64 } else { 0 };

    let mut queue = QueueState::EMPTY;
    let mut tags = Tags::default();
    let mut trace = Vec::new();
    let (mut occupancy, mut arrivals, mut drops) = (0.0f64, 0u64, 0u64);
    let (mut tagged_sum, mut tagged_n) = (0u64, 0u64);
    let mut t = 0u64;
    while t < end {
        let s = SimState { queue, condition: channel.condition };
        let state = sim.system_state(&s);
        let obs = Observation::of(&state, cfg.info);
        let dist = policy.decide(&obs).unwrap_or_else(|| {
            fallbacks += 1;
            point_mass(Action::IDLE)
        });
        let det = deterministic(&dist);
        let a = det.unwrap_or_else(|| sample_action(&dist, &mut rng));
        if !model.feasible_mask(&s.queue)[a.index()] {
            return Err(MdpError::InvalidConfig(format!("policy {} chose infeasible {a} in {}", policy.name(), state.queue)));
        }
        let n = s.queue.total() as f64;
        let idle_action = det.is_some() && model.route(&s.queue, a) == s.queue;
        let routed = model.route(&s.queue, a);
        let probs = model.event_probs(&routed, s.condition);
        // slots t..=last are spent in state s; the event lands in the last one
        let (last, event) = if idle_action && t >= trace_len {
            let p_nothing = probs[3];
            let k = if p_nothing >= 1.0 {
                u64::MAX
            } else if p_nothing <= 0.0 {
                0
            } else {
                Geometric::new(1.0 - p_nothing).expect("probability in (0,1)").sample(&mut rng)
            };
            if t.saturating_add(k) < channel.change_at {
                (t + k, Simulator::sample_event(&probs, 3, 1.0 - p_nothing, &mut rng))
            } else {
                (channel.change_at - 1, Event::Nothing)
            }
        } else {
            (t, Simulator::sample_event(&probs, 4, 1.0, &mut rng))
        };
        let (next_queue, dropped) = model.apply_event(&routed, event);
        let counted_from = t.max(cfg.warmup);
        let counted_to = last.min(end - 1);
        if counted_to >= counted_from {
            let span = counted_to - counted_from + 1;
            occupancy += n * span as f64;
            visits[space.index_of(&state).expect("state inside space")] += span;
        }
        if last >= end {
            break;
        }
        if t < trace_len {
            let c = model.channel.conditions()[s.condition];
            trace.push(TraceRow {
                slot: t,
                q0: s.queue.q0,
                q1: s.queue.q1,
                s_mm: s.queue.s_mm,
                s_sub6: s.queue.s_sub6,
                link_state: c.mm.link.symbol().into(),
                capacity_level: c.mm.level + 1,
                a_mm: a.a_mm,
                a_sub6: a.a_sub6,
                event: event.as_str().into(),
            });
        }
        tags.route(a, buffered);
        if last >= cfg.warmup && event == Event::Arrival {
            arrivals += 1;
            drops += u64::from(dropped);
        }
        if let Some(arrived) = tags.apply(event, last, dropped, buffered) {
            if arrived >= cfg.warmup {
                tagged_sum += last - arrived;
                tagged_n += 1;
            }
        }
        queue = next_queue;
        t = last + 1;
        if t == channel.change_at {
            channel.advance(sim);
        }
    }
    let slots = cfg.horizon - cfg.warmup;
    let mean_occupancy = occupancy / slots as f64;
    let lambda_eff = (arrivals - drops) as f64 / (slots as f64 * tau);
    Ok((
        RepMetrics {
            slots,
            mean_occupancy,
            arrivals,
            drops,
            lambda_eff,
            mean_delay_s: mean_occupancy / lambda_eff,
            tagged_delay_s: tagged_sum as f64 * tau / tagged_n as f64,
            tagged_packets: tagged_n,
            fallbacks,
            state_freq: visits.iter().map(|&v| v as f64 / slots as f64).collect(),
        },
        trace,
    ))
}

/// Runs all replications in parallel. Replication `r` draws events from
/// stream `2r` and its channel path from stream `2r + 1` of the configured
/// seed, so results do not depend on thread scheduling and policies run with
/// the same seed face identical channel paths.
pub fn run(model: &SystemModel, policy: &dyn SchedulingPolicy, cfg: &SimConfig) -> Result<(Metrics, Vec<TraceRow>), MdpError> {
    if cfg.replications == 0 || cfg.warmup >= cfg.horizon {
        return Err(MdpError::InvalidConfig("need at least one replication and warmup < horizon".into()));
    }
    let sim = Simulator::new(model)?;
    let results: Vec<(RepMetrics, Vec<TraceRow>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(&sim, policy, cfg, r))
        .collect::<Result<_, _>>()?;
    let mut trace = Vec::new();
    let mut reps = Vec::with_capacity(results.len());
    for (r, t) in results {
        if trace.is_empty() {
            trace = t;
        }
        reps.push(r);
    }
    Ok((summarize(policy.name(), None, reps, model), trace))
}

fn summarize(policy: String, sub6_rate: Option<f64>, reps: Vec<RepMetrics>, model: &SystemModel) -> Metrics {
    let delays: Vec<f64> = reps.iter().map(|r| r.mean_delay_s).collect();
    let (mean_delay_s, ci_halfwidth) = mean_ci(&delays);
    let k = reps.len() as f64;
    let mean_occupancy = reps.iter().map(|r| r.mean_occupancy).sum::<f64>() / k;
    let capacity = (model.config.q0_max + model.config.q1_max + 2) as f64;
    let mut state_freq = vec![0.0; model.space().len()];
    for r in &reps {
        for (f, x) in state_freq.iter_mut().zip(&r.state_freq) {
            *f += x / k;
        }
    }
    Metrics {
        policy,
        sub6_rate,
        mean_occupancy,
        lambda_eff: reps.iter().map(|r| r.lambda_eff).sum::<f64>() / k,
        mean_delay_s,
        ci_halfwidth,
        drops: reps.iter().map(|r| r.drops).sum(),
        fallbacks: reps.iter().map(|r| r.fallbacks).sum(),
        state_freq,
        saturated: mean_occupancy >= 0.9 * capacity,
        replications: reps,
    }
}

/// Builds the policies to compare at one sub-6 rate.
pub type PolicyFactory<'a> = dyn Fn(&SystemModel) -> Result<Vec<Box<dyn SchedulingPolicy>>, MdpError> + Sync + 'a;

#[derive(Debug, Clone, Default)]
pub struct Sweep {
    pub rows: Vec<Metrics>,
    /// `(rate, policy)` pairs whose run saturated; their rows are omitted.
    pub unstable: Vec<(f64, String)>,
}

/// Simulates every policy produced by `policies` at each sub-6 rate.
pub fn sweep_sub6(model: &SystemModel, rates: &[f64], policies: &PolicyFactory, cfg: &SimConfig) -> Result<Sweep, MdpError> {
    let mut sweep = Sweep::default();
    for &rate in rates {
        let m = model.with_sub6_rate(rate)?;
        for p in policies(&m)? {
            let (mut metrics, _) = run(&m, p.as_ref(), cfg)?;
            metrics.sub6_rate = Some(rate);
            if metrics.saturated {
                sweep.unstable.push((rate, metrics.policy));
            } else {
                sweep.rows.push(metrics);
            }
        }
    }
    Ok(sweep)
}

pub fn write_metrics_csv<W: Write>(rows: &[Metrics], out: W) -> Result<(), MdpError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "sub6_rate", "mean_delay_s", "ci_halfwidth", "L", "lambda_eff", "drops"])?;
    for m in rows {
        w.write_record([
            m.policy.clone(),
            m.sub6_rate.map_or(String::new(), |r| r.to_string()),
            format!("{:e}", m.mean_delay_s),
            format!("{:e}", m.ci_halfwidth),
            format!("{}", m.mean_occupancy),
            format!("{}", m.lambda_eff),
            m.drops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), MdpError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
