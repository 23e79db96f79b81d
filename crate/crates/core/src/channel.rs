//! Finite-state Markov models of the mmWave and sub-6 GHz channels.
//!
//! The mmWave channel has two layers: a long-term link chain over
//! {LoS, NLoS, outage} and, inside each link state, a small-scale chain over
//! quantized capacity levels. The combined kernel moves within a link state
//! along the small-scale chain, and on a link change redraws the capacity
//! level from the stationary distribution of the new link state.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense row-major matrix.
pub type Matrix = Vec<Vec<f64>>;

/// Row sums of every accepted kernel must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Stationary vectors must be fixed points of their kernel within this.
pub const FIXED_POINT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
    #[error("stationary distribution did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("capacity log argument {0} is not positive")]
    Domain(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Long-term link state of the mmWave channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    Los,
    Nlos,
    Outage,
}

impl LinkState {
    pub const ALL: [LinkState; 3] = [LinkState::Los, LinkState::Nlos, LinkState::Outage];

    pub fn index(self) -> usize {
        match self {
            LinkState::Los => 0,
            LinkState::Nlos => 1,
            LinkState::Outage => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            LinkState::Los => "l",
            LinkState::Nlos => "n",
            LinkState::Outage => "o",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "l" | "los" => Some(LinkState::Los),
            "n" | "nlos" => Some(LinkState::Nlos),
            "o" | "outage" => Some(LinkState::Outage),
            _ => None,
        }
    }
}

impl fmt::Display for LinkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One value per link state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLink<T> {
    pub los: T,
    pub nlos: T,
    pub outage: T,
}

impl<T> PerLink<T> {
    pub fn get(&self, link: LinkState) -> &T {
        match link {
            LinkState::Los => &self.los,
            LinkState::Nlos => &self.nlos,
            LinkState::Outage => &self.outage,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(LinkState, &T) -> U) -> PerLink<U> {
        PerLink {
            los: f(LinkState::Los, &self.los),
            nlos: f(LinkState::Nlos, &self.nlos),
            outage: f(LinkState::Outage, &self.outage),
        }
    }
}

/// A quantized capacity level. `index` is 1-based within its link state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityLevel {
    pub link: LinkState,
    pub index: usize,
    pub capacity: f64,
}

/// Combined mmWave channel state: link state plus 0-based capacity level
/// within that link state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelState {
    pub link: LinkState,
    pub level: usize,
}

impl ChannelState {
    pub fn new(link: LinkState, level: usize) -> Self {
        Self { link, level }
    }

    /// Short label such as `l`, `n1`, `n3`, `o`.
    pub fn label(&self, levels_in_link: usize) -> String {
        if levels_in_link <= 1 {
            self.link.symbol().to_string()
        } else {
            format!("{}{}", self.link.symbol(), self.level + 1)
        }
    }
}

/// Quantized capacity values per link state, normalized so the maximum is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacities(pub PerLink<Vec<f64>>);

impl Capacities {
    pub fn validate(&self) -> Result<(), ChannelError> {
        for link in LinkState::ALL {
            let levels = self.0.get(link);
            if levels.is_empty() {
                return Err(ChannelError::InvalidModel(format!("link {link} has no capacity levels")));
            }
            if levels.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(ChannelError::InvalidModel(format!(
                    "capacities of link {link} must lie in [0, 1]"
                )));
            }
        }
        if self.0.outage.len() != 1 || self.0.outage[0] != 0.0 {
            return Err(ChannelError::InvalidModel(
                "outage must have exactly one level with capacity 0".into(),
            ));
        }
        Ok(())
    }

    pub fn levels(&self, link: LinkState) -> usize {
        self.0.get(link).len()
    }

    /// All channel states in canonical order: LoS levels, NLoS levels, outage.
    pub fn states(&self) -> Vec<ChannelState> {
        LinkState::ALL
            .iter()
            .flat_map(|&link| (0..self.levels(link)).map(move |lvl| ChannelState::new(link, lvl)))
            .collect()
    }

    pub fn level(&self, state: ChannelState) -> CapacityLevel {
        CapacityLevel {
            link: state.link,
            index: state.level + 1,
            capacity: self.0.get(state.link)[state.level],
        }
    }

    pub fn label(&self, state: ChannelState) -> String {
        state.label(self.levels(state.link))
    }
}

pub fn check_row_stochastic(m: &Matrix, name: &str) -> Result<(), ChannelError> {
    let n = m.len();
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(ChannelError::InvalidModel(format!("{name} is not square")));
        }
        if row.iter().any(|p| !(0.0..=1.0).contains(p) || p.is_nan()) {
            return Err(ChannelError::InvalidModel(format!("{name} row {i} has an entry outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ChannelError::InvalidModel(format!("{name} row {i} sums to {sum}")));
        }
    }
    Ok(())
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), ChannelError> {
    if p.iter().any(|x| *x < 0.0 || x.is_nan()) {
        return Err(ChannelError::InvalidModel(format!("{name} has a negative entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(ChannelError::InvalidModel(format!("{name} sums to {sum}")));
    }
    Ok(())
}

fn vec_mat(p: &[f64], m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for (pi, row) in p.iter().zip(m) {
        if *pi == 0.0 {
            continue;
        }
        for (o, k) in out.iter_mut().zip(row) {
            *o += pi * k;
        }
    }
    out
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Two-layer mmWave channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TwoLayerDoc", into = "TwoLayerDoc")]
pub struct TwoLayerModel {
    link_kernel: Matrix,
    capacities: Capacities,
    stationary: PerLink<Vec<f64>>,
    small_scale: PerLink<Matrix>,
}

/// JSON layout of [`TwoLayerModel`]. Link states are ordered (l, n, o).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLayerDoc {
    pub link_kernel: Matrix,
    pub capacities: PerLink<Vec<f64>>,
    pub stationary: PerLink<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_scale_kernels: Option<PerLink<Matrix>>,
}

impl TryFrom<TwoLayerDoc> for TwoLayerModel {
    type Error = ChannelError;

    fn try_from(doc: TwoLayerDoc) -> Result<Self, Self::Error> {
        TwoLayerModel::new(doc.link_kernel, Capacities(doc.capacities), doc.stationary, doc.small_scale_kernels)
    }
}

impl From<TwoLayerModel> for TwoLayerDoc {
    fn from(m: TwoLayerModel) -> Self {
        TwoLayerDoc {
            link_kernel: m.link_kernel,
            capacities: m.capacities.0,
            stationary: m.stationary,
            small_scale_kernels: Some(m.small_scale),
        }
    }
}

impl TwoLayerModel {
    /// Builds and validates a model. Missing small-scale kernels default to
    /// i.i.d. capacity levels (every row equal to the stationary distribution).
    pub fn new(
        link_kernel: Matrix,
        capacities: Capacities,
        stationary: PerLink<Vec<f64>>,
        small_scale: Option<PerLink<Matrix>>,
    ) -> Result<Self, ChannelError> {
        if link_kernel.len() != 3 {
            return Err(ChannelError::InvalidModel("link kernel must be 3x3".into()));
        }
        check_row_stochastic(&link_kernel, "link kernel")?;
        capacities.validate()?;
        let small_scale = small_scale
            .unwrap_or_else(|| stationary.map(|_, p| vec![p.clone(); p.len()]));
        for link in LinkState::ALL {
            let n = capacities.levels(link);
            let p = stationary.get(link);
            let q = small_scale.get(link);
            if p.len() != n || q.len() != n {
                return Err(ChannelError::InvalidModel(format!(
                    "link {link}: {n} capacity levels but {} stationary entries and {} kernel rows",
                    p.len(),
                    q.len()
                )));
            }
            check_distribution(p, &format!("stationary distribution of link {link}"))?;
            check_row_stochastic(q, &format!("small-scale kernel of link {link}"))?;
            let residual = l1_diff(&vec_mat(p, q), p);
            if residual > FIXED_POINT_TOL {
                return Err(ChannelError::InvalidModel(format!(
                    "stationary distribution of link {link} is not a fixed point of its kernel (residual {residual:e})"
                )));
            }
        }
        Ok(Self { link_kernel, capacities, stationary, small_scale })
    }

    pub fn link_kernel(&self) -> &Matrix {
        &self.link_kernel
    }

    pub fn capacities(&self) -> &Capacities {
        &self.capacities
    }

    pub fn stationary(&self) -> &PerLink<Vec<f64>> {
        &self.stationary
    }

    pub fn small_scale(&self) -> &PerLink<Matrix> {
        &self.small_scale
    }

    pub fn states(&self) -> Vec<ChannelState> {
        self.capacities.states()
    }

    /// Rescales the link chain to a slot of length `tau` when `link_kernel`
    /// describes transitions per `t_base` seconds: `I + (tau/t_base)(P - I)`.
    pub fn with_link_timescale(&self, tau: f64, t_base: f64) -> Result<Self, ChannelError> {
        if !(tau > 0.0 && t_base > 0.0 && tau <= t_base) {
            return Err(ChannelError::InvalidModel(format!(
                "link timescale needs 0 < tau <= t_base, got tau={tau}, t_base={t_base}"
            )));
        }
        let h = tau / t_base;
        let mut scaled = self.link_kernel.clone();
        for (i, row) in scaled.iter_mut().enumerate() {
            for (j, p) in row.iter_mut().enumerate() {
                *p *= h;
                if i == j {
                    *p += 1.0 - h;
                }
            }
            // keep the row exactly stochastic after rounding
            let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p).sum();
            row[i] = 1.0 - off;
        }
        Self::new(scaled, self.capacities.clone(), self.stationary.clone(), Some(self.small_scale.clone()))
    }
}

/// Combined kernel over all [`ChannelState`]s in canonical order.
pub fn build_combined_kernel(model: &TwoLayerModel) -> Matrix {
    let states = model.states();
    let n = states.len();
    let mut kernel = vec![vec![0.0; n]; n];
    for (r, from) in states.iter().enumerate() {
        let i = from.link;
        for (c, to) in states.iter().enumerate() {
            let j = to.link;
            let p_link = model.link_kernel[i.index()][j.index()];
            kernel[r][c] = if i == j {
                p_link * model.small_scale.get(i)[from.level][to.level]
            } else {
                p_link * model.stationary.get(j)[to.level]
            };
        }
    }
    kernel
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
///
/// Small matrices are squared repeatedly so very slowly mixing chains still
/// converge; the result is polished with ordinary power steps and checked
/// to a residual below 1e-10.
pub fn stationary_distribution(kernel: &Matrix) -> Result<Vec<f64>, ChannelError> {
    check_row_stochastic(kernel, "kernel")?;
    let n = kernel.len();
    if n == 0 {
        return Err(ChannelError::InvalidModel("empty kernel".into()));
    }
    let uniform = vec![1.0 / n as f64; n];
    let mut pi = if n <= 64 {
        let mut m = kernel.clone();
        let mut converged = false;
        for _ in 0..64 {
            let mut next = mat_mul(&m, &m);
            // keep rows stochastic, or rounding compounds with every squaring
            for row in &mut next {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            let spread = (0..n)
                .map(|c| {
                    let (lo, hi) = next.iter().fold((f64::MAX, f64::MIN), |(lo, hi), row| (lo.min(row[c]), hi.max(row[c])));
                    hi - lo
                })
                .fold(0.0, f64::max);
            m = next;
            if spread < 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            let residual = l1_diff(&vec_mat(&uniform, &m), &vec_mat(&vec_mat(&uniform, &m), kernel));
            return Err(ChannelError::NoConvergence { iterations: 64, residual });
        }
        vec_mat(&uniform, &m)
    } else {
        uniform
    };

    const MAX_ITER: usize = 1_000_000;
    let mut residual = f64::INFINITY;
    for it in 0..MAX_ITER {
        let next = vec_mat(&pi, kernel);
        residual = l1_diff(&next, &pi);
        pi = next;
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= s);
        if residual < 1e-13 || (it > 8 && residual < 1e-10 && n <= 64) {
            break;
        }
    }
    let residual_final = l1_diff(&vec_mat(&pi, kernel), &pi);
    if residual_final >= 1e-10 {
        return Err(ChannelError::NoConvergence { iterations: MAX_ITER, residual: residual.max(residual_final) });
    }
    Ok(pi)
}

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter().map(|row| vec_mat(row, b)).collect()
}

/// Cumulative rows for inverse-CDF sampling from a kernel.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    cumulative: Vec<Vec<f64>>,
}

impl KernelSampler {
    pub fn new(kernel: &Matrix) -> Self {
        let cumulative = kernel
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { cumulative }
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Successor of row `from` for a uniform draw `u` in [0, 1).
    pub fn successor(&self, from: usize, u: f64) -> usize {
        let row = &self.cumulative[from];
        let total = *row.last().unwrap();
        let x = u * total;
        row.iter().position(|&c| x < c).unwrap_or_else(|| {
            // u*total landed on the last boundary; take the last state with mass
            row.iter().rposition(|&c| c > 0.0).unwrap_or(row.len() - 1)
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        self.successor(from, rng.gen::<f64>())
    }
}

/// Samples successive states of a two-layer model.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    states: Vec<ChannelState>,
    sampler: KernelSampler,
}

impl ChannelSampler {
    pub fn new(model: &TwoLayerModel) -> Self {
        Self { states: model.states(), sampler: KernelSampler::new(&build_combined_kernel(model)) }
    }

    pub fn index_of(&self, state: ChannelState) -> Option<usize> {
        self.states.iter().position(|s| *s == state)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: ChannelState, rng: &mut R) -> ChannelState {
        let i = self.index_of(state).expect("channel state not in model");
        self.states[self.sampler.sample(i, rng)]
    }
}

/// Writes `(slot, link_state, capacity_level, capacity)` rows for a sampled
/// trajectory of `slots` steps starting at `start`.
pub fn export_trace<W: Write, R: Rng + ?Sized>(
    model: &TwoLayerModel,
    start: ChannelState,
    slots: usize,
    rng: &mut R,
    out: W,
) -> Result<(), ChannelError> {
    let sampler = ChannelSampler::new(model);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "link_state", "capacity_level", "capacity"])?;
    let mut state = start;
    for slot in 0..slots {
        let level = model.capacities.level(state);
        w.write_record([
            slot.to_string(),
            state.link.symbol().to_string(),
            level.index.to_string(),
            level.capacity.to_string(),
        ])?;
        state = sampler.sample_next(state, rng);
    }
    w.flush()?;
    Ok(())
}

/// Shannon-type capacity `W ln(P G / (N0 W))`, clamped at zero.
///
/// The logarithm is natural. A non-positive log argument (zero gain) is a
/// domain error.
pub fn capacity_from_gain(bandwidth_hz: f64, tx_power_w: f64, noise_psd: f64, gain: f64) -> Result<f64, ChannelError> {
    if !(bandwidth_hz > 0.0 && tx_power_w > 0.0 && noise_psd > 0.0) || gain < 0.0 {
        return Err(ChannelError::InvalidModel(
            "bandwidth, power and noise density must be positive and gain nonnegative".into(),
        ));
    }
    let arg = tx_power_w * gain / (noise_psd * bandwidth_hz);
    if arg <= 0.0 {
        return Err(ChannelError::Domain(arg));
    }
    Ok((bandwidth_hz * arg.ln()).max(0.0))
}

/// Gaussian small-scale gain per capacity level; outage gain is identically 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainModel {
    /// `(mean, variance)` per level, per link.
    pub levels: PerLink<Vec<(f64, f64)>>,
}

impl GainModel {
    /// Gains centred on the capacity levels with one variance per link state;
    /// outage is pinned to zero.
    pub fn centred_on(capacities: &Capacities, los_variance: f64, nlos_variance: f64) -> Result<Self, ChannelError> {
        if los_variance < 0.0 || nlos_variance < 0.0 {
            return Err(ChannelError::InvalidModel("gain variance must be nonnegative".into()));
        }
        Ok(Self {
            levels: PerLink {
                los: capacities.0.los.iter().map(|&c| (c, los_variance)).collect(),
                nlos: capacities.0.nlos.iter().map(|&c| (c, nlos_variance)).collect(),
                outage: vec![(0.0, 0.0)],
            },
        })
    }
}

/// Draws a gain for `state`, clamped at zero. Outage always yields 0.
pub fn sample_gain<R: Rng + ?Sized>(model: &GainModel, state: ChannelState, rng: &mut R) -> f64 {
    if state.link == LinkState::Outage {
        return 0.0;
    }
    let (mean, var) = model.levels.get(state.link)[state.level];
    if var == 0.0 {
        return mean.max(0.0);
    }
    let normal = Normal::new(mean, var.sqrt()).expect("finite gain parameters");
    normal.sample(rng).max(0.0)
}

/// Sub-6 GHz channel state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sub6State {
    Bad,
    Good,
}

impl Sub6State {
    pub const ALL: [Sub6State; 2] = [Sub6State::Bad, Sub6State::Good];

    pub fn as_str(self) -> &'static str {
        match self {
            Sub6State::Bad => "bad",
            Sub6State::Good => "good",
        }
    }
}

/// Two-state sub-6 GHz channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sub6Model {
    pub bad: f64,
    pub good: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Matrix>,
}

impl Sub6Model {
    pub fn validate(&self) -> Result<(), ChannelError> {
        check_distribution(&[self.bad, self.good], "sub-6 state probabilities")?;
        if let Some(k) = &self.kernel {
            if k.len() != 2 {
                return Err(ChannelError::InvalidModel("sub-6 kernel must be 2x2".into()));
            }
            check_row_stochastic(k, "sub-6 kernel")?;
        }
        Ok(())
    }

    pub fn probability(&self, s: Sub6State) -> f64 {
        match s {
            Sub6State::Bad => self.bad,
            Sub6State::Good => self.good,
        }
    }
}

/// What the scheduler's channel component looks like in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelCondition {
    pub mm: ChannelState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub6: Option<Sub6State>,
}

/// mmWave capacity distribution conditioned on the sub-6 state, for the
/// coupled channel. Vectors index capacity levels in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledModel {
    pub capacities: Capacities,
    pub sub6: Sub6Model,
    pub conditional: CoupledConditional,
    /// Probability of keeping the current joint condition in the next slot;
    /// otherwise the condition is redrawn from the joint law. 0 gives i.i.d.
    /// draws per slot.
    #[serde(default)]
    pub persistence: f64,
    /// Mean time in seconds between redraws. When set, the per-slot
    /// persistence is `1 - tau / redraw_interval_s` for slot length `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redraw_interval_s: Option<f64>,
}

impl CoupledModel {
    /// Copy with the per-slot persistence implied by `redraw_interval_s`.
    pub fn at_slot(&self, tau: f64) -> Result<Self, ChannelError> {
        let mut m = self.clone();
        if let Some(h) = self.redraw_interval_s {
            if !(h >= tau && tau > 0.0) {
                return Err(ChannelError::InvalidModel(format!("redraw interval {h} s is shorter than the slot {tau} s")));
            }
            m.persistence = 1.0 - tau / h;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledConditional {
    pub bad: Vec<f64>,
    pub good: Vec<f64>,
}

impl CoupledConditional {
    pub fn given(&self, s: Sub6State) -> &[f64] {
        match s {
            Sub6State::Bad => &self.bad,
            Sub6State::Good => &self.good,
        }
    }
}

impl CoupledModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        self.capacities.validate()?;
        self.sub6.validate()?;
        let n = self.capacities.states().len();
        for s in Sub6State::ALL {
            let p = self.conditional.given(s);
            if p.len() != n {
                return Err(ChannelError::InvalidModel(format!(
                    "conditional capacity law given {} has {} entries, expected {n}",
                    s.as_str(),
                    p.len()
                )));
            }
            check_distribution(p, &format!("P(C_mm | {})", s.as_str()))?;
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(ChannelError::InvalidModel("persistence must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Joint per-slot law `P(sub6) P(C_mm | sub6)` over conditions ordered
    /// sub-6 major, capacity minor.
    pub fn joint(&self) -> Vec<(ChannelCondition, f64)> {
        let states = self.capacities.states();
        Sub6State::ALL
            .iter()
            .flat_map(|&s| {
                let cond = self.conditional.given(s).to_vec();
                let ps = self.sub6.probability(s);
                states
                    .iter()
                    .zip(cond)
                    .map(move |(&mm, p)| (ChannelCondition { mm, sub6: Some(s) }, ps * p))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Marginal law of the mmWave link state implied by the joint law.
    pub fn link_marginal(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (c, p) in self.joint() {
            m[c.mm.link.index()] += p;
        }
        m
    }
}

/// Finite Markov chain over the channel conditions seen by the scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProcess {
    conditions: Vec<ChannelCondition>,
    kernel: Matrix,
    capacities: Capacities,
}

impl ChannelProcess {
    pub fn new(conditions: Vec<ChannelCondition>, kernel: Matrix, capacities: Capacities) -> Result<Self, ChannelError> {
        if conditions.len() != kernel.len() || conditions.is_empty() {
            return Err(ChannelError::InvalidModel("one kernel row per channel condition required".into()));
        }
        check_row_stochastic(&kernel, "channel kernel")?;
        capacities.validate()?;
        Ok(Self { conditions, kernel, capacities })
    }

    /// mmWave-only process from a two-layer model.
    pub fn from_two_layer(model: &TwoLayerModel) -> Result<Self, ChannelError> {
        let conditions = model.states().into_iter().map(|mm| ChannelCondition { mm, sub6: None }).collect();
        Self::new(conditions, build_combined_kernel(model), model.capacities.clone())
    }

    /// Coupled mmWave/sub-6 process: with probability `persistence` the
    /// condition is kept, otherwise it is redrawn from the joint law.
    pub fn from_coupled(model: &CoupledModel) -> Result<Self, ChannelError> {
        model.validate()?;
        let joint = model.joint();
        let rho = model.persistence;
        let kernel = (0..joint.len())
            .map(|i| {
                joint
                    .iter()
                    .enumerate()
                    .map(|(j, (_, p))| (1.0 - rho) * p + if i == j { rho } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::new(joint.into_iter().map(|(c, _)| c).collect(), kernel, model.capacities.clone())
    }

    /// Channel frozen in a single condition.
    pub fn frozen(condition: ChannelCondition, capacities: Capacities) -> Result<Self, ChannelError> {
        Self::new(vec![condition], vec![vec![1.0]], capacities)
    }

    pub fn conditions(&self) -> &[ChannelCondition] {
        &self.conditions
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn capacities(&self) -> &Capacities {
        &self.capacities
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn index_of(&self, c: &ChannelCondition) -> Option<usize> {
        self.conditions.iter().position(|x| x == c)
    }

    pub fn stationary(&self) -> Result<Vec<f64>, ChannelError> {
        stationary_distribution(&self.kernel)
    }

    /// Index of the most likely condition under the stationary law; ties go
    /// to the lowest index.
    pub fn most_likely(&self) -> Result<usize, ChannelError> {
        let pi = self.stationary()?;
        Ok(pi
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bp), (i, &p)| if p > bp + 1e-15 { (i, p) } else { (bi, bp) })
            .0)
    }

    pub fn label(&self, c: &ChannelCondition) -> String {
        let mm = self.capacities.label(c.mm);
        match c.sub6 {
            Some(s) => format!("{mm}/{}", s.as_str()),
            None => mm,
        }
    }
}
