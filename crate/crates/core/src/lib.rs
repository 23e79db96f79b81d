//! Dual-interface (mmWave + sub-6 GHz) packet scheduling: a two-layer
//! Markov model of the mmWave channel, a slotted average-cost MDP over queue
//! and channel state, exact planners, tabular Q-learning and a discrete-event
//! simulator.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod learning;
pub mod mdp;
pub mod pipeline;
pub mod policy;
pub mod sim;
pub mod simplex;
pub mod solvers;

pub use channel::{ChannelProcess, LinkState, TwoLayerModel};
pub use mdp::{build_kernel, Action, QueueState, SystemModel, SystemState, TransitionKernel};
pub use policy::{InfoLevel, Policy, SchedulingPolicy, ThresholdPolicy};
pub use config::{Experiment, ExperimentConfig};
