//! Physical-layer data types, channel statistics, closed-form rate
//! expressions for the three schemes, and allocation feasibility checks.

mod allocation;
mod channel;
mod config;
mod rate;

pub use allocation::{validate, Allocation, ConstraintCheck, ConstraintFamily, ValidationReport};
pub use channel::{
    draw_channels, large_scale_gain, noise_power, trial_seed, ChannelSet, Group, Topology,
};
pub use config::{dbm_to_watts, Scheme, SystemConfig};
pub use rate::{su_group_rate, sum_rate, wu_user_rate};
