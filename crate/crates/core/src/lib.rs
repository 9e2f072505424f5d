//! Home energy management with deep reinforcement learning.
//!
//! A household with shiftable loads, an HVAC unit and an electric vehicle is
//! simulated on a fixed time grid. A dueling double DQN learns a joint on/off
//! policy under per-appliance preference modes, and a scheduling oracle gives
//! the cost lower bound each policy is measured against.

pub mod agent;
pub mod appliances;
pub mod cli;
pub mod env;
pub mod error;
pub mod neural;
pub mod oracle;
pub mod timeseries;

pub use error::{Error, Result};
