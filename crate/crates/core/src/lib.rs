//! Discrete-event simulator and analytic toolkit for entanglement-based
//! quantum networks: a probabilistic quantum data plane (heralded link
//! generation, entanglement swapping, purification, decohering memories) with
//! a software-defined classical control plane that admits requests and picks
//! operating points by maximizing aggregate application utility.

pub mod channels;
pub mod control;
pub mod engine;
pub mod error;
pub mod link_layer;
pub mod memory;
pub mod metrics;
pub mod network_layer;
pub mod oracle;
pub mod qnum;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
