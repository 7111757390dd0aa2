//! Age-of-information scheduling for a two-hop network with an unreliable
//! uplink, delayed forwarding and delayed feedback.

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod genproc;
pub mod network;
pub mod oracle;
pub mod policies;
pub mod randomized;
pub mod sim;

pub use error::{Error, Result};
pub use genproc::{GenMoments, GenSpec, Pmf};
pub use network::{FeedbackDelay, NetworkConfig, NetworkState, ObservationLog, Slot, SourceConfig};
