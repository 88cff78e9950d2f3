//! Closed-loop identification of linear periodically time-varying plants
//! through the cyclic reformulation.

pub mod closed_loop;
pub mod error;
pub mod extraction;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod metrics;
pub mod pipeline;
pub mod presets;
pub mod recovery;
pub mod reduction;
pub mod signal;
pub mod simulate;
pub mod simulator;
pub mod subspace;
pub mod system;

pub use error::{Error, Result, Stage};
pub use linalg::Mat;
pub use signal::{cycle_signal, uncycle_signal, CycledSignal, SignalRecord};
pub use system::{LtiStateSpace, PeriodicStateSpace};
