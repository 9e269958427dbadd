//! Discrete-event engine: simulated clock, ordered event queue and seeded
//! random streams.

mod queue;
mod rng;
mod time;

pub use queue::{Event, EventHandle, EventQueue};
pub use rng::RandomStream;
pub use time::SimTime;
