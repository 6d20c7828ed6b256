//! Slotted-time simulator of cooperative mobile-device content streaming.
//!
//! A group of devices interested in the same content pulls it over
//! interference-free cellular downlinks and re-shares it over a fully
//! connected local area (unicast or broadcast, one transmitter per slot).
//! Two control schemes are implemented: a device-centric one where every
//! decision is computed at the devices from local virtual queues, and a
//! source-centric one where the source decides from uplinked (and possibly
//! lost or stale) state. A fluid optimization oracle provides the
//! utility-optimal benchmark for small instances.

pub mod channels;
pub mod dcc;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod scc;
pub mod search;

pub use engine::{run, Trace, TraceRecord};
pub use model::{Scheme, SimConfig};
