//! Holonic urban air mobility simulator.

pub mod federation;
pub mod holon;
pub mod holons;
pub mod kernel;
pub mod reasoning;
pub mod scenario;
pub mod sim;
pub mod verify;
