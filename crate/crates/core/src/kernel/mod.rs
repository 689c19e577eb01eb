//! Deterministic discrete-event world model: city graph, mobility
//! resources, disruptions, routing and the tick-ordered event queue.

mod disruption;
mod graph;
mod queue;
mod routing;
mod world;

pub use disruption::{Conditions, Disruption, DisruptionKind, DisruptionTarget, Slowdown};
pub use graph::{CityGraph, Edge, GraphError, Mode, Node, NodeKind};
pub use queue::{EventQueue, Kernel, KernelEvent, Scheduled};
pub use routing::{shortest_route, ModeSet, Route, RouteOptions, RoutingError};
pub use world::{
    BatteryModel, KernelError, Location, ResourceKind, ResourceState, ResourceStatus, WorldState,
};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation time in whole ticks (1 tick is roughly 10 simulated seconds).
pub type Tick = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Graph node identifier.
    NodeId
);
string_id!(
    /// Graph edge identifier.
    EdgeId
);
string_id!(
    /// Mobility resource identifier (scooter, air taxi, ground taxi).
    ResourceId
);
string_id!(DisruptionId);
