//! The holon abstraction: identity, role, advertised capabilities,
//! message passing and the recursive holarchy registry.

mod message;
mod registry;

pub use message::{DeliveryReceipt, Message, MessageId, MessageKind};
pub use registry::{DetachReport, MessageCounters, Registry, RegistryError};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Path of name segments from the holarchy root, e.g. `S-SoS/S-CS1/scooter-7`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HolonId(Vec<String>);

impl HolonId {
    pub fn root(name: &str) -> Self {
        HolonId(vec![name.to_owned()])
    }

    pub fn child(&self, name: &str) -> Self {
        let mut path = self.0.clone();
        path.push(name.to_owned());
        HolonId(path)
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn name(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or_default()
    }

    pub fn parent(&self) -> Option<HolonId> {
        (self.0.len() > 1).then(|| HolonId(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// True when `self` equals `ancestor` or lies beneath it.
    pub fn is_within(&self, ancestor: &HolonId) -> bool {
        self.0.starts_with(&ancestor.0)
    }
}

impl fmt::Display for HolonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid holon id `{0}`")]
pub struct InvalidHolonId(pub String);

impl FromStr for HolonId {
    type Err = InvalidHolonId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let path: Vec<String> = s.split('/').map(str::to_owned).collect();
        if path.iter().any(|seg| seg.is_empty()) {
            return Err(InvalidHolonId(s.to_owned()));
        }
        Ok(HolonId(path))
    }
}

impl Serialize for HolonId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HolonId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Supervisor,
    Planner,
    Task,
    ResourceHuman,
    ResourceMachine,
    /// Coordination intermediary installed by a non-holonic strategy.
    MiddleAgent,
}

impl Role {
    /// Capability-name prefixes a holon of this role can execute.
    fn operation_prefixes(self) -> &'static [&'static str] {
        match self {
            Role::Supervisor => &["supervise.", "dispatch.", "gate."],
            Role::Planner => &["plan."],
            Role::Task => &["execute."],
            Role::ResourceHuman => &["passenger.", "operator."],
            Role::ResourceMachine => &["ride.", "fly.", "land.", "charge."],
            Role::MiddleAgent => &["coordinate."],
        }
    }

    pub fn can_execute(self, capability: &str) -> bool {
        self.operation_prefixes()
            .iter()
            .any(|p| capability.starts_with(p) && capability.len() > p.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub name: String,
    pub input_schema: String,
    pub output_schema: String,
    pub cost_hint: u32,
}

impl CapabilityDescriptor {
    pub fn new(name: impl Into<String>) -> Self {
        CapabilityDescriptor {
            name: name.into(),
            input_schema: "leg".into(),
            output_schema: "status".into(),
            cost_hint: 1,
        }
    }

    pub fn with_schemas(mut self, input: &str, output: &str) -> Self {
        self.input_schema = input.into();
        self.output_schema = output.into();
        self
    }

    pub fn with_cost(mut self, cost: u32) -> Self {
        self.cost_hint = cost;
        self
    }
}

/// What a caller supplies to [`Registry::register`]; the registry derives
/// the full id from the parent.
#[derive(Clone, Debug)]
pub struct HolonSpec {
    pub name: String,
    pub role: Role,
    pub capabilities: Vec<CapabilityDescriptor>,
    pub reasoner_binding: String,
}

impl HolonSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        HolonSpec {
            name: name.into(),
            role,
            capabilities: Vec::new(),
            reasoner_binding: "mock".into(),
        }
    }

    pub fn capability(mut self, c: CapabilityDescriptor) -> Self {
        self.capabilities.push(c);
        self
    }

    pub fn reasoner(mut self, binding: &str) -> Self {
        self.reasoner_binding = binding.into();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Holon {
    pub id: HolonId,
    pub role: Role,
    pub capabilities: Vec<CapabilityDescriptor>,
    pub children: Vec<HolonId>,
    pub parent: Option<HolonId>,
    pub reasoner_binding: String,
    /// Task currently carried out by (or assigned to) this holon.
    pub assignment: Option<String>,
    #[serde(skip)]
    pub(crate) inbox: std::collections::VecDeque<Message>,
}

impl Holon {
    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn inbox(&self) -> impl Iterator<Item = &Message> {
        self.inbox.iter()
    }
}
