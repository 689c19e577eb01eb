use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HolonId;
use crate::kernel::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Request,
    Inform,
    Propose,
    Accept,
    Reject,
    Status,
    Command,
}

impl MessageKind {
    /// Top-level payload fields every message of this kind must carry.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            MessageKind::Request | MessageKind::Command => &["action"],
            MessageKind::Propose => &["plan"],
            MessageKind::Status => &["event"],
            MessageKind::Inform | MessageKind::Accept | MessageKind::Reject => &["topic"],
        }
    }

    pub fn payload_conforms(self, payload: &Value) -> bool {
        payload.as_object().is_some_and(|o| {
            self.required_fields()
                .iter()
                .all(|f| o.contains_key(*f))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub sender: HolonId,
    pub recipient: HolonId,
    pub kind: MessageKind,
    /// The prior message this one answers; replies form a tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<MessageId>,
    pub payload: Value,
    pub sent_at: Tick,
}

impl Message {
    /// Draft message; the registry assigns the id on send.
    pub fn new(sender: HolonId, recipient: HolonId, kind: MessageKind, payload: Value) -> Self {
        Message {
            id: MessageId(0),
            sender,
            recipient,
            kind,
            correlation: None,
            payload,
            sent_at: 0,
        }
    }

    pub fn replying_to(mut self, to: MessageId) -> Self {
        self.correlation = Some(to);
        self
    }

    pub fn at(mut self, tick: Tick) -> Self {
        self.sent_at = tick;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DeliveryReceipt {
    pub id: MessageId,
    pub seq: u64,
}
