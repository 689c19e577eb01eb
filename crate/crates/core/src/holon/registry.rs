use std::collections::{BTreeMap, BTreeSet};

use glob::Pattern;
use serde::Serialize;
use thiserror::Error;

use super::{CapabilityDescriptor, Holon, HolonId, HolonSpec, Message, MessageId};
use super::message::DeliveryReceipt;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("holon `{0}` already registered")]
    DuplicateId(HolonId),
    #[error("parent `{0}` not registered")]
    MissingParent(HolonId),
    #[error("a root holon is already registered (`{0}`)")]
    SecondRoot(HolonId),
    #[error("unknown holon `{0}`")]
    UnknownHolon(HolonId),
    #[error("unknown recipient `{0}`")]
    UnknownRecipient(HolonId),
    #[error("unknown sender `{0}`")]
    UnknownSender(HolonId),
    #[error("the root holon cannot be detached")]
    RootDetach,
    #[error("invalid holon name `{0}`")]
    InvalidName(String),
    #[error("capability `{name}` is not executable by a {role:?} holon")]
    UnresolvableCapability { name: String, role: super::Role },
    #[error("capability `{0}` advertised twice")]
    DuplicateCapability(String),
    #[error("correlation {0} does not reference a sent message")]
    UnknownCorrelation(MessageId),
    #[error("payload of {0:?} message does not match its schema")]
    PayloadSchema(super::MessageKind),
    #[error("invalid capability pattern `{0}`")]
    BadPattern(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DetachReport {
    pub removed: Vec<HolonId>,
    /// Tasks that were assigned to holons inside the removed subtree.
    pub orphaned_tasks: Vec<String>,
    /// Delivered but unprocessed messages discarded with their recipients.
    pub dropped_messages: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounters {
    pub sent: u64,
    pub delivered: u64,
    pub rejected: u64,
}

/// Single logical owner of the holarchy. Mutated only between event
/// processing steps.
#[derive(Debug, Default)]
pub struct Registry {
    holons: BTreeMap<HolonId, Holon>,
    root: Option<HolonId>,
    /// Pending inbox messages by delivery sequence.
    pending: BTreeMap<u64, HolonId>,
    next_seq: u64,
    next_message: u64,
    sent_ids: BTreeSet<MessageId>,
    counters: MessageCounters,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        spec: HolonSpec,
        parent: Option<&HolonId>,
    ) -> Result<HolonId, RegistryError> {
        if spec.name.is_empty() || spec.name.contains('/') {
            return Err(RegistryError::InvalidName(spec.name));
        }
        let mut names = BTreeSet::new();
        for c in &spec.capabilities {
            if !names.insert(c.name.as_str()) {
                return Err(RegistryError::DuplicateCapability(c.name.clone()));
            }
            if !spec.role.can_execute(&c.name) {
                return Err(RegistryError::UnresolvableCapability {
                    name: c.name.clone(),
                    role: spec.role,
                });
            }
        }
        let id = match parent {
            None => {
                if let Some(root) = &self.root {
                    return Err(RegistryError::SecondRoot(root.clone()));
                }
                HolonId::root(&spec.name)
            }
            Some(p) => {
                if !self.holons.contains_key(p) {
                    return Err(RegistryError::MissingParent(p.clone()));
                }
                p.child(&spec.name)
            }
        };
        if self.holons.contains_key(&id) {
            return Err(RegistryError::DuplicateId(id));
        }
        if let Some(p) = parent {
            self.holons
                .get_mut(p)
                .expect("checked")
                .children
                .push(id.clone());
        } else {
            self.root = Some(id.clone());
        }
        self.holons.insert(
            id.clone(),
            Holon {
                id: id.clone(),
                role: spec.role,
                capabilities: spec.capabilities,
                children: Vec::new(),
                parent: parent.cloned(),
                reasoner_binding: spec.reasoner_binding,
                assignment: None,
                inbox: Default::default(),
            },
        );
        Ok(id)
    }

    pub fn root(&self) -> Option<&HolonId> {
        self.root.as_ref()
    }

    pub fn get(&self, id: &HolonId) -> Option<&Holon> {
        self.holons.get(id)
    }

    pub fn contains(&self, id: &HolonId) -> bool {
        self.holons.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.holons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holons.is_empty()
    }

    pub fn holons(&self) -> impl Iterator<Item = &Holon> {
        self.holons.values()
    }

    pub fn counters(&self) -> MessageCounters {
        self.counters
    }

    pub fn set_assignment(&mut self, id: &HolonId, task: Option<String>) -> Result<(), RegistryError> {
        let h = self
            .holons
            .get_mut(id)
            .ok_or_else(|| RegistryError::UnknownHolon(id.clone()))?;
        h.assignment = task;
        Ok(())
    }

    /// Delivers `msg` to its recipient's inbox, assigning the message id and
    /// the global delivery sequence number.
    pub fn send(&mut self, mut msg: Message) -> Result<(DeliveryReceipt, Message), RegistryError> {
        self.counters.sent += 1;
        let check = if !self.holons.contains_key(&msg.recipient) {
            Err(RegistryError::UnknownRecipient(msg.recipient.clone()))
        } else if !self.holons.contains_key(&msg.sender) {
            Err(RegistryError::UnknownSender(msg.sender.clone()))
        } else if let Some(c) = msg.correlation.filter(|c| !self.sent_ids.contains(c)) {
            Err(RegistryError::UnknownCorrelation(c))
        } else if !msg.kind.payload_conforms(&msg.payload) {
            Err(RegistryError::PayloadSchema(msg.kind))
        } else {
            Ok(())
        };
        if let Err(e) = check {
            self.counters.rejected += 1;
            return Err(e);
        }
        self.next_message += 1;
        msg.id = MessageId(self.next_message);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.sent_ids.insert(msg.id);
        self.pending.insert(seq, msg.recipient.clone());
        self.holons
            .get_mut(&msg.recipient)
            .expect("checked")
            .inbox
            .push_back(msg.clone());
        self.counters.delivered += 1;
        Ok((DeliveryReceipt { id: msg.id, seq }, msg))
    }

    /// Takes the globally earliest undelivered-to-handler message.
    pub fn next_message(&mut self) -> Option<Message> {
        while let Some((_, holder)) = self.pending.pop_first() {
            if let Some(h) = self.holons.get_mut(&holder) {
                if let Some(m) = h.inbox.pop_front() {
                    return Some(m);
                }
            }
        }
        None
    }

    pub fn has_pending_messages(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Capabilities matching a glob `pattern` within `scope`'s subtree,
    /// ordered by (holon path, capability name).
    pub fn query_capabilities(
        &self,
        pattern: &str,
        scope: &HolonId,
    ) -> Result<Vec<(HolonId, CapabilityDescriptor)>, RegistryError> {
        if !self.holons.contains_key(scope) {
            return Err(RegistryError::UnknownHolon(scope.clone()));
        }
        let pat = Pattern::new(pattern).map_err(|_| RegistryError::BadPattern(pattern.into()))?;
        let mut out = Vec::new();
        for (id, h) in self.holons.range(scope.clone()..) {
            if !id.is_within(scope) {
                break;
            }
            let mut caps: Vec<&CapabilityDescriptor> = h
                .capabilities
                .iter()
                .filter(|c| pat.matches(&c.name))
                .collect();
            caps.sort_by(|a, b| a.name.cmp(&b.name));
            out.extend(caps.into_iter().map(|c| (id.clone(), c.clone())));
        }
        Ok(out)
    }

    /// Removes `id` and its whole subtree.
    pub fn detach(&mut self, id: &HolonId) -> Result<DetachReport, RegistryError> {
        if !self.holons.contains_key(id) {
            return Err(RegistryError::UnknownHolon(id.clone()));
        }
        if self.root.as_ref() == Some(id) {
            return Err(RegistryError::RootDetach);
        }
        let doomed: Vec<HolonId> = self
            .holons
            .range(id.clone()..)
            .take_while(|(k, _)| k.is_within(id))
            .map(|(k, _)| k.clone())
            .collect();
        let mut report = DetachReport::default();
        for k in &doomed {
            let h = self.holons.remove(k).expect("collected above");
            report.dropped_messages += h.inbox.len();
            if let Some(t) = h.assignment {
                report.orphaned_tasks.push(t);
            }
        }
        self.pending.retain(|_, holder| !holder.is_within(id));
        if let Some(parent) = id.parent().and_then(|p| self.holons.get_mut(&p)) {
            parent.children.retain(|c| c != id);
        }
        report.removed = doomed;
        report.orphaned_tasks.sort();
        Ok(report)
    }

    /// Checks the holarchy is a single-rooted tree with consistent links.
    pub fn tree_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Some(root) = &self.root else {
            if !self.holons.is_empty() {
                out.push("holons without root".into());
            }
            return out;
        };
        let mut edges = 0;
        for h in self.holons.values() {
            match &h.parent {
                None if &h.id != root => out.push(format!("{} has no parent", h.id)),
                None => {}
                Some(p) => {
                    edges += 1;
                    match self.holons.get(p) {
                        Some(ph) if ph.children.contains(&h.id) => {}
                        _ => out.push(format!("{} parent link broken", h.id)),
                    }
                }
            }
            for c in &h.children {
                if self.holons.get(c).and_then(|ch| ch.parent.as_ref()) != Some(&h.id) {
                    out.push(format!("{} child link to {c} broken", h.id));
                }
            }
        }
        if edges + 1 != self.holons.len() {
            out.push(format!("{} edges for {} holons", edges, self.holons.len()));
        }
        out
    }
}
