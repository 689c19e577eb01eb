use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::{Disruption, DisruptionId, EdgeId, KernelError, NodeId, ResourceId, Tick, WorldState};

/// An event with its firing time and insertion sequence number. Events are
/// totally ordered by `(tick, seq)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scheduled<T> {
    pub tick: Tick,
    pub seq: u64,
    pub event: T,
}

impl<T: Eq> Ord for Scheduled<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        (other.tick, other.seq).cmp(&(self.tick, self.seq))
    }
}

impl<T: Eq> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Scheduled<T>>,
    next_seq: u64,
}

impl<T: Eq> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<T: Eq> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `event` at `tick` and returns its sequence number.
    pub fn push(&mut self, tick: Tick, event: T) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { tick, seq, event });
        seq
    }

    /// Pops the earliest event if it fires at or before `until`.
    pub fn pop_due(&mut self, until: Tick) -> Option<Scheduled<T>> {
        if self.heap.peek()?.tick <= until {
            self.heap.pop()
        } else {
            None
        }
    }

    pub fn next_tick(&self) -> Option<Tick> {
        self.heap.peek().map(|s| s.tick)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Scheduled events in firing order, without consuming them.
    pub fn pending(&self) -> Vec<&Scheduled<T>> {
        let mut v: Vec<_> = self.heap.iter().collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

/// Physical events the kernel applies to the world.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelEvent {
    DisruptionActivated { id: DisruptionId },
    DisruptionExpired { id: DisruptionId },
    MoveCompleted {
        resource: Option<ResourceId>,
        edge: EdgeId,
        to: NodeId,
        ticks: Tick,
    },
}

impl KernelEvent {
    /// Applies the event's physical effect to `world`.
    pub fn apply(&self, world: &mut WorldState) -> Result<(), KernelError> {
        match self {
            KernelEvent::DisruptionActivated { .. } => Ok(()),
            KernelEvent::DisruptionExpired { id } => {
                world.expire_disruption(id);
                Ok(())
            }
            KernelEvent::MoveCompleted {
                resource: Some(r),
                to,
                ticks,
                ..
            } => world.complete_move(r, to, *ticks).map(|_| ()),
            KernelEvent::MoveCompleted { resource: None, .. } => Ok(()),
        }
    }
}

/// World plus its own event schedule; the standalone face of the kernel.
#[derive(Debug)]
pub struct Kernel {
    pub world: WorldState,
    queue: EventQueue<KernelEvent>,
}

impl Kernel {
    pub fn new(world: WorldState) -> Self {
        Kernel {
            world,
            queue: EventQueue::new(),
        }
    }

    pub fn schedule(&mut self, tick: Tick, event: KernelEvent) -> u64 {
        self.queue.push(tick.max(self.world.clock), event)
    }

    /// Registers a disruption and schedules its activation (and expiry).
    pub fn inject_disruption(&mut self, d: Disruption) -> Result<Tick, KernelError> {
        let id = d.id.clone();
        let activation = d.activation.max(self.world.clock);
        let expiry = d.expiry;
        self.world.inject_disruption(d)?;
        self.schedule(activation, KernelEvent::DisruptionActivated { id: id.clone() });
        if let Some(e) = expiry {
            self.schedule(e, KernelEvent::DisruptionExpired { id });
        }
        Ok(activation)
    }

    /// Processes every event due at or before `until` in `(tick, seq)`
    /// order and leaves the clock at `until`.
    pub fn advance(&mut self, until: Tick) -> Vec<Scheduled<KernelEvent>> {
        let until = until.max(self.world.clock);
        let mut out = Vec::new();
        while let Some(ev) = self.queue.pop_due(until) {
            self.world.clock = ev.tick;
            // Unknown resources are a scheduling bug, not a world fault.
            if let Err(e) = ev.event.apply(&mut self.world) {
                tracing::warn!("kernel event dropped: {e}");
            }
            out.push(ev);
        }
        self.world.clock = until;
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{CityGraph, Edge, Mode, Node, NodeKind};

    fn kernel() -> Kernel {
        let n = |id: &str| Node {
            id: id.into(),
            kind: NodeKind::Street,
            x: 0,
            y: 0,
            capacity: None,
            charging: false,
        };
        let g = CityGraph::new(
            [n("A"), n("B")],
            [Edge {
                id: "AB".into(),
                from: "A".into(),
                to: "B".into(),
                mode: Mode::Ground,
                base_travel_time: 5,
                blocked: false,
            }],
        )
        .unwrap();
        Kernel::new(WorldState::new(g, [], 7).unwrap())
    }

    fn mv(to: &str) -> KernelEvent {
        KernelEvent::MoveCompleted {
            resource: None,
            edge: "AB".into(),
            to: to.into(),
            ticks: 5,
        }
    }

    #[test]
    fn empty_advance_moves_clock() {
        let mut k = kernel();
        assert!(k.advance(10).is_empty());
        assert_eq!(k.world.clock, 10);
    }

    #[test]
    fn single_event_is_emitted() {
        let mut k = kernel();
        k.schedule(5, mv("B"));
        let evs = k.advance(10);
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].tick, 5);
        assert_eq!(k.world.clock, 10);
    }

    #[test]
    fn same_tick_events_follow_sequence() {
        let mut k = kernel();
        let s1 = k.schedule(5, mv("B"));
        let s2 = k.schedule(5, mv("A"));
        k.schedule(3, mv("A"));
        let evs = k.advance(10);
        let order: Vec<_> = evs.iter().map(|e| (e.tick, e.seq)).collect();
        assert_eq!(order, vec![(3, 2), (5, s1), (5, s2)]);
    }

    #[test]
    fn advance_stops_at_until() {
        let mut k = kernel();
        k.schedule(5, mv("B"));
        k.schedule(12, mv("B"));
        assert_eq!(k.advance(10).len(), 1);
        assert_eq!(k.pending(), 1);
        assert_eq!(k.advance(12).len(), 1);
    }
}
