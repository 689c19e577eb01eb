//! Resource matching: nearest feasible vehicle, ties to the fuller battery
//! and then the smaller id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{shortest_route, ModeSet, NodeId, ResourceId, ResourceKind, ResourceState, RouteOptions, Tick};
use crate::reasoning::{Leg, ReasonerContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub task: String,
    pub resource: ResourceId,
    pub score: f64,
    /// Ticks for the resource to reach the leg origin.
    pub reach: Tick,
    pub alternatives_considered: usize,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("no feasible candidate for leg {0}")]
    NoCandidate(String),
}

/// One scored candidate. `reach` is `None` when the resource cannot get
/// to the leg origin at all.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub resource: ResourceId,
    pub battery: u8,
    pub reach: Option<f64>,
    pub battery_needed: u64,
}

impl Candidate {
    pub fn feasible(&self) -> bool {
        self.reach.is_some() && u64::from(self.battery) >= self.battery_needed
    }

    pub fn score(&self) -> f64 {
        -self.reach.unwrap_or(f64::INFINITY)
    }
}

/// Ordering where `Less` means "preferred".
fn preference(a: &Candidate, b: &Candidate) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(b.battery.cmp(&a.battery))
        .then(a.resource.cmp(&b.resource))
}

/// Index of the best feasible candidate.
pub fn choose(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.feasible())
        .min_by(|(_, a), (_, b)| preference(a, b))
        .map(|(i, _)| i)
}

fn modes_for(kind: ResourceKind) -> ModeSet {
    match kind {
        ResourceKind::AirTaxi => ModeSet::AIR,
        _ => ModeSet::GROUND,
    }
}

/// Ticks for `r` to reach `to` under the context's conditions.
pub fn reach_time(r: &ResourceState, to: &NodeId, ctx: &ReasonerContext) -> Option<Tick> {
    let from = r.location.node()?;
    let opts = RouteOptions::new(modes_for(r.kind));
    shortest_route(&ctx.graph, from, to, &opts, &ctx.conditions())
        .ok()
        .map(|route| route.total_time)
}

/// Scores every leg-compatible candidate against `leg`.
pub fn candidates_for(leg: &Leg, pool: &[&ResourceState], ctx: &ReasonerContext) -> Vec<Candidate> {
    let Some(kind) = leg.mode.resource_kind() else {
        return Vec::new();
    };
    let need = ctx.battery.required(kind, leg.route.total_time) + ctx.rules.battery_reserve();
    pool.iter()
        .filter(|r| r.kind == kind)
        .map(|r| Candidate {
            resource: r.id.clone(),
            battery: r.battery,
            reach: reach_time(r, &leg.origin, ctx).map(|t| t as f64),
            battery_needed: need,
        })
        .collect()
}

pub fn match_resources(
    task: &str,
    leg: &Leg,
    pool: &[&ResourceState],
    ctx: &ReasonerContext,
) -> Result<AllocationDecision, MatchError> {
    let cands = candidates_for(leg, pool, ctx);
    let best = choose(&cands).ok_or_else(|| MatchError::NoCandidate(leg.leg_id.clone()))?;
    let c = &cands[best];
    Ok(AllocationDecision {
        task: task.to_owned(),
        resource: c.resource.clone(),
        score: c.score(),
        reach: c.reach.map_or(0, |r| r as Tick),
        alternatives_considered: cands.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(id: &str, battery: u8, reach: f64) -> Candidate {
        Candidate {
            resource: id.into(),
            battery,
            reach: Some(reach),
            battery_needed: 10,
        }
    }

    #[test]
    fn nearer_wins() {
        let cs = [c("s1", 90, 5.0), c("s2", 90, 2.0)];
        assert_eq!(choose(&cs), Some(1));
    }

    #[test]
    fn battery_then_id_break_ties() {
        assert_eq!(choose(&[c("a", 40, 3.0), c("b", 80, 3.0)]), Some(1));
        assert_eq!(choose(&[c("b", 80, 3.0), c("a", 80, 3.0)]), Some(1));
    }

    #[test]
    fn infeasible_filtered() {
        let mut far = c("x", 90, 1.0);
        far.reach = None;
        assert_eq!(choose(&[c("low", 5, 1.0), far]), None);
        assert_eq!(choose(&[]), None);
    }
}
