//! Plan revision after a disruption or a failed leg.
//!
//! Preference order: reroute the remaining legs in their current modes,
//! then re-plan through alternate vertiports, then substitute a ground
//! taxi for the rest of the trip. If none of these validates the trip
//! cannot be revised.

use serde::{Deserialize, Serialize};

use super::planning::{plan_options, route_leg, OptionFilter, PlanOption};
use super::rules::validate_plan;
use super::types::{
    plan_violations, Constraint, Leg, LegMode, Plan, PlanStatus, ReasonerContext, TaskSpec,
};
use super::ReasoningFailure;
use crate::kernel::{Conditions, Disruption, NodeId, Route, Tick};

/// Where the trip stands when the revision is requested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripProgress {
    /// Legs fully carried out.
    pub completed: usize,
    /// Legs kept verbatim (completed plus any unaffected leg in progress).
    pub kept: usize,
    /// Executed part of leg `kept` when it was cut short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<Route>,
    /// Passenger position the revised remainder starts from.
    pub location: NodeId,
    pub ready_at: Tick,
    /// The interrupted leg's resource can no longer serve it.
    #[serde(default)]
    pub resource_lost: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TriggerCause {
    Disruption { disruption: Disruption },
    Status { leg_id: String, event: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionTrigger {
    pub cause: TriggerCause,
    pub progress: TripProgress,
}

/// Which replanning step produced a revision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionStrategy {
    Reroute,
    AlternateVertiport,
    GroundTaxi,
}

fn route_ok(route: &Route, ctx: &ReasonerContext, conditions: &Conditions) -> bool {
    route.edges.iter().all(|e| {
        ctx.graph
            .edge(e)
            .is_some_and(|edge| conditions.is_admissible(edge))
    })
}

/// Remaining legs whose current route is no longer admissible.
pub fn affected_legs<'p>(plan: &'p Plan, from: usize, ctx: &ReasonerContext) -> Vec<&'p Leg> {
    let conditions = ctx.conditions();
    plan.legs
        .iter()
        .skip(from)
        .filter(|l| !route_ok(&l.route, ctx, &conditions))
        .collect()
}

pub fn revise_plan(
    plan: &Plan,
    spec: &TaskSpec,
    trigger: &RevisionTrigger,
    ctx: &ReasonerContext,
) -> Result<Plan, ReasoningFailure> {
    revise_plan_with(plan, spec, trigger, ctx).map(|(p, _)| p)
}

/// Like [`revise_plan`] but also reports which strategy succeeded.
pub fn revise_plan_with(
    plan: &Plan,
    spec: &TaskSpec,
    trigger: &RevisionTrigger,
    ctx: &ReasonerContext,
) -> Result<(Plan, RevisionStrategy), ReasoningFailure> {
    let p = &trigger.progress;
    let kept = p.kept.min(plan.legs.len());
    let revision = plan.revision + 1;
    let interrupted = p.partial.is_some()
        || p.resource_lost
        || matches!(trigger.cause, TriggerCause::Status { .. });
    if !interrupted && affected_legs(plan, kept, ctx).is_empty() {
        return Err(ReasoningFailure::NotAffected);
    }

    let mut prefix: Vec<Leg> = plan.legs[..kept].to_vec();
    let mut executed = p.completed.min(kept);
    if let (Some(done), Some(cut)) = (&p.partial, plan.legs.get(kept)) {
        if !done.is_empty() {
            prefix.push(Leg {
                destination: p.location.clone(),
                route: done.clone(),
                planned_end: p.ready_at.max(cut.planned_start + 1),
                ..cut.clone()
            });
            executed = prefix.len();
        }
    }
    let draft = |legs: Vec<Leg>| Plan {
        plan_id: plan.plan_id.clone(),
        spec: plan.spec.clone(),
        legs,
        status: PlanStatus::Draft,
        revision,
        executed_legs: executed,
    };
    let acceptable = |candidate: &Plan| {
        plan_violations(candidate, spec, &ctx.graph).is_empty()
            && validate_plan(candidate, &ctx.rules, ctx).is_ok()
    };
    if p.location == spec.destination {
        let candidate = draft(prefix);
        return if acceptable(&candidate) {
            Ok((candidate, RevisionStrategy::Reroute))
        } else {
            Err(ReasoningFailure::NoFeasibleRevision)
        };
    }

    let carried = plan.legs.get(kept).filter(|_| !p.resource_lost);

    let interrupted_leg = match &trigger.cause {
        TriggerCause::Status { leg_id, .. } => Some(leg_id.as_str()),
        TriggerCause::Disruption { .. } => None,
    };
    if let Some(legs) = reroute_same_mode(plan, spec, kept, p, revision, interrupted_leg, ctx) {
        let candidate = draft([prefix.clone(), legs].concat());
        if acceptable(&candidate) {
            return Ok((candidate, RevisionStrategy::Reroute));
        }
    }

    let attempts = [
        (
            RevisionStrategy::AlternateVertiport,
            OptionFilter {
                ground_only: false,
                via_air: !spec.has(Constraint::GroundOnly),
                ground_mode: LegMode::Scooter,
            },
        ),
        (
            RevisionStrategy::GroundTaxi,
            OptionFilter {
                ground_only: !spec.has(Constraint::RequireAir),
                via_air: false,
                ground_mode: LegMode::GroundTaxi,
            },
        ),
    ];
    for (strategy, filter) in attempts {
        for option in plan_options(spec, &p.location, ctx, filter) {
            let legs = fresh_legs(&option, prefix.len(), revision, p.ready_at, carried);
            let candidate = draft([prefix.clone(), legs].concat());
            if acceptable(&candidate) {
                return Ok((candidate, strategy));
            }
        }
    }
    Err(ReasoningFailure::NoFeasibleRevision)
}

fn reroute_same_mode(
    plan: &Plan,
    spec: &TaskSpec,
    kept: usize,
    p: &TripProgress,
    revision: u32,
    interrupted: Option<&str>,
    ctx: &ReasonerContext,
) -> Option<Vec<Leg>> {
    let conditions = ctx.conditions();
    let avoid = spec.has(Constraint::AvoidTurbulence);
    let mut t = p.ready_at;
    let mut out = Vec::new();
    for (i, leg) in plan.legs.iter().enumerate().skip(kept) {
        let first = i == kept;
        let from = if first { &p.location } else { &leg.origin };
        if from == &leg.destination {
            continue;
        }
        let must_reroute = from != &leg.origin || !route_ok(&leg.route, ctx, &conditions);
        let route = if must_reroute {
            route_leg(ctx, from, &leg.destination, leg.mode, avoid)?
        } else {
            leg.route.clone()
        };
        let (start, end) = if !must_reroute && leg.planned_start >= t {
            (leg.planned_start, leg.planned_end)
        } else {
            (t, t + route.total_time)
        };
        // A started leg never resumes under its old id.
        let started = p.partial.as_ref().is_some_and(|r| !r.is_empty())
            || interrupted == Some(leg.leg_id.as_str());
        let leg_id = if first && started {
            format!("{}-r{revision}", leg.leg_id)
        } else {
            leg.leg_id.clone()
        };
        out.push(Leg {
            leg_id,
            mode: leg.mode,
            origin: from.clone(),
            destination: leg.destination.clone(),
            route,
            assigned_resource: if first && p.resource_lost {
                None
            } else {
                leg.assigned_resource.clone()
            },
            planned_start: start,
            planned_end: end,
        });
        t = end;
    }
    Some(out)
}

fn fresh_legs(
    option: &PlanOption,
    offset: usize,
    revision: u32,
    start: Tick,
    carried: Option<&Leg>,
) -> Vec<Leg> {
    let mut legs = super::planning::legs_from_option(option, offset, start);
    for leg in &mut legs {
        leg.leg_id = format!("{}-r{revision}", leg.leg_id);
    }
    // The passenger keeps the vehicle they are on when the mode continues.
    if let (Some(first), Some(prev)) = (legs.first_mut(), carried) {
        if first.mode == prev.mode && first.mode != LegMode::AirTaxi {
            first.assigned_resource = prev.assigned_resource.clone();
        }
    }
    legs
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use super::*;
    use crate::holon::HolonId;
    use crate::kernel::{
        CityGraph, DisruptionKind, DisruptionTarget, Edge, Mode, Node, NodeKind, Slowdown,
    };
    use crate::reasoning::planning::generate_plan;

    fn city() -> Arc<CityGraph> {
        use Mode::*;
        use NodeKind::*;
        let n = |id: &str, kind| Node {
            id: id.into(),
            kind,
            x: 0,
            y: 0,
            capacity: None,
            charging: false,
        };
        let e = |id: &str, a: &str, b: &str, mode, t| Edge {
            id: id.into(),
            from: a.into(),
            to: b.into(),
            mode,
            base_travel_time: t,
            blocked: false,
        };
        Arc::new(
            CityGraph::new(
                [
                    n("X", Street),
                    n("S1", Street),
                    n("S2", Street),
                    n("Y", Poi),
                    n("M", Street),
                    n("V1", Vertiport),
                    n("V2", Vertiport),
                    n("V3", Vertiport),
                ],
                [
                    e("X-S1", "X", "S1", Ground, 2),
                    e("S1-V1", "S1", "V1", Ground, 2),
                    e("S1-S2", "S1", "S2", Ground, 3),
                    e("S2-V1", "S2", "V1", Ground, 3),
                    e("V1-V2", "V1", "V2", Air, 6),
                    e("V1-V3", "V1", "V3", Air, 7),
                    e("V3-Y", "V3", "Y", Ground, 4),
                    e("V2-Y", "V2", "Y", Ground, 2),
                    e("X-M", "X", "M", Ground, 20),
                    e("M-Y", "M", "Y", Ground, 20),
                ],
            )
            .unwrap(),
        )
    }

    fn spec() -> TaskSpec {
        TaskSpec {
            request_id: "R1".into(),
            passenger: HolonId::root("c1"),
            origin: "X".into(),
            destination: "Y".into(),
            earliest_departure: 0,
            constraints: BTreeSet::new(),
            free_text: String::new(),
        }
    }

    fn block(ctx: &mut ReasonerContext, kind: DisruptionKind, target: DisruptionTarget) {
        let id = format!("d{}", ctx.disruptions.len());
        ctx.disruptions.push(Disruption {
            id: id.as_str().into(),
            kind,
            target,
            activation: 0,
            expiry: None,
            slowdown_factor: Slowdown::NONE,
        });
    }

    fn edge_block(ctx: &mut ReasonerContext, edge: &str) {
        block(ctx, DisruptionKind::EdgeBlocked, DisruptionTarget::Edge(edge.into()));
    }

    #[test]
    fn blocked_first_leg_reroutes_and_keeps_prefix() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let mut plan = generate_plan(&s, &ctx).unwrap();
        plan.status = PlanStatus::Active;
        assert_eq!(plan.legs[0].route.edges.len(), 2);
        // Passenger reached S1 at tick 2, then S1-V1 closes.
        ctx.tick = 2;
        edge_block(&mut ctx, "S1-V1");
        let trigger = RevisionTrigger {
            cause: TriggerCause::Status {
                leg_id: "T_a1".into(),
                event: "leg_blocked".into(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 0,
                partial: Some(Route {
                    nodes: vec!["X".into(), "S1".into()],
                    edges: vec!["X-S1".into()],
                    total_time: 2,
                }),
                location: "S1".into(),
                ready_at: 2,
                resource_lost: false,
            },
        };
        let (rev, how) = revise_plan_with(&plan, &s, &trigger, &ctx).unwrap();
        assert_eq!(how, RevisionStrategy::Reroute);
        assert_eq!(rev.revision, 1);
        assert_eq!(rev.executed_legs, 1);
        assert_eq!(rev.legs[0].destination, NodeId::from("S1"));
        assert_eq!(rev.legs[1].leg_id, "T_a1-r1");
        assert_eq!(rev.legs[1].origin, NodeId::from("S1"));
        assert_eq!(rev.legs[1].route.total_time, 6);
        assert_eq!(rev.legs[2].leg_id, "T_a2");
        assert!(plan_violations(&rev, &s, &ctx.graph).is_empty());
    }

    #[test]
    fn unchanged_tail_keeps_its_slot() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let mut plan = generate_plan(&s, &ctx).unwrap();
        // Leave slack before the flight.
        plan.chain_times(1, 20);
        ctx.tick = 2;
        edge_block(&mut ctx, "S1-V1");
        let trigger = RevisionTrigger {
            cause: TriggerCause::Status {
                leg_id: "T_a1".into(),
                event: "leg_blocked".into(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 0,
                partial: Some(Route {
                    nodes: vec!["X".into(), "S1".into()],
                    edges: vec!["X-S1".into()],
                    total_time: 2,
                }),
                location: "S1".into(),
                ready_at: 2,
                resource_lost: false,
            },
        };
        let rev = revise_plan(&plan, &s, &trigger, &ctx).unwrap();
        assert_eq!(rev.legs[2], plan.legs[1]);
        assert_eq!(rev.legs[3], plan.legs[2]);
    }

    #[test]
    fn closed_destination_vertiport_redirects() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let plan = generate_plan(&s, &ctx).unwrap();
        assert_eq!(plan.legs[1].destination, NodeId::from("V2"));
        block(
            &mut ctx,
            DisruptionKind::VertiportClosed,
            DisruptionTarget::Node("V2".into()),
        );
        let trigger = RevisionTrigger {
            cause: TriggerCause::Disruption {
                disruption: ctx.disruptions[0].clone(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 1,
                partial: None,
                location: "V1".into(),
                ready_at: 4,
                resource_lost: false,
            },
        };
        let (rev, how) = revise_plan_with(&plan, &s, &trigger, &ctx).unwrap();
        assert_eq!(how, RevisionStrategy::AlternateVertiport);
        assert_eq!(rev.legs[0], plan.legs[0]);
        assert_eq!(rev.legs[1].destination, NodeId::from("V3"));
        assert_eq!(rev.legs[2].origin, NodeId::from("V3"));
        assert!(plan_violations(&rev, &s, &ctx.graph).is_empty());
    }

    #[test]
    fn air_severed_falls_back_to_ground_taxi() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let plan = generate_plan(&s, &ctx).unwrap();
        block(
            &mut ctx,
            DisruptionKind::NoFlyZone,
            DisruptionTarget::Nodes(vec!["V1".into()]),
        );
        let trigger = RevisionTrigger {
            cause: TriggerCause::Disruption {
                disruption: ctx.disruptions[0].clone(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 0,
                partial: None,
                location: "X".into(),
                ready_at: 0,
                resource_lost: false,
            },
        };
        let (rev, how) = revise_plan_with(&plan, &s, &trigger, &ctx).unwrap();
        assert_eq!(how, RevisionStrategy::GroundTaxi);
        assert!(rev.legs.iter().all(|l| l.mode == LegMode::GroundTaxi));
        assert_eq!(rev.door_to_door(), 40);
    }

    #[test]
    fn disconnected_world_cannot_be_revised() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let plan = generate_plan(&s, &ctx).unwrap();
        for e in ["X-S1", "X-M"] {
            edge_block(&mut ctx, e);
        }
        let trigger = RevisionTrigger {
            cause: TriggerCause::Disruption {
                disruption: ctx.disruptions[0].clone(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 0,
                partial: None,
                location: "X".into(),
                ready_at: 0,
                resource_lost: false,
            },
        };
        assert_eq!(
            revise_plan(&plan, &s, &trigger, &ctx),
            Err(ReasoningFailure::NoFeasibleRevision)
        );
    }

    #[test]
    fn unrelated_disruption_is_not_a_trigger() {
        let mut ctx = ReasonerContext::new(city(), 0);
        let s = spec();
        let plan = generate_plan(&s, &ctx).unwrap();
        edge_block(&mut ctx, "M-Y");
        let trigger = RevisionTrigger {
            cause: TriggerCause::Disruption {
                disruption: ctx.disruptions[0].clone(),
            },
            progress: TripProgress {
                completed: 0,
                kept: 0,
                partial: None,
                location: "X".into(),
                ready_at: 0,
                resource_lost: false,
            },
        };
        assert_eq!(
            revise_plan(&plan, &s, &trigger, &ctx),
            Err(ReasoningFailure::NotAffected)
        );
    }
}
