//! The planner holon's decomposition: a reasoned plan refined with
//! concrete resources, leg substitutions and reach-aware timing.

use serde::{Deserialize, Serialize};

use super::matching::{match_resources, reach_time, AllocationDecision};
use crate::kernel::{ResourceId, ResourceState, Tick};
use crate::reasoning::planning::{build_plan, legs_from_option, plan_options, route_leg};
use crate::reasoning::{
    plan_violations, validate_plan, Leg, LegMode, OptionFilter, Plan, PlanStatus,
    ReasonerContext, ReasoningFailure, ReasoningLayer, RevisionTrigger, TaskSpec,
};

/// Longest walk the planner substitutes for a missing vehicle.
pub const WALK_LIMIT: Tick = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub leg_id: String,
    pub from: LegMode,
    pub to: LegMode,
}

/// A plan with its resource decisions, ready for the safety gate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Proposal {
    pub plan: Plan,
    pub allocations: Vec<AllocationDecision>,
    pub substitutions: Vec<Substitution>,
}

pub fn task_id(plan_id: &str, leg_id: &str) -> String {
    format!("{plan_id}:{leg_id}")
}

fn try_match(
    plan_id: &str,
    leg: &Leg,
    pool: &[&ResourceState],
    used: &[ResourceId],
    ctx: &ReasonerContext,
) -> Option<AllocationDecision> {
    let free: Vec<&ResourceState> = pool
        .iter()
        .copied()
        .filter(|r| !used.contains(&r.id))
        .collect();
    match_resources(&task_id(plan_id, &leg.leg_id), leg, &free, ctx).ok()
}

/// Assigns resources to legs `from..`, substituting walking or a ground
/// taxi when no vehicle matches, then re-times those legs no earlier than
/// `t0`. Returns `None` if a leg cannot be served or the result fails
/// validation.
pub fn materialize(
    mut plan: Plan,
    from: usize,
    t0: Tick,
    spec: &TaskSpec,
    ctx: &ReasonerContext,
    pool: &[&ResourceState],
) -> Option<Proposal> {
    let now = ctx.tick;
    let mut allocations = Vec::new();
    let mut substitutions = Vec::new();
    let mut used: Vec<ResourceId> = plan.legs[plan.executed_legs.min(from)..from]
        .iter()
        .filter_map(|l| l.assigned_resource.clone())
        .collect();
    let mut t = t0;
    for i in from..plan.legs.len() {
        let plan_id = plan.plan_id.clone();
        let leg = &mut plan.legs[i];
        let mut reach = 0;
        if leg.mode != LegMode::Walk {
            let kept = leg.assigned_resource.as_ref().and_then(|rid| {
                pool.iter()
                    .find(|r| &r.id == rid && Some(r.kind) == leg.mode.resource_kind())
            });
            if let Some(r) = kept.filter(|r| !used.contains(&r.id)) {
                reach = reach_time(r, &leg.origin, ctx)?;
            } else {
                leg.assigned_resource = None;
                match try_match(&plan_id, leg, pool, &used, ctx) {
                    Some(d) => {
                        reach = d.reach;
                        leg.assigned_resource = Some(d.resource.clone());
                        allocations.push(d);
                    }
                    None => {
                        let original = leg.mode;
                        let walk = route_leg(ctx, &leg.origin, &leg.destination, LegMode::Walk, false)
                            .filter(|r| r.total_time <= WALK_LIMIT);
                        if let (Some(route), false) = (walk, original == LegMode::AirTaxi) {
                            leg.mode = LegMode::Walk;
                            leg.route = route;
                        } else if original == LegMode::Scooter {
                            leg.route = route_leg(
                                ctx,
                                &leg.origin,
                                &leg.destination,
                                LegMode::GroundTaxi,
                                false,
                            )?;
                            leg.mode = LegMode::GroundTaxi;
                            let d = try_match(&plan_id, leg, pool, &used, ctx)?;
                            reach = d.reach;
                            leg.assigned_resource = Some(d.resource.clone());
                            allocations.push(d);
                        } else {
                            return None;
                        }
                        substitutions.push(Substitution {
                            leg_id: leg.leg_id.clone(),
                            from: original,
                            to: leg.mode,
                        });
                    }
                }
            }
            if let Some(r) = &leg.assigned_resource {
                used.push(r.clone());
            }
        }
        let start = t.max(leg.planned_start).max(now + reach);
        leg.planned_start = start;
        leg.planned_end = start + leg.route.total_time;
        t = leg.planned_end;
    }
    plan.status = PlanStatus::Draft;
    let ok = plan_violations(&plan, spec, &ctx.graph).is_empty()
        && validate_plan(&plan, &ctx.rules, ctx).is_ok();
    ok.then_some(Proposal {
        plan,
        allocations,
        substitutions,
    })
}

/// Reasoned plan first, then the remaining modal combinations in order.
pub fn planner_decompose(
    spec: &TaskSpec,
    ctx: &ReasonerContext,
    layer: &mut ReasoningLayer,
    pool: &[&ResourceState],
) -> Result<Proposal, ReasoningFailure> {
    let departure = spec.earliest_departure.max(ctx.tick);
    let first = layer.generate_plan(spec, ctx)?;
    if let Some(p) = materialize(first, 0, departure, spec, ctx, pool) {
        return Ok(p);
    }
    for option in plan_options(spec, &spec.origin, ctx, OptionFilter::for_spec(spec)) {
        let plan = build_plan(spec, &option, departure);
        if let Some(p) = materialize(plan, 0, departure, spec, ctx, pool) {
            return Ok(p);
        }
    }
    Err(ReasoningFailure::NoFeasiblePlan)
}

pub fn planner_revise(
    plan: &Plan,
    spec: &TaskSpec,
    trigger: &RevisionTrigger,
    ctx: &ReasonerContext,
    layer: &mut ReasoningLayer,
    pool: &[&ResourceState],
) -> Result<Proposal, ReasoningFailure> {
    let revised = layer.revise_plan(plan, spec, trigger, ctx)?;
    let from = revised.executed_legs.max(trigger.progress.kept);
    materialize(revised, from, trigger.progress.ready_at, spec, ctx, pool)
        .ok_or(ReasoningFailure::NoFeasibleRevision)
}

/// Best ground-only continuation of `plan` after its first `kept` legs,
/// as the next revision.
pub fn ground_fallback(
    plan: &Plan,
    kept: usize,
    spec: &TaskSpec,
    ctx: &ReasonerContext,
    pool: &[&ResourceState],
) -> Option<Proposal> {
    let kept = kept.min(plan.legs.len());
    let prefix = &plan.legs[..kept];
    let location = prefix.last().map_or(&spec.origin, |l| &l.destination);
    if location == &spec.destination {
        return None;
    }
    let ready = prefix
        .last()
        .map_or(spec.earliest_departure, |l| l.planned_end)
        .max(ctx.tick);
    let revision = plan.revision + 1;
    let mut spec = spec.clone();
    spec.constraints.clear();
    for ground_mode in [LegMode::Scooter, LegMode::GroundTaxi] {
        let filter = OptionFilter {
            ground_only: true,
            via_air: false,
            ground_mode,
        };
        for option in plan_options(&spec, location, ctx, filter) {
            let mut legs = prefix.to_vec();
            legs.extend(legs_from_option(&option, kept, ready).into_iter().map(|mut l| {
                l.leg_id = format!("{}-r{revision}", l.leg_id);
                l
            }));
            let candidate = Plan {
                plan_id: plan.plan_id.clone(),
                spec: plan.spec.clone(),
                legs,
                status: PlanStatus::Draft,
                revision,
                executed_legs: plan.executed_legs.min(kept),
            };
            if let Some(p) = materialize(candidate, kept, ready, &spec, ctx, pool) {
                return Some(p);
            }
        }
    }
    None
}
