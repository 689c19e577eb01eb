//! Modal-combination search for door-to-door trip plans.

use serde::{Deserialize, Serialize};

use super::types::{Constraint, Leg, LegMode, Plan, PlanStatus, ReasonerContext, TaskSpec};
use super::ReasoningFailure;
use crate::kernel::{shortest_route, Conditions, ModeSet, NodeId, Route, RouteOptions, Tick};

/// How a trip combines modes. Orders ground-only first, then vertiport
/// pairs by id; this order breaks time ties.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    GroundOnly,
    ViaAir { from: NodeId, to: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanOption {
    pub combination: Combination,
    pub legs: Vec<(LegMode, Route)>,
    pub total_time: Tick,
}

impl PlanOption {
    fn sort_key(&self) -> (Tick, usize, &Combination) {
        (self.total_time, self.legs.len(), &self.combination)
    }
}

/// Which combinations to consider and which mode rides the ground legs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OptionFilter {
    pub ground_only: bool,
    pub via_air: bool,
    pub ground_mode: LegMode,
}

impl OptionFilter {
    pub fn for_spec(spec: &TaskSpec) -> Self {
        OptionFilter {
            ground_only: !spec.has(Constraint::RequireAir),
            via_air: !spec.has(Constraint::GroundOnly),
            ground_mode: LegMode::Scooter,
        }
    }
}

fn route_for(
    ctx: &ReasonerContext,
    conditions: &Conditions,
    from: &NodeId,
    to: &NodeId,
    mode: LegMode,
    avoid_turbulence: bool,
) -> Option<Route> {
    let modes = match mode {
        LegMode::AirTaxi => ModeSet::AIR,
        _ => ModeSet::GROUND,
    };
    let opts = RouteOptions::new(modes)
        .avoiding_turbulence(avoid_turbulence && mode == LegMode::AirTaxi)
        .with_multiplier(mode.time_factor());
    shortest_route(&ctx.graph, from, to, &opts, conditions).ok()
}

/// Route a single leg of `mode` under the context's current conditions.
pub fn route_leg(
    ctx: &ReasonerContext,
    from: &NodeId,
    to: &NodeId,
    mode: LegMode,
    avoid_turbulence: bool,
) -> Option<Route> {
    route_for(ctx, &ctx.conditions(), from, to, mode, avoid_turbulence)
}

/// Every admissible modal combination from `origin` to the task's
/// destination, best first.
pub fn plan_options(
    spec: &TaskSpec,
    origin: &NodeId,
    ctx: &ReasonerContext,
    filter: OptionFilter,
) -> Vec<PlanOption> {
    let conditions = ctx.conditions();
    let dest = &spec.destination;
    let avoid = spec.has(Constraint::AvoidTurbulence);
    let mut options = Vec::new();
    let ground = |from: &NodeId, to: &NodeId| {
        route_for(ctx, &conditions, from, to, filter.ground_mode, false)
    };

    if filter.ground_only && origin != dest {
        if let Some(r) = ground(origin, dest) {
            options.push(PlanOption {
                combination: Combination::GroundOnly,
                total_time: r.total_time,
                legs: vec![(filter.ground_mode, r)],
            });
        }
    }
    if filter.via_air {
        let ports: Vec<&NodeId> = ctx.graph.vertiports().map(|n| &n.id).collect();
        for &v1 in &ports {
            let Some(access) = ground(origin, v1) else {
                continue;
            };
            for &v2 in &ports {
                if v1 == v2 {
                    continue;
                }
                let Some(flight) = route_for(ctx, &conditions, v1, v2, LegMode::AirTaxi, avoid)
                else {
                    continue;
                };
                let Some(egress) = ground(v2, dest) else {
                    continue;
                };
                let mut legs = Vec::with_capacity(3);
                if !access.is_empty() {
                    legs.push((filter.ground_mode, access.clone()));
                }
                legs.push((LegMode::AirTaxi, flight.clone()));
                if !egress.is_empty() {
                    legs.push((filter.ground_mode, egress));
                }
                let total_time = legs.iter().map(|(_, r)| r.total_time).sum();
                options.push(PlanOption {
                    combination: Combination::ViaAir {
                        from: v1.clone(),
                        to: v2.clone(),
                    },
                    legs,
                    total_time,
                });
            }
        }
    }
    if let Some(cap) = spec.max_cost() {
        options.retain(|o| o.total_time <= cap);
    }
    options.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    options
}

/// Canonical plan id for a request.
pub fn plan_id_for(spec: &TaskSpec) -> String {
    format!("P-{}", spec.request_id)
}

/// Turns an option into draft legs `T_a<n>` (numbered from `first_index`),
/// back to back from `departure`.
pub fn legs_from_option(option: &PlanOption, first_index: usize, departure: Tick) -> Vec<Leg> {
    let mut t = departure;
    option
        .legs
        .iter()
        .enumerate()
        .map(|(i, (mode, route))| {
            let leg = Leg {
                leg_id: format!("T_a{}", first_index + i + 1),
                mode: *mode,
                origin: route.origin().cloned().expect("route has origin"),
                destination: route.destination().cloned().expect("route has destination"),
                route: route.clone(),
                assigned_resource: None,
                planned_start: t,
                planned_end: t + route.total_time,
            };
            t = leg.planned_end;
            leg
        })
        .collect()
}

pub fn build_plan(spec: &TaskSpec, option: &PlanOption, departure: Tick) -> Plan {
    Plan {
        plan_id: plan_id_for(spec),
        spec: spec.request_id.clone(),
        legs: legs_from_option(option, 0, departure),
        status: PlanStatus::Draft,
        revision: 0,
        executed_legs: 0,
    }
}

/// Minimum estimated door-to-door plan satisfying the task's constraints.
pub fn generate_plan(spec: &TaskSpec, ctx: &ReasonerContext) -> Result<Plan, ReasoningFailure> {
    let departure = spec.earliest_departure.max(ctx.tick);
    plan_options(spec, &spec.origin, ctx, OptionFilter::for_spec(spec))
        .first()
        .map(|o| build_plan(spec, o, departure))
        .ok_or(ReasoningFailure::NoFeasiblePlan)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use super::*;
    use crate::holon::HolonId;
    use crate::kernel::{
        CityGraph, Disruption, DisruptionKind, DisruptionTarget, Edge, Mode, Node, NodeKind,
        Slowdown,
    };
    use crate::reasoning::types::plan_violations;

    fn n(id: &str, kind: NodeKind) -> Node {
        Node {
            id: id.into(),
            kind,
            x: 0,
            y: 0,
            capacity: None,
            charging: false,
        }
    }

    fn e(id: &str, a: &str, b: &str, mode: Mode, t: Tick) -> Edge {
        Edge {
            id: id.into(),
            from: a.into(),
            to: b.into(),
            mode,
            base_travel_time: t,
            blocked: false,
        }
    }

    /// X - V1 ~air~ V2 - Y with a slow ground corridor X - M - Y.
    fn city() -> Arc<CityGraph> {
        use Mode::*;
        use NodeKind::*;
        Arc::new(
            CityGraph::new(
                [
                    n("X", Street),
                    n("Y", Poi),
                    n("M", Street),
                    n("V1", Vertiport),
                    n("V2", Vertiport),
                ],
                [
                    e("X-V1", "X", "V1", Ground, 3),
                    e("V1-V2", "V1", "V2", Air, 5),
                    e("V2-Y", "V2", "Y", Ground, 2),
                    e("X-M", "X", "M", Ground, 10),
                    e("M-Y", "M", "Y", Ground, 10),
                ],
            )
            .unwrap(),
        )
    }

    fn spec(from: &str, to: &str, cs: &[Constraint]) -> TaskSpec {
        TaskSpec {
            request_id: "R1".into(),
            passenger: HolonId::root("c1"),
            origin: from.into(),
            destination: to.into(),
            earliest_departure: 0,
            constraints: cs.iter().copied().collect::<BTreeSet<_>>(),
            free_text: String::new(),
        }
    }

    #[test]
    fn three_leg_plan_via_vertiports() {
        let ctx = ReasonerContext::new(city(), 0);
        let s = spec("X", "Y", &[]);
        let plan = generate_plan(&s, &ctx).unwrap();
        let modes: Vec<_> = plan.legs.iter().map(|l| l.mode).collect();
        assert_eq!(modes, [LegMode::Scooter, LegMode::AirTaxi, LegMode::Scooter]);
        let ids: Vec<_> = plan.legs.iter().map(|l| l.leg_id.as_str()).collect();
        assert_eq!(ids, ["T_a1", "T_a2", "T_a3"]);
        assert_eq!(plan.door_to_door(), 10);
        assert!(plan_violations(&plan, &s, &ctx.graph).is_empty());
    }

    #[test]
    fn ground_only_constraint_forces_ground() {
        let ctx = ReasonerContext::new(city(), 0);
        let s = spec("X", "Y", &[Constraint::GroundOnly]);
        let plan = generate_plan(&s, &ctx).unwrap();
        assert_eq!(plan.legs.len(), 1);
        assert!(!plan.has_air_leg());
        assert_eq!(plan.door_to_door(), 20);
    }

    #[test]
    fn adjacent_nodes_get_single_leg() {
        let ctx = ReasonerContext::new(city(), 0);
        let plan = generate_plan(&spec("X", "M", &[]), &ctx).unwrap();
        assert_eq!(plan.legs.len(), 1);
        assert_eq!(plan.legs[0].mode, LegMode::Scooter);
    }

    #[test]
    fn avoid_turbulence_skips_slowed_air() {
        let mut ctx = ReasonerContext::new(city(), 0);
        ctx.disruptions.push(Disruption {
            id: "wx".into(),
            kind: DisruptionKind::WeatherSlowdown,
            target: DisruptionTarget::Edge("V1-V2".into()),
            activation: 0,
            expiry: None,
            slowdown_factor: Slowdown::from_factor(1.2).unwrap(),
        });
        let plain = generate_plan(&spec("X", "Y", &[]), &ctx).unwrap();
        assert!(plain.has_air_leg());
        assert_eq!(plain.door_to_door(), 11);
        let calm = generate_plan(&spec("X", "Y", &[Constraint::AvoidTurbulence]), &ctx).unwrap();
        assert!(!calm.has_air_leg());
    }

    #[test]
    fn max_cost_filters_and_fails() {
        let ctx = ReasonerContext::new(city(), 0);
        let s = spec("X", "Y", &[Constraint::GroundOnly, Constraint::MaxCost(15)]);
        assert_eq!(generate_plan(&s, &ctx), Err(ReasoningFailure::NoFeasiblePlan));
    }

    #[test]
    fn origin_at_vertiport_drops_access_leg() {
        let ctx = ReasonerContext::new(city(), 0);
        let plan = generate_plan(&spec("V1", "Y", &[]), &ctx).unwrap();
        let modes: Vec<_> = plan.legs.iter().map(|l| l.mode).collect();
        assert_eq!(modes, [LegMode::AirTaxi, LegMode::Scooter]);
    }

    #[test]
    fn departure_respects_earliest() {
        let ctx = ReasonerContext::new(city(), 4);
        let mut s = spec("X", "Y", &[]);
        s.earliest_departure = 9;
        let plan = generate_plan(&s, &ctx).unwrap();
        assert_eq!(plan.departure(), Some(9));
        assert_eq!(plan.arrival(), Some(19));
    }
}
