//! Machine-readable operating rules and the plan validator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{Plan, ReasonerContext};
use crate::kernel::{DisruptionKind, NodeId, ResourceId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    NoFlyZone,
    VertiportClosed,
    VertiportCapacity,
    BatteryInsufficient,
    ResourceOverlap,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [
        RuleId::NoFlyZone,
        RuleId::VertiportClosed,
        RuleId::VertiportCapacity,
        RuleId::BatteryInsufficient,
        RuleId::ResourceOverlap,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub id: RuleId,
    #[serde(default = "enabled")]
    pub enabled: bool,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

fn enabled() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<RuleConfig>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            rules: RuleId::ALL
                .iter()
                .map(|&id| RuleConfig {
                    id,
                    enabled: true,
                    params: BTreeMap::new(),
                })
                .collect(),
        }
    }
}

impl RuleSet {
    pub fn is_enabled(&self, id: RuleId) -> bool {
        self.rules.iter().any(|r| r.id == id && r.enabled)
    }

    fn param_u64(&self, id: RuleId, key: &str) -> Option<u64> {
        self.rules
            .iter()
            .find(|r| r.id == id)
            .and_then(|r| r.params.get(key))
            .and_then(Value::as_u64)
    }

    /// Battery percentage that must remain after every leg.
    pub fn battery_reserve(&self) -> u64 {
        self.param_u64(RuleId::BatteryInsufficient, "reserve_percent")
            .unwrap_or(0)
    }

    /// Capacity applied to vertiports that declare none.
    pub fn default_capacity(&self) -> Option<u64> {
        self.param_u64(RuleId::VertiportCapacity, "default_capacity")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: RuleId,
    pub leg: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules(&self) -> Vec<RuleId> {
        self.violations.iter().map(|v| v.rule).collect()
    }
}

/// Checks `plan` against every enabled rule. Pure; violations are data.
pub fn validate_plan(plan: &Plan, rules: &RuleSet, ctx: &ReasonerContext) -> Verdict {
    let mut violations = Vec::new();
    for kind in [DisruptionKind::NoFlyZone, DisruptionKind::VertiportClosed] {
        let rule = match kind {
            DisruptionKind::NoFlyZone => RuleId::NoFlyZone,
            _ => RuleId::VertiportClosed,
        };
        if !rules.is_enabled(rule) {
            continue;
        }
        for leg in plan.legs.iter().skip(plan.executed_legs).filter(|l| l.is_air()) {
            let hit = ctx
                .disruptions
                .iter()
                .filter(|d| d.kind == kind && d.overlaps(leg.planned_start, leg.planned_end))
                .find_map(|d| {
                    let targets = d.target.nodes();
                    leg.route
                        .nodes
                        .iter()
                        .find(|n| targets.contains(n))
                        .map(|n| (d.id.clone(), n.clone()))
                });
            if let Some((d, node)) = hit {
                violations.push(Violation {
                    rule,
                    leg: leg.leg_id.clone(),
                    detail: format!("{node} restricted by {d}"),
                });
            }
        }
    }
    if rules.is_enabled(RuleId::VertiportCapacity) {
        check_capacity(plan, rules, ctx, &mut violations);
    }
    if rules.is_enabled(RuleId::BatteryInsufficient) {
        check_battery(plan, rules, ctx, &mut violations);
    }
    if rules.is_enabled(RuleId::ResourceOverlap) {
        check_overlap(plan, ctx, &mut violations);
    }
    Verdict { violations }
}

fn check_capacity(plan: &Plan, rules: &RuleSet, ctx: &ReasonerContext, out: &mut Vec<Violation>) {
    let mut usage: BTreeMap<(&NodeId, Tick), u64> = BTreeMap::new();
    for s in ctx.pad_slots.iter().filter(|s| s.plan_id != plan.plan_id) {
        *usage.entry((&s.vertiport, s.tick)).or_default() += 1;
    }
    let mine: Vec<(&str, &NodeId, Tick)> = plan
        .legs
        .iter()
        .skip(plan.executed_legs)
        .filter(|l| l.is_air())
        .flat_map(|l| {
            [
                (l.leg_id.as_str(), &l.origin, l.planned_start),
                (l.leg_id.as_str(), &l.destination, l.planned_end),
            ]
        })
        .collect();
    for (_, v, t) in &mine {
        *usage.entry((v, *t)).or_default() += 1;
    }
    let mut flagged: Vec<&str> = Vec::new();
    for (leg, v, t) in mine {
        let cap = ctx
            .graph
            .node(v)
            .and_then(|n| n.capacity.map(u64::from))
            .or(rules.default_capacity());
        let Some(cap) = cap else { continue };
        let used = usage[&(v, t)];
        if used > cap && !flagged.contains(&leg) {
            flagged.push(leg);
            out.push(Violation {
                rule: RuleId::VertiportCapacity,
                leg: leg.to_owned(),
                detail: format!("{v} has {used} movements at tick {t}, capacity {cap}"),
            });
        }
    }
}

fn check_battery(plan: &Plan, rules: &RuleSet, ctx: &ReasonerContext, out: &mut Vec<Violation>) {
    let reserve = rules.battery_reserve();
    let mut spent: BTreeMap<&ResourceId, u64> = BTreeMap::new();
    for leg in plan.legs.iter().skip(plan.executed_legs) {
        let Some(rid) = &leg.assigned_resource else {
            continue;
        };
        let Some(res) = ctx.resource(rid) else {
            out.push(Violation {
                rule: RuleId::BatteryInsufficient,
                leg: leg.leg_id.clone(),
                detail: format!("resource {rid} unknown"),
            });
            continue;
        };
        let need = ctx.battery.required(res.kind, leg.route.total_time);
        let total = spent.entry(rid).or_default();
        *total += need;
        if *total + reserve > u64::from(res.battery) {
            out.push(Violation {
                rule: RuleId::BatteryInsufficient,
                leg: leg.leg_id.clone(),
                detail: format!("{rid} needs {}% but has {}%", *total + reserve, res.battery),
            });
        }
    }
}

fn check_overlap(plan: &Plan, ctx: &ReasonerContext, out: &mut Vec<Violation>) {
    let overlaps = |a: (Tick, Tick), b: (Tick, Tick)| a.0 < b.1 && b.0 < a.1;
    let legs: Vec<_> = plan.legs.iter().skip(plan.executed_legs).collect();
    for (i, leg) in legs.iter().enumerate() {
        let Some(rid) = &leg.assigned_resource else {
            continue;
        };
        let span = (leg.planned_start, leg.planned_end);
        let internal = legs[..i].iter().any(|o| {
            o.assigned_resource.as_ref() == Some(rid) && overlaps(span, (o.planned_start, o.planned_end))
        });
        let external = ctx.reservations.iter().find(|r| {
            &r.resource == rid && r.plan_id != plan.plan_id && overlaps(span, (r.start, r.end))
        });
        if internal || external.is_some() {
            out.push(Violation {
                rule: RuleId::ResourceOverlap,
                leg: leg.leg_id.clone(),
                detail: match external {
                    Some(r) => format!("{rid} already committed to {}", r.plan_id),
                    None => format!("{rid} used by overlapping legs"),
                },
            });
        }
    }
}
