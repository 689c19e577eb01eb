//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use holonsim_core::federation::{conforms, CoordinationMetrics, StrategyKind};
use holonsim_core::holon::HolonId;
use holonsim_core::holons::match_resources;
use holonsim_core::kernel::{
    shortest_route, CityGraph, Conditions, Mode, ModeSet, NodeId, ResourceKind, Route, RouteOptions, RoutingError,
};
use holonsim_core::reasoning::{
    generate_plan, plan_violations, Constraint, Leg, LegMode, ReasonerContext, ReasoningFailure, TaskSpec,
};
use holonsim_core::scenario::{bundled_asset, load_bundled, parse_script, random_scenario, Scenario};
use holonsim_core::sim::{to_ndjson, LogRecord, ScriptedAction, SimOptions, Simulation};
use holonsim_core::verify::verify_log;
use oracles::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Criterion = fn() -> Verdict;

/// Outcome of one criterion: pass or fail plus a one-line summary.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn script(name: &str) -> Vec<ScriptedAction> {
    parse_script(bundled_asset(name).expect("bundled script")).expect("valid script")
}

fn simulate(scenario: &Scenario, script: Vec<ScriptedAction>, strategy: StrategyKind) -> Simulation {
    let mut sim = Simulation::new(
        scenario,
        SimOptions {
            script,
            strategy,
            ..Default::default()
        },
    )
    .expect("scenario loads");
    sim.run();
    sim
}

fn of_kind<'a>(sim: &'a Simulation, kind: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
    sim.log().records().iter().filter(move |r| r.kind == kind)
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn fig5_sequence() -> Verdict {
    let started = Instant::now();
    let sim = simulate(&load_bundled("fig5-demo").unwrap(), script("fig5-approve"), StrategyKind::Holonic);
    let template: Vec<Value> = serde_json::from_str(bundled_asset("fig5-template").unwrap()).unwrap();
    let report = verify_log(sim.log().records(), Some(&template));
    let elapsed = started.elapsed();
    let t = report.template.as_ref().expect("template checked");
    let pass = report.is_ok() && t.is_complete() && within(elapsed, Duration::from_secs(5));
    verdict(
        pass,
        format!(
            "template {}/{} in order, {} findings, {:.3}s (limit 5s)",
            t.matched,
            t.total,
            report.findings.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn replan_continuity() -> Verdict {
    let started = Instant::now();
    let sim = simulate(&load_bundled("replan-demo").unwrap(), script("replan-approve"), StrategyKind::Holonic);
    let elapsed = started.elapsed();
    let mut problems = Vec::new();
    let Some(blocked) = of_kind(&sim, "leg_blocked").next() else {
        return verdict(false, "no leg_blocked record");
    };
    let activated: BTreeMap<u64, &LogRecord> =
        of_kind(&sim, "plan_activated").map(|r| (r.u64("revision").unwrap(), r)).collect();
    let (Some(rev0), Some(rev1)) = (activated.get(&0), activated.get(&1)) else {
        return verdict(false, "revision 0 or 1 never activated");
    };
    if rev1.seq < blocked.seq {
        problems.push("revision 1 activated before the block".to_owned());
    }
    let legs = |r: &LogRecord| r.payload["legs"].as_array().cloned().unwrap_or_default();
    let (old, new) = (legs(rev0), legs(rev1));
    // Legs finished before the block must reappear unchanged.
    let completed: Vec<&str> = of_kind(&sim, "leg_completed")
        .filter(|r| r.seq < blocked.seq)
        .filter_map(|r| r.str("leg_id"))
        .collect();
    for (i, id) in completed.iter().enumerate() {
        if old.get(i).map(|l| &l["leg_id"]) != Some(&Value::from(*id)) || new.get(i) != old.get(i) {
            problems.push(format!("completed leg {id} not kept at position {i}"));
        }
    }
    // The partially ridden leg keeps its id and ends where the rider stopped.
    let k = completed.len();
    let stop = blocked.payload["traversed"]["nodes"].as_array().and_then(|n| n.last()).cloned();
    match new.get(k) {
        Some(l) if Some(&l["destination"]) == stop.as_ref() && l["leg_id"] == blocked.payload["leg_id"] => {}
        other => problems.push(format!("partial leg not preserved: {other:?}")),
    }
    for w in new.windows(2) {
        if w[0]["destination"] != w[1]["origin"] {
            problems.push("revision 1 legs are not contiguous".into());
        }
    }
    let step1 = of_kind(&sim, "gate_step")
        .find(|r| r.u64("revision") == Some(1) && r.u64("step") == Some(1))
        .map(|r| r.payload["passed"] == true);
    if step1 != Some(true) {
        problems.push("revision 1 failed or skipped the structural check".into());
    }
    let done = of_kind(&sim, "trip_completed").next();
    if done.and_then(|r| r.u64("revision")) != Some(1) {
        problems.push("trip did not complete on revision 1".into());
    }
    let report = verify_log(sim.log().records(), None);
    if !report.findings.is_empty() || !sim.violations().is_empty() {
        problems.push(format!("{} log findings, {} violations", report.findings.len(), sim.violations().len()));
    }
    if !within(elapsed, Duration::from_secs(5)) {
        problems.push(format!("took {:.3}s", elapsed.as_secs_f64()));
    }
    let summary = format!(
        "blocked {} at tick {}, revision 1 keeps {} completed + 1 partial leg, {} legs total, {:.3}s",
        blocked.str("leg_id").unwrap_or("?"),
        blocked.tick,
        k,
        new.len(),
        elapsed.as_secs_f64()
    );
    if problems.is_empty() {
        verdict(true, summary)
    } else {
        verdict(false, format!("{summary}; {}", problems.join("; ")))
    }
}

/// Independent scan: every air leg_started is preceded by a cleared gate
/// for its revision, or by a fallback that activated that revision.
fn ungated_air_legs(records: &[LogRecord]) -> (usize, usize) {
    let mut cleared: BTreeSet<(String, u64)> = BTreeSet::new();
    let (mut air, mut ungated) = (0, 0);
    for r in records {
        let rid = r.str("request_id").unwrap_or_default().to_owned();
        match (r.kind.as_str(), r.str("outcome")) {
            ("gate_outcome", Some("cleared")) => {
                cleared.insert((rid, r.u64("revision").unwrap()));
            }
            ("gate_outcome", Some("fallback_activated")) => {
                cleared.insert((rid, r.u64("activated_revision").unwrap()));
            }
            ("leg_started", _) if r.str("mode") == Some("air_taxi") => {
                air += 1;
                if !cleared.contains(&(rid, r.u64("revision").unwrap())) {
                    ungated += 1;
                }
            }
            _ => {}
        }
    }
    (air, ungated)
}

fn gate_and_fallback() -> Verdict {
    let started = Instant::now();
    let (mut air, mut ungated, mut findings) = (0, 0, 0);
    let (mut silent_runs, mut high_risk, mut on_time) = (0, 0, 0);
    let (mut without_fallback, mut rejected_on_time) = (0, 0);
    let mut late = Vec::new();
    for seed in 1..=100u64 {
        let case = random_scenario(seed);
        let sim = simulate(&case.scenario, case.script.clone(), StrategyKind::Holonic);
        let records = sim.log().records();
        let (a, u) = ungated_air_legs(records);
        air += a;
        ungated += u;
        findings += verify_log(records, None).findings.len() + sim.violations().len();
        if !case.silent {
            continue;
        }
        silent_runs += 1;
        for req in records.iter().filter(|r| r.kind == "approval_requested" && r.str("risk_class") == Some("high")) {
            let id = req.str("approval_id").unwrap();
            let deadline = req.u64("timeout_at").unwrap() + 1;
            let outcome = records
                .iter()
                .find(|r| r.kind == "gate_outcome" && r.str("approval_id") == Some(id));
            // A plan with no ground alternative has nothing to fall back
            // to; the gate must reject it instead, just as promptly.
            let expected = if req.payload["fallback"].is_null() {
                without_fallback += 1;
                "rejected"
            } else {
                high_risk += 1;
                "fallback_activated"
            };
            match outcome {
                Some(o) if o.str("outcome") == Some(expected) && o.tick <= deadline => {
                    if expected == "rejected" {
                        rejected_on_time += 1;
                    } else {
                        on_time += 1;
                    }
                }
                Some(o) => late.push(format!(
                    "seed {seed} {id}: {} at tick {} (want {expected} by {deadline})",
                    o.str("outcome").unwrap_or("?"),
                    o.tick
                )),
                None => late.push(format!("seed {seed} {id}: no gate outcome")),
            }
        }
    }
    let elapsed = started.elapsed();
    let pass = ungated == 0
        && findings == 0
        && air > 0
        && high_risk > 0
        && on_time == high_risk
        && rejected_on_time == without_fallback
        && within(elapsed, Duration::from_secs(120));
    let mut detail = format!(
        "seeds 1-100: {air} air legs started, {ungated} ungated, {findings} log findings; \
         {silent_runs} silent runs: {on_time}/{high_risk} high-risk fallbacks activated by timeout_at+1, \
         {rejected_on_time}/{without_fallback} plans without a ground alternative rejected by timeout_at+1; \
         {:.2}s (limit 120s)",
        elapsed.as_secs_f64()
    );
    if !late.is_empty() {
        detail.push_str(&format!("; {}", late.join(", ")));
    }
    verdict(pass, detail)
}

fn determinism() -> Verdict {
    let mut cases: Vec<(String, Scenario, Vec<ScriptedAction>)> = vec![
        ("fig5-demo".into(), load_bundled("fig5-demo").unwrap(), script("fig5-approve")),
        ("replan-demo".into(), load_bundled("replan-demo").unwrap(), script("replan-approve")),
        ("congested-core".into(), load_bundled("congested-core").unwrap(), script("congested-approve")),
        ("ten-trips".into(), load_bundled("ten-trips").unwrap(), Vec::new()),
    ];
    for seed in 1..=16 {
        let c = random_scenario(1000 + seed);
        cases.push((format!("random-{}", 1000 + seed), c.scenario, c.script));
    }
    let mut same = 0;
    let mut differ = Vec::new();
    for (name, scenario, script) in &cases {
        let a = simulate(scenario, script.clone(), StrategyKind::Holonic);
        let b = simulate(scenario, script.clone(), StrategyKind::Holonic);
        let bytes_equal = to_ndjson(a.log().records()) == to_ndjson(b.log().records());
        if a.log().hash() == b.log().hash() && bytes_equal && a.log().records().len() > 1 {
            same += 1;
        } else {
            differ.push(name.clone());
        }
    }
    let pass = same == cases.len() && cases.len() == 20;
    let mut detail = format!("{same}/{} scenarios byte-identical across two runs", cases.len());
    if !differ.is_empty() {
        detail.push_str(&format!("; differ: {}", differ.join(", ")));
    }
    verdict(pass, detail)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn any_time(r: &mut dyn rand::RngCore) -> u64 {
    r.random_range(1..=20)
}

fn even_time(r: &mut dyn rand::RngCore) -> u64 {
    2 * r.random_range(1..=10)
}

fn pick(r: &mut impl Rng, graph: &CityGraph) -> NodeId {
    let ids: Vec<NodeId> = graph.nodes().map(|n| n.id.clone()).collect();
    ids[r.random_range(0..ids.len())].clone()
}

fn context(graph: &CityGraph, c: &Conditions) -> ReasonerContext {
    let mut ctx = ReasonerContext::new(Arc::new(graph.clone()), 0);
    ctx.disruptions = disruptions_for(c);
    ctx
}

fn route_sound(graph: &CityGraph, route: &Route, from: &NodeId, to: &NodeId, mode: Mode, c: &Conditions, mult: u64) -> bool {
    if route.nodes.first() != Some(from) || route.nodes.last() != Some(to) || route.nodes.len() != route.edges.len() + 1 {
        return false;
    }
    let mut sum = 0;
    for (i, id) in route.edges.iter().enumerate() {
        let Some(e) = graph.edge(id) else { return false };
        if e.other(&route.nodes[i]) != Some(&route.nodes[i + 1]) {
            return false;
        }
        match oracle_edge_time(e, mode, c, mult) {
            Some(t) => sum += t,
            None => return false,
        }
    }
    sum == route.total_time
}

fn routing_and_planning() -> Verdict {
    let started = Instant::now();
    let (mut route_ok, mut routed, mut plan_ok, mut planned, mut air_chosen) = (0, 0, 0, 0, 0);
    let mut bad = Vec::new();
    for seed in 0..200u64 {
        let mut r = rng(0xA11CE + seed);
        let graph = random_graph(&mut r, 8, any_time);
        let c = random_conditions(&mut r, &graph);
        let view = Conditions::at(&graph, &disruptions_for(&c), 0);
        let (from, to) = (pick(&mut r, &graph), pick(&mut r, &graph));
        let (mode, modes) = if r.random_bool(0.7) {
            (Mode::Ground, ModeSet::GROUND)
        } else {
            (Mode::Air, ModeSet::AIR)
        };
        let mult = r.random_range(1..=2);
        let expected = exhaustive_shortest(&graph, &from, &to, &|e| oracle_edge_time(e, mode, &c, mult));
        let got = shortest_route(&graph, &from, &to, &RouteOptions::new(modes).with_multiplier(mult), &view);
        let agree = match (&got, expected) {
            (Ok(route), Some(best)) => {
                routed += 1;
                route.total_time == best && route_sound(&graph, route, &from, &to, mode, &c, mult)
            }
            (Err(RoutingError::NoRoute { .. }), None) => true,
            _ => false,
        };
        if agree {
            route_ok += 1;
        } else {
            bad.push(format!("route graph {seed}"));
        }

        let mut r = rng(0xB0B + seed);
        let graph = random_graph(&mut r, 8, any_time);
        let c = random_conditions(&mut r, &graph);
        let origin = pick(&mut r, &graph);
        let dest = loop {
            let d = pick(&mut r, &graph);
            if d != origin {
                break d;
            }
        };
        let constraint = match r.random_range(0..4) {
            0 => Some(Constraint::GroundOnly),
            1 => Some(Constraint::RequireAir),
            _ => None,
        };
        let spec = TaskSpec {
            request_id: "R1".into(),
            passenger: HolonId::root("c1"),
            origin: origin.clone(),
            destination: dest.clone(),
            earliest_departure: 0,
            constraints: constraint.into_iter().collect(),
            free_text: String::new(),
        };
        let expected = best_combination(
            &graph,
            &c,
            &origin,
            &dest,
            constraint != Some(Constraint::RequireAir),
            constraint != Some(Constraint::GroundOnly),
        );
        let agree = match (generate_plan(&spec, &context(&graph, &c)), expected) {
            (Ok(plan), Some((time, legs, combo))) => {
                planned += 1;
                let chosen = plan
                    .legs
                    .iter()
                    .find(|l| l.mode == LegMode::AirTaxi)
                    .map_or(Combo::Ground, |l| Combo::Air(l.origin.clone(), l.destination.clone()));
                if chosen != Combo::Ground {
                    air_chosen += 1;
                }
                let span = plan.legs.last().unwrap().planned_end - plan.legs[0].planned_start;
                chosen == combo && plan.legs.len() == legs && span == time && plan_violations(&plan, &spec, &graph).is_empty()
            }
            (Err(ReasoningFailure::NoFeasiblePlan), None) => true,
            _ => false,
        };
        if agree {
            plan_ok += 1;
        } else {
            bad.push(format!("plan graph {seed}"));
        }
    }
    let elapsed = started.elapsed();
    let pass = route_ok == 200 && plan_ok == 200 && within(elapsed, Duration::from_secs(60));
    let mut detail = format!(
        "routes {route_ok}/200 agree ({routed} with a path), plans {plan_ok}/200 agree ({planned} feasible, {air_chosen} via air), {:.2}s (limit 60s)",
        elapsed.as_secs_f64()
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join(", ")));
    }
    verdict(pass, detail)
}

fn matching() -> Verdict {
    let (mut agree, mut matched, mut invariant, mut ties) = (0, 0, 0, 0);
    let mut bad = Vec::new();
    for seed in 0..200u64 {
        let mut r = rng(0xC0FFEE + seed);
        let graph = random_graph(&mut r, 8, even_time);
        let c = random_conditions(&mut r, &graph);
        let n = r.random_range(1..=20);
        let pool = random_pool(&mut r, &graph, n);
        let kind = [ResourceKind::Scooter, ResourceKind::AirTaxi, ResourceKind::GroundTaxi][r.random_range(0..3)];
        let mode = match kind {
            ResourceKind::Scooter => LegMode::Scooter,
            ResourceKind::AirTaxi => LegMode::AirTaxi,
            ResourceKind::GroundTaxi => LegMode::GroundTaxi,
        };
        let origin = pick(&mut r, &graph);
        let duration = r.random_range(1..=60);
        let leg = Leg {
            leg_id: "T_a1".into(),
            mode,
            origin: origin.clone(),
            destination: origin.clone(),
            route: Route {
                nodes: vec![origin.clone()],
                edges: vec![],
                total_time: duration,
            },
            assigned_resource: None,
            planned_start: 0,
            planned_end: duration,
        };
        let drain = if kind == ResourceKind::AirTaxi { 2 } else { 1 };
        let refs: Vec<_> = pool.iter().collect();
        let expected = brute_force_match(&graph, &c, &origin, kind, drain * duration, &pool);
        let got = match_resources("t", &leg, &refs, &context(&graph, &c)).ok().map(|d| d.resource.0);
        if got == expected {
            agree += 1;
        } else {
            bad.push(format!("set {seed}: got {got:?}, want {expected:?}"));
        }
        if expected.is_some() {
            matched += 1;
        }
        let same_kind: Vec<_> = pool.iter().filter(|p| p.kind == kind).collect();
        let mut spots: Vec<_> = same_kind.iter().map(|p| &p.location).collect();
        spots.sort_by_key(|l| format!("{l:?}"));
        spots.dedup();
        if spots.len() < same_kind.len() {
            ties += 1;
        }
        let stable = [0.5, 2.0, 10.0].iter().all(|&k| {
            let scaled = scale_graph(&graph, k);
            match_resources("t", &leg, &refs, &context(&scaled, &c)).ok().map(|d| d.resource.0) == expected
        });
        if stable {
            invariant += 1;
        } else {
            bad.push(format!("set {seed}: changes under scaling"));
        }
    }
    let pass = agree == 200 && invariant == 200;
    let mut detail = format!(
        "{agree}/200 equal the brute-force argmax ({matched} with a match, {ties} with co-located candidates), \
         {invariant}/200 invariant under k in {{0.5, 2, 10}}"
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join(", ")));
    }
    verdict(pass, detail)
}

/// Counts fixed after the first verified run on `ten-trips`:
/// (conversations, total messages, middle-agent messages, max single-agent load).
const GOLDEN: [(StrategyKind, usize, usize, usize, usize); 5] = [
    (StrategyKind::Facilitator, 10, 40, 40, 40),
    (StrategyKind::Broker, 10, 40, 40, 40),
    (StrategyKind::Matchmaker, 10, 40, 20, 40),
    (StrategyKind::Mediator, 10, 176, 176, 176),
    (StrategyKind::Holonic, 10, 60, 60, 40),
];

/// Counting oracle: recomputes the coordination counts from transcripts.
fn count(sim: &Simulation) -> (usize, usize, usize, usize) {
    let strategy = sim.coordination_strategy();
    let (mut total, mut middle) = (0, 0);
    let mut load: BTreeMap<&HolonId, usize> = BTreeMap::new();
    for o in sim.conversations() {
        for hop in &o.transcript {
            total += 1;
            if strategy.middle_agents.iter().any(|m| hop.from == *m || hop.to == *m) {
                middle += 1;
            }
            *load.entry(&hop.from).or_default() += 1;
            *load.entry(&hop.to).or_default() += 1;
        }
    }
    let max = load.values().copied().max().unwrap_or(0);
    (sim.conversations().len(), total, middle, max)
}

fn federation() -> Verdict {
    let scenario = load_bundled("ten-trips").unwrap();
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for (kind, convs, total, middle, max) in GOLDEN {
        let sim = simulate(&scenario, Vec::new(), kind);
        let strategy = sim.coordination_strategy();
        let nonconforming = sim.conversations().iter().filter(|o| !conforms(strategy, o)).count();
        if nonconforming > 0 {
            problems.push(format!("{kind}: {nonconforming} transcripts break the pattern"));
        }
        let counted = count(&sim);
        let m: CoordinationMetrics = sim.metrics().coordination;
        let reported = (m.conversations, m.total_messages, m.middle_agent_messages, m.max_single_agent_load);
        if counted != reported {
            problems.push(format!("{kind}: metrics {reported:?} but transcripts give {counted:?}"));
        }
        if counted != (convs, total, middle, max) {
            problems.push(format!("{kind}: {counted:?} differs from golden {:?}", (convs, total, middle, max)));
        }
        match kind {
            StrategyKind::Facilitator if counted.3 != counted.1 => {
                problems.push(format!("facilitator max load {} != total {}", counted.3, counted.1));
            }
            StrategyKind::Matchmaker if counted.2 != 2 * counted.0 => {
                problems.push(format!("matchmaker middle hops {} != 2 x {}", counted.2, counted.0));
            }
            _ => {}
        }
        lines.push(format!("{kind} {}/{}/{}/{}", counted.0, counted.1, counted.2, counted.3));
    }
    let detail = format!(
        "all transcripts conform; convs/messages/middle/max-load: {}",
        lines.join(", ")
    );
    if problems.is_empty() {
        verdict(true, detail)
    } else {
        verdict(false, problems.join("; "))
    }
}

fn door_to_door(sim: &Simulation) -> Option<(u64, bool)> {
    let done = of_kind(sim, "trip_completed").next()?;
    let rid = done.str("request_id")?;
    let flew = of_kind(sim, "leg_started").any(|r| r.str("request_id") == Some(rid) && r.str("mode") == Some("air_taxi"));
    Some((done.u64("door_to_door")?, flew))
}

fn multimodal_benefit() -> Verdict {
    let scenario = load_bundled("congested-core").unwrap();
    let approved = simulate(&scenario, script("congested-approve"), StrategyKind::Holonic);
    let silent = simulate(&scenario, Vec::new(), StrategyKind::Holonic);
    let fell_back = of_kind(&silent, "gate_outcome").any(|r| r.str("outcome") == Some("fallback_activated"));
    match (door_to_door(&approved), door_to_door(&silent)) {
        (Some((air, true)), Some((ground, false))) if fell_back => {
            let ratio = air as f64 / ground as f64;
            verdict(
                ratio <= 0.7,
                format!("air {air} ticks vs ground fallback {ground} ticks, ratio {ratio:.3} (limit 0.7)"),
            )
        }
        (a, g) => verdict(false, format!("unexpected runs: approved {a:?}, silent {g:?}, fallback {fell_back}")),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("fig5 sequence", fig5_sequence),
        ("replan continuity", replan_continuity),
        ("gate totality and fallback", gate_and_fallback),
        ("determinism", determinism),
        ("routing and planning oracles", routing_and_planning),
        ("resource matching oracle", matching),
        ("federation conformance", federation),
        ("multimodal benefit", multimodal_benefit),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
