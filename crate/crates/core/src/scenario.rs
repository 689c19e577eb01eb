//! Scenario documents: world, holarchy population, scripted inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{BatteryModel, CityGraph, Disruption, NodeId, ResourceState, Tick, WorldState};
use crate::reasoning::RuleSet;
use crate::sim::ScriptedAction;

pub const DEFAULT_MAX_TICKS: Tick = 500;
pub const DEFAULT_APPROVAL_TIMEOUT: Tick = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub graph: CityGraph,
    pub resources: Vec<ResourceState>,
    #[serde(default)]
    pub passengers: Vec<PassengerSpec>,
    #[serde(default)]
    pub scripted_disruptions: Vec<Disruption>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<RuleSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatteryModel>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassengerSpec {
    pub id: String,
    pub location: NodeId,
    #[serde(default)]
    pub requests: Vec<TimedUtterance>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedUtterance {
    pub at: Tick,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "max_ticks")]
    pub max_ticks: Tick,
    #[serde(default = "approval_timeout")]
    pub approval_timeout: Tick,
}

fn max_ticks() -> Tick {
    DEFAULT_MAX_TICKS
}

fn approval_timeout() -> Tick {
    DEFAULT_APPROVAL_TIMEOUT
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_ticks: DEFAULT_MAX_TICKS,
            approval_timeout: DEFAULT_APPROVAL_TIMEOUT,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{path}: {message}")]
pub struct SchemaError {
    /// Dotted path to the offending field, `.` for the document root.
    pub path: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(path: impl Into<String>, message: impl ToString) -> Self {
        SchemaError {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Scenario, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SchemaError::new(path, e.into_inner())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Cross-field checks that the type structure cannot express.
    pub fn validate(&self) -> Result<(), SchemaError> {
        self.world()?;
        let mut ids = BTreeSet::new();
        for (i, p) in self.passengers.iter().enumerate() {
            if p.id.is_empty() || p.id.contains('/') {
                return Err(SchemaError::new(format!("passengers[{i}].id"), "invalid holon name"));
            }
            if !ids.insert(&p.id) {
                return Err(SchemaError::new(
                    format!("passengers[{i}].id"),
                    format!("duplicate passenger id `{}`", p.id),
                ));
            }
            if !self.graph.contains_node(&p.location) {
                return Err(SchemaError::new(
                    format!("passengers[{i}].location"),
                    format!("unknown node `{}`", p.location),
                ));
            }
        }
        for (i, r) in self.resources.iter().enumerate() {
            if r.id.as_str().is_empty() || r.id.as_str().contains('/') {
                return Err(SchemaError::new(format!("resources[{i}].id"), "invalid holon name"));
            }
        }
        if self.limits.approval_timeout == 0 {
            return Err(SchemaError::new("limits.approval_timeout", "must be at least 1"));
        }
        Ok(())
    }

    /// Builds the initial world, including scripted disruptions.
    pub fn world(&self) -> Result<WorldState, SchemaError> {
        let mut world = WorldState::new(self.graph.clone(), [], self.seed)
            .map_err(|e| SchemaError::new("resources", e))?;
        for (i, r) in self.resources.iter().enumerate() {
            world
                .add_resource(r.clone())
                .map_err(|e| SchemaError::new(format!("resources[{i}]"), e))?;
        }
        if let Some(b) = self.battery {
            world.battery = b;
        }
        for (i, d) in self.scripted_disruptions.iter().enumerate() {
            world
                .inject_disruption(d.clone())
                .map_err(|e| SchemaError::new(format!("scripted_disruptions[{i}]"), e))?;
        }
        Ok(world)
    }
}

/// Parses a script document: a list of actions.
pub fn parse_script(text: &str) -> Result<Vec<ScriptedAction>, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut actions: Vec<ScriptedAction> = serde_path_to_error::deserialize(de)
        .map_err(|e| SchemaError::new(e.path().to_string(), e.into_inner()))?;
    crate::sim::sort_script(&mut actions);
    Ok(actions)
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        /// Names of the scenarios shipped with the crate.
        pub const BUNDLED: &[&str] = &[$($name),*];

        /// Source text of a bundled scenario.
        pub fn bundled(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../scenarios/", $name, ".json"))),)*
                _ => None,
            }
        }
    };
}

bundled!("fig5-demo", "congested-core", "ten-trips", "replan-demo");

/// Bundled operator scripts and log templates.
pub fn bundled_asset(name: &str) -> Option<&'static str> {
    match name {
        "fig5-approve" => Some(include_str!("../scenarios/fig5-approve.script.json")),
        "replan-approve" => Some(include_str!("../scenarios/replan-approve.script.json")),
        "congested-approve" => Some(include_str!("../scenarios/congested-approve.script.json")),
        "fig5-template" => Some(include_str!("../scenarios/fig5.template.json")),
        _ => None,
    }
}

pub fn load_bundled(name: &str) -> Option<Scenario> {
    bundled(name).map(|t| Scenario::from_json(t).expect("bundled scenario is valid"))
}

/// A generated scenario with the operator script to run it under.
#[derive(Clone, Debug)]
pub struct RandomCase {
    pub scenario: Scenario,
    pub script: Vec<ScriptedAction>,
    /// No operator input at all: every approval must time out.
    pub silent: bool,
}

/// Small random multimodal world: a ground corridor from `O` to `D`, an
/// air corridor between vertiports near each end, a few passengers and an
/// occasional disruption. Half the seeds leave the operator silent.
pub fn random_scenario(seed: u64) -> RandomCase {
    use rand::{Rng, SeedableRng};
    use serde_json::json;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let hops = rng.random_range(1..=3usize);
    let mut chain = vec!["O".to_owned()];
    chain.extend((1..=hops).map(|i| format!("G{i}")));
    chain.push("D".to_owned());

    let mut nodes = Vec::new();
    for (i, n) in chain.iter().enumerate() {
        let kind = if i == 0 || i == chain.len() - 1 { "poi" } else { "street" };
        nodes.push(json!({"id": n, "kind": kind, "x": (i as i64) * 4, "y": 0}));
    }
    let third = rng.random_bool(0.3);
    let mut ports = vec![("VA", 1, 2), ("VB", (hops as i64 + 1) * 4 - 1, 2)];
    if third {
        ports.push(("VC", (hops as i64 + 1) * 2, 4));
    }
    for (id, x, y) in &ports {
        nodes.push(json!({
            "id": id, "kind": "vertiport", "x": x, "y": y,
            "capacity": rng.random_range(1..=2),
            "charging": rng.random_bool(0.7),
        }));
    }

    let mut edges = Vec::new();
    let mut edge = |from: &str, to: &str, mode: &str, time: u64| {
        edges.push(json!({"id": format!("{from}-{to}"), "from": from, "to": to, "mode": mode, "time": time}));
    };
    for w in chain.windows(2) {
        edge(&w[0], &w[1], "ground", rng.random_range(4..=15));
    }
    if hops >= 2 && rng.random_bool(0.5) {
        edge("O", &chain[2], "ground", rng.random_range(10..=30));
    }
    edge("O", "VA", "ground", rng.random_range(1..=4));
    edge("VB", "D", "ground", rng.random_range(1..=4));
    edge("VA", "VB", "air", rng.random_range(3..=9));
    if third {
        edge("VA", "VC", "air", rng.random_range(2..=5));
        edge("VC", "VB", "air", rng.random_range(2..=5));
    }

    let mut resources = vec![
        json!({"id": "scooter-1", "kind": "scooter", "location": "O", "battery": rng.random_range(40..=100)}),
        json!({"id": "scooter-2", "kind": "scooter", "location": "VB", "battery": rng.random_range(40..=100)}),
        json!({"id": "air-1", "kind": "air_taxi", "location": "VA", "battery": rng.random_range(20..=100)}),
    ];
    if rng.random_bool(0.5) {
        resources.push(json!({"id": "scooter-3", "kind": "scooter", "location": "O", "battery": rng.random_range(40..=100)}));
    }
    if rng.random_bool(0.4) {
        resources.push(json!({"id": "air-2", "kind": "air_taxi", "location": "VA", "battery": rng.random_range(20..=100)}));
    }
    if rng.random_bool(0.4) {
        resources.push(json!({"id": "taxi-1", "kind": "ground_taxi", "location": chain[1], "battery": 90}));
    }

    let passengers: Vec<_> = (1..=rng.random_range(1..=3))
        .map(|i| {
            let at = rng.random_range(1..=6u64);
            json!({"id": format!("p{i}"), "location": "O", "requests": [{"at": at, "text": "ride from O to D"}]})
        })
        .collect();

    let mut disruptions = Vec::new();
    if rng.random_bool(0.3) {
        let activation = rng.random_range(2..=12u64);
        let (kind, target) = match rng.random_range(0..3) {
            0 => ("edge_blocked", json!({"edge": "O-VA"})),
            1 => ("edge_blocked", json!({"edge": "VA-VB"})),
            _ => ("vertiport_closed", json!({"node": "VB"})),
        };
        let mut d = json!({"id": "d1", "kind": kind, "target": target, "activation": activation});
        if rng.random_bool(0.5) {
            d["expiry"] = json!(activation + rng.random_range(3..=15u64));
        }
        disruptions.push(d);
    }

    let timeout = rng.random_range(5..=20u64);
    let doc = json!({
        "name": format!("random-{seed}"),
        "graph": {"nodes": nodes, "edges": edges},
        "resources": resources,
        "passengers": passengers,
        "scripted_disruptions": disruptions,
        "seed": seed,
        "limits": {"max_ticks": 400, "approval_timeout": timeout},
    });
    let scenario = Scenario::from_json(&doc.to_string()).expect("generated scenario is valid");

    let silent = rng.random_bool(0.5);
    let mut script = Vec::new();
    if !silent {
        let mut at = 0;
        for i in 1..=4 {
            at += rng.random_range(1..=timeout);
            let kind = if rng.random_bool(0.8) { "approve" } else { "reject" };
            script.push(json!({"at_tick": at, "kind": kind, "approval_id": format!("APR-{i}")}));
        }
    }
    let script = parse_script(&serde_json::Value::Array(script).to_string()).expect("generated script is valid");
    RandomCase {
        scenario,
        script,
        silent,
    }
}
