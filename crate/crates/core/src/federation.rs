//! Middle-agent coordination patterns for resource discovery and
//! engagement, as transcript generators with topology predicates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::holon::{CapabilityDescriptor, HolonId, HolonSpec, Registry, RegistryError, Role};
use crate::kernel::Tick;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Facilitator,
    Broker,
    Matchmaker,
    Mediator,
    #[default]
    Holonic,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Facilitator,
        StrategyKind::Broker,
        StrategyKind::Matchmaker,
        StrategyKind::Mediator,
        StrategyKind::Holonic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Facilitator => "facilitator",
            StrategyKind::Broker => "broker",
            StrategyKind::Matchmaker => "matchmaker",
            StrategyKind::Mediator => "mediator",
            StrategyKind::Holonic => "holonic",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown strategy `{0}`")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownStrategy(s.to_owned()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FederationError {
    #[error("no provider advertises `{0}`")]
    NoProvider(String),
    #[error("requester {0} is not registered")]
    UnknownRequester(HolonId),
    #[error("middle agent {0} is not available")]
    MiddleAgentDown(HolonId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoordinationStrategy {
    pub kind: StrategyKind,
    pub middle_agents: Vec<HolonId>,
}

impl CoordinationStrategy {
    /// Installs `kind` on `registry`. Non-holonic patterns register one
    /// dedicated middle agent under the root; the holonic pattern uses the
    /// supervisors already present.
    pub fn install(kind: StrategyKind, registry: &mut Registry) -> Result<Self, FederationError> {
        let root = registry
            .root()
            .cloned()
            .ok_or_else(|| RegistryError::MissingParent(HolonId::root("root")))?;
        let middle_agents = match kind {
            StrategyKind::Holonic => supervisors(registry),
            other => {
                let id = root.child(other.as_str());
                if !registry.contains(&id) {
                    let spec = HolonSpec::new(other.as_str(), Role::MiddleAgent).capability(
                        CapabilityDescriptor::new(format!("coordinate.{}", other.as_str())),
                    );
                    registry.register(spec, Some(&root))?;
                }
                vec![id]
            }
        };
        Ok(CoordinationStrategy {
            kind,
            middle_agents,
        })
    }

    pub fn is_middle(&self, id: &HolonId) -> bool {
        self.middle_agents.contains(id)
    }
}

fn supervisors(registry: &Registry) -> Vec<HolonId> {
    registry
        .holons()
        .filter(|h| h.role == Role::Supervisor)
        .map(|h| h.id.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discovery,
    Exchange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub from: HolonId,
    pub to: HolonId,
    pub phase: Phase,
}

impl Hop {
    fn new(from: &HolonId, to: &HolonId, phase: Phase) -> Self {
        Hop {
            from: from.clone(),
            to: to.clone(),
            phase,
        }
    }

    pub fn touches(&self, id: &HolonId) -> bool {
        &self.from == id || &self.to == id
    }
}

/// A capability query plus how many request/reply rounds follow discovery.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Need {
    pub pattern: String,
    pub preferred: Option<HolonId>,
    pub rounds: usize,
}

impl Need {
    pub fn new(pattern: impl Into<String>) -> Self {
        Need {
            pattern: pattern.into(),
            preferred: None,
            rounds: 1,
        }
    }

    pub fn preferring(mut self, provider: HolonId) -> Self {
        self.preferred = Some(provider);
        self
    }

    pub fn rounds(mut self, n: usize) -> Self {
        self.rounds = n.max(1);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConversationOutcome {
    pub requester: HolonId,
    pub provider: HolonId,
    pub candidates: Vec<HolonId>,
    pub transcript: Vec<Hop>,
    /// Sequential message steps until the provider is identified; fan-out
    /// to several candidates counts as one step.
    pub discovery_latency: Tick,
}

/// Tree path from `a` to `b` through their lowest common ancestor.
fn tree_path(a: &HolonId, b: &HolonId) -> Vec<HolonId> {
    let mut up = vec![a.clone()];
    let mut cur = a.clone();
    while !b.is_within(&cur) {
        match cur.parent() {
            Some(p) => {
                up.push(p.clone());
                cur = p;
            }
            None => break,
        }
    }
    let mut down = Vec::new();
    let mut d = b.clone();
    while d != cur {
        down.push(d.clone());
        match d.parent() {
            Some(p) => d = p,
            None => break,
        }
    }
    down.reverse();
    up.extend(down);
    up
}

fn walk(path: &[HolonId], phase: Phase, out: &mut Vec<Hop>) {
    for w in path.windows(2) {
        out.push(Hop::new(&w[0], &w[1], phase));
    }
}

pub fn route_conversation(
    strategy: &CoordinationStrategy,
    need: &Need,
    requester: &HolonId,
    registry: &Registry,
) -> Result<ConversationOutcome, FederationError> {
    if !registry.contains(requester) {
        return Err(FederationError::UnknownRequester(requester.clone()));
    }
    for m in &strategy.middle_agents {
        if !registry.contains(m) {
            return Err(FederationError::MiddleAgentDown(m.clone()));
        }
    }
    let root = registry.root().cloned().expect("registry has a root");
    let mut candidates: Vec<HolonId> = registry
        .query_capabilities(&need.pattern, &root)?
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| id != requester)
        .collect();
    candidates.dedup();
    let provider = match &need.preferred {
        Some(p) if candidates.contains(p) => p.clone(),
        _ => candidates
            .first()
            .cloned()
            .ok_or_else(|| FederationError::NoProvider(need.pattern.clone()))?,
    };
    let (r, p) = (requester, &provider);
    let mut t = Vec::new();
    let latency: Tick;
    match strategy.kind {
        StrategyKind::Facilitator => {
            let x = &strategy.middle_agents[0];
            for round in 0..need.rounds {
                let ph = if round == 0 { Phase::Discovery } else { Phase::Exchange };
                walk(&[r.clone(), x.clone(), p.clone(), x.clone(), r.clone()], ph, &mut t);
            }
            latency = 2;
        }
        StrategyKind::Broker => {
            let x = &strategy.middle_agents[0];
            walk(&[r.clone(), x.clone(), p.clone(), x.clone(), r.clone()], Phase::Discovery, &mut t);
            for _ in 1..need.rounds {
                walk(&[r.clone(), p.clone(), r.clone()], Phase::Exchange, &mut t);
            }
            latency = 2;
        }
        StrategyKind::Matchmaker => {
            let x = &strategy.middle_agents[0];
            walk(&[r.clone(), x.clone(), r.clone()], Phase::Discovery, &mut t);
            for _ in 0..need.rounds {
                walk(&[r.clone(), p.clone(), r.clone()], Phase::Exchange, &mut t);
            }
            latency = 2;
        }
        StrategyKind::Mediator => {
            let x = &strategy.middle_agents[0];
            t.push(Hop::new(r, x, Phase::Discovery));
            for c in &candidates {
                t.push(Hop::new(x, c, Phase::Discovery));
            }
            for c in &candidates {
                t.push(Hop::new(c, x, Phase::Discovery));
            }
            for _ in 0..need.rounds {
                walk(&[r.clone(), x.clone(), p.clone(), x.clone(), r.clone()][1..], Phase::Exchange, &mut t);
                t.push(Hop::new(r, x, Phase::Exchange));
            }
            // The last request hop opens a round nobody answers; drop it.
            t.pop();
            latency = 3;
        }
        StrategyKind::Holonic => {
            let there = tree_path(r, p);
            latency = (there.len() - 1) as Tick;
            for round in 0..need.rounds {
                let ph = if round == 0 { Phase::Discovery } else { Phase::Exchange };
                walk(&there, ph, &mut t);
                let back: Vec<HolonId> = there.iter().rev().cloned().collect();
                walk(&back, ph, &mut t);
            }
        }
    }
    Ok(ConversationOutcome {
        requester: r.clone(),
        provider,
        candidates,
        transcript: t,
        discovery_latency: latency,
    })
}

fn is_tree_edge(h: &Hop) -> bool {
    h.from.parent().as_ref() == Some(&h.to) || h.to.parent().as_ref() == Some(&h.from)
}

/// Whether `outcome` has the message topology `strategy` prescribes.
pub fn conforms(strategy: &CoordinationStrategy, outcome: &ConversationOutcome) -> bool {
    let t = &outcome.transcript;
    let (r, p) = (&outcome.requester, &outcome.provider);
    let direct = |h: &Hop| (&h.from == r && &h.to == p) || (&h.from == p && &h.to == r);
    let touches_middle = |h: &Hop| strategy.middle_agents.iter().any(|m| h.touches(m));
    if t.is_empty() {
        return false;
    }
    match strategy.kind {
        StrategyKind::Facilitator | StrategyKind::Mediator => t.iter().all(touches_middle),
        StrategyKind::Broker => {
            t.len() >= 4
                && t[..4].iter().all(touches_middle)
                && t[4..].iter().all(|h| direct(h) && !touches_middle(h))
        }
        StrategyKind::Matchmaker => {
            t.len() >= 2
                && t[..2].iter().all(touches_middle)
                && t[0].from == *r
                && t[1].to == *r
                && t[2..].iter().all(|h| direct(h) && !touches_middle(h))
        }
        StrategyKind::Holonic => t.iter().all(|h| is_tree_edge(h) && touches_middle(h)),
    }
}

/// Number of hops in `outcome` that touch a middle agent.
pub fn middle_hops(strategy: &CoordinationStrategy, outcome: &ConversationOutcome) -> usize {
    outcome
        .transcript
        .iter()
        .filter(|h| strategy.middle_agents.iter().any(|m| h.touches(m)))
        .count()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinationMetrics {
    pub strategy: StrategyKind,
    pub conversations: usize,
    pub total_messages: usize,
    /// Messages each agent sent or received; every hop counts twice.
    pub per_agent: BTreeMap<String, usize>,
    pub max_single_agent_load: usize,
    pub busiest_agent: Option<String>,
    pub middle_agent_messages: usize,
    pub mean_discovery_latency: f64,
    pub failed_conversations: usize,
}

/// Accumulates conversation outcomes into [`CoordinationMetrics`].
#[derive(Clone, Debug, Default)]
pub struct MetricsBuilder {
    metrics: CoordinationMetrics,
    latency_sum: Tick,
}

impl MetricsBuilder {
    pub fn new(strategy: StrategyKind) -> Self {
        MetricsBuilder {
            metrics: CoordinationMetrics {
                strategy,
                ..Default::default()
            },
            latency_sum: 0,
        }
    }

    pub fn record(&mut self, strategy: &CoordinationStrategy, outcome: &ConversationOutcome) {
        let m = &mut self.metrics;
        m.conversations += 1;
        m.total_messages += outcome.transcript.len();
        m.middle_agent_messages += middle_hops(strategy, outcome);
        for h in &outcome.transcript {
            *m.per_agent.entry(h.from.to_string()).or_default() += 1;
            *m.per_agent.entry(h.to.to_string()).or_default() += 1;
        }
        self.latency_sum += outcome.discovery_latency;
    }

    pub fn record_failure(&mut self) {
        self.metrics.conversations += 1;
        self.metrics.failed_conversations += 1;
    }

    pub fn snapshot(&self) -> CoordinationMetrics {
        let mut m = self.metrics.clone();
        // Ties resolve to the smallest agent id.
        if let Some((id, n)) = m
            .per_agent
            .iter()
            .fold(None::<(&String, usize)>, |best, (id, &n)| match best {
                Some((_, b)) if b >= n => best,
                _ => Some((id, n)),
            })
        {
            m.max_single_agent_load = n;
            m.busiest_agent = Some(id.clone());
        }
        let ok = m.conversations - m.failed_conversations;
        m.mean_discovery_latency = if ok == 0 {
            0.0
        } else {
            self.latency_sum as f64 / ok as f64
        };
        m
    }
}

/// What happened to a conversation when a middle agent was killed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "fate")]
pub enum ConversationFate {
    Completed,
    Failed { hop: usize, tick: Tick },
}

/// Replays transcripts one hop per tick from their start ticks, with
/// `agent` dead from tick `killed_at` on. A hop touching a dead agent
/// fails its conversation.
pub fn replay_with_fault(
    conversations: &[(Tick, &ConversationOutcome)],
    agent: &HolonId,
    killed_at: Tick,
) -> Vec<ConversationFate> {
    conversations
        .iter()
        .map(|(start, c)| {
            c.transcript
                .iter()
                .enumerate()
                .find(|(i, h)| start + *i as Tick >= killed_at && h.touches(agent))
                .map_or(ConversationFate::Completed, |(i, _)| ConversationFate::Failed {
                    hop: i,
                    tick: start + i as Tick,
                })
        })
        .collect()
}
