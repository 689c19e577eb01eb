//! Keyword grammar over a closed vocabulary: the rule-based stand-in for
//! language understanding.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::types::{
    AdjustmentKind, Constraint, ReasonerContext, RequestId, ScheduleAdjustment, TaskSpec,
};
use super::ReasoningFailure;
use crate::holon::HolonId;
use crate::kernel::{NodeId, Tick};

/// Delay applied by "I'm running late" when no amount is given (about a minute).
pub const DEFAULT_DELAY_TICKS: Tick = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationReason {
    EmptyUtterance,
    UnknownOrigin,
    UnknownDestination,
    SameOriginDestination,
    ContradictoryConstraints,
    InvalidMagnitude,
    NoMatchingRule,
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn number(tok: Option<&String>) -> Option<Tick> {
    tok.and_then(|t| t.parse().ok())
}

fn has_phrase(toks: &[String], phrase: &[&str]) -> bool {
    toks.windows(phrase.len())
        .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// Parses a trip request such as "ride from X to Y, avoid turbulence".
pub fn parse_request(
    text: &str,
    passenger: &HolonId,
    request_id: RequestId,
    ctx: &ReasonerContext,
) -> Result<TaskSpec, ReasoningFailure> {
    let clarify = |r| Err(ReasoningFailure::NeedsClarification(r));
    let toks = tokens(text);
    if toks.is_empty() {
        return clarify(ClarificationReason::EmptyUtterance);
    }
    let node = |t: &String| ctx.graph.find_node_ci(t).map(|n| n.id.clone());

    let mut origin: Option<NodeId> = None;
    let mut destination: Option<NodeId> = None;
    let mut mentioned: Vec<NodeId> = Vec::new();
    let mut departure = ctx.tick;
    let mut constraints = BTreeSet::new();

    for (i, tok) in toks.iter().enumerate() {
        let next = toks.get(i + 1);
        match tok.as_str() {
            "from" => origin = origin.or_else(|| next.and_then(node)),
            "to" | "towards" => destination = destination.or_else(|| next.and_then(node)),
            "under" | "within" | "max" => {
                if let Some(n) = number(next) {
                    constraints.insert(Constraint::MaxCost(n));
                }
            }
            "tick" if i > 0 && toks[i - 1] == "at" => {
                if let Some(n) = number(next) {
                    departure = departure.max(n);
                }
            }
            "in" => {
                if let (Some(n), Some("ticks")) =
                    (number(next), toks.get(i + 2).map(String::as_str))
                {
                    departure = ctx.tick + n;
                }
            }
            _ => {
                if let Some(n) = node(tok) {
                    mentioned.push(n);
                }
            }
        }
    }

    if has_phrase(&toks, &["avoid", "turbulence"]) {
        constraints.insert(Constraint::AvoidTurbulence);
    }
    let ground = has_phrase(&toks, &["ground", "only"])
        || has_phrase(&toks, &["by", "ground"])
        || has_phrase(&toks, &["no", "flying"])
        || has_phrase(&toks, &["no", "air"]);
    let air = has_phrase(&toks, &["by", "air"])
        || toks.iter().any(|t| t == "fly" || t == "flight");
    if ground {
        constraints.insert(Constraint::GroundOnly);
    }
    if air {
        constraints.insert(Constraint::RequireAir);
    }
    if ground && air {
        return clarify(ClarificationReason::ContradictoryConstraints);
    }

    // Bare node names: "X Y" reads as origin then destination.
    let mut rest = mentioned.into_iter();
    if destination.is_none() && origin.is_none() {
        match (rest.next(), rest.next()) {
            (Some(a), Some(b)) => {
                origin = Some(a);
                destination = Some(b);
            }
            (Some(a), None) => destination = Some(a),
            _ => {}
        }
    } else if destination.is_none() {
        destination = rest.find(|n| Some(n) != origin.as_ref());
    } else if origin.is_none() {
        origin = rest.find(|n| Some(n) != destination.as_ref());
    }

    let Some(destination) = destination else {
        return clarify(ClarificationReason::UnknownDestination);
    };
    let Some(origin) = origin.or_else(|| ctx.passenger_location.clone()) else {
        return clarify(ClarificationReason::UnknownOrigin);
    };
    if origin == destination {
        return clarify(ClarificationReason::SameOriginDestination);
    }
    Ok(TaskSpec {
        request_id,
        passenger: passenger.clone(),
        origin,
        destination,
        earliest_departure: departure,
        constraints,
        free_text: text.to_owned(),
    })
}

/// Maps a plain-language update on an active trip to a schedule change.
pub fn interpret_update(
    text: &str,
    request_id: &RequestId,
    _ctx: &ReasonerContext,
) -> Result<ScheduleAdjustment, ReasoningFailure> {
    let toks = tokens(text);
    if toks.is_empty() {
        return Err(ReasoningFailure::NeedsClarification(
            ClarificationReason::EmptyUtterance,
        ));
    }
    let amount_after = |word: &str| {
        toks.iter()
            .position(|t| t == word)
            .and_then(|i| number(toks.get(i + 1)).or_else(|| number(toks.get(i + 2))))
    };
    let amount_before = |word: &str| {
        toks.iter()
            .position(|t| t == word)
            .and_then(|i| i.checked_sub(2).and_then(|j| number(toks.get(j))))
            .or_else(|| {
                toks.iter()
                    .position(|t| t == word)
                    .and_then(|i| i.checked_sub(1).and_then(|j| number(toks.get(j))))
            })
    };
    let adjust = |kind, magnitude: Option<Tick>| {
        if magnitude == Some(0) {
            return Err(ReasoningFailure::NeedsClarification(
                ClarificationReason::InvalidMagnitude,
            ));
        }
        Ok(ScheduleAdjustment {
            request_id: request_id.clone(),
            kind,
            magnitude,
        })
    };
    let any = |words: &[&str]| toks.iter().any(|t| words.contains(&t.as_str()));

    if any(&["cancel", "cancelled", "abort"]) {
        return adjust(AdjustmentKind::Cancel, None);
    }
    if any(&["delay", "late", "later", "postpone"]) {
        let n = amount_after("delay")
            .or_else(|| amount_after("by"))
            .or_else(|| amount_before("late"))
            .unwrap_or(DEFAULT_DELAY_TICKS);
        return adjust(AdjustmentKind::DelayDeparture, Some(n));
    }
    if any(&["early", "earlier", "advance", "sooner"]) {
        let n = amount_after("advance")
            .or_else(|| amount_after("by"))
            .or_else(|| amount_before("early"))
            .unwrap_or(DEFAULT_DELAY_TICKS);
        return adjust(AdjustmentKind::AdvanceDeparture, Some(n));
    }
    if any(&["urgent", "asap", "hurry", "priority", "emergency"]) {
        return adjust(AdjustmentKind::Reprioritize, None);
    }
    Err(ReasoningFailure::NeedsClarification(
        ClarificationReason::NoMatchingRule,
    ))
}
