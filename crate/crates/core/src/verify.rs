//! Offline checker for run logs: ordering, gate discipline, leg status
//! discipline, fallback timeliness and sequence templates.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value;

use crate::kernel::Tick;
use crate::sim::{to_ndjson, sha256_hex, LogRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Ordering,
    GateTotality,
    GateOrdering,
    StatusDiscipline,
    FallbackTimeliness,
    Invariant,
    Template,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    pub check: Check,
    pub tick: Tick,
    pub seq: u64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemplateMatch {
    pub matched: usize,
    pub total: usize,
    /// First template entry with no matching record.
    pub missing: Option<Value>,
}

impl TemplateMatch {
    pub fn is_complete(&self) -> bool {
        self.matched == self.total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    pub hash: String,
    pub air_legs_started: usize,
    pub approvals: usize,
    pub findings: Vec<Finding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateMatch>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty() && self.template.as_ref().is_none_or(TemplateMatch::is_complete)
    }
}

/// `pattern` matches `actual` when every object key in the pattern is
/// present and matches recursively; arrays match elementwise and must have
/// equal length; scalars must be equal.
pub fn subset_match(pattern: &Value, actual: &Value) -> bool {
    match (pattern, actual) {
        (Value::Object(p), Value::Object(a)) => p
            .iter()
            .all(|(k, v)| a.get(k).is_some_and(|av| subset_match(v, av))),
        (Value::Array(p), Value::Array(a)) => {
            p.len() == a.len() && p.iter().zip(a).all(|(x, y)| subset_match(x, y))
        }
        (p, a) => p == a,
    }
}

/// Greedy in-order subsequence match of template entries against records.
pub fn match_template(records: &[LogRecord], template: &[Value]) -> TemplateMatch {
    let mut it = records.iter();
    let mut matched = 0;
    for entry in template {
        let hit = it.by_ref().any(|r| {
            let v = serde_json::to_value(r).expect("record serializes");
            subset_match(entry, &v)
        });
        if !hit {
            return TemplateMatch {
                matched,
                total: template.len(),
                missing: Some(entry.clone()),
            };
        }
        matched += 1;
    }
    TemplateMatch {
        matched,
        total: template.len(),
        missing: None,
    }
}

fn s<'a>(r: &'a LogRecord, key: &str) -> &'a str {
    r.str(key).unwrap_or("")
}

struct Checker<'a> {
    records: &'a [LogRecord],
    findings: Vec<Finding>,
}

impl Checker<'_> {
    fn fail(&mut self, check: Check, r: &LogRecord, detail: String) {
        self.findings.push(Finding {
            check,
            tick: r.tick,
            seq: r.seq,
            detail,
        });
    }

    fn ordering(&mut self) {
        for w in self.records.windows(2) {
            if (w[1].tick, w[1].seq) <= (w[0].tick, w[0].seq) {
                self.fail(
                    Check::Ordering,
                    &w[1],
                    format!("({}, {}) follows ({}, {})", w[1].tick, w[1].seq, w[0].tick, w[0].seq),
                );
            }
        }
    }

    fn gates(&mut self) -> usize {
        // (request, plan, revision) activated by a gate record.
        let mut cleared: BTreeSet<(String, String, u64)> = BTreeSet::new();
        let mut steps: BTreeMap<(String, String, u64), u64> = BTreeMap::new();
        let mut air = 0;
        for r in self.records {
            match r.kind.as_str() {
                "gate_outcome" => {
                    let key = |rev| (s(r, "request_id").to_owned(), s(r, "plan_id").to_owned(), rev);
                    match s(r, "outcome") {
                        "cleared" => {
                            cleared.insert(key(r.u64("revision").unwrap_or(u64::MAX)));
                        }
                        "fallback_activated" => {
                            cleared.insert(key(r.u64("activated_revision").unwrap_or(u64::MAX)));
                        }
                        _ => {}
                    }
                }
                "gate_step" => {
                    let key = (
                        s(r, "request_id").to_owned(),
                        s(r, "plan_id").to_owned(),
                        r.u64("revision").unwrap_or(0),
                    );
                    let step = r.u64("step").unwrap_or(0);
                    let last = steps.get(&key).copied().unwrap_or(0);
                    if step < last || step > last + 1 {
                        self.fail(
                            Check::GateOrdering,
                            r,
                            format!("{} rev {}: step {step} after step {last}", key.1, key.2),
                        );
                    }
                    steps.insert(key, step.max(last));
                }
                "leg_started" if s(r, "mode") == "air_taxi" => {
                    air += 1;
                    let key = (
                        s(r, "request_id").to_owned(),
                        s(r, "plan_id").to_owned(),
                        r.u64("revision").unwrap_or(u64::MAX),
                    );
                    if !cleared.contains(&key) {
                        self.fail(
                            Check::GateTotality,
                            r,
                            format!("air leg {} of {} rev {} started without a cleared gate", s(r, "leg_id"), key.1, key.2),
                        );
                    }
                }
                _ => {}
            }
        }
        air
    }

    fn statuses(&mut self) {
        #[derive(Default)]
        struct Trip {
            running: Option<String>,
            last_index: Option<(u64, bool)>,
        }
        let mut started: BTreeSet<String> = BTreeSet::new();
        let mut ended: BTreeSet<String> = BTreeSet::new();
        let mut trips: BTreeMap<String, Trip> = BTreeMap::new();
        for r in self.records {
            let kind = r.kind.as_str();
            if !matches!(
                kind,
                "leg_started" | "leg_progress" | "resource_fault" | "leg_completed" | "leg_blocked"
            ) {
                continue;
            }
            let task = s(r, "task").to_owned();
            trips.entry(s(r, "request_id").to_owned()).or_default();
            let idx = r.u64("leg_index").unwrap_or(0);
            if kind == "leg_started" {
                if !started.insert(task.clone()) {
                    let d = format!("{task} started twice");
                    self.fail(Check::StatusDiscipline, r, d);
                    continue;
                }
                let trip = trips.get_mut(s(r, "request_id")).expect("inserted");
                if let Some(other) = &trip.running {
                    let d = format!("{task} started while {other} is running");
                    self.fail(Check::StatusDiscipline, r, d);
                    continue;
                }
                let ok = match trip.last_index {
                    None => true,
                    Some((last, true)) => idx > last,
                    Some((last, false)) => idx >= last,
                };
                trip.running = Some(task.clone());
                if !ok {
                    let d = format!("{task} (leg {idx}) started out of order");
                    self.fail(Check::StatusDiscipline, r, d);
                }
                continue;
            }
            if !started.contains(&task) || ended.contains(&task) {
                let d = format!("{kind} for {task} outside its started window");
                self.fail(Check::StatusDiscipline, r, d);
                continue;
            }
            if matches!(kind, "leg_completed" | "leg_blocked") {
                ended.insert(task.clone());
                let trip = trips.get_mut(s(r, "request_id")).expect("inserted");
                trip.running = None;
                trip.last_index = Some((idx, kind == "leg_completed"));
            }
        }
    }

    fn fallbacks(&mut self) -> usize {
        let end = self.records.last().map_or(0, |r| r.tick);
        let mut n = 0;
        for r in self.records.iter().filter(|r| r.kind == "approval_requested") {
            n += 1;
            let aid = s(r, "approval_id");
            let Some(timeout_at) = r.u64("timeout_at") else {
                self.fail(Check::FallbackTimeliness, r, format!("{aid} has no timeout"));
                continue;
            };
            let has_fallback = r.get("fallback").is_some_and(|f| !f.is_null());
            let about = |x: &&LogRecord| x.seq > r.seq && x.str("approval_id") == Some(aid);
            let decided = self
                .records
                .iter()
                .filter(about)
                .any(|x| x.kind == "approval_decided" && x.tick <= timeout_at);
            if decided {
                continue;
            }
            let outcome = self
                .records
                .iter()
                .filter(about)
                .find(|x| x.kind == "gate_outcome");
            match outcome {
                Some(o) if o.tick <= timeout_at + 1 => {
                    let closed = o.str("reason") == Some("trip_closed");
                    if has_fallback && !closed && o.str("outcome") != Some("fallback_activated") {
                        self.fail(
                            Check::FallbackTimeliness,
                            o,
                            format!("{aid} timed out with a fallback but ended {}", s(o, "outcome")),
                        );
                    }
                }
                Some(o) => self.fail(
                    Check::FallbackTimeliness,
                    o,
                    format!("{aid} resolved at tick {} after timeout {timeout_at}", o.tick),
                ),
                None if end > timeout_at => self.fail(
                    Check::FallbackTimeliness,
                    r,
                    format!("{aid} never resolved after timeout {timeout_at}"),
                ),
                None => {}
            }
        }
        n
    }

    fn invariants(&mut self) {
        for r in self.records.iter().filter(|r| r.kind == "invariant_violation") {
            self.fail(Check::Invariant, r, s(r, "detail").to_owned());
        }
    }
}

/// Runs every log check, plus the template match when one is given.
pub fn verify_log(records: &[LogRecord], template: Option<&[Value]>) -> VerifyReport {
    let mut c = Checker {
        records,
        findings: Vec::new(),
    };
    c.ordering();
    let air_legs_started = c.gates();
    c.statuses();
    let approvals = c.fallbacks();
    c.invariants();
    let template = template.map(|t| match_template(records, t));
    VerifyReport {
        records: records.len(),
        hash: sha256_hex(to_ndjson(records).as_bytes()),
        air_legs_started,
        approvals,
        findings: c.findings,
        template,
    }
}
