use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use holonsim_core::federation::StrategyKind;
use holonsim_core::kernel::Tick;
use holonsim_core::reasoning::{ReasoningLayer, RequestId};
use holonsim_core::scenario::{Scenario, SchemaError};
use holonsim_core::sim::{
    to_ndjson, CommandError, CommandKind, LogRecord, OperatorCommand, ScriptedAction, SimOptions, Simulation,
};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::watch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Loaded,
    Running,
    Paused,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
    pub tick: Tick,
    pub strategy: StrategyKind,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error("cannot {action} a {status:?} run")]
    BadTransition { action: &'static str, status: RunStatus },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("run log i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to start a run.
pub struct RunSpec {
    pub scenario: Scenario,
    pub script: Vec<ScriptedAction>,
    pub seed: Option<u64>,
    pub strategy: StrategyKind,
    pub approval_timeout: Option<Tick>,
    pub layer: ReasoningLayer,
    pub ticks_per_second: f64,
    pub autostart: bool,
    /// End the run once nothing is left to do, instead of at the time limit.
    pub stop_when_idle: bool,
}

struct Persist {
    log: File,
    dir: PathBuf,
}

/// One live run: the simulation behind a lock, plus a read-only mirror
/// of its log so streams never contend with the clock.
pub struct Run {
    pub id: String,
    scenario: String,
    strategy: StrategyKind,
    seed: u64,
    sim: Mutex<Simulation>,
    status: Mutex<RunStatus>,
    records: RwLock<Vec<LogRecord>>,
    persist: Mutex<Option<Persist>>,
    changed: watch::Sender<u64>,
    wake: Mutex<mpsc::Sender<()>>,
    next_command: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Run {
    pub fn descriptor(&self) -> RunDescriptor {
        let tick = lock(&self.sim).tick();
        RunDescriptor {
            run_id: self.id.clone(),
            scenario: self.scenario.clone(),
            seed: self.seed,
            status: self.status(),
            tick,
            strategy: self.strategy,
        }
    }

    pub fn status(&self) -> RunStatus {
        *lock(&self.status)
    }

    /// Read access to the simulation for snapshots.
    pub fn with_sim<R>(&self, f: impl FnOnce(&Simulation) -> R) -> R {
        f(&lock(&self.sim))
    }

    /// Records from `from` on.
    pub fn records_from(&self, from: u64) -> Vec<LogRecord> {
        let records = self.records.read().unwrap_or_else(|e| e.into_inner());
        records.get(from as usize..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn log_len(&self) -> u64 {
        self.records.read().unwrap_or_else(|e| e.into_inner()).len() as u64
    }

    /// Fires whenever records are appended or the status changes.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.changed.subscribe()
    }

    pub fn submit_trip(&self, passenger: &str, text: &str) -> Result<RequestId, RunError> {
        let rid = lock(&self.sim).submit_trip(passenger, text)?;
        self.poke();
        Ok(rid)
    }

    /// Queues `kind` for the next tick boundary; pause, resume and step
    /// additionally drive the clock. Returns the command id.
    pub fn command(&self, kind: CommandKind, command_id: Option<String>) -> Result<String, RunError> {
        let clock = match &kind {
            CommandKind::Pause => Some(self.transition("pause", &[RunStatus::Running], RunStatus::Paused)?),
            CommandKind::Resume => Some(self.transition(
                "resume",
                &[RunStatus::Loaded, RunStatus::Paused],
                RunStatus::Running,
            )?),
            CommandKind::Step => {
                let status = self.status();
                if status != RunStatus::Paused {
                    return Err(RunError::BadTransition { action: "step", status });
                }
                None
            }
            _ => None,
        };
        let command_id = command_id.unwrap_or_else(|| {
            let mut n = lock(&self.next_command);
            *n += 1;
            format!("op-{}", *n)
        });
        let step = kind == CommandKind::Step;
        let queued = lock(&self.sim).submit_command(OperatorCommand {
            command_id: command_id.clone(),
            kind,
            received_at_ms: Some(now_ms()),
        });
        if let Err(e) = queued {
            if let Some(previous) = clock {
                *lock(&self.status) = previous;
            }
            return Err(e.into());
        }
        if step {
            self.advance()?;
        }
        self.poke();
        Ok(command_id)
    }

    /// Moves to `to` from one of `from`; returns the previous status.
    fn transition(&self, action: &'static str, from: &[RunStatus], to: RunStatus) -> Result<RunStatus, RunError> {
        let mut status = lock(&self.status);
        if !from.contains(&status) {
            return Err(RunError::BadTransition { action, status: *status });
        }
        let previous = *status;
        *status = to;
        Ok(previous)
    }

    fn poke(&self) {
        let _ = lock(&self.wake).send(());
        self.changed.send_modify(|v| *v += 1);
    }

    /// Processes one tick, mirrors and persists the new records.
    fn advance(&self) -> Result<(), std::io::Error> {
        let mut sim = lock(&self.sim);
        let more = sim.step();
        let mut records = self.records.write().unwrap_or_else(|e| e.into_inner());
        let fresh = sim.log().since(records.len() as u64).to_vec();
        let mut persist = lock(&self.persist);
        if let Some(p) = persist.as_mut() {
            p.log.write_all(to_ndjson(&fresh).as_bytes())?;
        }
        records.extend(fresh);
        if !more {
            *lock(&self.status) = RunStatus::Finished;
            if let Some(p) = persist.as_mut() {
                p.log.flush()?;
                let metrics = serde_json::to_string_pretty(&sim.metrics()).expect("metrics serialize");
                fs::write(p.dir.join("metrics.json"), metrics)?;
            }
        }
        drop((records, persist, sim));
        self.changed.send_modify(|v| *v += 1);
        Ok(())
    }
}

/// Wall-clock driver for one run.
fn drive(run: Arc<Run>, wake: mpsc::Receiver<()>, ticks_per_second: f64) {
    let interval = (ticks_per_second > 0.0).then(|| Duration::from_secs_f64(1.0 / ticks_per_second));
    let mut due = Instant::now();
    loop {
        match run.status() {
            RunStatus::Finished => return,
            RunStatus::Running => {
                if let Some(iv) = interval {
                    let now = Instant::now();
                    if now < due {
                        match wake.recv_timeout(due - now) {
                            Ok(()) | Err(RecvTimeoutError::Timeout) => continue,
                            Err(RecvTimeoutError::Disconnected) => return,
                        }
                    }
                    due = (due + iv).max(now);
                } else if let Err(TryRecvError::Disconnected) = wake.try_recv() {
                    return;
                }
                if let Err(e) = run.advance() {
                    tracing::error!(run = %run.id, "stopping run: {e}");
                    *lock(&run.status) = RunStatus::Finished;
                    return;
                }
            }
            RunStatus::Loaded | RunStatus::Paused => {
                if wake.recv().is_err() {
                    return;
                }
                due = Instant::now();
            }
        }
    }
}

/// All runs served by one gateway.
pub struct RunManager {
    runs: RwLock<BTreeMap<String, Arc<Run>>>,
    runs_dir: Option<PathBuf>,
    next: Mutex<u64>,
}

impl RunManager {
    /// `runs_dir` of `None` keeps logs in memory only.
    pub fn new(runs_dir: Option<PathBuf>) -> Self {
        RunManager {
            runs: RwLock::new(BTreeMap::new()),
            runs_dir,
            next: Mutex::new(0),
        }
    }

    pub fn runs_dir(&self) -> Option<&Path> {
        self.runs_dir.as_deref()
    }

    fn fresh_id(&self) -> String {
        let mut n = lock(&self.next);
        loop {
            *n += 1;
            let id = format!("run-{:04}", *n);
            let taken = self.runs_dir.as_ref().is_some_and(|d| d.join(&id).exists());
            if !taken {
                return id;
            }
        }
    }

    pub fn load(&self, spec: RunSpec) -> Result<Arc<Run>, RunError> {
        let sim = Simulation::new(
            &spec.scenario,
            SimOptions {
                seed: spec.seed,
                strategy: spec.strategy,
                layer: Some(spec.layer),
                script: spec.script,
                approval_timeout: spec.approval_timeout,
                keep_alive: !spec.stop_when_idle,
            },
        )?;
        let id = self.fresh_id();
        let persist = match &self.runs_dir {
            Some(root) => {
                let dir = root.join(&id);
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("scenario.json"), spec.scenario.to_json())?;
                let log = OpenOptions::new().create(true).append(true).open(dir.join("log.ndjson"))?;
                Some(Persist { log, dir })
            }
            None => None,
        };
        let (wake_tx, wake_rx) = mpsc::channel();
        let run = Arc::new(Run {
            id: id.clone(),
            scenario: spec.scenario.name.clone(),
            strategy: spec.strategy,
            seed: sim.seed(),
            sim: Mutex::new(sim),
            status: Mutex::new(if spec.autostart {
                RunStatus::Running
            } else {
                RunStatus::Loaded
            }),
            records: RwLock::new(Vec::new()),
            persist: Mutex::new(persist),
            changed: watch::channel(0).0,
            wake: Mutex::new(wake_tx),
            next_command: Mutex::new(0),
        });
        // Tick 0 setup records are already in the log.
        {
            let sim = lock(&run.sim);
            let initial = sim.log().records().to_vec();
            if let Some(p) = lock(&run.persist).as_mut() {
                p.log.write_all(to_ndjson(&initial).as_bytes())?;
            }
            *run.records.write().unwrap_or_else(|e| e.into_inner()) = initial;
        }
        self.runs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), run.clone());
        let driver = run.clone();
        std::thread::Builder::new()
            .name(format!("holonsim-{id}"))
            .spawn(move || drive(driver, wake_rx, spec.ticks_per_second))?;
        Ok(run)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Run>, RunError> {
        self.runs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| RunError::UnknownRun(id.to_owned()))
    }

    pub fn list(&self) -> Vec<RunDescriptor> {
        let runs: Vec<Arc<Run>> = self
            .runs
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        runs.iter().map(|r| r.descriptor()).collect()
    }
}
