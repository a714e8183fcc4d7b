//! One stepping task per session.
//!
//! Request handlers talk to the worker through a command queue; commands
//! are only handled between steps, so a step never sees a half-applied
//! context swap. State events fan out through a broadcast channel and the
//! latest status is published on a watch channel.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Duration;

use ctxloco_core::session::{write_journal, EventKind, SessionSim, StateEvent};
use ctxloco_core::terrain::PropertyLevels;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::time::MissedTickBehavior;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Paused,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Pause,
    Resume,
    Reset,
    Delete,
}

/// Latest externally visible state of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub status: Status,
    pub episode: u32,
    pub t: usize,
    pub total_steps: u64,
    pub reward_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextOutcome {
    pub levels: PropertyLevels,
    pub embedding: Vec<u8>,
    /// False when the new embedding equals the previous one.
    pub changed: bool,
    /// Global step count from which the new context is in effect.
    pub effective_step: u64,
}

pub enum Command {
    Context {
        description: String,
        levels: PropertyLevels,
        retarget_terrain: bool,
        reply: oneshot::Sender<Result<ContextOutcome, ApiError>>,
    },
    Control {
        verb: Verb,
        reply: oneshot::Sender<Result<Snapshot, ApiError>>,
    },
    Journal {
        reply: oneshot::Sender<String>,
    },
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    /// Wall-clock step rate when not in turbo mode.
    pub steps_per_second: f64,
    /// Run as fast as possible (tests, batch replays).
    pub turbo: bool,
    /// Emit a step event every `decimation`-th step (and on episode end).
    pub decimation: usize,
    /// Where to mirror the JSON-lines journal, if anywhere.
    pub journal_path: Option<PathBuf>,
}

pub struct Worker {
    sim: SessionSim,
    status: Status,
    config: WorkerConfig,
    commands: mpsc::Receiver<Command>,
    events: broadcast::Sender<StateEvent>,
    snapshot: watch::Sender<Snapshot>,
}

impl Worker {
    pub fn new(
        sim: SessionSim,
        config: WorkerConfig,
        commands: mpsc::Receiver<Command>,
        events: broadcast::Sender<StateEvent>,
        snapshot: watch::Sender<Snapshot>,
    ) -> Self {
        let w = Self {
            sim,
            status: Status::Paused,
            config,
            commands,
            events,
            snapshot,
        };
        w.publish();
        w.persist_journal();
        w
    }

    pub fn snapshot_of(sim: &SessionSim, status: Status) -> Snapshot {
        Snapshot {
            status,
            episode: sim.episode(),
            t: sim.t(),
            total_steps: sim.total_steps(),
            reward_cumulative: sim.reward_cumulative(),
        }
    }

    fn publish(&self) {
        self.snapshot.send_replace(Self::snapshot_of(&self.sim, self.status));
    }

    fn emit(&self, event: StateEvent) {
        // No subscribers is fine; events are not buffered for latecomers.
        let _ = self.events.send(event);
    }

    fn persist_journal(&self) {
        let Some(path) = &self.config.journal_path else {
            return;
        };
        let result = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| ctxloco_core::Error::io(path, e))
            .and_then(|f| write_journal(BufWriter::new(f), self.sim.journal()));
        if let Err(e) = result {
            log::warn!("journal write failed: {e}");
        }
    }

    pub async fn run(mut self) {
        let period = Duration::from_secs_f64(1.0 / self.config.steps_per_second.max(1e-3));
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            if self.status != Status::Running {
                match self.commands.recv().await {
                    Some(cmd) => {
                        if !self.handle(cmd) {
                            break;
                        }
                    }
                    None => break,
                }
                continue;
            }
            if self.config.turbo {
                match self.commands.try_recv() {
                    Ok(cmd) => {
                        if !self.handle(cmd) {
                            break;
                        }
                        continue;
                    }
                    Err(mpsc::error::TryRecvError::Disconnected) => break,
                    Err(mpsc::error::TryRecvError::Empty) => {}
                }
                self.step();
                tokio::task::yield_now().await;
            } else {
                tokio::select! {
                    biased;
                    cmd = self.commands.recv() => match cmd {
                        Some(cmd) => if !self.handle(cmd) { break },
                        None => break,
                    },
                    _ = ticker.tick() => self.step(),
                }
            }
        }
        log::debug!("session worker stopped");
    }

    fn step(&mut self) {
        match self.sim.step() {
            Ok(event) => {
                if event.done {
                    self.status = Status::Done;
                }
                if event.done || event.t % self.config.decimation.max(1) == 0 {
                    self.emit(event);
                }
            }
            Err(e) => {
                log::error!("step failed: {e}");
                self.status = Status::Done;
            }
        }
        self.publish();
    }

    /// Returns false when the worker should stop.
    fn handle(&mut self, cmd: Command) -> bool {
        match cmd {
            Command::Context {
                description,
                levels,
                retarget_terrain,
                reply,
            } => {
                let result = self
                    .sim
                    .apply_context(&description, &levels, retarget_terrain)
                    .map(|changed| ContextOutcome {
                        levels,
                        embedding: self.sim.embedding().values.clone(),
                        changed,
                        effective_step: self.sim.total_steps(),
                    })
                    .map_err(ApiError::from);
                if result.is_ok() {
                    self.emit(self.sim.snapshot(EventKind::Context));
                    self.persist_journal();
                }
                let _ = reply.send(result);
            }
            Command::Control { verb, reply } => {
                let result = self.control(verb);
                self.publish();
                let _ = reply.send(result);
                if verb == Verb::Delete {
                    return false;
                }
            }
            Command::Journal { reply } => {
                let mut buf = Vec::new();
                if write_journal(&mut buf, self.sim.journal()).is_ok() {
                    let _ = reply.send(String::from_utf8_lossy(&buf).into_owned());
                }
            }
        }
        true
    }

    fn control(&mut self, verb: Verb) -> Result<Snapshot, ApiError> {
        match (verb, self.status) {
            (Verb::Pause | Verb::Resume, Status::Done) => {
                return Err(ApiError::conflict(format!(
                    "cannot {} a finished episode; reset it first",
                    if verb == Verb::Pause { "pause" } else { "resume" }
                )))
            }
            (Verb::Pause, _) => self.status = Status::Paused,
            (Verb::Resume, _) => self.status = Status::Running,
            (Verb::Reset, status) => {
                let event = self.sim.reset();
                if status == Status::Done {
                    self.status = Status::Paused;
                }
                self.emit(event);
                self.persist_journal();
            }
            (Verb::Delete, _) => {}
        }
        Ok(Self::snapshot_of(&self.sim, self.status))
    }
}
