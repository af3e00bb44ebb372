//! Eventually-perfect failure detector driven entirely by messages.
//!
//! Every timing construct is a time-out whose alarm is a message to the
//! owning process, so the detector is a single receive loop:
//!
//! * `RepeatTask1` (cyclic, one per process): broadcast `IAmAlive`.
//! * `RepeatTask2 { q }` (cyclic, one per peer, deadline `delta[q]`): a
//!   firing means `q` has been silent for `delta[q]` ticks, because every
//!   heartbeat from `q` renews the watch.
//! * `IAmAlive` from `q`: trust `q` again, widening `delta[q]` by one tick if
//!   it was suspected, and restart its watch.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::manager::{Alarm, TomError, TomHandle};
use crate::timeout::{ActionDescriptor, Timeout, TimeoutError, TimeoutId};
use crate::types::{NodeId, Tick};

pub type ProcessId = NodeId;

/// Instance id shared by all heartbeat watches; the class id is the peer.
const WATCH_INSTANCE: u32 = 1;
const HEARTBEAT_INSTANCE: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorKind {
    IAmAlive,
    RepeatTask1,
    RepeatTask2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectorMessage {
    pub kind: DetectorKind,
    pub sender: ProcessId,
    /// The peer being checked; `RepeatTask2` only.
    pub id: Option<ProcessId>,
}

impl DetectorMessage {
    pub fn heartbeat(sender: ProcessId) -> Self {
        Self {
            kind: DetectorKind::IAmAlive,
            sender,
            id: None,
        }
    }

    /// The message a detector time-out delivers to its own process.
    pub fn from_alarm(alarm: &Alarm<DetectorKind>) -> Self {
        let id = match alarm.message_type {
            DetectorKind::RepeatTask2 => Some(NodeId(alarm.timeout.class_id)),
            _ => None,
        };
        Self {
            kind: alarm.message_type,
            sender: alarm.target,
            id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Trust,
    Suspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    #[serde(rename = "trust->suspect")]
    TrustToSuspect,
    #[serde(rename = "suspect->trust")]
    SuspectToTrust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub kind: TransitionKind,
    pub q: ProcessId,
    /// `delta[q]` after the transition.
    pub delta: Tick,
}

/// What a step asks the environment to do.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    /// Messages to send to every process, the sender included.
    pub broadcast: Vec<DetectorMessage>,
    pub transition: Option<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectorError {
    #[error("a detector needs at least one peer")]
    NoPeers,
    #[error("process {0} is not in the group")]
    UnknownSender(ProcessId),
    #[error("message for {expected} delivered to {got}")]
    Misaddressed { expected: ProcessId, got: ProcessId },
    #[error("repeat-task-2 alarm without a subject")]
    MissingSubject,
    #[error(transparent)]
    Tom(#[from] TomError),
}

impl From<TimeoutError> for DetectorError {
    fn from(e: TimeoutError) -> Self {
        DetectorError::Tom(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorConfig {
    pub default_timeout: Tick,
    /// Period of the heartbeat broadcast.
    pub heartbeat_period: Tick,
}

impl DetectorConfig {
    /// Heartbeat period defaults to half the timeout, at least one tick.
    pub fn new(default_timeout: Tick) -> Self {
        Self {
            default_timeout,
            heartbeat_period: (default_timeout / 2).max(1),
        }
    }

    pub fn with_heartbeat_period(mut self, period: Tick) -> Self {
        self.heartbeat_period = period;
        self
    }
}

#[derive(Debug)]
pub struct Detector {
    me: ProcessId,
    output: Vec<Status>,
    delta: Vec<Tick>,
    t_task1: Timeout<DetectorKind>,
    t_task2: Vec<Option<Timeout<DetectorKind>>>,
    tom: TomHandle<DetectorKind>,
}

/// Build process `p`'s detector and arm its time-outs through `tom`.
pub fn detector_init(
    p: ProcessId,
    nprocs: usize,
    config: DetectorConfig,
    tom: TomHandle<DetectorKind>,
) -> Result<Detector, DetectorError> {
    if nprocs < 2 {
        return Err(DetectorError::NoPeers);
    }
    if p.index() >= nprocs {
        return Err(DetectorError::UnknownSender(p));
    }
    let t_task1 = Timeout::declare(
        TimeoutId::new(p.0, HEARTBEAT_INSTANCE),
        true,
        true,
        config.heartbeat_period,
        ActionDescriptor::new(DetectorKind::RepeatTask1, p),
    )?;
    tom.insert(&t_task1)?;

    let mut t_task2 = Vec::with_capacity(nprocs);
    for q in 0..nprocs as u32 {
        if q == p.0 {
            t_task2.push(None);
            continue;
        }
        let t = Timeout::declare(
            TimeoutId::new(q, WATCH_INSTANCE),
            true,
            true,
            config.default_timeout,
            ActionDescriptor::new(DetectorKind::RepeatTask2, p),
        )?;
        tom.insert(&t)?;
        t_task2.push(Some(t));
    }

    Ok(Detector {
        me: p,
        output: vec![Status::Trust; nprocs],
        delta: vec![config.default_timeout; nprocs],
        t_task1,
        t_task2,
        tom,
    })
}

impl Detector {
    pub fn id(&self) -> ProcessId {
        self.me
    }

    pub fn nprocs(&self) -> usize {
        self.output.len()
    }

    pub fn output(&self) -> &[Status] {
        &self.output
    }

    pub fn status(&self, q: ProcessId) -> Status {
        self.output[q.index()]
    }

    pub fn delta(&self, q: ProcessId) -> Tick {
        self.delta[q.index()]
    }

    pub fn deltas(&self) -> &[Tick] {
        &self.delta
    }

    pub fn heartbeat_timeout(&self) -> &Timeout<DetectorKind> {
        &self.t_task1
    }

    pub fn watch(&self, q: ProcessId) -> Option<&Timeout<DetectorKind>> {
        self.t_task2.get(q.index()).and_then(Option::as_ref)
    }

    pub fn suspects(&self) -> BTreeSet<ProcessId> {
        self.output
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Status::Suspect)
            .map(|(q, _)| NodeId(q as u32))
            .collect()
    }

    pub fn tom(&self) -> &TomHandle<DetectorKind> {
        &self.tom
    }

    pub fn tom_mut(&mut self) -> &mut TomHandle<DetectorKind> {
        &mut self.tom
    }

    fn check_member(&self, q: ProcessId) -> Result<(), DetectorError> {
        if q.index() < self.output.len() {
            Ok(())
        } else {
            Err(DetectorError::UnknownSender(q))
        }
    }

    pub fn step(&mut self, m: DetectorMessage) -> Result<StepOutput, DetectorError> {
        self.check_member(m.sender)?;
        let mut out = StepOutput::default();
        match m.kind {
            DetectorKind::RepeatTask1 => {
                self.expect_self(m.sender)?;
                out.broadcast.push(DetectorMessage::heartbeat(self.me));
            }
            DetectorKind::RepeatTask2 => {
                self.expect_self(m.sender)?;
                let q = m.id.ok_or(DetectorError::MissingSubject)?;
                self.check_member(q)?;
                if q != self.me && self.output[q.index()] == Status::Trust {
                    self.output[q.index()] = Status::Suspect;
                    out.transition = Some(Transition {
                        kind: TransitionKind::TrustToSuspect,
                        q,
                        delta: self.delta[q.index()],
                    });
                }
            }
            DetectorKind::IAmAlive => {
                let q = m.sender;
                if q == self.me {
                    return Ok(out);
                }
                let i = q.index();
                if self.output[i] == Status::Suspect {
                    self.output[i] = Status::Trust;
                    self.delta[i] += 1;
                    out.transition = Some(Transition {
                        kind: TransitionKind::SuspectToTrust,
                        q,
                        delta: self.delta[i],
                    });
                }
                let watch = self.t_task2[i].as_mut().expect("peers always have a watch");
                if watch.deadline() != self.delta[i] {
                    watch.set_deadline(self.delta[i])?;
                }
                self.tom.renew(watch)?;
            }
        }
        Ok(out)
    }

    fn expect_self(&self, sender: ProcessId) -> Result<(), DetectorError> {
        if sender == self.me {
            Ok(())
        } else {
            Err(DetectorError::Misaddressed {
                expected: self.me,
                got: sender,
            })
        }
    }
}
