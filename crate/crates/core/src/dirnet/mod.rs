//! DIR net failure detection: per-node I'm-Alive task (IAT), the DIR-x
//! automata for manager, backups and agents, WAKEUP recovery, election and
//! fault-injection time-outs.
//!
//! Both automata are message driven. Every time-out fires by sending a
//! message to its owner; the owner's `step` is the only place state changes.
//! A step returns [`Effect`]s for the environment to carry out.

mod dirx;
mod iat;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use dirx::{DirX, PeerWatch, Suspicion};
pub use iat::Iat;

use crate::manager::{Alarm, TomError, TomHandle};
use crate::timeout::{ActionDescriptor, Timeout, TimeoutId};
use crate::types::{NodeId, Tick};

/// Time-out class ids. The instance id is the node the time-out concerns,
/// or the injection sequence number for [`class::INJECT`].
pub mod class {
    pub const IA_SET: u32 = 1;
    pub const IA_CLR: u32 = 2;
    pub const MIA_A: u32 = 3;
    pub const TAIA_A: u32 = 4;
    pub const TEIF_A: u32 = 5;
    pub const TAIA_B: u32 = 6;
    pub const MIA_B: u32 = 7;
    pub const TEIF_B: u32 = 8;
    pub const INJECT: u32 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Manager,
    Backup,
    Agent,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Manager => "manager",
            NodeRole::Backup => "backup",
            NodeRole::Agent => "agent",
        })
    }
}

impl FromStr for NodeRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manager" => Ok(NodeRole::Manager),
            "backup" => Ok(NodeRole::Backup),
            "agent" => Ok(NodeRole::Agent),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DirnetKind {
    IaSetAlarm,
    IaClrAlarm,
    Teif,
    Mia,
    Taia,
    MiaAAlarm,
    TaiaAAlarm,
    TeifAAlarm,
    TaiaBAlarm,
    MiaBAlarm,
    TeifBAlarm,
    Wakeup,
    InjectFaultTimeout,
    /// Verdict notice to surviving peers: `subject` has crashed.
    Crashed,
}

impl DirnetKind {
    /// Alarm kinds only ever travel from a time-out to its own process.
    pub fn is_local(self) -> bool {
        matches!(
            self,
            DirnetKind::IaSetAlarm
                | DirnetKind::IaClrAlarm
                | DirnetKind::MiaAAlarm
                | DirnetKind::TaiaAAlarm
                | DirnetKind::TeifAAlarm
                | DirnetKind::TaiaBAlarm
                | DirnetKind::MiaBAlarm
                | DirnetKind::TeifBAlarm
                | DirnetKind::InjectFaultTimeout
        )
    }

    /// Which process on a node consumes this kind.
    pub fn addressee(self) -> Process {
        match self {
            DirnetKind::IaClrAlarm | DirnetKind::Wakeup => Process::Iat,
            _ => Process::Dirx,
        }
    }
}

/// The two processes hosted by every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Iat,
    Dirx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    None,
    /// WAKEUP: the role the IAT must respawn.
    Role(NodeRole),
    /// INJECT_FAULT_TIMEOUT: injection sequence number.
    Fault(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DirnetMessage {
    pub kind: DirnetKind,
    pub sender: NodeId,
    pub subject: Option<NodeId>,
    pub payload: Payload,
}

impl DirnetMessage {
    pub fn new(kind: DirnetKind, sender: NodeId) -> Self {
        Self {
            kind,
            sender,
            subject: None,
            payload: Payload::None,
        }
    }

    pub fn about(mut self, subject: NodeId) -> Self {
        self.subject = Some(subject);
        self
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    /// The message a DIR net time-out delivers to its owner.
    pub fn from_alarm(alarm: &Alarm<DirnetKind>) -> Self {
        let msg = Self::new(alarm.message_type, alarm.target);
        match (alarm.message_type, alarm.subject) {
            (DirnetKind::InjectFaultTimeout, Some(seq)) => {
                msg.about(alarm.target).with_payload(Payload::Fault(seq))
            }
            (_, Some(i)) => msg.about(NodeId(i)),
            (_, None) => msg,
        }
    }
}

/// Trace-visible protocol events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirnetEvent {
    Suspect,
    Clear,
    DeclareCrashed,
    DeclareProcessCrashed,
    Wakeup,
    Elected,
    Promoted,
    Respawned,
    TeifSent,
}

/// What a step asks its environment to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send { to: NodeId, msg: DirnetMessage },
    /// To every node, the sender included.
    Broadcast(DirnetMessage),
    Record { event: DirnetEvent, subject: Option<NodeId> },
    /// Replace this node's DIR-x with a fresh one.
    Respawn { role: NodeRole, mid: NodeId },
    /// Apply scripted fault number `seq` to this node.
    ApplyFault(u32),
}

impl Effect {
    pub(crate) fn record(event: DirnetEvent, subject: NodeId) -> Self {
        Effect::Record {
            event,
            subject: Some(subject),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirnetError {
    #[error("no candidate for election")]
    EmptyCandidateSet,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("injection at tick {at} is already past (now {now})")]
    InjectionInPast { at: Tick, now: Tick },
    #[error("unknown deadline `{0}`")]
    UnknownDeadline(String),
    #[error(transparent)]
    Tom(#[from] TomError),
}

impl From<crate::timeout::TimeoutError> for DirnetError {
    fn from(e: crate::timeout::TimeoutError) -> Self {
        DirnetError::Tom(e.into())
    }
}

/// Deterministic election: the smallest live candidate.
pub fn elect(live_backups: &BTreeSet<NodeId>) -> Result<NodeId, DirnetError> {
    live_backups
        .first()
        .copied()
        .ok_or(DirnetError::EmptyCandidateSet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Deadlines {
    pub ia_set: Tick,
    pub ia_clr: Tick,
    pub mia_a: Tick,
    pub taia_a: Tick,
    pub teif_a: Tick,
    pub taia_b: Tick,
    pub mia_b: Tick,
    pub teif_b: Tick,
}

impl Default for Deadlines {
    fn default() -> Self {
        Self {
            ia_set: 50,
            ia_clr: 120,
            mia_a: 100,
            taia_b: 100,
            taia_a: 250,
            mia_b: 250,
            teif_a: 300,
            teif_b: 300,
        }
    }
}

impl Deadlines {
    pub const NAMES: [&'static str; 8] = [
        "d_IA_SET", "d_IA_CLR", "d_MIA_A", "d_TAIA_A", "d_TEIF_A", "d_TAIA_B", "d_MIA_B", "d_TEIF_B",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut Tick> {
        let bare = name
            .strip_prefix("d_")
            .or_else(|| name.strip_prefix("D_"))
            .unwrap_or(name);
        Some(match bare.to_ascii_uppercase().as_str() {
            "IA_SET" => &mut self.ia_set,
            "IA_CLR" => &mut self.ia_clr,
            "MIA_A" => &mut self.mia_a,
            "TAIA_A" => &mut self.taia_a,
            "TEIF_A" => &mut self.teif_a,
            "TAIA_B" => &mut self.taia_b,
            "MIA_B" => &mut self.mia_b,
            "TEIF_B" => &mut self.teif_b,
            _ => return None,
        })
    }

    /// Set a deadline by name, with or without the `d_` prefix.
    pub fn set(&mut self, name: &str, ticks: Tick) -> Result<(), DirnetError> {
        let slot = self
            .slot(name)
            .ok_or_else(|| DirnetError::UnknownDeadline(name.to_owned()))?;
        *slot = ticks;
        Ok(())
    }
}

/// The I'm-Alive Flag shared by the IAT and the DIR-x of one node.
/// Only [`IafPort::raise`] and [`IafPort::test_and_clear`] touch it.
#[derive(Debug, Clone, Default)]
pub struct IafPort(Arc<AtomicBool>);

impl IafPort {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    /// Returns the flag and leaves it FALSE.
    pub fn test_and_clear(&self) -> bool {
        self.0.swap(false, Ordering::SeqCst)
    }

    pub fn peek(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum FaultKind {
    CrashProcess,
    CrashNode,
    HangDirx,
    DropMessages { for_ticks: Option<Tick> },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::CrashProcess => "crash_process",
            FaultKind::CrashNode => "crash_node",
            FaultKind::HangDirx => "hang_dirx",
            FaultKind::DropMessages { .. } => "drop_messages",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FaultSpec {
    pub node: NodeId,
    pub kind: FaultKind,
    pub at: Tick,
}

/// Arms fault-injection time-outs: one non-cyclic time-out per fault, its
/// alarm an INJECT_FAULT_TIMEOUT for the target's DIR-x.
#[derive(Debug)]
pub struct Injector {
    nodes: usize,
    faults: Vec<FaultSpec>,
    tom: TomHandle<DirnetKind>,
}

impl Injector {
    pub fn new(nodes: usize, tom: TomHandle<DirnetKind>) -> Self {
        Self {
            nodes,
            faults: Vec::new(),
            tom,
        }
    }

    /// Schedule `spec`; returns its sequence number. A fault due now fires at
    /// the next cycle.
    pub fn inject(&mut self, spec: FaultSpec, now: Tick) -> Result<u32, DirnetError> {
        if spec.node.index() >= self.nodes {
            return Err(DirnetError::UnknownNode(spec.node));
        }
        if spec.at < now {
            return Err(DirnetError::InjectionInPast { at: spec.at, now });
        }
        let seq = self.faults.len() as u32;
        let t = Timeout::declare(
            TimeoutId::new(class::INJECT, seq),
            false,
            true,
            (spec.at - now).max(1),
            ActionDescriptor::new(DirnetKind::InjectFaultTimeout, spec.node).with_instance_id(),
        )?;
        self.tom.insert(&t)?;
        self.faults.push(spec);
        Ok(seq)
    }

    pub fn fault(&self, seq: u32) -> Option<&FaultSpec> {
        self.faults.get(seq as usize)
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manager::{tom_init, VirtualClock};

    #[test]
    fn election_picks_minimum() {
        let set = |v: &[u32]| v.iter().map(|&i| NodeId(i)).collect::<BTreeSet<_>>();
        assert_eq!(elect(&set(&[3, 1, 2])), Ok(NodeId(1)));
        assert_eq!(elect(&set(&[2])), Ok(NodeId(2)));
        assert_eq!(elect(&set(&[])), Err(DirnetError::EmptyCandidateSet));
    }

    #[test]
    fn deadline_names() {
        let mut d = Deadlines::default();
        d.set("d_TEIF_B", 7).unwrap();
        d.set("IA_SET", 9).unwrap();
        assert_eq!((d.teif_b, d.ia_set), (7, 9));
        assert!(matches!(d.set("d_NOPE", 1), Err(DirnetError::UnknownDeadline(_))));
        for name in Deadlines::NAMES {
            d.set(name, 1).unwrap();
        }
    }

    #[test]
    fn iaf_port_semantics() {
        let p = IafPort::new();
        let q = p.clone();
        assert!(!p.test_and_clear());
        q.raise();
        assert!(p.test_and_clear());
        assert!(!p.peek());
    }

    #[test]
    fn injections_fire_once_each() {
        let clock = VirtualClock::new();
        let (mut m, h) = tom_init(
            ActionDescriptor::new(DirnetKind::InjectFaultTimeout, NodeId(0)),
            clock.clone(),
            0,
        );
        let mut inj = Injector::new(4, h);
        let a = inj
            .inject(FaultSpec { node: NodeId(2), kind: FaultKind::CrashProcess, at: 30 }, 0)
            .unwrap();
        let b = inj
            .inject(FaultSpec { node: NodeId(2), kind: FaultKind::HangDirx, at: 50 }, 0)
            .unwrap();
        assert_ne!(a, b);
        assert_eq!(
            inj.inject(FaultSpec { node: NodeId(9), kind: FaultKind::CrashNode, at: 5 }, 0),
            Err(DirnetError::UnknownNode(NodeId(9)))
        );
        let mut fired = Vec::new();
        while clock.now() <= 100 {
            if let Some(r) = m.poll() {
                for alarm in &r.emitted {
                    let msg = DirnetMessage::from_alarm(alarm);
                    fired.push((clock.now(), msg.subject, msg.payload));
                }
            }
            clock.advance_by(1);
        }
        assert_eq!(
            fired,
            [
                (30, Some(NodeId(2)), Payload::Fault(a)),
                (50, Some(NodeId(2)), Payload::Fault(b))
            ]
        );
    }
}
