use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{
    class, elect, Deadlines, DirnetError, DirnetEvent, DirnetKind, DirnetMessage, Effect, IafPort,
    NodeRole, Payload,
};
use crate::manager::TomHandle;
use crate::timeout::{ActionDescriptor, Timeout, TimeoutId};
use crate::types::{NodeId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suspicion {
    Normal,
    Suspect,
}

/// One watched peer. In `Normal` the heartbeat watch is armed, in `Suspect`
/// the TEIF time-out is, never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerWatch {
    pub peer: NodeId,
    pub suspicion: Suspicion,
    /// An m_TEIF for `peer` arrived outside a suspicion period. Acted on when
    /// the next one opens; a heartbeat from `peer` forgets it.
    pub teif_seen: bool,
    pub heartbeat: TimeoutId,
    pub teif: TimeoutId,
}

impl PeerWatch {
    fn new(peer: NodeId, heartbeat: TimeoutId, teif: TimeoutId) -> Self {
        Self {
            peer,
            suspicion: Suspicion::Normal,
            teif_seen: false,
            heartbeat,
            teif,
        }
    }

    /// The time-out that should be in the list for this watch.
    pub fn armed(&self) -> TimeoutId {
        match self.suspicion {
            Suspicion::Normal => self.heartbeat,
            Suspicion::Suspect => self.teif,
        }
    }
}

/// A DIR-x process: the manager, a backup or an agent.
#[derive(Debug)]
pub struct DirX {
    node: NodeId,
    role: NodeRole,
    mid: NodeId,
    /// Backups this process believes alive. Excludes the manager.
    live: BTreeSet<NodeId>,
    deadlines: Deadlines,
    iaf: IafPort,
    /// Manager: one watch per live backup, keyed by backup.
    watches: BTreeMap<NodeId, PeerWatch>,
    /// Backup: the watch on the manager.
    manager_watch: Option<PeerWatch>,
    tom: TomHandle<DirnetKind>,
}

type Effects = Vec<Effect>;

impl DirX {
    /// Create the process and arm its time-outs for `role`.
    pub fn new(
        node: NodeId,
        role: NodeRole,
        mid: NodeId,
        backups: &BTreeSet<NodeId>,
        deadlines: Deadlines,
        iaf: IafPort,
        tom: TomHandle<DirnetKind>,
    ) -> Result<Self, DirnetError> {
        let mut live = backups.clone();
        live.remove(&mid);
        let mut x = Self {
            node,
            role,
            mid,
            live,
            deadlines,
            iaf,
            watches: BTreeMap::new(),
            manager_watch: None,
            tom,
        };
        let ia_set = x.timeout(class::IA_SET, node, true, deadlines.ia_set, DirnetKind::IaSetAlarm)?;
        x.tom.renew(&ia_set)?;
        match role {
            NodeRole::Manager => x.arm_manager()?,
            NodeRole::Backup => x.arm_backup()?,
            NodeRole::Agent => {}
        }
        Ok(x)
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn mid(&self) -> NodeId {
        self.mid
    }

    pub fn live_backups(&self) -> &BTreeSet<NodeId> {
        &self.live
    }

    /// Every peer watch this process currently runs.
    pub fn watches(&self) -> Vec<PeerWatch> {
        self.watches
            .values()
            .copied()
            .chain(self.manager_watch)
            .collect()
    }

    pub fn tom(&self) -> &TomHandle<DirnetKind> {
        &self.tom
    }

    pub fn tom_mut(&mut self) -> &mut TomHandle<DirnetKind> {
        &mut self.tom
    }

    fn timeout(
        &self,
        class_id: u32,
        about: NodeId,
        cyclic: bool,
        deadline: Tick,
        kind: DirnetKind,
    ) -> Result<Timeout<DirnetKind>, DirnetError> {
        Ok(Timeout::declare(
            TimeoutId::new(class_id, about.0),
            cyclic,
            true,
            deadline,
            ActionDescriptor::new(kind, self.node).with_instance_id(),
        )?)
    }

    fn arm_manager(&mut self) -> Result<(), DirnetError> {
        let mia = self.timeout(class::MIA_A, self.node, true, self.deadlines.mia_a, DirnetKind::MiaAAlarm)?;
        self.tom.renew(&mia)?;
        for i in self.live.clone() {
            self.tom.renew(&self.taia_a(i)?)?;
            self.watches.insert(
                i,
                PeerWatch::new(
                    i,
                    TimeoutId::new(class::TAIA_A, i.0),
                    TimeoutId::new(class::TEIF_A, i.0),
                ),
            );
        }
        Ok(())
    }

    fn arm_backup(&mut self) -> Result<(), DirnetError> {
        let taia = self.timeout(class::TAIA_B, self.node, true, self.deadlines.taia_b, DirnetKind::TaiaBAlarm)?;
        self.tom.renew(&taia)?;
        self.tom.renew(&self.mia_b()?)?;
        self.manager_watch = Some(PeerWatch::new(
            self.mid,
            TimeoutId::new(class::MIA_B, self.node.0),
            TimeoutId::new(class::TEIF_B, self.node.0),
        ));
        Ok(())
    }

    fn taia_a(&self, i: NodeId) -> Result<Timeout<DirnetKind>, DirnetError> {
        self.timeout(class::TAIA_A, i, true, self.deadlines.taia_a, DirnetKind::TaiaAAlarm)
    }

    fn teif_a(&self, i: NodeId) -> Result<Timeout<DirnetKind>, DirnetError> {
        self.timeout(class::TEIF_A, i, false, self.deadlines.teif_a, DirnetKind::TeifAAlarm)
    }

    fn mia_b(&self) -> Result<Timeout<DirnetKind>, DirnetError> {
        self.timeout(class::MIA_B, self.node, true, self.deadlines.mia_b, DirnetKind::MiaBAlarm)
    }

    fn teif_b(&self) -> Result<Timeout<DirnetKind>, DirnetError> {
        self.timeout(class::TEIF_B, self.node, false, self.deadlines.teif_b, DirnetKind::TeifBAlarm)
    }

    pub fn step(&mut self, m: &DirnetMessage) -> Result<Effects, DirnetError> {
        let mut out = Vec::new();
        match m.kind {
            // The only write to the IAF, and only on receipt of the alarm.
            DirnetKind::IaSetAlarm => self.iaf.raise(),
            DirnetKind::InjectFaultTimeout => match m.payload {
                Payload::Fault(seq) => out.push(Effect::ApplyFault(seq)),
                _ => log::warn!("node {}: injection without a fault number", self.node),
            },
            DirnetKind::Crashed => {
                if let Some(x) = m.subject.filter(|x| *x != self.node) {
                    self.live.remove(&x);
                }
            }
            _ => match self.role {
                NodeRole::Manager => self.manager_step(m, &mut out)?,
                NodeRole::Backup => self.backup_step(m, &mut out)?,
                NodeRole::Agent => log::trace!("agent {} ignores {:?}", self.node, m.kind),
            },
        }
        Ok(out)
    }

    fn subject(m: &DirnetMessage) -> NodeId {
        m.subject.unwrap_or(m.sender)
    }

    fn manager_step(&mut self, m: &DirnetMessage, out: &mut Effects) -> Result<(), DirnetError> {
        match m.kind {
            DirnetKind::MiaAAlarm => {
                for &b in &self.live {
                    out.push(Effect::Send {
                        to: b,
                        msg: DirnetMessage::new(DirnetKind::Mia, self.node).about(self.node),
                    });
                }
            }
            DirnetKind::Taia => {
                let i = Self::subject(m);
                let Some(w) = self.watches.get(&i).copied() else {
                    log::debug!("manager {}: m_TAIA from unwatched {i}", self.node);
                    return Ok(());
                };
                if w.suspicion == Suspicion::Suspect {
                    // Late heartbeat: back to normal.
                    self.tom.delete(w.teif)?;
                    out.push(Effect::record(DirnetEvent::Clear, i));
                }
                self.tom.renew(&self.taia_a(i)?)?;
                let w = self.watches.get_mut(&i).expect("checked above");
                w.suspicion = Suspicion::Normal;
                w.teif_seen = false;
            }
            DirnetKind::TaiaAAlarm => {
                let i = Self::subject(m);
                let Some(w) = self.watches.get(&i).copied() else {
                    return Ok(());
                };
                if w.suspicion != Suspicion::Normal {
                    return Ok(());
                }
                out.push(Effect::record(DirnetEvent::Suspect, i));
                if w.teif_seen {
                    self.backup_process_crashed(i, out)?;
                } else {
                    self.tom.delete(w.heartbeat)?;
                    self.tom.renew(&self.teif_a(i)?)?;
                    self.watches.get_mut(&i).expect("checked above").suspicion = Suspicion::Suspect;
                }
            }
            DirnetKind::Teif => {
                let i = Self::subject(m);
                let Some(w) = self.watches.get_mut(&i) else {
                    log::debug!("manager {}: m_TEIF about unwatched {i}", self.node);
                    return Ok(());
                };
                match w.suspicion {
                    Suspicion::Suspect => {
                        let teif = w.teif;
                        self.tom.delete(teif)?;
                        self.backup_process_crashed(i, out)?;
                    }
                    Suspicion::Normal => w.teif_seen = true,
                }
            }
            DirnetKind::TeifAAlarm => {
                let i = Self::subject(m);
                if self.watches.get(&i).map(|w| w.suspicion) != Some(Suspicion::Suspect) {
                    log::debug!("manager {}: stale TEIF_A alarm for {i}", self.node);
                    return Ok(());
                }
                self.watches.remove(&i);
                self.live.remove(&i);
                out.push(Effect::record(DirnetEvent::DeclareCrashed, i));
                out.push(Effect::Broadcast(
                    DirnetMessage::new(DirnetKind::Crashed, self.node).about(i),
                ));
            }
            other => log::trace!("manager {} ignores {other:?}", self.node),
        }
        Ok(())
    }

    /// The DIR-B on `i` is gone but its IAT answers: wake it up and resume
    /// watching with a fresh window.
    fn backup_process_crashed(&mut self, i: NodeId, out: &mut Effects) -> Result<(), DirnetError> {
        out.push(Effect::record(DirnetEvent::DeclareProcessCrashed, i));
        out.push(Effect::record(DirnetEvent::Wakeup, i));
        out.push(Effect::Send {
            to: i,
            msg: DirnetMessage::new(DirnetKind::Wakeup, self.node)
                .about(i)
                .with_payload(Payload::Role(NodeRole::Backup)),
        });
        self.tom.renew(&self.taia_a(i)?)?;
        let w = self.watches.get_mut(&i).expect("caller checked");
        w.suspicion = Suspicion::Normal;
        w.teif_seen = false;
        Ok(())
    }

    fn backup_step(&mut self, m: &DirnetMessage, out: &mut Effects) -> Result<(), DirnetError> {
        let w = self.manager_watch.expect("a backup always watches its manager");
        match m.kind {
            DirnetKind::TaiaBAlarm => out.push(Effect::Send {
                to: self.mid,
                msg: DirnetMessage::new(DirnetKind::Taia, self.node).about(self.node),
            }),
            DirnetKind::Mia => {
                if m.sender != self.mid {
                    log::debug!("backup {}: m_MIA from {} is not from manager {}", self.node, m.sender, self.mid);
                    return Ok(());
                }
                if w.suspicion == Suspicion::Suspect {
                    self.tom.delete(w.teif)?;
                    out.push(Effect::record(DirnetEvent::Clear, self.mid));
                }
                self.tom.renew(&self.mia_b()?)?;
                let w = self.manager_watch.as_mut().expect("checked above");
                w.suspicion = Suspicion::Normal;
                w.teif_seen = false;
            }
            DirnetKind::MiaBAlarm => {
                if w.suspicion != Suspicion::Normal {
                    return Ok(());
                }
                out.push(Effect::record(DirnetEvent::Suspect, self.mid));
                if w.teif_seen {
                    self.manager_process_crashed(out)?;
                } else {
                    self.tom.delete(w.heartbeat)?;
                    self.tom.renew(&self.teif_b()?)?;
                    self.manager_watch.as_mut().expect("checked above").suspicion = Suspicion::Suspect;
                }
            }
            DirnetKind::Teif => {
                if Self::subject(m) != self.mid {
                    return Ok(());
                }
                match w.suspicion {
                    Suspicion::Suspect => {
                        self.tom.delete(w.teif)?;
                        self.manager_process_crashed(out)?;
                    }
                    Suspicion::Normal => {
                        self.manager_watch.as_mut().expect("checked above").teif_seen = true;
                    }
                }
            }
            DirnetKind::TeifBAlarm => {
                if w.suspicion != Suspicion::Suspect {
                    return Ok(());
                }
                self.manager_node_crashed(out)?;
            }
            other => log::trace!("backup {} ignores {other:?}", self.node),
        }
        Ok(())
    }

    /// The manager process is gone but its node answers: ask its IAT to
    /// respawn it and keep watching.
    fn manager_process_crashed(&mut self, out: &mut Effects) -> Result<(), DirnetError> {
        let mid = self.mid;
        out.push(Effect::record(DirnetEvent::DeclareProcessCrashed, mid));
        out.push(Effect::record(DirnetEvent::Wakeup, mid));
        out.push(Effect::Send {
            to: mid,
            msg: DirnetMessage::new(DirnetKind::Wakeup, self.node)
                .about(mid)
                .with_payload(Payload::Role(NodeRole::Manager)),
        });
        self.tom.renew(&self.mia_b()?)?;
        let w = self.manager_watch.as_mut().expect("backup");
        w.suspicion = Suspicion::Normal;
        w.teif_seen = false;
        Ok(())
    }

    /// The manager's whole node is gone: elect a successor among the live
    /// backups and either take over or start watching the winner.
    fn manager_node_crashed(&mut self, out: &mut Effects) -> Result<(), DirnetError> {
        let old = self.mid;
        out.push(Effect::record(DirnetEvent::DeclareCrashed, old));
        out.push(Effect::Broadcast(
            DirnetMessage::new(DirnetKind::Crashed, self.node).about(old),
        ));
        let winner = elect(&self.live)?;
        out.push(Effect::record(DirnetEvent::Elected, winner));
        self.live.remove(&winner);
        self.mid = winner;
        if winner == self.node {
            out.push(Effect::record(DirnetEvent::Promoted, self.node));
            self.role = NodeRole::Manager;
            self.manager_watch = None;
            self.tom.delete(TimeoutId::new(class::TAIA_B, self.node.0))?;
            self.arm_manager()?;
        } else {
            self.tom.renew(&self.mia_b()?)?;
            let w = self.manager_watch.as_mut().expect("backup");
            *w = PeerWatch::new(winner, w.heartbeat, w.teif);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manager::{tom_init, TomManager, VirtualClock};

    fn set(v: &[u32]) -> BTreeSet<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    fn make(node: u32, role: NodeRole) -> (TomManager<DirnetKind>, DirX) {
        let (m, h) = tom_init(
            ActionDescriptor::new(DirnetKind::IaSetAlarm, NodeId(node)),
            VirtualClock::new(),
            0,
        );
        let x = DirX::new(
            NodeId(node),
            role,
            NodeId(0),
            &set(&[1, 2, 3]),
            Deadlines::default(),
            IafPort::new(),
            h,
        )
        .unwrap();
        (m, x)
    }

    fn msg(kind: DirnetKind, from: u32, about: u32) -> DirnetMessage {
        DirnetMessage::new(kind, NodeId(from)).about(NodeId(about))
    }

    fn events(out: &[Effect]) -> Vec<(DirnetEvent, u32)> {
        out.iter()
            .filter_map(|e| match e {
                Effect::Record { event, subject } => Some((*event, subject.unwrap().0)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn manager_arms_one_watch_per_backup() {
        let (mut m, x) = make(0, NodeRole::Manager);
        m.poll();
        // IA_SET, MIA_A and three TAIA_A
        assert_eq!(m.list().len(), 5);
        assert_eq!(x.watches().len(), 3);
        assert!(x.watches().iter().all(|w| w.armed().class_id == class::TAIA_A));
    }

    #[test]
    fn mia_alarm_heartbeats_every_backup() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        let out = x.step(&msg(DirnetKind::MiaAAlarm, 0, 0)).unwrap();
        let to: Vec<u32> = out
            .iter()
            .map(|e| match e {
                Effect::Send { to, msg } if msg.kind == DirnetKind::Mia => to.0,
                _ => panic!("unexpected {e:?}"),
            })
            .collect();
        assert_eq!(to, [1, 2, 3]);
    }

    #[test]
    fn case_one_late_heartbeat_clears() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        let out = x.step(&msg(DirnetKind::TaiaAAlarm, 0, 2)).unwrap();
        assert_eq!(events(&out), [(DirnetEvent::Suspect, 2)]);
        assert_eq!(x.watches()[1].armed(), TimeoutId::new(class::TEIF_A, 2));
        let out = x.step(&msg(DirnetKind::Taia, 2, 2)).unwrap();
        assert_eq!(events(&out), [(DirnetEvent::Clear, 2)]);
        assert_eq!(x.watches()[1].suspicion, Suspicion::Normal);
        // the expired TEIF alarm that raced the heartbeat is ignored
        assert!(x.step(&msg(DirnetKind::TeifAAlarm, 0, 2)).unwrap().is_empty());
    }

    #[test]
    fn case_two_teif_in_window_wakes_backup() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        x.step(&msg(DirnetKind::TaiaAAlarm, 0, 2)).unwrap();
        let out = x.step(&msg(DirnetKind::Teif, 2, 2)).unwrap();
        assert_eq!(
            events(&out),
            [(DirnetEvent::DeclareProcessCrashed, 2), (DirnetEvent::Wakeup, 2)]
        );
        assert!(out.iter().any(|e| matches!(e,
            Effect::Send { to: NodeId(2), msg } if msg.kind == DirnetKind::Wakeup
                && msg.payload == Payload::Role(NodeRole::Backup))));
        assert_eq!(x.watches()[1].suspicion, Suspicion::Normal);
    }

    #[test]
    fn early_teif_is_latched_until_suspicion() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        assert!(x.step(&msg(DirnetKind::Teif, 3, 3)).unwrap().is_empty());
        let out = x.step(&msg(DirnetKind::TaiaAAlarm, 0, 3)).unwrap();
        assert_eq!(
            events(&out),
            [
                (DirnetEvent::Suspect, 3),
                (DirnetEvent::DeclareProcessCrashed, 3),
                (DirnetEvent::Wakeup, 3)
            ]
        );
    }

    #[test]
    fn heartbeat_forgets_latched_teif() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        x.step(&msg(DirnetKind::Teif, 3, 3)).unwrap();
        x.step(&msg(DirnetKind::Taia, 3, 3)).unwrap();
        let out = x.step(&msg(DirnetKind::TaiaAAlarm, 0, 3)).unwrap();
        assert_eq!(events(&out), [(DirnetEvent::Suspect, 3)]);
    }

    #[test]
    fn case_three_declares_node_and_stops_watching() {
        let (_m, mut x) = make(0, NodeRole::Manager);
        x.step(&msg(DirnetKind::TaiaAAlarm, 0, 1)).unwrap();
        let out = x.step(&msg(DirnetKind::TeifAAlarm, 0, 1)).unwrap();
        assert_eq!(events(&out), [(DirnetEvent::DeclareCrashed, 1)]);
        assert_eq!(x.watches().len(), 2);
        assert_eq!(x.live_backups(), &set(&[2, 3]));
        let out = x.step(&msg(DirnetKind::MiaAAlarm, 0, 0)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn backup_heartbeats_manager() {
        let (_m, mut x) = make(2, NodeRole::Backup);
        let out = x.step(&msg(DirnetKind::TaiaBAlarm, 2, 2)).unwrap();
        assert_eq!(
            out,
            [Effect::Send {
                to: NodeId(0),
                msg: msg(DirnetKind::Taia, 2, 2)
            }]
        );
    }

    #[test]
    fn backup_elects_minimum_and_lowest_promotes() {
        for node in [1, 2, 3] {
            let (_m, mut x) = make(node, NodeRole::Backup);
            x.step(&msg(DirnetKind::MiaBAlarm, node, node)).unwrap();
            let out = x.step(&msg(DirnetKind::TeifBAlarm, node, node)).unwrap();
            let ev = events(&out);
            assert_eq!(ev[0], (DirnetEvent::DeclareCrashed, 0));
            assert_eq!(ev[1], (DirnetEvent::Elected, 1));
            assert_eq!(x.mid(), NodeId(1));
            if node == 1 {
                assert_eq!(ev[2], (DirnetEvent::Promoted, 1));
                assert_eq!(x.role(), NodeRole::Manager);
                let peers: Vec<u32> = x.watches().iter().map(|w| w.peer.0).collect();
                assert_eq!(peers, [2, 3]);
            } else {
                assert_eq!(x.role(), NodeRole::Backup);
                assert_eq!(x.watches()[0].peer, NodeId(1));
            }
        }
    }

    #[test]
    fn backup_ignores_mia_from_non_manager_and_clears_on_late_mia() {
        let (_m, mut x) = make(3, NodeRole::Backup);
        x.step(&msg(DirnetKind::MiaBAlarm, 3, 3)).unwrap();
        assert!(x.step(&msg(DirnetKind::Mia, 1, 1)).unwrap().is_empty());
        assert_eq!(x.watches()[0].suspicion, Suspicion::Suspect);
        let out = x.step(&msg(DirnetKind::Mia, 0, 0)).unwrap();
        assert_eq!(events(&out), [(DirnetEvent::Clear, 0)]);
    }

    #[test]
    fn backup_wakes_manager_on_teif() {
        let (_m, mut x) = make(1, NodeRole::Backup);
        x.step(&msg(DirnetKind::MiaBAlarm, 1, 1)).unwrap();
        let out = x.step(&msg(DirnetKind::Teif, 0, 0)).unwrap();
        assert!(out.iter().any(|e| matches!(e,
            Effect::Send { to: NodeId(0), msg } if msg.payload == Payload::Role(NodeRole::Manager))));
        assert_eq!(x.role(), NodeRole::Backup);
        assert_eq!(x.mid(), NodeId(0));
    }

    #[test]
    fn only_the_alarm_message_raises_the_flag() {
        let iaf = IafPort::new();
        let (_m, h) = tom_init(
            ActionDescriptor::new(DirnetKind::IaSetAlarm, NodeId(4)),
            VirtualClock::new(),
            0,
        );
        let mut x = DirX::new(NodeId(4), NodeRole::Agent, NodeId(0), &set(&[1]), Deadlines::default(), iaf.clone(), h)
            .unwrap();
        assert!(!iaf.peek());
        x.step(&msg(DirnetKind::IaSetAlarm, 4, 4)).unwrap();
        assert!(iaf.peek());
    }
}
