use std::collections::BTreeSet;

use crate::dirnet::{
    DirX, DirnetKind, DirnetMessage, Effect, FaultKind, Iat, IafPort, Injector, NodeRole, Process,
};
use crate::manager::{CycleReport, TomConfig, TomManager, VirtualClock};
use crate::timeout::ActionDescriptor;
use crate::types::{NodeId, Tick};

use super::config::Scenario;
use super::network::{NetStats, Network, SimEvent};
use super::trace::{FaultPhase, TomOwner, Trace, TraceRecord};
use super::{RunOptions, RunOutcome, INJECTOR_TOM_ID};

struct Slot<P> {
    proc: P,
    tom: TomManager<DirnetKind>,
}

struct Node {
    iaf: IafPort,
    iat: Option<Slot<Iat>>,
    dirx: Option<Slot<DirX>>,
    hung: bool,
    crashed: bool,
    /// `Some(None)`: muted for good; `Some(Some(t))`: muted before tick `t`.
    muted: Option<Option<Tick>>,
    /// DIR-x incarnation, for distinct TOM ids across respawns.
    incarnation: u32,
}

impl Node {
    fn is_muted(&self, now: Tick) -> bool {
        match self.muted {
            None => false,
            Some(None) => true,
            Some(Some(until)) => now < until,
        }
    }
}

/// A DIR net deployment on the simulated network.
pub struct DirnetWorld {
    scenario: Scenario,
    clock: VirtualClock,
    net: Network<DirnetMessage>,
    nodes: Vec<Node>,
    backups: BTreeSet<NodeId>,
    injector: Injector,
    injector_tom: TomManager<DirnetKind>,
    trace: Trace,
    violations: Vec<String>,
    opts: RunOptions,
}

impl DirnetWorld {
    /// # Panics
    ///
    /// Panics if `scenario` is not a valid DIR net scenario; parsed
    /// scenarios always are.
    pub fn new(scenario: Scenario, opts: RunOptions) -> Self {
        let (mid, backups) = scenario
            .dirnet_layout()
            .expect("DIR net scenario with one manager");
        let roles = match &scenario.protocol {
            super::config::Protocol::Dirnet { roles } => roles.clone(),
            _ => unreachable!("dirnet_layout checked the protocol"),
        };
        let clock = VirtualClock::new();
        let (injector_tom, h) = TomManager::new(
            TomConfig::default()
                .with_id(INJECTOR_TOM_ID)
                .with_tm_cycle(scenario.tm_cycle),
            clock.clone(),
            ActionDescriptor::new(DirnetKind::InjectFaultTimeout, NodeId(0)),
        );
        let mut injector = Injector::new(roles.len(), h);
        for f in &scenario.faults {
            injector
                .inject(*f, 0)
                .expect("parsed faults target known nodes");
        }

        let mut world = Self {
            net: Network::new(roles.len(), scenario.link.clone()),
            nodes: Vec::with_capacity(roles.len()),
            backups,
            injector,
            injector_tom,
            trace: Trace::new(),
            violations: Vec::new(),
            clock,
            opts,
            scenario,
        };
        for (i, role) in roles.into_iter().enumerate() {
            let id = NodeId(i as u32);
            let iaf = IafPort::new();
            let (tom, h) = world.tom(2 * i as u32, DirnetKind::IaClrAlarm, id);
            let iat = Iat::new(id, world.scenario.deadlines.ia_clr, iaf.clone(), h)
                .expect("IAT time-outs are valid");
            world.nodes.push(Node {
                iaf,
                iat: Some(Slot { proc: iat, tom }),
                dirx: None,
                hung: false,
                crashed: false,
                muted: None,
                incarnation: 0,
            });
            world.spawn_dirx(id, role, mid);
        }
        world
    }

    fn tom(
        &self,
        id: u32,
        kind: DirnetKind,
        owner: NodeId,
    ) -> (TomManager<DirnetKind>, crate::manager::TomHandle<DirnetKind>) {
        TomManager::new(
            TomConfig::default()
                .with_id(id)
                .with_tm_cycle(self.scenario.tm_cycle),
            self.clock.clone(),
            ActionDescriptor::new(kind, owner),
        )
    }

    fn spawn_dirx(&mut self, id: NodeId, role: NodeRole, mid: NodeId) {
        let node = &mut self.nodes[id.index()];
        node.incarnation += 1;
        let tom_id = 2 * id.0 + 1 + 1000 * node.incarnation;
        let iaf = node.iaf.clone();
        let (tom, h) = self.tom(tom_id, DirnetKind::IaSetAlarm, id);
        let dirx = DirX::new(id, role, mid, &self.backups, self.scenario.deadlines, iaf, h)
            .expect("DIR-x time-outs are valid");
        let node = &mut self.nodes[id.index()];
        node.dirx = Some(Slot { proc: dirx, tom });
        node.hung = false;
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn stats(&self) -> NetStats {
        self.net.stats()
    }

    /// The DIR-x currently running on `node`, if any.
    pub fn dirx(&self, node: NodeId) -> Option<&DirX> {
        self.nodes[node.index()].dirx.as_ref().map(|s| &s.proc)
    }

    pub fn dirx_tom(&self, node: NodeId) -> Option<&TomManager<DirnetKind>> {
        self.nodes[node.index()].dirx.as_ref().map(|s| &s.tom)
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.nodes[node.index()].crashed
    }

    pub fn is_hung(&self, node: NodeId) -> bool {
        self.nodes[node.index()].hung
    }

    /// Live nodes whose DIR-x currently acts as manager.
    pub fn managers(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.crashed)
            .filter_map(|n| n.dirx.as_ref())
            .filter(|s| s.proc.role() == NodeRole::Manager)
            .map(|s| s.proc.node())
            .collect()
    }

    fn violation(&mut self, detail: String) {
        let tick = self.now();
        log::warn!("tick {tick}: {detail}");
        self.trace.push(TraceRecord::Violation {
            tick,
            detail: detail.clone(),
        });
        self.violations.push(detail);
    }

    fn record_cycle(&mut self, node: NodeId, owner: TomOwner, r: &CycleReport<DirnetKind>) {
        if self.opts.record_tom_cycles && !r.is_idle() {
            self.trace.push(TraceRecord::TomCycle {
                tick: r.tick,
                node,
                owner,
                requests_served: r.requests_served,
                fired: r.fired.len(),
                reinserted: r.reinserted.len(),
            });
        }
    }

    fn enqueue_alarms(&mut self, r: &CycleReport<DirnetKind>) {
        let now = self.now();
        for a in &r.emitted {
            let msg = DirnetMessage::from_alarm(a);
            self.net
                .deliver_local(a.target, msg, now)
                .expect("alarms target known nodes");
        }
    }

    /// Every watch has exactly one of its two time-outs armed, and the one
    /// matching its suspicion state. Fired-this-cycle counts as armed.
    fn check_exclusivity(&mut self, node: NodeId, r: &CycleReport<DirnetKind>) {
        let Some(slot) = self.nodes[node.index()].dirx.as_ref() else {
            return;
        };
        let present = |id| slot.tom.list().contains(id) || r.fired.contains(&id);
        let mut bad = Vec::new();
        for w in slot.proc.watches() {
            let hb = present(w.heartbeat);
            let teif = present(w.teif);
            if hb == teif || !present(w.armed()) {
                bad.push(format!(
                    "node {node}: watch on {} has heartbeat={hb} teif={teif} in state {:?}",
                    w.peer, w.suspicion
                ));
            }
        }
        for b in bad {
            self.violation(b);
        }
    }

    fn cycle_toms(&mut self) {
        let now = self.now();
        if let Some(r) = self.injector_tom.poll() {
            for a in &r.emitted {
                let msg = DirnetMessage::from_alarm(a);
                if let crate::dirnet::Payload::Fault(seq) = msg.payload {
                    let f = *self.injector.fault(seq).expect("fault exists");
                    self.trace.push(TraceRecord::Fault {
                        tick: now,
                        node: f.node,
                        phase: FaultPhase::Fired,
                        fault: f.kind.name(),
                        seq,
                    });
                }
                self.net.deliver_local(a.target, msg, now).expect("known node");
            }
        }
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            if self.nodes[i].crashed {
                continue;
            }
            if let Some(r) = self.nodes[i].iat.as_mut().and_then(|s| s.tom.poll()) {
                self.record_cycle(id, TomOwner::Iat, &r);
                self.enqueue_alarms(&r);
            }
            if let Some(r) = self.nodes[i].dirx.as_mut().and_then(|s| s.tom.poll()) {
                self.record_cycle(id, TomOwner::Dirx, &r);
                if !self.nodes[i].hung {
                    self.check_exclusivity(id, &r);
                }
                self.enqueue_alarms(&r);
            }
        }
    }

    fn dispatch(&mut self, ev: SimEvent<DirnetMessage>) {
        let k = ev.target;
        let node = &mut self.nodes[k.index()];
        if node.crashed {
            return;
        }
        let msg = ev.message;
        let effects = match msg.kind.addressee() {
            Process::Iat => match node.iat.as_mut() {
                Some(s) => s.proc.step(&msg),
                None => return,
            },
            Process::Dirx => match node.dirx.as_mut() {
                Some(s) if !node.hung => s.proc.step(&msg),
                _ if msg.kind == DirnetKind::InjectFaultTimeout => {
                    // No DIR-x to process it: the harness applies the fault.
                    match msg.payload {
                        crate::dirnet::Payload::Fault(seq) => Ok(vec![Effect::ApplyFault(seq)]),
                        _ => return,
                    }
                }
                _ => return,
            },
        };
        match effects {
            Ok(effects) => {
                for e in effects {
                    self.apply(k, e);
                }
            }
            Err(e) => self.violation(format!("node {k}: step failed: {e}")),
        }
    }

    fn send(&mut self, src: NodeId, dst: NodeId, msg: DirnetMessage) {
        let now = self.now();
        if self.nodes[src.index()].is_muted(now) {
            self.net.drop_at_source(src).expect("known node");
        } else if let Err(e) = self.net.send(src, dst, msg, now) {
            self.violation(format!("node {src}: {e}"));
        }
    }

    fn apply(&mut self, k: NodeId, effect: Effect) {
        let now = self.now();
        match effect {
            Effect::Send { to, msg } => self.send(k, to, msg),
            Effect::Broadcast(msg) => {
                for j in 0..self.nodes.len() {
                    self.send(k, NodeId(j as u32), msg);
                }
            }
            Effect::Record { event, subject } => self.trace.push(TraceRecord::Dirnet {
                tick: now,
                node: k,
                event,
                subject,
            }),
            Effect::Respawn { role, mid } => {
                if let Some(mut old) = self.nodes[k.index()].dirx.take() {
                    old.proc.tom_mut().close();
                }
                self.spawn_dirx(k, role, mid);
            }
            Effect::ApplyFault(seq) => {
                let f = *self.injector.fault(seq).expect("fault exists");
                self.trace.push(TraceRecord::Fault {
                    tick: now,
                    node: f.node,
                    phase: FaultPhase::Applied,
                    fault: f.kind.name(),
                    seq,
                });
                let node = &mut self.nodes[f.node.index()];
                match f.kind {
                    FaultKind::CrashProcess => node.dirx = None,
                    FaultKind::CrashNode => {
                        node.crashed = true;
                        node.dirx = None;
                        node.iat = None;
                    }
                    FaultKind::HangDirx => node.hung = true,
                    FaultKind::DropMessages { for_ticks } => {
                        node.muted = Some(for_ticks.map(|d| now + d));
                    }
                }
            }
        }
    }

    /// Run one tick: TOM cycles, invariant checks, then every due delivery.
    pub fn step(&mut self) {
        let now = self.now();
        self.cycle_toms();
        while let Some(ev) = self.net.pop_due(now) {
            self.dispatch(ev);
        }
        self.clock.advance_by(1);
    }

    pub fn run_until(&mut self, end: Tick) {
        while self.now() <= end {
            self.step();
        }
    }

    pub fn run(mut self) -> RunOutcome {
        let end = self.scenario.duration;
        self.run_until(end);
        self.finish()
    }

    pub fn finish(mut self) -> RunOutcome {
        let s = self.net.stats();
        let in_flight = self.net.in_flight() as u64;
        if s.sent != s.delivered + s.dropped + in_flight {
            self.violation(format!(
                "message conservation: sent {} != delivered {} + dropped {} + in flight {in_flight}",
                s.sent, s.delivered, s.dropped
            ));
        }
        RunOutcome {
            trace: self.trace,
            violations: self.violations,
            stats: s,
            end: self.clock.now().saturating_sub(1),
        }
    }
}
