use crate::detector::{detector_init, Detector, DetectorKind, DetectorMessage, Status};
use crate::dirnet::{DirnetKind, DirnetMessage, FaultKind, Injector, Payload};
use crate::manager::{TomConfig, TomManager, VirtualClock};
use crate::timeout::ActionDescriptor;
use crate::types::{NodeId, Tick};

use super::config::Scenario;
use super::network::{NetStats, Network};
use super::trace::{FaultPhase, TomOwner, Trace, TraceRecord};
use super::{RunOptions, RunOutcome, INJECTOR_TOM_ID};

struct Proc {
    detector: Detector,
    tom: TomManager<DetectorKind>,
}

/// Processes running the eventually-perfect detector on the simulated
/// network. Crashes take effect at the start of their tick.
pub struct DetectorWorld {
    scenario: Scenario,
    clock: VirtualClock,
    net: Network<DetectorMessage>,
    procs: Vec<Option<Proc>>,
    muted: Vec<Option<Option<Tick>>>,
    injector: Injector,
    injector_tom: TomManager<DirnetKind>,
    trace: Trace,
    violations: Vec<String>,
    last_delta: Vec<Vec<Tick>>,
    default_timeout: Tick,
    opts: RunOptions,
}

impl DetectorWorld {
    /// # Panics
    ///
    /// Panics if `scenario` is not a detector scenario.
    pub fn new(scenario: Scenario, opts: RunOptions) -> Self {
        let config = scenario.detector_config().expect("detector scenario");
        let n = scenario.nodes();
        let clock = VirtualClock::new();
        let procs = (0..n as u32)
            .map(|p| {
                let (tom, h) = TomManager::new(
                    TomConfig::default()
                        .with_id(p)
                        .with_tm_cycle(scenario.tm_cycle),
                    clock.clone(),
                    ActionDescriptor::new(DetectorKind::RepeatTask1, NodeId(p)),
                );
                let detector = detector_init(NodeId(p), n, config, h).expect("valid detector");
                Some(Proc { detector, tom })
            })
            .collect();
        let (injector_tom, h) = TomManager::new(
            TomConfig::default()
                .with_id(INJECTOR_TOM_ID)
                .with_tm_cycle(scenario.tm_cycle),
            clock.clone(),
            ActionDescriptor::new(DirnetKind::InjectFaultTimeout, NodeId(0)),
        );
        let mut injector = Injector::new(n, h);
        for f in &scenario.faults {
            injector.inject(*f, 0).expect("parsed faults target known nodes");
        }
        Self {
            net: Network::new(n, scenario.link.clone()),
            procs,
            muted: vec![None; n],
            injector,
            injector_tom,
            trace: Trace::new(),
            violations: Vec::new(),
            last_delta: vec![vec![config.default_timeout; n]; n],
            default_timeout: config.default_timeout,
            clock,
            opts,
            scenario,
        }
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn detector(&self, p: NodeId) -> Option<&Detector> {
        self.procs[p.index()].as_ref().map(|s| &s.detector)
    }

    pub fn is_crashed(&self, p: NodeId) -> bool {
        self.procs[p.index()].is_none()
    }

    pub fn stats(&self) -> NetStats {
        self.net.stats()
    }

    fn violation(&mut self, detail: String) {
        let tick = self.now();
        self.trace.push(TraceRecord::Violation {
            tick,
            detail: detail.clone(),
        });
        self.violations.push(detail);
    }

    fn apply_faults(&mut self) {
        let now = self.now();
        let Some(r) = self.injector_tom.poll() else { return };
        for a in &r.emitted {
            let Payload::Fault(seq) = DirnetMessage::from_alarm(a).payload else {
                continue;
            };
            let f = *self.injector.fault(seq).expect("fault exists");
            for phase in [FaultPhase::Fired, FaultPhase::Applied] {
                self.trace.push(TraceRecord::Fault {
                    tick: now,
                    node: f.node,
                    phase,
                    fault: f.kind.name(),
                    seq,
                });
            }
            match f.kind {
                FaultKind::CrashProcess | FaultKind::CrashNode => self.procs[f.node.index()] = None,
                FaultKind::DropMessages { for_ticks } => {
                    self.muted[f.node.index()] = Some(for_ticks.map(|d| now + d));
                }
                FaultKind::HangDirx => unreachable!("rejected by the config parser"),
            }
        }
    }

    fn is_muted(&self, p: NodeId, now: Tick) -> bool {
        match self.muted[p.index()] {
            None => false,
            Some(None) => true,
            Some(Some(until)) => now < until,
        }
    }

    pub fn step(&mut self) {
        let now = self.now();
        self.apply_faults();
        for p in 0..self.procs.len() {
            let Some(proc) = self.procs[p].as_mut() else { continue };
            let Some(r) = proc.tom.poll() else { continue };
            if self.opts.record_tom_cycles && !r.is_idle() {
                self.trace.push(TraceRecord::TomCycle {
                    tick: now,
                    node: NodeId(p as u32),
                    owner: TomOwner::Detector,
                    requests_served: r.requests_served,
                    fired: r.fired.len(),
                    reinserted: r.reinserted.len(),
                });
            }
            for a in &r.emitted {
                self.net
                    .deliver_local(a.target, DetectorMessage::from_alarm(a), now)
                    .expect("known process");
            }
        }
        while let Some(ev) = self.net.pop_due(now) {
            let p = ev.target;
            let Some(proc) = self.procs[p.index()].as_mut() else { continue };
            let out = match proc.detector.step(ev.message) {
                Ok(out) => out,
                Err(e) => {
                    self.violation(format!("process {p}: {e}"));
                    continue;
                }
            };
            if let Some(t) = out.transition {
                self.trace.push(TraceRecord::Detector {
                    tick: now,
                    process: p,
                    transition: t.kind,
                    q: t.q,
                    delta: t.delta,
                });
                let prev = self.last_delta[p.index()][t.q.index()];
                if t.delta < prev || t.delta < self.default_timeout {
                    self.violation(format!("process {p}: delta for {} fell to {}", t.q, t.delta));
                }
                self.last_delta[p.index()][t.q.index()] = t.delta;
            }
            for hb in out.broadcast {
                if self.is_muted(p, now) {
                    for _ in 0..self.procs.len() {
                        self.net.drop_at_source(p).expect("known process");
                    }
                } else {
                    self.net.broadcast(p, hb, now).expect("known process");
                }
            }
        }
        self.clock.advance_by(1);
    }

    pub fn run_until(&mut self, end: Tick) {
        while self.now() <= end {
            self.step();
        }
    }

    /// Processes currently suspecting `q`, among those still running.
    pub fn suspecting(&self, q: NodeId) -> Vec<NodeId> {
        self.procs
            .iter()
            .flatten()
            .filter(|s| s.detector.status(q) == Status::Suspect)
            .map(|s| s.detector.id())
            .collect()
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
            self.violation("message conservation violated".into());
        }
        RunOutcome {
            trace: self.trace,
            violations: self.violations,
            stats: s,
            end: self.clock.now().saturating_sub(1),
        }
    }
}
