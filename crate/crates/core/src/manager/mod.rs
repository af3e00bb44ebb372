//! The time-out list manager (TLM) and its client protocol.
//!
//! Clients never touch the list. They hold a [`TomHandle`] and send it
//! requests over a channel; the manager serves every queued request at its
//! next cycle, then advances the list to the current tick, hands fired
//! alarms to the alarm scheduler (or emits them itself when configured
//! without a pool) and re-arms cyclic time-outs.
//!
//! In a simulation the owner calls [`TomManager::poll`] once per tick with a
//! [`VirtualClock`]. For live use [`spawn_live`] runs the same loop on its own
//! thread against a [`WallClock`].

mod clock;
mod live;
mod pool;

use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};

use serde::Serialize;
use thiserror::Error;

pub use clock::{Clock, VirtualClock, WallClock};
pub use live::{spawn_live, LiveTom};
pub use pool::{AlarmPool, PoolFull};

use crate::timeout::{ActionDescriptor, Timeout, TimeoutError, TimeoutId, TimeoutList};
use crate::types::{NodeId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TomError {
    #[error("time-out manager handle is closed")]
    Closed,
    #[error(transparent)]
    Timeout(#[from] TimeoutError),
}

/// One fired alarm: the message a time-out's action asks to be sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alarm<T> {
    pub message_type: T,
    pub target: NodeId,
    pub timeout: TimeoutId,
    /// The time-out's instance id, when its action carries it.
    pub subject: Option<u32>,
    pub fired_at: Tick,
}

impl<T: Clone> Alarm<T> {
    fn from_timeout(t: &Timeout<T>, now: Tick) -> Self {
        let action = t.action();
        Self {
            message_type: action.message_type.clone(),
            target: action.target,
            timeout: t.id(),
            subject: action.carries_instance_id.then_some(t.id().instance_id),
            fired_at: now,
        }
    }
}

/// A list operation requested by a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimerCommand<T> {
    Insert(Timeout<T>),
    Delete(TimeoutId),
    /// Delete-then-insert, or a plain insert when absent.
    Renew(Timeout<T>),
    Enable(TimeoutId),
    Disable(TimeoutId),
}

impl<T> TimerCommand<T> {
    pub fn id(&self) -> TimeoutId {
        match self {
            TimerCommand::Insert(t) | TimerCommand::Renew(t) => t.id(),
            TimerCommand::Delete(id) | TimerCommand::Enable(id) | TimerCommand::Disable(id) => *id,
        }
    }
}

#[derive(Debug)]
pub enum RequestKind<T> {
    Timer(TimerCommand<T>),
    Attach,
    Close,
}

/// A request plus the channel its single reply goes to.
#[derive(Debug)]
pub struct ClientRequest<T> {
    pub kind: RequestKind<T>,
    reply: Sender<Result<(), TomError>>,
}

/// Reply to a client request. Arrives once the manager has served it.
#[derive(Debug)]
pub struct Ack(AckState);

#[derive(Debug)]
enum AckState {
    Ready(Option<Result<(), TomError>>),
    Pending(Receiver<Result<(), TomError>>),
}

impl Ack {
    fn ready(result: Result<(), TomError>) -> Self {
        Ack(AckState::Ready(Some(result)))
    }

    /// Non-blocking; `None` until the manager has served the request. The
    /// reply is handed out once.
    pub fn try_result(&mut self) -> Option<Result<(), TomError>> {
        match &mut self.0 {
            AckState::Ready(r) => r.take(),
            AckState::Pending(rx) => match rx.try_recv() {
                Ok(r) => {
                    self.0 = AckState::Ready(None);
                    Some(r)
                }
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => {
                    self.0 = AckState::Ready(None);
                    Some(Err(TomError::Closed))
                }
            },
        }
    }

    /// Block until the reply arrives. Only sensible when the manager runs on
    /// another thread.
    pub fn wait(self) -> Result<(), TomError> {
        match self.0 {
            AckState::Ready(r) => r.unwrap_or(Ok(())),
            AckState::Pending(rx) => rx.recv().unwrap_or(Err(TomError::Closed)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TomConfig {
    pub manager_id: u32,
    /// Ticks between two manager cycles.
    pub tm_cycle: Tick,
    /// Number of alarm executors. Zero makes the manager emit alarms itself.
    pub pool_size: usize,
    pub pool_capacity: usize,
    /// Ticks an executor spends on one alarm.
    pub alarm_latency: Tick,
}

impl Default for TomConfig {
    fn default() -> Self {
        Self {
            manager_id: 0,
            tm_cycle: 1,
            pool_size: 0,
            pool_capacity: 1024,
            alarm_latency: 0,
        }
    }
}

impl TomConfig {
    pub fn with_id(mut self, id: u32) -> Self {
        self.manager_id = id;
        self
    }

    pub fn with_tm_cycle(mut self, ticks: Tick) -> Self {
        self.tm_cycle = ticks;
        self
    }

    pub fn with_pool(mut self, size: usize) -> Self {
        self.pool_size = size;
        self
    }

    pub fn with_alarm_latency(mut self, ticks: Tick) -> Self {
        self.alarm_latency = ticks;
        self
    }
}

/// What one manager cycle did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport<T> {
    pub tick: Tick,
    pub requests_served: usize,
    /// Enabled time-outs that expired this cycle, in expiry order.
    pub fired: Vec<TimeoutId>,
    pub reinserted: Vec<TimeoutId>,
    /// Alarms whose execution finished this cycle.
    pub emitted: Vec<Alarm<T>>,
    /// Alarms the scheduler refused because its queue was full.
    pub dropped_alarms: Vec<TimeoutId>,
    /// Errors returned to clients this cycle.
    pub errors: Vec<TomError>,
}

impl<T> CycleReport<T> {
    fn new(tick: Tick) -> Self {
        Self {
            tick,
            requests_served: 0,
            fired: Vec::new(),
            reinserted: Vec::new(),
            emitted: Vec::new(),
            dropped_alarms: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn is_idle(&self) -> bool {
        self.requests_served == 0
            && self.fired.is_empty()
            && self.reinserted.is_empty()
            && self.emitted.is_empty()
            && self.dropped_alarms.is_empty()
    }
}

/// Client side of a time-out manager.
#[derive(Debug)]
pub struct TomHandle<T> {
    manager_id: u32,
    tx: Sender<ClientRequest<T>>,
    default_action: ActionDescriptor<T>,
    closed: bool,
}

impl<T: Clone> TomHandle<T> {
    pub fn manager_id(&self) -> u32 {
        self.manager_id
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn default_action(&self) -> &ActionDescriptor<T> {
        &self.default_action
    }

    /// Declare a time-out bound to this manager's default action.
    pub fn declare(
        &self,
        id: TimeoutId,
        cyclic: bool,
        enabled: bool,
        deadline: Tick,
    ) -> Result<Timeout<T>, TimeoutError> {
        Timeout::declare(id, cyclic, enabled, deadline, self.default_action.clone())
    }

    fn request(&self, kind: RequestKind<T>) -> Result<Ack, TomError> {
        if self.closed {
            return Err(TomError::Closed);
        }
        let (reply, rx) = mpsc::channel();
        self.tx
            .send(ClientRequest { kind, reply })
            .map_err(|_| TomError::Closed)?;
        Ok(Ack(AckState::Pending(rx)))
    }

    pub fn apply(&self, cmd: TimerCommand<T>) -> Result<Ack, TomError> {
        self.request(RequestKind::Timer(cmd))
    }

    pub fn insert(&self, t: &Timeout<T>) -> Result<Ack, TomError> {
        self.apply(TimerCommand::Insert(t.clone()))
    }

    pub fn delete(&self, id: TimeoutId) -> Result<Ack, TomError> {
        self.apply(TimerCommand::Delete(id))
    }

    pub fn renew(&self, t: &Timeout<T>) -> Result<Ack, TomError> {
        self.apply(TimerCommand::Renew(t.clone()))
    }

    pub fn enable(&self, id: TimeoutId) -> Result<Ack, TomError> {
        self.apply(TimerCommand::Enable(id))
    }

    pub fn disable(&self, id: TimeoutId) -> Result<Ack, TomError> {
        self.apply(TimerCommand::Disable(id))
    }

    /// Register another client on the same manager.
    pub fn attach(&self) -> Result<TomHandle<T>, TomError> {
        self.request(RequestKind::Attach)?;
        Ok(TomHandle {
            manager_id: self.manager_id,
            tx: self.tx.clone(),
            default_action: self.default_action.clone(),
            closed: false,
        })
    }

    /// Detach this client. The manager stops once its last client is gone.
    /// Closing twice is a no-op.
    pub fn close(&mut self) -> Ack {
        if self.closed {
            return Ack::ready(Ok(()));
        }
        let ack = self
            .request(RequestKind::Close)
            .unwrap_or_else(|_| Ack::ready(Ok(())));
        self.closed = true;
        ack
    }
}

/// The list manager itself.
pub struct TomManager<T> {
    config: TomConfig,
    list: TimeoutList<T>,
    requests: Receiver<ClientRequest<T>>,
    clock: Box<dyn Clock>,
    pool: Option<AlarmPool<T>>,
    open_clients: usize,
    stopped: bool,
    next_due: Tick,
}

impl<T> std::fmt::Debug for TomManager<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TomManager")
            .field("config", &self.config)
            .field("len", &self.list.len())
            .field("open_clients", &self.open_clients)
            .field("stopped", &self.stopped)
            .finish()
    }
}

/// Create a manager with default settings and return it with its first
/// client handle. `pool_size == 0` selects the mode without alarm scheduler.
pub fn tom_init<T: Clone>(
    default_action: ActionDescriptor<T>,
    clock: impl Clock + 'static,
    pool_size: usize,
) -> (TomManager<T>, TomHandle<T>) {
    TomManager::new(TomConfig::default().with_pool(pool_size), clock, default_action)
}

impl<T: Clone> TomManager<T> {
    pub fn new(
        config: TomConfig,
        clock: impl Clock + 'static,
        default_action: ActionDescriptor<T>,
    ) -> (Self, TomHandle<T>) {
        assert!(config.tm_cycle >= 1, "TM_CYCLE must be at least one tick");
        let (tx, rx) = mpsc::channel();
        let pool = (config.pool_size > 0).then(|| {
            AlarmPool::new(config.pool_size, config.pool_capacity, config.alarm_latency)
        });
        let next_due = clock.now();
        let handle = TomHandle {
            manager_id: config.manager_id,
            tx,
            default_action,
            closed: false,
        };
        let manager = Self {
            config,
            list: TimeoutList::new(),
            requests: rx,
            clock: Box::new(clock),
            pool,
            open_clients: 1,
            stopped: false,
            next_due,
        };
        (manager, handle)
    }

    pub fn id(&self) -> u32 {
        self.config.manager_id
    }

    pub fn config(&self) -> &TomConfig {
        &self.config
    }

    pub fn list(&self) -> &TimeoutList<T> {
        &self.list
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn open_clients(&self) -> usize {
        self.open_clients
    }

    pub fn pool(&self) -> Option<&AlarmPool<T>> {
        self.pool.as_ref()
    }

    /// Run a cycle if one is due at the clock's current tick.
    pub fn poll(&mut self) -> Option<CycleReport<T>> {
        let now = self.clock.now();
        if self.stopped || now < self.next_due {
            return None;
        }
        self.next_due = now + self.config.tm_cycle;
        Some(self.cycle())
    }

    /// One manager cycle at the clock's current tick, due or not.
    pub fn cycle(&mut self) -> CycleReport<T> {
        let now = self.clock.now();
        let mut report = CycleReport::new(now);
        if self.stopped {
            return report;
        }
        self.serve_requests(now, &mut report);
        if self.stopped {
            return report;
        }

        let drained = match self.list.advance(now) {
            Ok(d) => d,
            Err(e) => {
                log::error!("manager {}: {e}", self.config.manager_id);
                report.errors.push(e.into());
                return report;
            }
        };
        let mut inline = Vec::new();
        for expired in drained.into_drain_order() {
            let t = expired.timeout;
            if t.is_enabled() {
                report.fired.push(t.id());
                let alarm = Alarm::from_timeout(&t, now);
                match self.pool.as_mut() {
                    Some(pool) => {
                        if let Err(PoolFull(a)) = pool.submit(alarm) {
                            log::warn!(
                                "manager {}: alarm queue full, dropping {}",
                                self.config.manager_id,
                                a.timeout
                            );
                            report.dropped_alarms.push(a.timeout);
                        }
                    }
                    None => inline.push(alarm),
                }
            }
            if t.is_cyclic() {
                let id = t.id();
                match self.list.insert(t, now) {
                    Ok(_) => report.reinserted.push(id),
                    Err(e) => report.errors.push(e.into()),
                }
            }
        }
        report.emitted = match self.pool.as_mut() {
            Some(pool) => pool.step(now),
            None => inline,
        };
        report
    }

    fn serve_requests(&mut self, now: Tick, report: &mut CycleReport<T>) {
        loop {
            let req = match self.requests.try_recv() {
                Ok(req) => req,
                Err(_) => return,
            };
            report.requests_served += 1;
            let result = if self.stopped {
                Err(TomError::Closed)
            } else {
                match req.kind {
                    RequestKind::Timer(cmd) => self.apply(cmd, now).map_err(TomError::from),
                    RequestKind::Attach => {
                        self.open_clients += 1;
                        Ok(())
                    }
                    RequestKind::Close => {
                        self.open_clients = self.open_clients.saturating_sub(1);
                        if self.open_clients == 0 {
                            self.stopped = true;
                        }
                        Ok(())
                    }
                }
            };
            if let Err(e) = &result {
                log::debug!("manager {}: request failed: {e}", self.config.manager_id);
                report.errors.push(e.clone());
            }
            // A client that dropped its Ack does not care about the reply.
            let _ = req.reply.send(result);
        }
    }

    fn apply(&mut self, cmd: TimerCommand<T>, now: Tick) -> Result<(), TimeoutError> {
        match cmd {
            TimerCommand::Insert(t) => self.list.insert(t, now).map(drop),
            TimerCommand::Delete(id) => self.list.delete(id, now).map(drop),
            TimerCommand::Renew(t) => self.list.renew(t, now).map(drop),
            TimerCommand::Enable(id) => self.list.enable(id),
            TimerCommand::Disable(id) => self.list.disable(id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(pool: usize) -> (VirtualClock, TomManager<&'static str>, TomHandle<&'static str>) {
        let clock = VirtualClock::new();
        let (m, h) = tom_init(ActionDescriptor::new("my_alarm", NodeId(0)), clock.clone(), pool);
        (clock, m, h)
    }

    fn run(clock: &VirtualClock, m: &mut TomManager<&'static str>, until: Tick) -> Vec<(Tick, Alarm<&'static str>)> {
        let mut out = Vec::new();
        while clock.now() <= until {
            if let Some(r) = m.poll() {
                out.extend(r.emitted.into_iter().map(|a| (a.fired_at, a)));
            }
            clock.advance_by(1);
        }
        out
    }

    #[test]
    fn client_script_is_acknowledged() {
        let (clock, mut m, mut h) = setup(0);
        let t1 = h.declare(TimeoutId::new(1, 1), true, true, 10).unwrap();
        let mut t2 = h.declare(TimeoutId::new(2, 1), false, true, 20).unwrap();
        let mut t3 = h.declare(TimeoutId::new(3, 1), true, false, 30).unwrap();
        t3.set_action(ActionDescriptor::new("another_alarm", NodeId(0)));

        let mut acks = vec![h.insert(&t1).unwrap(), h.insert(&t2).unwrap(), h.insert(&t3).unwrap()];
        acks.push(h.enable(t3.id()).unwrap());
        t2.set_deadline(25).unwrap();
        acks.push(h.renew(&t2).unwrap());
        acks.push(h.delete(t1.id()).unwrap());
        acks.push(h.close());

        let r = m.poll().unwrap();
        assert_eq!(r.requests_served, 7);
        assert!(r.errors.is_empty());
        for mut a in acks {
            assert_eq!(a.try_result(), Some(Ok(())));
        }
        assert!(m.is_stopped());
        clock.advance_to(5);
        assert!(m.poll().is_none());
    }

    #[test]
    fn errors_are_replied_and_manager_continues() {
        let (clock, mut m, h) = setup(0);
        let t = h.declare(TimeoutId::new(1, 0), false, true, 5).unwrap();
        let mut dup_a = h.insert(&t).unwrap();
        let mut dup_b = h.insert(&t).unwrap();
        let mut missing = h.delete(TimeoutId::new(9, 9)).unwrap();
        assert!(dup_a.try_result().is_none());
        m.poll();
        assert_eq!(dup_a.try_result(), Some(Ok(())));
        assert_eq!(
            dup_b.try_result(),
            Some(Err(TomError::Timeout(TimeoutError::DuplicateId(t.id()))))
        );
        assert_eq!(
            missing.try_result(),
            Some(Err(TomError::Timeout(TimeoutError::NotFound(TimeoutId::new(9, 9)))))
        );
        let fired = run(&clock, &mut m, 10);
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].0, 5);
    }

    #[test]
    fn cyclic_fires_every_deadline() {
        let (clock, mut m, h) = setup(0);
        let t = h.declare(TimeoutId::new(1, 0), true, true, 5).unwrap();
        h.insert(&t).unwrap();
        let ticks: Vec<Tick> = run(&clock, &mut m, 20).into_iter().map(|(k, _)| k).collect();
        assert_eq!(ticks, [5, 10, 15, 20]);
    }

    #[test]
    fn non_cyclic_fires_once_then_leaves() {
        let (clock, mut m, h) = setup(0);
        let t = h.declare(TimeoutId::new(1, 0), false, true, 3).unwrap();
        h.insert(&t).unwrap();
        assert_eq!(run(&clock, &mut m, 20).len(), 1);
        assert!(m.list().residuals(clock.now()).is_empty());
    }

    #[test]
    fn disabled_cyclic_never_fires_but_stays_armed() {
        let (clock, mut m, h) = setup(0);
        let t = h.declare(TimeoutId::new(1, 0), true, false, 5).unwrap();
        h.insert(&t).unwrap();
        let mut reinserted = 0;
        let mut emitted = 0;
        while clock.now() <= 20 {
            if let Some(r) = m.poll() {
                reinserted += r.reinserted.len();
                emitted += r.emitted.len();
                assert!(r.fired.is_empty());
            }
            clock.advance_by(1);
        }
        assert_eq!(emitted, 0);
        assert_eq!(reinserted, 4);
        assert!(m.list().contains(t.id()));
    }

    #[test]
    fn coarse_cycle_drifts_cyclic_timeouts() {
        let clock = VirtualClock::new();
        let (mut m, h) = TomManager::new(
            TomConfig::default().with_tm_cycle(4),
            clock.clone(),
            ActionDescriptor::new("a", NodeId(0)),
        );
        let t = h.declare(TimeoutId::new(1, 0), true, true, 5).unwrap();
        h.insert(&t).unwrap();
        let ticks: Vec<Tick> = run(&clock, &mut m, 30).into_iter().map(|(k, _)| k).collect();
        // expiries processed at 8, re-armed for 13, processed at 16, ...
        assert_eq!(ticks, [8, 16, 24]);
    }

    #[test]
    fn close_then_insert_is_refused() {
        let (_clock, mut m, mut h) = setup(0);
        let t = h.declare(TimeoutId::new(1, 0), false, true, 3).unwrap();
        let mut c = h.close();
        assert_eq!(h.insert(&t).unwrap_err(), TomError::Closed);
        let mut again = h.close();
        assert_eq!(again.try_result(), Some(Ok(())));
        m.poll();
        assert_eq!(c.try_result(), Some(Ok(())));
        assert!(m.is_stopped());
    }

    #[test]
    fn second_client_keeps_manager_alive() {
        let (clock, mut m, mut a) = setup(0);
        let b = a.attach().unwrap();
        a.close();
        m.poll();
        assert!(!m.is_stopped());
        assert_eq!(m.open_clients(), 1);
        let t = b.declare(TimeoutId::new(4, 0), false, true, 2).unwrap();
        let mut ack = b.insert(&t).unwrap();
        clock.advance_by(1);
        m.poll();
        assert_eq!(ack.try_result(), Some(Ok(())));
    }

    #[test]
    fn same_timeout_in_two_managers_fires_in_both() {
        let clock = VirtualClock::new();
        let action = ActionDescriptor::new("x", NodeId(3));
        let (mut m1, h1) = tom_init(action.clone(), clock.clone(), 0);
        let (mut m2, h2) = tom_init(action, clock.clone(), 4);
        let t = h1.declare(TimeoutId::new(1, 0), false, true, 7).unwrap();
        h1.insert(&t).unwrap();
        h2.insert(&t).unwrap();
        let (mut n1, mut n2) = (0, 0);
        while clock.now() <= 10 {
            n1 += m1.poll().map_or(0, |r| r.emitted.len());
            n2 += m2.poll().map_or(0, |r| r.emitted.len());
            clock.advance_by(1);
        }
        assert_eq!((n1, n2), (1, 1));
        assert_eq!(m2.pool().unwrap().size(), 4);
    }

    #[test]
    fn pool_preserves_expiry_order() {
        let clock = VirtualClock::new();
        let (mut m, h) = TomManager::new(
            TomConfig::default().with_pool(2).with_alarm_latency(2),
            clock.clone(),
            ActionDescriptor::new("a", NodeId(0)),
        );
        for (c, d) in [(1, 3), (2, 3), (3, 3), (4, 4)] {
            h.insert(&h.declare(TimeoutId::new(c, 0), false, true, d).unwrap()).unwrap();
        }
        let order: Vec<u32> = run(&clock, &mut m, 20)
            .into_iter()
            .map(|(_, a)| a.timeout.class_id)
            .collect();
        assert_eq!(order, [1, 2, 3, 4]);
    }

    #[test]
    fn instance_id_travels_with_alarm_when_asked() {
        let (clock, mut m, h) = setup(0);
        let mut t = h.declare(TimeoutId::new(5, 42), false, true, 1).unwrap();
        t.set_action(ActionDescriptor::new("peer", NodeId(1)).with_instance_id());
        h.insert(&t).unwrap();
        let fired = run(&clock, &mut m, 2);
        assert_eq!(fired[0].1.subject, Some(42));
        assert_eq!(fired[0].1.target, NodeId(1));
    }
}
