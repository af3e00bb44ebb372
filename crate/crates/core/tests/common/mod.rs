//! Shared test support: an absolute-time reference for the time-out list and
//! a driver that replays random operation sequences against both.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use tomfd::timeout::{ActionDescriptor, Timeout, TimeoutId, TimeoutList};
use tomfd::types::{NodeId, Tick};

/// Reference model: every pending time-out keeps its absolute expiry tick.
/// Ordered by `(expiry, insertion sequence)`.
#[derive(Debug, Default, Clone)]
pub struct Oracle {
    pending: BTreeMap<TimeoutId, Entry>,
    seq: u64,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    expiry: Tick,
    seq: u64,
    deadline: Tick,
    cyclic: bool,
    enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fired {
    pub id: TimeoutId,
    pub expiry: Tick,
    pub enabled: bool,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: TimeoutId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn insert(&mut self, id: TimeoutId, deadline: Tick, cyclic: bool, enabled: bool, now: Tick) -> bool {
        if deadline == 0 || self.pending.contains_key(&id) {
            return false;
        }
        self.seq += 1;
        self.pending.insert(
            id,
            Entry {
                expiry: now + deadline,
                seq: self.seq,
                deadline,
                cyclic,
                enabled,
            },
        );
        true
    }

    pub fn delete(&mut self, id: TimeoutId) -> bool {
        self.pending.remove(&id).is_some()
    }

    pub fn renew(&mut self, id: TimeoutId, deadline: Tick, cyclic: bool, enabled: bool, now: Tick) -> bool {
        self.pending.remove(&id);
        self.insert(id, deadline, cyclic, enabled, now)
    }

    pub fn set_enabled(&mut self, id: TimeoutId, enabled: bool) -> bool {
        match self.pending.get_mut(&id) {
            Some(e) => {
                e.enabled = enabled;
                true
            }
            None => false,
        }
    }

    /// `(id, expiry)` in expiry order.
    pub fn schedule(&self) -> Vec<(TimeoutId, Tick)> {
        let mut v: Vec<_> = self.pending.iter().map(|(id, e)| (e.expiry, e.seq, *id)).collect();
        v.sort();
        v.into_iter().map(|(at, _, id)| (id, at)).collect()
    }

    /// Drain everything due at `now`; cyclic entries come back with a fresh
    /// deadline counted from `now`.
    pub fn advance(&mut self, now: Tick) -> Vec<Fired> {
        let mut due: Vec<_> = self
            .pending
            .iter()
            .filter(|(_, e)| e.expiry <= now)
            .map(|(id, e)| (e.expiry, e.seq, *id))
            .collect();
        due.sort();
        let mut out = Vec::new();
        let mut again = Vec::new();
        for (expiry, _, id) in due {
            let e = self.pending.remove(&id).expect("listed above");
            out.push(Fired {
                id,
                expiry,
                enabled: e.enabled,
            });
            if e.cyclic {
                again.push((id, e));
            }
        }
        for (id, e) in again {
            self.insert(id, e.deadline, true, e.enabled, now);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert { class: u32, deadline: Tick, cyclic: bool, enabled: bool },
    Delete { class: u32 },
    Renew { class: u32, deadline: Tick, cyclic: bool },
    Toggle { class: u32, enable: bool },
    Advance { dt: Tick },
}

pub const MAX_TIMEOUTS: u32 = 50;

fn id(class: u32) -> TimeoutId {
    TimeoutId::new(class, 0)
}

pub fn random_ops<R: Rng>(rng: &mut R, len: usize) -> Vec<Op> {
    (0..len)
        .map(|_| {
            let class = rng.gen_range(0..MAX_TIMEOUTS);
            match rng.gen_range(0..10) {
                0..=3 => Op::Insert {
                    class,
                    deadline: rng.gen_range(1..=400),
                    cyclic: rng.gen_bool(0.3),
                    enabled: rng.gen_bool(0.8),
                },
                4 => Op::Delete { class },
                5 => Op::Renew {
                    class,
                    deadline: rng.gen_range(1..=400),
                    cyclic: rng.gen_bool(0.3),
                },
                6 => Op::Toggle {
                    class,
                    enable: rng.gen_bool(0.5),
                },
                _ => Op::Advance {
                    dt: rng.gen_range(0..=120),
                },
            }
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DriveStats {
    pub ops: usize,
    pub fired: usize,
    pub mismatches: usize,
    pub violations: usize,
}

/// Replay `ops` on a [`TimeoutList`] and the oracle. Equivalence failures
/// and structural-invariant failures are counted separately; the first of
/// each is returned as text.
pub fn drive(ops: &[Op]) -> (DriveStats, Option<String>, Option<String>) {
    let mut list: TimeoutList<()> = TimeoutList::new();
    let mut oracle = Oracle::new();
    let mut now: Tick = 0;
    let mut stats = DriveStats::default();
    let mut first_mismatch = None;
    let mut first_violation = None;

    macro_rules! mismatch {
        ($($arg:tt)*) => {{
            stats.mismatches += 1;
            first_mismatch.get_or_insert_with(|| format!($($arg)*));
        }};
    }
    macro_rules! violation {
        ($($arg:tt)*) => {{
            stats.violations += 1;
            first_violation.get_or_insert_with(|| format!($($arg)*));
        }};
    }

    for (step, op) in ops.iter().enumerate() {
        stats.ops += 1;
        let before: BTreeMap<TimeoutId, Tick> = list.expiries().into_iter().collect();
        let start_before = list.start_time();
        let was_empty = list.is_empty();
        let mut touched = None;

        match *op {
            Op::Insert { class, deadline, cyclic, enabled } => {
                touched = Some(id(class));
                let t = Timeout::declare(id(class), cyclic, enabled, deadline, ActionDescriptor::new((), NodeId(0)))
                    .expect("positive deadline");
                let a = list.insert(t, now).is_ok();
                let b = oracle.insert(id(class), deadline, cyclic, enabled, now);
                if a != b {
                    mismatch!("step {step}: insert {class} list={a} oracle={b}");
                }
            }
            Op::Delete { class } => {
                touched = Some(id(class));
                let a = list.delete(id(class), now).is_ok();
                let b = oracle.delete(id(class));
                if a != b {
                    mismatch!("step {step}: delete {class} list={a} oracle={b}");
                }
            }
            Op::Renew { class, deadline, cyclic } => {
                touched = Some(id(class));
                let enabled = list.get(id(class)).is_none_or(|t| t.is_enabled());
                let t = Timeout::declare(id(class), cyclic, enabled, deadline, ActionDescriptor::new((), NodeId(0)))
                    .expect("positive deadline");
                let a = list.renew(t, now).is_ok();
                let b = oracle.renew(id(class), deadline, cyclic, enabled, now);
                if a != b {
                    mismatch!("step {step}: renew {class} list={a} oracle={b}");
                }
            }
            Op::Toggle { class, enable } => {
                let a = if enable { list.enable(id(class)) } else { list.disable(id(class)) }.is_ok();
                let b = oracle.set_enabled(id(class), enable);
                if a != b {
                    mismatch!("step {step}: toggle {class} list={a} oracle={b}");
                }
            }
            Op::Advance { dt } => {
                now += dt;
                let drained = list.advance(now).expect("clock only moves forward");
                let order = drained.into_drain_order();
                let got: Vec<(TimeoutId, Tick, bool)> = order
                    .iter()
                    .map(|e| (e.timeout.id(), e.expiry, e.timeout.is_enabled()))
                    .collect();
                let want: Vec<(TimeoutId, Tick, bool)> =
                    oracle.advance(now).into_iter().map(|f| (f.id, f.expiry, f.enabled)).collect();
                stats.fired += got.len();
                if got != want {
                    mismatch!("step {step}: advance to {now}: list {got:?} oracle {want:?}");
                }
                for e in order {
                    if e.timeout.is_cyclic() {
                        if let Err(err) = list.insert(e.timeout, now) {
                            mismatch!("step {step}: re-arm failed: {err}");
                        }
                    }
                }
            }
        }

        if list.expiries() != oracle.schedule() {
            mismatch!(
                "step {step} ({op:?}): list {:?} oracle {:?}",
                list.expiries(),
                oracle.schedule()
            );
        }

        // Insertion and deletion leave every other expiry where it was.
        if let Some(t) = touched {
            let after: BTreeMap<TimeoutId, Tick> = list.expiries().into_iter().collect();
            for (other, at) in &before {
                if *other != t {
                    if let Some(now_at) = after.get(other) {
                        if now_at != at {
                            violation!("step {step}: {op:?} moved {other} from {at} to {now_at}");
                        }
                    } else {
                        violation!("step {step}: {op:?} lost {other}");
                    }
                }
            }
        }

        // start_time only moves when an operation inserts into an empty
        // list: a first insertion, a renewal of the sole entry, or cyclic
        // re-arming after a full drain.
        let emptied = match *op {
            Op::Insert { .. } => was_empty,
            Op::Renew { class, .. } => was_empty || (before.len() == 1 && before.contains_key(&id(class))),
            Op::Advance { .. } => was_empty || before.values().all(|&at| at <= now),
            Op::Delete { .. } | Op::Toggle { .. } => false,
        };
        if emptied && !list.is_empty() {
            if list.start_time() != now {
                violation!("step {step}: insertion into empty list set start_time {} at {now}", list.start_time());
            }
        } else if !list.is_empty() && !was_empty && list.start_time() != start_before {
            violation!("step {step}: {op:?} moved start_time {start_before} -> {}", list.start_time());
        }

        // Residuals never decrease along the list, and nothing overdue stays.
        let r = list.residuals(now);
        if r.windows(2).any(|w| w[0] > w[1]) {
            violation!("step {step}: residuals not monotone: {r:?}");
        }
        if matches!(op, Op::Advance { .. }) && r.first().is_some_and(|&r1| r1 <= 0) {
            violation!("step {step}: head overdue after advance: {r:?}");
        }
    }
    (stats, first_mismatch, first_violation)
}
