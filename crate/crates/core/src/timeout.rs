//! Relative-residual time-out list.
//!
//! Only the head of the list is compared against the clock. Its `running`
//! field is an offset from the list's `start_time`; every entry behind it
//! stores the distance from the expiry of its predecessor. With `elapsed =
//! now - start_time`, the head residual is
//!
//! ```text
//! r1 = head.running - elapsed
//! rn = r1 + sum(entries[2..=n].running)
//! ```
//!
//! and the residuals are non-decreasing along the list. Insertion and
//! deletion rewrite at most two `running` fields, so the absolute expiry of
//! every other entry is left alone.
//!
//! The list is a plain value: it never reads a clock, every operation that
//! depends on time takes `now` from the caller.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NodeId, Tick};

/// Identity of a time-out: a class plus an instance within that class.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct TimeoutId {
    pub class_id: u32,
    pub instance_id: u32,
}

impl TimeoutId {
    pub const fn new(class_id: u32, instance_id: u32) -> Self {
        Self {
            class_id,
            instance_id,
        }
    }
}

impl std::fmt::Display for TimeoutId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.class_id, self.instance_id)
    }
}

/// What happens when a time-out fires: exactly one message of type
/// `message_type` is sent to `target`.
///
/// There is no callback here on purpose. Alarms are data and the receiver
/// decides what to do with them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDescriptor<T> {
    pub message_type: T,
    pub target: NodeId,
    /// When set, the fired message names the time-out's instance id as its
    /// subject (e.g. the peer index of a per-peer watch).
    pub carries_instance_id: bool,
}

impl<T> ActionDescriptor<T> {
    pub fn new(message_type: T, target: NodeId) -> Self {
        Self {
            message_type,
            target,
            carries_instance_id: false,
        }
    }

    pub fn with_instance_id(mut self) -> Self {
        self.carries_instance_id = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeoutError {
    #[error("deadline must be at least one tick")]
    ZeroDeadline,
    #[error("time-out {0} is already in the list")]
    DuplicateId(TimeoutId),
    #[error("time-out {0} is not in the list")]
    NotFound(TimeoutId),
    #[error("clock went backwards: last seen {last}, got {now}")]
    ClockRegression { last: Tick, now: Tick },
}

/// A declared time-out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeout<T> {
    id: TimeoutId,
    deadline: Tick,
    running: Tick,
    cyclic: bool,
    enabled: bool,
    action: ActionDescriptor<T>,
}

impl<T> Timeout<T> {
    /// Declare a time-out. It is not attached to any list yet.
    pub fn declare(
        id: TimeoutId,
        cyclic: bool,
        enabled: bool,
        deadline: Tick,
        action: ActionDescriptor<T>,
    ) -> Result<Self, TimeoutError> {
        if deadline < 1 {
            return Err(TimeoutError::ZeroDeadline);
        }
        Ok(Self {
            id,
            deadline,
            running: 0,
            cyclic,
            enabled,
            action,
        })
    }

    pub fn id(&self) -> TimeoutId {
        self.id
    }

    pub fn deadline(&self) -> Tick {
        self.deadline
    }

    /// Meaningful only while the value sits inside a list.
    pub fn running(&self) -> Tick {
        self.running
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn action(&self) -> &ActionDescriptor<T> {
        &self.action
    }

    /// Takes effect at the next insert or renew. A copy already sitting in a
    /// list keeps its schedule.
    pub fn set_deadline(&mut self, deadline: Tick) -> Result<(), TimeoutError> {
        if deadline < 1 {
            return Err(TimeoutError::ZeroDeadline);
        }
        self.deadline = deadline;
        Ok(())
    }

    pub fn set_action(&mut self, action: ActionDescriptor<T>) {
        self.action = action;
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }
}

/// Where an insertion landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertCase {
    /// The list was empty; `start_time` was reset.
    First,
    Top,
    Middle,
    End,
}

/// Which entry a deletion removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteCase {
    Singleton,
    Top,
    Middle,
    End,
}

/// A time-out removed from the list because its residual reached zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expired<T> {
    pub timeout: Timeout<T>,
    /// The tick the time-out was scheduled for (not the tick it was drained).
    pub expiry: Tick,
    /// Position in the drain order of the `advance` call that produced it.
    pub drain_index: usize,
}

/// Result of [`TimeoutList::advance`], split by whether the time-out fires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drained<T> {
    pub expired: Vec<Expired<T>>,
    /// Disabled time-outs leave the list like any other but must not fire.
    pub expired_disabled: Vec<Expired<T>>,
}

impl<T> Default for Drained<T> {
    fn default() -> Self {
        Self {
            expired: Vec::new(),
            expired_disabled: Vec::new(),
        }
    }
}

impl<T> Drained<T> {
    pub fn is_empty(&self) -> bool {
        self.expired.is_empty() && self.expired_disabled.is_empty()
    }

    pub fn len(&self) -> usize {
        self.expired.len() + self.expired_disabled.len()
    }

    /// Both partitions merged back into drain order.
    pub fn into_drain_order(self) -> Vec<Expired<T>> {
        let mut all = self.expired;
        all.extend(self.expired_disabled);
        all.sort_by_key(|e| e.drain_index);
        all
    }
}

/// Structured record of one list transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListEvent {
    pub op: ListOp,
    pub id: Option<TimeoutId>,
    pub now: Option<Tick>,
    pub residuals: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListOp {
    Insert(InsertCase),
    Delete(DeleteCase),
    Expire,
    Enable,
    Disable,
}

/// The ordered list of pending time-outs.
#[derive(Debug, Clone)]
pub struct TimeoutList<T> {
    entries: VecDeque<Timeout<T>>,
    start_time: Tick,
    last_now: Option<Tick>,
    events: Option<Vec<ListEvent>>,
}

impl<T> Default for TimeoutList<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> TimeoutList<T> {
    pub fn new() -> Self {
        Self {
            entries: VecDeque::new(),
            start_time: 0,
            last_now: None,
            events: None,
        }
    }

    /// Start recording a [`ListEvent`] for every transition.
    pub fn with_events(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn take_events(&mut self) -> Vec<ListEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn start_time(&self) -> Tick {
        self.start_time
    }

    pub fn entries(&self) -> impl Iterator<Item = &Timeout<T>> {
        self.entries.iter()
    }

    pub fn contains(&self, id: TimeoutId) -> bool {
        self.position(id).is_some()
    }

    pub fn get(&self, id: TimeoutId) -> Option<&Timeout<T>> {
        self.entries.iter().find(|t| t.id == id)
    }

    fn position(&self, id: TimeoutId) -> Option<usize> {
        self.entries.iter().position(|t| t.id == id)
    }

    /// Absolute expiry tick of every entry, in list order.
    pub fn expiries(&self) -> Vec<(TimeoutId, Tick)> {
        let mut at = self.start_time;
        self.entries
            .iter()
            .map(|t| {
                at += t.running;
                (t.id, at)
            })
            .collect()
    }

    pub fn expiry_of(&self, id: TimeoutId) -> Option<Tick> {
        self.expiries()
            .into_iter()
            .find_map(|(tid, at)| (tid == id).then_some(at))
    }

    /// `[r1, .., rm]` at `now`. Negative values mean the entry is overdue and
    /// will be drained by the next [`advance`](Self::advance).
    pub fn residuals(&self, now: Tick) -> Vec<i64> {
        let mut r = self.start_time as i64 - now as i64;
        self.entries
            .iter()
            .map(|t| {
                r += t.running as i64;
                r
            })
            .collect()
    }

    fn observe(&mut self, now: Tick) -> Result<(), TimeoutError> {
        match self.last_now {
            Some(last) if now < last => Err(TimeoutError::ClockRegression { last, now }),
            _ => {
                self.last_now = Some(now);
                Ok(())
            }
        }
    }

    fn record(&mut self, op: ListOp, id: Option<TimeoutId>, now: Option<Tick>) {
        if self.events.is_none() {
            return;
        }
        let residuals = self.residuals(now.or(self.last_now).unwrap_or(self.start_time));
        if let Some(events) = self.events.as_mut() {
            events.push(ListEvent {
                op,
                id,
                now,
                residuals,
            });
        }
    }

    /// Insert `t` so that it expires `t.deadline()` ticks after `now`.
    pub fn insert(&mut self, mut t: Timeout<T>, now: Tick) -> Result<InsertCase, TimeoutError> {
        if t.deadline < 1 {
            return Err(TimeoutError::ZeroDeadline);
        }
        if self.contains(t.id) {
            return Err(TimeoutError::DuplicateId(t.id));
        }
        self.observe(now)?;
        let id = t.id;
        let (case, slot) = self.place(&mut t, now);
        self.entries.insert(slot, t);
        self.record(ListOp::Insert(case), Some(id), Some(now));
        Ok(case)
    }

    // Sets t.running, rewrites the successor and returns the slot for t.
    fn place(&mut self, t: &mut Timeout<T>, now: Tick) -> (InsertCase, usize) {
        let Some(head) = self.entries.front_mut() else {
            self.start_time = now;
            t.running = t.deadline;
            return (InsertCase::First, 0);
        };
        let elapsed = now - self.start_time;
        let deadline = t.deadline as i64;
        let r1 = head.running as i64 - elapsed as i64;
        if deadline < r1 {
            t.running = t.deadline + elapsed;
            head.running = (r1 - deadline) as Tick;
            return (InsertCase::Top, 0);
        }
        // Find j with r_j <= deadline < r_{j+1}.
        let mut rj = r1;
        for next in 1..self.entries.len() {
            let r_next = rj + self.entries[next].running as i64;
            if deadline < r_next {
                t.running = (deadline - rj) as Tick;
                self.entries[next].running -= t.running;
                return (InsertCase::Middle, next);
            }
            rj = r_next;
        }
        t.running = (deadline - rj) as Tick;
        (InsertCase::End, self.entries.len())
    }

    /// Remove `id` without disturbing anyone else's expiry.
    pub fn delete(&mut self, id: TimeoutId, now: Tick) -> Result<Timeout<T>, TimeoutError> {
        let pos = self.position(id).ok_or(TimeoutError::NotFound(id))?;
        self.observe(now)?;
        let (removed, case) = self.remove_at(pos);
        self.record(ListOp::Delete(case), Some(id), Some(now));
        Ok(removed)
    }

    fn remove_at(&mut self, pos: usize) -> (Timeout<T>, DeleteCase) {
        let len = self.entries.len();
        let case = match (pos, len) {
            (0, 1) => DeleteCase::Singleton,
            (0, _) => DeleteCase::Top,
            (p, l) if p + 1 == l => DeleteCase::End,
            _ => DeleteCase::Middle,
        };
        let removed = self.entries.remove(pos).expect("position is in range");
        if let Some(successor) = self.entries.get_mut(pos) {
            successor.running += removed.running;
        }
        (removed, case)
    }

    /// Remove every entry whose residual is `<= 0` at `now`, head first.
    /// Cyclic time-outs are not re-armed here.
    pub fn advance(&mut self, now: Tick) -> Result<Drained<T>, TimeoutError> {
        self.observe(now)?;
        let mut drained = Drained::default();
        let mut index = 0;
        while let Some(head) = self.entries.front() {
            let expiry = self.start_time + head.running;
            if expiry > now {
                break;
            }
            let (timeout, _) = self.remove_at(0);
            let id = timeout.id;
            let expired = Expired {
                timeout,
                expiry,
                drain_index: index,
            };
            index += 1;
            if expired.timeout.enabled {
                drained.expired.push(expired);
            } else {
                drained.expired_disabled.push(expired);
            }
            self.record(ListOp::Expire, Some(id), Some(now));
        }
        Ok(drained)
    }

    /// Delete then insert; an absent time-out is simply inserted.
    pub fn renew(&mut self, t: Timeout<T>, now: Tick) -> Result<InsertCase, TimeoutError> {
        if t.deadline < 1 {
            return Err(TimeoutError::ZeroDeadline);
        }
        if let Some(pos) = self.position(t.id) {
            self.observe(now)?;
            let (_, case) = self.remove_at(pos);
            self.record(ListOp::Delete(case), Some(t.id), Some(now));
        }
        self.insert(t, now)
    }

    pub fn enable(&mut self, id: TimeoutId) -> Result<(), TimeoutError> {
        self.set_enabled(id, true)
    }

    pub fn disable(&mut self, id: TimeoutId) -> Result<(), TimeoutError> {
        self.set_enabled(id, false)
    }

    fn set_enabled(&mut self, id: TimeoutId, enabled: bool) -> Result<(), TimeoutError> {
        let pos = self.position(id).ok_or(TimeoutError::NotFound(id))?;
        self.entries[pos].enabled = enabled;
        let op = if enabled {
            ListOp::Enable
        } else {
            ListOp::Disable
        };
        self.record(op, Some(id), None);
        Ok(())
    }
}
