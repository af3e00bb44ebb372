//! Alarm scheduler and its circular pool of alarm executors.
//!
//! The list manager hands every fired alarm to the scheduler. The scheduler
//! gives each one to the first free executor, scanning the ring from the slot
//! after the last one it used, and waits when every executor is busy. An
//! executor holds its alarm for `latency` ticks and then emits it.

use std::collections::VecDeque;

use super::Alarm;
use crate::types::Tick;

#[derive(Debug, Clone)]
struct Busy<T> {
    alarm: Alarm<T>,
    done_at: Tick,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct AlarmPool<T> {
    executors: Vec<Option<Busy<T>>>,
    cursor: usize,
    pending: VecDeque<Alarm<T>>,
    capacity: usize,
    latency: Tick,
    seq: u64,
}

/// The scheduler's queue is full; the alarm was not accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolFull<T>(pub Alarm<T>);

impl<T> AlarmPool<T> {
    pub fn new(executors: usize, capacity: usize, latency: Tick) -> Self {
        assert!(executors > 0, "an alarm pool needs at least one executor");
        Self {
            executors: (0..executors).map(|_| None).collect(),
            cursor: 0,
            pending: VecDeque::new(),
            capacity,
            latency,
            seq: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.executors.len()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn busy(&self) -> usize {
        self.executors.iter().filter(|e| e.is_some()).count()
    }

    pub fn submit(&mut self, alarm: Alarm<T>) -> Result<(), PoolFull<T>> {
        if self.pending.len() >= self.capacity {
            return Err(PoolFull(alarm));
        }
        self.pending.push_back(alarm);
        Ok(())
    }

    fn free_slot(&self) -> Option<usize> {
        let n = self.executors.len();
        (0..n)
            .map(|k| (self.cursor + k) % n)
            .find(|&i| self.executors[i].is_none())
    }

    /// Run the scheduler and the executors at `now`. Returns the alarms whose
    /// execution completed, in the order they were dispatched.
    pub fn step(&mut self, now: Tick) -> Vec<Alarm<T>> {
        let mut done: Vec<Busy<T>> = Vec::new();
        loop {
            for slot in &mut self.executors {
                if slot.as_ref().is_some_and(|b| b.done_at <= now) {
                    done.extend(slot.take());
                }
            }
            if self.pending.is_empty() {
                break;
            }
            let Some(slot) = self.free_slot() else {
                break;
            };
            let alarm = self.pending.pop_front().expect("checked non-empty");
            self.executors[slot] = Some(Busy {
                alarm,
                done_at: now + self.latency,
                seq: self.seq,
            });
            self.seq += 1;
            self.cursor = (slot + 1) % self.executors.len();
        }
        done.sort_by_key(|b| b.seq);
        done.into_iter().map(|b| b.alarm).collect()
    }
}
