//! Virtual-time message network with a deterministic link model.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::types::{NodeId, Tick};

/// Matches one direction of traffic; `None` is a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkSelector {
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
}

impl LinkSelector {
    pub fn any() -> Self {
        Self { src: None, dst: None }
    }

    pub fn between(src: NodeId, dst: NodeId) -> Self {
        Self {
            src: Some(src),
            dst: Some(dst),
        }
    }

    pub fn matches(&self, src: NodeId, dst: NodeId) -> bool {
        self.src.is_none_or(|s| s == src) && self.dst.is_none_or(|d| d == dst)
    }
}

/// Messages sent on a matching link during `[from, to]` are lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DropWindow {
    pub link: LinkSelector,
    pub from: Tick,
    pub to: Tick,
}

/// Messages sent on a matching link during `[from, to]` take `extra` more
/// ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DelaySpike {
    pub link: LinkSelector,
    pub from: Tick,
    pub to: Tick,
    pub extra: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkModel {
    pub base_delay: Tick,
    /// Each delivery adds a uniform draw from `0..=jitter`.
    pub jitter: Tick,
    pub seed: u64,
    pub drops: Vec<DropWindow>,
    pub spikes: Vec<DelaySpike>,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            base_delay: 1,
            jitter: 0,
            seed: 0,
            drops: Vec::new(),
            spikes: Vec::new(),
        }
    }
}

impl LinkModel {
    pub fn new(base_delay: Tick, jitter: Tick, seed: u64) -> Self {
        Self {
            base_delay,
            jitter,
            seed,
            ..Self::default()
        }
    }

    pub fn with_drop(mut self, link: LinkSelector, from: Tick, to: Tick) -> Self {
        self.drops.push(DropWindow { link, from, to });
        self
    }

    pub fn with_spike(mut self, link: LinkSelector, from: Tick, to: Tick, extra: Tick) -> Self {
        self.spikes.push(DelaySpike {
            link,
            from,
            to,
            extra,
        });
        self
    }

    /// Largest delay any message can see.
    pub fn max_delay(&self) -> Tick {
        self.base_delay + self.jitter + self.spikes.iter().map(|s| s.extra).max().unwrap_or(0)
    }

    fn dropped(&self, src: NodeId, dst: NodeId, now: Tick) -> bool {
        self.drops
            .iter()
            .any(|d| d.link.matches(src, dst) && (d.from..=d.to).contains(&now))
    }

    fn extra(&self, src: NodeId, dst: NodeId, now: Tick) -> Tick {
        self.spikes
            .iter()
            .filter(|s| s.link.matches(src, dst) && (s.from..=s.to).contains(&now))
            .map(|s| s.extra)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<M> {
    pub deliver_at: Tick,
    pub seq: u64,
    pub src: NodeId,
    pub target: NodeId,
    pub sent_at: Tick,
    /// Self-addressed alarm deliveries bypass the link model.
    pub local: bool,
    pub message: M,
}

impl<M> SimEvent<M> {
    fn key(&self) -> (Tick, u64) {
        (self.deliver_at, self.seq)
    }
}

impl<M: Eq> Ord for SimEvent<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl<M: Eq> PartialOrd for SimEvent<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub local: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug)]
pub struct Network<M> {
    nodes: usize,
    link: LinkModel,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<SimEvent<M>>>,
    seq: u64,
    stats: NetStats,
}

impl<M: Eq + Clone> Network<M> {
    pub fn new(nodes: usize, link: LinkModel) -> Self {
        Self {
            nodes,
            rng: ChaCha8Rng::seed_from_u64(link.seed),
            link,
            queue: BinaryHeap::new(),
            seq: 0,
            stats: NetStats::default(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.iter().filter(|e| !e.0.local).count()
    }

    fn check(&self, n: NodeId) -> Result<(), NetError> {
        if n.index() < self.nodes {
            Ok(())
        } else {
            Err(NetError::UnknownNode(n))
        }
    }

    fn push(&mut self, src: NodeId, target: NodeId, now: Tick, deliver_at: Tick, local: bool, message: M) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(SimEvent {
            deliver_at,
            seq,
            src,
            target,
            sent_at: now,
            local,
            message,
        }));
        seq
    }

    /// Send over the link model. Returns the event's sequence number, or
    /// `None` if the link dropped it.
    pub fn send(&mut self, src: NodeId, dst: NodeId, message: M, now: Tick) -> Result<Option<u64>, NetError> {
        self.check(src)?;
        self.check(dst)?;
        self.stats.sent += 1;
        if self.link.dropped(src, dst, now) {
            self.stats.dropped += 1;
            return Ok(None);
        }
        let jitter = if self.link.jitter > 0 {
            self.rng.gen_range(0..=self.link.jitter)
        } else {
            0
        };
        let delay = self.link.base_delay + jitter + self.link.extra(src, dst, now);
        Ok(Some(self.push(src, dst, now, now + delay, false, message)))
    }

    /// Send to every node, `src` included.
    pub fn broadcast(&mut self, src: NodeId, message: M, now: Tick) -> Result<(), NetError> {
        for dst in 0..self.nodes as u32 {
            self.send(src, NodeId(dst), message.clone(), now)?;
        }
        Ok(())
    }

    /// Count a message that its sender could not emit (a muted node).
    pub fn drop_at_source(&mut self, src: NodeId) -> Result<(), NetError> {
        self.check(src)?;
        self.stats.sent += 1;
        self.stats.dropped += 1;
        Ok(())
    }

    /// Queue a self-addressed event for delivery at `now`.
    pub fn deliver_local(&mut self, target: NodeId, message: M, now: Tick) -> Result<u64, NetError> {
        self.check(target)?;
        self.stats.local += 1;
        Ok(self.push(target, target, now, now, true, message))
    }

    /// Next event due at or before `now`, in `(deliver_at, seq)` order.
    pub fn pop_due(&mut self, now: Tick) -> Option<SimEvent<M>> {
        if self.queue.peek()?.0.deliver_at > now {
            return None;
        }
        let ev = self.queue.pop()?.0;
        debug_assert!(ev.deliver_at >= ev.sent_at);
        if !ev.local {
            self.stats.delivered += 1;
        }
        Some(ev)
    }
}
