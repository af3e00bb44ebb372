//! JSON-lines run traces. Field order is declaration order, so equal runs
//! give byte-identical files.

use std::io::{self, Write};

use serde::Serialize;

use crate::detector::TransitionKind;
use crate::dirnet::DirnetEvent;
use crate::types::{NodeId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TomOwner {
    Iat,
    Dirx,
    Detector,
    Injector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPhase {
    Fired,
    Applied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    TomCycle {
        tick: Tick,
        node: NodeId,
        owner: TomOwner,
        requests_served: usize,
        fired: usize,
        reinserted: usize,
    },
    Detector {
        tick: Tick,
        process: NodeId,
        transition: TransitionKind,
        q: NodeId,
        delta: Tick,
    },
    Dirnet {
        tick: Tick,
        node: NodeId,
        event: DirnetEvent,
        #[serde(skip_serializing_if = "Option::is_none")]
        subject: Option<NodeId>,
    },
    Fault {
        tick: Tick,
        node: NodeId,
        phase: FaultPhase,
        fault: &'static str,
        seq: u32,
    },
    Violation {
        tick: Tick,
        detail: String,
    },
}

impl TraceRecord {
    pub fn tick(&self) -> Tick {
        match self {
            TraceRecord::TomCycle { tick, .. }
            | TraceRecord::Detector { tick, .. }
            | TraceRecord::Dirnet { tick, .. }
            | TraceRecord::Fault { tick, .. }
            | TraceRecord::Violation { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// DIR net events as `(tick, node, event, subject)`.
    pub fn dirnet_events(&self) -> impl Iterator<Item = (Tick, NodeId, DirnetEvent, Option<NodeId>)> + '_ {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Dirnet {
                tick,
                node,
                event,
                subject,
            } => Some((*tick, *node, *event, *subject)),
            _ => None,
        })
    }

    /// Detector transitions as `(tick, process, transition, q, delta)`.
    pub fn detector_transitions(
        &self,
    ) -> impl Iterator<Item = (Tick, NodeId, TransitionKind, NodeId, Tick)> + '_ {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Detector {
                tick,
                process,
                transition,
                q,
                delta,
            } => Some((*tick, *process, *transition, *q, *delta)),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}
