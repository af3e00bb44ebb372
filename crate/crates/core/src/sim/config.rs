//! Line-oriented scenario format.
//!
//! ```text
//! # four nodes, manager on 0
//! node 0 role manager
//! node 1 role backup
//! deadline d_TEIF_A 300
//! link delay 1 jitter 0 seed 7
//! link drop 0 * 100 200          # src dst from to, `*` matches any node
//! link spike 1 0 1000 1060 150   # src dst from to extra
//! inject 1 crash_process at 5000
//! inject 2 drop_messages at 900 for 200
//! tm_cycle 1
//! duration 10000
//! ```
//!
//! A detector scenario replaces the `node` lines with
//! `detector processes <n> timeout <ticks> [period <ticks>]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::network::{LinkModel, LinkSelector};
use crate::detector::DetectorConfig;
use crate::dirnet::{Deadlines, FaultKind, FaultSpec, NodeRole};
use crate::types::{NodeId, Tick};

/// Line 0 means the file as a whole.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.reason)
        } else {
            write!(f, "config line {}: {}", self.line, self.reason)
        }
    }
}

fn err<T>(line: usize, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        reason: reason.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Dirnet { roles: Vec<NodeRole> },
    Detector { processes: usize, timeout: Tick, period: Tick },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub protocol: Protocol,
    pub deadlines: Deadlines,
    pub link: LinkModel,
    pub faults: Vec<FaultSpec>,
    pub duration: Tick,
    pub tm_cycle: Tick,
}

impl Scenario {
    pub fn nodes(&self) -> usize {
        match &self.protocol {
            Protocol::Dirnet { roles } => roles.len(),
            Protocol::Detector { processes, .. } => *processes,
        }
    }

    pub fn seed(&self) -> u64 {
        self.link.seed
    }

    pub fn detector_config(&self) -> Option<DetectorConfig> {
        match self.protocol {
            Protocol::Detector { timeout, period, .. } => {
                Some(DetectorConfig::new(timeout).with_heartbeat_period(period))
            }
            Protocol::Dirnet { .. } => None,
        }
    }

    /// The DIR net layout: `(manager, backups)`.
    pub fn dirnet_layout(&self) -> Option<(NodeId, BTreeSet<NodeId>)> {
        let Protocol::Dirnet { roles } = &self.protocol else {
            return None;
        };
        let mut mid = None;
        let mut backups = BTreeSet::new();
        for (i, r) in roles.iter().enumerate() {
            match r {
                NodeRole::Manager => mid = Some(NodeId(i as u32)),
                NodeRole::Backup => {
                    backups.insert(NodeId(i as u32));
                }
                NodeRole::Agent => {}
            }
        }
        Some((mid?, backups))
    }

    /// A DIR net scenario from roles, with default deadlines and links.
    pub fn dirnet(roles: Vec<NodeRole>, duration: Tick) -> Self {
        Self {
            protocol: Protocol::Dirnet { roles },
            deadlines: Deadlines::default(),
            link: LinkModel::default(),
            faults: Vec::new(),
            duration,
            tm_cycle: 1,
        }
    }

    /// A detector scenario with the default heartbeat period.
    pub fn detector(processes: usize, timeout: Tick, duration: Tick) -> Self {
        Self {
            protocol: Protocol::Detector {
                processes,
                timeout,
                period: DetectorConfig::new(timeout).heartbeat_period,
            },
            deadlines: Deadlines::default(),
            link: LinkModel::default(),
            faults: Vec::new(),
            duration,
            tm_cycle: 1,
        }
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_config(s)
    }
}

struct Words<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Words<'a> {
    fn word(&mut self, what: &str) -> Result<&'a str, ConfigError> {
        match self.it.next() {
            Some(w) => Ok(w),
            None => err(self.line, format!("expected {what}")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ConfigError> {
        let w = self.word(&format!("`{kw}`"))?;
        if w == kw {
            Ok(())
        } else {
            err(self.line, format!("expected `{kw}`, found `{w}`"))
        }
    }

    fn number<T: FromStr>(&mut self, what: &str) -> Result<T, ConfigError> {
        let w = self.word(what)?;
        w.parse()
            .or_else(|_| err(self.line, format!("invalid {what} `{w}`")))
    }

    fn node_or_any(&mut self, what: &str) -> Result<Option<NodeId>, ConfigError> {
        match self.word(what)? {
            "*" => Ok(None),
            w => w
                .parse()
                .map(|n| Some(NodeId(n)))
                .or_else(|_| err(self.line, format!("invalid {what} `{w}`"))),
        }
    }

    fn finish(&mut self) -> Result<(), ConfigError> {
        match self.it.next() {
            None => Ok(()),
            Some(w) => err(self.line, format!("unexpected `{w}`")),
        }
    }
}

fn parse_fault(words: &mut Words<'_>) -> Result<FaultKind, ConfigError> {
    let kind = match words.word("fault kind")? {
        "crash_process" => FaultKind::CrashProcess,
        "crash_node" => FaultKind::CrashNode,
        "hang_dirx" => FaultKind::HangDirx,
        "drop_messages" => FaultKind::DropMessages { for_ticks: None },
        other => return err(words.line, format!("unknown fault kind `{other}`")),
    };
    Ok(kind)
}

/// Parse and validate a scenario.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let mut roles: Vec<(usize, u32, NodeRole)> = Vec::new();
    let mut detector: Option<(usize, usize, Tick, Option<Tick>)> = None;
    let mut deadlines = Deadlines::default();
    let mut link = LinkModel::default();
    let mut faults: Vec<(usize, FaultSpec)> = Vec::new();
    let mut duration = None;
    let mut tm_cycle = 1;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut w = Words {
            line,
            it: content.split_whitespace(),
        };
        let Some(head) = w.it.next() else { continue };
        match head {
            "node" => {
                let id: u32 = w.number("node id")?;
                w.keyword("role")?;
                let role = w.word("role")?;
                let role = role.parse().or_else(|e: String| err(line, e))?;
                if roles.iter().any(|(_, n, _)| *n == id) {
                    return err(line, format!("node {id} declared twice"));
                }
                roles.push((line, id, role));
            }
            "deadline" => {
                let name = w.word("deadline name")?;
                let ticks: Tick = w.number("deadline ticks")?;
                if ticks == 0 {
                    return err(line, "deadlines must be at least one tick");
                }
                deadlines
                    .set(name, ticks)
                    .or_else(|_| err(line, format!("unknown deadline `{name}`")))?;
            }
            "link" => match w.word("`delay`, `drop` or `spike`")? {
                "delay" => {
                    link.base_delay = w.number("delay")?;
                    w.keyword("jitter")?;
                    link.jitter = w.number("jitter")?;
                    w.keyword("seed")?;
                    link.seed = w.number("seed")?;
                }
                "drop" => {
                    let sel = LinkSelector {
                        src: w.node_or_any("source")?,
                        dst: w.node_or_any("destination")?,
                    };
                    let from = w.number("window start")?;
                    let to = w.number("window end")?;
                    link = link.with_drop(sel, from, to);
                }
                "spike" => {
                    let sel = LinkSelector {
                        src: w.node_or_any("source")?,
                        dst: w.node_or_any("destination")?,
                    };
                    let from = w.number("window start")?;
                    let to = w.number("window end")?;
                    let extra = w.number("extra delay")?;
                    link = link.with_spike(sel, from, to, extra);
                }
                other => return err(line, format!("unknown link setting `{other}`")),
            },
            "inject" => {
                let node: u32 = w.number("node id")?;
                let mut kind = parse_fault(&mut w)?;
                w.keyword("at")?;
                let at = w.number("tick")?;
                if let Some(kw) = w.it.next() {
                    if kw != "for" {
                        return err(line, format!("unexpected `{kw}`"));
                    }
                    let ticks = w.number("duration")?;
                    match &mut kind {
                        FaultKind::DropMessages { for_ticks } => *for_ticks = Some(ticks),
                        _ => return err(line, "`for` applies to drop_messages only"),
                    }
                }
                faults.push((
                    line,
                    FaultSpec {
                        node: NodeId(node),
                        kind,
                        at,
                    },
                ));
            }
            "duration" => {
                let d: Tick = w.number("duration")?;
                if d == 0 {
                    return err(line, "duration must be positive");
                }
                duration = Some(d);
            }
            "tm_cycle" => {
                let c: Tick = w.number("tm_cycle")?;
                if c == 0 {
                    return err(line, "tm_cycle must be positive");
                }
                tm_cycle = c;
            }
            "detector" => {
                w.keyword("processes")?;
                let n = w.number("process count")?;
                w.keyword("timeout")?;
                let t: Tick = w.number("timeout")?;
                let period = match w.it.next() {
                    None => None,
                    Some("period") => Some(w.number("period")?),
                    Some(other) => return err(line, format!("unexpected `{other}`")),
                };
                if t == 0 || period == Some(0) {
                    return err(line, "detector timeouts must be positive");
                }
                detector = Some((line, n, t, period));
            }
            other => return err(line, format!("unknown directive `{other}`")),
        }
        w.finish()?;
    }

    let duration = duration.ok_or(ConfigError {
        line: 0,
        reason: "missing duration".into(),
    })?;

    let protocol = match (detector, roles.is_empty()) {
        (Some((line, ..)), false) => {
            return err(line, "`detector` cannot be combined with `node` lines")
        }
        (None, true) => return err(0, "no nodes declared"),
        (Some((line, n, timeout, period)), true) => {
            if n < 2 {
                return err(line, "a detector needs at least two processes");
            }
            Protocol::Detector {
                processes: n,
                timeout,
                period: period.unwrap_or_else(|| DetectorConfig::new(timeout).heartbeat_period),
            }
        }
        (None, false) => {
            roles.sort_by_key(|(_, id, _)| *id);
            for (i, (line, id, _)) in roles.iter().enumerate() {
                if *id as usize != i {
                    return err(*line, format!("node ids must be 0..n without gaps, found {id}"));
                }
            }
            let managers: Vec<_> = roles.iter().filter(|r| r.2 == NodeRole::Manager).collect();
            if managers.len() != 1 {
                let line = managers.get(1).map_or(0, |r| r.0);
                return err(line, "exactly one manager is required");
            }
            if !roles.iter().any(|r| r.2 == NodeRole::Backup) {
                return err(0, "at least one backup is required");
            }
            Protocol::Dirnet {
                roles: roles.into_iter().map(|r| r.2).collect(),
            }
        }
    };

    let n = match &protocol {
        Protocol::Dirnet { roles } => roles.len(),
        Protocol::Detector { processes, .. } => *processes,
    };
    for (line, f) in &faults {
        if f.node.index() >= n {
            return err(*line, format!("unknown node {}", f.node));
        }
        if matches!(protocol, Protocol::Detector { .. }) && f.kind == FaultKind::HangDirx {
            return err(*line, "hang_dirx needs a DIR net scenario");
        }
    }
    for (src, dst) in link
        .drops
        .iter()
        .map(|d| d.link)
        .chain(link.spikes.iter().map(|s| s.link))
        .map(|l| (l.src, l.dst))
    {
        if let Some(bad) = [src, dst].into_iter().flatten().find(|x| x.index() >= n) {
            return err(0, format!("link rule names unknown node {bad}"));
        }
    }

    Ok(Scenario {
        protocol,
        deadlines,
        link,
        faults: faults.into_iter().map(|(_, f)| f).collect(),
        duration,
        tm_cycle,
    })
}
