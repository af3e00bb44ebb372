//! Deterministic simulation harness: virtual clock, simulated network,
//! scenario files and traces. A run is a pure function of its scenario.

pub mod config;
mod detector_world;
mod dirnet_world;
pub mod figure;
pub mod network;
pub mod trace;

pub use config::{parse_config, ConfigError, Protocol, Scenario};
pub use detector_world::DetectorWorld;
pub use dirnet_world::DirnetWorld;
pub use figure::{replay_figure, FigureReplay};
pub use network::{LinkModel, LinkSelector, NetStats, Network, SimEvent};
pub use trace::{Trace, TraceRecord};

use crate::types::Tick;

/// TOM id of the harness's fault injector.
pub const INJECTOR_TOM_ID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Also trace every non-idle manager cycle.
    pub record_tom_cycles: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub trace: Trace,
    /// Invariant violations observed during the run.
    pub violations: Vec<String>,
    pub stats: NetStats,
    /// Last simulated tick.
    pub end: Tick,
}

impl RunOutcome {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Run `scenario` to its duration.
pub fn run(scenario: &Scenario, opts: RunOptions) -> RunOutcome {
    match scenario.protocol {
        Protocol::Dirnet { .. } => DirnetWorld::new(scenario.clone(), opts).run(),
        Protocol::Detector { .. } => DetectorWorld::new(scenario.clone(), opts).run(),
    }
}
