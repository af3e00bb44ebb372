//! Replay of the four-time-out operating scenario through a real
//! manager: A (330) at 0, B (400) at 100, C (510) at 170, D (230) at 350.

use std::fmt;

use serde::Serialize;

use crate::manager::{tom_init, VirtualClock};
use crate::timeout::{ActionDescriptor, TimeoutId};
use crate::types::{NodeId, Tick};

/// `(name, insertion tick, deadline)`.
pub const FIGURE_SCRIPT: [(char, Tick, Tick); 4] = [('A', 0, 330), ('B', 100, 400), ('C', 170, 510), ('D', 350, 230)];

/// Ticks after which the list is photographed.
const SNAPSHOTS: [Tick; 6] = [0, 100, 170, 330, 350, 500];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FigureStep {
    pub step: usize,
    pub tick: Tick,
    /// `(name, running)` in list order.
    pub list: Vec<(char, Tick)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FigureReplay {
    pub steps: Vec<FigureStep>,
    pub firings: Vec<(char, Tick)>,
}

impl FigureReplay {
    pub fn running_after(&self, tick: Tick, name: char) -> Option<Tick> {
        let step = self.steps.iter().find(|s| s.tick == tick)?;
        step.list.iter().find(|(n, _)| *n == name).map(|(_, r)| *r)
    }
}

impl fmt::Display for FigureReplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            write!(f, "{}. t={:<4}", s.step, s.tick)?;
            for (name, running) in &s.list {
                write!(f, " {name}:{running}")?;
            }
            writeln!(f)?;
        }
        let fired: Vec<String> = self.firings.iter().map(|(n, t)| format!("{n}@{t}")).collect();
        writeln!(f, "fired: {}", fired.join(" "))
    }
}

fn name_of(id: TimeoutId) -> char {
    FIGURE_SCRIPT[id.class_id as usize].0
}

pub fn replay_figure() -> FigureReplay {
    let clock = VirtualClock::new();
    let (mut tom, h) = tom_init(ActionDescriptor::new((), NodeId(0)), clock.clone(), 0);
    let mut steps = Vec::new();
    let mut firings = Vec::new();
    let end = FIGURE_SCRIPT
        .iter()
        .map(|(_, at, d)| at + d)
        .max()
        .unwrap_or(0);

    while clock.now() <= end {
        let now = clock.now();
        for (i, (_, at, deadline)) in FIGURE_SCRIPT.iter().enumerate() {
            if *at == now {
                let t = h
                    .declare(TimeoutId::new(i as u32, 0), false, true, *deadline)
                    .expect("positive deadline");
                h.insert(&t).expect("manager is running");
            }
        }
        if let Some(r) = tom.poll() {
            firings.extend(r.fired.iter().map(|id| (name_of(*id), now)));
        }
        if SNAPSHOTS.contains(&now) {
            steps.push(FigureStep {
                step: steps.len() + 1,
                tick: now,
                list: tom
                    .list()
                    .entries()
                    .map(|t| (name_of(t.id()), t.running()))
                    .collect(),
            });
        }
        clock.advance_by(1);
    }
    FigureReplay { steps, firings }
}
