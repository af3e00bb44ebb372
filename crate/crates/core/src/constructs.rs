//! Time-out translations of the usual timing constructs of failure-detector
//! pseudo-code.
//!
//! Each helper only builds and submits a time-out; the protocol reacts to the
//! resulting alarm message in its ordinary receive loop, so "upon receive"
//! needs no helper of its own.

use crate::manager::{Ack, TomError, TomHandle};
use crate::timeout::{ActionDescriptor, Timeout, TimeoutId};
use crate::types::Tick;

/// Repeat every `period` ticks (multiplicity 1): one cyclic time-out.
pub fn repeat_periodically<T: Clone>(
    tom: &TomHandle<T>,
    id: TimeoutId,
    period: Tick,
    action: ActionDescriptor<T>,
) -> Result<(Timeout<T>, Ack), TomError> {
    let t = Timeout::declare(id, true, true, period, action)?;
    let ack = tom.insert(&t)?;
    Ok((t, ack))
}

/// Repeat once per peer (multiplicity q): one cyclic time-out per class id,
/// each carrying its own period.
pub fn repeat_for_each<T: Clone>(
    tom: &TomHandle<T>,
    watches: impl IntoIterator<Item = (TimeoutId, Tick, ActionDescriptor<T>)>,
) -> Result<Vec<Timeout<T>>, TomError> {
    watches
        .into_iter()
        .map(|(id, period, action)| repeat_periodically(tom, id, period, action).map(|(t, _)| t))
        .collect()
}

/// Fire once when the clock reaches `at`. A target already reached is served
/// at the next cycle.
pub fn upon_time<T: Clone>(
    tom: &TomHandle<T>,
    id: TimeoutId,
    at: Tick,
    now: Tick,
    action: ActionDescriptor<T>,
) -> Result<(Timeout<T>, Ack), TomError> {
    let t = Timeout::declare(id, false, true, at.saturating_sub(now).max(1), action)?;
    let ack = tom.insert(&t)?;
    Ok((t, ack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manager::{tom_init, VirtualClock};
    use crate::types::NodeId;

    #[test]
    fn upon_time_fires_at_target() {
        let clock = VirtualClock::new();
        let action = ActionDescriptor::new('u', NodeId(0));
        let (mut m, h) = tom_init(action.clone(), clock.clone(), 0);
        clock.advance_to(7);
        upon_time(&h, TimeoutId::new(1, 0), 19, 7, action).unwrap();
        let mut fired = Vec::new();
        while clock.now() < 40 {
            if let Some(r) = m.poll() {
                fired.extend(r.emitted.iter().map(|a| a.fired_at));
            }
            clock.advance_by(1);
        }
        assert_eq!(fired, [19]);
    }

    #[test]
    fn multiplicity_q_creates_one_watch_per_peer() {
        let clock = VirtualClock::new();
        let action = ActionDescriptor::new('w', NodeId(0));
        let (mut m, h) = tom_init(action.clone(), clock.clone(), 0);
        let ts = repeat_for_each(
            &h,
            (1..4).map(|q| (TimeoutId::new(q, 0), 10 * q as Tick, action.clone())),
        )
        .unwrap();
        assert_eq!(ts.len(), 3);
        m.poll();
        assert_eq!(m.list().len(), 3);
        let at: Vec<Tick> = m.list().expiries().into_iter().map(|(_, e)| e).collect();
        assert_eq!(at, [10, 20, 30]);
    }
}
