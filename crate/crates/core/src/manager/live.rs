//! Wall-clock adapter: drives a manager from its own thread.
//!
//! No determinism guarantees. Simulations should step the manager directly.

use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{Alarm, TomManager};

pub struct LiveTom<T> {
    pub alarms: Receiver<Alarm<T>>,
    thread: JoinHandle<TomManager<T>>,
}

impl<T> LiveTom<T> {
    /// Wait for the manager to stop (after its last client closed) and get
    /// it back.
    pub fn join(self) -> TomManager<T> {
        self.thread.join().expect("time-out manager thread panicked")
    }
}

/// Run `manager` on a dedicated thread, sleeping `tick * tm_cycle` between
/// cycles. Emitted alarms are forwarded on `LiveTom::alarms`.
pub fn spawn_live<T>(mut manager: TomManager<T>, tick: Duration) -> LiveTom<T>
where
    T: Clone + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    let nap = tick * manager.config().tm_cycle as u32;
    let thread = thread::Builder::new()
        .name(format!("tom-{}", manager.id()))
        .spawn(move || {
            while !manager.is_stopped() {
                if let Some(report) = manager.poll() {
                    for alarm in report.emitted {
                        if tx.send(alarm).is_err() {
                            log::debug!("alarm receiver gone");
                        }
                    }
                }
                thread::sleep(nap);
            }
            manager
        })
        .expect("spawn time-out manager thread");
    LiveTom { alarms: rx, thread }
}
