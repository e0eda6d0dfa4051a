//! Fixed-timestep scheduling and tick jitter accounting.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::protocol::ServerMessage;
use crate::session::{Inbound, Session};

/// Never run more than this many extra ticks to catch up after a stall.
pub const MAX_CATCH_UP: u32 = 3;

pub trait Clock {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep_until(&self, deadline: Duration);
}

/// Wall clock; sleeps coarsely then spins for the last stretch.
#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
    spin: Duration,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now(), spin: Duration::from_micros(500) }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now + self.spin {
            std::thread::sleep(deadline - now - self.spin);
        }
        while self.now() < deadline {
            std::hint::spin_loop();
        }
    }
}

/// Histogram of tick lateness in fixed-width bins; the last bin is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterHistogram {
    pub bin_micros: u64,
    pub counts: Vec<u64>,
    pub max_micros: u64,
    /// Stalls that exceeded the catch-up budget and forced a resync.
    pub overruns: u64,
}

impl JitterHistogram {
    pub fn new(bin_micros: u64, bins: usize) -> Self {
        Self { bin_micros: bin_micros.max(1), counts: vec![0; bins.max(1)], max_micros: 0, overruns: 0 }
    }

    pub fn record(&mut self, lateness: Duration) {
        let us = lateness.as_micros() as u64;
        let bin = ((us / self.bin_micros) as usize).min(self.counts.len() - 1);
        self.counts[bin] += 1;
        self.max_micros = self.max_micros.max(us);
    }

    pub fn samples(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Upper edge of the bin holding quantile `q`, in microseconds.
    pub fn quantile_micros(&self, q: f64) -> u64 {
        let total = self.samples();
        if total == 0 {
            return 0;
        }
        let rank = (q.clamp(0.0, 1.0) * total as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return if i + 1 == self.counts.len() { self.max_micros } else { (i as u64 + 1) * self.bin_micros };
            }
        }
        self.max_micros
    }
}

impl Default for JitterHistogram {
    fn default() -> Self {
        // 100 us bins up to 20 ms
        Self::new(100, 200)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub ticks: u64,
    pub catch_up_ticks: u64,
    pub jitter: JitterHistogram,
}

/// Runs `session` at a fixed period until it finishes or `stop` is raised.
///
/// Inbound messages are drained before every tick; outbound messages are
/// handed to `publish` after each wake-up, never blocking the loop.
pub fn run_fixed_rate(
    session: &mut Session,
    clock: &impl Clock,
    period: Duration,
    inbound: &Receiver<Inbound>,
    mut publish: impl FnMut(Vec<ServerMessage>),
    stop: &AtomicBool,
) -> LoopReport {
    let mut report = LoopReport { ticks: 0, catch_up_ticks: 0, jitter: JitterHistogram::default() };
    let mut next = clock.now() + period;
    while !stop.load(Ordering::Relaxed) && !session.is_finished() {
        clock.sleep_until(next);
        let now = clock.now();
        report.jitter.record(now.saturating_sub(next));
        let mut steps = 0;
        while now >= next && steps <= MAX_CATCH_UP {
            for msg in inbound.try_iter() {
                session.handle(msg);
            }
            session.tick();
            report.ticks += 1;
            if steps > 0 {
                report.catch_up_ticks += 1;
            }
            steps += 1;
            next += period;
        }
        if now >= next {
            report.jitter.overruns += 1;
            log::warn!("control loop overrun: {:?} behind", now - next);
            next = now + period;
        }
        let out = session.drain_outbox();
        if !out.is_empty() {
            publish(out);
        }
    }
    publish(session.drain_outbox());
    report
}
