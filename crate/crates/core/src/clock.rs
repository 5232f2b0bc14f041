//! Monotonic time sources.
//!
//! Every timestamp in a sample log comes from a [`Clock`]. Real runs use
//! [`MonotonicClock`] (`CLOCK_MONOTONIC`, comparable across processes on the
//! same host). Tests inject a [`SimClock`], a virtual clock that only moves
//! when every registered thread is asleep, so sampling loops become
//! deterministic.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

pub trait Clock: Send + Sync {
    /// Current monotonic time in nanoseconds.
    fn now_ns(&self) -> u64;

    /// Block until `now_ns() >= deadline_ns`.
    fn sleep_until(&self, deadline_ns: u64);

    /// Register one more thread that will sleep on this clock. Must be called
    /// before that thread starts, and balanced by [`Clock::leave`].
    fn enter(&self) {}

    /// Unregister a thread previously counted by [`Clock::enter`].
    fn leave(&self) {}
}

/// `CLOCK_MONOTONIC` with absolute-deadline sleeps.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicClock;

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock
    }
}

#[cfg(target_os = "linux")]
impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // SAFETY: `ts` is a valid out-pointer; CLOCK_MONOTONIC always exists on Linux.
        unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        ts.tv_sec as u64 * NANOS_PER_SEC + ts.tv_nsec as u64
    }

    fn sleep_until(&self, deadline_ns: u64) {
        let ts = libc::timespec {
            tv_sec: (deadline_ns / NANOS_PER_SEC) as libc::time_t,
            tv_nsec: (deadline_ns % NANOS_PER_SEC) as libc::c_long,
        };
        loop {
            // SAFETY: `ts` is valid for the duration of the call; remain may be null with TIMER_ABSTIME.
            let rc =
                unsafe { libc::clock_nanosleep(libc::CLOCK_MONOTONIC, libc::TIMER_ABSTIME, &ts, std::ptr::null_mut()) };
            if rc != libc::EINTR {
                break;
            }
        }
    }
}

#[cfg(not(target_os = "linux"))]
impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        use std::sync::OnceLock;
        use std::time::Instant;
        static ORIGIN: OnceLock<Instant> = OnceLock::new();
        ORIGIN.get_or_init(Instant::now).elapsed().as_nanos() as u64
    }

    fn sleep_until(&self, deadline_ns: u64) {
        let now = self.now_ns();
        if deadline_ns > now {
            std::thread::sleep(Duration::from_nanos(deadline_ns - now));
        }
    }
}

#[derive(Debug)]
struct SimState {
    now: u64,
    participants: usize,
    /// Deadlines of threads currently blocked in `sleep_until`.
    sleeping: Vec<u64>,
}

/// Virtual clock for deterministic tests.
///
/// Time advances only inside `sleep_until`: once every registered thread
/// (or the single caller, when none registered) is asleep, `now` jumps to the
/// earliest pending deadline.
#[derive(Debug)]
pub struct SimClock {
    state: Mutex<SimState>,
    cv: Condvar,
}

impl SimClock {
    pub fn new(start_ns: u64) -> Self {
        SimClock {
            state: Mutex::new(SimState { now: start_ns, participants: 0, sleeping: Vec::new() }),
            cv: Condvar::new(),
        }
    }

    /// Move time forward by hand. Never moves backwards.
    pub fn advance_to(&self, t_ns: u64) {
        let mut st = self.state.lock().unwrap();
        if t_ns > st.now {
            st.now = t_ns;
            self.cv.notify_all();
        }
    }

    pub fn advance_by(&self, d: Duration) {
        let now = self.now_ns();
        self.advance_to(now + d.as_nanos() as u64);
    }

    fn maybe_advance(&self, st: &mut SimState) {
        // Woken threads may not have removed their entry yet; only deadlines
        // still in the future count as asleep.
        let now = st.now;
        let pending = st.sleeping.iter().filter(|&&d| d > now);
        if pending.clone().count() >= st.participants.max(1) {
            if let Some(&next) = pending.min() {
                st.now = next;
                self.cv.notify_all();
            }
        }
    }
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(0)
    }
}

impl Clock for SimClock {
    fn now_ns(&self) -> u64 {
        self.state.lock().unwrap().now
    }

    fn sleep_until(&self, deadline_ns: u64) {
        let mut st = self.state.lock().unwrap();
        if deadline_ns <= st.now {
            return;
        }
        st.sleeping.push(deadline_ns);
        self.maybe_advance(&mut st);
        while st.now < deadline_ns {
            st = self.cv.wait(st).unwrap();
        }
        let pos = st.sleeping.iter().position(|&d| d == deadline_ns).expect("sleeper registered");
        st.sleeping.swap_remove(pos);
    }

    fn enter(&self) {
        self.state.lock().unwrap().participants += 1;
    }

    fn leave(&self) {
        let mut st = self.state.lock().unwrap();
        st.participants = st.participants.saturating_sub(1);
        self.maybe_advance(&mut st);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn monotonic_clock_sleeps_to_deadline() {
        let c = MonotonicClock::new();
        let t0 = c.now_ns();
        c.sleep_until(t0 + 2_000_000);
        assert!(c.now_ns() >= t0 + 2_000_000);
    }

    #[test]
    fn sim_clock_single_thread_jumps() {
        let c = SimClock::new(100);
        assert_eq!(c.now_ns(), 100);
        c.sleep_until(50);
        assert_eq!(c.now_ns(), 100);
        c.sleep_until(1_000);
        assert_eq!(c.now_ns(), 1_000);
        c.advance_by(Duration::from_nanos(5));
        assert_eq!(c.now_ns(), 1_005);
    }

    #[test]
    fn sim_clock_two_threads_interleave_by_deadline() {
        let c = Arc::new(SimClock::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        c.enter();
        c.enter();
        std::thread::scope(|s| {
            for (tag, period) in [("a", 3u64), ("b", 5u64)] {
                let c = c.clone();
                let log = log.clone();
                s.spawn(move || {
                    let mut t = 0;
                    for _ in 0..3 {
                        t += period;
                        c.sleep_until(t);
                        log.lock().unwrap().push((c.now_ns(), tag));
                    }
                    c.leave();
                });
            }
        });
        let mut got = log.lock().unwrap().clone();
        got.sort();
        let times: Vec<u64> = got.iter().map(|x| x.0).collect();
        assert_eq!(times, [3, 5, 6, 9, 10, 15]);
    }
}
