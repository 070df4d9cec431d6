//! Per-bus activation schedules for asynchronous updates.
//!
//! A schedule stores, for every step, which buses update. The bounded-delay
//! condition requires each bus to be active at least once in every window of
//! `K` consecutive steps.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    n: usize,
    horizon: usize,
    /// Row-major `horizon x n` activation mask.
    mask: Vec<bool>,
    delay_bound: usize,
    duty_cycle: Option<f64>,
}

impl Schedule {
    /// Builds and validates a schedule from explicit masks.
    pub fn from_masks(n: usize, masks: Vec<Vec<bool>>, delay_bound: usize) -> Result<Self> {
        let horizon = masks.len();
        let mut mask = Vec::with_capacity(horizon * n);
        for (k, row) in masks.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "activation row {k} has {} entries, expected {n}",
                    row.len()
                )));
            }
            mask.extend_from_slice(row);
        }
        let sched = Schedule {
            n,
            horizon,
            mask,
            delay_bound,
            duty_cycle: None,
        };
        validate_bounded_delay(&sched, delay_bound)?;
        Ok(sched)
    }

    /// Every bus active at every step (`K = 1`).
    pub fn synchronous(n: usize, horizon: usize) -> Self {
        Schedule {
            n,
            horizon,
            mask: vec![true; n * horizon],
            delay_bound: 1,
            duty_cycle: Some(1.0),
        }
    }

    /// No bus ever updates: the uncontrolled baseline. This deliberately
    /// violates the bounded-delay condition and has `delay_bound() == 0`.
    pub fn idle(n: usize, horizon: usize) -> Self {
        Schedule {
            n,
            horizon,
            mask: vec![false; n * horizon],
            delay_bound: 0,
            duty_cycle: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn delay_bound(&self) -> usize {
        self.delay_bound
    }

    pub fn duty_cycle(&self) -> Option<f64> {
        self.duty_cycle
    }

    pub fn active(&self, k: usize) -> &[bool] {
        &self.mask[k * self.n..(k + 1) * self.n]
    }

    pub fn updates_at(&self, k: usize) -> usize {
        self.active(k).iter().filter(|&&a| a).count()
    }

    pub fn is_synchronous(&self) -> bool {
        self.mask.iter().all(|&a| a)
    }

    /// Active bus indices at step `k`.
    pub fn buses_at(&self, k: usize) -> Vec<usize> {
        self.active(k)
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
            .collect()
    }

    /// Steps at which bus `j` updates.
    pub fn activation_steps(&self, j: usize) -> Vec<usize> {
        (0..self.horizon).filter(|&k| self.active(k)[j]).collect()
    }

    /// Largest distance between consecutive activations of any bus.
    pub fn max_gap(&self) -> usize {
        (0..self.n)
            .map(|j| {
                self.activation_steps(j)
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .max()
                    .unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Checks that every window of `k` consecutive steps (fully inside the
/// horizon) contains an activation of every bus.
pub fn validate_bounded_delay(sched: &Schedule, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("delay bound K must be >= 1".into()));
    }
    if sched.horizon < k {
        return Ok(());
    }
    for j in 0..sched.n {
        let mut count = (0..k).filter(|&s| sched.active(s)[j]).count();
        let mut start = 0;
        loop {
            if count == 0 {
                return Err(Error::DelayViolation {
                    bus: j,
                    start,
                    delay: k,
                });
            }
            if start + k >= sched.horizon {
                break;
            }
            count -= usize::from(sched.active(start)[j]);
            count += usize::from(sched.active(start + k)[j]);
            start += 1;
        }
    }
    Ok(())
}

/// Random duty-cycle schedule: time is cut into cycles of `K/2` slots shared
/// by all buses, and in each cycle every bus picks `ceil(eta K / 2)` distinct
/// slots uniformly at random.
pub fn duty_cycle_schedule(
    n: usize,
    horizon: usize,
    k: usize,
    eta: f64,
    seed: u64,
) -> Result<Schedule> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "duty-cycle schedules need an even K >= 2, got {k}"
        )));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "duty cycle eta must lie in (0, 1], got {eta}"
        )));
    }
    let cycle = k / 2;
    let picks = slots_per_cycle(k, eta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n * horizon];
    for start in (0..horizon).step_by(cycle) {
        for j in 0..n {
            for slot in sample(&mut rng, cycle, picks).iter() {
                let step = start + slot;
                if step < horizon {
                    mask[step * n + j] = true;
                }
            }
        }
    }
    let sched = Schedule {
        n,
        horizon,
        mask,
        delay_bound: k,
        duty_cycle: Some(eta),
    };
    debug_assert!(validate_bounded_delay(&sched, k).is_ok());
    Ok(sched)
}

/// `ceil(eta K / 2)`, tolerant of `eta K / 2` landing a hair above an integer.
fn slots_per_cycle(k: usize, eta: f64) -> usize {
    let cycle = k / 2;
    let raw = eta * cycle as f64;
    let rounded = raw.round();
    let picks = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (picks as usize).clamp(1, cycle)
}

/// Each bus updates exactly once per `K` steps, bus `j` at steps
/// `k = j (mod K)`, so the delay bound is met with equality.
pub fn adversarial_schedule(n: usize, horizon: usize, k: usize) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::InvalidParameter("delay bound K must be >= 1".into()));
    }
    let mut mask = vec![false; n * horizon];
    for step in 0..horizon {
        for j in 0..n {
            mask[step * n + j] = step % k == j % k;
        }
    }
    Ok(Schedule {
        n,
        horizon,
        mask,
        delay_bound: k,
        duty_cycle: None,
    })
}

/// Network-wide updates per `K/2`-step cycle of a duty-cycle schedule:
/// `ceil(eta K / 2) N`.
pub fn expected_updates(sched: &Schedule) -> Result<usize> {
    let eta = sched.duty_cycle.ok_or_else(|| {
        Error::InvalidParameter("expected updates are defined for duty-cycle schedules".into())
    })?;
    if sched.delay_bound < 2 {
        // Synchronous: one cycle is one step.
        return Ok(sched.n);
    }
    Ok(slots_per_cycle(sched.delay_bound, eta) * sched.n)
}

/// Parses the text schedule format: one line per step, each holding the
/// space-separated network bus numbers (1..=N) that update at that step.
pub fn parse_schedule(text: &str, n: usize, k: usize) -> Result<Schedule> {
    let mut masks = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let mut row = vec![false; n];
        for token in line.split_whitespace() {
            let bus: usize = token.parse().map_err(|_| {
                Error::InvalidParameter(format!(
                    "schedule line {}: '{token}' is not a bus number",
                    line_no + 1
                ))
            })?;
            if bus == 0 || bus > n {
                return Err(Error::InvalidParameter(format!(
                    "schedule line {}: bus {bus} outside 1..={n}",
                    line_no + 1
                )));
            }
            row[bus - 1] = true;
        }
        masks.push(row);
    }
    Schedule::from_masks(n, masks, k)
}
