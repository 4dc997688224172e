use std::collections::HashMap;

use miniops_core::{EpochMs, MS_PER_DAY};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Generator, MetricSpec};

/// Deterministic sample source for every (server, metric) pair. Randomness
/// is addressed by (seed, server, metric, tick) so values do not depend on
/// call order or on which ticks were skipped.
pub struct Generators {
    seed: u64,
    t0: EpochMs,
    metrics: Vec<MetricSpec>,
    walks: Mutex<HashMap<(usize, usize), (u64, f64)>>,
}

impl Generators {
    pub fn new(seed: u64, t0: EpochMs, metrics: Vec<MetricSpec>) -> Self {
        Generators {
            seed,
            t0,
            metrics,
            walks: Mutex::new(HashMap::new()),
        }
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m.name == name)
    }

    /// Two uniform draws in [-1, 1) for one tick of one series.
    fn draws(&self, server: usize, metric: usize, tick: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((server as u64) << 20) | metric as u64);
        rng.set_word_pos(u128::from(tick) * 4);
        (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    /// Sample of `metric` on server `server` at tick `tick` (time `ts`).
    pub fn value(&self, server: usize, metric: usize, tick: u64, ts: EpochMs) -> f64 {
        let spec = &self.metrics[metric];
        let base = match spec.generator {
            Generator::Constant { v } => v,
            Generator::LinearRamp { slope_per_day, start } => {
                start + slope_per_day * ((ts - self.t0) as f64 / MS_PER_DAY)
            }
            Generator::Sinusoid {
                period_s,
                amplitude,
                offset,
            } => {
                let phase = (ts - self.t0) as f64 / 1000.0 / period_s;
                offset + amplitude * (std::f64::consts::TAU * phase).sin()
            }
            Generator::RandomWalk { step, start } => self.walk(server, metric, tick, step, start),
        };
        if spec.noise > 0.0 {
            base + spec.noise * self.draws(server, metric, tick).1
        } else {
            base
        }
    }

    fn walk(&self, server: usize, metric: usize, tick: u64, step: f64, start: f64) -> f64 {
        let mut walks = self.walks.lock();
        let (mut k, mut v) = match walks.get(&(server, metric)) {
            Some(&(k, v)) if k <= tick => (k, v),
            _ => (0, start),
        };
        while k < tick {
            k += 1;
            v += step * self.draws(server, metric, k).0;
        }
        walks.insert((server, metric), (k, v));
        v
    }
}
