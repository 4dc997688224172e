//! Linear saturation forecasts.

use miniops_core::{EpochMs, MS_PER_DAY};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForecastError {
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("degenerate window: all timestamps equal")]
    Degenerate,
}

/// `value ≈ intercept + slope · t`, with t in days since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
}

impl Trend {
    pub fn at(&self, ts: EpochMs) -> f64 {
        self.intercept + self.slope * days(ts)
    }
}

/// Which way the resource moves as it fills up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Rising,
    Falling,
}

fn days(ts: EpochMs) -> f64 {
    ts as f64 / MS_PER_DAY
}

pub fn fit_trend(window: &[(EpochMs, f64)]) -> Result<Trend, ForecastError> {
    if window.len() < 2 {
        return Err(ForecastError::TooFew(window.len()));
    }
    let n = window.len() as f64;
    // Center on the first timestamp before converting so epoch-sized
    // offsets do not eat the mantissa.
    let origin = window[0].0;
    let rel = |ts: EpochMs| (ts - origin) as f64 / MS_PER_DAY;
    let t_mean = window.iter().map(|(t, _)| rel(*t)).sum::<f64>() / n;
    let y_mean = window.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, y) in window {
        let dt = rel(*t) - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        return Err(ForecastError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * (t_mean + days(origin));
    Ok(Trend { slope, intercept })
}

/// Days until the fitted line reaches `bound`, or infinity when the line is
/// flat or moving away from it. With a known `direction`, a value already
/// beyond the bound gives 0.
pub fn days_to_saturation(
    trend: &Trend,
    now: EpochMs,
    bound: f64,
    epsilon: f64,
    direction: Option<Direction>,
) -> f64 {
    let y = trend.at(now);
    let gap = bound - y;
    let past = match direction {
        Some(Direction::Falling) => y <= bound,
        Some(Direction::Rising) => y >= bound,
        None => gap == 0.0,
    };
    if past {
        return 0.0;
    }
    if trend.slope.abs() <= epsilon || gap.signum() != trend.slope.signum() {
        return f64::INFINITY;
    }
    (gap / trend.slope).max(0.0)
}

/// Pluggable forecaster; OLS is the built-in.
pub trait Forecaster: Send + Sync {
    fn days_to_saturation(
        &self,
        window: &[(EpochMs, f64)],
        now: EpochMs,
        bound: f64,
        epsilon: f64,
        direction: Option<Direction>,
    ) -> Result<f64, ForecastError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OlsForecaster;

impl Forecaster for OlsForecaster {
    fn days_to_saturation(
        &self,
        window: &[(EpochMs, f64)],
        now: EpochMs,
        bound: f64,
        epsilon: f64,
        direction: Option<Direction>,
    ) -> Result<f64, ForecastError> {
        let trend = fit_trend(window)?;
        Ok(days_to_saturation(&trend, now, bound, epsilon, direction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: i64 = 86_400_000;

    #[test]
    fn exact_line() {
        let t = fit_trend(&[(0, 100.0), (DAY, 98.0), (2 * DAY, 96.0)]).unwrap();
        assert!((t.slope + 2.0).abs() < 1e-12);
        assert!((t.intercept - 100.0).abs() < 1e-12);
        assert_eq!(days_to_saturation(&t, 0, 0.0, DEFAULT_EPSILON, None), 50.0);
    }

    #[test]
    fn flat_and_diverging_are_infinite() {
        let flat = fit_trend(&[(0, 5.0), (DAY, 5.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(days_to_saturation(&flat, 0, 0.0, DEFAULT_EPSILON, None).is_infinite());
        let up = Trend {
            slope: 2.0,
            intercept: 100.0,
        };
        assert!(days_to_saturation(&up, 0, 0.0, DEFAULT_EPSILON, None).is_infinite());
    }

    #[test]
    fn past_bound_with_direction_is_zero() {
        let t = Trend {
            slope: -1.0,
            intercept: -3.0,
        };
        assert_eq!(days_to_saturation(&t, 0, 0.0, DEFAULT_EPSILON, Some(Direction::Falling)), 0.0);
        assert!(days_to_saturation(&t, 0, 0.0, DEFAULT_EPSILON, None).is_infinite());
    }

    #[test]
    fn degenerate_windows() {
        assert_eq!(fit_trend(&[(5, 1.0)]), Err(ForecastError::TooFew(1)));
        assert_eq!(fit_trend(&[(5, 1.0), (5, 2.0)]), Err(ForecastError::Degenerate));
    }
}
