//! Piecewise-linear approximation of convex curves.
//!
//! Basepoints interpolate the curve (`β_s = g(α_s)`) and are placed by an
//! iterative refinement that moves each interior basepoint along the
//! abscissa until adjacent segments carry the same chord error. Two
//! safeguards keep the iteration well defined: it stops as soon as a step
//! no longer moves any basepoint, and basepoints whose derivative value
//! duplicates an earlier one (the curve is linear between them) are pulled
//! out and re-inserted where the approximation is worst.
//!
//! Step weights start at 1 and are halved whenever a step would raise the
//! maximum error; an accepted step doubles the weight again (capped at 1).

use std::io::{self, Write};
use std::sync::OnceLock;

use thiserror::Error;

/// Number of basepoints of the standard preset.
pub const DEFAULT_BASEPOINTS: usize = 6;
/// Linearization interval end (utilization) of the standard preset.
pub const DEFAULT_INTERVAL_END: f64 = 0.96;

/// Iteration cap of the refinement loop.
pub const MAX_ITERATIONS: usize = 10_000;
/// Basepoint movement below which the refinement counts as stalled.
pub const MOVE_TOLERANCE: f64 = 1e-12;
/// Grid resolution of the error scan for curves without a closed-form
/// stationary point.
pub const GRID_POINTS_PER_SEGMENT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error("need at least {min} basepoints, got {got}")]
    TooFewBasepoints { min: usize, got: usize },
    #[error("abscissae must be finite and strictly increasing")]
    NotIncreasing,
    #[error("alpha and beta lengths differ ({alpha} vs {beta})")]
    LengthMismatch { alpha: usize, beta: usize },
    #[error("x = {x} outside [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },
    #[error("interval end {0} is invalid for this curve")]
    IntervalEnd(f64),
    #[error("curve is not finite at x = {0}")]
    NonFinite(f64),
    #[error("scale factor {0} must be finite and > 0")]
    BadScale(f64),
}

/// A differentiable curve on a closed interval.
pub trait Curve {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;

    /// The point in `(a, b)` where the derivative equals `slope`, when known
    /// in closed form. Curves returning `None` are scanned on a grid.
    fn stationary_point(&self, _a: f64, _b: f64, _slope: f64) -> Option<f64> {
        None
    }
}

/// Weighted time in system at unit service rate, `ρ/(1−ρ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeightedTis;

impl Curve for WeightedTis {
    fn value(&self, x: f64) -> f64 {
        x / (1.0 - x)
    }

    fn derivative(&self, x: f64) -> f64 {
        1.0 / ((1.0 - x) * (1.0 - x))
    }

    fn stationary_point(&self, a: f64, b: f64, slope: f64) -> Option<f64> {
        if slope <= 0.0 {
            return None;
        }
        Some((1.0 - 1.0 / slope.sqrt()).clamp(a, b))
    }
}

/// Curve from a pair of closures; always scanned on a grid.
pub struct FnCurve<F, D> {
    pub f: F,
    pub df: D,
}

impl<F: Fn(f64) -> f64, D: Fn(f64) -> f64> Curve for FnCurve<F, D> {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }
}

/// Ordered basepoints `(α_s, β_s)` with the recorded maximum error.
#[derive(Debug, Clone, PartialEq)]
pub struct BasepointSet {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    epsilon: f64,
}

impl BasepointSet {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, epsilon: f64) -> Result<Self, PwlError> {
        if alpha.len() != beta.len() {
            return Err(PwlError::LengthMismatch {
                alpha: alpha.len(),
                beta: beta.len(),
            });
        }
        if alpha.len() < 2 {
            return Err(PwlError::TooFewBasepoints { min: 2, got: alpha.len() });
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) || alpha.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PwlError::NotIncreasing);
        }
        Ok(Self { alpha, beta, epsilon })
    }

    /// Samples `curve` at the given abscissae and records the exact error.
    pub fn from_curve(curve: &dyn Curve, alpha: Vec<f64>) -> Result<Self, PwlError> {
        let beta: Vec<f64> = alpha.iter().map(|&a| curve.value(a)).collect();
        let mut set = Self::new(alpha, beta, 0.0)?;
        set.epsilon = max_error(&set, curve);
        Ok(set)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn interval_end(&self) -> f64 {
        *self.alpha.last().expect("non-empty")
    }

    /// Maximum error as a percentage of the curve's rise over the interval.
    pub fn epsilon_pct_of_range(&self) -> f64 {
        let rise = self.beta[self.len() - 1] - self.beta[0];
        100.0 * self.epsilon / rise
    }

    /// Linear interpolation between the bracketing basepoints.
    pub fn eval(&self, x: f64) -> Result<f64, PwlError> {
        let (lo, hi) = (self.alpha[0], self.interval_end());
        if !(x >= lo && x <= hi) {
            return Err(PwlError::Domain { x, lo, hi });
        }
        let s = self.segment_of(x);
        Ok(chord(self.alpha[s], self.beta[s], self.alpha[s + 1], self.beta[s + 1], x))
    }

    fn segment_of(&self, x: f64) -> usize {
        let idx = self.alpha.partition_point(|&a| a <= x);
        idx.saturating_sub(1).min(self.len() - 2)
    }

    /// Basepoints of `T^w_μ(λ) = λ/(μ−λ)` from those of `ρ/(1−ρ)`.
    pub fn rescale(&self, mu: f64) -> Result<Self, PwlError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(PwlError::BadScale(mu));
        }
        Ok(Self {
            alpha: self.alpha.iter().map(|a| a * mu).collect(),
            beta: self.beta.clone(),
            epsilon: self.epsilon,
        })
    }

    /// CSV with header `s,alpha,beta` and a trailing `#` line recording the
    /// configuration and error.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "s,alpha,beta")?;
        for (s, (a, b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            writeln!(out, "{s},{a},{b}")?;
        }
        writeln!(
            out,
            "# m={},interval_end={},epsilon={},epsilon_pct_of_range={}",
            self.len(),
            self.interval_end(),
            self.epsilon,
            self.epsilon_pct_of_range()
        )
    }
}

fn chord(a: f64, fa: f64, b: f64, fb: f64, x: f64) -> f64 {
    (x - a) * ((fb - fa) / (b - a)) + fa
}

/// Largest `|pwl(x) − curve(x)|` over the basepoint interval.
pub fn max_error(set: &BasepointSet, curve: &dyn Curve) -> f64 {
    (0..set.len() - 1)
        .map(|s| {
            let (a, b) = (set.alpha[s], set.alpha[s + 1]);
            let (fa, fb) = (set.beta[s], set.beta[s + 1]);
            segment_max_abs_error(curve, a, fa, b, fb)
        })
        .fold(0.0, f64::max)
}

fn segment_max_abs_error(curve: &dyn Curve, a: f64, fa: f64, b: f64, fb: f64) -> f64 {
    let gap = |x: f64| (chord(a, fa, b, fb, x) - curve.value(x)).abs();
    let ends = gap(a).max(gap(b));
    let slope = (fb - fa) / (b - a);
    match curve.stationary_point(a, b, slope) {
        Some(xi) => ends.max(gap(xi)),
        None => grid_scan(a, b, gap).1.max(ends),
    }
}

fn grid_scan(a: f64, b: f64, gap: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = GRID_POINTS_PER_SEGMENT;
    let mut best = (a, gap(a));
    for i in 1..=n {
        let x = a + (b - a) * (i as f64 / n as f64);
        let g = gap(x);
        if g > best.1 {
            best = (x, g);
        }
    }
    best
}

/// Signed chord error of one interpolating segment and where it peaks.
#[derive(Debug, Clone, Copy)]
struct SegmentError {
    error: f64,
    peak: f64,
    slope: f64,
}

fn analyze(curve: &dyn Curve, a: f64, b: f64) -> SegmentError {
    let (fa, fb) = (curve.value(a), curve.value(b));
    let slope = (fb - fa) / (b - a);
    let signed = |x: f64| chord(a, fa, b, fb, x) - curve.value(x);
    let peak = match curve.stationary_point(a, b, slope) {
        Some(xi) => xi,
        None => grid_scan(a, b, signed).0,
    };
    SegmentError {
        error: signed(peak).max(0.0),
        peak,
        slope,
    }
}

fn segment_errors(curve: &dyn Curve, alpha: &[f64]) -> Vec<SegmentError> {
    alpha.windows(2).map(|w| analyze(curve, w[0], w[1])).collect()
}

fn worst(errors: &[SegmentError]) -> f64 {
    errors.iter().map(|e| e.error).fold(0.0, f64::max)
}

/// Places `m` interpolating basepoints on `[0, interval_end]` so that the
/// maximum chord error of the convex `curve` is small.
pub fn imamoto_extended(curve: &dyn Curve, m: usize, interval_end: f64) -> Result<BasepointSet, PwlError> {
    if m < 3 {
        return Err(PwlError::TooFewBasepoints { min: 3, got: m });
    }
    if !(interval_end.is_finite() && interval_end > 0.0) {
        return Err(PwlError::IntervalEnd(interval_end));
    }
    for i in 0..=1000 {
        let x = interval_end * i as f64 / 1000.0;
        if !(curve.value(x).is_finite() && curve.derivative(x).is_finite()) {
            return Err(PwlError::NonFinite(x));
        }
    }

    let mut alpha: Vec<f64> = (0..m)
        .map(|i| interval_end * i as f64 / (m - 1) as f64)
        .collect();
    alpha[m - 1] = interval_end;
    let mut errors = segment_errors(curve, &alpha);
    let mut current = worst(&errors);
    let mut weight = 1.0;

    for _ in 0..MAX_ITERATIONS {
        if current <= 0.0 {
            break;
        }
        if let Some(rebuilt) = reinsert_duplicates(curve, &alpha, &errors) {
            let rebuilt_errors = segment_errors(curve, &rebuilt);
            let rebuilt_worst = worst(&rebuilt_errors);
            if rebuilt_worst <= current {
                alpha = rebuilt;
                errors = rebuilt_errors;
                current = rebuilt_worst;
                continue;
            }
        }

        let steps = equalizing_steps(curve, &alpha, &errors);
        let largest = steps.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if weight * largest < MOVE_TOLERANCE {
            break;
        }
        let trial: Vec<f64> = alpha
            .iter()
            .zip(&steps)
            .map(|(a, d)| a + weight * d)
            .collect();
        let moved = alpha
            .iter()
            .zip(&trial)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if moved < MOVE_TOLERANCE {
            break;
        }
        let trial_errors = segment_errors(curve, &trial);
        let trial_worst = worst(&trial_errors);
        if trial_worst <= current {
            alpha = trial;
            errors = trial_errors;
            current = trial_worst;
            weight = (weight * 2.0).min(1.0);
        } else {
            weight *= 0.5;
        }
    }

    BasepointSet::from_curve(curve, alpha)
}

/// Proposed movement of each basepoint; endpoints stay fixed. Each interior
/// point moves to equalize the errors of its two adjacent segments to first
/// order, limited to 45% of the gap on its side so the order is preserved.
fn equalizing_steps(curve: &dyn Curve, alpha: &[f64], errors: &[SegmentError]) -> Vec<f64> {
    let m = alpha.len();
    let mut steps = vec![0.0; m];
    for s in 1..m - 1 {
        let (prev, here, next) = (alpha[s - 1], alpha[s], alpha[s + 1]);
        let (left, right) = (errors[s - 1], errors[s]);
        let slope_here = curve.derivative(here);
        // d(error_left)/d(alpha_s) >= 0 and d(error_right)/d(alpha_s) <= 0
        let d_left = (left.peak - prev) * (slope_here - left.slope) / (here - prev);
        let d_right = (slope_here - right.slope) * (next - right.peak) / (next - here);
        let denom = d_left - d_right;
        if !(denom.is_finite() && denom > 0.0) {
            continue;
        }
        let step = (right.error - left.error) / denom;
        steps[s] = step.clamp(-0.45 * (here - prev), 0.45 * (next - here));
    }
    steps
}

/// Removes interior basepoints whose derivative equals that of an earlier
/// basepoint and re-inserts them at the midpoints of the currently worst
/// segments, worst first. Returns `None` when there is nothing to move.
fn reinsert_duplicates(curve: &dyn Curve, alpha: &[f64], errors: &[SegmentError]) -> Option<Vec<f64>> {
    let m = alpha.len();
    let slopes: Vec<f64> = alpha.iter().map(|&a| curve.derivative(a)).collect();
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut keep = vec![true; m];
    for s in 1..m - 1 {
        if (0..s).any(|i| keep[i] && same(slopes[i], slopes[s])) {
            keep[s] = false;
        }
    }
    let removed = keep.iter().filter(|k| !**k).count();
    if removed == 0 || worst(errors) <= 0.0 {
        return None;
    }
    let mut kept: Vec<f64> = alpha
        .iter()
        .zip(&keep)
        .filter_map(|(&a, &k)| k.then_some(a))
        .collect();
    for _ in 0..removed {
        let errs = segment_errors(curve, &kept);
        let (s, _) = errs
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, e)| if e.error > best.1 { (i, e.error) } else { best });
        let mid = 0.5 * (kept[s] + kept[s + 1]);
        kept.insert(s + 1, mid);
    }
    (kept != alpha).then_some(kept)
}

/// The standard preset: six basepoints on `[0, 0.96]` for `ρ/(1−ρ)`.
pub fn default_basepoints() -> &'static BasepointSet {
    static PRESET: OnceLock<BasepointSet> = OnceLock::new();
    PRESET.get_or_init(|| {
        imamoto_extended(&WeightedTis, DEFAULT_BASEPOINTS, DEFAULT_INTERVAL_END)
            .expect("standard preset is valid")
    })
}

/// Basepoints for the weighted time-in-system curve on `[0, interval_end]`.
pub fn weighted_tis_basepoints(m: usize, interval_end: f64) -> Result<BasepointSet, PwlError> {
    if !(interval_end > 0.0 && interval_end < 1.0) {
        return Err(PwlError::IntervalEnd(interval_end));
    }
    imamoto_extended(&WeightedTis, m, interval_end)
}
