use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear dropout rate over training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct DropoutSchedule {
    breakpoints: Vec<(f64, f64)>,
}

impl DropoutSchedule {
    /// `breakpoints` are `(progress, rate)` pairs; progress must start at 0,
    /// end at 1 and strictly increase, rates must lie in `[0, 1)`.
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |m: &str| Err(Error::config(format!("dropout schedule: {m}")));
        if breakpoints.len() < 2 {
            return bad("needs at least two breakpoints");
        }
        if breakpoints[0].0 != 0.0 || breakpoints[breakpoints.len() - 1].0 != 1.0 {
            return bad("must start at progress 0 and end at progress 1");
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("progress must strictly increase");
        }
        if breakpoints.iter().any(|&(_, r)| !(0.0..1.0).contains(&r)) {
            return bad("rates must be in [0, 1)");
        }
        Ok(DropoutSchedule { breakpoints })
    }

    /// `0, 0@0.2, 0.3@0.5, 0`: off for the first fifth, ramping to 0.3 at the
    /// midpoint, back to 0 at the end.
    pub fn stage1() -> Self {
        DropoutSchedule::new(vec![(0.0, 0.0), (0.2, 0.0), (0.5, 0.3), (1.0, 0.0)]).expect("valid")
    }

    /// No dropout at any point.
    pub fn constant_zero() -> Self {
        DropoutSchedule::new(vec![(0.0, 0.0), (1.0, 0.0)]).expect("valid")
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn is_zero(&self) -> bool {
        self.breakpoints.iter().all(|&(_, r)| r == 0.0)
    }

    /// Parses the `0, 0@0.2, 0.3@0.5, 0` notation: bare first and last
    /// entries sit at progress 0 and 1, the rest are `rate@progress`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let n = parts.len();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::config(format!("dropout schedule: bad number {s:?}")))
        };
        let mut points = Vec::with_capacity(n);
        for (i, p) in parts.iter().enumerate() {
            let point = match p.split_once('@') {
                Some((r, at)) => (num(at)?, num(r)?),
                None if i == 0 => (0.0, num(p)?),
                None if i == n - 1 => (1.0, num(p)?),
                None => return Err(Error::config(format!("dropout schedule: {p:?} needs @progress"))),
            };
            points.push(point);
        }
        DropoutSchedule::new(points)
    }
}

impl TryFrom<Vec<(f64, f64)>> for DropoutSchedule {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        DropoutSchedule::new(v)
    }
}

impl From<DropoutSchedule> for Vec<(f64, f64)> {
    fn from(s: DropoutSchedule) -> Self {
        s.breakpoints
    }
}

pub fn dropout_rate(schedule: &DropoutSchedule, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::domain(format!("progress {progress} outside [0, 1]")));
    }
    let bp = &schedule.breakpoints;
    let k = bp.partition_point(|&(p, _)| p <= progress);
    if k >= bp.len() {
        return Ok(bp[bp.len() - 1].1);
    }
    let (p0, r0) = bp[k - 1];
    let (p1, r1) = bp[k];
    Ok(r0 + (r1 - r0) * (progress - p0) / (p1 - p0))
}
