//! Central finite-difference gradient checking.

use std::collections::BTreeMap;

/// Denominator floor for [`relative_error`]. Central differences at step
/// 1e-6 carry roughly 1e-9 of absolute round-off, so entries smaller than
/// this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-2;

pub const DEFAULT_STEP: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Central difference of `f` with respect to `x[index]`.
pub fn central_difference<F>(x: &mut [f64], index: usize, step: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let saved = x[index];
    x[index] = saved + step;
    let plus = f(x);
    x[index] = saved - step;
    let minus = f(x);
    x[index] = saved;
    (plus - minus) / (2.0 * step)
}

/// Maximum relative error per named parameter block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub blocks: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn record(&mut self, block: &str, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        let entry = self.blocks.entry(block.to_string()).or_insert(0.0);
        if err > *entry || err.is_nan() {
            *entry = err;
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        for (name, &err) in &other.blocks {
            let entry = self.blocks.entry(name.clone()).or_insert(0.0);
            *entry = entry.max(err);
        }
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.values().copied().fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.blocks
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &v)| (k.as_str(), v))
    }
}
