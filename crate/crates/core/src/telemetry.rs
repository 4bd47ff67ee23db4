//! Per-task counters: multiply-accumulate counts and numerical fallbacks.
//!
//! Counters are plain values threaded through the kernels. Parallel callers
//! keep one [`Telemetry`] per task and [`Telemetry::merge`] them at join
//! points, so there is no shared mutable state.

use std::collections::BTreeMap;

/// Complex multiply-accumulate counts keyed by `(module, op)`.
///
/// A disabled counter ignores every `add`, so all counts stay zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopCounter {
    enabled: bool,
    counts: BTreeMap<(&'static str, &'static str), u64>,
}

impl FlopCounter {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            counts: BTreeMap::new(),
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    #[inline]
    pub fn add(&mut self, module: &'static str, op: &'static str, macs: u64) {
        if self.enabled {
            *self.counts.entry((module, op)).or_insert(0) += macs;
        }
    }

    pub fn get(&self, module: &str, op: &str) -> u64 {
        self.counts
            .iter()
            .filter(|((m, o), _)| *m == module && *o == op)
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn module_total(&self, module: &str) -> u64 {
        self.counts
            .iter()
            .filter(|((m, _), _)| *m == module)
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&'static str, &'static str, u64)> + '_ {
        self.counts.iter().map(|((m, o), c)| (*m, *o, *c))
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for (key, c) in &other.counts {
            *self.counts.entry(*key).or_insert(0) += c;
        }
    }

    pub fn reset(&mut self) {
        self.counts.clear();
    }
}

/// Everything a numerical routine may want to report besides its result.
#[derive(Debug, Clone, Default)]
pub struct Telemetry {
    pub flops: FlopCounter,
    /// Hermitian solves that needed the diagonal ridge fallback.
    pub ridge_activations: usize,
    /// Diagonal entries floored inside the Taylor inverse.
    pub diag_floors: usize,
    /// Linear solves that fell back to LU because the matrix was indefinite.
    pub lu_fallbacks: usize,
}

impl Telemetry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn instrumented() -> Self {
        Self {
            flops: FlopCounter::enabled(),
            ..Self::default()
        }
    }

    pub fn merge(&mut self, other: &Telemetry) {
        self.flops.merge(&other.flops);
        self.ridge_activations += other.ridge_activations;
        self.diag_floors += other.diag_floors;
        self.lu_fallbacks += other.lu_fallbacks;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_counter_stays_zero() {
        let mut c = FlopCounter::disabled();
        c.add("du", "gram", 1000);
        assert_eq!(c.total(), 0);
        assert_eq!(c.entries().count(), 0);
    }

    #[test]
    fn merge_adds_per_key() {
        let mut a = FlopCounter::enabled();
        let mut b = FlopCounter::enabled();
        a.add("du", "gram", 3);
        b.add("du", "gram", 4);
        b.add("accel", "solve", 5);
        a.merge(&b);
        assert_eq!(a.get("du", "gram"), 7);
        assert_eq!(a.module_total("accel"), 5);
        assert_eq!(a.total(), 12);
    }
}
