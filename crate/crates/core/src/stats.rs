//! Running moments and the Monte Carlo result record.

use serde::{Deserialize, Serialize};

/// Estimates whose truncated fraction exceeds this are flagged invalid.
pub const TRUNCATION_LIMIT: f64 = 1e-3;

/// Count, mean and centered second moment; merges exactly (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    /// Sample variance (divisor `n - 1`).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Monte Carlo estimate with its uncertainty and validity flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`, or the propagated equivalent.
    pub stderr: f64,
    /// Walks that contributed (truncated walks excluded).
    pub n: u64,
    pub truncated: u64,
    pub truncated_fraction: f64,
    pub flagged: bool,
    pub bias_note: String,
}

impl Estimate {
    pub fn exact(value: f64, note: &str) -> Self {
        Estimate {
            mean: value,
            stderr: 0.0,
            n: 0,
            truncated: 0,
            truncated_fraction: 0.0,
            flagged: false,
            bias_note: note.to_string(),
        }
    }

    pub fn from_moments(m: &Moments, truncated: u64, eps_absorb: f64) -> Self {
        let total = m.n + truncated;
        let frac = if total == 0 { 0.0 } else { truncated as f64 / total as f64 };
        Estimate {
            mean: m.mean,
            stderr: m.stderr(),
            n: m.n,
            truncated,
            truncated_fraction: frac,
            flagged: frac > TRUNCATION_LIMIT || m.n == 0,
            bias_note: shell_note(eps_absorb, frac),
        }
    }

    /// `|a - b| ≤ k·√(σa² + σb²)`
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.combined_stderr(other)
    }

    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.mean.abs()
    }
}

pub(crate) fn shell_note(eps_absorb: f64, truncated_fraction: f64) -> String {
    let mut note = format!("absorption shell bias O(eps_absorb = {eps_absorb:e})");
    if truncated_fraction > 0.0 {
        note.push_str(&format!(
            "; {truncated_fraction:.2e} of walks truncated and excluded, bias bounded by that fraction times the functional's range"
        ));
    }
    if truncated_fraction > TRUNCATION_LIMIT {
        note.push_str("; INVALID: truncated fraction above 1e-3");
    }
    note
}
