//! Canonical decimal rendering for answer values.
//!
//! Candidate answers are scored as strings, so every numeric value that
//! becomes a candidate goes through one formatting rule: as many fraction
//! digits as the grid step (or the anchor itself) needs, and no more.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest number of fraction digits the formatter will ever emit.
pub const MAX_FRACTION_DIGITS: usize = 9;

/// Smallest number of fraction digits that renders `x` without loss,
/// capped at [`MAX_FRACTION_DIGITS`].
pub fn fraction_digits(x: f64) -> usize {
    let x = x.abs();
    let mut scale = 1.0_f64;
    for digits in 0..MAX_FRACTION_DIGITS {
        let scaled = x * scale;
        if (scaled - scaled.round()).abs() < 1e-6 {
            return digits;
        }
        scale *= 10.0;
    }
    MAX_FRACTION_DIGITS
}

/// Render `value` with exactly `digits` fraction digits. Negative zero is
/// printed as zero.
pub fn format_fixed(value: f64, digits: usize) -> String {
    let text = format!("{value:.digits$}");
    match text.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => text,
    }
}

/// Round `value` to `digits` fraction digits through its decimal text, so the
/// result is exactly the float a reader would parse back from the rendering.
pub fn snap(value: f64, digits: usize) -> f64 {
    format_fixed(value, digits)
        .parse()
        .expect("fixed-point rendering of a finite float parses")
}

/// Identity of an answer value at micro-unit resolution.
///
/// Two values that render identically at up to six fraction digits share a
/// key, which absorbs the float noise of `anchor + k * step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueKey(i64);

impl ValueKey {
    const SCALE: f64 = 1e6;

    pub fn of(value: f64) -> Self {
        ValueKey((value * Self::SCALE).round() as i64)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / Self::SCALE
    }
}

impl fmt::Display for ValueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = fraction_digits(self.value()).min(6);
        f.write_str(&format_fixed(self.value(), digits))
    }
}
