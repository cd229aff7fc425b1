//! Canonical text forms used wherever outputs are compared byte for byte.
//!
//! Canonical JSON is compact `serde_json` output of a `serde_json::Value`:
//! object keys sorted by byte order, no whitespace, numbers in shortest
//! round-trip form (integers without a fraction, floats as produced by
//! `ryu`). CSV reals use `%.6g`-style six-significant-digit decimals.

use serde::Serialize;

pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // Value's object map is a BTreeMap, which sorts keys
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Six significant digits, trailing zeros trimmed, exponent form outside
/// `1e-4 .. 1e6` (C `%.6g`).
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
