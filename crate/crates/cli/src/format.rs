//! Number formatting for CSV and JSON output.

/// Rounds to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// 9 significant digits, printed in shortest round-trip form.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round9(x);
    if r == 0.0 {
        return "0".into();
    }
    if r.abs() < 1e-4 || r.abs() >= 1e15 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// JSON value for a float: a number, or a string for non-finite values.
pub fn json_num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::Number::from_f64(round9(x))
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    } else {
        serde_json::Value::String(num(x))
    }
}

/// Parses a CSV cell written by [`num`]; empty cells are missing.
pub fn parse_num(cell: &str) -> Option<f64> {
    match cell.trim() {
        "" => None,
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        s => s.parse().ok(),
    }
}
