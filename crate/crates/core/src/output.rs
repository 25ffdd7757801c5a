//! CSV helpers shared by the writers.

/// `v` rounded to `digits` significant digits, printed in shortest form.
pub fn format_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() || v == 0.0 {
        return format!("{v}");
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v);
    format!("{rounded}")
}

pub fn fmt12(v: f64) -> String {
    format_sig(v, 12)
}

pub(crate) fn csv_error(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e.to_string()))
}
