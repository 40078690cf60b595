use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Last `n` lines of `text`.
pub(crate) fn tail_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.len().saturating_sub(n);
    lines[start..].join("\n")
}

/// Percentage with at most one decimal, trailing `.0` dropped: 0.52 -> "52%", 0.832 -> "83.2%".
pub(crate) fn fmt_pct(fraction: f64) -> String {
    let tenths = (fraction * 1000.0).round() / 10.0;
    if tenths.fract() == 0.0 {
        format!("{:.0}%", tenths)
    } else {
        format!("{:.1}%", tenths)
    }
}

/// Three significant figures; scientific notation outside [1e-4, 1e3).
pub(crate) fn fmt_sig3(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{:.2}", value);
    }
    let exp = value.abs().log10().floor() as i32;
    if (-4..3).contains(&exp) {
        let decimals = (2 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, value);
        // rounding can carry into a new digit (e.g. 9.996 -> "10.00")
        let reparsed: f64 = s.parse().unwrap_or(value);
        if reparsed != 0.0 && reparsed.abs().log10().floor() as i32 != exp {
            return fmt_sig3(reparsed);
        }
        s
    } else {
        format!("{:.2e}", value)
    }
}

/// Like [`fmt_sig3`] but without trailing zeros: 0.5 -> "0.5", 12.0 -> "12".
pub(crate) fn fmt_compact(value: f64) -> String {
    let s = fmt_sig3(value);
    if s.contains('e') || !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Truncates to at most `max` chars, replacing the tail with "..." when cut.
pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    let keep = max.saturating_sub(3);
    let mut out: String = s.chars().take(keep).collect();
    out.push_str("...");
    out
}

/// Largest prefix of `s` not exceeding `max_bytes`, cut on a char boundary.
pub(crate) fn truncate_bytes(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut end = max_bytes;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}
