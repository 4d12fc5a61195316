//! Flat `key = value` text: one pair per line, `#` starts a comment.

use crate::error::{config_err, Result};

/// Pairs in file order. Blank lines are skipped; duplicate keys are errors.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(config_err(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(config_err(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// `"HxW"` (or `"H×W"`) to `(height, width)`, both positive.
pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let bad = || config_err(format!("expected a size like 480x640, got `{text}`"));
    let (h, w) = text.trim().split_once(['x', 'X', '×']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}
