//! CSV and JSON emission. Numbers are written in Rust's shortest round-trip
//! form, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GradientField, HalfPlaneGrid, C64};

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::from)
}

/// Columns `x,t,f1,f2` with `f = f1 + i f2`, `t` outer.
pub fn field_csv(grid: &HalfPlaneGrid, f: &GradientField) -> String {
    let mut out = String::from("x,t,f1,f2\n");
    let xs = grid.xs();
    for (k, &t) in grid.layers().iter().enumerate() {
        for (j, &x) in xs.iter().enumerate() {
            let v = f.at(k, j);
            let _ = writeln!(out, "{x},{t},{},{}", v.re, v.im);
        }
    }
    out
}

pub fn trace_csv(grid: &HalfPlaneGrid, v: &[C64]) -> String {
    let mut out = String::from("x,re,im\n");
    for (x, v) in grid.xs().iter().zip(v) {
        let _ = writeln!(out, "{x},{},{}", v.re, v.im);
    }
    out
}

/// Pretty JSON with object keys sorted.
pub fn json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value keeps maps in a BTreeMap, which sorts the keys
    let v = serde_json::to_value(value)
        .map_err(|e| Error::Invariant(format!("cannot serialize: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v)
        .map_err(|e| Error::Invariant(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Reads a field written by [`field_csv`] and rebuilds its grid.
pub fn read_field_csv(path: &Path) -> Result<(HalfPlaneGrid, GradientField)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .collect();
    if header != ["x", "t", "f1", "f2"] {
        return Err(bad("expected header x,t,f1,f2".into()));
    }
    let mut ts: Vec<f64> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut layers: Vec<Vec<C64>> = Vec::new();
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("row {} is not numeric", row + 2)))?;
        let [x, t, f1, f2] = vals[..] else {
            return Err(bad(format!("row {} needs 4 columns", row + 2)));
        };
        if ts.last() != Some(&t) {
            ts.push(t);
            layers.push(Vec::new());
        }
        let layer = layers.last_mut().unwrap();
        if ts.len() == 1 {
            xs.push(x);
        } else if xs.get(layer.len()) != Some(&x) {
            return Err(bad(format!(
                "row {}: x grid differs between layers",
                row + 2
            )));
        }
        layer.push(C64::new(f1, f2));
    }
    let n = xs.len();
    if n < 2 {
        return Err(bad("field has fewer than 2 points per layer".into()));
    }
    let dx = xs[1] - xs[0];
    let l = dx * n as f64;
    if (xs[0] + 0.5 * l).abs() > 1e-9 * l
        || xs.windows(2).any(|w| ((w[1] - w[0]) - dx).abs() > 1e-9 * l)
    {
        return Err(bad("x must be the uniform grid -L/2 + j L/N".into()));
    }
    let grid = HalfPlaneGrid::new(n, l, ts, 0.5).map_err(|e| bad(e.to_string()))?;
    let field = GradientField::from_layers(layers).map_err(|e| bad(e.to_string()))?;
    Ok((grid, field))
}
