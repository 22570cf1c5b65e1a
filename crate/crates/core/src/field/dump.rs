//! Plain-text node dump.
//!
//! ```text
//! # fbslab field dump v1
//! dim 2
//! cells_per_axis 65 65
//! spacing 0.03125 0.03125
//! origin -1 -1
//! values 4225
//! <one value per line, row-major, last axis fastest>
//! ```
//!
//! `cells_per_axis` counts nodes along each axis. Values use the shortest
//! representation that round-trips, so a dump re-reads bit-exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{FieldError, Grid, ScalarField};

const MAGIC: &str = "# fbslab field dump v1";

fn join(values: &[impl std::fmt::Display]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render the dump of `values` on `grid`.
pub fn dump_string(grid: &Grid, values: &[f64]) -> String {
    let mut s = String::with_capacity(24 * values.len() + 128);
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "dim {}", grid.dim());
    let _ = writeln!(s, "cells_per_axis {}", join(grid.nodes_per_axis()));
    let _ = writeln!(s, "spacing {}", join(grid.spacing()));
    let _ = writeln!(s, "origin {}", join(grid.lower()));
    let _ = writeln!(s, "values {}", values.len());
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn write_dump(field: &ScalarField, mut out: impl Write) -> Result<(), FieldError> {
    out.write_all(dump_string(field.grid(), field.values()).as_bytes())?;
    Ok(())
}

fn header<'a>(line: Option<std::io::Result<String>>, key: &'a str) -> Result<Vec<String>, FieldError> {
    let line = line.ok_or_else(|| FieldError::Dump(format!("missing `{key}` line")))??;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(FieldError::Dump(format!("expected `{key}`, found `{line}`")));
    }
    Ok(parts.map(str::to_owned).collect())
}

fn parse<T: std::str::FromStr>(items: &[String], key: &str) -> Result<Vec<T>, FieldError> {
    items
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| FieldError::Dump(format!("bad `{key}` entry `{s}`")))
        })
        .collect()
}

pub fn read_dump(input: impl BufRead) -> Result<ScalarField, FieldError> {
    let mut lines = input.lines();
    let magic = lines
        .next()
        .ok_or_else(|| FieldError::Dump("empty dump".into()))??;
    if magic.trim() != MAGIC {
        return Err(FieldError::Dump(format!("unknown header `{magic}`")));
    }
    let dim: Vec<usize> = parse(&header(lines.next(), "dim")?, "dim")?;
    let nodes: Vec<usize> = parse(&header(lines.next(), "cells_per_axis")?, "cells_per_axis")?;
    let spacing: Vec<f64> = parse(&header(lines.next(), "spacing")?, "spacing")?;
    let origin: Vec<f64> = parse(&header(lines.next(), "origin")?, "origin")?;
    let count: Vec<usize> = parse(&header(lines.next(), "values")?, "values")?;
    let dim = *dim
        .first()
        .ok_or_else(|| FieldError::Dump("empty `dim`".into()))?;
    let grid = Grid::from_parts(dim, &nodes, &origin, &spacing)?;
    let count = *count
        .first()
        .ok_or_else(|| FieldError::Dump("empty `values`".into()))?;
    let mut values = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|_| FieldError::Dump(format!("bad value `{t}`")))?,
        );
    }
    if values.len() != count {
        return Err(FieldError::Dump(format!(
            "header announces {count} values, body has {}",
            values.len()
        )));
    }
    ScalarField::new(grid, values)
}
