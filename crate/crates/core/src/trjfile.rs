//! Reader/writer for `.trj` trajectory files.
//!
//! One record per line: `id[,label],x:y,x:y,...` (UTF-8, `\n` line endings).
//! The label field is recognized by the absence of `:`. Blank lines and lines
//! starting with `#` are skipped. Coordinates are written with Rust's shortest
//! round-trip float formatting so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, Trajectory};

pub fn parse(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_line(line).map_err(|reason| Error::Parse { line: line_no, reason })?);
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<Trajectory, String> {
    let mut fields = line.split(',').map(str::trim).peekable();
    let id = fields.next().filter(|s| !s.is_empty()).ok_or("missing id")?;
    if id.contains(':') {
        return Err(format!("id `{id}` must not contain ':'"));
    }
    let label = match fields.peek() {
        Some(f) if !f.contains(':') => {
            let l = fields.next().unwrap();
            if l.is_empty() {
                return Err("empty label field".into());
            }
            Some(l.to_string())
        }
        _ => None,
    };
    let mut points = Vec::new();
    for (i, field) in fields.enumerate() {
        let mut parts = field.split(':');
        let (Some(xs), Some(ys), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("point {i} `{field}` is not an x:y pair"));
        };
        let x: f64 = xs.parse().map_err(|_| format!("point {i}: bad x `{xs}`"))?;
        let y: f64 = ys.parse().map_err(|_| format!("point {i}: bad y `{ys}`"))?;
        points.push(Point::new(x, y));
    }
    Trajectory::new(id, label, points).map_err(|e| e.to_string())
}

pub fn format_record(out: &mut String, id: &str, label: Option<&str>, points: &[Point]) {
    out.push_str(id);
    if let Some(l) = label {
        out.push(',');
        out.push_str(l);
    }
    for p in points {
        let _ = write!(out, ",{}:{}", p.x, p.y);
    }
    out.push('\n');
}

pub fn to_string(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajs {
        format_record(&mut out, &t.id, t.label.as_deref(), &t.points);
    }
    out
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    parse(&text)
}

pub fn save(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    fs::write(path, to_string(trajs))?;
    Ok(())
}
