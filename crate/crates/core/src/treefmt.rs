//! Line-oriented tree serialization.
//!
//! One segment per line, five space-separated fields:
//!
//! ```text
//! <label> <parent> <attach> <length> <decoration>
//! ```
//!
//! * `label`: dot-separated Ulam path, `.` for the root;
//! * `parent`: the parent's label, `-` for the root; parents must be
//!   defined on an earlier line;
//! * `attach`: position along the parent segment;
//! * `length`: the segment length z_u;
//! * `decoration`: comma-separated run-length-encoded samples, each token
//!   either `value` or `value*count` for `count` repeats.
//!
//! Floats are written with the shortest representation that round-trips,
//! so writing is bit-stable given a seed and `parse` recovers the exact
//! values. Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;

use crate::error::{Result, SsmtError};
use crate::genealogy::{compute_diagnostics, leaf_indices, DecoratedTree, Segment, Ulam};

/// Hard caps keeping hostile inputs from ballooning memory.
const MAX_SEGMENTS: usize = 1_000_000;
const MAX_DECORATION: usize = 1_000_000;

pub fn write_tree(tree: &DecoratedTree) -> String {
    let mut out = String::with_capacity(tree.segments.len() * 64);
    out.push_str("# ssmt tree v1\n");
    for seg in &tree.segments {
        let parent = match seg.parent {
            Some(p) => tree.segments[p].label.to_string(),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            seg.label,
            parent,
            seg.attach,
            seg.length,
            encode_rle(&seg.decoration)
        ));
    }
    out
}

pub fn parse_tree(input: &str) -> Result<DecoratedTree> {
    let mut segments: Vec<Segment> = Vec::new();
    let mut index_of: BTreeMap<Ulam, usize> = BTreeMap::new();
    for (lineno, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| SsmtError::Parse(format!("line {}: {}", lineno + 1, msg));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let label = Ulam::parse(fields[0])?;
        if index_of.contains_key(&label) {
            return Err(err(format!("duplicate label {label}")));
        }
        let parent = if fields[1] == "-" {
            if !label.0.is_empty() {
                return Err(err(format!("non-root segment {label} without parent")));
            }
            None
        } else {
            let p = Ulam::parse(fields[1])?;
            match index_of.get(&p) {
                Some(&i) => Some(i),
                None => return Err(err(format!("parent {p} not defined before {label}"))),
            }
        };
        if label.0.is_empty() && parent.is_some() {
            return Err(err("root segment cannot have a parent".into()));
        }
        let attach = parse_f64(fields[2]).map_err(&err)?;
        let length = parse_f64(fields[3]).map_err(&err)?;
        if attach < 0.0 || length < 0.0 {
            return Err(err("attach and length must be nonnegative".into()));
        }
        if let Some(p) = parent {
            if attach > segments[p].length * (1.0 + 1e-9) + 1e-12 {
                return Err(err(format!(
                    "attach {attach} beyond parent length {}",
                    segments[p].length
                )));
            }
        }
        let decoration = decode_rle(fields[4]).map_err(&err)?;
        if decoration.is_empty() {
            return Err(err("empty decoration".into()));
        }
        let depth_start = match parent {
            Some(p) => segments[p].depth_start + attach,
            None => 0.0,
        };
        if segments.len() >= MAX_SEGMENTS {
            return Err(SsmtError::Parse(format!(
                "more than {MAX_SEGMENTS} segments"
            )));
        }
        let idx = segments.len();
        segments.push(Segment {
            label: label.clone(),
            parent,
            attach,
            length,
            decoration,
            depth_start,
        });
        index_of.insert(label, idx);
    }
    if segments.is_empty() {
        return Err(SsmtError::Parse("no segments".into()));
    }
    if segments[0].parent.is_some() || !segments[0].label.0.is_empty() {
        return Err(SsmtError::Parse("first segment must be the root".into()));
    }
    let leaves = leaf_indices(&segments);
    let diagnostics = compute_diagnostics(&segments, &leaves);
    Ok(DecoratedTree {
        segments,
        leaves,
        diagnostics,
    })
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("bad float {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    Ok(v)
}

fn encode_rle(values: &[f64]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i + 1;
        while j < values.len() && values[j].to_bits() == values[i].to_bits() {
            j += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        let run = j - i;
        if run > 1 {
            out.push_str(&format!("{}*{}", values[i], run));
        } else {
            out.push_str(&format!("{}", values[i]));
        }
        i = j;
    }
    out
}

fn decode_rle(s: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for token in s.split(',') {
        let (val_str, count) = match token.split_once('*') {
            Some((v, c)) => {
                let count: usize = c.parse().map_err(|_| format!("bad run count {c:?}"))?;
                (v, count)
            }
            None => (token, 1),
        };
        if count == 0 {
            return Err("zero run count".into());
        }
        let v = parse_f64(val_str)?;
        if out.len() + count > MAX_DECORATION {
            return Err(format!("decoration longer than {MAX_DECORATION}"));
        }
        out.extend(std::iter::repeat(v).take(count));
    }
    Ok(out)
}
