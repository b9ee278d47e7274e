//! Plain-text plant definitions.
//!
//! ```text
//! # comments run to end of line
//! [plant]
//! name = twod
//! dim = 2
//!
//! [params]
//! a1 = -1
//! a2 = -2
//!
//! [dynamics]
//! x1' = a1*x1 + x2^2
//! x2' = a2*x2 + u
//!
//! [observable]
//! y = x1
//! ```
//!
//! Sections may appear in any order. `name` defaults to `plant` and the
//! observable to `x1`. Positions in errors are 1-based line and column.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::expr::{parse, Expr, Params};
use crate::system::{PlantError, PlantSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantFileError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid plant: {0}")]
    Invalid(#[from] PlantError),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl PlantFileError {
    fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        PlantFileError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Plant,
    Params,
    Dynamics,
    Observable,
}

/// A `key = value` line with positions of the value.
struct Entry<'a> {
    line: usize,
    key: &'a str,
    key_col: usize,
    value: &'a str,
    value_col: usize,
}

fn split_entry(line_no: usize, content: &str) -> Result<Entry<'_>, PlantFileError> {
    let lead = content.len() - content.trim_start().len();
    let Some(eq) = content.find('=') else {
        return Err(PlantFileError::at(line_no, lead + 1, "expected `key = value`"));
    };
    let key = content[..eq].trim();
    let after = &content[eq + 1..];
    let value_lead = after.len() - after.trim_start().len();
    let value = after.trim();
    if key.is_empty() {
        return Err(PlantFileError::at(line_no, lead + 1, "missing key before `=`"));
    }
    if value.is_empty() {
        return Err(PlantFileError::at(line_no, eq + 2, "missing value after `=`"));
    }
    Ok(Entry {
        line: line_no,
        key,
        key_col: lead + 1,
        value,
        value_col: eq + 1 + value_lead + 1,
    })
}

pub fn parse_plant(source: &str) -> Result<PlantSpec, PlantFileError> {
    let mut section = Section::None;
    let mut name: Option<String> = None;
    let mut dim: Option<(usize, usize)> = None;
    let mut params = Params::new();
    let mut dynamics: Vec<Entry> = Vec::new();
    let mut observable: Option<Entry> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find('#') {
            Some(k) => &raw[..k],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let col = content.len() - content.trim_start().len() + 1;
        if trimmed.starts_with('[') {
            section = match trimmed {
                "[plant]" => Section::Plant,
                "[params]" => Section::Params,
                "[dynamics]" => Section::Dynamics,
                "[observable]" => Section::Observable,
                _ => return Err(PlantFileError::at(line_no, col, format!("unknown section `{trimmed}`"))),
            };
            continue;
        }
        let entry = split_entry(line_no, content)?;
        match section {
            Section::None => {
                return Err(PlantFileError::at(line_no, col, "entry outside of any section"));
            }
            Section::Plant => match entry.key {
                "name" => name = Some(entry.value.to_string()),
                "dim" => {
                    let d: usize = entry.value.parse().map_err(|_| {
                        PlantFileError::at(line_no, entry.value_col, "dim must be a positive integer")
                    })?;
                    dim = Some((d, line_no));
                }
                other => {
                    return Err(PlantFileError::at(
                        line_no,
                        entry.key_col,
                        format!("unknown key `{other}` in [plant]"),
                    ))
                }
            },
            Section::Params => {
                let v: f64 = entry.value.parse().map_err(|_| {
                    PlantFileError::at(line_no, entry.value_col, format!("`{}` is not a real number", entry.value))
                })?;
                if params.insert(entry.key.to_string(), v).is_some() {
                    return Err(PlantFileError::at(
                        line_no,
                        entry.key_col,
                        format!("parameter `{}` declared twice", entry.key),
                    ));
                }
            }
            Section::Dynamics => dynamics.push(entry),
            Section::Observable => {
                if entry.key != "y" {
                    return Err(PlantFileError::at(line_no, entry.key_col, "observable must be written `y = <expr>`"));
                }
                if observable.is_some() {
                    return Err(PlantFileError::at(line_no, entry.key_col, "observable given twice"));
                }
                observable = Some(entry);
            }
        }
    }

    let Some((dim, dim_line)) = dim else {
        return Err(PlantFileError::at(1, 1, "missing `dim` in [plant]"));
    };
    if dim == 0 {
        return Err(PlantFileError::at(dim_line, 1, "dim must be at least 1"));
    }
    let names: BTreeSet<String> = params.keys().cloned().collect();
    let parse_at = |e: &Entry| {
        parse(e.value, dim, &names)
            .map_err(|err| PlantFileError::at(e.line, e.value_col + err.offset(), err.to_string()))
    };

    let mut slots: Vec<Option<Expr>> = vec![None; dim];
    for e in &dynamics {
        let index = e
            .key
            .strip_prefix('x')
            .and_then(|s| s.strip_suffix('\''))
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|k| (1..=dim).contains(k))
            .ok_or_else(|| {
                PlantFileError::at(e.line, e.key_col, format!("expected `xk'` with 1 <= k <= {dim}, found `{}`", e.key))
            })?;
        if slots[index - 1].is_some() {
            return Err(PlantFileError::at(e.line, e.key_col, format!("x{index}' defined twice")));
        }
        slots[index - 1] = Some(parse_at(e)?);
    }
    let mut equations = Vec::with_capacity(dim);
    for (k, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(f) => equations.push(f),
            None => {
                return Err(PlantFileError::at(dim_line, 1, format!("missing equation for x{}'", k + 1)));
            }
        }
    }
    let g = match &observable {
        Some(e) => parse_at(e)?,
        None => Expr::State(0),
    };
    Ok(PlantSpec::new(
        name.unwrap_or_else(|| "plant".to_string()),
        dim,
        equations,
        g,
        params,
    )?)
}

pub fn load_plant(path: &Path) -> Result<PlantSpec, PlantFileError> {
    let source = std::fs::read_to_string(path).map_err(|e| PlantFileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_plant(&source)
}

/// Renders a plant in the file format; `parse_plant` reads it back.
pub fn write_plant(p: &PlantSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[plant]\nname = {}\ndim = {}", p.name, p.dim);
    if !p.params.is_empty() {
        s.push_str("\n[params]\n");
        for (k, v) in &p.params {
            let _ = writeln!(s, "{k} = {v:?}");
        }
    }
    s.push_str("\n[dynamics]\n");
    for (k, f) in p.dynamics.iter().enumerate() {
        let _ = writeln!(s, "x{}' = {f}", k + 1);
    }
    let _ = writeln!(s, "\n[observable]\ny = {}", p.observable);
    s
}
