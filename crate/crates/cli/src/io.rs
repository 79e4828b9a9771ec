//! File formats: operator specs, weights, initial states and outputs.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ewcert::iterate::IterationTrace;
use ewcert::matnorm::{Matrix, PositiveWeight};
use ewcert::operators::{AffineOp, OperatorModel};
use serde::Serialize;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn looks_like_json(text: &str) -> bool {
    matches!(text.trim_start().chars().next(), Some('{') | Some('['))
}

/// Operator from a JSON spec (`{"type": "affine" | "diag_nonlin_affine" | "mas", …}`)
/// or a plain CSV/whitespace matrix, which is read as the linear map `x ↦ Ax`.
pub fn parse_operator(text: &str) -> Result<OperatorModel> {
    if looks_like_json(text) {
        return Ok(OperatorModel::from_json_str(text)?);
    }
    let matrix = Matrix::from_csv_str(text)?;
    Ok(OperatorModel::Affine(AffineOp::linear(matrix)?))
}

pub fn load_operator(path: &Path) -> Result<OperatorModel> {
    parse_operator(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Numbers from a JSON array or a comma/whitespace separated list.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    if looks_like_json(text) {
        return serde_json::from_str(text).context("expected a JSON array of numbers");
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("invalid number '{s}'"))
        })
        .collect()
}

pub fn load_weight(path: &Path) -> Result<PositiveWeight> {
    let values = parse_numbers(&read_text(path)?)?;
    Ok(PositiveWeight::new(values)?)
}

/// A vector given inline (`"1,2,3"`) or as the path of a file holding one.
pub fn parse_vector_arg(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    if path.is_file() {
        parse_numbers(&read_text(path)?)
    } else {
        parse_numbers(arg)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_trace(path: &Path, trace: &IterationTrace) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trace
        .write_csv(std::io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes serializable rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn require_dim(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        bail!("{what} has length {got}, expected {expected}");
    }
    Ok(())
}
