use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use slq_core::lyapunov::sare_residual;
use slq_core::matlib::{is_positive_definite, SymMatrix, PD_TOL};
use slq_core::ValueMatrix;

use crate::config::{matrix, ExperimentConfig};

pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub residual: SymMatrix,
    pub norm: f64,
    pub positive_definite: bool,
}

impl VerifyReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.norm < tol
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "R(P) =")?;
        let full = self.residual.to_full();
        for r in full.row_iter() {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:>24.16e}")).collect();
            writeln!(f, "  [{}]", cells.join(", "))?;
        }
        writeln!(f, "||R(P)||_F = {:.6e}", self.norm)?;
        write!(
            f,
            "P positive definite: {}",
            if self.positive_definite { "yes" } else { "no" }
        )
    }
}

fn parse_inline(text: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    text.split([';', '\n'])
        .map(str::trim)
        .filter(|row| !row.is_empty())
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .with_context(|| format!("not a number: `{t}`"))
                })
                .collect()
        })
        .collect()
}

/// Reads `P` from a file or an inline string. Accepted forms are a
/// `summary.json` (its `final_p`), a JSON array of rows, or rows separated
/// by `;` or newlines with entries separated by commas or spaces.
pub fn parse_p(arg: &str) -> anyhow::Result<SymMatrix> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    } else {
        arg.to_string()
    };
    let rows: Vec<Vec<f64>> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(map)) => {
            let p = map
                .get("final_p")
                .context("JSON object has no `final_p` field")?;
            serde_json::from_value(p.clone()).context("`final_p` is not an array of rows")?
        }
        Ok(value @ serde_json::Value::Array(_)) => {
            serde_json::from_value(value).context("expected an array of rows")?
        }
        _ => parse_inline(&text)?,
    };
    let m = matrix(&rows, "P")?;
    if m.nrows() != m.ncols() {
        bail!("P must be square, got {}x{}", m.nrows(), m.ncols());
    }
    Ok(SymMatrix::from_full(&m)?)
}

/// Evaluates the Riccati residual of `p` for the configured problem.
pub fn verify(config: &ExperimentConfig, p: &SymMatrix) -> anyhow::Result<VerifyReport> {
    let system = config.system()?;
    let cost = config.cost(system.state_dim(), system.input_dim())?;
    if p.dim() != system.state_dim() {
        bail!(
            "P is {}x{}, the system has {} states",
            p.dim(),
            p.dim(),
            system.state_dim()
        );
    }
    let (residual, norm) = sare_residual(&system, &cost, &ValueMatrix::new(p.clone()))?;
    Ok(VerifyReport {
        residual,
        norm,
        positive_definite: is_positive_definite(p, PD_TOL),
    })
}
