//! Adapter for delegating a solve to an external conic solver.
//!
//! The child process receives one JSON document on stdin:
//!
//! ```json
//! {
//!   "n_vars": 2,
//!   "objective": [1.0, 0.0],
//!   "blocks": [
//!     {"dim": 2, "constant": [r0c0, r0c1, r1c0, r1c1],
//!      "terms": [{"var": 0, "matrix": [..row major..]}]}
//!   ]
//! }
//! ```
//!
//! meaning: minimize objective·x subject to constant + Σ x_var·matrix ⪯ 0
//! per block. It must print one JSON document on stdout:
//! `{"status": "optimal", "x": [..]}` with status one of `optimal`,
//! `infeasible`, `unknown`. The caller re-validates any returned point, so a
//! misbehaving solver can cause a failure but never an unsound certificate.

use std::io::Write;
use std::process::{Command, Stdio};

use nalgebra::DVector;
use serde_json::{json, Value};

use crate::{Result, SdpError, SdpProblem};

fn encode(prob: &SdpProblem) -> Value {
    json!({
        "n_vars": prob.n_vars,
        "objective": prob.objective.iter().copied().collect::<Vec<f64>>(),
        "blocks": prob.blocks.iter().map(|b| json!({
            "dim": b.dim,
            "constant": b.constant.transpose().iter().copied().collect::<Vec<f64>>(),
            "terms": b.terms.iter().map(|(j, a)| json!({
                "var": j,
                "matrix": a.transpose().iter().copied().collect::<Vec<f64>>(),
            })).collect::<Vec<Value>>(),
        })).collect::<Vec<Value>>(),
    })
}

/// Runs `cmd` (split on whitespace: program then args) on the encoded
/// problem and returns the solution vector it claims.
pub fn solve(prob: &SdpProblem, cmd: &str) -> Result<DVector<f64>> {
    let mut parts = cmd.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| SdpError::BadProblem("empty external solver command".into()))?;
    let mut child = Command::new(program)
        .args(parts)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SdpError::NumericalBreakdown(format!("spawning {program}: {e}")))?;
    let payload = encode(prob).to_string();
    child
        .stdin
        .take()
        .expect("stdin was piped")
        .write_all(payload.as_bytes())
        .map_err(|e| SdpError::NumericalBreakdown(format!("writing to {program}: {e}")))?;
    let out = child
        .wait_with_output()
        .map_err(|e| SdpError::NumericalBreakdown(format!("waiting for {program}: {e}")))?;
    if !out.status.success() {
        return Err(SdpError::NumericalBreakdown(format!(
            "external solver exited with {}",
            out.status
        )));
    }
    let reply: Value = serde_json::from_slice(&out.stdout)
        .map_err(|e| SdpError::NumericalBreakdown(format!("unparseable solver reply: {e}")))?;
    match reply["status"].as_str() {
        Some("optimal") => {}
        Some("infeasible") => {
            return Err(SdpError::NumericalBreakdown(
                "external solver reported infeasible".into(),
            ))
        }
        other => {
            return Err(SdpError::NumericalBreakdown(format!(
                "external solver status {other:?}"
            )))
        }
    }
    let xs = reply["x"]
        .as_array()
        .ok_or_else(|| SdpError::NumericalBreakdown("solver reply lacks x".into()))?;
    if xs.len() != prob.n_vars {
        return Err(SdpError::NumericalBreakdown(format!(
            "solver returned {} entries for {} variables",
            xs.len(),
            prob.n_vars
        )));
    }
    let mut x = DVector::zeros(prob.n_vars);
    for (i, v) in xs.iter().enumerate() {
        x[i] = v.as_f64().ok_or_else(|| {
            SdpError::NumericalBreakdown("non-numeric entry in solver reply".into())
        })?;
        if !x[i].is_finite() {
            return Err(SdpError::NumericalBreakdown(
                "non-finite entry in solver reply".into(),
            ));
        }
    }
    Ok(x)
}
