//! Persistent outputs of a run: the per-step metrics CSV and the JSONL event
//! trace, plus a reader for the trace.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use crate::bic_explore::{
    ActionRecord, ConstantsRegistry, Failure, GrowthRecord, Recommendation, TiltLog, TranscriptReport,
};
use crate::geometry::sym_eigen_desc;
use crate::posterior::CloudSampling;
use crate::priors::{AssumptionConstants, PriorSpec};
use crate::{Error, Result};

pub const CSV_VERSION_LINE: &str = "# bicx metrics v1";
pub const CSV_HEADER: &str = "t,phase,j,ell_lambda,min_eig,perp_norm,reward";

/// One line of the JSONL trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: u64,
    pub kind: String,
    pub payload: Value,
}

/// How the algorithm's particle cloud was drawn, so that it can be rebuilt.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CloudParams {
    pub n_particles: usize,
    pub sampling: CloudSampling,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetupPayload {
    pub config: RunConfig,
    pub dim: usize,
    pub seed: u64,
    pub lambda_bar: f64,
    /// Prior after rotating its mean onto `+e₁`; every vector in the trace
    /// lives in these coordinates.
    pub canonical_prior: PriorSpec,
    /// Rows of the rotation `Q` with `x_canonical = Q·x`.
    pub rotation: Vec<Vec<f64>>,
    pub assumption: AssumptionConstants,
    pub registry: ConstantsRegistry,
    pub cloud: CloudParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultPayload {
    pub success: bool,
    pub total_pulls: u64,
    pub achieved_lambda: f64,
    pub lambda_bar: f64,
    pub repeats: usize,
    pub failure: Option<Failure>,
    pub min_eig_trajectory: Vec<(u64, f64)>,
}

impl ResultPayload {
    pub fn from_transcript(t: &TranscriptReport) -> Self {
        ResultPayload {
            success: t.success,
            total_pulls: t.total_pulls,
            achieved_lambda: t.achieved_lambda,
            lambda_bar: t.lambda_bar,
            repeats: t.repeats,
            failure: t.failure.clone(),
            min_eig_trajectory: t.min_eig_trajectory.clone(),
        }
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn event<T: Serialize>(t: u64, kind: &str, payload: &T) -> Result<TraceEvent> {
    Ok(TraceEvent {
        t,
        kind: kind.into(),
        payload: serde_json::to_value(payload).map_err(|e| Error::Trace(e.to_string()))?,
    })
}

/// All trace events of a run, ordered by `t` (stable, so events sharing a
/// step keep their emission order).
pub fn trace_events(setup: &SetupPayload, t: &TranscriptReport) -> Result<Vec<TraceEvent>> {
    let mut ev = vec![event(0, "setup", setup)?];
    for a in &t.actions {
        ev.push(event(a.t, "action", a)?);
    }
    let last = t.actions.last().map_or(0, |a| a.t);
    for r in &t.recommendations {
        ev.push(event(r.first_t.unwrap_or(last), "recommendation", r)?);
    }
    for tl in &t.tilts {
        ev.push(event(tl.t, "tilt", tl)?);
    }
    for g in &t.growth {
        ev.push(event(g.t, "growth", g)?);
    }
    ev.push(event(last, "result", &ResultPayload::from_transcript(t))?);
    // Keep setup first and result last; order the rest by step.
    let n = ev.len();
    ev[1..n - 1].sort_by_key(|e| e.t);
    Ok(ev)
}

pub fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(|e| Error::Trace(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// A trace read back from disk.
#[derive(Debug, Clone)]
pub struct Trace {
    pub setup: SetupPayload,
    pub actions: Vec<ActionRecord>,
    pub recommendations: Vec<Recommendation>,
    pub tilts: Vec<TiltLog>,
    pub growth: Vec<GrowthRecord>,
    pub result: Option<ResultPayload>,
}

fn decode<T: serde::de::DeserializeOwned>(v: Value, line: usize) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Trace(format!("line {line}: {e}")))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Trace(format!("cannot open {}: {e}", path.display())))?;
    let mut setup = None;
    let (mut actions, mut recommendations, mut tilts, mut growth, mut result) = (vec![], vec![], vec![], vec![], None);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TraceEvent = serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", i + 1)))?;
        match e.kind.as_str() {
            "setup" => setup = Some(decode(e.payload, i + 1)?),
            "action" => actions.push(decode(e.payload, i + 1)?),
            "recommendation" => recommendations.push(decode::<Recommendation>(e.payload, i + 1)?),
            "tilt" => tilts.push(decode(e.payload, i + 1)?),
            "growth" => growth.push(decode(e.payload, i + 1)?),
            "result" => result = Some(decode(e.payload, i + 1)?),
            other => return Err(Error::Trace(format!("line {}: unknown event kind `{other}`", i + 1))),
        }
    }
    recommendations.sort_by_key(|r| r.id);
    Ok(Trace {
        setup: setup.ok_or_else(|| Error::Trace("trace has no setup event".into()))?,
        actions,
        recommendations,
        tilts,
        growth,
        result,
    })
}

/// Per-step metrics; `min_eig` is `λ_min` of the Gram matrix of all actions
/// up to and including that step.
pub fn metrics_csv(t: &TranscriptReport) -> Result<String> {
    let mut s = String::new();
    s.push_str(CSV_VERSION_LINE);
    s.push('\n');
    s.push_str(CSV_HEADER);
    s.push('\n');
    let Some(first) = t.actions.first() else {
        return Ok(s);
    };
    let d = first.action.len();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for a in &t.actions {
        for i in 0..d {
            for k in 0..d {
                g[(i, k)] += a.action[i] * a.action[k];
            }
        }
        let (vals, _) = sym_eigen_desc(&g)?;
        let min_eig = vals.last().copied().unwrap_or(0.0);
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            a.t,
            a.phase.as_str(),
            a.j,
            a.ell_lambda,
            min_eig,
            a.perp_norm,
            a.reward
        )
        .expect("writing to a String cannot fail");
    }
    Ok(s)
}

/// A parsed metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    pub phase: String,
    pub j: usize,
    pub ell_lambda: usize,
    pub min_eig: f64,
    pub perp_norm: f64,
    pub reward: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_VERSION_LINE) {
        return Err(Error::Trace("metrics CSV lacks the version line".into()));
    }
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Trace("metrics CSV header mismatch".into()));
    }
    let bad = |n: usize| Error::Trace(format!("metrics CSV row {n} is malformed"));
    lines
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n + 1));
            }
            Ok(MetricsRow {
                t: f[0].parse().map_err(|_| bad(n + 1))?,
                phase: f[1].to_string(),
                j: f[2].parse().map_err(|_| bad(n + 1))?,
                ell_lambda: f[3].parse().map_err(|_| bad(n + 1))?,
                min_eig: f[4].parse().map_err(|_| bad(n + 1))?,
                perp_norm: f[5].parse().map_err(|_| bad(n + 1))?,
                reward: f[6].parse().map_err(|_| bad(n + 1))?,
            })
        })
        .collect()
}
