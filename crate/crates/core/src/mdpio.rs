//! Text formats: the factored-MDP document and the results CSV.
//!
//! The MDP document is a JSON object with a fixed key schema. Serialization
//! is canonical (fixed key order, deterministic bytes) and emits every float
//! with 17 significant decimal digits, which round-trips `f64` bit-exactly.
//! Parsing is strict by default: unknown keys are rejected so typos in large
//! CPT documents cannot pass silently.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

use crate::model::{ActiveSteps, DynamicsFactor, FactoredMdp, RewardFactor, Violation};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum MdpIoError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("document failed validation: {summary}")]
    Validation { violations: Vec<Violation>, summary: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Reject unknown object keys (on by default).
    pub strict_fields: bool,
    /// Run model validation after structural parsing (on by default).
    pub validate: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { strict_fields: true, validate: true }
    }
}

fn schema_err(path: &str, message: impl Into<String>) -> MdpIoError {
    MdpIoError::Schema { path: path.to_string(), message: message.into() }
}

fn check_keys(
    obj: &serde_json::Map<String, Value>,
    allowed: &[&str],
    path: &str,
    strict: bool,
) -> Result<(), MdpIoError> {
    if !strict {
        return Ok(());
    }
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(schema_err(path, format!("unknown field `{key}`")));
        }
    }
    Ok(())
}

fn get_u64(obj: &serde_json::Map<String, Value>, key: &str, path: &str) -> Result<u64, MdpIoError> {
    obj.get(key)
        .ok_or_else(|| schema_err(path, format!("missing field `{key}`")))?
        .as_u64()
        .ok_or_else(|| schema_err(&format!("{path}.{key}"), "expected a nonnegative integer"))
}

fn get_f64_array(value: &Value, path: &str) -> Result<Vec<f64>, MdpIoError> {
    let arr = value
        .as_array()
        .ok_or_else(|| schema_err(path, "expected an array of numbers"))?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, v) in arr.iter().enumerate() {
        out.push(
            v.as_f64()
                .ok_or_else(|| schema_err(&format!("{path}[{i}]"), "expected a number"))?,
        );
    }
    Ok(out)
}

fn get_usize_array(value: &Value, path: &str) -> Result<Vec<usize>, MdpIoError> {
    let arr = value
        .as_array()
        .ok_or_else(|| schema_err(path, "expected an array of integers"))?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, v) in arr.iter().enumerate() {
        let u = v
            .as_u64()
            .ok_or_else(|| schema_err(&format!("{path}[{i}]"), "expected a nonnegative integer"))?;
        out.push(u as usize);
    }
    Ok(out)
}

/// Parses an MDP document with the given options.
pub fn parse_mdp_with(text: &str, options: ParseOptions) -> Result<FactoredMdp, MdpIoError> {
    let root: Value = serde_json::from_str(text).map_err(|e| MdpIoError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema_err("$", "document root must be an object"))?;
    check_keys(
        obj,
        &["format_version", "horizon", "num_actions", "entities", "initial", "dynamics", "rewards"],
        "$",
        options.strict_fields,
    )?;
    let version = get_u64(obj, "format_version", "$")?;
    if version != FORMAT_VERSION {
        return Err(schema_err(
            "$.format_version",
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let horizon = get_u64(obj, "horizon", "$")? as usize;
    let num_actions = get_u64(obj, "num_actions", "$")? as usize;
    let entities = get_usize_array(
        obj.get("entities").ok_or_else(|| schema_err("$", "missing field `entities`"))?,
        "$.entities",
    )?;

    let initial_val = obj
        .get("initial")
        .ok_or_else(|| schema_err("$", "missing field `initial`"))?
        .as_array()
        .ok_or_else(|| schema_err("$.initial", "expected an array of arrays"))?;
    let mut initial = Vec::with_capacity(initial_val.len());
    for (i, v) in initial_val.iter().enumerate() {
        initial.push(get_f64_array(v, &format!("$.initial[{i}]"))?);
    }

    let dynamics_val = obj
        .get("dynamics")
        .ok_or_else(|| schema_err("$", "missing field `dynamics`"))?
        .as_array()
        .ok_or_else(|| schema_err("$.dynamics", "expected an array"))?;
    let mut dynamics = Vec::with_capacity(dynamics_val.len());
    for (i, v) in dynamics_val.iter().enumerate() {
        let path = format!("$.dynamics[{i}]");
        let fobj = v
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        check_keys(fobj, &["entity", "parents", "cpt"], &path, options.strict_fields)?;
        let entity = get_u64(fobj, "entity", &path)? as usize;
        let parents = get_usize_array(
            fobj.get("parents").ok_or_else(|| schema_err(&path, "missing field `parents`"))?,
            &format!("{path}.parents"),
        )?;
        let cpt = get_f64_array(
            fobj.get("cpt").ok_or_else(|| schema_err(&path, "missing field `cpt`"))?,
            &format!("{path}.cpt"),
        )?;
        // Length check here gives a factor-specific message before validation.
        if entity < entities.len() && parents.iter().all(|&p| p < entities.len()) {
            let want: usize = parents.iter().map(|&p| entities[p]).product::<usize>()
                * num_actions
                * entities[entity];
            if cpt.len() != want {
                return Err(schema_err(
                    &format!("{path}.cpt"),
                    format!("length {} does not match shape (expected {want})", cpt.len()),
                ));
            }
        }
        dynamics.push(DynamicsFactor { entity, parents, cpt });
    }

    let rewards_val = obj
        .get("rewards")
        .ok_or_else(|| schema_err("$", "missing field `rewards`"))?
        .as_array()
        .ok_or_else(|| schema_err("$.rewards", "expected an array"))?;
    let mut rewards = Vec::with_capacity(rewards_val.len());
    for (i, v) in rewards_val.iter().enumerate() {
        let path = format!("$.rewards[{i}]");
        let robj = v
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        check_keys(robj, &["parents", "table", "active_steps"], &path, options.strict_fields)?;
        let parents = get_usize_array(
            robj.get("parents").ok_or_else(|| schema_err(&path, "missing field `parents`"))?,
            &format!("{path}.parents"),
        )?;
        let table = get_f64_array(
            robj.get("table").ok_or_else(|| schema_err(&path, "missing field `table`"))?,
            &format!("{path}.table"),
        )?;
        let active = match robj
            .get("active_steps")
            .ok_or_else(|| schema_err(&path, "missing field `active_steps`"))?
        {
            Value::String(s) if s == "all" => ActiveSteps::All,
            Value::Array(_) => ActiveSteps::Steps(BTreeSet::from_iter(get_usize_array(
                robj.get("active_steps").unwrap(),
                &format!("{path}.active_steps"),
            )?)),
            _ => {
                return Err(schema_err(
                    &format!("{path}.active_steps"),
                    "expected \"all\" or an array of steps",
                ))
            }
        };
        rewards.push(RewardFactor { parents, table, active_steps: active });
    }

    let mdp = FactoredMdp { horizon, num_actions, entities, initial, dynamics, rewards };
    if options.validate {
        let violations = mdp.validate();
        if !violations.is_empty() {
            let summary = violations
                .iter()
                .take(4)
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(MdpIoError::Validation { violations, summary });
        }
    }
    Ok(mdp)
}

/// Parses an MDP document (strict fields, validation on).
pub fn parse_mdp(text: &str) -> Result<FactoredMdp, MdpIoError> {
    parse_mdp_with(text, ParseOptions::default())
}

/// Reads and parses an MDP document from a file.
pub fn read_mdp(path: &Path) -> Result<FactoredMdp, MdpIoError> {
    let text = fs::read_to_string(path).map_err(|source| MdpIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_mdp(&text)
}

/// Decimal form that re-parses to the identical `f64` (17 significant digits).
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_f64_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

fn push_usize_array(out: &mut String, values: &[usize]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{v}");
    }
    out.push(']');
}

/// Serializes an MDP to the canonical document form.
///
/// Identical models produce identical bytes.
pub fn serialize_mdp(mdp: &FactoredMdp) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"format_version\": {FORMAT_VERSION},");
    let _ = writeln!(out, "  \"horizon\": {},", mdp.horizon);
    let _ = writeln!(out, "  \"num_actions\": {},", mdp.num_actions);
    out.push_str("  \"entities\": ");
    push_usize_array(&mut out, &mdp.entities);
    out.push_str(",\n  \"initial\": [\n");
    for (i, init) in mdp.initial.iter().enumerate() {
        out.push_str("    ");
        push_f64_array(&mut out, init);
        out.push_str(if i + 1 < mdp.initial.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ],\n  \"dynamics\": [\n");
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let _ = write!(out, "    {{\"entity\": {}, \"parents\": ", d.entity);
        push_usize_array(&mut out, &d.parents);
        out.push_str(", \"cpt\": ");
        push_f64_array(&mut out, &d.cpt);
        out.push('}');
        out.push_str(if i + 1 < mdp.dynamics.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ],\n  \"rewards\": [\n");
    for (i, r) in mdp.rewards.iter().enumerate() {
        out.push_str("    {\"parents\": ");
        push_usize_array(&mut out, &r.parents);
        out.push_str(", \"table\": ");
        push_f64_array(&mut out, &r.table);
        out.push_str(", \"active_steps\": ");
        match &r.active_steps {
            ActiveSteps::All => out.push_str("\"all\""),
            ActiveSteps::Steps(steps) => {
                let v: Vec<usize> = steps.iter().copied().collect();
                push_usize_array(&mut out, &v);
            }
        }
        out.push('}');
        out.push_str(if i + 1 < mdp.rewards.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

/// Writes an MDP document to a file.
pub fn write_mdp(path: &Path, mdp: &FactoredMdp) -> Result<(), MdpIoError> {
    fs::write(path, serialize_mdp(mdp)).map_err(|source| MdpIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Closed registry of per-method identifiers used in result output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    PlanningVi,
    Marginal,
    MarginalU,
    Map,
    Mmap,
    Vbp,
    MaxEntVbp,
    ViLp,
    ViCvx,
    DetMc,
    DetUb,
    ConformantExhaustive,
    Random,
}

impl MethodId {
    pub const ALL: [MethodId; 13] = [
        MethodId::PlanningVi,
        MethodId::Marginal,
        MethodId::MarginalU,
        MethodId::Map,
        MethodId::Mmap,
        MethodId::Vbp,
        MethodId::MaxEntVbp,
        MethodId::ViLp,
        MethodId::ViCvx,
        MethodId::DetMc,
        MethodId::DetUb,
        MethodId::ConformantExhaustive,
        MethodId::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodId::PlanningVi => "planning-vi",
            MethodId::Marginal => "marginal",
            MethodId::MarginalU => "marginal-u",
            MethodId::Map => "map",
            MethodId::Mmap => "mmap",
            MethodId::Vbp => "vbp",
            MethodId::MaxEntVbp => "maxent-vbp",
            MethodId::ViLp => "vi-lp",
            MethodId::ViCvx => "vi-cvx",
            MethodId::DetMc => "det-mc",
            MethodId::DetUb => "det-ub",
            MethodId::ConformantExhaustive => "conformant-exhaustive",
            MethodId::Random => "random",
        }
    }
}

impl std::fmt::Display for MethodId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// One planner-on-instance result.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: MethodId,
    pub lambda: f64,
    pub instance: String,
    pub h_mdp: f64,
    pub value: f64,
    pub exact_value: Option<f64>,
    pub first_action: Option<usize>,
    pub advantage: Option<f64>,
    pub iterations: u64,
    pub converged: bool,
    pub wall_time_ms: Option<f64>,
}

pub const RESULT_HEADER: &str =
    "method,lambda,instance,h_mdp,value,exact_value,first_action,advantage,iterations,converged,wall_time_ms";

/// Decimal with 12 significant digits, as used in result CSVs.
fn fmt_csv_f64(v: f64) -> String {
    format!("{v:.11e}")
}

/// Writes header plus one comma-separated line per row.
pub fn write_results<W: std::io::Write>(rows: &[ResultRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{RESULT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            fmt_csv_f64(r.lambda),
            r.instance,
            fmt_csv_f64(r.h_mdp),
            fmt_csv_f64(r.value),
            r.exact_value.map(fmt_csv_f64).unwrap_or_default(),
            r.first_action.map(|a| a.to_string()).unwrap_or_default(),
            r.advantage.map(fmt_csv_f64).unwrap_or_default(),
            r.iterations,
            r.converged,
            r.wall_time_ms.map(fmt_csv_f64).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Writes rows to a file path.
pub fn write_results_path(rows: &[ResultRow], path: &Path) -> Result<(), MdpIoError> {
    let mut buf = Vec::new();
    write_results(rows, &mut buf).map_err(|source| MdpIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, buf).map_err(|source| MdpIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back a results CSV (used by read-back checks and plotting helpers).
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULT_HEADER => {}
        other => return Err(format!("bad header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(format!("line {}: expected 11 fields, got {}", ln + 2, fields.len()));
        }
        let parse_f = |s: &str| -> Result<f64, String> {
            s.parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 2))
        };
        rows.push(ResultRow {
            method: fields[0].parse().map_err(|e: String| format!("line {}: {e}", ln + 2))?,
            lambda: parse_f(fields[1])?,
            instance: fields[2].to_string(),
            h_mdp: parse_f(fields[3])?,
            value: parse_f(fields[4])?,
            exact_value: if fields[5].is_empty() { None } else { Some(parse_f(fields[5])?) },
            first_action: if fields[6].is_empty() {
                None
            } else {
                Some(fields[6].parse::<usize>().map_err(|e| format!("line {}: {e}", ln + 2))?)
            },
            advantage: if fields[7].is_empty() { None } else { Some(parse_f(fields[7])?) },
            iterations: fields[8].parse::<u64>().map_err(|e| format!("line {}: {e}", ln + 2))?,
            converged: fields[9].parse::<bool>().map_err(|e| format!("line {}: {e}", ln + 2))?,
            wall_time_ms: if fields[10].is_empty() { None } else { Some(parse_f(fields[10])?) },
        });
    }
    Ok(rows)
}
