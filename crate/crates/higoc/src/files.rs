//! Dataset, maze, config and training-log files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use higoc_core::dataset::{Dataset, DatasetMeta, Transition};
use higoc_core::env::{EnvConfig, MazeSpec};
use higoc_core::gcrl::LogRow;
use serde::de::DeserializeOwned;

use crate::error::{io_err, Error, Result};

fn push_real(out: &mut String, x: f64) {
    // 17 significant digits round-trip every f64
    write!(out, "{x:.16e}").unwrap();
}

fn push_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_real(out, *x);
    }
    out.push(']');
}

/// One JSON object per transition, reals in scientific notation with 17
/// significant digits.
pub fn transition_line(t: &Transition) -> String {
    let mut s = String::with_capacity(256);
    write!(s, "{{\"k\":{},\"j\":{},\"s\":", t.k, t.j).unwrap();
    push_array(&mut s, &t.s);
    s.push_str(",\"a\":");
    push_array(&mut s, &t.a);
    s.push_str(",\"sp\":");
    push_array(&mut s, &t.sp);
    s.push_str(",\"r\":");
    push_real(&mut s, t.r);
    write!(s, ",\"done\":{}}}", t.done).unwrap();
    s
}

pub fn write_dataset<W: Write>(mut w: W, d: &Dataset) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &d.meta)?;
    w.write_all(b"\n")?;
    for t in d.transitions() {
        w.write_all(transition_line(t).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_dataset<R: BufRead>(r: R, path: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut meta: Option<DatasetMeta> = None;
    let mut transitions = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if meta.is_none() {
            meta = Some(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
        } else {
            transitions.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
        }
    }
    let meta = meta.ok_or_else(|| parse_err(1, "missing metadata line".into()))?;
    Ok(Dataset::new(meta, transitions)?)
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_dataset(BufWriter::new(f), d).map_err(io_err(path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(f), path)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// A builtin maze name or the path of an ASCII maze file, with an optional
/// env config JSON overriding the dynamics.
pub fn resolve_maze(maze: &str, env_config: Option<&Path>) -> Result<MazeSpec> {
    let path = Path::new(maze);
    let mut spec = if path.exists() {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("maze");
        MazeSpec::parse(name, &text, EnvConfig::default())?
    } else {
        MazeSpec::builtin(maze)?
    };
    if let Some(p) = env_config {
        let cfg: EnvConfig = load_json(p)?;
        spec = MazeSpec::parse(&spec.name, &spec.to_ascii(), cfg)?;
    }
    Ok(spec)
}

pub const LOG_COLUMNS: [&str; 6] = ["step", "critic_loss", "cql_penalty", "actor_loss", "entropy", "eval_ns"];

pub fn write_log<W: Write>(w: W, rows: &[LogRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Invalid(e.to_string());
    out.write_record(LOG_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.critic_loss.to_string(),
            r.cql_penalty.to_string(),
            r.actor_loss.to_string(),
            r.entropy.to_string(),
            r.eval_ns.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_log(BufWriter::new(f), rows)
}
