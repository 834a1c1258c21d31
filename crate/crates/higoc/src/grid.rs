//! Ablation grids: train once per (seed, period), evaluate every cell, and
//! aggregate normalized scores over seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use higoc_core::cvae::Cvae;
use higoc_core::dataset::{Dataset, Tier};
use higoc_core::env::{MazeSpec, StateScale};
use higoc_core::expert::{collect, default_dataset_size, normalized_score};
use higoc_core::flat::{train_flat, FlatAgent, FlatConfig};
use higoc_core::gcrl::{pretrain_cvae, train_agent, GoalAgent, TrainConfig};
use higoc_core::planner::PlannerConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{io_err, Error, Result};
use crate::eval::{evaluate_flat, evaluate_higoc, mean_std, EvalSummary};
use crate::files;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Higoc,
    HigocNoNoise,
    FlatCql,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Higoc, Variant::HigocNoNoise, Variant::FlatCql];

    pub fn is_hierarchical(self) -> bool {
        self != Variant::FlatCql
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Higoc => "higoc",
            Variant::HigocNoNoise => "higoc-no-noise",
            Variant::FlatCql => "flat-cql",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub maze: String,
    pub tier: Tier,
    pub variants: Vec<Variant>,
    pub horizons: Vec<usize>,
    pub periods: Vec<usize>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Trajectories per collected dataset; `None` uses the per-maze default.
    pub dataset_size: Option<usize>,
    pub train: TrainConfig,
    pub flat: FlatConfig,
    pub planner: PlannerConfig,
    /// Directory for datasets and checkpoints, reused when present.
    pub artifacts: Option<PathBuf>,
    /// Fail instead of training when an artifact is missing.
    pub require_artifacts: bool,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            maze: "umaze".into(),
            tier: Tier::Expert,
            variants: Variant::ALL.to_vec(),
            horizons: vec![3],
            periods: vec![10],
            seeds: (0..5).collect(),
            episodes: 100,
            dataset_size: None,
            train: TrainConfig::default(),
            flat: FlatConfig::default(),
            planner: PlannerConfig::default(),
            artifacts: None,
            require_artifacts: false,
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("variants", self.variants.is_empty()),
            ("horizons", self.horizons.is_empty()),
            ("periods", self.periods.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Invalid(format!("{name} must not be empty")));
        }
        if self.horizons.contains(&0) || self.periods.contains(&0) {
            return Err(Error::Invalid("horizons and periods must be positive".into()));
        }
        if self.episodes == 0 || self.dataset_size == Some(0) {
            return Err(Error::Invalid("episodes and dataset_size must be positive".into()));
        }
        self.train.validate()?;
        self.flat.validate()?;
        PlannerConfig {
            horizon: 1,
            ..self.planner.clone()
        }
        .validate()?;
        Ok(())
    }

    /// Every (variant, H, N) cell in output order. Flat cells ignore H and N.
    pub fn cells(&self) -> Vec<Cell> {
        let mut variants = self.variants.clone();
        variants.dedup();
        let mut out = Vec::new();
        for v in variants {
            if v.is_hierarchical() {
                for &n in &self.periods {
                    for &h in &self.horizons {
                        out.push(Cell {
                            variant: v,
                            horizon: Some(h),
                            period: Some(n),
                        });
                    }
                }
            } else {
                out.push(Cell {
                    variant: v,
                    horizon: None,
                    period: None,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub variant: Variant,
    pub horizon: Option<usize>,
    pub period: Option<usize>,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.variant)?;
        if let (Some(h), Some(n)) = (self.horizon, self.period) {
            write!(f, " H={h} N={n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub maze: String,
    pub tier: Tier,
    pub cell: Cell,
    pub seeds: usize,
    pub episodes: usize,
    pub mean_ns: f64,
    pub ns_std: f64,
    pub success_rate: f64,
    pub wall_contact_rate: f64,
    /// Mean wall-clock time of one planning call; `None` for flat cells.
    pub mean_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub cell: Cell,
    pub seed: u64,
    pub mean_return: f64,
    pub ns: f64,
    pub success_rate: f64,
    pub wall_contact_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub rows: Vec<ResultRow>,
    pub seed_rows: Vec<SeedRow>,
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "maze",
    "tier",
    "variant",
    "horizon",
    "period",
    "seeds",
    "episodes",
    "mean_ns",
    "ns_std",
    "success_rate",
    "wall_contact_rate",
];

pub const SEED_COLUMNS: [&str; 10] = [
    "maze",
    "tier",
    "variant",
    "horizon",
    "period",
    "seed",
    "mean_return",
    "ns",
    "success_rate",
    "wall_contact_rate",
];

pub const LATENCY_COLUMNS: [&str; 6] = ["maze", "tier", "variant", "horizon", "period", "mean_latency_ms"];

fn opt(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

enum Trained {
    Goal(GoalAgent),
    Flat(FlatAgent),
}

struct Artifacts<'a> {
    spec: &'a ExperimentSpec,
    maze: &'a MazeSpec,
}

impl Artifacts<'_> {
    fn path(&self, name: String) -> Option<PathBuf> {
        self.spec.artifacts.as_ref().map(|d| d.join(name))
    }

    fn stem(&self, seed: u64) -> String {
        format!("{}-{}-s{seed}", self.maze.name, self.spec.tier)
    }

    /// Loads `path` if it exists, otherwise builds and saves it.
    fn get<T>(
        &self,
        path: Option<PathBuf>,
        what: &str,
        load: impl FnOnce(&Path) -> Result<T>,
        build: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&Path, &T) -> Result<()>,
    ) -> Result<T> {
        match path {
            Some(p) if p.exists() => load(&p),
            Some(p) if self.spec.require_artifacts => Err(Error::Cell {
                cell: what.into(),
                msg: format!("missing artifact {}", p.display()),
            }),
            Some(p) => {
                let v = build()?;
                save(&p, &v)?;
                Ok(v)
            }
            None => build(),
        }
    }

    fn dataset(&self, seed: u64) -> Result<Dataset> {
        self.get(
            self.path(format!("{}.jsonl", self.stem(seed))),
            &format!("dataset seed {seed}"),
            files::load_dataset,
            || {
                let k = self.spec.dataset_size.unwrap_or_else(|| default_dataset_size(&self.maze.name));
                Ok(collect(self.maze, self.spec.tier, k, seed)?)
            },
            files::save_dataset,
        )
    }

    fn cvae(&self, data: &Dataset, n: usize, seed: u64) -> Result<Cvae> {
        let cfg = TrainConfig {
            n,
            ..self.spec.train.clone()
        };
        self.get(
            self.path(format!("{}-n{n}.cvae", self.stem(seed))),
            &format!("cvae N={n} seed {seed}"),
            checkpoint::load_cvae,
            || Ok(pretrain_cvae(data, StateScale::for_maze(self.maze), &cfg, seed)?.0),
            checkpoint::save_cvae,
        )
    }

    fn agent(&self, variant: Variant, data: &Dataset, cvae: Option<&Cvae>, n: usize, seed: u64) -> Result<Trained> {
        let what = format!("{variant} N={n} seed {seed}");
        match variant {
            Variant::FlatCql => self
                .get(
                    self.path(format!("{}-{variant}.params", self.stem(seed))),
                    &what,
                    checkpoint::load_flat_agent,
                    || Ok(train_flat(data, self.maze, &self.spec.flat, seed)?.0),
                    checkpoint::save_flat_agent,
                )
                .map(Trained::Flat),
            _ => {
                let mut cfg = TrainConfig {
                    n,
                    ..self.spec.train.clone()
                };
                if variant == Variant::HigocNoNoise {
                    cfg.eta = 0.0;
                }
                self.get(
                    self.path(format!("{}-{variant}-n{n}.params", self.stem(seed))),
                    &what,
                    checkpoint::load_goal_agent,
                    || Ok(train_agent(data, cvae.unwrap(), &cfg, seed, |_, _| None)?.0),
                    checkpoint::save_goal_agent,
                )
                .map(Trained::Goal)
            }
        }
    }
}

fn with_cell<T>(cell: impl fmt::Display, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Cell { .. } => e,
        other => Error::Cell {
            cell: cell.to_string(),
            msg: other.to_string(),
        },
    })
}

/// Runs every cell of `spec` on `maze`. Work is spread over a thread pool;
/// rows come back in [`ExperimentSpec::cells`] order regardless of which
/// job finishes first.
pub fn run_grid(spec: &ExperimentSpec, maze: &MazeSpec) -> Result<GridOutput> {
    spec.validate()?;
    if let Some(dir) = &spec.artifacts {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    pool.install(|| run_grid_inner(spec, maze))
}

fn run_grid_inner(spec: &ExperimentSpec, maze: &MazeSpec) -> Result<GridOutput> {
    let art = Artifacts { spec, maze };
    let cells = spec.cells();

    let datasets: BTreeMap<u64, Dataset> = spec
        .seeds
        .par_iter()
        .map(|&s| with_cell(format!("dataset seed {s}"), art.dataset(s)).map(|d| (s, d)))
        .collect::<Result<_>>()?;

    let hier = cells.iter().any(|c| c.variant.is_hierarchical());
    let cvae_jobs: Vec<(u64, usize)> = if hier {
        spec.seeds
            .iter()
            .flat_map(|&s| spec.periods.iter().map(move |&n| (s, n)))
            .collect()
    } else {
        Vec::new()
    };
    let cvaes: BTreeMap<(u64, usize), Cvae> = cvae_jobs
        .par_iter()
        .map(|&(s, n)| art.cvae(&datasets[&s], n, s).map(|c| ((s, n), c)))
        .collect::<Result<_>>()?;

    // one agent per (variant, N, seed); H only matters at evaluation
    let mut agent_jobs: Vec<(Variant, usize, u64)> = Vec::new();
    for c in &cells {
        for &s in &spec.seeds {
            let key = (c.variant, c.period.unwrap_or(0), s);
            if !agent_jobs.contains(&key) {
                agent_jobs.push(key);
            }
        }
    }
    let agents: BTreeMap<(Variant, usize, u64), Trained> = agent_jobs
        .par_iter()
        .map(|&(v, n, s)| {
            let cvae = cvaes.get(&(s, n));
            with_cell(format!("{v} N={n} seed {s}"), art.agent(v, &datasets[&s], cvae, n, s)).map(|a| ((v, n, s), a))
        })
        .collect::<Result<_>>()?;

    let eval_jobs: Vec<(Cell, u64)> = cells
        .iter()
        .flat_map(|&c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let evals: Vec<EvalSummary> = eval_jobs
        .par_iter()
        .map(|&(c, s)| {
            let r = match &agents[&(c.variant, c.period.unwrap_or(0), s)] {
                Trained::Flat(a) => evaluate_flat(maze, a, spec.episodes, s),
                Trained::Goal(a) => {
                    let cfg = PlannerConfig {
                        horizon: c.horizon.unwrap_or(1),
                        ..spec.planner.clone()
                    };
                    evaluate_higoc(maze, a, &cvaes[&(s, c.period.unwrap_or(0))], &cfg, spec.episodes, s)
                }
            };
            with_cell(format!("{c} seed {s}"), r)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut seed_rows = Vec::with_capacity(eval_jobs.len());
    for (ci, &cell) in cells.iter().enumerate() {
        let block = &evals[ci * spec.seeds.len()..(ci + 1) * spec.seeds.len()];
        let mut ns = Vec::with_capacity(block.len());
        let (mut wins, mut contacts, mut eps, mut calls, mut secs) = (0, 0, 0, 0, 0.0);
        for (&seed, ev) in spec.seeds.iter().zip(block) {
            let meta = &datasets[&seed].meta;
            let score = with_cell(
                cell,
                normalized_score(ev.mean_return(), meta.random_mean_return, meta.expert_mean_return).map_err(Error::from),
            )?;
            ns.push(score);
            wins += ev.successes;
            contacts += ev.contact_episodes;
            eps += ev.episodes();
            calls += ev.plan_calls;
            secs += ev.plan_seconds;
            seed_rows.push(SeedRow {
                cell,
                seed,
                mean_return: ev.mean_return(),
                ns: score,
                success_rate: ev.success_rate(),
                wall_contact_rate: ev.contact_rate(),
            });
        }
        let (mean_ns, ns_std) = mean_std(&ns);
        rows.push(ResultRow {
            maze: maze.name.clone(),
            tier: spec.tier,
            cell,
            seeds: spec.seeds.len(),
            episodes: spec.episodes,
            mean_ns,
            ns_std,
            success_rate: wins as f64 / eps as f64,
            wall_contact_rate: contacts as f64 / eps as f64,
            mean_latency_ms: (calls > 0).then(|| 1e3 * secs / calls as f64),
        });
    }
    Ok(GridOutput { rows, seed_rows })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(e.to_string())
}

/// Main results table. Timing is kept out of this file so that reruns with
/// the same seeds produce identical bytes; see [`write_latency`].
pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.maze.clone(),
            r.tier.to_string(),
            r.cell.variant.to_string(),
            opt(r.cell.horizon),
            opt(r.cell.period),
            r.seeds.to_string(),
            r.episodes.to_string(),
            r.mean_ns.to_string(),
            r.ns_std.to_string(),
            r.success_rate.to_string(),
            r.wall_contact_rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn write_seed_rows<W: Write>(w: W, maze: &str, tier: Tier, rows: &[SeedRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SEED_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            maze.to_string(),
            tier.to_string(),
            r.cell.variant.to_string(),
            opt(r.cell.horizon),
            opt(r.cell.period),
            r.seed.to_string(),
            r.mean_return.to_string(),
            r.ns.to_string(),
            r.success_rate.to_string(),
            r.wall_contact_rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn write_latency<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LATENCY_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.maze.clone(),
            r.tier.to_string(),
            r.cell.variant.to_string(),
            opt(r.cell.horizon),
            opt(r.cell.period),
            r.mean_latency_ms.map(|x| format!("{x:.3}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(e.to_string()))
}

/// `results.csv` → `results.seeds.csv`, `results.latency.csv`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Writes the results CSV and its per-seed and latency sidecars.
pub fn save_grid(path: &Path, out: &GridOutput) -> Result<()> {
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(io_err(p));
    write_results(open(path)?, &out.rows)?;
    if let Some(first) = out.rows.first() {
        write_seed_rows(open(&sidecar(path, "seeds"))?, &first.maze, first.tier, &out.seed_rows)?;
    }
    write_latency(open(&sidecar(path, "latency"))?, &out.rows)
}
