//! Acceptance suite. Each test checks one numbered criterion and writes a
//! single PASS/FAIL line straight to stdout, so the lines show up even when
//! the harness captures output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use higoc::grid::{run_grid, save_grid, ExperimentSpec, Variant};
use higoc::report::{read_report, render};
use higoc_core::cvae::Cvae;
use higoc_core::dataset::Tier;
use higoc_core::env::{self, MazeSpec, StateScale, BUILTIN_MAZES};
use higoc_core::expert::{collect, evaluate_expert, evaluate_random, normalized_score, BASELINE_EPISODES};
use higoc_core::flat::FlatConfig;
use higoc_core::gcrl::{her_relabel, ood_probe, pretrain_cvae, tdm_reward, train_agent, TrainConfig};
use higoc_core::planner::{cem_optimize, PlannerConfig};
use higoc_core::sac::SacConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: usize, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {id:>2} {} {name}: {detail} [{:.1} s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {id} failed: {detail}");
}

/// Training budget for the runs below; see the README for the full-scale
/// defaults.
fn reduced_train() -> TrainConfig {
    TrainConfig {
        steps: 3000,
        batch: 128,
        log_every: 1000,
        sac: SacConfig {
            hidden: 64,
            ..SacConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn reduced_flat() -> FlatConfig {
    FlatConfig {
        steps: 3000,
        batch: 128,
        log_every: 1000,
        sac: SacConfig {
            hidden: 64,
            ..SacConfig::default()
        },
        ..FlatConfig::default()
    }
}

#[test]
fn c01_gradient_fidelity() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (_, widths, acts)) in common::fd::ARCHITECTURES.iter().enumerate() {
        worst = worst.max(common::fd::worst_over_cases(widths, acts, 100, 1000 + i as u64));
    }
    let el = t.elapsed();
    let pass = worst < 1e-4 && el < Duration::from_secs(10);
    let detail = format!(
        "worst relative error {worst:.2e} over {} architectures x 100 cases (< 1e-4, < 10 s)",
        common::fd::ARCHITECTURES.len()
    );
    verdict(1, "gradient fidelity", pass, &detail, el);
}

#[test]
fn c02_tabular_oracle() {
    let t = Instant::now();
    let (worst, triples) = common::grid5::max_oracle_error(6);
    let el = t.elapsed();
    let pass = worst < 0.05 && el < Duration::from_secs(120);
    let detail = format!("max |V - V_vi| = {worst:.4} over {triples} in-dataset triples (< 0.05, < 2 min)");
    verdict(2, "tabular oracle equivalence", pass, &detail, el);
}

#[test]
fn c03_tdm_semantics() {
    let t = Instant::now();
    let maze = MazeSpec::builtin("umaze").unwrap();
    let data = collect(&maze, Tier::Expert, 50, 3).unwrap();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // untrained decoder: perturbed goals land anywhere
    let cvae = Cvae::new(StateScale::for_maze(&maze), &cfg.cvae, &mut rng).unwrap();
    let (mut violations, mut exact, mut perturbed) = (0, 0, 0);
    for _ in 0..10_000 {
        let i = rng.random_range(0..data.transitions().len());
        let x = her_relabel(&data, i, &mut rng, Some(&cvae), &cfg);
        let d = env::distance(&x.sp, &x.g);
        let ok = x.r_tdm <= 0.0
            && ((x.r_tdm == 0.0) == (x.h > 0 || d == 0.0))
            && x.r_g == x.r_env + cfg.beta * x.r_tdm;
        violations += usize::from(!ok);
        if x.perturbed {
            perturbed += 1;
            continue;
        }
        // the goal is the state reached at the deadline: summing the
        // deadline reward over the rest of the segment gives exactly zero
        let tr = &data.transitions()[i];
        let seg = &data.trajectory(tr.k)[tr.j..=tr.j + x.h];
        let total: f64 = seg
            .iter()
            .enumerate()
            .map(|(o, s)| tdm_reward(&s.sp, &x.g, x.h - o))
            .sum();
        violations += usize::from(total != 0.0);
        exact += 1;
    }
    let el = t.elapsed();
    let pass = violations == 0 && exact > 0 && perturbed > 0 && el < Duration::from_secs(10);
    let detail = format!("{violations} violations in 10000 samples ({exact} exact goals, {perturbed} perturbed; < 10 s)");
    verdict(3, "TDM semantics", pass, &detail, el);
}

#[test]
fn c04_cem_optimizer() {
    let t = Instant::now();
    let cfg = PlannerConfig {
        population: 200,
        elites: 20,
        iterations: 40,
        ..PlannerConfig::default()
    };
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = cem_optimize(20, &cfg, &mut rng, |zs| {
            zs.chunks_exact(20)
                .map(|z| -z.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .collect()
        });
        let err = r.best.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        hits += usize::from(err < 0.05);
    }
    let el = t.elapsed();
    let pass = hits >= 49 && el < Duration::from_secs(30);
    let detail = format!("{hits}/50 runs within 0.05 (inf-norm), worst {worst:.4} (>= 49, < 30 s)");
    verdict(4, "CEM optimizer", pass, &detail, el);
}

#[test]
fn c05_cvae_manifold() {
    let maze = MazeSpec::builtin("large").unwrap();
    let data = collect(&maze, Tier::Expert, 200, 0).unwrap();
    let (cvae, _) = pretrain_cvae(&data, StateScale::for_maze(&maze), &TrainConfig::default(), 0).unwrap();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut goals = Vec::with_capacity(1002);
    for seed in 0..334 {
        let s0 = env::reset(&maze, seed).to_vec();
        goals.extend(cvae.sample_goal_sequence(&s0, 3, &mut rng));
    }
    goals.truncate(1000);
    let free = goals.iter().filter(|g| maze.is_free_point(g[0], g[1])).count();
    let [w, h] = maze.extent();
    let uniform = (0..1000)
        .filter(|_| maze.is_free_point(rng.random_range(0.0..w), rng.random_range(0.0..h)))
        .count();
    let el = t.elapsed();
    let pass = free >= 800 && uniform < 500 && el < Duration::from_secs(60);
    let detail = format!(
        "{free}/1000 sequentially decoded prior goals in free space vs {uniform}/1000 uniform (>= 800, < 500)"
    );
    verdict(5, "CVAE manifold property", pass, &detail, el);
}

#[test]
fn c06_ood_penalization() {
    let maze = MazeSpec::builtin("umaze").unwrap();
    let data = collect(&maze, Tier::Expert, 200, 0).unwrap();
    let cfg = reduced_train();
    let (cvae, _) = pretrain_cvae(&data, StateScale::for_maze(&maze), &cfg, 0).unwrap();
    let (noisy, _) = train_agent(&data, &cvae, &cfg, 0, |_, _| None).unwrap();
    let plain_cfg = TrainConfig { eta: 0.0, ..cfg.clone() };
    let (plain, _) = train_agent(&data, &cvae, &plain_cfg, 0, |_, _| None).unwrap();
    let t = Instant::now();
    // same probe states, goals and perturbations for both agents
    let probe = |agent| {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (vd, vp) = ood_probe(agent, &cvae, &data, 500, cfg.eps_scale, 8, &mut rng);
        vd - vp
    };
    let gap_noisy = probe(&noisy);
    let gap_plain = probe(&plain);
    let el = t.elapsed();
    let pass = gap_noisy > 0.0 && gap_noisy > gap_plain && el < Duration::from_secs(60);
    let detail = format!(
        "V(data) - V(perturbed): eta=0.3 gap {gap_noisy:.4} (> 0), eta=0 gap {gap_plain:.4} (must be smaller), 500 probes"
    );
    verdict(6, "OOD penalization", pass, &detail, el);
}

fn large_spec() -> ExperimentSpec {
    ExperimentSpec {
        maze: "large".into(),
        tier: Tier::Expert,
        variants: vec![Variant::Higoc, Variant::FlatCql],
        horizons: vec![3],
        periods: vec![10],
        seeds: (0..5).collect(),
        episodes: 50,
        train: reduced_train(),
        flat: reduced_flat(),
        ..ExperimentSpec::default()
    }
}

/// Results CSV bytes of one large-maze grid run and its wall time.
fn large_grid_csv() -> (Vec<u8>, higoc::grid::GridOutput, Duration) {
    let maze = MazeSpec::builtin("large").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("large.csv");
    let t = Instant::now();
    let out = run_grid(&large_spec(), &maze).unwrap();
    let el = t.elapsed();
    save_grid(&path, &out).unwrap();
    (fs::read(&path).unwrap(), out, el)
}

fn first_large_run() -> &'static (Vec<u8>, higoc::grid::GridOutput, Duration) {
    static RUN: OnceLock<(Vec<u8>, higoc::grid::GridOutput, Duration)> = OnceLock::new();
    RUN.get_or_init(large_grid_csv)
}

#[test]
fn c07_hierarchy_beats_flat() {
    let (_, out, el) = first_large_run();
    let ns = |v: Variant| out.rows.iter().find(|r| r.cell.variant == v).unwrap();
    let (h, f) = (ns(Variant::Higoc), ns(Variant::FlatCql));
    let diff = h.mean_ns - f.mean_ns;
    let pass = diff >= 10.0 && *el < Duration::from_secs(45 * 60);
    let detail = format!(
        "large/expert, 5 seeds: HiGoC NS {:.1} (success {:.2}) vs flat NS {:.1} (success {:.2}), difference {diff:.1} (>= 10, < 45 min)",
        h.mean_ns, h.success_rate, f.mean_ns, f.success_rate
    );
    verdict(7, "hierarchy beats flat", pass, &detail, *el);
}

#[test]
fn c08_lookahead_ablation() {
    let maze = MazeSpec::builtin("medium").unwrap();
    let spec = ExperimentSpec {
        maze: "medium".into(),
        variants: vec![Variant::Higoc],
        horizons: vec![1, 3, 5, 7],
        periods: vec![10],
        seeds: (0..3).collect(),
        episodes: 20,
        train: reduced_train(),
        ..ExperimentSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("medium.csv");
    let t = Instant::now();
    let out = run_grid(&spec, &maze);
    let el = t.elapsed();
    let (pass, detail) = match out {
        Err(e) => (false, format!("grid failed: {e}")),
        Ok(out) => {
            save_grid(&path, &out).unwrap();
            let text = fs::read(&path).unwrap();
            let table = render(&read_report(&text[..], &path).unwrap());
            let by_h: Vec<(usize, f64)> = out.rows.iter().map(|r| (r.cell.horizon.unwrap(), r.mean_ns)).collect();
            let h1 = by_h.iter().find(|(h, _)| *h == 1).unwrap().1;
            let best = by_h.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            let shaped = table.lines().count() == 5 && table.starts_with("maze");
            let summary: Vec<String> = by_h.iter().map(|(h, ns)| format!("H={h}: {ns:.1}")).collect();
            (
                shaped && best.1 >= h1 && el < Duration::from_secs(90 * 60),
                format!(
                    "{}; best H={} ({:.1}) >= H=1 ({h1:.1}); report has {} rows (< 90 min)",
                    summary.join(", "),
                    best.0,
                    best.1,
                    table.lines().count() - 1
                ),
            )
        }
    };
    verdict(8, "look-ahead ablation", pass, &detail, el);
}

#[test]
fn c09_metric_closure() {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in BUILTIN_MAZES {
        let maze = MazeSpec::builtin(name).unwrap();
        let meta = collect(&maze, Tier::Expert, 5, 0).unwrap().meta;
        let (expert, _) = evaluate_expert(&maze, Tier::Expert, BASELINE_EPISODES, 77).unwrap();
        let (random, _) = evaluate_random(&maze, BASELINE_EPISODES, 77).unwrap();
        let e = normalized_score(expert, meta.random_mean_return, meta.expert_mean_return).unwrap();
        let r = normalized_score(random, meta.random_mean_return, meta.expert_mean_return).unwrap();
        pass &= (e - 100.0).abs() <= 3.0 && r.abs() <= 3.0;
        parts.push(format!("{name}: expert {e:.1}, random {r:.1}"));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(300);
    verdict(9, "metric closure", pass, &format!("{} (100 +- 3, 0 +- 3)", parts.join("; ")), el);
}

#[test]
fn c10_end_to_end_determinism() {
    let (first, _, _) = first_large_run();
    let (second, _, el) = large_grid_csv();
    let pass = *first == second;
    let detail = format!("two large-maze runs with identical seeds: {} CSV bytes, identical = {pass}", first.len());
    verdict(10, "end-to-end determinism", pass, &detail, el);
}
