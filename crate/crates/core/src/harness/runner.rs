use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, VariantSpec};
use super::metrics::{penalty_events, post_penalty_advantage, GradientWindow, LogRecord, RunSeries};
use super::stats::{mean, mean_ci95, moving_average};
use crate::env::game_by_id;
use crate::error::{config, Result};
use crate::trainer::{Objective, Trainer};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";
pub const AGGREGATE: &str = "aggregate.csv";

/// Where one run's log lives relative to the results directory.
pub fn run_log_path(game: &str, label: &str, seed: u64) -> PathBuf {
    PathBuf::from(game).join(label).join(format!("seed-{seed:03}.jsonl"))
}

/// One finished (game, variant, seed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub game: String,
    pub label: String,
    pub objective: Objective,
    pub seed: u64,
    pub log: PathBuf,
    pub series: RunSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub game: String,
    pub variant: String,
    pub objective: Objective,
    pub seed: u64,
    pub log: PathBuf,
}

/// Resolved configuration, code version and the runs of a results directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    /// Post-penalty event cap actually used, per game.
    pub penalty_cap: BTreeMap<String, usize>,
    pub runs: Vec<ManifestRun>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// All runs of an experiment plus the derived caps.
#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutcome>,
    pub penalty_cap: BTreeMap<String, usize>,
}

impl ExperimentResults {
    pub fn runs_of<'a>(&'a self, game: &'a str, label: &'a str) -> impl Iterator<Item = &'a RunOutcome> + 'a {
        self.runs.iter().filter(move |r| r.game == game && r.label == label)
    }

    /// Final-window mean reward of every seed of one variant.
    pub fn final_rewards(&self, game: &str, label: &str) -> Vec<f64> {
        self.runs_of(game, label)
            .map(|r| r.series.final_reward(self.config.final_window))
            .collect()
    }

    /// Post-penalty advantage series of every seed, truncated to the game's cap.
    pub fn post_penalty(&self, game: &str, label: &str) -> Vec<Vec<f64>> {
        let cap = self.penalty_cap.get(game).copied().unwrap_or(0);
        self.runs_of(game, label)
            .map(|r| post_penalty_advantage(&r.series.events, r.objective, cap))
            .collect()
    }
}

/// Runs every (game, variant, seed) job and writes logs, aggregates and the manifest.
///
/// The configuration is validated before anything runs. Jobs run on up to
/// `workers` threads; outputs depend only on the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut jobs = Vec::new();
    for game in &cfg.games {
        for v in &cfg.variants {
            for seed in cfg.seed_list() {
                jobs.push((game.clone(), v.clone(), seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(game, v, seed)| run_one(cfg, &dir, game, v, *seed))
            .collect::<Result<_>>()
    })?;

    let mut penalty_cap = BTreeMap::new();
    for game in &cfg.games {
        let observed = runs
            .iter()
            .filter(|r| &r.game == game)
            .map(|r| r.series.events.len())
            .min()
            .unwrap_or(0);
        penalty_cap.insert(game.clone(), cfg.penalty_cap.map_or(observed, |c| c.min(observed)));
    }
    let results = ExperimentResults {
        dir: dir.clone(),
        config: cfg.clone(),
        runs,
        penalty_cap,
    };
    write_aggregates(&results)?;
    write_summary(&results)?;
    let manifest = Manifest {
        name: cfg.name.clone(),
        code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        config: cfg.clone(),
        penalty_cap: results.penalty_cap.clone(),
        runs: results
            .runs
            .iter()
            .map(|r| ManifestRun {
                game: r.game.clone(),
                variant: r.label.clone(),
                objective: r.objective,
                seed: r.seed,
                log: r.log.clone(),
            })
            .collect(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(results)
}

fn run_one(cfg: &ExperimentConfig, dir: &Path, game_id: &str, v: &VariantSpec, seed: u64) -> Result<RunOutcome> {
    let game = game_by_id(game_id)?;
    let train = v.train_config(&cfg.resolved_train(), seed)?;
    let objective = train.objective;
    let mut trainer = Trainer::matrix_game(&game, train)?;
    let rel = run_log_path(game_id, &v.label, seed);
    let path = dir.join(&rel);
    fs::create_dir_all(path.parent().unwrap())?;
    let mut out = BufWriter::new(File::create(&path)?);

    let mut window = GradientWindow::new(cfg.grad_variance_window);
    let mut pending_rewards = Vec::new();
    let mut pending_events = Vec::new();
    let mut series = RunSeries::default();
    let mut sample_idx = 0;
    while !trainer.is_done() {
        let it = trainer.step()?;
        let events = penalty_events(&it, sample_idx);
        sample_idx += it.batch.len();
        pending_rewards.extend(it.batch.samples.iter().map(|s| s.reward));
        pending_events.extend(events);
        window.push(it.report.mean_gradient.clone());
        let r = &it.report;
        if (r.update_idx + 1) % cfg.grad_variance_window == 0 || trainer.is_done() {
            let record = LogRecord {
                update_idx: r.update_idx,
                timesteps: r.timesteps,
                rewards: std::mem::take(&mut pending_rewards),
                objective: r.objective.clone(),
                grad_norm: r.grad_norm.clone(),
                atilde_mean: r.atilde_mean.clone(),
                ratio_product: r.ratio_product.clone(),
                critic_loss: r.critic_loss,
                grad_variance: window.variance(),
                events: std::mem::take(&mut pending_events),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            series.rewards.extend(&record.rewards);
            if let Some(v) = record.grad_variance {
                series.grad_variance.push((record.timesteps, v));
            }
            series.events.extend(record.events);
        }
    }
    out.flush()?;
    Ok(RunOutcome {
        game: game_id.to_string(),
        label: v.label.clone(),
        objective,
        seed,
        log: rel,
        series,
    })
}

/// Reads a run's JSON-lines log.
pub fn load_run_log(path: &Path) -> Result<Vec<LogRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// `(x, per-seed values)` rows of one metric, where every seed has a value.
pub type MetricRows = Vec<(f64, Vec<f64>)>;

/// Smoothed reward sampled every `reward_window` timesteps.
pub fn reward_rows(runs: &[&RunSeries], reward_window: usize) -> MetricRows {
    let smoothed: Vec<Vec<f64>> = runs.iter().map(|r| moving_average(&r.rewards, reward_window)).collect();
    let len = smoothed.iter().map(|s| s.len()).min().unwrap_or(0);
    (reward_window..=len)
        .step_by(reward_window)
        .map(|t| (t as f64, smoothed.iter().map(|s| s[t - 1]).collect()))
        .collect()
}

pub fn grad_variance_rows(runs: &[&RunSeries]) -> MetricRows {
    let len = runs.iter().map(|r| r.grad_variance.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| (runs[0].grad_variance[k].0 as f64, runs.iter().map(|r| r.grad_variance[k].1).collect()))
        .collect()
}

pub fn post_penalty_rows(runs: &[&RunSeries], objective: Objective, cap: usize) -> MetricRows {
    let series: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| post_penalty_advantage(&r.events, objective, cap))
        .collect();
    (0..cap)
        .map(|e| (e as f64, series.iter().map(|s| s[e]).collect()))
        .collect()
}

/// Per seed, the mean over its first `cap` events of the matching agents' `A~_k`, by epoch.
pub fn within_update_rows(runs: &[&RunSeries], cap: usize) -> MetricRows {
    if cap == 0 {
        return Vec::new();
    }
    let traces: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let per_event: Vec<Vec<f64>> = r.events.iter().take(cap).map(|e| e.epoch_trace()).collect();
            let k = per_event[0].len();
            (0..k).map(|e| mean(&per_event.iter().map(|t| t[e]).collect::<Vec<_>>())).collect()
        })
        .collect();
    let k = traces.iter().map(|t| t.len()).min().unwrap_or(0);
    (0..k)
        .map(|e| (e as f64, traces.iter().map(|t| t[e]).collect()))
        .collect()
}

#[derive(Debug, Serialize)]
struct AggregateRow<'a> {
    metric: &'a str,
    x: f64,
    n: usize,
    mean: f64,
    ci_low: f64,
    ci_high: f64,
}

fn write_aggregates(res: &ExperimentResults) -> Result<()> {
    let cfg = &res.config;
    for game in &cfg.games {
        let cap = res.penalty_cap[game];
        for v in &cfg.variants {
            let runs: Vec<&RunOutcome> = res.runs_of(game, &v.label).collect();
            let series: Vec<&RunSeries> = runs.iter().map(|r| &r.series).collect();
            let objective = v.objective()?;
            let path = res.dir.join(game).join(&v.label).join(AGGREGATE);
            let mut w = csv::Writer::from_path(path)?;
            let finals: Vec<f64> = series.iter().map(|s| s.final_reward(cfg.final_window)).collect();
            let mut emit = |metric: &str, rows: MetricRows| -> Result<()> {
                for (x, values) in rows {
                    let (mean, ci_low, ci_high) = mean_ci95(&values);
                    w.serialize(AggregateRow {
                        metric,
                        x,
                        n: values.len(),
                        mean,
                        ci_low,
                        ci_high,
                    })?;
                }
                Ok(())
            };
            emit("final_reward", vec![(0.0, finals)])?;
            emit("reward", reward_rows(&series, cfg.reward_window))?;
            emit("grad_variance", grad_variance_rows(&series))?;
            emit("post_penalty_advantage", post_penalty_rows(&series, objective, cap))?;
            emit("within_update_advantage", within_update_rows(&series, cap))?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    game: &'a str,
    variant: &'a str,
    seed: u64,
    final_reward: f64,
    penalty_events: usize,
    mean_grad_variance: f64,
}

fn write_summary(res: &ExperimentResults) -> Result<()> {
    let mut w = csv::Writer::from_path(res.dir.join(SUMMARY))?;
    for r in &res.runs {
        let gv: Vec<f64> = r.series.grad_variance.iter().map(|&(_, v)| v).collect();
        w.serialize(SummaryRow {
            game: &r.game,
            variant: &r.label,
            seed: r.seed,
            final_reward: r.series.final_reward(res.config.final_window),
            penalty_events: r.series.events.len(),
            mean_grad_variance: mean(&gv),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::stats::mean_ci95;
    use crate::harness::{emit_plot_data, ExperimentKind};
    use crate::Error;

    fn small(dir: &Path, seeds: usize, timesteps: usize, variants: Vec<VariantSpec>) -> ExperimentConfig {
        ExperimentConfig {
            name: "small".to_string(),
            games: vec!["penalty".to_string()],
            variants,
            seeds,
            total_timesteps: timesteps,
            reward_window: 20,
            grad_variance_window: 10,
            final_window: 50,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    fn two_variants() -> Vec<VariantSpec> {
        vec![
            VariantSpec::new("coppo", Objective::Coppo),
            VariantSpec::new("independent-ratio", Objective::IndependentRatio),
        ]
    }

    #[test]
    fn one_seed_one_variant_writes_one_log_and_aggregate() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 1, 100, vec![VariantSpec::new("coppo", Objective::Coppo)]);
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.runs.len(), 1);
        let variant_dir = tmp.path().join("penalty").join("coppo");
        let mut names: Vec<String> = fs::read_dir(&variant_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec![AGGREGATE.to_string(), "seed-000.jsonl".to_string()]);
        assert!(tmp.path().join(MANIFEST).exists());
        assert!(tmp.path().join(SUMMARY).exists());
        let records = load_run_log(&tmp.path().join(run_log_path("penalty", "coppo", 0))).unwrap();
        let total: usize = records.iter().map(|r| r.rewards.len()).sum();
        assert_eq!(total, 100);
        assert_eq!(records.last().unwrap().timesteps, 100);
    }

    #[test]
    fn same_config_twice_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = small(a.path(), 2, 120, two_variants());
        run_experiment(&cfg).unwrap();
        cfg.output_dir = b.path().to_path_buf();
        cfg.workers = 2;
        run_experiment(&cfg).unwrap();
        for rel in [
            run_log_path("penalty", "coppo", 0),
            run_log_path("penalty", "coppo", 1),
            run_log_path("penalty", "independent-ratio", 1),
            Path::new("penalty").join("coppo").join(AGGREGATE),
            Path::new(SUMMARY).to_path_buf(),
        ] {
            assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap(), "{rel:?}");
        }
    }

    #[test]
    fn aggregates_recompute_from_raw_logs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 3, 200, two_variants());
        run_experiment(&cfg).unwrap();
        let manifest = Manifest::load(tmp.path()).unwrap();
        let cap = manifest.penalty_cap["penalty"];
        for v in &cfg.variants {
            let series: Vec<RunSeries> = manifest
                .runs
                .iter()
                .filter(|r| r.variant == v.label)
                .map(|r| RunSeries::from_records(&load_run_log(&tmp.path().join(&r.log)).unwrap()))
                .collect();
            let refs: Vec<&RunSeries> = series.iter().collect();
            let finals: Vec<f64> = series.iter().map(|s| s.final_reward(cfg.final_window)).collect();
            let mut expected = vec![("final_reward".to_string(), 0.0, finals)];
            let objective = v.objective().unwrap();
            for (name, rows) in [
                ("reward", reward_rows(&refs, cfg.reward_window)),
                ("grad_variance", grad_variance_rows(&refs)),
                ("post_penalty_advantage", post_penalty_rows(&refs, objective, cap)),
                ("within_update_advantage", within_update_rows(&refs, cap)),
            ] {
                expected.extend(rows.into_iter().map(|(x, ys)| (name.to_string(), x, ys)));
            }
            let mut reader = csv::Reader::from_path(tmp.path().join("penalty").join(&v.label).join(AGGREGATE)).unwrap();
            let rows: Vec<(String, f64, usize, f64, f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
            assert_eq!(rows.len(), expected.len());
            for ((metric, x, n, m, lo, hi), (name, ex, ys)) in rows.iter().zip(&expected) {
                assert_eq!(metric, name);
                assert_eq!(x, ex);
                assert_eq!(*n, ys.len());
                let (em, elo, ehi) = mean_ci95(ys);
                assert!((m - em).abs() <= 1e-12 && (lo - elo).abs() <= 1e-12 && (hi - ehi).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn post_penalty_series_share_the_global_minimum_length() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 3, 300, two_variants());
        let res = run_experiment(&cfg).unwrap();
        let cap = res.penalty_cap["penalty"];
        let min_events = res.runs.iter().map(|r| r.series.events.len()).min().unwrap();
        assert_eq!(cap, min_events);
        assert!(cap > 0, "300 near-uniform steps should see penalties");
        for v in &cfg.variants {
            for s in res.post_penalty("penalty", &v.label) {
                assert_eq!(s.len(), cap);
            }
        }
    }

    #[test]
    fn invalid_game_or_variant_fails_before_any_run() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("never");
        let mut cfg = small(&out, 1, 10, two_variants());
        cfg.games = vec!["no-such-game".to_string()];
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        let mut cfg = small(&out, 1, 10, two_variants());
        cfg.variants[0].objective = "mappo".to_string();
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        assert!(!out.exists());
    }

    #[test]
    fn manifest_echoes_resolved_config() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 1, 40, two_variants());
        run_experiment(&cfg).unwrap();
        let m = Manifest::load(tmp.path()).unwrap();
        assert_eq!(m.config, cfg);
        assert_eq!(m.runs.len(), 2);
        assert!(m.code_version.starts_with("coppo "));
    }

    #[test]
    fn comparison_emits_four_panels_and_ablation_two() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 2, 120, two_variants());
        run_experiment(&cfg).unwrap();
        let bundle = emit_plot_data(tmp.path()).unwrap();
        assert_eq!(bundle.files.len(), 4);
        assert!(bundle.warnings.is_empty());
        let header = fs::read_to_string(&bundle.files[0]).unwrap();
        assert!(header.starts_with("variant,seed,x,y\n"));

        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(tmp.path(), 1, 60, vec![
            VariantSpec::new("eps2-0.05", Objective::Coppo).with_eps2(0.05),
            VariantSpec::new("no-inner-clip", Objective::PerAgentNoInnerClip),
        ]);
        cfg.kind = ExperimentKind::Ablation;
        run_experiment(&cfg).unwrap();
        assert_eq!(emit_plot_data(tmp.path()).unwrap().files.len(), 2);
    }

    #[test]
    fn missing_runs_give_partial_bundle_with_warnings() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), 2, 60, two_variants());
        run_experiment(&cfg).unwrap();
        fs::remove_file(tmp.path().join(run_log_path("penalty", "coppo", 1))).unwrap();
        let bundle = emit_plot_data(tmp.path()).unwrap();
        assert_eq!(bundle.files.len(), 4);
        assert_eq!(bundle.warnings.len(), 1);
        let text = fs::read_to_string(tmp.path().join("plots").join("warnings.json")).unwrap();
        let warnings: Vec<String> = serde_json::from_str(&text).unwrap();
        assert_eq!(warnings, bundle.warnings);
    }

    #[test]
    fn empty_results_give_empty_bundle_and_warning() {
        let tmp = tempfile::tempdir().unwrap();
        let bundle = emit_plot_data(tmp.path()).unwrap();
        assert!(bundle.files.is_empty());
        assert_eq!(bundle.warnings.len(), 1);
    }
}
