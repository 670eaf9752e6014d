use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use super::metrics::RunSeries;
use super::runner::{load_run_log, Manifest};
use super::stats::{mean, moving_average};
use crate::error::Result;
use crate::trainer::Objective;

pub const PLOT_DIR: &str = "plots";
pub const WARNINGS: &str = "warnings.json";

/// What `emit_plot_data` wrote and anything it had to skip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotBundle {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct PlotRow<'a> {
    variant: &'a str,
    seed: u64,
    x: f64,
    y: f64,
}

struct LoadedRun {
    variant: String,
    objective: Objective,
    seed: u64,
    series: RunSeries,
}

fn panels(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Comparison => &["reward", "post_penalty_advantage", "within_update_advantage", "grad_variance"],
        ExperimentKind::Ablation => &["reward", "grad_variance"],
        ExperimentKind::Battery => &["reward"],
    }
}

/// Writes one tidy `(variant, seed, x, y)` CSV per figure panel under `<dir>/plots`.
///
/// Missing or empty run logs are skipped and listed in `plots/warnings.json`;
/// a directory without a manifest yields an empty bundle with a warning.
pub fn emit_plot_data(dir: &Path) -> Result<PlotBundle> {
    let out = dir.join(PLOT_DIR);
    fs::create_dir_all(&out)?;
    let mut bundle = PlotBundle::default();
    let manifest = match Manifest::load(dir) {
        Ok(m) => Some(m),
        Err(e) => {
            bundle.warnings.push(format!("no readable manifest in {}: {e}", dir.display()));
            None
        }
    };
    if let Some(m) = manifest {
        let cfg = &m.config;
        for game in &cfg.games {
            let mut runs = Vec::new();
            for r in m.runs.iter().filter(|r| &r.game == game) {
                let path = dir.join(&r.log);
                match load_run_log(&path) {
                    Ok(records) if !records.is_empty() => runs.push(LoadedRun {
                        variant: r.variant.clone(),
                        objective: r.objective,
                        seed: r.seed,
                        series: RunSeries::from_records(&records),
                    }),
                    Ok(_) => bundle.warnings.push(format!("empty run log {}", path.display())),
                    Err(e) => bundle.warnings.push(format!("missing run log {}: {e}", path.display())),
                }
            }
            if runs.is_empty() {
                bundle.warnings.push(format!("no runs for game {game}"));
                continue;
            }
            let cap = m.penalty_cap.get(game).copied().unwrap_or(0);
            for panel in panels(cfg.kind) {
                let path = out.join(format!("{game}_{panel}.csv"));
                let mut w = csv::Writer::from_path(&path)?;
                for run in &runs {
                    for (x, y) in panel_points(panel, &run.series, run.objective, cap, cfg.reward_window) {
                        w.serialize(PlotRow {
                            variant: &run.variant,
                            seed: run.seed,
                            x,
                            y,
                        })?;
                    }
                }
                w.flush()?;
                bundle.files.push(path);
            }
        }
    }
    fs::write(out.join(WARNINGS), serde_json::to_string_pretty(&bundle.warnings)? + "\n")?;
    Ok(bundle)
}

fn panel_points(panel: &str, s: &RunSeries, objective: Objective, cap: usize, reward_window: usize) -> Vec<(f64, f64)> {
    match panel {
        "reward" => {
            let smooth = moving_average(&s.rewards, reward_window);
            (reward_window..=smooth.len())
                .step_by(reward_window)
                .map(|t| (t as f64, smooth[t - 1]))
                .collect()
        }
        "grad_variance" => s.grad_variance.iter().map(|&(t, v)| (t as f64, v)).collect(),
        "post_penalty_advantage" => s
            .events
            .iter()
            .take(cap)
            .enumerate()
            .map(|(i, e)| (i as f64, e.value(objective.reweights_by_others())))
            .collect(),
        "within_update_advantage" => {
            let traces: Vec<Vec<f64>> = s.events.iter().take(cap).map(|e| e.epoch_trace()).collect();
            let k = traces.first().map_or(0, |t| t.len());
            (0..k)
                .map(|e| (e as f64, mean(&traces.iter().map(|t| t[e]).collect::<Vec<_>>())))
                .collect()
        }
        _ => Vec::new(),
    }
}
