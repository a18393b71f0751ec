//! Split-mode comparison over seeds from a shared initialization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AdpSplitConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::raster::render_with;
use crate::scene::io::save_scene;

use super::synth::{init_scene, synth_scene, SynthData, BACKGROUND};
use super::train::{train, RunConfig, SplitMode, TrainOutput};

/// Held-out PSNR used as the default rounds-to-target threshold.
pub const DEFAULT_TARGET_PSNR: f64 = 30.0;

/// How the per-seed PSNR target for "rounds to target" is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetRule {
    /// Best final held-out PSNR over all modes of the seed, minus this many dB.
    BestFinalMinus(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<SplitMode>,
    pub target: TargetRule,
}

impl ExperimentConfig {
    pub fn standard(seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            seeds,
            modes: vec![SplitMode::VanillaBinary, SplitMode::VanillaN(5), SplitMode::AdpSplit],
            target: TargetRule::Absolute(DEFAULT_TARGET_PSNR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub mode: String,
    pub final_psnr: f64,
    pub gaussians: usize,
    pub rounds: usize,
    pub target_psnr: f64,
    pub rounds_to_target: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: SplitMode,
    pub output: TrainOutput,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<RunRecord>,
    pub data: Vec<SynthData>,
}

impl Comparison {
    pub fn row(&self, seed: u64, mode: SplitMode) -> Option<&ComparisonRow> {
        let label = mode.label();
        self.rows.iter().find(|r| r.seed == seed && r.mode == label)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("seed,mode,final_psnr,gaussians,rounds,target_psnr,rounds_to_target\n");
        for r in &self.rows {
            let reached = r.rounds_to_target.map(|n| n.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:e},{},{},{:e},{}",
                r.seed, r.mode, r.final_psnr, r.gaussians, r.rounds, r.target_psnr, reached
            );
        }
        s
    }

    /// `comparison.csv` plus one directory per run with its metrics, final
    /// scene and a render of the first held-out view.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("comparison.csv");
        std::fs::write(&p, self.csv()).map_err(|e| Error::io(&p, e))?;
        for run in &self.runs {
            let sub = dir.join(format!("seed{}_{}", run.seed, run.mode.label()));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            run.output.log.write(&sub)?;
            save_scene(&run.output.scene, sub.join("scene.txt"))?;
            let data = self
                .data
                .iter()
                .zip(&self.runs_seeds())
                .find(|(_, s)| **s == run.seed)
                .map(|(d, _)| d)
                .expect("data for every seed");
            let view = data.test_views().first().copied().unwrap_or(0);
            render_with(&run.output.scene, &data.cameras[view], &BACKGROUND, Exec::default())
                .image
                .save_png(sub.join(format!("view{view:03}.png")))?;
        }
        Ok(())
    }

    fn runs_seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = Vec::new();
        for r in &self.runs {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        seeds
    }
}

/// Train every mode on every seed from the same initialization and iteration
/// budget. Runs are independent and execute in parallel under `exec`.
pub fn compare_experiment(
    ecfg: &ExperimentConfig,
    cfg: &AdpSplitConfig,
    rc: &RunConfig,
    exec: Exec,
) -> Result<Comparison> {
    if ecfg.seeds.is_empty() || ecfg.modes.is_empty() {
        return Err(Error::InvalidConfig("experiment needs at least one seed and one mode".into()));
    }
    let data: Vec<SynthData> = exec.map(ecfg.seeds.len(), |s| {
        synth_scene(ecfg.seeds[s], rc.k, rc.cameras, rc.image_size)
    });
    let nm = ecfg.modes.len();
    let outputs = exec.map(ecfg.seeds.len() * nm, |j| {
        let (s, m) = (j / nm, j % nm);
        let seed = ecfg.seeds[s];
        let init = init_scene(&data[s].gt_scene, seed, rc.init_count);
        let schedule = rc.schedule(ecfg.modes[m], seed, cfg);
        train(&init, &data[s], &BACKGROUND, &schedule, cfg, rc, Exec::Sequential)
    });

    let mut runs = Vec::with_capacity(outputs.len());
    for (j, out) in outputs.into_iter().enumerate() {
        runs.push(RunRecord {
            seed: ecfg.seeds[j / nm],
            mode: ecfg.modes[j % nm],
            output: out?,
        });
    }
    let mut rows = Vec::with_capacity(runs.len());
    for chunk in runs.chunks(nm) {
        let best = chunk
            .iter()
            .filter_map(|r| r.output.log.final_psnr())
            .fold(f64::NEG_INFINITY, f64::max);
        let target = match ecfg.target {
            TargetRule::BestFinalMinus(db) => best - db,
            TargetRule::Absolute(t) => t,
        };
        for r in chunk {
            let log = &r.output.log;
            rows.push(ComparisonRow {
                seed: r.seed,
                mode: r.mode.label(),
                final_psnr: log.final_psnr().unwrap_or(f64::NAN),
                gaussians: r.output.scene.len(),
                rounds: r.output.rounds,
                target_psnr: target,
                rounds_to_target: log.rounds_to_target(target),
            });
        }
    }
    Ok(Comparison { rows, runs, data })
}
