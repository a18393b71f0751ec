//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adc::{accumulate_stats, adpsplit_step_with, child_gaussian, DensifyStats, SplitReport};
use crate::config::{apply_overrides, read_toml, AdpSplitConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::experiment::{compare_experiment, ExperimentConfig, TargetRule, DEFAULT_TARGET_PSNR};
use crate::harness::synth::{init_scene, synth_scene, SynthData, BACKGROUND};
use crate::harness::train::{desk_config, l1_loss, step_seed, train, RunConfig, SplitMode};
use crate::raster::{render_backward_with, render_with, save_gray_png, save_index_png};
use crate::scene::io::{load_cameras, load_scene, save_cameras, save_scene};
use crate::scene::{rgb_to_dc, rotmat_to_quat, Gaussian3D, Scene};

#[derive(Parser, Debug)]
#[command(name = "adpsplit", version, about = "Adaptive Gaussian splitting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file overriding operator fields by name; a `[run]` table
    /// overrides run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one view of a scene.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Background colour as `r,g,b` in [0, 1].
        #[arg(long, default_value = "0,0,0")]
        bg: String,
        #[arg(long, default_value = "png", value_parser = ["png", "ppm"])]
        format: String,
    },
    /// Optimize a scene against ground-truth renders, densifying on schedule.
    Train {
        #[command(flatten)]
        common: Common,
        /// Initial scene.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Scene rendered to produce the ground-truth images.
        #[arg(long)]
        gt_scene: PathBuf,
        /// vanilla-binary, vanilla-n<N> or adpsplit.
        #[arg(long, default_value = "adpsplit")]
        mode: String,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        densify_from: Option<usize>,
        #[arg(long)]
        densify_until: Option<usize>,
    },
    /// Run one adaptive split step on a saved scene.
    SplitStep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        gt_scene: PathBuf,
        /// Write error, mask, band and dominant maps of the sampled views.
        #[arg(long)]
        dump_maps: bool,
        /// Write child proposals and merged children as scene files.
        #[arg(long)]
        dump_children: bool,
        /// Print a per-candidate summary and write it as text.
        #[arg(long)]
        report: bool,
    },
    /// Compare split modes over several seeds.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Seed list: `a..b` (inclusive) or comma separated.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Held-out PSNR target for rounds-to-target.
        #[arg(long)]
        target_psnr: Option<f64>,
        /// Comma-separated modes.
        #[arg(long, default_value = "vanilla-binary,vanilla-n5,adpsplit")]
        modes: String,
    },
    /// Generate a synthetic scene, cameras, ground-truth images and an initial scene.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        init_count: Option<usize>,
    },
}

/// Parse `argv` (program name first) and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Render {
            common,
            scene,
            cameras,
            view,
            bg,
            format,
        } => cmd_render(&common, &scene, &cameras, view, &bg, &format),
        Command::Train {
            common,
            scene,
            cameras,
            gt_scene,
            mode,
            iters,
            densify_from,
            densify_until,
        } => {
            let (cfg, mut rc) = load_config(&common)?;
            if let Some(n) = iters {
                rc.total_iters = n;
            }
            if let Some(n) = densify_from {
                rc.densify_from = n;
            }
            if let Some(n) = densify_until {
                rc.densify_until = n;
            }
            cmd_train(&common, &cfg, &rc, &scene, &cameras, &gt_scene, SplitMode::parse(&mode)?)
        }
        Command::SplitStep {
            common,
            scene,
            cameras,
            gt_scene,
            dump_maps,
            dump_children,
            report,
        } => {
            let (cfg, _) = load_config(&common)?;
            cmd_split_step(&common, &cfg, &scene, &cameras, &gt_scene, dump_maps, dump_children, report)
        }
        Command::Experiment {
            common,
            seeds,
            k,
            iters,
            target_psnr,
            modes,
        } => {
            let (cfg, mut rc) = load_config(&common)?;
            if let Some(k) = k {
                rc.k = k;
            }
            if let Some(n) = iters {
                rc.total_iters = n;
                rc.densify_until = rc.densify_until.min(n);
            }
            let modes = modes.split(',').map(|m| SplitMode::parse(m.trim())).collect::<Result<Vec<_>>>()?;
            let ecfg = ExperimentConfig {
                seeds: parse_seeds(&seeds)?,
                modes,
                target: TargetRule::Absolute(target_psnr.unwrap_or(DEFAULT_TARGET_PSNR)),
            };
            cmd_experiment(&common, &cfg, &rc, &ecfg)
        }
        Command::Synth {
            common,
            k,
            cameras,
            image_size,
            init_count,
        } => {
            let (cfg, mut rc) = load_config(&common)?;
            rc.k = k.unwrap_or(rc.k);
            rc.cameras = cameras.unwrap_or(rc.cameras);
            rc.image_size = image_size.unwrap_or(rc.image_size);
            rc.init_count = init_count.unwrap_or(rc.init_count);
            cmd_synth(&common, &cfg, &rc)
        }
    }
}

/// Desk-scale operator settings and run settings, overridden by `--config`.
fn load_config(common: &Common) -> Result<(AdpSplitConfig, RunConfig)> {
    let (mut cfg, mut rc) = (desk_config(), RunConfig::default());
    if let Some(path) = &common.config {
        let mut table = read_toml(path)?;
        if let Some(run) = table.remove("run") {
            let run = run
                .as_table()
                .ok_or_else(|| Error::InvalidConfig("`run` must be a table".into()))?;
            rc = apply_overrides(&rc, run)?;
        }
        cfg = apply_overrides(&cfg, &table)?;
    }
    cfg.validate()?;
    Ok((cfg, rc))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Usage(format!("invalid seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn parse_rgb(s: &str) -> Result<Vector3<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("invalid colour `{s}`")))?;
    if v.len() != 3 || v.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Usage(format!("colour `{s}` must be three values in [0, 1]")));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// `run.json`: everything needed to replay the command from its output folder.
fn echo_config<T: Serialize>(dir: &Path, command: &str, seed: u64, cfg: &AdpSplitConfig, extra: &T) -> Result<()> {
    let v = serde_json::json!({
        "command": command,
        "seed": seed,
        "operator": cfg,
        "args": extra,
    });
    write_text(&dir.join("run.json"), &(serde_json::to_string_pretty(&v)? + "\n"))
}

fn load_inputs(scene: &Path, cameras: &Path) -> Result<(Scene, Vec<crate::scene::Camera>)> {
    let s = load_scene(scene)?;
    let c = load_cameras(cameras)?;
    Ok((s, c))
}

fn cmd_render(common: &Common, scene: &Path, cameras: &Path, view: usize, bg: &str, format: &str) -> Result<()> {
    let (cfg, _) = load_config(common)?;
    let (scene_v, cams) = load_inputs(scene, cameras)?;
    let cam = cams
        .get(view)
        .ok_or_else(|| Error::Usage(format!("view {view} out of range (have {})", cams.len())))?;
    let bg_v = parse_rgb(bg)?;
    ensure_dir(&common.out)?;
    let out = render_with(&scene_v, cam, &bg_v, Exec::default());
    out.image.save(common.out.join(format!("render_view{view:03}.{format}")))?;
    echo_config(
        &common.out,
        "render",
        common.seed,
        &cfg,
        &serde_json::json!({ "scene": scene, "cameras": cameras, "view": view, "bg": bg, "format": format }),
    )
}

fn cmd_synth(common: &Common, cfg: &AdpSplitConfig, rc: &RunConfig) -> Result<()> {
    if rc.k < 1 {
        return Err(Error::Usage("--k must be at least 1".into()));
    }
    let data = synth_scene(common.seed, rc.k, rc.cameras, rc.image_size);
    let init = init_scene(&data.gt_scene, common.seed, rc.init_count);
    let out = &common.out;
    ensure_dir(&out.join("gt"))?;
    save_scene(&data.gt_scene, out.join("gt_scene.txt"))?;
    save_scene(&init, out.join("init_scene.txt"))?;
    save_cameras(&data.cameras, out.join("cameras.txt"))?;
    for (v, img) in data.gt_images.iter().enumerate() {
        img.save_png(out.join("gt").join(format!("view{v:03}.png")))?;
    }
    echo_config(out, "synth", common.seed, cfg, rc)
}

fn cmd_train(
    common: &Common,
    cfg: &AdpSplitConfig,
    rc: &RunConfig,
    scene: &Path,
    cameras: &Path,
    gt_scene: &Path,
    mode: SplitMode,
) -> Result<()> {
    let (init, cams) = load_inputs(scene, cameras)?;
    let data = SynthData::from_scene(load_scene(gt_scene)?, cams);
    let schedule = rc.schedule(mode, common.seed, cfg);
    let res = train(&init, &data, &BACKGROUND, &schedule, cfg, rc, Exec::default())?;
    let out = &common.out;
    ensure_dir(out)?;
    save_scene(&res.scene, out.join("scene.txt"))?;
    res.log.write(out)?;
    for v in data.test_views() {
        render_with(&res.scene, &data.cameras[v], &BACKGROUND, Exec::default())
            .image
            .save_png(out.join(format!("view{v:03}.png")))?;
    }
    echo_config(
        out,
        "train",
        common.seed,
        cfg,
        &serde_json::json!({ "scene": scene, "cameras": cameras, "gt_scene": gt_scene, "schedule": schedule, "run": rc }),
    )
}

/// Gradient statistics from one backward pass per training view.
fn gradient_stats(scene: &Scene, data: &SynthData, views: &[usize]) -> Result<DensifyStats> {
    let mut stats = DensifyStats::new(scene.len());
    for &v in views {
        let out = render_with(scene, &data.cameras[v], &BACKGROUND, Exec::default());
        let (_, dl) = l1_loss(&out.image, &data.gt_images[v])?;
        let g = render_backward_with(scene, &data.cameras[v], &BACKGROUND, &dl, Exec::default())?;
        accumulate_stats(&mut stats, &g);
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn cmd_split_step(
    common: &Common,
    cfg: &AdpSplitConfig,
    scene: &Path,
    cameras: &Path,
    gt_scene: &Path,
    dump_maps: bool,
    dump_children: bool,
    report: bool,
) -> Result<()> {
    let (scene_v, cams) = load_inputs(scene, cameras)?;
    let data = SynthData::from_scene(load_scene(gt_scene)?, cams);
    let views = data.train_views();
    let train_cams: Vec<_> = views.iter().map(|&v| data.cameras[v].clone()).collect();
    let train_gt: Vec<_> = views.iter().map(|&v| data.gt_images[v].clone()).collect();
    let stats = gradient_stats(&scene_v, &data, &views)?;
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(common.seed, 0));
    let (mut d, art) = adpsplit_step_with(&scene_v, &train_cams, &train_gt, &stats, cfg, &BACKGROUND, &mut rng, Exec::default())?;
    // report camera indices rather than positions in the training subset
    d.report.views = d.report.views.iter().map(|&k| views[k]).collect();

    let out = &common.out;
    ensure_dir(out)?;
    save_scene(&d.scene, out.join("scene.txt"))?;
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&d.report)? + "\n"))?;
    if report {
        let text = report_text(&d.report);
        print!("{text}");
        write_text(&out.join("report.txt"), &text)?;
    }
    if dump_maps {
        let dir = out.join("maps");
        ensure_dir(&dir)?;
        for (k, &tv) in art.views.iter().enumerate() {
            let v = views[tv];
            let m = &art.maps[k];
            let (w, h) = (m.e.width, m.e.height);
            save_gray_png(w, h, &m.e.data, &dir.join(format!("view{v:03}_error.png")))?;
            let mask: Vec<f64> = m.m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            save_gray_png(w, h, &mask, &dir.join(format!("view{v:03}_mask.png")))?;
            save_index_png(w, h, &m.b.data, &dir.join(format!("view{v:03}_band.png")))?;
            save_index_png(w, h, &art.renders[k].dominant, &dir.join(format!("view{v:03}_dominant.png")))?;
        }
    }
    if dump_children {
        let proposals: Vec<Gaussian3D> = art
            .proposals
            .iter()
            .map(|p| Gaussian3D {
                mu: p.mu,
                scale: p.scale,
                rot: rotmat_to_quat(&p.rot),
                opacity: p.opacity,
                sh_dc: rgb_to_dc(&p.rgb),
                sh_rest: Vec::new(),
            })
            .collect();
        save_scene(&Scene::new(proposals, scene_v.extent), out.join("proposals.txt"))?;
        let merged: Vec<Gaussian3D> = art
            .children
            .iter()
            .map(|c| child_gaussian(c, &scene_v.gaussians[c.parent]))
            .collect();
        save_scene(&Scene::new(merged, scene_v.extent), out.join("children.txt"))?;
    }
    echo_config(
        out,
        "split-step",
        common.seed,
        cfg,
        &serde_json::json!({ "scene": scene, "cameras": cameras, "gt_scene": gt_scene }),
    )
}

fn report_text(r: &SplitReport) -> String {
    use std::fmt::Write as _;
    let mut s = format!(
        "views {:?}\nGaussians {} -> {} ({} clones, {} split candidates)\n",
        r.views,
        r.count_before,
        r.count_after,
        r.clones,
        r.candidates.len()
    );
    s += "index case regions proposals dropped edges groups inserted\n";
    for c in &r.candidates {
        let _ = writeln!(
            s,
            "{} {:?} {} {} {} {} {} {}",
            c.index,
            c.case,
            c.regions_per_view.iter().sum::<usize>(),
            c.proposals,
            c.proposals_dropped,
            c.merge_edges,
            c.merged,
            c.inserted
        );
    }
    s
}

fn cmd_experiment(common: &Common, cfg: &AdpSplitConfig, rc: &RunConfig, ecfg: &ExperimentConfig) -> Result<()> {
    let cmp = compare_experiment(ecfg, cfg, rc, Exec::default())?;
    cmp.write(&common.out)?;
    echo_config(
        &common.out,
        "experiment",
        common.seed,
        cfg,
        &serde_json::json!({ "experiment": ecfg, "run": rc }),
    )
}
