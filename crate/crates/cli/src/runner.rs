//! End-to-end execution of one configured run: construct the rendering
//! space, target set, learner, and (for policy methods) the sampler and
//! domain classifier; run the selected loop; write metrics, checkpoints,
//! heatmaps, and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use advrand::adversary::{
    domain_classifier, input_dim_for, output_dim_for, render_cells, run_dr, run_vadra,
    run_vadra_da, sample_uniform_scene, Dataset, RunMetrics,
};
use advrand::learner::{LearnerState, SampleLabel};
use advrand::policy::PolicyState;
use advrand::render::{RenderSpace, Task};
use advrand::rng::{derive_seed, rng_from, stream_seed, Stream};
use advrand::tensor::Tensor;
use anyhow::{Context, Result};
use rand::Rng;

use crate::config::{fnv1a64, ExperimentConfig, Method, TargetShape};

/// Render `count` labeled samples from the run's target domain. For the
/// single-shape task the draw is uniform over the cells matching the
/// configured shape restriction; for the grid task it is a uniform scene.
/// Deterministic in (config, stream seed) and independent of the training
/// streams, so the same target set serves paired runs.
pub fn render_target_set(
    cfg: &ExperimentConfig,
    space: &RenderSpace<f64>,
    stream: Stream,
) -> Result<Dataset<f64>> {
    let stream_root = stream_seed(cfg.target_seed, stream);
    let mut rng = rng_from(stream_root);
    let mut out = Vec::with_capacity(cfg.target_count);
    match cfg.task {
        Task::ShapeColor => {
            let allowed: Vec<usize> = (0..space.cardinality())
                .filter(|&cell| {
                    let params = space.shape_params_from_cell(cell, 0).expect("cell in range");
                    match cfg.target_shape {
                        TargetShape::Any => true,
                        TargetShape::Only(shape) => params.shape == shape,
                    }
                })
                .collect();
            for i in 0..cfg.target_count {
                let cell = allowed[rng.gen_range(0..allowed.len())];
                let sample =
                    render_cells(space, &[cell], derive_seed(stream_root, i as u64))?;
                out.push((sample.image, SampleLabel::from_render(&sample.label)));
            }
        }
        Task::GridSpawn => {
            for i in 0..cfg.target_count {
                let cells = sample_uniform_scene(space, &mut rng)?;
                let sample =
                    render_cells(space, &cells, derive_seed(stream_root, i as u64))?;
                out.push((sample.image, SampleLabel::from_render(&sample.label)));
            }
        }
    }
    Ok(out)
}

/// Unlabeled image pool from the target domain (vadra_da input).
fn render_target_pool(
    cfg: &ExperimentConfig,
    space: &RenderSpace<f64>,
) -> Result<Vec<Tensor<f64>>> {
    let mut pool_cfg = cfg.clone();
    pool_cfg.target_count = cfg.pool_count;
    Ok(render_target_set(&pool_cfg, space, Stream::TargetPool)?
        .into_iter()
        .map(|(x, _)| x)
        .collect())
}

pub struct RunOutcome {
    pub metrics: RunMetrics<f64>,
    pub out_dir: PathBuf,
}

/// The directory a command writes into: `--out` wins, then the config's
/// `out_dir`; having neither is a usage error.
pub fn resolve_out_dir(cfg: &ExperimentConfig, out_override: Option<&Path>) -> Result<PathBuf> {
    match out_override {
        Some(p) => Ok(p.to_path_buf()),
        None => cfg
            .out_dir
            .clone()
            .ok_or_else(|| anyhow::anyhow!("no output directory: set `out_dir` or pass --out")),
    }
}

pub fn execute_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let out_dir = out_dir.to_path_buf();
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let space = cfg.build_space();
    space.validate().context("rendering space")?;
    let target = render_target_set(cfg, &space, Stream::Target)?;
    let mut learner = LearnerState::<f64>::mlp(
        input_dim_for(&space),
        &cfg.hidden,
        output_dim_for(&space),
        stream_seed(cfg.seed, Stream::LearnerInit),
    )?;

    write_manifest(cfg, &out_dir)?;

    let metrics = match cfg.method {
        Method::Dr => {
            let result = run_dr(&cfg.dr_config(), &space, &mut learner, &target);
            finish_learner(result, &learner, &out_dir)?
        }
        Method::Vadra => {
            let mut pi = PolicyState::uniform(space.cardinality(), cfg.baseline_decay)?;
            let result = run_vadra(&cfg.vadra_config(), &space, &mut learner, &mut pi, &target);
            finish_policy(result, &learner, &pi, &space, &out_dir)?
        }
        Method::VadraDa => {
            let mut pi = PolicyState::uniform(space.cardinality(), cfg.baseline_decay)?;
            let mut probe = domain_classifier(
                learner.feature_dim(),
                cfg.d_hidden,
                derive_seed(stream_seed(cfg.seed, Stream::DomainClassifier), 0),
            )?;
            let pool = render_target_pool(cfg, &space)?;
            let result = run_vadra_da(
                &cfg.da_config(),
                &space,
                &mut learner,
                &mut pi,
                &mut probe,
                &pool,
                &target,
            );
            let probe_name = if result.is_ok() {
                "domain.ckpt"
            } else {
                "domain.failed.ckpt"
            };
            probe.save_weights_to(&out_dir.join(probe_name))?;
            finish_policy(result, &learner, &pi, &space, &out_dir)?
        }
    };

    fs::write(out_dir.join("metrics.csv"), metrics.to_csv())?;
    write_heatmaps(&metrics, &space, &out_dir)?;
    Ok(RunOutcome { metrics, out_dir })
}

/// On success write the final checkpoint; on failure checkpoint whatever
/// state the run reached (under a name that cannot be mistaken for a
/// completed run) and propagate the error.
fn finish_learner(
    result: advrand::Result<RunMetrics<f64>>,
    learner: &LearnerState<f64>,
    out_dir: &Path,
) -> Result<RunMetrics<f64>> {
    match result {
        Ok(metrics) => {
            learner.save_weights_to(&out_dir.join("learner.ckpt"))?;
            Ok(metrics)
        }
        Err(e) => {
            learner.save_weights_to(&out_dir.join("learner.failed.ckpt"))?;
            Err(e).context("run aborted; state saved to learner.failed.ckpt")
        }
    }
}

fn finish_policy(
    result: advrand::Result<RunMetrics<f64>>,
    learner: &LearnerState<f64>,
    pi: &PolicyState<f64>,
    space: &RenderSpace<f64>,
    out_dir: &Path,
) -> Result<RunMetrics<f64>> {
    match result {
        Ok(metrics) => {
            learner.save_weights_to(&out_dir.join("learner.ckpt"))?;
            pi.save_to(&out_dir.join("policy.ckpt"))?;
            if space.task == Task::ShapeColor {
                fs::write(out_dir.join("policy_final.csv"), policy_table(pi, space)?)?;
            }
            Ok(metrics)
        }
        Err(e) => {
            learner.save_weights_to(&out_dir.join("learner.failed.ckpt"))?;
            pi.save_to(&out_dir.join("policy.failed.ckpt"))?;
            Err(e).context("run aborted; state saved to *.failed.ckpt")
        }
    }
}

/// Final policy distribution over the factored parameter grid, one row
/// per cell with the decoded factor levels.
fn policy_table(pi: &PolicyState<f64>, space: &RenderSpace<f64>) -> Result<String> {
    let probs = pi.probs();
    let mut out = String::from("cell,shape,material,color,size,prob\n");
    for (cell, &p) in probs.iter().enumerate() {
        let params = space.shape_params_from_cell(cell, 0)?;
        out.push_str(&format!(
            "{cell},{},{},{},{},{p}\n",
            params.shape.name(),
            params.material.name(),
            params.color_idx,
            params.size_idx,
        ));
    }
    Ok(out)
}

fn write_heatmaps(
    metrics: &RunMetrics<f64>,
    space: &RenderSpace<f64>,
    out_dir: &Path,
) -> Result<()> {
    if metrics.heatmaps.is_empty() {
        return Ok(());
    }
    let dir = out_dir.join("heatmaps");
    fs::create_dir_all(&dir)?;
    for (i, heat) in metrics.heatmaps.iter().enumerate() {
        let iter = i + 1;
        let mut csv = String::from("row,col,prob\n");
        for (cell, &p) in heat.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{p}\n",
                cell / space.grid_cols,
                cell % space.grid_cols
            ));
        }
        fs::write(dir.join(format!("iter_{iter:04}.csv")), csv)?;
        advrand::io::write_pgm(
            &dir.join(format!("iter_{iter:04}.pgm")),
            space.grid_rows,
            space.grid_cols,
            heat,
            true,
        )?;
    }
    Ok(())
}

pub fn write_manifest(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let echo = cfg.canonical_echo();
    let mut text = String::from("advrand-manifest v1\n");
    text.push_str(&format!("version {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("config_hash {:016x}\n", fnv1a64(echo.as_bytes())));
    text.push_str(&format!("seed {}\n", cfg.seed));
    text.push_str(&format!(
        "task {}\n",
        match cfg.task {
            Task::ShapeColor => "shape_color",
            Task::GridSpawn => "grid_spawn",
        }
    ));
    text.push_str(&format!("method {}\n", cfg.method.name()));
    text.push_str(&format!("budget {}\n", cfg.budget()));
    text.push_str(&format!("budget_expr {}\n", cfg.budget_expr()));
    text.push_str(&format!("iterations {}\n", cfg.iterations));
    text.push_str("[config]\n");
    text.push_str(&echo);
    fs::write(out_dir.join("manifest.txt"), text)?;
    Ok(())
}
