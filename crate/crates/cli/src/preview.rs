//! The `render-preview` subcommand: draw a handful of samples uniformly
//! from the configured parameter space and write them out as PPM images
//! with a label table, so a rendering setup can be eyeballed before
//! spending a training run on it.

use std::fs;
use std::path::Path;

use advrand::adversary::{render_cells, sample_uniform_cell, sample_uniform_scene};
use advrand::io::write_ppm;
use advrand::render::{occupancy_placements, RenderSpace, Task};
use advrand::rng::{derive_seed, rng_from, stream_seed, Stream};
use anyhow::{Context, Result};

use crate::config::ExperimentConfig;
use crate::runner::write_manifest;

/// Render `cfg.preview_count` uniform draws into `out_dir`. Returns the
/// number of images written.
pub fn render_preview(cfg: &ExperimentConfig, out_dir: &Path) -> Result<usize> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let space: RenderSpace<f64> = cfg.build_space();
    space.validate().context("rendering space")?;
    write_manifest(cfg, out_dir)?;

    // Uniform draws come from their own stream; render nuisance seeds come
    // from the render stream. Both are derived exactly as a training run
    // derives them, so preview image 0 of seed s is training draw 0 of
    // iteration 0 under the same config.
    let mut rng = rng_from(derive_seed(stream_seed(cfg.seed, Stream::UniformSample), 0));
    let render_root = derive_seed(stream_seed(cfg.seed, Stream::Render), 0);

    let mut labels = String::from(match cfg.task {
        Task::ShapeColor => "index,file,cell,shape,material,color,size\n",
        Task::GridSpawn => "index,file,count,placements\n",
    });
    for i in 0..cfg.preview_count {
        let cells = match cfg.task {
            Task::ShapeColor => vec![sample_uniform_cell(&space, &mut rng)],
            Task::GridSpawn => sample_uniform_scene(&space, &mut rng)?,
        };
        let sample = render_cells(&space, &cells, derive_seed(render_root, i as u64))?;
        let file = format!("preview_{i:04}.ppm");
        write_ppm(&out_dir.join(&file), &sample.image)?;
        match cfg.task {
            Task::ShapeColor => {
                let cell = cells[0];
                let params = space.shape_params_from_cell(cell, 0)?;
                labels.push_str(&format!(
                    "{i},{file},{cell},{},{},{},{}\n",
                    params.shape.name(),
                    params.material.name(),
                    params.color_idx,
                    params.size_idx,
                ));
            }
            Task::GridSpawn => {
                let placements = occupancy_placements(&sample.label)?;
                let joined: Vec<String> = placements
                    .iter()
                    .map(|p| format!("{}:{}:{}", p.row, p.col, p.class_idx))
                    .collect();
                labels.push_str(&format!(
                    "{i},{file},{},{}\n",
                    placements.len(),
                    joined.join(";")
                ));
            }
        }
    }
    fs::write(out_dir.join("labels.csv"), labels)?;
    Ok(cfg.preview_count)
}
