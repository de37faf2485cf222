//! Procedural simulator: a deterministic map from discrete rendering
//! parameters (plus a nuisance noise seed) to a labeled image.
//!
//! Two tasks are supported:
//!
//! * **ShapeColor** — one object per image, factored over
//!   shape x material x color x size; the label is the color index.
//!   With the default 3 x 2 x 6 x 7 factorization the parameter space has
//!   252 cells.
//! * **GridSpawn** — a ground-plane grid of spawn cells; a scene places
//!   2..=12 class-tagged objects into distinct cells and the label is the
//!   cell occupancy grid. Object footprint shrinks linearly with row index
//!   (rows further from the camera render smaller).
//!
//! Rendering is a pure function of `(params, space)`: every nuisance draw
//! (position jitter, brightness, per-pixel noise, within-cell offsets)
//! comes from a ChaCha stream seeded by `noise_seed` alone. Equal inputs
//! give bit-identical images, so batches may be rendered in any order or
//! from any number of workers once per-sample seeds are derived.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{real, Real};
use crate::tensor::Tensor;

pub const SHAPE_COUNT: usize = 3;
pub const MATERIAL_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Shape::Circle),
            1 => Ok(Shape::Square),
            2 => Ok(Shape::Triangle),
            _ => Err(Error::InvalidParameter(format!("shape index {i} out of range"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Shape::Circle => 0,
            Shape::Square => 1,
            Shape::Triangle => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Flat,
    Shaded,
}

impl Material {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Material::Flat),
            1 => Ok(Material::Shaded),
            _ => Err(Error::InvalidParameter(format!(
                "material index {i} out of range"
            ))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Material::Flat => 0,
            Material::Shaded => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Material::Flat => "flat",
            Material::Shaded => "shaded",
        }
    }
}

/// One point in the ShapeColor parameter space plus its nuisance seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeParams {
    pub shape: Shape,
    pub material: Material,
    pub color_idx: usize,
    pub size_idx: usize,
    pub noise_seed: u64,
}

/// A single object placement in a GridSpawn scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
    pub class_idx: usize,
}

/// A GridSpawn scene: distinct-cell placements plus a nuisance seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSceneParams {
    pub placements: Vec<Placement>,
    pub noise_seed: u64,
}

pub const MIN_PLACEMENTS: usize = 2;
pub const MAX_PLACEMENTS: usize = 12;

/// Occupancy state of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Empty,
    Class(usize),
}

/// Task label: a class index (ShapeColor) or an occupancy grid (GridSpawn).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    Grid {
        rows: usize,
        cols: usize,
        cells: Vec<CellState>,
    },
}

impl Label {
    pub fn as_class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            _ => None,
        }
    }
}

/// A rendered sample: H x W x 3 image with channels in [0, 1], plus label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<S> {
    pub image: Tensor<S>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ShapeColor,
    GridSpawn,
}

/// The full rendering configuration: image and grid geometry, palette and
/// size tables, the hardness coefficient, and nuisance magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpace<S> {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub classes: usize,
    pub palette: Vec<[S; 3]>,
    /// Object radii (pixels), indexed by `size_idx`.
    pub sizes: Vec<S>,
    /// Hardness knob: brightness jitter amplitude is `kappa * size_idx`.
    pub kappa: S,
    /// Object center jitter in pixels (ShapeColor).
    pub position_jitter: S,
    /// Per-pixel additive noise amplitude.
    pub pixel_noise: S,
    /// Within-cell offset as a fraction of the cell extent (GridSpawn).
    pub cell_jitter: S,
    pub background: [S; 3],
}

impl<S: Real> RenderSpace<S> {
    /// Default ShapeColor space: 32x32 images over the 252-cell factorization.
    pub fn shape_color() -> Self {
        RenderSpace {
            task: Task::ShapeColor,
            height: 32,
            width: 32,
            grid_rows: 1,
            grid_cols: 1,
            classes: 1,
            palette: default_palette(),
            sizes: vec![
                real(2.5),
                real(4.0),
                real(5.5),
                real(7.0),
                real(8.5),
                real(10.0),
                real(11.5),
            ],
            kappa: real(0.06),
            position_jitter: real(2.0),
            pixel_noise: real(0.02),
            cell_jitter: real(0.0),
            background: [real(0.10), real(0.10), real(0.10)],
        }
    }

    /// Default GridSpawn space: 64x64 images over a 4x4 grid with 2 classes.
    pub fn grid_spawn() -> Self {
        RenderSpace {
            task: Task::GridSpawn,
            height: 64,
            width: 64,
            grid_rows: 4,
            grid_cols: 4,
            classes: 2,
            palette: default_palette(),
            sizes: Vec::new(),
            kappa: real(0.0),
            position_jitter: real(0.0),
            pixel_noise: real(0.02),
            cell_jitter: real(0.25),
            background: [real(0.10), real(0.10), real(0.10)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidParameter("zero image dimension".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::InvalidParameter("empty palette".into()));
        }
        if self.kappa < S::zero() || self.pixel_noise < S::zero() || self.position_jitter < S::zero()
        {
            return Err(Error::InvalidParameter(
                "noise magnitudes must be non-negative".into(),
            ));
        }
        match self.task {
            Task::ShapeColor => {
                if self.sizes.is_empty() {
                    return Err(Error::InvalidParameter("empty size table".into()));
                }
            }
            Task::GridSpawn => {
                if self.grid_rows == 0 || self.grid_cols == 0 || self.classes == 0 {
                    return Err(Error::InvalidParameter("zero grid dimension".into()));
                }
                if self.grid_rows * self.grid_cols < MIN_PLACEMENTS {
                    return Err(Error::InvalidParameter(
                        "grid too small for minimum placement count".into(),
                    ));
                }
                if self.classes > self.palette.len() {
                    return Err(Error::InvalidParameter(
                        "more classes than palette entries".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sizes of the discrete factors, in lexicographic (slowest-first) order.
    pub fn factor_dims(&self) -> Vec<usize> {
        match self.task {
            Task::ShapeColor => vec![
                SHAPE_COUNT,
                MATERIAL_COUNT,
                self.palette.len(),
                self.sizes.len(),
            ],
            Task::GridSpawn => vec![self.grid_rows, self.grid_cols, self.classes],
        }
    }

    /// Number of cells in the discrete parameter space (single placement
    /// for GridSpawn).
    pub fn cardinality(&self) -> usize {
        self.factor_dims().iter().product()
    }

    /// Flat cell index -> ShapeColor parameters.
    pub fn shape_params_from_cell(&self, cell: usize, noise_seed: u64) -> Result<ShapeParams> {
        if self.task != Task::ShapeColor {
            return Err(Error::InvalidParameter(
                "cell decode for wrong task".into(),
            ));
        }
        if cell >= self.cardinality() {
            return Err(Error::InvalidParameter(format!(
                "cell {cell} out of range (cardinality {})",
                self.cardinality()
            )));
        }
        let sizes = self.sizes.len();
        let colors = self.palette.len();
        let size_idx = cell % sizes;
        let rest = cell / sizes;
        let color_idx = rest % colors;
        let rest = rest / colors;
        let material = Material::from_index(rest % MATERIAL_COUNT)?;
        let shape = Shape::from_index(rest / MATERIAL_COUNT)?;
        Ok(ShapeParams {
            shape,
            material,
            color_idx,
            size_idx,
            noise_seed,
        })
    }

    /// ShapeColor parameters -> flat cell index.
    pub fn cell_from_shape_params(&self, p: &ShapeParams) -> usize {
        ((p.shape.index() * MATERIAL_COUNT + p.material.index()) * self.palette.len()
            + p.color_idx)
            * self.sizes.len()
            + p.size_idx
    }

    /// Flat cell index -> (row, col, class) placement.
    pub fn placement_from_cell(&self, cell: usize) -> Result<Placement> {
        if self.task != Task::GridSpawn {
            return Err(Error::InvalidParameter(
                "cell decode for wrong task".into(),
            ));
        }
        if cell >= self.cardinality() {
            return Err(Error::InvalidParameter(format!(
                "cell {cell} out of range (cardinality {})",
                self.cardinality()
            )));
        }
        let class_idx = cell % self.classes;
        let rest = cell / self.classes;
        let col = rest % self.grid_cols;
        let row = rest / self.grid_cols;
        Ok(Placement {
            row,
            col,
            class_idx,
        })
    }

    /// Placement -> flat cell index.
    pub fn cell_from_placement(&self, p: &Placement) -> usize {
        (p.row * self.grid_cols + p.col) * self.classes + p.class_idx
    }
}

fn default_palette<S: Real>() -> Vec<[S; 3]> {
    vec![
        [real(0.90), real(0.10), real(0.10)], // red
        [real(0.90), real(0.90), real(0.10)], // yellow
        [real(0.10), real(0.80), real(0.15)], // green
        [real(0.10), real(0.80), real(0.80)], // cyan
        [real(0.15), real(0.20), real(0.90)], // blue
        [real(0.85), real(0.10), real(0.85)], // magenta
    ]
}

/// Lexicographic enumeration of the full discrete factor product.
///
/// For ShapeColor the tuples are `[shape, material, color, size]`; for
/// GridSpawn they are single-placement `[row, col, class]` queries. The
/// first element is the all-zero tuple and the sequence length equals
/// `space.cardinality()`.
pub fn enumerate_theta<S: Real>(space: &RenderSpace<S>) -> Vec<Vec<usize>> {
    let dims = space.factor_dims();
    let card: usize = dims.iter().product();
    let mut out = Vec::with_capacity(card);
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..card {
        out.push(idx.clone());
        for pos in (0..dims.len()).rev() {
            idx[pos] += 1;
            if idx[pos] < dims[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

#[inline]
fn uniform_sym(rng: &mut impl Rng, amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        (2.0 * rng.gen::<f64>() - 1.0) * amplitude
    } else {
        0.0
    }
}

struct Raster<S> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Real> Raster<S> {
    fn filled(height: usize, width: usize, color: [S; 3]) -> Self {
        let mut data = vec![S::zero(); height * width * 3];
        for px in data.chunks_exact_mut(3) {
            px[0] = color[0];
            px[1] = color[1];
            px[2] = color[2];
        }
        Raster {
            height,
            width,
            data,
        }
    }

    #[inline]
    fn put(&mut self, y: usize, x: usize, color: [S; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base] = color[0];
        self.data[base + 1] = color[1];
        self.data[base + 2] = color[2];
    }

    /// Paint one shape footprint. `shade` scales the fill; `Shaded` material
    /// additionally darkens toward the silhouette edge.
    fn draw_shape(
        &mut self,
        shape: Shape,
        material: Material,
        cx: f64,
        cy: f64,
        radius: f64,
        fill: [S; 3],
        shade: f64,
    ) {
        let r = radius.max(0.5);
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(self.height as f64)) as usize;
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(self.width as f64)) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let px = x as f64 + 0.5 - cx;
                let py = y as f64 + 0.5 - cy;
                if !cover(shape, px, py, r) {
                    continue;
                }
                let dist = (px * px + py * py).sqrt() / r;
                let factor = match material {
                    Material::Flat => shade,
                    Material::Shaded => shade * (1.0 - 0.45 * dist.min(1.0)),
                };
                let f: S = real(factor);
                self.put(y, x, [fill[0] * f, fill[1] * f, fill[2] * f]);
            }
        }
    }
}

#[inline]
fn cover(shape: Shape, px: f64, py: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => px * px + py * py <= r * r,
        Shape::Square => px.abs() <= r && py.abs() <= r,
        Shape::Triangle => {
            // Upward triangle inscribed in the radius-r circle.
            let h = 0.866_025_403_784_438_6 * r; // sin 60
            let (ax, ay) = (0.0, -r);
            let (bx, by) = (-h, 0.5 * r);
            let (cx2, cy2) = (h, 0.5 * r);
            let sign = |x1: f64, y1: f64, x2: f64, y2: f64| -> f64 {
                (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2)
            };
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx2, cy2);
            let d3 = sign(cx2, cy2, ax, ay);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(has_neg && has_pos)
        }
    }
}

fn apply_global_noise<S: Real>(
    raster: &mut Raster<S>,
    rng: &mut impl Rng,
    brightness: f64,
    pixel_noise: f64,
) {
    if brightness != 0.0 {
        let b: S = real(brightness);
        for v in raster.data.iter_mut() {
            *v = *v + b;
        }
    }
    if pixel_noise > 0.0 {
        for v in raster.data.iter_mut() {
            let eps: S = real((2.0 * rng.gen::<f64>() - 1.0) * pixel_noise);
            *v = *v + eps;
        }
    }
    let one = S::one();
    for v in raster.data.iter_mut() {
        *v = v.max(S::zero()).min(one);
    }
}

/// Render one ShapeColor sample. Deterministic in `(p, space)`; the label is
/// the color index. Brightness jitter amplitude is `kappa * size_idx`, the
/// hardness knob that makes larger objects harder to color-classify.
pub fn render_shape<S: Real>(p: &ShapeParams, space: &RenderSpace<S>) -> Result<LabeledSample<S>> {
    if space.task != Task::ShapeColor {
        return Err(Error::InvalidParameter(
            "render_shape requires a ShapeColor space".into(),
        ));
    }
    if p.color_idx >= space.palette.len() {
        return Err(Error::InvalidParameter(format!(
            "color index {} out of range [0, {})",
            p.color_idx,
            space.palette.len()
        )));
    }
    if p.size_idx >= space.sizes.len() {
        return Err(Error::InvalidParameter(format!(
            "size index {} out of range [0, {})",
            p.size_idx,
            space.sizes.len()
        )));
    }

    let mut rng = rng_from(p.noise_seed);
    // Draw order is part of the determinism contract: jitter x, jitter y,
    // brightness, then per-pixel noise in row-major order.
    let jitter = space.position_jitter.to_f64().unwrap_or(0.0);
    let jx = uniform_sym(&mut rng, jitter);
    let jy = uniform_sym(&mut rng, jitter);
    let amp = space.kappa.to_f64().unwrap_or(0.0) * p.size_idx as f64;
    let brightness = uniform_sym(&mut rng, amp);

    let mut raster = Raster::filled(space.height, space.width, space.background);
    let cx = space.width as f64 / 2.0 + jx;
    let cy = space.height as f64 / 2.0 + jy;
    let radius = space.sizes[p.size_idx].to_f64().unwrap_or(1.0);
    raster.draw_shape(
        p.shape,
        p.material,
        cx,
        cy,
        radius,
        space.palette[p.color_idx],
        1.0,
    );
    apply_global_noise(
        &mut raster,
        &mut rng,
        brightness,
        space.pixel_noise.to_f64().unwrap_or(0.0),
    );

    Ok(LabeledSample {
        image: Tensor::new(vec![space.height, space.width, 3], raster.data)?,
        label: Label::Class(p.color_idx),
    })
}

/// Footprint scale for a grid row: shrinks linearly from 1.0 at row 0 to 0.5
/// at the last row (perspective proxy).
fn row_scale(row: usize, rows: usize) -> f64 {
    if rows <= 1 {
        1.0
    } else {
        1.0 - 0.5 * row as f64 / (rows - 1) as f64
    }
}

fn class_shape(class_idx: usize) -> Shape {
    match class_idx % 3 {
        0 => Shape::Square,
        1 => Shape::Circle,
        _ => Shape::Triangle,
    }
}

/// Render one GridSpawn scene. The label is the exact occupancy grid of the
/// placements; within-cell offset and per-object shade come from the noise
/// seed. Placements are painted far-to-near (descending row) so nearer rows
/// occlude farther ones.
pub fn render_grid_scene<S: Real>(
    p: &GridSceneParams,
    space: &RenderSpace<S>,
) -> Result<LabeledSample<S>> {
    if space.task != Task::GridSpawn {
        return Err(Error::InvalidParameter(
            "render_grid_scene requires a GridSpawn space".into(),
        ));
    }
    let n = p.placements.len();
    if !(MIN_PLACEMENTS..=MAX_PLACEMENTS).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "placement count {n} outside [{MIN_PLACEMENTS}, {MAX_PLACEMENTS}]"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for pl in &p.placements {
        if pl.row >= space.grid_rows || pl.col >= space.grid_cols {
            return Err(Error::InvalidParameter(format!(
                "cell ({}, {}) outside {}x{} grid",
                pl.row, pl.col, space.grid_rows, space.grid_cols
            )));
        }
        if pl.class_idx >= space.classes {
            return Err(Error::InvalidParameter(format!(
                "class {} out of range [0, {})",
                pl.class_idx, space.classes
            )));
        }
        if !seen.insert((pl.row, pl.col)) {
            return Err(Error::InvalidParameter(format!(
                "colliding placements in cell ({}, {})",
                pl.row, pl.col
            )));
        }
    }

    // Far-to-near paint order; also makes the image a function of the
    // placement set rather than its ordering.
    let mut order: Vec<Placement> = p.placements.clone();
    order.sort_by(|a, b| b.row.cmp(&a.row).then(a.col.cmp(&b.col)).then(a.class_idx.cmp(&b.class_idx)));

    let cell_w = space.width as f64 / space.grid_cols as f64;
    let cell_h = space.height as f64 / space.grid_rows as f64;
    let base_radius = 0.38 * cell_w.min(cell_h);
    let jitter_frac = space.cell_jitter.to_f64().unwrap_or(0.0);

    let mut rng = rng_from(p.noise_seed);
    let mut raster = Raster::filled(space.height, space.width, space.background);
    for pl in &order {
        let ox = uniform_sym(&mut rng, jitter_frac * cell_w);
        let oy = uniform_sym(&mut rng, jitter_frac * cell_h);
        let shade = 0.85 + 0.30 * rng.gen::<f64>();
        let cx = (pl.col as f64 + 0.5) * cell_w + ox;
        let cy = (pl.row as f64 + 0.5) * cell_h + oy;
        let radius = base_radius * row_scale(pl.row, space.grid_rows);
        raster.draw_shape(
            class_shape(pl.class_idx),
            Material::Flat,
            cx,
            cy,
            radius,
            space.palette[pl.class_idx % space.palette.len()],
            shade,
        );
    }
    apply_global_noise(
        &mut raster,
        &mut rng,
        0.0,
        space.pixel_noise.to_f64().unwrap_or(0.0),
    );

    let mut cells = vec![CellState::Empty; space.grid_rows * space.grid_cols];
    for pl in &p.placements {
        cells[pl.row * space.grid_cols + pl.col] = CellState::Class(pl.class_idx);
    }

    Ok(LabeledSample {
        image: Tensor::new(vec![space.height, space.width, 3], raster.data)?,
        label: Label::Grid {
            rows: space.grid_rows,
            cols: space.grid_cols,
            cells,
        },
    })
}

/// Decode an occupancy label back into its placement set (sorted).
pub fn occupancy_placements(label: &Label) -> Result<Vec<Placement>> {
    match label {
        Label::Grid { cols, cells, .. } => {
            let mut out = Vec::new();
            for (i, cell) in cells.iter().enumerate() {
                if let CellState::Class(c) = cell {
                    out.push(Placement {
                        row: i / cols,
                        col: i % cols,
                        class_idx: *c,
                    });
                }
            }
            Ok(out)
        }
        Label::Class(_) => Err(Error::InvalidInput(
            "class label has no occupancy grid".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise_space() -> RenderSpace<f64> {
        let mut s = RenderSpace::<f64>::shape_color();
        s.kappa = 0.0;
        s.position_jitter = 0.0;
        s.pixel_noise = 0.0;
        s
    }

    #[test]
    fn cardinality_is_252_for_shape_color() {
        let s = RenderSpace::<f64>::shape_color();
        assert_eq!(s.cardinality(), 252);
        assert_eq!(enumerate_theta(&s).len(), 252);
    }

    #[test]
    fn enumeration_starts_at_zero_tuple() {
        let s = RenderSpace::<f64>::shape_color();
        let theta = enumerate_theta(&s);
        assert_eq!(theta[0], vec![0, 0, 0, 0]);
        assert_eq!(theta[1], vec![0, 0, 0, 1]);
        assert_eq!(theta.last().unwrap(), &vec![2, 1, 5, 6]);
    }

    #[test]
    fn grid_single_placement_enumeration() {
        let s = RenderSpace::<f64>::grid_spawn();
        assert_eq!(s.cardinality(), 32);
        let theta = enumerate_theta(&s);
        assert_eq!(theta.len(), 32);
        assert_eq!(theta[0], vec![0, 0, 0]);
    }

    #[test]
    fn cell_codec_round_trip() {
        let s = RenderSpace::<f64>::shape_color();
        for cell in 0..s.cardinality() {
            let p = s.shape_params_from_cell(cell, 0).unwrap();
            assert_eq!(s.cell_from_shape_params(&p), cell);
        }
        let g = RenderSpace::<f64>::grid_spawn();
        for cell in 0..g.cardinality() {
            let p = g.placement_from_cell(cell).unwrap();
            assert_eq!(g.cell_from_placement(&p), cell);
        }
    }

    #[test]
    fn zero_noise_dominant_hue_matches_palette() {
        let space = zero_noise_space();
        let p = ShapeParams {
            shape: Shape::Circle,
            material: Material::Flat,
            color_idx: 2,
            size_idx: 3,
            noise_seed: 17,
        };
        let sample = render_shape(&p, &space).unwrap();
        assert_eq!(sample.label, Label::Class(2));
        // Foreground pixels are exactly the palette color at zero noise.
        let bg = space.background;
        let mut fg = [0.0f64; 3];
        let mut count = 0usize;
        for px in sample.image.data().chunks_exact(3) {
            if px != bg {
                fg[0] += px[0];
                fg[1] += px[1];
                fg[2] += px[2];
                count += 1;
            }
        }
        assert!(count > 0);
        let mean = [fg[0] / count as f64, fg[1] / count as f64, fg[2] / count as f64];
        for (a, b) in mean.iter().zip(space.palette[2].iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_renders_bit_identical() {
        let space = RenderSpace::<f64>::shape_color();
        let p = ShapeParams {
            shape: Shape::Triangle,
            material: Material::Shaded,
            color_idx: 5,
            size_idx: 6,
            noise_seed: 99,
        };
        let a = render_shape(&p, &space).unwrap();
        let b = render_shape(&p, &space).unwrap();
        let bits_a: Vec<u64> = a.image.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.image.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn pixel_range_holds_under_heavy_noise() {
        let mut space = RenderSpace::<f64>::shape_color();
        space.kappa = 0.5;
        space.pixel_noise = 0.3;
        for seed in 0..20 {
            let p = ShapeParams {
                shape: Shape::Square,
                material: Material::Flat,
                color_idx: 1,
                size_idx: 6,
                noise_seed: seed,
            };
            let sample = render_shape(&p, &space).unwrap();
            assert!(sample
                .image
                .data()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let space = RenderSpace::<f64>::shape_color();
        let p = ShapeParams {
            shape: Shape::Circle,
            material: Material::Flat,
            color_idx: 6,
            size_idx: 0,
            noise_seed: 0,
        };
        assert!(matches!(
            render_shape(&p, &space),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn grid_label_matches_placements() {
        let space = RenderSpace::<f64>::grid_spawn();
        let p = GridSceneParams {
            placements: vec![
                Placement { row: 1, col: 2, class_idx: 0 },
                Placement { row: 3, col: 3, class_idx: 1 },
            ],
            noise_seed: 3,
        };
        let sample = render_grid_scene(&p, &space).unwrap();
        let mut decoded = occupancy_placements(&sample.label).unwrap();
        decoded.sort();
        let mut expect = p.placements.clone();
        expect.sort();
        assert_eq!(decoded, expect);
    }

    #[test]
    fn footprint_shrinks_with_row() {
        let mut space = RenderSpace::<f64>::grid_spawn();
        space.cell_jitter = 0.0;
        space.pixel_noise = 0.0;
        let p = GridSceneParams {
            placements: vec![
                Placement { row: 0, col: 1, class_idx: 0 },
                Placement { row: 3, col: 1, class_idx: 0 },
            ],
            noise_seed: 5,
        };
        let sample = render_grid_scene(&p, &space).unwrap();
        let bg = space.background;
        let count_region = |rows: std::ops::Range<usize>| -> usize {
            let mut n = 0;
            for y in rows {
                for x in 0..space.width {
                    let base = (y * space.width + x) * 3;
                    let px = &sample.image.data()[base..base + 3];
                    if px != bg {
                        n += 1;
                    }
                }
            }
            n
        };
        let near = count_region(0..space.height / 2);
        let far = count_region(space.height / 2..space.height);
        assert!(far < near, "far footprint {far} should be smaller than near {near}");
    }

    #[test]
    fn placement_count_bounds_enforced() {
        let space = RenderSpace::<f64>::grid_spawn();
        let mk = |n: usize| GridSceneParams {
            placements: (0..n)
                .map(|i| Placement {
                    row: i / space.grid_cols,
                    col: i % space.grid_cols,
                    class_idx: 0,
                })
                .collect(),
            noise_seed: 0,
        };
        assert!(render_grid_scene(&mk(1), &space).is_err());
        assert!(render_grid_scene(&mk(13), &space).is_err());
        assert!(render_grid_scene(&mk(12), &space).is_ok());
    }

    #[test]
    fn colliding_placements_rejected() {
        let space = RenderSpace::<f64>::grid_spawn();
        let p = GridSceneParams {
            placements: vec![
                Placement { row: 1, col: 1, class_idx: 0 },
                Placement { row: 1, col: 1, class_idx: 1 },
            ],
            noise_seed: 0,
        };
        assert!(matches!(
            render_grid_scene(&p, &space),
            Err(Error::InvalidParameter(_))
        ));
    }
}
