//! Flat key-value experiment configuration.
//!
//! The on-disk format is one `key = value` pair per line, `#` comments,
//! and nothing nested. Parsing is strict: unknown keys, duplicate keys,
//! and keys that do not apply to the chosen task or method are all
//! rejected with the offending line number, so a config never silently
//! carries a dead setting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use advrand::adversary::{DaConfig, DrConfig, RewardSign, VadraConfig};
use advrand::render::{RenderSpace, Shape, Task};
use anyhow::{anyhow, bail, Context, Result};

/// Raw parse product: key -> (value, 1-based line number), order-stable.
#[derive(Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before,
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`, got `{line}`"))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                bail!("line {line_no}: empty key or value in `{line}`");
            }
            if let Some((_, first)) = entries.get(key) {
                bail!("line {line_no}: duplicate key `{key}` (first set on line {first})");
            }
            entries.insert(key.to_string(), (value.to_string(), line_no));
        }
        Ok(RawConfig { entries })
    }

    pub(crate) fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    /// Error out on anything left unclaimed.
    pub(crate) fn finish(self, context: &str) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            bail!("line {line}: unknown key `{key}` {context}");
        }
        Ok(())
    }
}

pub(crate) fn parse_typed<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line: usize,
    what: &str,
) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("line {line}: key `{key}`: `{value}` is not {what}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dr,
    Vadra,
    VadraDa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dr => "dr",
            Method::Vadra => "vadra",
            Method::VadraDa => "vadra_da",
        }
    }
}

/// Target-domain restriction for the single-shape task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetShape {
    Any,
    Only(Shape),
}

impl TargetShape {
    pub fn name(self) -> &'static str {
        match self {
            TargetShape::Any => "any",
            TargetShape::Only(Shape::Circle) => "circle",
            TargetShape::Only(Shape::Square) => "square",
            TargetShape::Only(Shape::Triangle) => "triangle",
        }
    }
}

/// Fully resolved experiment settings: every key has a value, either from
/// the file or from the documented default.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    pub out_dir: Option<PathBuf>,
    pub image_size: usize,
    pub pixel_noise: f64,
    // Single-shape task.
    pub kappa: f64,
    pub position_jitter: f64,
    pub target_shape: TargetShape,
    // Grid task.
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub classes: usize,
    pub cell_jitter: f64,
    // Learner.
    pub hidden: Vec<usize>,
    pub learner_lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    // Budgets.
    pub m: usize,
    pub m1: usize,
    pub m2: usize,
    // Policy.
    pub policy_lr: f64,
    pub baseline_decay: f64,
    pub entropy_bonus: f64,
    pub reward_sign: RewardSign,
    // Domain adaptation.
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub d_lr: f64,
    pub d_hidden: usize,
    pub pool_count: usize,
    // Target domain.
    pub target_count: usize,
    pub target_seed: u64,
    // Preview.
    pub preview_count: usize,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let (task_val, task_line) = raw
            .take("task")
            .ok_or_else(|| anyhow!("missing required key `task`"))?;
        let task = match task_val.as_str() {
            "shape_color" => Task::ShapeColor,
            "grid_spawn" => Task::GridSpawn,
            other => bail!(
                "line {task_line}: key `task`: `{other}` is not one of shape_color, grid_spawn"
            ),
        };
        let (method_val, method_line) = raw
            .take("method")
            .ok_or_else(|| anyhow!("missing required key `method`"))?;
        let method = match method_val.as_str() {
            "dr" => Method::Dr,
            "vadra" => Method::Vadra,
            "vadra_da" => Method::VadraDa,
            other => bail!(
                "line {method_line}: key `method`: `{other}` is not one of dr, vadra, vadra_da"
            ),
        };

        // Reject keys that do not apply to this task/method up front, so
        // the error names the reason rather than "unknown key".
        let task_a_keys = ["kappa", "position_jitter", "target_shape"];
        let task_b_keys = ["grid_rows", "grid_cols", "classes", "cell_jitter"];
        let dr_keys = ["m"];
        let policy_keys = [
            "m1",
            "m2",
            "policy_lr",
            "baseline_decay",
            "entropy_bonus",
            "reward_sign",
        ];
        let da_keys = ["w1", "w2", "w3", "w4", "d_lr", "d_hidden", "pool_count"];
        let reject = |raw: &mut RawConfig, keys: &[&str], why: &str| -> Result<()> {
            for key in keys {
                if let Some((_, line)) = raw.take(key) {
                    bail!("line {line}: key `{key}` does not apply {why}");
                }
            }
            Ok(())
        };
        match task {
            Task::ShapeColor => reject(&mut raw, &task_b_keys, "to task shape_color")?,
            Task::GridSpawn => reject(&mut raw, &task_a_keys, "to task grid_spawn")?,
        }
        match method {
            Method::Dr => {
                reject(&mut raw, &policy_keys, "to method dr")?;
                reject(&mut raw, &da_keys, "to method dr")?;
            }
            Method::Vadra => {
                reject(&mut raw, &dr_keys, "to method vadra")?;
                reject(&mut raw, &da_keys, "to method vadra")?;
            }
            Method::VadraDa => reject(&mut raw, &dr_keys, "to method vadra_da")?,
        }

        let mut get_u64 = |key: &str, default: u64| -> Result<u64> {
            match raw.take(key) {
                Some((v, line)) => parse_typed(key, &v, line, "an unsigned integer"),
                None => Ok(default),
            }
        };
        let seed = get_u64("seed", 0)?;
        let target_seed = get_u64("target_seed", seed)?;

        let mut get_usize = |key: &str, default: usize| -> Result<usize> {
            match raw.take(key) {
                Some((v, line)) => parse_typed(key, &v, line, "an unsigned integer"),
                None => Ok(default),
            }
        };
        let iterations = get_usize("iterations", 40)?;
        let image_size = get_usize(
            "image_size",
            match task {
                Task::ShapeColor => 32,
                Task::GridSpawn => 64,
            },
        )?;
        let grid_rows = get_usize("grid_rows", 4)?;
        let grid_cols = get_usize("grid_cols", 4)?;
        let classes = get_usize("classes", 2)?;
        let epochs = get_usize("epochs", 1)?;
        let batch_size = get_usize("batch_size", 16)?;
        let m = get_usize("m", 48)?;
        let m1 = get_usize("m1", 32)?;
        let m2 = get_usize("m2", 16)?;
        let d_hidden = get_usize("d_hidden", 64)?;
        let pool_count = get_usize("pool_count", 64)?;
        let target_count = get_usize(
            "target_count",
            match task {
                Task::ShapeColor => 120,
                Task::GridSpawn => 64,
            },
        )?;
        let preview_count = get_usize("preview_count", 12)?;

        let mut get_f64 = |key: &str, default: f64| -> Result<f64> {
            match raw.take(key) {
                Some((v, line)) => parse_typed(key, &v, line, "a real number"),
                None => Ok(default),
            }
        };
        let pixel_noise = get_f64("pixel_noise", 0.02)?;
        let kappa = get_f64("kappa", 0.06)?;
        let position_jitter = get_f64("position_jitter", 2.0)?;
        let cell_jitter = get_f64("cell_jitter", 0.25)?;
        let learner_lr = get_f64("learner_lr", 0.05)?;
        let lr_decay = get_f64("lr_decay", 0.0)?;
        let policy_lr = get_f64("policy_lr", 0.5)?;
        let baseline_decay = get_f64("baseline_decay", 0.9)?;
        let entropy_bonus = get_f64("entropy_bonus", 0.0)?;
        let w1 = get_f64("w1", 1.0)?;
        let w2 = get_f64("w2", 0.1)?;
        let w3 = get_f64("w3", 1.0)?;
        let w4 = get_f64("w4", 0.1)?;
        let d_lr = get_f64("d_lr", 0.1)?;

        let hidden = match raw.take("hidden") {
            Some((v, line)) => {
                let mut widths = Vec::new();
                for tok in v.split(',') {
                    widths.push(parse_typed::<usize>(
                        "hidden",
                        tok.trim(),
                        line,
                        "a comma-separated list of layer widths",
                    )?);
                }
                widths
            }
            None => match task {
                Task::ShapeColor => vec![128],
                Task::GridSpawn => vec![128, 128],
            },
        };

        let reward_sign = match raw.take("reward_sign") {
            Some((v, line)) => RewardSign::from_name(&v)
                .map_err(|e| anyhow!("line {line}: key `reward_sign`: {e}"))?,
            None => RewardSign::LossAsReward,
        };

        let target_shape = match raw.take("target_shape") {
            Some((v, line)) => match v.as_str() {
                "any" => TargetShape::Any,
                "circle" => TargetShape::Only(Shape::Circle),
                "square" => TargetShape::Only(Shape::Square),
                "triangle" => TargetShape::Only(Shape::Triangle),
                other => bail!(
                    "line {line}: key `target_shape`: `{other}` is not one of any, circle, square, triangle"
                ),
            },
            None => TargetShape::Only(Shape::Circle),
        };

        let out_dir = raw.take("out_dir").map(|(v, _)| PathBuf::from(v));

        raw.finish("(see README for the key table)")?;

        let cfg = ExperimentConfig {
            task,
            method,
            seed,
            iterations,
            out_dir,
            image_size,
            pixel_noise,
            kappa,
            position_jitter,
            target_shape,
            grid_rows,
            grid_cols,
            classes,
            cell_jitter,
            hidden,
            learner_lr,
            lr_decay,
            epochs,
            batch_size,
            m,
            m1,
            m2,
            policy_lr,
            baseline_decay,
            entropy_bonus,
            reward_sign,
            w1,
            w2,
            w3,
            w4,
            d_lr,
            d_hidden,
            pool_count,
            target_count,
            target_seed,
            preview_count,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            bail!("image_size {} is too small to draw into (minimum 8)", self.image_size);
        }
        if self.target_count == 0 {
            bail!("target_count must be at least 1");
        }
        if self.task == Task::GridSpawn && self.grid_rows * self.grid_cols < 2 {
            bail!("grid needs at least 2 cells for the minimum object count");
        }
        match self.method {
            Method::Dr => self.dr_config().validate()?,
            Method::Vadra => self.vadra_config().validate()?,
            Method::VadraDa => {
                self.da_config().validate()?;
                if self.pool_count == 0 {
                    bail!("pool_count must be at least 1 for method vadra_da");
                }
            }
        }
        Ok(())
    }

    /// Per-iteration render budget (the fairness quantity).
    pub fn budget(&self) -> usize {
        match self.method {
            Method::Dr => self.m,
            Method::Vadra | Method::VadraDa => self.m1 + self.m2,
        }
    }

    /// How the budget is spelled in this method's config keys, for
    /// mismatch diagnostics.
    pub fn budget_expr(&self) -> String {
        match self.method {
            Method::Dr => format!("m = {}", self.m),
            Method::Vadra | Method::VadraDa => {
                format!("m1 + m2 = {} + {} = {}", self.m1, self.m2, self.m1 + self.m2)
            }
        }
    }

    pub fn build_space(&self) -> RenderSpace<f64> {
        let mut space = match self.task {
            Task::ShapeColor => {
                let mut s = RenderSpace::<f64>::shape_color();
                s.kappa = self.kappa;
                s.position_jitter = self.position_jitter;
                s
            }
            Task::GridSpawn => {
                let mut s = RenderSpace::<f64>::grid_spawn();
                s.grid_rows = self.grid_rows;
                s.grid_cols = self.grid_cols;
                s.classes = self.classes;
                s.cell_jitter = self.cell_jitter;
                s
            }
        };
        space.height = self.image_size;
        space.width = self.image_size;
        space.pixel_noise = self.pixel_noise;
        space
    }

    pub fn dr_config(&self) -> DrConfig<f64> {
        DrConfig {
            m: self.m,
            iterations: self.iterations,
            learner_lr: self.learner_lr,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn vadra_config(&self) -> VadraConfig<f64> {
        VadraConfig {
            m1: self.m1,
            m2: self.m2,
            iterations: self.iterations,
            learner_lr: self.learner_lr,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            policy_lr: self.policy_lr,
            entropy_bonus: self.entropy_bonus,
            reward_sign: self.reward_sign,
            seed: self.seed,
        }
    }

    pub fn da_config(&self) -> DaConfig<f64> {
        DaConfig {
            base: self.vadra_config(),
            w1: self.w1,
            w2: self.w2,
            w3: self.w3,
            w4: self.w4,
            d_lr: self.d_lr,
            d_hidden: self.d_hidden,
        }
    }

    /// The effective configuration as sorted `key = value` lines: every
    /// applicable key with its resolved value, defaults included. Two
    /// configs that resolve identically echo identically, so the manifest
    /// hash identifies the run semantics rather than the file text.
    pub fn canonical_echo(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("task", match self.task {
                Task::ShapeColor => "shape_color".into(),
                Task::GridSpawn => "grid_spawn".into(),
            }),
            ("method", self.method.name().into()),
            ("seed", self.seed.to_string()),
            ("iterations", self.iterations.to_string()),
            ("image_size", self.image_size.to_string()),
            ("pixel_noise", self.pixel_noise.to_string()),
            ("hidden", self.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")),
            ("learner_lr", self.learner_lr.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("target_count", self.target_count.to_string()),
            ("target_seed", self.target_seed.to_string()),
            ("preview_count", self.preview_count.to_string()),
        ];
        match self.task {
            Task::ShapeColor => {
                pairs.push(("kappa", self.kappa.to_string()));
                pairs.push(("position_jitter", self.position_jitter.to_string()));
                pairs.push(("target_shape", self.target_shape.name().into()));
            }
            Task::GridSpawn => {
                pairs.push(("grid_rows", self.grid_rows.to_string()));
                pairs.push(("grid_cols", self.grid_cols.to_string()));
                pairs.push(("classes", self.classes.to_string()));
                pairs.push(("cell_jitter", self.cell_jitter.to_string()));
            }
        }
        match self.method {
            Method::Dr => pairs.push(("m", self.m.to_string())),
            Method::Vadra | Method::VadraDa => {
                pairs.push(("m1", self.m1.to_string()));
                pairs.push(("m2", self.m2.to_string()));
                pairs.push(("policy_lr", self.policy_lr.to_string()));
                pairs.push(("baseline_decay", self.baseline_decay.to_string()));
                pairs.push(("entropy_bonus", self.entropy_bonus.to_string()));
                pairs.push(("reward_sign", self.reward_sign.name().into()));
            }
        }
        if self.method == Method::VadraDa {
            for (k, v) in [
                ("w1", self.w1),
                ("w2", self.w2),
                ("w3", self.w3),
                ("w4", self.w4),
                ("d_lr", self.d_lr),
            ] {
                pairs.push((k, v.to_string()));
            }
            pairs.push(("d_hidden", self.d_hidden.to_string()));
            pairs.push(("pool_count", self.pool_count.to_string()));
        }
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}

/// FNV-1a 64-bit, used to fingerprint the canonical config echo.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
