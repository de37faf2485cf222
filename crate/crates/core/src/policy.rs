//! Softmax sampling policy over the discrete rendering-parameter cells, with
//! a score-function (REINFORCE) gradient estimator and an EMA reward
//! baseline.
//!
//! The policy is parameterized by unconstrained per-cell logits; probability
//! mass comes from a max-shifted softmax, so any finite logit vector is
//! valid and no renormalization drift can occur. Updates follow the
//! estimator
//!
//! ```text
//! g = (1/M) * sum_i (r_i - b) * grad log pi(theta_i)
//! ```
//!
//! with `grad log pi(c) = onehot(c) - p` per drawn cell; draws that contain
//! several cells (grid scenes) contribute the sum over their cells. The
//! baseline `b` is an exponential moving average of past batch-mean rewards
//! and is read *before* the update that consumes the current batch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, real_of_usize, Real};

/// One policy draw: the flat cell indices it selected (one for single-object
/// tasks, several for grid scenes) and its total log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaDraw<S> {
    pub cells: Vec<usize>,
    pub log_prob: S,
}

/// Attempts of per-placement rejection sampling before falling back to a
/// uniform choice among still-free cells. Keeps scene sampling total even
/// when the distribution has collapsed onto few cells.
const SCENE_REJECTION_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState<S> {
    logits: Vec<S>,
    baseline: S,
    baseline_decay: S,
    steps: u64,
}

impl<S: Real> PolicyState<S> {
    /// Uniform policy over `cells` cells (zero logits, zero baseline).
    pub fn uniform(cells: usize, baseline_decay: S) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("policy needs at least one cell".into()));
        }
        if !(baseline_decay >= S::zero() && baseline_decay <= S::one()) {
            return Err(Error::InvalidParameter(format!(
                "baseline decay {baseline_decay} outside [0, 1]"
            )));
        }
        Ok(PolicyState {
            logits: vec![S::zero(); cells],
            baseline: S::zero(),
            baseline_decay,
            steps: 0,
        })
    }

    pub fn cells(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[S] {
        &self.logits
    }

    pub fn baseline(&self) -> S {
        self.baseline
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn probs(&self) -> Vec<S> {
        crate::learner::softmax(&self.logits)
    }

    fn log_probs(&self) -> Vec<S> {
        let max = self
            .logits
            .iter()
            .cloned()
            .fold(self.logits[0], |a, b| a.max(b));
        let mut sum = S::zero();
        for &z in &self.logits {
            sum += (z - max).exp();
        }
        let log_z = max + sum.ln();
        self.logits.iter().map(|&z| z - log_z).collect()
    }

    /// Draw one cell index by inverse-CDF over the softmax probabilities.
    fn draw_cell(&self, probs: &[S], rng: &mut impl Rng) -> usize {
        let u: S = real(rng.gen::<f64>());
        let mut acc = S::zero();
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1 // guard against accumulated rounding at u ~ 1
    }

    /// `m` independent single-cell draws.
    pub fn sample(&self, rng: &mut impl Rng, m: usize) -> Vec<ThetaDraw<S>> {
        let probs = self.probs();
        let log_p = self.log_probs();
        (0..m)
            .map(|_| {
                let c = self.draw_cell(&probs, rng);
                ThetaDraw {
                    cells: vec![c],
                    log_prob: log_p[c],
                }
            })
            .collect()
    }

    /// Draw a grid scene: `n` placements in distinct (row, col) cells.
    ///
    /// Each placement is drawn from the policy and re-drawn if its grid cell
    /// is already occupied; after a bounded number of rejections the
    /// placement falls back to a uniform choice among free cells, so a
    /// collapsed policy cannot stall sampling. The log-probability records
    /// the policy's probability of every accepted cell.
    pub fn sample_scene(
        &self,
        rng: &mut impl Rng,
        rows: usize,
        cols: usize,
        n: usize,
    ) -> Result<ThetaDraw<S>> {
        let cell_count = self.logits.len();
        if rows * cols == 0 || cell_count % (rows * cols) != 0 {
            return Err(Error::InvalidParameter(format!(
                "{cell_count} policy cells do not tile a {rows}x{cols} grid"
            )));
        }
        if n > rows * cols {
            return Err(Error::InvalidParameter(format!(
                "{n} placements do not fit a {rows}x{cols} grid"
            )));
        }
        let classes = cell_count / (rows * cols);
        let probs = self.probs();
        let log_p = self.log_probs();
        let mut occupied = vec![false; rows * cols];
        let mut cells = Vec::with_capacity(n);
        let mut log_prob = S::zero();
        for _ in 0..n {
            let mut chosen = None;
            for _ in 0..SCENE_REJECTION_ATTEMPTS {
                let c = self.draw_cell(&probs, rng);
                if !occupied[c / classes] {
                    chosen = Some(c);
                    break;
                }
            }
            let c = match chosen {
                Some(c) => c,
                None => {
                    // Uniform over free (cell, class) pairs.
                    let free: Vec<usize> = (0..cell_count)
                        .filter(|c| !occupied[c / classes])
                        .collect();
                    free[rng.gen_range(0..free.len())]
                }
            };
            occupied[c / classes] = true;
            log_prob += log_p[c];
            cells.push(c);
        }
        Ok(ThetaDraw { cells, log_prob })
    }

    /// REINFORCE gradient of expected reward with respect to the logits,
    /// using the current baseline. `draws` and `rewards` must pair up.
    pub fn reinforce_grad(&self, draws: &[ThetaDraw<S>], rewards: &[S]) -> Result<Vec<S>> {
        if draws.len() != rewards.len() {
            return Err(Error::InvalidInput(format!(
                "{} draws but {} rewards",
                draws.len(),
                rewards.len()
            )));
        }
        if draws.is_empty() {
            return Err(Error::InvalidInput("empty reward batch".into()));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("non-finite reward {r}")));
        }
        let probs = self.probs();
        let mut grad = vec![S::zero(); self.logits.len()];
        let inv_m: S = S::one() / real_of_usize(draws.len());
        for (draw, &r) in draws.iter().zip(rewards.iter()) {
            let advantage = (r - self.baseline) * inv_m;
            for &c in &draw.cells {
                if c >= grad.len() {
                    return Err(Error::InvalidInput(format!("draw cell {c} out of range")));
                }
                grad[c] += advantage;
            }
            // The -p term appears once per drawn cell.
            let count: S = real_of_usize(draw.cells.len());
            for (g, &p) in grad.iter_mut().zip(probs.iter()) {
                *g -= advantage * count * p;
            }
        }
        Ok(grad)
    }

    /// Gradient of the policy entropy with respect to the logits:
    /// `dH/dz_k = -p_k (log p_k + H)`.
    pub fn entropy_grad(&self) -> Vec<S> {
        let probs = self.probs();
        let h = self.entropy();
        probs
            .iter()
            .map(|&p| {
                if p > S::zero() {
                    -p * (p.ln() + h)
                } else {
                    S::zero()
                }
            })
            .collect()
    }

    /// Gradient-ascent step on the logits.
    pub fn step(&mut self, grad: &[S], lr: S) -> Result<()> {
        if grad.len() != self.logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries for {} cells",
                grad.len(),
                self.logits.len()
            )));
        }
        if !(lr > S::zero()) || !lr.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {lr} must be positive")));
        }
        if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("non-finite policy gradient {g}")));
        }
        for (z, g) in self.logits.iter_mut().zip(grad.iter()) {
            *z += lr * *g;
        }
        self.steps += 1;
        Ok(())
    }

    /// Fold a reward batch into the EMA baseline:
    /// `b <- decay * b + (1 - decay) * mean(rewards)`.
    pub fn update_baseline(&mut self, rewards: &[S]) -> Result<()> {
        if rewards.is_empty() {
            return Err(Error::InvalidInput("empty reward batch".into()));
        }
        let mut mean = S::zero();
        for &r in rewards {
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("non-finite reward {r}")));
            }
            mean += r;
        }
        mean /= real_of_usize(rewards.len());
        self.baseline =
            self.baseline_decay * self.baseline + (S::one() - self.baseline_decay) * mean;
        Ok(())
    }

    /// Shannon entropy in nats; zero-probability cells contribute zero.
    pub fn entropy(&self) -> S {
        let mut h = S::zero();
        for &p in &self.probs() {
            if p > S::zero() {
                h -= p * p.ln();
            }
        }
        h
    }

    /// Marginal probability per grid cell: sums the per-class mass of every
    /// (row, col). Requires the cell count to tile the grid exactly.
    pub fn to_heatmap(&self, rows: usize, cols: usize) -> Result<Vec<S>> {
        if rows * cols == 0 || self.logits.len() % (rows * cols) != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} policy cells do not tile a {rows}x{cols} grid",
                self.logits.len()
            )));
        }
        let classes = self.logits.len() / (rows * cols);
        let probs = self.probs();
        let mut heat = vec![S::zero(); rows * cols];
        for (c, &p) in probs.iter().enumerate() {
            heat[c / classes] += p;
        }
        Ok(heat)
    }

    /// Write the full policy state as a versioned plain-text checkpoint.
    /// Values use the shortest round-trip decimal form, so save -> load
    /// reproduces the state bit for bit.
    pub fn save<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut text = String::new();
        text.push_str("advrand-policy v1\n");
        text.push_str(&format!(
            "cells {} decay {} steps {} baseline {}\n",
            self.logits.len(),
            self.baseline_decay,
            self.steps,
            self.baseline
        ));
        let joined: Vec<String> = self.logits.iter().map(|v| format!("{v}")).collect();
        text.push_str(&format!("logits {}\n", joined.join(" ")));
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn save_to(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load<R: std::io::Read>(r: R) -> Result<Self> {
        use std::io::BufRead;
        let mut lines = std::io::BufReader::new(r).lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse("truncated policy checkpoint".into()))
        };
        let header = next()?;
        if header.trim() != "advrand-policy v1" {
            return Err(Error::Parse(format!(
                "unsupported policy checkpoint header `{header}`"
            )));
        }
        let meta = next()?;
        let parts: Vec<&str> = meta.split_whitespace().collect();
        if parts.len() != 8
            || parts[0] != "cells"
            || parts[2] != "decay"
            || parts[4] != "steps"
            || parts[6] != "baseline"
        {
            return Err(Error::Parse(format!("bad policy metadata line `{meta}`")));
        }
        let cells: usize = parts[1]
            .parse()
            .map_err(|_| Error::Parse("bad policy cell count".into()))?;
        let mut scratch: Vec<S> = Vec::with_capacity(2);
        crate::learner::parse_values(parts[3], 1, &mut scratch)?;
        crate::learner::parse_values(parts[7], 1, &mut scratch)?;
        let (decay, baseline) = (scratch[0], scratch[1]);
        let steps: u64 = parts[5]
            .parse()
            .map_err(|_| Error::Parse("bad policy step count".into()))?;
        let row = next()?;
        let body = row
            .strip_prefix("logits ")
            .ok_or_else(|| Error::Parse("missing policy logits row".into()))?;
        let mut logits = Vec::with_capacity(cells);
        crate::learner::parse_values(body, cells, &mut logits)?;
        let mut state = PolicyState::uniform(cells, decay)?;
        state.logits = logits;
        state.baseline = baseline;
        state.steps = steps;
        if !state.logits.iter().all(|v| v.is_finite()) || !baseline.is_finite() {
            return Err(Error::NonFinite("policy checkpoint".into()));
        }
        Ok(state)
    }

    pub fn load_from(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn checkpoint_round_trips_bit_for_bit() {
        let mut pi = PolicyState::<f64>::uniform(6, 0.9).unwrap();
        let mut rng = rng_from(11);
        for _ in 0..5 {
            let draws = pi.sample(&mut rng, 4);
            let rewards: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let grad = pi.reinforce_grad(&draws, &rewards).unwrap();
            pi.step(&grad, 0.3).unwrap();
            pi.update_baseline(&rewards).unwrap();
        }
        let mut buf = Vec::new();
        pi.save(&mut buf).unwrap();
        let loaded = PolicyState::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(loaded, pi);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(PolicyState::<f64>::load("nope".as_bytes()).is_err());
        let truncated = "advrand-policy v1\ncells 4 decay 0.9 steps 2 baseline 0.5\n";
        assert!(PolicyState::<f64>::load(truncated.as_bytes()).is_err());
    }

    #[test]
    fn uniform_policy_has_log_cardinality_entropy() {
        let pi = PolicyState::<f64>::uniform(252, 0.9).unwrap();
        assert!((pi.entropy() - 252.0f64.ln()).abs() < 1e-12);
        let p = pi.probs();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| (v - 1.0 / 252.0).abs() < 1e-15));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let pi = PolicyState::<f64>::uniform(16, 0.9).unwrap();
        let a: Vec<usize> = pi
            .sample(&mut rng_from(5), 20)
            .iter()
            .map(|d| d.cells[0])
            .collect();
        let b: Vec<usize> = pi
            .sample(&mut rng_from(5), 20)
            .iter()
            .map(|d| d.cells[0])
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn skewed_logits_skew_samples() {
        let mut pi = PolicyState::<f64>::uniform(4, 0.0).unwrap();
        pi.step(&[8.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let draws = pi.sample(&mut rng_from(11), 500);
        let hits = draws.iter().filter(|d| d.cells[0] == 0).count();
        assert!(hits > 450, "cell 0 drawn only {hits}/500 times");
    }

    #[test]
    fn baseline_update_is_ema() {
        let mut pi = PolicyState::<f64>::uniform(4, 0.9).unwrap();
        pi.update_baseline(&[1.0, 3.0]).unwrap(); // mean 2
        assert!((pi.baseline() - 0.2).abs() < 1e-12);
        pi.update_baseline(&[2.0]).unwrap();
        assert!((pi.baseline() - (0.9 * 0.2 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reinforce_matches_two_cell_hand_calculation() {
        // Two cells, uniform policy, baseline 0, draws [0, 1] with rewards
        // [1, 0]: gradient is (1/2) * [(1-p0) - r1*p0, ...] = [+0.25, -0.25].
        let pi = PolicyState::<f64>::uniform(2, 0.0).unwrap();
        let draws = vec![
            ThetaDraw { cells: vec![0], log_prob: (0.5f64).ln() },
            ThetaDraw { cells: vec![1], log_prob: (0.5f64).ln() },
        ];
        let g = pi.reinforce_grad(&draws, &[1.0, 0.0]).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-12);
        assert!((g[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn reinforce_rejects_mismatched_batches() {
        let pi = PolicyState::<f64>::uniform(3, 0.0).unwrap();
        let draws = pi.sample(&mut rng_from(0), 2);
        assert!(pi.reinforce_grad(&draws, &[1.0]).is_err());
        assert!(pi.reinforce_grad(&[], &[]).is_err());
        assert!(pi
            .reinforce_grad(&draws, &[f64::INFINITY, 0.0])
            .is_err());
    }

    #[test]
    fn scene_draws_use_distinct_grid_cells() {
        let pi = PolicyState::<f64>::uniform(32, 0.9).unwrap(); // 4x4x2
        let mut rng = rng_from(7);
        for _ in 0..50 {
            let draw = pi.sample_scene(&mut rng, 4, 4, 12).unwrap();
            assert_eq!(draw.cells.len(), 12);
            let mut grid_cells: Vec<usize> = draw.cells.iter().map(|c| c / 2).collect();
            grid_cells.sort_unstable();
            grid_cells.dedup();
            assert_eq!(grid_cells.len(), 12, "duplicate grid cell in scene");
        }
    }

    #[test]
    fn collapsed_policy_still_fills_scenes() {
        // All mass on one cell: rejection must fall back to free cells.
        let mut pi = PolicyState::<f64>::uniform(32, 0.9).unwrap();
        let mut grad = vec![0.0; 32];
        grad[5] = 60.0;
        pi.step(&grad, 1.0).unwrap();
        let draw = pi.sample_scene(&mut rng_from(3), 4, 4, 12).unwrap();
        assert_eq!(draw.cells.len(), 12);
        assert!(draw.cells.contains(&5));
    }

    #[test]
    fn heatmap_sums_class_mass_per_cell() {
        let pi = PolicyState::<f64>::uniform(32, 0.9).unwrap();
        let heat = pi.to_heatmap(4, 4).unwrap();
        assert_eq!(heat.len(), 16);
        let total: f64 = heat.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(heat.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-12));
    }

    #[test]
    fn step_rejects_bad_gradients() {
        let mut pi = PolicyState::<f64>::uniform(4, 0.9).unwrap();
        assert!(pi.step(&[0.0; 3], 0.1).is_err());
        assert!(pi.step(&[0.0; 4], 0.0).is_err());
        assert!(pi.step(&[f64::NAN, 0.0, 0.0, 0.0], 0.1).is_err());
        assert_eq!(pi.steps(), 0);
    }
}
