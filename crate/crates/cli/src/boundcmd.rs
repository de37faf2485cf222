//! The `bound` subcommand: evaluate the multi-source generalization bound
//! for a set of sources described in a small config file, optionally
//! sweeping the sample count or the number of sources.
//!
//! Output is a CSV with one row per evaluated point. Alongside the general
//! weighted bound it reports the uniform-mixture value and the best
//! single-source value, which is what makes the source-count sweep useful:
//! the crossover where pooling sources beats the best individual one is
//! visible directly in the table.

use advrand::theory::{multi_source_bound, single_source_bound, uniform_multi_bound, BoundInputs};
use anyhow::{bail, Context, Result};

use crate::config::{parse_typed, RawConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sweep {
    None,
    SampleCount,
    Sources,
}

/// Parsed `bound` config: the bound inputs plus the sweep request.
#[derive(Debug, Clone)]
pub struct BoundConfig {
    inputs: BoundInputs<f64>,
    sweep: Sweep,
    m_values: Vec<u64>,
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| parse_typed::<f64>(key, part.trim(), line, "a number"))
        .collect()
}

impl BoundConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let take_scalar = |raw: &mut RawConfig, key: &str, default: f64| -> Result<f64> {
            match raw.take(key) {
                Some((v, line)) => parse_typed(key, &v, line, "a number"),
                None => Ok(default),
            }
        };
        let take_count = |raw: &mut RawConfig, key: &str, default: u64| -> Result<u64> {
            match raw.take(key) {
                Some((v, line)) => parse_typed(key, &v, line, "a positive integer"),
                None => Ok(default),
            }
        };

        let d_vc = take_count(&mut raw, "d_vc", 10)?;
        let m = take_count(&mut raw, "m", 1000)?;
        let delta = take_scalar(&mut raw, "delta", 0.1)?;
        let eps_star = take_scalar(&mut raw, "eps_star", 0.0)?;

        let lambda = match raw.take("lambda") {
            Some((v, line)) => parse_list("lambda", &v, line)?,
            None => vec![0.0],
        };
        let div = match raw.take("div") {
            Some((v, line)) => parse_list("div", &v, line)?,
            None => vec![0.0],
        };
        if lambda.len() != div.len() {
            bail!(
                "`lambda` lists {} sources but `div` lists {}",
                lambda.len(),
                div.len()
            );
        }
        let n = lambda.len();
        let uniform = vec![1.0 / n as f64; n];
        let alpha = match raw.take("alpha") {
            Some((v, line)) => parse_list("alpha", &v, line)?,
            None => uniform.clone(),
        };
        let beta = match raw.take("beta") {
            Some((v, line)) => parse_list("beta", &v, line)?,
            None => uniform,
        };

        let sweep = match raw.take("sweep") {
            Some((v, line)) => match v.as_str() {
                "none" => Sweep::None,
                "m" => Sweep::SampleCount,
                "sources" => Sweep::Sources,
                other => bail!("line {line}: key `sweep`: `{other}` is not one of none, m, sources"),
            },
            None => Sweep::None,
        };
        let m_values = match raw.take("m_values") {
            Some((v, line)) => {
                if sweep != Sweep::SampleCount {
                    bail!("line {line}: `m_values` only applies when `sweep = m`");
                }
                v.split(',')
                    .map(|p| parse_typed::<u64>("m_values", p.trim(), line, "a positive integer"))
                    .collect::<Result<Vec<u64>>>()?
            }
            None => vec![100, 1000, 10_000, 100_000],
        };

        raw.finish("(see README for the bound key table)")?;

        let cfg = BoundConfig {
            inputs: BoundInputs {
                d_vc,
                m,
                delta,
                alpha,
                beta,
                lambda,
                div,
                eps_star,
            },
            sweep,
            m_values,
        };
        cfg.inputs.validate().map_err(anyhow::Error::from)?;
        if cfg.sweep == Sweep::SampleCount && cfg.m_values.is_empty() {
            bail!("`sweep = m` needs a non-empty `m_values` list");
        }
        Ok(cfg)
    }
}

pub const BOUND_CSV_HEADER: &str = "n_sources,m,delta,total,eps_star,weighted_shift,\
complexity,c_delta,uniform_total,best_single_total,best_k";

fn evaluate_row(inputs: &BoundInputs<f64>) -> Result<String> {
    let report = multi_source_bound(inputs)?;
    let uniform = uniform_multi_bound(inputs)?;
    let mut best_k = 0usize;
    let mut best_single = f64::INFINITY;
    for k in 0..inputs.sources() {
        let v = single_source_bound(inputs, k)?;
        if v < best_single {
            best_single = v;
            best_k = k;
        }
    }
    Ok(format!(
        "{},{},{},{},{},{},{},{},{uniform},{best_single},{best_k}\n",
        inputs.sources(),
        inputs.m,
        inputs.delta,
        report.total,
        report.eps_star,
        report.weighted_shift,
        report.complexity,
        report.c_delta,
    ))
}

/// Evaluate the configured bound (or sweep) into a CSV table.
pub fn evaluate(cfg: &BoundConfig) -> Result<String> {
    let mut out = String::from(BOUND_CSV_HEADER);
    out.push('\n');
    match cfg.sweep {
        Sweep::None => {
            out.push_str(&evaluate_row(&cfg.inputs)?);
        }
        Sweep::SampleCount => {
            for &m in &cfg.m_values {
                let mut inputs = cfg.inputs.clone();
                inputs.m = m;
                out.push_str(
                    &evaluate_row(&inputs).with_context(|| format!("sweep point m = {m}"))?,
                );
            }
        }
        Sweep::Sources => {
            // Prefix sweep: take the first n sources with uniform weights
            // and uniform sampling so each row is comparable to the last.
            for n in 1..=cfg.inputs.sources() {
                let inv = 1.0 / n as f64;
                let inputs = BoundInputs {
                    d_vc: cfg.inputs.d_vc,
                    m: cfg.inputs.m,
                    delta: cfg.inputs.delta,
                    alpha: vec![inv; n],
                    beta: vec![inv; n],
                    lambda: cfg.inputs.lambda[..n].to_vec(),
                    div: cfg.inputs.div[..n].to_vec(),
                    eps_star: cfg.inputs.eps_star,
                };
                out.push_str(
                    &evaluate_row(&inputs)
                        .with_context(|| format!("sweep point n_sources = {n}"))?,
                );
            }
        }
    }
    Ok(out)
}
