//! Aggregation of finished runs into per-method summary curves.
//!
//! Each input is a run directory produced by `run` (it must contain
//! `manifest.txt` and `metrics.csv`). Runs are grouped by method and the
//! per-iteration mean and population standard deviation of each metric are
//! reported, so paired-seed sweeps collapse into one curve per method. A
//! single run passes through with zero spread.
//!
//! Comparing runs with different render budgets is refused: the methods
//! being contrasted must spend the same number of rendered samples per
//! iteration for the contrast to mean anything.

use std::fs;
use std::path::{Path, PathBuf};

use advrand::adversary::METRICS_CSV_HEADER;
use anyhow::{bail, Context, Result};

/// One parsed metrics row (the per-run `seed` column is validated but not
/// aggregated; it is constant within a run).
#[derive(Debug, Clone, Copy)]
struct MetricsRow {
    iter: usize,
    target_acc: f64,
    target_loss: f64,
    source_loss: f64,
    mean_reward: f64,
}

/// The parts of a run directory that comparison needs.
#[derive(Debug)]
struct RunSummary {
    dir: PathBuf,
    task: String,
    method: String,
    budget: usize,
    budget_expr: String,
    rows: Vec<MetricsRow>,
}

fn manifest_field<'a>(lines: &'a [(String, String)], key: &str, dir: &Path) -> Result<&'a str> {
    lines
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| anyhow::anyhow!("{}: manifest is missing `{key}`", dir.display()))
}

fn parse_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("advrand-manifest v1") => {}
        other => bail!(
            "{}: expected an advrand-manifest v1 header, found {:?}",
            path.display(),
            other.unwrap_or("")
        ),
    }
    let mut fields = Vec::new();
    for line in lines {
        if line == "[config]" {
            break;
        }
        let (key, value) = line
            .split_once(' ')
            .with_context(|| format!("{}: malformed manifest line `{line}`", path.display()))?;
        fields.push((key.to_string(), value.to_string()));
    }
    Ok(fields)
}

fn parse_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_CSV_HEADER => {}
        other => bail!(
            "{}: unexpected metrics header {:?}",
            path.display(),
            other.unwrap_or("")
        ),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            bail!("{}: row {} has {} columns, expected 7", path.display(), i + 1, cols.len());
        }
        let field = |j: usize| -> Result<f64> {
            cols[j]
                .parse::<f64>()
                .with_context(|| format!("{}: row {}: bad number `{}`", path.display(), i + 1, cols[j]))
        };
        rows.push(MetricsRow {
            iter: cols[0]
                .parse::<usize>()
                .with_context(|| format!("{}: row {}: bad iteration `{}`", path.display(), i + 1, cols[0]))?,
            target_acc: field(1)?,
            target_loss: field(2)?,
            source_loss: field(3)?,
            mean_reward: field(4)?,
        });
    }
    if rows.is_empty() {
        bail!("{}: no metric rows", path.display());
    }
    Ok(rows)
}

fn load_run(dir: &Path) -> Result<RunSummary> {
    let fields = parse_manifest(dir)?;
    let rows = parse_metrics(dir)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        task: manifest_field(&fields, "task", dir)?.to_string(),
        method: manifest_field(&fields, "method", dir)?.to_string(),
        budget: manifest_field(&fields, "budget", dir)?
            .parse()
            .with_context(|| format!("{}: bad budget in manifest", dir.display()))?,
        budget_expr: manifest_field(&fields, "budget_expr", dir)?.to_string(),
        rows,
    })
}

/// Population standard deviation (the runs at hand are the whole
/// population being summarized, not a sample from a larger one).
fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const COMPARE_CSV_HEADER: &str = "method,iter,runs,target_acc_mean,target_acc_std,\
target_loss_mean,target_loss_std,source_loss_mean,source_loss_std,\
mean_reward_mean,mean_reward_std";

/// Build the comparison table for a set of run directories. Fails if the
/// runs mix tasks, render budgets, or iteration counts.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        bail!("no run directories given");
    }
    let runs: Vec<RunSummary> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;

    let first = &runs[0];
    for run in &runs[1..] {
        if run.task != first.task {
            bail!(
                "runs disagree on task: {} is {}, {} is {}",
                first.dir.display(),
                first.task,
                run.dir.display(),
                run.task
            );
        }
        if run.budget != first.budget {
            bail!(
                "runs disagree on per-iteration render budget: {} uses {}, {} uses {} ({} ≠ {}); \
                 rerun with matched budgets for a fair comparison",
                first.dir.display(),
                first.budget_expr,
                run.dir.display(),
                run.budget_expr,
                first.budget,
                run.budget
            );
        }
        if run.rows.len() != first.rows.len() {
            bail!(
                "runs disagree on iteration count: {} has {}, {} has {}",
                first.dir.display(),
                first.rows.len(),
                run.dir.display(),
                run.rows.len()
            );
        }
    }

    // Group by method, preserving first-appearance order.
    let mut methods: Vec<String> = Vec::new();
    for run in &runs {
        if !methods.contains(&run.method) {
            methods.push(run.method.clone());
        }
    }

    let iters = first.rows.len();
    let mut out = String::from(COMPARE_CSV_HEADER);
    out.push('\n');
    for method in &methods {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| &r.method == method).collect();
        for i in 0..iters {
            let iter = first.rows[i].iter;
            for run in &group {
                if run.rows[i].iter != iter {
                    bail!(
                        "{}: iteration column mismatch at row {} ({} vs {})",
                        run.dir.display(),
                        i + 1,
                        run.rows[i].iter,
                        iter
                    );
                }
            }
            let col = |f: fn(&MetricsRow) -> f64| -> (f64, f64) {
                let values: Vec<f64> = group.iter().map(|r| f(&r.rows[i])).collect();
                mean_and_std(&values)
            };
            let (acc_m, acc_s) = col(|r| r.target_acc);
            let (tl_m, tl_s) = col(|r| r.target_loss);
            let (sl_m, sl_s) = col(|r| r.source_loss);
            let (mr_m, mr_s) = col(|r| r.mean_reward);
            out.push_str(&format!(
                "{method},{iter},{},{acc_m},{acc_s},{tl_m},{tl_s},{sl_m},{sl_s},{mr_m},{mr_s}\n",
                group.len()
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_run(dir: &Path, method: &str, budget: usize, expr: &str, rows: &[(f64, f64)]) {
        fs::create_dir_all(dir).unwrap();
        let manifest = format!(
            "advrand-manifest v1\nversion 0.0.0\nconfig_hash 0000000000000000\nseed 1\n\
             task shape_color\nmethod {method}\nbudget {budget}\nbudget_expr {expr}\n\
             iterations {}\n[config]\n",
            rows.len()
        );
        fs::write(dir.join("manifest.txt"), manifest).unwrap();
        let mut csv = String::from(METRICS_CSV_HEADER);
        csv.push('\n');
        for (i, (acc, loss)) in rows.iter().enumerate() {
            csv.push_str(&format!("{},{acc},{loss},0.5,0.5,1,1\n", i + 1));
        }
        fs::write(dir.join("metrics.csv"), csv).unwrap();
    }

    #[test]
    fn single_run_passes_through_with_zero_spread() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("a");
        write_run(&dir, "dr", 48, "m = 48", &[(0.25, 2.0), (0.5, 1.0)]);
        let table = compare_runs(&[dir]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], COMPARE_CSV_HEADER);
        assert_eq!(lines[1], "dr,1,1,0.25,0,2,0,0.5,0,0.5,0");
        assert_eq!(lines[2], "dr,2,1,0.5,0,1,0,0.5,0,0.5,0");
    }

    #[test]
    fn two_seeds_average_per_iteration() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        write_run(&a, "vadra", 48, "m1 + m2 = 32 + 16 = 48", &[(0.2, 2.0)]);
        write_run(&b, "vadra", 48, "m1 + m2 = 32 + 16 = 48", &[(0.4, 1.0)]);
        let table = compare_runs(&[a, b]).unwrap();
        let row = table.lines().nth(1).unwrap();
        // mean 0.3, population std 0.1; loss mean 1.5, std 0.5.
        assert_eq!(
            row,
            "vadra,1,2,0.30000000000000004,0.09999999999999998,1.5,0.5,0.5,0,0.5,0"
        );
    }

    #[test]
    fn mismatched_budgets_are_refused_by_name() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        write_run(&a, "dr", 48, "m = 48", &[(0.2, 2.0)]);
        write_run(&b, "vadra", 64, "m1 + m2 = 48 + 16 = 64", &[(0.4, 1.0)]);
        let err = compare_runs(&[a, b]).unwrap_err().to_string();
        assert!(err.contains("m = 48"), "{err}");
        assert!(err.contains("m1 + m2 = 48 + 16 = 64"), "{err}");
        assert!(err.contains("48 ≠ 64"), "{err}");
    }

    #[test]
    fn mixed_methods_group_into_separate_curves() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        write_run(&a, "dr", 48, "m = 48", &[(0.2, 2.0)]);
        write_run(&b, "vadra", 48, "m1 + m2 = 32 + 16 = 48", &[(0.4, 1.0)]);
        let table = compare_runs(&[a, b]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("dr,1,1,"));
        assert!(lines[2].starts_with("vadra,1,1,"));
    }
}
