//! Learning curves: one row per evaluation, one column per seed, plus the
//! across-seed mean and (population) standard deviation.

use std::fmt::Write as _;
use std::path::Path;

use demolab::a3c::EvalRow;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    /// Mean evaluation score of each seed, in the curve's seed order.
    pub scores: Vec<f64>,
}

impl CurveRow {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / self.scores.len() as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub label: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    /// Joins per-seed evaluation logs; every seed must have evaluated at the same steps.
    pub fn from_seed_evals(label: impl Into<String>, per_seed: &[(u64, Vec<EvalRow>)]) -> Result<Self> {
        let Some((_, first)) = per_seed.first() else {
            return Err(Error::Curve("no seeds".into()));
        };
        let steps: Vec<u64> = first.iter().map(|r| r.step).collect();
        let mut rows: Vec<CurveRow> = steps.iter().map(|&step| CurveRow { step, scores: Vec::new() }).collect();
        for (seed, evals) in per_seed {
            let theirs: Vec<u64> = evals.iter().map(|r| r.step).collect();
            if theirs != steps {
                return Err(Error::Curve(format!("seed {seed} evaluated at {theirs:?}, expected {steps:?}")));
            }
            for (row, eval) in rows.iter_mut().zip(evals) {
                row.scores.push(eval.scores.iter().sum::<f64>() / eval.scores.len() as f64);
            }
        }
        let curve = Self {
            label: label.into(),
            seeds: per_seed.iter().map(|(s, _)| *s).collect(),
            rows,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.seeds.is_empty() {
            return Err(Error::Curve("a learning curve needs at least one row and one seed".into()));
        }
        if self.rows.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Curve("steps must be strictly increasing".into()));
        }
        if self.rows.iter().any(|r| r.scores.len() != self.seeds.len()) {
            return Err(Error::Curve("every row needs one score per seed".into()));
        }
        if self.rows.iter().flat_map(|r| &r.scores).any(|s| !s.is_finite()) {
            return Err(Error::Curve("scores must be finite".into()));
        }
        Ok(())
    }

    pub fn final_mean(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, CurveRow::mean)
    }

    /// First evaluation step whose across-seed mean reaches `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.mean() >= threshold).map(|r| r.step)
    }

    /// Same, per seed.
    pub fn seed_steps_to_threshold(&self, threshold: f64) -> Vec<Option<u64>> {
        (0..self.seeds.len())
            .map(|i| self.rows.iter().find(|r| r.scores[i] >= threshold).map(|r| r.step))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::from("step");
        for s in &self.seeds {
            write!(out, ",seed_{s}").unwrap();
        }
        out.push_str(",mean,std\n");
        for row in &self.rows {
            write!(out, "{}", row.step).unwrap();
            for v in row.scores.iter().copied().chain([row.mean(), row.std()]) {
                write!(out, ",{}", sig6(v)).unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Parses a file written by [`LearningCurve::write_csv`]; the stored mean
    /// and std are returned separately so callers can check them.
    pub fn from_csv(label: impl Into<String>, text: &str) -> Result<(Self, Vec<(f64, f64)>)> {
        let err = |m: String| Error::Curve(m);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| err("empty file".into()))?.split(',').collect();
        let n = header.len();
        if n < 4 || header[0] != "step" || header[n - 2] != "mean" || header[n - 1] != "std" {
            return Err(err(format!("unexpected header {header:?}")));
        }
        let seeds = header[1..n - 2]
            .iter()
            .map(|h| h.strip_prefix("seed_").and_then(|s| s.parse().ok()).ok_or_else(|| err(format!("bad column `{h}`"))))
            .collect::<Result<Vec<u64>>>()?;
        let mut rows = Vec::new();
        let mut stats = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n {
                return Err(err(format!("row {} has {} cells, expected {n}", i + 1, cells.len())));
            }
            let step = cells[0].parse().map_err(|_| err(format!("row {}: bad step `{}`", i + 1, cells[0])))?;
            let vals = cells[1..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| err(format!("row {}: bad number `{c}`", i + 1))))
                .collect::<Result<Vec<f64>>>()?;
            stats.push((vals[n - 3], vals[n - 2]));
            rows.push(CurveRow {
                step,
                scores: vals[..n - 3].to_vec(),
            });
        }
        let curve = Self {
            label: label.into(),
            seeds,
            rows,
        };
        curve.validate()?;
        Ok((curve, stats))
    }

    pub fn read_csv(path: &Path) -> Result<(Self, Vec<(f64, f64)>)> {
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Self::from_csv(label, &std::fs::read_to_string(path)?)
    }
}

/// Six significant digits, printed in the shortest form that reads back to
/// the rounded value.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}
