use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mean and population standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

/// Per-seed outcomes in seed-list order.
#[derive(Clone, Debug)]
pub struct Replicates<T, E> {
    pub runs: Vec<(u64, Result<T, E>)>,
}

impl<T, E> Replicates<T, E> {
    /// True when at least one seed failed.
    pub fn partial(&self) -> bool {
        self.runs.iter().any(|(_, r)| r.is_err())
    }

    pub fn successes(&self) -> impl Iterator<Item = (u64, &T)> {
        self.runs.iter().filter_map(|(s, r)| r.as_ref().ok().map(|t| (*s, t)))
    }

    /// Summary of a statistic over the seeds that succeeded.
    pub fn summarize(&self, stat: impl Fn(&T) -> f64) -> Option<Summary> {
        let v: Vec<f64> = self.successes().map(|(_, t)| stat(t)).collect();
        Summary::of(&v)
    }
}

/// Run `run` once per seed, in parallel, and keep the results in seed order.
pub fn replicate<T, E, F>(seeds: &[u64], run: F) -> Replicates<T, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync,
{
    let runs = seeds.par_iter().map(|&s| (s, run(s))).collect();
    Replicates { runs }
}
