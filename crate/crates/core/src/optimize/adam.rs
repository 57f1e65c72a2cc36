use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Objective, OptimizeError, OptimizeResult, TerminationReason};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum number of data points per data set in one step.
    pub batch_size: usize,
    pub max_iters: usize,
    /// Stop once the (mini-batch) loss drops below this value.
    pub target_loss: Option<f64>,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1000,
            max_iters: 50_000,
            target_loss: None,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(OptimizeError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Adam with bias-corrected moments. Data sets larger than `batch_size` are
/// subsampled without replacement at every step; physics terms always use
/// their full point sets.
pub fn adam<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], cfg: &AdamConfig) -> Result<OptimizeResult, OptimizeError> {
    cfg.validate()?;
    let n = obj.dim();
    if x0.len() != n {
        return Err(OptimizeError::Dimension {
            expected: n,
            got: x0.len(),
        });
    }
    let sizes = obj.data_sizes();
    let batched = sizes.iter().any(|&s| s > cfg.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::new();
    let mut loss = f64::INFINITY;
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut reason = TerminationReason::MaxIters;

    for it in 0..cfg.max_iters {
        let batch: Option<Vec<Vec<usize>>> = batched.then(|| {
            sizes
                .iter()
                .map(|&s| {
                    if s > cfg.batch_size {
                        let mut idx = sample(&mut rng, s, cfg.batch_size).into_vec();
                        idx.sort_unstable();
                        idx
                    } else {
                        (0..s).collect()
                    }
                })
                .collect()
        });
        let (f, g) = obj.evaluate(&x, batch.as_deref())?;
        if it == 0 && !f.is_finite() {
            return Err(OptimizeError::NonFiniteStart);
        }
        loss = f;
        obj.record(it, f);
        if cfg.target_loss.is_some_and(|t| f < t) {
            reason = TerminationReason::Converged;
            break;
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            x[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        history.push(f);
    }
    let iterations = history.len();
    // Report the full-data loss at the final parameters.
    let (final_loss, _) = if batched || reason == TerminationReason::MaxIters {
        obj.evaluate(&x, None)?
    } else {
        (loss, Vec::new())
    };
    Ok(OptimizeResult {
        params: x,
        loss: final_loss,
        iterations,
        evaluations: iterations + 1,
        reason,
        history,
    })
}
