//! Negative-sampling stochastic baselines.
//!
//! These learners visit every positive plus `ratio` times as many sampled
//! unobserved cells per epoch, updating one instance at a time. The chain
//! from an instance's activation back into *other* users' parameters is
//! truncated: the item's community-weighted consumption is treated as a
//! constant within a step, so an instance `(i, j)` touches only
//! `u_i, v_j, w_j, b_j, beta_i` and, on positives, `alpha_i`. That keeps a
//! step at `O(K + D + |col_j| D)`; the exact chain is what the full-batch
//! trainer provides.

use crate::error::{Error, Result};
use crate::fbgd::{build_cache, EpochRecord, StopRule, TrainHistory};
use crate::ingest::SparseBinaryMatrix;
use crate::mat::dot;
use crate::model::{
    self, objective_fast, objective_naive, softmax_row, HyperParams, ModelParams,
};
use crate::oracle::NAIVE_PAIR_GUARD;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Items drawn uniformly among all items, positives rejected.
    Uniform,
    /// Items drawn proportionally to global popularity, positives rejected.
    Itempop,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Sampled negatives per positive (the "kX" multiplier).
    pub ratio: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleStats {
    /// Draws abandoned because the user had no sampleable item.
    pub skipped_users: u64,
}

/// Attempts per drawn user before giving up and redrawing the user.
const REJECTION_ATTEMPTS: usize = 32;

/// Draw `ratio * |X+|` unobserved pairs, with replacement. Users are drawn
/// uniformly; a user whose row is full (or whose unconsumed items carry no
/// sampling mass) is counted in [`SampleStats`] and redrawn.
pub fn sample_negatives(
    x: &SparseBinaryMatrix,
    cfg: &SamplerConfig,
    popularity: &[u32],
) -> Result<(Vec<(u32, u32)>, SampleStats)> {
    assert!(cfg.ratio >= 1, "sampling ratio must be at least 1");
    let n = x.n_users();
    let m = x.n_items();
    if x.nnz() >= n * m {
        return Err(Error::Domain("no unobserved pairs to sample".into()));
    }

    let categorical = match cfg.kind {
        SamplerKind::Uniform => None,
        SamplerKind::Itempop => Some(
            rng::Categorical::new(popularity.iter().map(|&p| f64::from(p))).ok_or_else(
                || Error::Domain("item popularity is all zero, cannot sample".into()),
            )?,
        ),
    };

    let target = cfg.ratio as usize * x.nnz();
    let mut gen = rng::seeded(cfg.seed);
    let mut out = Vec::with_capacity(target);
    let mut stats = SampleStats::default();

    while out.len() < target {
        let user = rng::bounded(&mut gen, n as u64) as usize;
        if x.row(user).len() == m {
            stats.skipped_users += 1;
            continue;
        }
        let mut accepted = false;
        for _ in 0..REJECTION_ATTEMPTS {
            let item = match &categorical {
                None => rng::bounded(&mut gen, m as u64) as u32,
                Some(cat) => cat.draw(&mut gen) as u32,
            };
            if !x.contains(user, item) {
                out.push((user as u32, item));
                accepted = true;
                break;
            }
        }
        if !accepted {
            stats.skipped_users += 1;
        }
    }

    Ok((out, stats))
}

/// The exact instance sequence one epoch visits: all positives plus the
/// epoch's sampled negatives, shuffled. Seeds are forked from the sampler
/// seed per epoch.
pub fn epoch_instances(
    x: &SparseBinaryMatrix,
    cfg: &SamplerConfig,
    popularity: &[u32],
    epoch: usize,
) -> Result<(Vec<(u32, u32, f64)>, SampleStats)> {
    let mut instances: Vec<(u32, u32, f64)> =
        x.iter_pairs().map(|(i, j)| (i, j, 1.0)).collect();
    let mut stats = SampleStats::default();
    if x.nnz() < x.n_users() * x.n_items() {
        let epoch_cfg = SamplerConfig {
            seed: rng::fork_indexed(cfg.seed, "sgd-sample", epoch as u64),
            ..*cfg
        };
        let (negatives, neg_stats) = sample_negatives(x, &epoch_cfg, popularity)?;
        stats = neg_stats;
        instances.extend(negatives.into_iter().map(|(i, j)| (i, j, 0.0)));
    }
    let mut gen = rng::seeded(rng::fork_indexed(cfg.seed, "sgd-shuffle", epoch as u64));
    rng::shuffle(&mut gen, &mut instances);
    Ok((instances, stats))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SgdEpochStats {
    pub instances: usize,
    pub skipped_users: u64,
    /// Largest per-instance gradient component seen this epoch.
    pub grad_max_norm: f64,
}

/// One pass over positives plus sampled negatives in shuffled order.
pub fn sgd_epoch(
    params: &mut ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    cfg: &SamplerConfig,
    popularity: &[u32],
    lr: f64,
    epoch: usize,
) -> Result<SgdEpochStats> {
    let (instances, sample_stats) = epoch_instances(x, cfg, popularity, epoch)?;
    let d = params.communities();
    let k = params.latent_dim();
    let eps = hyper.epsilon;
    let clamp = hyper.sigma_clamp;

    // Memberships are cached and refreshed per-row whenever a logit row
    // changes; consumption is recomputed per instance from the cache.
    let mut theta = params.membership();
    let mut consumption = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut u_old = vec![0.0; k];
    let mut d_theta = vec![0.0; d];
    let mut grad_max: f64 = 0.0;

    for &(user, item, x_val) in &instances {
        let i = user as usize;
        let j = item as usize;

        model::consumption_row(&theta, &params.alpha, x.col(j), &mut consumption);
        model::activation_from_consumption(params.w[j], params.b[j], &consumption, clamp, &mut q);

        let theta_i = theta.row(i);
        let gamma = dot(theta_i, &q);
        let score = dot(params.u.row(i), params.v.row(j));
        if !score.is_finite() || !gamma.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite state at instance ({i},{j}) in epoch {epoch}"
            )));
        }

        // d loss / d gamma and the shared factor-update coefficient.
        let dl_dgamma = (score - x_val).powi(2) - (eps - x_val).powi(2);
        let factor = 2.0 * gamma * (score - x_val);
        grad_max = grad_max.max(factor.abs());

        // w_j, b_j through the activation slope; alpha_i only on positives.
        let mut dw = 0.0;
        let mut db = 0.0;
        let mut dalpha = 0.0;
        for dd in 0..d {
            let slope = dl_dgamma * theta_i[dd] * q[dd] * (1.0 - q[dd]);
            dw += slope * consumption[dd];
            db += slope;
            dalpha += slope * theta_i[dd];
        }
        dalpha *= params.w[j] * x_val;
        grad_max = grad_max.max(dw.abs()).max(db.abs()).max(dalpha.abs());

        // beta_i through the membership only (consumption held fixed).
        for (out, &qd) in d_theta.iter_mut().zip(&q) {
            *out = dl_dgamma * qd;
        }
        let inner = dot(theta_i, &d_theta);

        u_old.copy_from_slice(params.u.row(i));
        let v_j_snapshot: Vec<f64> = params.v.row(j).to_vec();

        for (p, &vv) in params.u.row_mut(i).iter_mut().zip(&v_j_snapshot) {
            *p -= lr * factor * vv;
        }
        for (p, &uu) in params.v.row_mut(j).iter_mut().zip(&u_old) {
            *p -= lr * factor * uu;
        }
        params.w[j] -= lr * dw;
        params.b[j] -= lr * db;
        params.alpha[i] -= lr * dalpha;
        {
            let beta_i = params.beta.row_mut(i);
            let theta_i = theta.row(i);
            for (dd, p) in beta_i.iter_mut().enumerate() {
                let g = theta_i[dd] * (d_theta[dd] - inner);
                grad_max = grad_max.max(g.abs());
                *p -= lr * g;
            }
        }
        softmax_row(params.beta.row(i), theta.row_mut(i));

        if !params.alpha[i].is_finite()
            || !params.w[j].is_finite()
            || !params.u.row(i).iter().all(|v| v.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite update at instance ({i},{j}) in epoch {epoch}"
            )));
        }
    }

    Ok(SgdEpochStats {
        instances: instances.len(),
        skipped_users: sample_stats.skipped_users,
        grad_max_norm: grad_max,
    })
}

/// Objective for history records: exact when the instance is small enough
/// to enumerate, cached otherwise.
pub fn epoch_objective(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
) -> Result<f64> {
    if params.n_users() * params.n_items() <= NAIVE_PAIR_GUARD {
        Ok(objective_naive(params, hyper, x))
    } else {
        let cache = build_cache(params, hyper, x)?;
        Ok(objective_fast(params, hyper, &cache, x))
    }
}

/// Stochastic training loop with the same convergence rule and history
/// format as the full-batch trainer.
pub fn train(
    mut params: ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    cfg: &SamplerConfig,
    stop: StopRule,
) -> Result<(ModelParams, TrainHistory)> {
    hyper.validate()?;
    let popularity = crate::ingest::item_popularity(x);
    let mut history = TrainHistory::default();
    let mut prev: Option<f64> = None;

    for epoch in 0..stop.max_epochs {
        let started = std::time::Instant::now();
        let objective = epoch_objective(&params, hyper, x)?;
        if !objective.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became non-finite at epoch {epoch}"
            )));
        }
        if let Some(p) = prev {
            if (objective - p).abs() / p.abs().max(1e-12) < stop.rel_tol {
                history.converged = true;
                break;
            }
        }
        let stats = sgd_epoch(&mut params, hyper, x, cfg, &popularity, hyper.learning_rate, epoch)?;
        history.records.push(EpochRecord {
            epoch,
            objective,
            seconds: started.elapsed().as_secs_f64(),
            grad_max_norm: stats.grad_max_norm,
        });
        prev = Some(objective);
    }

    Ok((params, history))
}

/// Median of a small sample; used by comparison experiments.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}
