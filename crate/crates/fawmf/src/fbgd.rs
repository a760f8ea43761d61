//! Cached full-batch gradient descent.
//!
//! A literal full-batch gradient touches every `(i, j)` cell and costs
//! `O(n m K D)` per epoch. The sums over users that every item gradient
//! needs (and vice versa) do not depend on the item (user), so they are
//! computed once per epoch and cached:
//!
//! ```text
//! M_theta[k][l] = sum_j v_jk v_jl q_j        (K x K x D)
//! S_theta      = sum_j q_j                   (D)
//! M_q[k][l]    = sum_i u_ik u_il theta_i     (K x K x D)
//! S_q          = sum_i theta_i               (D)
//! M_u[d][l]    = sum_j q_jd v_jl v_j         (D x K x K)
//! M_v[d][l]    = sum_i theta_id u_il u_i     (D x K x K)
//! ```
//!
//! With these, every dense gradient sum collapses to a `K^2 D`-size
//! contraction plus corrections over the positive cells only, for a total
//! epoch cost of `O((n + m) K^2 D + |X+| (K + D))`.
//!
//! Per-row outputs (activations, gradients) are computed in parallel with a
//! fixed inner summation order, and cross-row reductions run sequentially,
//! so results are bit-identical for every thread count.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::SparseBinaryMatrix;
use crate::mat::{axpy, dot, Mat, Tensor3};
use crate::model::{
    activation_matrix, objective_fast, objective_naive, HyperParams, ModelParams,
};
use crate::oracle;

/// Convergence rule for [`train`].
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub max_epochs: usize,
    /// Stop when `|J_t - J_{t-1}| / max(J_{t-1}, 1e-12)` falls below this.
    pub rel_tol: f64,
}

pub const DEFAULT_REL_TOL: f64 = 1e-6;

impl StopRule {
    pub fn new(max_epochs: usize, rel_tol: f64) -> Self {
        StopRule { max_epochs, rel_tol }
    }

    pub fn from_hyper(hyper: &HyperParams) -> Self {
        StopRule::new(hyper.max_epochs, DEFAULT_REL_TOL)
    }
}

/// Per-epoch intermediates, rebuilt from scratch every epoch.
#[derive(Debug, Clone)]
pub struct GradientCache {
    /// Memberships `softmax(beta)`, `n x D`.
    pub theta: Mat,
    /// Per-item community-weighted consumption `c_j`, `m x D`.
    pub consumption: Mat,
    /// Community activations `q_j`, `m x D`.
    pub q: Mat,
    pub m_theta: Tensor3,
    pub s_theta: Vec<f64>,
    pub m_q: Tensor3,
    pub s_q: Vec<f64>,
    pub m_u: Tensor3,
    pub m_v: Tensor3,
    /// `dJ/dq_j`, `m x D`.
    pub djdq: Mat,
}

/// One dense gradient block per parameter group.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub beta: Mat,
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Mat,
    pub v: Mat,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            beta: Mat::zeros(params.n_users(), params.communities()),
            alpha: vec![0.0; params.n_users()],
            w: vec![0.0; params.n_items()],
            b: vec![0.0; params.n_items()],
            u: Mat::zeros(params.n_users(), params.latent_dim()),
            v: Mat::zeros(params.n_items(), params.latent_dim()),
        }
    }

    /// Flat views of the six groups, for comparisons and reports.
    pub fn groups(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("beta", self.beta.as_slice()),
            ("alpha", &self.alpha),
            ("w", &self.w),
            ("b", &self.b),
            ("u", self.u.as_slice()),
            ("v", self.v.as_slice()),
        ]
    }

    pub fn max_norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, values)| values.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Scale every group so the largest entry magnitude is at most `cap`.
    /// For robustness experiments only; no trainer applies it by default.
    pub fn clip_max_norm(&mut self, cap: f64) {
        assert!(cap > 0.0);
        let norm = self.max_norm();
        if norm <= cap {
            return;
        }
        let scale = cap / norm;
        for values in [
            self.beta.as_mut_slice(),
            &mut self.alpha,
            &mut self.w,
            &mut self.b,
            self.u.as_mut_slice(),
            self.v.as_mut_slice(),
        ] {
            for value in values.iter_mut() {
                *value *= scale;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (name, values) in self.groups() {
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "gradient for parameter group '{name}' is not finite"
                )));
            }
        }
        Ok(())
    }
}

/// Build all per-epoch intermediates for the current parameters.
pub fn build_cache(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
) -> Result<GradientCache> {
    let n = params.n_users();
    let m = params.n_items();
    let k = params.latent_dim();
    let d = params.communities();
    let eps = hyper.epsilon;

    let theta = params.membership();
    let (consumption, q) = activation_matrix(params, &theta, x, hyper.sigma_clamp);

    // User-side reductions.
    let mut m_q = Tensor3::zeros(k, k, d);
    let mut s_q = vec![0.0; d];
    let mut m_v = Tensor3::zeros(d, k, k);
    for i in 0..n {
        let u_i = params.u.row(i);
        let theta_i = theta.row(i);
        for a in 0..k {
            let ua = u_i[a];
            for b in a..k {
                axpy(ua * u_i[b], theta_i, m_q.at_mut(a, b));
            }
        }
        axpy(1.0, theta_i, &mut s_q);
        for dd in 0..d {
            let td = theta_i[dd];
            for l in 0..k {
                axpy(td * u_i[l], u_i, m_v.at_mut(dd, l));
            }
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            m_q.mirror(a, b);
        }
    }

    // Item-side reductions.
    let mut m_theta = Tensor3::zeros(k, k, d);
    let mut s_theta = vec![0.0; d];
    let mut m_u = Tensor3::zeros(d, k, k);
    for j in 0..m {
        let v_j = params.v.row(j);
        let q_j = q.row(j);
        for a in 0..k {
            let va = v_j[a];
            for b in a..k {
                axpy(va * v_j[b], q_j, m_theta.at_mut(a, b));
            }
        }
        axpy(1.0, q_j, &mut s_theta);
        for dd in 0..d {
            let qd = q_j[dd];
            for l in 0..k {
                axpy(qd * v_j[l], v_j, m_u.at_mut(dd, l));
            }
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            m_theta.mirror(a, b);
        }
    }

    // dJ/dq_j: dense contraction against M_q minus the per-positive terms.
    let mut djdq = Mat::zeros(m, d);
    djdq.par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            let v_j = params.v.row(j);
            for (value, &s) in row.iter_mut().zip(&s_q) {
                *value = -eps * eps * s;
            }
            for a in 0..k {
                let va = v_j[a];
                axpy(va * va, m_q.at(a, a), row);
                for b in (a + 1)..k {
                    axpy(2.0 * va * v_j[b], m_q.at(a, b), row);
                }
            }
            for &i in x.col(j) {
                let i = i as usize;
                let score = dot(params.u.row(i), v_j);
                axpy(-2.0 * (score - eps), theta.row(i), row);
            }
        });

    let cache = GradientCache {
        theta,
        consumption,
        q,
        m_theta,
        s_theta,
        m_q,
        s_q,
        m_u,
        m_v,
        djdq,
    };
    cache.check_finite()?;
    Ok(cache)
}

impl GradientCache {
    fn check_finite(&self) -> Result<()> {
        let tensors: [(&str, bool); 8] = [
            ("theta", self.theta.is_finite()),
            ("q", self.q.is_finite()),
            ("consumption", self.consumption.is_finite()),
            ("M_theta", self.m_theta.is_finite()),
            ("M_q", self.m_q.is_finite()),
            ("M_u", self.m_u.is_finite()),
            ("M_v", self.m_v.is_finite()),
            ("dJdq", self.djdq.is_finite()),
        ];
        for (name, finite) in tensors {
            if !finite {
                return Err(Error::Numeric(format!(
                    "cache tensor '{name}' is not finite"
                )));
            }
        }
        if !self.s_theta.iter().chain(&self.s_q).all(|v| v.is_finite()) {
            return Err(Error::Numeric("cache vector S is not finite".into()));
        }
        Ok(())
    }
}

/// All six gradient groups, from the cache plus one pass over positives.
pub fn gradients_fast(
    params: &ModelParams,
    hyper: &HyperParams,
    cache: &GradientCache,
    x: &SparseBinaryMatrix,
) -> Result<GradientSet> {
    let n = params.n_users();
    let m = params.n_items();
    let k = params.latent_dim();
    let d = params.communities();
    let eps = hyper.epsilon;
    let mut grads = GradientSet::zeros_like(params);

    // d/d beta: dense part via M_theta, positive corrections, the chain
    // through q on positives, then the softmax Jacobian.
    let mut d_theta = Mat::zeros(n, d);
    d_theta
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let u_i = params.u.row(i);
            for (value, &s) in row.iter_mut().zip(&cache.s_theta) {
                *value = -eps * eps * s;
            }
            for a in 0..k {
                let ua = u_i[a];
                axpy(ua * ua, cache.m_theta.at(a, a), row);
                for b in (a + 1)..k {
                    axpy(2.0 * ua * u_i[b], cache.m_theta.at(a, b), row);
                }
            }
            let alpha_i = params.alpha[i];
            for &j in x.row(i) {
                let j = j as usize;
                let v_j = params.v.row(j);
                let q_j = cache.q.row(j);
                let score = dot(u_i, v_j);
                axpy(-2.0 * (score - eps), q_j, row);
                // chain through q_j, nonzero only on consumed items
                let scale = alpha_i * params.w[j];
                for ((value, &qd), &g) in row.iter_mut().zip(q_j).zip(cache.djdq.row(j)) {
                    *value += scale * qd * (1.0 - qd) * g;
                }
            }
        });
    grads
        .beta
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let theta_i = cache.theta.row(i);
            let dt = d_theta.row(i);
            let inner = dot(theta_i, dt);
            for ((value, &t), &g) in row.iter_mut().zip(theta_i).zip(dt) {
                *value = t * (g - inner);
            }
        });

    // d/d alpha: gated by the user's positives.
    grads
        .alpha
        .par_iter_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(out, i)| {
            let theta_i = cache.theta.row(i);
            let mut acc = 0.0;
            for &j in x.row(i) {
                let j = j as usize;
                let q_j = cache.q.row(j);
                let g_j = cache.djdq.row(j);
                let mut inner = 0.0;
                for dd in 0..d {
                    inner += g_j[dd] * q_j[dd] * (1.0 - q_j[dd]) * theta_i[dd];
                }
                acc += params.w[j] * inner;
            }
            *out = acc;
        });

    // d/d w and d/d b per item.
    grads
        .w
        .par_iter_mut()
        .zip(grads.b.par_iter_mut())
        .zip((0..m).into_par_iter())
        .for_each(|((w_out, b_out), j)| {
            let q_j = cache.q.row(j);
            let c_j = cache.consumption.row(j);
            let g_j = cache.djdq.row(j);
            let mut dw = 0.0;
            let mut db = 0.0;
            for dd in 0..d {
                let slope = g_j[dd] * q_j[dd] * (1.0 - q_j[dd]);
                dw += slope * c_j[dd];
                db += slope;
            }
            *w_out = dw;
            *b_out = db;
        });

    // d/d u rows.
    grads
        .u
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let u_i = params.u.row(i);
            let theta_i = cache.theta.row(i);
            for dd in 0..d {
                let td = theta_i[dd];
                for l in 0..k {
                    axpy(td * u_i[l], cache.m_u.at(dd, l), row);
                }
            }
            for &j in x.row(i) {
                let j = j as usize;
                let gamma = dot(theta_i, cache.q.row(j));
                axpy(-gamma, params.v.row(j), row);
            }
            for value in row.iter_mut() {
                *value *= 2.0;
            }
        });

    // d/d v rows.
    grads
        .v
        .par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            let v_j = params.v.row(j);
            let q_j = cache.q.row(j);
            for dd in 0..d {
                let qd = q_j[dd];
                for l in 0..k {
                    axpy(qd * v_j[l], cache.m_v.at(dd, l), row);
                }
            }
            for &i in x.col(j) {
                let i = i as usize;
                let gamma = dot(cache.theta.row(i), q_j);
                axpy(-gamma, params.u.row(i), row);
            }
            for value in row.iter_mut() {
                *value *= 2.0;
            }
        });

    grads.check_finite()?;
    Ok(grads)
}

/// Objective and gradient diagnostics of one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochOutcome {
    /// Objective measured before the update was applied.
    pub objective: f64,
    pub grad_max_norm: f64,
}

fn apply_update(params: &mut ModelParams, grads: &GradientSet, lr: f64) {
    fn step(values: &mut [f64], grads: &[f64], lr: f64) {
        for (p, g) in values.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }
    step(params.beta.as_mut_slice(), grads.beta.as_slice(), lr);
    step(&mut params.alpha, &grads.alpha, lr);
    step(&mut params.w, &grads.w, lr);
    step(&mut params.b, &grads.b, lr);
    step(params.u.as_mut_slice(), grads.u.as_slice(), lr);
    step(params.v.as_mut_slice(), grads.v.as_slice(), lr);
}

/// One full-batch epoch: build the cache, measure the objective, compute
/// all gradients, and update every parameter group simultaneously.
pub fn epoch_step(
    params: &mut ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    lr: f64,
) -> Result<EpochOutcome> {
    let cache = build_cache(params, hyper, x)?;
    let objective = objective_fast(params, hyper, &cache, x);
    let grads = gradients_fast(params, hyper, &cache, x)?;
    apply_update(params, &grads, lr);
    Ok(EpochOutcome {
        objective,
        grad_max_norm: grads.max_norm(),
    })
}

/// Same epoch contract computed through the unrearranged reference
/// gradients. Subject to the oracle's `n * m` guard.
pub fn epoch_step_naive(
    params: &mut ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    lr: f64,
) -> Result<EpochOutcome> {
    let objective = objective_naive(params, hyper, x);
    let grads = oracle::gradients_naive(params, hyper, x)?;
    apply_update(params, &grads, lr);
    Ok(EpochOutcome {
        objective,
        grad_max_norm: grads.max_norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub seconds: f64,
    pub grad_max_norm: f64,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub converged: bool,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,objective,epoch_seconds,grad_max_norm")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.17e},{:.6},{:.17e}",
                r.epoch, r.objective, r.seconds, r.grad_max_norm
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradRoute {
    Cached,
    Naive,
}

fn train_loop(
    mut params: ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    stop: StopRule,
    route: GradRoute,
) -> Result<(ModelParams, TrainHistory)> {
    hyper.validate()?;
    let mut history = TrainHistory::default();
    let mut prev: Option<f64> = None;

    for epoch in 0..stop.max_epochs {
        let started = Instant::now();
        // Measure the objective first: if it has already converged, stop
        // without taking another step.
        let step = (|| -> Result<Option<(f64, GradientSet)>> {
            let (objective, grads) = match route {
                GradRoute::Cached => {
                    let cache = build_cache(&params, hyper, x)?;
                    let objective = objective_fast(&params, hyper, &cache, x);
                    if !objective.is_finite() {
                        return Err(Error::Numeric("objective is not finite".into()));
                    }
                    if converged(prev, objective, stop.rel_tol) {
                        return Ok(None);
                    }
                    (objective, gradients_fast(&params, hyper, &cache, x)?)
                }
                GradRoute::Naive => {
                    let objective = objective_naive(&params, hyper, x);
                    if !objective.is_finite() {
                        return Err(Error::Numeric("objective is not finite".into()));
                    }
                    if converged(prev, objective, stop.rel_tol) {
                        return Ok(None);
                    }
                    (objective, oracle::gradients_naive(&params, hyper, x)?)
                }
            };
            Ok(Some((objective, grads)))
        })()
        .map_err(|err| match err {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;

        let Some((objective, grads)) = step else {
            history.converged = true;
            break;
        };
        apply_update(&mut params, &grads, hyper.learning_rate);
        history.records.push(EpochRecord {
            epoch,
            objective,
            seconds: started.elapsed().as_secs_f64(),
            grad_max_norm: grads.max_norm(),
        });
        prev = Some(objective);
    }

    Ok((params, history))
}

fn converged(prev: Option<f64>, objective: f64, rel_tol: f64) -> bool {
    match prev {
        Some(p) => (objective - p).abs() / p.abs().max(1e-12) < rel_tol,
        None => false,
    }
}

/// Train with the cached full-batch gradients.
pub fn train(
    params: ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    stop: StopRule,
) -> Result<(ModelParams, TrainHistory)> {
    train_loop(params, hyper, x, stop, GradRoute::Cached)
}

/// Train with the reference gradients; same trajectory, no caching.
pub fn train_naive(
    params: ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    stop: StopRule,
) -> Result<(ModelParams, TrainHistory)> {
    train_loop(params, hyper, x, stop, GradRoute::Naive)
}
