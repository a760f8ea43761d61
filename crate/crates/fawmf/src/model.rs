//! Model parameters, the exposure network, and the training objective.
//!
//! The objective weights every squared error by the exposure probability
//! `gamma_ij = theta_i . q_j`, where `theta_i` is the softmax of the
//! per-user membership logits and `q_j` the per-item community activation
//! `sigma(w_j * sum_{k consumed j} theta_k alpha_k + b_j)`:
//!
//! ```text
//! J = sum_ij gamma_ij (u_i.v_j - x_ij)^2 + (1 - gamma_ij) (eps - x_ij)^2
//! ```
//!
//! [`objective_naive`] evaluates the double sum literally; it is the
//! reference every faster route is tested against. [`objective_fast`]
//! contracts the dense part against the epoch cache and touches only the
//! positive cells beyond that.

use rayon::prelude::*;

use crate::fbgd::GradientCache;
use crate::ingest::SparseBinaryMatrix;
use crate::mat::{axpy, dot, Mat};
use crate::rng;

/// Training settings shared by every optimizer.
#[derive(Debug, Clone)]
pub struct HyperParams {
    /// Latent factor dimension (K).
    pub latent_dim: usize,
    /// Number of communities (D).
    pub communities: usize,
    /// Floor score assigned to unexposed cells.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Activations are clamped into `[sigma_clamp, 1 - sigma_clamp]` so the
    /// `q (1 - q)` gradient factors never vanish exactly.
    pub sigma_clamp: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            latent_dim: 20,
            communities: 20,
            epsilon: 1e-5,
            learning_rate: 0.1,
            max_epochs: 500,
            sigma_clamp: 1e-8,
            seed: 42,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.latent_dim >= 1
            && self.communities >= 1
            && self.epsilon > 0.0
            && self.epsilon < 1.0
            && self.learning_rate > 0.0
            && self.sigma_clamp > 0.0
            && self.sigma_clamp < 0.5;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Domain(format!(
                "invalid hyperparameters: K={} D={} epsilon={} lr={} sigma_clamp={}",
                self.latent_dim,
                self.communities,
                self.epsilon,
                self.learning_rate,
                self.sigma_clamp
            )))
        }
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Membership logits, `n x D`; softmax rows give the memberships.
    pub beta: Mat,
    /// Per-user influence on the communities they consume in.
    pub alpha: Vec<f64>,
    /// Per-item activation gain.
    pub w: Vec<f64>,
    /// Per-item activation bias.
    pub b: Vec<f64>,
    /// User latent factors, `n x K`.
    pub u: Mat,
    /// Item latent factors, `m x K`.
    pub v: Mat,
}

impl ModelParams {
    /// Seed-deterministic initialization: factors uniform in
    /// `(-0.5/sqrt(K), 0.5/sqrt(K))`, logits uniform in `(-0.01, 0.01)`
    /// (memberships start near uniform), `alpha = w = 1`, `b = 0`.
    pub fn init(hyper: &HyperParams, n_users: usize, n_items: usize) -> Self {
        assert!(n_users >= 1 && n_items >= 1);
        let k = hyper.latent_dim;
        let d = hyper.communities;
        let mut gen = rng::seeded(hyper.seed);

        let mut beta = Mat::zeros(n_users, d);
        for value in beta.as_mut_slice() {
            *value = rng::uniform(&mut gen, -0.01, 0.01);
        }
        let scale = 0.5 / (k as f64).sqrt();
        let mut u = Mat::zeros(n_users, k);
        for value in u.as_mut_slice() {
            *value = rng::uniform(&mut gen, -scale, scale);
        }
        let mut v = Mat::zeros(n_items, k);
        for value in v.as_mut_slice() {
            *value = rng::uniform(&mut gen, -scale, scale);
        }

        ModelParams {
            beta,
            alpha: vec![1.0; n_users],
            w: vec![1.0; n_items],
            b: vec![0.0; n_items],
            u,
            v,
        }
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.beta.rows()
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.w.len()
    }

    #[inline]
    pub fn latent_dim(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    pub fn communities(&self) -> usize {
        self.beta.cols()
    }

    /// Softmax of the membership logits; every row lies on the simplex.
    pub fn membership(&self) -> Mat {
        softmax_rows(&self.beta)
    }

    pub fn is_finite(&self) -> bool {
        self.beta.is_finite()
            && self.u.is_finite()
            && self.v.is_finite()
            && self.alpha.iter().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn clamp_unit(value: f64, clamp: f64) -> f64 {
    value.max(clamp).min(1.0 - clamp)
}

/// Row-wise softmax with the usual max shift.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = Mat::zeros(logits.rows(), logits.cols());
    out.par_rows_mut()
        .zip((0..logits.rows()).into_par_iter())
        .for_each(|(row, i)| softmax_row(logits.row(i), row));
    out
}

pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `c_j = sum_{k in consumers} alpha_k theta_k`, the community-weighted
/// consumption of one item.
pub(crate) fn consumption_row(theta: &Mat, alpha: &[f64], consumers: &[u32], out: &mut [f64]) {
    out.fill(0.0);
    for &k in consumers {
        axpy(alpha[k as usize], theta.row(k as usize), out);
    }
}

pub(crate) fn activation_from_consumption(
    w_j: f64,
    b_j: f64,
    consumption: &[f64],
    clamp: f64,
    out: &mut [f64],
) {
    for (o, &c) in out.iter_mut().zip(consumption) {
        *o = clamp_unit(sigmoid(w_j * c + b_j), clamp);
    }
}

/// Community activation of item `j`: how exposed the item is to each
/// community, from who consumed it. Iterates only the item's consumers.
pub fn community_activation(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    j: usize,
) -> Vec<f64> {
    let d = params.communities();
    let mut consumption = vec![0.0; d];
    let mut theta_k = vec![0.0; d];
    for &k in x.col(j) {
        softmax_row(params.beta.row(k as usize), &mut theta_k);
        axpy(params.alpha[k as usize], &theta_k, &mut consumption);
    }
    let mut out = vec![0.0; d];
    activation_from_consumption(params.w[j], params.b[j], &consumption, hyper.sigma_clamp, &mut out);
    out
}

/// Exposure probability of one user-item pair: convex combination of the
/// item's community activations under the user's membership.
#[inline]
pub fn exposure(theta_i: &[f64], q_j: &[f64]) -> f64 {
    dot(theta_i, q_j)
}

/// Preference score `u_i . v_j`.
#[inline]
pub fn predict_score(params: &ModelParams, i: usize, j: usize) -> f64 {
    dot(params.u.row(i), params.v.row(j))
}

/// Build the full `m x D` activation matrix from a precomputed membership.
pub(crate) fn activation_matrix(
    params: &ModelParams,
    theta: &Mat,
    x: &SparseBinaryMatrix,
    clamp: f64,
) -> (Mat, Mat) {
    let m = params.n_items();
    let d = params.communities();
    let mut consumption = Mat::zeros(m, d);
    consumption
        .par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| consumption_row(theta, &params.alpha, x.col(j), row));
    let mut q = Mat::zeros(m, d);
    q.par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            activation_from_consumption(params.w[j], params.b[j], consumption.row(j), clamp, row)
        });
    (consumption, q)
}

/// The exact objective: a literal double loop over all `n x m` cells.
pub fn objective_naive(params: &ModelParams, hyper: &HyperParams, x: &SparseBinaryMatrix) -> f64 {
    let theta = params.membership();
    let (_, q) = activation_matrix(params, &theta, x, hyper.sigma_clamp);
    let eps = hyper.epsilon;
    let n = params.n_users();
    let m = params.n_items();

    let per_user: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let theta_i = theta.row(i);
            let u_i = params.u.row(i);
            let row = x.row(i);
            let mut next = 0;
            let mut acc = 0.0;
            for j in 0..m {
                let positive = next < row.len() && row[next] as usize == j;
                if positive {
                    next += 1;
                }
                let x_ij = if positive { 1.0 } else { 0.0 };
                let gamma = exposure(theta_i, q.row(j));
                let score = dot(u_i, params.v.row(j));
                acc += gamma * (score - x_ij).powi(2) + (1.0 - gamma) * (eps - x_ij).powi(2);
            }
            acc
        })
        .collect();
    per_user.iter().sum()
}

/// The same objective evaluated against an epoch cache. The dense part
/// contracts to `<M_q, M_theta> + eps^2 (nm - S_q . S_theta)` and only the
/// positive cells need individual corrections, so the cost is
/// `O(K^2 D + |X+| (K + D))` on top of the cache build.
///
/// The cache must have been built from exactly these parameters; a stale
/// cache is undetectable here, the trainer rebuilds it every epoch.
pub fn objective_fast(
    params: &ModelParams,
    hyper: &HyperParams,
    cache: &GradientCache,
    x: &SparseBinaryMatrix,
) -> f64 {
    let k = params.latent_dim();
    let eps = hyper.epsilon;
    let n = params.n_users();
    let m = params.n_items();

    // sum_ij gamma s^2 : contract the two cached reductions.
    let mut quad = 0.0;
    for a in 0..k {
        for b in 0..k {
            quad += dot(cache.m_q.at(a, b), cache.m_theta.at(a, b));
        }
    }
    // sum_ij gamma
    let gamma_total = dot(&cache.s_q, &cache.s_theta);

    let mut positive_correction = 0.0;
    for i in 0..n {
        let theta_i = cache.theta.row(i);
        let u_i = params.u.row(i);
        for &j in x.row(i) {
            let j = j as usize;
            let gamma = exposure(theta_i, cache.q.row(j));
            let score = dot(u_i, params.v.row(j));
            // switch the cell from the x=0 form to the x=1 form
            positive_correction +=
                gamma * (1.0 - 2.0 * score) + (1.0 - gamma) * (1.0 - 2.0 * eps);
        }
    }

    quad + eps * eps * ((n * m) as f64 - gamma_total) + positive_correction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbgd::build_cache;
    use crate::synth;
    use proptest::prelude::*;

    fn small_hyper(k: usize, d: usize) -> HyperParams {
        HyperParams {
            latent_dim: k,
            communities: d,
            ..HyperParams::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let hyper = HyperParams::default();
        let a = ModelParams::init(&hyper, 7, 5);
        let b = ModelParams::init(&hyper, 7, 5);
        assert_eq!(a, b);
        assert!(a.alpha.iter().all(|&v| v == 1.0));
        assert!(a.w.iter().all(|&v| v == 1.0));
        assert!(a.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_memberships_start_near_uniform() {
        let hyper = HyperParams::default();
        let params = ModelParams::init(&hyper, 40, 10);
        let theta = params.membership();
        let uniform = 1.0 / hyper.communities as f64;
        for i in 0..40 {
            for &t in theta.row(i) {
                assert!((t - uniform).abs() < 0.01, "theta {t} vs uniform {uniform}");
            }
        }
    }

    #[test]
    fn init_exposure_tracks_consumption_counts() {
        // At the stated initialization the activation collapses to
        // sigma(count_j / D) up to the near-uniform membership wobble.
        let hyper = small_hyper(4, 5);
        let counts = [2usize, 2, 6, 10];
        let mut pairs = Vec::new();
        for (j, &count) in counts.iter().enumerate() {
            for i in 0..count {
                pairs.push((i as u32, j as u32));
            }
        }
        let x = crate::ingest::SparseBinaryMatrix::from_pairs(30, counts.len(), pairs);
        let params = ModelParams::init(&hyper, 30, counts.len());
        let theta = params.membership();

        let mut gammas = Vec::new();
        for j in 0..counts.len() {
            let q = community_activation(&params, &hyper, &x, j);
            gammas.push(exposure(theta.row(20), &q));
        }
        for (j, &count) in counts.iter().enumerate() {
            let expected = sigmoid(count as f64 / hyper.communities as f64);
            assert!(
                (gammas[j] - expected).abs() < 0.02,
                "item {j}: gamma {} vs hand value {expected}",
                gammas[j]
            );
        }
        assert!((gammas[0] - gammas[1]).abs() < 0.02);
        assert!(gammas[2] > gammas[1] + 0.05);
        assert!(gammas[3] > gammas[2] + 0.05);
    }

    #[test]
    fn softmax_symmetric_row_is_uniform() {
        let logits = Mat::from_vec(1, 3, vec![0.0, 0.0, 0.0]);
        let theta = softmax_rows(&logits);
        for &t in theta.row(0) {
            assert!((t - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ratio_two_rows() {
        let c = 5.5;
        let logits = Mat::from_vec(1, 2, vec![c, c + std::f64::consts::LN_2]);
        let theta = softmax_rows(&logits);
        assert!((theta.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((theta.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_unshifted_formula_on_small_logits() {
        let mut gen = rng::seeded(2);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng::uniform(&mut gen, -2.0, 2.0)).collect();
            let mat = Mat::from_vec(1, 6, logits.clone());
            let theta = softmax_rows(&mat);
            let total: f64 = logits.iter().map(|z| z.exp()).sum();
            for (d, &z) in logits.iter().enumerate() {
                assert!((theta.get(0, d) - z.exp() / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_of_unconsumed_item_is_half() {
        let hyper = small_hyper(2, 3);
        let x = crate::ingest::SparseBinaryMatrix::from_pairs(2, 2, [(0, 0)]);
        let mut params = synth::random_params(2, 2, 2, 3, 4);
        params.b[1] = 0.0;
        let q = community_activation(&params, &hyper, &x, 1);
        for &value in &q {
            assert_eq!(value, 0.5);
        }
    }

    #[test]
    fn zero_gain_ignores_consumption() {
        let hyper = small_hyper(2, 3);
        let x = synth::random_matrix(6, 4, 0.5, 8);
        let mut params = synth::random_params(6, 4, 2, 3, 9);
        params.w[2] = 0.0;
        let q = community_activation(&params, &hyper, &x, 2);
        let expected = clamp_unit(sigmoid(params.b[2]), hyper.sigma_clamp);
        for &value in &q {
            assert!((value - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_matches_dense_sum_over_all_users() {
        let hyper = small_hyper(3, 4);
        let x = synth::random_matrix(12, 9, 0.3, 21);
        let params = synth::random_params(12, 9, 3, 4, 22);
        let theta = params.membership();
        for j in 0..9 {
            let fast = community_activation(&params, &hyper, &x, j);
            // dense evaluation with an explicit x_kj factor over all users
            let mut consumption = vec![0.0; 4];
            for k in 0..12 {
                let x_kj = if x.contains(k, j as u32) { 1.0 } else { 0.0 };
                for (c, &t) in consumption.iter_mut().zip(theta.row(k)) {
                    *c += x_kj * t * params.alpha[k];
                }
            }
            for d in 0..4 {
                let dense =
                    clamp_unit(sigmoid(params.w[j] * consumption[d] + params.b[j]), hyper.sigma_clamp);
                assert!((fast[d] - dense).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn activation_depends_only_on_its_column() {
        let hyper = small_hyper(2, 3);
        let base: Vec<(u32, u32)> = vec![(0, 0), (1, 0), (2, 1), (0, 2)];
        let x1 = crate::ingest::SparseBinaryMatrix::from_pairs(4, 3, base.clone());
        let mut extended = base;
        extended.push((3, 2)); // perturb column 2 only
        let x2 = crate::ingest::SparseBinaryMatrix::from_pairs(4, 3, extended);
        let params = synth::random_params(4, 3, 2, 3, 31);
        for j in [0usize, 1] {
            assert_eq!(
                community_activation(&params, &hyper, &x1, j),
                community_activation(&params, &hyper, &x2, j)
            );
        }
    }

    #[test]
    fn exposure_of_constant_activation_is_that_constant() {
        let theta = [0.25, 0.25, 0.25, 0.25];
        let q = [0.7, 0.7, 0.7, 0.7];
        assert!((exposure(&theta, &q) - 0.7).abs() < 1e-15);
        let one_hot = [0.0, 0.0, 1.0, 0.0];
        let q2 = [0.1, 0.2, 0.9, 0.4];
        assert_eq!(exposure(&one_hot, &q2), 0.9);
    }

    #[test]
    fn exposure_matches_scalar_loop() {
        let mut gen = rng::seeded(3);
        let theta: Vec<f64> = (0..8).map(|_| rng::unit(&mut gen)).collect();
        let q: Vec<f64> = (0..8).map(|_| rng::unit(&mut gen)).collect();
        let mut expected = 0.0;
        for d in 0..8 {
            expected += theta[d] * q[d];
        }
        assert!((exposure(&theta, &q) - expected).abs() < 1e-15);
    }

    #[test]
    fn predict_score_edge_cases() {
        let hyper = small_hyper(4, 2);
        let mut params = ModelParams::init(&hyper, 2, 2);
        for value in params.v.row_mut(0) {
            *value = 0.0;
        }
        assert_eq!(predict_score(&params, 0, 0), 0.0);
        assert_eq!(predict_score(&params, 1, 0), 0.0);

        let unit = 1.0 / (4.0f64).sqrt();
        params.u.row_mut(0).fill(unit);
        params.v.row_mut(1).fill(unit);
        assert!((predict_score(&params, 0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn objective_single_cell_at_clamp_ceiling() {
        // One positive cell, membership pinned to a single community, and
        // the activation saturated: only the unexposed branch survives.
        let hyper = small_hyper(1, 1);
        let x = crate::ingest::SparseBinaryMatrix::from_pairs(1, 1, [(0, 0)]);
        let params = ModelParams {
            beta: Mat::from_vec(1, 1, vec![0.0]),
            alpha: vec![1.0],
            w: vec![1.0],
            b: vec![100.0],
            u: Mat::from_vec(1, 1, vec![1.0]),
            v: Mat::from_vec(1, 1, vec![1.0]),
        };
        let j = objective_naive(&params, &hyper, &x);
        // what the clamp ceiling actually leaves over in f64
        let expected = (1.0 - (1.0 - hyper.sigma_clamp)) * (hyper.epsilon - 1.0).powi(2);
        assert!(
            ((j - expected) / expected).abs() < 1e-12,
            "J {j} vs {expected}"
        );
        let nominal = hyper.sigma_clamp * (1.0 - hyper.epsilon).powi(2);
        assert!(((j - nominal) / nominal).abs() < 1e-6, "J {j} vs {nominal}");
    }

    #[test]
    fn objective_bound_with_zero_factors_and_no_positives() {
        let hyper = small_hyper(3, 4);
        let x = crate::ingest::SparseBinaryMatrix::from_pairs(5, 6, []);
        let mut params = synth::random_params(5, 6, 3, 4, 17);
        params.u.as_mut_slice().fill(0.0);
        params.v.as_mut_slice().fill(0.0);
        let j = objective_naive(&params, &hyper, &x);
        let bound = 30.0 * hyper.epsilon * hyper.epsilon;
        assert!(j > 0.0 && j <= bound, "J {j} bound {bound}");

        // closed form at zero factors: eps^2 (nm - sum_j q_j . S_q)
        let cache = build_cache(&params, &hyper, &x).unwrap();
        let fast = objective_fast(&params, &hyper, &cache, &x);
        let mut gamma_total = 0.0;
        for jj in 0..6 {
            gamma_total += dot(cache.q.row(jj), &cache.s_q);
        }
        let closed = hyper.epsilon * hyper.epsilon * (30.0 - gamma_total);
        assert!((fast - closed).abs() < 1e-15);
        assert!(((j - fast) / j).abs() < 1e-12);
    }

    #[test]
    fn objective_fast_matches_naive_on_random_instance() {
        let hyper = small_hyper(4, 3);
        let x = synth::random_matrix(6, 7, 0.35, 51);
        let params = synth::random_params(6, 7, 4, 3, 52);
        let cache = build_cache(&params, &hyper, &x).unwrap();
        let naive = objective_naive(&params, &hyper, &x);
        let fast = objective_fast(&params, &hyper, &cache, &x);
        assert!(
            ((naive - fast) / naive).abs() < 1e-9,
            "naive {naive} fast {fast}"
        );
    }

    #[test]
    fn objective_fast_is_at_least_ten_times_faster_at_200() {
        use std::time::Instant;
        let hyper = small_hyper(8, 8);
        let x = synth::random_matrix(200, 200, 0.005, 61);
        let params = synth::random_params(200, 200, 8, 8, 62);
        let cache = build_cache(&params, &hyper, &x).unwrap();

        // warm up both paths
        let naive_value = objective_naive(&params, &hyper, &x);
        let fast_value = objective_fast(&params, &hyper, &cache, &x);
        assert!(((naive_value - fast_value) / naive_value).abs() < 1e-9);

        let reps_naive = 20;
        let start = Instant::now();
        let mut sink = 0.0;
        for _ in 0..reps_naive {
            sink += objective_naive(&params, &hyper, &x);
        }
        let naive_per_call = start.elapsed().as_secs_f64() / reps_naive as f64;

        let reps_fast = 400;
        let start = Instant::now();
        for _ in 0..reps_fast {
            sink += objective_fast(&params, &hyper, &cache, &x);
        }
        let fast_per_call = start.elapsed().as_secs_f64() / reps_fast as f64;
        assert!(sink.is_finite());

        let speedup = naive_per_call / fast_per_call;
        assert!(
            speedup >= 10.0,
            "expected >= 10x, measured {speedup:.1}x ({naive_per_call:.2e}s vs {fast_per_call:.2e}s)"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmax_rows_live_on_the_simplex(seed in 0u64..500) {
            let params = synth::random_params(10, 4, 2, 5, seed);
            let theta = params.membership();
            for i in 0..10 {
                let row = theta.row(i);
                prop_assert!(row.iter().all(|&t| t >= 0.0));
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_is_shift_invariant(seed in 0u64..500, shift in -30.0f64..30.0) {
            let params = synth::random_params(6, 3, 2, 4, seed);
            let base = params.membership();
            let mut shifted = params.beta.clone();
            for value in shifted.as_mut_slice() {
                *value += shift;
            }
            let moved = softmax_rows(&shifted);
            for i in 0..6 {
                for d in 0..4 {
                    prop_assert!((base.get(i, d) - moved.get(i, d)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn exposure_stays_in_clamp_range(seed in 0u64..500) {
            let hyper = small_hyper(3, 4);
            let x = synth::random_matrix(8, 6, 0.4, seed);
            let params = synth::random_params(8, 6, 3, 4, seed ^ 0x55);
            let theta = params.membership();
            for j in 0..6 {
                let q = community_activation(&params, &hyper, &x, j);
                for i in 0..8 {
                    let gamma = exposure(theta.row(i), &q);
                    prop_assert!(gamma >= hyper.sigma_clamp && gamma <= 1.0 - hyper.sigma_clamp);
                }
            }
        }

        #[test]
        fn objective_routes_agree(seed in 0u64..300) {
            let hyper = small_hyper(3, 3);
            let x = synth::random_matrix(9, 8, 0.3, seed);
            let params = synth::random_params(9, 8, 3, 3, seed ^ 0xbeef);
            let cache = build_cache(&params, &hyper, &x).unwrap();
            let naive = objective_naive(&params, &hyper, &x);
            let fast = objective_fast(&params, &hyper, &cache, &x);
            prop_assert!(((naive - fast) / naive).abs() < 1e-9);
        }
    }
}
