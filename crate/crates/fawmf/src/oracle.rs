//! Reference gradients and gradient checking.
//!
//! [`gradients_naive`] evaluates every gradient sum literally over all
//! `(i, j)` cells, with an explicit `x_ij` factor and no caching. It is the
//! correctness oracle for [`crate::fbgd::gradients_fast`]: the two compute
//! mathematically identical quantities by different summation orders, so
//! they must agree to floating-point reassociation error. Central finite
//! differences of the naive objective certify the analytic derivation
//! itself, including the softmax Jacobian behind the membership logits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbgd::{build_cache, gradients_fast, GradientSet};
use crate::ingest::SparseBinaryMatrix;
use crate::mat::{axpy, dot, Mat};
use crate::model::{
    clamp_unit, objective_naive, sigmoid, HyperParams, ModelParams,
};
use crate::rng;

/// Largest `n * m` the all-pairs routines will enumerate.
pub const NAIVE_PAIR_GUARD: usize = 1_000_000;

fn guard(params: &ModelParams) -> Result<()> {
    let cells = params.n_users() * params.n_items();
    if cells > NAIVE_PAIR_GUARD {
        return Err(Error::Domain(format!(
            "naive path refuses {cells} cells (guard {NAIVE_PAIR_GUARD})"
        )));
    }
    Ok(())
}

fn dense01(x: &SparseBinaryMatrix) -> Vec<f64> {
    let m = x.n_items();
    let mut dense = vec![0.0; x.n_users() * m];
    for (i, j) in x.iter_pairs() {
        dense[i as usize * m + j as usize] = 1.0;
    }
    dense
}

/// All six gradient groups by direct summation over every cell.
pub fn gradients_naive(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
) -> Result<GradientSet> {
    guard(params)?;
    let n = params.n_users();
    let m = params.n_items();
    let d = params.communities();
    let eps = hyper.epsilon;
    let xd = dense01(x);

    let theta = params.membership();

    // Community-weighted consumption and activation, with the x factor
    // written out over all users.
    let mut consumption = Mat::zeros(m, d);
    consumption
        .par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            for i in 0..n {
                let x_ij = xd[i * m + j];
                axpy(x_ij * params.alpha[i], theta.row(i), row);
            }
        });
    let mut q = Mat::zeros(m, d);
    q.par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            for (value, &c) in row.iter_mut().zip(consumption.row(j)) {
                *value = clamp_unit(sigmoid(params.w[j] * c + params.b[j]), hyper.sigma_clamp);
            }
        });

    // dJ/dq_j, summed over every user.
    let mut djdq = Mat::zeros(m, d);
    djdq.par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            let v_j = params.v.row(j);
            for i in 0..n {
                let x_ij = xd[i * m + j];
                let score = dot(params.u.row(i), v_j);
                let weight = score * score - 2.0 * x_ij * (score - eps) - eps * eps;
                axpy(weight, theta.row(i), row);
            }
        });

    let mut grads = GradientSet::zeros_like(params);

    // dJ/dtheta_i over every item, then the softmax Jacobian.
    let mut d_theta = Mat::zeros(n, d);
    d_theta
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let u_i = params.u.row(i);
            let alpha_i = params.alpha[i];
            for j in 0..m {
                let x_ij = xd[i * m + j];
                let q_j = q.row(j);
                let score = dot(u_i, params.v.row(j));
                let weight = score * score - 2.0 * x_ij * (score - eps) - eps * eps;
                axpy(weight, q_j, row);
                let scale = x_ij * alpha_i * params.w[j];
                for ((value, &qd), &g) in row.iter_mut().zip(q_j).zip(djdq.row(j)) {
                    *value += scale * qd * (1.0 - qd) * g;
                }
            }
        });
    grads
        .beta
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let theta_i = theta.row(i);
            let dt = d_theta.row(i);
            let inner = dot(theta_i, dt);
            for ((value, &t), &g) in row.iter_mut().zip(theta_i).zip(dt) {
                *value = t * (g - inner);
            }
        });

    grads
        .alpha
        .par_iter_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(out, i)| {
            let theta_i = theta.row(i);
            let mut acc = 0.0;
            for j in 0..m {
                let x_ij = xd[i * m + j];
                let q_j = q.row(j);
                let g_j = djdq.row(j);
                let mut inner = 0.0;
                for dd in 0..d {
                    inner += g_j[dd] * q_j[dd] * (1.0 - q_j[dd]) * theta_i[dd];
                }
                acc += x_ij * params.w[j] * inner;
            }
            *out = acc;
        });

    grads
        .w
        .par_iter_mut()
        .zip(grads.b.par_iter_mut())
        .zip((0..m).into_par_iter())
        .for_each(|((w_out, b_out), j)| {
            let q_j = q.row(j);
            let c_j = consumption.row(j);
            let g_j = djdq.row(j);
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

    grads
        .u
        .par_rows_mut()
        .zip((0..n).into_par_iter())
        .for_each(|(row, i)| {
            let u_i = params.u.row(i);
            let theta_i = theta.row(i);
            for j in 0..m {
                let x_ij = xd[i * m + j];
                let v_j = params.v.row(j);
                let gamma = dot(theta_i, q.row(j));
                let score = dot(u_i, v_j);
                axpy(2.0 * gamma * (score - x_ij), v_j, row);
            }
        });

    grads
        .v
        .par_rows_mut()
        .zip((0..m).into_par_iter())
        .for_each(|(row, j)| {
            let v_j = params.v.row(j);
            let q_j = q.row(j);
            for i in 0..n {
                let x_ij = xd[i * m + j];
                let u_i = params.u.row(i);
                let gamma = dot(theta.row(i), q_j);
                let score = dot(u_i, v_j);
                axpy(2.0 * gamma * (score - x_ij), u_i, row);
            }
        });

    Ok(grads)
}

/// One parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    Beta(usize, usize),
    Alpha(usize),
    W(usize),
    B(usize),
    U(usize, usize),
    V(usize, usize),
}

fn bump(params: &mut ModelParams, coord: ParamCoord, delta: f64) {
    match coord {
        ParamCoord::Beta(i, dd) => {
            let v = params.beta.get(i, dd);
            params.beta.set(i, dd, v + delta);
        }
        ParamCoord::Alpha(i) => params.alpha[i] += delta,
        ParamCoord::W(j) => params.w[j] += delta,
        ParamCoord::B(j) => params.b[j] += delta,
        ParamCoord::U(i, kk) => {
            let v = params.u.get(i, kk);
            params.u.set(i, kk, v + delta);
        }
        ParamCoord::V(j, kk) => {
            let v = params.v.get(j, kk);
            params.v.set(j, kk, v + delta);
        }
    }
}

/// Central difference of the exact objective along one coordinate.
/// Perturbing a logit re-derives the membership through the softmax, so
/// this check covers the softmax Jacobian end to end.
pub fn finite_diff(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    coord: ParamCoord,
    h: f64,
) -> Result<f64> {
    guard(params)?;
    assert!(h > 0.0, "step must be positive");
    let mut plus = params.clone();
    bump(&mut plus, coord, h);
    let mut minus = params.clone();
    bump(&mut minus, coord, -h);
    Ok((objective_naive(&plus, hyper, x) - objective_naive(&minus, hyper, x)) / (2.0 * h))
}

/// Tolerances for [`grad_check`]. Relative errors use the denominator
/// `max(|reference|, 1e-12)`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Fast vs naive: same arithmetic, different association.
    pub fast_vs_naive: f64,
    /// Finite difference vs naive: truncation-dominated.
    pub fd_vs_naive: f64,
    pub fd_step: f64,
    pub fd_samples_per_group: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            fast_vs_naive: 1e-10,
            fd_vs_naive: 1e-4,
            fd_step: 1e-5,
            fd_samples_per_group: 200,
        }
    }
}

pub const REL_ERR_FLOOR: f64 = 1e-12;

#[inline]
pub fn rel_err(candidate: f64, reference: f64) -> f64 {
    (candidate - reference).abs() / reference.abs().max(REL_ERR_FLOOR)
}

/// Error summary for one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: &'static str,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat index of the worst entry within the group.
    pub worst_index: usize,
    pub checked: usize,
}

/// Entry-wise comparison of two gradient sets.
pub fn compare_gradient_sets(reference: &GradientSet, candidate: &GradientSet) -> Vec<GroupReport> {
    reference
        .groups()
        .iter()
        .zip(candidate.groups())
        .map(|((name, ref_values), (_, cand_values))| {
            let mut report = GroupReport {
                group: name,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
                worst_index: 0,
                checked: ref_values.len(),
            };
            for (idx, (&r, &c)) in ref_values.iter().zip(cand_values).enumerate() {
                let abs = (c - r).abs();
                let rel = rel_err(c, r);
                report.max_abs_err = report.max_abs_err.max(abs);
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_index = idx;
                }
            }
            report
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub fast_vs_naive: Vec<GroupReport>,
    pub fd_vs_naive: Vec<GroupReport>,
    pub tolerances: Tolerances,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: {}\n",
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out.push_str(&format!(
            "tolerances: fast_vs_naive={:e} fd_vs_naive={:e} (h={:e}, <={} coords per group)\n",
            self.tolerances.fast_vs_naive,
            self.tolerances.fd_vs_naive,
            self.tolerances.fd_step,
            self.tolerances.fd_samples_per_group
        ));
        out.push_str("[fast vs naive]\n");
        for g in &self.fast_vs_naive {
            out.push_str(&format!(
                "  {:<6} max_abs={:<12.3e} max_rel={:<12.3e} worst=#{:<6} checked={}\n",
                g.group, g.max_abs_err, g.max_rel_err, g.worst_index, g.checked
            ));
        }
        out.push_str("[finite difference vs naive]\n");
        for g in &self.fd_vs_naive {
            out.push_str(&format!(
                "  {:<6} max_abs={:<12.3e} max_rel={:<12.3e} worst=#{:<6} checked={}\n",
                g.group, g.max_abs_err, g.max_rel_err, g.worst_index, g.checked
            ));
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("pass={}\n", self.pass));
        out.push_str(&format!(
            "tol.fast_vs_naive={:e}\ntol.fd_vs_naive={:e}\ntol.fd_step={:e}\ntol.fd_samples={}\n",
            self.tolerances.fast_vs_naive,
            self.tolerances.fd_vs_naive,
            self.tolerances.fd_step,
            self.tolerances.fd_samples_per_group
        ));
        for (section, groups) in [
            ("fast_naive", &self.fast_vs_naive),
            ("fd_naive", &self.fd_vs_naive),
        ] {
            for g in groups {
                out.push_str(&format!(
                    "{section}.{}.max_abs={:e}\n{section}.{}.max_rel={:e}\n{section}.{}.worst={}\n",
                    g.group, g.max_abs_err, g.group, g.max_rel_err, g.group, g.worst_index
                ));
            }
        }
        out
    }
}

fn coords_of_group(group: &str, params: &ModelParams, flat: usize) -> ParamCoord {
    match group {
        "beta" => ParamCoord::Beta(flat / params.communities(), flat % params.communities()),
        "alpha" => ParamCoord::Alpha(flat),
        "w" => ParamCoord::W(flat),
        "b" => ParamCoord::B(flat),
        "u" => ParamCoord::U(flat / params.latent_dim(), flat % params.latent_dim()),
        "v" => ParamCoord::V(flat / params.latent_dim(), flat % params.latent_dim()),
        other => unreachable!("unknown group {other}"),
    }
}

/// Run both certifications: fast-vs-naive over every entry, and central
/// finite differences of the exact objective on sampled coordinates.
pub fn grad_check(
    params: &ModelParams,
    hyper: &HyperParams,
    x: &SparseBinaryMatrix,
    tolerances: Tolerances,
    seed: u64,
) -> Result<GradCheckReport> {
    guard(params)?;
    let naive = gradients_naive(params, hyper, x)?;
    let cache = build_cache(params, hyper, x)?;
    let fast = gradients_fast(params, hyper, &cache, x)?;

    let fast_vs_naive = compare_gradient_sets(&naive, &fast);

    let mut gen = rng::seeded(seed);
    let mut fd_vs_naive = Vec::new();
    for (name, values) in naive.groups() {
        let mut indices: Vec<usize> = (0..values.len()).collect();
        rng::shuffle(&mut gen, &mut indices);
        indices.truncate(tolerances.fd_samples_per_group);

        let mut report = GroupReport {
            group: name,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            worst_index: 0,
            checked: indices.len(),
        };
        for &flat in &indices {
            let coord = coords_of_group(name, params, flat);
            let fd = finite_diff(params, hyper, x, coord, tolerances.fd_step)?;
            let abs = (fd - values[flat]).abs();
            let rel = rel_err(fd, values[flat]);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = flat;
            }
        }
        fd_vs_naive.push(report);
    }

    let pass = fast_vs_naive
        .iter()
        .all(|g| g.max_rel_err <= tolerances.fast_vs_naive)
        && fd_vs_naive
            .iter()
            .all(|g| g.max_rel_err <= tolerances.fd_vs_naive);

    Ok(GradCheckReport {
        fast_vs_naive,
        fd_vs_naive,
        tolerances,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::synth;

    fn hyper(k: usize, d: usize) -> HyperParams {
        HyperParams {
            latent_dim: k,
            communities: d,
            ..HyperParams::default()
        }
    }

    #[test]
    fn guard_rejects_large_instances() {
        let hy = hyper(2, 2);
        let x = SparseBinaryMatrix::from_pairs(1001, 1000, []);
        let params = ModelParams::init(&hy, 1001, 1000);
        assert!(matches!(
            gradients_naive(&params, &hy, &x),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn naive_matches_fast_closed_forms_at_zero() {
        let hy = hyper(3, 2);
        let x = SparseBinaryMatrix::from_pairs(4, 5, []);
        let mut params = synth::random_params(4, 5, 3, 2, 71);
        params.u.as_mut_slice().fill(0.0);
        params.v.as_mut_slice().fill(0.0);
        let grads = gradients_naive(&params, &hy, &x).unwrap();
        assert!(grads.u.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.v.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.alpha.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn naive_agrees_with_fast_on_random_instance() {
        let hy = hyper(4, 3);
        let x = synth::random_matrix(14, 11, 0.25, 73);
        let params = synth::random_params(14, 11, 4, 3, 74);
        let naive = gradients_naive(&params, &hy, &x).unwrap();
        let cache = build_cache(&params, &hy, &x).unwrap();
        let fast = gradients_fast(&params, &hy, &cache, &x).unwrap();
        for report in compare_gradient_sets(&naive, &fast) {
            assert!(
                report.max_rel_err <= 1e-10,
                "{}: rel {} at #{}",
                report.group,
                report.max_rel_err,
                report.worst_index
            );
        }
    }

    #[test]
    fn finite_diff_is_zero_when_objective_ignores_u() {
        let hy = hyper(2, 2);
        let x = SparseBinaryMatrix::from_pairs(3, 3, []);
        let mut params = synth::random_params(3, 3, 2, 2, 75);
        params.v.as_mut_slice().fill(0.0);
        let fd = finite_diff(&params, &hy, &x, ParamCoord::U(1, 0), 1e-5).unwrap();
        assert!(fd.abs() < 1e-9, "fd {fd}");
    }

    #[test]
    fn finite_diff_exact_on_clamped_quadratic() {
        // Single positive cell with a saturated activation: the objective
        // is exactly quadratic in u, so the central difference equals the
        // analytic slope up to rounding.
        let hy = hyper(1, 1);
        let x = SparseBinaryMatrix::from_pairs(1, 1, [(0, 0)]);
        let params = ModelParams {
            beta: Mat::from_vec(1, 1, vec![0.0]),
            alpha: vec![1.0],
            w: vec![1.0],
            b: vec![100.0],
            u: Mat::from_vec(1, 1, vec![0.37]),
            v: Mat::from_vec(1, 1, vec![0.81]),
        };
        let gamma = 1.0 - hy.sigma_clamp;
        let expected = 2.0 * gamma * (0.37 * 0.81 - 1.0) * 0.81;
        let fd = finite_diff(&params, &hy, &x, ParamCoord::U(0, 0), 1e-5).unwrap();
        assert!((fd - expected).abs() < 1e-6, "fd {fd} vs {expected}");
    }

    #[test]
    fn finite_diff_certifies_all_groups_on_random_instance() {
        let hy = hyper(3, 3);
        let x = synth::random_matrix(5, 6, 0.3, 77);
        let params = synth::random_params(5, 6, 3, 3, 78);
        let naive = gradients_naive(&params, &hy, &x).unwrap();
        for (name, values) in naive.groups() {
            for flat in 0..values.len() {
                let coord = coords_of_group(name, &params, flat);
                let fd = finite_diff(&params, &hy, &x, coord, 1e-5).unwrap();
                let rel = rel_err(fd, values[flat]);
                assert!(
                    rel <= 1e-4,
                    "{name}#{flat}: fd {fd} vs naive {} (rel {rel})",
                    values[flat]
                );
            }
        }
    }

    #[test]
    fn grad_check_passes_on_fresh_instance() {
        let hy = hyper(3, 2);
        let x = synth::random_matrix(8, 7, 0.3, 79);
        let params = synth::random_params(8, 7, 3, 2, 80);
        let report = grad_check(&params, &hy, &x, Tolerances::default(), 81).unwrap();
        assert!(report.pass, "{}", report.to_text());
    }

    #[test]
    fn grad_check_passes_on_minimal_instance() {
        let hy = hyper(1, 1);
        let x = SparseBinaryMatrix::from_pairs(2, 2, [(0, 0), (1, 1)]);
        let params = synth::random_params(2, 2, 1, 1, 83);
        let report = grad_check(&params, &hy, &x, Tolerances::default(), 84).unwrap();
        assert!(report.pass, "{}", report.to_text());
    }

    #[test]
    fn corrupted_alpha_gradient_is_detected() {
        let hy = hyper(3, 2);
        let x = synth::random_matrix(8, 7, 0.3, 85);
        let params = synth::random_params(8, 7, 3, 2, 86);
        let naive = gradients_naive(&params, &hy, &x).unwrap();
        let mut corrupted = naive.clone();
        corrupted.alpha.rotate_right(1); // off-by-one user
        let reports = compare_gradient_sets(&naive, &corrupted);
        let alpha = reports.iter().find(|g| g.group == "alpha").unwrap();
        assert!(alpha.max_rel_err > 1e-10);
        for g in &reports {
            if g.group != "alpha" {
                assert!(g.max_rel_err <= 1e-10, "{} unexpectedly failed", g.group);
            }
        }
    }

    #[test]
    fn report_serializations_round_key_fields() {
        let hy = hyper(2, 2);
        let x = synth::random_matrix(5, 5, 0.3, 87);
        let params = synth::random_params(5, 5, 2, 2, 88);
        let report = grad_check(&params, &hy, &x, Tolerances::default(), 89).unwrap();
        let text = report.to_text();
        assert!(text.contains("gradient check: PASS"));
        assert!(text.contains("beta"));
        let kv = report.to_kv();
        assert!(kv.contains("pass=true"));
        assert!(kv.contains("fast_naive.alpha.max_rel="));
        assert!(kv.contains("fd_naive.v.max_rel="));
    }
}
