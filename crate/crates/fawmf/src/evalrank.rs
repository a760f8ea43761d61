//! Top-K recommendation and ranking metrics.
//!
//! Candidate lists always exclude the user's training positives. Ties are
//! broken by ascending item id, so every ranking is a pure function of the
//! scores. Precision, recall, and NDCG read the top-K prefix; MRR sums
//! reciprocal ranks of all test items over the full ranking.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::SparseBinaryMatrix;
use crate::mat::dot;
use crate::model::ModelParams;

/// Top-K recommendations for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: u32,
    /// Item ids, best first.
    pub items: Vec<u32>,
    /// Matching scores, non-increasing.
    pub scores: Vec<f64>,
    /// Set when fewer than the requested number of items were available.
    pub short: bool,
}

/// All unmasked items sorted by (score descending, id ascending).
pub(crate) fn ranked_candidates(scores: &[f64], masked: &[u32]) -> Vec<u32> {
    let mut next_masked = 0;
    let mut ids: Vec<u32> = Vec::with_capacity(scores.len() - masked.len());
    for j in 0..scores.len() as u32 {
        if next_masked < masked.len() && masked[next_masked] == j {
            next_masked += 1;
        } else {
            ids.push(j);
        }
    }
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    ids
}

fn take_top(user: u32, ranking: Vec<u32>, scores: &[f64], k_rec: usize) -> RankedList {
    let short = ranking.len() < k_rec;
    let items: Vec<u32> = ranking.into_iter().take(k_rec).collect();
    let list_scores = items.iter().map(|&j| scores[j as usize]).collect();
    RankedList {
        user,
        items,
        scores: list_scores,
        short,
    }
}

/// Score every item with `u_i . v_j`, mask the user's training positives,
/// and keep the best `k_rec`.
pub fn top_k(
    params: &ModelParams,
    train: &SparseBinaryMatrix,
    user: u32,
    k_rec: usize,
) -> RankedList {
    assert!(k_rec >= 1);
    let u_i = params.u.row(user as usize);
    let scores: Vec<f64> = (0..params.n_items()).map(|j| dot(u_i, params.v.row(j))).collect();
    let ranking = ranked_candidates(&scores, train.row(user as usize));
    take_top(user, ranking, &scores, k_rec)
}

/// Popularity recommender: same masking and tie rules with the global
/// consumption count as the score.
pub fn itempop_recommend(
    popularity: &[u32],
    train: &SparseBinaryMatrix,
    user: u32,
    k_rec: usize,
) -> RankedList {
    assert!(k_rec >= 1);
    let scores: Vec<f64> = popularity.iter().map(|&p| f64::from(p)).collect();
    let ranking = ranked_candidates(&scores, train.row(user as usize));
    take_top(user, ranking, &scores, k_rec)
}

fn is_consumed(consumed: &[u32], item: u32) -> bool {
    consumed.binary_search(&item).is_ok()
}

/// Fraction of recommended items consumed, and of consumed items
/// recommended. `consumed` must be non-empty and sorted.
pub fn precision_recall_at_k(rec: &RankedList, consumed: &[u32], k: usize) -> Result<(f64, f64)> {
    if consumed.is_empty() {
        return Err(Error::Domain(
            "user has no consumed items; exclude upstream".into(),
        ));
    }
    let cut = rec.items.len().min(k);
    let hits = rec.items[..cut]
        .iter()
        .filter(|&&j| is_consumed(consumed, j))
        .count();
    Ok((hits as f64 / cut as f64, hits as f64 / consumed.len() as f64))
}

/// Discounted gain of the hits against the best achievable ordering.
pub fn ndcg_at_k(rec: &RankedList, consumed: &[u32], k: usize) -> Result<f64> {
    if consumed.is_empty() {
        return Err(Error::Domain(
            "user has no consumed items; exclude upstream".into(),
        ));
    }
    let cut = rec.items.len().min(k);
    let mut dcg = 0.0;
    for (pos, &j) in rec.items[..cut].iter().enumerate() {
        if is_consumed(consumed, j) {
            dcg += 1.0 / ((pos + 2) as f64).log2(); // rank = pos + 1
        }
    }
    let ideal = consumed.len().min(k);
    let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// Sum of reciprocal ranks of every consumed item in the full ranking.
pub fn mrr(full_ranking: &[u32], consumed: &[u32]) -> Result<f64> {
    let mut remaining = consumed.len();
    let mut total = 0.0;
    for (pos, &j) in full_ranking.iter().enumerate() {
        if is_consumed(consumed, j) {
            total += 1.0 / (pos + 1) as f64;
            remaining -= 1;
            if remaining == 0 {
                break;
            }
        }
    }
    if remaining > 0 {
        return Err(Error::Domain(
            "consumed item missing from the ranking".into(),
        ));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub user: u32,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

/// Averages over the users that had test items.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub users_evaluated: usize,
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "metric,k,value")?;
        writeln!(out, "precision,{},{:.6}", self.k, self.precision)?;
        writeln!(out, "recall,{},{:.6}", self.k, self.recall)?;
        writeln!(out, "ndcg,{},{:.6}", self.k, self.ndcg)?;
        writeln!(out, "mrr,,{:.6}", self.mrr)?;
        writeln!(out, "users_evaluated,,{}", self.users_evaluated)
    }

    pub fn write_per_user_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "user,precision,recall,ndcg,mrr")?;
        for u in &self.per_user {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                u.user, u.precision, u.recall, u.ndcg, u.mrr
            )?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "precision@{k}={:.6}\nrecall@{k}={:.6}\nndcg@{k}={:.6}\nmrr={:.6}\nusers_evaluated={}\n",
            self.precision,
            self.recall,
            self.ndcg,
            self.mrr,
            self.users_evaluated,
            k = self.k
        )
    }
}

fn evaluate_by<F>(
    score_user: F,
    n_users: usize,
    k: usize,
    train: &SparseBinaryMatrix,
    test: &SparseBinaryMatrix,
) -> Result<MetricsReport>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    assert!(k >= 1);
    if train.n_items() != test.n_items() || train.n_users() != test.n_users() {
        return Err(Error::Domain("train/test shapes differ".into()));
    }

    let per_user: Vec<Result<Option<UserMetrics>>> = (0..n_users)
        .into_par_iter()
        .map(|i| {
            let consumed = test.row(i);
            if consumed.is_empty() {
                return Ok(None);
            }
            let scores = score_user(i);
            let ranking = ranked_candidates(&scores, train.row(i));
            let top = take_top(i as u32, ranking.clone(), &scores, k);
            let (precision, recall) = precision_recall_at_k(&top, consumed, k)?;
            let ndcg = ndcg_at_k(&top, consumed, k)?;
            let mrr = mrr(&ranking, consumed)?;
            Ok(Some(UserMetrics {
                user: i as u32,
                precision,
                recall,
                ndcg,
                mrr,
            }))
        })
        .collect();

    let mut users = Vec::new();
    for entry in per_user {
        if let Some(metrics) = entry? {
            users.push(metrics);
        }
    }
    if users.is_empty() {
        return Err(Error::Domain("no user has test items to evaluate".into()));
    }

    let count = users.len() as f64;
    Ok(MetricsReport {
        k,
        precision: users.iter().map(|u| u.precision).sum::<f64>() / count,
        recall: users.iter().map(|u| u.recall).sum::<f64>() / count,
        ndcg: users.iter().map(|u| u.ndcg).sum::<f64>() / count,
        mrr: users.iter().map(|u| u.mrr).sum::<f64>() / count,
        users_evaluated: users.len(),
        per_user: users,
    })
}

/// Evaluate a trained model on one fold.
pub fn evaluate(
    params: &ModelParams,
    train: &SparseBinaryMatrix,
    test: &SparseBinaryMatrix,
    k: usize,
) -> Result<MetricsReport> {
    evaluate_by(
        |i| {
            let u_i = params.u.row(i);
            (0..params.n_items()).map(|j| dot(u_i, params.v.row(j))).collect()
        },
        params.n_users(),
        k,
        train,
        test,
    )
}

/// Evaluate the popularity baseline on one fold.
pub fn evaluate_itempop(
    popularity: &[u32],
    train: &SparseBinaryMatrix,
    test: &SparseBinaryMatrix,
    k: usize,
) -> Result<MetricsReport> {
    let scores: Vec<f64> = popularity.iter().map(|&p| f64::from(p)).collect();
    evaluate_by(|_| scores.clone(), train.n_users(), k, train, test)
}
