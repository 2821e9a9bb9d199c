//! Retrieval metrics over query and gallery feature sets.
//!
//! Protocol: Euclidean distance on L2-normalized features; gallery entries
//! sharing both identity and camera with the query are excluded; queries
//! with no remaining correct match are dropped and counted. Ties in distance
//! are broken by gallery storage order (stable sort).

use crate::error::MetricError;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Identity and camera of one query or gallery row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalMeta {
    pub person_id: String,
    pub camera_id: u32,
}

/// Per-query diagnostics, exported alongside reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryDiagnostic {
    pub person_id: String,
    pub camera_id: u32,
    /// 1-based rank of the first correct gallery entry.
    pub first_correct_rank: usize,
    pub average_precision: f64,
}

/// Evaluation result for one experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rank -> cumulative match accuracy, non-decreasing in rank.
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    /// Answerable queries actually scored.
    pub num_queries: usize,
    pub num_gallery: usize,
    /// Queries without any valid correct gallery entry.
    pub num_dropped_queries: usize,
    /// Free-form provenance notes (training set, recipe, seed).
    pub config_echo: BTreeMap<String, String>,
}

fn check_inputs(
    query: &Tensor,
    query_meta: &[RetrievalMeta],
    gallery: &Tensor,
    gallery_meta: &[RetrievalMeta],
) -> Result<(usize, usize, usize), MetricError> {
    let qd = query.dims();
    let gd = gallery.dims();
    assert_eq!(qd.len(), 2, "query features must be [n, d]");
    assert_eq!(gd.len(), 2, "gallery features must be [n, d]");
    if gd[0] == 0 {
        return Err(MetricError::EmptyGallery);
    }
    if qd[1] != gd[1] {
        return Err(MetricError::DimensionMismatch {
            query_dim: qd[1],
            gallery_dim: gd[1],
        });
    }
    if query_meta.len() != qd[0] {
        return Err(MetricError::MetaMismatch {
            meta: query_meta.len(),
            rows: qd[0],
        });
    }
    if gallery_meta.len() != gd[0] {
        return Err(MetricError::MetaMismatch {
            meta: gallery_meta.len(),
            rows: gd[0],
        });
    }
    Ok((qd[0], gd[0], qd[1]))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The ranked valid gallery for one query: indices sorted by distance with
/// same-id same-camera entries removed. Stable under distance ties.
fn ranked_valid(
    q_row: &[f64],
    q_meta: &RetrievalMeta,
    gallery: &Tensor,
    gallery_meta: &[RetrievalMeta],
    dim: usize,
) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = gallery_meta
        .iter()
        .enumerate()
        .filter(|(_, m)| !(m.person_id == q_meta.person_id && m.camera_id == q_meta.camera_id))
        .map(|(j, _)| {
            let row = &gallery.data()[j * dim..(j + 1) * dim];
            (j, squared_distance(q_row, row))
        })
        .collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));
    order.into_iter().map(|(j, _)| j).collect()
}

/// Both metrics in one pass, with per-query diagnostics.
pub fn evaluate_retrieval(
    query: &Tensor,
    query_meta: &[RetrievalMeta],
    gallery: &Tensor,
    gallery_meta: &[RetrievalMeta],
    ranks: &[usize],
) -> Result<(BTreeMap<usize, f64>, f64, Vec<QueryDiagnostic>, usize), MetricError> {
    let (nq, _ng, dim) = check_inputs(query, query_meta, gallery, gallery_meta)?;
    let mut hits: BTreeMap<usize, usize> = ranks.iter().map(|&k| (k, 0)).collect();
    let mut diagnostics = Vec::new();
    let mut dropped = 0usize;
    let mut ap_sum = 0.0;
    for qi in 0..nq {
        let q_row = &query.data()[qi * dim..(qi + 1) * dim];
        let order = ranked_valid(q_row, &query_meta[qi], gallery, gallery_meta, dim);
        let total_correct = order
            .iter()
            .filter(|&&j| gallery_meta[j].person_id == query_meta[qi].person_id)
            .count();
        if total_correct == 0 {
            dropped += 1;
            continue;
        }
        let mut first_rank = 0usize;
        let mut correct_so_far = 0usize;
        let mut ap = 0.0;
        for (pos, &j) in order.iter().enumerate() {
            let rank = pos + 1;
            if gallery_meta[j].person_id == query_meta[qi].person_id {
                correct_so_far += 1;
                ap += correct_so_far as f64 / rank as f64;
                if first_rank == 0 {
                    first_rank = rank;
                }
            }
        }
        ap /= total_correct as f64;
        ap_sum += ap;
        for (&k, count) in hits.iter_mut() {
            if first_rank <= k {
                *count += 1;
            }
        }
        diagnostics.push(QueryDiagnostic {
            person_id: query_meta[qi].person_id.clone(),
            camera_id: query_meta[qi].camera_id,
            first_correct_rank: first_rank,
            average_precision: ap,
        });
    }
    let answerable = nq - dropped;
    let cmc = hits
        .into_iter()
        .map(|(k, c)| {
            let v = if answerable == 0 { 0.0 } else { c as f64 / answerable as f64 };
            (k, v)
        })
        .collect();
    let map = if answerable == 0 { 0.0 } else { ap_sum / answerable as f64 };
    Ok((cmc, map, diagnostics, dropped))
}

/// Cumulated match accuracy at the requested ranks.
pub fn cmc(
    query: &Tensor,
    query_meta: &[RetrievalMeta],
    gallery: &Tensor,
    gallery_meta: &[RetrievalMeta],
    ranks: &[usize],
) -> Result<BTreeMap<usize, f64>, MetricError> {
    evaluate_retrieval(query, query_meta, gallery, gallery_meta, ranks).map(|r| r.0)
}

/// Mean average precision over answerable queries.
pub fn mean_ap(
    query: &Tensor,
    query_meta: &[RetrievalMeta],
    gallery: &Tensor,
    gallery_meta: &[RetrievalMeta],
) -> Result<f64, MetricError> {
    evaluate_retrieval(query, query_meta, gallery, gallery_meta, &[]).map(|r| r.1)
}
