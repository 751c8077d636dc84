use log::warn;
use serde::Serialize;

use super::parallel::par_map;
use super::store::{EmbeddingStore, Pairing};
use crate::align::Similarity;
use crate::error::{Error, Result};
use crate::nn::dot;

/// Per-query ranks behind an MRR value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrrDetail {
    pub mrr: f64,
    pub n_queries: usize,
    pub n_skipped: usize,
    pub ranks: Vec<usize>,
}

fn check_dims(a: &EmbeddingStore, b: &EmbeddingStore) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "stores have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Rows widened to f64 with their Euclidean norms.
struct Prepared {
    rows: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Prepared {
    fn new(s: &EmbeddingStore) -> Self {
        let rows: Vec<Vec<f64>> = (0..s.len()).map(|i| s.row_f64(i)).collect();
        let norms = rows.iter().map(|r| dot(r, r).sqrt()).collect();
        Prepared { rows, norms }
    }
}

// Same arithmetic as `Similarity::score`, with the norms cached.
fn score(sim: Similarity, a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    match sim {
        Similarity::Dot => dot(a, b),
        Similarity::Cosine => {
            let d = na * nb;
            if d == 0.0 {
                0.0
            } else {
                dot(a, b) / d
            }
        }
    }
}

/// Mean reciprocal rank of each query's paired gallery item. The rank is one
/// plus the number of gallery items scoring strictly higher than the partner.
/// Queries without a pairing entry are skipped.
pub fn mrr_detail(
    queries: &EmbeddingStore,
    gallery: &EmbeddingStore,
    pairing: &Pairing,
    sim: Similarity,
) -> Result<MrrDetail> {
    check_dims(queries, gallery)?;
    pairing.validate(gallery)?;
    let targets: Vec<(usize, usize)> = queries
        .ids()
        .iter()
        .enumerate()
        .filter_map(|(qi, id)| pairing.get(id).map(|g| (qi, gallery.index_of(g).expect("validated"))))
        .collect();
    let n_skipped = queries.len() - targets.len();
    if n_skipped > 0 {
        warn!("{n_skipped} queries have no pairing entry and are skipped");
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no query has a paired gallery item".into()));
    }
    let q = Prepared::new(queries);
    let g = Prepared::new(gallery);
    let ranks = par_map(&targets, |_, &(qi, gi)| {
        let (qr, qn) = (&q.rows[qi], q.norms[qi]);
        let target = score(sim, qr, qn, &g.rows[gi], g.norms[gi]);
        1 + g
            .rows
            .iter()
            .zip(&g.norms)
            .filter(|(r, &n)| score(sim, qr, qn, r, n) > target)
            .count()
    });
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64;
    Ok(MrrDetail {
        mrr,
        n_queries: ranks.len(),
        n_skipped,
        ranks,
    })
}

pub fn mrr(queries: &EmbeddingStore, gallery: &EmbeddingStore, pairing: &Pairing, sim: Similarity) -> Result<f64> {
    mrr_detail(queries, gallery, pairing, sim).map(|d| d.mrr)
}

/// Expected MRR of a uniformly random ranking over `n` items: H_n / n.
pub fn random_baseline_mrr(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("random baseline needs at least one item".into()));
    }
    let h: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
    Ok(h / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n_pairs: usize,
    pub n_skipped: usize,
}

/// Cosine similarity over the paired rows of `a` and `b`. `std` is the
/// population standard deviation.
pub fn pair_cosine_stats(a: &EmbeddingStore, b: &EmbeddingStore, pairing: &Pairing) -> Result<CosineStats> {
    check_dims(a, b)?;
    pairing.validate(b)?;
    let mut cos = Vec::new();
    let mut skipped = 0;
    for (qi, id) in a.ids().iter().enumerate() {
        let Some(gi) = pairing.get(id).and_then(|g| b.index_of(g)) else {
            continue;
        };
        let (x, y) = (a.row_f64(qi), b.row_f64(gi));
        let d = dot(&x, &x).sqrt() * dot(&y, &y).sqrt();
        if d == 0.0 {
            warn!("pair {id:?} has a zero-norm vector and is skipped");
            skipped += 1;
            continue;
        }
        cos.push((dot(&x, &y) / d).clamp(-1.0, 1.0));
    }
    if cos.is_empty() {
        return Err(Error::InvalidArgument("no usable pairs".into()));
    }
    let n = cos.len() as f64;
    let mean = cos.iter().sum::<f64>() / n;
    let var = cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(CosineStats {
        mean,
        std: var.sqrt(),
        min: cos.iter().copied().fold(f64::INFINITY, f64::min),
        max: cos.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n_pairs: cos.len(),
        n_skipped: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// The `k` best gallery items for every query, best first; equal scores keep
/// gallery order.
pub fn top_k(
    queries: &EmbeddingStore,
    gallery: &EmbeddingStore,
    k: usize,
    sim: Similarity,
) -> Result<Vec<(String, Vec<Hit>)>> {
    check_dims(queries, gallery)?;
    let q = Prepared::new(queries);
    let g = Prepared::new(gallery);
    let idx: Vec<usize> = (0..queries.len()).collect();
    Ok(par_map(&idx, |_, &qi| {
        let mut scored: Vec<(usize, f64)> = (0..gallery.len())
            .map(|gi| (gi, score(sim, &q.rows[qi], q.norms[qi], &g.rows[gi], g.norms[gi])))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let hits = scored
            .into_iter()
            .take(k)
            .map(|(gi, s)| Hit {
                id: gallery.ids()[gi].clone(),
                score: s,
            })
            .collect();
        (queries.ids()[qi].clone(), hits)
    }))
}
