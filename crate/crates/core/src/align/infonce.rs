//! The contrastive objective.
//!
//! For text embeddings `zᵗ` and music embeddings `zᵐ` (row `i` of both is a
//! positive pair, every other row a negative):
//!
//! ```text
//! L = -(1/N) Σᵢ log( exp(sim(zᵢᵗ, zᵢᵐ)/τ) / Σⱼ exp(sim(zᵢᵗ, zⱼᵐ)/τ) )
//! ```
//!
//! Text rows are the anchors. With `symmetric` the loss is averaged with the
//! music-anchored transpose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
}

impl Similarity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Similarity::Dot),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::Config(format!(
                "unknown similarity {other:?} (expected dot or cosine)"
            ))),
        }
    }

    pub fn score(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::Dot => dot(a, b),
            Similarity::Cosine => {
                let d = dot(a, a).sqrt() * dot(b, b).sqrt();
                if d == 0.0 {
                    0.0
                } else {
                    dot(a, b) / d
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature_init: f64,
    pub learn_temperature: bool,
    pub similarity: Similarity,
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature_init: 0.07,
            learn_temperature: true,
            similarity: Similarity::Cosine,
            symmetric: false,
        }
    }
}

/// `N` positive pairs; row `i` of both matrices is the same item.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub text: Matrix,
    pub music: Matrix,
}

impl ContrastiveBatch {
    pub fn new(text: Matrix, music: Matrix) -> Result<Self> {
        if !text.same_shape(&music) {
            return Err(Error::DimensionMismatch(format!(
                "text batch is {}x{}, music batch is {}x{}",
                text.rows, text.cols, music.rows, music.cols
            )));
        }
        if text.rows < 2 {
            return Err(Error::DegenerateBatch(text.rows));
        }
        Ok(ContrastiveBatch { text, music })
    }

    pub fn len(&self) -> usize {
        self.text.rows
    }

    pub fn is_empty(&self) -> bool {
        self.text.rows == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_text: Matrix,
    pub grad_music: Matrix,
    pub grad_tau: f64,
    /// Similarity matrix `S[i][j] = sim(zᵢᵗ, zⱼᵐ)`.
    pub similarities: Matrix,
}

impl InfoNceOutput {
    /// Fraction of text anchors whose most similar music row is their pair.
    pub fn top1_accuracy(&self) -> f64 {
        let s = &self.similarities;
        let hits = (0..s.rows)
            .filter(|&i| {
                let row = s.row(i);
                row.iter().enumerate().all(|(j, &v)| j == i || v < row[i])
            })
            .count();
        hits as f64 / s.rows as f64
    }
}

/// Row-normalises `m`; returns the unit rows and the original norms.
fn normalize_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows);
    for r in 0..m.rows {
        let n = dot(m.row(r), m.row(r)).sqrt();
        if n == 0.0 {
            return Err(Error::InvalidArgument(format!("row {r} has zero norm")));
        }
        for v in out.row_mut(r) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient with respect to unit rows back through the normalisation.
fn normalize_backward(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut g = grad_unit.clone();
    for r in 0..unit.rows {
        let u = unit.row(r);
        let along = dot(u, grad_unit.row(r));
        for (gv, &uv) in g.row_mut(r).iter_mut().zip(u) {
            *gv = (*gv - uv * along) / norms[r];
        }
    }
    g
}

/// Loss and exact gradients. Log-sum-exp uses max subtraction.
pub fn info_nce(batch: &ContrastiveBatch, tau: f64, cfg: &ContrastiveConfig) -> Result<InfoNceOutput> {
    let n = batch.text.rows;
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    if !batch.text.same_shape(&batch.music) {
        return Err(Error::DimensionMismatch("text and music batches differ".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if !batch.text.is_finite() || !batch.music.is_finite() {
        return Err(Error::NonFinite("embeddings contain NaN or inf".into()));
    }

    let cosine = cfg.similarity == Similarity::Cosine;
    let (u, u_norms) = if cosine {
        normalize_rows(&batch.text)?
    } else {
        (batch.text.clone(), Vec::new())
    };
    let (v, v_norms) = if cosine {
        normalize_rows(&batch.music)?
    } else {
        (batch.music.clone(), Vec::new())
    };

    let s = u.matmul_nt(&v);
    let inv_n = 1.0 / n as f64;

    // dL/dlogits, with logits = S/τ
    let mut g = Matrix::zeros(n, n);
    let mut loss_rows = 0.0;
    for i in 0..n {
        let row: Vec<f64> = s.row(i).iter().map(|x| x / tau).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        loss_rows += lse - row[i];
        for j in 0..n {
            let p = (row[j] - lse).exp();
            g.set(i, j, inv_n * (p - if i == j { 1.0 } else { 0.0 }));
        }
    }
    let mut loss = loss_rows * inv_n;

    if cfg.symmetric {
        let mut gc = Matrix::zeros(n, n);
        let mut loss_cols = 0.0;
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| s.get(i, j) / tau).collect();
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = col.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            loss_cols += lse - col[j];
            for i in 0..n {
                let q = (col[i] - lse).exp();
                gc.set(i, j, inv_n * (q - if i == j { 1.0 } else { 0.0 }));
            }
        }
        loss = 0.5 * (loss + loss_cols * inv_n);
        for (a, b) in g.data.iter_mut().zip(&gc.data) {
            *a = 0.5 * (*a + b);
        }
    }

    let grad_tau = -g.data.iter().zip(&s.data).map(|(gv, sv)| gv * sv).sum::<f64>() / (tau * tau);
    let gs = g.scale(1.0 / tau);
    let gu = gs.matmul(&v);
    let gv = gs.matmul_tn(&u);
    let (grad_text, grad_music) = if cosine {
        (
            normalize_backward(&u, &u_norms, &gu),
            normalize_backward(&v, &v_norms, &gv),
        )
    } else {
        (gu, gv)
    };

    Ok(InfoNceOutput {
        loss,
        grad_text,
        grad_music,
        grad_tau,
        similarities: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    fn cfg(sim: Similarity, symmetric: bool) -> ContrastiveConfig {
        ContrastiveConfig {
            similarity: sim,
            symmetric,
            ..Default::default()
        }
    }

    /// Flattens (text, music, log τ) into one vector for finite differences.
    fn flat_loss(n: usize, d: usize, c: &ContrastiveConfig) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
        move |p: &[f64]| {
            let t = Matrix::from_vec(n, d, p[..n * d].to_vec()).unwrap();
            let m = Matrix::from_vec(n, d, p[n * d..2 * n * d].to_vec()).unwrap();
            let tau = p[2 * n * d].exp();
            let out = info_nce(&ContrastiveBatch::new(t, m).unwrap(), tau, c).unwrap();
            let mut g = out.grad_text.data.clone();
            g.extend(&out.grad_music.data);
            g.push(out.grad_tau * tau);
            (out.loss, g)
        }
    }

    #[test]
    fn identical_rows_give_log_n() {
        for n in [2usize, 4, 16] {
            let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
            let m = Matrix::from_rows(&vec![row; n]).unwrap();
            for tau in [0.01, 0.07, 1.0, 5.0] {
                for sim in [Similarity::Dot, Similarity::Cosine] {
                    let out = info_nce(&ContrastiveBatch::new(m.clone(), m.clone()).unwrap(), tau, &cfg(sim, false)).unwrap();
                    assert!((out.loss - (n as f64).ln()).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn identity_fixture_closed_form() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = info_nce(
            &ContrastiveBatch::new(eye.clone(), eye).unwrap(),
            1.0,
            &cfg(Similarity::Dot, false),
        )
        .unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((expected - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (n, d) = (8, 16);
        for sim in [Similarity::Dot, Similarity::Cosine] {
            for symmetric in [false, true] {
                let c = cfg(sim, symmetric);
                let mut p = random(n, d, 3).data;
                p.extend(random(n, d, 4).data);
                p.push(0.07f64.ln());
                if sim == Similarity::Dot {
                    p.last_mut().map(|t| *t = 1.0f64.ln());
                }
                let err = grad_check(flat_loss(n, d, &c), &p, 1e-6, 1000, 0);
                assert!(err < 1e-4, "{sim:?} symmetric={symmetric}: {err}");
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let one = random(1, 4, 0);
        assert!(matches!(ContrastiveBatch::new(one.clone(), one), Err(Error::DegenerateBatch(1))));
        let mut bad = random(3, 4, 1);
        bad.data[5] = f64::NAN;
        let batch = ContrastiveBatch { text: bad, music: random(3, 4, 2) };
        assert!(info_nce(&batch, 0.1, &ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn gradient_rows_follow_softmax_weights() {
        let (t, m) = (random(5, 3, 8), random(5, 3, 9));
        let tau = 0.5;
        let out = info_nce(&ContrastiveBatch::new(t.clone(), m.clone()).unwrap(), tau, &cfg(Similarity::Dot, false)).unwrap();
        let n = 5.0;
        for i in 0..5 {
            let logits: Vec<f64> = (0..5).map(|j| dot(t.row(i), m.row(j)) / tau).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..3 {
                let mut expect = 0.0;
                for j in 0..5 {
                    let p = logits[j].exp() / z;
                    expect += (p - if i == j { 1.0 } else { 0.0 }) * m.get(j, c);
                }
                expect /= n * tau;
                assert!((out.grad_text.get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn loss_obeys_margin_bounds(seed in any::<u64>(), n in 2usize..12, tau in 0.05f64..3.0) {
            let (t, m) = (random(n, 6, seed), random(n, 6, seed ^ 0xABCD));
            let out = info_nce(&ContrastiveBatch::new(t, m).unwrap(), tau, &cfg(Similarity::Dot, false)).unwrap();
            let s = &out.similarities;
            let gap: f64 = (0..n)
                .map(|i| s.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.get(i, i))
                .sum::<f64>() / (n as f64 * tau);
            prop_assert!(out.loss >= gap - 1e-9);
            prop_assert!(out.loss <= (n as f64).ln() + gap + 1e-9);
        }

        #[test]
        fn cosine_loss_ignores_row_scale(seed in any::<u64>(), k in 0usize..6, scale in 0.01f64..100.0) {
            let (t, m) = (random(6, 5, seed), random(6, 5, seed.wrapping_add(1)));
            let c = cfg(Similarity::Cosine, true);
            let base = info_nce(&ContrastiveBatch::new(t.clone(), m.clone()).unwrap(), 0.1, &c).unwrap().loss;
            let mut scaled = t.clone();
            for v in scaled.row_mut(k) { *v *= scale; }
            let other = info_nce(&ContrastiveBatch::new(scaled, m).unwrap(), 0.1, &c).unwrap().loss;
            prop_assert!((base - other).abs() < 1e-9);
        }

        #[test]
        fn loss_ignores_constant_shift_of_a_row(seed in any::<u64>(), k in 0usize..5, shift in -3.0f64..3.0) {
            // adding c·w to a text row where every music row has w·m = 1 shifts row k by c
            let (mut t, mut m) = (random(5, 4, seed), random(5, 4, seed ^ 7));
            for j in 0..5 { m.set(j, 3, 1.0); }
            let c = cfg(Similarity::Dot, false);
            let base = info_nce(&ContrastiveBatch::new(t.clone(), m.clone()).unwrap(), 0.7, &c).unwrap().loss;
            let v = t.get(k, 3);
            t.set(k, 3, v + shift);
            let shifted = info_nce(&ContrastiveBatch::new(t, m).unwrap(), 0.7, &c).unwrap().loss;
            prop_assert!((base - shifted).abs() < 1e-9);
        }
    }
}
