use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{EncoderInput, Matrix, Tensor};
use crate::rng::{substream, Stream};

/// Three noisy linear views of one shared latent matrix.
///
/// Row `i` of every view is derived from latent vector `i`, which makes the
/// corpus an oracle for cross-view alignment: a perfect model maps all three
/// rows of an item to the same point.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub n: usize,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub latents: Tensor,
    pub text_views: Tensor,
    pub mod_a_views: Tensor,
    pub mod_b_views: Tensor,
    pub pair_ids: Vec<String>,
}

/// One of the three observed views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Text,
    A,
    B,
}

impl SyntheticCorpus {
    pub fn view(&self, v: View) -> &Tensor {
        match v {
            View::Text => &self.text_views,
            View::A => &self.mod_a_views,
            View::B => &self.mod_b_views,
        }
    }

    /// Rows `rows` of a view, each reshaped into a `obs_dim / clip_dim`
    /// sequence of `clip_dim`-wide vectors.
    pub fn inputs(&self, v: View, clip_dim: usize, rows: std::ops::Range<usize>) -> Result<Vec<EncoderInput>> {
        rows_as_sequences(self.view(v), clip_dim, rows)
    }
}

/// Reshapes tensor rows into vector sequences of width `clip_dim`.
pub fn rows_as_sequences(
    t: &Tensor,
    clip_dim: usize,
    rows: std::ops::Range<usize>,
) -> Result<Vec<EncoderInput>> {
    let width = t.cols();
    if clip_dim == 0 || width % clip_dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "row width {width} is not a multiple of clip_dim {clip_dim}"
        )));
    }
    if rows.end > t.rows() {
        return Err(Error::InvalidArgument(format!(
            "rows {rows:?} out of range for {} rows",
            t.rows()
        )));
    }
    rows.map(|i| {
        let data = t.row(i).iter().map(|&v| v as f64).collect();
        Matrix::from_vec(width / clip_dim, clip_dim, data).map(EncoderInput::Vectors)
    })
    .collect()
}

pub fn gen_synthetic_trimodal(
    seed: u64,
    n: usize,
    latent_dim: usize,
    obs_dim: usize,
    noise: f64,
) -> Result<SyntheticCorpus> {
    if n < 2 || latent_dim == 0 || obs_dim == 0 || !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs n >= 2, dims >= 1 and noise >= 0 (n={n}, latent_dim={latent_dim}, obs_dim={obs_dim}, noise={noise})"
        )));
    }
    let mut rng = substream(seed, Stream::Synthetic);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };

    let latents: Vec<f64> = (0..n * latent_dim).map(|_| gauss()).collect();
    // Random semi-orthogonal maps (orthonormal rows from a Gaussian QR),
    // scaled so each observed coordinate has unit variance. They preserve
    // latent geometry up to one global factor when latent_dim <= obs_dim.
    let scale = (obs_dim as f64 / latent_dim as f64).sqrt();
    let maps: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let g: Vec<f64> = (0..latent_dim * obs_dim).map(|_| gauss()).collect();
            random_map(&g, latent_dim, obs_dim, scale)
        })
        .collect();

    let mut views = Vec::with_capacity(3);
    for map in &maps {
        let mut data = Vec::with_capacity(n * obs_dim);
        for i in 0..n {
            let z = &latents[i * latent_dim..(i + 1) * latent_dim];
            for c in 0..obs_dim {
                let mut v = 0.0;
                for (k, &zk) in z.iter().enumerate() {
                    v += zk * map[k * obs_dim + c];
                }
                data.push(v);
            }
        }
        views.push(data);
    }
    // noise is drawn after all clean views so noise=0 and noise>0 share maps
    for view in &mut views {
        for v in view.iter_mut() {
            let e = gauss();
            *v += noise * e;
        }
    }

    let to_tensor = |rows: usize, cols: usize, data: &[f64]| Tensor {
        shape: vec![rows, cols],
        data: data.iter().map(|&v| v as f32).collect(),
    };
    let width = n.to_string().len().max(5);
    Ok(SyntheticCorpus {
        n,
        latent_dim,
        obs_dim,
        latents: to_tensor(n, latent_dim, &latents),
        text_views: to_tensor(n, obs_dim, &views[0]),
        mod_a_views: to_tensor(n, obs_dim, &views[1]),
        mod_b_views: to_tensor(n, obs_dim, &views[2]),
        pair_ids: (0..n).map(|i| format!("item-{i:0width$}")).collect(),
    })
}

/// `latent_dim × obs_dim` row-major map from a Gaussian draw `g`.
fn random_map(g: &[f64], latent_dim: usize, obs_dim: usize, scale: f64) -> Vec<f64> {
    if latent_dim > obs_dim {
        // cannot be an isometry; fall back to the plain Gaussian map
        let s = 1.0 / (latent_dim as f64).sqrt();
        return g.iter().map(|v| v * s).collect();
    }
    // columns of Q from the QR of the obs_dim × latent_dim transpose
    let gt = nalgebra::DMatrix::from_row_slice(latent_dim, obs_dim, g).transpose();
    let qr = gt.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = vec![0.0; latent_dim * obs_dim];
    for k in 0..latent_dim {
        // fix the sign so the factorisation is unique
        let sign = if r[(k, k)] < 0.0 { -1.0 } else { 1.0 };
        for c in 0..obs_dim {
            out[k * obs_dim + c] = sign * q[(c, k)] * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest(t: &Tensor, i: usize) -> usize {
        let ri = t.row(i);
        (0..t.rows())
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = ri
                    .iter()
                    .zip(t.row(j))
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum();
                (j, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn reproducible_bitwise() {
        let a = gen_synthetic_trimodal(5, 20, 4, 8, 0.1).unwrap();
        let b = gen_synthetic_trimodal(5, 20, 4, 8, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_synthetic_trimodal(6, 20, 4, 8, 0.1).unwrap());
    }

    #[test]
    fn noiseless_views_have_latent_rank() {
        let c = gen_synthetic_trimodal(1, 40, 3, 12, 0.0).unwrap();
        for view in [&c.text_views, &c.mod_a_views, &c.mod_b_views] {
            let m = nalgebra::DMatrix::from_row_slice(
                view.rows(),
                view.cols(),
                &view.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            );
            assert!(m.rank(1e-4) <= 3);
        }
    }

    #[test]
    fn views_keep_latent_neighbours() {
        let c = gen_synthetic_trimodal(42, 100, 8, 32, 0.05).unwrap();
        for view in [&c.text_views, &c.mod_a_views, &c.mod_b_views] {
            let kept = (0..c.n)
                .filter(|&i| nearest(&c.latents, i) == nearest(view, i))
                .count();
            assert!(kept as f64 > 0.9 * c.n as f64, "kept {kept}/100");
        }
    }

    #[test]
    fn maps_preserve_distances_up_to_scale() {
        let c = gen_synthetic_trimodal(3, 30, 4, 16, 0.0).unwrap();
        let dist = |t: &Tensor, i: usize, j: usize| -> f64 {
            t.row(i).iter().zip(t.row(j)).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
        };
        for (i, j) in [(0, 1), (2, 9), (5, 29)] {
            let ratio = dist(&c.mod_b_views, i, j) / dist(&c.latents, i, j);
            assert!((ratio - 2.0).abs() < 1e-4, "{ratio}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(gen_synthetic_trimodal(0, 1, 2, 2, 0.0).is_err());
        assert!(gen_synthetic_trimodal(0, 4, 0, 2, 0.0).is_err());
        assert!(gen_synthetic_trimodal(0, 4, 2, 2, -1.0).is_err());
    }
}
