use rand::seq::index::sample;

use crate::rng::{substream, Stream};

/// Compares an analytic gradient with central finite differences.
///
/// `loss_fn` returns the loss and its gradient at a point. All coordinates are
/// checked when there are at most `max_coords` of them, otherwise a seeded
/// sample of `max(max_coords, 100)` coordinates. Returns the largest relative
/// error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64, max_coords: usize, seed: u64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(eps > 0.0, "eps must be positive");
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let n = params.len();
    let budget = max_coords.max(100);
    let coords: Vec<usize> = if n <= budget {
        (0..n).collect()
    } else {
        let mut v = sample(&mut substream(seed, Stream::GradCheck), n, budget).into_vec();
        v.sort_unstable();
        v
    };

    let mut point = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = loss_fn(&point).0;
        point[i] = orig - eps;
        let minus = loss_fn(&point).0;
        point[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
