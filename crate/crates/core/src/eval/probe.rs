use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, Matrix};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SingleLabel,
    MultiLabel,
}

/// Targets for `n` examples: one class index each, or an `n x C` 0/1 matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(Matrix),
}

impl Labels {
    pub fn task(&self) -> Task {
        match self {
            Labels::Single(_) => Task::SingleLabel,
            Labels::Multi(_) => Task::MultiLabel,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Single(y) => y.len(),
            Labels::Multi(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One-hot (single-label) or the 0/1 matrix itself.
    fn targets(&self, n_classes: usize) -> Matrix {
        match self {
            Labels::Single(y) => {
                let mut t = Matrix::zeros(y.len(), n_classes);
                for (i, &c) in y.iter().enumerate() {
                    t.set(i, c, 1.0);
                }
                t
            }
            Labels::Multi(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            max_iter: 2000,
            lr: 1.0,
            seed: 42,
        }
    }
}

/// Grad-norm tolerance at which fitting stops.
pub const PROBE_TOLERANCE: f64 = 1e-5;

/// A linear classifier over frozen embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub task: Task,
    pub labels: Vec<String>,
    /// `C x d`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    fn logits(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_nt(&self.weights);
        for r in 0..z.rows {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }

    /// Class probabilities: softmax rows for single-label, independent
    /// sigmoids for multi-label.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.weights.cols {
            return Err(Error::DimensionMismatch(format!(
                "probe expects {} features, got {}",
                self.weights.cols, x.cols
            )));
        }
        let mut z = self.logits(x);
        for r in 0..z.rows {
            match self.task {
                Task::SingleLabel => softmax_in_place(z.row_mut(r)),
                Task::MultiLabel => z.row_mut(r).iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
        }
        Ok(z)
    }

    /// Arg-max class per row; the lowest index wins ties.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows).map(|r| argmax(p.row(r))).collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_labels(y: &Labels, n: usize, n_classes: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} examples but {} labels", y.len())));
    }
    match y {
        Labels::Single(ys) => {
            if n_classes < 2 {
                return Err(Error::DegenerateLabels("single-label probing needs at least 2 classes".into()));
            }
            if let Some(&c) = ys.iter().find(|&&c| c >= n_classes) {
                return Err(Error::InvalidArgument(format!("label {c} out of range for {n_classes} classes")));
            }
            let mut seen = vec![false; n_classes];
            ys.iter().for_each(|&c| seen[c] = true);
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::DegenerateLabels(format!("class {c} has no examples")));
            }
        }
        Labels::Multi(m) => {
            if m.cols != n_classes {
                return Err(Error::ShapeMismatch(format!("{} label columns for {n_classes} classes", m.cols)));
            }
            if m.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument("multi-label targets must be 0 or 1".into()));
            }
            for c in 0..n_classes {
                if (0..m.rows).all(|r| m.get(r, c) == 0.0) {
                    return Err(Error::DegenerateLabels(format!("class {c} has no positive examples")));
                }
            }
        }
    }
    Ok(())
}

/// Fits a multinomial (single-label) or one-vs-rest (multi-label) logistic
/// regression by full-batch gradient descent on the mean log loss plus
/// `l2/2 * |W|^2`. The bias is not penalised.
pub fn fit_linear_probe(x: &Matrix, y: &Labels, labels: Vec<String>, cfg: &ProbeConfig) -> Result<ProbeModel> {
    let (n, d, c) = (x.rows, x.cols, labels.len());
    check_labels(y, n, c)?;
    if n == 0 || !x.is_finite() {
        return Err(Error::InvalidArgument("probe features must be non-empty and finite".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) || !cfg.l2.is_finite() {
        return Err(Error::Config("probe lr must be positive and l2 non-negative".into()));
    }
    let targets = y.targets(c);

    // Per-block steps under the curvature bounds of the log loss.
    let max_sq = (0..n).map(|r| dot(x.row(r), x.row(r))).fold(0.0, f64::max);
    let step_w = cfg.lr.min(1.0 / (max_sq + 2.0 * cfg.l2).max(f64::MIN_POSITIVE));
    let step_b = cfg.lr.min(1.0);

    let mut rng = substream(cfg.seed, Stream::Probe);
    let init = Normal::new(0.0, 1e-3).expect("valid std");
    let mut model = ProbeModel {
        task: y.task(),
        labels,
        weights: Matrix::from_vec(c, d, (0..c * d).map(|_| init.sample(&mut rng)).collect())?,
        bias: vec![0.0; c],
        iterations: 0,
        converged: false,
    };
    for it in 0..=cfg.max_iter {
        let mut g = model.predict_proba(x)?;
        for (gv, t) in g.data.iter_mut().zip(&targets.data) {
            *gv = (*gv - t) / n as f64;
        }
        let mut gw = g.matmul_tn(x);
        for (gv, w) in gw.data.iter_mut().zip(&model.weights.data) {
            *gv += cfg.l2 * w;
        }
        let mut gb = vec![0.0; c];
        for r in 0..n {
            for (b, v) in gb.iter_mut().zip(g.row(r)) {
                *b += v;
            }
        }
        let norm = (dot(&gw.data, &gw.data) + dot(&gb, &gb)).sqrt();
        model.iterations = it;
        if norm < PROBE_TOLERANCE {
            model.converged = true;
            break;
        }
        if it == cfg.max_iter {
            break;
        }
        for (w, g) in model.weights.data.iter_mut().zip(&gw.data) {
            *w -= step_w * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= step_b * g;
        }
    }
    if !model.weights.is_finite() || !model.bias.iter().all(|b| b.is_finite()) {
        return Err(Error::NonFinite("probe weights".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeMetrics {
    pub task: Task,
    pub n_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_macro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
}

/// Accuracy and macro F1 for single-label targets, macro ROC-AUC and macro
/// average precision for multi-label targets.
pub fn eval_probe(model: &ProbeModel, x: &Matrix, y: &Labels) -> Result<ProbeMetrics> {
    if y.task() != model.task {
        return Err(Error::InvalidArgument("label kind does not match the probe task".into()));
    }
    if y.len() != x.rows {
        return Err(Error::ShapeMismatch(format!("{} examples but {} labels", x.rows, y.len())));
    }
    let mut m = ProbeMetrics {
        task: model.task,
        n_examples: x.rows,
        accuracy: None,
        f1_macro: None,
        roc_auc: None,
        average_precision: None,
    };
    match y {
        Labels::Single(truth) => {
            let pred = model.predict(x)?;
            m.accuracy = Some(accuracy(truth, &pred));
            m.f1_macro = Some(f1_macro(truth, &pred, model.n_classes()));
        }
        Labels::Multi(truth) => {
            let scores = model.predict_proba(x)?;
            let (auc, ap) = multilabel_scores(truth, &scores)?;
            m.roc_auc = Some(auc);
            m.average_precision = Some(ap);
        }
    }
    Ok(m)
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Unweighted mean of per-class F1 over classes `0..n_classes`; a class absent
/// from both truth and prediction scores 0.
pub fn f1_macro(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    if n_classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let den = 2 * tp[c] + fp[c] + fn_[c];
            if den == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / den as f64
            }
        })
        .sum();
    total / n_classes as f64
}

/// Area under the ROC curve; tied scores count one half. `None` when either
/// class is missing.
pub fn roc_auc(truth: &[bool], scores: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| **t).map(|(_, &s)| s).collect();
    let neg: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| !**t).map(|(_, &s)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Average precision: the sum over distinct score thresholds of the recall
/// increment times the precision at that threshold. `None` without positives.
pub fn average_precision(truth: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = truth.iter().filter(|t| **t).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += truth[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
    }
    Some(ap)
}

/// Macro ROC-AUC and AP over the columns where each is defined.
pub fn multilabel_scores(truth: &Matrix, scores: &Matrix) -> Result<(f64, f64)> {
    if !truth.same_shape(scores) {
        return Err(Error::ShapeMismatch("truth and score matrices differ in shape".into()));
    }
    let (mut aucs, mut aps) = (Vec::new(), Vec::new());
    for c in 0..truth.cols {
        let t: Vec<bool> = (0..truth.rows).map(|r| truth.get(r, c) > 0.5).collect();
        let s: Vec<f64> = (0..truth.rows).map(|r| scores.get(r, c)).collect();
        match roc_auc(&t, &s) {
            Some(a) => aucs.push(a),
            None => warn!("class {c} has only one outcome; skipped for ROC-AUC"),
        }
        if let Some(a) = average_precision(&t, &s) {
            aps.push(a);
        }
    }
    if aucs.is_empty() || aps.is_empty() {
        return Err(Error::DegenerateLabels("no class has both outcomes".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&aucs), mean(&aps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    fn clusters(n: usize, d: usize, sep: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = substream(seed, Stream::Synthetic);
        let mut x = Matrix::zeros(n, d);
        let mut y = Vec::new();
        for r in 0..n {
            let c = r % 2;
            for k in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x.set(r, k, z * 0.5 + if k == 0 { sep * (2.0 * c as f64 - 1.0) } else { 0.0 });
            }
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn confusion_fixtures() {
        let (t, p) = ([1, 1, 0, 0], [1, 0, 0, 0]);
        assert_eq!(accuracy(&t, &p), 0.75);
        let f1 = f1_macro(&t, &p, 2);
        assert!((f1 - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(f1_macro(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        // Class 2 never appears on either side.
        assert_eq!(f1_macro(&[0, 1], &[0, 1], 3), 2.0 / 3.0);
        // Three classes: per-class F1 of 2/3, 1/2 and 0.
        let (t, p) = ([0, 0, 1, 1, 2], [0, 1, 1, 0, 0]);
        assert_eq!(accuracy(&t, &p), 0.4);
        assert!((f1_macro(&t, &p, 3) - (0.4 + 0.5 + 0.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranking_metrics() {
        let t = [true, false, true, false];
        assert_eq!(roc_auc(&t, &[1.0, 0.0, 1.0, 0.0]), Some(1.0));
        assert_eq!(average_precision(&t, &[1.0, 0.0, 1.0, 0.0]), Some(1.0));
        assert_eq!(roc_auc(&t, &[0.5; 4]), Some(0.5));
        assert_eq!(average_precision(&t, &[0.5; 4]), Some(0.5));
        // Ranking +,-,+,-: AP = (1 + 2/3) / 2, AUC = 3/4.
        let s = [0.9, 0.8, 0.7, 0.1];
        assert_eq!(roc_auc(&t, &s), Some(0.75));
        assert!((average_precision(&t, &s).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(roc_auc(&[true, true], &[0.1, 0.2]), None);
        assert_eq!(average_precision(&[false], &[0.1]), None);
    }

    #[test]
    fn multilabel_perfect_scores() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let (auc, ap) = multilabel_scores(&t, &t).unwrap();
        assert_eq!((auc, ap), (1.0, 1.0));
    }

    #[test]
    fn separable_clusters_fit_exactly() {
        let (x, y) = clusters(100, 4, 3.0, 1);
        let m = fit_linear_probe(&x, &Labels::Single(y.clone()), names(2), &ProbeConfig::default()).unwrap();
        let metrics = eval_probe(&m, &x, &Labels::Single(y)).unwrap();
        assert_eq!(metrics.accuracy, Some(1.0));
        assert_eq!(metrics.f1_macro, Some(1.0));
    }

    #[test]
    fn random_labels_near_chance() {
        let mut rng = substream(5, Stream::Synthetic);
        let gen = |rng: &mut crate::rng::Rng, n: usize| {
            let x: Vec<f64> = (0..n * 8).map(|_| StandardNormal.sample(rng)).collect();
            let mut y: Vec<usize> = (0..n).map(|i| i % 2).collect();
            for i in (1..n).rev() {
                y.swap(i, rng.gen_range(0..=i));
            }
            (Matrix::from_vec(n, 8, x).unwrap(), y)
        };
        let (xt, yt) = gen(&mut rng, 200);
        let (xh, yh) = gen(&mut rng, 200);
        let m = fit_linear_probe(&xt, &Labels::Single(yt), names(2), &ProbeConfig::default()).unwrap();
        let acc = eval_probe(&m, &xh, &Labels::Single(yh)).unwrap().accuracy.unwrap();
        assert!((0.35..=0.65).contains(&acc), "{acc}");
    }

    #[test]
    fn heavy_penalty_gives_priors() {
        let (x, _) = clusters(90, 3, 2.0, 2);
        let y: Vec<usize> = (0..90).map(|i| if i % 3 == 0 { 1 } else { 0 }).collect();
        let cfg = ProbeConfig {
            l2: 1e8,
            max_iter: 5000,
            ..ProbeConfig::default()
        };
        let m = fit_linear_probe(&x, &Labels::Single(y), names(2), &cfg).unwrap();
        assert!(m.weights.data.iter().all(|w| w.abs() < 1e-6));
        let p = m.predict_proba(&x).unwrap();
        for r in 0..p.rows {
            assert!((p.get(r, 1) - 1.0 / 3.0).abs() < 1e-4, "{}", p.get(r, 1));
        }
    }

    #[test]
    fn multilabel_fit() {
        let (x, y) = clusters(80, 3, 3.0, 3);
        let mut t = Matrix::zeros(80, 2);
        for (r, &c) in y.iter().enumerate() {
            t.set(r, c, 1.0);
            if r % 4 == 0 {
                t.set(r, 1 - c, 1.0);
            }
        }
        let labels = Labels::Multi(t);
        let m = fit_linear_probe(&x, &labels, names(2), &ProbeConfig::default()).unwrap();
        let metrics = eval_probe(&m, &x, &labels).unwrap();
        assert!(metrics.roc_auc.unwrap() > 0.7);
        assert!(metrics.accuracy.is_none());
    }

    #[test]
    fn degenerate_labels() {
        let (x, _) = clusters(10, 2, 1.0, 4);
        let e = fit_linear_probe(&x, &Labels::Single(vec![0; 10]), names(2), &ProbeConfig::default()).unwrap_err();
        assert!(e.to_string().starts_with("degenerate labels"));
        let e = fit_linear_probe(&x, &Labels::Multi(Matrix::zeros(10, 2)), names(2), &ProbeConfig::default());
        assert!(matches!(e, Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, y) = clusters(40, 3, 1.0, 6);
        let cfg = ProbeConfig { max_iter: 50, ..ProbeConfig::default() };
        let a = fit_linear_probe(&x, &Labels::Single(y.clone()), names(2), &cfg).unwrap();
        let b = fit_linear_probe(&x, &Labels::Single(y), names(2), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
