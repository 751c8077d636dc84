//! Patch-level transformer encoder with a position-wise linear head and
//! average pooling.
//!
//! Pre-LN blocks: `x + Attn(LN(x))`, then `x + FF(LN(x))`, a final layer norm,
//! the head applied to every position, and the mean over positions.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tape::{NodeId, Tape};
use super::tensor::{Matrix, Tensor};
use super::tokenize::VOCAB_SIZE;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::symbolic::PatchSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    TextBytes,
    SymbolicPatches,
    AudioVectors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub max_positions: usize,
    pub input_kind: InputKind,
    /// Byte vocabulary for text and patch characters.
    pub vocab_size: usize,
    /// Width of each input vector for `AudioVectors`.
    pub input_dim: usize,
    pub out_dim: usize,
    pub positional: bool,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, hidden 64, 4 heads.
    pub fn desk(input_kind: InputKind) -> Self {
        let max_positions = match input_kind {
            InputKind::TextBytes => 512,
            InputKind::SymbolicPatches => 512,
            InputKind::AudioVectors => 128,
        };
        EncoderConfig {
            n_layers: 2,
            hidden: 64,
            n_heads: 4,
            ff_mult: 4,
            max_positions,
            input_kind,
            vocab_size: VOCAB_SIZE,
            input_dim: 768,
            out_dim: 64,
            positional: true,
        }
    }

    /// Full-size layout: 12 layers with hidden size 768.
    pub fn full(input_kind: InputKind) -> Self {
        EncoderConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            out_dim: 768,
            ..Self::desk(input_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("encoder config: {m}")));
        if self.n_layers == 0 || self.hidden == 0 || self.n_heads == 0 || self.ff_mult == 0 {
            return bad("layers, hidden, heads and ff_mult must be positive");
        }
        if self.hidden % self.n_heads != 0 {
            return bad("hidden must be divisible by n_heads");
        }
        if self.max_positions == 0 || self.out_dim == 0 {
            return bad("max_positions and out_dim must be positive");
        }
        match self.input_kind {
            InputKind::TextBytes | InputKind::SymbolicPatches if self.vocab_size < 256 => {
                bad("byte inputs need vocab_size >= 256")
            }
            InputKind::TextBytes if self.max_positions < 2 => {
                bad("text inputs need room for BOS and EOS")
            }
            InputKind::AudioVectors if self.input_dim == 0 => bad("input_dim must be positive"),
            _ => Ok(()),
        }
    }
}

/// One encoder input, matching [`EncoderConfig::input_kind`].
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Tokens(Vec<u32>),
    Patches(PatchSequence),
    Vectors(Matrix),
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        match self {
            EncoderInput::Tokens(t) => t.len(),
            EncoderInput::Patches(p) => p.len(),
            EncoderInput::Vectors(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Parameter indices resolved once per [`ParamSet`].
#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    embed_bias: Option<usize>,
    positions: Option<usize>,
    layers: Vec<LayerIdx>,
    final_g: usize,
    final_b: usize,
    head_w: usize,
    head_b: usize,
}

fn expected_shapes(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let f = h * cfg.ff_mult;
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    match cfg.input_kind {
        InputKind::TextBytes => v.push(("embed.tokens".into(), vec![cfg.vocab_size, h])),
        InputKind::SymbolicPatches => v.push(("embed.bytes".into(), vec![cfg.vocab_size, h])),
        InputKind::AudioVectors => {
            v.push(("embed.in.weight".into(), vec![cfg.input_dim, h]));
            v.push(("embed.in.bias".into(), vec![h]));
        }
    }
    if cfg.positional {
        v.push(("embed.positions".into(), vec![cfg.max_positions, h]));
    }
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        v.push((p("ln1.gamma"), vec![h]));
        v.push((p("ln1.beta"), vec![h]));
        for w in ["q", "k", "v", "o"] {
            v.push((p(&format!("attn.w{w}")), vec![h, h]));
            v.push((p(&format!("attn.b{w}")), vec![h]));
        }
        v.push((p("ln2.gamma"), vec![h]));
        v.push((p("ln2.beta"), vec![h]));
        v.push((p("ff.w1"), vec![h, f]));
        v.push((p("ff.b1"), vec![f]));
        v.push((p("ff.w2"), vec![f, h]));
        v.push((p("ff.b2"), vec![h]));
    }
    v.push(("final_ln.gamma".into(), vec![h]));
    v.push(("final_ln.beta".into(), vec![h]));
    v.push(("head.weight".into(), vec![h, cfg.out_dim]));
    v.push(("head.bias".into(), vec![cfg.out_dim]));
    v
}

/// Checks that `params` holds every encoder tensor with the right shape.
/// Extra entries (such as a temperature) are allowed.
pub fn check_params(cfg: &EncoderConfig, params: &ParamSet) -> Result<()> {
    for (name, shape) in expected_shapes(cfg) {
        match params.get(&name) {
            None => return Err(Error::ShapeMismatch(format!("missing parameter {name}"))),
            Some(t) if t.shape != shape => {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

impl Layout {
    fn resolve(cfg: &EncoderConfig, params: &ParamSet) -> Result<Self> {
        check_params(cfg, params)?;
        let ix = |n: &str| params.index_of(n).expect("checked above");
        let (embed, embed_bias) = match cfg.input_kind {
            InputKind::TextBytes => (ix("embed.tokens"), None),
            InputKind::SymbolicPatches => (ix("embed.bytes"), None),
            InputKind::AudioVectors => (ix("embed.in.weight"), Some(ix("embed.in.bias"))),
        };
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| ix(&format!("layers.{l}.{s}"));
                LayerIdx {
                    ln1_g: p("ln1.gamma"),
                    ln1_b: p("ln1.beta"),
                    wq: p("attn.wq"),
                    bq: p("attn.bq"),
                    wk: p("attn.wk"),
                    bk: p("attn.bk"),
                    wv: p("attn.wv"),
                    bv: p("attn.bv"),
                    wo: p("attn.wo"),
                    bo: p("attn.bo"),
                    ln2_g: p("ln2.gamma"),
                    ln2_b: p("ln2.beta"),
                    w1: p("ff.w1"),
                    b1: p("ff.b1"),
                    w2: p("ff.w2"),
                    b2: p("ff.b2"),
                }
            })
            .collect();
        Ok(Layout {
            embed,
            embed_bias,
            positions: cfg.positional.then(|| ix("embed.positions")),
            layers,
            final_g: ix("final_ln.gamma"),
            final_b: ix("final_ln.beta"),
            head_w: ix("head.weight"),
            head_b: ix("head.bias"),
        })
    }
}

/// Fresh parameters drawn from `rng`.
pub fn init_params(cfg: &EncoderConfig, rng: &mut Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, shape) in expected_shapes(cfg) {
        let numel: usize = shape.iter().product();
        let std = if name.ends_with("gamma") || name.ends_with("beta") || shape.len() == 1 {
            None
        } else if name == "embed.tokens" || name == "embed.bytes" {
            Some(1.0)
        } else if name == "embed.positions" {
            Some(0.1)
        } else {
            Some(1.0 / (shape[0] as f64).sqrt())
        };
        let data = match std {
            Some(s) => {
                let normal = Normal::new(0.0, s).expect("positive std");
                (0..numel).map(|_| normal.sample(rng) as f32).collect()
            }
            None if name.ends_with("gamma") => vec![1.0; numel],
            None => vec![0.0; numel],
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

/// 64-bit working weights of one encoder.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    cfg: EncoderConfig,
    layout: Layout,
    mats: Vec<Matrix>,
}

impl EncoderWeights {
    pub fn new(cfg: &EncoderConfig, params: &ParamSet) -> Result<Self> {
        cfg.validate()?;
        Ok(EncoderWeights {
            layout: Layout::resolve(cfg, params)?,
            cfg: cfg.clone(),
            mats: params.to_matrices(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    /// Records the forward pass; returns the tape, the input node and the
    /// `1 × out_dim` output node.
    pub fn forward<'a>(&'a self, input: &EncoderInput) -> Result<(Tape<'a>, NodeId, NodeId)> {
        self.check_input(input)?;
        let cfg = &self.cfg;
        let lay = &self.layout;
        let mut t = Tape::new(&self.mats);

        let (input_node, mut x) = match input {
            EncoderInput::Tokens(ids) => {
                let table = t.param(lay.embed);
                let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                (table, t.gather(table, &ids))
            }
            EncoderInput::Patches(seq) => {
                let table = t.param(lay.embed);
                let bags = seq
                    .patches
                    .iter()
                    .map(|p| p.text.bytes().map(usize::from).collect())
                    .collect();
                (table, t.bag_mean(table, bags))
            }
            EncoderInput::Vectors(m) => {
                let inp = t.input(m.clone());
                let w = t.param(lay.embed);
                let b = t.param(lay.embed_bias.expect("audio layout has a bias"));
                (inp, t.linear(inp, w, b))
            }
        };
        let len = input.len();
        if let Some(pos) = lay.positions {
            let table = t.param(pos);
            let p = t.slice_rows(table, 0, len);
            x = t.add(x, p);
        }

        let heads = cfg.n_heads;
        let dh = cfg.hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &lay.layers {
            let (g, b) = (t.param(l.ln1_g), t.param(l.ln1_b));
            let h = t.layer_norm(x, g, b);
            let proj = |t: &mut Tape<'a>, w: usize, b: usize| {
                let (w, b) = (t.param(w), t.param(b));
                t.linear(h, w, b)
            };
            let q = proj(&mut t, l.wq, l.bq);
            let k = proj(&mut t, l.wk, l.bk);
            let v = proj(&mut t, l.wv, l.bv);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = t.slice_cols(q, hd * dh, dh);
                let kh = t.slice_cols(k, hd * dh, dh);
                let vh = t.slice_cols(v, hd * dh, dh);
                let s = t.matmul_nt(qh, kh);
                let s = t.scale(s, scale);
                let p = t.softmax_rows(s);
                outs.push(t.matmul(p, vh));
            }
            let cat = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
            let (wo, bo) = (t.param(l.wo), t.param(l.bo));
            let attn = t.linear(cat, wo, bo);
            x = t.add(x, attn);

            let (g, b) = (t.param(l.ln2_g), t.param(l.ln2_b));
            let h = t.layer_norm(x, g, b);
            let (w1, b1) = (t.param(l.w1), t.param(l.b1));
            let f = t.linear(h, w1, b1);
            let f = t.gelu(f);
            let (w2, b2) = (t.param(l.w2), t.param(l.b2));
            let f = t.linear(f, w2, b2);
            x = t.add(x, f);
        }
        let (g, b) = (t.param(lay.final_g), t.param(lay.final_b));
        let x = t.layer_norm(x, g, b);
        let (hw, hb) = (t.param(lay.head_w), t.param(lay.head_b));
        let per_position = t.linear(x, hw, hb);
        let pooled = t.mean_rows(per_position);
        Ok((t, input_node, pooled))
    }

    /// Forward pass only; the raw pooled embedding.
    pub fn embed(&self, input: &EncoderInput) -> Result<Vec<f64>> {
        let (tape, _, out) = self.forward(input)?;
        Ok(tape.value(out).data.clone())
    }

    fn check_input(&self, input: &EncoderInput) -> Result<()> {
        let cfg = &self.cfg;
        let len = input.len();
        if len == 0 {
            return Err(Error::ShapeMismatch("encoder input is empty".into()));
        }
        if len > cfg.max_positions {
            return Err(Error::ShapeMismatch(format!(
                "input length {len} exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        match (cfg.input_kind, input) {
            (InputKind::TextBytes, EncoderInput::Tokens(ids)) => {
                if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
                    return Err(Error::ShapeMismatch(format!("token id {bad} out of vocabulary")));
                }
            }
            (InputKind::SymbolicPatches, EncoderInput::Patches(seq)) => {
                if seq.patches.iter().any(|p| p.text.is_empty()) {
                    return Err(Error::ShapeMismatch("empty patch".into()));
                }
            }
            (InputKind::AudioVectors, EncoderInput::Vectors(m)) => {
                if m.cols != cfg.input_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "input vectors have width {}, encoder expects {}",
                        m.cols, cfg.input_dim
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::NonFinite("encoder input has NaN or inf".into()));
                }
            }
            (kind, _) => {
                return Err(Error::ShapeMismatch(format!(
                    "input does not match encoder kind {kind:?}"
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tokenize::tokenize_text;
    use crate::rng::{substream, Stream};
    use crate::symbolic::segment_abc;

    fn small(kind: InputKind) -> EncoderConfig {
        EncoderConfig {
            n_layers: 2,
            hidden: 16,
            n_heads: 2,
            ff_mult: 2,
            max_positions: 32,
            input_kind: kind,
            vocab_size: VOCAB_SIZE,
            input_dim: 5,
            out_dim: 6,
            positional: true,
        }
    }

    fn weights(cfg: &EncoderConfig, seed: u64) -> EncoderWeights {
        let p = init_params(cfg, &mut substream(seed, Stream::Init)).unwrap();
        EncoderWeights::new(cfg, &p).unwrap()
    }

    fn vectors(rows: usize, cols: usize, seed: u64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn output_has_out_dim() {
        let cfg = small(InputKind::TextBytes);
        let w = weights(&cfg, 1);
        let e = w.embed(&EncoderInput::Tokens(tokenize_text("hello", 32))).unwrap();
        assert_eq!(e.len(), 6);
        let cfg = small(InputKind::SymbolicPatches);
        let w = weights(&cfg, 1);
        let seq = segment_abc("X:1\nK:C\nCDEF|GABc|").unwrap();
        assert_eq!(w.embed(&EncoderInput::Patches(seq)).unwrap().len(), 6);
    }

    #[test]
    fn single_position_is_head_of_state() {
        let cfg = small(InputKind::AudioVectors);
        let w = weights(&cfg, 2);
        let (tape, _, out) = w.forward(&EncoderInput::Vectors(vectors(1, 5, 3))).unwrap();
        // node just before pooling is the per-position head output
        let head = tape.value(out - 1);
        assert_eq!(head.rows, 1);
        assert_eq!(head.data, tape.value(out).data);
    }

    #[test]
    fn positional_flag_controls_order_sensitivity() {
        let mut cfg = small(InputKind::AudioVectors);
        let x = vectors(2, 5, 4);
        let swapped = Matrix::from_rows(&[x.row(1).to_vec(), x.row(0).to_vec()]).unwrap();
        cfg.positional = false;
        let w = weights(&cfg, 5);
        let a = w.embed(&EncoderInput::Vectors(x.clone())).unwrap();
        let b = w.embed(&EncoderInput::Vectors(swapped.clone())).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        cfg.positional = true;
        let w = weights(&cfg, 5);
        let a = w.embed(&EncoderInput::Vectors(x)).unwrap();
        let b = w.embed(&EncoderInput::Vectors(swapped)).unwrap();
        assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-6));
    }

    #[test]
    fn duplicating_positions_keeps_embedding_without_positions() {
        let mut cfg = small(InputKind::AudioVectors);
        cfg.positional = false;
        let w = weights(&cfg, 6);
        let x = vectors(3, 5, 7);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|r| x.row(r).to_vec()).collect();
        rows.extend(rows.clone());
        let doubled = Matrix::from_rows(&rows).unwrap();
        let a = w.embed(&EncoderInput::Vectors(x)).unwrap();
        let b = w.embed(&EncoderInput::Vectors(doubled)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small(InputKind::TextBytes);
        let input = EncoderInput::Tokens(tokenize_text("same", 32));
        let a = weights(&cfg, 8).embed(&input).unwrap();
        let b = weights(&cfg, 8).embed(&input).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let cfg = small(InputKind::AudioVectors);
        let w = weights(&cfg, 9);
        assert!(w.embed(&EncoderInput::Vectors(vectors(2, 4, 0))).is_err());
        assert!(w.embed(&EncoderInput::Tokens(vec![1, 2])).is_err());
        assert!(w.embed(&EncoderInput::Vectors(vectors(33, 5, 0))).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(InputKind::TextBytes);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::full(InputKind::AudioVectors).validate().is_ok());
        let p = init_params(&small(InputKind::TextBytes), &mut substream(0, Stream::Init)).unwrap();
        assert!(check_params(&small(InputKind::AudioVectors), &p).is_err());
    }
}
