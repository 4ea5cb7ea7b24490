//! Cross-modal multi-head attention, pooling, projection, fusion and the
//! classifier head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Width used inside the attention softmax scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// `√d` with `d` the model width.
    #[default]
    Model,
    /// `√(d/h)`.
    PerHead,
}

/// `softmax(QKᵀ/√s)V` with `s = scale_dim`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, scale_dim: usize) -> Result<Var> {
    let (tq, tk, tv) = (tape.value(q), tape.value(k), tape.value(v));
    if tq.cols() != tk.cols() || tk.rows() != tv.rows() {
        return Err(Error::Dimension(format!(
            "attention Q {:?}, K {:?}, V {:?}",
            tq.shape(),
            tk.shape(),
            tv.shape()
        )));
    }
    if scale_dim == 0 {
        return Err(Error::Config("attention scale width must be ≥ 1".into()));
    }
    let s = tape.matmul_bt(q, k)?;
    let s = tape.scale(s, 1.0 / (scale_dim as f64).sqrt());
    let w = tape.softmax_rows(s);
    tape.matmul(w, v)
}

fn normal(rng: &mut impl Rng, shape: &[usize], sd: f64) -> Tensor {
    let dist = Normal::new(0.0, sd).expect("positive standard deviation");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("finite samples")
}

#[derive(Debug, Clone)]
pub struct HeadIds {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

/// One direction of cross-attention plus its pooling projection.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub d: usize,
    pub scale: ScaleMode,
    pub heads: Vec<HeadIds>,
    pub wo: ParamId,
    pub proj: ParamId,
}

impl CrossAttention {
    /// Registers `{prefix}.head{i}.{q,k,v}`, `{prefix}.wo` and `{prefix}.proj`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        heads: usize,
        scale: ScaleMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
        }
        let dk = d / heads;
        let sd = 1.0 / (d as f64).sqrt();
        let heads = (0..heads)
            .map(|i| HeadIds {
                q: store.add(format!("{prefix}.head{i}.q"), normal(rng, &[d, dk], sd)),
                k: store.add(format!("{prefix}.head{i}.k"), normal(rng, &[d, dk], sd)),
                v: store.add(format!("{prefix}.head{i}.v"), normal(rng, &[d, dk], sd)),
            })
            .collect();
        Ok(Self {
            d,
            scale,
            heads,
            wo: store.add(format!("{prefix}.wo"), normal(rng, &[d, d], sd)),
            proj: store.add(format!("{prefix}.proj"), normal(rng, &[d, d], sd)),
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundCrossAttention {
        BoundCrossAttention {
            d: self.d,
            scale: self.scale,
            heads: self
                .heads
                .iter()
                .map(|h| (tape.param(store, h.q), tape.param(store, h.k), tape.param(store, h.v)))
                .collect(),
            wo: tape.param(store, self.wo),
            proj: tape.param(store, self.proj),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCrossAttention {
    pub d: usize,
    pub scale: ScaleMode,
    pub heads: Vec<(Var, Var, Var)>,
    pub wo: Var,
    pub proj: Var,
}

impl BoundCrossAttention {
    /// Queries from `ga`, keys and values from `gb`; output is `L_a × d`.
    pub fn multihead(&self, tape: &mut Tape, ga: Var, gb: Var) -> Result<Var> {
        let (wa, wb) = (tape.value(ga).cols(), tape.value(gb).cols());
        if wa != self.d || wb != self.d {
            return Err(Error::Dimension(format!("multihead width {} vs inputs {wa}, {wb}", self.d)));
        }
        let scale_dim = match self.scale {
            ScaleMode::Model => self.d,
            ScaleMode::PerHead => self.d / self.heads.len(),
        };
        let mut outs = Vec::with_capacity(self.heads.len());
        for &(wq, wk, wv) in &self.heads {
            let q = tape.matmul(ga, wq)?;
            let k = tape.matmul(gb, wk)?;
            let v = tape.matmul(gb, wv)?;
            outs.push(attention(tape, q, k, v, scale_dim)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        tape.matmul(cat, self.wo)
    }

    /// Mean over the sequence, linear projection and L2 normalization.
    pub fn pool_project(&self, tape: &mut Tape, seq: Var) -> Result<Var> {
        pool_project(tape, seq, self.proj)
    }

    /// `Proj ∘ Pool ∘ MultiHead(ga, gb)` as a unit-norm `1×d` row.
    pub fn latent(&self, tape: &mut Tape, ga: Var, gb: Var) -> Result<Var> {
        let m = self.multihead(tape, ga, gb)?;
        self.pool_project(tape, m)
    }
}

/// Mean over rows, `· proj`, then unit L2 norm.
pub fn pool_project(tape: &mut Tape, seq: Var, proj: Var) -> Result<Var> {
    if tape.value(seq).rows() == 0 {
        return Err(Error::Dimension("pooling an empty sequence".into()));
    }
    let p = tape.mean_rows(seq);
    let p = tape.matmul(p, proj)?;
    tape.l2_normalize_rows(p)
}

/// Element-wise addition.
pub fn fuse(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    tape.add(u, v)
}

/// Two-layer head `d → d/2 → 1` with GELU.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Classifier {
    /// Registers `{prefix}.w1`, `.b1`, `.w2`, `.b2`.
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = (d / 2).max(1);
        Ok(Self {
            w1: store.add(format!("{prefix}.w1"), normal(rng, &[d, hidden], 1.0 / (d as f64).sqrt())),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden])),
            w2: store.add(format!("{prefix}.w2"), normal(rng, &[hidden, 1], 1.0 / (hidden as f64).sqrt())),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[1, 1])),
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundClassifier {
        BoundClassifier {
            w1: tape.param(store, self.w1),
            b1: tape.param(store, self.b1),
            w2: tape.param(store, self.w2),
            b2: tape.param(store, self.b2),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundClassifier {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundClassifier {
    /// Raw logits, one per row of `z`.
    pub fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let h = tape.matmul(z, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        let h = tape.gelu(h);
        let o = tape.matmul(h, self.w2)?;
        tape.add_row(o, self.b2)
    }
}
