//! The full authenticator: two encoders, two cross-attention directions, a
//! fused classifier, and checkpoint I/O.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::attention::{pool_project, BoundClassifier, BoundCrossAttention, Classifier, CrossAttention, ScaleMode};
use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::formats::{read_container, write_container};
use crate::image::FP_LEN;
use crate::losses::MomentEstimates;
use crate::signal::BEAT_LEN;
use crate::ssm::{BoundEncoder, Encoder, EncoderConfig};

/// Which modalities a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Fused,
    Ppg,
    Fingerprint,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fused, Variant::Ppg, Variant::Fingerprint];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::Ppg => "ppg",
            Variant::Fingerprint => "fingerprint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Variant::Fused),
            "ppg" => Ok(Variant::Ppg),
            "fingerprint" => Ok(Variant::Fingerprint),
            _ => Err(Error::Config(format!("unknown variant {s:?}; expected ppg, fingerprint or fused"))),
        }
    }

    pub fn uses_ppg(self) -> bool {
        self != Variant::Fingerprint
    }

    pub fn uses_fingerprint(self) -> bool {
        self != Variant::Ppg
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub d_h: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Samples per beat input.
    pub ppg_len: usize,
    /// Pixels per fingerprint input.
    pub fp_len: usize,
    /// Beat samples per token.
    pub ppg_token: usize,
    /// Fingerprint pixels per token (row-major runs).
    pub fp_token: usize,
    pub scale: ScaleMode,
    pub variant: Variant,
}

impl Default for ModelConfig {
    /// Width 128, state 64, two blocks, four heads, one scalar per token.
    fn default() -> Self {
        Self {
            d: 128,
            d_h: 64,
            blocks: 2,
            heads: 4,
            ppg_len: BEAT_LEN,
            fp_len: FP_LEN,
            ppg_token: 1,
            fp_token: 1,
            scale: ScaleMode::Model,
            variant: Variant::Fused,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains on one CPU core in minutes: beats
    /// as 75 tokens of 4 samples, fingerprints as their 64 rows.
    pub fn desk() -> Self {
        Self {
            d: 16,
            d_h: 8,
            blocks: 2,
            heads: 2,
            ppg_token: 4,
            fp_token: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide width {}", self.heads, self.d)));
        }
        self.ppg_encoder().validate()?;
        self.fp_encoder().validate()
    }

    fn encoder(&self, input_len: usize, token_width: usize) -> EncoderConfig {
        EncoderConfig {
            input_len,
            token_width,
            d: self.d,
            d_h: self.d_h,
            blocks: self.blocks,
        }
    }

    pub fn ppg_encoder(&self) -> EncoderConfig {
        self.encoder(self.ppg_len, self.ppg_token)
    }

    pub fn fp_encoder(&self) -> EncoderConfig {
        self.encoder(self.fp_len, self.fp_token)
    }
}

/// Parameter layout of a model; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub enc_u: Option<Encoder>,
    pub enc_v: Option<Encoder>,
    pub u2v: Option<CrossAttention>,
    pub v2u: Option<CrossAttention>,
    /// Pooling projection of single-modality variants.
    pub proj: Option<ParamId>,
    pub clf: Classifier,
}

/// Per-item latents and logits of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BatchOutput {
    /// `m×d` unit rows; `None` when the modality is unused.
    pub u: Option<Var>,
    pub v: Option<Var>,
    /// `m×1`.
    pub logits: Var,
}

/// One model input; the unused modality of a single-modality variant must be `None`.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub beat: Option<&'a [f64]>,
    pub fingerprint: Option<&'a [f64]>,
}

impl Model {
    /// Registers every parameter in a fresh store, seeded.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let v = cfg.variant;
        let enc_u = v
            .uses_ppg()
            .then(|| Encoder::init(&mut store, "enc_u", cfg.ppg_encoder(), &mut rng))
            .transpose()?;
        let enc_v = v
            .uses_fingerprint()
            .then(|| Encoder::init(&mut store, "enc_v", cfg.fp_encoder(), &mut rng))
            .transpose()?;
        let (u2v, v2u, proj) = if v == Variant::Fused {
            (
                Some(CrossAttention::init(&mut store, "xattn.u2v", cfg.d, cfg.heads, cfg.scale, &mut rng)?),
                Some(CrossAttention::init(&mut store, "xattn.v2u", cfg.d, cfg.heads, cfg.scale, &mut rng)?),
                None,
            )
        } else {
            let sd = 1.0 / (cfg.d as f64).sqrt();
            let dist = rand_distr::Normal::new(0.0, sd).expect("positive sd");
            use rand_distr::Distribution;
            let w: Vec<f64> = (0..cfg.d * cfg.d).map(|_| dist.sample(&mut rng)).collect();
            (None, None, Some(store.add("pool.proj", Tensor::new(&[cfg.d, cfg.d], w)?)))
        };
        let clf = Classifier::init(&mut store, "clf", cfg.d, &mut rng)?;
        Ok((
            Self {
                cfg,
                enc_u,
                enc_v,
                u2v,
                v2u,
                proj,
                clf,
            },
            store,
        ))
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundModel {
        BoundModel {
            variant: self.cfg.variant,
            enc_u: self.enc_u.as_ref().map(|e| (e.clone(), e.bind(tape, store))),
            enc_v: self.enc_v.as_ref().map(|e| (e.clone(), e.bind(tape, store))),
            u2v: self.u2v.as_ref().map(|x| x.bind(tape, store)),
            v2u: self.v2u.as_ref().map(|x| x.bind(tape, store)),
            proj: self.proj.map(|p| tape.param(store, p)),
            clf: self.clf.bind(tape, store),
        }
    }

    /// Applies the stability projection to every encoder.
    pub fn project(&self, store: &mut ParamStore) -> usize {
        self.enc_u.iter().chain(&self.enc_v).map(|e| e.project_stability(store)).sum()
    }
}

pub struct BoundModel {
    variant: Variant,
    enc_u: Option<(Encoder, BoundEncoder)>,
    enc_v: Option<(Encoder, BoundEncoder)>,
    u2v: Option<BoundCrossAttention>,
    v2u: Option<BoundCrossAttention>,
    proj: Option<Var>,
    clf: BoundClassifier,
}

fn encode(tape: &mut Tape, enc: &Option<(Encoder, BoundEncoder)>, raw: Option<&[f64]>, what: &str) -> Result<Option<Var>> {
    match (enc, raw) {
        (Some((e, b)), Some(raw)) => {
            let x = tape.constant(e.tokens(raw)?);
            Ok(Some(b.forward(tape, x)?))
        }
        (Some(_), None) => Err(Error::Input(format!("model needs a {what} input"))),
        (None, Some(_)) => Err(Error::Contract(format!("this variant must not receive {what} input"))),
        (None, None) => Ok(None),
    }
}

impl BoundModel {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Latents for one item: `(u, v)` as `1×d` unit rows.
    pub fn latents(&self, tape: &mut Tape, input: PairInput<'_>) -> Result<(Option<Var>, Option<Var>)> {
        let gu = encode(tape, &self.enc_u, input.beat, "beat")?;
        let gv = encode(tape, &self.enc_v, input.fingerprint, "fingerprint")?;
        match (gu, gv) {
            (Some(gu), Some(gv)) => {
                let u = self.u2v.as_ref().expect("fused model").latent(tape, gu, gv)?;
                let v = self.v2u.as_ref().expect("fused model").latent(tape, gv, gu)?;
                Ok((Some(u), Some(v)))
            }
            (Some(g), None) => Ok((Some(pool_project(tape, g, self.proj.expect("single-modality model"))?), None)),
            (None, Some(g)) => Ok((None, Some(pool_project(tape, g, self.proj.expect("single-modality model"))?))),
            (None, None) => Err(Error::Input("no input modality".into())),
        }
    }

    /// Forward pass over a batch.
    pub fn forward(&self, tape: &mut Tape, batch: &[PairInput<'_>]) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut us = Vec::with_capacity(batch.len());
        let mut vs = Vec::with_capacity(batch.len());
        for item in batch {
            let (u, v) = self.latents(tape, *item)?;
            us.extend(u);
            vs.extend(v);
        }
        let u = (!us.is_empty()).then(|| tape.stack_rows(&us)).transpose()?;
        let v = (!vs.is_empty()).then(|| tape.stack_rows(&vs)).transpose()?;
        let z = match (u, v) {
            (Some(u), Some(v)) => crate::attention::fuse(tape, u, v)?,
            (Some(u), None) => u,
            (None, Some(v)) => v,
            (None, None) => unreachable!("latents returned at least one modality"),
        };
        let logits = self.clf.classify(tape, z)?;
        Ok(BatchOutput { u, v, logits })
    }
}

/// Writes parameters followed by `moments.mu_u` and `moments.mu_v`.
pub fn save_checkpoint(path: &Path, store: &ParamStore, moments: &MomentEstimates) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    entries.push(("moments.mu_u".into(), Tensor::row(&moments.mu_u)?));
    entries.push(("moments.mu_v".into(), Tensor::row(&moments.mu_v)?));
    write_container(path, &entries)
}

/// Rebuilds a model of configuration `cfg` from a checkpoint; every
/// parameter must be present with its expected shape.
pub fn load_checkpoint(path: &Path, cfg: ModelConfig) -> Result<(Model, ParamStore, MomentEstimates)> {
    let (model, mut store) = Model::init(cfg, 0)?;
    let entries = read_container(path)?;
    let mut moments = MomentEstimates::zeros(cfg.d);
    let mut seen = 0;
    for (name, t) in entries {
        match name.as_str() {
            "moments.mu_u" => moments.mu_u = t.into_data(),
            "moments.mu_v" => moments.mu_v = t.into_data(),
            _ => {
                store
                    .set(&name, t)
                    .map_err(|e| Error::format(path, format!("{e} (checkpoint/config mismatch)")))?;
                seen += 1;
            }
        }
    }
    if seen != store.len() || moments.mu_u.len() != cfg.d || moments.mu_v.len() != cfg.d {
        return Err(Error::format(
            path,
            format!("checkpoint holds {seen} of {} parameters or malformed moments", store.len()),
        ));
    }
    Ok((model, store, moments))
}

/// Analytic multiply-accumulate-based operation count of one forward pass.
///
/// Counts two operations per real multiply-add; complex multiply-adds count
/// eight. Element-wise activations and normalizations count a handful of
/// operations per entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopCount {
    pub encoder_u: f64,
    pub encoder_v: f64,
    pub attention: f64,
    pub head: f64,
}

impl FlopCount {
    pub fn total(&self) -> f64 {
        self.encoder_u + self.encoder_v + self.attention + self.head
    }
}

/// Operations of one encoder on a sequence of `enc.seq_len()` tokens.
pub fn encoder_flops(enc: &EncoderConfig) -> f64 {
    let (l, d, dh, w) = (enc.seq_len() as f64, enc.d as f64, enc.d_h as f64, enc.token_width as f64);
    let embed = 2.0 * l * w * d + l * d;
    let norm = 8.0 * l * d;
    // Per step and state: Ā·h (complex mul), + B̄x (2 mul + 2 add), re⟨C, h⟩ (2 mul + 2 add).
    let scan = l * d * dh * (6.0 + 4.0 + 4.0);
    let act = 10.0 * l * d;
    let mix = 2.0 * l * d * d + l * d;
    let residual = l * d;
    embed + enc.blocks as f64 * (norm + scan + act + mix + residual)
}

fn cross_flops(la: f64, lb: f64, d: f64, heads: f64) -> f64 {
    let dk = d / heads;
    let proj = heads * (2.0 * la * d * dk + 2.0 * 2.0 * lb * d * dk);
    let scores = heads * (2.0 * la * lb * dk + la * lb);
    let softmax = heads * 3.0 * la * lb;
    let mix = heads * 2.0 * la * lb * dk;
    let out = 2.0 * la * d * d;
    let pool = la * d + 2.0 * d * d + 3.0 * d;
    proj + scores + softmax + mix + out + pool
}

/// Operation count of a model's forward pass on one pair.
pub fn model_flops(cfg: &ModelConfig) -> FlopCount {
    let d = cfg.d as f64;
    let (lu, lv) = (cfg.ppg_encoder().seq_len() as f64, cfg.fp_encoder().seq_len() as f64);
    let v = cfg.variant;
    let encoder_u = if v.uses_ppg() { encoder_flops(&cfg.ppg_encoder()) } else { 0.0 };
    let encoder_v = if v.uses_fingerprint() { encoder_flops(&cfg.fp_encoder()) } else { 0.0 };
    let attention = match v {
        Variant::Fused => cross_flops(lu, lv, d, cfg.heads as f64) + cross_flops(lv, lu, d, cfg.heads as f64) + d,
        Variant::Ppg => lu * d + 2.0 * d * d + 3.0 * d,
        Variant::Fingerprint => lv * d + 2.0 * d * d + 3.0 * d,
    };
    let h = (d / 2.0).max(1.0);
    let head = 2.0 * d * h + h * 11.0 + 2.0 * h + 1.0;
    FlopCount {
        encoder_u,
        encoder_v,
        attention,
        head,
    }
}
