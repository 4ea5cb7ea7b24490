//! Per-user training: pairing, augmentation, moment tracking and the
//! combined objective under Adam.

mod augment;
mod pairs;

pub use augment::{
    add_noise, augment_fingerprint, augment_ppg, crop_resize, hflip, rotate, FpAugment, PpgAugment, JITTER_SIGMA,
    MAX_ROTATION_DEG, MIN_CROP_AREA, NOISE_SIGMA,
};
pub use pairs::{
    collect_items, make_pairs, split, stratified_batches, validation_pairs, Item, ItemId, Pair, PairConfig, Split,
    SplitMode, UserItems, MIN_TARGET_ITEMS,
};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::diff::{
    adam_step, finite_difference_check_with, AdamConfig, AdamState, GradCheckReport, ParamStore, Stencil, Tape, Var,
};
use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::losses::{alignment_loss, ema_on_tape, spread_loss, total_loss, weighted_bce, LossWeights, MomentEstimates};
use crate::model::{Model, ModelConfig, PairInput, Variant};
use crate::synth::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weights: LossWeights,
    pub ppg_aug: PpgAugment,
    pub fp_aug: FpAugment,
    pub pairs: PairConfig,
    pub model: ModelConfig,
    /// Blocks gradients through negative latents in the alignment loss.
    pub detach_negatives: bool,
}

impl Default for TrainConfig {
    /// 200 epochs of 256-pair batches at the full model width.
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 256,
            adam: AdamConfig::default(),
            seed: 0,
            weights: LossWeights::default(),
            ppg_aug: PpgAugment::default(),
            fp_aug: FpAugment::default(),
            pairs: PairConfig::default(),
            model: ModelConfig::default(),
            detach_negatives: false,
        }
    }
}

impl TrainConfig {
    /// 40 epochs of 64-pair batches on the small model at learning rate 3e-3.
    pub fn desk() -> Self {
        Self {
            epochs: 40,
            batch: 64,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            model: ModelConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch < 2 {
            return Err(Error::Config(format!("batch must be ≥ 2, got {}", self.batch)));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.pairs.validate()?;
        self.model.validate()
    }
}

/// One row of the loss log; components are unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub lc: f64,
    pub la: f64,
    pub ls: f64,
    pub total: f64,
}

/// Batch means of positive latents and the moments after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub epoch: usize,
    pub batch: usize,
    pub mean_u: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub mu_u: Vec<f64>,
    pub mu_v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<LossRecord>,
    pub moments: Vec<MomentRecord>,
    /// Batches without positives, as `(epoch, batch)`.
    pub skipped: Vec<(usize, usize)>,
    /// Every item that contributed to a gradient.
    pub consumed: BTreeSet<ItemId>,
}

impl TrainLog {
    /// Fails if any validation item reached a gradient update.
    pub fn assert_disjoint(&self, val: &[UserItems]) -> Result<()> {
        match val.iter().flat_map(|u| &u.items).find(|i| self.consumed.contains(&i.id)) {
            Some(i) => Err(Error::Contract(format!("validation item {:?} was used for training", i.id))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub moments: MomentEstimates,
    pub log: TrainLog,
}

/// Model inputs of one pair, augmented when a seed is given.
pub struct PreparedPair {
    pub beat: Option<Vec<f64>>,
    pub fingerprint: Option<Vec<f64>>,
}

pub fn prepare(users: &[UserItems], pair: &Pair, variant: Variant, aug: Option<(&TrainConfig, u64)>) -> PreparedPair {
    let item = |(u, i): (usize, usize)| users[u].get(i);
    let beat = variant.uses_ppg().then(|| {
        let b = &item(pair.beat).beat;
        match aug {
            Some((cfg, seed)) => augment_ppg(b, &cfg.ppg_aug, derive_seed(seed, 1, 0)).samples().to_vec(),
            None => b.samples().to_vec(),
        }
    });
    let fingerprint = variant.uses_fingerprint().then(|| {
        let f = &item(pair.fingerprint).fingerprint;
        match aug {
            Some((cfg, seed)) => augment_fingerprint(f, &cfg.fp_aug, derive_seed(seed, 2, 0)).pixels().to_vec(),
            None => f.pixels().to_vec(),
        }
    });
    PreparedPair { beat, fingerprint }
}

pub fn as_inputs(prepared: &[PreparedPair]) -> Vec<PairInput<'_>> {
    prepared
        .iter()
        .map(|p| PairInput {
            beat: p.beat.as_deref(),
            fingerprint: p.fingerprint.as_deref(),
        })
        .collect()
}

fn select_rows(tape: &mut Tape, x: Var, idx: &[usize]) -> Result<Var> {
    let rows: Vec<Var> = idx.iter().map(|&i| tape.row(x, i)).collect::<Result<_>>()?;
    tape.stack_rows(&rows)
}

fn row_mean(tape: &Tape, x: Var) -> Vec<f64> {
    let t = tape.value(x);
    (0..t.cols())
        .map(|c| (0..t.rows()).map(|r| t.at(r, c)).sum::<f64>() / t.rows() as f64)
        .collect()
}

/// Tape handles of the moment update.
#[derive(Debug, Clone, Copy)]
pub struct MomentVars {
    pub pos_u: Var,
    pub pos_v: Var,
    pub mu_u: Var,
    pub mu_v: Var,
}

/// The combined objective of one batch and its parts.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub lc: Var,
    pub la: Option<Var>,
    pub ls: Option<Var>,
    /// Present when the model is fused and the batch has positives.
    pub moments: Option<MomentVars>,
}

/// Forward pass and loss of one batch given the moments before it.
///
/// Without positives the moments pass through and only the classification
/// term applies; without negatives the alignment term is dropped.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    tape: &mut Tape,
    model: &Model,
    store: &ParamStore,
    inputs: &[PairInput<'_>],
    labels: &[bool],
    pos_weight: f64,
    prev: &MomentEstimates,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let w = cfg.weights;
    let bound = model.bind(tape, store);
    let out = bound.forward(tape, inputs)?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let lc = weighted_bce(tape, out.logits, &y, pos_weight)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&j| labels[j]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&j| !labels[j]).collect();
    let (mut la, mut ls, mut moments) = (None, None, None);
    if let (Some(u), Some(v), false) = (out.u, out.v, pos.is_empty()) {
        let (pos_u, pos_v) = (select_rows(tape, u, &pos)?, select_rows(tape, v, &pos)?);
        let (mu_u, mu_v) = ema_on_tape(tape, prev, pos_u, pos_v, w.alpha, w.beta)?;
        if w.lambda_a > 0.0 && !neg.is_empty() {
            let (mut nu, mut nv) = (select_rows(tape, u, &neg)?, select_rows(tape, v, &neg)?);
            if cfg.detach_negatives {
                nu = tape.constant(tape.value(nu).clone());
                nv = tape.constant(tape.value(nv).clone());
            }
            la = Some(alignment_loss(tape, mu_u, mu_v, nu, nv, w.tau)?);
        }
        if w.lambda_s > 0.0 {
            ls = Some(spread_loss(tape, pos_u, pos_v, mu_u, mu_v)?);
        }
        moments = Some(MomentVars { pos_u, pos_v, mu_u, mu_v });
    }
    let total = total_loss(tape, lc, la, ls, &w)?;
    Ok(BatchLoss {
        total,
        lc,
        la,
        ls,
        moments,
    })
}

/// Trains one authenticator for `target` on the training side of a split.
pub fn train(target: usize, users: &[UserItems], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let variant = cfg.model.variant;
    let (model, mut store) = Model::init(cfg.model, derive_seed(cfg.seed, 30, target as u64))?;
    let mut adam = AdamState::new(&store);
    let mut moments = MomentEstimates::zeros(cfg.model.d);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, 31 + target as u64, epoch as u64);
        let pairs = make_pairs(target, users, variant, &cfg.pairs, derive_seed(epoch_seed, 1, 0))?;
        let n_pos = pairs.iter().filter(|p| p.positive).count();
        let pos_weight = (pairs.len() - n_pos) as f64 / n_pos.max(1) as f64;
        let batches = stratified_batches(&pairs, cfg.batch, derive_seed(epoch_seed, 2, 0))?;
        for (bi, batch) in batches.iter().enumerate() {
            let prepared: Vec<PreparedPair> = batch
                .iter()
                .enumerate()
                .map(|(j, p)| prepare(users, p, variant, Some((cfg, derive_seed(epoch_seed, 3 + bi as u64, j as u64)))))
                .collect();
            let labels: Vec<bool> = batch.iter().map(|p| p.positive).collect();

            let mut tape = Tape::new();
            let bl = batch_loss(&mut tape, &model, &store, &as_inputs(&prepared), &labels, pos_weight, &moments, cfg)?;
            let (total, lc, la, ls) = (bl.total, bl.lc, bl.la, bl.ls);
            let record = bl.moments.map(|m| MomentRecord {
                epoch,
                batch: bi,
                mean_u: row_mean(&tape, m.pos_u),
                mean_v: row_mean(&tape, m.pos_v),
                mu_u: tape.value(m.mu_u).data().to_vec(),
                mu_v: tape.value(m.mu_v).data().to_vec(),
            });
            if !labels.contains(&true) {
                log.skipped.push((epoch, bi));
            }
            let value = tape.scalar(total);
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {value} at epoch {epoch}, batch {bi}"
                )));
            }
            let grads = tape.backward(total)?;
            tape.accumulate_param_grads(&grads, &mut store);
            adam_step(&mut store, &mut adam, &cfg.adam)?;
            model.project(&mut store);

            if let Some(r) = record {
                moments = MomentEstimates {
                    mu_u: r.mu_u.clone(),
                    mu_v: r.mu_v.clone(),
                };
                log.moments.push(r);
            }
            log.losses.push(LossRecord {
                epoch,
                batch: bi,
                lc: tape.scalar(lc),
                la: la.map_or(0.0, |v| tape.scalar(v)),
                ls: ls.map_or(0.0, |v| tape.scalar(v)),
                total: value,
            });
            for p in batch {
                if variant.uses_ppg() {
                    log.consumed.insert(users[p.beat.0].get(p.beat.1).id);
                }
                if variant.uses_fingerprint() {
                    log.consumed.insert(users[p.fingerprint.0].get(p.fingerprint.1).id);
                }
            }
        }
    }
    Ok(Trained {
        model,
        store,
        moments,
        log,
    })
}

/// The smallest model exercising every layer: width 8, state 4, two
/// heads, one block, 16 beat and 25 fingerprint tokens.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_h: 4,
        blocks: 1,
        heads: 2,
        ppg_len: 16,
        fp_len: 25,
        ppg_token: 1,
        fp_token: 1,
        ..ModelConfig::default()
    }
}

/// Default step for [`gradcheck_tiny`] with [`Stencil::FourPoint`].
pub const GRADCHECK_STEP: f64 = 3e-4;

/// Central-difference check of the full training objective on a
/// four-pair batch (two genuine, two impostor) of the tiny model.
pub fn gradcheck_tiny(seed: u64, h: f64, stencil: Stencil) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let cfg = TrainConfig {
        model: tiny_model(),
        ..TrainConfig::default()
    };
    let (model, mut store) = Model::init(cfg.model, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 50, 0));
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..1.0)).collect() };
    let beats: Vec<Vec<f64>> = (0..4).map(|_| draw(16)).collect();
    let fps: Vec<Vec<f64>> = (0..4).map(|_| draw(25)).collect();
    let prev = MomentEstimates {
        mu_u: draw(8).iter().map(|x| x - 0.5).collect(),
        mu_v: draw(8).iter().map(|x| x - 0.5).collect(),
    };
    let labels = [true, true, false, false];
    finite_difference_check_with(&mut store, h, stencil, |s| {
        let mut tape = Tape::new();
        let inputs: Vec<PairInput> = (0..4)
            .map(|i| PairInput {
                beat: Some(&beats[i]),
                fingerprint: Some(&fps[i]),
            })
            .collect();
        let bl = batch_loss(&mut tape, &model, s, &inputs, &labels, 1.0, &prev, &cfg)?;
        Ok((tape, bl.total))
    })
}

/// Loss log as CSV: `epoch,batch,l_c,l_a,l_s,l`.
pub fn losses_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("epoch,batch,l_c,l_a,l_s,l\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.batch, r.lc, r.la, r.ls, r.total);
    }
    s
}

/// Moment log as CSV: `epoch,batch,kind,v0,…` with kinds `mean_u`, `mean_v`, `mu_u`, `mu_v`.
pub fn moments_csv(records: &[MomentRecord]) -> String {
    let mut s = String::from("epoch,batch,kind,values\n");
    for r in records {
        for (kind, v) in [("mean_u", &r.mean_u), ("mean_v", &r.mean_v), ("mu_u", &r.mu_u), ("mu_v", &r.mu_v)] {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{},{},{kind},{}", r.epoch, r.batch, vals.join(","));
        }
    }
    s
}

/// Parses [`moments_csv`] output; values round-trip exactly.
pub fn parse_moments_csv(text: &str) -> Result<Vec<MomentRecord>> {
    let bad = |line: usize, what: &str| Error::Input(format!("moment log line {line}: {what}"));
    let mut out: Vec<MomentRecord> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let mut f = line.split(',');
        let mut field = || f.next().ok_or_else(|| bad(n + 1, "missing field"));
        let epoch: usize = field()?.parse().map_err(|_| bad(n + 1, "epoch"))?;
        let batch: usize = field()?.parse().map_err(|_| bad(n + 1, "batch"))?;
        let kind = field()?.to_string();
        let vals: Vec<f64> = f
            .map(|v| v.parse().map_err(|_| bad(n + 1, "value")))
            .collect::<Result<_>>()?;
        if kind == "mean_u" {
            out.push(MomentRecord {
                epoch,
                batch,
                mean_u: vals,
                mean_v: vec![],
                mu_u: vec![],
                mu_v: vec![],
            });
            continue;
        }
        let r = out
            .last_mut()
            .filter(|r| r.epoch == epoch && r.batch == batch)
            .ok_or_else(|| bad(n + 1, "record does not start with mean_u"))?;
        match kind.as_str() {
            "mean_v" => r.mean_v = vals,
            "mu_u" => r.mu_u = vals,
            "mu_v" => r.mu_v = vals,
            _ => return Err(bad(n + 1, "unknown kind")),
        }
    }
    Ok(out)
}

/// Writes the loss and moment logs into `dir`.
pub fn write_logs(dir: &Path, log: &TrainLog) -> Result<()> {
    write_atomic(&dir.join("losses.csv"), losses_csv(&log.losses).as_bytes())?;
    write_atomic(&dir.join("moments.csv"), moments_csv(&log.moments).as_bytes())
}
