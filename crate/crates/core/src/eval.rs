//! Verification metrics, validation scoring and the modality ablation.

use std::fmt::Write as _;

use crate::diff::{sigmoid, Tape};
use crate::error::{Error, Result};
use crate::losses::{cosine, MomentEstimates};
use crate::model::{model_flops, Model, Variant};
use crate::trainer::{as_inputs, prepare, train, validation_pairs, Pair, PreparedPair, Split, TrainConfig, Trained, UserItems};
use crate::diff::ParamStore;

/// Classifier scores with genuine (`true`) or impostor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!("{} scores vs {} labels", scores.len(), labels.len())));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Input("scores contain NaN".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let g = self.labels.iter().filter(|&&l| l).count();
        (g, self.labels.len() - g)
    }
}

/// An operating point: accept when `score ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at `−∞`, every distinct score, and `+∞`.
pub fn roc(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (n_gen, n_imp) = s.counts();
    if n_gen == 0 || n_imp == 0 {
        return Err(Error::Metric("ROC needs both genuine and impostor scores".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut out = Vec::with_capacity(s.len() + 2);
    out.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    });
    // Scores strictly below the current threshold, by class.
    let (mut gen_below, mut imp_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        out.push(RocPoint {
            threshold: t,
            far: (n_imp - imp_below) as f64 / n_imp as f64,
            frr: gen_below as f64 / n_gen as f64,
        });
        while i < order.len() && s.scores[order[i]] == t {
            if s.labels[order[i]] {
                gen_below += 1;
            } else {
                imp_below += 1;
            }
            i += 1;
        }
    }
    out.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(out)
}

/// How the FAR/FRR crossing is read off the curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    /// Linear interpolation between the two points bracketing the crossing.
    #[default]
    Linear,
    /// Smallest `max(FAR, FRR)` over the curve's points.
    Step,
}

impl Interp {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Interp::Linear),
            "step" => Ok(Interp::Step),
            _ => Err(Error::Config(format!("unknown interpolation {s:?}; expected linear or step"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Interp::Linear => "linear",
            Interp::Step => "step",
        }
    }
}

/// Equal error rate of a curve from [`roc`]; above one half only for
/// scorers worse than chance.
pub fn eer(curve: &[RocPoint], interp: Interp) -> f64 {
    match interp {
        Interp::Step => curve.iter().map(|p| p.far.max(p.frr)).fold(1.0, f64::min),
        Interp::Linear => {
            let Some(i) = curve.iter().position(|p| p.far <= p.frr) else {
                return 0.5;
            };
            let p = curve[i];
            if p.far == p.frr || i == 0 {
                return p.far.max(p.frr);
            }
            let q = curve[i - 1];
            let (dq, dp) = (q.far - q.frr, p.far - p.frr);
            let t = dq / (dq - dp);
            q.far + t * (p.far - q.far)
        }
    }
}

/// Threshold of the point closest to the FAR/FRR crossing.
pub fn eer_threshold(curve: &[RocPoint]) -> f64 {
    let best = curve
        .iter()
        .filter(|p| p.threshold.is_finite())
        .min_by(|a, b| (a.far - a.frr).abs().total_cmp(&(b.far - b.frr).abs()));
    best.map_or(0.5, |p| p.threshold)
}

/// Fraction classified correctly when accepting `score ≥ threshold`.
pub fn accuracy(s: &ScoreSet, threshold: f64) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let ok = s.scores.iter().zip(&s.labels).filter(|(&x, &l)| (x >= threshold) == l).count();
    ok as f64 / s.len() as f64
}

/// Where accuracy is measured.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdRule {
    #[default]
    Eer,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub threshold: ThresholdRule,
    pub interp: Interp,
}

/// Classifier scores and latents of scored pairs.
#[derive(Debug, Clone)]
pub struct Scored {
    pub set: ScoreSet,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

const SCORE_CHUNK: usize = 32;

/// Scores pairs without augmentation.
pub fn score_pairs(model: &Model, store: &ParamStore, users: &[UserItems], pairs: &[Pair]) -> Result<Scored> {
    let variant = model.cfg.variant;
    let (mut scores, mut labels, mut us, mut vs) = (vec![], vec![], vec![], vec![]);
    for chunk in pairs.chunks(SCORE_CHUNK) {
        let prepared: Vec<PreparedPair> = chunk.iter().map(|p| prepare(users, p, variant, None)).collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, store);
        let out = bound.forward(&mut tape, &as_inputs(&prepared))?;
        scores.extend(tape.value(out.logits).data().iter().map(|&l| sigmoid(l)));
        labels.extend(chunk.iter().map(|p| p.positive));
        let rows = |x: Option<crate::diff::Var>, dst: &mut Vec<Vec<f64>>| {
            if let Some(x) = x {
                let t = tape.value(x);
                dst.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
            }
        };
        rows(out.u, &mut us);
        rows(out.v, &mut vs);
    }
    Ok(Scored {
        set: ScoreSet::new(scores, labels)?,
        u: us,
        v: vs,
    })
}

/// Agreement of the two moments and their similarity to impostor latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub moment_cosine: f64,
    pub impostor_cosine: f64,
}

pub fn alignment_report(moments: &MomentEstimates, scored: &Scored) -> Result<AlignmentReport> {
    if scored.u.is_empty() || scored.v.is_empty() {
        return Err(Error::Input("alignment needs both latents".into()));
    }
    let mut acc = 0.0;
    let mut n = 0;
    for (i, &genuine) in scored.set.labels.iter().enumerate() {
        if !genuine {
            acc += cosine(&moments.mu_u, &scored.u[i]) + cosine(&moments.mu_v, &scored.v[i]);
            n += 2;
        }
    }
    if n == 0 {
        return Err(Error::Input("no impostor latents".into()));
    }
    Ok(AlignmentReport {
        moment_cosine: cosine(&moments.mu_u, &moments.mu_v),
        impostor_cosine: acc / n as f64,
    })
}

/// Validation outcome for one target user.
#[derive(Debug, Clone)]
pub struct UserResult {
    pub target: usize,
    pub variant: Variant,
    pub eer: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub alignment: Option<AlignmentReport>,
    pub scores: ScoreSet,
}

/// Scores a trained model on the target's validation pairs.
pub fn evaluate(
    target: usize,
    model: &Model,
    store: &ParamStore,
    moments: &MomentEstimates,
    val: &[UserItems],
    factor: usize,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<UserResult> {
    let pairs = validation_pairs(target, val, factor, seed)?;
    let scored = score_pairs(model, store, val, &pairs)?;
    let curve = roc(&scored.set)?;
    let threshold = match cfg.threshold {
        ThresholdRule::Eer => eer_threshold(&curve),
        ThresholdRule::Fixed(t) => t,
    };
    let alignment = (model.cfg.variant == Variant::Fused)
        .then(|| alignment_report(moments, &scored))
        .transpose()?;
    Ok(UserResult {
        target,
        variant: model.cfg.variant,
        eer: eer(&curve, cfg.interp),
        accuracy: accuracy(&scored.set, threshold),
        threshold,
        alignment,
        scores: scored.set,
    })
}

/// Trains on the split's training side and validates on the other.
pub fn train_and_evaluate(target: usize, split: &Split, cfg: &TrainConfig, eval: &EvalConfig) -> Result<(Trained, UserResult)> {
    let trained = train(target, &split.train, cfg)?;
    trained.log.assert_disjoint(&split.val)?;
    let seed = crate::synth::derive_seed(cfg.seed, 40, target as u64);
    let result = evaluate(
        target,
        &trained.model,
        &trained.store,
        &trained.moments,
        &split.val,
        cfg.pairs.factor,
        seed,
        eval,
    )?;
    Ok((trained, result))
}

/// One line of the ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    pub eer: f64,
    pub flops: f64,
    /// Per-target EERs in target order.
    pub per_user: Vec<(usize, f64)>,
}

pub fn modality(v: Variant) -> &'static str {
    match v {
        Variant::Fused => "ppg+fingerprint",
        Variant::Ppg => "ppg",
        Variant::Fingerprint => "fingerprint",
    }
}

/// Trains each variant for each target under identical seeds and split.
pub fn ablation_run(
    split: &Split,
    targets: &[usize],
    cfg: &TrainConfig,
    eval: &EvalConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    for need in Variant::ALL {
        if !variants.contains(&need) {
            return Err(Error::Config(format!("ablation needs the {} variant", need.name())));
        }
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut c = *cfg;
        c.model.variant = variant;
        let mut per_user = Vec::with_capacity(targets.len());
        let mut acc = 0.0;
        for &t in targets {
            let (_, r) = train_and_evaluate(t, split, &c, eval)?;
            per_user.push((t, r.eer));
            acc += r.accuracy;
        }
        let n = targets.len().max(1) as f64;
        rows.push(AblationRow {
            variant,
            accuracy: acc / n,
            eer: per_user.iter().map(|p| p.1).sum::<f64>() / n,
            flops: model_flops(&c.model).total(),
            per_user,
        });
    }
    Ok(rows)
}

/// Report CSV: `variant,modality,acc,eer,flops`.
pub fn report_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,modality,acc,eer,flops\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.variant.name(), modality(r.variant), r.accuracy, r.eer, r.flops);
    }
    s
}

/// Plain-text summary of an ablation.
pub fn report_summary(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<16} ACC {:6.2}%  EER {:6.2}%  {:.3e} FLOPs",
            r.variant.name(),
            modality(r.variant),
            100.0 * r.accuracy,
            100.0 * r.eer,
            r.flops
        );
    }
    s
}

/// ROC points as CSV: `threshold,far,frr`.
pub fn roc_csv(curve: &[RocPoint]) -> String {
    let mut s = String::from("threshold,far,frr\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.far, p.frr);
    }
    s
}

/// Per-user metrics as CSV: `target,variant,acc,eer,threshold,moment_cos,impostor_cos`.
pub fn results_csv(results: &[UserResult]) -> String {
    let mut s = String::from("target,variant,acc,eer,threshold,moment_cos,impostor_cos\n");
    for r in results {
        let (m, i) = r
            .alignment
            .map_or((String::new(), String::new()), |a| (a.moment_cosine.to_string(), a.impostor_cosine.to_string()));
        let _ = writeln!(s, "{},{},{},{},{},{m},{i}", r.target, r.variant.name(), r.accuracy, r.eer, r.threshold);
    }
    s
}
