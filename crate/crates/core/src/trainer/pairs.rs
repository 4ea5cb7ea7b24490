//! Per-user item pools, train/validation splits and pair sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::FingerprintImage;
use crate::model::Variant;
use crate::pipeline::SubjectData;
use crate::signal::BeatWaveform;

/// Minimum beats and fingerprints a target user needs.
pub const MIN_TARGET_ITEMS: usize = 10;

/// Identity of one beat-synchronized sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId {
    pub subject: usize,
    pub recording: usize,
    pub index: usize,
}

/// A beat and the fingerprint captured over the same beat span.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub beat: BeatWaveform,
    pub fingerprint: FingerprintImage,
}

/// All items of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserItems {
    pub subject: usize,
    pub items: Vec<Item>,
}

impl UserItems {
    pub fn get(&self, i: usize) -> &Item {
        &self.items[i]
    }
}

/// Flattens preprocessed recordings into per-user item pools.
pub fn collect_items(data: &[SubjectData]) -> Vec<UserItems> {
    data.iter()
        .map(|s| UserItems {
            subject: s.subject,
            items: s
                .recordings
                .iter()
                .enumerate()
                .flat_map(|(r, rec)| {
                    rec.beats
                        .iter()
                        .zip(&rec.fingerprints)
                        .enumerate()
                        .map(move |(i, (b, f))| Item {
                            id: ItemId {
                                subject: s.subject,
                                recording: r,
                                index: i,
                            },
                            beat: b.clone(),
                            fingerprint: f.clone(),
                        })
                })
                .collect(),
        })
        .collect()
}

/// How items are divided between training and validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Seeded per-user shuffle; the given fraction trains.
    Random { train_frac: f64 },
    /// The first recording trains, the rest validate.
    BySession,
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Random { train_frac: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<UserItems>,
    pub val: Vec<UserItems>,
}

impl Split {
    /// Fails if any item id occurs on both sides.
    pub fn assert_isolated(&self) -> Result<()> {
        let train: std::collections::HashSet<ItemId> =
            self.train.iter().flat_map(|u| u.items.iter().map(|i| i.id)).collect();
        match self.val.iter().flat_map(|u| &u.items).find(|i| train.contains(&i.id)) {
            Some(i) => Err(Error::Contract(format!("item {:?} is in both train and validation", i.id))),
            None => Ok(()),
        }
    }
}

/// Splits every user's items.
pub fn split(users: &[UserItems], mode: SplitMode, seed: u64) -> Result<Split> {
    let mut train = Vec::with_capacity(users.len());
    let mut val = Vec::with_capacity(users.len());
    for u in users {
        let (tr, va): (Vec<Item>, Vec<Item>) = match mode {
            SplitMode::Random { train_frac } => {
                if !(0.0 < train_frac && train_frac < 1.0) {
                    return Err(Error::Config(format!("split.train_frac must lie in (0, 1), got {train_frac}")));
                }
                let mut idx: Vec<usize> = (0..u.items.len()).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::synth::derive_seed(seed, 10, u.subject as u64)));
                let k = (u.items.len() as f64 * train_frac).round() as usize;
                let mut tr: Vec<Item> = idx[..k].iter().map(|&i| u.items[i].clone()).collect();
                let mut va: Vec<Item> = idx[k..].iter().map(|&i| u.items[i].clone()).collect();
                tr.sort_by_key(|i| i.id);
                va.sort_by_key(|i| i.id);
                (tr, va)
            }
            SplitMode::BySession => u.items.iter().cloned().partition(|i| i.id.recording == 0),
        };
        train.push(UserItems {
            subject: u.subject,
            items: tr,
        });
        val.push(UserItems {
            subject: u.subject,
            items: va,
        });
    }
    let s = Split { train, val };
    s.assert_isolated()?;
    Ok(s)
}

/// A beat and a fingerprint, each addressed by `(user slot, item index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub beat: (usize, usize),
    pub fingerprint: (usize, usize),
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    /// Positives per epoch as a multiple of the target's item count.
    pub factor: usize,
    /// Fraction of positives among all pairs.
    pub ratio: f64,
    /// Fraction of fused-model negatives that keep one target modality.
    pub mixed: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            factor: 4,
            ratio: 0.5,
            mixed: 0.5,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("pairs.factor must be ≥ 1".into()));
        }
        if !(0.0 < self.ratio && self.ratio < 1.0) {
            return Err(Error::Config(format!("pairs.ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.mixed) {
            return Err(Error::Config(format!("pairs.mixed must lie in [0, 1], got {}", self.mixed)));
        }
        Ok(())
    }
}

fn target_slot(users: &[UserItems], target: usize) -> Result<usize> {
    users
        .iter()
        .position(|u| u.subject == target)
        .ok_or_else(|| Error::Data(format!("target user {target} not in dataset")))
}

/// Positive cross-matches within the target user.
fn positives(t: usize, n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    let mut grid: Vec<(usize, usize)> = (0..n).flat_map(|b| (0..n).map(move |f| (b, f))).collect();
    grid.shuffle(rng);
    (0..count)
        .map(|k| {
            let (b, f) = grid[k % grid.len()];
            Pair {
                beat: (t, b),
                fingerprint: (t, f),
                positive: true,
            }
        })
        .collect()
}

/// One negative: a foreign user's modality the model consumes, optionally
/// mixed with a target modality for the fused model.
fn negative(t: usize, users: &[UserItems], others: &[usize], variant: Variant, mixed: f64, rng: &mut ChaCha8Rng) -> Pair {
    let o = others[rng.random_range(0..others.len())];
    let oi = rng.random_range(0..users[o].items.len());
    let ti = rng.random_range(0..users[t].items.len());
    let (beat, fingerprint) = match variant {
        Variant::Ppg => ((o, oi), (t, ti)),
        Variant::Fingerprint => ((t, ti), (o, oi)),
        Variant::Fused => {
            if rng.random_bool(mixed) {
                if rng.random_bool(0.5) {
                    ((t, ti), (o, oi))
                } else {
                    ((o, oi), (t, ti))
                }
            } else {
                ((o, oi), (o, oi))
            }
        }
    };
    Pair {
        beat,
        fingerprint,
        positive: false,
    }
}

/// Seeded pair list for one pass over the target's data: `factor·n`
/// positives and enough negatives to meet `ratio`.
pub fn make_pairs(target: usize, users: &[UserItems], variant: Variant, cfg: &PairConfig, seed: u64) -> Result<Vec<Pair>> {
    cfg.validate()?;
    let t = target_slot(users, target)?;
    let n = users[t].items.len();
    if n < MIN_TARGET_ITEMS {
        return Err(Error::Data(format!(
            "user {target} has {n} beats and fingerprints; at least {MIN_TARGET_ITEMS} are needed"
        )));
    }
    let others: Vec<usize> = (0..users.len()).filter(|&i| i != t && !users[i].items.is_empty()).collect();
    if others.is_empty() {
        return Err(Error::Data("no other users to draw negatives from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = cfg.factor * n;
    let n_neg = ((n_pos as f64) * (1.0 - cfg.ratio) / cfg.ratio).round().max(1.0) as usize;
    let mut pairs = positives(t, n, n_pos, &mut rng);
    pairs.extend((0..n_neg).map(|_| negative(t, users, &others, variant, cfg.mixed, &mut rng)));
    Ok(pairs)
}

/// Validation pairs: target cross-matches plus every other user's own
/// genuine pairs as impostors.
pub fn validation_pairs(target: usize, users: &[UserItems], factor: usize, seed: u64) -> Result<Vec<Pair>> {
    let t = target_slot(users, target)?;
    let n = users[t].items.len();
    if n == 0 {
        return Err(Error::Data(format!("user {target} has no validation items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = positives(t, n, (factor * n).min(n * n), &mut rng);
    for (o, u) in users.iter().enumerate().filter(|&(o, _)| o != t) {
        pairs.extend((0..u.items.len()).map(|i| Pair {
            beat: (o, i),
            fingerprint: (o, i),
            positive: false,
        }));
    }
    if pairs.iter().all(|p| p.positive) {
        return Err(Error::Data("validation has no impostor items".into()));
    }
    Ok(pairs)
}

/// Splits pairs into batches whose label mix follows the overall mix.
pub fn stratified_batches(pairs: &[Pair], batch: usize, seed: u64) -> Result<Vec<Vec<Pair>>> {
    if batch < 2 {
        return Err(Error::Config(format!("batch must be ≥ 2, got {batch}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg): (Vec<Pair>, Vec<Pair>) = pairs.iter().partition(|p| p.positive);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let nb = pairs.len().div_ceil(batch).max(1);
    let mut out = Vec::with_capacity(nb);
    for i in 0..nb {
        let mut b: Vec<Pair> = pos[i * pos.len() / nb..(i + 1) * pos.len() / nb].to_vec();
        b.extend_from_slice(&neg[i * neg.len() / nb..(i + 1) * neg.len() / nb]);
        b.shuffle(&mut rng);
        out.push(b);
    }
    Ok(out)
}
