//! Distribution-alignment objective: moment alignment over cosine
//! similarities, spread control, EMA moment estimates, weighted BCE and the
//! combined loss.

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest moment norm accepted by the spread and alignment terms.
pub const MOMENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_a: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.1,
            alpha: 0.9,
            beta: 0.9,
            lambda_a: 0.8,
            lambda_s: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.lambda_a >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Config("penalty factors must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Running first-moment estimates of positive-pair latents.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub mu_u: Vec<f64>,
    pub mu_v: Vec<f64>,
}

impl MomentEstimates {
    pub fn zeros(d: usize) -> Self {
        Self {
            mu_u: vec![0.0; d],
            mu_v: vec![0.0; d],
        }
    }
}

/// `μ_u ← αμ_u + (1−α)ū`, `μ_v ← βμ_v + (1−β)v̄`.
pub fn ema_update(prev: &MomentEstimates, u_mean: &[f64], v_mean: &[f64], alpha: f64, beta: f64) -> MomentEstimates {
    let step = |mu: &[f64], m: &[f64], a: f64| mu.iter().zip(m).map(|(p, x)| a * p + (1.0 - a) * x).collect();
    MomentEstimates {
        mu_u: step(&prev.mu_u, u_mean, alpha),
        mu_v: step(&prev.mu_v, v_mean, beta),
    }
}

/// The updated moments as tape nodes. The previous estimates enter as
/// constants; the current batch means keep their gradient.
pub fn ema_on_tape(
    tape: &mut Tape,
    prev: &MomentEstimates,
    pos_u: Var,
    pos_v: Var,
    alpha: f64,
    beta: f64,
) -> Result<(Var, Var)> {
    let one = |tape: &mut Tape, mu: &[f64], pos: Var, a: f64| -> Result<Var> {
        let mean = tape.mean_rows(pos);
        let mean = tape.scale(mean, 1.0 - a);
        let hist: Vec<f64> = mu.iter().map(|v| a * v).collect();
        let hist = tape.constant(Tensor::row(&hist)?);
        tape.add(hist, mean)
    };
    let u = one(tape, &prev.mu_u, pos_u, alpha)?;
    let v = one(tape, &prev.mu_v, pos_v, beta)?;
    Ok((u, v))
}

fn check_norm(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let n = tape.value(v).data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n >= MOMENT_FLOOR) {
        return Err(Error::Numeric(format!("{what} norm {n:e} below floor")));
    }
    Ok(())
}

/// Negated two-sided InfoNCE between the moments, contrasted against the
/// negatives' latents.
///
/// Term one normalizes `exp(sim(μ_u, μ_v)/τ)` over `{μ_v} ∪ {v⁻}`, term
/// two over `{μ_u} ∪ {u⁻}`. `neg_u`, `neg_v` are `n×d`.
pub fn alignment_loss(tape: &mut Tape, mu_u: Var, mu_v: Var, neg_u: Var, neg_v: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    check_norm(tape, mu_u, "μ_u")?;
    check_norm(tape, mu_v, "μ_v")?;
    let nu = tape.l2_normalize_rows(mu_u)?;
    let nv = tape.l2_normalize_rows(mu_v)?;
    let negu = tape.l2_normalize_rows(neg_u)?;
    let negv = tape.l2_normalize_rows(neg_v)?;
    let pair = tape.mul(nu, nv)?;
    let pos = tape.sum(pair);
    let pos = tape.scale(pos, 1.0 / tau);
    let term = |tape: &mut Tape, anchor: Var, own: Var, negs: Var| -> Result<Var> {
        let cands = tape.stack_rows(&[own, negs])?;
        let s = tape.matmul_bt(anchor, cands)?;
        let s = tape.scale(s, 1.0 / tau);
        let lse = tape.logsumexp(s);
        tape.sub(lse, pos)
    };
    let t1 = term(tape, nu, nv, negv)?;
    let t2 = term(tape, nv, nu, negu)?;
    tape.add(t1, t2)
}

/// `Σ ‖u − μ_u‖²/‖μ_u‖² + ‖v − μ_v‖²/‖μ_v‖²` over positive rows.
pub fn spread_loss(tape: &mut Tape, pos_u: Var, pos_v: Var, mu_u: Var, mu_v: Var) -> Result<Var> {
    check_norm(tape, mu_u, "μ_u")?;
    check_norm(tape, mu_v, "μ_v")?;
    let one = |tape: &mut Tape, pos: Var, mu: Var| -> Result<Var> {
        let neg = tape.scale(mu, -1.0);
        let diff = tape.add_row(pos, neg)?;
        let sq = tape.mul(diff, diff)?;
        let num = tape.sum(sq);
        let msq = tape.mul(mu, mu)?;
        let den = tape.sum(msq);
        tape.div(num, den)
    };
    let a = one(tape, pos_u, mu_u)?;
    let b = one(tape, pos_v, mu_v)?;
    tape.add(a, b)
}

/// Mean of `w·y·softplus(−ℓ) + (1−y)·softplus(ℓ)` over an `m×1` logit column.
pub fn weighted_bce(tape: &mut Tape, logits: Var, labels: &[f64], pos_weight: f64) -> Result<Var> {
    let m = tape.value(logits).len();
    if labels.len() != m || m == 0 {
        return Err(Error::Dimension(format!("{m} logits vs {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    if !(pos_weight > 0.0) {
        return Err(Error::Config(format!("pos_weight must be > 0, got {pos_weight}")));
    }
    let shape = tape.value(logits).shape().to_vec();
    let wp = tape.constant(Tensor::new(&shape, labels.iter().map(|y| pos_weight * y).collect())?);
    let wn = tape.constant(Tensor::new(&shape, labels.iter().map(|y| 1.0 - y).collect())?);
    let flipped = tape.scale(logits, -1.0);
    let lp = tape.softplus(flipped);
    let ln = tape.softplus(logits);
    let a = tape.mul(wp, lp)?;
    let b = tape.mul(wn, ln)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.scale(s, 1.0 / m as f64))
}

/// `L_C + λ_A L_A + λ_S L_S`; absent terms count as zero.
pub fn total_loss(tape: &mut Tape, lc: Var, la: Option<Var>, ls: Option<Var>, w: &LossWeights) -> Result<Var> {
    let mut total = lc;
    for (term, lambda) in [(la, w.lambda_a), (ls, w.lambda_s)] {
        if let Some(t) = term {
            let s = tape.scale(t, lambda);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// Cosine similarity of two vectors; zero when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_difference_check;
    use crate::diff::ParamStore;
    use proptest::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(t: &mut Tape, v: &[f64]) -> Var {
        t.constant(Tensor::row(v).unwrap())
    }

    fn mat(t: &mut Tape, rows: &[Vec<f64>]) -> Var {
        t.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn alignment_with_orthogonal_negative() {
        let mut t = Tape::new();
        let e1 = row(&mut t, &[1.0, 0.0]);
        let e2 = mat(&mut t, &[vec![0.0, 1.0]]);
        let l = alignment_loss(&mut t, e1, e1, e2, e2, 1.0).unwrap();
        let e = 1f64.exp();
        let want = -2.0 * (e / (e + 1.0)).ln();
        assert!((t.scalar(l) - want).abs() < 1e-12);
        assert!((t.scalar(l) - 0.6266).abs() < 1e-4);
    }

    #[test]
    fn alignment_with_antipodal_negative() {
        let mut t = Tape::new();
        let e1 = row(&mut t, &[1.0, 0.0]);
        let neg = mat(&mut t, &[vec![-1.0, 0.0]]);
        let l = alignment_loss(&mut t, e1, e1, neg, neg, 1.0).unwrap();
        let e = 1f64.exp();
        assert!((t.scalar(l) - (-2.0 * (e / (e + 1.0 / e)).ln())).abs() < 1e-12);
        assert!((t.scalar(l) - 0.2538).abs() < 1e-4);
    }

    #[test]
    fn alignment_at_high_temperature_counts_terms() {
        let mut t = Tape::new();
        let mu = row(&mut t, &[0.3, 0.9, -0.2]);
        let mv = row(&mut t, &[-0.5, 0.1, 0.4]);
        let negs = mat(&mut t, &[vec![1.0, 0.0, 0.0], vec![0.2, -0.3, 0.5], vec![0.0, 0.0, 1.0]]);
        let l = alignment_loss(&mut t, mu, mv, negs, negs, 1e9).unwrap();
        assert!((t.scalar(l) - 2.0 * 4f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn alignment_rejects_zero_moments() {
        let mut t = Tape::new();
        let z = row(&mut t, &[0.0, 0.0]);
        let e1 = row(&mut t, &[1.0, 0.0]);
        let n = mat(&mut t, &[vec![0.0, 1.0]]);
        assert!(matches!(alignment_loss(&mut t, z, e1, n, n, 1.0), Err(Error::Numeric(_))));
        assert!(matches!(spread_loss(&mut t, n, n, z, e1), Err(Error::Numeric(_))));
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        cosine(a, b)
    }

    fn naive_alignment(mu: &[f64], mv: &[f64], nu: &[Vec<f64>], nv: &[Vec<f64>], tau: f64) -> f64 {
        let s = cos(mu, mv) / tau;
        let d1: f64 = s.exp() + nv.iter().map(|v| (cos(mu, v) / tau).exp()).sum::<f64>();
        let d2: f64 = s.exp() + nu.iter().map(|u| (cos(u, mv) / tau).exp()).sum::<f64>();
        -((s.exp() / d1).ln() + (s.exp() / d2).ln())
    }

    fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn random_batches_match_naive_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (mu, mv) = (rand_rows(&mut rng, 1, 5), rand_rows(&mut rng, 1, 5));
            let (nu, nv) = (rand_rows(&mut rng, 4, 5), rand_rows(&mut rng, 4, 5));
            let (pu, pv) = (rand_rows(&mut rng, 3, 5), rand_rows(&mut rng, 3, 5));
            let mut t = Tape::new();
            let (a, b) = (row(&mut t, &mu[0]), row(&mut t, &mv[0]));
            let (c, d) = (mat(&mut t, &nu), mat(&mut t, &nv));
            let l = alignment_loss(&mut t, a, b, c, d, 0.3).unwrap();
            assert!((t.scalar(l) - naive_alignment(&mu[0], &mv[0], &nu, &nv, 0.3)).abs() < 1e-10);

            let (e, f) = (mat(&mut t, &pu), mat(&mut t, &pv));
            let s = spread_loss(&mut t, e, f, a, b).unwrap();
            let sq = |x: &[f64], m: &[f64]| x.iter().zip(m).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            let want: f64 = (0..3)
                .map(|j| sq(&pu[j], &mu[0]) / sq(&mu[0], &[0.0; 5]) + sq(&pv[j], &mv[0]) / sq(&mv[0], &[0.0; 5]))
                .sum();
            assert!((t.scalar(s) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn spread_examples() {
        let mut t = Tape::new();
        let mu = row(&mut t, &[0.6, 0.8]);
        let mv = row(&mut t, &[1.0, 2.0]);
        let pu = mat(&mut t, &[vec![0.6, 0.8], vec![0.6, 0.8]]);
        let pv = mat(&mut t, &[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let s = spread_loss(&mut t, pu, pv, mu, mv).unwrap();
        assert_eq!(t.scalar(s), 0.0);
        let delta = 0.3;
        let pu = mat(&mut t, &[vec![0.6 + delta, 0.8]]);
        let pv = mat(&mut t, &[vec![1.0, 2.0]]);
        let s = spread_loss(&mut t, pu, pv, mu, mv).unwrap();
        assert!((t.scalar(s) - delta * delta).abs() < 1e-12);
    }

    #[test]
    fn ema_examples() {
        let prev = MomentEstimates::zeros(3);
        let next = ema_update(&prev, &[1.0; 3], &[1.0; 3], 0.9, 0.9);
        assert!(next.mu_u.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let fixed = MomentEstimates {
            mu_u: vec![0.2, -0.4],
            mu_v: vec![1.0, 3.0],
        };
        assert_eq!(ema_update(&fixed, &fixed.mu_u, &fixed.mu_v, 0.9, 0.7), fixed);
    }

    #[test]
    fn ema_constant_mean_closed_form() {
        let m = [0.3, -1.2, 2.0];
        let mut mu = MomentEstimates::zeros(3);
        for k in 1..=50 {
            mu = ema_update(&mu, &m, &m, 0.9, 0.8);
            for i in 0..3 {
                assert!((mu.mu_u[i] - (1.0 - 0.9f64.powi(k)) * m[i]).abs() < 1e-12);
                assert!((mu.mu_v[i] - (1.0 - 0.8f64.powi(k)) * m[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_on_tape_matches_update_and_detaches_history() {
        let prev = MomentEstimates {
            mu_u: vec![0.5, -0.5],
            mu_v: vec![0.1, 0.2],
        };
        let mut t = Tape::new();
        let pu = t.variable(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let pv = t.variable(Tensor::from_rows(&[vec![0.4, 0.4], vec![0.2, 0.0]]).unwrap());
        let (mu, mv) = ema_on_tape(&mut t, &prev, pu, pv, 0.9, 0.8).unwrap();
        let want = ema_update(&prev, &[0.5, 0.5], &[0.3, 0.2], 0.9, 0.8);
        for i in 0..2 {
            assert!((t.value(mu).data()[i] - want.mu_u[i]).abs() < 1e-15);
            assert!((t.value(mv).data()[i] - want.mu_v[i]).abs() < 1e-15);
        }
        let s = t.sum(mu);
        let g = t.backward(s).unwrap();
        // d(sum μ_u)/d(u_j) = (1 − α)/n per entry.
        assert!(g.get(pu).unwrap().data().iter().all(|&v| (v - 0.05).abs() < 1e-15));
    }

    #[test]
    fn bce_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::new(&[1, 1], vec![0.0]).unwrap());
        let ln2 = 2f64.ln();
        for (y, w, want) in [(1.0, 1.0, ln2), (0.0, 1.0, ln2), (1.0, 3.0, 3.0 * ln2)] {
            let l = weighted_bce(&mut t, z, &[y], w).unwrap();
            assert!((t.scalar(l) - want).abs() < 1e-15);
        }
        let big = t.constant(Tensor::new(&[2, 1], vec![800.0, -800.0]).unwrap());
        let l = weighted_bce(&mut t, big, &[0.0, 1.0], 2.0).unwrap();
        assert!((t.scalar(l) - (800.0 + 2.0 * 800.0) / 2.0).abs() < 1e-9);
        assert!(matches!(weighted_bce(&mut t, z, &[0.5], 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn total_examples() {
        let mut t = Tape::new();
        let one = t.constant(Tensor::scalar(1.0));
        let w = LossWeights::default();
        let l = total_loss(&mut t, one, Some(one), Some(one), &w).unwrap();
        assert!((t.scalar(l) - 1.85).abs() < 1e-15);
        let zero = LossWeights {
            lambda_a: 0.0,
            lambda_s: 0.0,
            ..w
        };
        let l = total_loss(&mut t, one, Some(one), Some(one), &zero).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    fn objective(s: &ParamStore, ids: [crate::diff::ParamId; 4], prev: &MomentEstimates, w: &LossWeights) -> Result<(Tape, Var)> {
        let mut t = Tape::new();
        let [pu, pv, nu, nv] = ids.map(|id| t.param(s, id));
        let pu = t.l2_normalize_rows(pu)?;
        let pv = t.l2_normalize_rows(pv)?;
        let nu = t.l2_normalize_rows(nu)?;
        let nv = t.l2_normalize_rows(nv)?;
        let (mu, mv) = ema_on_tape(&mut t, prev, pu, pv, w.alpha, w.beta)?;
        let logits = t.stack_rows(&[pu, nu])?;
        let wcol = t.constant(Tensor::new(&[3, 1], vec![0.5, -0.2, 0.8])?);
        let logits = t.matmul(logits, wcol)?;
        let lc = weighted_bce(&mut t, logits, &[1.0, 1.0, 0.0, 0.0, 0.0], 1.5)?;
        let la = alignment_loss(&mut t, mu, mv, nu, nv, w.tau)?;
        let ls = spread_loss(&mut t, pu, pv, mu, mv)?;
        let out = total_loss(&mut t, lc, Some(la), Some(ls), w)?;
        Ok((t, out))
    }

    fn random_store(seed: u64) -> (ParamStore, [crate::diff::ParamId; 4]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mut add = |name: &str, n: usize| {
            let rows = rand_rows(&mut rng, n, 3);
            s.add(name, Tensor::from_rows(&rows).unwrap())
        };
        let ids = [add("pu", 2), add("pv", 2), add("nu", 3), add("nv", 3)];
        (s, ids)
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let (mut s, ids) = random_store(5);
        let prev = MomentEstimates {
            mu_u: vec![0.2, 0.1, -0.3],
            mu_v: vec![-0.1, 0.4, 0.2],
        };
        let w = LossWeights {
            tau: 0.5,
            ..LossWeights::default()
        };
        let report = finite_difference_check(&mut s, 1e-6, |st| objective(st, ids, &prev, &w)).unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn small_gradient_step_does_not_increase_objective() {
        let prev = MomentEstimates {
            mu_u: vec![0.2, 0.1, -0.3],
            mu_v: vec![-0.1, 0.4, 0.2],
        };
        let w = LossWeights::default();
        for seed in 0..10 {
            let (mut s, ids) = random_store(seed);
            let (t, out) = objective(&s, ids, &prev, &w).unwrap();
            let before = t.scalar(out);
            let g = t.backward(out).unwrap();
            t.accumulate_param_grads(&g, &mut s);
            for p in s.iter_mut() {
                let stepped: Vec<f64> = p.value.data().iter().zip(p.grad.data()).map(|(v, g)| v - 1e-4 * g).collect();
                p.value = Tensor::new(p.value.shape(), stepped).unwrap();
            }
            let (t2, out2) = objective(&s, ids, &prev, &w).unwrap();
            assert!(t2.scalar(out2) <= before, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn alignment_is_scale_invariant(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mu, mv) = (rand_rows(&mut rng, 1, 4), rand_rows(&mut rng, 1, 4));
            let (nu, nv) = (rand_rows(&mut rng, 3, 4), rand_rows(&mut rng, 3, 4));
            let scaled = |r: &[Vec<f64>]| r.iter().map(|x| x.iter().map(|v| v * 7.3).collect()).collect::<Vec<Vec<f64>>>();
            let mut t = Tape::new();
            let (a, b, c, d) = (mat(&mut t, &mu), mat(&mut t, &mv), mat(&mut t, &nu), mat(&mut t, &nv));
            let l1 = alignment_loss(&mut t, a, b, c, d, 0.2).unwrap();
            let (a, b) = (mat(&mut t, &scaled(&mu)), mat(&mut t, &scaled(&mv)));
            let (c, d) = (mat(&mut t, &scaled(&nu)), mat(&mut t, &scaled(&nv)));
            let l2 = alignment_loss(&mut t, a, b, c, d, 0.2).unwrap();
            prop_assert!((t.scalar(l1) - t.scalar(l2)).abs() < 1e-9);
        }

        #[test]
        fn alignment_decreases_with_moment_similarity(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let negs = rand_rows(&mut rng, 3, 2);
            let mut t = Tape::new();
            let n = mat(&mut t, &negs);
            let mu = row(&mut t, &[1.0, 0.0]);
            let vals: Vec<f64> = [2.0f64, 1.0, 0.2]
                .iter()
                .map(|&angle| {
                    let mv = row(&mut t, &[angle.cos(), angle.sin()]);
                    let l = alignment_loss(&mut t, mu, mv, n, n, 0.5).unwrap();
                    t.scalar(l)
                })
                .collect();
            prop_assert!(vals[0] > vals[1] && vals[1] > vals[2]);
        }

        #[test]
        fn ema_contracts_toward_batch_mean(seed in 0u64..300, alpha in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rand_rows(&mut rng, 4, 5);
            let prev = MomentEstimates { mu_u: r[0].clone(), mu_v: r[1].clone() };
            let next = ema_update(&prev, &r[2], &r[3], alpha, alpha);
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!((dist(&next.mu_u, &r[2]) - alpha * dist(&r[0], &r[2])).abs() < 1e-12);
            prop_assert!((dist(&next.mu_v, &r[3]) - alpha * dist(&r[1], &r[3])).abs() < 1e-12);
        }

        #[test]
        fn spread_is_non_negative(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pu, pv) = (rand_rows(&mut rng, 3, 4), rand_rows(&mut rng, 3, 4));
            let (mu, mv) = (rand_rows(&mut rng, 1, 4), rand_rows(&mut rng, 1, 4));
            let mut t = Tape::new();
            let (a, b, c, d) = (mat(&mut t, &pu), mat(&mut t, &pv), mat(&mut t, &mu), mat(&mut t, &mv));
            let s = spread_loss(&mut t, a, b, c, d).unwrap();
            prop_assert!(t.scalar(s) > 0.0);
        }
    }
}
