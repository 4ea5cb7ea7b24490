//! Diagonal state-space encoders.
//!
//! Each of the `d` channels runs an independent recurrence
//! `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = re⟨C, h_t⟩` with a diagonal complex
//! state of size `d_h`, discretized by zero-order hold. A block applies
//! `x ← x + Mix(GELU(SSM(LayerNorm(x))))`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::diff::{Complex, ComplexVector, CustomOp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|ΔA|` below which `B̄ = ΔB` replaces the closed form.
pub const LIMIT_THRESHOLD: f64 = 1e-8;

/// Upper bound enforced on `re(A)` after every optimizer step.
pub const MAX_RE_A: f64 = -1e-4;

const LN_EPS: f64 = 1e-5;

fn zoh(dt: f64, a: Complex, b: Complex) -> (Complex, Complex) {
    let z = a.scale(dt);
    let abar = z.exp();
    if z.abs() < LIMIT_THRESHOLD {
        return (abar, b.scale(dt));
    }
    (abar, b * (z.exp_m1() / a))
}

/// Zero-order-hold discretization of a diagonal system:
/// `Ā = exp(ΔA)`, `B̄ = (exp(ΔA) − 1)/A · B`.
pub fn discretize(dt: f64, a: &ComplexVector, b: &ComplexVector) -> Result<(ComplexVector, ComplexVector)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("step Δ must be positive, got {dt}")));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("A has {} entries, B has {}", a.len(), b.len())));
    }
    let (mut ar, mut ai, mut br, mut bi) = (vec![], vec![], vec![], vec![]);
    for i in 0..a.len() {
        let (ab, bb) = zoh(dt, a.get(i), b.get(i));
        ar.push(ab.re);
        ai.push(ab.im);
        br.push(bb.re);
        bi.push(bb.im);
    }
    Ok((ComplexVector { re: ar, im: ai }, ComplexVector { re: br, im: bi }))
}

/// Runs one channel's recurrence from `h_0 = 0`.
pub fn scan_channel(abar: &ComplexVector, bbar: &ComplexVector, c: &ComplexVector, x: &[f64]) -> Result<Vec<f64>> {
    let n = abar.len();
    if bbar.len() != n || c.len() != n {
        return Err(Error::Dimension(format!(
            "state sizes differ: Ā {n}, B̄ {}, C {}",
            bbar.len(),
            c.len()
        )));
    }
    let mut h = vec![Complex::ZERO; n];
    Ok(x
        .iter()
        .map(|&xt| {
            let mut y = 0.0;
            for i in 0..n {
                h[i] = abar.get(i) * h[i] + bbar.get(i).scale(xt);
                y += (c.get(i) * h[i]).re;
            }
            y
        })
        .collect())
}

/// `(e^z − 1)/z` and its derivative, with series near zero.
fn kfun(z: Complex) -> (Complex, Complex) {
    if z.abs() < 1e-3 {
        let z2 = z * z;
        let k = Complex::ONE + z.scale(0.5) + z2.scale(1.0 / 6.0) + (z2 * z).scale(1.0 / 24.0);
        let dk = Complex::new(0.5, 0.0) + z.scale(1.0 / 3.0) + z2.scale(1.0 / 8.0) + (z2 * z).scale(1.0 / 30.0);
        return (k, dk);
    }
    let e = z.exp();
    let em1 = z.exp_m1();
    let k = em1 / z;
    let dk = (z * e - em1) / (z * z);
    (k, dk)
}

/// Vector-Jacobian product of the multi-channel scan.
///
/// Inputs: `x [L×d]`, `Δ [1×d]`, then `re A`, `im A`, `re B`, `im B`,
/// `re C`, `im C`, each `[d×d_h]`.
struct ScanOp {
    d: usize,
    dh: usize,
}

struct ScanParams {
    a: Vec<Complex>,
    b: Vec<Complex>,
    c: Vec<Complex>,
    abar: Vec<Complex>,
    bbar: Vec<Complex>,
}

fn gather(inputs: &[&Tensor], d: usize, dh: usize) -> ScanParams {
    let pair = |re: &Tensor, im: &Tensor| -> Vec<Complex> {
        re.data().iter().zip(im.data()).map(|(&r, &i)| Complex::new(r, i)).collect()
    };
    let a = pair(inputs[2], inputs[3]);
    let b = pair(inputs[4], inputs[5]);
    let c = pair(inputs[6], inputs[7]);
    let mut abar = Vec::with_capacity(d * dh);
    let mut bbar = Vec::with_capacity(d * dh);
    for ch in 0..d {
        let dt = inputs[1].data()[ch];
        for n in 0..dh {
            let (ab, bb) = zoh(dt, a[ch * dh + n], b[ch * dh + n]);
            abar.push(ab);
            bbar.push(bb);
        }
    }
    ScanParams { a, b, c, abar, bbar }
}

fn scan_forward(x: &Tensor, p: &ScanParams, d: usize, dh: usize) -> Tensor {
    let l = x.rows();
    let mut y = vec![0.0; l * d];
    let mut h = vec![Complex::ZERO; dh];
    for ch in 0..d {
        h.fill(Complex::ZERO);
        let (ab, bb, c) = (&p.abar[ch * dh..][..dh], &p.bbar[ch * dh..][..dh], &p.c[ch * dh..][..dh]);
        for t in 0..l {
            let xt = x.data()[t * d + ch];
            let mut acc = 0.0;
            for n in 0..dh {
                let s = ab[n] * h[n] + bb[n].scale(xt);
                h[n] = s;
                acc += c[n].re * s.re - c[n].im * s.im;
            }
            y[t * d + ch] = acc;
        }
    }
    Tensor::new(&[l, d], y).expect("scan of finite inputs is finite")
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "ssm_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (d, dh) = (self.d, self.dh);
        let x = inputs[0];
        let dts = inputs[1].data();
        let l = x.rows();
        let p = gather(inputs, d, dh);
        let mut gx = vec![0.0; l * d];
        let mut gdt = vec![0.0; d];
        let mut ga = vec![Complex::ZERO; d * dh];
        let mut gb = vec![Complex::ZERO; d * dh];
        let mut gc = vec![Complex::ZERO; d * dh];
        let mut hs = vec![Complex::ZERO; l * dh];
        let mut lam = vec![Complex::ZERO; dh];
        for ch in 0..d {
            let o = ch * dh;
            let (ab, bb, c) = (&p.abar[o..o + dh], &p.bbar[o..o + dh], &p.c[o..o + dh]);
            let mut h = vec![Complex::ZERO; dh];
            for t in 0..l {
                let xt = x.data()[t * d + ch];
                for n in 0..dh {
                    h[n] = ab[n] * h[n] + bb[n].scale(xt);
                    hs[t * dh + n] = h[n];
                }
            }
            lam.fill(Complex::ZERO);
            let mut gab = vec![Complex::ZERO; dh];
            let mut gbb = vec![Complex::ZERO; dh];
            for t in (0..l).rev() {
                let g = grad_out.data()[t * d + ch];
                let xt = x.data()[t * d + ch];
                let mut gxt = 0.0;
                for n in 0..dh {
                    let ht = hs[t * dh + n];
                    lam[n] = c[n].conj().scale(g) + ab[n].conj() * lam[n];
                    gc[o + n] += ht.conj().scale(g);
                    if t > 0 {
                        gab[n] += lam[n] * hs[(t - 1) * dh + n].conj();
                    }
                    gbb[n] += lam[n].scale(xt);
                    let w = lam[n] * bb[n].conj();
                    gxt += w.re;
                }
                gx[t * d + ch] = gxt;
            }
            let dt = dts[ch];
            for n in 0..dh {
                let (a, b) = (p.a[o + n], p.b[o + n]);
                let z = a.scale(dt);
                let e = ab[n];
                let (dab_da, dab_ddt) = (e.scale(dt), a * e);
                let (dbb_da, dbb_ddt, dbb_db) = if z.abs() < LIMIT_THRESHOLD {
                    (Complex::ZERO, b, Complex::new(dt, 0.0))
                } else {
                    let (k, dk) = kfun(z);
                    (b * dk.scale(dt * dt), b * e, k.scale(dt))
                };
                ga[o + n] = gab[n] * dab_da.conj() + gbb[n] * dbb_da.conj();
                gb[o + n] = gbb[n] * dbb_db.conj();
                gdt[ch] += (gab[n] * dab_ddt.conj()).re + (gbb[n] * dbb_ddt.conj()).re;
            }
        }
        let shape = inputs[2].shape().to_vec();
        let split = |v: &[Complex]| {
            (
                Tensor::new(&shape, v.iter().map(|z| z.re).collect()).ok(),
                Tensor::new(&shape, v.iter().map(|z| z.im).collect()).ok(),
            )
        };
        let (gar, gai) = split(&ga);
        let (gbr, gbi) = split(&gb);
        let (gcr, gci) = split(&gc);
        let all = [
            Tensor::new(&[l, d], gx).ok(),
            Tensor::new(&[1, d], gdt).ok(),
            gar,
            gai,
            gbr,
            gbi,
            gcr,
            gci,
        ];
        all.into_iter().zip(needs).map(|(g, &n)| if n { g } else { None }).collect()
    }
}

/// Applies the scan on a tape. `x` is `L×d`; `dt` is `1×d` and each of the
/// complex parts is `d×d_h`.
#[allow(clippy::too_many_arguments)]
pub fn scan(tape: &mut Tape, x: Var, dt: Var, a_re: Var, a_im: Var, b_re: Var, b_im: Var, c_re: Var, c_im: Var) -> Result<Var> {
    let inputs = [x, dt, a_re, a_im, b_re, b_im, c_re, c_im];
    let d = tape.value(x).cols();
    let (pd, dh) = (tape.value(a_re).rows(), tape.value(a_re).cols());
    if pd != d || tape.value(dt).len() != d || inputs[2..].iter().any(|&v| tape.value(v).shape() != [d, dh]) {
        return Err(Error::Dimension(format!("scan input width {d} vs parameters {pd}×{dh}")));
    }
    if let Some(&v) = tape.value(dt).data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Config(format!("step Δ must be positive, got {v}")));
    }
    let vals: Vec<&Tensor> = inputs.iter().map(|&v| tape.value(v)).collect();
    let p = gather(&vals, d, dh);
    let y = scan_forward(vals[0], &p, d, dh);
    if !y.is_finite() {
        return Err(Error::Numeric("state-space scan overflowed".into()));
    }
    Ok(tape.custom(Box::new(ScanOp { d, dh }), &inputs, y))
}

/// Encoder shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Raw scalar input length (300 for beats, 4096 for fingerprints).
    pub input_len: usize,
    /// Consecutive raw values per token; 1 gives one token per scalar.
    pub token_width: usize,
    pub d: usize,
    pub d_h: usize,
    pub blocks: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_h == 0 || self.blocks == 0 || self.token_width == 0 {
            return Err(Error::Config("encoder widths and block count must be ≥ 1".into()));
        }
        if !self.input_len.is_multiple_of(self.token_width) {
            return Err(Error::Config(format!(
                "token width {} does not divide input length {}",
                self.token_width, self.input_len
            )));
        }
        Ok(())
    }

    /// Sequence length seen by the blocks.
    pub fn seq_len(&self) -> usize {
        self.input_len / self.token_width
    }
}

/// Parameter handles of one block.
#[derive(Debug, Clone)]
pub struct BlockIds {
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub log_dt: ParamId,
    /// `re(A) = −softplus(a_re_raw)`.
    pub a_re_raw: ParamId,
    pub a_im: ParamId,
    pub b_re: ParamId,
    pub b_im: ParamId,
    pub c_re: ParamId,
    pub c_im: ParamId,
    pub mix_w: ParamId,
    pub mix_b: ParamId,
}

/// An encoder registered in a [`ParamStore`] under a name prefix.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<BlockIds>,
}

fn normal(rng: &mut impl Rng, n: usize, sd: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sd).expect("positive standard deviation");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Inverse of softplus for positive targets.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl Encoder {
    /// Registers `{prefix}.embed.*` and `{prefix}.block{n}.*`.
    ///
    /// `A_n = −1/2 + iπn`, `Δ` log-uniform in `[1e-3, 1e-1]`, `B = 1`,
    /// `C ~ N(0, 1/d_h)`.
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (w, d, dh) = (cfg.token_width, cfg.d, cfg.d_h);
        let t = |shape: &[usize], v: Vec<f64>| Tensor::new(shape, v);
        let embed_w = store.add(format!("{prefix}.embed.w"), t(&[w, d], normal(rng, w * d, 1.0 / (w as f64).sqrt()))?);
        let embed_b = store.add(format!("{prefix}.embed.b"), Tensor::zeros(&[1, d]));
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for k in 0..cfg.blocks {
            let p = format!("{prefix}.block{k}");
            let log_dt: Vec<f64> = (0..d)
                .map(|_| rng.random_range(1e-3f64.ln()..1e-1f64.ln()))
                .collect();
            let a_im: Vec<f64> = (0..d).flat_map(|_| (0..dh).map(|n| PI * n as f64)).collect();
            blocks.push(BlockIds {
                norm_g: store.add(format!("{p}.norm.g"), Tensor::filled(&[1, d], 1.0)),
                norm_b: store.add(format!("{p}.norm.b"), Tensor::zeros(&[1, d])),
                log_dt: store.add(format!("{p}.ssm.log_dt"), t(&[1, d], log_dt)?),
                a_re_raw: store.add(format!("{p}.ssm.a_re_raw"), Tensor::filled(&[d, dh], softplus_inv(0.5))),
                a_im: store.add(format!("{p}.ssm.a_im"), t(&[d, dh], a_im)?),
                b_re: store.add(format!("{p}.ssm.b_re"), Tensor::filled(&[d, dh], 1.0)),
                b_im: store.add(format!("{p}.ssm.b_im"), Tensor::zeros(&[d, dh])),
                c_re: store.add(format!("{p}.ssm.c_re"), t(&[d, dh], normal(rng, d * dh, (0.5 / dh as f64).sqrt()))?),
                c_im: store.add(format!("{p}.ssm.c_im"), t(&[d, dh], normal(rng, d * dh, (0.5 / dh as f64).sqrt()))?),
                mix_w: store.add(format!("{p}.mix.w"), t(&[d, d], normal(rng, d * d, 1.0 / (d as f64).sqrt()))?),
                mix_b: store.add(format!("{p}.mix.b"), Tensor::zeros(&[1, d])),
            });
        }
        Ok(Self {
            cfg,
            embed_w,
            embed_b,
            blocks,
        })
    }

    /// Reshapes a raw input into `seq_len × token_width` tokens.
    pub fn tokens(&self, raw: &[f64]) -> Result<Tensor> {
        if raw.len() != self.cfg.input_len {
            return Err(Error::Input(format!(
                "encoder expects {} values, got {}",
                self.cfg.input_len,
                raw.len()
            )));
        }
        Tensor::new(&[self.cfg.seq_len(), self.cfg.token_width], raw.to_vec())
    }

    /// Places the parameters on a tape once so many inputs can share them.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundEncoder {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let log_dt = tape.param(store, b.log_dt);
                let raw = tape.param(store, b.a_re_raw);
                let sp = tape.softplus(raw);
                BoundBlock {
                    norm_g: tape.param(store, b.norm_g),
                    norm_b: tape.param(store, b.norm_b),
                    dt: tape.exp(log_dt),
                    a_re: tape.scale(sp, -1.0),
                    a_im: tape.param(store, b.a_im),
                    b_re: tape.param(store, b.b_re),
                    b_im: tape.param(store, b.b_im),
                    c_re: tape.param(store, b.c_re),
                    c_im: tape.param(store, b.c_im),
                    mix_w: tape.param(store, b.mix_w),
                    mix_b: tape.param(store, b.mix_b),
                }
            })
            .collect();
        BoundEncoder {
            embed_w: tape.param(store, self.embed_w),
            embed_b: tape.param(store, self.embed_b),
            blocks,
        }
    }

    /// Pulls every `re(A)` to at most [`MAX_RE_A`]; returns the number of
    /// entries changed.
    pub fn project_stability(&self, store: &mut ParamStore) -> usize {
        let floor = softplus_inv(-MAX_RE_A);
        let mut changed = 0;
        for b in &self.blocks {
            let p = store.get_mut(b.a_re_raw);
            let mut data = p.value.data().to_vec();
            for v in &mut data {
                if *v < floor {
                    *v = floor;
                    changed += 1;
                }
            }
            if changed > 0 {
                p.value = Tensor::new(p.value.shape(), data).expect("finite projection");
            }
        }
        changed
    }

    /// Current `(Δ, A, B, C)` of block `k`, channel `ch`.
    pub fn channel_params(&self, store: &ParamStore, k: usize, ch: usize) -> (f64, ComplexVector, ComplexVector, ComplexVector) {
        let b = &self.blocks[k];
        let dh = self.cfg.d_h;
        let row = |id: ParamId| store.get(id).value.data()[ch * dh..(ch + 1) * dh].to_vec();
        let dt = store.get(b.log_dt).value.data()[ch].exp();
        let a_re = row(b.a_re_raw).iter().map(|&r| -crate::diff::softplus(r)).collect();
        (
            dt,
            ComplexVector { re: a_re, im: row(b.a_im) },
            ComplexVector { re: row(b.b_re), im: row(b.b_im) },
            ComplexVector { re: row(b.c_re), im: row(b.c_im) },
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub norm_g: Var,
    pub norm_b: Var,
    pub dt: Var,
    pub a_re: Var,
    pub a_im: Var,
    pub b_re: Var,
    pub b_im: Var,
    pub c_re: Var,
    pub c_im: Var,
    pub mix_w: Var,
    pub mix_b: Var,
}

/// Encoder parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub embed_w: Var,
    pub embed_b: Var,
    pub blocks: Vec<BoundBlock>,
}

impl BoundEncoder {
    /// Shared affine map from each token to width `d`.
    pub fn embed(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let e = tape.matmul(tokens, self.embed_w)?;
        tape.add_row(e, self.embed_b)
    }

    /// One residual block.
    pub fn block(&self, tape: &mut Tape, k: usize, x: Var) -> Result<Var> {
        let b = self.blocks[k];
        let n = tape.layer_norm(x, b.norm_g, b.norm_b, LN_EPS)?;
        let s = scan(tape, n, b.dt, b.a_re, b.a_im, b.b_re, b.b_im, b.c_re, b.c_im)?;
        let a = tape.gelu(s);
        let m = tape.matmul(a, b.mix_w)?;
        let m = tape.add_row(m, b.mix_b)?;
        tape.add(x, m)
    }

    /// Embeds tokens and applies every block; output is `seq_len × d`.
    pub fn forward(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let mut x = self.embed(tape, tokens)?;
        for k in 0..self.blocks.len() {
            x = self.block(tape, k, x)?;
        }
        Ok(x)
    }
}
