use crate::error::{Error, Result};

/// Natural cubic spline (zero second derivative at both ends).
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    /// `xs` must be strictly increasing with at least two knots.
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Input("spline needs ≥ 2 knots with matching values".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    /// Knots at `0, 1, …, n−1`.
    pub fn uniform(ys: &[f64]) -> Result<Self> {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        Self::new(&xs, ys)
    }

    /// Evaluates the spline; arguments outside the knot range are clamped.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Resamples `ys` (uniform knots) to `len` points spanning the same interval.
pub fn resample_uniform(ys: &[f64], len: usize) -> Result<Vec<f64>> {
    let s = NaturalSpline::uniform(ys)?;
    let span = (ys.len() - 1) as f64;
    Ok((0..len)
        .map(|j| s.eval(j as f64 * span / (len - 1) as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interpolates_knots() {
        let ys: Vec<f64> = (0..20).map(|i| ((i * i) as f64 * 0.37).sin()).collect();
        let s = NaturalSpline::uniform(&ys).unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert!((s.eval(i as f64) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_lines() {
        let ys: Vec<f64> = (0..150).map(|i| 2.0 - 0.5 * i as f64).collect();
        let out = resample_uniform(&ys, 300).unwrap();
        for (j, v) in out.iter().enumerate() {
            let x = j as f64 * 149.0 / 299.0;
            assert!((v - (2.0 - 0.5 * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn tracks_a_sine_period() {
        let n = 97;
        let ys: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / (n - 1) as f64).sin()).collect();
        let out = resample_uniform(&ys, 300).unwrap();
        let worst = out
            .iter()
            .enumerate()
            .map(|(j, v)| (v - (2.0 * PI * j as f64 / 299.0).sin()).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-4, "max deviation {worst}");
    }

    #[test]
    fn nonuniform_knots_match_cubic_free_case() {
        // A natural spline through collinear points is that line.
        let xs = [0.0, 0.3, 1.7, 2.0, 5.5];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let s = NaturalSpline::new(&xs, &ys).unwrap();
        for x in [0.1, 1.0, 2.5, 5.0] {
            assert!((s.eval(x) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
    }
}
