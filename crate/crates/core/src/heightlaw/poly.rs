//! Exact moment integrals for Beta laws with small integer shapes.
//!
//! With integer shapes the Beta density is a polynomial on `[0, 1]`, and every
//! moment the theory needs reduces to integrals of polynomials against `|x-y|`,
//! `log|x-y|` or `log|1-2y|`, all of which have closed forms.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    /// `c₀ + c₁x`.
    pub fn linear(c0: f64, c1: f64) -> Self {
        Poly(vec![c0, c1])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n)
            .map(|k| self.0.get(k).copied().unwrap_or(0.0) + other.0.get(k).copied().unwrap_or(0.0))
            .collect())
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.0.is_empty() || other.0.is_empty() {
            return Poly(Vec::new());
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Poly {
        let mut out = vec![0.0; self.0.len() + 1];
        for (k, c) in self.0.iter().enumerate() {
            out[k + 1] = c / (k as f64 + 1.0);
        }
        Poly(out)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let f = self.antiderivative();
        f.eval(b) - f.eval(a)
    }

    /// `t ↦ p(a + b·t)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Poly {
        let inner = Poly::linear(a, b);
        let mut out = Poly::constant(0.0);
        let mut power = Poly::constant(1.0);
        for c in &self.0 {
            out = out.add(&power.scale(*c));
            power = power.mul(&inner);
        }
        out
    }

    /// `∫₀¹ p(t) log t dt`.
    pub fn log_moment(&self) -> f64 {
        -self
            .0
            .iter()
            .enumerate()
            .map(|(k, c)| c / ((k as f64 + 1.0) * (k as f64 + 1.0)))
            .sum::<f64>()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

/// Density of Beta(a, b) as a polynomial.
pub(crate) fn beta_density(a: u32, b: u32) -> Poly {
    assert!(a >= 1 && b >= 1);
    // 1/B(a,b) = (a+b-1)! / ((a-1)!(b-1)!) = a·C(a+b-1, a)
    let norm = f64::from(a) * binomial(a + b - 1, a);
    let mut c = vec![0.0; (a + b - 1) as usize];
    for j in 0..b {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        c[(a - 1 + j) as usize] = norm * sign * binomial(b - 1, j);
    }
    Poly(c)
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// `E|X - Y|` for `X, Y` independent with density `p`.
pub(crate) fn abs_diff_mean(p: &Poly) -> f64 {
    // ∫∫_{x>y} (x-y) x^j y^k = 1 / ((k+1)(k+2)(j+k+3))
    let mut total = 0.0;
    for (j, cj) in p.coeffs().iter().enumerate() {
        for (k, ck) in p.coeffs().iter().enumerate() {
            let (j, k) = (j as f64, k as f64);
            total += cj * ck / ((k + 1.0) * (k + 2.0) * (j + k + 3.0));
        }
    }
    2.0 * total
}

/// `E log|X - Y|` for `X, Y` independent with density `p`.
pub(crate) fn abs_diff_log_mean(p: &Poly) -> f64 {
    // ∫∫_{x>y} log(x-y) x^j y^k
    //   = -1/((k+1)(j+k+2)²) - H_{k+1}/((k+1)(j+k+2))
    let mut total = 0.0;
    for (j, cj) in p.coeffs().iter().enumerate() {
        for (k, ck) in p.coeffs().iter().enumerate() {
            let h = harmonic(k + 1);
            let (j, k) = (j as f64, k as f64);
            let s = j + k + 2.0;
            total += cj * ck * (-1.0 / ((k + 1.0) * s * s) - h / ((k + 1.0) * s));
        }
    }
    2.0 * total
}

/// `y ↦ E|X - y|` for `X` with density `p`, as a polynomial in `y`.
pub(crate) fn abs_diff_kernel(p: &Poly) -> Poly {
    let p0 = p.antiderivative();
    let p1 = Poly::linear(0.0, 1.0).mul(p).antiderivative();
    let m1 = p1.eval(1.0);
    // 2y·P0(y) - 2·P1(y) + E X - y
    Poly::linear(0.0, 2.0)
        .mul(&p0)
        .add(&p1.scale(-2.0))
        .add(&Poly::linear(m1, -1.0))
}

/// `∫₀¹ q(y)|1 - 2y| dy`.
pub(crate) fn fold_abs_integral(q: &Poly) -> f64 {
    let low = q.mul(&Poly::linear(1.0, -2.0)).integral(0.0, 0.5);
    let high = q.mul(&Poly::linear(-1.0, 2.0)).integral(0.5, 1.0);
    low + high
}

/// `∫₀¹ p(y) log|1 - 2y| dy`, via `t = |1 - 2y|` on each half.
pub(crate) fn fold_log_integral(p: &Poly) -> f64 {
    0.5 * (p.compose_affine(0.5, -0.5).log_moment() + p.compose_affine(0.5, 0.5).log_moment())
}
