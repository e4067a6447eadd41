//! Independent reference implementations used only by tests.
//!
//! Everything here works on plain row-major `Vec<f64>` buffers or nested
//! vectors with scalar loops, sharing no code with the library under test.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::{Add, Mul, Neg, Sub};

/// Row-major buffer with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

pub fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

pub fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Dense {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Dense { rows, cols, data }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random `rows × cols` matrix with orthonormal columns, by modified
/// Gram–Schmidt on Gaussian columns (re-orthogonalized twice).
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Dense {
    assert!(rows >= cols);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for q in &columns {
                let p = dot(&v, q);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= p * y;
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            columns.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut data = vec![0.0; rows * cols];
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
    Dense { rows, cols, data }
}

/// `U·diag(σ)·Vᵀ` with random orthonormal `U` (rows × k) and `V` (cols × k).
pub fn matrix_with_spectrum<R: Rng>(rows: usize, cols: usize, sigmas: &[f64], rng: &mut R) -> Dense {
    let k = sigmas.len();
    assert!(k <= rows.min(cols));
    let u = random_orthonormal(rows, k, rng);
    let v = random_orthonormal(cols, k, rng);
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for i in 0..k {
                s += u.at(r, i) * sigmas[i] * v.at(c, i);
            }
            data[r * cols + c] = s;
        }
    }
    Dense { rows, cols, data }
}

/// The map one Newton–Schulz step applies to a singular value.
pub fn scalar_ns(x0: f64, iters: usize, a: f64, b: f64, c: f64) -> f64 {
    let mut x = x0;
    for _ in 0..iters {
        x = a * x + b * x * x * x + c * x * x * x * x * x;
    }
    x
}

/// srank by recomputing every prefix sum from scratch.
pub fn srank_brute_force(sv: &[f64], delta: f64) -> usize {
    let total: f64 = sv.iter().sum();
    for k in 1..=sv.len() {
        let head: f64 = sv[..k].iter().sum();
        if head / total >= 1.0 - delta {
            return k;
        }
    }
    sv.len()
}

/// Monte Carlo estimate of `E|ReLU(⟨z, w_j⟩)|` for `z ~ N(0, I)`, per column,
/// normalized by the mean over columns.
pub fn monte_carlo_activity<R: Rng>(w: &Dense, samples: usize, rng: &mut R) -> Vec<f64> {
    let mut acc = vec![0.0; w.cols];
    let mut z = vec![0.0; w.rows];
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (j, a) in acc.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..w.rows {
                s += z[i] * w.at(i, j);
            }
            if s > 0.0 {
                *a += s;
            }
        }
    }
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    acc.iter().map(|a| a / mean).collect()
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi eigenvalue method.
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

/// Second-order forward-mode number `a + b·ε₁ + c·ε₂ + d·ε₁ε₂`
/// with `ε₁² = ε₂² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn constant(re: f64) -> Self {
        Self {
            re,
            e1: 0.0,
            e2: 0.0,
            e12: 0.0,
        }
    }

    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Self {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + d2f * self.e1 * self.e2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            re: self.re + o.re,
            e1: self.e1 + o.e1,
            e2: self.e2 + o.e2,
            e12: self.e12 + o.e12,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            e1: -self.e1,
            e2: -self.e2,
            e12: -self.e12,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re,
            e1: self.re * o.e1 + self.e1 * o.re,
            e2: self.re * o.e2 + self.e2 * o.re,
            e12: self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        }
    }
}

/// Arithmetic the loop network needs.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn from_f64(v: f64) -> Self;
    fn real(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn real(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

impl Scalar for HyperDual {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn real(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re, -1.0 / (self.re * self.re))
    }
}

/// Dense network description matching the library's flat parameter order:
/// per layer the `d_out × d_in` weight row-major, then the bias if present.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopNet {
    pub dims: Vec<usize>,
    pub relu: Vec<bool>,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopLoss {
    /// `½‖u − y‖²` per sample, mean over samples.
    Squared,
    /// Softmax cross-entropy, mean over samples.
    CrossEntropy,
}

impl LoopNet {
    pub fn num_params(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[1] * w[0] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    /// Outputs for each input row, ReLU gates decided by the real part.
    pub fn forward<T: Scalar>(&self, params: &[T], inputs: &[Vec<f64>]) -> Vec<Vec<T>> {
        assert_eq!(params.len(), self.num_params());
        inputs
            .iter()
            .map(|x| {
                let mut h: Vec<T> = x.iter().map(|&v| T::from_f64(v)).collect();
                let mut off = 0;
                for (l, w) in self.dims.windows(2).enumerate() {
                    let (din, dout) = (w[0], w[1]);
                    let mut next = Vec::with_capacity(dout);
                    for o in 0..dout {
                        let mut acc = T::from_f64(0.0);
                        for i in 0..din {
                            acc = acc + params[off + o * din + i] * h[i];
                        }
                        if self.bias {
                            acc = acc + params[off + dout * din + o];
                        }
                        if self.relu[l] && acc.real() <= 0.0 {
                            acc = T::from_f64(0.0);
                        }
                        next.push(acc);
                    }
                    off += dout * din + if self.bias { dout } else { 0 };
                    h = next;
                }
                h
            })
            .collect()
    }

    /// Mean loss; `targets[i]` is the target row (one-hot index in
    /// `targets[i][0]` for cross-entropy).
    pub fn loss<T: Scalar>(&self, params: &[T], inputs: &[Vec<f64>], targets: &[Vec<f64>], kind: LoopLoss) -> T {
        let outs = self.forward(params, inputs);
        let mut total = T::from_f64(0.0);
        for (u, y) in outs.iter().zip(targets) {
            match kind {
                LoopLoss::Squared => {
                    for (uv, yv) in u.iter().zip(y) {
                        let d = *uv - T::from_f64(*yv);
                        total = total + T::from_f64(0.5) * d * d;
                    }
                }
                LoopLoss::CrossEntropy => {
                    let shift = u.iter().map(|v| v.real()).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = T::from_f64(0.0);
                    for uv in u {
                        s = s + (*uv - T::from_f64(shift)).exp();
                    }
                    let label = y[0] as usize;
                    total = total + s.ln() + T::from_f64(shift) - u[label];
                }
            }
        }
        total * T::from_f64(1.0 / inputs.len() as f64)
    }

    /// Exact gradient by first-order dual numbers.
    pub fn gradient(&self, params: &[f64], inputs: &[Vec<f64>], targets: &[Vec<f64>], kind: LoopLoss) -> Vec<f64> {
        (0..params.len())
            .map(|i| {
                let p: Vec<HyperDual> = params
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| HyperDual {
                        e1: if i == j { 1.0 } else { 0.0 },
                        ..HyperDual::constant(v)
                    })
                    .collect();
                self.loss(&p, inputs, targets, kind).e1
            })
            .collect()
    }

    /// Exact Hessian by hyper-dual numbers, one evaluation per entry pair.
    pub fn hessian(&self, params: &[f64], inputs: &[Vec<f64>], targets: &[Vec<f64>], kind: LoopLoss) -> Vec<Vec<f64>> {
        let n = params.len();
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let p: Vec<HyperDual> = params
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| HyperDual {
                        re: v,
                        e1: if k == i { 1.0 } else { 0.0 },
                        e2: if k == j { 1.0 } else { 0.0 },
                        e12: 0.0,
                    })
                    .collect();
                let v = self.loss(&p, inputs, targets, kind).e12;
                h[i][j] = v;
                h[j][i] = v;
            }
        }
        h
    }
}
