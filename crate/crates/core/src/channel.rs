//! Channel realizations, the real-valued signal model and pilot-based estimation.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    IidRayleigh,
    /// Kronecker model with exponential correlation `rho^|i-j|` on both ends.
    Kronecker { rho: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModelSpec {
    pub kind: ChannelKind,
    pub n_r: usize,
    pub n_t: usize,
}

impl ChannelModelSpec {
    pub fn rayleigh(n_r: usize, n_t: usize) -> Self {
        Self {
            kind: ChannelKind::IidRayleigh,
            n_r,
            n_t,
        }
    }

    pub fn kronecker(n_r: usize, n_t: usize, rho: f64) -> Self {
        Self {
            kind: ChannelKind::Kronecker { rho },
            n_r,
            n_t,
        }
    }

    /// Real observation dimension `N = 2 n_r`.
    pub fn n(&self) -> usize {
        2 * self.n_r
    }

    /// Real symbol dimension `K = 2 n_t`.
    pub fn k(&self) -> usize {
        2 * self.n_t
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r < self.n_t {
            return Err(Error::InvalidConfig(format!(
                "antenna counts need n_r >= n_t >= 1, got {}x{}",
                self.n_r, self.n_t
            )));
        }
        if let ChannelKind::Kronecker { rho } = self.kind {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidCorrelation(rho));
            }
        }
        Ok(())
    }
}

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let s = (0..self.cols).map(|k| self.get(i, k) * other.get(k, j)).sum();
                out.set(i, j, s);
            }
        }
        out
    }

    /// Left- and right-multiplies by real matrices: `a · self · b`.
    fn sandwich(&self, a: &DenseMatrix, b: &DenseMatrix) -> Self {
        let mut tmp = Self::zeros(a.rows(), self.cols);
        for i in 0..a.rows() {
            for j in 0..self.cols {
                let s = (0..self.rows).map(|k| self.get(k, j) * a[(i, k)]).sum();
                tmp.set(i, j, s);
            }
        }
        let mut out = Self::zeros(tmp.rows, b.cols());
        for i in 0..tmp.rows {
            for j in 0..b.cols() {
                let s = (0..tmp.cols).map(|k| tmp.get(i, k) * b[(k, j)]).sum();
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Scales every column to unit Euclidean norm.
    pub fn normalize_columns(&mut self) {
        for j in 0..self.cols {
            let n = self.column_norm(j);
            if n > 0.0 {
                for i in 0..self.rows {
                    let v = self.get(i, j) / n;
                    self.set(i, j, v);
                }
            }
        }
    }
}

/// One real-valued transmission `y = H x + w`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealChannelInstance {
    pub h: DenseMatrix,
    pub y: Vec<f64>,
    pub sigma_w2: f64,
}

impl RealChannelInstance {
    pub fn n(&self) -> usize {
        self.h.rows()
    }

    pub fn k(&self) -> usize {
        self.h.cols()
    }
}

/// Exponential correlation matrix `r_ij = rho^|i-j|`.
pub fn exponential_correlation(n: usize, rho: f64) -> DenseMatrix {
    let mut r = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = rho.powi((i as i32 - j as i32).abs());
        }
    }
    r
}

/// Draws an `n_r × n_t` i.i.d. complex Gaussian matrix whose real and imaginary
/// parts have variance `1/N` each (`N = 2 n_r`).
pub fn iid_complex<R: Rng + ?Sized>(n_r: usize, n_t: usize, rng: &mut R) -> ComplexMatrix {
    let std = (1.0 / (2 * n_r) as f64).sqrt();
    let mut m = ComplexMatrix::zeros(n_r, n_t);
    for v in m.data.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v = Complex64::new(re * std, im * std);
    }
    m
}

/// Draws the complex channel before column normalization.
pub fn generate_complex_channel<R: Rng + ?Sized>(
    spec: &ChannelModelSpec,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    spec.validate()?;
    let u = iid_complex(spec.n_r, spec.n_t, rng);
    Ok(match spec.kind {
        ChannelKind::IidRayleigh => u,
        ChannelKind::Kronecker { rho } => {
            let rr = exponential_correlation(spec.n_r, rho).sqrt_psd();
            let rt = exponential_correlation(spec.n_t, rho).sqrt_psd();
            u.sandwich(&rr, &rt)
        }
    })
}

/// Draws a channel, normalizes its columns to unit energy and returns the
/// real-valued `2 n_r × 2 n_t` form.
pub fn generate_channel<R: Rng + ?Sized>(spec: &ChannelModelSpec, rng: &mut R) -> Result<DenseMatrix> {
    let mut hc = generate_complex_channel(spec, rng)?;
    hc.normalize_columns();
    Ok(complex_matrix_to_real(&hc))
}

/// `[Re −Im; Im Re]` block form of a complex matrix.
pub fn complex_matrix_to_real(hc: &ComplexMatrix) -> DenseMatrix {
    let (r, c) = (hc.rows, hc.cols);
    let mut h = DenseMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = hc.get(i, j);
            h[(i, j)] = v.re;
            h[(i, j + c)] = -v.im;
            h[(i + r, j)] = v.im;
            h[(i + r, j + c)] = v.re;
        }
    }
    h
}

/// `[Re; Im]` stacking of a complex vector.
pub fn complex_vector_to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

pub fn real_vector_to_complex(v: &[f64]) -> Vec<Complex64> {
    let n = v.len() / 2;
    (0..n).map(|i| Complex64::new(v[i], v[i + n])).collect()
}

/// Converts the complex model `yc = Hc xc + wc` to its real equivalent.
pub fn complex_to_real(hc: &ComplexMatrix, yc: &[Complex64]) -> Result<(DenseMatrix, Vec<f64>)> {
    if yc.len() != hc.rows {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} entries, channel has {} rows",
            yc.len(),
            hc.rows
        )));
    }
    Ok((complex_matrix_to_real(hc), complex_vector_to_real(yc)))
}

/// Per-real-dimension noise variance for `snr_db` with unit-norm columns and
/// symbol energy `es` per real dimension: `SNR = E‖Hx‖² / E‖w‖² = K es / (N σ²)`.
pub fn noise_variance(snr_db: f64, n: usize, k: usize, es: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    k as f64 * es / (n as f64 * 10f64.powf(snr_db / 10.0))
}

/// Transmits `x` through `h` with AWGN calibrated to `snr_db`.
/// `snr_db = +∞` switches the noise off.
pub fn apply_awgn<R: Rng + ?Sized>(
    h: &DenseMatrix,
    x: &[f64],
    snr_db: f64,
    es: f64,
    rng: &mut R,
) -> RealChannelInstance {
    let sigma_w2 = noise_variance(snr_db, h.rows(), h.cols(), es);
    let std = sigma_w2.sqrt();
    let mut y = h.matvec(x);
    if sigma_w2 > 0.0 {
        for v in y.iter_mut() {
            let w: f64 = StandardNormal.sample(rng);
            *v += std * w;
        }
    }
    RealChannelInstance {
        h: h.clone(),
        y,
        sigma_w2,
    }
}

/// Prior covariance of the vectorised complex channel used by the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelPrior {
    /// `R_h = variance · I`.
    Identity { variance: f64 },
    /// `R_h = variance · (R_t ⊗ R_r)` with exponential profiles.
    Kronecker { rho: f64, variance: f64 },
}

impl ChannelPrior {
    /// Covariance of `vec(H)` (column stacking) for an `n_r × n_t` channel.
    pub fn covariance(&self, n_r: usize, n_t: usize) -> DenseMatrix {
        let n = n_r * n_t;
        match *self {
            ChannelPrior::Identity { variance } => DenseMatrix::identity(n).scale(variance),
            ChannelPrior::Kronecker { rho, variance } => {
                let rr = exponential_correlation(n_r, rho);
                let rt = exponential_correlation(n_t, rho);
                let mut c = DenseMatrix::zeros(n, n);
                for a in 0..n_t {
                    for b in 0..n_t {
                        for i in 0..n_r {
                            for j in 0..n_r {
                                c[(a * n_r + i, b * n_r + j)] = variance * rt[(a, b)] * rr[(i, j)];
                            }
                        }
                    }
                }
                c
            }
        }
    }
}

/// First `n_t` rows of the `n_p`-point DFT matrix, i.e. `n_t` DFT columns laid
/// out as an `n_t × n_p` pilot block.
pub fn dft_pilots(n_t: usize, n_p: usize) -> ComplexMatrix {
    let mut x = ComplexMatrix::zeros(n_t, n_p);
    for t in 0..n_t {
        for p in 0..n_p {
            let ang = -2.0 * std::f64::consts::PI * (t * p) as f64 / n_p as f64;
            x.set(t, p, Complex64::from_polar(1.0, ang));
        }
    }
    x
}

/// `X Xᴴ` of a pilot block.
pub fn pilot_gram(pilots: &ComplexMatrix) -> ComplexMatrix {
    let mut g = ComplexMatrix::zeros(pilots.rows, pilots.rows);
    for a in 0..pilots.rows {
        for b in 0..pilots.rows {
            let s = (0..pilots.cols)
                .map(|p| pilots.get(a, p) * pilots.get(b, p).conj())
                .sum();
            g.set(a, b, s);
        }
    }
    g
}

/// Embeds a Hermitian matrix as a real symmetric one.
fn hermitian_to_real(a: &ComplexMatrix) -> DenseMatrix {
    complex_matrix_to_real(a)
}

/// Passes pilots through `h` and adds complex noise of variance `noise_var`
/// per complex entry: `Y = H X + W`.
pub fn observe_pilots<R: Rng + ?Sized>(
    h: &ComplexMatrix,
    pilots: &ComplexMatrix,
    noise_var: f64,
    rng: &mut R,
) -> ComplexMatrix {
    let mut y = h.matmul(pilots);
    let std = (noise_var / 2.0).sqrt();
    if noise_var > 0.0 {
        for v in y.data.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(re * std, im * std);
        }
    }
    y
}

/// System matrix `σ² R_h⁻¹ + (Xᴴ-side Gram ⊗ I)` of the pilot LMMSE estimator.
fn estimator_system(
    pilots: &ComplexMatrix,
    n_r: usize,
    noise_var: f64,
    covariance: &DenseMatrix,
) -> Result<ComplexMatrix> {
    let n_t = pilots.rows;
    let n = n_r * n_t;
    // (conj(X) Xᵀ)_ab = Σ_p conj(X_ap) X_bp
    let gram = pilot_gram(pilots);
    if complex_matrix_to_real(&gram).cholesky().is_err() {
        return Err(Error::InvalidPilots("pilot Gram matrix is singular".into()));
    }
    let mut a = ComplexMatrix::zeros(n, n);
    for ta in 0..n_t {
        for tb in 0..n_t {
            let g = gram.get(ta, tb).conj();
            for r in 0..n_r {
                a.set(ta * n_r + r, tb * n_r + r, g);
            }
        }
    }
    if noise_var > 0.0 {
        let rinv = covariance.spd_inverse()?;
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j) + Complex64::new(noise_var * rinv[(i, j)], 0.0);
                a.set(i, j, v);
            }
        }
    }
    Ok(a)
}

/// Linear MMSE channel estimate from pilot observations `Y = H X + W`.
///
/// `covariance` is the prior covariance of `vec(H)` (column stacking) and
/// `noise_var` the complex noise variance per entry.
pub fn lmmse_channel_estimate(
    observations: &ComplexMatrix,
    pilots: &ComplexMatrix,
    noise_var: f64,
    covariance: &DenseMatrix,
) -> Result<ComplexMatrix> {
    let n_r = observations.rows;
    let n_t = pilots.rows;
    if observations.cols != pilots.cols {
        return Err(Error::DimensionMismatch("pilot count differs from observation count".into()));
    }
    if pilots.cols < n_t {
        return Err(Error::InvalidPilots(format!(
            "{} pilots cannot resolve {} transmit antennas",
            pilots.cols, n_t
        )));
    }
    let a = estimator_system(pilots, n_r, noise_var, covariance)?;
    // rhs = vec(Y Xᴴ)
    let mut rhs = vec![Complex64::new(0.0, 0.0); n_r * n_t];
    for t in 0..n_t {
        for r in 0..n_r {
            rhs[t * n_r + r] = (0..pilots.cols)
                .map(|p| observations.get(r, p) * pilots.get(t, p).conj())
                .sum();
        }
    }
    let sol = hermitian_to_real(&a)
        .spd_solve(&complex_vector_to_real(&rhs))
        .map_err(|_| Error::InvalidPilots("estimator system is singular".into()))?;
    let sol = real_vector_to_complex(&sol);
    let mut h = ComplexMatrix::zeros(n_r, n_t);
    for t in 0..n_t {
        for r in 0..n_r {
            h.set(r, t, sol[t * n_r + r]);
        }
    }
    Ok(h)
}

/// Closed-form mean squared error `tr((R_h⁻¹ + XᴴX/σ²)⁻¹)` of the estimator.
pub fn lmmse_estimate_mse(
    pilots: &ComplexMatrix,
    n_r: usize,
    noise_var: f64,
    covariance: &DenseMatrix,
) -> Result<f64> {
    if noise_var == 0.0 {
        return Ok(0.0);
    }
    let a = estimator_system(pilots, n_r, noise_var, covariance)?;
    let inv = hermitian_to_real(&a).spd_inverse()?;
    // The real embedding duplicates the complex diagonal.
    Ok(noise_var * inv.diag().iter().sum::<f64>() / 2.0)
}
