//! Multipath MIMO channel with QAM pilots, and the real embedding that lets
//! the real-valued recovery routines estimate it.
//!
//! Complex model `y = Gx + ε` with `G = Hᴴ` (n×d). Writing
//! `φ = [Re x; Im x]` and `y_r = [Re y; Im y]` gives the real model
//! `y_r = Θ_rᵀ φ` with
//!
//! ```text
//! Θ_rᵀ = [ Re G  −Im G ]
//!        [ Im G   Re G ]
//! ```
//!
//! so a complex rank `r` becomes real rank `2r`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::recovery::NUMERICAL_RANK_TOL;
use crate::rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Receive antennas.
    pub d: usize,
    /// Subcarriers.
    pub n: usize,
    pub num_paths: usize,
    pub snr_db: f64,
    pub path_gain_seed: u64,
    pub angle_seed: u64,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Shared by all paths, which makes the channel rank one.
    pub common_distance_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n: 16,
            num_paths: 4,
            snr_db: 10.0,
            path_gain_seed: 0,
            angle_seed: 0,
            carrier_hz: 28e9,
            subcarrier_spacing_hz: 1e6,
            common_distance_m: 30.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.num_paths == 0 {
            return Err(Error::param("d, n and num_paths must be positive"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::param(format!("invalid snr_db {}", self.snr_db)));
        }
        for (name, v) in [
            ("carrier_hz", self.carrier_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("common_distance_m", self.common_distance_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn snr_linear(&self) -> f64 {
        snr_linear(self.snr_db)
    }
}

fn snr_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

#[derive(Debug, Clone)]
pub struct ComplexChannel {
    /// d×n
    pub h: DMatrix<Complex64>,
    pub complex_rank: usize,
}

/// Map bit pairs to the four QAM points scaled by `1/√d`. The first bit of a
/// pair selects the real sign (1 → +), the second the imaginary sign
/// (0 → +). Bits are read most significant first; a trailing partial pilot
/// vector is dropped.
pub fn bits_to_qam(bytes: &[u8], d: usize) -> Result<Vec<DVector<Complex64>>> {
    if bytes.is_empty() {
        return Err(Error::param("pilot bit stream is empty"));
    }
    if d == 0 {
        return Err(Error::param("pilot length must be positive"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let symbols: Vec<Complex64> = bytes
        .iter()
        .flat_map(|b| (0..4).map(move |i| (b >> (6 - 2 * i)) & 0b11))
        .map(|pair| {
            let re = if pair & 0b10 != 0 { 1.0 } else { -1.0 };
            let im = if pair & 0b01 != 0 { -1.0 } else { 1.0 };
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    Ok(symbols.chunks_exact(d).map(DVector::from_column_slice).collect())
}

/// Uniform linear array response `(1/√d)[e^{jπθk}]_{k=0..d−1}`.
pub fn steering_vector(theta: f64, d: usize) -> DVector<Complex64> {
    let scale = 1.0 / (d as f64).sqrt();
    DVector::from_fn(d, |k, _| Complex64::from_polar(scale, PI * theta * k as f64))
}

/// Column `i`: `√(d/L) e^{−j k_i r} Σ_l g_l a(θ_l)` with `k_i = 2π f_i / c`.
/// Path gains are standard complex Gaussian, angles uniform on (−1, 1).
pub fn build_channel(cfg: &ChannelConfig) -> Result<ComplexChannel> {
    cfg.validate()?;
    let mut gain_rng = rng::stream(cfg.path_gain_seed, 2);
    let mut angle_rng = rng::stream(cfg.angle_seed, 3);
    let gains: Vec<Complex64> = (0..cfg.num_paths).map(|_| complex_normal(&mut gain_rng, 1.0)).collect();
    let angles: Vec<f64> = (0..cfg.num_paths).map(|_| angle_rng.random_range(-1.0..1.0)).collect();
    Ok(channel_from_paths(cfg, &gains, &angles))
}

/// Channel for explicit path gains and angles.
pub fn channel_from_paths(cfg: &ChannelConfig, gains: &[Complex64], angles: &[f64]) -> ComplexChannel {
    let d = cfg.d;
    let mut array = DVector::zeros(d);
    for (g, th) in gains.iter().zip(angles) {
        array += steering_vector(*th, d) * *g;
    }
    let amp = (d as f64 / gains.len() as f64).sqrt();
    let h = DMatrix::from_fn(d, cfg.n, |row, i| {
        let f = cfg.carrier_hz + i as f64 * cfg.subcarrier_spacing_hz;
        let k = 2.0 * PI * f / SPEED_OF_LIGHT;
        array[row] * Complex64::from_polar(amp, -k * cfg.common_distance_m)
    });
    let complex_rank = complex_numerical_rank(&h);
    ComplexChannel { h, complex_rank }
}

/// Singular values of a complex matrix, descending.
pub fn complex_singular_values(m: &DMatrix<Complex64>) -> DVector<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

fn complex_numerical_rank(m: &DMatrix<Complex64>) -> usize {
    let s = complex_singular_values(m);
    match s.get(0) {
        Some(&top) if top > 0.0 => s.iter().filter(|v| **v > NUMERICAL_RANK_TOL * top).count(),
        _ => 0,
    }
}

/// Circularly symmetric complex Gaussian with total variance `var`.
fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
}

/// `y = Hᴴx + ε`, `ε ~ CN(0, I/SNR)`. An SNR of `+∞` disables the noise.
pub fn channel_observe<R: Rng + ?Sized>(
    channel: &ComplexChannel,
    x: &DVector<Complex64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<DVector<Complex64>> {
    if x.len() != channel.h.nrows() {
        return Err(Error::dim(format!(
            "pilot length {} does not match {} antennas",
            x.len(),
            channel.h.nrows()
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::param("snr_db is NaN"));
    }
    let mut y = channel.h.ad_mul(x);
    if snr_db != f64::INFINITY {
        let var = 1.0 / snr_linear(snr_db);
        for v in y.iter_mut() {
            *v += complex_normal(rng, var);
        }
    }
    Ok(y)
}

/// `([Re x; Im x], [Re y; Im y])`.
pub fn realify_system(
    x: &DVector<Complex64>,
    y: &DVector<Complex64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let phi = stack_real(x);
    let y_real = stack_real(y);
    ensure_finite(phi.iter(), "pilot")?;
    ensure_finite(y_real.iter(), "observation")?;
    Ok((phi, y_real))
}

fn stack_real(v: &DVector<Complex64>) -> DVector<f64> {
    let m = v.len();
    DVector::from_fn(2 * m, |i, _| if i < m { v[i].re } else { v[i - m].im })
}

/// Inverse of the stacking in [`realify_system`].
pub fn complexify(v: &DVector<f64>) -> Result<DVector<Complex64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::dim("stacked vector must have even length"));
    }
    let m = v.len() / 2;
    Ok(DVector::from_fn(m, |i, _| Complex64::new(v[i], v[i + m])))
}

/// The 2d×2n real parameter `Θ_r` of the complex map `G` (n×d).
pub fn realify_matrix(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (n, d) = g.shape();
    let mut t = DMatrix::zeros(2 * n, 2 * d);
    for i in 0..n {
        for j in 0..d {
            let z = g[(i, j)];
            t[(i, j)] = z.re;
            t[(i, j + d)] = -z.im;
            t[(i + n, j)] = z.im;
            t[(i + n, j + d)] = z.re;
        }
    }
    t.transpose()
}

/// A channel estimate read back from a real 2d×2n parameter estimate.
#[derive(Debug, Clone)]
pub struct ComplexEstimate {
    /// d×n
    pub h_hat: DMatrix<Complex64>,
    /// `(raw_real_rank + 1) / 2`, rounding half up.
    pub complex_rank_est: usize,
    pub raw_real_rank: usize,
}

/// Average the two redundant copies of `Re G` and `Im G` in `Xᵀ` and return
/// `Ĥ = Ĝᴴ`.
pub fn extract_complex_estimate(x_real: &DMatrix<f64>, raw_real_rank: usize) -> Result<ComplexEstimate> {
    let (rows, cols) = x_real.shape();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::dim(format!("real estimate must have even shape, got {rows}×{cols}")));
    }
    let (d, n) = (rows / 2, cols / 2);
    let t = x_real.transpose();
    let g_hat = DMatrix::from_fn(n, d, |i, j| {
        let re = 0.5 * (t[(i, j)] + t[(i + n, j + d)]);
        let im = 0.5 * (t[(i + n, j)] - t[(i, j + d)]);
        Complex64::new(re, im)
    });
    Ok(ComplexEstimate {
        h_hat: g_hat.adjoint(),
        complex_rank_est: raw_real_rank.div_ceil(2),
        raw_real_rank,
    })
}

/// Endless supply of QAM pilot vectors.
pub enum PilotSource {
    /// Fresh pseudo-random bits per pilot.
    Random { d: usize, rng: rng::Rng },
    /// Pilots cut from a fixed bit stream, wrapping around at the end.
    Cyclic { pilots: Vec<DVector<Complex64>>, next: usize },
}

impl PilotSource {
    pub fn random(d: usize, seed: u64) -> Self {
        PilotSource::Random { d, rng: rng::stream(seed, 4) }
    }

    /// Pilots from `bytes`, starting at pilot number `offset`.
    pub fn from_bytes(bytes: &[u8], d: usize, offset: usize) -> Result<Self> {
        let pilots = bits_to_qam(bytes, d)?;
        if pilots.is_empty() {
            return Err(Error::param(format!(
                "bit stream of {} bytes is shorter than one pilot of {} bits",
                bytes.len(),
                2 * d
            )));
        }
        let next = offset % pilots.len();
        Ok(PilotSource::Cyclic { pilots, next })
    }

    pub fn next_pilot(&mut self) -> DVector<Complex64> {
        match self {
            PilotSource::Random { d, rng } => {
                let mut bytes = vec![0u8; (2 * *d).div_ceil(8)];
                rng.fill_bytes(&mut bytes);
                bits_to_qam(&bytes, *d)
                    .ok()
                    .and_then(|mut v| v.pop())
                    .unwrap_or_else(|| DVector::zeros(*d))
            }
            PilotSource::Cyclic { pilots, next } => {
                let p = pilots[*next].clone();
                *next = (*next + 1) % pilots.len();
                p
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn qam_map() {
        let s = 1.0 / 2f64.sqrt();
        // 00 01 10 11
        let v = bits_to_qam(&[0b0001_1011], 4).unwrap();
        assert_eq!(v.len(), 1);
        assert!(close(v[0][0], Complex64::new(-1.0, 1.0) / 2.0));
        assert!(close(v[0][1], Complex64::new(-1.0, -1.0) / 2.0));
        assert!(close(v[0][2], Complex64::new(1.0, 1.0) / 2.0));
        assert!(close(v[0][3], Complex64::new(1.0, -1.0) / 2.0));
        let v = bits_to_qam(&[0b1100_0000], 2).unwrap();
        assert!(close(v[0][0], Complex64::new(s, -s)));
        assert!(close(v[0][1], Complex64::new(-s, s)));
    }

    #[test]
    fn qam_entries_have_fixed_modulus() {
        let bytes: Vec<u8> = (0..=255).collect();
        let d = 8;
        for p in bits_to_qam(&bytes, d).unwrap() {
            for z in p.iter() {
                assert!((z.norm() - (2.0 / d as f64).sqrt()).abs() < 1e-14);
            }
            assert!((p.norm_squared() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn qam_drops_partial_and_rejects_empty() {
        assert!(bits_to_qam(&[], 2).is_err());
        // 24 bits, 10 bits per pilot → two pilots
        assert_eq!(bits_to_qam(&[1, 2, 3], 5).unwrap().len(), 2);
    }

    #[test]
    fn steering_vector_values() {
        let a = steering_vector(0.0, 4);
        assert!(a.iter().all(|z| close(*z, Complex64::new(0.5, 0.0))));
        let a = steering_vector(1.0, 2);
        let s = 1.0 / 2f64.sqrt();
        assert!(close(a[0], Complex64::new(s, 0.0)));
        assert!(close(a[1], Complex64::new(-s, 0.0)));
        for th in [-0.7, 0.13, 0.99] {
            assert!((steering_vector(th, 9).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_is_rank_one_and_deterministic() {
        for seed in 0..10 {
            let cfg = ChannelConfig { path_gain_seed: seed, angle_seed: seed + 100, ..Default::default() };
            let ch = build_channel(&cfg).unwrap();
            assert_eq!(ch.h.shape(), (64, 16));
            assert_eq!(ch.complex_rank, 1);
            let s = complex_singular_values(&ch.h);
            assert!(s[1] <= 1e-10 * s[0]);
            assert_eq!(ch.h, build_channel(&cfg).unwrap().h);
        }
    }

    #[test]
    fn single_broadside_path_has_unit_entries() {
        let cfg = ChannelConfig { d: 5, n: 3, num_paths: 1, ..Default::default() };
        let ch = channel_from_paths(&cfg, &[Complex64::new(1.0, 0.0)], &[0.0]);
        for z in ch.h.iter() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        let k0 = 2.0 * PI * cfg.carrier_hz / SPEED_OF_LIGHT;
        assert!(close(ch.h[(2, 0)], Complex64::from_polar(1.0, -k0 * 30.0)));
    }

    #[test]
    fn noiseless_and_noisy_observation() {
        let cfg = ChannelConfig { d: 6, n: 3, ..Default::default() };
        let ch = build_channel(&cfg).unwrap();
        let x = PilotSource::random(6, 1).next_pilot();
        let mut r = rng::stream(9, 0);
        let y = channel_observe(&ch, &x, f64::INFINITY, &mut r).unwrap();
        assert_eq!(y, ch.h.ad_mul(&x));

        let zero = DVector::zeros(6);
        let reps = 100_000;
        let mut power = 0.0;
        for _ in 0..reps {
            power += channel_observe(&ch, &zero, 10.0, &mut r).unwrap().norm_squared();
        }
        let var = power / (3 * reps) as f64;
        assert!((var - 0.1).abs() <= 0.005, "noise variance {var}");
    }

    #[test]
    fn realification_identity() {
        let mut r = rng::stream(3, 0);
        let (n, d) = (3, 5);
        let g = DMatrix::from_fn(n, d, |_, _| complex_normal(&mut r, 1.0));
        let x = DVector::from_fn(d, |_, _| complex_normal(&mut r, 1.0));
        let y = &g * &x;
        let (phi, y_real) = realify_system(&x, &y).unwrap();
        let theta_real = realify_matrix(&g);
        assert_eq!(theta_real.shape(), (2 * d, 2 * n));
        assert!((theta_real.tr_mul(&phi) - y_real).amax() < 1e-12);
        assert_eq!(complexify(&phi).unwrap(), x);
    }

    #[test]
    fn real_input_has_zero_imaginary_block() {
        let x = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(-2.0, 0.0)]);
        let (phi, _) = realify_system(&x, &x).unwrap();
        assert_eq!(phi.rows(2, 2).amax(), 0.0);
    }

    #[test]
    fn extraction_inverts_realification() {
        let mut r = rng::stream(5, 0);
        let h = DMatrix::from_fn(4, 2, |_, _| complex_normal(&mut r, 1.0));
        let est = extract_complex_estimate(&realify_matrix(&h.adjoint()), 2).unwrap();
        assert!((est.h_hat - &h).iter().all(|z| z.norm() < 1e-14));
        assert_eq!(est.complex_rank_est, 1);
        let est = extract_complex_estimate(&DMatrix::zeros(4, 2), 3).unwrap();
        assert_eq!((est.complex_rank_est, est.raw_real_rank), (2, 3));
        assert!(extract_complex_estimate(&DMatrix::zeros(3, 2), 0).is_err());
    }

    #[test]
    fn cyclic_pilots_wrap() {
        let mut src = PilotSource::from_bytes(&[0x00, 0xff], 4, 1).unwrap();
        let a = src.next_pilot();
        let b = src.next_pilot();
        let c = src.next_pilot();
        assert_eq!(a, c);
        assert_ne!(a, b);
        assert!(PilotSource::from_bytes(&[0x00], 8, 0).is_err());
    }
}
