//! Per-bin second-order statistics and the GEVD-based multichannel Wiener
//! filters used by both cascade designs.
//!
//! - [`accumulate_covariances`]: batch per-bin covariance estimates from
//!   VAD-selected frames (speech-plus-interference vs interference-only).
//! - [`RecursiveCovariance`]: exponentially weighted per-frame tracker with
//!   bias correction, for the adaptive pipelines.
//! - [`gevd`] / [`mwf_from_gevd`]: generalized eigenvalue decomposition via
//!   Cholesky whitening and the rank-constrained Wiener filter built from it.
//! - [`EchoCovarianceModel`] / [`verify_aec_independence`]: a closed-form
//!   narrowband echo model used to check that the optimal echo canceller
//!   after the extended filter equals the true echo paths, by two
//!   independent computation routes.

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::io;
use crate::stft::{self, SpectralFrames};

// ---------------------------------------------------------------------------
// Covariance estimation
// ---------------------------------------------------------------------------

/// Per-bin covariance estimates for one channel layout.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    /// Speech-plus-interference covariance per bin, `C × C`.
    pub r_full: Vec<DMatrix<Complex64>>,
    /// Interference-only covariance per bin, `C × C`.
    pub r_interf: Vec<DMatrix<Complex64>>,
    pub frames_full: usize,
    pub frames_interf: usize,
    pub channels: usize,
}

/// Average outer products `x xᴴ` over the frames selected by each mask.
///
/// `full_mask` selects the speech-plus-interference regime, `interf_mask`
/// the interference-only regime. Each regime must contribute at least
/// `min_frames` frames (at least the channel count for invertibility).
pub fn accumulate_covariances(
    frames: &SpectralFrames,
    full_mask: &[bool],
    interf_mask: &[bool],
    min_frames: usize,
) -> Result<CovarianceSet> {
    let k_frames = frames.frames();
    if full_mask.len() != k_frames || interf_mask.len() != k_frames {
        return Err(CoreError::Shape(format!(
            "masks must cover all {k_frames} frames, got {} and {}",
            full_mask.len(),
            interf_mask.len()
        )));
    }
    let channels = frames.channels();
    let min_frames = min_frames.max(channels);
    let count_full = full_mask.iter().filter(|&&b| b).count();
    let count_interf = interf_mask.iter().filter(|&&b| b).count();
    if count_full < min_frames || count_interf < min_frames {
        return Err(CoreError::InsufficientData(format!(
            "covariance estimation needs >= {min_frames} frames per regime, \
             got {count_full} speech-plus-interference and {count_interf} interference-only"
        )));
    }
    let bins = frames.bins();
    let mut r_full = vec![DMatrix::<Complex64>::zeros(channels, channels); bins];
    let mut r_interf = vec![DMatrix::<Complex64>::zeros(channels, channels); bins];
    for k in 0..k_frames {
        let in_full = full_mask[k];
        let in_interf = interf_mask[k];
        if !in_full && !in_interf {
            continue;
        }
        for f in 0..bins {
            for i in 0..channels {
                let xi = frames.data[(k, f, i)];
                for j in 0..channels {
                    let v = xi * frames.data[(k, f, j)].conj();
                    if in_full {
                        r_full[f][(i, j)] += v;
                    }
                    if in_interf {
                        r_interf[f][(i, j)] += v;
                    }
                }
            }
        }
    }
    for f in 0..bins {
        r_full[f] /= Complex64::new(count_full as f64, 0.0);
        r_interf[f] /= Complex64::new(count_interf as f64, 0.0);
    }
    Ok(CovarianceSet {
        r_full,
        r_interf,
        frames_full: count_full,
        frames_interf: count_interf,
        channels,
    })
}

/// Exponentially weighted per-bin covariance tracker.
///
/// `r_k = λ r_{k-1} + (1-λ) x xᴴ`, read back divided by the accumulated
/// weight `1 - λᵏ` so early estimates are unbiased.
#[derive(Debug, Clone)]
pub struct RecursiveCovariance {
    r: Vec<DMatrix<Complex64>>,
    weight: f64,
    count: usize,
    lambda: f64,
    channels: usize,
}

impl RecursiveCovariance {
    pub fn new(bins: usize, channels: usize, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(CoreError::Config(format!(
                "forgetting factor must be in [0,1), got {lambda}"
            )));
        }
        Ok(Self {
            r: vec![DMatrix::zeros(channels, channels); bins],
            weight: 0.0,
            count: 0,
            lambda,
            channels,
        })
    }

    /// Fold in one frame (`[bins × channels]` view of the STFT data).
    pub fn update(&mut self, frame: ArrayView2<Complex64>) {
        let (bins, channels) = frame.dim();
        debug_assert_eq!(bins, self.r.len());
        debug_assert_eq!(channels, self.channels);
        let lam = Complex64::new(self.lambda, 0.0);
        let one_minus = Complex64::new(1.0 - self.lambda, 0.0);
        for f in 0..bins {
            let r = &mut self.r[f];
            for i in 0..channels {
                let xi = frame[(f, i)];
                for j in 0..channels {
                    r[(i, j)] = lam * r[(i, j)] + one_minus * xi * frame[(f, j)].conj();
                }
            }
        }
        self.weight = self.lambda * self.weight + (1.0 - self.lambda);
        self.count += 1;
    }

    /// Bias-corrected estimate for one bin.
    pub fn current(&self, bin: usize) -> DMatrix<Complex64> {
        if self.weight <= 0.0 {
            return self.r[bin].clone();
        }
        &self.r[bin] / Complex64::new(self.weight, 0.0)
    }

    pub fn count(&self) -> usize {
        self.count
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn bins(&self) -> usize {
        self.r.len()
    }
}

// ---------------------------------------------------------------------------
// GEVD and the rank-constrained multichannel Wiener filter
// ---------------------------------------------------------------------------

/// Generalized eigenvalue decomposition of a covariance pencil
/// `(R_full, R_interf)`.
#[derive(Debug, Clone)]
pub struct GevdResult {
    /// Generalized eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Generalized eigenvectors as columns: `Xᴴ R_interf X = I` and
    /// `Xᴴ R_full X = diag(eigenvalues)`.
    pub x: DMatrix<Complex64>,
    /// `Q = X⁻ᴴ`: columns carry the signal subspace back to channel space,
    /// `R_full = Q diag(eigenvalues) Qᴴ` and `R_interf = Q Qᴴ`.
    pub q: DMatrix<Complex64>,
}

fn hermitize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// GEVD via Cholesky whitening of the interference covariance. When the
/// interference matrix is numerically singular, diagonal loading of
/// `1e-8 · trace/C` is added (escalating tenfold, a few attempts) before
/// giving up.
pub fn gevd(r_full: &DMatrix<Complex64>, r_interf: &DMatrix<Complex64>) -> Result<GevdResult> {
    let c = r_full.nrows();
    if r_full.ncols() != c || r_interf.nrows() != c || r_interf.ncols() != c {
        return Err(CoreError::Shape(format!(
            "covariance pencil must be square and matching, got {}x{} and {}x{}",
            r_full.nrows(),
            r_full.ncols(),
            r_interf.nrows(),
            r_interf.ncols()
        )));
    }
    if r_full.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
        || r_interf.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(CoreError::NonFinite("covariance matrix".into()));
    }
    let rf = hermitize(r_full);
    let ri = hermitize(r_interf);

    let trace_avg = ri.diagonal().iter().map(|v| v.re).sum::<f64>() / c as f64;
    let base_load = 1e-8 * trace_avg.abs().max(f64::MIN_POSITIVE);
    let mut chol = None;
    let mut load = 0.0;
    for attempt in 0..6 {
        let candidate = if attempt == 0 {
            ri.clone()
        } else {
            load = base_load * 10f64.powi(attempt - 1);
            &ri + DMatrix::<Complex64>::identity(c, c) * Complex64::new(load, 0.0)
        };
        if let Some(ch) = candidate.cholesky() {
            chol = Some(ch);
            break;
        }
    }
    let chol = chol.ok_or_else(|| {
        CoreError::RankDeficient(format!(
            "interference covariance not positive definite even with loading {load:.3e}"
        ))
    })?;
    let l = chol.l();

    // A = L⁻¹ R_full L⁻ᴴ, built with two triangular solves.
    let li_rf = l
        .solve_lower_triangular(&rf)
        .ok_or_else(|| CoreError::RankDeficient("singular Cholesky factor".into()))?;
    let a = l
        .solve_lower_triangular(&li_rf.adjoint())
        .ok_or_else(|| CoreError::RankDeficient("singular Cholesky factor".into()))?;
    let a = hermitize(&a);

    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut u = DMatrix::<Complex64>::zeros(c, c);
    for (new_col, &old_col) in order.iter().enumerate() {
        u.set_column(new_col, &eig.eigenvectors.column(old_col));
    }

    // X = L⁻ᴴ U (whitened eigenvectors back in channel space), Q = L U.
    let x = l
        .adjoint()
        .solve_upper_triangular(&u)
        .ok_or_else(|| CoreError::RankDeficient("singular Cholesky factor".into()))?;
    let q = &l * &u;
    Ok(GevdResult { eigenvalues, x, q })
}

/// Rank-constrained multichannel Wiener filter from a GEVD.
///
/// Returns `W = R_full⁻¹ R̂_d` where the desired covariance estimate keeps
/// the top `rank` generalized eigendirections with spectral gains
/// `max(σ−1, 0)/σ`. The estimator applied to data is `Wᴴ`.
pub fn mwf_from_gevd(g: &GevdResult, rank: usize) -> DMatrix<Complex64> {
    let c = g.eigenvalues.len();
    let mut scaled = g.x.clone();
    for i in 0..c {
        let gain = if i < rank {
            let sigma = g.eigenvalues[i];
            if sigma > 1.0 {
                (sigma - 1.0) / sigma
            } else {
                0.0
            }
        } else {
            0.0
        };
        let gc = Complex64::new(gain, 0.0);
        for r in 0..c {
            scaled[(r, i)] *= gc;
        }
    }
    &scaled * g.q.adjoint()
}

/// Per-bin rank-constrained Wiener filter with its GEVD diagnostics.
#[derive(Debug, Clone)]
pub struct SpectralFilter {
    /// Per-bin filter matrices `W = R_full⁻¹ R̂_d` (apply `Wᴴ` to data).
    pub w: Vec<DMatrix<Complex64>>,
    /// Per-bin generalized eigenvalues, descending.
    pub eigenvalues: Vec<Vec<f64>>,
    pub rank: usize,
    pub channels: usize,
}

impl SpectralFilter {
    /// Identity (pass-through) filter, useful as a diagnostic bypass.
    pub fn identity(bins: usize, channels: usize) -> Self {
        Self {
            w: vec![DMatrix::identity(channels, channels); bins],
            eigenvalues: vec![vec![1.0; channels]; bins],
            rank: channels,
            channels,
        }
    }

    pub fn bins(&self) -> usize {
        self.w.len()
    }

    /// The estimator matrices `Wᴴ` actually multiplied onto the data.
    pub fn estimator_matrices(&self) -> Vec<DMatrix<Complex64>> {
        self.w.iter().map(|w| w.adjoint()).collect()
    }

    /// Apply `Wᴴ` per bin to every frame.
    pub fn apply(&self, frames: &SpectralFrames) -> Result<SpectralFrames> {
        stft::apply_per_bin_matrix(frames, &self.estimator_matrices())
    }

    /// Write the filter bank (binary matrix dump, dimensions
    /// `[bins × C × C × 2]` with a trailing real/imaginary axis) and the
    /// per-bin eigenvalue CSV (`bin, eig0, eig1, ...`).
    pub fn export(&self, dir: &Path, label: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let bins = self.bins();
        let c = self.channels;
        let mut data = Vec::with_capacity(bins * c * c * 2);
        for w in &self.w {
            for r in 0..c {
                for col in 0..c {
                    data.push(w[(r, col)].re);
                    data.push(w[(r, col)].im);
                }
            }
        }
        io::write_matrix_dump(
            &dir.join(format!("{label}_filter.bin")),
            &[bins, c, c, 2],
            &data,
        )?;
        let mut csv = csv::Writer::from_path(dir.join(format!("{label}_eigenvalues.csv")))?;
        let mut header = vec!["bin".to_string()];
        header.extend((0..c).map(|i| format!("eig{i}")));
        csv.write_record(&header)?;
        for (f, eigs) in self.eigenvalues.iter().enumerate() {
            let mut row = vec![f.to_string()];
            row.extend(eigs.iter().map(|e| format!("{e:.12e}")));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Build the per-bin filter for a covariance set with the given desired-
/// signal rank.
pub fn build_mwf(cov: &CovarianceSet, rank: usize) -> Result<SpectralFilter> {
    let bins = cov.r_full.len();
    let mut w = Vec::with_capacity(bins);
    let mut eigenvalues = Vec::with_capacity(bins);
    for f in 0..bins {
        let g = gevd(&cov.r_full[f], &cov.r_interf[f])?;
        w.push(mwf_from_gevd(&g, rank));
        eigenvalues.push(g.eigenvalues);
    }
    Ok(SpectralFilter {
        w,
        eigenvalues,
        rank,
        channels: cov.channels,
    })
}

/// Microphone-only noise-reduction filter: a single desired direction
/// (one near-end talker).
pub fn build_nr_filter(cov: &CovarianceSet) -> Result<SpectralFilter> {
    build_mwf(cov, 1)
}

/// Extended-vector noise-reduction filter: near-end talker plus one
/// independent far-end talker per loudspeaker.
pub fn build_nrext_filter(cov: &CovarianceSet, desired_rank: usize) -> Result<SpectralFilter> {
    build_mwf(cov, desired_rank)
}

// ---------------------------------------------------------------------------
// Closed-form narrowband echo model and the canceller independence check
// ---------------------------------------------------------------------------

/// Narrowband (single-bin) statistics of the extended signal model:
/// microphones receive `s + n + F·l`, loudspeakers play `l = l_s + l_n`.
#[derive(Debug, Clone)]
pub struct EchoCovarianceModel {
    /// True echo transfer `F`, `M × L`.
    pub echo_paths: DMatrix<Complex64>,
    /// Near-end speech covariance at the mics (rank 1), `M × M`.
    pub r_ss: DMatrix<Complex64>,
    /// Near-end noise covariance at the mics (full rank), `M × M`.
    pub r_nn: DMatrix<Complex64>,
    /// Far-end speech covariance across loudspeakers (diagonal:
    /// independent talkers), `L × L`.
    pub r_lsls: DMatrix<Complex64>,
    /// Far-end noise covariance across loudspeakers, `L × L`.
    pub r_lnln: DMatrix<Complex64>,
}

fn random_unit_vector(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<Complex64> {
    let mut v = DMatrix::<Complex64>::zeros(m, 1);
    for i in 0..m {
        v[(i, 0)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let norm = v.norm();
    v / Complex64::new(norm.max(1e-12), 0.0)
}

fn random_psd(rng: &mut ChaCha8Rng, m: usize, loading: f64) -> DMatrix<Complex64> {
    let mut b = DMatrix::<Complex64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    &b * b.adjoint() + DMatrix::<Complex64>::identity(m, m) * Complex64::new(loading, 0.0)
}

impl EchoCovarianceModel {
    /// A randomly drawn but well-conditioned model instance.
    pub fn random(seed: u64, mics: usize, loudspeakers: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_unit_vector(&mut rng, mics);
        let r_ss = &h * h.adjoint() * Complex64::new(4.0, 0.0);
        let r_nn = random_psd(&mut rng, mics, 0.5);
        let mut r_lsls = DMatrix::<Complex64>::zeros(loudspeakers, loudspeakers);
        for j in 0..loudspeakers {
            r_lsls[(j, j)] = Complex64::new(rng.random_range(1.0..3.0), 0.0);
        }
        let r_lnln = random_psd(&mut rng, loudspeakers, 0.3);
        let mut echo_paths = DMatrix::<Complex64>::zeros(mics, loudspeakers);
        for i in 0..mics {
            for j in 0..loudspeakers {
                echo_paths[(i, j)] =
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        Self {
            echo_paths,
            r_ss,
            r_nn,
            r_lsls,
            r_lnln,
        }
    }

    pub fn mics(&self) -> usize {
        self.r_ss.nrows()
    }
    pub fn loudspeakers(&self) -> usize {
        self.r_lsls.nrows()
    }

    /// `[[I, F], [0, I]]`: maps `[s+n; l]` to the extended observation.
    fn mixing(&self) -> DMatrix<Complex64> {
        let m = self.mics();
        let l = self.loudspeakers();
        let mut g = DMatrix::<Complex64>::identity(m + l, m + l);
        for i in 0..m {
            for j in 0..l {
                g[(i, m + j)] = self.echo_paths[(i, j)];
            }
        }
        g
    }

    fn block_diag(&self, top: &DMatrix<Complex64>, bottom: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let m = self.mics();
        let l = self.loudspeakers();
        let mut out = DMatrix::<Complex64>::zeros(m + l, m + l);
        out.view_mut((0, 0), (m, m)).copy_from(top);
        out.view_mut((m, m), (l, l)).copy_from(bottom);
        out
    }

    /// Covariance of the extended observation `[m; l]`.
    pub fn extended_full(&self) -> DMatrix<Complex64> {
        let g = self.mixing();
        let r_ll = &self.r_lsls + &self.r_lnln;
        &g * self.block_diag(&(&self.r_ss + &self.r_nn), &r_ll) * g.adjoint()
    }

    /// Covariance of the extended interference `[n + F l_n; l_n]`.
    pub fn extended_interference(&self) -> DMatrix<Complex64> {
        let g = self.mixing();
        &g * self.block_diag(&self.r_nn, &self.r_lnln) * g.adjoint()
    }

    /// Covariance of the extended desired component `[s + F l_s; l_s]`.
    pub fn extended_desired(&self) -> DMatrix<Complex64> {
        let g = self.mixing();
        &g * self.block_diag(&self.r_ss, &self.r_lsls) * g.adjoint()
    }

    /// Rank of the desired covariance: one near-end talker plus one
    /// independent far-end talker per loudspeaker.
    pub fn desired_rank(&self) -> usize {
        1 + self.loudspeakers()
    }

    /// Closed-form covariance of the filtered loudspeaker references:
    /// `R_lsls R_ll⁻¹ R_lsls`.
    pub fn filtered_reference_covariance(&self) -> Result<DMatrix<Complex64>> {
        let r_ll = &self.r_lsls + &self.r_lnln;
        let inv = r_ll
            .clone()
            .try_inverse()
            .ok_or_else(|| CoreError::RankDeficient("loudspeaker covariance singular".into()))?;
        Ok(&self.r_lsls * inv * &self.r_lsls)
    }
}

/// Outcome of the two-route echo-path check.
#[derive(Debug, Clone)]
pub struct AecIndependenceCheck {
    /// Least-squares echo paths of the filtered signals (from the composed
    /// covariances and the actual GEVD filter builder), `M × L`.
    pub paths_after_filter: DMatrix<Complex64>,
    /// The model's true echo paths, `M × L`.
    pub paths_true: DMatrix<Complex64>,
    /// `‖after − true‖ / ‖true‖` (Frobenius).
    pub relative_deviation: f64,
    /// `‖R_l**l** (route 1) − closed form‖ / ‖closed form‖`.
    pub reference_covariance_deviation: f64,
}

/// Verify that the optimal echo canceller downstream of the extended filter
/// equals the true echo paths.
///
/// Route 1 composes the extended covariances, runs the production GEVD
/// filter builder at the model's desired rank, propagates the covariances
/// through the filter and solves the least-squares canceller from the
/// filtered statistics. Route 2 is the closed form (the true paths and
/// `R_lsls R_ll⁻¹ R_lsls`). The two must agree to numerical precision.
pub fn verify_aec_independence(model: &EchoCovarianceModel) -> Result<AecIndependenceCheck> {
    let m = model.mics();
    let l = model.loudspeakers();

    // Route 1: production filter from the composed covariance pencil.
    let r_full = model.extended_full();
    let r_interf = model.extended_interference();
    let g = gevd(&r_full, &r_interf)?;
    let w = mwf_from_gevd(&g, model.desired_rank());
    let wh = w.adjoint();

    // Filtered-output covariance and its mic/reference blocks.
    let r_zz = &wh * &r_full * &w;
    let r_ref = r_zz.view((m, m), (l, l)).into_owned();
    let r_ref_mic = r_zz.view((m, 0), (l, m)).into_owned();

    // Least-squares canceller: F̂ᴴ = R_l**l**⁻¹ R_l**m**.
    let f_hat_h = r_ref
        .clone()
        .try_inverse()
        .ok_or_else(|| {
            CoreError::RankDeficient("filtered reference covariance singular".into())
        })?
        * r_ref_mic;
    let paths_after_filter = f_hat_h.adjoint();

    // Route 2: closed forms.
    let r_ref_closed = model.filtered_reference_covariance()?;
    let ref_dev = (&r_ref - &r_ref_closed).norm() / r_ref_closed.norm().max(f64::MIN_POSITIVE);
    let rel = (&paths_after_filter - &model.echo_paths).norm()
        / model.echo_paths.norm().max(f64::MIN_POSITIVE);

    Ok(AecIndependenceCheck {
        paths_after_filter,
        paths_true: model.echo_paths.clone(),
        relative_deviation: rel,
        reference_covariance_deviation: ref_dev,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn random_pencil(seed: u64, c: usize) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ri = random_psd(&mut rng, c, 0.2);
        let rank1 = {
            let v = random_unit_vector(&mut rng, c);
            &v * v.adjoint() * Complex64::new(3.0, 0.0)
        };
        let rf = &ri + rank1;
        (rf, ri)
    }

    #[test]
    fn gevd_satisfies_its_defining_identities() {
        for seed in 0..8 {
            for c in [2usize, 3, 4] {
                let (rf, ri) = random_pencil(seed * 31 + c as u64, c);
                let g = gevd(&rf, &ri).unwrap();
                let eye = DMatrix::<Complex64>::identity(c, c);
                let xh_ri_x = g.x.adjoint() * &ri * &g.x;
                assert!((&xh_ri_x - &eye).norm() < 1e-9, "Xᴴ R_i X != I");
                let xh_rf_x = g.x.adjoint() * &rf * &g.x;
                for i in 0..c {
                    for j in 0..c {
                        let v = xh_rf_x[(i, j)];
                        if i == j {
                            assert!((v.re - g.eigenvalues[i]).abs() < 1e-9);
                            assert!(v.im.abs() < 1e-9);
                        } else {
                            assert!(v.norm() < 1e-9, "off-diagonal {i},{j}: {v}");
                        }
                    }
                }
                // Descending order and Q = X⁻ᴴ.
                for i in 1..c {
                    assert!(g.eigenvalues[i - 1] >= g.eigenvalues[i] - 1e-12);
                }
                let qx = g.q.adjoint() * &g.x;
                assert!((&qx - &eye).norm() < 1e-9, "Q != X⁻ᴴ");
            }
        }
    }

    #[test]
    fn rank_one_filter_matches_sherman_morrison_wiener_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in [2usize, 4] {
            let v = random_unit_vector(&mut rng, c) * Complex64::new(1.7, 0.0);
            let ri = DMatrix::<Complex64>::identity(c, c);
            let rd = &v * v.adjoint();
            let rf = &ri + &rd;
            let g = gevd(&rf, &ri).unwrap();
            let w = mwf_from_gevd(&g, 1);
            // Closed form: W = R_f⁻¹ R_d = v vᴴ / (1 + ‖v‖²).
            let denom = Complex64::new(1.0 + v.norm_squared(), 0.0);
            let expected = &rd / denom;
            assert!((&w - &expected).norm() < 1e-10, "‖ΔW‖ = {}", (&w - &expected).norm());
        }
    }

    #[test]
    fn filter_gains_clamp_nonnegative_when_pencil_is_degenerate() {
        // R_full slightly below R_interf in one direction: eigenvalue < 1.
        let ri = DMatrix::<Complex64>::identity(2, 2);
        let mut rf = DMatrix::<Complex64>::identity(2, 2);
        rf[(0, 0)] = Complex64::new(0.5, 0.0);
        let g = gevd(&rf, &ri).unwrap();
        let w = mwf_from_gevd(&g, 2);
        // All gains clamp to zero: the filter must vanish.
        assert!(w.norm() < 1e-12, "expected zero filter, got ‖W‖={}", w.norm());
    }

    #[test]
    fn gevd_recovers_from_singular_interference_with_loading() {
        let mut ri = DMatrix::<Complex64>::zeros(2, 2);
        ri[(0, 0)] = Complex64::new(1.0, 0.0);
        // second channel has exactly zero interference power
        let (rf, _) = random_pencil(5, 2);
        let g = gevd(&rf, &ri).unwrap();
        assert!(g.eigenvalues.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn covariance_accumulation_matches_direct_average() {
        // 3 frames, 2 bins, 2 channels, hand-checkable.
        let mut data = Array3::<Complex64>::zeros((3, 2, 2));
        let vals = [
            [(1.0, 0.0), (0.0, 1.0)],
            [(0.5, -0.5), (2.0, 0.0)],
            [(0.0, 2.0), (1.0, 1.0)],
        ];
        for (k, row) in vals.iter().enumerate() {
            for (c, &(re, im)) in row.iter().enumerate() {
                for f in 0..2 {
                    let scale = (f + 1) as f64;
                    data[(k, f, c)] = Complex64::new(re * scale, im * scale);
                }
            }
        }
        let frames = SpectralFrames {
            data,
            window_size: 4,
            hop: 2,
            signal_len: 8,
        };
        let full = vec![true, true, true];
        let interf = vec![true, false, true];
        let cov = accumulate_covariances(&frames, &full, &interf, 2).unwrap();
        assert_eq!(cov.frames_full, 3);
        assert_eq!(cov.frames_interf, 2);
        // Direct oracle for bin 0, interference set {0, 2}.
        let x0 = DMatrix::from_column_slice(2, 1, &[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ]);
        let x2 = DMatrix::from_column_slice(2, 1, &[
            Complex64::new(0.0, 2.0),
            Complex64::new(1.0, 1.0),
        ]);
        let expected = (&x0 * x0.adjoint() + &x2 * x2.adjoint()) / Complex64::new(2.0, 0.0);
        assert!((&cov.r_interf[0] - &expected).norm() < 1e-14);
        // Bin 1 is the same data scaled by 2: covariance scales by 4.
        assert!((&cov.r_interf[1] - &expected * Complex64::new(4.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn too_few_frames_in_a_regime_is_an_error() {
        let frames = SpectralFrames {
            data: Array3::zeros((5, 3, 4)),
            window_size: 4,
            hop: 2,
            signal_len: 12,
        };
        let full = vec![true; 5];
        let interf = vec![true, false, false, false, false];
        let err = accumulate_covariances(&frames, &full, &interf, 2).unwrap_err();
        assert!(matches!(err, CoreError::InsufficientData(_)), "{err}");
    }

    #[test]
    fn recursive_tracker_is_bias_corrected_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bins = 2;
        let c = 2;
        let mut tracker = RecursiveCovariance::new(bins, c, 0.995).unwrap();
        // After one update the corrected estimate equals the outer product.
        let mut first = ndarray::Array2::<Complex64>::zeros((bins, c));
        for v in first.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        tracker.update(first.view());
        let x = DMatrix::from_iterator(c, 1, first.row(0).iter().cloned());
        let outer = &x * x.adjoint();
        assert!((&tracker.current(0) - &outer).norm() < 1e-12);

        // On stationary unit-variance data it approaches the identity.
        let mut frame = ndarray::Array2::<Complex64>::zeros((bins, c));
        for _ in 0..4000 {
            for v in frame.iter_mut() {
                *v = Complex64::new(
                    rng.random_range(-1.0f64..1.0) * 3f64.sqrt(),
                    rng.random_range(-1.0f64..1.0) * 3f64.sqrt(),
                ) / Complex64::new(2f64.sqrt(), 0.0);
            }
            tracker.update(frame.view());
        }
        let eye = DMatrix::<Complex64>::identity(c, c);
        let dev = (&tracker.current(0) - &eye).norm();
        assert!(dev < 0.25, "tracker deviates {dev} from identity");
    }

    #[test]
    fn echo_canceller_after_extended_filter_equals_true_paths() {
        for seed in 0..12 {
            let model = EchoCovarianceModel::random(seed, 2, 2);
            let check = verify_aec_independence(&model).unwrap();
            assert!(
                check.relative_deviation < 1e-8,
                "seed {seed}: deviation {}",
                check.relative_deviation
            );
            assert!(
                check.reference_covariance_deviation < 1e-8,
                "seed {seed}: covariance deviation {}",
                check.reference_covariance_deviation
            );
        }
    }

    #[test]
    fn extended_model_pencil_has_exactly_rank_many_informative_directions() {
        let model = EchoCovarianceModel::random(4, 2, 2);
        let g = gevd(&model.extended_full(), &model.extended_interference()).unwrap();
        let above: usize = g.eigenvalues.iter().filter(|&&e| e > 1.0 + 1e-6).count();
        assert_eq!(above, model.desired_rank());
        for &e in &g.eigenvalues[model.desired_rank()..] {
            assert!((e - 1.0).abs() < 1e-6, "trailing eigenvalue {e} != 1");
        }
    }

    #[test]
    fn filter_export_round_trips() {
        let (rf, ri) = random_pencil(9, 3);
        let cov = CovarianceSet {
            r_full: vec![rf; 4],
            r_interf: vec![ri; 4],
            frames_full: 10,
            frames_interf: 10,
            channels: 3,
        };
        let filt = build_mwf(&cov, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        filt.export(dir.path(), "nr").unwrap();
        let (dims, data) = io::read_matrix_dump(&dir.path().join("nr_filter.bin")).unwrap();
        assert_eq!(dims, vec![4, 3, 3, 2]);
        assert_eq!(data.len(), 4 * 3 * 3 * 2);
        let re = data[0];
        assert!((re - filt.w[0][(0, 0)].re).abs() < 1e-15);
        let csv = std::fs::read_to_string(dir.path().join("nr_eigenvalues.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.lines().next().unwrap().starts_with("bin,eig0,eig1,eig2"));
    }

    #[test]
    fn identity_filter_passes_frames_through() {
        let mut data = Array3::<Complex64>::zeros((2, 3, 2));
        for (i, v) in data.iter_mut().enumerate() {
            *v = Complex64::new(i as f64, -(i as f64) / 2.0);
        }
        let frames = SpectralFrames {
            data: data.clone(),
            window_size: 4,
            hop: 2,
            signal_len: 6,
        };
        let filt = SpectralFilter::identity(3, 2);
        let out = filt.apply(&frames).unwrap();
        for (a, b) in out.data.iter().zip(data.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Scaling the whole pencil by a common positive factor leaves the
        /// filter unchanged (the eigen-gains depend only on power ratios).
        #[test]
        fn filter_is_invariant_to_joint_pencil_scaling(
            seed in 0u64..64,
            scale in 1e-3f64..1e3,
        ) {
            let (rf, ri) = random_pencil(seed, 3);
            let g1 = gevd(&rf, &ri).unwrap();
            let w1 = mwf_from_gevd(&g1, 1);
            let s = Complex64::new(scale, 0.0);
            let g2 = gevd(&(&rf * s), &(&ri * s)).unwrap();
            let w2 = mwf_from_gevd(&g2, 1);
            prop_assert!((&w1 - &w2).norm() < 1e-8 * w1.norm().max(1.0));
        }

        /// Estimator output covariance never exceeds the input covariance in
        /// the desired subspace sense: eigen-gains stay within [0, 1).
        #[test]
        fn eigen_gains_stay_in_unit_interval(seed in 0u64..64, rank in 1usize..4) {
            let (rf, ri) = random_pencil(seed, 3);
            let g = gevd(&rf, &ri).unwrap();
            let w = mwf_from_gevd(&g, rank);
            // Gains reconstructed by projecting W back onto the GEVD basis:
            // Xᴴ R_f W = diag(σ_i g_i) ... simpler: check via definition.
            let xh = g.x.adjoint();
            let d = xh * &rf * &w * &g.x;
            for i in 0..3 {
                let gain = d[(i, i)].re / g.eigenvalues[i].max(1e-300);
                prop_assert!(gain >= -1e-9 && gain < 1.0 + 1e-9);
            }
        }
    }
}
