//! Normalized least-mean-squares echo cancellation with voice-activity
//! gating.
//!
//! The canceller filters one or more reference channels through adaptive FIR
//! filters, subtracts the estimate from the microphone signal, and adapts
//! with a step normalized by the joint energy of the stacked regressor.
//! Adaptation is gated per sample: during near-end speech the taps are
//! frozen and only filtering continues.
//!
//! [`cancel_with_components`] additionally applies the same evolving taps to
//! component decompositions of the desired/reference signals, so that the
//! per-component residuals sum to the real residual at every sample.

use ndarray::{Array2, ArrayView2};

use crate::conv;
use crate::error::{CoreError, Result};

/// Recompute the exact regressor energy this often to cancel the drift of
/// the incremental update.
const ENERGY_REFRESH_INTERVAL: usize = 4096;

/// Adaptive filter parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NlmsConfig {
    /// Filter length per reference channel.
    pub taps: usize,
    /// Leading taps allowed to adapt; the rest stay pinned at zero.
    /// Defaults to `taps`.
    pub active_taps: usize,
    /// Adaptation step size μ.
    pub step_size: f64,
    /// Normalization floor δ.
    pub regularization: f64,
}

impl NlmsConfig {
    pub fn new(taps: usize, step_size: f64, regularization: f64) -> Self {
        Self {
            taps,
            active_taps: taps,
            step_size,
            regularization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(CoreError::Config("filter needs at least one tap".into()));
        }
        if self.active_taps == 0 || self.active_taps > self.taps {
            return Err(CoreError::Config(format!(
                "active taps must be in 1..={}, got {}",
                self.taps, self.active_taps
            )));
        }
        if !(self.step_size > 0.0 && self.step_size <= 2.0) {
            return Err(CoreError::Config(format!(
                "step size must be in (0, 2], got {}",
                self.step_size
            )));
        }
        if !(self.regularization > 0.0) {
            return Err(CoreError::Config(format!(
                "regularization must be positive, got {}",
                self.regularization
            )));
        }
        Ok(())
    }
}

/// Multichannel tapped delay line. Each sample is written twice into a
/// doubled ring buffer so the regressor is always one contiguous reversed
/// slice per channel.
#[derive(Debug, Clone)]
struct DelayLine {
    /// `[n_refs × 2·taps]`.
    buf: Array2<f64>,
    head: usize,
    taps: usize,
}

impl DelayLine {
    fn new(n_refs: usize, taps: usize) -> Self {
        Self {
            buf: Array2::zeros((n_refs, 2 * taps)),
            head: 0,
            taps,
        }
    }

    /// Push one sample per channel. Returns `Σ(new² − leaving²)` where the
    /// leaving samples are those aging out of the `active`-tap window.
    fn push(&mut self, refs: &[f64], active: usize) -> f64 {
        let l = self.taps;
        let new_head = if self.head + 1 == l { 0 } else { self.head + 1 };
        let mut delta = 0.0;
        for (r, &x) in refs.iter().enumerate() {
            let row = self.buf.row_mut(r).into_slice().unwrap();
            let leaving = row[self.head + l + 1 - active];
            delta += x * x - leaving * leaving;
            row[new_head] = x;
            row[new_head + l] = x;
        }
        self.head = new_head;
        delta
    }

    /// `Σ_r Σ_{i<active} w[r][i] · x_r(t−i)`.
    fn dot(&self, w: &Array2<f64>, active: usize) -> f64 {
        let l = self.taps;
        let lo = self.head + l + 1 - active;
        let hi = self.head + l + 1;
        let mut acc = 0.0;
        for r in 0..self.buf.dim().0 {
            let row = self.buf.row(r);
            let u = &row.as_slice().unwrap()[lo..hi];
            let wr = w.row(r);
            let wr = &wr.as_slice().unwrap()[..active];
            acc += wr
                .iter()
                .zip(u.iter().rev())
                .map(|(wi, ui)| wi * ui)
                .sum::<f64>();
        }
        acc
    }

    /// `w[r][i] += g · x_r(t−i)` over the active window.
    fn accumulate_into(&self, w: &mut Array2<f64>, g: f64, active: usize) {
        let l = self.taps;
        let lo = self.head + l + 1 - active;
        let hi = self.head + l + 1;
        for r in 0..self.buf.dim().0 {
            let row = self.buf.row(r);
            let u = &row.as_slice().unwrap()[lo..hi];
            let mut wrow = w.row_mut(r);
            let wr = &mut wrow.as_slice_mut().unwrap()[..active];
            for (wi, ui) in wr.iter_mut().zip(u.iter().rev()) {
                *wi += g * ui;
            }
        }
    }

    /// Exact regressor energy over the active window.
    fn energy(&self, active: usize) -> f64 {
        let l = self.taps;
        let mut acc = 0.0;
        for r in 0..self.buf.dim().0 {
            let row = self.buf.row(r);
            let row = row.as_slice().unwrap();
            for &v in &row[self.head + l + 1 - active..=self.head + l] {
                acc += v * v;
            }
        }
        acc
    }
}

/// Adaptive filter state: taps and delay lines for every reference channel.
#[derive(Debug, Clone)]
pub struct NlmsState {
    cfg: NlmsConfig,
    n_refs: usize,
    /// `[n_refs × taps]` filter coefficients; tap `i` multiplies `x(t−i)`.
    w: Array2<f64>,
    line: DelayLine,
    /// Incremental `Σ‖u‖²` over the active taps of all references.
    energy: f64,
    steps_since_refresh: usize,
}

impl NlmsState {
    pub fn new(cfg: NlmsConfig, n_refs: usize) -> Result<Self> {
        cfg.validate()?;
        if n_refs == 0 {
            return Err(CoreError::Config(
                "echo canceller needs at least one reference channel".into(),
            ));
        }
        let taps = cfg.taps;
        Ok(Self {
            cfg,
            n_refs,
            w: Array2::zeros((n_refs, taps)),
            line: DelayLine::new(n_refs, taps),
            energy: 0.0,
            steps_since_refresh: 0,
        })
    }

    pub fn config(&self) -> &NlmsConfig {
        &self.cfg
    }
    pub fn references(&self) -> usize {
        self.n_refs
    }

    /// Current filter taps, `[n_refs × taps]`.
    pub fn taps(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// Advance one sample: push the new reference samples, filter, subtract,
    /// and (when `adapt` is set) update the taps. Returns
    /// `(estimate, error)` with `error = desired − estimate`.
    pub fn process(&mut self, refs: &[f64], desired: f64, adapt: bool) -> Result<(f64, f64)> {
        if refs.len() != self.n_refs {
            return Err(CoreError::Shape(format!(
                "expected {} reference samples, got {}",
                self.n_refs,
                refs.len()
            )));
        }
        let a = self.cfg.active_taps;
        self.energy += self.line.push(refs, a);
        self.steps_since_refresh += 1;
        if self.steps_since_refresh >= ENERGY_REFRESH_INTERVAL {
            self.energy = self.line.energy(a);
            self.steps_since_refresh = 0;
        }

        let estimate = self.line.dot(&self.w, a);
        let error = desired - estimate;
        if !error.is_finite() {
            return Err(CoreError::NonFinite("echo canceller error signal".into()));
        }

        if adapt {
            let norm = self.cfg.regularization + self.energy.max(0.0);
            let g = self.cfg.step_size * error / norm;
            if !g.is_finite() {
                return Err(CoreError::NonFinite("echo canceller update gain".into()));
            }
            self.line.accumulate_into(&mut self.w, g, a);
        }
        Ok((estimate, error))
    }
}

/// Output of a gated batch run.
#[derive(Debug, Clone)]
pub struct EchoCancellationRun {
    /// Echo estimate ŷ(t).
    pub estimate: Vec<f64>,
    /// Residual e(t) = desired(t) − ŷ(t).
    pub error: Vec<f64>,
    /// Taps after the last sample, `[n_refs × taps]`.
    pub final_taps: Array2<f64>,
}

/// Run the canceller over a whole signal with a per-sample adaptation gate.
pub fn cancel(
    cfg: &NlmsConfig,
    refs: ArrayView2<f64>,
    desired: &[f64],
    adapt_gate: &[bool],
) -> Result<EchoCancellationRun> {
    let (n_refs, t) = refs.dim();
    if desired.len() != t || adapt_gate.len() != t {
        return Err(CoreError::Shape(format!(
            "references, desired and gate must share a length: {t}, {}, {}",
            desired.len(),
            adapt_gate.len()
        )));
    }
    let mut state = NlmsState::new(cfg.clone(), n_refs)?;
    let mut estimate = Vec::with_capacity(t);
    let mut error = Vec::with_capacity(t);
    let mut sample = vec![0.0; n_refs];
    for i in 0..t {
        for (r, s) in sample.iter_mut().enumerate() {
            *s = refs[(r, i)];
        }
        let (y, e) = state.process(&sample, desired[i], adapt_gate[i])?;
        estimate.push(y);
        error.push(e);
    }
    Ok(EchoCancellationRun {
        estimate,
        error,
        final_taps: state.w,
    })
}

/// Output of a lockstep run: the real residual plus per-component residuals
/// produced by the same tap trajectory.
#[derive(Debug, Clone)]
pub struct LockstepRun {
    pub real: EchoCancellationRun,
    /// One residual per component, same order as the inputs.
    pub component_errors: Vec<Vec<f64>>,
}

/// Run the canceller on the real signals while shadowing each component
/// decomposition through the identical (shared) tap trajectory.
///
/// At every sample the current taps filter both the real regressor and each
/// component regressor before the gated update, so
/// `Σ_c component_error_c(t) = error(t)` whenever the component references
/// and desired signals sum to the real ones.
pub fn cancel_with_components(
    cfg: &NlmsConfig,
    refs: ArrayView2<f64>,
    desired: &[f64],
    adapt_gate: &[bool],
    component_refs: &[ArrayView2<f64>],
    component_desired: &[&[f64]],
) -> Result<LockstepRun> {
    let (n_refs, t) = refs.dim();
    if desired.len() != t || adapt_gate.len() != t {
        return Err(CoreError::Shape(format!(
            "references, desired and gate must share a length: {t}, {}, {}",
            desired.len(),
            adapt_gate.len()
        )));
    }
    if component_refs.len() != component_desired.len() {
        return Err(CoreError::Shape(format!(
            "{} component references but {} component desired signals",
            component_refs.len(),
            component_desired.len()
        )));
    }
    for (c, (r, d)) in component_refs.iter().zip(component_desired).enumerate() {
        if r.dim() != (n_refs, t) || d.len() != t {
            return Err(CoreError::Shape(format!(
                "component {c} shapes do not match the real signals"
            )));
        }
    }
    let k = component_refs.len();
    let mut state = NlmsState::new(cfg.clone(), n_refs)?;
    let active = cfg.active_taps;
    let mut lines: Vec<DelayLine> = (0..k).map(|_| DelayLine::new(n_refs, cfg.taps)).collect();
    let mut estimate = Vec::with_capacity(t);
    let mut error = Vec::with_capacity(t);
    let mut component_errors = vec![Vec::with_capacity(t); k];
    let mut sample = vec![0.0; n_refs];
    for i in 0..t {
        // Shadow components first: they must see the pre-update taps, the
        // same ones the real regressor is filtered with inside `process`.
        for (c, line) in lines.iter_mut().enumerate() {
            for (r, s) in sample.iter_mut().enumerate() {
                *s = component_refs[c][(r, i)];
            }
            line.push(&sample, active);
            let y_c = line.dot(&state.w, active);
            component_errors[c].push(component_desired[c][i] - y_c);
        }
        for (r, s) in sample.iter_mut().enumerate() {
            *s = refs[(r, i)];
        }
        let (y, e) = state.process(&sample, desired[i], adapt_gate[i])?;
        estimate.push(y);
        error.push(e);
    }
    Ok(LockstepRun {
        real: EchoCancellationRun {
            estimate,
            error,
            final_taps: state.w,
        },
        component_errors,
    })
}

/// Filter reference channels through fixed taps (`[n_refs × taps]`) and sum:
/// the non-adaptive application of a converged canceller.
pub fn apply_fir(taps: ArrayView2<f64>, refs: ArrayView2<f64>, out_len: usize) -> Vec<f64> {
    let (n_refs, n_taps) = taps.dim();
    debug_assert_eq!(n_refs, refs.dim().0);
    let mut mimo = ndarray::Array3::zeros((1, n_refs, n_taps));
    for r in 0..n_refs {
        for k in 0..n_taps {
            mimo[(0, r, k)] = taps[(r, k)];
        }
    }
    let out = conv::apply_mimo_fir(mimo.view(), refs, out_len);
    out.row(0).to_vec()
}

/// Normalized misalignment `10 log₁₀(‖ŵ − w‖² / ‖w‖²)` in dB, with the
/// shorter filter zero-padded.
pub fn misalignment_db(estimated: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    let n_refs = estimated.dim().0.max(truth.dim().0);
    let n_taps = estimated.dim().1.max(truth.dim().1);
    let get = |a: &ArrayView2<f64>, r: usize, k: usize| -> f64 {
        if r < a.dim().0 && k < a.dim().1 {
            a[(r, k)]
        } else {
            0.0
        }
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..n_refs {
        for k in 0..n_taps {
            let w = get(&truth, r, k);
            let d = get(&estimated, r, k) - w;
            num += d * d;
            den += w * w;
        }
    }
    10.0 * (num / den.max(f64::MIN_POSITIVE)).log10()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn white(seed: u64, t: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn identification_setup(
        seed: u64,
        t: usize,
        true_taps: usize,
    ) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_refs = 2;
        let mut refs = Array2::zeros((n_refs, t));
        for r in 0..n_refs {
            let x = white(seed + 100 + r as u64, t);
            refs.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&x);
        }
        let mut truth = Array2::zeros((n_refs, true_taps));
        for v in truth.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let desired = apply_fir(truth.view(), refs.view(), t);
        (refs, desired, truth)
    }

    #[test]
    fn identifies_unknown_fir_system_below_minus_thirty_db() {
        let (refs, desired, truth) = identification_setup(1, 40_000, 32);
        let cfg = NlmsConfig::new(40, 0.5, 1e-6);
        let gate = vec![true; desired.len()];
        let run = cancel(&cfg, refs.view(), &desired, &gate).unwrap();
        let mis = misalignment_db(run.final_taps.view(), truth.view());
        assert!(mis < -30.0, "misalignment {mis:.1} dB");
        // Residual echo far below the desired signal power.
        let tail = &run.error[desired.len() - 4000..];
        let p_err: f64 = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
        let p_des: f64 = desired.iter().map(|v| v * v).sum::<f64>() / desired.len() as f64;
        assert!(10.0 * (p_err / p_des).log10() < -30.0);
    }

    #[test]
    fn oversized_filter_with_active_mask_matches_exact_length_filter() {
        let (refs, desired, _) = identification_setup(2, 5000, 16);
        let gate = vec![true; desired.len()];
        let exact = cancel(
            &NlmsConfig::new(16, 0.4, 1e-6),
            refs.view(),
            &desired,
            &gate,
        )
        .unwrap();
        let mut masked_cfg = NlmsConfig::new(64, 0.4, 1e-6);
        masked_cfg.active_taps = 16;
        let masked = cancel(&masked_cfg, refs.view(), &desired, &gate).unwrap();
        assert_eq!(exact.error, masked.error, "gated runs must agree exactly");
        for r in 0..2 {
            for k in 0..16 {
                assert_eq!(exact.final_taps[(r, k)], masked.final_taps[(r, k)]);
            }
            for k in 16..64 {
                assert_eq!(masked.final_taps[(r, k)], 0.0, "masked tap moved");
            }
        }
    }

    #[test]
    fn fully_closed_gate_keeps_taps_frozen_and_passes_signal() {
        let (refs, desired, _) = identification_setup(3, 2000, 8);
        let cfg = NlmsConfig::new(8, 0.5, 1e-6);
        let gate = vec![false; desired.len()];
        let run = cancel(&cfg, refs.view(), &desired, &gate).unwrap();
        assert!(run.final_taps.iter().all(|&w| w == 0.0));
        assert_eq!(run.error, desired);
        assert!(run.estimate.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn taps_do_not_move_while_the_gate_is_closed() {
        let (refs, desired, _) = identification_setup(4, 6000, 8);
        let cfg = NlmsConfig::new(8, 0.5, 1e-6);
        // Adapt for 3000 samples, then freeze.
        let gate: Vec<bool> = (0..6000).map(|i| i < 3000).collect();
        let mut state = NlmsState::new(cfg, 2).unwrap();
        let mut snapshot = None;
        for i in 0..6000 {
            let s = [refs[(0, i)], refs[(1, i)]];
            state.process(&s, desired[i], gate[i]).unwrap();
            if i == 2999 {
                snapshot = Some(state.taps().to_owned());
            }
        }
        let snap = snapshot.unwrap();
        assert_eq!(state.taps(), snap.view());
    }

    #[test]
    fn residual_power_decreases_during_adaptation() {
        let (refs, desired, _) = identification_setup(5, 20_000, 24);
        let cfg = NlmsConfig::new(24, 0.5, 1e-6);
        let gate = vec![true; desired.len()];
        let run = cancel(&cfg, refs.view(), &desired, &gate).unwrap();
        let quarter = desired.len() / 4;
        let p = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let first = p(&run.error[..quarter]);
        let last = p(&run.error[3 * quarter..]);
        assert!(
            last < first * 1e-2,
            "residual power must drop: {first:.3e} -> {last:.3e}"
        );
    }

    #[test]
    fn non_finite_input_is_a_hard_error() {
        let cfg = NlmsConfig::new(4, 0.5, 1e-6);
        let mut state = NlmsState::new(cfg, 1).unwrap();
        state.process(&[1.0], 0.5, true).unwrap();
        let err = state.process(&[f64::NAN], 0.5, true).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite(_)), "{err}");
    }

    #[test]
    fn incremental_energy_stays_consistent_over_long_runs() {
        // Much longer than the refresh interval; the update gain must stay
        // identical to a freshly recomputed norm.
        let (refs, desired, _) = identification_setup(6, 3 * ENERGY_REFRESH_INTERVAL, 8);
        let cfg = NlmsConfig::new(8, 0.3, 1e-6);
        let gate = vec![true; desired.len()];
        let mut state = NlmsState::new(cfg.clone(), 2).unwrap();
        for i in 0..desired.len() {
            let s = [refs[(0, i)], refs[(1, i)]];
            state.process(&s, desired[i], gate[i]).unwrap();
            let drift = (state.energy - state.line.energy(cfg.active_taps)).abs();
            assert!(drift < 1e-9, "energy drift {drift} at sample {i}");
        }
    }

    #[test]
    fn lockstep_component_errors_sum_to_the_real_error() {
        let t = 8000;
        let mut refs = Array2::zeros((2, t));
        let mut comp_a = Array2::zeros((2, t));
        let mut comp_b = Array2::zeros((2, t));
        for r in 0..2 {
            let a = white(20 + r as u64, t);
            let b = white(30 + r as u64, t);
            for i in 0..t {
                comp_a[(r, i)] = a[i];
                comp_b[(r, i)] = b[i];
                refs[(r, i)] = a[i] + b[i];
            }
        }
        let d_a = white(40, t);
        let d_b = white(41, t);
        let desired: Vec<f64> = d_a.iter().zip(&d_b).map(|(x, y)| x + y).collect();
        let gate: Vec<bool> = (0..t).map(|i| i % 7 != 0).collect();
        let cfg = NlmsConfig::new(12, 0.3, 1e-6);
        let run = cancel_with_components(
            &cfg,
            refs.view(),
            &desired,
            &gate,
            &[comp_a.view(), comp_b.view()],
            &[&d_a, &d_b],
        )
        .unwrap();
        // The same trajectory as a plain run...
        let plain = cancel(&cfg, refs.view(), &desired, &gate).unwrap();
        assert_eq!(run.real.final_taps, plain.final_taps);
        // ...and exact per-sample closure of the components.
        for i in 0..t {
            let sum = run.component_errors[0][i] + run.component_errors[1][i];
            assert!(
                (sum - run.real.error[i]).abs() < 1e-10,
                "closure broke at sample {i}"
            );
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(NlmsConfig::new(0, 0.5, 1e-6).validate().is_err());
        assert!(NlmsConfig::new(8, 0.0, 1e-6).validate().is_err());
        assert!(NlmsConfig::new(8, 2.5, 1e-6).validate().is_err());
        assert!(NlmsConfig::new(8, 0.5, 0.0).validate().is_err());
        let mut bad_mask = NlmsConfig::new(8, 0.5, 1e-6);
        bad_mask.active_taps = 9;
        assert!(bad_mask.validate().is_err());
    }

    #[test]
    fn misalignment_handles_length_mismatch_by_zero_padding() {
        let a = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
        let b = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(misalignment_db(a.view(), b.view()) < -300.0);
        let c = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mis = misalignment_db(a.view(), c.view());
        // ‖ŵ−w‖² = 1, ‖w‖² = 2 → −3.01 dB.
        assert!((mis - 10.0 * (0.5f64).log10()).abs() < 1e-9);
    }

    #[test]
    fn fixed_fir_application_matches_direct_convolution() {
        let (refs, _, truth) = identification_setup(7, 400, 12);
        let out = apply_fir(truth.view(), refs.view(), 400);
        let mut expected = vec![0.0; 400];
        for r in 0..2 {
            let x: Vec<f64> = refs.row(r).to_vec();
            let h: Vec<f64> = truth.row(r).to_vec();
            let c = crate::conv::direct_convolve(&x, &h);
            for i in 0..400 {
                expected[i] += c[i];
            }
        }
        for i in 0..400 {
            assert!((out[i] - expected[i]).abs() < 1e-10);
        }
    }
}
