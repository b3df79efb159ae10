//! Scenario synthesis: the full near-end/far-end signal model with separated
//! component tracks, ideal voice-activity tracks and input power calibration.
//!
//! A scenario consists of
//!
//! - desired speech `s` and near-end noise `n` at the microphones,
//! - far-end speech/noise loudspeaker signals `l = l_s + l_n`,
//! - their echoes `e_s`, `e_n` at the microphones (through the IR bank),
//!
//! with the microphone mixture `m = s + n + e_s + e_n` held as separate
//! tracks so that every processing stage can be evaluated per component.
//! Input SNR and SER at a reference microphone are calibrated exactly;
//! speech powers are measured over speech-active samples, stationary
//! components over all samples.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::conv;
use crate::error::{CoreError, Result};
use crate::io;
use crate::room::{ImpulseResponseBank, ScenarioGeometry, SourceRole};
use crate::stft::StftConfig;

/// Speech on/off schedule (seconds) for the synthetic near-end talker:
/// sentence-like bursts in the first half, silence in the second half.
pub const NEAR_BURSTS_S: &[(f64, f64)] = &[(0.0, 1.2), (1.5, 2.7), (3.0, 4.2), (4.5, 5.0)];

/// Far-end speech activity is the near-end pattern shifted circularly by
/// this many seconds, so that all four (VAD_s, VAD_es) regimes occur early
/// and often.
pub const FAR_OFFSET_S: f64 = 2.5;

/// Level of the independent per-microphone noise floor, relative to the
/// point-source noise at that microphone (dB). Keeps estimated covariance
/// matrices full rank without materially changing the scenario.
pub const MIC_FLOOR_DB: f64 = -30.0;

/// Per-component signals of one scenario.
#[derive(Debug, Clone)]
pub struct ComponentTracks {
    /// Desired speech at the microphones, `[M × T]`.
    pub s: Array2<f64>,
    /// Near-end noise at the microphones, `[M × T]`.
    pub n: Array2<f64>,
    /// Far-end-speech echo component at the microphones, `[M × T]`.
    pub e_s: Array2<f64>,
    /// Far-end-noise echo component at the microphones, `[M × T]`.
    pub e_n: Array2<f64>,
    /// Loudspeaker speech components, `[L × T]`.
    pub l_s: Array2<f64>,
    /// Loudspeaker noise components, `[L × T]`.
    pub l_n: Array2<f64>,
    pub sample_rate: f64,
}

impl ComponentTracks {
    pub fn mics(&self) -> usize {
        self.s.dim().0
    }
    pub fn loudspeakers(&self) -> usize {
        self.l_s.dim().0
    }
    pub fn len(&self) -> usize {
        self.s.dim().1
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Microphone mixture `m = s + n + e_s + e_n`.
    pub fn mic_mixture(&self) -> Array2<f64> {
        &self.s + &self.n + &self.e_s + &self.e_n
    }

    /// Echo `e = e_s + e_n` at the microphones.
    pub fn echo(&self) -> Array2<f64> {
        &self.e_s + &self.e_n
    }

    /// Loudspeaker reference signals `l = l_s + l_n`.
    pub fn loudspeaker_refs(&self) -> Array2<f64> {
        &self.l_s + &self.l_n
    }

    /// Write per-component WAVs and a manifest CSV
    /// (`component, mic, rms_active_db`) for inspection.
    pub fn export(&self, dir: &Path, vad: &VadTrack) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = csv::Writer::from_path(dir.join("scenario_manifest.csv"))?;
        manifest.write_record(["component", "mic", "rms_active_db"])?;
        let fs = self.sample_rate as u32;
        let all = vec![true; self.len()];
        let comps: [(&str, &Array2<f64>, &[bool]); 4] = [
            ("s", &self.s, &vad.vad_s),
            ("n", &self.n, &all),
            ("e_s", &self.e_s, &vad.vad_es),
            ("e_n", &self.e_n, &all),
        ];
        for (name, track, mask) in comps {
            for m in 0..self.mics() {
                let row = track.row(m).to_vec();
                io::write_wav_mono(&dir.join(format!("{name}_mic{m}.wav")), &row, fs)?;
                let p = power_over(&row, Some(mask));
                manifest.write_record([
                    name.to_string(),
                    m.to_string(),
                    format!("{:.3}", 10.0 * p.max(1e-300).log10()),
                ])?;
            }
        }
        for j in 0..self.loudspeakers() {
            let l: Vec<f64> = self
                .l_s
                .row(j)
                .iter()
                .zip(self.l_n.row(j))
                .map(|(a, b)| a + b)
                .collect();
            io::write_wav_mono(&dir.join(format!("l_ls{j}.wav")), &l, fs)?;
            let p = power_over(&l, None);
            manifest.write_record([
                format!("l{j}"),
                "-".to_string(),
                format!("{:.3}", 10.0 * p.max(1e-300).log10()),
            ])?;
        }
        manifest.flush()?;
        Ok(())
    }
}

/// Stacked microphone + loudspeaker view of the component tracks.
#[derive(Debug, Clone)]
pub struct ExtendedTracks {
    /// `[(M+L) × T]` stacked mixture: microphones, then loudspeaker refs.
    pub m_tilde: Array2<f64>,
    /// `[s; 0]` stacking (loudspeaker rows zero).
    pub s_tilde: Array2<f64>,
    /// `[n; 0]` stacking (loudspeaker rows zero).
    pub n_tilde: Array2<f64>,
    /// `[e_s; l_s]` stacking.
    pub e_s_tilde: Array2<f64>,
    /// `[e_n; l_n]` stacking.
    pub e_n_tilde: Array2<f64>,
}

/// Stack the components into the extended `(M+L)`-channel layout.
pub fn stack_extended(tracks: &ComponentTracks) -> ExtendedTracks {
    let m = tracks.mics();
    let l = tracks.loudspeakers();
    let t = tracks.len();
    let stack = |top: &Array2<f64>, bottom: Option<&Array2<f64>>| -> Array2<f64> {
        let mut out = Array2::zeros((m + l, t));
        for i in 0..m {
            out.row_mut(i).assign(&top.row(i));
        }
        if let Some(b) = bottom {
            for j in 0..l {
                out.row_mut(m + j).assign(&b.row(j));
            }
        }
        out
    };
    let mixture = tracks.mic_mixture();
    let refs = tracks.loudspeaker_refs();
    ExtendedTracks {
        m_tilde: stack(&mixture, Some(&refs)),
        s_tilde: stack(&tracks.s, None),
        n_tilde: stack(&tracks.n, None),
        e_s_tilde: stack(&tracks.e_s, Some(&tracks.l_s)),
        e_n_tilde: stack(&tracks.e_n, Some(&tracks.l_n)),
    }
}

/// Sample- and frame-level ideal voice activity for the two speech sources.
#[derive(Debug, Clone)]
pub struct VadTrack {
    pub vad_s: Vec<bool>,
    pub vad_es: Vec<bool>,
    pub frame_vad_s: Vec<bool>,
    pub frame_vad_es: Vec<bool>,
}

impl VadTrack {
    /// Fraction of frames in each (VAD_s, VAD_es) regime:
    /// `[both off, es only, s only, both on]`.
    pub fn regime_fractions(&self) -> [f64; 4] {
        let mut counts = [0usize; 4];
        for (&a, &b) in self.frame_vad_s.iter().zip(&self.frame_vad_es) {
            counts[(a as usize) * 2 + (b as usize)] += 1;
        }
        let total = self.frame_vad_s.len().max(1) as f64;
        [
            counts[0] as f64 / total,
            counts[1] as f64 / total,
            counts[2] as f64 / total,
            counts[3] as f64 / total,
        ]
    }
}

/// Sample-level ideal VAD: a sample is active when the short-term energy in
/// a 10 ms window around it exceeds `1e-4` of the wave's peak short-term
/// energy. An all-zero wave yields an all-inactive track.
pub fn ideal_vad_samples(clean: &[f64], sample_rate: f64) -> Vec<bool> {
    let t = clean.len();
    if t == 0 {
        return Vec::new();
    }
    let win = ((0.01 * sample_rate).round() as usize).max(1);
    // Centered moving sum of squares via prefix sums.
    let mut prefix = vec![0.0f64; t + 1];
    for (i, &v) in clean.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * v;
    }
    let half = win / 2;
    let mut ste = vec![0.0f64; t];
    let mut peak = 0.0f64;
    for i in 0..t {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(t);
        ste[i] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        peak = peak.max(ste[i]);
    }
    if peak <= 0.0 {
        return vec![false; t];
    }
    let thresh = 1e-4 * peak;
    ste.into_iter().map(|e| e > thresh).collect()
}

/// Frame-level VAD: a frame is active when at least half of its samples are.
pub fn frame_vad(sample_vad: &[bool], cfg: &StftConfig) -> Result<Vec<bool>> {
    let k_frames = cfg.frame_count(sample_vad.len())?;
    let mut out = Vec::with_capacity(k_frames);
    for k in 0..k_frames {
        let start = k * cfg.hop;
        let active = sample_vad[start..start + cfg.window_size]
            .iter()
            .filter(|&&a| a)
            .count();
        out.push(2 * active >= cfg.window_size);
    }
    Ok(out)
}

/// Build the full [`VadTrack`] from the two clean speech waves.
pub fn ideal_vad(
    near_speech: &[f64],
    far_speech_sum: &[f64],
    sample_rate: f64,
    cfg: &StftConfig,
) -> Result<VadTrack> {
    let vad_s = ideal_vad_samples(near_speech, sample_rate);
    let vad_es = ideal_vad_samples(far_speech_sum, sample_rate);
    let frame_vad_s = frame_vad(&vad_s, cfg)?;
    let frame_vad_es = frame_vad(&vad_es, cfg)?;
    Ok(VadTrack {
        vad_s,
        vad_es,
        frame_vad_s,
        frame_vad_es,
    })
}

/// Source material driving a scenario: one near-end talker, one near-end
/// noise wave and one independent far-end talker per loudspeaker.
#[derive(Debug, Clone)]
pub struct SourceWaves {
    pub near_speech: Vec<f64>,
    pub babble: Vec<f64>,
    pub far_speech: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl SourceWaves {
    /// Bundled fallback material: speech-shaped modulated noise for the
    /// talkers (burst schedule above) and stationary speech-shaped noise for
    /// the near-end noise. Far-end talkers are mutually independent, sharing
    /// the shifted on/off schedule.
    pub fn synthetic(seed: u64, duration_s: f64, sample_rate: f64, loudspeakers: usize) -> Self {
        let t = (duration_s * sample_rate).round() as usize;
        let near_env = burst_envelope(t, sample_rate, NEAR_BURSTS_S, 0.0, duration_s);
        let far_env = burst_envelope(t, sample_rate, NEAR_BURSTS_S, FAR_OFFSET_S, duration_s);

        let mut near_speech = speech_shaped_noise(seed.wrapping_add(1), t, sample_rate);
        apply_envelope(&mut near_speech, &near_env);
        normalize_active_rms(&mut near_speech, &near_env);

        let mut babble = speech_shaped_noise(seed.wrapping_add(2), t, sample_rate);
        let ones = vec![1.0; t];
        normalize_active_rms(&mut babble, &ones);

        let far_speech = (0..loudspeakers)
            .map(|j| {
                let mut w = speech_shaped_noise(seed.wrapping_add(10 + j as u64), t, sample_rate);
                apply_envelope(&mut w, &far_env);
                normalize_active_rms(&mut w, &far_env);
                w
            })
            .collect();
        Self {
            near_speech,
            babble,
            far_speech,
            sample_rate,
        }
    }

    /// Use external mono waves for the talker and noise material. The
    /// far-end talkers are circularly shifted copies of the speech wave
    /// (offset by 2.5 s plus a per-loudspeaker stagger).
    pub fn from_waves(
        speech: Vec<f64>,
        babble: Vec<f64>,
        duration_s: f64,
        sample_rate: f64,
        loudspeakers: usize,
    ) -> Result<Self> {
        let t = (duration_s * sample_rate).round() as usize;
        if speech.len() < t || babble.len() < t {
            return Err(CoreError::InsufficientData(format!(
                "input waves must be at least {duration_s} s at {sample_rate} Hz"
            )));
        }
        let offset = (FAR_OFFSET_S * sample_rate).round() as usize;
        let far_speech = (0..loudspeakers)
            .map(|j| {
                let shift = offset + j * t / (2 * loudspeakers.max(1));
                (0..t).map(|i| speech[(i + t - shift % t) % t]).collect()
            })
            .collect();
        Ok(Self {
            near_speech: speech[..t].to_vec(),
            babble: babble[..t].to_vec(),
            far_speech,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.near_speech.len()
    }
    pub fn is_empty(&self) -> bool {
        self.near_speech.is_empty()
    }
}

/// 0/1 envelope with 10 ms raised-cosine ramps, from on-intervals shifted
/// circularly by `offset_s` within a `period_s` cycle.
fn burst_envelope(
    t: usize,
    sample_rate: f64,
    bursts: &[(f64, f64)],
    offset_s: f64,
    period_s: f64,
) -> Vec<f64> {
    let mut env = vec![0.0; t];
    let period = (period_s * sample_rate).round() as usize;
    let offset = (offset_s * sample_rate).round() as usize;
    for &(a, b) in bursts {
        let ia = (a * sample_rate).round() as usize;
        let ib = (b * sample_rate).round() as usize;
        for i in ia..ib.min(period) {
            let idx = (i + offset) % period;
            if idx < t {
                env[idx] = 1.0;
            }
        }
    }
    // Raised-cosine ramps at every 0->1 and 1->0 edge.
    let ramp = ((0.01 * sample_rate).round() as usize).max(2);
    let hard = env.clone();
    for i in 0..t {
        if hard[i] == 0.0 {
            continue;
        }
        // Distance to the nearest off sample (circularly).
        let mut dist_prev = ramp;
        for d in 1..=ramp {
            if hard[(i + t - d) % t] == 0.0 {
                dist_prev = d - 1;
                break;
            }
        }
        let mut dist_next = ramp;
        for d in 1..=ramp {
            if hard[(i + d) % t] == 0.0 {
                dist_next = d - 1;
                break;
            }
        }
        let d = dist_prev.min(dist_next);
        if d < ramp {
            let x = (d as f64 + 0.5) / ramp as f64;
            env[i] = 0.5 - 0.5 * (std::f64::consts::PI * x).cos();
        }
    }
    env
}

/// White noise colored toward a long-term speech-like spectrum: a one-pole
/// lowpass around 500 Hz and a DC-blocking highpass around 100 Hz, plus a
/// -20 dB white component so every third-octave band keeps energy.
fn speech_shaped_noise(seed: u64, t: usize, sample_rate: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = (-2.0 * std::f64::consts::PI * 500.0 / sample_rate).exp();
    let r = 1.0 - 2.0 * std::f64::consts::PI * 100.0 / sample_rate;
    let mut shaped = vec![0.0; t];
    let mut lp = 0.0;
    let mut hp = 0.0;
    let mut prev = 0.0;
    for i in 0..t {
        lp = (1.0 - a) * white[i] + a * lp;
        hp = lp - prev + r * hp;
        prev = lp;
        shaped[i] = hp;
    }
    let p_shaped = power_over(&shaped, None).max(1e-300);
    let p_white = power_over(&white, None).max(1e-300);
    let g = (p_shaped / p_white * 0.01).sqrt();
    shaped
        .iter()
        .zip(&white)
        .map(|(s, w)| s + g * w)
        .collect()
}

fn apply_envelope(x: &mut [f64], env: &[f64]) {
    for (v, &e) in x.iter_mut().zip(env) {
        *v *= e;
    }
}

fn normalize_active_rms(x: &mut [f64], env: &[f64]) {
    let mask: Vec<bool> = env.iter().map(|&e| e > 0.5).collect();
    let p = power_over(x, Some(&mask));
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        for v in x.iter_mut() {
            *v *= g;
        }
    }
}

/// Mean square of `x`, optionally restricted to masked samples.
pub fn power_over(x: &[f64], mask: Option<&[bool]>) -> f64 {
    match mask {
        None => x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64,
        Some(m) => {
            let mut acc = 0.0;
            let mut count = 0usize;
            for (&v, &keep) in x.iter().zip(m) {
                if keep {
                    acc += v * v;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                acc / count as f64
            }
        }
    }
}

fn db(p_num: f64, p_den: f64) -> f64 {
    10.0 * (p_num / p_den).log10()
}

/// Synthesize one scenario: convolve sources through the IR bank, add a
/// small per-microphone noise floor, equalize the two loudspeakers' echo
/// contributions at the reference microphone, and calibrate SNRin/SERin.
///
/// `snr_in_db`/`ser_in_db` accept `f64::INFINITY` to mute the noise or the
/// echo path entirely.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_scenario(
    geometry: &ScenarioGeometry,
    bank: &ImpulseResponseBank,
    sources: &SourceWaves,
    white_seed: u64,
    snr_in_db: f64,
    ser_in_db: f64,
    ref_mic: usize,
    stft_cfg: &StftConfig,
) -> Result<(ComponentTracks, VadTrack)> {
    let m_count = geometry.mics();
    if ref_mic >= m_count {
        return Err(CoreError::Config(format!(
            "reference mic {ref_mic} out of range (M={m_count})"
        )));
    }
    let t = sources.len();
    if t < stft_cfg.window_size {
        return Err(CoreError::InsufficientData(
            "source material shorter than one STFT frame".into(),
        ));
    }
    let ls_indices = geometry.loudspeaker_indices();
    let l_count = ls_indices.len();
    if sources.far_speech.len() != l_count {
        return Err(CoreError::Shape(format!(
            "need one far-end talker per loudspeaker ({l_count}), got {}",
            sources.far_speech.len()
        )));
    }
    let speech_idx = geometry
        .source_roles
        .iter()
        .position(|r| *r == SourceRole::Speech)
        .ok_or_else(|| CoreError::Config("geometry has no speech source".into()))?;
    let noise_idx = geometry
        .source_roles
        .iter()
        .position(|r| *r == SourceRole::Noise)
        .ok_or_else(|| CoreError::Config("geometry has no noise source".into()))?;

    // Desired speech and point-source noise at the microphones.
    let conv_to_mics = |wave: &[f64], src: usize| -> Array2<f64> {
        let filters: Vec<Vec<f64>> = (0..m_count).map(|m| bank.ir(src, m)).collect();
        let refs: Vec<&[f64]> = filters.iter().map(|f| f.as_slice()).collect();
        let rows = conv::convolve_bank(wave, &refs, t);
        let mut out = Array2::zeros((m_count, t));
        for (m, row) in rows.into_iter().enumerate() {
            out.row_mut(m).as_slice_mut().unwrap().copy_from_slice(&row);
        }
        out
    };
    let s = conv_to_mics(&sources.near_speech, speech_idx);
    let mut n = conv_to_mics(&sources.babble, noise_idx);

    // Independent per-microphone floor, -30 dB below the point noise.
    let mut rng = ChaCha8Rng::seed_from_u64(white_seed.wrapping_add(0x0F10_D00D));
    for m in 0..m_count {
        let p_point = power_over(n.row(m).as_slice().unwrap(), None);
        let g = (p_point * 10f64.powf(MIC_FLOOR_DB / 10.0) * 3.0).sqrt();
        for v in n.row_mut(m).iter_mut() {
            *v += g * rng.random_range(-1.0..1.0);
        }
    }

    // Loudspeaker signals: per-loudspeaker speech-to-noise ratio of 0 dB
    // (speech power over its active samples, noise over all samples).
    let far_env_mask: Vec<bool> = {
        let sum: Vec<f64> = (0..t)
            .map(|i| sources.far_speech.iter().map(|w| w[i]).sum())
            .collect();
        ideal_vad_samples(&sum, sources.sample_rate)
    };
    let mut l_s = Array2::zeros((l_count, t));
    let mut l_n = Array2::zeros((l_count, t));
    for j in 0..l_count {
        let speech = &sources.far_speech[j];
        let p_speech = power_over(speech, Some(&far_env_mask));
        if p_speech <= 0.0 {
            return Err(CoreError::Calibration(format!(
                "far-end talker {j} is silent"
            )));
        }
        let mut rng_n = ChaCha8Rng::seed_from_u64(white_seed.wrapping_add(100 + j as u64));
        let noise: Vec<f64> = (0..t).map(|_| rng_n.random_range(-1.0..1.0)).collect();
        let g = (p_speech / power_over(&noise, None)).sqrt();
        for i in 0..t {
            l_s[(j, i)] = speech[i];
            l_n[(j, i)] = g * noise[i];
        }
    }

    // Equalize the two loudspeakers' echo contributions at the reference mic
    // (0 dB power ratio between the echo signals).
    let ir_ref: Vec<Vec<f64>> = ls_indices.iter().map(|&src| bank.ir(src, ref_mic)).collect();
    let mut p_first = None;
    for j in 0..l_count {
        let ltot: Vec<f64> = (0..t).map(|i| l_s[(j, i)] + l_n[(j, i)]).collect();
        let echo_j = conv::fft_convolve(&ltot, &ir_ref[j]);
        let p = power_over(&echo_j[..t], None);
        if p <= 0.0 {
            return Err(CoreError::Calibration(format!(
                "loudspeaker {j} produces no echo at the reference mic"
            )));
        }
        match p_first {
            None => p_first = Some(p),
            Some(p0) => {
                let c = (p0 / p).sqrt();
                for i in 0..t {
                    l_s[(j, i)] *= c;
                    l_n[(j, i)] *= c;
                }
            }
        }
    }

    // Echo components at all microphones.
    let echo_at_mics = |l: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((m_count, t));
        for (j, &src) in ls_indices.iter().enumerate() {
            let filters: Vec<Vec<f64>> = (0..m_count).map(|m| bank.ir(src, m)).collect();
            let refs: Vec<&[f64]> = filters.iter().map(|f| f.as_slice()).collect();
            let rows = conv::convolve_bank(l.row(j).as_slice().unwrap(), &refs, t);
            for (m, row) in rows.into_iter().enumerate() {
                for (o, v) in out.row_mut(m).iter_mut().zip(&row) {
                    *o += v;
                }
            }
        }
        out
    };
    let mut e_s = echo_at_mics(&l_s);
    let mut e_n = echo_at_mics(&l_n);

    // Ideal VADs from the clean source material.
    let far_sum: Vec<f64> = (0..t)
        .map(|i| sources.far_speech.iter().map(|w| w[i]).sum())
        .collect();
    let vad = ideal_vad(&sources.near_speech, &far_sum, sources.sample_rate, stft_cfg)?;

    // SNR calibration at the reference mic.
    let p_s = power_over(s.row(ref_mic).as_slice().unwrap(), Some(&vad.vad_s));
    if p_s <= 0.0 {
        return Err(CoreError::Calibration("desired speech is silent".into()));
    }
    if snr_in_db.is_infinite() && snr_in_db > 0.0 {
        n.fill(0.0);
    } else {
        let p_n = power_over(n.row(ref_mic).as_slice().unwrap(), None);
        if p_n <= 0.0 {
            return Err(CoreError::Calibration("near-end noise is silent".into()));
        }
        let alpha = (p_s / p_n / 10f64.powf(snr_in_db / 10.0)).sqrt();
        if !alpha.is_finite() {
            return Err(CoreError::Calibration(format!(
                "SNR target {snr_in_db} dB is outside the numeric range"
            )));
        }
        n.mapv_inplace(|v| v * alpha);
    }

    // SER calibration at the reference mic (echo measured over all samples:
    // the far-end noise keeps it always-on).
    if ser_in_db.is_infinite() && ser_in_db > 0.0 {
        e_s.fill(0.0);
        e_n.fill(0.0);
        l_s.fill(0.0);
        l_n.fill(0.0);
    } else {
        let e_ref: Vec<f64> = (0..t)
            .map(|i| e_s[(ref_mic, i)] + e_n[(ref_mic, i)])
            .collect();
        let p_e = power_over(&e_ref, None);
        if p_e <= 0.0 {
            return Err(CoreError::Calibration("echo path is silent".into()));
        }
        let beta = (p_s / p_e / 10f64.powf(ser_in_db / 10.0)).sqrt();
        if !beta.is_finite() {
            return Err(CoreError::Calibration(format!(
                "SER target {ser_in_db} dB is outside the numeric range"
            )));
        }
        for track in [&mut e_s, &mut e_n, &mut l_s, &mut l_n] {
            track.mapv_inplace(|v| v * beta);
        }
    }

    // Common gain for WAV-friendly levels; ratios are unaffected.
    let gamma = 0.05 / p_s.sqrt();
    let mut tracks = ComponentTracks {
        s,
        n,
        e_s,
        e_n,
        l_s,
        l_n,
        sample_rate: sources.sample_rate,
    };
    for track in [
        &mut tracks.s,
        &mut tracks.n,
        &mut tracks.e_s,
        &mut tracks.e_n,
        &mut tracks.l_s,
        &mut tracks.l_n,
    ] {
        track.mapv_inplace(|v| v * gamma);
    }

    Ok((tracks, vad))
}

/// Re-measure SNRin and SERin on synthesized tracks (for calibration
/// checks). Returns `(snr_db, ser_db)`; muted components give infinities.
pub fn measure_input_ratios(tracks: &ComponentTracks, vad: &VadTrack, ref_mic: usize) -> (f64, f64) {
    let p_s = power_over(tracks.s.row(ref_mic).as_slice().unwrap(), Some(&vad.vad_s));
    let p_n = power_over(tracks.n.row(ref_mic).as_slice().unwrap(), None);
    let e: Vec<f64> = tracks
        .e_s
        .row(ref_mic)
        .iter()
        .zip(tracks.e_n.row(ref_mic))
        .map(|(a, b)| a + b)
        .collect();
    let p_e = power_over(&e, None);
    (db(p_s, p_n), db(p_s, p_e))
}

// ---------------------------------------------------------------------------
