//! The two cascade designs for combined noise reduction and echo
//! cancellation, in batch (converged) and per-frame (adaptive) modes.
//!
//! - Conventional cascade: a microphone-space noise-reduction filter feeds a
//!   canceller that uses the raw loudspeaker signals as references. The
//!   noise reduction prefilters the echo paths, so the canceller must model
//!   the room responses convolved with the reduction filter.
//! - Extended cascade: the noise reduction runs on the stacked
//!   microphone-plus-loudspeaker vector and outputs filtered references
//!   alongside the filtered microphones; the canceller then identifies the
//!   untouched room responses regardless of the reduction filter.
//!
//! Every stage is linear given the realized filter trajectory, so all four
//! signal components (near speech, near noise, far-speech echo, far-noise
//! echo) are propagated through the identical filters and their outputs sum
//! to the processed mixture sample by sample.

use ndarray::{Array2, ArrayView2, s};

use crate::error::{CoreError, Result};
use crate::nlms::{self, NlmsConfig};
use crate::spectral::{
    self, accumulate_covariances, RecursiveCovariance, SpectralFilter,
};
use crate::stft::{self, FrameSynthesizer, StftConfig, TimeEquivalentFilter};
use crate::synth::{stack_extended, ComponentTracks, VadTrack};

/// Which cascade to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Microphone-space noise reduction, canceller on raw references.
    NrAec,
    /// Extended-vector noise reduction, canceller on filtered references.
    NrExtAec,
}

impl Design {
    pub fn as_str(&self) -> &'static str {
        match self {
            Design::NrAec => "nr_aec",
            Design::NrExtAec => "nrext_aec",
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Filter estimation regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch covariances over the whole signal, the per-bin filter converted
    /// to its equivalent FIR, and the canceller's final taps re-applied to
    /// all data. Deterministic steady-state behavior.
    Converged,
    /// Exponentially weighted covariance tracking with per-frame filter
    /// recomputation and sample-by-sample gated adaptation. Causal.
    Adaptive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Converged => "converged",
            Mode::Adaptive => "adaptive",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full configuration of one cascade run.
#[derive(Debug, Clone)]
pub struct CascadeConfig {
    pub design: Design,
    pub mode: Mode,
    pub stft: StftConfig,
    pub aec: NlmsConfig,
    /// Reference microphone (the evaluated output channel).
    pub ref_mic: usize,
    /// Forgetting factor of the adaptive covariance trackers.
    pub forgetting_factor: f64,
    /// Frames each regime must contribute before a filter is built; the
    /// channel count is enforced as a lower bound.
    pub min_regime_frames: usize,
    /// Estimate the speech-plus-interference covariance from speech-active
    /// frames only (otherwise from all frames).
    pub full_covariance_on_active: bool,
    /// Diagnostic: replace the noise-reduction filter with identity.
    pub force_identity_nr: bool,
}

impl CascadeConfig {
    pub fn new(design: Design, mode: Mode) -> Result<Self> {
        Ok(Self {
            design,
            mode,
            stft: StftConfig::sqrt_hann(512)?,
            aec: NlmsConfig::new(128, 0.1, 1e-6),
            ref_mic: 0,
            forgetting_factor: 0.995,
            min_regime_frames: 0,
            full_covariance_on_active: true,
            force_identity_nr: false,
        })
    }
}

/// One signal, split by source component, at the reference output channel.
#[derive(Debug, Clone)]
pub struct ComponentsAtRef {
    pub speech: Vec<f64>,
    pub noise: Vec<f64>,
    pub echo_speech: Vec<f64>,
    pub echo_noise: Vec<f64>,
}

impl ComponentsAtRef {
    pub fn len(&self) -> usize {
        self.speech.len()
    }
    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    /// Combined echo component.
    pub fn echo(&self) -> Vec<f64> {
        self.echo_speech
            .iter()
            .zip(&self.echo_noise)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Sum of all four components (must reproduce the processed mixture).
    pub fn sum(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.speech[i] + self.noise[i] + self.echo_speech[i] + self.echo_noise[i]
            })
            .collect()
    }
}

/// Result of one cascade run.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// Final enhanced signal at the reference channel.
    pub s_hat: Vec<f64>,
    /// Full-chain component breakdown of `s_hat`.
    pub components: ComponentsAtRef,
    /// Component breakdown after the noise-reduction stage only.
    pub nr_components: ComponentsAtRef,
    /// Canceller taps after the run, `[references × taps]`.
    pub aec_taps: Array2<f64>,
    /// Samples by which outputs lag the inputs (0 in adaptive mode).
    pub chain_delay: usize,
    /// The per-bin noise-reduction filter (converged: the batch filter;
    /// adaptive: the last one built).
    pub nr_filter: SpectralFilter,
    /// Equivalent FIR of the noise-reduction filter (converged mode only).
    pub equivalent_fir: Option<TimeEquivalentFilter>,
    /// First frame index processed with a data-driven filter (adaptive mode
    /// only; earlier frames passed through unfiltered).
    pub nr_warmup_frames: Option<usize>,
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// The four component tracks in the channel layout a design filters:
/// microphones only, or microphones stacked with loudspeaker references.
struct StackedSignals {
    mixture: Array2<f64>,
    components: [Array2<f64>; 4],
    channels: usize,
    mics: usize,
}

fn stack_for_design(design: Design, tracks: &ComponentTracks) -> StackedSignals {
    let mics = tracks.mics();
    match design {
        Design::NrAec => StackedSignals {
            mixture: tracks.mic_mixture(),
            components: [
                tracks.s.clone(),
                tracks.n.clone(),
                tracks.e_s.clone(),
                tracks.e_n.clone(),
            ],
            channels: mics,
            mics,
        },
        Design::NrExtAec => {
            let ext = stack_extended(tracks);
            StackedSignals {
                mixture: ext.m_tilde,
                components: [ext.s_tilde, ext.n_tilde, ext.e_s_tilde, ext.e_n_tilde],
                channels: mics + tracks.loudspeakers(),
                mics,
            }
        }
    }
}

/// Frame regime masks for covariance estimation.
///
/// The speech-plus-interference regime covers frames where any desired
/// source is active (near speech for the microphone-space design, near or
/// far speech for the extended design); the interference-only regime covers
/// frames with all desired sources silent.
fn regime_masks(
    design: Design,
    vad: &VadTrack,
    full_on_active: bool,
) -> (Vec<bool>, Vec<bool>) {
    let k = vad.frame_vad_s.len();
    let mut full = Vec::with_capacity(k);
    let mut interf = Vec::with_capacity(k);
    for i in 0..k {
        let (active, silent) = match design {
            Design::NrAec => (vad.frame_vad_s[i], !vad.frame_vad_s[i]),
            Design::NrExtAec => (
                vad.frame_vad_s[i] || vad.frame_vad_es[i],
                !vad.frame_vad_s[i] && !vad.frame_vad_es[i],
            ),
        };
        full.push(if full_on_active { active } else { true });
        interf.push(silent);
    }
    (full, interf)
}

fn desired_rank(design: Design, tracks: &ComponentTracks) -> usize {
    match design {
        Design::NrAec => 1,
        Design::NrExtAec => 1 + tracks.loudspeakers(),
    }
}

/// Adaptation gate: adapt while near-end speech is absent. The activity
/// track is shifted by the chain delay so it refers to the content actually
/// present in the delayed signals; samples before the first full window are
/// left frozen.
fn adaptation_gate(vad_s: &[bool], delay: usize) -> Vec<bool> {
    (0..vad_s.len())
        .map(|t| if t < delay { false } else { !vad_s[t - delay] })
        .collect()
}

fn check_inputs(tracks: &ComponentTracks, vad: &VadTrack, cfg: &CascadeConfig) -> Result<()> {
    if cfg.ref_mic >= tracks.mics() {
        return Err(CoreError::Config(format!(
            "reference mic {} out of range (M={})",
            cfg.ref_mic,
            tracks.mics()
        )));
    }
    if vad.vad_s.len() != tracks.len() {
        return Err(CoreError::Shape(format!(
            "activity track covers {} samples, signals have {}",
            vad.vad_s.len(),
            tracks.len()
        )));
    }
    cfg.aec.validate()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Converged mode
// ---------------------------------------------------------------------------

/// Noise-reduction stage output in converged mode: the equivalent-FIR
/// filtered mixture and components, in the design's channel layout.
pub struct NrStage {
    pub filter: SpectralFilter,
    pub equivalent: TimeEquivalentFilter,
    /// `[channels × T]` filtered mixture.
    pub mixture: Array2<f64>,
    /// Filtered component tracks (same order as the inputs: s, n, e_s, e_n).
    pub components: [Array2<f64>; 4],
    pub mics: usize,
    pub delay: usize,
}

/// Estimate the batch noise-reduction filter and apply its equivalent FIR
/// to the mixture and all components.
pub fn run_nr_stage_converged(
    tracks: &ComponentTracks,
    vad: &VadTrack,
    cfg: &CascadeConfig,
) -> Result<NrStage> {
    check_inputs(tracks, vad, cfg)?;
    let stacked = stack_for_design(cfg.design, tracks);
    let t = tracks.len();

    let filter = if cfg.force_identity_nr {
        SpectralFilter::identity(cfg.stft.bins(), stacked.channels)
    } else {
        let frames = stft::analyze(stacked.mixture.view(), &cfg.stft)?;
        let (full_mask, interf_mask) =
            regime_masks(cfg.design, vad, cfg.full_covariance_on_active);
        let cov = accumulate_covariances(
            &frames,
            &full_mask,
            &interf_mask,
            cfg.min_regime_frames,
        )?;
        spectral::build_mwf(&cov, desired_rank(cfg.design, tracks))?
    };

    let equivalent = stft::equivalent_time_filter(&filter.estimator_matrices(), &cfg.stft)?;
    let mixture = equivalent.apply(stacked.mixture.view(), t);
    let components = [
        equivalent.apply(stacked.components[0].view(), t),
        equivalent.apply(stacked.components[1].view(), t),
        equivalent.apply(stacked.components[2].view(), t),
        equivalent.apply(stacked.components[3].view(), t),
    ];
    let delay = equivalent.delay;
    Ok(NrStage {
        filter,
        equivalent,
        mixture,
        components,
        mics: stacked.mics,
        delay,
    })
}

/// Canceller references for one signal: the raw loudspeaker channels for the
/// conventional design, the filtered reference channels for the extended
/// design. `component` selects the matching component decomposition
/// (`None` = the mixture).
fn aec_references(
    design: Design,
    nr: &NrStage,
    tracks: &ComponentTracks,
    component: Option<usize>,
) -> Array2<f64> {
    match design {
        Design::NrAec => match component {
            // Raw loudspeaker signals; near-end components carry none.
            None => tracks.loudspeaker_refs(),
            Some(0) | Some(1) => Array2::zeros((tracks.loudspeakers(), tracks.len())),
            Some(2) => tracks.l_s.clone(),
            Some(3) => tracks.l_n.clone(),
            Some(c) => unreachable!("component index {c}"),
        },
        Design::NrExtAec => {
            let src = match component {
                None => &nr.mixture,
                Some(c) => &nr.components[c],
            };
            src.slice(s![nr.mics.., ..]).to_owned()
        }
    }
}

/// Run the canceller for a converged noise-reduction stage: adapt once over
/// the gated signal, then re-apply the final taps to the mixture and every
/// component.
pub fn run_aec_stage_converged(
    nr: &NrStage,
    tracks: &ComponentTracks,
    vad: &VadTrack,
    cfg: &CascadeConfig,
) -> Result<CascadeOutput> {
    let t = tracks.len();
    let ref_mic = cfg.ref_mic;
    let desired: Vec<f64> = nr.mixture.row(ref_mic).to_vec();
    let refs = aec_references(cfg.design, nr, tracks, None);
    let gate = adaptation_gate(&vad.vad_s, nr.delay);

    let run = nlms::cancel(&cfg.aec, refs.view(), &desired, &gate)?;
    let taps = run.final_taps;

    // Re-apply the converged taps to the whole signal, per component.
    let estimate = nlms::apply_fir(taps.view(), refs.view(), t);
    let s_hat: Vec<f64> = desired
        .iter()
        .zip(&estimate)
        .map(|(d, y)| d - y)
        .collect();

    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(4);
    for c in 0..4 {
        let comp_desired: Vec<f64> = nr.components[c].row(ref_mic).to_vec();
        let comp_refs = aec_references(cfg.design, nr, tracks, Some(c));
        let comp_est = nlms::apply_fir(taps.view(), comp_refs.view(), t);
        outs.push(
            comp_desired
                .iter()
                .zip(&comp_est)
                .map(|(d, y)| d - y)
                .collect(),
        );
    }
    let en = outs.pop().unwrap();
    let es = outs.pop().unwrap();
    let n = outs.pop().unwrap();
    let s = outs.pop().unwrap();

    Ok(CascadeOutput {
        s_hat,
        components: ComponentsAtRef {
            speech: s,
            noise: n,
            echo_speech: es,
            echo_noise: en,
        },
        nr_components: ComponentsAtRef {
            speech: nr.components[0].row(ref_mic).to_vec(),
            noise: nr.components[1].row(ref_mic).to_vec(),
            echo_speech: nr.components[2].row(ref_mic).to_vec(),
            echo_noise: nr.components[3].row(ref_mic).to_vec(),
        },
        aec_taps: taps,
        chain_delay: nr.delay,
        nr_filter: nr.filter.clone(),
        equivalent_fir: Some(nr.equivalent.clone()),
        nr_warmup_frames: None,
    })
}

// ---------------------------------------------------------------------------
// Adaptive mode
// ---------------------------------------------------------------------------

/// Noise-reduction stage output in adaptive mode: per-frame-filtered
/// mixture and components (causal, zero latency beyond the overlap-add
/// structure itself).
pub struct AdaptiveNrStage {
    /// `[channels × T]` filtered mixture.
    pub mixture: Array2<f64>,
    /// Filtered component tracks (same order as the inputs: s, n, e_s, e_n).
    pub components: [Array2<f64>; 4],
    pub mics: usize,
    /// The last per-bin filter built (diagnostic).
    pub last_filter: SpectralFilter,
    /// First frame processed with a data-driven filter.
    pub warmup_frames: Option<usize>,
}

/// Track covariances frame by frame and apply the current filter to each
/// frame of the mixture and all components.
pub fn run_nr_stage_adaptive(
    tracks: &ComponentTracks,
    vad: &VadTrack,
    cfg: &CascadeConfig,
) -> Result<AdaptiveNrStage> {
    check_inputs(tracks, vad, cfg)?;
    let stacked = stack_for_design(cfg.design, tracks);
    let t = tracks.len();
    let c = stacked.channels;
    let bins = cfg.stft.bins();
    let rank = desired_rank(cfg.design, tracks);
    let warmup = cfg.min_regime_frames.max(c);

    // Analyze the mixture and every component. Frame k only covers samples
    // up to k·hop + N − 1, so the frame loop below is causal.
    let frames_mix = stft::analyze(stacked.mixture.view(), &cfg.stft)?;
    let frames_comp = [
        stft::analyze(stacked.components[0].view(), &cfg.stft)?,
        stft::analyze(stacked.components[1].view(), &cfg.stft)?,
        stft::analyze(stacked.components[2].view(), &cfg.stft)?,
        stft::analyze(stacked.components[3].view(), &cfg.stft)?,
    ];
    let k_frames = frames_mix.frames();
    let (full_mask, interf_mask) = regime_masks(cfg.design, vad, cfg.full_covariance_on_active);
    if full_mask.len() != k_frames {
        return Err(CoreError::Shape(format!(
            "frame activity covers {} frames, analysis produced {}",
            full_mask.len(),
            k_frames
        )));
    }

    let mut tracker_full = RecursiveCovariance::new(bins, c, cfg.forgetting_factor)?;
    let mut tracker_interf = RecursiveCovariance::new(bins, c, cfg.forgetting_factor)?;

    // Per-frame processing with incremental synthesis.
    let mut out_mix = Array2::<f64>::zeros((c, t));
    let mut out_comp = [
        Array2::<f64>::zeros((c, t)),
        Array2::<f64>::zeros((c, t)),
        Array2::<f64>::zeros((c, t)),
        Array2::<f64>::zeros((c, t)),
    ];
    let mut synth = FrameSynthesizer::new(&cfg.stft);
    let mut spec = vec![num_complex::Complex64::new(0.0, 0.0); bins];
    let mut last_filter: Option<SpectralFilter> = None;
    let mut warmup_done_at: Option<usize> = None;

    for k in 0..k_frames {
        if !cfg.force_identity_nr {
            if full_mask[k] {
                tracker_full.update(frames_mix.data.slice(s![k, .., ..]));
            }
            if interf_mask[k] {
                tracker_interf.update(frames_mix.data.slice(s![k, .., ..]));
            }
        }
        let warmed = !cfg.force_identity_nr
            && tracker_full.count() >= warmup
            && tracker_interf.count() >= warmup;
        let filter = if warmed {
            if warmup_done_at.is_none() {
                warmup_done_at = Some(k);
            }
            let mut w = Vec::with_capacity(bins);
            let mut eigenvalues = Vec::with_capacity(bins);
            for f in 0..bins {
                let g = spectral::gevd(&tracker_full.current(f), &tracker_interf.current(f))?;
                w.push(spectral::mwf_from_gevd(&g, rank));
                eigenvalues.push(g.eigenvalues);
            }
            SpectralFilter {
                w,
                eigenvalues,
                rank,
                channels: c,
            }
        } else {
            SpectralFilter::identity(bins, c)
        };

        // Apply the same per-bin matrices to the mixture frame and to every
        // component frame, then overlap-add.
        let wh: Vec<nalgebra::DMatrix<num_complex::Complex64>> = filter.estimator_matrices();
        let mut process_frame = |frames: &stft::SpectralFrames, out: &mut Array2<f64>| {
            for ch in 0..c {
                for (f, sv) in spec.iter_mut().enumerate() {
                    let mut acc = num_complex::Complex64::new(0.0, 0.0);
                    for i in 0..c {
                        acc += wh[f][(ch, i)] * frames.data[(k, f, i)];
                    }
                    *sv = acc;
                }
                let row = out.row_mut(ch).into_slice().unwrap();
                synth.add_frame(row, k, &spec);
            }
        };
        process_frame(&frames_mix, &mut out_mix);
        for (frames, out) in frames_comp.iter().zip(out_comp.iter_mut()) {
            process_frame(frames, out);
        }
        last_filter = Some(filter);
    }

    Ok(AdaptiveNrStage {
        mixture: out_mix,
        components: out_comp,
        mics: stacked.mics,
        last_filter: last_filter.unwrap_or_else(|| SpectralFilter::identity(bins, c)),
        warmup_frames: warmup_done_at,
    })
}

/// Echo cancellation in lockstep after the adaptive noise-reduction stage:
/// one tap trajectory, applied to the mixture and each component
/// decomposition in parallel so the outputs still sum exactly.
pub fn run_aec_stage_adaptive(
    stage: &AdaptiveNrStage,
    tracks: &ComponentTracks,
    vad: &VadTrack,
    cfg: &CascadeConfig,
) -> Result<CascadeOutput> {
    let t = tracks.len();
    let ref_mic = cfg.ref_mic;
    let desired: Vec<f64> = stage.mixture.row(ref_mic).to_vec();
    let refs: Array2<f64> = match cfg.design {
        Design::NrAec => tracks.loudspeaker_refs(),
        Design::NrExtAec => stage.mixture.slice(s![stage.mics.., ..]).to_owned(),
    };
    let comp_desired: Vec<Vec<f64>> = (0..4)
        .map(|cidx| stage.components[cidx].row(ref_mic).to_vec())
        .collect();
    let comp_refs: Vec<Array2<f64>> = (0..4)
        .map(|cidx| match cfg.design {
            Design::NrAec => match cidx {
                0 | 1 => Array2::zeros((tracks.loudspeakers(), t)),
                2 => tracks.l_s.clone(),
                _ => tracks.l_n.clone(),
            },
            Design::NrExtAec => stage.components[cidx].slice(s![stage.mics.., ..]).to_owned(),
        })
        .collect();
    let gate = adaptation_gate(&vad.vad_s, 0);
    let comp_ref_views: Vec<ArrayView2<f64>> = comp_refs.iter().map(|a| a.view()).collect();
    let comp_desired_slices: Vec<&[f64]> = comp_desired.iter().map(|v| v.as_slice()).collect();
    let run = nlms::cancel_with_components(
        &cfg.aec,
        refs.view(),
        &desired,
        &gate,
        &comp_ref_views,
        &comp_desired_slices,
    )?;
    let mut errors = run.component_errors;
    let en = errors.pop().unwrap();
    let es = errors.pop().unwrap();
    let n = errors.pop().unwrap();
    let s = errors.pop().unwrap();

    Ok(CascadeOutput {
        s_hat: run.real.error,
        components: ComponentsAtRef {
            speech: s,
            noise: n,
            echo_speech: es,
            echo_noise: en,
        },
        nr_components: ComponentsAtRef {
            speech: stage.components[0].row(ref_mic).to_vec(),
            noise: stage.components[1].row(ref_mic).to_vec(),
            echo_speech: stage.components[2].row(ref_mic).to_vec(),
            echo_noise: stage.components[3].row(ref_mic).to_vec(),
        },
        aec_taps: run.real.final_taps,
        chain_delay: 0,
        nr_filter: stage.last_filter.clone(),
        equivalent_fir: None,
        nr_warmup_frames: stage.warmup_frames,
    })
}

/// Run one full cascade (noise reduction, then echo cancellation).
pub fn run_cascade(
    tracks: &ComponentTracks,
    vad: &VadTrack,
    cfg: &CascadeConfig,
) -> Result<CascadeOutput> {
    match cfg.mode {
        Mode::Converged => {
            let nr = run_nr_stage_converged(tracks, vad, cfg)?;
            run_aec_stage_converged(&nr, tracks, vad, cfg)
        }
        Mode::Adaptive => {
            let nr = run_nr_stage_adaptive(tracks, vad, cfg)?;
            run_aec_stage_adaptive(&nr, tracks, vad, cfg)
        }
    }
}

// ---------------------------------------------------------------------------
