//! Reproducible experiment sweep over the full evaluation grid:
//! scenarios × SNRin × SERin × canceller length × design × mode.
//!
//! - Configuration is a TOML file; every field has a default matching the
//!   reference setup (5 scenarios, 2 mics, 2 loudspeakers, 10 s signals,
//!   SNR/SER grids of −15..15 dB in 7.5 dB steps, canceller lengths
//!   128..1150).
//! - Results stream into `results.csv` row by row (flushed after each row,
//!   so a failing grid point never corrupts completed rows); per-point
//!   failures land in `errors.csv` and the sweep continues.
//! - Wall-clock timings go to a separate `timings.csv` so `results.csv`
//!   stays byte-identical across reruns of the same configuration.
//! - Per-scenario artifacts (impulse responses, component WAVs, filter
//!   banks, canceller tap snapshots, processed outputs) are exported for
//!   one configurable grid cell.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    self, CascadeConfig, CascadeOutput, Design, Mode,
};
use crate::conv;
use crate::error::{CoreError, Result};
use crate::io;
use crate::metrics::{self, BandWeights, ComponentSlices};
use crate::nlms::{self, NlmsConfig};
use crate::room::{splitmix64, ImpulseResponseBank, RoomSpec, ScenarioGeometry};
use crate::stft::StftConfig;
use crate::synth::{self, ComponentTracks, SourceWaves, VadTrack};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomBlock {
    pub dimensions: [f64; 3],
    pub reflection_coefficient: f64,
    pub speed_of_sound: f64,
    pub ir_length: usize,
    pub rim_displacement: f64,
}

impl Default for RoomBlock {
    fn default() -> Self {
        Self {
            dimensions: [5.0, 5.0, 3.0],
            reflection_coefficient: 0.15,
            speed_of_sound: 343.0,
            ir_length: 128,
            rim_displacement: 0.13,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryBlock {
    pub mic_positions: Vec<[f64; 3]>,
    pub circle_radius: f64,
    pub loudspeakers: usize,
    /// Reference microphone index (output channel).
    pub ref_mic: usize,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self {
            mic_positions: vec![[2.0, 1.9, 1.0], [2.0, 1.8, 1.0]],
            circle_radius: 0.2,
            loudspeakers: 2,
            ref_mic: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsBlock {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub scenario_count: usize,
    pub master_seed: u64,
    /// Optional 16 kHz mono WAV used as near-end and far-end speech; the
    /// built-in speech-shaped burst synthesizer is used when absent.
    pub speech_wav: Option<PathBuf>,
    /// Optional 16 kHz mono WAV used as near-end babble noise.
    pub babble_wav: Option<PathBuf>,
}

impl Default for SignalsBlock {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            sample_rate_hz: 16_000.0,
            scenario_count: 5,
            master_seed: 0x5EED_2026,
            speech_wav: None,
            babble_wav: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftBlock {
    pub window_size: usize,
}

impl Default for StftBlock {
    fn default() -> Self {
        Self { window_size: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub snr_db: Vec<f64>,
    pub ser_db: Vec<f64>,
    /// Canceller taps per loudspeaker.
    pub lf: Vec<usize>,
    pub designs: Vec<Design>,
    pub modes: Vec<Mode>,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            snr_db: vec![-15.0, -7.5, 0.0, 7.5, 15.0],
            ser_db: vec![-15.0, -7.5, 0.0, 7.5, 15.0],
            lf: vec![128, 384, 640, 896, 1150],
            designs: vec![Design::NrAec, Design::NrExtAec],
            modes: vec![Mode::Converged],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AecBlock {
    pub step_size: f64,
    pub regularization: f64,
    /// Tap-mask length for the extended design: its canceller only models
    /// the room responses, so taps beyond this index are pinned to zero.
    pub extended_active_taps: usize,
}

impl Default for AecBlock {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            regularization: 1e-6,
            extended_active_taps: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingBlock {
    /// Forgetting factor of the adaptive covariance trackers.
    pub forgetting_factor: f64,
    /// Minimum frames per activity regime before filters are built.
    pub min_regime_frames: usize,
    /// Estimate the full covariance from desired-active frames only.
    pub full_covariance_on_active: bool,
}

impl Default for TrackingBlock {
    fn default() -> Self {
        Self {
            forgetting_factor: 0.995,
            min_regime_frames: 8,
            full_covariance_on_active: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub export_artifacts: bool,
    /// Grid cell whose runs get full artifact exports.
    pub artifact_snr_db: f64,
    pub artifact_ser_db: f64,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("nraec_out"),
            export_artifacts: true,
            artifact_snr_db: 0.0,
            artifact_ser_db: 0.0,
        }
    }
}

/// Everything one sweep needs, loadable from TOML with full defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room: RoomBlock,
    pub geometry: GeometryBlock,
    pub signals: SignalsBlock,
    pub stft: StftBlock,
    pub grid: GridBlock,
    pub aec: AecBlock,
    pub tracking: TrackingBlock,
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| CoreError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.snr_db.is_empty()
            || self.grid.ser_db.is_empty()
            || self.grid.lf.is_empty()
            || self.grid.designs.is_empty()
            || self.grid.modes.is_empty()
        {
            return Err(CoreError::Config("all grid axes must be non-empty".into()));
        }
        if self.signals.scenario_count == 0 {
            return Err(CoreError::Config("need at least one scenario".into()));
        }
        if self.geometry.ref_mic >= self.geometry.mic_positions.len() {
            return Err(CoreError::Config(format!(
                "reference mic {} out of range (M={})",
                self.geometry.ref_mic,
                self.geometry.mic_positions.len()
            )));
        }
        if self.geometry.loudspeakers == 0 {
            return Err(CoreError::Config("need at least one loudspeaker".into()));
        }
        if self.grid.lf.iter().any(|&l| l == 0) {
            return Err(CoreError::Config("canceller lengths must be >= 1".into()));
        }
        self.room_spec().validate()?;
        self.stft_config()?;
        NlmsConfig::new(
            self.grid.lf[0],
            self.aec.step_size,
            self.aec.regularization,
        )
        .validate()?;
        Ok(())
    }

    pub fn room_spec(&self) -> RoomSpec {
        RoomSpec {
            dimensions: self.room.dimensions,
            reflection_coefficient: self.room.reflection_coefficient,
            speed_of_sound: self.room.speed_of_sound,
            sample_rate: self.signals.sample_rate_hz,
            ir_length: self.room.ir_length,
            rim_displacement: self.room.rim_displacement,
        }
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        StftConfig::sqrt_hann(self.stft.window_size)
    }

    pub fn scenario_seed(&self, scenario: usize) -> u64 {
        splitmix64(
            self.signals
                .master_seed
                .wrapping_add((scenario as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)),
        )
    }

    fn cascade_config(&self, design: Design, mode: Mode, lf: usize) -> Result<CascadeConfig> {
        let mut aec = NlmsConfig::new(lf, self.aec.step_size, self.aec.regularization);
        if design == Design::NrExtAec {
            aec.active_taps = self.aec.extended_active_taps.min(lf);
        }
        Ok(CascadeConfig {
            design,
            mode,
            stft: self.stft_config()?,
            aec,
            ref_mic: self.geometry.ref_mic,
            forgetting_factor: self.tracking.forgetting_factor,
            min_regime_frames: self.tracking.min_regime_frames,
            full_covariance_on_active: self.tracking.full_covariance_on_active,
            force_identity_nr: false,
        })
    }
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

/// One grid point's metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario_id: usize,
    pub design: Design,
    pub mode: Mode,
    pub snr_in_db: f64,
    pub ser_in_db: f64,
    pub lf: usize,
    pub delta_snr_i: Option<f64>,
    pub delta_ser_i: Option<f64>,
    pub sd_i: Option<f64>,
    pub seed: u64,
}

/// Mean/standard deviation over scenarios for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub design: Design,
    pub mode: Mode,
    pub snr_in_db: f64,
    pub ser_in_db: f64,
    pub lf: usize,
    pub scenarios: usize,
    pub mean_delta_snr_i: Option<f64>,
    pub std_delta_snr_i: Option<f64>,
    pub mean_delta_ser_i: Option<f64>,
    pub std_delta_ser_i: Option<f64>,
    pub mean_sd_i: Option<f64>,
    pub std_sd_i: Option<f64>,
}

/// Full sweep outcome (the CSVs hold the same data on disk).
#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Grid points that failed (details in errors.csv).
    pub failures: usize,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "scenario_id",
    "design",
    "mode",
    "snr_in_db",
    "ser_in_db",
    "lf",
    "delta_snr_i",
    "delta_ser_i",
    "sd_i",
    "seed",
];

pub const AGGREGATES_HEADER: [&str; 12] = [
    "design",
    "mode",
    "snr_in_db",
    "ser_in_db",
    "lf",
    "scenarios",
    "mean_delta_snr_i",
    "std_delta_snr_i",
    "mean_delta_ser_i",
    "std_delta_ser_i",
    "mean_sd_i",
    "std_sd_i",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_db(v: f64) -> String {
    format!("{v:.2}")
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| CoreError::Config(format!("bad float {s:?} in results CSV: {e}")))
}

fn parse_design(s: &str) -> Result<Design> {
    match s {
        "nr_aec" => Ok(Design::NrAec),
        "nrext_aec" => Ok(Design::NrExtAec),
        other => Err(CoreError::Config(format!("unknown design {other:?}"))),
    }
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "converged" => Ok(Mode::Converged),
        "adaptive" => Ok(Mode::Adaptive),
        other => Err(CoreError::Config(format!("unknown mode {other:?}"))),
    }
}

impl ResultRow {
    fn record(&self) -> [String; 10] {
        [
            self.scenario_id.to_string(),
            self.design.as_str().to_string(),
            self.mode.as_str().to_string(),
            fmt_db(self.snr_in_db),
            fmt_db(self.ser_in_db),
            self.lf.to_string(),
            fmt_opt(self.delta_snr_i),
            fmt_opt(self.delta_ser_i),
            fmt_opt(self.sd_i),
            self.seed.to_string(),
        ]
    }
}

/// Read a results CSV back (used by the figure emitter CLI path).
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let got: Vec<&str> = reader.headers()?.iter().collect();
        if got != RESULTS_HEADER {
            return Err(CoreError::Config(format!(
                "unexpected results CSV header {got:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        rows.push(ResultRow {
            scenario_id: r[0]
                .parse()
                .map_err(|e| CoreError::Config(format!("bad scenario_id {:?}: {e}", &r[0])))?,
            design: parse_design(&r[1])?,
            mode: parse_mode(&r[2])?,
            snr_in_db: r[3]
                .parse()
                .map_err(|e| CoreError::Config(format!("bad snr {:?}: {e}", &r[3])))?,
            ser_in_db: r[4]
                .parse()
                .map_err(|e| CoreError::Config(format!("bad ser {:?}: {e}", &r[4])))?,
            lf: r[5]
                .parse()
                .map_err(|e| CoreError::Config(format!("bad lf {:?}: {e}", &r[5])))?,
            delta_snr_i: parse_opt(&r[6])?,
            delta_ser_i: parse_opt(&r[7])?,
            sd_i: parse_opt(&r[8])?,
            seed: r[9]
                .parse()
                .map_err(|e| CoreError::Config(format!("bad seed {:?}: {e}", &r[9])))?,
        });
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Group rows by (design, mode, snr, ser, lf) in first-appearance order and
/// aggregate each metric over the scenarios present.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Design, Mode, f64, f64, usize)> = Vec::new();
    for r in rows {
        let key = (r.design, r.mode, r.snr_in_db, r.ser_in_db, r.lf);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|&(design, mode, snr, ser, lf)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| {
                    r.design == design
                        && r.mode == mode
                        && r.snr_in_db == snr
                        && r.ser_in_db == ser
                        && r.lf == lf
                })
                .collect();
            let pick = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| f(r)).collect()
            };
            let (mean_snr, std_snr) = mean_std(&pick(|r| r.delta_snr_i));
            let (mean_ser, std_ser) = mean_std(&pick(|r| r.delta_ser_i));
            let (mean_sd, std_sd) = mean_std(&pick(|r| r.sd_i));
            AggregateRow {
                design,
                mode,
                snr_in_db: snr,
                ser_in_db: ser,
                lf,
                scenarios: group.len(),
                mean_delta_snr_i: mean_snr,
                std_delta_snr_i: std_snr,
                mean_delta_ser_i: mean_ser,
                std_delta_ser_i: std_ser,
                mean_sd_i: mean_sd,
                std_sd_i: std_sd,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Figure data
// ---------------------------------------------------------------------------

/// The three figure-data exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    /// Noise-reduction performance of the converged filters (independent of
    /// the canceller length, reported at the shortest one present).
    NrPerformance,
    /// Echo-cancellation performance vs canceller length, converged mode.
    AecConverged,
    /// Echo-cancellation performance vs canceller length, adaptive mode.
    AecAdaptive,
}

impl FigureId {
    pub const ALL: [FigureId; 3] = [
        FigureId::NrPerformance,
        FigureId::AecConverged,
        FigureId::AecAdaptive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FigureId::NrPerformance => "nr_performance",
            FigureId::AecConverged => "aec_converged",
            FigureId::AecAdaptive => "aec_adaptive",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "nr_performance" => Ok(FigureId::NrPerformance),
            "aec_converged" => Ok(FigureId::AecConverged),
            "aec_adaptive" => Ok(FigureId::AecAdaptive),
            other => Err(CoreError::Config(format!(
                "unknown figure {other:?} (expected nr_performance, aec_converged or aec_adaptive)"
            ))),
        }
    }
}

/// Write one figure's long-format CSV next to any plotting tool. Empty
/// selections produce a header-only file and a warning.
pub fn emit_figure_data(rows: &[ResultRow], figure: FigureId, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    match figure {
        FigureId::NrPerformance => {
            w.write_record([
                "design",
                "snr_in_db",
                "ser_in_db",
                "mean_delta_snr_i",
                "std_delta_snr_i",
                "mean_sd_i",
                "std_sd_i",
            ])?;
            let converged: Vec<ResultRow> = rows
                .iter()
                .filter(|r| r.mode == Mode::Converged)
                .cloned()
                .collect();
            // The noise-reduction filters do not depend on the canceller
            // length; report at the shortest length present.
            let lf0 = converged.iter().map(|r| r.lf).min();
            let selected: Vec<ResultRow> = converged
                .into_iter()
                .filter(|r| Some(r.lf) == lf0)
                .collect();
            if selected.is_empty() {
                log::warn!("no converged rows: {} is header-only", path.display());
            }
            for agg in aggregate_rows(&selected) {
                w.write_record([
                    agg.design.as_str().to_string(),
                    fmt_db(agg.snr_in_db),
                    fmt_db(agg.ser_in_db),
                    fmt_opt(agg.mean_delta_snr_i),
                    fmt_opt(agg.std_delta_snr_i),
                    fmt_opt(agg.mean_sd_i),
                    fmt_opt(agg.std_sd_i),
                ])?;
            }
        }
        FigureId::AecConverged | FigureId::AecAdaptive => {
            w.write_record([
                "design",
                "ser_in_db",
                "snr_in_db",
                "lf",
                "mean_delta_ser_i",
                "std_delta_ser_i",
            ])?;
            let mode = if figure == FigureId::AecConverged {
                Mode::Converged
            } else {
                Mode::Adaptive
            };
            let selected: Vec<ResultRow> =
                rows.iter().filter(|r| r.mode == mode).cloned().collect();
            if selected.is_empty() {
                log::warn!("no {} rows: {} is header-only", mode, path.display());
            }
            for agg in aggregate_rows(&selected) {
                w.write_record([
                    agg.design.as_str().to_string(),
                    fmt_db(agg.ser_in_db),
                    fmt_db(agg.snr_in_db),
                    agg.lf.to_string(),
                    fmt_opt(agg.mean_delta_ser_i),
                    fmt_opt(agg.std_delta_ser_i),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweep execution
// ---------------------------------------------------------------------------

struct SweepWriters {
    results: csv::Writer<std::fs::File>,
    errors: csv::Writer<std::fs::File>,
    timings: csv::Writer<std::fs::File>,
}

impl SweepWriters {
    fn create(dir: &Path) -> Result<Self> {
        let mut results = csv::Writer::from_path(dir.join("results.csv"))?;
        results.write_record(RESULTS_HEADER)?;
        results.flush()?;
        let mut errors = csv::Writer::from_path(dir.join("errors.csv"))?;
        errors.write_record([
            "scenario_id",
            "design",
            "mode",
            "snr_in_db",
            "ser_in_db",
            "lf",
            "error",
        ])?;
        errors.flush()?;
        let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
        timings.write_record([
            "scenario_id",
            "design",
            "mode",
            "snr_in_db",
            "ser_in_db",
            "lf",
            "phase",
            "runtime_s",
        ])?;
        timings.flush()?;
        Ok(Self {
            results,
            errors,
            timings,
        })
    }

    fn push_row(&mut self, row: &ResultRow) -> Result<()> {
        self.results.write_record(row.record())?;
        self.results.flush()?;
        Ok(())
    }

    fn push_error(
        &mut self,
        scenario: usize,
        design: Design,
        mode: Mode,
        snr: f64,
        ser: f64,
        lf: Option<usize>,
        err: &CoreError,
    ) -> Result<()> {
        self.errors.write_record([
            scenario.to_string(),
            design.as_str().to_string(),
            mode.as_str().to_string(),
            fmt_db(snr),
            fmt_db(ser),
            lf.map(|l| l.to_string()).unwrap_or_default(),
            err.to_string(),
        ])?;
        self.errors.flush()?;
        Ok(())
    }

    fn push_timing(
        &mut self,
        scenario: usize,
        design: Design,
        mode: Mode,
        snr: f64,
        ser: f64,
        lf: Option<usize>,
        phase: &str,
        seconds: f64,
    ) -> Result<()> {
        self.timings.write_record([
            scenario.to_string(),
            design.as_str().to_string(),
            mode.as_str().to_string(),
            fmt_db(snr),
            fmt_db(ser),
            lf.map(|l| l.to_string()).unwrap_or_default(),
            phase.to_string(),
            format!("{seconds:.3}"),
        ])?;
        self.timings.flush()?;
        Ok(())
    }
}

/// Composite echo path each canceller tries to model, used for tap-snapshot
/// misalignment reports: room responses alone for the extended design, room
/// responses convolved with the reduction filter's equivalent FIR for the
/// conventional one.
fn reference_echo_paths(
    design: Design,
    bank: &ImpulseResponseBank,
    geometry: &ScenarioGeometry,
    ref_mic: usize,
    equivalent: Option<&crate::stft::TimeEquivalentFilter>,
) -> Option<Array2<f64>> {
    let ls = geometry.loudspeaker_indices();
    match design {
        Design::NrExtAec => {
            let len = bank.irs.dim().2;
            let mut truth = Array2::zeros((ls.len(), len));
            for (j, &src) in ls.iter().enumerate() {
                let ir = bank.ir(src, ref_mic);
                truth.row_mut(j).as_slice_mut().unwrap().copy_from_slice(&ir);
            }
            Some(truth)
        }
        Design::NrAec => {
            let eq = equivalent?;
            let (_, mics, taps) = eq.taps.dim();
            let ir_len = bank.irs.dim().2;
            let out_len = taps + ir_len - 1;
            let mut truth = Array2::zeros((ls.len(), out_len));
            for (j, &src) in ls.iter().enumerate() {
                let mut acc = vec![0.0; out_len];
                for m in 0..mics {
                    let w: Vec<f64> = eq.taps.slice(ndarray::s![ref_mic, m, ..]).to_vec();
                    let full = conv::fft_convolve(&w, &bank.ir(src, m));
                    for (a, v) in acc.iter_mut().zip(full) {
                        *a += v;
                    }
                }
                truth.row_mut(j).as_slice_mut().unwrap().copy_from_slice(&acc);
            }
            Some(truth)
        }
    }
}

struct ArtifactContext<'a> {
    scenario_dir: PathBuf,
    bank: &'a ImpulseResponseBank,
    geometry: &'a ScenarioGeometry,
    ref_mic: usize,
    sample_rate: u32,
}

impl ArtifactContext<'_> {
    fn export_run(
        &self,
        design: Design,
        mode: Mode,
        lf: usize,
        out: &CascadeOutput,
    ) -> Result<()> {
        let runs = self.scenario_dir.join("runs");
        std::fs::create_dir_all(&runs)?;
        let prefix = format!("{design}_{mode}_lf{lf}");
        let tracks: [(&str, &[f64]); 5] = [
            ("shat", &out.s_hat),
            ("speech", &out.components.speech),
            ("noise", &out.components.noise),
            ("echo_speech", &out.components.echo_speech),
            ("echo_noise", &out.components.echo_noise),
        ];
        for (name, data) in tracks {
            io::write_wav_mono(
                &runs.join(format!("{prefix}_{name}.wav")),
                data,
                self.sample_rate,
            )?;
        }

        // Canceller tap snapshot with misalignment against the composite
        // paths it models (when they are representable as an FIR).
        let taps_dir = self.scenario_dir.join("taps");
        std::fs::create_dir_all(&taps_dir)?;
        let (n_refs, n_taps) = out.aec_taps.dim();
        io::write_matrix_dump(
            &taps_dir.join(format!("{prefix}_taps.bin")),
            &[n_refs, n_taps],
            out.aec_taps.as_slice().unwrap(),
        )?;
        let truth = reference_echo_paths(
            design,
            self.bank,
            self.geometry,
            self.ref_mic,
            out.equivalent_fir.as_ref(),
        );
        let manifest = taps_dir.join("taps_manifest.csv");
        let new_file = !manifest.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)?;
        if new_file {
            writeln!(f, "design,mode,lf,taps_file,misalignment_db")?;
        }
        let mis = truth
            .map(|t| format!("{:.6}", nlms::misalignment_db(out.aec_taps.view(), t.view())))
            .unwrap_or_default();
        writeln!(f, "{design},{mode},{lf},{prefix}_taps.bin,{mis}")?;

        // Run manifest row.
        let run_manifest = runs.join("run_manifest.csv");
        let new_file = !run_manifest.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&run_manifest)?;
        if new_file {
            writeln!(f, "design,mode,lf,chain_delay,nr_warmup_frames,file_prefix")?;
        }
        writeln!(
            f,
            "{design},{mode},{lf},{},{},{prefix}",
            out.chain_delay,
            out.nr_warmup_frames
                .map(|v| v.to_string())
                .unwrap_or_default()
        )?;
        Ok(())
    }
}

/// Execute the full grid. Results stream to `<output.dir>/results.csv`;
/// aggregates, figure data and artifacts are written alongside. Per-point
/// failures are recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config_used.toml"), cfg.to_toml_string())?;

    let mut writers = SweepWriters::create(&out_dir)?;
    let room = cfg.room_spec();
    let stft = cfg.stft_config()?;
    let bands = BandWeights::ansi_third_octave();
    let fs = cfg.signals.sample_rate_hz;
    let ref_mic = cfg.geometry.ref_mic;
    let n_ls = cfg.geometry.loudspeakers;

    // Optional external source material, shared across scenarios.
    let read_checked = |path: &Path| -> Result<Vec<f64>> {
        let (wave, rate) = io::read_wav_mono(path)?;
        if rate as f64 != fs {
            return Err(CoreError::Config(format!(
                "{} is sampled at {rate} Hz, expected {fs} Hz",
                path.display()
            )));
        }
        Ok(wave)
    };
    let external_waves: Option<(Vec<f64>, Vec<f64>)> =
        match (&cfg.signals.speech_wav, &cfg.signals.babble_wav) {
            (Some(sp), Some(bp)) => Some((read_checked(sp)?, read_checked(bp)?)),
            (None, None) => None,
            _ => {
                return Err(CoreError::Config(
                    "speech_wav and babble_wav must be provided together".into(),
                ))
            }
        };

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut failures = 0usize;
    // Golden-angle rotation varies every source position between scenarios.
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());

    for scenario in 0..cfg.signals.scenario_count {
        let seed = cfg.scenario_seed(scenario);
        let start_angle = scenario as f64 * golden_angle;
        let geometry = ScenarioGeometry::circular(
            &room,
            cfg.geometry.mic_positions.clone(),
            cfg.geometry.circle_radius,
            n_ls,
            start_angle,
            seed,
        )?;
        let bank = ImpulseResponseBank::generate(&room, &geometry)?;
        let sources = match &external_waves {
            Some((speech, babble)) => SourceWaves::from_waves(
                speech.clone(),
                babble.clone(),
                cfg.signals.duration_s,
                fs,
                n_ls,
            )?,
            None => SourceWaves::synthetic(
                splitmix64(seed ^ 0x0BAD_5EED),
                cfg.signals.duration_s,
                fs,
                n_ls,
            ),
        };
        let scenario_dir = out_dir.join(format!("scenario_{scenario:03}"));
        if cfg.output.export_artifacts {
            bank.export(&scenario_dir.join("irs"), fs as u32)?;
        }

        for &snr in &cfg.grid.snr_db {
            for &ser in &cfg.grid.ser_db {
                let artifact_cell = cfg.output.export_artifacts
                    && snr == cfg.output.artifact_snr_db
                    && ser == cfg.output.artifact_ser_db;
                let synth_started = std::time::Instant::now();
                let synthesized = synth::synthesize_scenario(
                    &geometry,
                    &bank,
                    &sources,
                    splitmix64(seed ^ 0x00FA_CADE),
                    snr,
                    ser,
                    ref_mic,
                    &stft,
                );
                let (tracks, vad) = match synthesized {
                    Ok(v) => v,
                    Err(e) => {
                        failures += grid_points(cfg);
                        for design in &cfg.grid.designs {
                            for mode in &cfg.grid.modes {
                                for &lf in &cfg.grid.lf {
                                    writers.push_error(
                                        scenario, *design, *mode, snr, ser, Some(lf), &e,
                                    )?;
                                }
                            }
                        }
                        continue;
                    }
                };
                writers.push_timing(
                    scenario,
                    cfg.grid.designs[0],
                    cfg.grid.modes[0],
                    snr,
                    ser,
                    None,
                    "synthesis",
                    synth_started.elapsed().as_secs_f64(),
                )?;
                if artifact_cell {
                    tracks.export(&scenario_dir.join("components"), &vad)?;
                }

                // Input-side band powers depend only on the chain delay, so
                // they are shared across designs, modes and canceller
                // lengths within this grid cell.
                let mut metric_caches: Vec<(usize, metrics::InputBandCache)> = Vec::new();
                for &design in &cfg.grid.designs {
                    for &mode in &cfg.grid.modes {
                        run_design_mode(
                            cfg,
                            &mut writers,
                            &mut rows,
                            &mut failures,
                            &mut metric_caches,
                            RunContext {
                                scenario,
                                seed,
                                snr,
                                ser,
                                design,
                                mode,
                                tracks: &tracks,
                                vad: &vad,
                                bands: &bands,
                                artifacts: if artifact_cell {
                                    Some(ArtifactContext {
                                        scenario_dir: scenario_dir.clone(),
                                        bank: &bank,
                                        geometry: &geometry,
                                        ref_mic,
                                        sample_rate: fs as u32,
                                    })
                                } else {
                                    None
                                },
                            },
                        )?;
                    }
                }
            }
        }
    }

    let aggregates = aggregate_rows(&rows);
    let mut agg_writer = csv::Writer::from_path(out_dir.join("aggregates.csv"))?;
    agg_writer.write_record(AGGREGATES_HEADER)?;
    for a in &aggregates {
        agg_writer.write_record([
            a.design.as_str().to_string(),
            a.mode.as_str().to_string(),
            fmt_db(a.snr_in_db),
            fmt_db(a.ser_in_db),
            a.lf.to_string(),
            a.scenarios.to_string(),
            fmt_opt(a.mean_delta_snr_i),
            fmt_opt(a.std_delta_snr_i),
            fmt_opt(a.mean_delta_ser_i),
            fmt_opt(a.std_delta_ser_i),
            fmt_opt(a.mean_sd_i),
            fmt_opt(a.std_sd_i),
        ])?;
    }
    agg_writer.flush()?;

    for figure in FigureId::ALL {
        emit_figure_data(
            &rows,
            figure,
            &out_dir
                .join("figures")
                .join(format!("figure_{}.csv", figure.as_str())),
        )?;
    }

    Ok(ResultsTable {
        rows,
        aggregates,
        failures,
    })
}

fn grid_points(cfg: &ExperimentConfig) -> usize {
    cfg.grid.designs.len() * cfg.grid.modes.len() * cfg.grid.lf.len()
}

struct RunContext<'a> {
    scenario: usize,
    seed: u64,
    snr: f64,
    ser: f64,
    design: Design,
    mode: Mode,
    tracks: &'a ComponentTracks,
    vad: &'a VadTrack,
    bands: &'a BandWeights,
    artifacts: Option<ArtifactContext<'a>>,
}

/// Run every canceller length for one (scenario, cell, design, mode),
/// reusing the noise-reduction stage across lengths.
fn run_design_mode(
    cfg: &ExperimentConfig,
    writers: &mut SweepWriters,
    rows: &mut Vec<ResultRow>,
    failures: &mut usize,
    metric_caches: &mut Vec<(usize, metrics::InputBandCache)>,
    ctx: RunContext<'_>,
) -> Result<()> {
    let RunContext {
        scenario,
        seed,
        snr,
        ser,
        design,
        mode,
        tracks,
        vad,
        bands,
        artifacts,
    } = ctx;
    let base_cfg = cfg.cascade_config(design, mode, cfg.grid.lf[0])?;

    // The noise-reduction stage does not depend on the canceller length.
    let nr_started = std::time::Instant::now();
    enum NrStageEither {
        Converged(cascade::NrStage),
        Adaptive(cascade::AdaptiveNrStage),
    }
    let nr_stage = match mode {
        Mode::Converged => {
            cascade::run_nr_stage_converged(tracks, vad, &base_cfg).map(NrStageEither::Converged)
        }
        Mode::Adaptive => {
            cascade::run_nr_stage_adaptive(tracks, vad, &base_cfg).map(NrStageEither::Adaptive)
        }
    };
    let nr_stage = match nr_stage {
        Ok(s) => s,
        Err(e) => {
            *failures += cfg.grid.lf.len();
            for &lf in &cfg.grid.lf {
                writers.push_error(scenario, design, mode, snr, ser, Some(lf), &e)?;
            }
            return Ok(());
        }
    };
    writers.push_timing(
        scenario,
        design,
        mode,
        snr,
        ser,
        None,
        "nr_stage",
        nr_started.elapsed().as_secs_f64(),
    )?;
    if let (Some(art), NrStageEither::Converged(nr)) = (&artifacts, &nr_stage) {
        nr.filter
            .export(&art.scenario_dir.join("filters"), design.as_str())?;
    }

    let e_in: Vec<f64> = tracks
        .e_s
        .row(cfg.geometry.ref_mic)
        .iter()
        .zip(tracks.e_n.row(cfg.geometry.ref_mic))
        .map(|(a, b)| a + b)
        .collect();
    let input = ComponentSlices {
        speech: tracks.s.row(cfg.geometry.ref_mic).to_slice().unwrap(),
        noise: tracks.n.row(cfg.geometry.ref_mic).to_slice().unwrap(),
        echo: &e_in,
    };

    for &lf in &cfg.grid.lf {
        let run_cfg = cfg.cascade_config(design, mode, lf)?;
        let run_started = std::time::Instant::now();
        let out = match &nr_stage {
            NrStageEither::Converged(nr) => {
                cascade::run_aec_stage_converged(nr, tracks, vad, &run_cfg)
            }
            NrStageEither::Adaptive(nr) => {
                cascade::run_aec_stage_adaptive(nr, tracks, vad, &run_cfg)
            }
        };
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                *failures += 1;
                writers.push_error(scenario, design, mode, snr, ser, Some(lf), &e)?;
                continue;
            }
        };
        if !metric_caches.iter().any(|(d, _)| *d == out.chain_delay) {
            match metrics::input_band_cache(
                input,
                out.chain_delay,
                &vad.vad_s,
                cfg.signals.sample_rate_hz,
                bands,
            ) {
                Ok(c) => metric_caches.push((out.chain_delay, c)),
                Err(e) => {
                    *failures += 1;
                    writers.push_error(scenario, design, mode, snr, ser, Some(lf), &e)?;
                    continue;
                }
            }
        }
        let cache = &metric_caches
            .iter()
            .find(|(d, _)| *d == out.chain_delay)
            .unwrap()
            .1;
        let echo_out = out.components.echo();
        let report = metrics::evaluate_with_cache(
            cache,
            input,
            ComponentSlices {
                speech: &out.components.speech,
                noise: &out.components.noise,
                echo: &echo_out,
            },
            out.chain_delay,
            &vad.vad_s,
            cfg.signals.sample_rate_hz,
            bands,
            cfg.stft.window_size,
        );
        let report = match report {
            Ok(r) => r,
            Err(e) => {
                *failures += 1;
                writers.push_error(scenario, design, mode, snr, ser, Some(lf), &e)?;
                continue;
            }
        };
        writers.push_timing(
            scenario,
            design,
            mode,
            snr,
            ser,
            Some(lf),
            "run",
            run_started.elapsed().as_secs_f64(),
        )?;
        let row = ResultRow {
            scenario_id: scenario,
            design,
            mode,
            snr_in_db: snr,
            ser_in_db: ser,
            lf,
            delta_snr_i: report.delta_snr_i_db,
            delta_ser_i: report.delta_ser_i_db,
            sd_i: report.speech_distortion_db,
            seed,
        };
        writers.push_row(&row)?;
        rows.push(row);
        if let Some(art) = &artifacts {
            art.export_run(design, mode, lf, &out)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
