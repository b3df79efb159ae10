//! Room impulse response generation with the randomized image method, plus
//! the circular source layout used by the experiment scenarios.
//!
//! Image sources are enumerated per reflection order, their positions
//! perturbed uniformly within a configurable displacement (decorrelating the
//! reflections), and each arrival is rounded to the nearest sample with
//! amplitude `reflections / (4πd)`. The direct path is never perturbed, so
//! source-microphone delays stay exact.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::io;

/// Shoebox room description and simulation parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RoomSpec {
    /// Room dimensions in meters, `[Lx, Ly, Lz]`.
    pub dimensions: [f64; 3],
    /// Uniform wall reflection coefficient in `[0, 1)`.
    pub reflection_coefficient: f64,
    /// Speed of sound in m/s.
    pub speed_of_sound: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    /// Impulse response length in taps.
    pub ir_length: usize,
    /// Maximum random image-source displacement per coordinate, meters.
    pub rim_displacement: f64,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| d <= 0.0) {
            return Err(CoreError::Geometry(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if !(0.0..1.0).contains(&self.reflection_coefficient) {
            return Err(CoreError::Config(format!(
                "reflection coefficient must be in [0,1), got {}",
                self.reflection_coefficient
            )));
        }
        if self.ir_length < 1 {
            return Err(CoreError::Config("ir_length must be >= 1".into()));
        }
        if self.rim_displacement < 0.0 {
            return Err(CoreError::Config(format!(
                "rim displacement must be >= 0, got {}",
                self.rim_displacement
            )));
        }
        if self.speed_of_sound <= 0.0 || self.sample_rate <= 0.0 {
            return Err(CoreError::Config(
                "speed of sound and sample rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Check that `pos` lies strictly inside the room.
    pub fn contains(&self, pos: [f64; 3]) -> bool {
        pos.iter()
            .zip(&self.dimensions)
            .all(|(&p, &d)| p > 0.0 && p < d)
    }
}

/// Role of a sound source in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SourceRole {
    Speech,
    Noise,
    Loudspeaker,
}

impl SourceRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceRole::Speech => "speech",
            SourceRole::Noise => "noise",
            SourceRole::Loudspeaker => "loudspeaker",
        }
    }
}

/// Microphone and source placement for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    /// Desired speech, near-end noise, then loudspeaker positions.
    pub source_positions: Vec<[f64; 3]>,
    pub source_roles: Vec<SourceRole>,
    pub circle_radius: f64,
    pub seed: u64,
}

impl ScenarioGeometry {
    /// Place one speech source, one noise source and `loudspeakers`
    /// loudspeakers at congruent angles on a horizontal circle centered on
    /// the mean microphone position.
    pub fn circular(
        room: &RoomSpec,
        mic_positions: Vec<[f64; 3]>,
        circle_radius: f64,
        loudspeakers: usize,
        start_angle: f64,
        seed: u64,
    ) -> Result<Self> {
        if mic_positions.is_empty() {
            return Err(CoreError::Geometry("need at least one microphone".into()));
        }
        for (i, &m) in mic_positions.iter().enumerate() {
            if !room.contains(m) {
                return Err(CoreError::Geometry(format!(
                    "microphone {i} at {m:?} is outside the room"
                )));
            }
        }
        let mut center = [0.0; 3];
        for m in &mic_positions {
            for a in 0..3 {
                center[a] += m[a] / mic_positions.len() as f64;
            }
        }
        let count = 2 + loudspeakers;
        let source_positions = place_sources_on_circle(center, circle_radius, count, start_angle)?;
        let mut source_roles = vec![SourceRole::Speech, SourceRole::Noise];
        source_roles.extend(std::iter::repeat(SourceRole::Loudspeaker).take(loudspeakers));
        for (i, &p) in source_positions.iter().enumerate() {
            if !room.contains(p) {
                return Err(CoreError::Geometry(format!(
                    "source {i} ({}) at {p:?} is outside the room",
                    source_roles[i].as_str()
                )));
            }
        }
        Ok(Self {
            mic_positions,
            source_positions,
            source_roles,
            circle_radius,
            seed,
        })
    }

    pub fn mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn loudspeaker_indices(&self) -> Vec<usize> {
        self.source_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == SourceRole::Loudspeaker)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Equally spaced positions on a horizontal circle around `center`.
pub fn place_sources_on_circle(
    center: [f64; 3],
    radius: f64,
    count: usize,
    start_angle: f64,
) -> Result<Vec<[f64; 3]>> {
    if count < 1 {
        return Err(CoreError::Geometry("source count must be >= 1".into()));
    }
    if radius < 0.0 {
        return Err(CoreError::Geometry("circle radius must be >= 0".into()));
    }
    Ok((0..count)
        .map(|i| {
            let angle = start_angle + 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            [
                center[0] + radius * angle.cos(),
                center[1] + radius * angle.sin(),
                center[2],
            ]
        })
        .collect())
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic per-image RNG seed. Depends only on the caller seed and the
/// image lattice cell, so the same image source is perturbed identically for
/// every microphone when the caller reuses one seed per source.
fn image_seed(seed: u64, n: [i64; 3], q: [u8; 3]) -> u64 {
    let mut h = splitmix64(seed);
    for v in n {
        h = splitmix64(h ^ (v as u64));
    }
    for v in q {
        h = splitmix64(h ^ (v as u64));
    }
    h
}

/// Generate one source-to-microphone impulse response with the randomized
/// image method.
///
/// Every image source whose (rounded) arrival fits inside `ir_length` taps is
/// included; each non-direct image position is displaced uniformly within
/// `±rim_displacement` per coordinate. Deterministic given
/// `(room, src, mic, seed)`.
pub fn generate_rim_ir(
    room: &RoomSpec,
    src: [f64; 3],
    mic: [f64; 3],
    seed: u64,
) -> Result<Vec<f64>> {
    room.validate()?;
    for (label, p) in [("source", src), ("microphone", mic)] {
        if !room.contains(p) {
            return Err(CoreError::Geometry(format!(
                "{label} at {p:?} is outside the room"
            )));
        }
    }
    let d_direct = dist(src, mic);
    if d_direct < 1e-9 {
        return Err(CoreError::Geometry(
            "source and microphone positions coincide".into(),
        ));
    }

    let fs = room.sample_rate;
    let c = room.speed_of_sound;
    let beta = room.reflection_coefficient;
    // Longest path that can still land inside the IR after perturbation and
    // rounding.
    let max_dist =
        (room.ir_length as f64 + 1.0) * c / fs + room.rim_displacement * 3f64.sqrt() + c / fs;

    let mut ir = vec![0.0; room.ir_length];
    let n_range: Vec<i64> = {
        let max_l = room
            .dimensions
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let min_l = room
            .dimensions
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        let n_max = ((max_dist + 2.0 * max_l) / (2.0 * min_l)).ceil() as i64;
        (-n_max..=n_max).collect()
    };

    for &nx in &n_range {
        for &ny in &n_range {
            for &nz in &n_range {
                for qx in 0..2u8 {
                    for qy in 0..2u8 {
                        for qz in 0..2u8 {
                            let n = [nx, ny, nz];
                            let q = [qx, qy, qz];
                            let mut img = [0.0f64; 3];
                            let mut refl_count = 0u32;
                            for a in 0..3 {
                                let qa = q[a] as f64;
                                img[a] =
                                    (1.0 - 2.0 * qa) * src[a] + 2.0 * n[a] as f64 * room.dimensions[a];
                                refl_count += (n[a] - q[a] as i64).unsigned_abs() as u32
                                    + n[a].unsigned_abs() as u32;
                            }
                            let is_direct = n == [0, 0, 0] && q == [0, 0, 0];
                            let gain = if refl_count == 0 {
                                1.0
                            } else if beta == 0.0 {
                                continue;
                            } else {
                                beta.powi(refl_count as i32)
                            };
                            // Cheap cull before drawing any randomness.
                            if dist(img, mic) > max_dist {
                                continue;
                            }
                            if !is_direct && room.rim_displacement > 0.0 {
                                let mut rng =
                                    ChaCha8Rng::seed_from_u64(image_seed(seed, n, q));
                                for v in img.iter_mut() {
                                    *v += rng
                                        .random_range(-room.rim_displacement..=room.rim_displacement);
                                }
                            }
                            let d = dist(img, mic);
                            let delay = (fs * d / c).round() as i64;
                            if delay < 0 || delay as usize >= room.ir_length {
                                continue;
                            }
                            ir[delay as usize] += gain / (4.0 * std::f64::consts::PI * d);
                        }
                    }
                }
            }
        }
    }

    if ir.iter().all(|&v| v == 0.0) {
        return Err(CoreError::Geometry(format!(
            "direct path from {src:?} to {mic:?} does not fit in {} taps",
            room.ir_length
        )));
    }
    Ok(ir)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// FIR paths from every source to every microphone.
#[derive(Debug, Clone)]
pub struct ImpulseResponseBank {
    /// `[n_sources × n_mics × ir_length]` linear gain per tap.
    pub irs: Array3<f64>,
    pub source_roles: Vec<SourceRole>,
}

impl ImpulseResponseBank {
    /// Generate the bank for a scenario. One RIM seed per source (derived
    /// from the geometry seed) keeps image perturbations consistent across
    /// microphones.
    pub fn generate(room: &RoomSpec, geometry: &ScenarioGeometry) -> Result<Self> {
        let n_src = geometry.source_positions.len();
        let n_mic = geometry.mics();
        let mut irs = Array3::zeros((n_src, n_mic, room.ir_length));
        for (s, &src) in geometry.source_positions.iter().enumerate() {
            let src_seed = splitmix64(geometry.seed ^ (s as u64).wrapping_mul(0xA5A5_5A5A_0F0F_F0F0));
            for (m, &mic) in geometry.mic_positions.iter().enumerate() {
                let ir = generate_rim_ir(room, src, mic, src_seed)?;
                for (k, &v) in ir.iter().enumerate() {
                    irs[(s, m, k)] = v;
                }
            }
        }
        Ok(Self {
            irs,
            source_roles: geometry.source_roles.clone(),
        })
    }

    pub fn sources(&self) -> usize {
        self.irs.dim().0
    }
    pub fn mics(&self) -> usize {
        self.irs.dim().1
    }
    pub fn ir_length(&self) -> usize {
        self.irs.dim().2
    }

    /// IR taps for one (source, mic) pair.
    pub fn ir(&self, source: usize, mic: usize) -> Vec<f64> {
        self.irs
            .slice(ndarray::s![source, mic, ..])
            .iter()
            .copied()
            .collect()
    }

    /// Export one WAV per IR plus a CSV manifest
    /// (`source_index, mic_index, role, filename`).
    pub fn export(&self, dir: &Path, sample_rate: u32) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = csv::Writer::from_path(dir.join("ir_manifest.csv"))?;
        manifest.write_record(["source_index", "mic_index", "role", "filename"])?;
        for s in 0..self.sources() {
            for m in 0..self.mics() {
                let filename = format!("ir_s{s}_m{m}.wav");
                io::write_wav_mono(&dir.join(&filename), &self.ir(s, m), sample_rate)?;
                manifest.write_record([
                    s.to_string(),
                    m.to_string(),
                    self.source_roles[s].as_str().to_string(),
                    filename,
                ])?;
            }
        }
        manifest.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::fft_convolve;

    fn test_room(beta: f64) -> RoomSpec {
        RoomSpec {
            dimensions: [5.0, 5.0, 3.0],
            reflection_coefficient: beta,
            speed_of_sound: 343.0,
            sample_rate: 16_000.0,
            ir_length: 128,
            rim_displacement: 0.13,
        }
    }

    #[test]
    fn circle_placement_spaces_sources_at_congruent_angles() {
        let center = [2.0, 1.85, 1.0];
        let pos = place_sources_on_circle(center, 0.2, 4, 0.0).unwrap();
        assert_eq!(pos.len(), 4);
        let expected_angles = [0.0f64, 90.0, 180.0, 270.0];
        for (p, deg) in pos.iter().zip(expected_angles) {
            let rad = deg.to_radians();
            assert!((p[0] - (center[0] + 0.2 * rad.cos())).abs() < 1e-12);
            assert!((p[1] - (center[1] + 0.2 * rad.sin())).abs() < 1e-12);
            assert!((p[2] - center[2]).abs() < 1e-12);
            let d = super::dist(*p, center);
            assert!((d - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_radius_collapses_to_center() {
        let center = [1.0, 2.0, 1.5];
        for p in place_sources_on_circle(center, 0.0, 3, 1.0).unwrap() {
            assert_eq!(p, center);
        }
    }

    #[test]
    fn two_sources_are_antipodal() {
        let pos = place_sources_on_circle([2.0, 2.0, 1.0], 0.3, 2, 0.0).unwrap();
        let d = super::dist(pos[0], pos[1]);
        assert!((d - 0.6).abs() < 1e-12);
    }

    #[test]
    fn free_field_gives_single_tap_at_rounded_delay() {
        let mut room = test_room(0.0);
        room.rim_displacement = 0.0;
        let src = [2.0, 1.0, 1.0];
        let mic = [2.0, 1.9, 1.0];
        let ir = generate_rim_ir(&room, src, mic, 1).unwrap();
        let d = 0.9f64;
        let expected_delay = (room.sample_rate * d / room.speed_of_sound).round() as usize;
        let expected_gain = 1.0 / (4.0 * std::f64::consts::PI * d);
        for (k, &v) in ir.iter().enumerate() {
            if k == expected_delay {
                assert!((v - expected_gain).abs() < 1e-12);
            } else {
                assert_eq!(v, 0.0, "unexpected tap at {k}");
            }
        }
    }

    #[test]
    fn ir_has_requested_length() {
        let room = test_room(0.15);
        let ir = generate_rim_ir(&room, [2.0, 1.65, 1.0], [2.0, 1.9, 1.0], 7).unwrap();
        assert_eq!(ir.len(), 128);
    }

    #[test]
    fn generation_is_deterministic() {
        let room = test_room(0.15);
        let a = generate_rim_ir(&room, [2.2, 1.85, 1.0], [2.0, 1.9, 1.0], 99).unwrap();
        let b = generate_rim_ir(&room, [2.2, 1.85, 1.0], [2.0, 1.9, 1.0], 99).unwrap();
        assert_eq!(a, b);
        let c = generate_rim_ir(&room, [2.2, 1.85, 1.0], [2.0, 1.9, 1.0], 100).unwrap();
        assert_ne!(a, c, "different seeds should perturb reflections differently");
    }

    #[test]
    fn reflections_add_energy() {
        let src = [2.0, 1.0, 1.0];
        let mic = [2.0, 1.9, 1.0];
        let seed = 5;
        let e = |beta: f64| -> f64 {
            generate_rim_ir(&test_room(beta), src, mic, seed)
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum()
        };
        let e0 = e(0.0);
        let e1 = e(0.15);
        let e2 = e(0.5);
        assert!(e1 > e0, "reflections must add energy: {e1} vs {e0}");
        assert!(e2 > e1, "energy must grow with the reflection coefficient");
    }

    #[test]
    fn direct_path_delay_is_exact_within_one_tap() {
        let room = test_room(0.15);
        let mic = [2.0, 1.9, 1.0];
        for (i, src) in [[2.2, 1.85, 1.0], [2.0, 1.65, 1.0], [1.8, 1.85, 1.0]]
            .iter()
            .enumerate()
        {
            let ir = generate_rim_ir(&room, *src, mic, i as u64).unwrap();
            let peak = ir.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
            let first = ir
                .iter()
                .position(|&v| v.abs() > 1e-6 * peak)
                .expect("nonzero IR");
            let expected =
                (room.sample_rate * super::dist(*src, mic) / room.speed_of_sound).round() as i64;
            assert!(
                (first as i64 - expected).abs() <= 1,
                "source {i}: first tap {first}, expected {expected}"
            );
        }
    }

    #[test]
    fn echo_path_is_additive() {
        let room = test_room(0.15);
        let ir = generate_rim_ir(&room, [2.0, 2.05, 1.0], [2.0, 1.8, 1.0], 3).unwrap();
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let y: Vec<f64> = (0..500).map(|i| ((i * 104_729) % 89) as f64 / 44.0 - 1.0).collect();
        let (a, b) = (0.7, -1.3);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = fft_convolve(&mixed, &ir);
        let cx = fft_convolve(&x, &ir);
        let cy = fft_convolve(&y, &ir);
        let norm: f64 = lhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..lhs.len() {
            let rhs = a * cx[i] + b * cy[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * norm.max(1.0));
        }
    }

    #[test]
    fn positions_outside_room_are_rejected_by_name() {
        let room = test_room(0.15);
        let err = generate_rim_ir(&room, [6.0, 1.0, 1.0], [2.0, 1.9, 1.0], 0).unwrap_err();
        assert!(err.to_string().contains("source"));
        let err = ScenarioGeometry::circular(
            &room,
            vec![[4.95, 4.95, 2.9]],
            0.2,
            2,
            0.0,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("source 0"), "{err}");
    }

    #[test]
    fn coincident_source_and_mic_is_an_error() {
        let room = test_room(0.15);
        assert!(generate_rim_ir(&room, [2.0, 1.9, 1.0], [2.0, 1.9, 1.0], 0).is_err());
    }

    #[test]
    fn bank_covers_all_pairs_and_exports_manifest() {
        let room = test_room(0.15);
        let geom = ScenarioGeometry::circular(
            &room,
            vec![[2.0, 1.9, 1.0], [2.0, 1.8, 1.0]],
            0.2,
            2,
            0.3,
            11,
        )
        .unwrap();
        let bank = ImpulseResponseBank::generate(&room, &geom).unwrap();
        assert_eq!(bank.sources(), 4);
        assert_eq!(bank.mics(), 2);
        assert_eq!(bank.ir_length(), 128);
        for s in 0..4 {
            for m in 0..2 {
                assert!(bank.ir(s, m).iter().any(|&v| v != 0.0));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        bank.export(dir.path(), 16_000).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("ir_manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 1 + 8);
        let (wav, fs) = io::read_wav_mono(&dir.path().join("ir_s0_m0.wav")).unwrap();
        assert_eq!(fs, 16_000);
        assert_eq!(wav.len(), 128);
    }
}
