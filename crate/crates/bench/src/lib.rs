//! Shared fixtures for the criterion benchmarks: a small reproducible room
//! scenario so every benchmark measures the same workload.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use nraec_core::room::{ImpulseResponseBank, RoomSpec, ScenarioGeometry};
use nraec_core::stft::StftConfig;
use nraec_core::synth::{self, ComponentTracks, SourceWaves, VadTrack};

/// The reference room: 5 m × 5 m × 3 m, weakly reflective walls, 128-tap
/// responses at 16 kHz.
pub fn bench_room() -> RoomSpec {
    RoomSpec {
        dimensions: [5.0, 5.0, 3.0],
        reflection_coefficient: 0.15,
        speed_of_sound: 343.0,
        sample_rate: 16_000.0,
        ir_length: 128,
        rim_displacement: 0.13,
    }
}

/// Two mics, two loudspeakers, sources on a 0.2 m circle.
pub fn bench_geometry(room: &RoomSpec, seed: u64) -> ScenarioGeometry {
    ScenarioGeometry::circular(
        room,
        vec![[2.0, 1.9, 1.0], [2.0, 1.8, 1.0]],
        0.2,
        2,
        0.7,
        seed,
    )
    .expect("benchmark geometry is valid")
}

/// A synthesized scenario of the given duration at 0 dB input ratios.
pub fn bench_scenario(duration_s: f64, seed: u64) -> (ComponentTracks, VadTrack) {
    let room = bench_room();
    let geometry = bench_geometry(&room, seed);
    let bank = ImpulseResponseBank::generate(&room, &geometry).unwrap();
    let sources = SourceWaves::synthetic(seed ^ 0xBE9C, duration_s, room.sample_rate, 2);
    let stft = StftConfig::sqrt_hann(512).unwrap();
    synth::synthesize_scenario(&geometry, &bank, &sources, seed ^ 0x17E, 0.0, 0.0, 0, &stft)
        .unwrap()
}

/// Deterministic white noise, `channels × samples`.
pub fn white_noise(channels: usize, samples: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((channels, samples), |_| rng.random_range(-1.0..1.0))
}
