//! Benchmarks for the stages that dominate a sweep: room impulse-response
//! synthesis, the analysis/synthesis transform, covariance + filter
//! construction, equivalent-FIR distillation, the adaptive canceller, and
//! one full converged cascade.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use nraec_bench::{bench_geometry, bench_room, bench_scenario, white_noise};
use nraec_core::cascade::{self, CascadeConfig, Design, Mode};
use nraec_core::nlms::{self, NlmsConfig};
use nraec_core::room::ImpulseResponseBank;
use nraec_core::spectral;
use nraec_core::stft::{self, StftConfig};
use nraec_core::verify::random_smooth_filter;

fn bench_room_ir_synthesis(c: &mut Criterion) {
    let room = bench_room();
    let geometry = bench_geometry(&room, 11);
    c.bench_function("room_ir_bank_4_sources_2_mics", |b| {
        b.iter(|| ImpulseResponseBank::generate(black_box(&room), black_box(&geometry)).unwrap())
    });
}

fn bench_transform(c: &mut Criterion) {
    let cfg = StftConfig::sqrt_hann(512).unwrap();
    let x = white_noise(2, 32_000, 5);
    c.bench_function("transform_roundtrip_2ch_2s", |b| {
        b.iter(|| {
            let frames = stft::analyze(black_box(x.view()), &cfg).unwrap();
            stft::synthesize(&frames, &cfg).unwrap()
        })
    });
}

fn bench_filter_build(c: &mut Criterion) {
    let cfg = StftConfig::sqrt_hann(512).unwrap();
    let x = white_noise(4, 64_000, 7);
    let frames = stft::analyze(x.view(), &cfg).unwrap();
    let k = frames.frames();
    let full: Vec<bool> = (0..k).map(|i| i % 3 != 0).collect();
    let interf: Vec<bool> = full.iter().map(|f| !f).collect();
    c.bench_function("covariance_accumulation_4ch", |b| {
        b.iter(|| spectral::accumulate_covariances(black_box(&frames), &full, &interf, 4).unwrap())
    });
    let cov = spectral::accumulate_covariances(&frames, &full, &interf, 4).unwrap();
    c.bench_function("rank3_filter_build_4ch_257_bins", |b| {
        b.iter(|| spectral::build_mwf(black_box(&cov), 3).unwrap())
    });
}

fn bench_equivalent_filter(c: &mut Criterion) {
    let cfg = StftConfig::sqrt_hann(512).unwrap();
    let w = random_smooth_filter(&cfg, 2, 2, 4, 3);
    c.bench_function("equivalent_fir_distillation_2x2", |b| {
        b.iter(|| stft::equivalent_time_filter(black_box(&w), &cfg).unwrap())
    });
}

fn bench_canceller(c: &mut Criterion) {
    let refs = white_noise(2, 16_000, 9);
    let truth = white_noise(2, 1_150, 10);
    let mut desired = vec![0.0; 16_000];
    for j in 0..2 {
        let full = nraec_core::conv::fft_convolve(
            refs.row(j).to_slice().unwrap(),
            truth.row(j).to_slice().unwrap(),
        );
        for (d, v) in desired.iter_mut().zip(full) {
            *d += v;
        }
    }
    let gate = vec![true; 16_000];
    let cfg = NlmsConfig::new(1_150, 0.1, 1e-6);
    c.bench_function("canceller_2refs_1150taps_1s", |b| {
        b.iter(|| nlms::cancel(&cfg, black_box(refs.view()), &desired, &gate).unwrap())
    });
}

fn bench_converged_cascade(c: &mut Criterion) {
    let (tracks, vad) = bench_scenario(4.0, 21);
    let cfg = CascadeConfig::new(Design::NrExtAec, Mode::Converged).unwrap();
    let mut group = c.benchmark_group("cascade");
    group.sample_size(10);
    group.bench_function("converged_extended_4s", |b| {
        b.iter(|| cascade::run_cascade(black_box(&tracks), &vad, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_room_ir_synthesis,
    bench_transform,
    bench_filter_build,
    bench_equivalent_filter,
    bench_canceller,
    bench_converged_cascade
);
criterion_main!(benches);
