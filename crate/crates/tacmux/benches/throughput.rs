//! Parallel vs sequential throughput on the three hot paths: codebook
//! verification, waveform superposition, and burst decoding. Both variants
//! of each pair produce bit-identical results, so the comparison is purely
//! about speed.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tacmux::codebook::{verify_orthogonality, verify_orthogonality_seq, CodeBook};
use tacmux::config::SystemConfig;
use tacmux::decoder::{decode_frame, decode_frame_seq, frame_sync};
use tacmux::encoder::{chips_to_levels, encode_word, render_waveform};
use tacmux::rng::{self, tag};
use tacmux::sim::simulate_word_frames;
use tacmux::sweep::{default_max_active, scale_config};

fn verify(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify");
    group.sample_size(10);
    for order in [1024usize, 4096] {
        let book = CodeBook::assign_at_order(order - 1, true, order).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", order), &book, |b, book| {
            b.iter(|| verify_orthogonality(book));
        });
        group.bench_with_input(BenchmarkId::new("sequential", order), &book, |b, book| {
            b.iter(|| verify_orthogonality_seq(book));
        });
    }
    group.finish();
}

fn superimpose(c: &mut Criterion) {
    let setup = SystemConfig::default().resolve().unwrap();
    let mut stream = rng::stream(setup.seed, &[tag::WORDS]);
    let waveforms: Vec<_> = (0..setup.node_count())
        .map(|node| {
            let chips = encode_word(setup.book.code_for(node), 366 + node as u32, 10).unwrap();
            let levels = chips_to_levels(&chips, &setup.encoder);
            render_waveform(&levels, &setup.encoder, setup.sample_rate, &mut stream).unwrap()
        })
        .collect();
    let refs: Vec<_> = waveforms.iter().collect();

    let mut group = c.benchmark_group("superimpose");
    group.bench_function(BenchmarkId::new("parallel", refs.len()), |b| {
        b.iter(|| tacmux::channel::superimpose(&refs, &setup.channel).unwrap());
    });
    group.bench_function(BenchmarkId::new("sequential", refs.len()), |b| {
        b.iter(|| tacmux::channel::superimpose_seq(&refs, &setup.channel).unwrap());
    });
    group.finish();
}

fn decode(c: &mut Criterion) {
    let mut group = c.benchmark_group("decode");
    group.sample_size(30);
    for order in [32usize, 256] {
        let setup = scale_config(order, 10, 8.0).resolve().unwrap();
        let mut frame = vec![None; setup.node_count()];
        for node in 0..default_max_active(&setup) {
            frame[node * setup.node_count() / default_max_active(&setup)] =
                Some(366 + node as u32);
        }
        let out = simulate_word_frames(&setup, &[frame]).unwrap();
        let sync = frame_sync(&out.digitized, &setup.decoder).unwrap();
        let window = sync.windows[0];
        group.bench_with_input(BenchmarkId::new("parallel", order), &window, |b, w| {
            b.iter(|| decode_frame(&out.digitized, &sync, w, &setup.book, &setup.decoder).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("sequential", order), &window, |b, w| {
            b.iter(|| {
                decode_frame_seq(&out.digitized, &sync, w, &setup.book, &setup.decoder).unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, verify, superimpose, decode);
criterion_main!(benches);
