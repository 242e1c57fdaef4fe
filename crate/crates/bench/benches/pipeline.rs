//! Throughput of the desk-scale pipeline: tokenization, reconstruction,
//! one optimizer step and the nearest-neighbour quantizer.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use sweettok::mlc::quantize;
use sweettok::videodata::{corpus_captions, synthesize_corpus, MotionSpec};
use sweettok::{Codebook, DType, Device, Mode, ModelConfig, SweetTok, Tensor, TrainConfig, Trainer};

fn desk_model() -> (SweetTok, Vec<Tensor>) {
    let cfg = ModelConfig::desk();
    let spec = MotionSpec::new(cfg.frames, cfg.height, cfg.width);
    let corpus = synthesize_corpus(0, 32, &spec).unwrap();
    let cb = Codebook::from_captions(&corpus_captions(&corpus), cfg.min_freq, cfg.window, cfg.d_text, DType::F32).unwrap();
    let clips = corpus[..2].iter().map(|c| c.clip.to_tensor(DType::F32).unwrap()).collect();
    (SweetTok::new(&cfg, cb, DType::F32).unwrap(), clips)
}

fn inference(c: &mut Criterion) {
    let (model, clips) = desk_model();
    let tokens = model.tokenize(&clips[0]).unwrap();
    c.bench_function("tokenize", |b| b.iter(|| model.tokenize(black_box(&clips[0])).unwrap()));
    c.bench_function("decode_indices", |b| b.iter(|| model.decode_indices(black_box(&tokens)).unwrap()));
    c.bench_function("reconstruct", |b| b.iter(|| model.reconstruct(black_box(&clips[0])).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let (model, clips) = desk_model();
    let tc = TrainConfig::desk();
    let mut trainer = Trainer::new(&tc, &model.params).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("video_step", |b| b.iter(|| trainer.fit(&model, &clips, 1, Mode::Video, |_| {}).unwrap()));
    group.finish();
}

fn quantizer(c: &mut Criterion) {
    let (n, entries, d) = (1024, 512, 16);
    let wave = |len: usize, k: f64| (0..len).map(|i| ((i as f64) * k).sin()).collect::<Vec<f64>>();
    let z = Tensor::from_vec(wave(n * d, 0.37), (1, n, d), &Device::Cpu).unwrap().to_dtype(DType::F32).unwrap();
    let book = Tensor::from_vec(wave(entries * d, 0.11), (entries, d), &Device::Cpu).unwrap().to_dtype(DType::F32).unwrap();
    c.bench_function("quantize_1024x512", |b| b.iter(|| quantize(black_box(&z), &book, 0..entries, None).unwrap()));
}

criterion_group!(benches, inference, train_step, quantizer);
criterion_main!(benches);
