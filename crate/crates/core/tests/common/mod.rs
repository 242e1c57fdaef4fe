//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use sweettok::videodata::{corpus_captions, synthesize_corpus, MotionSpec, SyntheticClip};
use sweettok::{Codebook, DType, ModelConfig, SweetTok, Tensor};

/// The toy architecture used by the gradient checks.
pub fn toy_cfg() -> ModelConfig {
    ModelConfig {
        frames: 5,
        height: 16,
        width: 16,
        patch_t: 2,
        patch_h: 4,
        patch_w: 4,
        d_model: 32,
        n_heads: 4,
        ff_mult: 2,
        spatial_layers: 1,
        temporal_layers: 1,
        l_spatial: 4,
        l_temporal: 8,
        d_latent: 8,
        gcn_hidden: 16,
        d_text: 16,
        ..ModelConfig::desk()
    }
}

pub fn corpus(cfg: &ModelConfig, seed: u64, n: usize) -> Vec<SyntheticClip> {
    synthesize_corpus(seed, n, &MotionSpec::new(cfg.frames, cfg.height, cfg.width)).unwrap()
}

pub fn codebook(cfg: &ModelConfig, corpus: &[SyntheticClip], dtype: DType) -> Codebook {
    Codebook::from_captions(&corpus_captions(corpus), cfg.min_freq, cfg.window, cfg.d_text, dtype).unwrap()
}

/// Each clip as a `(1, T, H, W, 3)` tensor.
pub fn tensors(corpus: &[SyntheticClip], dtype: DType) -> Vec<Tensor> {
    corpus.iter().map(|c| c.clip.to_tensor(dtype).unwrap()).collect()
}

/// Captions behind every fixture codebook. A handful of captions would give a
/// nearly complete co-occurrence graph, on which the projector maps every
/// word to the same point.
pub const CODEBOOK_CAPTIONS: usize = 32;

/// A model with a codebook from [`CODEBOOK_CAPTIONS`] synthetic captions and
/// the first `n_clips` clips of the same corpus.
pub fn toy_model(cfg: &ModelConfig, n_clips: usize, dtype: DType) -> (SweetTok, Vec<Tensor>) {
    let corpus = corpus(cfg, 0, n_clips.max(CODEBOOK_CAPTIONS));
    let cb = codebook(cfg, &corpus, dtype);
    (SweetTok::new(cfg, cb, dtype).unwrap(), tensors(&corpus[..n_clips], dtype))
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

#[track_caller]
pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "element {i}: {g} vs {w} (tol {tol})");
    }
}

/// Row-major `(rows, cols)` product of a row vector with a matrix.
pub fn vec_mat(x: &[f64], m: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, xv) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xv * m[r * cols + c];
        }
    }
    out
}

/// Captions whose vocabulary and co-occurrence graph are worked out by hand
/// in [`FIXTURE_EDGES`] (window 3: words at most two positions apart).
pub const FIXTURE_CAPTIONS: &str = "\
c1\tthe/OTHER red/ADJ ball/NOUN rolls/VERB quickly/ADV
c2\ta/OTHER blue/ADJ ball/NOUN bounces/VERB
c3\tred/ADJ cube/NOUN rolls/VERB slowly/ADV
";

/// `(word, POS, frequency)` in codebook order.
pub const FIXTURE_VOCAB: [(&str, &str, usize); 8] = [
    ("ball", "NOUN", 2),
    ("cube", "NOUN", 1),
    ("blue", "ADJ", 1),
    ("red", "ADJ", 2),
    ("bounces", "VERB", 1),
    ("rolls", "VERB", 2),
    ("quickly", "ADV", 1),
    ("slowly", "ADV", 1),
];

pub const FIXTURE_WINDOW: usize = 3;

/// Off-diagonal edges with `u < v`, indices into [`FIXTURE_VOCAB`].
pub const FIXTURE_EDGES: [(usize, usize); 12] = [
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (0, 6),
    (1, 3),
    (1, 5),
    (1, 7),
    (2, 4),
    (3, 5),
    (5, 6),
    (5, 7),
];

/// Pairs exactly `FIXTURE_WINDOW` positions apart, which must not connect.
pub const FIXTURE_NON_EDGES: [(usize, usize); 2] = [(3, 6), (3, 7)];

/// Dense `D^{-1/2} (A + I) D^{-1/2}` for `n` nodes.
pub fn dense_normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

fn mat_mul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..m {
                out[i * m + j] += av * b[p * m + j];
            }
        }
    }
    out
}

/// Scalar graph-convolution projector: two propagated ReLU layers, an affine
/// output, column centering and row normalization.
#[allow(clippy::too_many_arguments)]
pub fn gcn_oracle(
    x: &[f64],
    adj: &[f64],
    n: usize,
    w1: &[f64],
    w2: &[f64],
    w_out: &[f64],
    b_out: &[f64],
    d_text: usize,
    hidden: usize,
    d_latent: usize,
) -> Vec<f64> {
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let h1 = relu(mat_mul(adj, &mat_mul(x, w1, n, d_text, hidden), n, n, hidden));
    let h2 = relu(mat_mul(adj, &mat_mul(&h1, w2, n, hidden, hidden), n, n, hidden));
    let mut out = mat_mul(&h2, w_out, n, hidden, d_latent);
    for i in 0..n {
        for j in 0..d_latent {
            out[i * d_latent + j] += b_out[j];
        }
    }
    for j in 0..d_latent {
        let mean = (0..n).map(|i| out[i * d_latent + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i * d_latent + j] -= mean;
        }
    }
    for row in out.chunks_mut(d_latent) {
        let norm = (row.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Exhaustive nearest row of `book` (`n x d`) in `[lo, hi)`, lowest index on ties.
pub fn brute_nearest(z: &[f64], book: &[f64], d: usize, lo: usize, hi: usize) -> usize {
    let mut best = lo;
    let mut best_d = f64::INFINITY;
    for i in lo..hi {
        let mut dist = 0.0;
        for k in 0..d {
            let diff = z[k] - book[i * d + k];
            dist += diff * diff;
        }
        if dist < best_d {
            best_d = dist;
            best = i;
        }
    }
    best
}

/// Runs `quantize` over `n_tokens` random tokens against a random
/// `n_entries`-row codebook restricted to `span` and counts disagreements
/// with exhaustive search. With `lattice`, values are drawn from a coarse
/// grid so duplicate rows and equidistant ties are common.
pub fn quantize_mismatches(
    seed: u64,
    n_tokens: usize,
    n_entries: usize,
    d: usize,
    span: std::ops::Range<usize>,
    lattice: bool,
) -> usize {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, step: f64| -> Vec<f64> {
        (0..n)
            .map(|_| match lattice {
                true => rng.random_range(-3i32..=3) as f64 * step,
                false => rng.random_range(-1.0..1.0),
            })
            .collect()
    };
    let book = draw(n_entries * d, 1.0);
    let z = draw(n_tokens * d, 0.5);
    let dev = candle_core::Device::Cpu;
    let book_t = Tensor::from_vec(book.clone(), (n_entries, d), &dev).unwrap();
    let z_t = Tensor::from_vec(z.clone(), (1, n_tokens, d), &dev).unwrap();
    let q = sweettok::mlc::quantize(&z_t, &book_t, span.clone(), None).unwrap();
    q.indices
        .iter()
        .enumerate()
        .filter(|&(r, &got)| got as usize != brute_nearest(&z[r * d..(r + 1) * d], &book, d, span.start, span.end))
        .count()
}
