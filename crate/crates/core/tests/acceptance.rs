//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 10`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use candle_core::{Device, Var};
use common::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweettok::mlc::{build_graph, build_vocabulary, indices_to_words, quantize, GcnProjector, VqTerms};
use sweettok::nn::{mse, scalar, ParamStore};
use sweettok::patchify::{patchify_spatial, patchify_temporal};
use sweettok::training::{reconstruction_l2, run_ablation, Checkpoint, LossBreakdown};
use sweettok::videodata::{CaptionCorpus, PosTag};
use sweettok::{DType, Mode, ModelConfig, Strategy, SubBook, SweetTok, Tensor, TrainConfig, Trainer};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "paper-scale shapes and token count", budget: Duration::from_secs(60), run: shapes },
    Criterion { id: 2, name: "quantizer equals exhaustive search", budget: Duration::from_secs(60), run: quantizer_oracle },
    Criterion { id: 3, name: "commitment-loss stop-gradient semantics", budget: Duration::from_secs(60), run: stop_gradients },
    Criterion { id: 4, name: "end-to-end finite-difference gradients", budget: Duration::from_secs(300), run: gradient_check },
    Criterion { id: 5, name: "spatial/temporal decoupling isolation", budget: Duration::from_secs(60), run: isolation },
    Criterion { id: 6, name: "codebook partition soundness", budget: Duration::from_secs(60), run: partition },
    Criterion { id: 7, name: "two-clip overfit", budget: Duration::from_secs(900), run: overfit },
    Criterion { id: 8, name: "ablation ordering over three seeds", budget: Duration::from_secs(3600), run: ablation },
    Criterion { id: 9, name: "determinism and resumability", budget: Duration::from_secs(600), run: determinism },
    Criterion { id: 10, name: "codebook pipeline fixtures", budget: Duration::from_secs(60), run: fixtures },
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > c.budget => Err(format!("{d}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += usize::from(outcome.is_err());
        println!("{tag} [{:>2}] {}: {detail} ({:.1}s)", c.id, c.name, elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}

fn desk_codebook(cfg: &ModelConfig, seed: u64) -> (sweettok::Codebook, Vec<sweettok::videodata::SyntheticClip>) {
    let corpus = corpus(cfg, seed, CODEBOOK_CAPTIONS);
    (codebook(cfg, &corpus, DType::F32), corpus)
}

fn shapes() -> Outcome {
    let cfg = ModelConfig::paper();
    let (cb, corpus) = desk_codebook(&cfg, 0);
    let model = SweetTok::new(&cfg, cb, DType::F32).unwrap();
    let x = corpus[0].clip.to_tensor(DType::F32).unwrap();
    let s = patchify_spatial(&x.narrow(1, 0, 1).unwrap(), &model.kernel).unwrap();
    let t = patchify_temporal(&x.narrow(1, 1, cfg.frames - 1).unwrap(), &model.kernel).unwrap();
    let (_, st, sh, sw, _) = s.dims();
    let (_, tt, th, tw, _) = t.dims();
    let tokens = model.tokenize(&x).unwrap();
    check(
        (st, sh, sw) == (1, 32, 32)
            && (tt, th, tw) == (4, 32, 32)
            && tokens.spatial.len() == 256
            && tokens.temporal.len() == 1024
            && tokens.len() == 1280,
        format!(
            "{} tokens ({} spatial + {} temporal), grids {st}x{sh}x{sw} and {tt}x{th}x{tw}",
            tokens.len(),
            tokens.spatial.len(),
            tokens.temporal.len()
        ),
    )
}

fn quantizer_oracle() -> Outcome {
    let cases = [
        (21, 4096, 160, 3, 0..160, true),
        (22, 4096, 160, 3, 40..130, true),
        (23, 4096, 256, 16, 0..256, false),
    ];
    let mut tokens = 0;
    let mut mismatches = 0;
    for (seed, n, entries, d, span, lattice) in cases {
        mismatches += quantize_mismatches(seed, n, entries, d, span, lattice);
        tokens += n;
    }
    check(
        mismatches == 0,
        format!("{mismatches} mismatches over {tokens} tokens against 160- and 256-entry codebooks"),
    )
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central difference of `f` along each coordinate of `x`.
fn fd(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let base = flat(x);
    (0..base.len())
        .map(|i| {
            let at = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                f(&Tensor::from_vec(v, x.dims(), &Device::Cpu).unwrap())
            };
            (at(1e-4) - at(-1e-4)) / 2e-4
        })
        .collect()
}

fn stop_gradients() -> Outcome {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut randn = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    };
    let z = Var::from_tensor(&randn(&[2, 6, 4])).unwrap();
    let book = randn(&[12, 4]);
    let w = randn(&[4, 5]);
    let span = 0..12;
    let frozen = quantize(z.as_tensor(), &book, span.clone(), None).unwrap().freeze().unwrap();
    let q = |z: &Tensor| quantize(z, &book, span.clone(), Some(&frozen)).unwrap();

    // (a) codebook term against the tokens
    let term1 = |z: &Tensor| scalar(&VqTerms::of(z, &q(z)).unwrap().codebook).unwrap();
    let a = max_abs(fd(z.as_tensor(), term1));

    // (b) commitment term against the projector, on the toy model
    let (model, clips) = toy_model(&toy_cfg(), 1, DType::F64);
    let x = &clips[0];
    let codes = model.forward(x, None).unwrap().frozen().unwrap();
    let commitment = |m: &SweetTok| {
        let p = m.forward(x, Some(&codes)).unwrap();
        let s = VqTerms::of(&p.z_s, &p.q_s).unwrap().commitment;
        let t = VqTerms::of(p.z_t.as_ref().unwrap(), p.q_t.as_ref().unwrap()).unwrap().commitment;
        scalar(&(s + t).unwrap()).unwrap()
    };
    let mut b: f64 = 0.0;
    let projector: Vec<String> = model.params.names().filter(|n| n.starts_with("projector.")).cloned().collect();
    for name in &projector {
        let values = model.params.values(name).unwrap();
        for idx in [0, values.len() / 3, values.len() - 1] {
            model.params.set_element(name, idx, values[idx] + 1e-4).unwrap();
            let plus = commitment(&model);
            model.params.set_element(name, idx, values[idx] - 1e-4).unwrap();
            let minus = commitment(&model);
            model.params.set_element(name, idx, values[idx]).unwrap();
            b = b.max(((plus - minus) / 2e-4).abs());
        }
    }

    // (c) straight-through: dL/dz equals dL/dq for a nonlinear reconstruction loss
    let rec = |u: &Tensor| u.broadcast_matmul(&w).unwrap().tanh().unwrap().sqr().unwrap().sum_all().unwrap();
    let d_z = flat(rec(&q(z.as_tensor()).straight_through).backward().unwrap().get(z.as_tensor()).unwrap());
    let z_hat = Var::from_tensor(&q(z.as_tensor()).embeddings.detach()).unwrap();
    let d_q = flat(rec(z_hat.as_tensor()).backward().unwrap().get(z_hat.as_tensor()).unwrap());
    let c = max_abs(d_z.iter().zip(&d_q).map(|(u, v)| u - v));
    let c_fd = max_abs(fd(z.as_tensor(), |z| scalar(&rec(&q(z).straight_through)).unwrap()).iter().zip(&d_q).map(|(u, v)| u - v));

    check(
        a <= TOL && b <= TOL && c <= TOL && c_fd <= TOL,
        format!("(a) max |dT1/dz| {a:.1e}, (b) max |dT2/dF| {b:.1e}, (c) max |dL/dz - dL/dq| {c:.1e} analytic, {c_fd:.1e} numeric; tolerance {TOL:.0e}"),
    )
}

fn gradient_check() -> Outcome {
    let cfg = toy_cfg();
    let (model, clips) = toy_model(&cfg, 1, DType::F64);
    let x = &clips[0];
    let codes = model.forward(x, None).unwrap().frozen().unwrap();
    let loss = |m: &SweetTok| {
        let p = m.forward(x, Some(&codes)).unwrap();
        (mse(&p.recon, x).unwrap() + p.vq_loss(m.cfg.beta).unwrap()).unwrap()
    };
    let grads = loss(&model).backward().unwrap();
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut worst, mut nonzero, mut sampled) = (0.0f64, 0, 0);
    while nonzero < 16 || sampled < 24 {
        let name = names.choose(&mut rng).unwrap();
        let values = model.params.values(name).unwrap();
        let idx = rng.random_range(0..values.len());
        let analytic = grads
            .get(model.params.get(name).unwrap().as_tensor())
            .map_or(0.0, |g| flat(g)[idx]);
        model.params.set_element(name, idx, values[idx] + 1e-4).unwrap();
        let plus = scalar(&loss(&model)).unwrap();
        model.params.set_element(name, idx, values[idx] - 1e-4).unwrap();
        let minus = scalar(&loss(&model)).unwrap();
        model.params.set_element(name, idx, values[idx]).unwrap();
        let numeric = (plus - minus) / 2e-4;
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-7 {
            nonzero += 1;
            worst = worst.max((analytic - numeric).abs() / scale);
        } else if (analytic - numeric).abs() > 1e-9 {
            worst = f64::INFINITY;
        }
        sampled += 1;
    }
    check(
        worst < 1e-3,
        format!("{sampled} parameters sampled, {nonzero} with nonzero gradient; worst relative error {worst:.2e} (limit 1e-3)"),
    )
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn isolation() -> Outcome {
    let (model, clips) = toy_model(&toy_cfg(), 3, DType::F64);
    let x = &clips[0];
    let v_s = bits(&flat(&model.forward(x, None).unwrap().v_s_tilde.data));
    let temporal = model.temporal_param_names();
    let mut leaked = Vec::new();
    for name in &temporal {
        let values = model.params.values(name).unwrap();
        model.params.set_values(name, &values.iter().map(|v| v + 0.25).collect::<Vec<_>>()).unwrap();
        if bits(&flat(&model.forward(x, None).unwrap().v_s_tilde.data)) != v_s {
            leaked.push(name.clone());
        }
        model.params.set_values(name, &values).unwrap();
    }

    let before: Vec<Vec<u64>> = temporal.iter().map(|n| bits(&model.params.values(n).unwrap())).collect();
    let images: Vec<Tensor> = clips.iter().map(|c| c.narrow(1, 0, 1).unwrap()).collect();
    let tc = TrainConfig { total_steps: 10, warmup_steps: 2, quantizer_warmup: 4, ..TrainConfig::desk() };
    let mut trainer = Trainer::new(&tc, &model.params).unwrap();
    trainer.fit(&model, &images, 10, Mode::Image, |_| {}).unwrap();
    let moved = temporal
        .iter()
        .zip(&before)
        .filter(|(n, b)| bits(&model.params.values(n).unwrap()) != **b)
        .count();
    check(
        leaked.is_empty() && moved == 0,
        format!(
            "{} temporal tensors perturbed, {} changed the reference-frame decode; {moved} moved during 10 image-finetune steps",
            temporal.len(),
            leaked.len()
        ),
    )
}

fn partition() -> Outcome {
    let cfg = ModelConfig::desk();
    let corpus = corpus(&cfg, 3, 64);
    let cb = codebook(&cfg, &corpus, DType::F32);
    let model = SweetTok::new(&cfg, cb, DType::F32).unwrap();
    let (mut spatial, mut temporal, mut bad) = (0, 0, 0);
    for x in tensors(&corpus, DType::F32) {
        let t = model.tokenize(&x).unwrap();
        for e in indices_to_words(&t.spatial, SubBook::Spatial, &model.codebook).unwrap() {
            spatial += 1;
            bad += usize::from(!matches!(e.pos, PosTag::Noun | PosTag::Adjective));
        }
        for e in indices_to_words(&t.temporal, SubBook::Temporal, &model.codebook).unwrap() {
            temporal += 1;
            bad += usize::from(!matches!(e.pos, PosTag::Verb | PosTag::Adverb));
        }
    }
    check(
        bad == 0 && spatial == 64 * cfg.l_spatial && temporal == 64 * cfg.l_temporal,
        format!("{spatial} spatial and {temporal} temporal tokens over a 64-clip epoch, {bad} outside their POS classes"),
    )
}

fn overfit() -> Outcome {
    let cfg = ModelConfig::desk();
    let tc = TrainConfig::desk();
    let (cb, corpus) = desk_codebook(&cfg, 0);
    let clips = tensors(&corpus[..2], DType::F32);
    let model = SweetTok::new(&cfg, cb, DType::F32).unwrap();
    let l2_0 = reconstruction_l2(&model, &clips).unwrap();
    let mut trainer = Trainer::new(&tc, &model.params).unwrap();
    trainer.fit(&model, &clips, tc.total_steps, Mode::Video, |_| {}).unwrap();
    let l2 = reconstruction_l2(&model, &clips).unwrap();
    let psnr = -10.0 * l2.log10();
    check(
        l2 <= 0.1 * l2_0 && psnr >= 25.0,
        format!(
            "{} steps: L2 {l2_0:.4} -> {l2:.6} ({:.1}% of initial, limit 10%), PSNR {psnr:.2} dB (limit 25)",
            tc.total_steps,
            100.0 * l2 / l2_0
        ),
    )
}

fn ablation() -> Outcome {
    let steps = 400;
    let mut holds = 0;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let cfg = ModelConfig { init_seed: seed, ..ModelConfig::desk() };
        let tc = TrainConfig { seed, total_steps: steps, quantizer_warmup: steps * 2 / 5, ..TrainConfig::desk() };
        let (cb, corpus) = desk_codebook(&cfg, seed);
        let clips = tensors(&corpus[..4], DType::F32);
        let rows = run_ablation(&Strategy::ALL, &clips, &cb, &cfg, &tc, steps, seed).unwrap();
        let l2 = |s: Strategy| rows.iter().find(|r| r.strategy == s).unwrap().l2;
        let (d, c, ds) = (l2(Strategy::DecoupledQuery), l2(Strategy::CoupledQuery), l2(Strategy::Downsample));
        let ordered = d <= c && c <= ds;
        holds += usize::from(ordered);
        lines.push(format!("seed {seed}: {d:.4e} / {c:.4e} / {ds:.4e} {}", if ordered { "ok" } else { "out of order" }));
    }
    check(
        holds >= 2,
        format!("decoupled <= coupled <= downsample in {holds}/3 seeds (need 2); {}", lines.join("; ")),
    )
}

fn determinism() -> Outcome {
    let cfg = ModelConfig::desk();
    let tc = TrainConfig { total_steps: 30, warmup_steps: 5, quantizer_warmup: 10, seed: 9, ..TrainConfig::desk() };
    let (cb, corpus) = desk_codebook(&cfg, 1);
    let clips = tensors(&corpus[..3], DType::F32);
    let log = |e: Vec<LossBreakdown>| e.iter().map(LossBreakdown::log_line).collect::<Vec<_>>();
    let fresh = || SweetTok::new(&cfg, cb.clone(), DType::F32).unwrap();
    let params = |m: &SweetTok| m.params.names().map(|n| bits(&m.params.values(n).unwrap())).collect::<Vec<_>>();

    let run = || {
        let m = fresh();
        let mut t = Trainer::new(&tc, &m.params).unwrap();
        let l = log(t.fit(&m, &clips, 30, Mode::Video, |_| {}).unwrap());
        (params(&m), l)
    };
    let (pa, la) = run();
    let (pb, lb) = run();

    let m = fresh();
    let mut t = Trainer::new(&tc, &m.params).unwrap();
    let mut lr = log(t.fit(&m, &clips, 15, Mode::Video, |_| {}).unwrap());
    let bytes = t.checkpoint(&m.params).unwrap().to_bytes().unwrap();
    let m = fresh();
    let mut t = Trainer::new(&tc, &m.params).unwrap();
    t.restore(&Checkpoint::from_bytes(&bytes).unwrap(), &m.params).unwrap();
    lr.extend(log(t.fit(&m, &clips, 15, Mode::Video, |_| {}).unwrap()));
    let pr = params(&m);

    check(
        la == lb && pa == pb && la == lr && pa == pr,
        format!(
            "repeat run identical: {}; resume at 15 matches 30 uninterrupted steps: {} (loss logs and weights)",
            la == lb && pa == pb,
            la == lr && pa == pr
        ),
    )
}

fn fixtures() -> Outcome {
    let corpus = CaptionCorpus::parse(FIXTURE_CAPTIONS).unwrap();
    let vocab = build_vocabulary(&corpus, 1).unwrap();
    let got_vocab: Vec<(&str, &str, usize)> = vocab
        .entries()
        .iter()
        .map(|e| (e.word.as_str(), e.pos.as_str(), e.frequency))
        .collect();
    let vocab_ok = got_vocab == FIXTURE_VOCAB;

    let graph = build_graph(&corpus, &vocab, FIXTURE_WINDOW);
    let edges: Vec<(usize, usize)> = graph.edges().collect();
    let graph_ok = edges == FIXTURE_EDGES && FIXTURE_NON_EDGES.iter().all(|&(u, v)| !graph.has_edge(u, v));

    let (n, d_text, hidden, d_latent) = (8, 6, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x: Vec<f64> = (0..n * d_text).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ps = ParamStore::new(52, DType::F64);
    let proj = GcnProjector::new(&mut ps, "proj", d_text, hidden, d_latent).unwrap();
    let got = flat(
        &proj
            .forward(
                &Tensor::from_vec(x.clone(), (n, d_text), &Device::Cpu).unwrap(),
                &graph.normalized(DType::F64).unwrap(),
            )
            .unwrap(),
    );
    let p = |name: &str| ps.values(name).unwrap();
    let want = gcn_oracle(
        &x,
        &dense_normalized_adjacency(n, &FIXTURE_EDGES),
        n,
        &p("proj.w1.weight"),
        &p("proj.w2.weight"),
        &p("proj.out.weight"),
        &p("proj.out.bias"),
        d_text,
        hidden,
        d_latent,
    );
    let err = max_abs(got.iter().zip(&want).map(|(a, b)| a - b));
    check(
        vocab_ok && graph_ok && err <= 1e-6,
        format!(
            "vocabulary {} ({} entries), graph {} ({} edges, window-boundary pairs excluded), projection max error {err:.1e} (limit 1e-6)",
            if vocab_ok { "exact" } else { "differs" },
            vocab.len(),
            if graph_ok { "exact" } else { "differs" },
            edges.len()
        ),
    )
}
