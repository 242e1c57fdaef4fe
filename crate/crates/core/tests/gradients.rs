//! Stop-gradient semantics of the commitment loss and an end-to-end
//! finite-difference check of the analytic gradients.

mod common;

use candle_core::{Device, Var};
use common::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweettok::dqae::FrozenCodes;
use sweettok::mlc::{quantize, FrozenStream, VqTerms};
use sweettok::nn::{mse, scalar};
use sweettok::{DType, SweetTok, Tensor};

const EPS: f64 = 1e-4;
const BLOCKED_TOL: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Central difference of `f` in every coordinate of `x`.
fn fd_all(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let base = flat(x);
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += EPS;
            minus[i] -= EPS;
            let t = |v: Vec<f64>| Tensor::from_vec(v, x.dims(), &Device::Cpu).unwrap();
            (f(&t(plus)) - f(&t(minus))) / (2.0 * EPS)
        })
        .collect()
}

fn grad_values(grads: &candle_core::backprop::GradStore, t: &Tensor) -> Option<Vec<f64>> {
    grads.get(t).map(flat)
}

struct VqSetup {
    z: Var,
    book: Var,
    frozen: FrozenStream,
    span: std::ops::Range<usize>,
}

fn vq_setup(seed: u64) -> VqSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Var::from_tensor(&randn(&mut rng, &[2, 6, 4])).unwrap();
    let book = Var::from_tensor(&randn(&mut rng, &[12, 4])).unwrap();
    let span = 2..10;
    let frozen = quantize(z.as_tensor(), book.as_tensor(), span.clone(), None)
        .unwrap()
        .freeze()
        .unwrap();
    VqSetup { z, book, frozen, span }
}

#[test]
fn codebook_term_sends_no_gradient_to_tokens() {
    let s = vq_setup(1);
    let term = |z: &Tensor, book: &Tensor| {
        let q = quantize(z, book, s.span.clone(), Some(&s.frozen)).unwrap();
        VqTerms::of(z, &q).unwrap().codebook
    };
    let loss = term(s.z.as_tensor(), s.book.as_tensor());
    let grads = loss.backward().unwrap();
    if let Some(g) = grad_values(&grads, s.z.as_tensor()) {
        assert!(g.iter().all(|v| v.abs() <= BLOCKED_TOL), "{g:?}");
    }
    let fd = fd_all(s.z.as_tensor(), |z| scalar(&term(z, s.book.as_tensor())).unwrap());
    assert!(fd.iter().all(|v| v.abs() <= BLOCKED_TOL), "{fd:?}");
    // the codebook side does move
    let g_book = grad_values(&grads, s.book.as_tensor()).unwrap();
    assert!(g_book.iter().any(|v| v.abs() > 1e-3));
    let fd_book = fd_all(s.book.as_tensor(), |b| scalar(&term(s.z.as_tensor(), b)).unwrap());
    assert_close(&g_book, &fd_book, 1e-7);
}

#[test]
fn commitment_term_sends_no_gradient_to_codebook() {
    let s = vq_setup(2);
    let term = |z: &Tensor, book: &Tensor| {
        let q = quantize(z, book, s.span.clone(), Some(&s.frozen)).unwrap();
        VqTerms::of(z, &q).unwrap().commitment
    };
    let grads = term(s.z.as_tensor(), s.book.as_tensor()).backward().unwrap();
    if let Some(g) = grad_values(&grads, s.book.as_tensor()) {
        assert!(g.iter().all(|v| v.abs() <= BLOCKED_TOL));
    }
    let fd = fd_all(s.book.as_tensor(), |b| scalar(&term(s.z.as_tensor(), b)).unwrap());
    assert!(fd.iter().all(|v| v.abs() <= BLOCKED_TOL), "{fd:?}");
    let g_z = grad_values(&grads, s.z.as_tensor()).unwrap();
    let fd_z = fd_all(s.z.as_tensor(), |z| scalar(&term(z, s.book.as_tensor())).unwrap());
    assert_close(&g_z, &fd_z, 1e-7);
}

fn commitment(pass: &sweettok::dqae::ForwardPass) -> Tensor {
    let s = VqTerms::of(&pass.z_s, &pass.q_s).unwrap().commitment;
    let t = VqTerms::of(pass.z_t.as_ref().unwrap(), pass.q_t.as_ref().unwrap())
        .unwrap()
        .commitment;
    (s + t).unwrap()
}

#[test]
fn commitment_term_sends_no_gradient_to_projector() {
    let (model, clips) = toy_model(&toy_cfg(), 1, DType::F64);
    let x = &clips[0];
    let frozen = model.forward(x, None).unwrap().frozen().unwrap();
    // live and frozen passes block the same path
    for codes in [None, Some(&frozen)] {
        let grads = commitment(&model.forward(x, codes).unwrap()).backward().unwrap();
        let mut encoder_moves = false;
        for (name, var) in model.params.iter() {
            let g = grad_values(&grads, var.as_tensor());
            if name.starts_with("projector.") {
                if let Some(g) = g {
                    assert!(g.iter().all(|v| v.abs() <= BLOCKED_TOL), "{name}");
                }
            } else if name.contains("encoder") {
                encoder_moves |= g.is_some_and(|g| g.iter().any(|v| v.abs() > 1e-6));
            }
        }
        assert!(encoder_moves);
    }
    let loss = |m: &SweetTok| scalar(&commitment(&m.forward(x, Some(&frozen)).unwrap())).unwrap();
    for name in ["projector.w1.weight", "projector.w2.weight", "projector.out.weight", "projector.out.bias"] {
        let values = model.params.values(name).unwrap();
        for idx in [0, values.len() / 2, values.len() - 1] {
            model.params.set_element(name, idx, values[idx] + EPS).unwrap();
            let plus = loss(&model);
            model.params.set_element(name, idx, values[idx] - EPS).unwrap();
            let minus = loss(&model);
            model.params.set_element(name, idx, values[idx]).unwrap();
            let fd = (plus - minus) / (2.0 * EPS);
            assert!(fd.abs() <= BLOCKED_TOL, "{name}[{idx}]: {fd}");
        }
    }
}

#[test]
fn straight_through_passes_reconstruction_gradient_unchanged() {
    let s = vq_setup(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = randn(&mut rng, &[4, 5]);
    let c = randn(&mut rng, &[5]);
    // a nonlinear stand-in for the decoder and reconstruction loss
    let rec = |u: &Tensor| {
        u.broadcast_matmul(&w)
            .unwrap()
            .tanh()
            .unwrap()
            .broadcast_mul(&c)
            .unwrap()
            .sum_all()
            .unwrap()
    };
    let st = |z: &Tensor| {
        quantize(z, s.book.as_tensor(), s.span.clone(), Some(&s.frozen))
            .unwrap()
            .straight_through
    };
    let grads = rec(&st(s.z.as_tensor())).backward().unwrap();
    let d_z = grad_values(&grads, s.z.as_tensor()).unwrap();

    let z_hat = Var::from_tensor(&st(s.z.as_tensor()).detach()).unwrap();
    // the forward value is the selected code itself
    let codes = quantize(s.z.as_tensor(), s.book.as_tensor(), s.span.clone(), Some(&s.frozen))
        .unwrap()
        .embeddings;
    assert_close(&flat(z_hat.as_tensor()), &flat(&codes), 1e-15);
    let d_zhat = grad_values(&rec(z_hat.as_tensor()).backward().unwrap(), z_hat.as_tensor()).unwrap();
    assert_close(&d_z, &d_zhat, BLOCKED_TOL);
    let fd = fd_all(s.z.as_tensor(), |z| scalar(&rec(&st(z))).unwrap());
    assert_close(&d_z, &fd, 1e-7);
}

#[test]
fn model_reconstruction_gradient_is_identical_at_tokens_and_codes() {
    let (model, clips) = toy_model(&toy_cfg(), 1, DType::F64);
    let x = &clips[0];
    let pass = model.forward(x, None).unwrap();
    let projected = model.project_codebook().unwrap().detach();
    let rec = |u_s: &Tensor, u_t: &Tensor| {
        let v_s = model.decode_spatial(u_s).unwrap();
        let v = model.decode_temporal(&v_s, u_t).unwrap();
        mse(&model.pixel_decode_raw(&v_s, &v).unwrap(), x).unwrap()
    };
    // the reconstruction loss through straight-through, as a function of z
    let z_s = Var::from_tensor(&pass.z_s.detach()).unwrap();
    let z_t = Var::from_tensor(&pass.z_t.as_ref().unwrap().detach()).unwrap();
    let frozen = pass.frozen().unwrap();
    let st = |z: &Tensor, f: &FrozenStream, book| quantize(z, &projected, model.codebook.span(book), Some(f)).unwrap();
    let q_s = st(z_s.as_tensor(), &frozen.spatial, sweettok::SubBook::Spatial);
    let q_t = st(z_t.as_tensor(), frozen.temporal.as_ref().unwrap(), sweettok::SubBook::Temporal);
    let grads = rec(&q_s.straight_through, &q_t.straight_through).backward().unwrap();
    // the same loss as a function of the codes it actually decodes
    let zh_s = Var::from_tensor(&q_s.embeddings.detach()).unwrap();
    let zh_t = Var::from_tensor(&q_t.embeddings.detach()).unwrap();
    let grads_hat = rec(zh_s.as_tensor(), zh_t.as_tensor()).backward().unwrap();
    for (z, zh) in [(&z_s, &zh_s), (&z_t, &zh_t)] {
        let d_z = grad_values(&grads, z.as_tensor()).unwrap();
        let d_zh = grad_values(&grads_hat, zh.as_tensor()).unwrap();
        assert!(d_zh.iter().any(|v| v.abs() > 1e-9));
        assert_close(&d_z, &d_zh, BLOCKED_TOL);
    }
}

fn total_loss(model: &SweetTok, x: &Tensor, frozen: &FrozenCodes) -> Tensor {
    let pass = model.forward(x, Some(frozen)).unwrap();
    (mse(&pass.recon, x).unwrap() + pass.vq_loss(model.cfg.beta).unwrap()).unwrap()
}

/// Relative error with a floor below which both gradients count as zero.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[test]
fn end_to_end_gradients_match_central_differences() {
    let cfg = toy_cfg();
    let (model, clips) = toy_model(&cfg, 1, DType::F64);
    let x = &clips[0];
    let frozen = model.forward(x, None).unwrap().frozen().unwrap();
    let grads = total_loss(&model, x, &frozen).backward().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut checked = Vec::new();
    while checked.len() < 24 {
        let name = names.choose(&mut rng).unwrap().clone();
        let values = model.params.values(&name).unwrap();
        let idx = rng.random_range(0..values.len());
        let analytic = grads
            .get(model.params.get(&name).unwrap().as_tensor())
            .map(|g| flat(g)[idx])
            .unwrap_or(0.0);
        model.params.set_element(&name, idx, values[idx] + EPS).unwrap();
        let plus = scalar(&total_loss(&model, x, &frozen)).unwrap();
        model.params.set_element(&name, idx, values[idx] - EPS).unwrap();
        let minus = scalar(&total_loss(&model, x, &frozen)).unwrap();
        model.params.set_element(&name, idx, values[idx]).unwrap();
        let numeric = (plus - minus) / (2.0 * EPS);
        checked.push((name, idx, analytic, numeric));
    }
    let nonzero = checked.iter().filter(|c| c.2.abs() > 1e-7).count();
    assert!(nonzero >= 16, "only {nonzero} sampled gradients are nonzero");
    for (name, idx, a, n) in &checked {
        assert!(rel_err(*a, *n) < 1e-3, "{name}[{idx}]: analytic {a:e} numeric {n:e}");
    }
}
