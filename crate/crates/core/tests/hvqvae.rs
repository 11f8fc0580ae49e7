use std::sync::Arc;

use dancemeld::autodiff::{max_relative_error, numeric_gradient, Graph};
use dancemeld::dataset::{generate_synthetic_corpus, Corpus, SynthCorpusConfig, WindowSpec};
use dancemeld::hvqvae::{
    aux_loss, changed_span, modality_alignment_loss, total_loss, vq_loss, Codebook, ContactMask, Hvqvae,
    HvqvaeConfig, LatentCodes, LossWeights, VqInputs, VqTrainConfig, VqTrainer,
};
use dancemeld::motion::{detect_foot_contacts, forward_kinematics, ContactThresholds, FkOp, FootContactLabels, MotionSequence, Skeleton, JOINT_COUNT, MOTION_DIM};
use dancemeld::nn::ParamStore;
use dancemeld::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> HvqvaeConfig {
    HvqvaeConfig {
        width: 8,
        code_dim: 4,
        bottom_codes: 16,
        top_codes: 8,
        music_dim: 6,
        ..HvqvaeConfig::default()
    }
}

fn tiny_model(seed: u64) -> Hvqvae<f64> {
    Hvqvae::new(tiny_config(), seed).unwrap()
}

/// Rest pose plus small noise on every channel.
fn noisy_motion(n: usize, seed: u64) -> MotionSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MotionSequence::<f64>::rest(n, [0.0, 0.9, 0.0]);
    for i in 0..n {
        for v in m.frame_mut(i) {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    m
}

fn brute_force_nearest(h: &[f64], table: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, e) in table.iter().enumerate() {
        let d: f64 = h.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

#[test]
fn quantizer_matches_brute_force_on_1000_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table: Vec<Vec<f64>> = (0..64).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let cb = Codebook::new(Tensor::new(&[64, 16], table.concat())).unwrap();
    let inputs: Vec<Vec<f64>> = (0..1000).map(|_| (0..16).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let (idx, q) = cb.quantize(&Tensor::new(&[1000, 16], inputs.concat())).unwrap();
    for (i, h) in inputs.iter().enumerate() {
        let k = brute_force_nearest(h, &table);
        assert_eq!(idx[i], k, "input {i}");
        assert_eq!(q.row(i), table[k].as_slice());
    }
}

#[test]
fn quantizer_breaks_exact_ties_toward_the_lowest_index() {
    let cb = Codebook::new(Tensor::new(&[3, 2], vec![2.0, 0.0, -2.0, 0.0, 0.0, 2.0])).unwrap();
    // (0, 0) is at distance 2 from all three entries.
    let (idx, _) = cb.quantize(&Tensor::new(&[1, 2], vec![0.0, 0.0])).unwrap();
    assert_eq!(idx, vec![0]);
    let (idx, _) = cb.quantize(&Tensor::new(&[1, 2], vec![-1.0, 1.0])).unwrap();
    assert_eq!(idx, vec![1]);
}

proptest! {
    #[test]
    fn quantization_is_idempotent(seed in 0u64..1000, rows in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = Codebook::new(Tensor::<f64>::randn(&[12, 5], 1.0, &mut rng)).unwrap();
        let h = Tensor::randn(&[rows, 5], 1.0, &mut rng);
        let (i1, q1) = cb.quantize(&h).unwrap();
        let (i2, q2) = cb.quantize(&q1).unwrap();
        prop_assert_eq!(i1, i2);
        prop_assert_eq!(q1, q2);
    }

    #[test]
    fn code_rates_hold_for_every_multiple_of_eight(k in 1usize..12) {
        let model = tiny_model(1);
        let n = 8 * k;
        let x = noisy_motion(n, k as u64);
        let enc = model.encode_full(&x).unwrap();
        prop_assert_eq!(enc.features.h_b.shape(), &[n / 4, 4]);
        prop_assert_eq!(enc.features.h_t.shape(), &[n / 8, 4]);
        prop_assert_eq!(enc.h_b_prime.shape(), &[n / 4, 8]);
        prop_assert_eq!(enc.codes.bottom.len(), n / 4);
        prop_assert_eq!(enc.codes.top.len(), n / 8);
        prop_assert_eq!(model.decode_codes(&enc.codes).unwrap().len(), n);
    }

    #[test]
    fn loss_terms_are_non_negative(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skel = Skeleton::humanoid();
        let fk = Arc::new(FkOp::new(&skel));
        let mut g = Graph::<f64>::standalone();
        let x = g.constant(Tensor::randn(&[1, 6, MOTION_DIM], 1.0, &mut rng));
        let x_hat = g.leaf(Tensor::randn(&[1, 6, MOTION_DIM], 1.0, &mut rng));
        let v = VqInputs {
            x,
            x_hat,
            projected: g.leaf(Tensor::randn(&[1, 3, 4], 1.0, &mut rng)),
            e_b: g.leaf(Tensor::randn(&[1, 3, 4], 1.0, &mut rng)),
            h_t: g.leaf(Tensor::randn(&[1, 2, 4], 1.0, &mut rng)),
            e_t: g.leaf(Tensor::randn(&[1, 2, 4], 1.0, &mut rng)),
        };
        let w = LossWeights::default();
        let vq = vq_loss(&mut g, v, &w);
        let labels = FootContactLabels {
            labels: (0..6 * 4).map(|_| rng.random_range(0..2u8)).collect(),
            frames: 6,
            foot_joints: skel.foot_joints.clone(),
        };
        let mask = ContactMask::from_labels(&[labels]).unwrap();
        let aux = aux_loss(&mut g, x, x_hat, &mask, &fk, &w).unwrap();
        let hm = g.leaf(Tensor::randn(&[1, 2, 4], 1.0, &mut rng));
        let ma = modality_alignment_loss(&mut g, v.e_t, hm).unwrap();
        let total = total_loss(&mut g, vq.total, aux.total, Some(ma), &w);
        for t in [vq.bottom_codebook, vq.bottom_commit, vq.top_codebook, vq.top_commit, vq.reconstruction,
                  aux.pos, aux.vel, aux.acc, aux.contact, ma, total] {
            prop_assert!(g.value(t).item() >= 0.0);
        }
    }
}

#[test]
fn rates_for_a_512_frame_window_at_full_width() {
    let model = Hvqvae::<f32>::new(HvqvaeConfig::default(), 0).unwrap();
    let x = noisy_motion(512, 0).cast::<f32>();
    let enc = model.encode_full(&x).unwrap();
    assert_eq!(enc.features.h_b.shape(), &[128, 512]);
    assert_eq!(enc.features.h_t.shape(), &[64, 512]);
    assert_eq!(enc.h_b_prime.shape(), &[128, 1024]);
    assert_eq!(enc.codes.bottom.len(), 128);
    assert_eq!(enc.codes.top.len(), 64);
    let (e_t, e_b) = model.quantized(&enc.codes).unwrap();
    assert_eq!(e_t.shape(), &[64, 512]);
    assert_eq!(e_b.shape(), &[128, 512]);
    let y = model.decode(&e_t, &e_b).unwrap();
    assert_eq!(y.frames().shape(), &[512, MOTION_DIM]);
}

#[test]
fn minimal_and_invalid_lengths() {
    let model = tiny_model(0);
    let f = model.encode(&noisy_motion(8, 1)).unwrap();
    assert_eq!((f.h_b.shape()[0], f.h_t.shape()[0]), (2, 1));
    assert!(matches!(model.encode(&noisy_motion(511, 1)), Err(Error::BadLength(511))));
}

#[test]
fn hb_prime_puts_the_upsampled_top_first() {
    let mut model = tiny_model(2);
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.name(id).starts_with("dec_t.") {
            let z = Tensor::zeros(model.store.get(id).shape());
            model.store.set(id, z);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h_b = Tensor::<f64>::randn(&[128, 4], 1.0, &mut rng);
    let e_t = Tensor::<f64>::zeros(&[64, 4]);
    let hbp = model.form_hb_prime(&h_b, &e_t).unwrap();
    assert_eq!(hbp.shape(), &[128, 8]);
    for r in 0..128 {
        assert_eq!(&hbp.row(r)[..4], &[0.0; 4]);
        assert_eq!(&hbp.row(r)[4..], h_b.row(r));
    }
    assert!(matches!(
        model.form_hb_prime(&h_b, &Tensor::zeros(&[63, 4])),
        Err(Error::LengthMismatch(_))
    ));
}

fn set_param(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) {
    let id = store.id(name).unwrap();
    store.set(id, t);
}

#[test]
fn bottom_quantization_through_a_selecting_projection() {
    let mut model = tiny_model(4);
    let d = 4;
    let mut w = vec![0.0; 2 * d * d];
    for c in 0..d {
        w[(d + c) * d + c] = 1.0;
    }
    set_param(&mut model.store, "proj.weight", Tensor::new(&[2 * d, d], w));
    set_param(&mut model.store, "proj.bias", Tensor::zeros(&[d]));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h_b = Tensor::<f64>::randn(&[10, d], 1.0, &mut rng);
    let mut table = Tensor::<f64>::randn(&[16, d], 3.0, &mut rng);
    let planted: Vec<usize> = (0..10).map(|i| (i * 7 + 3) % 16).collect();
    for (i, &k) in planted.iter().enumerate() {
        table.row_mut(k).copy_from_slice(h_b.row(i));
    }
    set_param(&mut model.store, "codebook.bottom", table.clone());
    let junk = Tensor::<f64>::randn(&[10, d], 1.0, &mut rng);
    let mut hbp = Vec::new();
    for i in 0..10 {
        hbp.extend_from_slice(junk.row(i));
        hbp.extend_from_slice(h_b.row(i));
    }
    let (idx, e_b) = model.quantize_bottom(&Tensor::new(&[10, 2 * d], hbp)).unwrap();
    let oracle: Vec<usize> = (0..10)
        .map(|i| brute_force_nearest(h_b.row(i), &(0..16).map(|k| table.row(k).to_vec()).collect::<Vec<_>>()))
        .collect();
    assert_eq!(idx, oracle);
    assert_eq!(e_b.shape(), &[10, d]);

    // zero input with a zero entry at index 7
    let mut table = Tensor::<f64>::randn(&[16, d], 1.0, &mut rng);
    for v in table.data_mut() {
        *v += 5.0;
    }
    table.row_mut(7).fill(0.0);
    set_param(&mut model.store, "codebook.bottom", table);
    let (idx, _) = model.quantize_bottom(&Tensor::zeros(&[6, 2 * d])).unwrap();
    assert_eq!(idx, vec![7; 6]);
    assert!(matches!(
        model.quantize_bottom(&Tensor::zeros(&[6, d])),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn decode_is_deterministic_and_checks_lengths() {
    let model = tiny_model(5);
    let codes = LatentCodes {
        top: vec![1, 2, 3, 4],
        bottom: vec![0, 1, 2, 3, 4, 5, 6, 7],
    };
    let a = model.decode_codes(&codes).unwrap();
    let b = model.decode_codes(&codes).unwrap();
    assert_eq!(a.len(), 32);
    assert_eq!(a, b);
    let (e_t, e_b) = model.quantized(&codes).unwrap();
    assert!(matches!(
        model.decode(&e_t, &e_b.slice_first(0, 7)),
        Err(Error::LengthMismatch(_))
    ));
}

#[test]
fn code_changes_stay_inside_the_measured_receptive_field() {
    let model = tiny_model(6);
    let reach = model.decoder_reach(4, 1);
    // Must be finite and much smaller than the test sequence.
    assert!(reach.top_before > 0 && reach.top_before < 64, "{reach:?}");
    assert!(reach.top_after < 64 && reach.bottom_before < 64 && reach.bottom_after < 64);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..5 {
        let codes = LatentCodes {
            top: (0..24).map(|_| rng.random_range(0..8)).collect(),
            bottom: (0..48).map(|_| rng.random_range(0..16)).collect(),
        };
        let base = model.decode_codes(&codes).unwrap();
        let k = rng.random_range(0..24);
        let mut edited = codes.clone();
        edited.top[k] = (edited.top[k] + 1) % 8;
        edited.bottom[2 * k] = (edited.bottom[2 * k] + 3) % 16;
        let out = model.decode_codes(&edited).unwrap();
        let (lo, hi) = reach.unit_window(k, base.len());
        for f in (0..base.len()).filter(|f| *f < lo || *f > hi) {
            for (a, b) in base.frame(f).iter().zip(out.frame(f)) {
                assert!((a - b).abs() < 1e-6, "trial {trial}, unit {k}, frame {f}");
            }
        }
        if let Some((a, b)) = changed_span(&base, &out, 0.0) {
            assert!(a >= lo && b <= hi);
        }
    }
}

// ---------- losses ----------

fn leaf(g: &mut Graph<'_, f64>, shape: &[usize], v: Vec<f64>) -> dancemeld::autodiff::Var {
    g.leaf(Tensor::new(shape, v))
}

#[test]
fn vq_loss_of_a_perfect_autoencoder_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::standalone();
    let x = Tensor::randn(&[1, 8, 5], 1.0, &mut rng);
    let h = Tensor::randn(&[1, 2, 4], 1.0, &mut rng);
    let p = Tensor::randn(&[1, 4, 4], 1.0, &mut rng);
    let v = VqInputs {
        x: g.constant(x.clone()),
        x_hat: g.leaf(x),
        projected: g.leaf(p.clone()),
        e_b: g.leaf(p),
        h_t: g.leaf(h.clone()),
        e_t: g.leaf(h),
    };
    let t = vq_loss(&mut g, v, &LossWeights::default());
    assert_eq!(g.value(t.total).item(), 0.0);
}

#[test]
fn vq_loss_with_a_top_offset_is_one_plus_beta_times_delta_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::<f64>::standalone();
    let e_t = Tensor::randn(&[1, 3, 4], 1.0, &mut rng);
    let delta = Tensor::randn(&[1, 3, 4], 0.3, &mut rng);
    let h_t = e_t.zip_map(&delta, |a, b| a + b);
    let x = Tensor::randn(&[1, 8, 5], 1.0, &mut rng);
    let p = Tensor::randn(&[1, 6, 4], 1.0, &mut rng);
    let v = VqInputs {
        x: g.constant(x.clone()),
        x_hat: g.leaf(x),
        projected: g.leaf(p.clone()),
        e_b: g.leaf(p),
        h_t: g.leaf(h_t),
        e_t: g.leaf(e_t),
    };
    let w = LossWeights::default();
    let t = vq_loss(&mut g, v, &w);
    let mean_sq = delta.data().iter().map(|d| d * d).sum::<f64>() / delta.len() as f64;
    assert!((g.value(t.total).item() - (1.0 + 0.02) * mean_sq).abs() < 1e-12);
}

/// Codebook plus weighted commitment term with the stop-gradient arguments frozen at `sg`.
fn codebook_and_commit(h: &[f64], e: &[f64], h_sg: &[f64], e_sg: &[f64], weight: f64) -> f64 {
    let n = h.len() as f64;
    let cb: f64 = h_sg.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let commit: f64 = e_sg.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    cb + weight * commit
}

#[test]
fn stop_gradient_placement_matches_frozen_argument_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h0 = Tensor::<f64>::randn(&[1, 3, 4], 1.0, &mut rng);
    let e0 = Tensor::<f64>::randn(&[1, 3, 4], 1.0, &mut rng);
    let beta = LossWeights::default().beta;
    let mut g = Graph::<f64>::standalone();
    let x = Tensor::zeros(&[1, 8, 2]);
    let p = Tensor::zeros(&[1, 6, 4]);
    let v = VqInputs {
        x: g.constant(x.clone()),
        x_hat: g.constant(x),
        projected: g.constant(p.clone()),
        e_b: g.constant(p),
        h_t: g.leaf(h0.clone()),
        e_t: g.leaf(e0.clone()),
    };
    let t = vq_loss(&mut g, v, &LossWeights::default());
    let grads = g.backward(t.total);
    let gh: Vec<f64> = grads.get(v.h_t).unwrap().data().to_vec();
    let ge: Vec<f64> = grads.get(v.e_t).unwrap().data().to_vec();
    let nh = numeric_gradient(&h0, 1e-6, |h| codebook_and_commit(h.data(), e0.data(), h0.data(), e0.data(), beta));
    let ne = numeric_gradient(&e0, 1e-6, |e| codebook_and_commit(h0.data(), e.data(), h0.data(), e0.data(), beta));
    assert!(max_relative_error(&gh, &nh, 1e-8) < 1e-6);
    assert!(max_relative_error(&ge, &ne, 1e-8) < 1e-6);

    // Only the codebook term reaches e_t; only the commit term reaches h_t.
    let mut g = Graph::<f64>::standalone();
    let h = g.leaf(h0.clone());
    let e = g.leaf(e0.clone());
    let hs = g.detach(h);
    let cb = g.mse(hs, e);
    let grads = g.backward(cb);
    assert!(grads.get(h).is_none_or(|t| t.max_abs() == 0.0));
}

fn encoder_param(name: &str) -> bool {
    ["enc_b.", "enc_t.", "dec_t.", "proj."].iter().any(|p| name.starts_with(p))
}

/// Gradients of the codebook terms (first and third) for every parameter.
fn codebook_term_grads(model: &Hvqvae<f64>, x: &Tensor<f64>) -> Vec<(String, Option<Tensor<f64>>)> {
    let mut g = Graph::new(&model.store);
    let xv = g.constant(x.clone());
    let f = model.forward(&mut g, xv, None);
    let w = LossWeights::default();
    let t = vq_loss(&mut g, VqInputs::from_forward(xv, &f), &w);
    let s = g.add(t.bottom_codebook, t.top_codebook);
    let grads = g.backward(s);
    let h_grads = [grads.get(f.h_t).cloned(), grads.get(f.projected).cloned(), grads.get(f.h_b).cloned()];
    for h in h_grads.into_iter().flatten() {
        assert!(h.max_abs() <= 1e-8, "encoder output received codebook-term gradient");
    }
    let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
    names.into_iter().zip(grads.into_param_grads()).collect()
}

#[test]
fn codebook_terms_never_reach_the_encoders() {
    let model = tiny_model(8);
    let x = noisy_motion(16, 2).frames().clone().reshape(&[1, 16, MOTION_DIM]);
    let base = codebook_term_grads(&model, &x);
    for (name, grad) in &base {
        if encoder_param(name) {
            assert!(grad.as_ref().is_none_or(|t| t.max_abs() <= 1e-8), "{name}");
        }
    }
    // Perturbing the codebooks leaves that (zero) encoder gradient unchanged.
    let mut shifted = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for cb in ["codebook.top", "codebook.bottom"] {
        let id = shifted.store.id(cb).unwrap();
        let mut t = shifted.store.get(id).clone();
        for v in t.data_mut() {
            *v += rng.random_range(-1e-4..1e-4);
        }
        shifted.store.set(id, t);
    }
    let moved = codebook_term_grads(&shifted, &x);
    for ((name, a), (_, b)) in base.iter().zip(&moved) {
        if encoder_param(name) {
            let za = a.as_ref().map_or(0.0, |t| t.max_abs());
            let zb = b.as_ref().map_or(0.0, |t| t.max_abs());
            assert!((za - zb).abs() <= 1e-8, "{name}");
        }
    }
    // The codebooks do receive the gradient of those terms, and it matches
    // finite differences with the code assignment held fixed.
    let (top_name, top_grad) = base.iter().find(|(n, _)| n == "codebook.top").unwrap();
    let top_grad = top_grad.as_ref().expect("top codebook gradient");
    assert!(top_grad.max_abs() > 0.0, "{top_name}");
    let id = model.store.id("codebook.top").unwrap();
    let table = model.store.get(id).clone();
    let (h_t, idx) = {
        let mut g = Graph::new(&model.store);
        let xv = g.constant(x.clone());
        let f = model.forward(&mut g, xv, None);
        (g.value(f.h_t).clone(), f.top_idx)
    };
    let numeric = numeric_gradient(&table, 1e-6, |tb| {
        let d = tb.last_dim();
        let mut s = 0.0;
        for (r, &k) in idx.iter().enumerate() {
            for c in 0..d {
                s += (h_t.data()[r * d + c] - tb.row(k)[c]).powi(2);
            }
        }
        s / h_t.len() as f64
    });
    assert!(max_relative_error(top_grad.data(), &numeric, 1e-8) < 1e-5);
}

fn fk_flat(m: &MotionSequence<f64>) -> Vec<f64> {
    forward_kinematics(m, &Skeleton::humanoid()).tensor().data().to_vec()
}

fn all_contact(n: usize) -> ContactMask<f64> {
    let skel = Skeleton::humanoid();
    ContactMask::from_labels(&[FootContactLabels {
        labels: vec![1; n * skel.foot_joints.len()],
        frames: n,
        foot_joints: skel.foot_joints.clone(),
    }])
    .unwrap()
}

fn aux_values(x: &MotionSequence<f64>, x_hat: &MotionSequence<f64>, mask: &ContactMask<f64>) -> [f64; 5] {
    let n = x.len();
    let fk = Arc::new(FkOp::new(&Skeleton::humanoid()));
    let mut g = Graph::<f64>::standalone();
    let xv = g.constant(x.frames().clone().reshape(&[1, n, MOTION_DIM]));
    let xh = g.leaf(x_hat.frames().clone().reshape(&[1, n, MOTION_DIM]));
    let t = aux_loss(&mut g, xv, xh, mask, &fk, &LossWeights::default()).unwrap();
    [t.pos, t.vel, t.acc, t.contact, t.total].map(|v| g.value(v).item())
}

#[test]
fn aux_loss_zero_case_and_root_shift() {
    // Contacts come from x; a held pose has planted feet.
    let x = MotionSequence::<f64>::rest(12, [0.2, 0.9, -0.1]);
    let skel = Skeleton::humanoid();
    let labels = detect_foot_contacts(&forward_kinematics(&x, &skel), &skel, ContactThresholds::default()).unwrap();
    assert!(labels.labels.contains(&1));
    let mask = ContactMask::from_labels(&[labels]).unwrap();
    assert_eq!(aux_values(&x, &x, &mask), [0.0; 5]);

    let c = [0.1, -0.2, 0.05];
    let shifted = x.translated(c);
    let [pos, vel, acc, contact, _] = aux_values(&x, &shifted, &mask);
    // Every joint moves by c: mean over N x 24 x 3 entries.
    let expected = c.iter().map(|v| v * v).sum::<f64>() / 3.0;
    assert!((pos - expected).abs() < 1e-12, "{pos} vs {expected}");
    assert!(vel.abs() < 1e-12 && acc.abs() < 1e-12 && contact.abs() < 1e-12);
}

#[test]
fn aux_loss_matches_hand_computed_stance_fixture() {
    // Ten-frame stance with every foot labelled in contact; the prediction
    // slides the whole body 0.1 m per frame along x.
    let n = 10;
    let x = MotionSequence::<f64>::rest(n, [0.0, 0.9, 0.0]);
    let mut slide = x.clone();
    for i in 0..n {
        slide.set_translation(i, [0.1 * i as f64, 0.9, 0.0]);
    }
    let mask = all_contact(n);
    let [pos, vel, acc, contact, total] = aux_values(&x, &slide, &mask);

    let skel = Skeleton::humanoid();
    let feet = &skel.foot_joints;
    let pa = fk_flat(&x);
    let pb = fk_flat(&slide);
    let oracle_pos = pa.iter().zip(&pb).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pa.len() as f64;
    let mut s = 0.0;
    for i in 0..n - 1 {
        for &j in feet {
            for c in 0..3 {
                let d = pb[((i + 1) * JOINT_COUNT + j) * 3 + c] - pb[(i * JOINT_COUNT + j) * 3 + c];
                s += d * d;
            }
        }
    }
    let oracle_contact = s / ((n - 1) * feet.len() * 3) as f64;
    // nine steps of 0.1 m in one of three coordinates for each foot joint
    assert!((oracle_contact - 0.01 / 3.0).abs() < 1e-12);
    // root x velocity 0.1 in one of 147 channels, zero acceleration
    let oracle_vel = 0.01 / MOTION_DIM as f64;
    assert!((pos - oracle_pos).abs() < 1e-6);
    assert!((vel - oracle_vel).abs() < 1e-6);
    assert!(acc.abs() < 1e-6);
    assert!((contact - oracle_contact).abs() < 1e-6);
    assert!((total - (oracle_pos + oracle_vel + oracle_contact)).abs() < 1e-6);
}

#[test]
fn aux_loss_acceleration_uses_the_n_minus_one_normaliser() {
    // x_hat differs from x by a bump of height h on frame 2 of the root x
    // channel. Second differences: +h, -2h, +h at steps 0..3.
    let n = 6;
    let h = 0.3;
    let x = MotionSequence::<f64>::rest(n, [0.0, 0.9, 0.0]);
    let mut y = x.clone();
    y.frame_mut(2)[0] += h;
    let [_, vel, acc, _, _] = aux_values(&x, &y, &all_contact(n));
    let oracle_vel = 2.0 * h * h / ((n - 1) * MOTION_DIM) as f64;
    let oracle_acc = 6.0 * h * h / ((n - 1) * MOTION_DIM) as f64;
    assert!((vel - oracle_vel).abs() < 1e-12);
    assert!((acc - oracle_acc).abs() < 1e-12, "{acc} vs {oracle_acc}");
}

#[test]
fn aux_loss_needs_three_frames() {
    let x = noisy_motion(8, 1).slice(0, 2);
    let fk = Arc::new(FkOp::new(&Skeleton::humanoid()));
    let mut g = Graph::<f64>::standalone();
    let xv = g.constant(x.frames().clone().reshape(&[1, 2, MOTION_DIM]));
    let mask = all_contact(2);
    assert!(matches!(
        aux_loss(&mut g, xv, xv, &mask, &fk, &LossWeights::default()),
        Err(Error::SequenceTooShort { need: 3, got: 2 })
    ));
}

#[test]
fn modality_alignment_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let e = Tensor::<f64>::randn(&[1, 4, 3], 1.0, &mut rng);
    let delta = Tensor::<f64>::randn(&[1, 4, 3], 0.5, &mut rng);
    let mut g = Graph::<f64>::standalone();
    let ev = g.leaf(e.clone());
    let same = g.leaf(e.clone());
    let shifted = g.leaf(e.zip_map(&delta, |a, b| a - b));
    let zero = g.leaf(Tensor::zeros(&[1, 4, 3]));
    let l0 = modality_alignment_loss(&mut g, ev, same).unwrap();
    let l1 = modality_alignment_loss(&mut g, ev, shifted).unwrap();
    let l2 = modality_alignment_loss(&mut g, ev, zero).unwrap();
    let ms = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
    assert_eq!(g.value(l0).item(), 0.0);
    assert!((g.value(l1).item() - ms(&delta)).abs() < 1e-12);
    assert!((g.value(l2).item() - ms(&e)).abs() < 1e-12);
    let short = g.leaf(Tensor::zeros(&[1, 3, 3]));
    assert!(matches!(modality_alignment_loss(&mut g, ev, short), Err(Error::LengthMismatch(_))));
}

#[test]
fn total_loss_weights() {
    let w = LossWeights::default();
    assert_eq!((w.alpha, w.beta, w.gamma, w.phi, w.psi, w.lambda_aux, w.lambda_ma), (0.02, 0.02, 1.0, 1.0, 1.0, 1.0, 0.1));
    assert_eq!(w.total(0.0, 0.0, 0.0), 0.0);
    assert!((w.total(2.0, 3.0, 10.0) - 6.0).abs() < 1e-15);
    let mut g = Graph::<f64>::standalone();
    let (a, b, c) = (leaf(&mut g, &[], vec![2.0]), leaf(&mut g, &[], vec![3.0]), leaf(&mut g, &[], vec![10.0]));
    let t = total_loss(&mut g, a, b, Some(c), &w);
    assert!((g.value(t).item() - 6.0).abs() < 1e-15);
}

#[test]
fn total_gradient_is_the_weighted_sum_of_component_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let skel = Skeleton::humanoid();
    let fk = Arc::new(FkOp::new(&skel));
    let n = 6;
    let x = noisy_motion(n, 4);
    let xh0 = noisy_motion(n, 5).frames().clone().reshape(&[1, n, MOTION_DIM]);
    let mask = ContactMask::from_labels(&[FootContactLabels {
        labels: (0..n * 4).map(|_| rng.random_range(0..2u8)).collect(),
        frames: n,
        foot_joints: skel.foot_joints.clone(),
    }])
    .unwrap();
    let w = LossWeights {
        gamma: 0.7,
        phi: 0.3,
        psi: 2.0,
        lambda_aux: 1.5,
        ..LossWeights::default()
    };
    let eval = |xh: &Tensor<f64>, which: usize| -> (f64, Vec<f64>) {
        let mut g = Graph::<f64>::standalone();
        let xv = g.constant(x.frames().clone().reshape(&[1, n, MOTION_DIM]));
        let xl = g.leaf(xh.clone());
        let t = aux_loss(&mut g, xv, xl, &mask, &fk, &w).unwrap();
        let out = [t.pos, t.vel, t.acc, t.contact, t.total][which];
        let grad = g.backward(out).get(xl).unwrap().data().to_vec();
        (g.value(out).item(), grad)
    };
    let weights = [1.0, w.gamma, w.phi, w.psi];
    let (_, total) = eval(&xh0, 4);
    let mut combined = vec![0.0; total.len()];
    for (k, wk) in weights.iter().enumerate() {
        let (_, gk) = eval(&xh0, k);
        for (c, v) in combined.iter_mut().zip(gk) {
            *c += wk * v;
        }
    }
    assert!(max_relative_error(&total, &combined, 1e-10) < 1e-9);
    let numeric = numeric_gradient(&xh0, 1e-6, |xh| eval(xh, 4).0);
    assert!(max_relative_error(&total, &numeric, 1e-7) < 1e-4);
}

// ---------- training ----------

fn tiny_corpus() -> Corpus {
    generate_synthetic_corpus(&SynthCorpusConfig {
        seed: 3,
        clips: 5,
        frames_per_clip: 128,
        music_dim: 6,
        ..SynthCorpusConfig::default()
    })
    .unwrap()
}

fn tiny_train_config() -> VqTrainConfig {
    VqTrainConfig {
        model: tiny_config(),
        window: WindowSpec { length: 64, stride: 32 },
        epochs: 2,
        batch_size: 4,
        lr: 1e-3,
        seed: 11,
        ..VqTrainConfig::default()
    }
}

#[test]
fn training_is_reproducible_and_resumes_exactly() {
    let corpus = tiny_corpus();
    let mut a = VqTrainer::<f64>::new(&corpus, tiny_train_config()).unwrap();
    let mut b = VqTrainer::<f64>::new(&corpus, tiny_train_config()).unwrap();
    let la = a.run_epoch().unwrap();
    let lb = b.run_epoch().unwrap();
    assert_eq!(la.loss, lb.loss);
    assert!(la.loss.total.is_finite() && la.top_perplexity >= 1.0);

    let bytes = b.checkpoint().to_bytes();
    let ckpt = dancemeld::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = VqTrainer::<f64>::resume(&corpus, &ckpt).unwrap();
    let next_a = a.run_epoch().unwrap();
    let next_r = resumed.run_epoch().unwrap();
    assert_eq!(next_a.loss, next_r.loss);
    for ((n, x), (_, y)) in a.model.store.iter().zip(resumed.model.store.iter()) {
        assert_eq!(x, y, "{n}");
    }
}

#[test]
fn model_checkpoint_round_trip_decodes_identically() {
    let corpus = tiny_corpus();
    let mut t = VqTrainer::<f32>::new(&corpus, tiny_train_config()).unwrap();
    t.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vq.ckpt");
    t.model.save(&path).unwrap();
    let back = Hvqvae::<f32>::load(&path).unwrap();
    let codes = LatentCodes {
        top: vec![0, 1, 2, 3],
        bottom: vec![3, 2, 1, 0, 5, 6, 7, 8],
    };
    assert_eq!(t.model.decode_codes(&codes).unwrap(), back.decode_codes(&codes).unwrap());
    assert_eq!(back.config, t.model.config);
}

#[test]
fn divergence_aborts_with_a_checkpoint() {
    let corpus = tiny_corpus();
    let cfg = VqTrainConfig {
        lr: 1e30,
        epochs: 20,
        ..tiny_train_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vq.ckpt");
    let mut t = VqTrainer::<f32>::new(&corpus, cfg).unwrap();
    let err = t.train(Some(&path), |_| {}).unwrap_err();
    assert!(matches!(err, Error::DivergenceDetected { .. }), "{err}");
    assert!(path.exists());
}
