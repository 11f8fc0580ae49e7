use dancemeld::hvqvae::{changed_span, Hvqvae, HvqvaeConfig, LatentCodes};
use dancemeld::latent::{
    apply_edits, apply_ops, dispersion, fix_bottom_vary_top, fix_top_replace_bottom, transfer_codes, CodebookSizes,
    CodesFile, EditKind, EditOp, Level,
};
use dancemeld::motion::{MotionSequence, Skeleton};
use dancemeld::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZES: CodebookSizes = CodebookSizes { top: 8, bottom: 16 };

fn tiny_model(seed: u64) -> Hvqvae<f64> {
    let cfg = HvqvaeConfig {
        width: 16,
        code_dim: 8,
        bottom_codes: 16,
        top_codes: 8,
        ..HvqvaeConfig::small(4)
    };
    Hvqvae::new(cfg, seed).unwrap()
}

fn random_codes(units: usize, rng: &mut ChaCha8Rng) -> LatentCodes {
    LatentCodes {
        top: (0..units).map(|_| rng.random_range(0..SIZES.top)).collect(),
        bottom: (0..2 * units).map(|_| rng.random_range(0..SIZES.bottom)).collect(),
    }
}

fn unit(c: &LatentCodes, k: usize) -> LatentCodes {
    LatentCodes {
        top: vec![c.top[k]],
        bottom: c.bottom[2 * k..2 * k + 2].to_vec(),
    }
}

#[test]
fn empty_op_list_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_codes(6, &mut rng);
    assert_eq!(apply_ops(&c, &[], SIZES).unwrap(), c);
    let model = tiny_model(0);
    let (codes, motion) = apply_edits(&c, &[], &model).unwrap();
    assert_eq!(codes, c);
    assert_eq!(motion.frames().data(), model.decode_codes(&c).unwrap().frames().data());
}

#[test]
fn delete_then_reinsert_restores() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = random_codes(10, &mut rng);
    for k in [0, 4, 9] {
        let ops = [EditOp::delete_units(k, k + 1), EditOp::insert_units(k, unit(&c, k))];
        let mid = apply_ops(&c, &ops[..1], SIZES).unwrap();
        assert_eq!(mid.top.len(), 9);
        assert_eq!(mid.bottom.len(), 18);
        assert_eq!(apply_ops(&c, &ops, SIZES).unwrap(), c);
    }
}

#[test]
fn operation_semantics() {
    let c = LatentCodes {
        top: vec![0, 1, 2, 3],
        bottom: vec![10, 11, 12, 13, 14, 15, 0, 1],
    };
    let r = apply_ops(&c, &[EditOp::replace(Level::Top, 1, vec![7])], SIZES).unwrap();
    assert_eq!(r.top, vec![0, 7, 2, 3]);
    assert_eq!(r.bottom, c.bottom);
    let r = apply_ops(&c, &[EditOp::replace(Level::Bottom, 3, vec![5, 6])], SIZES).unwrap();
    assert_eq!(r.bottom, vec![10, 11, 12, 5, 6, 15, 0, 1]);

    let r = apply_ops(&c, &[EditOp::reorder_units(1, vec![2, 0, 1])], SIZES).unwrap();
    assert_eq!(r.top, vec![0, 3, 1, 2]);
    assert_eq!(r.bottom, vec![10, 11, 0, 1, 12, 13, 14, 15]);

    let donor = LatentCodes {
        top: vec![4, 4, 4, 4],
        bottom: vec![9; 8],
    };
    let r = apply_ops(&c, &[EditOp::swap(Level::Top, 0, 2, donor.clone())], SIZES).unwrap();
    assert_eq!(r.top, vec![4, 4, 2, 3]);
    assert_eq!(r.bottom, c.bottom);
    let r = apply_ops(&c, &[EditOp::swap(Level::Bottom, 3, 4, donor)], SIZES).unwrap();
    assert_eq!(r.top, c.top);
    assert_eq!(r.bottom, vec![10, 11, 12, 13, 14, 15, 9, 9]);

    let units = LatentCodes {
        top: vec![5, 6],
        bottom: vec![1, 2, 3, 4],
    };
    let r = apply_ops(&c, &[EditOp::insert_units(4, units)], SIZES).unwrap();
    assert_eq!(r.top, vec![0, 1, 2, 3, 5, 6]);
    assert_eq!(r.bottom[8..], [1, 2, 3, 4]);
}

#[test]
fn precondition_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = random_codes(4, &mut rng);
    let err = |op: EditOp| apply_ops(&c, &[op], SIZES).unwrap_err();
    assert!(matches!(err(EditOp::replace(Level::Top, 4, vec![1])), Error::IndexOutOfRange(_)));
    assert!(matches!(err(EditOp::replace(Level::Top, 0, vec![8])), Error::IndexOutOfRange(_)));
    assert!(matches!(err(EditOp::replace(Level::Bottom, 7, vec![16])), Error::IndexOutOfRange(_)));
    assert!(matches!(err(EditOp::delete_units(3, 5)), Error::IndexOutOfRange(_)));
    assert!(matches!(err(EditOp::insert_units(5, unit(&c, 0))), Error::IndexOutOfRange(_)));
    let mut odd_delete = EditOp::delete_units(0, 1);
    odd_delete.target.level = Level::Bottom;
    assert!(matches!(err(odd_delete), Error::RatioViolation(_)));
    let bad_units = LatentCodes {
        top: vec![1],
        bottom: vec![1],
    };
    assert!(matches!(err(EditOp::insert_units(0, bad_units)), Error::RatioViolation(_)));
    let mut short_replace = EditOp::replace(Level::Top, 0, vec![1]);
    short_replace.target.range = [0, 2];
    assert!(matches!(err(short_replace), Error::RatioViolation(_)));
    assert!(matches!(err(EditOp::reorder_units(0, vec![0, 5])), Error::IndexOutOfRange(_)));
    let bad = LatentCodes {
        top: vec![1, 2],
        bottom: vec![1, 2, 3],
    };
    assert!(matches!(apply_ops(&bad, &[], SIZES), Err(Error::RatioViolation(_))));
}

#[test]
fn replace_gesture_json_schema() {
    let json = r#"{"kind":"replace","target":{"level":"top","range":[3,4]},"payload":[5]}"#;
    let op: EditOp = serde_json::from_str(json).unwrap();
    assert_eq!(op, EditOp::replace(Level::Top, 3, vec![5]));
    assert_eq!(serde_json::to_string(&op).unwrap(), json);
    let swap: EditOp = serde_json::from_str(
        r#"{"kind":"swap_bottom","target":{"level":"top","range":[0,1]},"payload":{"top":[1],"bottom":[2,3]}}"#,
    )
    .unwrap();
    assert_eq!(swap.kind, EditKind::SwapBottom);
    let del: EditOp = serde_json::from_str(r#"{"kind":"delete","target":{"level":"bottom","range":[2,4]}}"#).unwrap();
    assert_eq!(del.payload, None);
}

fn arb_op(units: usize) -> impl Strategy<Value = EditOp> {
    let u = units.max(1);
    prop_oneof![
        (0..=u, 0usize..8, 0usize..16, 0usize..16).prop_map(|(k, t, b0, b1)| EditOp::insert_units(
            k,
            LatentCodes {
                top: vec![t],
                bottom: vec![b0, b1]
            }
        )),
        (0..u).prop_map(|k| EditOp::delete_units(k, k + 1)),
        (0..u, 0usize..8).prop_map(|(k, j)| EditOp::replace(Level::Top, k, vec![j])),
        (0..2 * u, 0usize..16).prop_map(|(k, j)| EditOp::replace(Level::Bottom, k, vec![j])),
        (0..u).prop_map(|k| EditOp::reorder_units(k, vec![0])),
    ]
}

proptest! {
    #[test]
    fn every_successful_op_list_keeps_the_ratio(seed in any::<u64>(), ops in prop::collection::vec(arb_op(6), 0..12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_codes(6, &mut rng);
        let snapshot = c.clone();
        // Ops may fail against the evolving length; apply one by one.
        let mut cur = c.clone();
        for op in &ops {
            match apply_ops(&cur, std::slice::from_ref(op), SIZES) {
                Ok(next) => {
                    prop_assert_eq!(next.bottom.len(), 2 * next.top.len());
                    cur = next;
                }
                Err(e) => prop_assert!(matches!(e, Error::IndexOutOfRange(_) | Error::InvalidArgument(_)), "{e}"),
            }
        }
        prop_assert_eq!(&c, &snapshot);
        // Same input, same output.
        let a = apply_ops(&c, &ops, SIZES).ok();
        let b = apply_ops(&c, &ops, SIZES).ok();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn replacing_a_unit_is_local() {
    let model = tiny_model(5);
    let reach = model.decoder_reach(4, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = random_codes(24, &mut rng);
    let base = model.decode_codes(&c).unwrap();
    for k in [0, 7, 23] {
        let ops = [
            EditOp::replace(Level::Top, k, vec![(c.top[k] + 1) % 8]),
            EditOp::replace(Level::Bottom, 2 * k, vec![(c.bottom[2 * k] + 5) % 16, (c.bottom[2 * k + 1] + 1) % 16]),
        ];
        let (_, out) = apply_edits(&c, &ops, &model).unwrap();
        let (lo, hi) = reach.unit_window(k, base.len());
        for f in (0..base.len()).filter(|f| *f < lo || *f > hi) {
            for (a, b) in base.frame(f).iter().zip(out.frame(f)) {
                assert!((a - b).abs() < 1e-6, "unit {k}, frame {f}");
            }
        }
        let (a, b) = changed_span(&base, &out, 0.0).expect("edit changes the motion");
        assert!(a >= lo && b <= hi);
    }
}

#[test]
fn transfer_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src = random_codes(5, &mut rng);
    let donor = random_codes(5, &mut rng);
    assert_eq!(transfer_codes(&src, &src, Level::Top).unwrap(), src);
    let t = transfer_codes(&src, &donor, Level::Top).unwrap();
    assert_eq!(t.top, donor.top);
    assert_eq!(t.bottom, src.bottom);
    assert_eq!(transfer_codes(&t, &donor, Level::Bottom).unwrap(), donor);
    let short = random_codes(4, &mut rng);
    assert!(matches!(transfer_codes(&src, &short, Level::Top), Err(Error::LengthMismatch(_))));
}

#[test]
fn dispersion_matches_a_translation_oracle() {
    let skel = Skeleton::humanoid();
    let a = MotionSequence::<f64>::rest(16, [0.0, 0.9, 0.0]);
    let d = [0.3, -0.1, 0.2];
    let b = a.translated(d);
    // Every joint is shifted by d: centroid in the middle, squared distance |d|^2 / 4.
    let want = d.iter().map(|x| x * x).sum::<f64>() / 4.0;
    let got = dispersion(&[a.clone(), b], &skel).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert_eq!(dispersion(&[a.clone(), a.clone(), a.clone()], &skel).unwrap(), 0.0);
    assert!(matches!(dispersion(&[a], &skel), Err(Error::TooFewSamples { .. })));
}

#[test]
fn fixed_bottom_studies() {
    let model = tiny_model(8);
    let skel = Skeleton::humanoid();
    let tops = vec![vec![1, 2, 3, 4]; 3];
    let (motions, d) = fix_bottom_vary_top(5, &tops, &model, &skel).unwrap();
    assert_eq!(motions.len(), 3);
    assert_eq!(d, 0.0);
    let varied = vec![vec![1, 2, 3, 4], vec![0, 0, 7, 7], vec![6, 5, 4, 3]];
    let (motions, d) = fix_bottom_vary_top(5, &varied, &model, &skel).unwrap();
    assert_eq!(motions.len(), 3);
    assert!(d > 0.0);
    assert!(matches!(
        fix_bottom_vary_top(5, &tops[..1], &model, &skel),
        Err(Error::TooFewSamples { .. })
    ));
}

#[test]
fn replacing_bottom_codes_keeps_top_codes() {
    let model = tiny_model(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut m = MotionSequence::<f64>::rest(64, [0.0, 0.9, 0.0]);
    for i in 0..64 {
        for v in m.frame_mut(i) {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let r = fix_top_replace_bottom(&m, 3, &model).unwrap();
    assert_eq!(r.modified.top, r.original.top);
    assert!(r.modified.bottom.iter().all(|&b| b == 3));
    assert_eq!(r.motion.len(), 64);
    // Unmodified codes decode to the plain reconstruction.
    let (_, same) = apply_edits(&r.original, &[], &model).unwrap();
    assert_eq!(same.frames().data(), model.reconstruct(&m).unwrap().frames().data());
}

#[test]
fn codes_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("codes.json");
    let c = LatentCodes {
        top: vec![1, 2],
        bottom: vec![3, 4, 5, 6],
    };
    let f = CodesFile::new(&c, 512);
    f.save(&p).unwrap();
    let back = CodesFile::load(&p).unwrap();
    assert_eq!(back, f);
    assert_eq!(back.codes(), c);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
    for key in ["version", "top", "bottom", "fps", "window"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    std::fs::write(&p, r#"{"version":1,"top":[1],"bottom":[1],"fps":60,"window":512}"#).unwrap();
    assert!(matches!(CodesFile::load(&p), Err(Error::RatioViolation(_))));
}
