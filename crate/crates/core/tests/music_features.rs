use dancemeld::music::{
    extract_beats, load_precomputed_features, save_features, synth_click_features, MusicFeatureSequence, MUSIC_FPS,
};
use dancemeld::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn header(n: u32, d: u32) -> Vec<u8> {
    let mut b = b"DMFT".to_vec();
    for w in [1u32, n, d, 60] {
        b.extend_from_slice(&w.to_le_bytes());
    }
    b
}

#[test]
fn zero_payload_loads_as_zero_array() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.dmft");
    let mut bytes = header(512, 4800);
    bytes.resize(bytes.len() + 512 * 4800 * 4, 0);
    std::fs::write(&path, bytes).unwrap();
    let m = load_precomputed_features(&path).unwrap();
    assert_eq!(m.features().shape(), &[512, 4800]);
    assert!(m.features().data().iter().all(|&v| v == 0.0));
}

#[test]
fn save_then_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.dmft");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = MusicFeatureSequence::new(Tensor::<f32>::randn(&[37, 11], 3.0, &mut rng)).unwrap();
    save_features(&path, &m).unwrap();
    let back = load_precomputed_features(&path).unwrap();
    let bits = |t: &MusicFeatureSequence<f32>| t.features().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&m), bits(&back));
}

#[test]
fn truncated_payload_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dmft");
    let mut bytes = header(4, 4);
    bytes.resize(bytes.len() + 15 * 4, 0);
    std::fs::write(&path, bytes).unwrap();
    let err = load_precomputed_features(&path).unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");
}

#[test]
fn missing_file_is_an_io_error_with_path() {
    let err = load_precomputed_features(std::path::Path::new("/nonexistent/x.dmft")).unwrap_err();
    assert_eq!(err.kind(), "IoError");
    assert!(err.to_string().contains("/nonexistent/x.dmft"));
}

#[test]
fn click_beats_are_recovered_within_one_frame() {
    for (bpm, seed) in [(120.0, 1), (90.0, 2), (150.0, 3), (60.0, 4), (200.0, 5)] {
        let (m, truth) = synth_click_features(bpm, 8.0, 64, seed).unwrap();
        let found = extract_beats(&m).frames(MUSIC_FPS);
        let truth = truth.frames(MUSIC_FPS);
        assert_eq!(found.len(), truth.len(), "bpm {bpm}: {found:?} vs {truth:?}");
        for (a, b) in found.iter().zip(&truth) {
            assert!(a.abs_diff(*b) <= 1, "bpm {bpm}: {a} vs {b}");
        }
    }
}

#[test]
fn full_width_click_features_keep_their_beats() {
    let (m, truth) = synth_click_features(120.0, 2.0, 4800, 9).unwrap();
    assert_eq!(m.dim(), 4800);
    assert_eq!(extract_beats(&m).frames(MUSIC_FPS), truth.frames(MUSIC_FPS));
}

fn delayed(m: &MusicFeatureSequence<f32>, k: usize) -> MusicFeatureSequence<f32> {
    let d = m.dim();
    let mut data = vec![0f32; k * d];
    data.extend_from_slice(m.features().data());
    MusicFeatureSequence::new(Tensor::new(&[m.len() + k, d], data)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn beat_extraction_is_shift_equivariant(k in 1usize..40, spacing in 12usize..40, count in 1usize..6) {
        let n = 20 + spacing * count + 10;
        let mut t = Tensor::<f32>::zeros(&[n, 3]);
        for b in 0..count {
            let f = 20 + b * spacing;
            for (i, row) in (f..(f + 4).min(n)).enumerate() {
                t.row_mut(row)[0] = 0.5f32.powi(i as i32);
            }
        }
        let m = MusicFeatureSequence::new(t).unwrap();
        let base = extract_beats(&m).frames(MUSIC_FPS);
        let shifted = extract_beats(&delayed(&m, k)).frames(MUSIC_FPS);
        prop_assert_eq!(shifted, base.iter().map(|f| f + k).collect::<Vec<_>>());
    }
}
