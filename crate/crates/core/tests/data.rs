//! Manifest scanning, PNG I/O and rain synthesis.

use jdnet_core::data::{load_manifest, load_png, save_png, synthesize_rain, Dataset, Image, PairPattern, RainSynthConfig, Range};
use jdnet_core::Error;

fn gradient(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let (u, v) = (x as f32 / (w - 1) as f32, y as f32 / (h - 1) as f32);
        [0.1 + 0.6 * u, 0.1 + 0.6 * v, 0.4]
    })
}

#[test]
fn manifest_pairs_files_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient(16, 12);
    save_png(&img, &dir.path().join("rain-001.png")).unwrap();
    save_png(&img, &dir.path().join("norain-001.png")).unwrap();
    save_png(&img, &dir.path().join("rain-002.png")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();

    let m = load_manifest(dir.path(), &PairPattern::default()).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.pairs[0].id, "001");
    assert_eq!(m.warnings().len(), 1);
    let data = Dataset::from_manifest(&m).unwrap();
    assert_eq!((data.pairs[0].width(), data.pairs[0].height()), (16, 12));
    assert_eq!(data.pairs[0].rainy, load_png(&dir.path().join("rain-001.png")).unwrap());
    assert!(data.pairs[0].rainy.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
}

#[test]
fn manifest_is_sorted_and_honours_custom_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient(8, 8);
    for id in ["b", "c", "a"] {
        save_png(&img, &dir.path().join(format!("{id}_in.png"))).unwrap();
        save_png(&img, &dir.path().join(format!("{id}_gt.png"))).unwrap();
    }
    let pattern: PairPattern = "{id}_in.png:{id}_gt.png".parse().unwrap();
    let m = load_manifest(dir.path(), &pattern).unwrap();
    let ids: Vec<&str> = m.pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn empty_directory_has_no_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_manifest(dir.path(), &PairPattern::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("no pairs found"), "{err}");
    assert!(load_manifest(&dir.path().join("missing"), &PairPattern::default()).is_err());
}

#[test]
fn mismatched_pair_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_png(&gradient(8, 8), &dir.path().join("rain-1.png")).unwrap();
    save_png(&gradient(8, 10), &dir.path().join("norain-1.png")).unwrap();
    let m = load_manifest(dir.path(), &PairPattern::default()).unwrap();
    assert!(Dataset::from_manifest(&m).is_err());
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let clean = gradient(64, 64);
    let cfg = RainSynthConfig { seed: 42, ..Default::default() };
    let a = synthesize_rain(&clean, &cfg).unwrap();
    let b = synthesize_rain(&clean, &cfg).unwrap();
    assert_eq!(a.rainy.data, b.rainy.data);
    assert_ne!(a.rainy.data, clean.data);
    let other = synthesize_rain(&clean, &RainSynthConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.rainy.data, other.rainy.data);
}

#[test]
fn no_streaks_or_zero_intensity_is_identity() {
    let clean = gradient(32, 24);
    let none = RainSynthConfig { streak_count: Range::fixed(0), ..Default::default() };
    assert_eq!(synthesize_rain(&clean, &none).unwrap().rainy, clean);
    let faint = RainSynthConfig { intensity: Range::fixed(0.0), ..Default::default() };
    assert_eq!(synthesize_rain(&clean, &faint).unwrap().rainy, clean);
}

#[test]
fn synthetic_dataset_is_reproducible() {
    let cfg = RainSynthConfig { seed: 7, ..Default::default() };
    let a = Dataset::synthetic(3, 24, 16, &cfg).unwrap();
    let b = Dataset::synthetic(3, 24, 16, &cfg).unwrap();
    assert_eq!(a.pairs, b.pairs);
    let ids: Vec<&str> = a.pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["001", "002", "003"]);
    let batches = a.epoch_batches::<f32>(1, 1, 2, 16).unwrap();
    assert_eq!(batches.len(), 2);
    assert_eq!(batches[0].0.shape().n, 2);
    assert_eq!(batches[1].0.shape().n, 1);
    assert_eq!(batches, a.epoch_batches::<f32>(1, 1, 2, 16).unwrap());
}
