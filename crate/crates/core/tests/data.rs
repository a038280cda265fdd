use std::path::PathBuf;

use ffact::data::idx::parse_idx_images;
use ffact::data::toy::pixel_histogram;
use ffact::data::{generate_sequence, load_idx, make_toy_dataset, toy_shape, TransformKind, TransformSpec};
use ffact::tensor::ImageShape;
use proptest::prelude::*;

const HISTOGRAM_BINS: usize = 16;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Counts for 64 sprites at seed 7, written once with `FFACT_BLESS=1`.
#[test]
fn toy_pixel_histogram_matches_golden_fixture() {
    let images = make_toy_dataset::<f32>(7, 64, 16).unwrap();
    let hist = pixel_histogram(&images, HISTOGRAM_BINS);
    let text: String = hist.iter().map(|c| format!("{c}\n")).collect();
    let path = fixture("toy_histogram_seed7.txt");
    if std::env::var_os("FFACT_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden fixture present");
    assert_eq!(text, golden);
    assert_eq!(hist.iter().sum::<u64>(), 64 * 3 * 16 * 16);
}

#[test]
fn toy_dataset_is_reproducible_across_precisions() {
    let a = make_toy_dataset::<f64>(3, 5, 12).unwrap();
    let b = make_toy_dataset::<f32>(3, 5, 12).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(&p, &q)| (p as f32) == q));
    }
}

/// Byte-level reread of the first image, independent of the parser.
#[test]
fn real_mnist_file_when_available() {
    let Some(path) = std::env::var_os("FFACT_MNIST_IMAGES") else {
        eprintln!("FFACT_MNIST_IMAGES not set; skipping real-file check");
        return;
    };
    let images = load_idx::<f64>(&path).unwrap();
    assert_eq!(images.shape(), &[60000, 28, 28]);
    let raw = std::fs::read(&path).unwrap();
    for (i, &byte) in raw[16..16 + 784].iter().enumerate() {
        assert_eq!(images.data()[i], byte as f64 / 255.0);
    }
}

#[test]
fn idx_parse_agrees_with_manual_decode() {
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1];
    let pixels: Vec<u8> = (0..6).map(|i| (i * 50) as u8).collect();
    bytes.extend(&pixels);
    let a = parse_idx_images::<f32>(&bytes).unwrap();
    assert_eq!(a.shape(), &[2, 3, 1]);
    let manual: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    assert_eq!(a.data(), &manual[..]);
}

fn rectangle(n: usize, half_w: usize, half_h: usize) -> Vec<f64> {
    let c = n / 2;
    let mut img = vec![0.0; n * n];
    for y in c - half_h..c + half_h {
        for x in c - half_w..c + half_w {
            img[y * n + x] = 1.0;
        }
    }
    img
}

fn area(frame: &[f64]) -> usize {
    frame.iter().filter(|&&v| v >= 0.5).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_never_shrinks_a_centred_sprite(
        half_w in 1usize..5,
        half_h in 1usize..5,
        extent in 1.0f64..3.0,
        steps in 1usize..9,
    ) {
        let n = 16;
        let shape = ImageShape::new(1, n, n);
        let spec = TransformSpec::new(TransformKind::Scale, steps, extent).unwrap();
        let seq = generate_sequence(&rectangle(n, half_w, half_h), shape, &spec).unwrap();
        let areas: Vec<usize> = (0..=steps).map(|t| area(seq.frame(t))).collect();
        prop_assert!(areas.windows(2).all(|w| w[0] <= w[1]), "{areas:?}");
    }

    #[test]
    fn frames_stay_in_unit_range(
        seed in 0u64..500,
        kind in prop::sample::select(vec![TransformKind::Scale, TransformKind::Rotate, TransformKind::Hue]),
        frac in 0.0f64..1.0,
        steps in 1usize..9,
    ) {
        let extent = match kind {
            TransformKind::Scale => 1.0 + 2.0 * frac,
            TransformKind::Rotate => 180.0 * frac,
            TransformKind::Hue => 359.0 * frac,
        };
        let base = make_toy_dataset::<f64>(seed, 1, 12).unwrap().remove(0);
        let spec = TransformSpec::new(kind, steps, extent).unwrap();
        let seq = generate_sequence(&base, toy_shape(12), &spec).unwrap();
        prop_assert_eq!(seq.num_frames(), steps + 1);
        prop_assert!(seq.frames.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(seq.frame(0), &base[..]);
    }
}
