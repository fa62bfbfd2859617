use super::*;
use crate::metrics::segment_pixels;
use crate::rng::seeded;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn pixel(s: &Sample, x: usize, y: usize) -> [f64; 3] {
    let d = &s.image.data()[(y * s.width() + x) * 3..][..3];
    [d[0], d[1], d[2]]
}

fn dist_px(x: usize, y: usize, t: &LineSegment, e: usize) -> f64 {
    // Dense sampling along the segment stands in for the closed form.
    let p = [x as f64 + 0.5, y as f64 + 0.5];
    (0..=4000)
        .map(|k| {
            let u = k as f64 / 4000.0;
            let q = [(t.p1[0] + u * (t.p2[0] - t.p1[0])) * e as f64, (t.p1[1] + u * (t.p2[1] - t.p1[1])) * e as f64];
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn single_clean_stroke_leaves_background_untouched() {
    let cfg = SynthConfig { min_segments: 1, max_segments: 1, noise: 0.0, thickness: 1.0, ..SynthConfig::default() };
    for seed in 0..5 {
        let s = generate_scene(&cfg, "s", &mut seeded(seed)).unwrap();
        assert_eq!(s.targets.len(), 1);
        let t = s.targets[0];
        let mut background = None;
        let mut stroke = 0;
        for y in 0..64 {
            for x in 0..64 {
                let d = dist_px(x, y, &t, 64);
                if d > 1.5 + 1e-3 {
                    let b = *background.get_or_insert(pixel(&s, x, y));
                    assert_eq!(pixel(&s, x, y), b, "({x},{y})");
                } else if d < 1.0 - 1e-3 {
                    stroke += 1;
                }
            }
        }
        assert!(stroke as f64 >= t.length() * 64.0, "stroke too thin");
    }
}

#[test]
fn generation_is_deterministic_and_quantized() {
    let cfg = SynthConfig::default();
    let a = generate_dataset(&cfg, 4, "x").unwrap();
    let b = generate_dataset(&cfg, 4, "x").unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
    assert!(a.iter().all(|s| s.image.data().iter().all(|v| quantize(*v) == *v)));
    assert_eq!(a[3].id, "x00003");
}

#[test]
fn thousand_scenes_respect_invariants() {
    let cfg = SynthConfig { min_length: 0.3, ..SynthConfig::default() };
    let mut rng = seeded(7);
    for i in 0..1000 {
        let s = generate_scene(&cfg, format!("{i}"), &mut rng).unwrap();
        assert!((1..=4).contains(&s.targets.len()));
        for t in &s.targets {
            assert!(t.length() >= 0.3);
            assert!(t.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn rasterized_targets_land_on_strokes() {
    let cfg = SynthConfig { noise: 0.0, thickness: 1.0, ..SynthConfig::default() };
    for seed in 0..50 {
        let s = generate_scene(&cfg, "s", &mut seeded(seed)).unwrap();
        // With no noise the most common colour is the background.
        let mut counts = std::collections::HashMap::new();
        for y in 0..64 {
            for x in 0..64 {
                *counts.entry(pixel(&s, x, y).map(f64::to_bits)).or_insert(0) += 1;
            }
        }
        let bg = counts.into_iter().max_by_key(|(_, c)| *c).unwrap().0;
        for t in &s.targets {
            for (x, y) in segment_pixels(t, 64) {
                assert_ne!(pixel(&s, x, y).map(f64::to_bits), bg, "seed {seed} pixel ({x},{y})");
            }
        }
    }
}

#[test]
fn config_validation() {
    assert!(SynthConfig::default().validate().is_ok());
    assert!(SynthConfig { extent: 48, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig { min_segments: 3, max_segments: 2, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig { min_length: 0.0, ..SynthConfig::default() }.validate().is_err());
}

fn sample() -> Sample {
    generate_scene(&SynthConfig::default(), "a", &mut seeded(3)).unwrap()
}

#[test]
fn flips() {
    let s = sample();
    assert_eq!(hflip(&hflip(&s)), s);
    assert_eq!(vflip(&vflip(&s)), s);
    let one = Sample { targets: vec![LineSegment::new(0.2, 0.3, 0.4, 0.3)], ..s.clone() };
    let f = hflip(&one).targets[0].to_array();
    for (a, b) in f.iter().zip([0.8, 0.3, 0.6, 0.3]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
    }
    assert_eq!(pixel(&hflip(&s), 0, 5), pixel(&s, 63, 5));
    assert_eq!(pixel(&vflip(&s), 2, 0), pixel(&s, 2, 63));
}

#[test]
fn transpose_swaps_axes() {
    let s = sample();
    assert_eq!(transpose(&transpose(&s)), s);
    let wide = Sample { image: Tensor::zeros([64, 96, 3]), ..s.clone() };
    assert_eq!(transpose(&wide).image.shape(), &[96, 64, 3]);
    assert_eq!(pixel(&transpose(&s), 7, 3), pixel(&s, 3, 7));
    let one = Sample { targets: vec![LineSegment::new(0.2, 0.3, 0.4, 0.9)], ..s };
    assert_eq!(transpose(&one).targets[0].to_array(), [0.3, 0.2, 0.9, 0.4]);
}

#[test]
fn crop_clips_and_drops() {
    let s = Sample {
        targets: vec![LineSegment::new(0.6, 0.1, 0.9, 0.9), LineSegment::new(0.1, 0.5, 0.9, 0.5), LineSegment::new(0.1, 0.1, 0.3, 0.2)],
        ..sample()
    };
    let c = crop(&s, 0, 0, 32, 64, 0.0).unwrap().unwrap();
    assert_eq!(c.width(), 32);
    assert_eq!(c.targets.len(), 2);
    // The horizontal line is cut at the window edge, x = 0.5 -> 1.
    let h = c.targets[0].to_array();
    assert_abs_diff_eq!(h[0], 0.2, epsilon = 1e-12);
    assert_abs_diff_eq!(h[2], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(h[1], 0.5, epsilon = 1e-12);
    let last = c.targets[1].to_array();
    for (a, b) in last.iter().zip([0.2, 0.1, 0.6, 0.2]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    assert_eq!(pixel(&c, 5, 7), pixel(&s, 5, 7));

    let right = Sample { targets: vec![LineSegment::new(0.6, 0.1, 0.9, 0.9)], ..s.clone() };
    assert!(crop(&right, 0, 0, 32, 64, 0.0).unwrap().is_none());
    assert!(crop(&s, 40, 0, 32, 64, 0.0).is_err());
}

#[test]
fn resize_keeps_targets_and_constant_images() {
    let s = sample();
    let r = resize(&s, 96, 96).unwrap();
    assert_eq!(r.targets, s.targets);
    assert_eq!(r.image.shape(), &[96, 96, 3]);
    assert_eq!(resize(&s, 64, 64).unwrap(), s);
    let flat = Sample { image: Tensor::full([32, 32, 3], 0.25), ..s };
    assert!(resize(&flat, 64, 64).unwrap().image.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augment_keeps_targets_valid(seed in any::<u64>(), crop_on in any::<bool>()) {
        let s = generate_scene(&SynthConfig::default(), "p", &mut seeded(seed)).unwrap();
        let cfg = AugmentConfig {
            transpose: true,
            resize_extents: vec![64, 96],
            crop_min_fraction: crop_on.then_some(0.5),
            ..AugmentConfig::default()
        };
        let a = augment(&s, &cfg, &mut seeded(seed ^ 1)).unwrap();
        if crop_on {
            prop_assert!(a.targets.len() <= s.targets.len() && !a.targets.is_empty());
        } else {
            prop_assert_eq!(a.targets.len(), s.targets.len());
        }
        prop_assert!(a.height().is_multiple_of(32) && a.width().is_multiple_of(32));
        for t in &a.targets {
            prop_assert!(t.length() > 0.0);
            prop_assert!(t.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_dataset(&SynthConfig::default(), 5, "scene").unwrap();
    save_dataset(&samples, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), samples);

    let empty = tempfile::tempdir().unwrap();
    std::fs::write(empty.path().join("annotations.jsonl"), "").unwrap();
    assert!(load_dataset(empty.path()).unwrap().is_empty());
}

#[test]
fn malformed_record_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"a\",\"width\":64,\"height\":64,\"segments\":[[0.1,0.2,0.3,0.4]]}\n{\"id\":\"b\",\"width\":64,\"height\":64,\"segments\":[[0.1,0.2,0.3]]}\n",
    )
    .unwrap();
    match read_annotations(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let preds = vec![crate::ScoredSegment::new(LineSegment::new(0.1, 0.2, 0.3, 0.4), 0.75)];
    let rec = PredictionRecord::new("a", 64, 64, &preds);
    write_predictions(std::slice::from_ref(&rec), &path).unwrap();
    let back = read_predictions(&path).unwrap();
    assert_eq!(back, vec![rec]);
    assert_eq!(back[0].scored_segments(), preds);
}

#[test]
fn ppm_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    std::fs::write(&path, b"P3\n1 1\n255\n0 0 0\n").unwrap();
    assert!(matches!(read_image(&path), Err(Error::Parse { .. })));
    std::fs::write(&path, b"P6\n2 2\n255\n\0\0\0").unwrap();
    assert!(read_image(&path).is_err());
    std::fs::write(&path, b"P6\n# comment\n1 1\n255\n\x01\x02\x03").unwrap();
    assert_eq!(read_image(&path).unwrap().data(), &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0]);
    assert!(matches!(read_image(&dir.path().join("none.ppm")), Err(Error::Io { .. })));
}
