use super::*;

fn specs() -> (DomainSpec, DomainSpec) {
    default_specs()
}

fn luma(rgb: [f64; 3]) -> f64 {
    crate::image::LUMA_WEIGHTS.iter().zip(rgb).map(|(&w, c)| w * c).sum()
}

#[test]
fn default_specs_pin_the_documented_values() {
    let (x, y) = specs();
    assert_eq!(x.domain, Domain::X);
    assert_eq!(y.domain, Domain::Y);
    assert_eq!(x.image_size, 64);
    assert_eq!(y.image_size, 64);
    assert_eq!(x.background.base_rgb, [0.78, 0.71, 0.59]);
    assert_eq!(y.background.base_rgb, [0.45, 0.50, 0.55]);
    assert_eq!(x.instrument.gray_range, [0.35, 0.55]);
    assert_eq!(y.instrument.gray_range, [0.10, 0.20]);
    // Same contrast polarity in both domains (instruments darkest), but Y's
    // background luminance sits inside X's instrument gray band.
    assert!(x.instrument.gray_range[1] < luma(x.background.base_rgb));
    assert!(y.instrument.gray_range[1] < luma(y.background.base_rgb));
    let y_bg = luma(y.background.base_rgb);
    assert!(x.instrument.gray_range[0] < y_bg && y_bg < x.instrument.gray_range[1] + 0.1);
    assert_eq!(x.instrument.highlight, 0.0);
    assert!(y.instrument.highlight > 0.0);
    assert_eq!(x.nuisance.specular_count, 0);
    assert!(y.nuisance.specular_count > 0);
    x.validate().unwrap();
    y.validate().unwrap();
}

#[test]
fn specs_round_trip_through_json() {
    let (x, y) = specs();
    for spec in [x, y] {
        let text = serde_json::to_string(&spec).unwrap();
        let back: DomainSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}

#[test]
fn domain_parses_from_loose_strings() {
    assert_eq!("X".parse::<Domain>().unwrap(), Domain::X);
    assert_eq!("y".parse::<Domain>().unwrap(), Domain::Y);
    assert!("Z".parse::<Domain>().is_err());
}

#[test]
fn samples_are_deterministic_per_index() {
    let (x, _) = specs();
    let a = sample(&x, 5).unwrap();
    let b = sample(&x, 5).unwrap();
    assert_eq!(a, b);
    let c = sample(&x, 6).unwrap();
    assert_ne!(a.image.data, c.image.data);
    let mut reseeded = x.clone();
    reseeded.seed += 1;
    let d = sample(&reseeded, 5).unwrap();
    assert_ne!(a.image.data, d.image.data);
}

#[test]
fn generate_twice_writes_identical_bytes() {
    let (x, _) = specs();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ids_a = generate(&x, 4, a.path()).unwrap();
    let ids_b = generate(&x, 4, b.path()).unwrap();
    assert_eq!(ids_a, ids_b);
    assert_eq!(ids_a, vec!["x00000", "x00001", "x00002", "x00003"]);
    for id in &ids_a {
        for rel in [format!("X/images/{id}.ppm"), format!("X/masks/{id}.pgm")] {
            let left = std::fs::read(a.path().join(&rel)).unwrap();
            let right = std::fs::read(b.path().join(&rel)).unwrap();
            assert_eq!(left, right, "{rel} differs between runs");
        }
    }
    let left = std::fs::read(a.path().join("X/spec.json")).unwrap();
    let right = std::fs::read(b.path().join("X/spec.json")).unwrap();
    assert_eq!(left, right);
}

#[test]
fn instrument_area_stays_inside_bounds() {
    let (x, y) = specs();
    for spec in [&x, &y] {
        let total = (spec.image_size * spec.image_size) as f64;
        for index in 0..500 {
            let s = sample(spec, index).unwrap();
            let frac = s.mask.foreground_pixels() as f64 / total;
            assert!(
                (AREA_BOUNDS.0..=AREA_BOUNDS.1).contains(&frac),
                "{} index {index}: instrument fraction {frac}",
                spec.domain
            );
        }
    }
}

#[test]
fn wedge_instruments_respect_the_same_bounds() {
    let (mut x, _) = specs();
    x.instrument.shape = InstrumentShape::Wedge;
    let total = (x.image_size * x.image_size) as f64;
    for index in 0..100 {
        let s = sample(&x, index).unwrap();
        let frac = s.mask.foreground_pixels() as f64 / total;
        assert!(
            (AREA_BOUNDS.0..=AREA_BOUNDS.1).contains(&frac),
            "index {index}: instrument fraction {frac}"
        );
    }
}

#[test]
fn pixels_stay_in_unit_range() {
    let (_, y) = specs();
    for index in 0..10 {
        let s = sample(&y, index).unwrap();
        assert!(s.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.mask.foreground_pixels() > 0);
    }
}

#[test]
fn domain_y_backgrounds_are_darker() {
    let (x, y) = specs();
    let mean = |spec: &DomainSpec| {
        (0..200)
            .map(|i| background_luminance(&sample(spec, i).unwrap()))
            .sum::<f64>()
            / 200.0
    };
    let lx = mean(&x);
    let ly = mean(&y);
    assert!(
        ly + 0.1 < lx,
        "expected domain Y backgrounds clearly darker, got X {lx:.3} vs Y {ly:.3}"
    );
}

#[test]
fn instruments_are_the_darkest_structures_in_both_domains() {
    let (x_spec, y_spec) = specs();
    let luma = |p: [f32; 3]| {
        crate::image::LUMA_WEIGHTS
            .iter()
            .zip(p)
            .map(|(w, c)| w * f64::from(c))
            .sum::<f64>()
    };
    let contrast = |spec: &DomainSpec| {
        // Mean instrument luminance minus mean background luminance.
        let mut fg = (0.0, 0usize);
        let mut bg = (0.0, 0usize);
        for i in 0..100 {
            let s = sample(spec, i).unwrap();
            for (j, &label) in s.mask.labels.iter().enumerate() {
                let l = luma(s.image.pixel(j % spec.image_size, j / spec.image_size));
                if label != 0 {
                    fg = (fg.0 + l, fg.1 + 1);
                } else {
                    bg = (bg.0 + l, bg.1 + 1);
                }
            }
        }
        fg.0 / fg.1 as f64 - bg.0 / bg.1 as f64
    };
    let cx = contrast(&x_spec);
    let cy = contrast(&y_spec);
    assert!(cx < -0.1, "X instruments should be darker than background, got {cx:.3}");
    assert!(cy < -0.1, "Y instruments should be darker than background, got {cy:.3}");
}

/// Mean luminance over the frame; the domains differ strongly in this single
/// statistic, so a midpoint threshold must separate them.
fn frame_luminance(s: &Sample) -> f64 {
    let mut acc = 0.0;
    for px in s.image.data.chunks_exact(3) {
        acc += crate::image::LUMA_WEIGHTS
            .iter()
            .zip(px)
            .map(|(w, &c)| w * f64::from(c))
            .sum::<f64>();
    }
    acc / (s.image.width * s.image.height) as f64
}

#[test]
fn mean_luminance_threshold_separates_the_domains() {
    let (x, y) = specs();
    let feature = |spec: &DomainSpec, range: std::ops::Range<u64>| -> Vec<f64> {
        range.map(|i| frame_luminance(&sample(spec, i).unwrap())).collect()
    };
    let fit_x = feature(&x, 0..50);
    let fit_y = feature(&y, 0..50);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let threshold = 0.5 * (mean(&fit_x) + mean(&fit_y));
    let y_above = mean(&fit_y) > mean(&fit_x);

    let test_x = feature(&x, 50..250);
    let test_y = feature(&y, 50..250);
    let correct = test_x.iter().filter(|&&f| (f > threshold) != y_above).count()
        + test_y.iter().filter(|&&f| (f > threshold) == y_above).count();
    let accuracy = correct as f64 / (test_x.len() + test_y.len()) as f64;
    assert!(accuracy >= 0.99, "threshold classifier accuracy {accuracy}");
}

#[test]
fn full_opacity_pixels_always_land_in_the_mask() {
    for (i, shape) in [InstrumentShape::Capsule, InstrumentShape::Wedge].iter().enumerate() {
        let p = Placement {
            center: (30.0 + i as f64, 28.0),
            axis: (0.8, 0.6),
            half_len: 20.0,
            radius: 3.0,
        };
        let cov = rasterize(*shape, &p, 64);
        assert!(cov.iter().all(|&c| (0.0..=1.0).contains(&c)));
        let full = cov.iter().filter(|&&c| c >= 1.0).count();
        assert!(full > 0, "expected an interior at radius 3");
        assert!(
            cov.iter().filter(|&&c| c >= 1.0).all(|&c| c >= 0.5),
            "full-opacity pixel missing from the thresholded mask"
        );
        // The antialiased rim is a thin band, not a halo.
        let rim = cov.iter().filter(|&&c| c > 0.0 && c < 1.0).count();
        let area = cov.iter().filter(|&&c| c >= 0.5).count();
        assert!(rim < area, "rim {rim} should be smaller than area {area}");
    }
}

#[test]
fn generate_layout_round_trips_through_the_loader() {
    let (_, y) = specs();
    let dir = tempfile::tempdir().unwrap();
    let ids = generate(&y, 3, dir.path()).unwrap();
    let domain_dir = dir.path().join("Y");
    assert!(domain_dir.join("spec.json").is_file());

    let ds = DiskDataset::open(&domain_dir).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.ids(), &ids[..]);
    assert_eq!(ds.spec.as_ref().unwrap(), &y);

    for (i, id) in ids.iter().enumerate() {
        let from_disk = ds.load(i).unwrap();
        let in_memory = sample(&y, i as u64).unwrap();
        assert_eq!(from_disk.id, *id);
        assert_eq!(from_disk.mask, in_memory.mask);
        // Images pass through 8-bit quantization on disk.
        let worst = from_disk
            .image
            .data
            .iter()
            .zip(&in_memory.image.data)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "quantization error {worst}");
    }
    assert!(ds.load(3).is_err());
}

#[test]
fn generate_rejects_bad_inputs() {
    let (x, _) = specs();
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(&x, 0, dir.path()).is_err());

    let mut inverted = x.clone();
    inverted.instrument.gray_range = [0.6, 0.4];
    assert!(inverted.validate().is_err());

    let mut wide = x.clone();
    wide.instrument.width_range = [0.1, 0.7];
    assert!(wide.validate().is_err());

    let mut tiny = x.clone();
    tiny.image_size = 8;
    assert!(tiny.validate().is_err());

    let mut bad_prob = x.clone();
    bad_prob.nuisance.shadow_probability = 1.5;
    assert!(bad_prob.validate().is_err());
}

#[test]
fn dataset_open_requires_complete_pairs() {
    let (x, _) = specs();
    let dir = tempfile::tempdir().unwrap();
    let ids = generate(&x, 2, dir.path()).unwrap();
    let domain_dir = dir.path().join("X");
    std::fs::remove_file(domain_dir.join("masks").join(format!("{}.pgm", ids[1]))).unwrap();
    assert!(DiskDataset::open(&domain_dir).is_err());

    let empty = tempfile::tempdir().unwrap();
    assert!(DiskDataset::open(empty.path()).is_err());
}
