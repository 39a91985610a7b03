use proptest::prelude::*;
use uld_core::ct::{
    apply_augment, build_multi_intensity, clip_black_borders, default_windows, hu_window_normalize, read_annotations,
    render_background, resample_to_spacing, synth_dataset, synth_generate, write_annotations, AugmentParams,
    BoxAnnotation, HuVolume, Image, Organ, Sample, SynthConfig, WindowSpec,
};
use uld_core::geometry::BBox;

fn ramp_volume(depth: usize, h: usize, w: usize, spacing: [f64; 3]) -> HuVolume {
    let voxels = (0..depth * h * w).map(|i| ((i * 37) % 2000) as i16 - 1000).collect();
    HuVolume::new(depth, h, w, voxels, spacing).unwrap()
}

#[test]
fn resample_extent_from_spacing_ratio() {
    let vol = HuVolume::new(1, 512, 512, vec![0; 512 * 512], [1.0, 1.0, 2.0]).unwrap();
    let r = resample_to_spacing(&vol, [0.8, 0.8, 2.0]).unwrap();
    assert_eq!((r.height(), r.width(), r.depth()), (640, 640, 1));
    assert_eq!(r.spacing_mm(), [0.8, 0.8, 2.0]);
    assert!(r.voxels().iter().all(|&v| v == 0));
}

#[test]
fn resample_identity_is_bitwise() {
    let vol = ramp_volume(3, 9, 7, [0.8, 0.8, 2.0]);
    assert_eq!(resample_to_spacing(&vol, [0.8, 0.8, 2.0]).unwrap(), vol);
}

#[test]
fn resample_of_constant_is_constant() {
    let vol = HuVolume::new(4, 6, 5, vec![123; 120], [1.3, 0.7, 3.0]).unwrap();
    let r = resample_to_spacing(&vol, [0.8, 0.8, 2.0]).unwrap();
    assert!(r.voxels().iter().all(|&v| v == 123));
}

/// Independent scan: first/last rows and columns holding any pixel above the threshold.
fn brute_force_crop(img: &Image) -> (usize, usize, usize, usize) {
    let live = |y: usize, x: usize| img.get(y, x) > -1000.0;
    let rows: Vec<usize> = (0..img.height()).filter(|&y| (0..img.width()).any(|x| live(y, x))).collect();
    let cols: Vec<usize> = (0..img.width()).filter(|&x| (0..img.height()).any(|y| live(y, x))).collect();
    (cols[0], rows[0], cols.last().unwrap() - cols[0] + 1, rows.last().unwrap() - rows[0] + 1)
}

#[test]
fn clip_removes_exactly_the_padding_columns() {
    let (h, w) = (20, 30);
    let mut img = Image::filled(h, w + 20, -1024.0);
    for y in 0..h {
        for x in 0..w {
            img.set(y, x + 10, if (x + y) % 5 == 0 { -1024.0 } else { 40.0 });
        }
    }
    // keep the edge columns of the body non-air so the crop is exactly 30 wide
    for y in 0..h {
        img.set(y, 10, 0.0);
        img.set(y, 10 + w - 1, 0.0);
    }
    let c = clip_black_borders(&img);
    assert_eq!((c.rect.x0, c.rect.y0, c.rect.width, c.rect.height), (10, 0, w, h));
    assert_eq!(brute_force_crop(&img), (10, 0, w, h));
    assert_eq!(c.image.width(), w);
}

/// Tight pixel box of the key-slice ellipse, recomputed from the lesion geometry.
fn ellipse_box(l: &uld_core::ct::SynthLesion, n: usize) -> BBox {
    let (a, b) = l.semi_axes_px;
    let (cos, sin) = (l.angle.cos(), l.angle.sin());
    let inside = |x: usize, y: usize| {
        let (px, py) = (x as f64 + 0.5 - l.center.0, y as f64 + 0.5 - l.center.1);
        let u = cos * px + sin * py;
        let v = cos * py - sin * px;
        u * u / (a * a) + v * v / (b * b) <= 1.0
    };
    let pts: Vec<(usize, usize)> = (0..n).flat_map(|y| (0..n).map(move |x| (x, y))).filter(|&(x, y)| inside(x, y)).collect();
    let x0 = pts.iter().map(|p| p.0).min().unwrap();
    let x1 = pts.iter().map(|p| p.0).max().unwrap();
    let y0 = pts.iter().map(|p| p.1).min().unwrap();
    let y1 = pts.iter().map(|p| p.1).max().unwrap();
    BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
}

/// Tight box of the pixels near `l` whose rendered contribution reaches half
/// the peak offset, with `slack` HU of tolerance for integer rounding.
fn rendered_box(vol: &HuVolume, bg: &HuVolume, l: &uld_core::ct::SynthLesion, slack: f64) -> Option<BBox> {
    let key = vol.key_index();
    let reach = 1.5 * l.semi_axes_px.0 + 2.0;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..vol.height() {
        for x in 0..vol.width() {
            let (dx, dy) = (x as f64 + 0.5 - l.center.0, y as f64 + 0.5 - l.center.1);
            if dx.hypot(dy) > reach {
                continue;
            }
            let diff = f64::from(vol.get(key, y, x)) - f64::from(bg.get(key, y, x));
            if diff * l.offset_hu.signum() + slack >= 0.5 * l.offset_hu.abs() {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
}

fn contains(outer: &BBox, inner: &BBox) -> bool {
    outer.x1 <= inner.x1 && outer.y1 <= inner.y1 && outer.x2 >= inner.x2 && outer.y2 >= inner.y2
}

#[test]
fn synth_boxes_match_lesion_masks() {
    let cfg = SynthConfig::default();
    let mut checked = 0;
    for seed in 0..40u64 {
        let case = synth_generate("x", seed, &cfg).unwrap();
        let bg = render_background(seed, &cfg).unwrap();
        for (l, a) in case.lesions.iter().zip(&case.annotations) {
            let oracle = ellipse_box(l, cfg.image_size);
            let iou = oracle.iou(&a.bbox);
            assert!(iou >= 0.9, "seed {seed}: box {:?} vs mask {:?} (IoU {iou})", a.bbox, oracle);
            // the rendered half-peak region agrees up to one HU of rounding
            let strict = rendered_box(&case.volume, &bg, l, -1.0).expect("lesion core visible");
            let loose = rendered_box(&case.volume, &bg, l, 1.0).expect("lesion visible");
            assert!(contains(&a.bbox, &strict) && contains(&loose, &a.bbox), "seed {seed}: {:?} not within {strict:?}..{loose:?}", a.bbox);
            checked += 1;
        }
    }
    assert!(checked > 40);
}

#[test]
fn synth_sizes_and_organs_are_consistent() {
    let cfg = SynthConfig::default();
    for (id, case) in synth_dataset(5, 10, &cfg).unwrap() {
        for (l, a) in case.lesions.iter().zip(&case.annotations) {
            assert_eq!(a.image_id, id);
            assert_eq!(a.organ, l.organ);
            assert!((a.size_mm - 2.0 * l.semi_axes_px.0 * cfg.spacing_xy_mm).abs() < 1e-12);
            assert!(a.size_mm >= cfg.diameter_min_mm - 1e-9 && a.size_mm <= cfg.diameter_max_mm + 1e-9);
        }
    }
}

#[test]
fn synth_dataset_is_deterministic() {
    let cfg = SynthConfig::default();
    assert_eq!(synth_dataset(7, 4, &cfg).unwrap(), synth_dataset(7, 4, &cfg).unwrap());
}

#[test]
fn annotations_round_trip_through_csv() {
    let dir = std::env::temp_dir().join(format!("uld-ann-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("a.csv");
    let rows = vec![
        BoxAnnotation::new("img_0000", BBox::new(1.0, 2.0, 10.5, 12.0), Organ::LVR, 9.6).unwrap(),
        BoxAnnotation::new("img_0001", BBox::new(0.0, 0.0, 3.0, 4.0), Organ::ST, 31.0).unwrap(),
    ];
    write_annotations(&path, &rows).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), rows);
    std::fs::remove_dir_all(&dir).unwrap();
}

fn sample_with_boxes(w: usize, h: usize, boxes: Vec<BBox>) -> Sample {
    let img = Image::new(h, w, (0..w * h).map(|i| (i % 97) as f64).collect()).unwrap();
    Sample {
        image_id: "s".into(),
        slices: [img.clone(), img.clone(), img],
        boxes: boxes
            .into_iter()
            .map(|b| BoxAnnotation::new("s", b, Organ::ABM, 10.0).unwrap())
            .collect(),
    }
}

proptest! {
    #[test]
    fn window_normalize_is_monotone_and_bounded(
        level in -1000.0f64..1000.0, width in 1.0f64..4000.0,
        a in -1024.0f64..3071.0, b in -1024.0f64..3071.0,
    ) {
        let w = WindowSpec::new("w", level, width).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(w.normalize(lo) <= w.normalize(hi));
        prop_assert!((0.0..=1.0).contains(&w.normalize(a)));
    }

    #[test]
    fn multi_intensity_has_one_image_per_window(k in 1usize..=5, seed in 0u64..1000) {
        let img = Image::new(4, 5, (0..20).map(|i| ((seed as usize + i * 131) % 4000) as f64 - 1024.0).collect()).unwrap();
        let windows: Vec<WindowSpec> = default_windows().into_iter().take(k).collect();
        let stack = build_multi_intensity(&[img.clone(), img.clone(), img.clone()], &windows).unwrap();
        prop_assert_eq!(stack.len(), k);
        for (i, chans) in stack.images.iter().enumerate() {
            prop_assert_eq!(&chans[1], &hu_window_normalize(&img, &windows[i]));
            prop_assert!(chans.iter().all(|c| c.data().iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    #[test]
    fn resample_never_overshoots(
        seed in 0u64..500, d in 1usize..4, h in 2usize..9, w in 2usize..9,
        sx in 0.5f64..1.5, sz in 1.0f64..3.0,
    ) {
        let voxels: Vec<i16> = (0..d * h * w).map(|i| (((i as u64 * 2654435761 + seed) % 3000) as i16) - 1000).collect();
        let vol = HuVolume::new(d, h, w, voxels.clone(), [sx, sx, sz]).unwrap();
        let r = resample_to_spacing(&vol, [0.8, 0.8, 2.0]).unwrap();
        let (lo, hi) = (*voxels.iter().min().unwrap(), *voxels.iter().max().unwrap());
        prop_assert!(r.voxels().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn augment_keeps_boxes_inside_and_counts_consistent(
        hflip: bool, vflip: bool, scale in 0.8f64..1.2, tx in -4.0f64..4.0, ty in -4.0f64..4.0,
        x1 in 0.0f64..30.0, y1 in 0.0f64..20.0, bw in 1.0f64..15.0, bh in 1.0f64..15.0,
    ) {
        let (w, h) = (40, 30);
        let b = BBox::new(x1, y1, (x1 + bw).min(w as f64), (y1 + bh).min(h as f64));
        let s = sample_with_boxes(w, h, vec![b]);
        let p = AugmentParams { hflip, vflip, scale, tx, ty };
        let out = apply_augment(&s, &p, -1024.0);
        prop_assert!(out.boxes.len() <= 1);
        for a in &out.boxes {
            prop_assert!(a.bbox.x1 >= 0.0 && a.bbox.y1 >= 0.0);
            prop_assert!(a.bbox.x2 <= w as f64 && a.bbox.y2 <= h as f64);
            prop_assert!(a.bbox.area() >= 1.0);
        }
        // a box that stays well inside the frame is never dropped
        let inner = BBox::new(15.0, 10.0, 25.0, 20.0);
        let kept = apply_augment(&sample_with_boxes(w, h, vec![inner]), &p, -1024.0);
        prop_assert_eq!(kept.boxes.len(), 1);
    }
}
