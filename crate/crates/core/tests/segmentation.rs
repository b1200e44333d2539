use bonesup_core::phantom::{generate, generate_with, PhantomConfig};
use bonesup_core::registry::mask_providers;
use bonesup_core::segmentation::{apply_mask, MaskProvider, OtsuThreshold, PhantomTruth};
use bonesup_core::{Image, Mask};
use proptest::prelude::*;

#[test]
fn truth_mask_area_matches_ellipse_formula() {
    for s in generate(21, 10, 256).unwrap() {
        let mask = PhantomTruth.lung_mask(&s.cxr, Some(&s.params)).unwrap();
        let analytic: f64 = s.params.lungs.iter().map(|e| e.area_pixels(256, 256)).sum();
        let rel = (mask.count() as f64 - analytic).abs() / analytic;
        assert!(rel <= 0.02, "relative area error {rel}");
    }
}

#[test]
fn truth_mask_needs_metadata() {
    let img = Image::filled(32, 32, 0.5);
    assert!(PhantomTruth.lung_mask(&img, None).is_err());
}

#[test]
fn truth_mask_is_reproducible() {
    let a = &generate(22, 1, 64).unwrap()[0];
    let b = &generate(22, 1, 64).unwrap()[0];
    let m = |s: &bonesup_core::phantom::PhantomSample| PhantomTruth.lung_mask(&s.cxr, Some(&s.params)).unwrap();
    assert_eq!(m(a), m(b));
}

#[test]
fn threshold_on_constant_image_is_empty() {
    let img = Image::filled(32, 32, 0.3);
    assert!(OtsuThreshold.lung_mask(&img, None).unwrap().is_empty());
}

#[test]
fn threshold_finds_dark_lungs() {
    let cfg = PhantomConfig::new(64).without_bones();
    let mut worst: f64 = 1.0;
    for s in generate_with(&cfg, 23, 10).unwrap() {
        let found = OtsuThreshold.lung_mask(&s.cxr, None).unwrap();
        worst = worst.min(found.iou(&s.lung_mask));
    }
    assert!(worst >= 0.8, "worst IoU {worst}");
}

#[test]
fn providers_resolve_by_name() {
    let r = mask_providers();
    assert_eq!(r.build("threshold", &()).unwrap().name(), "threshold");
    assert_eq!(r.build("phantom_truth", &()).unwrap().name(), "phantom_truth");
    assert!(r.build("unet", &()).is_err());
}

#[test]
fn apply_mask_cases() {
    let img = Image::filled(4, 4, 1.0);
    assert_eq!(apply_mask(&img, &Mask::full(4, 4)).unwrap(), img);
    assert_eq!(apply_mask(&img, &Mask::empty(4, 4)).unwrap(), Image::filled(4, 4, 0.0));
    let checker = Mask::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
    assert_eq!(apply_mask(&img, &checker).unwrap().mean(), 0.5);
    assert!(apply_mask(&img, &Mask::full(4, 5)).is_err());
}

proptest! {
    #[test]
    fn masking_is_idempotent(px in prop::collection::vec(0.0f64..1.0, 64), bits in prop::collection::vec(any::<bool>(), 64)) {
        let img = Image::new(8, 8, px).unwrap();
        let m = Mask::new(8, 8, bits).unwrap();
        let once = apply_mask(&img, &m).unwrap();
        prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
    }
}
