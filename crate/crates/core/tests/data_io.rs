use lseg::data::{
    augment_with, decode_pgm, encode_pgm, example_shape, generate_dataset, generate_task, image_from_bytes,
    image_to_bytes, load_pgm, quantize, render_example, resize_to_input, save_pgm, task_id, Dataset, DatasetSpec,
    Example, Family, TaskSpec, MAX_FG_FRACTION, MIN_FG_FRACTION,
};
use lseg::rng::Rng;
use lseg::{Error, Grid};
use proptest::prelude::*;

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        root_seed: seed,
        num_tasks: 4,
        examples_per_task: 2,
        image_size: 32,
    }
}

proptest! {
    #[test]
    fn pgm_round_trip(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let g = Grid::from_fn(rows, cols, |_, _| rng.below(256) as u8);
        let bytes = encode_pgm(&g);
        prop_assert_eq!(decode_pgm(&bytes).unwrap(), g);
    }

    #[test]
    fn quantized_images_survive_bytes(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = Grid::from_fn(6, 6, |_, _| quantize(rng.uniform_in(-0.2, 1.2)));
        prop_assert_eq!(image_from_bytes(&image_to_bytes(&img)), img);
    }

    #[test]
    fn task_spec_text_round_trips(seed in any::<u64>(), fam in 0usize..4) {
        let spec = generate_task(seed, Family::ALL[fam], 48);
        prop_assert_eq!(TaskSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn rendered_examples_respect_bounds(seed in any::<u64>(), fam in 0usize..4, ex in 0u64..50) {
        let spec = generate_task(seed, Family::ALL[fam], 32);
        let e = render_example(&spec, ex).unwrap();
        let frac = e.mask.foreground_fraction();
        prop_assert!((MIN_FG_FRACTION..=MAX_FG_FRACTION).contains(&frac), "fraction {frac}");
        prop_assert!(e.image.data().iter().all(|&v| (0.0..=1.0).contains(&v) && quantize(v) == v));
        let (shape, mask, _) = example_shape(&spec, ex).unwrap();
        prop_assert_eq!(&mask, &e.mask);
        prop_assert_eq!(shape.rasterize(32), mask);
    }

    #[test]
    fn flips_move_image_and_mask_together(seed in any::<u64>(), h in any::<bool>(), v in any::<bool>()) {
        let spec = generate_task(seed, Family::Ellipse, 16);
        let ex = render_example(&spec, 0).unwrap();
        let out = augment_with(&ex, h, v, 0.0, &mut Rng::new(seed));
        prop_assert_eq!(out.mask.count(), ex.mask.count());
        let map = |r: usize, c: usize| (if v { 15 - r } else { r }, if h { 15 - c } else { c });
        for r in 0..16 {
            for c in 0..16 {
                let (sr, sc) = map(r, c);
                prop_assert_eq!(out.mask.get(r, c), ex.mask.get(sr, sc));
                prop_assert_eq!(out.image.get(r, c), ex.image.get(sr, sc));
            }
        }
    }
}

#[test]
fn pgm_header_variants() {
    let g = decode_pgm(b"P5 # comment\n2 1\n# another\n255\n\x07\x08").unwrap();
    assert_eq!(g.data(), &[7, 8]);
    assert_eq!(encode_pgm(&g), b"P5\n2 1\n255\n\x07\x08");
}

#[test]
fn malformed_pgm_is_rejected() {
    for bad in [
        &b"P2\n1 1\n255\n\x00"[..],
        b"P5\n2 2\n255\n\x00",
        b"P5\n1 1\n65535\n\x00\x00",
        b"P5\n0 1\n255\n",
        b"P5\n1 1\n255\n\x00\x00",
        b"P5\n1 x\n255\n\x00",
        b"",
    ] {
        assert!(matches!(decode_pgm(bad), Err(Error::Pgm { .. })), "{bad:?}");
    }
}

#[test]
fn pgm_files_and_missing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let g = Grid::from_fn(3, 5, |r, c| (r * 50 + c) as u8);
    save_pgm(&g, &path).unwrap();
    assert_eq!(load_pgm(&path).unwrap(), g);
    assert!(matches!(load_pgm(&dir.path().join("missing.pgm")), Err(Error::Io { .. })));
}

#[test]
fn dataset_is_a_function_of_the_seed() {
    let a = generate_dataset(&small_spec(3)).unwrap();
    assert_eq!(a, generate_dataset(&small_spec(3)).unwrap());
    assert_ne!(a, generate_dataset(&small_spec(4)).unwrap());
    let ids: Vec<&str> = a.tasks.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["t000_ellipse", "t001_annulus", "t002_ribbon", "t003_multiblob"]);
    assert_eq!(task_id(12, Family::Ribbon), "t012_ribbon");
    assert_eq!(a.num_examples(), 8);
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&small_spec(9)).unwrap();
    data.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, data);
    let sub = back.subset(&["t002_ribbon".to_string()]).unwrap();
    assert_eq!(sub.tasks.len(), 1);
    assert!(back.subset(&["nope".to_string()]).is_err());
    assert!(back.task("t001_annulus").is_ok());

    std::fs::write(dir.path().join("manifest.txt"), "t000_ellipse many\n").unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Data(_))));
}

#[test]
fn examples_need_foreground() {
    let img = Grid::filled(4, 4, 0.5);
    assert!(matches!(Example::new(img.clone(), Grid::filled(4, 4, false)), Err(Error::EmptyForeground)));
    assert!(Example::new(img, Grid::filled(3, 3, true)).is_err());
}

#[test]
fn resizing_only_upscales() {
    let spec = generate_task(1, Family::Annulus, 32);
    let ex = render_example(&spec, 0).unwrap();
    let up = resize_to_input(&ex, 64).unwrap();
    assert_eq!((up.image.rows(), up.mask.cols()), (64, 64));
    assert_eq!(*up.mask.get(5, 7), *ex.mask.get(2, 3));
    assert_eq!(resize_to_input(&ex, 32).unwrap(), ex);
    assert!(resize_to_input(&ex, 16).is_err());
}

#[test]
fn family_names_parse() {
    for f in Family::ALL {
        assert_eq!(f.name().parse::<Family>().unwrap(), f);
    }
    assert!("blob".parse::<Family>().is_err());
    let mut bad = generate_task(0, Family::Ellipse, 32);
    bad.size_min = 0.5;
    bad.size_max = 0.1;
    assert!(bad.validate().is_err());
}
