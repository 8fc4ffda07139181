use cmudrn::data::{
    self, decode_ppm, degrade, encode_ppm, gen_clean, DegradeSpec, Dataset, GenConfig, Image, Label,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (rng.gen_range(1..12), rng.gen_range(1..12));
    let mut img = Image::new(w, h);
    img.data.iter_mut().for_each(|v| *v = rng.gen());
    img
}

#[test]
fn ppm_round_trip_error_is_within_one_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let img = random_image(&mut rng);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!((back.width, back.height), (img.width, img.height));
        let max_err = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // Rounding to the nearest level is at most half a step off.
        assert!(max_err <= 0.5 / 255.0 + 1e-12, "{max_err}");
    }
}

#[test]
fn ppm_re_encode_is_byte_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = random_image(&mut rng);
    let once = encode_ppm(&img);
    let twice = encode_ppm(&decode_ppm(&once).unwrap());
    assert_eq!(once, twice);
}

#[test]
fn degradation_adds_brightness_on_average() {
    let clean = &gen_clean(5, 1, 64).unwrap()[0];
    for kind in Label::ALL {
        for seed in 0..100 {
            let spec = DegradeSpec {
                density: 1.0,
                intensity: 0.5,
                ..DegradeSpec::for_label(kind, seed)
            };
            let out = degrade(clean, &spec).unwrap();
            let mean_gain: f64 = out
                .data
                .iter()
                .zip(&clean.data)
                .map(|(o, c)| o - c)
                .sum::<f64>()
                / clean.data.len() as f64;
            assert!(mean_gain > 0.0, "{kind} seed {seed}: {mean_gain}");
        }
    }
}

#[test]
fn generated_dataset_is_byte_deterministic_on_disk() {
    let cfg = GenConfig {
        seed: 7,
        count: 4,
        size: 32,
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        data::generate(&cfg).unwrap().save(d.path()).unwrap();
    }
    let listing = |p: &std::path::Path| {
        let mut files: Vec<_> = walk(p);
        files.sort();
        files
            .into_iter()
            .map(|f| (f.strip_prefix(p).unwrap().to_path_buf(), std::fs::read(&f).unwrap()))
            .collect::<Vec<_>>()
    };
    let (a, b) = (listing(dirs[0].path()), listing(dirs[1].path()));
    assert_eq!(a.len(), 1 + 3 * 4);
    assert_eq!(a, b);
}

fn walk(p: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(p).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn manifest_round_trip() {
    let ds = data::generate(&GenConfig {
        seed: 3,
        count: 3,
        size: 32,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(data::MANIFEST)).unwrap();
    let first = manifest.lines().next().unwrap();
    assert_eq!(first, "0\train\train/00000.ppm\tclean/00000.ppm");
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.len(), ds.len());
    for (a, b) in loaded.pairs.iter().zip(&ds.pairs) {
        assert_eq!((a.id, a.label), (b.id, b.label));
        for (x, y) in a.degraded.data.iter().zip(&b.degraded.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(data::MANIFEST), "0\train\tonly-three\n").unwrap();
    let err = Dataset::load(dir.path()).unwrap_err();
    assert!(matches!(err, data::DataError::Manifest { line: 1, .. }), "{err}");
    std::fs::write(dir.path().join(data::MANIFEST), "0\tfog\ta.ppm\tb.ppm\n").unwrap();
    assert!(matches!(
        Dataset::load(dir.path()).unwrap_err(),
        data::DataError::Manifest { line: 1, .. }
    ));
}

#[test]
fn dataset_split_keeps_tuples_together() {
    let ds = data::generate(&GenConfig {
        seed: 1,
        count: 10,
        size: 32,
    })
    .unwrap();
    let (train, test) = ds.split(0.7).unwrap();
    assert_eq!(train.tuples().unwrap().len(), 7);
    assert_eq!(test.tuples().unwrap().len(), 3);
    assert_eq!(train.pairs.len() + test.pairs.len(), ds.pairs.len());
    assert!(train.pairs.iter().all(|p| p.id < 7));
    assert!(test.pairs.iter().all(|p| p.id >= 7));
}
