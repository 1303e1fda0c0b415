use super::*;
use proptest::prelude::*;

fn random_image(h: usize, w: usize, rng: &mut RngState) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| rng.next_f64()).collect()).unwrap()
}

#[test]
fn image_rejects_out_of_range_pixels() {
    assert!(matches!(Image::new(1, 1, vec![0.0, 1.5, 0.0]), Err(Error::OutOfRange { .. })));
    assert!(matches!(Image::new(1, 2, vec![0.0; 3]), Err(Error::Shape { .. })));
}

#[test]
fn normalize_endpoints_and_layout() {
    let img = Image::new(1, 2, vec![0.5, 1.0, 0.0, 0.25, 0.75, 1.0]).unwrap();
    let t = normalize(&img);
    assert_eq!(t.shape(), &[3, 1, 2]);
    // planar: channel 0 = [0.5, 0.25] -> [0, -0.5]
    assert_eq!(t.data(), &[0.0, -0.5, 1.0, 0.5, -1.0, 1.0]);
}

#[test]
fn denormalize_rejects_out_of_range() {
    let t = Tensor::new(&[3, 1, 1], vec![0.0, 1.2, 0.0]).unwrap();
    assert!(matches!(denormalize(&t), Err(Error::OutOfRange { .. })));
}

#[test]
fn normalization_round_trips() {
    let mut rng = RngState::new(1);
    for _ in 0..20 {
        let img = random_image(5, 7, &mut rng);
        let back = denormalize(&normalize(&img)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = Tensor::uniform(&[3, 4, 4], -1.0, 1.0, &mut rng);
        let again = normalize(&denormalize(&t).unwrap());
        assert!(t.linf_distance(&again).unwrap() < 1e-12);
    }
}

#[test]
fn eight_bit_pixels_survive_normalization_bytewise() {
    let levels: Vec<f64> = (0..=255u32).flat_map(|k| [k as f64 / 255.0; 3]).collect();
    let img = Image::new(16, 16, levels).unwrap();
    let back = denormalize(&normalize(&img)).unwrap();
    assert_eq!(encode_ppm(&back), encode_ppm(&img));
}

#[test]
fn resize_identity() {
    let img = random_image(6, 6, &mut RngState::new(2));
    assert_eq!(resize_bilinear(&img, 6, 6), img);
}

#[test]
fn checkerboard_upsample_matches_bilinear_oracle() {
    // 2x2 checkerboard, one value per cell shared across channels.
    let cells = [[0.0, 1.0], [1.0, 0.0]];
    let pixels = cells.iter().flatten().flat_map(|&v| [v; 3]).collect();
    let img = Image::new(2, 2, pixels).unwrap();
    let out = resize_bilinear(&img, 4, 4);

    // Half-pixel centers: output i samples source coordinate (i + 0.5) / 2 - 0.5,
    // clamped to [0, 1]; i.e. 0, 0.25, 0.75, 1.
    let coords = [0.0, 0.25, 0.75, 1.0];
    for (oy, &sy) in coords.iter().enumerate() {
        for (ox, &sx) in coords.iter().enumerate() {
            let want = cells[0][0] * (1.0 - sy) * (1.0 - sx)
                + cells[0][1] * (1.0 - sy) * sx
                + cells[1][0] * sy * (1.0 - sx)
                + cells[1][1] * sy * sx;
            for c in 0..3 {
                assert!((out.get(oy, ox, c) - want).abs() < 1e-15, "({oy},{ox})");
            }
        }
    }
    assert_eq!(out.get(0, 1, 0), 0.25);
    assert_eq!(out.get(1, 1, 0), 0.375);
}

#[test]
fn downsample_stays_in_range() {
    let img = random_image(37, 23, &mut RngState::new(3));
    let out = resize_bilinear(&img, 8, 8);
    assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
}

fn write_tree(root: &Path, classes: &[(&str, usize)]) {
    let mut rng = RngState::new(7);
    for (name, n) in classes {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..*n {
            let levels: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.below(256) as f64 / 255.0).collect();
            write_ppm(&Image::new(4, 4, levels).unwrap(), &dir.join(format!("img{i}.ppm"))).unwrap();
        }
    }
}

#[test]
fn load_directory_orders_classes_lexicographically() {
    let dir = tempfile::tempdir().unwrap();
    write_tree(dir.path(), &[("yield", 2), ("stop", 2)]);
    let ds = load_directory(dir.path(), 4).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.class_names(), &["stop".to_string(), "yield".to_string()]);
    assert_eq!(ds.examples().iter().map(|(_, l)| *l).collect::<Vec<_>>(), vec![0, 0, 1, 1]);

    let resized = load_directory(dir.path(), 8).unwrap();
    assert_eq!(resized.side(), Some(8));
}

#[test]
fn load_directory_keeps_empty_classes_and_names_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    write_tree(dir.path(), &[("a", 1), ("b", 0)]);
    let ds = load_directory(dir.path(), 4).unwrap();
    assert_eq!(ds.num_classes(), 2);
    assert_eq!(ds.class_counts(), vec![1, 0]);

    fs::write(dir.path().join("b").join("broken.ppm"), b"P6\n4 4\n255\n\x01").unwrap();
    match load_directory(dir.path(), 4) {
        Err(Error::Ingestion { path, .. }) => assert!(path.ends_with("broken.ppm")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn load_directory_reads_png() {
    let dir = tempfile::tempdir().unwrap();
    let class = dir.path().join("circle");
    fs::create_dir_all(&class).unwrap();
    let raw: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 20) as u8).collect();
    image::RgbImage::from_raw(2, 2, raw.clone())
        .unwrap()
        .save(class.join("a.png"))
        .unwrap();
    let ds = load_directory(dir.path(), 2).unwrap();
    let got: Vec<u8> = ds.examples()[0].0.pixels().iter().map(|p| (p * 255.0).round() as u8).collect();
    assert_eq!(got, raw);
}

fn labelled(counts: &[usize]) -> Dataset {
    let mut rng = RngState::new(11);
    let mut examples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            examples.push((random_image(2, 2, &mut rng), c));
        }
    }
    let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
    Dataset::new(examples, names).unwrap()
}

#[test]
fn split_ten_per_class() {
    let ds = labelled(&[10, 10, 10]);
    let (train, test) = stratified_split(&ds, 0.2, 1).unwrap();
    assert_eq!(test.class_counts(), vec![2, 2, 2]);
    assert_eq!(train.class_counts(), vec![8, 8, 8]);
    let (train2, test2) = stratified_split(&ds, 0.2, 1).unwrap();
    assert_eq!((train, test), (train2, test2));
}

#[test]
fn split_singleton_class_goes_to_train() {
    let ds = labelled(&[1, 5]);
    let (train, test) = stratified_split(&ds, 0.5, 3).unwrap();
    assert_eq!(train.class_counts()[0], 1);
    assert_eq!(test.class_counts()[0], 0);
    assert!(stratified_split(&ds, 0.0, 3).is_err());
    assert!(stratified_split(&ds, 1.0, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_partitions_and_counts(
        counts in prop::collection::vec(1usize..30, 2..5),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let ds = labelled(&counts);
        let (train, test) = stratified_split(&ds, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), ds.len());

        // every original example lands in exactly one half
        let key = |img: &Image| img.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        let mut all: Vec<_> = ds.examples().iter().map(|(i, l)| (key(i), *l)).collect();
        let mut parts: Vec<_> = train.examples().iter().chain(test.examples()).map(|(i, l)| (key(i), *l)).collect();
        all.sort();
        parts.sort();
        prop_assert_eq!(all, parts);

        for (c, &n) in counts.iter().enumerate() {
            let got = test.class_counts()[c] as f64;
            let want = (n as f64 * fraction).round();
            if n == 1 {
                prop_assert_eq!(got, 0.0);
            } else {
                prop_assert!((got - want).abs() <= 1.0, "class {} n {} got {} want {}", c, n, got, want);
                prop_assert!(got >= 1.0 && got <= (n - 1) as f64);
            }
        }
    }
}
