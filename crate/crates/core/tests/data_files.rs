use qsteer::data::{
    bundled_data_dir, downscale_16, encode_idx_images, encode_idx_labels, filter_binary, load_idx,
    load_split, read_idx_labels, subsample_split, write_maybe_gz, DataError, Dataset, Split,
};

fn two_images() -> (Vec<Vec<u8>>, Vec<u8>) {
    let a: Vec<u8> = (0..784).map(|i| (i % 256) as u8).collect();
    let b: Vec<u8> = (0..784).map(|i| 255 - (i % 256) as u8).collect();
    (vec![a, b], vec![7, 3])
}

#[test]
fn synthetic_idx_round_trips_raw_and_gzipped() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = two_images();
    for ext in ["", ".gz"] {
        let ip = dir.path().join(format!("img{ext}"));
        let lp = dir.path().join(format!("lbl{ext}"));
        write_maybe_gz(&ip, &encode_idx_images(28, &images)).unwrap();
        write_maybe_gz(&lp, &encode_idx_labels(&labels)).unwrap();
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.side(), 28);
        assert_eq!(set.labels(), &[7, 3]);
        for (got, want) in set.images().iter().zip(&images) {
            let bytes: Vec<u8> = got.iter().map(|p| (p * 255.0).round() as u8).collect();
            assert_eq!(&bytes, want);
            assert!(got.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert_eq!(set.image(0)[5], 5.0 / 255.0);
    }
}

#[test]
fn malformed_idx_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = two_images();
    let ip = dir.path().join("img");
    let lp = dir.path().join("lbl");
    let good_images = encode_idx_images(28, &images);

    std::fs::write(&ip, &good_images).unwrap();
    std::fs::write(&lp, encode_idx_labels(&labels[..1])).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::CountMismatch { images: 2, labels: 1 })));

    std::fs::write(&lp, encode_idx_labels(&labels)).unwrap();
    std::fs::write(&ip, &good_images[..good_images.len() - 1]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::Truncated { .. })));

    let mut bad = good_images.clone();
    bad[3] = 0x01;
    std::fs::write(&ip, &bad).unwrap();
    assert!(matches!(
        load_idx(&ip, &lp),
        Err(DataError::BadMagic { expected: 0x803, found: 0x801 })
    ));

    assert!(matches!(
        load_idx(&dir.path().join("nope"), &lp),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn bundled_mnist_counts() {
    let root = bundled_data_dir();
    let test = load_split(&root, Dataset::Mnist, Split::Test).unwrap();
    assert_eq!(test.len(), 10_000);
    assert_eq!(test.side(), 28);
    assert_eq!(filter_binary(&test, 0, 1).unwrap().len(), 2_115);

    let full_train = read_idx_labels(&root.join("mnist/train-labels-full-idx1-ubyte.gz")).unwrap();
    assert_eq!(full_train.len(), 60_000);
    assert_eq!(full_train.iter().filter(|&&l| l < 2).count(), 12_665);
}

#[test]
fn binary_filter_histogram_matches_source() {
    let test = load_split(&bundled_data_dir(), Dataset::Mnist, Split::Test).unwrap();
    let counts = test.class_counts();
    let bin = filter_binary(&test, 3, 8).unwrap();
    let bc = bin.class_counts();
    assert_eq!(bc[&0], counts[&3]);
    assert_eq!(bc[&1], counts[&8]);
    assert_eq!(filter_binary(&bin, 0, 1).unwrap(), bin);
}

#[test]
fn downscaled_subsets_keep_pixel_range_and_means() {
    let test = load_split(&bundled_data_dir(), Dataset::FashionMnist, Split::Test).unwrap();
    let (pick, rest) = subsample_split(&test, 100, 5).unwrap();
    assert_eq!(pick.len() + rest.len(), test.len());
    let counts = pick.class_counts();
    assert!(counts.values().all(|&c| c == 10));
    for im in pick.images() {
        let small = downscale_16(im).unwrap();
        assert!(small.iter().all(|p| (0.0..=1.0).contains(p)));
        let (m28, m16) = (im.iter().sum::<f64>() / 784.0, small.iter().sum::<f64>() / 256.0);
        assert!((m28 - m16).abs() < 1e-12);
    }
}

#[test]
fn bundled_checksums_are_stable() {
    let root = bundled_data_dir();
    let a = load_split(&root, Dataset::Mnist, Split::Test).unwrap().head(50);
    let b = load_split(&root, Dataset::Mnist, Split::Test).unwrap().head(50);
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(a.checksum(), MNIST_TEST_HEAD50_SHA256);
}

const MNIST_TEST_HEAD50_SHA256: &str = "2a69866a5dc15a5489dccb343be1a1e51208866cc7f2719514aba33eed49734f";
