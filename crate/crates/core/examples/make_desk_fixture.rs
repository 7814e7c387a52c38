//! Writes the small gzipped IDX subsets under `data/` from full IDX files.
//!
//! Usage: `cargo run --example make_desk_fixture -- <source-root> [<dest-root>]`
//! where `<source-root>/<dataset>/` holds the standard four files.

use std::path::{Path, PathBuf};

use qsteer::data::{
    encode_idx_images, encode_idx_labels, find_file, parse_idx_images, parse_idx_labels,
    read_maybe_gz, write_maybe_gz, DataError,
};

struct Cut {
    dataset: &'static str,
    train: usize,
    test: usize,
}

const CUTS: [Cut; 2] = [
    Cut { dataset: "mnist", train: 3000, test: 10_000 },
    Cut { dataset: "fashion-mnist", train: 3000, test: 1000 },
];

fn copy_prefix(src: &Path, dst: &Path, prefix: &str, n: usize) -> Result<(), DataError> {
    let images = read_maybe_gz(&find_file(src, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = read_maybe_gz(&find_file(src, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    let (side, _, images) = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    let n = n.min(images.len());
    write_maybe_gz(
        &dst.join(format!("{prefix}-images-idx3-ubyte.gz")),
        &encode_idx_images(side, &images[..n]),
    )?;
    write_maybe_gz(
        &dst.join(format!("{prefix}-labels-idx1-ubyte.gz")),
        &encode_idx_labels(&labels[..n]),
    )?;
    if prefix == "train" {
        write_maybe_gz(&dst.join("train-labels-full-idx1-ubyte.gz"), &encode_idx_labels(&labels))?;
    }
    println!("{}: {prefix} {n} of {}", dst.display(), images.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let source = PathBuf::from(args.first().ok_or("usage: make_desk_fixture <source-root> [<dest-root>]")?);
    let dest = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(qsteer::data::bundled_data_dir);
    for cut in CUTS {
        let (src, dst) = (source.join(cut.dataset), dest.join(cut.dataset));
        std::fs::create_dir_all(&dst)?;
        copy_prefix(&src, &dst, "train", cut.train)?;
        copy_prefix(&src, &dst, "t10k", cut.test)?;
    }
    Ok(())
}
