//! Paired datasets on disk: `<root>/<split>/<index>_{ref,tar}.mmri` plus a
//! tab-separated `<root>/<split>/manifest.tsv` with one
//! `index  ref_path  tar_path  seed` row per pair. Paths are relative to
//! `<root>`.

use std::fs;
use std::path::{Path, PathBuf};

use super::phantom::{gen_phantom_pair, PhantomSpec};
use super::raster::{load_image, save_raster};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub reference: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub index: usize,
    pub ref_path: String,
    pub tar_path: String,
    pub seed: u64,
}

/// Seed of the `index`-th phantom of a stream.
pub fn pair_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phantoms `start .. start + count` of the stream `base`.
pub fn synthesize(template: &PhantomSpec, base: u64, start: usize, count: usize) -> Result<Vec<Pair>> {
    (start..start + count)
        .map(|i| {
            let spec = PhantomSpec {
                seed: pair_seed(base, i as u64),
                ..*template
            };
            let (reference, target) = gen_phantom_pair(&spec)?;
            Ok(Pair { reference, target })
        })
        .collect()
}

/// Generate `count` pairs into `<root>/<split>` and write the manifest.
pub fn write_split(
    root: &Path,
    split: &str,
    template: &PhantomSpec,
    base: u64,
    count: usize,
) -> Result<Vec<ManifestRow>> {
    let dir = root.join(split);
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::with_capacity(count);
    for index in 0..count {
        let seed = pair_seed(base, index as u64);
        let (reference, target) = gen_phantom_pair(&PhantomSpec { seed, ..*template })?;
        let row = ManifestRow {
            index,
            ref_path: format!("{split}/{index}_ref.mmri"),
            tar_path: format!("{split}/{index}_tar.mmri"),
            seed,
        };
        save_raster(&reference, root.join(&row.ref_path))?;
        save_raster(&target, root.join(&row.tar_path))?;
        rows.push(row);
    }
    fs::write(dir.join(MANIFEST), format_manifest(&rows))?;
    Ok(rows)
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\t{}\n", r.index, r.ref_path, r.tar_path, r.seed))
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            Ok(ManifestRow {
                index: f[0].parse().map_err(|_| bad("bad index"))?,
                ref_path: f[1].to_string(),
                tar_path: f[2].to_string(),
                seed: f[3].parse().map_err(|_| bad("bad seed"))?,
            })
        })
        .collect()
}

pub fn manifest_path(root: &Path, split: &str) -> PathBuf {
    root.join(split).join(MANIFEST)
}

/// Load every pair listed in `<root>/<split>/manifest.tsv`.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Pair>> {
    let path = manifest_path(root, split);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let rows = parse_manifest(&text)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{} lists no pairs", path.display())));
    }
    rows.iter()
        .map(|r| {
            let reference = load_image(root.join(&r.ref_path))?;
            let target = load_image(root.join(&r.tar_path))?;
            if reference.shape() != target.shape() {
                return Err(Error::shape("pair", reference.shape(), target.shape()));
            }
            Ok(Pair { reference, target })
        })
        .collect()
}
