//! Dataset ingestion: class-folder scanning, stratified splits, image
//! decoding, and seeded batch iteration.
//!
//! The dataset root holds one directory per class; class names sorted
//! lexicographically define the label ids, so labels never depend on
//! filesystem enumeration order. The split manifest is a plain text file,
//! one `split<TAB>label<TAB>relative-path` line per item, LF endings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::resize::bilinear;
use crate::rng::Rng;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Scanned dataset: sorted class names and their image files.
#[derive(Debug, Clone)]
pub struct DatasetCatalog {
    pub root: PathBuf,
    pub classes: Vec<String>,
    /// Per class, paths relative to `root`, sorted.
    pub files: Vec<Vec<PathBuf>>,
    /// Non-fatal scan notes (skipped files), for the caller to log.
    pub warnings: Vec<String>,
}

impl DatasetCatalog {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> usize {
        self.files.iter().map(Vec::len).sum()
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        .unwrap_or(false)
}

/// Scan a class-folder dataset root.
pub fn scan_dataset(root: &Path) -> Result<DatasetCatalog> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut class_dirs: Vec<String> = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            match entry.file_name().into_string() {
                Ok(name) => class_dirs.push(name),
                Err(bad) => {
                    return Err(Error::Data(format!(
                        "class folder name {bad:?} is not valid UTF-8"
                    )))
                }
            }
        }
    }
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::Data(format!(
            "dataset root {} has {} class folders, need at least 2",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut files = Vec::with_capacity(class_dirs.len());
    let mut warnings = Vec::new();
    for class in &class_dirs {
        let dir = root.join(class);
        let mut listed: Vec<PathBuf> = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                warnings.push(format!("skipping nested directory {}", path.display()));
                continue;
            }
            if has_image_extension(&path) {
                listed.push(PathBuf::from(class).join(entry.file_name()));
            } else {
                warnings.push(format!("skipping non-image file {}", path.display()));
            }
        }
        if listed.is_empty() {
            return Err(Error::Data(format!("class folder {} holds no images", dir.display())));
        }
        listed.sort();
        files.push(listed);
    }
    Ok(DatasetCatalog { root: root.to_path_buf(), classes: class_dirs, files, warnings })
}

/// Which split an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

/// Deterministic per-class split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    /// Seed the shuffle ran with; kept in memory only, not persisted.
    pub seed: u64,
    pub train: Vec<(PathBuf, usize)>,
    pub val: Vec<(PathBuf, usize)>,
    pub test: Vec<(PathBuf, usize)>,
}

impl SplitManifest {
    pub fn split(&self, which: Split) -> &[(PathBuf, usize)] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|(_, l)| l + 1)
            .max()
            .unwrap_or(0)
    }

    /// Serialize as `split<TAB>label<TAB>relative-path` lines, LF endings,
    /// grouped train/val/test in assignment order. Byte-identical for equal
    /// manifests.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (split, entries) in
            [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)]
        {
            for (rel, label) in entries {
                let rel = rel.to_str().ok_or_else(|| {
                    Error::Data(format!("path {} is not valid UTF-8", rel.display()))
                })?;
                out.push_str(&format!("{}\t{}\t{}\n", split.name(), label, rel));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("reading manifest {}: {e}", path.display())))?;
        let mut manifest =
            SplitManifest { seed: 0, train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (split, label, rel) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(l), Some(r)) => (s, l, r),
                _ => {
                    return Err(Error::Data(format!(
                        "manifest line {} is not split<TAB>label<TAB>path",
                        lineno + 1
                    )))
                }
            };
            let split = Split::parse(split)?;
            let label: usize = label
                .parse()
                .map_err(|_| Error::Data(format!("bad label on manifest line {}", lineno + 1)))?;
            let entry = (PathBuf::from(rel), label);
            match split {
                Split::Train => manifest.train.push(entry),
                Split::Val => manifest.val.push(entry),
                Split::Test => manifest.test.push(entry),
            }
        }
        if manifest.train.is_empty() && manifest.val.is_empty() && manifest.test.is_empty() {
            return Err(Error::Data(format!("manifest {} is empty", path.display())));
        }
        Ok(manifest)
    }
}

/// Per class: seeded shuffle, then contiguous cuts at `round(n·ratio)` with
/// the remainder assigned to train.
pub fn stratified_split(
    catalog: &DatasetCatalog,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    let mut manifest =
        SplitManifest { seed, train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let mut rng = Rng::for_stream(seed, 0x5917);
    for (label, class_files) in catalog.files.iter().enumerate() {
        let n = class_files.len();
        let n_val = (n as f64 * rv).round() as usize;
        let n_test = (n as f64 * rs).round() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n {
            return Err(Error::Data(format!(
                "class '{}' has {n} items, too few for every split to get one",
                catalog.classes[label]
            )));
        }
        let n_train = n - n_val - n_test;
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for (rank, &idx) in order.iter().enumerate() {
            let entry = (class_files[idx].clone(), label);
            if rank < n_train {
                manifest.train.push(entry);
            } else if rank < n_train + n_val {
                manifest.val.push(entry);
            } else {
                manifest.test.push(entry);
            }
        }
    }
    Ok(manifest)
}

/// Decode a JPEG/PNG to RGB, bilinear-resize to `side`x`side` (aspect ratio
/// not preserved) and scale to `[0,1]`. Returns `[3,side,side]` row-major.
pub fn load_image(path: &Path, side: usize) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw(); // interleaved RGB
    let mut planes = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = (y * w + x) * 3;
            for c in 0..3 {
                planes[c * h * w + y * w + x] = raw[px + c] as f32 / 255.0;
            }
        }
    }
    Ok(bilinear(&planes, 3, h, w, side, side))
}

/// Index batches for one epoch: a seeded shuffle that is a pure function of
/// `(seed, epoch)`, cut into `batch_size` chunks with the final partial batch
/// kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::for_stream(seed, 0xba7c_0000 ^ epoch);
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Load the images of one batch into a `[B,3,side,side]` buffer.
pub fn load_batch(
    root: &Path,
    entries: &[(PathBuf, usize)],
    indices: &[usize],
    side: usize,
) -> Result<(Vec<f32>, Vec<usize>, Vec<PathBuf>)> {
    let mut images = Vec::with_capacity(indices.len() * 3 * side * side);
    let mut labels = Vec::with_capacity(indices.len());
    let mut paths = Vec::with_capacity(indices.len());
    for &i in indices {
        let (rel, label) = &entries[i];
        images.extend_from_slice(&load_image(&root.join(rel), side)?);
        labels.push(*label);
        paths.push(rel.clone());
    }
    Ok((images, labels, paths))
}

// ── Synthetic data ───────────────────────────────────────────────────────

/// Write a small synthetic class-folder dataset of geometric patterns; one
/// folder per class, PNG images, deterministic in `seed`. Meant for smoke
/// tests and the ablation harness, not for benchmarking.
pub fn generate_synthetic_dataset(
    root: &Path,
    num_classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(root)?;
    for class in 0..num_classes {
        let dir = root.join(format!("class_{class:02}"));
        fs::create_dir_all(&dir)?;
        for idx in 0..per_class {
            let mut rng = Rng::for_stream(seed, (class * 10_000 + idx) as u64);
            let pixels = synth_pattern(class, side, &mut rng);
            let img = image::RgbImage::from_raw(side as u32, side as u32, pixels)
                .expect("buffer matches dimensions");
            img.save_with_format(dir.join(format!("img_{idx:03}.png")), image::ImageFormat::Png)
                .map_err(|e| Error::Data(format!("writing synthetic image: {e}")))?;
        }
    }
    Ok(())
}

/// Class-distinct pattern with a little seeded jitter.
fn synth_pattern(class: usize, side: usize, rng: &mut Rng) -> Vec<u8> {
    let palette: [[u8; 3]; 8] = [
        [220, 40, 40],
        [40, 200, 60],
        [50, 80, 220],
        [230, 200, 40],
        [200, 60, 200],
        [40, 210, 210],
        [240, 140, 40],
        [150, 150, 150],
    ];
    let color = palette[class % palette.len()];
    let phase = rng.below(side as u64 / 2) as usize;
    let period = 4 + class % 4;
    let mut out = vec![0u8; side * side * 3];
    for y in 0..side {
        for x in 0..side {
            let on = match class % 8 {
                0 => (y + phase) / period % 2 == 0,                 // horizontal stripes
                1 => (x + phase) / period % 2 == 0,                 // vertical stripes
                2 => ((x / period) + (y / period)) % 2 == 0,        // checkerboard
                3 => true,                                          // solid
                4 => (x + y + phase) / period % 2 == 0,             // diagonals
                5 => {
                    let (cx, cy) = (side / 2, side / 2);
                    let d2 = (x as isize - cx as isize).pow(2) + (y as isize - cy as isize).pow(2);
                    ((d2 as f64).sqrt() as usize + phase) / period % 2 == 0 // rings
                }
                6 => {
                    let q = side / 4;
                    x > q && x < side - q && y > q && y < side - q // center block
                }
                _ => (x * y / period) % 3 == 0,                     // grid texture
            };
            let noise = rng.below(24) as i16 - 12;
            let px = (y * side + x) * 3;
            for c in 0..3 {
                let base = if on { color[c] as i16 } else { 24 };
                out[px + c] = (base + noise).clamp(0, 255) as u8;
            }
        }
    }
    out
}

/// Group split entries per class; handy for count assertions and stats.
pub fn per_class_counts(entries: &[(PathBuf, usize)]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for (_, label) in entries {
        *counts.entry(*label).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn mock_catalog(per_class: &[usize]) -> DatasetCatalog {
        DatasetCatalog {
            root: PathBuf::from("/mock"),
            classes: (0..per_class.len()).map(|c| format!("class_{c}")).collect(),
            files: per_class
                .iter()
                .enumerate()
                .map(|(c, &n)| {
                    (0..n).map(|i| PathBuf::from(format!("class_{c}/img_{i}.png"))).collect()
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn scan_sorts_classes_and_skips_strays() {
        let dir = TempDir::new().unwrap();
        let root = dir.path();
        for class in ["zebra", "apple", "mango"] {
            let d = root.join(class);
            fs::create_dir(&d).unwrap();
            fs::write(d.join("a.png"), b"not a real png but listed").unwrap();
            fs::write(d.join("b.JPG"), b"x").unwrap();
        }
        fs::write(root.join("zebra/notes.txt"), b"stray").unwrap();
        let catalog = scan_dataset(root).unwrap();
        assert_eq!(catalog.classes, vec!["apple", "mango", "zebra"]);
        assert_eq!(catalog.total(), 6);
        assert_eq!(catalog.warnings.len(), 1);
        assert!(catalog.warnings[0].contains("notes.txt"));
    }

    #[test]
    fn scan_rejects_single_class_and_empty_class() {
        let dir = TempDir::new().unwrap();
        fs::create_dir(dir.path().join("only")).unwrap();
        fs::write(dir.path().join("only/a.png"), b"x").unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Data(_))));

        let dir = TempDir::new().unwrap();
        for class in ["a", "b"] {
            fs::create_dir(dir.path().join(class)).unwrap();
        }
        fs::write(dir.path().join("a/x.png"), b"x").unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn split_kvasir_sized_catalog() {
        let catalog = mock_catalog(&[1000; 8]);
        let manifest = stratified_split(&catalog, (0.60, 0.25, 0.15), 7).unwrap();
        assert_eq!(manifest.train.len(), 4800);
        assert_eq!(manifest.val.len(), 2000);
        assert_eq!(manifest.test.len(), 1200);
        for counts in
            [per_class_counts(&manifest.train), per_class_counts(&manifest.val), per_class_counts(&manifest.test)]
        {
            assert_eq!(counts.len(), 8);
        }
        assert!(per_class_counts(&manifest.train).values().all(|&n| n == 600));
        assert!(per_class_counts(&manifest.val).values().all(|&n| n == 250));
        assert!(per_class_counts(&manifest.test).values().all(|&n| n == 150));
    }

    #[test]
    fn split_is_a_partition() {
        let catalog = mock_catalog(&[41, 53, 67]);
        let manifest = stratified_split(&catalog, (0.6, 0.25, 0.15), 3).unwrap();
        let mut all: Vec<&PathBuf> = manifest
            .train
            .iter()
            .chain(&manifest.val)
            .chain(&manifest.test)
            .map(|(p, _)| p)
            .collect();
        let total = catalog.total();
        assert_eq!(all.len(), total);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total, "splits overlap");
    }

    #[test]
    fn split_rejects_zero_ratio_and_tiny_classes() {
        let catalog = mock_catalog(&[100, 100]);
        assert!(stratified_split(&catalog, (1.0, 0.0, 0.0), 1).is_err());
        let tiny = mock_catalog(&[3, 3]);
        assert!(stratified_split(&tiny, (0.6, 0.25, 0.15), 1).is_err());
    }

    #[test]
    fn split_determinism_and_seed_sensitivity() {
        let catalog = mock_catalog(&[50; 4]);
        let a = stratified_split(&catalog, (0.6, 0.25, 0.15), 11).unwrap();
        let b = stratified_split(&catalog, (0.6, 0.25, 0.15), 11).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&catalog, (0.6, 0.25, 0.15), 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn manifest_roundtrip_and_byte_identical_writes() {
        let dir = TempDir::new().unwrap();
        let catalog = mock_catalog(&[20; 3]);
        let manifest = stratified_split(&catalog, (0.6, 0.25, 0.15), 5).unwrap();
        let p1 = dir.path().join("m1.tsv");
        let p2 = dir.path().join("m2.tsv");
        manifest.write(&p1).unwrap();
        manifest.write(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        let back = SplitManifest::read(&p1).unwrap();
        assert_eq!(back.train, manifest.train);
        assert_eq!(back.val, manifest.val);
        assert_eq!(back.test, manifest.test);

        let text = fs::read_to_string(&p1).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first.split('\t').count(), 3);
        assert!(first.starts_with("train\t"));
    }

    #[test]
    fn batches_cover_every_item_once() {
        let bs = batches(10, 4, 9, 0);
        assert_eq!(bs.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut seen: Vec<usize> = bs.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batch_order_depends_on_epoch_not_on_call() {
        assert_eq!(batches(32, 5, 7, 0), batches(32, 5, 7, 0));
        assert_ne!(batches(32, 5, 7, 0), batches(32, 5, 7, 1));
    }

    #[test]
    fn load_image_resizes_and_normalizes() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("img.png");
        let mut img = image::RgbImage::new(10, 6);
        for p in img.pixels_mut() {
            *p = image::Rgb([200, 100, 50]);
        }
        img.save(&path).unwrap();
        let out = load_image(&path, 8).unwrap();
        assert_eq!(out.len(), 3 * 64);
        for (c, expect) in [(0usize, 200.0f32), (1, 100.0), (2, 50.0)] {
            for &v in &out[c * 64..(c + 1) * 64] {
                assert!((v - expect / 255.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn load_image_endoscopy_resolution_to_448() {
        // 720x576 is the low end of the source material's resolution range.
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("frame.png");
        let mut img = image::RgbImage::new(720, 576);
        for p in img.pixels_mut() {
            *p = image::Rgb([180, 90, 30]);
        }
        img.save(&path).unwrap();
        let out = load_image(&path, 448).unwrap();
        assert_eq!(out.len(), 3 * 448 * 448);
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (c, expect) in [(0usize, 180.0f32), (1, 90.0), (2, 30.0)] {
            let plane = &out[c * 448 * 448..(c + 1) * 448 * 448];
            assert!(plane.iter().all(|&v| (v - expect / 255.0).abs() < 1e-6));
        }
    }

    #[test]
    fn load_image_same_size_is_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("img.png");
        let mut img = image::RgbImage::new(4, 4);
        let mut v = 0u8;
        for p in img.pixels_mut() {
            *p = image::Rgb([v, v.wrapping_add(40), v.wrapping_add(90)]);
            v = v.wrapping_add(13);
        }
        img.save(&path).unwrap();
        let out = load_image(&path, 4).unwrap();
        let decoded = image::open(&path).unwrap().to_rgb8();
        for y in 0..4usize {
            for x in 0..4usize {
                let px = decoded.get_pixel(x as u32, y as u32);
                for c in 0..3usize {
                    assert_eq!(out[c * 16 + y * 4 + x], px[c] as f32 / 255.0);
                }
            }
        }
    }

    #[test]
    fn load_image_rejects_garbage() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("broken.png");
        fs::write(&path, b"definitely not a png").unwrap();
        let err = load_image(&path, 8).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }

    #[test]
    fn synthetic_dataset_scans_and_splits() {
        let dir = TempDir::new().unwrap();
        generate_synthetic_dataset(dir.path(), 4, 10, 32, 99).unwrap();
        let catalog = scan_dataset(dir.path()).unwrap();
        assert_eq!(catalog.num_classes(), 4);
        assert_eq!(catalog.total(), 40);
        let manifest = stratified_split(&catalog, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!(manifest.train.len(), 24);
        let img = load_image(&catalog.root.join(&manifest.train[0].0), 32).unwrap();
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
