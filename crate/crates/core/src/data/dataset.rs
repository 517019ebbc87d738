//! Sample generation and the RLDS v1 dataset file.
//!
//! Layout (little-endian): `b"RLDS"`, u8 version, u8 task id, u16 reserved,
//! u32 sample count, u32 patch dim, u32 z dim, then per sample `x`, `y` and
//! `z` as f32.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::cifar::{load_cifar_split, to_gray, GrayImage, CIFAR_TEST_FILES, CIFAR_TRAIN_FILES};
use super::homography::{build_homography, TaskKind};
use super::warp::{center_crop, normalize_pixels, warp_image, PATCH_DIM, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::linalg::{Real, Rng, Tensor2D};

pub const RLDS_MAGIC: &[u8; 4] = b"RLDS";
pub const RLDS_VERSION: u8 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub x: &'a [f32],
    pub y: &'a [f32],
    pub z: &'a [f32],
}

/// Samples stored column-wise in flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub patch_dim: usize,
    x: Vec<f32>,
    y: Vec<f32>,
    z: Vec<f32>,
}

impl Dataset {
    pub fn new(task: TaskKind, patch_dim: usize) -> Self {
        Dataset {
            task,
            patch_dim,
            x: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
        }
    }

    pub fn z_dim(&self) -> usize {
        self.task.z_dim()
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.patch_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, x: &[f32], y: &[f32], z: &[f32]) -> Result<()> {
        if x.len() != self.patch_dim || y.len() != self.patch_dim || z.len() != self.z_dim() {
            return Err(Error::shape(
                "Dataset::push",
                format!(
                    "expected x,y of {} and z of {}, got {}, {}, {}",
                    self.patch_dim,
                    self.z_dim(),
                    x.len(),
                    y.len(),
                    z.len()
                ),
            ));
        }
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
        self.z.extend_from_slice(z);
        Ok(())
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let (p, k) = (self.patch_dim, self.z_dim());
        Sample {
            x: &self.x[i * p..(i + 1) * p],
            y: &self.y[i * p..(i + 1) * p],
            z: &self.z[i * k..(i + 1) * k],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.x.truncate(n * self.patch_dim);
        self.y.truncate(n * self.patch_dim);
        self.z.truncate(n * self.z_dim());
    }

    /// Gathers rows `indices` into `(x, y, z)` batch matrices.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor2D<T>, Tensor2D<T>, Tensor2D<T>) {
        let gather = |src: &[f32], width: usize| {
            let mut data = Vec::with_capacity(indices.len() * width);
            for &i in indices {
                data.extend(src[i * width..(i + 1) * width].iter().map(|&v| T::from_f64(v as f64)));
            }
            Tensor2D::new(indices.len(), width, data).expect("batch dimensions")
        };
        (
            gather(&self.x, self.patch_dim),
            gather(&self.y, self.patch_dim),
            gather(&self.z, self.z_dim()),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.x.len() + self.y.len() + self.z.len()));
        out.extend_from_slice(RLDS_MAGIC);
        out.push(RLDS_VERSION);
        out.push(self.task.id());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.z_dim() as u32).to_le_bytes());
        for i in 0..n {
            let s = self.sample(i);
            for v in s.x.iter().chain(s.y).chain(s.z) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: String| Error::format("RLDS dataset", path, d);
        if bytes.len() < HEADER_LEN || &bytes[..4] != RLDS_MAGIC {
            return Err(bad("missing RLDS header".into()));
        }
        if bytes[4] != RLDS_VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let task = TaskKind::from_id(bytes[5]).ok_or_else(|| bad(format!("unknown task id {}", bytes[5])))?;
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (n, patch_dim, z_dim) = (word(8), word(12), word(16));
        if z_dim != task.z_dim() {
            return Err(bad(format!("z dim {z_dim} does not match task {task}")));
        }
        if patch_dim == 0 {
            return Err(bad("zero patch dimension".into()));
        }
        let stride = 2 * patch_dim + z_dim;
        let expected = n
            .checked_mul(stride * 4)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| bad("sample count overflows".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes for {n} samples, found {}",
                bytes.len()
            )));
        }
        let mut ds = Dataset::new(task, patch_dim);
        ds.x.reserve(n * patch_dim);
        ds.y.reserve(n * patch_dim);
        ds.z.reserve(n * z_dim);
        let floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for (j, v) in floats.enumerate() {
            let k = j % stride;
            if k < patch_dim {
                ds.x.push(v);
            } else if k < 2 * patch_dim {
                ds.y.push(v);
            } else {
                ds.z.push(v);
            }
        }
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// RNG stream for one (split, repeat, image) triple.
fn sample_stream(split: Split, repeat: usize, image: usize) -> u64 {
    (split.id() << 48) | ((repeat as u64) << 32) | image as u64
}

/// Draws `z` uniformly from the task ranges.
pub fn sample_z(task: TaskKind, rng: &mut Rng) -> Vec<f64> {
    task.ranges().iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect()
}

/// One sample from a 32x32 gray image: warp by `H(z)`, crop both centres,
/// normalize.
pub fn make_sample(img: &GrayImage, task: TaskKind, z: &[f64]) -> Result<(Vec<f32>, Vec<f32>)> {
    let h = build_homography(task, z)?;
    let warped = warp_image(img, &h)?;
    Ok((
        normalize_pixels(&center_crop(img, PATCH_SIDE)?),
        normalize_pixels(&center_crop(&warped, PATCH_SIDE)?),
    ))
}

/// Repeat-major: all images with repeat 0, then all with repeat 1, ...
pub fn generate_samples(
    images: &[GrayImage],
    task: TaskKind,
    repeats: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let mut ds = Dataset::new(task, PATCH_DIM);
    for repeat in 0..repeats {
        for (i, img) in images.iter().enumerate() {
            let mut rng = Rng::substream(seed, sample_stream(split, repeat, i));
            let mut z = sample_z(task, &mut rng);
            // the affine ranges include a measure-zero singular set
            while build_homography(task, &z)?.inverse().is_err() {
                z = sample_z(task, &mut rng);
            }
            let (x, y) = make_sample(img, task, &z)?;
            let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
            ds.push(&x, &y, &zf)?;
        }
    }
    Ok(ds)
}

/// Paths of the train and test files for `task` under `out_dir`.
pub fn dataset_paths(out_dir: impl AsRef<Path>, task: TaskKind) -> (PathBuf, PathBuf) {
    let d = out_dir.as_ref();
    (
        d.join(format!("{}_train.rlds", task.name())),
        d.join(format!("{}_test.rlds", task.name())),
    )
}

/// Reads the CIFAR-10 batches in `cifar_dir` and writes train and test RLDS
/// files for `task` into `out_dir`. Returns the two paths.
pub fn generate_dataset(
    cifar_dir: impl AsRef<Path>,
    task: TaskKind,
    repeats: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (train_path, test_path) = dataset_paths(out_dir, task);
    for (files, split, path) in [
        (&CIFAR_TRAIN_FILES[..], Split::Train, &train_path),
        (&CIFAR_TEST_FILES[..], Split::Test, &test_path),
    ] {
        let gray: Vec<GrayImage> = load_cifar_split(&cifar_dir, files)?.iter().map(to_gray).collect();
        log::info!("{}: {} images x {repeats} repeats", split.name(), gray.len());
        generate_samples(&gray, task, repeats, seed, split)?.write(path)?;
    }
    Ok((train_path, test_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_images;

    fn grays(n: usize) -> Vec<GrayImage> {
        synthetic_images(n, 3).iter().map(to_gray).collect()
    }

    #[test]
    fn counts_ranges_and_normalization() {
        for task in TaskKind::ALL {
            let ds = generate_samples(&grays(4), task, 3, 1, Split::Train).unwrap();
            assert_eq!(ds.len(), 12);
            for s in ds.iter() {
                assert!(s.x.iter().chain(s.y).all(|v| (-0.5..=0.5).contains(v)));
                for (&v, &(lo, hi)) in s.z.iter().zip(task.ranges()) {
                    assert!(v as f64 >= lo && v as f64 <= hi);
                }
            }
        }
    }

    #[test]
    fn x_patch_is_centre_crop() {
        let imgs = grays(2);
        let ds = generate_samples(&imgs, TaskKind::Translation, 2, 5, Split::Test).unwrap();
        let expected = normalize_pixels(&center_crop(&imgs[1], 11).unwrap());
        assert_eq!(ds.sample(1).x, &expected[..]);
        assert_eq!(ds.sample(3).x, &expected[..]);
        assert_ne!(ds.sample(1).z, ds.sample(3).z);
    }

    #[test]
    fn seeds_and_splits_are_independent() {
        let imgs = grays(3);
        let a = generate_samples(&imgs, TaskKind::Rotation, 1, 1, Split::Train).unwrap();
        assert_eq!(
            a,
            generate_samples(&imgs, TaskKind::Rotation, 1, 1, Split::Train).unwrap()
        );
        assert_ne!(
            a,
            generate_samples(&imgs, TaskKind::Rotation, 1, 2, Split::Train).unwrap()
        );
        assert_ne!(
            a,
            generate_samples(&imgs, TaskKind::Rotation, 1, 1, Split::Test).unwrap()
        );
    }

    #[test]
    fn rlds_round_trip() {
        let ds = generate_samples(&grays(3), TaskKind::Projective, 2, 9, Split::Train).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[..4], b"RLDS");
        assert_eq!(bytes.len(), 20 + 6 * (2 * 121 + 6) * 4);
        let back = Dataset::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.rlds");
        ds.write(&p).unwrap();
        assert_eq!(Dataset::read(&p).unwrap(), ds);
    }

    #[test]
    fn corrupt_files_rejected() {
        let ds = generate_samples(&grays(1), TaskKind::Translation, 1, 0, Split::Train).unwrap();
        let mut bytes = ds.to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1], Path::new("t")).is_err());
        bytes[5] = 1;
        assert!(Dataset::from_bytes(&bytes, Path::new("t")).is_err());
        assert!(Dataset::from_bytes(b"NOPE", Path::new("t")).is_err());
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = generate_samples(&grays(3), TaskKind::Scaling, 1, 4, Split::Train).unwrap();
        let (x, y, z) = ds.batch::<f64>(&[2, 0]);
        assert_eq!(x.shape(), (2, 121));
        assert_eq!(y.get(1, 7), ds.sample(0).y[7] as f64);
        assert_eq!(z.get(0, 1), ds.sample(2).z[1] as f64);
    }

    #[test]
    fn generate_dataset_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let cifar = dir.path().join("cifar");
        fs::create_dir_all(&cifar).unwrap();
        for (i, f) in CIFAR_TRAIN_FILES.iter().chain(&CIFAR_TEST_FILES).enumerate() {
            let imgs = synthetic_images(2, i as u64);
            fs::write(cifar.join(f), crate::data::cifar::encode_cifar(&imgs)).unwrap();
        }
        let (tr, te) = generate_dataset(&cifar, TaskKind::Affine, 2, 1, dir.path().join("out")).unwrap();
        assert_eq!(Dataset::read(&tr).unwrap().len(), 20);
        assert_eq!(Dataset::read(&te).unwrap().len(), 4);
    }
}
