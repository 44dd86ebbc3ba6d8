use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image::Image;
use crate::data::otsu::otsu_binarize;
use crate::data::render::{max_digits, render_plate, Layout, PlateSpec};
use crate::data::transform::{degrade, rotate, DEGRADE_FACTOR};
use crate::error::{Error, Result};
use crate::parallel;

/// Rotation angles in degrees; every plate yields one sample per angle.
pub const ANGLES: [i32; 4] = [-30, -15, 15, 30];

pub const MIN_DIGITS: usize = 4;
pub const MAX_DIGITS: usize = 8;

const MANIFEST_HEADER: &str = "# snider manifest v1\n# id lq hq hq0 seg angle count digits\n";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub i_lq: Image,
    pub i_hq: Image,
    pub i_hq_0: Image,
    /// One channel, values in `{0, 1}`.
    pub i_seg: Image,
    pub count: usize,
    pub angle: i32,
    pub digits: String,
}

fn check_angle(angle: f64) -> Result<i32> {
    ANGLES
        .iter()
        .copied()
        .find(|&a| a as f64 == angle)
        .ok_or_else(|| Error::invalid(format!("angle {angle} is not one of {ANGLES:?}")))
}

/// Noise-free sample; see [`generate_sample_noisy`].
pub fn generate_sample(spec: &PlateSpec, angle: f64, size: usize, seed: u64) -> Result<TrainingSample> {
    generate_sample_noisy(spec, angle, size, seed, 0.0)
}

/// Renders the plate, rotates it by `angle`, degrades the rotation and
/// binarizes the degraded image. Rotated and degraded images are rounded to
/// 8 bits so they survive a netpbm round trip unchanged.
pub fn generate_sample_noisy(
    spec: &PlateSpec,
    angle: f64,
    size: usize,
    seed: u64,
    noise_sigma: f32,
) -> Result<TrainingSample> {
    let angle = check_angle(angle)?;
    if !size.is_multiple_of(DEGRADE_FACTOR) {
        return Err(Error::invalid(format!(
            "size {size} is not divisible by {DEGRADE_FACTOR}"
        )));
    }
    let i_hq_0 = render_plate(spec, size, seed)?.image;
    sample_from_render(spec, i_hq_0, angle, seed, noise_sigma)
}

fn sample_from_render(
    spec: &PlateSpec,
    i_hq_0: Image,
    angle: i32,
    seed: u64,
    noise_sigma: f32,
) -> Result<TrainingSample> {
    let i_hq = rotate(&i_hq_0, angle as f64, spec.layout.background).quantized();
    let noise_seed = seed ^ (angle as i64 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let i_lq = degrade(&i_hq, noise_sigma, noise_seed)?.quantized();
    let i_seg = otsu_binarize(&i_lq);
    Ok(TrainingSample {
        i_lq,
        i_hq,
        i_hq_0,
        i_seg,
        count: spec.digits.chars().count(),
        angle,
        digits: spec.digits.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_plates: usize,
    pub size: usize,
    pub seed: u64,
    /// Fraction of plates assigned to the training split.
    pub split: f64,
    pub noise_sigma: f32,
    pub decoration: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_plates: 100,
            size: 64,
            seed: 0,
            split: 0.8,
            noise_sigma: 0.05,
            decoration: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

/// Distinct random digit strings with their render seeds.
pub fn plate_specs(config: &DatasetConfig) -> Result<Vec<(PlateSpec, u64)>> {
    let layout = Layout::default();
    let max_len = max_digits(config.size, &layout).min(MAX_DIGITS);
    if max_len < MIN_DIGITS {
        return Err(Error::invalid(format!(
            "a {} px plate fits only {max_len} digits",
            config.size
        )));
    }
    let capacity: f64 = (MIN_DIGITS..=max_len).map(|n| 10f64.powi(n as i32)).sum();
    if config.n_plates as f64 > capacity {
        return Err(Error::invalid(format!(
            "cannot draw {} distinct plates of length {MIN_DIGITS}..={max_len}",
            config.n_plates
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = HashSet::new();
    let mut specs = Vec::with_capacity(config.n_plates);
    while specs.len() < config.n_plates {
        let len = rng.random_range(MIN_DIGITS..=max_len);
        let digits: String = (0..len)
            .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
            .collect();
        let seed = rng.next_u64();
        if seen.insert(digits.clone()) {
            let mut spec = PlateSpec::new(digits);
            spec.decoration = config.decoration;
            specs.push((spec, seed));
        }
    }
    Ok(specs)
}

/// Generates the dataset under `out_dir`: images in `images/plate_NNNN/` and
/// the `train.txt` / `test.txt` manifests. The first `round(n * split)`
/// plates form the training split.
pub fn make_dataset(out_dir: &Path, config: &DatasetConfig) -> Result<DatasetSummary> {
    if !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::invalid(format!(
            "split must lie in (0, 1), got {}",
            config.split
        )));
    }
    if !config.size.is_multiple_of(DEGRADE_FACTOR) {
        return Err(Error::invalid(format!(
            "size {} is not divisible by {DEGRADE_FACTOR}",
            config.size
        )));
    }
    let specs = plate_specs(config)?;
    let plates: Vec<Result<Vec<TrainingSample>>> = parallel::map_indexed(specs.len(), |i| {
        let (spec, seed) = &specs[i];
        let i_hq_0 = render_plate(spec, config.size, *seed)?.image;
        ANGLES
            .iter()
            .map(|&a| sample_from_render(spec, i_hq_0.clone(), a, *seed, config.noise_sigma))
            .collect()
    });
    let n_train = ((config.n_plates as f64) * config.split).round() as usize;
    let mut train = Manifest::new(out_dir);
    let mut test = Manifest::new(out_dir);
    for (i, plate) in plates.into_iter().enumerate() {
        let samples = plate?;
        let rel = PathBuf::from("images").join(format!("plate_{i:04}"));
        let dir = out_dir.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let hq0 = rel.join("hq0.ppm");
        samples[0].i_hq_0.save(&out_dir.join(&hq0))?;
        for s in &samples {
            let tag = angle_tag(s.angle);
            let record = ManifestRecord {
                id: format!("p{i:04}_{tag}"),
                lq: rel.join(format!("{tag}_lq.ppm")),
                hq: rel.join(format!("{tag}_hq.ppm")),
                hq0: hq0.clone(),
                seg: rel.join(format!("{tag}_seg.pgm")),
                angle: s.angle,
                count: s.count,
                digits: s.digits.clone(),
            };
            s.i_lq.save(&out_dir.join(&record.lq))?;
            s.i_hq.save(&out_dir.join(&record.hq))?;
            // a {0, 1} mask encodes as 0/255
            s.i_seg.save(&out_dir.join(&record.seg))?;
            if i < n_train {
                train.records.push(record);
            } else {
                test.records.push(record);
            }
        }
    }
    let train_manifest = out_dir.join("train.txt");
    let test_manifest = out_dir.join("test.txt");
    train.save(&train_manifest)?;
    test.save(&test_manifest)?;
    Ok(DatasetSummary {
        train_manifest,
        test_manifest,
        n_train: train.records.len(),
        n_test: test.records.len(),
    })
}

fn angle_tag(angle: i32) -> String {
    if angle < 0 {
        format!("m{}", -angle)
    } else {
        format!("p{angle}")
    }
}

/// One sample in a manifest. Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub lq: PathBuf,
    pub hq: PathBuf,
    pub hq0: PathBuf,
    pub seg: PathBuf,
    pub angle: i32,
    pub count: usize,
    pub digits: String,
}

impl ManifestRecord {
    pub fn load(&self, base: &Path) -> Result<TrainingSample> {
        let seg_path = base.join(&self.seg);
        let i_seg = Image::load(&seg_path)?;
        if i_seg.channels() != 1 || i_seg.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Format {
                path: seg_path,
                message: "mask must be a one-channel 0/255 image".into(),
            });
        }
        Ok(TrainingSample {
            i_lq: Image::load(&base.join(&self.lq))?,
            i_hq: Image::load(&base.join(&self.hq))?,
            i_hq_0: Image::load(&base.join(&self.hq0))?,
            i_seg,
            count: self.count,
            angle: self.angle,
            digits: self.digits.clone(),
        })
    }
}

/// Line-oriented sample list. Lines starting with `#` and blank lines are
/// ignored; every other line holds eight whitespace-separated fields:
/// `id lq hq hq0 seg angle count digits`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub base: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Manifest {
            base: base.into(),
            records: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                r.id,
                r.lq.display(),
                r.hq.display(),
                r.hq0.display(),
                r.seg.display(),
                r.angle,
                r.count,
                r.digits
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, base: impl Into<PathBuf>) -> std::result::Result<Manifest, String> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(format!("line {}: expected 8 fields, got {}", lineno + 1, f.len()));
            }
            let angle: i32 = f[5]
                .parse()
                .map_err(|_| format!("line {}: invalid angle `{}`", lineno + 1, f[5]))?;
            let count: usize = f[6]
                .parse()
                .map_err(|_| format!("line {}: invalid count `{}`", lineno + 1, f[6]))?;
            if !f[7].chars().all(|c| c.is_ascii_digit()) || f[7].chars().count() != count {
                return Err(format!(
                    "line {}: digits `{}` disagree with count {count}",
                    lineno + 1,
                    f[7]
                ));
            }
            records.push(ManifestRecord {
                id: f[0].to_string(),
                lq: f[1].into(),
                hq: f[2].into(),
                hq0: f[3].into(),
                seg: f[4].into(),
                angle,
                count,
                digits: f[7].to_string(),
            });
        }
        Ok(Manifest {
            base: base.into(),
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn load_samples(&self) -> Result<Vec<TrainingSample>> {
        let loaded = parallel::map_indexed(self.records.len(), |i| self.records[i].load(&self.base));
        loaded.into_iter().collect()
    }
}
