//! Synthetic (clean, rain, snow) data, PPM files and the on-disk manifest.
//!
//! A dataset directory looks like
//!
//! ```text
//! manifest.tsv        id<TAB>label<TAB>degraded_path<TAB>clean_path
//! clean/00000.ppm
//! rain/00000.ppm
//! snow/00000.ppm
//! ```
//!
//! with paths in the manifest relative to the directory.

mod image;
mod ppm;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use image::Image;
pub use ppm::{decode_ppm, encode_ppm, quantize, read_image, write_image, PpmError};
pub use synth::{degrade, gen_clean, DegradeSpec};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Ppm(#[from] PpmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("split: {0}")]
    Split(String),
    #[error("{0}")]
    Config(String),
    #[error("image {id} has no {missing} counterpart")]
    MissingPartner { id: u64, missing: Label },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Rain,
    Snow,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Rain, Label::Snow];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Rain => "rain",
            Label::Snow => "snow",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rain" => Ok(Label::Rain),
            "snow" => Ok(Label::Snow),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: u64,
    pub label: Label,
    pub degraded: Image,
    pub clean: Image,
}

/// The rain and snow versions of one clean image.
#[derive(Debug, Clone, Copy)]
pub struct Tuple<'a> {
    pub rain: &'a ImagePair,
    pub snow: &'a ImagePair,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pairs: Vec<ImagePair>,
}

/// Contiguous prefix split, no shuffling. The train side gets
/// `round(len * train_fraction)` items.
pub fn split<T: Clone>(items: &[T], train_fraction: f64) -> Result<(Vec<T>, Vec<T>), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = (items.len() as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= items.len() {
        return Err(DataError::Split(format!(
            "{} items at fraction {train_fraction} leave an empty side",
            items.len()
        )));
    }
    Ok((items[..n_train].to_vec(), items[n_train..].to_vec()))
}

/// Settings for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            count: 200,
            size: 64,
        }
    }
}

fn degrade_seed(seed: u64, id: u64, label: Label) -> u64 {
    let salt = match label {
        Label::Rain => 0x5241_494E,
        Label::Snow => 0x534E_4F57,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ salt
}

/// Clean scenes plus one rain and one snow rendering of each.
pub fn generate(cfg: &GenConfig) -> Result<Dataset, DataError> {
    let clean = gen_clean(cfg.seed, cfg.count, cfg.size)?;
    let mut pairs = Vec::with_capacity(2 * cfg.count);
    for (i, img) in clean.into_iter().enumerate() {
        let id = i as u64;
        for label in Label::ALL {
            let spec = DegradeSpec::for_label(label, degrade_seed(cfg.seed, id, label));
            pairs.push(ImagePair {
                id,
                label,
                degraded: degrade(&img, &spec)?,
                clean: img.clone(),
            });
        }
    }
    Ok(Dataset { pairs })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rain/snow tuples in order of first appearance of each id.
    pub fn tuples(&self) -> Result<Vec<Tuple<'_>>, DataError> {
        let mut ids: Vec<u64> = Vec::new();
        for p in &self.pairs {
            if !ids.contains(&p.id) {
                ids.push(p.id);
            }
        }
        ids.into_iter()
            .map(|id| {
                let find = |label| {
                    self.pairs
                        .iter()
                        .find(|p| p.id == id && p.label == label)
                        .ok_or(DataError::MissingPartner { id, missing: label })
                };
                Ok(Tuple {
                    rain: find(Label::Rain)?,
                    snow: find(Label::Snow)?,
                })
            })
            .collect()
    }

    /// Splits by clean image, so both renderings of a scene land on the same side.
    pub fn split(&self, train_fraction: f64) -> Result<(Dataset, Dataset), DataError> {
        let tuples = self.tuples()?;
        let (train, test) = split(&tuples, train_fraction)?;
        let flatten = |ts: Vec<Tuple<'_>>| Dataset {
            pairs: ts
                .into_iter()
                .flat_map(|t| [t.rain.clone(), t.snow.clone()])
                .collect(),
        };
        Ok((flatten(train), flatten(test)))
    }

    /// Writes images and the manifest under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        for sub in ["clean", "rain", "snow"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let mut manifest = String::new();
        let mut written_clean: Vec<u64> = Vec::new();
        for p in &self.pairs {
            let degraded = format!("{}/{:05}.ppm", p.label, p.id);
            let clean = format!("clean/{:05}.ppm", p.id);
            write_image(dir.join(&degraded), &p.degraded)?;
            if !written_clean.contains(&p.id) {
                write_image(dir.join(&clean), &p.clean)?;
                written_clean.push(p.id);
            }
            manifest.push_str(&format!("{}\t{}\t{}\t{}\n", p.id, p.label, degraded, clean));
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(io_err(&path))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset, DataError> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| DataError::Manifest { line: i + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, label, degraded, clean] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let id = id.parse().map_err(|_| bad(format!("bad id {id:?}")))?;
            let label = label.parse().map_err(bad)?;
            let degraded = read_image(resolve(dir, degraded))?;
            let clean = read_image(resolve(dir, clean))?;
            if (degraded.width, degraded.height) != (clean.width, clean.height) {
                return Err(bad("degraded and clean sizes differ".into()));
            }
            pairs.push(ImagePair {
                id,
                label,
                degraded,
                clean,
            });
        }
        Ok(Dataset { pairs })
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let items: Vec<u32> = (0..8000).collect();
        let (train, test) = split(&items, 0.7).unwrap();
        assert_eq!(train.len(), 5600);
        assert_eq!(test.len(), 2400);
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split(&items, 0.7).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        let mut joined = train.clone();
        joined.extend(&test);
        assert_eq!(joined, items);
    }

    #[test]
    fn split_rejects_degenerate_cases() {
        let items: Vec<u32> = (0..10).collect();
        assert!(split(&items, 0.0).is_err());
        assert!(split(&items, 1.0).is_err());
        assert!(split(&items, 0.01).is_err());
        assert!(split(&[1u32], 0.5).is_err());
    }

    #[test]
    fn tuples_pair_up_by_id() {
        let ds = generate(&GenConfig {
            seed: 1,
            count: 3,
            size: 32,
        })
        .unwrap();
        let tuples = ds.tuples().unwrap();
        assert_eq!(tuples.len(), 3);
        for (i, t) in tuples.iter().enumerate() {
            assert_eq!((t.rain.id, t.snow.id), (i as u64, i as u64));
            assert_eq!(t.rain.clean, t.snow.clean);
            assert_eq!(t.rain.label, Label::Rain);
        }
        let mut broken = ds.clone();
        broken.pairs.remove(1);
        assert!(matches!(
            broken.tuples(),
            Err(DataError::MissingPartner {
                id: 0,
                missing: Label::Snow
            })
        ));
    }

    #[test]
    fn label_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
        assert!("fog".parse::<Label>().is_err());
    }
}
