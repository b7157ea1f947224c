//! Toy dataset generation and on-disk layout: numbered PNM pairs plus a
//! manifest describing how they were made.

use std::path::Path;

use crate::config::Config;
use crate::degradation::DegradationPair;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{load_image, save_image};
use crate::prior::{sample_styles, synthesize, MappingNetwork, SynthesisNetwork};
use crate::rng::Rng;

use super::degrade::DegradationKind;

/// Where conditions come from.
pub enum ImageSource<'a> {
    /// Synthesize each condition from independently sampled prior styles.
    Prior {
        mapping: &'a MappingNetwork,
        synthesis: &'a SynthesisNetwork,
    },
    /// Load every P5/P6 file in a directory (sorted by name).
    Directory(&'a Path),
}

/// Builds n (condition, degraded) pairs. Conditions are quantized to the
/// 256-level grid before degradation so in-memory pairs match their files.
pub fn make_toy_dataset(
    kind: &DegradationKind,
    n: usize,
    source: &ImageSource<'_>,
    rng: &mut Rng,
) -> Result<Vec<DegradationPair>> {
    kind.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let conditions: Vec<Image> = match source {
        ImageSource::Prior { mapping, synthesis } => (0..n)
            .map(|_| {
                let styles = sample_styles(mapping, synthesis.style_count(), rng)?;
                Ok(synthesize(synthesis, &styles)?.quantized())
            })
            .collect::<Result<_>>()?,
        ImageSource::Directory(dir) => {
            let mut files: Vec<_> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir.display().to_string(), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("pgm") | Some("ppm") | Some("pnm")
                    )
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no P5/P6 images in {}",
                    dir.display()
                )));
            }
            files
                .iter()
                .cycle()
                .take(n)
                .map(load_image)
                .collect::<Result<_>>()?
        }
    };

    conditions
        .into_iter()
        .map(|condition| {
            let degraded = kind.apply(&condition, rng)?;
            Ok(DegradationPair {
                condition,
                degraded,
            })
        })
        .collect()
}

fn pair_names(i: usize, channels: usize) -> (String, String) {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    (format!("cond_{i:04}.{ext}"), format!("degr_{i:04}.{ext}"))
}

/// Writes pairs and a manifest into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, pairs: &[DegradationPair], meta: &Config) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, pair) in pairs.iter().enumerate() {
        let (cname, dname) = pair_names(i, pair.condition.channels());
        save_image(dir.join(cname), &pair.condition)?;
        save_image(dir.join(dname), &pair.degraded)?;
    }
    let mut manifest = meta.clone();
    manifest.set("dataset.count", pairs.len());
    manifest.set(
        "dataset.channels",
        pairs.first().map(|p| p.condition.channels()).unwrap_or(1),
    );
    manifest.save(dir.join("manifest.txt"))
}

/// Loads a dataset previously written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DegradationPair>> {
    let dir = dir.as_ref();
    let manifest = Config::load(dir.join("manifest.txt"))?;
    let count = manifest.usize_or("dataset.count", 0)?;
    let channels = manifest.usize_or("dataset.channels", 1)?;
    if count == 0 {
        return Err(Error::format(
            dir.join("manifest.txt").display().to_string(),
            "dataset.count missing or zero",
        ));
    }
    (0..count)
        .map(|i| {
            let (cname, dname) = pair_names(i, channels);
            Ok(DegradationPair {
                condition: load_image(dir.join(cname))?,
                degraded: load_image(dir.join(dname))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_sourced_dataset_round_trips_through_disk() {
        let mapping = MappingNetwork::toy(8, 8, 2).unwrap();
        let synthesis = SynthesisNetwork::toy(8, 6, 1, 2).unwrap();
        let kind = DegradationKind::BlockQuant {
            block: 4,
            quality: 60,
        };
        let mut rng = Rng::from_seed(5);
        let pairs = make_toy_dataset(
            &kind,
            6,
            &ImageSource::Prior {
                mapping: &mapping,
                synthesis: &synthesis,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(pairs.len(), 6);

        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &pairs, &Config::new()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.degraded, b.degraded);
        }
    }

    #[test]
    fn dataset_generation_is_seed_deterministic() {
        let mapping = MappingNetwork::toy(8, 8, 3).unwrap();
        let synthesis = SynthesisNetwork::toy(8, 6, 1, 3).unwrap();
        let kind = DegradationKind::AddNoise {
            sigma: 0.03,
            quantized: true,
        };
        let src = ImageSource::Prior {
            mapping: &mapping,
            synthesis: &synthesis,
        };
        let a = make_toy_dataset(&kind, 4, &src, &mut Rng::from_seed(9)).unwrap();
        let b = make_toy_dataset(&kind, 4, &src, &mut Rng::from_seed(9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.degraded, y.degraded);
        }
    }

    #[test]
    fn empty_directory_source_errors() {
        let dir = tempfile::tempdir().unwrap();
        let kind = DegradationKind::BoxBlur { radius: 1 };
        let err = make_toy_dataset(
            &kind,
            2,
            &ImageSource::Directory(dir.path()),
            &mut Rng::from_seed(1),
        );
        assert!(err.is_err());
    }
}
