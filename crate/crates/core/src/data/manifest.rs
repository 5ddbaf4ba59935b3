//! JSON-lines corpus manifest.
//!
//! Each line is one entry:
//! `{"clean": path|null, "noise": path|{"synth": spec}, "snr_db": number, "split": "train"|"test"}`
//! with optional `"noise_kind"` (report label) and `"length"` (samples, for
//! entries without clean speech and synthetic noise). Relative paths are
//! resolved against the manifest's directory.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::noise::SynthNoiseSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSource {
    File(PathBuf),
    Synth { synth: SynthNoiseSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean: Option<PathBuf>,
    pub noise: NoiseSource,
    pub snr_db: f64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

impl ManifestEntry {
    /// Report label: explicit `noise_kind`, else the synthetic kind, else `"file"`.
    pub fn noise_label(&self) -> String {
        match (&self.noise_kind, &self.noise) {
            (Some(k), _) => k.clone(),
            (None, NoiseSource::Synth { synth }) => synth.kind.to_string(),
            (None, NoiseSource::File(_)) => "file".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if !e.snr_db.is_finite() {
                return Err(Error::Manifest {
                    line: i + 1,
                    msg: "snr_db must be finite".into(),
                });
            }
            entries.push(e);
        }
        Ok(Self::new(entries, base_dir))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ctx = || format!("writing manifest {}", path.display());
        let mut f = fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(ctx(), e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NoiseKind;

    #[test]
    fn parses_both_noise_forms() {
        let text = r#"{"clean": "a.wav", "noise": "n.wav", "snr_db": 5, "split": "train"}

{"clean": null, "noise": {"synth": {"kind": "highfreq_sine", "seed": 2}}, "snr_db": 10.0, "split": "test", "length": 100}
"#;
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].noise, NoiseSource::File("n.wav".into()));
        assert_eq!(m.entries[0].noise_label(), "file");
        assert_eq!(m.entries[1].noise_label(), "highfreq_sine");
        assert_eq!(m.entries[1].length, Some(100));
        assert_eq!(m.resolve(Path::new("a.wav")), PathBuf::from("/data/a.wav"));
        assert_eq!(m.split(Split::Test).count(), 1);
        let again = Manifest::parse(&m.to_jsonl(), "/data").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn reports_bad_line() {
        let text = "{\"clean\": null, \"noise\": \"n.wav\", \"snr_db\": 5, \"split\": \"train\"}\n{\"clean\": 3}\n";
        match Manifest::parse(text, ".") {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let e = ManifestEntry {
            clean: None,
            noise: NoiseSource::Synth {
                synth: SynthNoiseSpec::new(NoiseKind::Mixture, 1),
            },
            snr_db: 0.0,
            split: Split::Train,
            noise_kind: Some("both".into()),
            length: None,
        };
        assert_eq!(e.noise_label(), "both");
    }
}
