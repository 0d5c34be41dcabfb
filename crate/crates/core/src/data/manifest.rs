//! Dataset manifests: one `image mask split` triple per line.
//!
//! Fields are separated by whitespace (or tabs, for paths with spaces).
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::usage(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    /// Stable identifier: the image file stem.
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let here = offset;
        offset += line.len() + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if fields.len() != 3 {
            return Err(Error::parse(
                here,
                format!("manifest line needs image, mask and split: {trimmed:?}"),
            ));
        }
        let split = fields[2]
            .parse()
            .map_err(|e: Error| Error::parse(here, e.to_string()))?;
        out.push(ManifestEntry {
            image: base.join(fields[0]),
            mask: base.join(fields[1]),
            split,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let text = "# header\nimg/a.pgm masks/a.pgm train\n\n/abs/b.pgm\t/abs/b mask.pgm\tval\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].image, PathBuf::from("/data/img/a.pgm"));
        assert_eq!(m[1].mask, PathBuf::from("/abs/b mask.pgm"));
        assert_eq!(m[1].split, Split::Val);
        assert_eq!(m[0].id(), "a");
    }

    #[test]
    fn bad_split_reports_line_offset() {
        let err = parse_manifest("a b train\nc d holdout\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 10, .. }), "{err}");
    }
}
