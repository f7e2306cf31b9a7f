//! Dataset listings: CSV with header `path,mos,ref_path,group`.
//!
//! Relative paths resolve against the manifest's directory. An optional
//! leading `# score_range=<lo>,<hi>` line declares the MOS scale.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::DataError;

pub const MANIFEST_HEADER: [&str; 4] = ["path", "mos", "ref_path", "group"];

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Image file or frame directory.
    pub media_path: String,
    pub mos: f64,
    pub ref_path: Option<String>,
    /// Samples derived from the same source content share a group.
    pub group_id: Option<String>,
}

impl SampleRecord {
    pub fn new(media_path: impl Into<String>, mos: f64) -> Self {
        Self {
            media_path: media_path.into(),
            mos,
            ref_path: None,
            group_id: None,
        }
    }

    pub fn with_reference(mut self, ref_path: impl Into<String>) -> Self {
        self.ref_path = Some(ref_path.into());
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group_id = Some(group.into());
        self
    }

    /// Group used by group-aware splitting; ungrouped samples stand alone.
    pub fn group_key(&self) -> &str {
        self.group_id.as_deref().unwrap_or(&self.media_path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub score_range: Option<(f64, f64)>,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, root: impl Into<PathBuf>) -> Result<Self, DataError> {
        let m = Self {
            records,
            score_range: None,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// True when every record carries a reference path.
    pub fn has_references(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.ref_path.is_some())
    }

    /// Same root and scale, records picked by index.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            score_range: self.score_range,
            root: self.root.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !r.mos.is_finite() {
                return Err(DataError::Manifest {
                    line: i + 2,
                    msg: format!("mos {} is not finite", r.mos),
                });
            }
            if !seen.insert(&r.media_path) {
                return Err(DataError::Manifest {
                    line: i + 2,
                    msg: format!("duplicate path `{}`", r.media_path),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, DataError> {
        let mut score_range = None;
        for line in text.lines().take_while(|l| l.trim_start().starts_with('#')) {
            if let Some(v) = line.trim_start_matches('#').trim().strip_prefix("score_range=") {
                let (lo, hi) = v.split_once(',').ok_or_else(|| DataError::Manifest {
                    line: 1,
                    msg: "score_range needs `lo,hi`".into(),
                })?;
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| DataError::Manifest {
                        line: 1,
                        msg: format!("bad score_range bound `{s}`"),
                    })
                };
                score_range = Some((parse(lo)?, parse(hi)?));
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header_line = reader.position().line().max(1) as usize;
        let headers = reader.headers().map_err(|e| DataError::Manifest {
            line: header_line,
            msg: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(DataError::Manifest {
                line: header_line,
                msg: format!("header must be `{}`", MANIFEST_HEADER.join(",")),
            });
        }

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for row in reader.records() {
            let row = row.map_err(|e| DataError::Manifest {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
            let err = |msg: String| DataError::Manifest { line, msg };
            let media = row[0].to_string();
            if media.is_empty() {
                return Err(err("empty path".into()));
            }
            let mos: f64 = row[1]
                .parse()
                .map_err(|_| err(format!("mos `{}` is not a number", &row[1])))?;
            if !mos.is_finite() {
                return Err(err(format!("mos `{}` is not finite", &row[1])));
            }
            if !seen.insert(media.clone()) {
                return Err(err(format!("duplicate path `{media}`")));
            }
            let optional = |s: &str| (!s.is_empty()).then(|| s.to_string());
            records.push(SampleRecord {
                media_path: media,
                mos,
                ref_path: optional(&row[2]),
                group_id: optional(&row[3]),
            });
        }
        Ok(Self {
            records,
            score_range,
            root: root.into(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some((lo, hi)) = self.score_range {
            out.push_str(&format!("# score_range={lo},{hi}\n"));
        }
        out.push_str(&MANIFEST_HEADER.join(","));
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.media_path,
                r.mos,
                r.ref_path.as_deref().unwrap_or(""),
                r.group_id.as_deref().unwrap_or("")
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| DataError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nr_and_fr_rows() {
        let m = Manifest::parse(
            "path,mos,ref_path,group\nimg/a.png,0.73,,grpA\nimg/b.png,0.5,ref/b.png,grpB\nimg/c.png,1,,\n",
            "/data",
        )
        .unwrap();
        assert_eq!(m.records[0], SampleRecord::new("img/a.png", 0.73).with_group("grpA"));
        assert_eq!(m.records[1].ref_path.as_deref(), Some("ref/b.png"));
        assert_eq!(m.records[2].group_id, None);
        assert_eq!(m.records[2].group_key(), "img/c.png");
        assert_eq!(m.resolve("img/a.png"), PathBuf::from("/data/img/a.png"));
        assert!(!m.has_references());
    }

    #[test]
    fn errors_name_the_line() {
        let err = Manifest::parse("path,mos,ref_path,group\na.png,0.1,,\nb.png,abc,,\n", "").unwrap_err();
        match err {
            DataError::Manifest { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("abc"));
            }
            e => panic!("{e}"),
        }
        let err = Manifest::parse("path,mos,ref_path,group\na.png,0.1,,\na.png,0.2,,\n", "").unwrap_err();
        assert!(matches!(err, DataError::Manifest { line: 3, .. }), "{err}");
        assert!(Manifest::parse("file,score\na,1\n", "").is_err());
        assert!(Manifest::parse("path,mos,ref_path,group\na.png,0.1\n", "").is_err());
    }

    #[test]
    fn csv_round_trip_with_score_range() {
        let mut m = Manifest::new(
            vec![
                SampleRecord::new("a.png", 0.25).with_group("g"),
                SampleRecord::new("b.png", 1.0).with_reference("r.png"),
            ],
            "",
        )
        .unwrap();
        m.score_range = Some((0.0, 1.0));
        let back = Manifest::parse(&m.to_csv(), "").unwrap();
        assert_eq!(back, m);
    }
}
