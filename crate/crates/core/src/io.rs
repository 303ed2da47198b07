//! Line-delimited JSON sketch files and dataset manifests.
//!
//! Each line is one sketch, a JSON array of `[a, b, pen]` triples. An optional
//! first line `{"format":"stroke3-jsonl","absolute":true}` states whether
//! `(a, b)` are absolute positions or per-step offsets; when present it takes
//! precedence over the caller's format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch, PEN_DOWN, PEN_UP};
use crate::toy::{DatasetSplit, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchFormat {
    /// `[x, y, pen]` absolute positions.
    Stroke3Jsonl,
    /// `[dx, dy, pen]` offsets, cumulatively summed on load.
    OffsetsJsonl,
}

impl std::str::FromStr for SketchFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stroke3-jsonl" => Ok(Self::Stroke3Jsonl),
            "offsets-jsonl" => Ok(Self::OffsetsJsonl),
            other => Err(Error::Config(format!("unknown sketch format '{other}'"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    #[serde(default = "default_true")]
    absolute: bool,
}

fn default_true() -> bool {
    true
}

/// Maps input pen encodings `{0, 1}` and `{-1, +1}` onto `{-1, +1}`.
pub fn normalize_pen(p: f64) -> Option<i8> {
    match p {
        p if p == 1.0 => Some(PEN_UP),
        p if p == 0.0 || p == -1.0 => Some(PEN_DOWN),
        _ => None,
    }
}

/// Parses one line of triples.
pub fn parse_sketch_line(line: &str, absolute: bool) -> std::result::Result<Sketch, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err("empty line".into());
    }
    let triples: Vec<[f64; 3]> = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
    let (mut x, mut y) = (0.0, 0.0);
    let mut points = Vec::with_capacity(triples.len());
    for (i, [a, b, p]) in triples.into_iter().enumerate() {
        let pen = normalize_pen(p).ok_or_else(|| format!("pen value {p} at point {i} is not in {{-1, 0, 1}}"))?;
        if absolute {
            (x, y) = (a, b);
        } else {
            x += a;
            y += b;
        }
        points.push(Point::new(x, y, pen));
    }
    Sketch::new(points).map_err(|e| e.to_string())
}

pub fn parse_sketch_str(text: &str, format: SketchFormat, path: &Path) -> Result<Vec<Sketch>> {
    let mut absolute = format == SketchFormat::Stroke3Jsonl;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if i == 0 && line.trim_start().starts_with('{') {
            let header: Header = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("bad header: {e}"),
            })?;
            absolute = header.absolute && header.format != "offsets-jsonl";
            continue;
        }
        let sketch = parse_sketch_line(line, absolute)
            .map_err(|msg| Error::Parse { path: path.to_path_buf(), line: lineno, msg })?;
        out.push(sketch);
    }
    Ok(out)
}

pub fn parse_sketch_file(path: &Path, format: SketchFormat) -> Result<Vec<Sketch>> {
    let text = fs::read_to_string(path)?;
    parse_sketch_str(&text, format, path)
}

/// One sketch as a JSON array of `[x, y, pen]`.
pub fn sketch_to_json(s: &Sketch) -> serde_json::Value {
    serde_json::Value::Array(
        s.points()
            .iter()
            .map(|p| serde_json::json!([p.x, p.y, p.pen]))
            .collect(),
    )
}

pub fn sketch_from_json(v: &serde_json::Value) -> Result<Sketch> {
    parse_sketch_line(&v.to_string(), true).map_err(Error::Data)
}

/// Absolute-coordinate JSONL with the format header.
pub fn sketches_to_jsonl(sketches: &[Sketch]) -> String {
    let mut out = String::from("{\"format\":\"stroke3-jsonl\",\"absolute\":true}\n");
    for s in sketches {
        out.push_str(&sketch_to_json(s).to_string());
        out.push('\n');
    }
    out
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_sketch_file(path: &Path, sketches: &[Sketch]) -> Result<()> {
    write_atomic(path, sketches_to_jsonl(sketches).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_len: usize,
    pub scale_box: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    pub val: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    pub classes: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Dataset manifest stored as `manifest.json` next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub splits: SplitFiles,
    pub labels: Option<LabelTable>,
    pub preprocess: PreprocessSpec,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

/// Writes the three split files and `manifest.json` into `dir`.
pub fn save_dataset(
    dir: &Path,
    data: &DatasetSplit,
    preprocess: PreprocessSpec,
    seed: u64,
    generator: Option<String>,
) -> Result<DatasetManifest> {
    let splits = SplitFiles { train: "train.jsonl".into(), val: "val.jsonl".into(), test: "test.jsonl".into() };
    for (name, split) in [(&splits.train, &data.train), (&splits.val, &data.val), (&splits.test, &data.test)] {
        write_sketch_file(&dir.join(name), &split.sketches)?;
    }
    let labels = match (&data.train.labels, &data.val.labels, &data.test.labels) {
        (Some(a), Some(b), Some(c)) => {
            Some(LabelTable { classes: data.classes.clone(), train: a.clone(), val: b.clone(), test: c.clone() })
        }
        _ => None,
    };
    let manifest = DatasetManifest { splits, labels, preprocess, seed, generator };
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetSplit, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let read = |name: &str, labels: Option<&Vec<usize>>| -> Result<Split> {
        let sketches = parse_sketch_file(&dir.join(name), SketchFormat::Stroke3Jsonl)?;
        if let Some(l) = labels {
            if l.len() != sketches.len() {
                return Err(Error::Data(format!("{name}: {} sketches but {} labels", sketches.len(), l.len())));
            }
        }
        Ok(Split { sketches, labels: labels.cloned() })
    };
    let lt = manifest.labels.as_ref();
    let data = DatasetSplit {
        train: read(&manifest.splits.train, lt.map(|l| &l.train))?,
        val: read(&manifest.splits.val, lt.map(|l| &l.val))?,
        test: read(&manifest.splits.test, lt.map(|l| &l.test))?,
        classes: lt.map(|l| l.classes.clone()).unwrap_or_default(),
    };
    Ok((data, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_and_offset_lines() {
        let p = Path::new("mem");
        let s = parse_sketch_str("[[0,0,-1],[1,0,-1],[1,1,1]]\n", SketchFormat::Stroke3Jsonl, p).unwrap();
        assert_eq!(s[0].coords(), vec![(0., 0.), (1., 0.), (1., 1.)]);
        let s = parse_sketch_str("[[0,0,-1],[1,0,-1],[0,1,1]]\n", SketchFormat::OffsetsJsonl, p).unwrap();
        assert_eq!(s[0].coords(), vec![(0., 0.), (1., 0.), (1., 1.)]);
    }

    #[test]
    fn header_overrides_format_and_pens_normalize() {
        let text = "{\"format\":\"offsets-jsonl\",\"absolute\":false}\n[[1,1,0],[1,0,1]]\n";
        let s = parse_sketch_str(text, SketchFormat::Stroke3Jsonl, Path::new("mem")).unwrap();
        assert_eq!(s[0].coords(), vec![(1., 1.), (2., 1.)]);
        assert_eq!(s[0].points()[0].pen, -1);
        assert_eq!(s[0].points()[1].pen, 1);
    }

    #[test]
    fn errors_name_the_line() {
        let p = Path::new("f.jsonl");
        let err = parse_sketch_str("[[0,0,-1],[1,0,1]]\n\n", SketchFormat::Stroke3Jsonl, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_sketch_str("[[0,0,-1],[1,0,2]]\n", SketchFormat::Stroke3Jsonl, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(err.to_string().contains("pen value 2"));
        let err = parse_sketch_str("[[0,0,-1],[1,0\n", SketchFormat::Stroke3Jsonl, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn jsonl_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let s = Sketch::from_triples(&[(0.5, 0.25, -1), (1.0, 0.125, 1)]).unwrap();
        write_sketch_file(&path, &[s.clone(), s.clone()]).unwrap();
        let back = parse_sketch_file(&path, SketchFormat::OffsetsJsonl).unwrap();
        assert_eq!(back, vec![s.clone(), s]);
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data = crate::toy::generate_toy_dataset(crate::toy::ToyKind::TwoClass, 20, 8, 0.0, 1).unwrap();
        let spec = PreprocessSpec { target_len: 8, scale_box: 1.0 };
        save_dataset(dir.path(), &data, spec, 1, Some("two-class".into())).unwrap();
        let (back, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.classes, data.classes);
        assert_eq!(back.test.labels, data.test.labels);
        assert_eq!(back.train.len(), data.train.len());
        for (a, b) in back.train.sketches.iter().zip(&data.train.sketches) {
            for (p, q) in a.points().iter().zip(b.points()) {
                assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12 && p.pen == q.pen);
            }
        }
        assert_eq!(manifest.seed, 1);
    }
}
