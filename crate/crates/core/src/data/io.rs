//! CSV sample files and the JSON dataset manifest.
//!
//! Layout: `<root>/subj_<id>/class_<id>/rep_<id>/angle_<deg>.csv`, one row
//! `frame,x,y,z` per point, plus `<root>/manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{angle_slot, MotionPointCloud, MultiAngleSample, Point};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const CSV_HEADER: &str = "frame,x,y,z";
const MANIFEST_VERSION: u32 = 1;

/// Formats a float with 9 significant digits, `%.9g` style.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed)
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn write_cloud_csv(path: &Path, cloud: &MotionPointCloud) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 48);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in &cloud.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.frame,
            format_sig9(p.x),
            format_sig9(p.y),
            format_sig9(p.z)
        );
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads one angle file. The angle id is taken from the file name.
pub fn read_cloud_csv(path: &Path) -> Result<MotionPointCloud> {
    let angle = angle_from_file_name(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields (frame,x,y,z), found {}", fields.len()),
            ));
        }
        let frame: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad frame index {:?}", fields[0])))?;
        if frame < 0 {
            return Err(parse_err(path, lineno, format!("negative frame index {frame}")));
        }
        let frame = u32::try_from(frame)
            .map_err(|_| parse_err(path, lineno, format!("frame index {frame} too large")))?;
        let mut xyz = [0.0; 3];
        for (k, name) in ["x", "y", "z"].iter().enumerate() {
            let raw = fields[k + 1];
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad {name} value {raw:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite {name}={raw}")));
            }
            xyz[k] = v;
        }
        points.push(Point::new(xyz[0], xyz[1], xyz[2], frame));
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "file contains no points"));
    }
    let frame_count = points.iter().map(|p| p.frame).max().unwrap_or(0) + 1;
    MotionPointCloud::new(points, angle, frame_count)
}

fn angle_from_file_name(path: &Path) -> Result<u16> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_err(path, 0, "unreadable file name"))?;
    let deg = stem
        .strip_prefix("angle_")
        .and_then(|d| d.parse::<u16>().ok())
        .ok_or_else(|| parse_err(path, 0, "file name must be angle_<deg>.csv"))?;
    if angle_slot(deg).is_none() {
        return Err(parse_err(path, 0, format!("unsupported angle {deg}")));
    }
    Ok(deg)
}

fn id_component(component: &str, prefix: &str) -> Option<u64> {
    component.strip_prefix(prefix)?.parse().ok()
}

/// Loads every `angle_<deg>.csv` present in a sample directory.
///
/// Label and subject are read from the `subj_<id>/class_<id>/rep_<id>`
/// path components. Missing angles are allowed.
pub fn load_sample(dir: &Path) -> Result<MultiAngleSample> {
    let comps: Vec<String> = dir
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    let n = comps.len();
    let parsed = (n >= 3)
        .then(|| {
            Some((
                id_component(&comps[n - 3], "subj_")?,
                id_component(&comps[n - 2], "class_")?,
                id_component(&comps[n - 1], "rep_")?,
            ))
        })
        .flatten();
    let (subject, class, _rep) = parsed.ok_or_else(|| {
        Error::Data(format!(
            "{} does not follow subj_<id>/class_<id>/rep_<id>",
            dir.display()
        ))
    })?;

    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("angle_"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no angle files in {}", dir.display())));
    }
    let mut clouds = BTreeMap::new();
    for f in files {
        let cloud = read_cloud_csv(&f)?;
        clouds.insert(cloud.angle_id, cloud);
    }
    Ok(MultiAngleSample {
        clouds,
        label: class as usize,
        subject_id: subject as u32,
    })
}

pub(crate) fn sample_dir(subject: u32, class: usize, rep: u32) -> String {
    format!("subj_{subject}/class_{class}/rep_{rep}")
}

/// Writes all angle files of a sample under `root`, returning the
/// relative paths written.
pub fn write_sample(root: &Path, sample: &MultiAngleSample, rep: u32) -> Result<Vec<String>> {
    let dir = sample_dir(sample.subject_id, sample.label, rep);
    let mut files = Vec::with_capacity(sample.clouds.len());
    for (angle, cloud) in &sample.clouds {
        let rel = format!("{dir}/angle_{angle}.csv");
        write_cloud_csv(&root.join(&rel), cloud)?;
        files.push(rel);
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub subject: u32,
    pub class: usize,
    pub rep: u32,
    pub dir: String,
    pub files: Vec<String>,
}

/// Subject-level split. Subjects in different lists never overlap.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(*s) {
                return Err(Error::Data(format!(
                    "subject {s} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub subject_ids: Vec<u32>,
    pub angle_ids: Vec<u16>,
    pub samples: Vec<SampleEntry>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(
        class_names: Vec<String>,
        subject_ids: Vec<u32>,
        angle_ids: Vec<u16>,
        samples: Vec<SampleEntry>,
        split: Split,
    ) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            class_names,
            subject_ids,
            angle_ids,
            samples,
            split,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks internal consistency and, when `root` is given, that every
    /// indexed file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        if self.class_names.len() < 2 {
            return Err(Error::Data("manifest needs at least two classes".into()));
        }
        self.split.validate()?;
        let subjects: BTreeSet<u32> = self.subject_ids.iter().copied().collect();
        for s in self
            .split
            .train
            .iter()
            .chain(&self.split.val)
            .chain(&self.split.test)
        {
            if !subjects.contains(s) {
                return Err(Error::Data(format!("split names unknown subject {s}")));
            }
        }
        for a in &self.angle_ids {
            if angle_slot(*a).is_none() {
                return Err(Error::Data(format!("unsupported angle {a}")));
            }
        }
        for entry in &self.samples {
            if entry.class >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "sample {} has class {} out of range",
                    entry.dir, entry.class
                )));
            }
            if !subjects.contains(&entry.subject) {
                return Err(Error::Data(format!(
                    "sample {} has unknown subject {}",
                    entry.dir, entry.subject
                )));
            }
            if let Some(root) = root {
                for f in &entry.files {
                    if !root.join(f).is_file() {
                        return Err(Error::Data(format!(
                            "indexed file {} is missing",
                            root.join(f).display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        text.push('\n');
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "dataset manifest {} not found",
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        manifest.validate(Some(root))?;
        Ok(manifest)
    }
}

/// A dataset read into memory, partitioned by the manifest's split.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub train: Vec<MultiAngleSample>,
    pub val: Vec<MultiAngleSample>,
    pub test: Vec<MultiAngleSample>,
}

impl LoadedDataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(root)?;
        let mut out = LoadedDataset {
            manifest: manifest.clone(),
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for entry in &manifest.samples {
            let bucket = if manifest.split.train.contains(&entry.subject) {
                &mut out.train
            } else if manifest.split.val.contains(&entry.subject) {
                &mut out.val
            } else if manifest.split.test.contains(&entry.subject) {
                &mut out.test
            } else {
                continue;
            };
            bucket.push(load_sample(&root.join(&entry.dir))?);
        }
        Ok(out)
    }
}
