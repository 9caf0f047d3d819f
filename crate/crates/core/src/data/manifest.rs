use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["image_path", "patient_id", "tumor_present", "source_type", "class_name"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceType {
    Primary,
    Secondary,
    None,
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceType::Primary => "primary",
            SourceType::Secondary => "secondary",
            SourceType::None => "none",
        })
    }
}

impl FromStr for SourceType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "primary" => Ok(SourceType::Primary),
            "secondary" => Ok(SourceType::Secondary),
            "none" => Ok(SourceType::None),
            _ => Err(format!(
                "unknown source_type '{s}' (expected primary, secondary or none)"
            )),
        }
    }
}

/// Which binary question a manifest answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Tumor present (positive, label 1) vs absent.
    Presence,
    /// Primary (positive, label 1) vs secondary, over tumor images only.
    Source,
}

impl Task {
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Task::Presence => ["absent", "present"],
            Task::Source => ["secondary", "primary"],
        }
    }

    /// Default initial learning rate for this task.
    pub fn default_lr(self) -> f64 {
        match self {
            Task::Presence => 1e-3,
            Task::Source => 1e-4,
        }
    }

    pub fn includes(self, r: &SampleRecord) -> bool {
        match self {
            Task::Presence => true,
            Task::Source => r.tumor_present,
        }
    }

    pub fn label(self, r: &SampleRecord) -> usize {
        match self {
            Task::Presence => r.tumor_present as usize,
            Task::Source => (r.source_type == SourceType::Primary) as usize,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Presence => "presence",
            Task::Source => "source",
        })
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "presence" => Ok(Task::Presence),
            "source" => Ok(Task::Source),
            _ => Err(format!("unknown task '{s}' (expected presence or source)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: PathBuf,
    pub patient_id: String,
    pub tumor_present: bool,
    pub source_type: SourceType,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub task: Task,
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Validate and filter records for `task`.
    pub fn from_records(records: Vec<SampleRecord>, task: Task, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert(&r.image_path) {
                return Err(Error::Config(format!(
                    "duplicate image path {}",
                    r.image_path.display()
                )));
            }
            if r.tumor_present == (r.source_type == SourceType::None) {
                return Err(Error::Config(format!(
                    "{}: tumor_present={} inconsistent with source_type={}",
                    r.image_path.display(),
                    r.tumor_present as u8,
                    r.source_type
                )));
            }
        }
        Ok(DatasetManifest {
            records: records.into_iter().filter(|r| task.includes(r)).collect(),
            task,
            root: root.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| self.task.label(r)).collect()
    }

    pub fn patients(&self) -> Vec<String> {
        self.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.records[i].image_path)
    }
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<SampleRecord, String> {
    if row.len() != MANIFEST_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            MANIFEST_HEADER.len(),
            row.len()
        ));
    }
    let image_path = row[0].trim();
    if image_path.is_empty() {
        return Err("empty image_path".into());
    }
    let tumor_present = match row[2].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("tumor_present must be 0 or 1, found '{other}'")),
    };
    let source_type: SourceType = row[3].trim().parse()?;
    if tumor_present == (source_type == SourceType::None) {
        return Err(format!(
            "tumor_present={} inconsistent with source_type={source_type}",
            tumor_present as u8
        ));
    }
    Ok(SampleRecord {
        image_path: PathBuf::from(image_path),
        patient_id: row[1].trim().to_string(),
        tumor_present,
        source_type,
        class_name: row[4].trim().to_string(),
    })
}

/// Read a manifest CSV and filter it for `task`. An empty result is an error.
pub fn load_manifest(path: impl AsRef<Path>, task: Task) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening manifest {}", path.display()), e))?;
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows = reader.records();
    match rows.next() {
        None => return Err(err(1, "missing header".into())),
        Some(Err(e)) => return Err(err(1, e.to_string())),
        Some(Ok(h)) => {
            let fields: Vec<&str> = h.iter().map(str::trim).collect();
            if fields != MANIFEST_HEADER {
                return Err(err(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
            }
        }
    }
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        records.push(parse_row(&row).map_err(|m| err(line, m))?);
        lines.push(line);
    }
    let mut seen = std::collections::HashMap::new();
    for (r, &line) in records.iter().zip(&lines) {
        if let Some(first) = seen.insert(&r.image_path, line) {
            return Err(err(
                line,
                format!("image path {} already listed on line {first}", r.image_path.display()),
            ));
        }
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_records(records, task, root)?;
    if manifest.is_empty() {
        return Err(Error::EmptyManifest(path.to_path_buf()));
    }
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Config(format!("writing manifest {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.image_path.to_string_lossy().as_ref(),
            &r.patient_id,
            if r.tumor_present { "1" } else { "0" },
            &r.source_type.to_string(),
            &r.class_name,
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const EIGHT: &str = "image_path,patient_id,tumor_present,source_type,class_name
a.pgm,p1,0,none,normal
b.pgm,p2,1,primary,glioma
c.pgm,p3,1,primary,meningioma
d.pgm,p4,1,primary,pituitary
e.pgm,p5,1,primary,acoustic neuroma
f.pgm,p6,1,secondary,lung metastasis
g.pgm,p7,1,secondary,breast metastasis
h.pgm,p8,1,secondary,other metastasis
";

    #[test]
    fn task_filtering() {
        let f = write(EIGHT);
        assert_eq!(load_manifest(f.path(), Task::Presence).unwrap().len(), 8);
        let source = load_manifest(f.path(), Task::Source).unwrap();
        assert_eq!(source.len(), 7);
        assert_eq!(source.labels(), vec![1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn header_only_is_empty() {
        let f = write("image_path,patient_id,tumor_present,source_type,class_name\n");
        assert!(matches!(
            load_manifest(f.path(), Task::Presence),
            Err(Error::EmptyManifest(_))
        ));
    }

    #[test]
    fn inconsistent_row_reports_line() {
        let f = write(
            "image_path,patient_id,tumor_present,source_type,class_name\na.pgm,p,1,primary,x\nb.pgm,p,0,primary,x\n",
        );
        match load_manifest(f.path(), Task::Presence) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_malformed_rows() {
        let f = write(
            "image_path,patient_id,tumor_present,source_type,class_name\na.pgm,p,1,primary,x\na.pgm,p,1,primary,x\n",
        );
        assert!(matches!(
            load_manifest(f.path(), Task::Presence),
            Err(Error::Manifest { line: 3, .. })
        ));
        let f = write("image_path,patient_id,tumor_present,source_type,class_name\na.pgm,p,yes,primary,x\n");
        assert!(matches!(
            load_manifest(f.path(), Task::Presence),
            Err(Error::Manifest { line: 2, .. })
        ));
        let f = write("image_path,patient_id,tumor_present\na.pgm,p,1\n");
        assert!(matches!(
            load_manifest(f.path(), Task::Presence),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let f = write(EIGHT);
        let m = load_manifest(f.path(), Task::Presence).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_manifest(out.path(), &m.records).unwrap();
        assert_eq!(std::fs::read_to_string(out.path()).unwrap(), EIGHT);
    }
}
