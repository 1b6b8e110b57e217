//! Labeled train/validation/test split assignments.
//!
//! A manifest file is tab-separated text:
//!
//! ```text
//! # seed: 42
//! # train: covid=6880 non_covid=6980
//! # validation: covid=350 non_covid=369
//! # test: covid=2313 non_covid=2313
//! path    label    split
//! /data/covid/0001.png    COVID    train
//! ...
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonCovid,
    Covid,
}

impl Label {
    /// Training target: 1 for COVID, 0 otherwise.
    pub fn target(self) -> f64 {
        match self {
            Label::Covid => 1.0,
            Label::NonCovid => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Covid => "COVID",
            Label::NonCovid => "NON-COVID",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "COVID" => Ok(Label::Covid),
            "NON-COVID" => Ok(Label::NonCovid),
            _ => Err(Error::Manifest(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Manifest(format!(
                "unknown split {s:?} (expected train, validation or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

/// Per-class sample counts of one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub covid: usize,
    pub non_covid: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.covid + self.non_covid
    }

    fn get(&self, label: Label) -> usize {
        match label {
            Label::Covid => self.covid,
            Label::NonCovid => self.non_covid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(seed: u64, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { seed, entries };
        m.validate()?;
        Ok(m)
    }

    /// Rejects duplicate paths.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Manifest(format!(
                    "duplicate path {}",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn counts(&self, split: Split) -> ClassCounts {
        let mut c = ClassCounts::default();
        for e in self.split(split) {
            match e.label {
                Label::Covid => c.covid += 1,
                Label::NonCovid => c.non_covid += 1,
            }
        }
        c
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# seed: {}\n", self.seed);
        for s in Split::ALL {
            let c = self.counts(s);
            out += &format!("# {s}: covid={} non_covid={}\n", c.covid, c.non_covid);
        }
        out += "path\tlabel\tsplit\n";
        for e in &self.entries {
            out += &format!("{}\t{}\t{}\n", e.path.display(), e.label, e.split);
        }
        out
    }

    /// Parses manifest text. Header counts, when present, must agree with
    /// the records.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut declared = Vec::new();
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("seed:") {
                    seed = Some(v.trim().parse::<u64>().map_err(|_| {
                        Error::Manifest(format!("line {lineno}: bad seed {:?}", v.trim()))
                    })?);
                } else if let Some((split, rest)) = comment.split_once(':') {
                    if let Ok(split) = split.parse::<Split>() {
                        declared.push((split, parse_counts(rest, lineno)?));
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != "path\tlabel\tsplit" {
                    return Err(Error::Manifest(format!(
                        "line {lineno}: expected the column header 'path<TAB>label<TAB>split'"
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(Error::Manifest(format!(
                    "line {lineno}: expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                label: label.parse()?,
                split: split.parse()?,
            });
        }
        let seed = seed.ok_or_else(|| Error::Manifest("missing '# seed:' header".into()))?;
        let m = Self::new(seed, entries)?;
        for (split, counts) in declared {
            if m.counts(split) != counts {
                return Err(Error::Manifest(format!(
                    "header declares {split} {counts:?} but records give {:?}",
                    m.counts(split)
                )));
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

fn parse_counts(text: &str, lineno: usize) -> Result<ClassCounts> {
    let mut c = ClassCounts::default();
    for part in text.split_whitespace() {
        let bad = || Error::Manifest(format!("line {lineno}: bad count field {part:?}"));
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        let v: usize = v.parse().map_err(|_| bad())?;
        match k {
            "covid" => c.covid = v,
            "non_covid" => c.non_covid = v,
            _ => return Err(bad()),
        }
    }
    Ok(c)
}

/// How many images each split receives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRequest {
    /// Per class, `floor(n * validation)` and `floor(n * test)` images go to
    /// those splits and the rest to train. Every listed image is used.
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
    },
    /// Exact per-class counts for each split.
    Counts {
        train: ClassCounts,
        validation: ClassCounts,
        test: ClassCounts,
    },
}

impl SplitRequest {
    /// The dataset split of the reference study.
    pub fn table_one() -> Self {
        SplitRequest::Counts {
            train: ClassCounts {
                covid: 6880,
                non_covid: 6980,
            },
            validation: ClassCounts {
                covid: 350,
                non_covid: 369,
            },
            test: ClassCounts {
                covid: 2313,
                non_covid: 2313,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if let SplitRequest::Fractions {
            train,
            validation,
            test,
        } = *self
        {
            let parts = [train, validation, test];
            if parts.iter().any(|f| !(0.0..=1.0).contains(f))
                || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidArgument(format!(
                    "split fractions must lie in [0, 1] and sum to 1, got {parts:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Source directories: one COVID directory and one or more NON-COVID
/// directories whose images are drawn in equal shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDirs {
    pub covid: PathBuf,
    pub non_covid: Vec<PathBuf>,
}

/// Whether `path` has an image extension the decoder accepts.
pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
}

/// Sorted image files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_path(&path) {
            out.push(path);
        }
    }
    if out.is_empty() {
        return Err(Error::Manifest(format!(
            "no .png or .pgm images in {}",
            dir.display()
        )));
    }
    out.sort();
    Ok(out)
}

fn check_disjoint(dirs: &[&Path]) -> Result<()> {
    let canon: Vec<PathBuf> = dirs
        .iter()
        .map(|d| d.canonicalize().map_err(|e| Error::io(*d, e)))
        .collect::<Result<_>>()?;
    for (i, a) in canon.iter().enumerate() {
        for b in &canon[i + 1..] {
            if a.starts_with(b) || b.starts_with(a) {
                return Err(Error::Manifest(format!(
                    "class directories overlap: {} and {}",
                    a.display(),
                    b.display()
                )));
            }
        }
    }
    Ok(())
}

/// Scans `dirs` and assigns splits. See [`assign_splits`].
pub fn build_manifest(
    dirs: &ClassDirs,
    request: &SplitRequest,
    seed: u64,
) -> Result<DatasetManifest> {
    if dirs.non_covid.is_empty() {
        return Err(Error::Manifest(
            "at least one NON-COVID directory is required".into(),
        ));
    }
    let mut all: Vec<&Path> = vec![&dirs.covid];
    all.extend(dirs.non_covid.iter().map(PathBuf::as_path));
    check_disjoint(&all)?;
    let covid = list_images(&dirs.covid)?;
    let non_covid = dirs
        .non_covid
        .iter()
        .map(|d| list_images(d))
        .collect::<Result<Vec<_>>>()?;
    assign_splits(covid, non_covid, request, seed)
}

/// Shuffles each source list with a generator seeded from `seed` and deals
/// images into train, validation and test in that order.
///
/// With explicit counts, each NON-COVID split count is divided equally among
/// the sources, the first sources taking one extra image each when it does
/// not divide evenly.
pub fn assign_splits(
    covid: Vec<PathBuf>,
    non_covid: Vec<Vec<PathBuf>>,
    request: &SplitRequest,
    seed: u64,
) -> Result<DatasetManifest> {
    request.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut deal =
        |mut paths: Vec<PathBuf>, label: Label, quota: [usize; 3], source: &str| -> Result<()> {
            let need: usize = quota.iter().sum();
            if need > paths.len() {
                return Err(Error::Manifest(format!(
                    "{source} has {} images but {need} are requested",
                    paths.len()
                )));
            }
            paths.sort();
            paths.shuffle(&mut rng);
            let mut it = paths.into_iter();
            for (split, n) in Split::ALL.into_iter().zip(quota) {
                entries.extend(it.by_ref().take(n).map(|path| ManifestEntry {
                    path,
                    label,
                    split,
                }));
            }
            Ok(())
        };
    let k = non_covid.len();
    match *request {
        SplitRequest::Fractions {
            validation, test, ..
        } => {
            let quota = |n: usize| {
                let v = (n as f64 * validation).floor() as usize;
                let t = (n as f64 * test).floor() as usize;
                [n - v - t, v, t]
            };
            let q = quota(covid.len());
            deal(covid, Label::Covid, q, "COVID source")?;
            for (i, paths) in non_covid.into_iter().enumerate() {
                let q = quota(paths.len());
                deal(paths, Label::NonCovid, q, &format!("NON-COVID source {i}"))?;
            }
        }
        SplitRequest::Counts {
            train,
            validation,
            test,
        } => {
            let splits = [train, validation, test];
            deal(
                covid,
                Label::Covid,
                splits.map(|c| c.get(Label::Covid)),
                "COVID source",
            )?;
            for (i, paths) in non_covid.into_iter().enumerate() {
                let share = |n: usize| n / k + usize::from(i < n % k);
                let q = splits.map(|c| share(c.get(Label::NonCovid)));
                deal(paths, Label::NonCovid, q, &format!("NON-COVID source {i}"))?;
            }
        }
    }
    DatasetManifest::new(seed, entries)
}
