//! On-disk project layout and the single-invocation lock.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const SLIDE_EXTENSIONS: [&str; 3] = ["tif", "tiff", "png"];
pub const LOCK_FILE: &str = ".hail.lock";

#[derive(Clone, Debug)]
pub struct ProjectLayout {
    pub root: PathBuf,
}

/// A slide file and its file stem.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SlideEntry {
    pub stem: String,
    pub path: PathBuf,
}

impl ProjectLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn wsi(&self) -> PathBuf {
        self.root.join("WSI")
    }
    pub fn regions(&self) -> PathBuf {
        self.root.join("REGIONS")
    }
    pub fn training(&self) -> PathBuf {
        self.root.join("TRAINING")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("MODELS")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("PREDICTIONS")
    }
    pub fn holdout(&self) -> PathBuf {
        self.root.join("HOLDOUT")
    }
    pub fn transfer(&self) -> PathBuf {
        self.root.join("TRANSFER")
    }
    pub fn validation(&self) -> PathBuf {
        self.root.join("VALIDATION")
    }
    pub fn classmap(&self) -> PathBuf {
        self.root.join("classmap.json")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    /// Optional annotation timing log for the time-savings fit.
    pub fn timing_log(&self) -> PathBuf {
        self.root.join("annotation_times.csv")
    }

    pub fn training_iter(&self, i: u32) -> PathBuf {
        self.training().join(i.to_string())
    }
    pub fn model_iter(&self, i: u32) -> PathBuf {
        self.models().join(i.to_string())
    }

    pub fn directories(&self) -> [PathBuf; 7] {
        [
            self.wsi(),
            self.regions(),
            self.training(),
            self.models(),
            self.predictions(),
            self.holdout(),
            self.transfer(),
        ]
    }

    /// Checks that this looks like a project created by `new`.
    pub fn require(&self) -> CliResult<()> {
        if !self.config().is_file() {
            return Err(CliError::data(format!(
                "{} is not a project (no config.json); create one with --option new",
                self.root.display()
            )));
        }
        for dir in self.directories() {
            if !dir.is_dir() {
                return Err(CliError::data(format!("project layout is missing {}", dir.display())));
            }
        }
        Ok(())
    }

    /// Completed model iterations, checked to run `0..n` with a matching
    /// training iteration each.
    pub fn iterations(&self) -> CliResult<Vec<u32>> {
        let models = numbered_dirs(&self.models())?;
        let training = numbered_dirs(&self.training())?;
        for (expected, &found) in models.iter().enumerate() {
            if found != expected as u32 {
                return Err(CliError::data(format!(
                    "MODELS/ iterations must be consecutive from 0; found {found} where {expected} was expected"
                )));
            }
            if !training.contains(&found) {
                return Err(CliError::data(format!("MODELS/{found} has no matching TRAINING/{found}")));
            }
        }
        Ok(models.into_iter().collect())
    }

    pub fn latest_iteration(&self) -> CliResult<Option<u32>> {
        Ok(self.iterations()?.last().copied())
    }

    pub fn slides(&self) -> CliResult<Vec<SlideEntry>> {
        list_slides(&self.wsi())
    }

    pub fn holdout_slides(&self) -> CliResult<Vec<SlideEntry>> {
        list_slides(&self.holdout())
    }

    pub fn region_xml(&self, stem: &str) -> PathBuf {
        self.regions().join(format!("{stem}.xml"))
    }
}

fn numbered_dirs(dir: &Path) -> CliResult<BTreeSet<u32>> {
    let mut out = BTreeSet::new();
    for entry in read_dir(dir)? {
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() {
            if let Ok(i) = name.parse::<u32>() {
                if i.to_string() == name {
                    out.insert(i);
                }
            }
        }
    }
    Ok(out)
}

fn read_dir(dir: &Path) -> CliResult<Vec<fs::DirEntry>> {
    let rd = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    rd.collect::<Result<Vec<_>, _>>().map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

pub fn list_slides(dir: &Path) -> CliResult<Vec<SlideEntry>> {
    let mut out = Vec::new();
    for entry in read_dir(dir)? {
        let path = entry.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| SLIDE_EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.push(SlideEntry { stem, path });
        }
    }
    out.sort();
    for pair in out.windows(2) {
        if pair[0].stem == pair[1].stem {
            return Err(CliError::data(format!(
                "{} and {} share the stem {:?}",
                pair[0].path.display(),
                pair[1].path.display(),
                pair[0].stem
            )));
        }
    }
    Ok(out)
}

/// Exclusive ownership of a project for one invocation; released on drop.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl ProjectLock {
    pub fn acquire(root: &Path) -> CliResult<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::data(format!(
                "{} is locked by another invocation; remove {} if no other run is active",
                root.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::data(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Recursively copies `from` into a new directory `to`.
pub fn copy_tree(from: &Path, to: &Path) -> CliResult<()> {
    fs::create_dir_all(to).map_err(|e| CliError::data(format!("{}: {e}", to.display())))?;
    for entry in read_dir(from)? {
        let dest = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_tree(&entry.path(), &dest)?;
        } else {
            fs::copy(entry.path(), &dest).map_err(|e| CliError::data(format!("{}: {e}", dest.display())))?;
        }
    }
    Ok(())
}
