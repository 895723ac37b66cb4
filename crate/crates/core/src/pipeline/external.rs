//! Adapter for segmenters that run as a separate process.
//!
//! The adapter writes a JSON manifest and runs `command… <manifest>`.
//!
//! Predict manifest:
//! `{"action": "predict", "scale", "n_classes", "state": dir|null,
//!   "tiles": [{"image": png, "mask": png}]}`. The command writes one 8-bit
//! grayscale mask PNG per tile at the given path.
//!
//! Train manifest:
//! `{"action": "train", "scale", "n_classes", "budget", "seed",
//!   "state": dir|null, "state_out": dir, "pairs": [{"image", "mask"}]}`.
//! The command writes its new state into `state_out`.
//!
//! A non-zero exit status is a backend error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tempfile::TempDir;

use super::{check_prediction, BackendSidecar, SegmenterBackend, TrainingSet};
use crate::error::{Error, Result};
use crate::raster::MaskTile;
use crate::slide_io::ImageTile;

const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilePair {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Manifest {
    Predict {
        scale: u32,
        n_classes: u8,
        state: Option<PathBuf>,
        tiles: Vec<FilePair>,
    },
    Train {
        scale: u32,
        n_classes: u8,
        budget: u32,
        seed: u64,
        state: Option<PathBuf>,
        state_out: PathBuf,
        pairs: Vec<FilePair>,
    },
}

#[derive(Clone, Debug)]
enum State {
    None,
    Saved(PathBuf),
    Fresh(Arc<TempDir>),
}

impl State {
    fn dir(&self) -> Option<PathBuf> {
        match self {
            State::None => None,
            State::Saved(p) => Some(p.clone()),
            State::Fresh(t) => Some(t.path().to_path_buf()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExternalBackend {
    command: Vec<String>,
    n_classes: u8,
    scale: u32,
    state: State,
}

impl ExternalBackend {
    pub const KIND: &'static str = "external";

    /// `command[0]` is the program, the rest are leading arguments.
    pub fn new(command: Vec<String>, n_classes: u8, scale: u32) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument("external backend command is empty".into()));
        }
        Ok(Self {
            command,
            n_classes,
            scale,
            state: State::None,
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    pub fn state_dir(&self) -> Option<PathBuf> {
        self.state.dir()
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let sc = BackendSidecar::read(dir, name)?;
        if sc.kind != Self::KIND {
            return Err(Error::UnsupportedFormat(format!("expected an external backend, found {:?}", sc.kind)));
        }
        let mut b = Self::new(sc.command, sc.n_classes, sc.scale)?;
        let state = dir.join(format!("{name}.state"));
        if state.is_dir() {
            b.state = State::Saved(state);
        }
        Ok(b)
    }

    fn run(&self, manifest: &Manifest, work: &Path) -> Result<()> {
        let path = work.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let output = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(&path)
            .output()
            .map_err(|e| Error::Backend(format!("cannot run {:?}: {e}", self.command[0])))?;
        if !output.status.success() {
            return Err(Error::Backend(format!(
                "{:?} exited with {}: {}",
                self.command[0],
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(())
    }
}

fn tempdir() -> Result<TempDir> {
    tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))
}

impl SegmenterBackend for ExternalBackend {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn n_classes(&self) -> u8 {
        self.n_classes
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn predict(&self, tile: &ImageTile) -> Result<MaskTile> {
        let mut out = self.predict_batch(std::slice::from_ref(tile))?;
        Ok(out.remove(0))
    }

    fn predict_batch(&self, tiles: &[ImageTile]) -> Result<Vec<MaskTile>> {
        if tiles.is_empty() {
            return Ok(Vec::new());
        }
        let work = tempdir()?;
        let mut pairs = Vec::with_capacity(tiles.len());
        for (i, t) in tiles.iter().enumerate() {
            if t.scale != self.scale {
                return Err(Error::ScaleMismatch { expected: self.scale, found: t.scale });
            }
            let image = work.path().join(format!("{i:06}.img.png"));
            t.save_png(&image)?;
            pairs.push(FilePair { image, mask: work.path().join(format!("{i:06}.msk.png")) });
        }
        let manifest = Manifest::Predict {
            scale: self.scale,
            n_classes: self.n_classes,
            state: self.state.dir(),
            tiles: pairs.clone(),
        };
        self.run(&manifest, work.path())?;
        tiles
            .iter()
            .zip(&pairs)
            .map(|(t, p)| {
                let m = MaskTile::load_png(&p.mask, t.origin, t.scale)
                    .map_err(|e| Error::Backend(format!("reading backend output: {e}")))?;
                check_prediction(t, &m, self.n_classes)?;
                Ok(m)
            })
            .collect()
    }

    fn train(&mut self, data: &TrainingSet, budget: u32, seed: u64) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if data.scale() != self.scale {
            return Err(Error::ScaleMismatch { expected: self.scale, found: data.scale() });
        }
        let work = tempdir()?;
        let pairs = match data.files() {
            Some(files) => files
                .iter()
                .map(|(i, m)| FilePair { image: i.clone(), mask: m.clone() })
                .collect(),
            None => {
                let mut v = Vec::with_capacity(data.len());
                for i in 0..data.len() {
                    let pair = data.pair(i)?;
                    let image = work.path().join(format!("{i:06}.img.png"));
                    let mask = work.path().join(format!("{i:06}.msk.png"));
                    pair.0.save_png(&image)?;
                    pair.1.save_png(&mask)?;
                    v.push(FilePair { image, mask });
                }
                v
            }
        };
        let out = tempdir()?;
        let manifest = Manifest::Train {
            scale: self.scale,
            n_classes: self.n_classes,
            budget,
            seed,
            state: self.state.dir(),
            state_out: out.path().to_path_buf(),
            pairs,
        };
        self.run(&manifest, work.path())?;
        self.state = State::Fresh(Arc::new(out));
        Ok(())
    }

    fn save(&self, dir: &Path, name: &str) -> Result<()> {
        BackendSidecar {
            kind: Self::KIND.into(),
            n_classes: self.n_classes,
            scale: self.scale,
            version: VERSION,
            radius: None,
            command: self.command.clone(),
        }
        .write(dir, name)?;
        let Some(src) = self.state.dir() else {
            return Ok(());
        };
        let dst = dir.join(format!("{name}.state"));
        if dst == src {
            return Ok(());
        }
        fs::create_dir_all(&dst).map_err(|e| Error::io(&dst, e))?;
        for entry in fs::read_dir(&src).map_err(|e| Error::io(&src, e))? {
            let entry = entry.map_err(|e| Error::io(&src, e))?;
            if entry.path().is_file() {
                let to = dst.join(entry.file_name());
                fs::copy(entry.path(), &to).map_err(|e| Error::io(&to, e))?;
            }
        }
        Ok(())
    }
}
