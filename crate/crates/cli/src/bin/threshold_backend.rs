//! Reference external backend: a learned luminance threshold.
//!
//! Invoked as `hail-threshold-backend <manifest.json>`. Training stores the
//! midpoint between the mean luminance of background and foreground pixels
//! plus the most frequent foreground class; prediction labels darker pixels
//! with that class.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use hail_core::pipeline::Manifest;
use hail_core::{ImageTile, MaskTile};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct State {
    threshold: f64,
    class: u8,
}

fn luminance(p: &[u8]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn load_state(dir: Option<&Path>) -> Result<State, String> {
    let dir = dir.ok_or("no trained state")?;
    let path = dir.join("threshold.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(manifest: &Path) -> Result<(), String> {
    let text = fs::read_to_string(manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    match manifest {
        Manifest::Train { scale, n_classes, state_out, pairs, .. } => {
            let (mut sum, mut count) = ([0.0f64; 2], [0u64; 2]);
            let mut per_class = vec![0u64; n_classes as usize];
            for pair in &pairs {
                let img = ImageTile::load_png(&pair.image, (0, 0), scale).map_err(|e| e.to_string())?;
                let msk = MaskTile::load_png(&pair.mask, (0, 0), scale).map_err(|e| e.to_string())?;
                for (px, &c) in img.pixels.chunks_exact(3).zip(&msk.values) {
                    let k = (c > 0) as usize;
                    sum[k] += luminance(px);
                    count[k] += 1;
                    if let Some(n) = per_class.get_mut(c as usize) {
                        *n += 1;
                    }
                }
            }
            if count[0] == 0 || count[1] == 0 {
                return Err("training data needs background and foreground pixels".into());
            }
            let threshold = 0.5 * (sum[0] / count[0] as f64 + sum[1] / count[1] as f64);
            let class = (1..per_class.len()).max_by_key(|&c| (per_class[c], std::cmp::Reverse(c))).unwrap_or(1) as u8;
            fs::create_dir_all(&state_out).map_err(|e| e.to_string())?;
            let state = serde_json::to_string(&State { threshold, class }).unwrap();
            fs::write(state_out.join("threshold.json"), state).map_err(|e| e.to_string())
        }
        Manifest::Predict { scale, state, tiles, .. } => {
            let state = load_state(state.as_deref())?;
            for tile in &tiles {
                let img = ImageTile::load_png(&tile.image, (0, 0), scale).map_err(|e| e.to_string())?;
                let values = img
                    .pixels
                    .chunks_exact(3)
                    .map(|p| if luminance(p) < state.threshold { state.class } else { 0 })
                    .collect();
                let mask = MaskTile::new((0, 0), scale, img.width, img.height, values).map_err(|e| e.to_string())?;
                mask.save_png(&tile.mask).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 2 {
        eprintln!("usage: {} <manifest.json>", args[0]);
        return ExitCode::from(2);
    }
    match run(Path::new(&args[1])) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
