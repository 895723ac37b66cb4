//! Command line driver for the iterative annotate → train → predict loop.
//!
//! A project is a directory:
//!
//! ```text
//! WSI/              incoming slides (.tif, .tiff, .png)
//! REGIONS/          annotation XML, same stem as the slide
//! TRAINING/<i>/     augmented image/mask pairs per iteration
//! MODELS/<i>/       backend state per iteration
//! PREDICTIONS/      predicted XML for correction in the viewer
//! HOLDOUT/          validation slides with truth XML
//! TRANSFER/         optional warm-start state from another project
//! VALIDATION/       report.json, report.txt, timings.json
//! classmap.json     layer id ↔ class index
//! config.json       hyperparameters
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use config::ProjectConfig;
pub use error::{CliError, CliResult, ExitKind};
pub use layout::ProjectLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Operation {
    New,
    Train,
    #[value(alias = "test")]
    Predict,
    Validate,
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "hail", version, about = "Human-in-the-loop whole-slide segmentation projects")]
pub struct Args {
    /// Step to run; `test` is accepted for `predict`.
    #[arg(long, value_enum)]
    pub option: Operation,

    /// Project directory.
    #[arg(long)]
    pub project: PathBuf,

    /// Use only the full-resolution network.
    #[arg(long = "one_network", value_name = "true|false", value_parser = parse_bool)]
    pub one_network: Option<bool>,

    /// Existing project whose latest models seed TRANSFER/ (new only).
    #[arg(long, value_name = "PROJECT")]
    pub transfer: Option<PathBuf>,

    /// Override a config.json setting for this run (persisted by new).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Args {
    pub fn new(option: Operation, project: impl Into<PathBuf>) -> Self {
        Self {
            option,
            project: project.into(),
            one_network: None,
            transfer: None,
            set: Vec::new(),
        }
    }

    pub fn set(mut self, key_value: impl Into<String>) -> Self {
        self.set.push(key_value.into());
        self
    }

    pub fn one_network(mut self, on: bool) -> Self {
        self.one_network = Some(on);
        self
    }
}

/// Runs one invocation; progress and prompts go to `out`.
pub fn run(args: &Args, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if args.transfer.is_some() && args.option != Operation::New {
        return Err(CliError::usage("--transfer only applies to --option new"));
    }
    let layout = ProjectLayout::new(&args.project);
    if args.option == Operation::New {
        let config = ProjectConfig::default().with_overrides(&args.set)?;
        let parent = args.project.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(p) = parent {
            if !p.is_dir() {
                return Err(CliError::data(format!("parent directory {} does not exist", p.display())));
            }
        }
        return commands::new_project(&layout, &config, args.transfer.as_deref(), out);
    }

    layout.require()?;
    let _lock = layout::ProjectLock::acquire(&layout.root)?;
    let config = ProjectConfig::load(&layout.config())?.with_overrides(&args.set)?;
    let one_network = config.one_network(args.one_network);
    let body = |out: &mut (dyn Write + Send)| -> CliResult<()> {
        match args.option {
            Operation::Train => commands::train(&layout, &config, one_network, out).map(drop),
            Operation::Predict => commands::predict(&layout, &config, one_network, out).map(drop),
            Operation::Validate => report::validate(&layout, &config, one_network, out).map(drop),
            Operation::New => unreachable!(),
        }
    };
    if config.workers == 0 {
        return body(out);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| body(out))
}
