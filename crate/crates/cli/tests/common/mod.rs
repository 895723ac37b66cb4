#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hail_cli::{run, Args, Operation};
use hail_core::annotations::write_annotations;
use hail_core::slide_io::{
    render_synthetic_slide, sparse_slide_spec, write_pyramid_tiff, ShapeGeometry, SparseLayout, SyntheticShape,
    SyntheticSlideSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SLIDE: u32 = 2048;
pub const STRUCTURE: [u8; 3] = [150, 40, 90];
/// Closer to the structure color than to white, so a model that never saw
/// it calls it foreground.
pub const DISTRACTOR: [u8; 3] = [200, 140, 170];

pub fn layout() -> SparseLayout {
    SparseLayout {
        structures: 8,
        radius: (32.0, 60.0),
        structure_fill: STRUCTURE,
        speck_coverage: 0.0,
        noise: 6,
        ..SparseLayout::default()
    }
}

/// Sparse slide of class-1 ellipses, optionally with unlabeled distractor
/// blobs kept clear of every structure.
pub fn loop_slide(seed: u64, distractors: usize, radius: (f64, f64)) -> SyntheticSlideSpec {
    let mut spec = sparse_slide_spec(SLIDE, SLIDE, &layout(), seed).unwrap();
    let taken: Vec<(f64, f64, f64)> = spec
        .shapes
        .iter()
        .map(|s| match s.geometry {
            ShapeGeometry::Ellipse { cx, cy, rx, ry } => (cx, cy, rx.max(ry)),
            _ => unreachable!(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15_7AC7);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    while placed.len() < distractors {
        let r = rng.random_range(radius.0..radius.1);
        let c = (rng.random_range(r + 2.0..SLIDE as f64 - r - 2.0), rng.random_range(r + 2.0..SLIDE as f64 - r - 2.0));
        let clear = taken.iter().chain(&placed).all(|o| (o.0 - c.0).hypot(o.1 - c.1) > o.2 + r + 40.0);
        if clear {
            placed.push((c.0, c.1, r));
            let ry = r * rng.random_range(0.6..1.0);
            spec.shapes.insert(0, SyntheticShape::unlabeled(ShapeGeometry::Ellipse { cx: c.0, cy: c.1, rx: r, ry }, DISTRACTOR));
        }
    }
    spec
}

/// Writes the slide as a pyramid TIFF and its truth XML.
pub fn write_slide(spec: &SyntheticSlideSpec, slide: &Path, xml: &Path) {
    let (image, doc) = render_synthetic_slide(spec).unwrap();
    write_pyramid_tiff(slide, &image, &[1, 4, 16]).unwrap();
    write_annotations(xml, &doc).unwrap();
}

pub fn cli(args: Args) -> String {
    let mut out = Vec::new();
    if let Err(e) = run(&args, &mut out) {
        panic!("{:?} failed: {e}\n{}", args.option, String::from_utf8_lossy(&out));
    }
    String::from_utf8(out).unwrap()
}

pub struct LoopRun {
    pub root: PathBuf,
    pub elapsed: Duration,
    pub report: serde_json::Value,
}

pub const HOLDOUT_SEEDS: [u64; 3] = [900, 901, 902];
/// New slides per iteration: plain, plain, with distractors.
pub const ROUNDS: [[u64; 2]; 3] = [[100, 101], [110, 111], [120, 121]];
pub const FINAL_SLIDE: u64 = 130;
pub const HOLDOUT_DISTRACTORS: (usize, (f64, f64)) = (8, (40.0, 70.0));
/// The last round's training slides carry broad distractor sheets, so
/// they make up a real share of the background pixels.
pub const TRAINING_DISTRACTORS: (usize, (f64, f64)) = (12, (120.0, 200.0));

/// Scripted three-round loop: train on annotated slides, predict new ones,
/// "correct" the predictions by replacing them with the truth, retrain.
/// Distractors appear on the holdout and only in the last round's training
/// slides.
pub fn run_loop(root: &Path, overrides: &[&str]) -> LoopRun {
    let start = Instant::now();
    let with = |op: Operation| {
        let mut a = Args::new(op, root);
        for o in overrides {
            a = a.set(*o);
        }
        a
    };
    cli(Args::new(Operation::New, root));
    for &s in &HOLDOUT_SEEDS {
        let dir = root.join("HOLDOUT");
        write_slide(&loop_slide(s, HOLDOUT_DISTRACTORS.0, HOLDOUT_DISTRACTORS.1), &dir.join(format!("h{s}.tif")), &dir.join(format!("h{s}.xml")));
    }
    let truth_dir = root.join("truth");
    fs::create_dir_all(&truth_dir).unwrap();
    for (round, seeds) in ROUNDS.iter().enumerate() {
        let (count, radius) = if round == 2 { TRAINING_DISTRACTORS } else { (0, (0.0, 0.0)) };
        for &s in seeds {
            let stem = format!("s{s}");
            write_slide(&loop_slide(s, count, radius), &root.join("WSI").join(format!("{stem}.tif")), &truth_dir.join(format!("{stem}.xml")));
        }
        if round > 0 {
            cli(with(Operation::Predict));
            for &s in seeds {
                let stem = format!("s{s}");
                let predicted = root.join("PREDICTIONS").join(format!("{stem}.xml"));
                hail_core::annotations::read_annotations::<f64>(&predicted).unwrap();
                fs::remove_file(&predicted).unwrap();
            }
        }
        for &s in seeds {
            let stem = format!("s{s}");
            fs::copy(truth_dir.join(format!("{stem}.xml")), root.join("REGIONS").join(format!("{stem}.xml"))).unwrap();
        }
        cli(with(Operation::Train));
    }
    cli(with(Operation::Validate));
    // One more slide goes through predict and stays there for inspection.
    let stem = format!("s{FINAL_SLIDE}");
    write_slide(
        &loop_slide(FINAL_SLIDE, HOLDOUT_DISTRACTORS.0, HOLDOUT_DISTRACTORS.1),
        &root.join("WSI").join(format!("{stem}.tif")),
        &truth_dir.join(format!("{stem}.xml")),
    );
    cli(with(Operation::Predict));
    let text = fs::read_to_string(root.join("VALIDATION/report.json")).unwrap();
    LoopRun {
        root: root.to_path_buf(),
        elapsed: start.elapsed(),
        report: serde_json::from_str(&text).unwrap(),
    }
}

pub fn iteration_series(report: &serde_json::Value, key: &str) -> Vec<f64> {
    report["iterations"].as_array().unwrap().iter().map(|i| i[key].as_f64().unwrap()).collect()
}
