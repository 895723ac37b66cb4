//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use hail_core::analytics::{compute_metrics, fit_decay, time_savings, ConfusionCounts};
use hail_core::annotations::{
    parse_annotations, read_annotations, serialize_annotations, AnnotationDocument, AnnotationLayer, ClassMap,
    LineColor, Region, Vertex,
};
use hail_core::pipeline::{predict_slide_mask, PredictConfig, PredictionMode, TruthBackend};
use hail_core::raster::{mask_to_annotations, rasterize_window, trace_contours};
use hail_core::slide_io::{render_synthetic_slide, sparse_slide_spec, SparseLayout};
use hail_core::tiling::{plan_tiles, stitch};
use hail_core::{MaskTile, MetricsExact, SlideHandle, Window};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn paint_ellipse(v: &mut [u8], w: u32, h: u32, (cx, cy, rx, ry): (f64, f64, f64, f64), class: u8) {
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                v[(y * w + x) as usize] = class;
            }
        }
    }
}

/// Random blobs plus at least one ring whose core is another class, so
/// every mask has a hole.
fn blob_mask_with_holes(rng: &mut ChaCha8Rng) -> MaskTile {
    let (w, h) = (rng.random_range(24..=512u32), rng.random_range(24..=512u32));
    let classes = rng.random_range(1..=4u8);
    let mut v = vec![0u8; (w * h) as usize];
    for _ in 0..rng.random_range(1..8) {
        let c = rng.random_range(0..=classes);
        let e = (
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
            rng.random_range(1.0..w as f64 / 2.0),
            rng.random_range(1.0..h as f64 / 2.0),
        );
        paint_ellipse(&mut v, w, h, e, c);
    }
    for _ in 0..rng.random_range(1..4) {
        let ring = rng.random_range(1..=classes);
        let core = (0..=classes).filter(|&c| c != ring).collect::<Vec<_>>()[rng.random_range(0..classes as usize)];
        let r = rng.random_range(6.0..(w.min(h) as f64 / 2.0 - 1.0).max(6.5));
        let (cx, cy) = (rng.random_range(r..w as f64 - r), rng.random_range(r..h as f64 - r));
        paint_ellipse(&mut v, w, h, (cx, cy, r, r), ring);
        paint_ellipse(&mut v, w, h, (cx, cy, r * 0.5, r * 0.5), core);
    }
    if rng.random_bool(0.5) {
        for p in v.iter_mut() {
            if rng.random_bool(0.01) {
                *p = rng.random_range(0..=classes);
            }
        }
    }
    let origin = (rng.random_range(0..10_000), rng.random_range(0..10_000));
    MaskTile::new(origin, 1, w, h, v).unwrap()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map = ClassMap::identity(4);
    let (mut exact, mut holes, mut largest) = (0, 0, 0);
    for case in 0..200 {
        let mask = blob_mask_with_holes(&mut rng);
        largest = largest.max(mask.width.max(mask.height));
        holes += trace_contours(&mask).holes().count();
        let doc: AnnotationDocument = mask_to_annotations(&mask, &map).map_err(|e| e.to_string())?;
        let xml = serialize_annotations(&doc);
        let parsed: AnnotationDocument = parse_annotations(&xml).map_err(|e| e.to_string())?;
        let back = rasterize_window(&parsed, &map, &mask.window()).map_err(|e| e.to_string())?;
        ensure(back == mask, || format!("case {case} ({}x{}) differs", mask.width, mask.height))?;
        exact += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{exact}/200 pixel-exact, {holes} holes, largest side {largest}, {secs:.1} s"))
}

// ---------------------------------------------------------------- 2

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn random_coord(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..200_000u32) as f64,
        1 => rng.random_range(0..200_000u32) as f64 + rng.random_range(0..256u32) as f64 / 256.0,
        2 => rng.random_range(0.0..1.0e6),
        _ => rng.random_range(1.0e-9..1.0e-3),
    }
}

fn random_name(rng: &mut ChaCha8Rng) -> Option<String> {
    const ALPHABET: &[u8] = b" abcXYZ019&<>\"'-_;=/";
    rng.random_bool(0.7).then(|| {
        (0..rng.random_range(0..12)).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
    })
}

fn random_document(rng: &mut ChaCha8Rng) -> AnnotationDocument {
    AnnotationDocument {
        microns_per_pixel: rng.random_bool(0.5).then(|| rng.random_range(0.01..10.0)),
        layers: (0..rng.random_range(0..5u32))
            .map(|i| AnnotationLayer {
                id: i + 1,
                name: random_name(rng),
                line_color: LineColor(rng.random_range(0..1 << 24)),
                regions: (0..rng.random_range(0..5u32))
                    .map(|j| Region {
                        id: j + 1,
                        negative: rng.random_bool(0.3),
                        vertices: (0..rng.random_range(3..12))
                            .map(|_| Vertex::new(random_coord(rng), random_coord(rng)))
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn criterion_2() -> Check {
    let read = |name: &str| fs::read_to_string(fixtures().join(name)).map_err(|e| format!("{name}: {e}"));
    let golden = read("golden.xml")?;
    let export: AnnotationDocument = parse_annotations(&read("viewer_export.xml")?).map_err(|e| e.to_string())?;
    ensure(serialize_annotations(&export) == golden, || "viewer export does not normalize to the golden file".into())?;
    let doc: AnnotationDocument = parse_annotations(&golden).map_err(|e| e.to_string())?;
    ensure(serialize_annotations(&doc) == golden, || "golden file is not a fixed point".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let doc = random_document(&mut rng);
        let text = serialize_annotations(&doc);
        let back: AnnotationDocument = parse_annotations(&text).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == doc, || format!("case {case}: parse(serialize(doc)) != doc"))?;
        ensure(serialize_annotations(&back) == text, || format!("case {case}: reserialization differs"))?;
    }
    Ok("golden fixture byte-identical; 1000/1000 fuzzed documents roundtrip".into())
}

// ---------------------------------------------------------------- 3

fn random_mask(rng: &mut ChaCha8Rng, window: &Window, n: u8) -> MaskTile {
    let values = (0..window.pixel_count()).map(|_| rng.random_range(0..n)).collect();
    MaskTile::new(window.origin, window.scale, window.size.0, window.size.1, values).unwrap()
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut windows = 0;
    for case in 0..500 {
        let (w, h) = (rng.random_range(1..=256u32), rng.random_range(1..=256u32));
        let tile = rng.random_range(1..=160u32);
        let overlap = rng.random_range(0.0..0.95);
        let scale = rng.random_range(1..=4u32);
        let grid = plan_tiles((w * scale, h * scale), tile, overlap, scale).map_err(|e| e.to_string())?;
        windows += grid.len();
        let mut cover = vec![0u32; (w * h) as usize];
        for win in &grid.windows {
            let (x0, y0) = (win.origin.0 / scale, win.origin.1 / scale);
            ensure(win.size == (tile.min(w), tile.min(h)) && x0 + win.size.0 <= w && y0 + win.size.1 <= h, || {
                format!("case {case}: window {win:?} not clamped to {w}x{h}")
            })?;
            for y in y0..y0 + win.size.1 {
                for x in x0..x0 + win.size.0 {
                    cover[(y * w + x) as usize] += 1;
                }
            }
        }
        ensure(cover.iter().all(|&c| c > 0), || format!("case {case}: uncovered pixel"))?;

        let truth = random_mask(&mut rng, &grid.extent(), 4);
        let oracle: Vec<_> = grid.windows.iter().map(|win| (*win, truth.restrict(win).unwrap())).collect();
        ensure(stitch(&oracle, &grid, 4).map_err(|e| e.to_string())? == truth, || {
            format!("case {case}: oracle tiles do not reassemble")
        })?;
        let mut noisy: Vec<_> = grid.windows.iter().map(|win| (*win, random_mask(&mut rng, win, 4))).collect();
        let reference = stitch(&noisy, &grid, 4).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            noisy.shuffle(&mut rng);
            ensure(stitch(&noisy, &grid, 4).unwrap() == reference, || format!("case {case}: order dependent"))?;
        }
    }
    Ok(format!("500 configurations ({windows} windows), 20 permutations each"))
}

// ---------------------------------------------------------------- 4 and 8a

const BIG: u32 = 4096;
const WORKERS: [usize; 3] = [4, 1, 8];

struct DeepZoomSummary {
    worst_ratio: f64,
    full_secs: f64,
    dz_secs: f64,
    max_tissue: f64,
    deterministic: bool,
}

fn deepzoom_runs() -> Result<DeepZoomSummary, String> {
    let layout = SparseLayout::default();
    let map = ClassMap::identity(1);
    let mut s = DeepZoomSummary { worst_ratio: 0.0, full_secs: 0.0, dz_secs: 0.0, max_tissue: 0.0, deterministic: true };
    for seed in 0..20 {
        let spec = sparse_slide_spec(BIG, BIG, &layout, 4000 + seed).map_err(|e| e.to_string())?;
        let (image, doc) = render_synthetic_slide(&spec).map_err(|e| e.to_string())?;
        let tissue = image.pixels.chunks_exact(3).filter(|p| p != &[255, 255, 255]).count() as f64 / (BIG * BIG) as f64;
        s.max_tissue = s.max_tissue.max(tissue);
        let slide = SlideHandle::from_tile(&image).map_err(|e| e.to_string())?;
        drop(image);
        let hi = TruthBackend::new(doc, map.clone(), 1);
        let lo = hi.at_scale(16);
        let mut reference: Option<(MaskTile, MaskTile)> = None;
        for workers in WORKERS {
            let cfg = |mode| PredictConfig { mode, workers, ..Default::default() };
            let t = Instant::now();
            let full = predict_slide_mask(&slide, None, &hi, &cfg(PredictionMode::Full)).map_err(|e| e.to_string())?;
            let full_secs = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let dz = predict_slide_mask(&slide, Some(&lo), &hi, &cfg(PredictionMode::DeepZoom)).map_err(|e| e.to_string())?;
            let dz_secs = t.elapsed().as_secs_f64();
            match &reference {
                None => {
                    ensure(full.mask == dz.mask, || format!("slide {seed}: deepzoom differs from full mode"))?;
                    let ratio = dz.stats.highres_evaluated as f64 / full.stats.highres_evaluated as f64;
                    s.worst_ratio = s.worst_ratio.max(ratio);
                    s.full_secs += full_secs;
                    s.dz_secs += dz_secs;
                    reference = Some((full.mask, dz.mask));
                }
                Some((f, d)) => s.deterministic &= *f == full.mask && *d == dz.mask,
            }
        }
    }
    Ok(s)
}

fn criterion_4(s: &DeepZoomSummary) -> Check {
    let speedup = s.full_secs / s.dz_secs;
    let detail = format!(
        "20 slides {BIG}², max tissue {:.1}%, outputs equal, worst evaluated ratio {:.1}%, speedup {:.1}x ({:.1} s vs {:.1} s)",
        100.0 * s.max_tissue,
        100.0 * s.worst_ratio,
        speedup,
        s.full_secs,
        s.dz_secs
    );
    ensure(s.max_tissue <= 0.05 && s.worst_ratio <= 0.25 && speedup >= 2.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn brute_force(pred: &[u8], truth: &[u8], positive: u8) -> [Ratio<u64>; 5] {
    let frac = |n: usize, d: usize| if d == 0 { Ratio::from_integer(1) } else { Ratio::new(n as u64, d as u64) };
    let (mut pp, mut tp_, mut both, mut neither) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p == positive, t == positive);
        pp += p as usize;
        tp_ += t as usize;
        both += (p && t) as usize;
        neither += (!p && !t) as usize;
    }
    let n = pred.len();
    [frac(both, tp_), frac(neither, n - tp_), frac(both, pp), frac(both + neither, n), frac(2 * both, pp + tp_)]
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..9u32), rng.random_range(1..9u32));
        let classes = rng.random_range(2..5u8);
        let n = (w * h) as usize;
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let (p, t) = (MaskTile::new((0, 0), 1, w, h, pred.clone()).unwrap(), MaskTile::new((0, 0), 1, w, h, truth.clone()).unwrap());
        for positive in 1..classes {
            let (_, m): (ConfusionCounts, MetricsExact) = compute_metrics(&p, &t, positive).unwrap();
            let got = [m.sensitivity, m.specificity, m.precision, m.accuracy, m.f1];
            ensure(got == brute_force(&pred, &truth, positive), || format!("case {case}, class {positive}"))?;
        }
    }
    let truth = MaskTile::new((0, 0), 1, 4, 4, vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
    let pred = MaskTile::new((0, 0), 1, 4, 4, vec![1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
    let (_, m): (ConfusionCounts, MetricsExact) = compute_metrics(&pred, &truth, 1).unwrap();
    let want = [Ratio::new(1, 2), Ratio::new(11, 12), Ratio::new(2, 3), Ratio::new(13, 16), Ratio::new(4, 7)];
    ensure([m.sensitivity, m.specificity, m.precision, m.accuracy, m.f1] == want, || "16-pixel example".into())?;
    Ok("1000/1000 random pairs exact; 16-pixel example exact".into())
}

// ---------------------------------------------------------------- 6

fn savings_by_trapezoid(tau: f64, r: f64) -> f64 {
    let n = 20_000;
    let h = r / n as f64;
    let mut area = 0.5 * (1.0 + (-r / tau).exp());
    for k in 1..n {
        area += (-(k as f64 * h) / tau).exp();
    }
    (1.0 - area * h / r) * 100.0
}

fn criterion_6() -> Check {
    let grid: Vec<f64> = (0..20).map(|k| 10f64.powf(4.0 * k as f64 / 19.0)).collect();
    let mut worst: f64 = 0.0;
    let mut table = vec![vec![0.0; 20]; 20];
    for (i, &tau) in grid.iter().enumerate() {
        for (j, &r) in grid.iter().enumerate() {
            let p = time_savings(tau, r).map_err(|e| e.to_string())?;
            worst = worst.max((p - savings_by_trapezoid(tau, r)).abs() / savings_by_trapezoid(tau, r));
            table[i][j] = p;
        }
    }
    ensure(worst < 1e-3, || format!("integration deviation {worst:.2e}"))?;
    #[allow(clippy::needless_range_loop)]
    for i in 0..20 {
        for j in 0..19 {
            ensure(table[j + 1][i] < table[j][i] && table[i][j + 1] > table[i][j], || "monotonicity".into())?;
        }
    }

    let mut noiseless: f64 = 0.0;
    for tau in [5.0, 50.0, 120.0, 400.0] {
        let pts: Vec<(f64, f64)> = (1..=12).map(|k| 50.0 * k as f64).map(|r| (r, (-r / tau).exp())).collect();
        let (fit, _) = fit_decay(&pts, 600.0).map_err(|e| e.to_string())?;
        noiseless = noiseless.max((fit - tau).abs() / tau);
    }
    ensure(noiseless < 1e-3, || format!("noiseless error {noiseless:.2e}"))?;

    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut noisy: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> =
            (1..=60).map(|k| 10.0 * k as f64).map(|r| (r, (-r / 50.0f64).exp() * (1.0 + noise.sample(&mut rng)))).collect();
        let (fit, _) = fit_decay(&pts, 600.0).map_err(|e| e.to_string())?;
        noisy = noisy.max((fit - 50.0).abs() / 50.0);
    }
    ensure(noisy < 0.05, || format!("noisy error {:.2}%", 100.0 * noisy))?;
    Ok(format!(
        "400-point grid max deviation {worst:.1e}; noiseless tau error {noiseless:.1e}; noisy worst {:.2}% over 100 seeds; monotone",
        100.0 * noisy
    ))
}

// ---------------------------------------------------------------- 7 and 8b

const LOOP_SETTINGS: [&str; 2] = ["tile_size=256", "augment_base=3"];

fn loop_with_workers(base: &Path, workers: usize) -> common::LoopRun {
    let w = format!("workers={workers}");
    let mut settings: Vec<&str> = LOOP_SETTINGS.to_vec();
    settings.push(&w);
    common::run_loop(&base.join(format!("w{workers}")), &settings)
}

fn criterion_7(run: &common::LoopRun) -> Check {
    let f1 = common::iteration_series(&run.report, "mean_f1");
    let burden = common::iteration_series(&run.report, "correction_burden");
    let iterations = f1.len();
    let models: Vec<_> = (0..3).map(|i| run.root.join(format!("MODELS/{i}/highres.json"))).collect();

    // The last prediction parses and re-rasterizes onto the truth.
    let class_map = ClassMap::load(&run.root.join("classmap.json")).unwrap();
    let stem = format!("s{}", common::FINAL_SLIDE);
    let predicted: AnnotationDocument =
        read_annotations(&run.root.join(format!("PREDICTIONS/{stem}.xml"))).map_err(|e| e.to_string())?;
    let truth: AnnotationDocument =
        read_annotations(&run.root.join(format!("truth/{stem}.xml"))).map_err(|e| e.to_string())?;
    let full = Window::new((0, 0), (common::SLIDE, common::SLIDE), 1);
    let p = rasterize_window(&predicted, &class_map, &full).map_err(|e| e.to_string())?;
    let t = rasterize_window(&truth, &class_map, &full).map_err(|e| e.to_string())?;
    let (_, m) = compute_metrics::<f64>(&p, &t, 1).unwrap();

    let secs = run.elapsed.as_secs_f64();
    let detail = format!(
        "mean F1 {:?}, burden {:?}, final prediction F1 {:.4}, {secs:.0} s",
        f1.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        burden,
        m.f1
    );
    let non_decreasing = f1.windows(2).all(|w| w[1] >= w[0] - 1e-3);
    let non_increasing = burden.windows(2).all(|w| w[1] <= w[0]);
    ensure(
        iterations == 3
            && models.iter().all(|p| p.is_file())
            && non_decreasing
            && f1[2] >= 0.95
            && non_increasing
            && burden[2] == 0.0
            && secs < 300.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

/// Every file under `root` except wall-clock timings.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if !path.ends_with("VALIDATION/timings.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_8(dz: &DeepZoomSummary, runs: &[(usize, common::LoopRun)]) -> Check {
    ensure(dz.deterministic, || "deepzoom/full masks differ across worker counts".into())?;
    let trees: Vec<_> = runs.iter().map(|(w, r)| (*w, tree(&r.root))).collect();
    let (w0, reference) = &trees[0];
    for (w, t) in &trees[1..] {
        ensure(t.keys().eq(reference.keys()), || format!("file sets differ between {w0} and {w} workers"))?;
        for (path, bytes) in t {
            ensure(reference[path] == *bytes, || format!("{} differs between {w0} and {w} workers", path.display()))?;
        }
    }
    let xml = reference.keys().filter(|p| p.extension().is_some_and(|e| e == "xml")).count();
    Ok(format!(
        "workers {:?}: 20 slide masks per mode and {} project files ({xml} XML, reports, models, training pairs) byte-identical",
        WORKERS,
        reference.len()
    ))
}

// ----------------------------------------------------------------

fn report(id: u8, name: &str, result: std::thread::Result<Check>, failures: &mut u32) {
    let (status, detail) = match result {
        Ok(Ok(d)) => ("PASS", d),
        Ok(Err(d)) => ("FAIL", d),
        Err(p) => ("FAIL", p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
    };
    if status == "FAIL" {
        *failures += 1;
    }
    println!("criterion {id} {status} {name}: {detail}");
}

fn main() -> ExitCode {
    let mut failures = 0;
    let guarded = |f: &dyn Fn() -> Check| catch_unwind(AssertUnwindSafe(f));
    report(1, "conversion identity", guarded(&criterion_1), &mut failures);
    report(2, "XML interop", guarded(&criterion_2), &mut failures);
    report(3, "tiling laws", guarded(&criterion_3), &mut failures);

    let dz = catch_unwind(deepzoom_runs);
    let dz_ok = matches!(dz, Ok(Ok(_)));
    let dz_summary = match &dz {
        Ok(Ok(s)) => Some(s),
        _ => None,
    };
    report(
        4,
        "deepzoom equivalence and work bound",
        match &dz {
            Ok(Ok(s)) => Ok(criterion_4(s)),
            Ok(Err(e)) => Ok(Err(e.clone())),
            Err(_) => Ok(Err("panicked".into())),
        },
        &mut failures,
    );
    report(5, "metrics oracle", guarded(&criterion_5), &mut failures);
    report(6, "annotation-time formulas", guarded(&criterion_6), &mut failures);

    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut runs = Vec::new();
    for workers in WORKERS {
        match catch_unwind(AssertUnwindSafe(|| loop_with_workers(scratch.path(), workers))) {
            Ok(run) => runs.push((workers, run)),
            Err(p) => {
                let msg = p.downcast_ref::<String>().cloned().unwrap_or_default();
                println!("loop with {workers} workers failed: {msg}");
                break;
            }
        }
        if runs.len() == 1 {
            report(7, "end-to-end synthetic loop", Ok(criterion_7(&runs[0].1)), &mut failures);
        }
    }
    if runs.is_empty() {
        report(7, "end-to-end synthetic loop", Ok(Err("loop did not complete".into())), &mut failures);
    }
    let c8 = match dz_summary {
        Some(s) if dz_ok && runs.len() == WORKERS.len() => guarded(&|| criterion_8(s, &runs)),
        _ => Ok(Err("prerequisite runs did not complete".into())),
    };
    report(8, "determinism across worker counts", c8, &mut failures);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
