use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dlab_core::data::{generate, pgm_bytes, Dataset, FactorSpec};
use dlab_core::exec::Execution;
use dlab_core::linalg::Tensor;
use dlab_core::metrics::{corr_heatmap_pgm, latent_corr, log10_abs_corr, write_matrix_csv, RunMetrics};
use dlab_core::model::{load_checkpoint, save_checkpoint, train, VaeModel};
use dlab_core::verify::{
    elliptical_battery, entropy_battery, stein_battery, write_entropy_csv, BatteryResult, Family, BATTERY_SIZE,
    REQUIRED_PASSES,
};

use crate::config::{parse_json, DatasetSource, ResolvedConfig, RunConfig, RESOLVED_CONFIG_FILE};
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CORR_CSV_FILE: &str = "corr.csv";
pub const CORR_PGM_FILE: &str = "corr.pgm";
pub const SUMMARY_FILE: &str = "summary.csv";

const HEATMAP_CELL: usize = 16;
const ENTROPY_ROWS: usize = 1000;
const STUDENT_T_NU: f64 = 5.0;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn train_run(config: &Path, out: &Path) -> Result<(), CliError> {
    let (resolved, data) = RunConfig::read(config)?.resolve()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG_FILE), serde_json::to_string_pretty(&resolved)? + "\n")?;

    let mut model = VaeModel::new(resolved.model, resolved.train.seed)?;
    let trace = train(&mut model, data.images(), &resolved.train)?;
    trace.write_csv(create(&out.join(TRACE_FILE))?)?;
    save_checkpoint(out, &model, resolved.train.seed, resolved.train.epochs)?;

    let metrics = RunMetrics::compute(&model, data.images(), Execution::Parallel)?;
    fs::write(out.join(METRICS_FILE), format!("{}\n{}\n", RunMetrics::CSV_HEADER, metrics.csv_row()))?;
    let corr = latent_corr(&model, data.images())?;
    write_matrix_csv(&corr.corr, create(&out.join(CORR_CSV_FILE))?)?;
    fs::write(out.join(CORR_PGM_FILE), corr_heatmap_pgm(&log10_abs_corr(&corr.corr), HEATMAP_CELL)?)?;
    println!(
        "{}: recon_bce {:.4}, max |corr| {:.3e}, kl {:.4}",
        metrics.variant, metrics.recon_bce, metrics.max_offdiag_corr, metrics.kl
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Stein,
    Elliptical,
    Entropy,
    All,
}

struct SuiteOutcome {
    name: &'static str,
    passed: usize,
    total: usize,
    met: bool,
}

fn battery_outcome(name: &'static str, r: &BatteryResult, out: &Path) -> Result<SuiteOutcome, CliError> {
    r.write_csv(create(&out.join(format!("{name}.csv")))?)?;
    Ok(SuiteOutcome {
        name,
        passed: r.passed(),
        total: r.total(),
        met: r.meets_threshold(),
    })
}

/// Runs the requested batteries; `Ok(false)` when any threshold is unmet.
pub fn verify_run(suite: Suite, seed: u64, cases: usize, samples: usize, out: &Path) -> Result<bool, CliError> {
    if cases == 0 {
        return Err(CliError::Config {
            field: "cases".into(),
            reason: "must be positive".into(),
        });
    }
    fs::create_dir_all(out)?;
    let exec = Execution::Parallel;
    let mut outcomes = Vec::new();
    if matches!(suite, Suite::Stein | Suite::All) {
        outcomes.push(battery_outcome("stein", &stein_battery(seed, cases, samples, exec)?, out)?);
    }
    if matches!(suite, Suite::Elliptical | Suite::All) {
        for (name, family) in [
            ("gaussian", Family::Gaussian),
            ("student_t", Family::StudentT { nu: STUDENT_T_NU }),
            ("laplace", Family::Laplace),
        ] {
            outcomes.push(battery_outcome(name, &elliptical_battery(family, seed, cases, samples, exec)?, out)?);
        }
    }
    if matches!(suite, Suite::Entropy | Suite::All) {
        let r = entropy_battery(seed, cases, ENTROPY_ROWS, exec)?;
        write_entropy_csv(&r, create(&out.join("entropy.csv"))?)?;
        let passed = r.iter().filter(|c| c.pass).count();
        outcomes.push(SuiteOutcome {
            name: "entropy",
            passed,
            total: r.len(),
            met: passed == r.len(),
        });
    }
    let mut summary = create(&out.join(SUMMARY_FILE))?;
    writeln!(summary, "suite,passed,total,met")?;
    for o in &outcomes {
        writeln!(summary, "{},{},{},{}", o.name, o.passed, o.total, o.met)?;
        let verdict = if o.met { "ok" } else { "UNMET" };
        println!("{:<10} {}/{} {verdict}", o.name, o.passed, o.total);
    }
    summary.flush()?;
    println!("batteries need {REQUIRED_PASSES}/{BATTERY_SIZE} passes; entropy needs all");
    Ok(outcomes.iter().all(|o| o.met))
}

pub struct TraverseArgs {
    pub checkpoint: PathBuf,
    pub coord: usize,
    pub range: (f64, f64),
    pub steps: usize,
    pub anchor: usize,
    pub zero_anchor: bool,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
}

/// The dataset a checkpoint was trained on, when its run directory records it.
fn run_dataset(dir: &Path) -> Result<DatasetSource, CliError> {
    let path = dir.join(RESOLVED_CONFIG_FILE);
    if !path.exists() {
        return Ok(DatasetSource::default());
    }
    let cfg: ResolvedConfig = parse_json(&fs::read_to_string(path)?)?;
    Ok(cfg.dataset)
}

/// Latent codes for the frames: the anchor with coordinate `coord` swept
/// evenly over `range`. A single step keeps the anchor's own value.
pub fn traversal_codes(anchor: &[f64], coord: usize, range: (f64, f64), steps: usize) -> Tensor {
    let d = anchor.len();
    let mut z = Vec::with_capacity(steps * d);
    for i in 0..steps {
        let mut row = anchor.to_vec();
        if steps > 1 {
            row[coord] = range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64;
        }
        z.extend(row);
    }
    Tensor::new(vec![steps, d], z).expect("steps x d codes")
}

/// Frames side by side in one `height × (steps·width)` image.
pub fn strip(frames: &Tensor, width: usize, height: usize) -> Vec<f64> {
    let steps = frames.rows();
    let mut out = Vec::with_capacity(steps * width * height);
    for r in 0..height {
        for f in 0..steps {
            out.extend_from_slice(&frames.row(f)[r * width..(r + 1) * width]);
        }
    }
    out
}

pub fn traverse_run(args: &TraverseArgs) -> Result<(), CliError> {
    let bad = |field: &str, reason: String| CliError::Config {
        field: field.into(),
        reason,
    };
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let data = match &args.dataset {
        Some(p) => Dataset::load(p)?,
        None => run_dataset(&args.checkpoint)?.load()?,
    };
    let d = model.latent_dim();
    if data.pixels() != model.input_dim() {
        return Err(bad("dataset", format!("{} pixels per image, model expects {}", data.pixels(), model.input_dim())));
    }
    if args.coord >= d {
        return Err(bad("coord", format!("must be below the latent dimension {d}, got {}", args.coord)));
    }
    if args.steps == 0 {
        return Err(bad("steps", "must be positive".into()));
    }
    if !(args.range.0.is_finite() && args.range.1.is_finite()) {
        return Err(bad("range", "bounds must be finite".into()));
    }
    let anchor = if args.zero_anchor {
        vec![0.0; d]
    } else {
        if args.anchor >= data.len() {
            return Err(bad("anchor", format!("dataset has {} images, got index {}", data.len(), args.anchor)));
        }
        let x = data.images().select_rows(&[args.anchor]);
        model.encode(&x)?.0.row(0).to_vec()
    };
    let z = traversal_codes(&anchor, args.coord, args.range, args.steps);
    let frames = model.decode(&z)?;
    let pixels = strip(&frames, data.width(), data.height());
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, pgm_bytes(args.steps * data.width(), data.height(), &pixels)?)?;
    for i in 0..args.steps {
        println!("frame {i}: z[{}] = {:.4}", args.coord, z.get(i, args.coord));
    }
    Ok(())
}

pub fn report_run(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut w = create(out)?;
    writeln!(w, "run,{}", RunMetrics::CSV_HEADER)?;
    for dir in runs {
        let path = dir.join(METRICS_FILE);
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next() != Some(RunMetrics::CSV_HEADER) {
            return Err(dlab_core::Error::Format(format!("{} lacks the metrics header", path.display())).into());
        }
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let m = RunMetrics::parse_csv_row(line)?;
            writeln!(w, "{},{}", dir.display(), m.csv_row())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn generate_run(spec: Option<&Path>, width: usize, height: usize, out: &Path) -> Result<(), CliError> {
    let spec = match spec {
        Some(p) => {
            let spec: FactorSpec = parse_json(&fs::read_to_string(p)?)?;
            FactorSpec::new(spec.factors)?
        }
        None => FactorSpec::standard(),
    };
    let data = generate(&spec, width, height, Execution::Parallel)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    data.save(out)?;
    println!("{} images of {width}x{height} written to {}", data.len(), out.display());
    Ok(())
}
