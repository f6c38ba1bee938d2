//! Command-line entry points.
//!
//! One thin binary exposes the whole pipeline: phantom generation, the two
//! training stages, inference, evaluation, cross-validation, and a numeric
//! self-test. All subcommands share a preset (`desk` or `paper`), an
//! optional key=value override file, a master seed, and a thread count.
//!
//! Exit codes: `0` success, `2` invalid input or configuration, `3`
//! numeric divergence (non-finite loss), `4` localization failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{load_checkpoint, save_checkpoint, standard_suite, TensorError};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    gen_phantom, load_box, load_labels, load_volume, parse_phantom_request, save_box, save_labels,
    save_volume, BoundingBox3D, DataError, Geometry, LabelVolume, Volume,
};
use crate::locnet::{
    kde_aggregate, localizer_from_checkpoint, train_localizer, CornerVotes, LocError, RoiCase,
};
use crate::metrics::{
    cross_validate, evaluate, extract_surface, render_crossval_machine, render_crossval_table,
    render_report_machine, render_report_table, CrossValCase, MetricsError,
};
use crate::segnet::{
    segment_volume, segmenter_from_checkpoint, train_binary, train_multiclass, SegCase, SegError,
};
use crate::autodiff::Dims3;

#[derive(Debug)]
enum CliError {
    /// Bad flags, unreadable files, malformed formats, invalid configs.
    Input(String),
    /// Training produced a non-finite loss.
    Divergence(String),
    /// The localizer could not produce a usable region.
    Localization(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Divergence(m) | CliError::Localization(m) => {
                f.write_str(m)
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Localization(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<LocError> for CliError {
    fn from(e: LocError) -> Self {
        match e {
            LocError::ConstantVolume | LocError::NoReferences | LocError::EmptyVotes(_) => {
                CliError::Localization(e.to_string())
            }
            LocError::Tensor(t) => CliError::from(t),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SegError> for CliError {
    fn from(e: SegError) -> Self {
        match e {
            SegError::Localization(inner) => CliError::from(inner),
            SegError::Tensor(t) => CliError::from(t),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let msg = e.to_string();
        if msg.contains("non-finite") {
            CliError::Divergence(msg)
        } else {
            CliError::Input(msg)
        }
    }
}

/// Cascaded two-network lumbar vertebra segmentation.
#[derive(Parser)]
#[command(name = "lumbarseg", version, about, max_term_width = 100)]
struct Cli {
    /// Configuration preset: `desk` (laptop-sized) or `paper` (full-sized).
    #[arg(long, global = true, default_value = "desk", value_name = "NAME")]
    preset: String,

    /// Key=value override file applied on top of the preset.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker thread count (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom cases with exact ground truth.
    GenPhantom {
        /// Phantom request file (key=value; `cases=N` for a batch).
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Directory receiving `caseNNN.vol.hdr` / `.lab.hdr` / `.box.txt`.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Train the localization network on a case directory.
    TrainLocalizer {
        /// Directory of phantom cases (volumes plus box files).
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        /// Checkpoint output path; an epoch log is written to `<OUT>.log`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the segmentation network: binary phase, then multi-class.
    TrainSegmenter {
        /// Directory of phantom cases (volumes, labels, and box files).
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        /// Final checkpoint path; the binary-phase checkpoint is written to
        /// `<OUT>.binary` and the epoch log to `<OUT>.log`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Segment one volume using trained checkpoints.
    Infer {
        /// Intensity volume header to segment.
        #[arg(long, value_name = "FILE")]
        volume: PathBuf,
        /// Localizer checkpoint.
        #[arg(long, value_name = "FILE")]
        localizer: PathBuf,
        /// Segmenter checkpoint (multi-class).
        #[arg(long, value_name = "FILE")]
        segmenter: PathBuf,
        /// Output label volume header.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Compare a predicted label volume against ground truth.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        predicted: PathBuf,
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        /// Report path; a machine-readable copy goes to `<OUT>.kv`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train and evaluate with k-fold cross-validation.
    Crossval {
        /// Directory of phantom cases (volumes, labels, and box files).
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        /// Report path; a machine-readable copy goes to `<OUT>.kv`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the built-in numeric test battery (gradients, metrics, voting).
    Selfcheck {
        /// Deliberately corrupt the gradients to prove the sweep can fail.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

/// Parses `std::env::args`, runs the requested command, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool setup failed: {e}")))?;
    }

    let mut config = RunConfig::preset(&cli.preset)?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("reading {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    config.validate()?;

    if cli.dump_config {
        print!("{}", config.to_text());
        return Ok(());
    }

    let Some(command) = cli.command else {
        return Err(CliError::Input(
            "a subcommand is required (or --dump-config); see --help".into(),
        ));
    };

    match command {
        Command::GenPhantom { spec, out_dir } => gen_phantom_cmd(&spec, &out_dir, cli.seed),
        Command::TrainLocalizer { data_dir, out } => {
            train_localizer_cmd(&data_dir, &out, &config, cli.seed)
        }
        Command::TrainSegmenter { data_dir, out } => {
            train_segmenter_cmd(&data_dir, &out, &config, cli.seed)
        }
        Command::Infer {
            volume,
            localizer,
            segmenter,
            out,
        } => infer_cmd(&volume, &localizer, &segmenter, &out, &config, cli.seed),
        Command::Evaluate {
            predicted,
            truth,
            out,
        } => evaluate_cmd(&predicted, &truth, &out),
        Command::Crossval { data_dir, out } => crossval_cmd(&data_dir, &out, &config, cli.seed),
        Command::Selfcheck { corrupt_gradient } => selfcheck_cmd(corrupt_gradient, cli.seed),
    }
}

/// `path` with `suffix` appended to the full file name.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
}

fn ensure_finite(losses: &[f64], what: &str) -> Result<(), CliError> {
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(CliError::Divergence(format!(
            "{what} produced a non-finite loss; try a smaller learning rate"
        )));
    }
    Ok(())
}

struct LoadedCase {
    volume: Volume,
    labels: Option<LabelVolume>,
    bbox: BoundingBox3D,
}

/// Loads every `*.vol.hdr` case in `dir` (sorted by name) together with its
/// box file and, when `with_labels` is set, its label volume.
fn load_cases(dir: &Path, with_labels: bool) -> Result<Vec<LoadedCase>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("reading directory {}: {e}", dir.display())))?;
    let mut bases = Vec::new();
    for entry in entries {
        let entry = entry
            .map_err(|e| CliError::Input(format!("reading directory {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(base) = name.strip_suffix(".vol.hdr") {
            bases.push(base.to_string());
        }
    }
    bases.sort();
    if bases.is_empty() {
        return Err(CliError::Input(format!(
            "no `*.vol.hdr` cases found in {}",
            dir.display()
        )));
    }
    let mut cases = Vec::with_capacity(bases.len());
    for base in bases {
        let volume = load_volume(&dir.join(format!("{base}.vol.hdr")))?;
        let labels = if with_labels {
            Some(load_labels(&dir.join(format!("{base}.lab.hdr")))?)
        } else {
            None
        };
        let bbox = load_box(&dir.join(format!("{base}.box.txt")))?;
        cases.push(LoadedCase {
            volume,
            labels,
            bbox,
        });
    }
    Ok(cases)
}

fn gen_phantom_cmd(spec_path: &Path, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Input(format!("reading {}: {e}", spec_path.display())))?;
    let (base_spec, cases) = parse_phantom_request(&text, true)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(format!("creating {}: {e}", out_dir.display())))?;
    for i in 0..cases {
        let mut spec = base_spec.clone();
        spec.seed = base_spec.seed.wrapping_add(seed).wrapping_add(i as u64);
        let (volume, labels, bbox) = gen_phantom(&spec)?;
        let base = format!("case{i:03}");
        save_volume(&volume, &out_dir.join(format!("{base}.vol.hdr")))?;
        save_labels(&labels, &out_dir.join(format!("{base}.lab.hdr")))?;
        save_box(&bbox, &out_dir.join(format!("{base}.box.txt")))?;
    }
    println!("wrote {cases} case(s) to {}", out_dir.display());
    Ok(())
}

fn train_localizer_cmd(
    data_dir: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> Result<(), CliError> {
    let cases = load_cases(data_dir, false)?;
    let roi_cases: Vec<RoiCase> = cases
        .iter()
        .map(|c| RoiCase {
            volume: &c.volume,
            bbox: &c.bbox,
        })
        .collect();
    let result = train_localizer(&roi_cases, &config.localizer, seed)?;
    ensure_finite(&result.round1_losses, "localizer round 1")?;
    ensure_finite(&result.round2_losses, "localizer round 2")?;
    save_checkpoint(out, &result.checkpoint)?;

    let mut log = String::new();
    for (i, loss) in result.round1_losses.iter().enumerate() {
        let _ = writeln!(log, "round1 epoch={} loss={loss}", i + 1);
    }
    let _ = writeln!(log, "round1 handoff hash={}", result.handoff_hash);
    let _ = writeln!(log, "round2 start hash={}", result.round2_start_hash);
    for (i, loss) in result.round2_losses.iter().enumerate() {
        let _ = writeln!(log, "round2 epoch={} loss={loss}", i + 1);
    }
    let _ = writeln!(log, "round2 disjoint_skipped={}", result.disjoint_skipped);
    write_text(&suffixed(out, ".log"), &log)?;

    println!(
        "trained localizer on {} case(s): round 1 loss {:.6} -> {:.6}, round 2 loss {:.6} -> {:.6}",
        cases.len(),
        result.round1_losses.first().unwrap_or(&f64::NAN),
        result.round1_losses.last().unwrap_or(&f64::NAN),
        result.round2_losses.first().unwrap_or(&f64::NAN),
        result.round2_losses.last().unwrap_or(&f64::NAN),
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn train_segmenter_cmd(
    data_dir: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> Result<(), CliError> {
    let cases = load_cases(data_dir, true)?;
    let seg_cases: Vec<SegCase> = cases
        .iter()
        .map(|c| SegCase {
            volume: &c.volume,
            labels: c.labels.as_ref().expect("loaded with labels"),
            bbox: &c.bbox,
        })
        .collect();

    let binary = train_binary(&seg_cases, &config.binary(), seed)?;
    ensure_finite(&binary.epoch_losses, "binary phase")?;
    let binary_path = suffixed(out, ".binary");
    save_checkpoint(&binary_path, &binary.checkpoint)?;

    let multi = train_multiclass(
        &seg_cases,
        &binary.checkpoint,
        &config.multiclass(),
        seed.wrapping_add(1),
    )?;
    ensure_finite(&multi.epoch_losses, "multi-class phase")?;
    save_checkpoint(out, &multi.checkpoint)?;

    let mut log = String::new();
    let _ = writeln!(log, "binary class_weights={:?}", binary.class_weights);
    for w in &binary.weight_warnings {
        let _ = writeln!(log, "binary warning={w}");
    }
    for (i, loss) in binary.epoch_losses.iter().enumerate() {
        let _ = writeln!(log, "binary epoch={} loss={loss}", i + 1);
    }
    if let Some((from_binary, at_start)) = &multi.init_hashes {
        let _ = writeln!(log, "handoff shared hash binary={from_binary}");
        let _ = writeln!(log, "handoff shared hash multiclass={at_start}");
    }
    let _ = writeln!(log, "multiclass class_weights={:?}", multi.class_weights);
    for w in &multi.weight_warnings {
        let _ = writeln!(log, "multiclass warning={w}");
    }
    for (i, loss) in multi.epoch_losses.iter().enumerate() {
        let _ = writeln!(log, "multiclass epoch={} loss={loss}", i + 1);
    }
    write_text(&suffixed(out, ".log"), &log)?;

    println!(
        "trained segmenter on {} case(s): binary loss {:.6} -> {:.6}, multi-class loss {:.6} -> {:.6}",
        cases.len(),
        binary.epoch_losses.first().unwrap_or(&f64::NAN),
        binary.epoch_losses.last().unwrap_or(&f64::NAN),
        multi.epoch_losses.first().unwrap_or(&f64::NAN),
        multi.epoch_losses.last().unwrap_or(&f64::NAN),
    );
    println!("wrote {} and {}", binary_path.display(), out.display());
    Ok(())
}

fn infer_cmd(
    volume_path: &Path,
    localizer_path: &Path,
    segmenter_path: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> Result<(), CliError> {
    let volume = load_volume(volume_path)?;
    let loc_ckpt = load_checkpoint(localizer_path)?;
    let (loc_params, loc_model) = localizer_from_checkpoint(&loc_ckpt, &config.localizer)?;
    let seg_ckpt = load_checkpoint(segmenter_path)?;
    let seg_config = config.multiclass();
    let (seg_params, seg_model) = segmenter_from_checkpoint(&seg_ckpt, &seg_config)?;

    let outcome = segment_volume(
        &volume,
        &loc_params,
        &loc_model,
        &config.localizer,
        &seg_params,
        &seg_model,
        &seg_config,
        seed,
    )
    .map_err(|e| match &e {
        // A predicted region the volume cannot supply is a localization
        // failure, not an input problem.
        SegError::Data(DataError::Geometry(_)) => {
            CliError::Localization(format!("predicted region unusable: {e}"))
        }
        _ => CliError::from(e),
    })?;
    save_labels(&outcome.labels, out)?;

    let low = outcome.roi.corner_low();
    let high = outcome.roi.corner_high();
    println!(
        "roi corner_low=({:.2}, {:.2}, {:.2}) corner_high=({:.2}, {:.2}, {:.2}) from {} reference voxels",
        low[0], low[1], low[2], high[0], high[1], high[2], outcome.references_used
    );
    let mut counts = [0usize; 6];
    for &l in outcome.labels.data() {
        counts[l as usize] += 1;
    }
    for (label, n) in counts.iter().enumerate().skip(1) {
        println!("label {label}: {n} voxel(s)");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn evaluate_cmd(predicted_path: &Path, truth_path: &Path, out: &Path) -> Result<(), CliError> {
    let predicted = load_labels(predicted_path)?;
    let truth = load_labels(truth_path)?;
    let report = evaluate(&predicted, &truth)?;
    let table = render_report_table(&report);
    print!("{table}");
    write_text(out, &table)?;
    write_text(&suffixed(out, ".kv"), &render_report_machine(&report))?;
    println!("wrote {} and {}.kv", out.display(), out.display());
    Ok(())
}

fn crossval_cmd(
    data_dir: &Path,
    out: &Path,
    config: &RunConfig,
    seed: u64,
) -> Result<(), CliError> {
    let data = load_cases(data_dir, true)?;
    let cv_cases: Vec<CrossValCase> = data
        .iter()
        .map(|c| CrossValCase {
            labels: c.labels.as_ref().expect("loaded with labels"),
            bbox: &c.bbox,
        })
        .collect();

    struct FoldModels {
        loc_params: crate::autodiff::ParamSet,
        loc_model: crate::locnet::LocNetModel,
        seg_params: crate::autodiff::ParamSet,
        seg_model: crate::segnet::SegNetModel,
    }

    fn pipeline_err(e: impl std::fmt::Display) -> MetricsError {
        MetricsError::Pipeline(e.to_string())
    }
    fn check_finite(losses: &[f64], what: &str) -> Result<(), MetricsError> {
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(MetricsError::Pipeline(format!("non-finite loss in {what}")));
        }
        Ok(())
    }

    let binary_config = config.binary();
    let multi_config = config.multiclass();
    let mut fold_no = 0usize;
    let train = |idx: &[usize], sub_seed: u64| -> Result<FoldModels, MetricsError> {
        fold_no += 1;
        eprintln!("fold {fold_no}: training on {} case(s)", idx.len());
        let roi_cases: Vec<RoiCase> = idx
            .iter()
            .map(|&i| RoiCase {
                volume: &data[i].volume,
                bbox: &data[i].bbox,
            })
            .collect();
        let loc = train_localizer(&roi_cases, &config.localizer, sub_seed).map_err(pipeline_err)?;
        check_finite(&loc.round1_losses, "localizer round 1")?;
        check_finite(&loc.round2_losses, "localizer round 2")?;

        let seg_cases: Vec<SegCase> = idx
            .iter()
            .map(|&i| SegCase {
                volume: &data[i].volume,
                labels: data[i].labels.as_ref().expect("loaded with labels"),
                bbox: &data[i].bbox,
            })
            .collect();
        let binary = train_binary(&seg_cases, &binary_config, sub_seed.wrapping_add(1))
            .map_err(pipeline_err)?;
        check_finite(&binary.epoch_losses, "binary phase")?;
        let multi = train_multiclass(
            &seg_cases,
            &binary.checkpoint,
            &multi_config,
            sub_seed.wrapping_add(2),
        )
        .map_err(pipeline_err)?;
        check_finite(&multi.epoch_losses, "multi-class phase")?;

        Ok(FoldModels {
            loc_params: loc.checkpoint.params,
            loc_model: loc.model,
            seg_params: multi.checkpoint.params,
            seg_model: multi.model,
        })
    };
    let predict = |models: &FoldModels, case: usize, sub_seed: u64| {
        segment_volume(
            &data[case].volume,
            &models.loc_params,
            &models.loc_model,
            &config.localizer,
            &models.seg_params,
            &models.seg_model,
            &multi_config,
            sub_seed,
        )
        .map(|o| (o.labels, o.roi))
        .map_err(pipeline_err)
    };

    let started = std::time::Instant::now();
    let report = cross_validate(
        &cv_cases,
        config.fold_count,
        config.held_out_per_fold,
        train,
        predict,
        seed,
    )?;
    let table = render_crossval_table(&report);
    print!("{table}");
    println!(
        "cross-validated {} case(s) in {:.1} s",
        data.len(),
        started.elapsed().as_secs_f64()
    );
    write_text(out, &table)?;
    write_text(&suffixed(out, ".kv"), &render_crossval_machine(&report))?;
    println!("wrote {} and {}.kv", out.display(), out.display());
    Ok(())
}

/// Number of random inputs per gradient family in `selfcheck`.
const SELFCHECK_FD_INPUTS: usize = 20;
/// Random volume pairs compared against the brute-force metric oracle.
const SELFCHECK_METRIC_TRIALS: usize = 20;
/// Vote-recovery trials; at most one may miss.
const SELFCHECK_KDE_TRIALS: usize = 20;

fn selfcheck_cmd(corrupt_gradient: bool, seed: u64) -> Result<(), CliError> {
    let mut failed = 0usize;
    let mut section = |ok: bool, line: String| {
        if ok {
            println!("ok - {line}");
        } else {
            println!("FAIL - {line}");
            failed += 1;
        }
    };

    let reports = standard_suite(SELFCHECK_FD_INPUTS, seed.wrapping_add(1), corrupt_gradient)?;
    for (name, report) in &reports {
        section(
            report.passed(),
            format!(
                "gradients/{name}: {} probes checked, {} kinks skipped, max rel {:.2e}, {} failure(s)",
                report.checked,
                report.kinks_skipped,
                report.max_rel_error,
                report.failures.len()
            ),
        );
    }

    let (trials, worst) = metric_oracle_trials(seed.wrapping_add(2))?;
    section(
        worst <= 1e-9,
        format!("metrics: {trials} random volume pairs vs brute force, worst abs error {worst:.2e}"),
    );

    let recovered = kde_recovery_trials(seed.wrapping_add(3))?;
    section(
        recovered + 1 >= SELFCHECK_KDE_TRIALS,
        format!("voting: {recovered}/{SELFCHECK_KDE_TRIALS} boxes recovered within 1 voxel per axis"),
    );

    if failed > 0 {
        return Err(CliError::Input(format!("{failed} selfcheck line(s) failed")));
    }
    println!("selfcheck passed");
    Ok(())
}

/// Exact nearest-point scan used as the reference for surface distances.
fn brute_directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> (f64, f64) {
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            best = best.min(d2);
        }
        let d = best.sqrt();
        max = max.max(d);
        sum += d;
    }
    (max, sum)
}

/// Compares overlap metrics against direct set arithmetic and surface
/// distances against a brute-force all-pairs scan, on random label volumes.
/// Returns the trial count and the worst absolute disagreement.
fn metric_oracle_trials(seed: u64) -> Result<(usize, f64), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    while compared < SELFCHECK_METRIC_TRIALS {
        let extents = Dims3::new(
            rng.gen_range(3..=7),
            rng.gen_range(3..=7),
            rng.gen_range(3..=7),
        );
        let spacing = [
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
        ];
        let geometry = Geometry::new(extents, spacing, [0.0; 3])?;
        let make = |rng: &mut ChaCha8Rng| -> Result<LabelVolume, CliError> {
            let data: Vec<u8> = (0..geometry.voxel_count())
                .map(|_| if rng.gen_bool(0.35) { 1 } else { 0 })
                .collect();
            Ok(LabelVolume::new(geometry, data)?)
        };
        let a = make(&mut rng)?;
        let b = make(&mut rng)?;

        let inter = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(&x, &y)| x == 1 && y == 1)
            .count();
        let na = a.data().iter().filter(|&&x| x == 1).count();
        let nb = b.data().iter().filter(|&&x| x == 1).count();
        if na == 0 || nb == 0 {
            continue;
        }
        compared += 1;

        let dc = crate::metrics::dice(&a, &b, 1)?.expect("both present");
        let jc = crate::metrics::jaccard(&a, &b, 1)?.expect("both present");
        let dc_ref = 2.0 * inter as f64 / (na + nb) as f64;
        let jc_ref = inter as f64 / (na + nb - inter) as f64;
        worst = worst.max((dc - dc_ref).abs()).max((jc - jc_ref).abs());

        let sa = extract_surface(&a, 1);
        let sb = extract_surface(&b, 1);
        let dist = crate::metrics::surface_distances(&sa, &sb).expect("both non-empty");
        let (max_ab, sum_ab) = brute_directed(&sa.points, &sb.points);
        let (max_ba, sum_ba) = brute_directed(&sb.points, &sa.points);
        let hd_ref = max_ab.max(max_ba);
        let assd_ref = (sum_ab + sum_ba) / (sa.points.len() + sb.points.len()) as f64;
        worst = worst
            .max((dist.hausdorff_mm - hd_ref).abs())
            .max((dist.assd_mm - assd_ref).abs());
    }
    Ok((compared, worst))
}

/// Scatters noisy corner votes around known boxes and counts how many are
/// recovered within one voxel per axis.
fn kde_recovery_trials(seed: u64) -> Result<usize, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 2.0).expect("valid normal");
    let mut recovered = 0usize;
    for _ in 0..SELFCHECK_KDE_TRIALS {
        let mut low = [0.0; 3];
        let mut high = [0.0; 3];
        for a in 0..3 {
            low[a] = rng.gen_range(5.0..15.0);
            high[a] = low[a] + rng.gen_range(8.0..20.0);
        }
        let mut votes = CornerVotes {
            low: Vec::with_capacity(500),
            high: Vec::with_capacity(500),
        };
        for _ in 0..500 {
            let mut l = [0.0; 3];
            let mut h = [0.0; 3];
            for a in 0..3 {
                l[a] = low[a] + noise.sample(&mut rng);
                h[a] = high[a] + noise.sample(&mut rng);
            }
            votes.low.push(l);
            votes.high.push(h);
        }
        let bbox = kde_aggregate(&votes, None)?;
        let ok_low = bbox
            .corner_low()
            .iter()
            .zip(&low)
            .all(|(p, t)| (p - t).abs() <= 1.0);
        let ok_high = bbox
            .corner_high()
            .iter()
            .zip(&high)
            .all(|(p, t)| (p - t).abs() <= 1.0);
        if ok_low && ok_high {
            recovered += 1;
        }
    }
    Ok(recovered)
}
