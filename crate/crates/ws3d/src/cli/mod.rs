//! The `ws3d` binary: dataset generation, view rendering, training,
//! evaluation, ablations, prompt inspection, report plots, and a
//! protocol-reference mask oracle for exercising the subprocess adapter.
//!
//! Every run that produces artifacts first writes a `manifest.json`
//! capturing the invocation, resolved config, and content hashes of its
//! inputs, so a run directory can be audited and reproduced. Exit codes:
//! 0 success, 1 runtime failure, 2 command-line misuse.

pub mod manifest;
pub mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::camera::{
    default_cameras, render, write_depth_pgm, write_label_ppm, write_pixel_map, write_view_ppm,
};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::mask_oracle::{GtOracle, MaskOracle, OracleNoiseConfig, PromptRecord};
use crate::mrl::{group_purity, reproject_background, reproject_mask_groups};
use crate::pnm::{read_ppm, write_pgm8};
use crate::prompter::{filter_confident, generate_prompts, partition_subgroups, DropReason};
use crate::segnet::{build_neighbor_graph, forward, load_params, save_params};
use crate::synthgen::{generate_jaw, load_scan, JawConfig, LabeledScan};
use crate::trainer::{
    attach_sparse_labels, evaluate_scans, train, EvalConfig, EvalOutcome, PromptMode, TrainConfig,
};
use manifest::RunManifest;

/// Entry point behind `main`: parses `argv`, runs the command, and maps the
/// outcome to an exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logger();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(argv.iter().cloned()) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match run(cli.command, &argv) {
        Ok(()) => 0,
        Err(Error::Usage(message)) => {
            eprintln!("usage error: {message}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ws3d",
    version,
    about = "Weakly supervised tooth point-cloud segmentation, desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled jaw scans.
    Gen(GenArgs),
    /// Render a scan into label, depth, and scene images plus a pixel map.
    Render(RenderArgs),
    /// Train the segmentation network on a directory of scans.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a directory of scans.
    Eval(EvalArgs),
    /// Train one arm of an ablation and evaluate it.
    Ablate(AblateArgs),
    /// Dump prompt placement and re-projected group purity for a checkpoint.
    InspectPrompts(InspectPromptsArgs),
    /// Summarize a training log into per-epoch CSV and loss-curve plots.
    Report(ReportArgs),
    /// Answer mask prompts per the external-oracle file protocol
    /// (reference counterparty for integration tests).
    OracleEcho(OracleEchoArgs),
}

fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Gen(args) => cmd_gen(args, argv),
        Command::Render(args) => cmd_render(args, argv),
        Command::Train(args) => cmd_train(args, argv),
        Command::Eval(args) => cmd_eval(args, argv),
        Command::Ablate(args) => cmd_ablate(args, argv),
        Command::InspectPrompts(args) => cmd_inspect_prompts(args, argv),
        Command::Report(args) => cmd_report(args, argv),
        Command::OracleEcho(args) => cmd_oracle_echo(args),
    }
}

#[derive(Args)]
struct GenArgs {
    /// Jaw geometry TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of scans; scan i uses seed + i.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_gen(args: GenArgs, argv: &[String]) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let mut jaw: JawConfig = match &args.config {
        Some(path) => parse_toml(path)?,
        None => JawConfig::default(),
    };
    jaw.seed = args.seed;
    jaw.validate()?;

    let mut manifest = RunManifest::new(
        "gen",
        argv,
        serde_json::json!({ "jaw": jaw, "count": args.count }),
    );
    if let Some(path) = &args.config {
        manifest.add_input(path)?;
    }
    let scan_paths: Vec<PathBuf> = (0..args.count)
        .map(|i| args.out.join(format!("scan_{i:04}.ws3d")))
        .collect();
    for path in &scan_paths {
        manifest.add_output(path);
    }
    manifest.write(&args.out.join("manifest.json"))?;

    for (i, path) in scan_paths.iter().enumerate() {
        let config = JawConfig {
            seed: args.seed.wrapping_add(i as u64),
            ..jaw.clone()
        };
        let scan = generate_jaw(&config)?;
        crate::synthgen::save_scan(&scan, path)?;
        let teeth = scan.num_tooth_classes();
        println!(
            "{}: {} points, {} tooth classes, sparse labels {}/{} ({:.2}%)",
            path.display(),
            scan.len(),
            teeth,
            teeth,
            scan.len(),
            100.0 * teeth as f64 / scan.len() as f64
        );
    }
    Ok(())
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    views: usize,
    /// View size as HxW.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 1)]
    splat_radius: usize,
}

fn cmd_render(args: RenderArgs, argv: &[String]) -> Result<()> {
    let (height, width) = args.size;
    let mut manifest = RunManifest::new(
        "render",
        argv,
        serde_json::json!({
            "views": args.views,
            "height": height,
            "width": width,
            "splat_radius": args.splat_radius,
        }),
    );
    manifest.add_input(&args.scan)?;
    let view_files = |v: usize| {
        [
            args.out.join(format!("view_{v}_label.ppm")),
            args.out.join(format!("view_{v}_depth.pgm")),
            args.out.join(format!("view_{v}_scene.ppm")),
            args.out.join(format!("view_{v}_pixmap.txt")),
        ]
    };
    for v in 0..args.views {
        for path in view_files(v) {
            manifest.add_output(&path);
        }
    }
    manifest.write(&args.out.join("manifest.json"))?;

    let scan = load_scan(&args.scan)?;
    let cameras = default_cameras(&scan, args.views, height, width)?;
    for (v, camera) in cameras.iter().enumerate() {
        let view = render(&scan, camera, args.splat_radius);
        let [label, depth, scene, pixmap] = view_files(v);
        write_label_ppm(&view, &label)?;
        write_depth_pgm(&view, &depth)?;
        write_view_ppm(&view, &scene)?;
        write_pixel_map(&view, &pixmap)?;
        let covered = view.point_index.iter().filter(|p| p.is_some()).count();
        println!(
            "view {v}: {covered}/{} pixels covered, wrote {}",
            height * width,
            label.parent().unwrap_or(Path::new(".")).display()
        );
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of .ws3d training scans.
    #[arg(long)]
    data: PathBuf,
    /// Training TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config mask-refresh cadence.
    #[arg(long)]
    mask_refresh: Option<usize>,
}

fn cmd_train(args: TrainArgs, argv: &[String]) -> Result<()> {
    let config = resolve_train_config(
        args.config.as_deref(),
        args.seed,
        args.epochs,
        args.mask_refresh,
        &args.out,
    )?;
    run_training(
        "train",
        argv,
        &args.data,
        args.config.as_deref(),
        &config,
        &args.out,
        serde_json::to_value(&config).expect("config serializes"),
    )?;
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of .ws3d scans to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Per-scan metrics CSV to write.
    #[arg(long)]
    csv: PathBuf,
    /// Run the network on this many points per scan and upsample.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 3)]
    interp_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_eval(args: EvalArgs, argv: &[String]) -> Result<()> {
    let eval_config = EvalConfig {
        subsample: args.subsample,
        interpolate_k: args.interp_k,
        seed: args.seed,
    };
    let mut manifest = RunManifest::new(
        "eval",
        argv,
        serde_json::to_value(&eval_config).expect("config serializes"),
    );
    manifest.add_input(&args.ckpt)?;
    manifest.add_input_dir(&args.data, "ws3d")?;
    manifest.add_output(&args.csv);
    manifest.write(&args.csv.with_extension("manifest.json"))?;

    let params = load_params(&args.ckpt)?;
    let scans = load_scan_dir(&args.data)?;
    let refs: Vec<(&str, &LabeledScan)> =
        scans.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let outcome = evaluate_scans(&params, &refs, &eval_config)?;
    write_metrics_csv(&args.csv, &outcome)?;
    print_metrics(&outcome);
    Ok(())
}

/// Which axis of the pipeline an ablation arm disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateMode {
    /// Sparse labels only: both mask-guided weights zeroed.
    Baseline,
    /// Unfiltered prompt averaging.
    Agg,
    /// Confidence-filtered prompts (the full prompt path).
    Cpg,
    /// Foreground contrastive loss only (background weight zeroed).
    Fl,
    /// Background loss only (foreground weight zeroed).
    Bl,
    /// Both mask-guided losses, as configured.
    Mrl,
}

fn apply_mode(config: &mut TrainConfig, mode: AblateMode) {
    match mode {
        AblateMode::Baseline => {
            config.loss.lambda2 = 0.0;
            config.loss.lambda3 = 0.0;
        }
        AblateMode::Agg => config.prompt_mode = PromptMode::Agg,
        AblateMode::Cpg => config.prompt_mode = PromptMode::Cpg,
        AblateMode::Fl => config.loss.lambda3 = 0.0,
        AblateMode::Bl => config.loss.lambda2 = 0.0,
        AblateMode::Mrl => {}
    }
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    mode: AblateMode,
    /// Directory of .ws3d training scans.
    #[arg(long)]
    data: PathBuf,
    /// Held-out scans; metrics.csv is written when given.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    mask_refresh: Option<usize>,
}

fn cmd_ablate(args: AblateArgs, argv: &[String]) -> Result<()> {
    let mut config = resolve_train_config(
        args.config.as_deref(),
        args.seed,
        args.epochs,
        args.mask_refresh,
        &args.out,
    )?;
    apply_mode(&mut config, args.mode);
    let snapshot = serde_json::json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "train": config,
    });
    let outcome = run_training(
        "ablate",
        argv,
        &args.data,
        args.config.as_deref(),
        &config,
        &args.out,
        snapshot,
    )?;
    if let Some(test_dir) = &args.test {
        let scans = load_scan_dir(test_dir)?;
        let refs: Vec<(&str, &LabeledScan)> =
            scans.iter().map(|(id, s)| (id.as_str(), s)).collect();
        let eval = evaluate_scans(&outcome.params, &refs, &EvalConfig::default())?;
        write_metrics_csv(&args.out.join("metrics.csv"), &eval)?;
        println!(
            "mode {}: test mIoU {:.4}, DSC {:.4}, acc {:.4}",
            format!("{:?}", args.mode).to_lowercase(),
            eval.metrics.miou,
            eval.metrics.mean_dsc,
            eval.metrics.accuracy
        );
    }
    Ok(())
}

#[derive(Args)]
struct InspectPromptsArgs {
    #[arg(long)]
    scan: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Diagnostics CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    views: usize,
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    /// Confidence threshold for the filtered mode.
    #[arg(long, default_value_t = 0.6)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = PromptModeArg::Cpg)]
    mode: PromptModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PromptModeArg {
    Cpg,
    Agg,
}

fn cmd_inspect_prompts(args: InspectPromptsArgs, argv: &[String]) -> Result<()> {
    let (height, width) = args.size;
    let mut manifest = RunManifest::new(
        "inspect-prompts",
        argv,
        serde_json::json!({
            "views": args.views,
            "height": height,
            "width": width,
            "tau": args.tau,
            "mode": format!("{:?}", args.mode).to_lowercase(),
        }),
    );
    manifest.add_input(&args.scan)?;
    manifest.add_input(&args.ckpt)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out.with_extension("manifest.json"))?;

    let scan = load_scan(&args.scan)?;
    let params = load_params(&args.ckpt)?;
    if params.dims.num_classes != scan.num_classes {
        return Err(Error::Config(format!(
            "checkpoint expects {} classes but the scan has {}",
            params.dims.num_classes, scan.num_classes
        )));
    }
    let graph = build_neighbor_graph(&scan, params.dims.k_neighbors);
    let pred = forward(&scan, &graph, &params)?;
    let mut subgroups = partition_subgroups(&pred);
    if args.mode == PromptModeArg::Cpg {
        subgroups = subgroups
            .iter()
            .map(|s| filter_confident(s, &pred.confidence, args.tau))
            .collect();
    }
    let cameras = default_cameras(&scan, args.views, height, width)?;
    let prompt_set = generate_prompts(&subgroups, &scan, &cameras)?;
    let oracle = GtOracle {
        noise: OracleNoiseConfig::default(),
    };

    let mut csv = String::from("view,class,kind,u,v,points,purity\n");
    for (v, camera) in cameras.iter().enumerate() {
        let view = render(&scan, camera, 1);
        let prompts = prompt_set.for_view(v);
        let masks = oracle.segment_all(&view, &prompts)?;
        let groups = reproject_mask_groups(&masks, &view)?;
        for (prompt, (class, indices)) in prompts.iter().zip(&groups) {
            let purity = group_purity(&scan, *class, indices)
                .map(|p| format!("{p:.4}"))
                .unwrap_or_default();
            csv.push_str(&format!(
                "{v},{class},prompt,{},{},{},{purity}\n",
                prompt.u,
                prompt.v,
                indices.len()
            ));
        }
        for dropped in prompt_set.dropped.iter().filter(|d| d.view_id == v) {
            let kind = match dropped.reason {
                DropReason::EmptyAfterFilter => "dropped_empty_after_filter",
                DropReason::BehindCamera => "dropped_behind_camera",
                DropReason::ProjectedOutOfBounds => "dropped_out_of_bounds",
            };
            csv.push_str(&format!("{v},{},{kind},,,0,\n", dropped.class_id));
        }
        let bg = reproject_background(
            &crate::mask_oracle::background_mask(&masks),
            &view,
            &groups,
        );
        let purity = group_purity(&scan, 0, &bg)
            .map(|p| format!("{p:.4}"))
            .unwrap_or_default();
        csv.push_str(&format!("{v},0,background,,,{},{purity}\n", bg.len()));
    }
    fs::write(&args.out, &csv)
        .map_err(|e| Error::io(format!("writing {}", args.out.display()), e))?;
    println!(
        "{} prompts, {} dropped across {} views; wrote {}",
        prompt_set.prompts.len(),
        prompt_set.dropped.len(),
        args.views,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// Training log CSV produced by train or ablate.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_report(args: ReportArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("report", argv, serde_json::Value::Null);
    manifest.add_input(&args.log)?;
    let report_csv = args.out.join("report.csv");
    let plot_path = args.out.join("losses.ppm");
    manifest.add_output(&report_csv);
    manifest.add_output(&plot_path);
    manifest.write(&args.out.join("manifest.json"))?;

    let text = fs::read_to_string(&args.log)
        .map_err(|e| Error::io(format!("reading {}", args.log.display()), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != LossReport::CSV_HEADER {
                return Err(Error::Data(format!(
                    "unexpected training-log header: {line:?}"
                )));
            }
            continue;
        }
        rows.push(LossReport::parse_csv_row(line)?);
    }
    if rows.is_empty() {
        return Err(Error::Data("training log has no rows".into()));
    }

    let mut by_epoch: BTreeMap<usize, Vec<&LossReport>> = BTreeMap::new();
    for row in &rows {
        by_epoch.entry(row.epoch).or_default().push(row);
    }
    let mut csv = String::from("epoch,scans,coseg,fg,bg,total,mrl_active\n");
    let mut coseg = Vec::new();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut total = Vec::new();
    for (epoch, rows) in &by_epoch {
        let n = rows.len() as f64;
        let mean = |f: fn(&LossReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let (c, f, b, t) = (
            mean(|r| r.coseg),
            mean(|r| r.fg),
            mean(|r| r.bg),
            mean(|r| r.total),
        );
        let active = rows.iter().all(|r| r.mrl_active);
        csv.push_str(&format!(
            "{epoch},{},{c},{f},{b},{t},{}\n",
            rows.len(),
            active as u8
        ));
        coseg.push(c);
        fg.push(f);
        bg.push(b);
        total.push(t);
    }
    fs::write(&report_csv, &csv)
        .map_err(|e| Error::io(format!("writing {}", report_csv.display()), e))?;
    plot::render_series(
        640,
        320,
        &[
            plot::Series {
                color: [240, 240, 240],
                values: &total,
            },
            plot::Series {
                color: [230, 90, 90],
                values: &coseg,
            },
            plot::Series {
                color: [90, 200, 90],
                values: &fg,
            },
            plot::Series {
                color: [110, 140, 255],
                values: &bg,
            },
        ],
        &plot_path,
    )?;
    println!(
        "{} epochs, {} rows; wrote {} and {}",
        by_epoch.len(),
        rows.len(),
        report_csv.display(),
        plot_path.display()
    );
    Ok(())
}

#[derive(Args)]
struct OracleEchoArgs {
    /// Work directory prepared per the oracle file protocol.
    workdir: PathBuf,
    /// Disc radius in pixels around each prompt.
    #[arg(long, default_value_t = 6)]
    radius: i64,
    /// Omit the mask for these prompt ids (failure-mode testing).
    #[arg(long)]
    skip: Vec<u16>,
    /// Emit masks at half size (failure-mode testing).
    #[arg(long, default_value_t = false)]
    bad_dims: bool,
    /// Sleep before answering (timeout testing).
    #[arg(long, default_value_t = 0)]
    sleep_secs: u64,
    /// Exit nonzero after reading the inputs (failure-mode testing).
    #[arg(long, default_value_t = false)]
    fail: bool,
}

/// The reference counterparty of the external-oracle protocol: reads
/// `view.ppm` and `prompts.json` from the work directory and writes one
/// `mask_<id>.pgm` disc per prompt. The failure knobs exist so the adapter's
/// error paths can be integration-tested against a real subprocess.
fn cmd_oracle_echo(args: OracleEchoArgs) -> Result<()> {
    let view = read_ppm(&args.workdir.join("view.ppm"))?;
    let prompts_path = args.workdir.join("prompts.json");
    let text = fs::read_to_string(&prompts_path)
        .map_err(|e| Error::io(format!("reading {}", prompts_path.display()), e))?;
    let prompts: Vec<PromptRecord> = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", prompts_path.display())))?;
    if args.sleep_secs > 0 {
        std::thread::sleep(std::time::Duration::from_secs(args.sleep_secs));
    }
    if args.fail {
        return Err(Error::Data("oracle-echo was asked to fail".into()));
    }
    let (height, width) = if args.bad_dims {
        (view.height / 2, view.width / 2)
    } else {
        (view.height, view.width)
    };
    for prompt in &prompts {
        if args.skip.contains(&prompt.id) {
            continue;
        }
        let mut mask = vec![0u8; height * width];
        for row in 0..height as i64 {
            for col in 0..width as i64 {
                let dv = row - prompt.v as i64;
                let du = col - prompt.u as i64;
                if dv * dv + du * du <= args.radius * args.radius {
                    mask[row as usize * width + col as usize] = 255;
                }
            }
        }
        write_pgm8(
            &args.workdir.join(format!("mask_{}.pgm", prompt.id)),
            width,
            height,
            &mask,
        )?;
    }
    Ok(())
}

/// Shared train/ablate body: manifest, config snapshot, dataset load,
/// training, and artifact writes.
fn run_training(
    command: &str,
    argv: &[String],
    data: &Path,
    config_path: Option<&Path>,
    config: &TrainConfig,
    out: &Path,
    snapshot: serde_json::Value,
) -> Result<crate::trainer::TrainOutcome> {
    let mut manifest = RunManifest::new(command, argv, snapshot);
    if let Some(path) = config_path {
        manifest.add_input(path)?;
    }
    manifest.add_input_dir(data, "ws3d")?;
    let ckpt_path = out.join("checkpoint.bin");
    let log_path = out.join("train_log.csv");
    let config_snapshot = out.join("config.toml");
    for path in [&ckpt_path, &log_path, &config_snapshot] {
        manifest.add_output(path);
    }
    manifest.write(&out.join("manifest.json"))?;
    fs::write(
        &config_snapshot,
        toml::to_string_pretty(config).expect("config serializes"),
    )
    .map_err(|e| Error::io(format!("writing {}", config_snapshot.display()), e))?;

    let scans = load_scan_dir(data)?;
    let dataset = attach_sparse_labels(scans, config.labels_per_tooth, config.seed)?;
    let first = &dataset[0];
    println!(
        "training on {} scans; sparse labels {}/{} points per scan ({:.2}%)",
        dataset.len(),
        first.sparse.indices.len(),
        first.scan.len(),
        100.0 * first.sparse.labeled_fraction(&first.scan)
    );

    let outcome = train(&dataset, config)?;
    save_params(&outcome.params, &ckpt_path)?;
    let mut log_text = String::from(LossReport::CSV_HEADER);
    log_text.push('\n');
    for row in &outcome.log {
        log_text.push_str(&row.to_csv_row());
        log_text.push('\n');
    }
    fs::write(&log_path, log_text)
        .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
    if !outcome.incidents.is_empty() {
        let path = out.join("incidents.log");
        fs::write(&path, outcome.incidents.join("\n") + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        println!("{} oracle incidents; see incidents.log", outcome.incidents.len());
    }

    let last_epoch = outcome.log.last().map(|r| r.epoch).unwrap_or(0);
    let finals: Vec<&LossReport> = outcome
        .log
        .iter()
        .filter(|r| r.epoch == last_epoch)
        .collect();
    let mean_total = finals.iter().map(|r| r.total).sum::<f64>() / finals.len().max(1) as f64;
    println!(
        "epoch {last_epoch} mean total loss {mean_total:.6}; wrote {}",
        ckpt_path.display()
    );
    Ok(outcome)
}

fn resolve_train_config(
    config_path: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    mask_refresh: Option<usize>,
    out: &Path,
) -> Result<TrainConfig> {
    let mut config: TrainConfig = match config_path {
        Some(path) => parse_toml(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(epochs) = epochs {
        config.epochs = epochs;
    }
    if let Some(refresh) = mask_refresh {
        config.mask_refresh = refresh;
    }
    if config.dump_dir.is_none() {
        config.dump_dir = Some(out.to_path_buf());
    }
    config.validate()?;
    Ok(config)
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads every `.ws3d` scan under `dir`, sorted by file name; the id is the
/// file stem.
fn load_scan_dir(dir: &Path) -> Result<Vec<(String, LabeledScan)>> {
    let paths = manifest::files_with_extension(dir, "ws3d")?;
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no .ws3d scans under {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("scan")
                .to_string();
            Ok((id, load_scan(&path)?))
        })
        .collect()
}

fn write_metrics_csv(path: &Path, outcome: &EvalOutcome) -> Result<()> {
    let mut csv = String::from("scan,miou,mean_dsc,accuracy\n");
    for row in &outcome.per_scan {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.id, row.miou, row.mean_dsc, row.accuracy
        ));
    }
    csv.push_str(&format!(
        "ALL,{},{},{}\n",
        outcome.metrics.miou, outcome.metrics.mean_dsc, outcome.metrics.accuracy
    ));
    fs::write(path, csv).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn print_metrics(outcome: &EvalOutcome) {
    println!(
        "mIoU {:.4}, DSC {:.4}, acc {:.4} over {} scans ({} points)",
        outcome.metrics.miou,
        outcome.metrics.mean_dsc,
        outcome.metrics.accuracy,
        outcome.per_scan.len(),
        outcome.confusion.total()
    );
    for (name, iou) in &outcome.metrics.bucket_iou {
        match iou {
            Some(v) => println!("  {name}: IoU {v:.4}"),
            None => println!("  {name}: absent"),
        }
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h < 8 || w < 8 {
        return Err("view size must be at least 8x8".into());
    }
    Ok((h, w))
}

struct StderrLogger;

static LOGGER: StderrLogger = StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Warn
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().as_str().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

fn init_logger() {
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Warn));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parser_accepts_hxw_and_rejects_garbage() {
        assert_eq!(parse_size("128x96").unwrap(), (128, 96));
        assert_eq!(parse_size("64 x 64").unwrap(), (64, 64));
        assert!(parse_size("128").is_err());
        assert!(parse_size("4x4").is_err());
        assert!(parse_size("axb").is_err());
    }

    #[test]
    fn ablation_modes_toggle_the_right_knobs() {
        let base = TrainConfig::default();
        let mut c = base.clone();
        apply_mode(&mut c, AblateMode::Baseline);
        assert_eq!((c.loss.lambda2, c.loss.lambda3), (0.0, 0.0));
        let mut c = base.clone();
        apply_mode(&mut c, AblateMode::Fl);
        assert_eq!(c.loss.lambda3, 0.0);
        assert!(c.loss.lambda2 > 0.0);
        let mut c = base.clone();
        apply_mode(&mut c, AblateMode::Bl);
        assert_eq!(c.loss.lambda2, 0.0);
        assert!(c.loss.lambda3 > 0.0);
        let mut c = base.clone();
        apply_mode(&mut c, AblateMode::Agg);
        assert_eq!(c.prompt_mode, PromptMode::Agg);
        let mut c = base.clone();
        apply_mode(&mut c, AblateMode::Mrl);
        assert_eq!(c.prompt_mode, base.prompt_mode);
        assert_eq!(c.loss.lambda2, base.loss.lambda2);
    }

    #[test]
    fn help_and_bad_flags_map_to_documented_exit_codes() {
        assert_eq!(dispatch(["ws3d", "--help"]), 0);
        assert_eq!(dispatch(["ws3d", "--version"]), 0);
        assert_eq!(dispatch(["ws3d", "no-such-command"]), 2);
        assert_eq!(dispatch(["ws3d", "gen", "--no-such-flag"]), 2);
    }
}
