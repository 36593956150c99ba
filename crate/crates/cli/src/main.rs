use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affectivenet::affnet::{closed_form_ledger, count_params, export_activations, load_checkpoint, save_checkpoint};
use affectivenet::affnet::{build, NetworkSpec, Variant};
use affectivenet::ami::{compose_ami_with, load_ami1, load_frame_sequence, load_frames, save_ami1, save_ami_png, WeightRule};
use affectivenet::evalharness::{
    cross_dataset_eval, default_threads, evaluate_loso, generate_synthetic, loss_csv, prepare_input, train_on_manifest,
    AugmentConfig, DatasetManifest, Evaluation, SynthConfig, TrainConfig,
};
use affectivenet::io::atomic_write;
use affectivenet::Network32;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "affnet", version, about = "Affective-motion images and AffectiveNet training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compose the affective-motion image of a clip directory.
    Ami(AmiArgs),
    /// Generate a synthetic micro-expression dataset.
    Synth(SynthArgs),
    /// Train on a whole manifest and save the model.
    Train(RunArgs),
    /// Leave-one-subject-out evaluation.
    EvalLoso(RunArgs),
    /// Train on one manifest and test on another.
    EvalCde(CdeArgs),
    /// Print the per-layer parameter ledger of one or all variants.
    Params(ParamsArgs),
    /// Export per-channel activation maps of a trained model.
    Activations(ActivationArgs),
}

#[derive(Args, Debug)]
struct AmiArgs {
    /// Directory of frame images, read in lexicographic order.
    #[arg(long)]
    clip: PathBuf,
    /// Output AMI1 file; a normalized PNG preview is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "suffix_sum")]
    weight_rule: WeightRule,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    #[arg(long, default_value_t = 8)]
    clips: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 112)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// JSON network spec used as the base; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// `N` or `HxW`.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(usize, usize)>,
    /// Divide every channel depth and FC width by this.
    #[arg(long)]
    depth_divisor: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "suffix_sum")]
    weight_rule: WeightRule,
    /// Add flipped, rotated and zoomed copies of every training image.
    #[arg(long)]
    augment: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct CdeArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    test_manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// A variant name, or `all`.
    #[arg(long, default_value = "affectivenet")]
    variant: String,
    #[arg(long, value_parser = parse_size, default_value = "112")]
    input_size: (usize, usize),
    #[arg(long, default_value_t = 1)]
    depth_divisor: usize,
    /// Also list every layer.
    #[arg(long)]
    layers: bool,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ActivationArgs {
    #[arg(long)]
    model: PathBuf,
    /// An AMI1 file or an image.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Ami(a) => cmd_ami(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::EvalLoso(a) => cmd_loso(a),
        Command::EvalCde(a) => cmd_cde(a),
        Command::Params(a) => cmd_params(a),
        Command::Activations(a) => cmd_activations(a),
    }
}

fn cmd_ami(a: AmiArgs) -> CliResult {
    let id = a
        .clip
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let seq = load_frame_sequence::<f32>(&a.clip, &id, "unknown", "unknown")?;
    let ami = compose_ami_with(&seq, a.weight_rule)?;
    save_ami1(&a.out, &ami.pixels)?;
    let png = a.out.with_extension("png");
    save_ami_png(&png, &ami)?;
    println!("{} frames -> {} ({})", ami.k_used, a.out.display(), png.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        subjects: a.subjects,
        clips_per_subject: a.clips,
        k: a.k,
        size: a.size,
        seed: a.seed,
    };
    let manifest = generate_synthetic(&cfg, &a.out)?;
    println!(
        "{} clips from {} subjects -> {}",
        manifest.entries().len(),
        manifest.subjects().len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

fn resolve_spec(net: &NetArgs, seed: u64, classes: usize) -> CliResult<NetworkSpec> {
    let mut spec = match &net.spec {
        Some(path) => NetworkSpec::from_json(&std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?)?,
        None => NetworkSpec::default(),
    };
    if let Some(v) = net.variant {
        // switching variant resets the variant-specific kernels
        let base = NetworkSpec::variant(v);
        spec.variant = v;
        spec.kernels = base.kernels;
        spec.encapfeat_kernels = base.encapfeat_kernels;
    }
    if let Some((h, w)) = net.input_size {
        spec = spec.with_input_size(h, w);
    }
    if let Some(d) = net.depth_divisor {
        spec = spec.with_depth_divisor(d);
    }
    let spec = spec.with_seed(seed).with_class_count(classes);
    spec.validate()?;
    Ok(spec)
}

fn train_config(t: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch,
        learning_rate: t.lr,
        seed: t.seed,
        augment: t.augment.then(AugmentConfig::default),
        weight_rule: t.weight_rule,
    }
}

/// Writes the run directory. The report's config snapshot excludes the
/// output path so identical runs into different directories match.
fn write_run(
    out: &Path,
    mut config: serde_json::Value,
    mut eval: Evaluation,
    model: Option<&Network32>,
) -> CliResult {
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    eval.report.config_snapshot = config.clone();
    config["out"] = json!(out);
    config["threads"] = json!(default_threads());
    atomic_write(&out.join("config.json"), serde_json::to_string_pretty(&config)?.as_bytes())?;
    atomic_write(&out.join("report.json"), eval.report.to_json()?.as_bytes())?;
    atomic_write(&out.join("confusion.csv"), eval.report.confusion_csv().as_bytes())?;
    atomic_write(&out.join("loss.csv"), loss_csv(&eval.curves).as_bytes())?;
    if let Some(net) = model {
        save_checkpoint(net, &out.join("model.afnw"))?;
    }
    let r = &eval.report;
    println!("{}: aggregate accuracy {:.2}% over {} fold(s)", r.name, r.aggregate_accuracy, r.folds.len());
    for f in &r.folds {
        println!("  {:<16} test {:>4}  acc {:>6.2}  train acc {:>6.2}", f.name, f.test_count, f.accuracy, f.train_accuracy);
    }
    Ok(())
}

fn run_config(command: &str, manifests: &[&Path], spec: &NetworkSpec, train: &TrainConfig) -> serde_json::Value {
    json!({
        "command": command,
        "manifests": manifests,
        "network": spec,
        "train": train,
    })
}

fn cmd_train(a: RunArgs) -> CliResult {
    let manifest = DatasetManifest::load_csv(&a.manifest)?;
    let spec = resolve_spec(&a.net, a.train.seed, manifest.label_set().len())?;
    let cfg = train_config(&a.train);
    let (eval, net) = train_on_manifest(&manifest, &spec, &cfg)?;
    let config = run_config("train", &[&a.manifest], &spec, &cfg);
    write_run(&a.out, config, eval, Some(&net))
}

fn cmd_loso(a: RunArgs) -> CliResult {
    let manifest = DatasetManifest::load_csv(&a.manifest)?;
    let spec = resolve_spec(&a.net, a.train.seed, manifest.label_set().len())?;
    let cfg = train_config(&a.train);
    let eval = evaluate_loso(&manifest, &spec, &cfg, default_threads())?;
    let config = run_config("eval-loso", &[&a.manifest], &spec, &cfg);
    write_run(&a.out, config, eval, None)
}

fn cmd_cde(a: CdeArgs) -> CliResult {
    let train = DatasetManifest::load_csv(&a.manifest)?;
    let test = DatasetManifest::load_csv(&a.test_manifest)?;
    let spec = resolve_spec(&a.net, a.train.seed, train.label_set().len())?;
    let cfg = train_config(&a.train);
    let (eval, net) = cross_dataset_eval(&train, &test, &spec, &cfg)?;
    let config = run_config("eval-cde", &[&a.manifest, &a.test_manifest], &spec, &cfg);
    write_run(&a.out, config, eval, Some(&net))
}

fn cmd_params(a: ParamsArgs) -> CliResult {
    let variants: Vec<Variant> = if a.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![a.variant.parse()?]
    };
    let mut rows = Vec::new();
    for v in variants {
        let spec = NetworkSpec::variant(v)
            .with_input_size(a.input_size.0, a.input_size.1)
            .with_depth_divisor(a.depth_divisor);
        let ledger = closed_form_ledger(&spec);
        let (built, _) = count_params(&build::<f32>(&spec)?);
        if built != ledger.total {
            return Err(format!("{v}: built network has {built} parameters, ledger says {}", ledger.total).into());
        }
        rows.push(ledger);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("{:<14} {:>12} {:>14} {:>10}", "variant", "params", "bytes", "millions");
    for l in &rows {
        println!(
            "{:<14} {:>12} {:>14} {:>10.2}",
            l.variant.as_str(),
            l.total,
            l.bytes,
            l.total as f64 / 1e6
        );
        if a.layers {
            for r in &l.rows {
                println!("    {:<28} {:<6} {:<16} {:>10}", r.layer, r.kind, format!("{:?}", r.output), r.params);
            }
        }
    }
    Ok(())
}

fn cmd_activations(a: ActivationArgs) -> CliResult {
    let net = load_checkpoint::<f32>(&a.model)?;
    let pixels = if a.input.extension().is_some_and(|e| e == "ami1") {
        load_ami1::<f32>(&a.input)?
    } else {
        load_frames::<f32>(std::slice::from_ref(&a.input))?.remove(0)
    };
    let x = prepare_input(&pixels, net.spec().input_size)?;
    let files = export_activations(&net, &x, &a.layers, &a.out)?;
    println!("{} activation maps -> {}", files.len(), a.out.display());
    Ok(())
}
