//! Command-line front end: dataset generation/ingestion, training,
//! decomposition, truncated-model evaluation, ablation sweeps, and a
//! self-check command that runs the numerical identities against a
//! checkpoint.
//!
//! Exit codes: 0 success, 2 usage error, 3 training divergence,
//! 4 degenerate total variance, 5 verification failure.

use crate::anova::{
    component, corner_sum, truncated_predict, AnovaDecomposition, AnovaError, DEFAULT_QMC_NODES,
};
use crate::data::{generate, ingest_csv, CsvSchema, Dataset, Split, TestFunctionKind, TestFunctionSpec};
use crate::multidual::ActivationKind;
use crate::network::{mixed_partial, Checkpoint, MlpParams, NetworkSpec};
use crate::oracle::{qmc_integrate, SequenceKind, SobolSequence};
use crate::training::{
    fit, loss_and_grad, rmse_on_split, LossKind, OptimizerKind, TrainConfig, TrainError,
};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;
pub const EXIT_VERIFY_FAILED: u8 = 5;

/// Env var overriding `--out` for every command.
pub const OUT_DIR_ENV: &str = "ANOVA_NN_OUT";

pub const CONFIG_SCHEMA_VERSION: u64 = 1;
pub const DECOMPOSITION_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "anova-nn", version, about = "Train networks through their mixed partial derivative and decompose the fitted function into orthogonal interaction components with closed-form integrals.")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset (ishigami, circuit, piston).
    Generate(GenerateArgs),
    /// Ingest a CSV file (asn, ccp, ccs, or generic last-column-target).
    Ingest(IngestArgs),
    /// Fit the mixed partial of a network to a dataset.
    Train(TrainArgs),
    /// Decompose a checkpoint into interaction components and indices.
    Decompose(DecomposeArgs),
    /// Test RMSE of the order-d truncated predictor.
    Eval(EvalArgs),
    /// Width × activation × noise sweep over repeated training runs.
    Ablate(AblateArgs),
    /// Run numerical identity checks against a checkpoint.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Test function: ishigami | circuit | piston.
    #[arg(long = "fn")]
    function: String,
    /// Sample count.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory (env ANOVA_NN_OUT overrides).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Input CSV path.
    #[arg(long)]
    file: PathBuf,
    /// Schema: asn | ccp | ccs | generic.
    #[arg(long, default_value = "generic")]
    schema: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Basename for the snapshot files.
    #[arg(long, default_value = "dataset")]
    name: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset prefix (expects <prefix>.csv and <prefix>.meta.json).
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch multiplicative learning-rate decay (Adam only).
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Mini-batch size; 0 means full batch.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    /// Std of additive Gaussian noise on training targets.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Penalty: squared | absolute.
    #[arg(long)]
    loss: Option<String>,
    /// Number of hidden layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width (same for every layer).
    #[arg(long)]
    width: Option<usize>,
    /// Activation: sigmoid | relu | swish | rep.
    #[arg(long)]
    activation: Option<String>,
    /// Degree of the rectified-polynomial activation (default K+1).
    #[arg(long)]
    rep_degree: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Quadrature nodes for variance estimation.
    #[arg(long, default_value_t = DEFAULT_QMC_NODES)]
    nodes: usize,
    /// Emit a gridded trace of one component at this per-axis resolution.
    #[arg(long)]
    grid: Option<usize>,
    /// Component for --grid as comma-separated 1-based variables, e.g. "1,3".
    #[arg(long)]
    subset: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Interaction order d of the truncated predictor, 0 ≤ d ≤ K.
    #[arg(long)]
    order: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "8,16,32,48", value_delimiter = ',')]
    widths: Vec<usize>,
    #[arg(long, default_value = "sigmoid,relu,swish,rep", value_delimiter = ',')]
    activations: Vec<String>,
    #[arg(long, default_value = "0,1e-4,1e-3,1e-2,1e-1", value_delimiter = ',')]
    noises: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Random subset/anchor pairs to test the integral identity on.
    #[arg(long, default_value_t = 10)]
    subsets: usize,
    #[arg(long, default_value_t = 1 << 14)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    run(cli)
}

pub fn run(cli: Cli) -> ExitCode {
    let res = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match res {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn out_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => flag.to_path_buf(),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

// ---------------------------------------------------------------------
// generate / ingest
// ---------------------------------------------------------------------

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode, String> {
    let kind = TestFunctionKind::parse(&args.function)
        .ok_or_else(|| format!("unknown function '{}'", args.function))?;
    if args.n < 10 {
        return Err("--n must be ≥ 10".into());
    }
    let dir = out_dir(&args.out);
    ensure_dir(&dir)?;
    let spec = TestFunctionSpec::new(kind, args.n);
    let ds = generate(&spec, args.seed).map_err(|e| e.to_string())?;
    let prefix = dir.join(kind.name());
    ds.save(&prefix).map_err(|e| e.to_string())?;
    println!(
        "wrote {} ({} samples, K={}) to {}.csv / .meta.json",
        kind.name(),
        ds.n(),
        ds.k,
        prefix.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(args: IngestArgs) -> Result<ExitCode, String> {
    let schema =
        CsvSchema::parse(&args.schema).ok_or_else(|| format!("unknown schema '{}'", args.schema))?;
    let dir = out_dir(&args.out);
    ensure_dir(&dir)?;
    let ds = ingest_csv(&args.file, schema, args.seed).map_err(|e| e.to_string())?;
    let prefix = dir.join(&args.name);
    ds.save(&prefix).map_err(|e| e.to_string())?;
    println!("ingested {} rows, K={} → {}.csv", ds.n(), ds.k, prefix.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// config file: flat key=value with schema versioning
// ---------------------------------------------------------------------

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    if let Some(v) = map.get("schema_version") {
        let v: u64 = v.parse().map_err(|_| "schema_version must be an integer".to_string())?;
        if v != CONFIG_SCHEMA_VERSION {
            return Err(format!("unsupported config schema_version {v}"));
        }
    }
    Ok(map)
}

fn cfg_parse<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, String> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| format!("config key '{key}': cannot parse '{raw}'")),
    }
}

/// Flag > config file > built-in default.
fn resolve<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

struct ResolvedTrain {
    spec: NetworkSpec,
    config: TrainConfig,
}

fn resolve_train(args: &TrainArgs, k: usize) -> Result<ResolvedTrain, String> {
    let file = match &args.config {
        Some(p) => parse_config_file(p)?,
        None => HashMap::new(),
    };
    let defaults = TrainConfig::default();

    let optimizer_name: String = resolve(
        args.optimizer.clone(),
        cfg_parse(&file, "optimizer")?,
        "adam".into(),
    );
    let optimizer = match optimizer_name.as_str() {
        "adam" => OptimizerKind::Adam,
        "lbfgs" => OptimizerKind::Lbfgs,
        other => return Err(format!("unknown optimizer '{other}'")),
    };
    let loss_name: String = resolve(args.loss.clone(), cfg_parse(&file, "loss")?, "squared".into());
    let loss = match loss_name.as_str() {
        "squared" => LossKind::Squared,
        "absolute" => LossKind::Absolute,
        other => return Err(format!("unknown loss '{other}'")),
    };
    let batch = resolve(
        args.batch,
        cfg_parse(&file, "batch_size")?,
        defaults.batch_size.unwrap_or(0),
    );
    let config = TrainConfig {
        optimizer,
        learning_rate: resolve(args.lr, cfg_parse(&file, "learning_rate")?, defaults.learning_rate),
        lr_decay: resolve(args.lr_decay, cfg_parse(&file, "lr_decay")?, defaults.lr_decay),
        batch_size: if batch == 0 { None } else { Some(batch) },
        max_epochs: resolve(args.epochs, cfg_parse(&file, "max_epochs")?, defaults.max_epochs),
        patience: resolve(args.patience, cfg_parse(&file, "patience")?, defaults.patience),
        l2_weight: resolve(args.l2, cfg_parse(&file, "l2_weight")?, defaults.l2_weight),
        noise_sigma: resolve(args.noise, cfg_parse(&file, "noise_sigma")?, defaults.noise_sigma),
        seed: resolve(args.seed, cfg_parse(&file, "seed")?, defaults.seed),
        loss,
    };

    let layers = resolve(args.layers, cfg_parse(&file, "layers")?, 3usize);
    let width = resolve(args.width, cfg_parse(&file, "width")?, 32usize);
    let act_name: String = resolve(
        args.activation.clone(),
        cfg_parse(&file, "activation")?,
        "sigmoid".into(),
    );
    let activation = ActivationKind::parse(&act_name)
        .ok_or_else(|| format!("unknown activation '{act_name}'"))?;
    let mut spec = NetworkSpec::new(k, vec![width; layers], activation);
    spec.rep_degree = resolve(
        args.rep_degree.map(Some),
        cfg_parse(&file, "rep_degree")?.map(Some),
        None,
    );
    spec.l2_weight = config.l2_weight;
    Ok(ResolvedTrain { spec, config })
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, String> {
    let ds = Dataset::load(&args.data).map_err(|e| e.to_string())?;
    let resolved = resolve_train(&args, ds.k)?;
    let ResolvedTrain { spec, config } = resolved;

    if spec.activation == ActivationKind::Relu && ds.k >= 2 {
        eprintln!(
            "warning: relu mixed partials of order ≥ 2 vanish almost everywhere; \
             the fitted function will be ~0 and RMSE will sit near the target std"
        );
    }

    let dir = out_dir(&args.out);
    ensure_dir(&dir)?;
    let (params, report) = match fit(&ds, &spec, &config) {
        Ok(v) => v,
        Err(e) => return Err(e.to_string()),
    };

    let ckpt = Checkpoint::new(
        spec.clone(),
        &params,
        ds.input_maps.clone(),
        ds.output_map,
        config.seed,
    );
    let ckpt_path = dir.join("checkpoint.json");
    ckpt.save(&ckpt_path).map_err(|e| e.to_string())?;
    let report_json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("train_report.json"), report_json + "\n").map_err(|e| e.to_string())?;

    let mut spec_l2 = spec.clone();
    spec_l2.l2_weight = config.l2_weight;
    let train = rmse_on_split(&params, &spec_l2, &ds, Split::Train).map_err(|e| e.to_string())?;
    let val = rmse_on_split(&params, &spec_l2, &ds, Split::Val).map_err(|e| e.to_string())?;
    println!("best epoch {}", report.best_epoch);
    println!("train RMSE {train:.6e}");
    println!("val   RMSE {val:.6e}");
    println!("test  RMSE {:.6e}", report.test_rmse);
    println!("checkpoint → {}", ckpt_path.display());
    if report.diverged {
        eprintln!("warning: run diverged (non-finite loss); report flagged");
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------

fn subset_label(mask: usize) -> String {
    if mask == 0 {
        return "{}".into();
    }
    let vars: Vec<String> = crate::anova::mask_members(mask).iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", vars.join(","))
}

fn parse_subset(text: &str, k: usize) -> Result<usize, String> {
    let mut mask = 0usize;
    for part in text.split(',') {
        let v: usize = part.trim().parse().map_err(|_| format!("bad subset '{text}'"))?;
        if v == 0 || v > k {
            return Err(format!("variable {v} outside 1..={k}"));
        }
        mask |= 1 << (v - 1);
    }
    Ok(mask)
}

fn cmd_decompose(args: DecomposeArgs) -> Result<ExitCode, String> {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let params = ckpt.params().map_err(|e| e.to_string())?;
    let dir = out_dir(&args.out);
    ensure_dir(&dir)?;

    let decomp = match AnovaDecomposition::decompose(&params, &ckpt.spec, args.nodes, SequenceKind::Sobol)
    {
        Ok(d) => d,
        Err(AnovaError::DegenerateVariance(v)) => {
            eprintln!("warning: total variance {v:.3e} is numerically zero; all indices are 0");
            return Ok(ExitCode::from(EXIT_DEGENERATE));
        }
        Err(e) => return Err(e.to_string()),
    };

    let file = serde_json::json!({
        "version": DECOMPOSITION_VERSION,
        "decomposition": decomp,
    });
    let json = serde_json::to_string_pretty(&file).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("decomposition.json"), json + "\n").map_err(|e| e.to_string())?;

    // machine-readable table + human table sorted by index
    let mut rows: Vec<usize> = (1..1usize << decomp.k).collect();
    rows.sort_by(|&a, &b| {
        decomp.sobol_indices[b]
            .partial_cmp(&decomp.sobol_indices[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut csv = String::from("mask,subset,variance,sobol_index\n");
    for &m in &rows {
        writeln!(
            csv,
            "{m},\"{}\",{:.17e},{:.17e}",
            subset_label(m),
            decomp.variances[m],
            decomp.sobol_indices[m]
        )
        .unwrap();
    }
    std::fs::write(dir.join("sensitivity.csv"), csv).map_err(|e| e.to_string())?;

    println!("mean (constant component) {:.6e}", decomp.mean);
    println!("total variance            {:.6e}", decomp.total_variance);
    println!("{:<12} {:>14} {:>14}", "subset", "variance", "index");
    for &m in &rows {
        println!(
            "{:<12} {:>14.6e} {:>14.6e}",
            subset_label(m),
            decomp.variances[m],
            decomp.sobol_indices[m]
        );
    }

    if let Some(res) = args.grid {
        let subset = args
            .subset
            .as_deref()
            .ok_or("--grid requires --subset, e.g. --subset 1,3")?;
        if res < 2 {
            return Err("--grid must be ≥ 2".into());
        }
        let mask = parse_subset(subset, decomp.k)?;
        let active = crate::anova::mask_members(mask);
        let mut trace = String::new();
        for &i in &active {
            write!(trace, "x{},", i + 1).unwrap();
        }
        trace.push_str("component\n");
        let mut x = vec![0.0; decomp.k];
        let mut idx = vec![0usize; active.len()];
        loop {
            for (slot, &axis) in active.iter().enumerate() {
                x[axis] = idx[slot] as f64 / (res - 1) as f64;
            }
            let c = component(&params, &ckpt.spec, &x, mask).map_err(|e| e.to_string())?;
            for &axis in &active {
                write!(trace, "{:.17e},", x[axis]).unwrap();
            }
            writeln!(trace, "{c:.17e}").unwrap();
            let mut carry = 0;
            while carry < idx.len() {
                idx[carry] += 1;
                if idx[carry] < res {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == idx.len() {
                break;
            }
        }
        let name = format!("component_{}.csv", subset_label(mask).replace(['{', '}'], "").replace(',', "_"));
        std::fs::write(dir.join(&name), trace).map_err(|e| e.to_string())?;
        println!("grid trace → {}", dir.join(&name).display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, String> {
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let params = ckpt.params().map_err(|e| e.to_string())?;
    let ds = Dataset::load(&args.data).map_err(|e| e.to_string())?;
    let k = ckpt.spec.input_dim;
    if args.order > k {
        return Err(format!("--order {} exceeds K={k}", args.order));
    }
    if ds.k != k {
        return Err(format!("dataset K={} does not match checkpoint K={k}", ds.k));
    }
    let idx = ds.indices(Split::Test);
    let mut err_trunc = 0.0;
    let mut err_full = 0.0;
    for &i in &idx {
        let x = ds.row(i);
        let p = truncated_predict(&params, &ckpt.spec, x, args.order).map_err(|e| e.to_string())?;
        let f = mixed_partial(&params, &ckpt.spec, x).map_err(|e| e.to_string())?;
        err_trunc += (p - ds.y[i]) * (p - ds.y[i]);
        err_full += (f - ds.y[i]) * (f - ds.y[i]);
    }
    let n = idx.len() as f64;
    println!("order {} test RMSE {:.6e}", args.order, (err_trunc / n).sqrt());
    println!("full  ({k}) test RMSE {:.6e}", (err_full / n).sqrt());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode, String> {
    if args.widths.is_empty() || args.activations.is_empty() || args.noises.is_empty() || args.seeds == 0
    {
        return Err("ablation grid must be nonempty".into());
    }
    let ds = Dataset::load(&args.data).map_err(|e| e.to_string())?;
    let dir = out_dir(&args.out);
    ensure_dir(&dir)?;

    let mut csv = String::from("width,activation,noise_sigma,seed,diverged,best_epoch,train_loss,test_rmse\n");
    let mut divergent = 0usize;
    for &width in &args.widths {
        for act_name in &args.activations {
            let activation = ActivationKind::parse(act_name)
                .ok_or_else(|| format!("unknown activation '{act_name}'"))?;
            for &noise in &args.noises {
                for seed in 0..args.seeds {
                    let spec = NetworkSpec::new(ds.k, vec![width; args.layers], activation);
                    let config = TrainConfig {
                        max_epochs: args.epochs,
                        patience: args.epochs,
                        noise_sigma: noise,
                        seed,
                        ..Default::default()
                    };
                    let cell = fit(&ds, &spec, &config);
                    match cell {
                        Ok((_, report)) => {
                            if report.diverged {
                                divergent += 1;
                            }
                            writeln!(
                                csv,
                                "{width},{act_name},{noise},{seed},{},{},{:.17e},{:.17e}",
                                report.diverged,
                                report.best_epoch,
                                report.train_loss.last().copied().unwrap_or(f64::NAN),
                                report.test_rmse
                            )
                            .unwrap();
                        }
                        Err(TrainError::NonFiniteLoss) => {
                            divergent += 1;
                            writeln!(csv, "{width},{act_name},{noise},{seed},true,0,nan,nan").unwrap();
                        }
                        Err(e) => return Err(e.to_string()),
                    }
                    println!("done width={width} act={act_name} noise={noise} seed={seed}");
                }
            }
        }
    }
    let path = dir.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| e.to_string())?;
    println!("sweep complete ({divergent} divergent cells) → {}", path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, String> {
    if args.subsets == 0 {
        return Err("--subsets must be ≥ 1".into());
    }
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| e.to_string())?;
    let params = ckpt.params().map_err(|e| e.to_string())?;
    let spec = &ckpt.spec;
    let k = spec.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut all_pass = true;
    let mut check = |name: &str, err: f64, tol: f64| {
        let pass = err <= tol;
        all_pass &= pass;
        println!(
            "[{}] {name}: error {err:.3e} (tol {tol:.1e})",
            if pass { "pass" } else { "FAIL" }
        );
    };

    // 1. corner sums vs quadrature on random subsets/anchors
    let mut worst = 0.0f64;
    for _ in 0..args.subsets {
        let mask = rng.gen_range(1..1usize << k);
        let x: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let inactive: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 0).collect();
        let cs = corner_sum(&params, spec, &x, mask).map_err(|e| e.to_string())?;
        // the corner sum integrates the *full* mixed partial over the
        // inactive coordinates, so that is the integrand to check against
        let q = if inactive.is_empty() {
            mixed_partial(&params, spec, &x).map_err(|e| e.to_string())?
        } else {
            qmc_integrate(
                |u: &[f64]| {
                    let mut pt = x.clone();
                    for (v, &i) in u.iter().zip(&inactive) {
                        pt[i] = *v;
                    }
                    mixed_partial(&params, spec, &pt).unwrap()
                },
                inactive.len(),
                args.nodes,
                SequenceKind::Sobol,
            )
            .map_err(|e| e.to_string())?
        };
        worst = worst.max((cs - q).abs() / q.abs().max(1e-3));
    }
    check("corner sums vs quadrature", worst, 1e-3);

    // 2. orthogonality & zero component means on shared nodes
    let decomp = match AnovaDecomposition::decompose(&params, spec, args.nodes, SequenceKind::Sobol) {
        Ok(d) => d,
        Err(AnovaError::DegenerateVariance(v)) => {
            eprintln!("total variance {v:.3e} degenerate; nothing to verify");
            return Ok(ExitCode::from(EXIT_DEGENERATE));
        }
        Err(e) => return Err(e.to_string()),
    };
    let scale = decomp.total_variance.max(1e-12);
    let worst_mean = decomp.component_means[1..]
        .iter()
        .fold(0.0f64, |a, &m| a.max(m.abs()))
        / scale.sqrt();
    check("component zero-mean", worst_mean, 1e-3);

    let mut seq = SobolSequence::new(k).map_err(|e| e.to_string())?;
    let mut x = vec![0.0; k];
    let pairs: Vec<(usize, usize)> = {
        let mut p = Vec::new();
        'outer: for a in 1..1usize << k {
            for b in a + 1..1usize << k {
                p.push((a, b));
                if p.len() >= 10 {
                    break 'outer;
                }
            }
        }
        p
    };
    let mut ips = vec![0.0; pairs.len()];
    let ortho_nodes = args.nodes.min(1 << 13);
    for _ in 0..ortho_nodes {
        seq.next_point(&mut x);
        let mut table =
            crate::anova::all_subspace_integrals(&params, spec, &x).map_err(|e| e.to_string())?;
        crate::anova::integrals_to_components(&mut table);
        for (slot, &(a, b)) in pairs.iter().enumerate() {
            ips[slot] += table[a] * table[b];
        }
    }
    let worst_ip =
        ips.iter().fold(0.0f64, |acc, &v| acc.max((v / ortho_nodes as f64).abs())) / scale;
    check("component orthogonality", worst_ip, 1e-3);

    // 3. variance-sum identity
    let sum: f64 = decomp.variances.iter().sum();
    check(
        "variance sum vs total",
        (sum - decomp.total_variance).abs() / scale,
        1e-3,
    );

    // 4. loss gradient vs central finite differences
    let n_probe = 6.min(spec.param_count());
    let xs: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ys: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grad) =
        loss_and_grad(&params, spec, &xs, &ys, LossKind::Squared).map_err(|e| e.to_string())?;
    let flat = params.flatten();
    let mut worst_g = 0.0f64;
    for _ in 0..n_probe {
        let idx = rng.gen_range(0..flat.len());
        let h = 1e-5;
        let mut plus = flat.clone();
        plus[idx] += h;
        let mut minus = flat.clone();
        minus[idx] -= h;
        let lp = crate::training::loss(
            &MlpParams::from_flat(spec, &plus).map_err(|e| e.to_string())?,
            spec,
            &xs,
            &ys,
            LossKind::Squared,
        )
        .map_err(|e| e.to_string())?;
        let lm = crate::training::loss(
            &MlpParams::from_flat(spec, &minus).map_err(|e| e.to_string())?,
            spec,
            &xs,
            &ys,
            LossKind::Squared,
        )
        .map_err(|e| e.to_string())?;
        let fd = (lp - lm) / (2.0 * h);
        worst_g = worst_g.max((grad[idx] - fd).abs() / fd.abs().max(1e-3));
    }
    check("loss gradient vs finite differences", worst_g, 1e-4);

    if all_pass {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_VERIFY_FAILED))
    }
}
