//! `sparrow` command-line front end.
//!
//! ```bash
//! sparrow encode samples.csv --window 31 --target count -o samples.enc
//! sparrow quantize model.json --calib calib.csv -o model.sprw
//! sparrow simulate model.sprw samples.enc --trace run.trace
//! sparrow energy --trace run.trace
//! sparrow search data.csv --config nas.json --history history.jsonl
//! sparrow verify
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sparrow_core::blob;
use sparrow_core::energy::{ledger_from_trace, sparse_vs_dense_report, EnergyConfig, EnergyLedger};
use sparrow_core::model::{quantize_model_with_report, FloatModel};
use sparrow_core::nas::{
    search, write_history, Dataset, Evaluator, NasConfig, ParamCountEvaluator, ProxyEvaluator,
    SearchSpace,
};
use sparrow_core::network::{
    normalize_columns, parse_value_rows, EncodeTarget, EncodedBatch, NetworkSpec,
};
use sparrow_core::quant::QuantConfig;
use sparrow_core::sim::{trace_latency, Core, CoreConfig, SimTrace};
use sparrow_core::verify::{crossover_check, default_representability_sweep, space_check};
use sparrow_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "sparrow",
    version,
    about = "Hybrid SSF/IF/ANN spiking network toolchain: encode, quantize, simulate, price, search, verify",
    arg_required_else_help = true
)]
struct Cli {
    /// Seed for every random choice (overrides a config file seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Energy coefficients JSON: a full energy config or a bare coefficient object.
    #[arg(long, global = true, value_name = "FILE")]
    coeffs: Option<PathBuf>,

    /// Core clock in Hz.
    #[arg(long = "clock-hz", global = true, value_name = "N")]
    clock_hz: Option<f64>,

    /// Print results only.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rate-encode rows of values in [0, 1] for a T-step window.
    Encode(EncodeArgs),
    /// Quantize a float model into a deployable model blob.
    Quantize(QuantizeArgs),
    /// Run a model on the cycle-accurate core and report class, latency and energy.
    Simulate(SimulateArgs),
    /// Price a trace, compare sparse and dense weight streaming, or show crossovers.
    Energy(EnergyArgs),
    /// Evolutionary architecture search.
    Search(SearchArgs),
    /// Representability sweep, crossover constants and search-space count.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// CSV of values, one sample per row.
    input: PathBuf,
    #[arg(short = 'T', long)]
    window: u32,
    #[arg(long, value_enum, default_value_t = TargetArg::Count)]
    target: TargetArg,
    /// Min-max normalize every column to [0, 1] first.
    #[arg(long)]
    normalize: bool,
    /// Output file (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TargetArg {
    Train,
    Count,
    Level,
}

impl From<TargetArg> for EncodeTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Train => EncodeTarget::Train,
            TargetArg::Count => EncodeTarget::Count,
            TargetArg::Level => EncodeTarget::Level,
        }
    }
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    /// Float model JSON.
    model: PathBuf,
    /// Calibration CSV of raw inputs in [0, 1].
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the integer network as a JSON model config.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    n_shift: u32,
    #[arg(long, default_value_t = 16)]
    m_shift: u32,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Model blob or JSON model config.
    model: PathBuf,
    /// Encoded input file.
    input: PathBuf,
    /// Run only this sample (0-based).
    #[arg(long)]
    sample: Option<usize>,
    /// Write the trace summed over all runs.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EnergyArgs {
    /// Trace file written by `simulate --trace`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Model for the sparse-vs-dense comparison.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Activation sparsity in [0, 1] for the sparse-vs-dense comparison.
    #[arg(long, requires = "model")]
    sparsity: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Labeled CSV, integer class label in the last column.
    data: PathBuf,
    /// Search configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write every candidate as one JSON line.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvaluatorArg::Proxy)]
    evaluator: EvaluatorArg,
    /// Window used for the energy estimate.
    #[arg(short = 'T', long, default_value_t = 31)]
    window: u32,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EvaluatorArg {
    /// Brief-training accuracy and simulated energy.
    Proxy,
    /// Negated parameter count, no training.
    Params,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = VerifyMode::All)]
    mode: VerifyMode,
    /// Search-space depths for the space check.
    #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5, 6])]
    depths: Vec<usize>,
    /// Search-space widths for the space check.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
    widths: Vec<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VerifyMode {
    All,
    Sweep,
    Crossover,
    Space,
}

/// A check that ran and failed; exits with status 1.
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

struct Ctx {
    seed: Option<u64>,
    energy: EnergyConfig,
    clock_hz: f64,
    quiet: bool,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut energy = match &cli.coeffs {
            Some(p) => EnergyConfig::load(p)
                .with_context(|| format!("reading coefficients {}", p.display()))?,
            None => EnergyConfig::default(),
        };
        if let Some(hz) = cli.clock_hz {
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(Failed(format!("--clock-hz must be positive, got {hz}")).into());
            }
            energy.clock_hz = hz;
        }
        Ok(Self {
            seed: cli.seed,
            clock_hz: energy.clock_hz,
            energy,
            quiet: cli.quiet,
        })
    }

    /// Context lines, suppressed by `--quiet`.
    fn note(&self, s: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", s.as_ref());
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// A model blob, or a JSON model config when the file lacks the blob magic.
fn load_network(path: &Path) -> Result<NetworkSpec> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(blob::MAGIC) {
        return blob::unpack(&bytes).with_context(|| format!("loading {}", path.display()));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Blob("neither a model blob nor a JSON config".into()))?;
    let spec =
        NetworkSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    sparrow_core::network::ensure_valid(&spec, &Default::default())?;
    Ok(spec)
}

fn cmd_encode(ctx: &Ctx, a: &EncodeArgs) -> Result<()> {
    let mut rows = parse_value_rows(&read(&a.input)?)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    if a.normalize {
        normalize_columns(&mut rows);
    }
    if a.window == 0 || a.window > 255 {
        return Err(Failed(format!("window {} outside [1, 255]", a.window)).into());
    }
    let batch = EncodedBatch::encode(&rows, a.window, a.target.into())
        .with_context(|| format!("encoding {}", a.input.display()))?;
    let text = batch.to_text();
    match &a.output {
        Some(p) => {
            write(p, &text)?;
            ctx.note(format!(
                "encoded {} samples of width {} as {} (T={}) to {}",
                batch.samples.len(),
                batch.width,
                batch.target.name(),
                batch.window,
                p.display()
            ));
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_quantize(ctx: &Ctx, a: &QuantizeArgs) -> Result<()> {
    let model = FloatModel::from_json(&read(&a.model)?)
        .with_context(|| format!("parsing {}", a.model.display()))?;
    let calib = match &a.calib {
        Some(p) => {
            parse_value_rows(&read(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Vec::new(),
    };
    let cfg = QuantConfig {
        n_shift: a.n_shift,
        m_shift: a.m_shift,
        ..QuantConfig::default()
    };
    let (spec, report) = quantize_model_with_report(&model, &calib, &cfg)?;
    let bytes = blob::pack(&spec)?;
    write(&a.output, &bytes)?;
    if let Some(p) = &a.config {
        write(p, spec.to_json())?;
    }
    println!(
        "{:<5} {:<4} {:>4} {:>4} {:>10} {:>12} {:>8} {:>8}",
        "layer", "kind", "in", "out", "theta_q", "r_w", "m_w", "m_b"
    );
    for (i, (l, p)) in spec.layers.iter().zip(&report.params).enumerate() {
        println!(
            "{i:<5} {:<4} {:>4} {:>4} {:>10} {:>12.8} {:>8} {:>8}",
            l.kind.to_string(),
            l.in_width,
            l.out_width,
            l.threshold_q,
            p.weight_scale,
            l.m_w,
            l.m_b
        );
    }
    ctx.note(format!(
        "wrote {} bytes ({} parameters, T={}) to {}",
        bytes.len(),
        spec.param_count(),
        spec.window,
        a.output.display()
    ));
    Ok(())
}

fn ledger_table(ledger: &EnergyLedger) -> String {
    ledger.to_string()
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let spec = load_network(&a.model)?;
    let batch = EncodedBatch::from_text(&read(&a.input)?)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    if batch.window != spec.window {
        return Err(Failed(format!(
            "input window {} differs from the model window {}",
            batch.window, spec.window
        ))
        .into());
    }
    let indices: Vec<usize> = match a.sample {
        Some(i) if i < batch.samples.len() => vec![i],
        Some(i) => {
            return Err(Failed(format!(
                "sample {i} out of range ({} samples)",
                batch.samples.len()
            ))
            .into())
        }
        None => (0..batch.samples.len()).collect(),
    };
    let mut core = Core::new(CoreConfig {
        clock_hz: ctx.clock_hz,
        ..CoreConfig::default()
    })?;
    core.load_network(&spec)?;

    let mut total: Option<SimTrace> = None;
    let mut runs = Vec::new();
    for &i in &indices {
        let r = core
            .run(&batch.samples[i])
            .with_context(|| format!("sample {i}"))?;
        let latency = trace_latency(&r.trace, ctx.clock_hz)?;
        let ledger = ledger_from_trace(&r.trace, &ctx.energy)?;
        total = Some(match total {
            Some(t) => &t + &r.trace,
            None => r.trace.clone(),
        });
        runs.push((i, r, latency, ledger));
    }

    if a.json {
        let items: Vec<serde_json::Value> = runs
            .iter()
            .map(|(i, r, latency, ledger)| {
                serde_json::json!({
                    "sample": i,
                    "class": r.class,
                    "scores": r.scores,
                    "cycles": r.trace.cycles,
                    "latency_ms": format!("{:.6}", latency * 1e3),
                    "energy_nj": format!("{:.6}", ledger.total_nj()),
                    "events": r.trace.events.entries().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&items)?);
    } else {
        println!(
            "{:>6} {:>5} {:>9} {:>12} {:>12}",
            "sample", "class", "cycles", "latency_ms", "energy_nj"
        );
        for (i, r, latency, ledger) in &runs {
            println!(
                "{i:>6} {:>5} {:>9} {:>12.6} {:>12.6}",
                r.class,
                r.trace.cycles,
                latency * 1e3,
                ledger.total_nj()
            );
        }
        if let [(_, r, _, ledger)] = runs.as_slice() {
            if !ctx.quiet {
                println!();
                println!("{}", ledger_table(ledger));
                println!();
                println!("{:<20} {:>10}", "event", "count");
                for (name, v) in r.trace.events.entries() {
                    println!("{name:<20} {v:>10}");
                }
            }
        }
    }
    if let (Some(p), Some(t)) = (&a.trace, &total) {
        write(p, t.to_text())?;
        ctx.note(format!(
            "wrote trace of {} runs to {}",
            runs.len(),
            p.display()
        ));
    }
    Ok(())
}

fn cmd_energy(ctx: &Ctx, a: &EnergyArgs) -> Result<()> {
    let mut printed = false;
    if let Some(p) = &a.trace {
        let trace =
            SimTrace::from_text(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
        let ledger = ledger_from_trace(&trace, &ctx.energy)?;
        if a.json {
            println!("{}", ledger.to_json());
        } else {
            println!("cycles       {}", trace.cycles);
            println!(
                "latency_ms   {:.6}",
                trace_latency(&trace, ctx.clock_hz)? * 1e3
            );
            println!("{}", ledger_table(&ledger));
        }
        printed = true;
    }
    if let (Some(m), Some(s)) = (&a.model, a.sparsity) {
        let spec = load_network(m)?;
        let r = sparse_vs_dense_report(&spec, s, &ctx.energy)?;
        if a.json {
            println!("{}", serde_json::to_string_pretty(&r)?);
        } else {
            println!("{r}");
        }
        printed = true;
    } else if a.model.is_some() {
        return Err(Failed("--model needs --sparsity".into()).into());
    }
    if !printed {
        let r = crossover_check(&ctx.energy.coefficients)?;
        println!(
            "compute-only crossover  {:.6}  ({})",
            r.compute_only, r.compute_only_exact
        );
        println!(
            "total crossover         {:.6}  ({})",
            r.total, r.total_exact
        );
    }
    Ok(())
}

fn cmd_search(ctx: &Ctx, a: &SearchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str::<NasConfig>(&read(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => NasConfig::default(),
    };
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let data =
        Dataset::from_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let n_inputs = data.n_features();
    let evaluator: Box<dyn Evaluator> = match a.evaluator {
        EvaluatorArg::Proxy => Box::new(ProxyEvaluator::new(
            data,
            cfg.proxy,
            a.window,
            ctx.energy.clone(),
        )?),
        EvaluatorArg::Params => Box::new(ParamCountEvaluator { n_inputs }),
    };
    ctx.note(format!(
        "searching {} architectures with {} evaluations (seed {})",
        SearchSpace::default().size(),
        cfg.evaluator_calls(),
        cfg.seed
    ));
    let out = search(&SearchSpace::default(), &cfg, evaluator.as_ref())?;
    if let Some(p) = &a.history {
        let f = fs::File::create(p).with_context(|| format!("writing {}", p.display()))?;
        write_history(&out.history, BufWriter::new(f))?;
        ctx.note(format!(
            "wrote {} candidates to {}",
            out.history.len(),
            p.display()
        ));
    }
    let b = &out.best;
    println!("best         {}", b.architecture);
    println!("accuracy     {:.6}", b.accuracy);
    println!("energy_nj    {:.6}", b.energy_nj);
    println!("params       {}", b.params);
    println!("score        {:.6}", b.score);
    println!("round        {}", b.round);
    println!("evaluations  {}", out.evaluator_calls);
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: &VerifyArgs) -> Result<()> {
    let mut failures = Vec::new();
    let mut line = |name: &str, ok: bool, detail: String| {
        println!(
            "{:<10} {}  {detail}",
            name,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(name.to_string());
        }
    };
    let all = a.mode == VerifyMode::All;
    if all || a.mode == VerifyMode::Sweep {
        let r = default_representability_sweep()?;
        let mut detail = format!(
            "{} instances, {} with IF = SSF, {} violations",
            r.instances,
            r.equal,
            r.violations.len()
        );
        if let Some(v) = r.violations.first() {
            let _ = write!(detail, "; first: {v}");
        }
        line("sweep", r.passed(), detail);
    }
    if all || a.mode == VerifyMode::Crossover {
        let r = crossover_check(&ctx.energy.coefficients)?;
        line(
            "crossover",
            r.passed(),
            format!(
                "compute-only {:.6} ({}), total {:.6} ({})",
                r.compute_only, r.compute_only_exact, r.total, r.total_exact
            ),
        );
    }
    if all || a.mode == VerifyMode::Space {
        let space = SearchSpace {
            depths: a.depths.clone(),
            widths: a.widths.clone(),
        };
        let r = space_check(&space)?;
        line(
            "space",
            r.passed(),
            format!(
                "{} enumerated, {} distinct, formula {}",
                r.enumerated, r.distinct, r.formula
            ),
        );
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failed(format!("failed checks: {}", failures.join(", "))).into())
    }
}

/// 2 for unreadable or malformed input, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Failed>() {
            return 1;
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Parse { .. }
                | Error::Blob(_)
                | Error::Checksum { .. }
                | Error::UnknownEvent(_) => 2,
                Error::LayerContext { source, .. } => match **source {
                    Error::Parse { .. } | Error::Json(_) => 2,
                    _ => 1,
                },
                _ => 1,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

/// The cause chain, skipping causes already spelled out by their wrapper.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !last.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::from_cli(cli)?;
    match &cli.command {
        Command::Encode(a) => cmd_encode(&ctx, a),
        Command::Quantize(a) => cmd_quantize(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Energy(a) => cmd_energy(&ctx, a),
        Command::Search(a) => cmd_search(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
