use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ksgate_core::report::{self, render_markdown};
use ksgate_core::selftest::{check_bands, run_scenario, suite_config, BandCheck};
use ksgate_core::simgen::{builtin_scenario, generate, ScenarioId, ScenarioSpec};
use ksgate_core::{load_period_csv, run_diagnosis, GovernanceConfig, Period};

#[derive(Parser)]
#[command(
    name = "ksgate",
    version,
    about = "KS deterioration diagnostics for scoring models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-gate diagnostic on a reference/current pair of CSV files.
    Diagnose(DiagnoseArgs),
    /// Write a built-in or custom scenario as ref.csv, cur.csv and scenario.json.
    Simulate(SimulateArgs),
    /// Render a report JSON file as a markdown summary.
    Render(RenderArgs),
    /// Run the built-in scenario suite against its tolerance bands.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Overrides {
    /// Key=value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Bootstrap replicate count.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Draw a fresh seed instead of requiring one.
    #[arg(long, conflicts_with = "seed")]
    seed_from_entropy: bool,
    #[arg(long)]
    min_segment_count: Option<usize>,
    #[arg(long)]
    clip_low: Option<f64>,
    #[arg(long)]
    clip_high: Option<f64>,
    #[arg(long)]
    auroc_negligible: Option<f64>,
    /// Worker threads, 0 = all cores. Never changes results.
    #[arg(long)]
    threads: Option<usize>,
    /// Run Steps 2 and 3 even when an earlier gate halts.
    #[arg(long)]
    full_trace: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    reference: PathBuf,
    current: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Report JSON path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the markdown summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Write the bootstrap replicate distribution as CSV.
    #[arg(long)]
    dump_bootstrap: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario id, e.g. S2_A.
    #[arg(required_unless_present = "spec", conflicts_with = "spec")]
    scenario: Option<String>,
    /// Custom scenario JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "seed")]
    seed_from_entropy: bool,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    report: PathBuf,
    /// Markdown path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Suite JSON path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn file_sets_seed(text: &str) -> bool {
    text.lines().any(|line| {
        let content = line.split('#').next().unwrap_or("");
        content
            .split_once('=')
            .is_some_and(|(k, _)| k.trim() == "seed")
    })
}

fn resolve_config(o: &Overrides) -> Result<GovernanceConfig> {
    let mut cfg = GovernanceConfig::default();
    let mut seeded = false;
    if let Some(path) = &o.config {
        let text = read_text(path)?;
        cfg.apply_file(&text)
            .with_context(|| format!("in config file {}", path.display()))?;
        seeded = file_sets_seed(&text);
    }
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = o.$field { $target = v; })*
        };
    }
    set!(
        tau => cfg.tau,
        alpha => cfg.alpha,
        bootstrap => cfg.bootstrap,
        min_segment_count => cfg.min_segment_count,
        clip_low => cfg.weight_clip.low,
        clip_high => cfg.weight_clip.high,
        auroc_negligible => cfg.auroc_negligible,
        threads => cfg.parallelism,
    );
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    } else if o.seed_from_entropy {
        cfg.seed = rand::random();
        eprintln!("using entropy seed {}", cfg.seed);
    } else if !seeded {
        bail!("no seed given; pass --seed N, set `seed` in the config file, or use --seed-from-entropy");
    }
    if o.full_trace {
        cfg.full_trace = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn diagnose(args: DiagnoseArgs) -> Result<u8> {
    let cfg = resolve_config(&args.overrides)?;
    let reference = load_period_csv(&args.reference, Period::Reference)?;
    let current = load_period_csv(&args.current, Period::Current)?;
    let diagnosis = run_diagnosis(&reference, &current, &cfg)?;
    let rep = &diagnosis.report;
    write_out(args.output.as_deref(), &report::to_json(rep))?;
    if let Some(path) = &args.summary {
        fs::write(path, render_markdown(rep))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &args.dump_bootstrap {
        let mut csv = String::from("replicate,pct_change\n");
        if let Some(dist) = &diagnosis.bootstrap {
            for (i, v) in dist.values.iter().enumerate() {
                csv.push_str(&format!("{i},{v}\n"));
            }
        }
        fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    eprintln!(
        "{}",
        serde_json::to_value(rep.final_diagnosis)?
            .as_str()
            .unwrap_or_default()
    );
    Ok(rep.final_diagnosis.exit_code() as u8)
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let mut spec: ScenarioSpec = match (&args.scenario, &args.spec) {
        (Some(id), _) => {
            let id: ScenarioId = id.parse()?;
            let seed = match (args.seed, args.seed_from_entropy) {
                (Some(s), _) => s,
                (None, true) => rand::random(),
                (None, false) => bail!("no seed given; pass --seed N or --seed-from-entropy"),
            };
            builtin_scenario(id, seed)
        }
        (None, Some(path)) => serde_json::from_str(&read_text(path)?)
            .with_context(|| format!("invalid scenario file {}", path.display()))?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if args.spec.is_some() {
        if let Some(seed) = args.seed {
            spec.seed = seed;
        } else if args.seed_from_entropy {
            spec.seed = rand::random();
        }
    }
    let (reference, current) = generate(&spec)?;
    fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;
    reference.save_csv(&args.output.join("ref.csv"))?;
    current.save_csv(&args.output.join("cur.csv"))?;
    let mut echo = serde_json::to_string_pretty(&spec)?;
    echo.push('\n');
    fs::write(args.output.join("scenario.json"), echo)?;
    Ok(0)
}

fn render(args: RenderArgs) -> Result<u8> {
    let text = read_text(&args.report)?;
    let rep = report::from_json(&text)
        .with_context(|| format!("cannot load {}", args.report.display()))?;
    write_out(args.output.as_deref(), &render_markdown(&rep))?;
    Ok(0)
}

#[derive(Serialize)]
struct SuiteEntry {
    scenario: ScenarioId,
    pass: bool,
    checks: Vec<BandCheck>,
    report: serde_json::Value,
}

fn selftest(args: SelftestArgs) -> Result<u8> {
    let cfg = suite_config(args.seed, args.threads);
    let mut entries = Vec::new();
    let mut all_pass = true;
    for id in ScenarioId::ALL {
        let rep = run_scenario(id, &cfg)?;
        let checks = check_bands(id, &rep);
        for c in &checks {
            println!(
                "{:<4} {:<12} {:<28} observed {:<24} expected {}",
                if c.pass { "PASS" } else { "FAIL" },
                id,
                c.name,
                c.observed,
                c.expected
            );
        }
        let pass = checks.iter().all(|c| c.pass);
        all_pass &= pass;
        entries.push(SuiteEntry {
            scenario: id,
            pass,
            checks,
            report: report::to_value(&rep),
        });
    }
    if let Some(path) = &args.output {
        let doc = json!({ "seed": args.seed, "pass": all_pass, "scenarios": entries });
        let mut text = serde_json::to_string_pretty(&report::to_value(&doc))?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "{}",
        if all_pass {
            "selftest passed"
        } else {
            "selftest FAILED"
        }
    );
    Ok(if all_pass { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Diagnose(a) => diagnose(a),
        Command::Simulate(a) => simulate(a),
        Command::Render(a) => render(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
