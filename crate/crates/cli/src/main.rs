use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use trajsynth_core::datastore::{
    compute_stats, cost_report, export_training, filter_training, format_dollars, CostRates, Datastore,
    SamplingStrategy, StatsScope,
};
use trajsynth_core::env::{render_wireframe, CdpConfig, CdpEnv, FixtureEnv, SiteManifest, RENDER_WIDTH};
use trajsynth_core::llm::{
    merge_usage, ChatBackend, HttpBackend, HttpConfig, RecordingBackend, ScriptEntry, ScriptedBackend,
    SequenceBackend, Stage, UsageByStage,
};
use trajsynth_core::metrics::{keynode_metrics, run_average, step_metrics, KeyNodeResult, StepEvalRecord};
use trajsynth_core::orchestrator::{filter_seeds, run_batch, run_trajectory, AllowRules, RunConfig, SeedSource, SeedSpec};
use trajsynth_core::{Blocklist, Environment};

#[derive(Parser)]
#[command(name = "trajsynth", version, about = "Synthesize and evaluate web-navigation trajectories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a batch of seeds and persist every trajectory.
    Generate(GenerateArgs),
    /// Score recorded predictions.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Dataset statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        success_only: bool,
        /// Also write the per-trajectory token histogram as CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Ids of success trajectories usable for training.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_scrolls: usize,
    },
    /// Sample training instances as JSON lines.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "trajectory-then-step")]
        strategy: SamplingStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        max_scrolls: usize,
    },
    /// Cost ledger over all persisted trajectories.
    Cost {
        #[arg(long)]
        data: PathBuf,
        /// TOML file with `per_million_tokens`, `per_image` and optional `flat_per_call`.
        #[arg(long, conflicts_with = "reference_flat")]
        rates: Option<PathBuf>,
        /// Bill stages with the fixed reference per-call prices.
        #[arg(long)]
        reference_flat: bool,
    },
    #[command(subcommand)]
    Seeds(SeedsCmd),
    #[command(subcommand)]
    Transcripts(TranscriptsCmd),
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Args)]
struct GenerateArgs {
    /// One seed per line: URL, bare domain, `rank,domain`, or a JSON seed object.
    #[arg(long)]
    seeds: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, conflicts_with = "browser", required_unless_present = "browser")]
    fixture: Option<PathBuf>,
    /// Browser remote-debugging HTTP endpoint, e.g. http://127.0.0.1:9222.
    #[arg(long, requires = "page_script")]
    browser: Option<String>,
    /// Compiled page script evaluated in the browser to enumerate elements.
    #[arg(long)]
    page_script: Option<PathBuf>,
    /// Replay recorded transcripts instead of calling a model.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    reasoning: bool,
    /// OpenAI-compatible endpoint; the key is read from OPENAI_API_KEY.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    llm_base_url: String,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Key-node metrics; one `{"task_id","key_nodes_total","key_nodes_completed"}` per line.
    Keynode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        tolerance: u32,
    },
    /// Step metrics; one step record per line.
    Steps {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Average over runs; one JSON array of 0/1 or booleans per task.
    Runs {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Toplist,
    Headlist,
    Custom,
}

impl From<SourceArg> for SeedSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Toplist => SeedSource::Toplist,
            SourceArg::Headlist => SeedSource::Headlist,
            SourceArg::Custom => SeedSource::Custom,
        }
    }
}

#[derive(Subcommand)]
enum SeedsCmd {
    /// Clean a raw seed list into JSON seed lines.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "custom")]
        source: SourceArg,
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// Restrict to these registrable domains (repeatable).
        #[arg(long = "allow-domain")]
        allow_domains: Vec<String>,
        /// Mark every seed to be reached through a search.
        #[arg(long)]
        via_search: bool,
    },
}

#[derive(Subcommand)]
enum TranscriptsCmd {
    /// Run one fixture seed against a scripted sequence of responses and
    /// save the exchanged requests as replayable transcripts.
    Record {
        /// JSON object mapping stage names to lists of `{"text": ...}` entries.
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        reasoning: bool,
        #[arg(long)]
        via_search: bool,
    },
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Draw the full-page wireframe PNG of every page in a site manifest.
    Render {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

/// Non-blank lines of a JSON-lines file, parsed.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate(args) => generate(args),
        Cmd::Eval(cmd) => eval(cmd),
        Cmd::Stats { data, success_only, histogram } => {
            let scope = if success_only { StatsScope::SuccessOnly } else { StatsScope::All };
            let stats = compute_stats(&Datastore::new(data), scope)?;
            if let Some(path) = histogram {
                fs::write(&path, stats.token_histogram.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&stats)
        }
        Cmd::Filter { data, max_scrolls } => {
            for id in filter_training(&Datastore::new(data), max_scrolls)? {
                println!("{id}");
            }
            Ok(())
        }
        Cmd::Export { data, out, n, strategy, seed, max_scrolls } => {
            let store = Datastore::new(data);
            let ids = filter_training(&store, max_scrolls)?;
            let instances = export_training(&store, &ids, strategy, seed, n)?;
            let mut w = io::BufWriter::new(
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?,
            );
            for inst in &instances {
                serde_json::to_writer(&mut w, inst)?;
                writeln!(w)?;
            }
            w.flush()?;
            eprintln!("wrote {} instances from {} trajectories", instances.len(), ids.len());
            Ok(())
        }
        Cmd::Cost { data, rates, reference_flat } => {
            let rates = match (rates, reference_flat) {
                (Some(path), _) => toml::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                (None, true) => CostRates::reference_flat(),
                (None, false) => CostRates::default(),
            };
            let store = Datastore::new(data);
            let mut usage = UsageByStage::new();
            let (mut n_total, mut n_success) = (0, 0);
            for id in store.list_ids()? {
                let rec = store.load_record(&id)?;
                merge_usage(&mut usage, &rec.usage);
                n_total += 1;
                n_success += u64::from(rec.is_success());
            }
            let ledger = cost_report(&usage, &rates, n_total, n_success);
            let fmt = |v: Option<u64>| v.map(format_dollars).unwrap_or_else(|| "n/a".into());
            eprintln!(
                "total {}  per trajectory {}  per success {}",
                format_dollars(ledger.totals.micro_dollars),
                fmt(ledger.cost_per_trajectory),
                fmt(ledger.cost_per_success)
            );
            print_json(&ledger)
        }
        Cmd::Seeds(SeedsCmd::Filter { input, out, source, blocklist, allow_domains, via_search }) => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let blocklist = load_blocklist(blocklist.as_deref())?;
            let allow = AllowRules { domains: allow_domains.into_iter().collect(), ..AllowRules::default() };
            let mut report = filter_seeds(text.lines(), source.into(), &blocklist, &allow);
            let mut w = io::BufWriter::new(fs::File::create(&out)?);
            for s in &mut report.seeds {
                s.via_search = via_search;
                serde_json::to_writer(&mut w, s)?;
                writeln!(w)?;
            }
            w.flush()?;
            eprintln!(
                "{} seeds; skipped {} (malformed {}, blocked {}, scheme {}, not allowed {}, duplicate {})",
                report.seeds.len(),
                report.skipped(),
                report.malformed,
                report.blocked,
                report.bad_scheme,
                report.not_allowed,
                report.duplicate
            );
            Ok(())
        }
        Cmd::Transcripts(TranscriptsCmd::Record { script, fixture, seed, out, max_steps, reasoning, via_search }) => {
            let script: BTreeMap<Stage, Vec<ScriptEntry>> =
                serde_json::from_str(&fs::read_to_string(&script)?).context("parsing script")?;
            let env = FixtureEnv::load(&fixture)?;
            let backend = RecordingBackend::new(SequenceBackend::new(script));
            let mut cfg = RunConfig { reasoning, ..RunConfig::default() };
            if let Some(n) = max_steps {
                cfg.max_steps = n;
            }
            let seed = SeedSpec { via_search, ..SeedSpec::new(seed) };
            let t = run_trajectory(&seed, "record", &env, &backend, &cfg);
            ScriptedBackend::write(&out, &backend.entries())?;
            eprintln!(
                "status {} after {} steps; {} transcript entries written",
                t.record.status,
                t.record.steps.len(),
                backend.entries().len()
            );
            if let Some(d) = &t.record.status_detail {
                eprintln!("detail: {d}");
            }
            Ok(())
        }
        Cmd::Fixture(FixtureCmd::Render { dir }) => {
            let manifest: SiteManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
            for p in &manifest.pages {
                let Some(png) = &p.screenshot else { continue };
                let html = fs::read_to_string(dir.join(&p.html))?;
                let shot = render_wireframe(&html, RENDER_WIDTH)?;
                fs::write(dir.join(png), shot.to_png())?;
                eprintln!("{png}: {}x{}", shot.width(), shot.height());
            }
            Ok(())
        }
    }
}

fn load_blocklist(path: Option<&Path>) -> Result<Blocklist> {
    match path {
        Some(p) => Ok(Blocklist::parse(
            &fs::read_to_string(p).with_context(|| format!("reading blocklist {}", p.display()))?,
        )),
        None => Ok(Blocklist::default()),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.parallelism {
        cfg.parallelism = n;
    }
    if let Some(n) = args.max_steps {
        cfg.max_steps = n;
    }
    cfg.reasoning |= args.reasoning;
    cfg.blocklist = load_blocklist(cfg.blocklist_path.as_deref())?;

    let env: Box<dyn Environment> = match (&args.fixture, &args.browser) {
        (Some(dir), _) => Box::new(FixtureEnv::load(dir)?),
        (None, Some(endpoint)) => {
            let script_path = args.page_script.as_ref().expect("clap enforces --page-script");
            let script = fs::read_to_string(script_path)
                .with_context(|| format!("reading page script {}", script_path.display()))?;
            Box::new(CdpEnv::new(CdpConfig::new(endpoint.clone(), script))?)
        }
        (None, None) => bail!("one of --fixture or --browser is required"),
    };
    let backend: Box<dyn ChatBackend> = match &args.transcripts {
        Some(dir) => Box::new(ScriptedBackend::load(dir)?),
        None => {
            let api_key = std::env::var("OPENAI_API_KEY").ok();
            if api_key.is_none() {
                bail!("OPENAI_API_KEY is not set; pass --transcripts to replay recorded responses");
            }
            Box::new(HttpBackend::new(HttpConfig {
                base_url: args.llm_base_url.clone(),
                model: args.model.clone(),
                api_key,
                ..HttpConfig::default()
            })?)
        }
    };

    let text = fs::read_to_string(&args.seeds).with_context(|| format!("reading {}", args.seeds.display()))?;
    let mut allow = AllowRules::default();
    if args.fixture.is_some() {
        allow.schemes.insert("fixture".into());
    }
    let seeds = filter_seeds(text.lines(), SeedSource::Custom, &cfg.blocklist, &allow);
    if seeds.skipped() > 0 {
        eprintln!("skipped {} seed lines", seeds.skipped());
    }
    let store = Datastore::new(&args.out);
    let report = run_batch(seeds.seeds, env.as_ref(), backend.as_ref(), &store, &cfg)?;
    fs::write(args.out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    print_json(&report)
}

fn eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Keynode { input, tolerance } => {
            let results: Vec<KeyNodeResult> = read_jsonl(&input)?;
            print_json(&keynode_metrics(&results, tolerance)?)
        }
        EvalCmd::Steps { input } => {
            let records: Vec<StepEvalRecord> = read_jsonl(&input)?;
            print_json(&step_metrics(&records)?)
        }
        EvalCmd::Runs { input } => {
            let rows: Vec<Vec<Value>> = read_jsonl(&input)?;
            let matrix = rows
                .into_iter()
                .enumerate()
                .map(|(i, row)| {
                    row.into_iter()
                        .map(|v| match v {
                            Value::Bool(b) => Ok(b),
                            Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
                            Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
                            other => bail!("task {}: outcome {other} is not 0/1 or a boolean", i + 1),
                        })
                        .collect::<Result<Vec<bool>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            print_json(&serde_json::json!({ "tasks": matrix.len(), "score": run_average(&matrix)? }))
        }
    }
}
