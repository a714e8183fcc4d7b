//! `ctxloco`: train, evaluate, translate, serve and demo context-aware
//! locomotion policies.
//!
//! Exit codes: 0 ok, 2 usage or configuration, 3 I/O, 4 translator backend.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ctxloco_core::ars::{save_curve, train, TrainOptions};
use ctxloco_core::embedding::{embed, Method};
use ctxloco_core::env::{EnvConfig, SurrogateEnv};
use ctxloco_core::eval::{run_study, select_cases, EvalSettings};
use ctxloco_core::policy::LinearPolicy;
use ctxloco_core::session::{session_setup, write_journal, EventKind, SessionSim};
use ctxloco_service::{AppState, PolicyRegistry, ServiceConfig};

use config::{build_translator, parse_translator_flag, RunConfig};

/// Error classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Io(anyhow::Error),
    Backend(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Backend(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Io(e) | Failure::Backend(e) => e,
        }
    }

    pub fn from_core(e: ctxloco_core::Error) -> Self {
        use ctxloco_core::Error as E;
        match e {
            E::Io { .. } => Failure::Io(e.into()),
            E::Backend(_) | E::Translation { .. } | E::Parse { .. } => Failure::Backend(e.into()),
            _ => Failure::Usage(e.into()),
        }
    }
}

impl From<ctxloco_core::Error> for Failure {
    fn from(e: ctxloco_core::Error) -> Self {
        Failure::from_core(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "ctxloco", version, about = "Context-aware locomotion: train, evaluate and steer linear policies")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum number of worker threads for rollouts.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with ARS on randomized surrogate terrains.
    Train(TrainArgs),
    /// Evaluate policies on the built-in terrain cases.
    Eval(EvalArgs),
    /// Translate a terrain description into levels and an embedding.
    Translate(TranslateArgs),
    /// Run the live session service.
    Serve(ServeArgs),
    /// Run one scripted session offline and print its state events.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct TranslatorFlags {
    /// Translator backend: mock or llm.
    #[arg(long = "translator")]
    translator: Option<String>,
    /// Persistent translation cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Context method: no_context, indexing or embedding.
    #[arg(long)]
    method: Option<Method>,
    /// Environment step budget.
    #[arg(long)]
    steps: Option<u64>,
    /// Seed for scenarios, directions and episode noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum steps per training episode.
    #[arg(long)]
    episode_cap: Option<usize>,
    /// Policy output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training curve CSV; defaults to `<out>.curve.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[command(flatten)]
    translator: TranslatorFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory with `<method>.json` policy files.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// all, low, high or a comma list of case letters.
    #[arg(long)]
    cases: Option<String>,
    /// Comma list of methods to evaluate.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Episodes per (method, case) cell.
    #[arg(long)]
    episodes: Option<usize>,
    /// Base seed for evaluation episodes.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum steps per episode; defaults to the policies' training cap.
    #[arg(long)]
    episode_cap: Option<usize>,
    /// Directory for report.csv and report.json.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[command(flatten)]
    translator: TranslatorFlags,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    /// Terrain description to translate.
    #[arg(long)]
    description: String,
    /// Translator backend: mock or llm.
    #[arg(long)]
    backend: Option<String>,
    /// Persistent translation cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Directory of policy files; each file stem becomes a policy id.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Listen address.
    #[arg(long)]
    bind: Option<String>,
    /// Listen port.
    #[arg(long)]
    port: Option<u16>,
    /// Web console assets served under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Where per-session journals are written.
    #[arg(long)]
    journal_dir: Option<PathBuf>,
    /// Step sessions as fast as possible instead of at wall-clock rate.
    #[arg(long)]
    turbo: bool,
    /// Simulation rate of each session when not in turbo mode.
    #[arg(long)]
    steps_per_second: Option<f64>,
    /// Stream every n-th step.
    #[arg(long)]
    decimation: Option<usize>,
    /// Live sessions kept before the least recently used is evicted.
    #[arg(long)]
    max_sessions: Option<usize>,
    /// Episode length of served sessions.
    #[arg(long)]
    episode_cap: Option<usize>,
    #[command(flatten)]
    translator: TranslatorFlags,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Policy file to run.
    #[arg(long)]
    policy: PathBuf,
    /// Initial terrain description.
    #[arg(long)]
    description: String,
    /// Mid-run context change, `STEP=DESCRIPTION`; repeatable.
    #[arg(long = "switch", value_parser = parse_switch)]
    switches: Vec<(u64, String)>,
    /// Episode length.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Episode seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print every n-th step event.
    #[arg(long, default_value_t = 50)]
    every: usize,
    /// Write the session journal (JSON lines) here.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[command(flatten)]
    translator: TranslatorFlags,
}

fn parse_switch(s: &str) -> Result<(u64, String), String> {
    let (step, text) = s.split_once('=').ok_or("expected STEP=DESCRIPTION")?;
    let step = step.trim().parse().map_err(|e| format!("bad step '{step}': {e}"))?;
    Ok((step, text.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = RunConfig::load(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Train(a) => cmd_train(config, a),
        Command::Eval(a) => cmd_eval(config, a),
        Command::Translate(a) => cmd_translate(config, a),
        Command::Serve(a) => cmd_serve(config, a),
        Command::Demo(a) => cmd_demo(config, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn apply_translator_flags(config: &mut RunConfig, flags: &TranslatorFlags) -> CmdResult {
    if let Some(name) = &flags.translator {
        config.translator = parse_translator_flag(name, &config.translator).map_err(Failure::Usage)?;
    }
    if let Some(cache) = &flags.cache {
        config.paths.cache_file = Some(cache.clone());
    }
    Ok(())
}

/// Writes command output; a closed stdout is an I/O failure, not a panic.
fn say(text: &str) -> CmdResult {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}")
        .and_then(|_| stdout.flush())
        .map_err(|e| io_failure(e, "writing to stdout"))
}

fn io_failure(e: impl Into<anyhow::Error>, what: &str) -> Failure {
    Failure::Io(e.into().context(what.to_string()))
}

fn cmd_train(mut config: RunConfig, args: TrainArgs) -> CmdResult {
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(s) = args.steps {
        config.ars.max_env_steps = s;
    }
    if let Some(s) = args.seed {
        config.ars.seed = s;
    }
    if let Some(c) = args.episode_cap {
        config.ars.episode_cap = c;
    }
    if let Some(o) = args.out {
        config.paths.policy_out = Some(o);
    }
    if let Some(c) = args.curve {
        config.paths.curve_out = Some(c);
    }
    apply_translator_flags(&mut config, &args.translator)?;

    config.ars.validate()?;
    let out = config
        .paths
        .policy_out
        .clone()
        .ok_or_else(|| Failure::Usage(anyhow!("no policy output path (use --out or paths.policy_out)")))?;
    let curve = config
        .paths
        .curve_out
        .clone()
        .unwrap_or_else(|| out.with_extension("curve.csv"));
    let translator = build_translator(&config.translator, config.paths.cache_file.as_deref())?;

    let env_config = EnvConfig::default().with_max_steps(config.ars.episode_cap);
    let options = TrainOptions {
        translator: &translator,
        block_order: config.block_order.clone(),
        jobs: None,
    };
    let outcome = train(|t| SurrogateEnv::new(*t, env_config), config.method, &config.ars, &options)?;

    outcome.policy.save(&out)?;
    save_curve(&curve, &outcome.records)?;
    let last = outcome.records.last().expect("validated budget runs at least one iteration");
    say(&format!(
        "trained {} policy: {} iterations, {} env steps, final mean reward {:.6}\npolicy: {}\ncurve: {}",
        config.method,
        outcome.records.len(),
        last.env_steps,
        last.mean_reward,
        out.display(),
        curve.display()
    ))
}

fn load_policy(path: &Path) -> Result<LinearPolicy, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("policy file {} not found", path.display())));
    }
    LinearPolicy::load(path).map_err(|e| match e {
        ctxloco_core::Error::Io { .. } => Failure::from_core(e),
        other => Failure::Usage(anyhow::Error::from(other).context(format!("invalid policy {}", path.display()))),
    })
}

/// The training episode cap shared by all `policies`, if they agree.
fn training_cap<'a>(policies: impl Iterator<Item = &'a LinearPolicy>) -> Option<usize> {
    let caps: Vec<Option<u64>> = policies
        .map(|p| p.metadata.config.get("episode_cap").and_then(|v| v.as_u64()))
        .collect();
    match caps.first() {
        Some(Some(first)) if caps.iter().all(|c| *c == Some(*first)) => usize::try_from(*first).ok(),
        _ => None,
    }
}

fn cmd_eval(mut config: RunConfig, args: EvalArgs) -> CmdResult {
    if let Some(p) = args.policies {
        config.paths.policies_dir = Some(p);
    }
    if let Some(c) = args.cases {
        config.eval.cases = c;
    }
    if let Some(m) = args.methods {
        config.eval.methods = m;
    }
    if let Some(n) = args.episodes {
        config.eval.n_episodes = n;
    }
    if let Some(s) = args.seed {
        config.eval.seed = s;
    }
    if let Some(c) = args.episode_cap {
        config.eval.episode_cap = Some(c);
    }
    if let Some(d) = args.report_dir {
        config.paths.report_dir = Some(d);
    }
    apply_translator_flags(&mut config, &args.translator)?;

    let cases = select_cases(&config.eval.cases)?;
    if config.eval.n_episodes == 0 {
        return Err(Failure::Usage(anyhow!("--episodes must be positive")));
    }
    let dir = config
        .paths
        .policies_dir
        .clone()
        .ok_or_else(|| Failure::Usage(anyhow!("no policy directory (use --policies or paths.policies_dir)")))?;
    let mut methods = config.eval.methods.clone();
    methods.sort();
    methods.dedup();
    let mut policies = BTreeMap::new();
    for m in &methods {
        let path = dir.join(format!("{}.json", m.name()));
        let policy = load_policy(&path)?;
        if policy.embedding_mode() != *m {
            return Err(Failure::Usage(anyhow!(
                "{} holds a {} policy, expected {m}",
                path.display(),
                policy.embedding_mode()
            )));
        }
        policies.insert(*m, policy);
    }
    let translator = build_translator(&config.translator, config.paths.cache_file.as_deref())?;

    let cap = match config.eval.episode_cap {
        Some(c) => c,
        None => training_cap(policies.values()).unwrap_or(config.ars.episode_cap),
    };
    let settings = EvalSettings {
        n_episodes: config.eval.n_episodes,
        seed: config.eval.seed,
        env: EnvConfig::default().with_max_steps(cap),
    };
    let report = run_study(&policies, &methods, &cases, &translator, &settings)?;
    if let Some(dir) = &config.paths.report_dir {
        report.write(dir)?;
    }
    let mut summary = report.grid();
    for m in &methods {
        if let Some(g) = report.grand_mean(*m) {
            summary.push_str(&format!("grand mean {m}: {g:.6}\n"));
        }
    }
    say(summary.trim_end())?;
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{} {}: {e}", c.method, c.case_id)))
        .collect();
    if !failed.is_empty() {
        return Err(Failure::Backend(anyhow!("{} cell(s) failed:\n{}", failed.len(), failed.join("\n"))));
    }
    Ok(())
}

fn cmd_translate(mut config: RunConfig, args: TranslateArgs) -> CmdResult {
    if let Some(b) = &args.backend {
        config.translator = parse_translator_flag(b, &config.translator).map_err(Failure::Usage)?;
    }
    if let Some(c) = args.cache {
        config.paths.cache_file = Some(c);
    }
    if args.description.trim().is_empty() {
        return Err(Failure::Usage(anyhow!("description is empty")));
    }
    let translator = build_translator(&config.translator, config.paths.cache_file.as_deref())?;
    let result = translator.translate(&args.description)?;
    let out = serde_json::json!({
        "description": args.description,
        "backend": result.backend,
        "levels": result.levels,
        "embedding": embed(&result.levels).values,
    });
    say(&serde_json::to_string(&out).map_err(|e| Failure::Usage(e.into()))?)?;
    eprintln!("cached: {}, latency: {} ms", result.cached, result.latency_ms);
    Ok(())
}

fn cmd_serve(mut config: RunConfig, args: ServeArgs) -> CmdResult {
    if let Some(p) = args.policies {
        config.paths.policies_dir = Some(p);
    }
    if let Some(b) = args.bind {
        config.serve.bind = b;
    }
    if let Some(p) = args.port {
        config.serve.port = p;
    }
    if let Some(d) = args.static_dir {
        config.paths.static_dir = Some(d);
    }
    if let Some(d) = args.journal_dir {
        config.paths.journal_dir = Some(d);
    }
    if args.turbo {
        config.serve.turbo = true;
    }
    if let Some(r) = args.steps_per_second {
        config.serve.steps_per_second = r;
    }
    if let Some(d) = args.decimation {
        config.serve.decimation = d;
    }
    if let Some(m) = args.max_sessions {
        config.serve.max_sessions = m;
    }
    apply_translator_flags(&mut config, &args.translator)?;

    let dir = config
        .paths
        .policies_dir
        .clone()
        .ok_or_else(|| Failure::Usage(anyhow!("no policy directory (use --policies or paths.policies_dir)")))?;
    let registry = PolicyRegistry::load_dir(&dir)?;
    if registry.is_empty() {
        log::warn!("no policies found in {}", dir.display());
    }
    if let Some(j) = &config.paths.journal_dir {
        fs::create_dir_all(j).map_err(|e| io_failure(e, &format!("creating {}", j.display())))?;
    }
    let translator = build_translator(&config.translator, config.paths.cache_file.as_deref())?;
    let service = ServiceConfig {
        steps_per_second: config.serve.steps_per_second,
        turbo: config.serve.turbo,
        decimation: config.serve.decimation.max(1),
        max_sessions: config.serve.max_sessions.max(1),
        env: EnvConfig::default().with_max_steps(args.episode_cap.unwrap_or(config.ars.episode_cap)),
        journal_dir: config.paths.journal_dir.clone(),
        static_dir: config.paths.static_dir.clone(),
        ..ServiceConfig::default()
    };
    let state = AppState::new(service, registry, translator);
    let addr = format!("{}:{}", config.serve.bind, config.serve.port);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| io_failure(e, "starting the async runtime"))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))
            .map_err(Failure::Io)?;
        eprintln!("listening on http://{addr}");
        ctxloco_service::serve(listener, state)
            .await
            .map_err(|e| io_failure(e, "serving"))
    })
}

fn cmd_demo(mut config: RunConfig, args: DemoArgs) -> CmdResult {
    apply_translator_flags(&mut config, &args.translator)?;
    let policy = load_policy(&args.policy)?;
    if !args.switches.is_empty() && policy.embedding_mode() != Method::Embedding {
        return Err(Failure::Usage(anyhow!(
            "--switch needs an embedding policy; this one is {}",
            policy.embedding_mode()
        )));
    }
    let translator = build_translator(&config.translator, config.paths.cache_file.as_deref())?;
    let levels = translator.translate(&args.description)?.levels;
    let mut switches = Vec::with_capacity(args.switches.len());
    for (step, text) in &args.switches {
        switches.push((*step, text.clone(), translator.translate(text)?.levels));
    }
    switches.sort_by_key(|s| s.0);

    let (terrain, embedding) = session_setup(&policy, Some(&levels), None)?;
    let env = EnvConfig::default().with_max_steps(args.steps.max(1));
    let mut sim = SessionSim::new(policy, terrain, embedding, Some(args.description.clone()), args.seed, env)?;

    let mut stdout = std::io::stdout().lock();
    let mut emit = |event: &ctxloco_core::session::StateEvent| -> CmdResult {
        let line = serde_json::to_string(event).map_err(|e| Failure::Usage(e.into()))?;
        writeln!(stdout, "{line}").map_err(|e| io_failure(e, "writing to stdout"))
    };
    emit(&sim.snapshot(EventKind::Reset))?;
    let mut pending = switches.into_iter().peekable();
    while !sim.is_done() {
        while let Some((_, text, levels)) = pending.next_if(|s| s.0 <= sim.total_steps()) {
            sim.apply_context(&text, &levels, false)?;
            emit(&sim.snapshot(EventKind::Context))?;
        }
        let event = sim.step()?;
        if event.done || event.t % args.every.max(1) == 0 {
            emit(&event)?;
        }
    }
    if let Some(path) = &args.journal {
        let file = fs::File::create(path).map_err(|e| io_failure(e, &format!("creating {}", path.display())))?;
        write_journal(std::io::BufWriter::new(file), sim.journal())?;
    }
    eprintln!(
        "episode finished after {} steps, cumulative reward {:.6}",
        sim.t(),
        sim.reward_cumulative()
    );
    Ok(())
}
