//! Command-line surface for the kgapprox engine: one-shot approximate
//! queries, exact-oracle runs, an interactive refinement REPL, a benchmark
//! harness, and synthetic graph generation.
//!
//! Exit codes: 0 when the error bound was met (or the command has no bound),
//! 2 when the iteration cap stopped the loop first, 1 on any error.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kgapprox::accuracy::{run_query, EstimateReport, QuerySession, TerminatedBy};
use kgapprox::graph::{load_graph, KnowledgeGraph};
use kgapprox::oracle::{exact_aggregate, exact_candidates_for_query, ExactResult};
use kgapprox::query::{parse_query, AggregateQuery, SamplerBackend};
use kgapprox::semantics::{load_embeddings, load_simtable, SimilarityProvider};
use kgapprox::synth::{generate_synthetic_kg, parse_generator_spec};

#[derive(Parser)]
#[command(
    name = "kgapprox",
    about = "Approximate aggregate queries over knowledge graphs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one approximate aggregate query and print the estimate report.
    Query(QueryArgs),
    /// Enumerate the exact answer set and aggregate it (the oracle).
    Exact(ExactArgs),
    /// Interactive loop: run queries and tighten the error bound in place.
    Repl(ReplArgs),
    /// Run every query in a directory repeatedly against the oracle.
    Bench(BenchArgs),
    /// Generate a synthetic graph (and ground truth) from a spec file.
    Gen(GenArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Node table: node_id <TAB> name <TAB> type1|type2|...
    #[arg(long)]
    nodes: PathBuf,
    /// Edge table: src_id <TAB> predicate <TAB> dst_id
    #[arg(long)]
    edges: PathBuf,
    /// Attribute table: node_id <TAB> attr_name <TAB> numeric_value
    #[arg(long)]
    attrs: PathBuf,
    /// Predicate similarity table: pred_a <TAB> pred_b <TAB> similarity
    #[arg(long, conflicts_with = "embeddings")]
    simtable: Option<PathBuf>,
    /// Predicate embeddings: predicate <TAB> v1 <TAB> ... <TAB> vd
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Relative error bound e_b
    #[arg(long)]
    eb: Option<f64>,
    /// CI significance level (confidence = 1 - alpha)
    #[arg(long)]
    alpha: Option<f64>,
    /// Correctness threshold on semantic similarity
    #[arg(long)]
    tau: Option<f64>,
    /// Hop bound of the search region
    #[arg(long)]
    n: Option<usize>,
    /// Distinct paths examined per answer during validation
    #[arg(long)]
    r: Option<usize>,
    /// Desired sample fraction of the candidate set
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of little samples
    #[arg(long)]
    t: Option<usize>,
    /// Little-sample size exponent
    #[arg(long)]
    m: Option<f64>,
    /// Bootstrap resamples per little sample
    #[arg(long = "B")]
    bootstrap_resamples: Option<usize>,
    /// Anchor self-loop weight
    #[arg(long)]
    pss: Option<f64>,
    /// RNG seed (falls back to KGAPPROX_SEED, then the query document)
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling backend
    #[arg(long, value_enum)]
    sampler: Option<SamplerFlag>,
    /// Evaluation-round cap
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerFlag {
    Categorical,
    Walk,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum OutputMode {
    Json,
    Table,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Query document: a JSON file path, or inline JSON starting with '{'
    #[arg(long)]
    query: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "json")]
    output: OutputMode,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    query: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "json")]
    output: OutputMode,
}

#[derive(Args)]
struct ReplArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "json")]
    output: OutputMode,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory of query documents (*.json), each run `--runs` times
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "table")]
    output: OutputMode,
}

#[derive(Args)]
struct GenArgs {
    /// Generator spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the TSV files and ground-truth sidecar
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    // Die quietly when the read end of a pipe closes (`kgapprox ... | head`);
    // Rust's default ignores SIGPIPE and panics on the failed print instead.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    // Exit 2 is reserved for the iteration cap, so usage errors (clap's
    // default exit 2) are remapped to the general error code 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Query(args) => cmd_query(args),
        Command::Exact(args) => cmd_exact(args),
        Command::Repl(args) => cmd_repl(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Gen(args) => cmd_gen(args),
    }
}

fn load_data(data: &DataArgs) -> Result<(KnowledgeGraph, SimilarityProvider), Box<dyn std::error::Error>> {
    let g = load_graph(&data.nodes, &data.edges, &data.attrs)?;
    let p = match (&data.simtable, &data.embeddings) {
        (Some(path), None) => load_simtable(path)?,
        (None, Some(path)) => load_embeddings(path)?,
        _ => return Err("exactly one of --simtable or --embeddings is required".into()),
    };
    Ok((g, p))
}

fn load_query_document(spec: &str) -> Result<AggregateQuery, Box<dyn std::error::Error>> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec).map_err(|e| format!("{spec}: {e}"))?
    };
    Ok(parse_query(&text)?)
}

/// Flag > KGAPPROX_SEED > query document, mirrored onto the parsed config.
fn apply_overrides(q: &mut AggregateQuery, c: &ConfigArgs) {
    let cfg = &mut q.config;
    if let Some(v) = c.eb {
        cfg.e_b = v;
    }
    if let Some(v) = c.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = c.tau {
        cfg.tau = v;
    }
    if let Some(v) = c.n {
        cfg.n = v;
    }
    if let Some(v) = c.r {
        cfg.r = v;
    }
    if let Some(v) = c.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = c.t {
        cfg.t = v;
    }
    if let Some(v) = c.m {
        cfg.m = v;
    }
    if let Some(v) = c.bootstrap_resamples {
        cfg.bootstrap_resamples = v;
    }
    if let Some(v) = c.pss {
        cfg.p_ss = v;
    }
    if let Some(v) = c.max_iter {
        cfg.max_iterations = v;
    }
    if let Some(v) = c.sampler {
        cfg.sampler_backend = match v {
            SamplerFlag::Categorical => SamplerBackend::Categorical,
            SamplerFlag::Walk => SamplerBackend::Walk,
        };
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    } else if let Ok(env) = std::env::var("KGAPPROX_SEED") {
        if let Ok(v) = env.parse::<u64>() {
            cfg.seed = v;
        }
    }
}

fn exit_code(report: &EstimateReport) -> i32 {
    match report.terminated_by {
        TerminatedBy::BoundMet => 0,
        TerminatedBy::IterationCap => 2,
    }
}

fn cmd_query(args: QueryArgs) -> Result<i32, Box<dyn std::error::Error>> {
    let (g, p) = load_data(&args.data)?;
    let mut q = load_query_document(&args.query)?;
    apply_overrides(&mut q, &args.config);
    let report = run_query(&g, &p, &q, &q.config)?;
    print_report(&report, args.output)?;
    Ok(exit_code(&report))
}

fn cmd_exact(args: ExactArgs) -> Result<i32, Box<dyn std::error::Error>> {
    let (g, p) = load_data(&args.data)?;
    let mut q = load_query_document(&args.query)?;
    apply_overrides(&mut q, &args.config);
    let candidates = exact_candidates_for_query(&g, &p, &q)?;
    let result = exact_aggregate(
        &g,
        &candidates,
        q.func,
        q.attr.as_deref(),
        &q.filters,
        q.group_by.as_ref(),
    )?;
    print_exact(&result, args.output)?;
    Ok(0)
}

fn cmd_repl(args: ReplArgs) -> Result<i32, Box<dyn std::error::Error>> {
    let (g, p) = load_data(&args.data)?;
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    let mut session: Option<QuerySession> = None;
    let mut last_report: Option<EstimateReport> = None;

    eprintln!("commands: run <query.json|inline-json>, eb <value>, show, quit");
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        let (cmd, rest) = match line.split_once(char::is_whitespace) {
            Some((c, r)) => (c, r.trim()),
            None => (line, ""),
        };
        match cmd {
            "" => {}
            "quit" | "exit" => break,
            "run" => match repl_run(&g, &p, rest, &args.config) {
                Ok((s, report, elapsed_ms)) => {
                    print_report(&report, args.output)?;
                    eprintln!(
                        "samples: {} ({} validated), {:.1} ms",
                        report.sample_size, report.validated_size, elapsed_ms
                    );
                    session = Some(s);
                    last_report = Some(report);
                }
                Err(e) => eprintln!("error: {e}"),
            },
            "eb" => {
                let Some(s) = session.as_mut() else {
                    eprintln!("error: no active session; `run` a query first");
                    continue;
                };
                let Ok(value) = rest.parse::<f64>() else {
                    eprintln!("error: `eb` needs a number, got `{rest}`");
                    continue;
                };
                let before = last_report.as_ref().map(|r| r.sample_size).unwrap_or(0);
                let start = Instant::now();
                match s.refine_error_bound(value) {
                    Ok(report) => {
                        let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
                        let added = report.sample_size.saturating_sub(before);
                        print_report(&report, args.output)?;
                        if added == 0 {
                            eprintln!("already satisfied: 0 new samples, {elapsed_ms:.1} ms");
                        } else {
                            eprintln!("added {added} samples, {elapsed_ms:.1} ms");
                        }
                        last_report = Some(report);
                    }
                    Err(e) => eprintln!("error: {e}"),
                }
            }
            "show" => match &last_report {
                Some(r) => print_report(r, args.output)?,
                None => eprintln!("error: nothing to show yet"),
            },
            other => eprintln!("error: unknown command `{other}`"),
        }
        out.flush()?;
    }
    Ok(0)
}

/// The session borrows graph and provider from the caller, so building it in
/// a helper keeps the borrow local to one lifetime.
fn repl_run<'a>(
    g: &'a KnowledgeGraph,
    p: &'a SimilarityProvider,
    spec: &str,
    config: &ConfigArgs,
) -> Result<(QuerySession<'a>, EstimateReport, f64), Box<dyn std::error::Error>> {
    let mut q = load_query_document(spec)?;
    apply_overrides(&mut q, config);
    let start = Instant::now();
    let mut session = QuerySession::new(g, p, &q, q.config.clone())?;
    let report = session.run()?;
    Ok((session, report, start.elapsed().as_secs_f64() * 1000.0))
}

#[derive(serde::Serialize)]
struct BenchRow {
    query: String,
    estimate_mean: f64,
    oracle: f64,
    rel_error_mean: f64,
    time_ms_mean: f64,
    sample_size_mean: f64,
    bound_met: usize,
    runs: usize,
}

fn cmd_bench(args: BenchArgs) -> Result<i32, Box<dyn std::error::Error>> {
    if args.runs == 0 {
        return Err("--runs must be at least 1".into());
    }
    let (g, p) = load_data(&args.data)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.queries)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no .json queries under {}", args.queries.display()).into());
    }

    let mut rows = Vec::new();
    for path in &paths {
        let mut q = load_query_document(&path.to_string_lossy())?;
        apply_overrides(&mut q, &args.config);

        let candidates = exact_candidates_for_query(&g, &p, &q)?;
        let oracle = exact_aggregate(
            &g,
            &candidates,
            q.func,
            q.attr.as_deref(),
            &q.filters,
            q.group_by.as_ref(),
        )?
        .value;

        let base_seed = q.config.seed;
        let mut est_sum = 0.0;
        let mut rel_sum = 0.0;
        let mut time_sum = 0.0;
        let mut size_sum = 0.0;
        let mut bound_met = 0;
        for run in 0..args.runs {
            let mut cfg = q.config.clone();
            cfg.seed = base_seed + run as u64;
            let start = Instant::now();
            let report = run_query(&g, &p, &q, &cfg)?;
            time_sum += start.elapsed().as_secs_f64() * 1000.0;
            est_sum += report.estimate;
            if oracle != 0.0 {
                rel_sum += (report.estimate - oracle).abs() / oracle.abs();
            }
            size_sum += report.sample_size as f64;
            if report.terminated_by == TerminatedBy::BoundMet {
                bound_met += 1;
            }
        }
        let runs = args.runs as f64;
        rows.push(BenchRow {
            query: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            estimate_mean: est_sum / runs,
            oracle,
            rel_error_mean: rel_sum / runs,
            time_ms_mean: time_sum / runs,
            sample_size_mean: size_sum / runs,
            bound_met,
            runs: args.runs,
        });
    }

    match args.output {
        OutputMode::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
        OutputMode::Table => {
            println!(
                "{:<24} {:>12} {:>12} {:>10} {:>10} {:>10} {:>9}",
                "query", "estimate", "oracle", "rel_err", "time_ms", "samples", "bound_met"
            );
            for r in &rows {
                println!(
                    "{:<24} {:>12} {:>12} {:>10} {:>10} {:>10} {:>6}/{}",
                    r.query,
                    sig4(r.estimate_mean),
                    sig4(r.oracle),
                    sig4(r.rel_error_mean),
                    sig4(r.time_ms_mean),
                    sig4(r.sample_size_mean),
                    r.bound_met,
                    r.runs
                );
            }
        }
    }
    Ok(0)
}

fn cmd_gen(args: GenArgs) -> Result<i32, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| format!("{}: {e}", args.spec.display()))?;
    let spec = parse_generator_spec(&text)?;
    let synthetic = generate_synthetic_kg(&spec, args.seed)?;

    std::fs::create_dir_all(&args.out)?;
    let write = |name: &str, content: &str| -> std::io::Result<PathBuf> {
        let path = args.out.join(name);
        std::fs::write(&path, content)?;
        Ok(path)
    };
    let mut written = vec![
        write("nodes.tsv", &synthetic.nodes_tsv)?,
        write("edges.tsv", &synthetic.edges_tsv)?,
        write("attrs.tsv", &synthetic.attrs_tsv)?,
        write("simtable.tsv", &synthetic.simtable_tsv)?,
    ];
    if let Some(truth) = &synthetic.truth {
        let json = serde_json::to_string_pretty(truth)?;
        written.push(write("truth.json", &json)?);
    }
    for path in &written {
        println!("{}", path.display());
    }
    Ok(0)
}

/// Rounds to 4 significant digits for table output; JSON stays full width.
fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = x.abs().log10().floor() as i32;
    let decimals = (3 - digits).max(0) as usize;
    format!("{x:.decimals$}")
}

fn print_report(
    report: &EstimateReport,
    mode: OutputMode,
) -> Result<(), Box<dyn std::error::Error>> {
    match mode {
        OutputMode::Json => println!("{}", serde_json::to_string_pretty(report)?),
        OutputMode::Table => {
            let mut rows: Vec<(String, String)> = vec![
                ("estimate".into(), sig4(report.estimate)),
                (
                    "moe".into(),
                    report.moe.map(sig4).unwrap_or_else(|| "-".into()),
                ),
                (
                    "ci".into(),
                    report
                        .ci
                        .map(|c| format!("[{}, {}]", sig4(c[0]), sig4(c[1])))
                        .unwrap_or_else(|| "-".into()),
                ),
                ("confidence".into(), sig4(report.confidence)),
                ("iterations".into(), report.iterations.to_string()),
                ("sample_size".into(), report.sample_size.to_string()),
                ("validated_size".into(), report.validated_size.to_string()),
                (
                    "terminated_by".into(),
                    match report.terminated_by {
                        TerminatedBy::BoundMet => "bound-met".into(),
                        TerminatedBy::IterationCap => "iteration-cap".into(),
                    },
                ),
            ];
            if let Some(groups) = &report.groups {
                for (key, g) in groups {
                    let ci = g
                        .ci
                        .map(|c| format!(" ci=[{}, {}]", sig4(c[0]), sig4(c[1])))
                        .unwrap_or_default();
                    let tag = if g.low_support { " (low support)" } else { "" };
                    rows.push((
                        format!("group[{key}]"),
                        format!("{}{}{}", sig4(g.estimate), ci, tag),
                    ));
                }
            }
            for (k, v) in rows {
                println!("{k:<16} {v}");
            }
        }
    }
    Ok(())
}

fn print_exact(result: &ExactResult, mode: OutputMode) -> Result<(), Box<dyn std::error::Error>> {
    match mode {
        OutputMode::Json => println!("{}", serde_json::to_string_pretty(result)?),
        OutputMode::Table => {
            println!("{:<16} {}", "value", sig4(result.value));
            println!("{:<16} {}", "answer_count", result.answer_count);
            if let Some(groups) = &result.per_group {
                let groups: &BTreeMap<_, _> = groups;
                for (key, g) in groups {
                    println!("group[{key}]        {} (n={})", sig4(g.value), g.count);
                }
            }
        }
    }
    Ok(())
}
