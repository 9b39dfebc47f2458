//! Command-line front end: build the IHDA of a model, check it for
//! concurrency-induced output inconsistencies, export it, run it as a
//! closed-loop controller, simulate the plant, and re-check recorded traces.

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ihda::controller::{self, CounterMode, RunOptions};
use ihda::cube::{parse_clause, parse_cube, Clause};
use ihda::plantsim::{Plant, PlantConfig, Scenario, ServeOptions};
use ihda::trace;
use ihda::translate::{self, restrict_place_labels};
use ihda::{build_ihda, Budget, Ipn};

/// Exit codes: 0 clean, 1 findings or nonconformance, 2 usage or parse
/// errors, 3 runtime or protocol errors.
#[derive(Debug)]
enum Failure {
    Parse(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ihda",
    about = "Translate interpreted Petri nets into interpreted higher-dimensional automata, \
             check them for concurrency faults and run them in closed loop"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct BudgetArgs {
    /// Maximum tokens allowed per place during construction.
    #[arg(long, default_value_t = 1)]
    budget_tokens: u32,
    /// Maximum number of distinct markings during construction.
    #[arg(long, default_value_t = 100_000)]
    budget_markings: usize,
}

impl BudgetArgs {
    fn budget(&self) -> Budget {
        Budget {
            max_tokens_per_place: self.budget_tokens,
            max_markings: self.budget_markings,
        }
    }
}

#[derive(clap::Args)]
struct ModelTransforms {
    /// Global output invariant clause, e.g. "!L2 | !Pusher". Repeatable.
    #[arg(long = "invariant")]
    invariants: Vec<String>,
    /// Replace a place's output label, e.g. "p_push=!L2 & !R2 & Pusher". Repeatable.
    #[arg(long = "restrict")]
    restricts: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the IHDA of a model and print cell counts by dimension.
    Build {
        model: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        transforms: ModelTransforms,
        /// Write the labeled cell store as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a model for contradictory cell outputs and invariant violations.
    Check {
        model: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        transforms: ModelTransforms,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Export the automaton as GraphViz (k-truncation, k <= 2) or JSON.
    Export {
        model: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        transforms: ModelTransforms,
        /// Write DOT of the k-truncation here.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Truncation level for the DOT export.
        #[arg(long, default_value_t = 2)]
        k: u32,
        /// Write the full cell store as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the model as a closed-loop controller against a plant server.
    Run {
        model: PathBuf,
        /// Plant address, host:port.
        #[arg(long)]
        connect: String,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        transforms: ModelTransforms,
        /// Start even if preflight finds contradictory or violating cells.
        #[arg(long)]
        force: bool,
        /// Write the cycle trace as newline-delimited JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        max_cycles: u64,
        /// Disconnect once the marking has left and returned to the initial one.
        #[arg(long)]
        stop_on_return: bool,
    },
    /// Serve the simulated transfer-cell plant on a TCP port.
    Simulate {
        #[arg(long, default_value_t = 9090)]
        port: u16,
        /// Pacing delay per cycle in milliseconds; 0 = lock-step, no pacing.
        #[arg(long, default_value_t = 1000)]
        period_ms: u64,
        /// Press the start button at this cycle. Repeatable.
        #[arg(long = "press-start-at")]
        press_start_at: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        d1: u32,
        #[arg(long, default_value_t = 5)]
        d2: u32,
        #[arg(long, default_value_t = 2)]
        pusher_stroke: u32,
        #[arg(long, default_value_t = 2)]
        load_dwell: u32,
        #[arg(long, default_value_t = 2)]
        transfer_dwell: u32,
        #[arg(long, default_value_t = 10_000)]
        max_cycles: u64,
        #[arg(long, default_value_t = 10_000)]
        accept_timeout_ms: u64,
    },
    /// Check a recorded trace against the concurrent-step semantics of a model.
    Conform {
        model: PathBuf,
        trace: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        transforms: ModelTransforms,
        /// Use the counter rules exactly as stated instead of the
        /// interpreted reading.
        #[arg(long)]
        strict_iv_a: bool,
    },
}

fn load_model(path: &Path, transforms: &ModelTransforms) -> Result<(Ipn, Vec<Clause>), Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    let mut ipn =
        Ipn::parse(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    let mut restrictions = Vec::new();
    for raw in &transforms.restricts {
        let (place, cube_text) = raw
            .split_once('=')
            .ok_or_else(|| Failure::Parse(format!("--restrict needs place=cube, got `{raw}`")))?;
        let cube = parse_cube(cube_text.trim(), ipn.outputs())
            .map_err(|e| Failure::Parse(format!("--restrict `{raw}`: {e}")))?;
        restrictions.push((place.trim().to_string(), cube));
    }
    if !restrictions.is_empty() {
        ipn = restrict_place_labels(&ipn, &restrictions)
            .map_err(|e| Failure::Parse(format!("--restrict: {e}")))?;
    }
    let mut clauses = Vec::new();
    for text in &transforms.invariants {
        let clause = parse_clause(text, ipn.outputs())
            .map_err(|e| Failure::Parse(format!("--invariant `{text}`: {e}")))?;
        clauses.push(clause);
    }
    Ok((ipn, clauses))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_build(
    model: &Path,
    budget: &BudgetArgs,
    transforms: &ModelTransforms,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let (ipn, _) = load_model(model, transforms)?;
    let ihda =
        build_ihda(&ipn, &budget.budget()).map_err(|e| Failure::Parse(format!("build: {e}")))?;
    for (dim, count) in ihda.hda().counts_by_dim() {
        println!("dim {dim}: {count} cells");
    }
    println!(
        "total: {} cells, dimension {}",
        ihda.hda().len(),
        ihda.hda().dim()
    );
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&ihda.cells_json())
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        write_file(path, &json)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_check(
    model: &Path,
    budget: &BudgetArgs,
    transforms: &ModelTransforms,
    json: Option<&Path>,
) -> Result<u8, Failure> {
    let (ipn, clauses) = load_model(model, transforms)?;
    let ihda =
        build_ihda(&ipn, &budget.budget()).map_err(|e| Failure::Parse(format!("build: {e}")))?;
    let inconsistent =
        translate::find_inconsistent(&ipn, &ihda).map_err(|e| Failure::Runtime(e.to_string()))?;
    let violations = translate::check_invariants(&ipn, &ihda, &clauses)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(path) = json {
        let report = serde_json::json!({
            "inconsistent": inconsistent.to_json(&ipn, &ihda),
            "invariant_violations": violations.to_json(&ipn, &ihda),
        });
        write_file(path, &serde_json::to_string_pretty(&report).unwrap())?;
    }
    if inconsistent.is_empty() && violations.is_empty() {
        println!("ok: no contradictory cells, no invariant violations");
        return Ok(0);
    }
    if !inconsistent.is_empty() {
        println!(
            "contradictory output labels ({} cells, {} maximal):",
            inconsistent.findings.len(),
            inconsistent.maximal().count()
        );
        print!("{}", inconsistent.render(&ipn));
    }
    if !violations.is_empty() {
        println!(
            "invariant violations ({} cells, {} maximal):",
            violations.findings.len(),
            violations.maximal().count()
        );
        print!("{}", violations.render(&ipn));
    }
    Ok(1)
}

fn cmd_export(
    model: &Path,
    budget: &BudgetArgs,
    transforms: &ModelTransforms,
    dot: Option<&Path>,
    k: u32,
    json: Option<&Path>,
) -> Result<u8, Failure> {
    if dot.is_none() && json.is_none() {
        return Err(Failure::Parse(
            "export needs --dot and/or --json".to_string(),
        ));
    }
    if dot.is_some() && k > 2 {
        return Err(Failure::Parse(format!(
            "DOT export supports k <= 2, got {k}"
        )));
    }
    let (ipn, _) = load_model(model, transforms)?;
    let ihda =
        build_ihda(&ipn, &budget.budget()).map_err(|e| Failure::Parse(format!("build: {e}")))?;
    if let Some(path) = dot {
        write_file(path, &ihda.hda().truncate(k).to_dot(k))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = json {
        let json_text = serde_json::to_string_pretty(&ihda.cells_json())
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        write_file(path, &json_text)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    model: &Path,
    connect: &str,
    budget: &BudgetArgs,
    transforms: &ModelTransforms,
    force: bool,
    trace_path: Option<&Path>,
    max_cycles: u64,
    stop_on_return: bool,
) -> Result<u8, Failure> {
    let (ipn, clauses) = load_model(model, transforms)?;
    let ihda =
        build_ihda(&ipn, &budget.budget()).map_err(|e| Failure::Parse(format!("build: {e}")))?;
    if !force {
        if let Err(e) = controller::preflight(&ipn, &ihda, &clauses) {
            eprintln!("preflight refusal: {e}");
            if let controller::ControlError::Refusal(refusal) = &e {
                for report in [&refusal.inconsistent, &refusal.violations] {
                    for finding in report.maximal() {
                        eprintln!(
                            "  cell {} x {}",
                            ipn.format_marking(&finding.cell.marking),
                            ipn.format_concset(&finding.cell.concset)
                        );
                    }
                }
            }
            eprintln!("use --force to run anyway");
            return Ok(1);
        }
    }
    let stream = TcpStream::connect(connect)
        .map_err(|e| Failure::Runtime(format!("connect {connect}: {e}")))?;
    let opts = RunOptions {
        max_cycles,
        stop_on_return,
    };
    let report = controller::run_client(&ipn, clauses, stream, &opts)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for (cycle, fault) in &report.faults {
        eprintln!("plant fault at cycle {cycle}: {fault}");
    }
    if let Some(path) = trace_path {
        let mut buf = Vec::new();
        trace::write_ndjson(&mut buf, &report.trace)
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        write_file(path, &String::from_utf8_lossy(&buf))?;
    }
    println!(
        "ran {} cycles, final marking {}{}",
        report.cycles,
        ipn.format_marking(&report.final_marking),
        if report.returned_to_initial {
            " (returned to initial)"
        } else {
            ""
        }
    );
    if let Some(reason) = &report.server_reason {
        println!("server closed: {reason}");
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    port: u16,
    period_ms: u64,
    press_start_at: &[u64],
    config: PlantConfig,
    max_cycles: u64,
    accept_timeout_ms: u64,
) -> Result<u8, Failure> {
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| Failure::Runtime(format!("bind port {port}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("plant listening on {addr}");
    let plant = Plant::new(config);
    let scenario = Scenario {
        overrides: press_start_at
            .iter()
            .map(|&c| (c, "start".to_string(), true))
            .collect(),
    };
    let opts = ServeOptions {
        period_ms,
        max_cycles,
        accept_timeout_ms,
    };
    let report = ihda::plantsim::serve(&listener, plant, &scenario, &opts)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "session over after {} cycles ({}); final state: {:?}",
        report.cycles, report.reason, report.final_state
    );
    Ok(0)
}

fn cmd_conform(
    model: &Path,
    trace_path: &Path,
    budget: &BudgetArgs,
    transforms: &ModelTransforms,
    strict: bool,
) -> Result<u8, Failure> {
    let (ipn, _) = load_model(model, transforms)?;
    let ihda =
        build_ihda(&ipn, &budget.budget()).map_err(|e| Failure::Parse(format!("build: {e}")))?;
    let file = fs::File::open(trace_path)
        .map_err(|e| Failure::Parse(format!("{}: {e}", trace_path.display())))?;
    let records = trace::read_ndjson(std::io::BufReader::new(file))
        .map_err(|e| Failure::Parse(format!("{}: {e}", trace_path.display())))?;
    let word = trace::to_io_word(&ipn, &records)
        .map_err(|e| Failure::Parse(format!("{}: {e}", trace_path.display())))?;
    let mode = if strict {
        CounterMode::StrictIvA
    } else {
        CounterMode::Interpreted
    };
    if controller::conforms(&ihda, &word, mode) {
        println!("trace conforms ({} cycles)", word.len());
        Ok(0)
    } else {
        println!("trace does NOT conform ({} cycles)", word.len());
        Ok(1)
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match &cli.cmd {
        Cmd::Build {
            model,
            budget,
            transforms,
            out,
        } => cmd_build(model, budget, transforms, out.as_deref()),
        Cmd::Check {
            model,
            budget,
            transforms,
            json,
        } => cmd_check(model, budget, transforms, json.as_deref()),
        Cmd::Export {
            model,
            budget,
            transforms,
            dot,
            k,
            json,
        } => cmd_export(
            model,
            budget,
            transforms,
            dot.as_deref(),
            *k,
            json.as_deref(),
        ),
        Cmd::Run {
            model,
            connect,
            budget,
            transforms,
            force,
            trace,
            max_cycles,
            stop_on_return,
        } => cmd_run(
            model,
            connect,
            budget,
            transforms,
            *force,
            trace.as_deref(),
            *max_cycles,
            *stop_on_return,
        ),
        Cmd::Simulate {
            port,
            period_ms,
            press_start_at,
            d1,
            d2,
            pusher_stroke,
            load_dwell,
            transfer_dwell,
            max_cycles,
            accept_timeout_ms,
        } => cmd_simulate(
            *port,
            *period_ms,
            press_start_at,
            PlantConfig {
                d1: *d1,
                d2: *d2,
                pusher_stroke: *pusher_stroke,
                load_dwell: *load_dwell,
                transfer_dwell: *transfer_dwell,
            },
            *max_cycles,
            *accept_timeout_ms,
        ),
        Cmd::Conform {
            model,
            trace,
            budget,
            transforms,
            strict_iv_a,
        } => cmd_conform(model, trace, budget, transforms, *strict_iv_a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
