use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spamcluster::evaluation::{
    bin_heatmap, noise_report, omega_sweep, parse_grid, sender_history_baseline, tau_sweep, Accordance,
};
use spamcluster::ingest::{parse_stream, ParsedStream};
use spamcluster::report::{self, Header};
use spamcluster::synthgen::{flip_labels, generate, WorkloadSpec};
use spamcluster::{
    snapshot, Decision, Engine, EngineConfig, Error, InputFormat, Label, MessageRecord, Result, SenderIdentity,
};

#[derive(Parser)]
#[command(name = "spamcluster", version, about = "Re-classify a mail log by clustering senders and recipients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a log stream and write one verdict per message.
    Run(RunArgs),
    /// Write a synthetic labeled corpus.
    Generate(GenerateArgs),
    /// Replay the corpus for each τ in a grid.
    SweepTau(SweepArgs),
    /// Replay the corpus once and score it for each ω in a grid.
    SweepOmega(SweepArgs),
    /// Spam fractions over a (P_s, P_r) bin grid.
    Heatmap(HeatmapArgs),
    /// Accordance of the sender-history baseline next to the engine's.
    Baseline(CorpusArgs),
    /// Flip ground-truth labels at a given rate and measure how many
    /// errors the engine corrects.
    NoiseExperiment(NoiseArgs),
    /// Process a stream and save the final state.
    SnapshotSave(RunArgs),
    /// Load a saved state, describe it and optionally resume on more input.
    SnapshotLoad(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Tsv,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => InputFormat::JsonLines,
            FormatArg::Tsv => InputFormat::DelimitedText,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IdentityArg {
    Domain,
    Full,
}

impl From<IdentityArg> for SenderIdentity {
    fn from(i: IdentityArg) -> Self {
        match i {
            IdentityArg::Domain => SenderIdentity::Domain,
            IdentityArg::Full => SenderIdentity::Full,
        }
    }
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Similarity threshold for joining a cluster [default: 0.5]
    #[arg(long)]
    tau: Option<f64>,
    /// Decision threshold [default: 0.85]
    #[arg(long)]
    omega: Option<f64>,
    /// Sender identity granularity [default: domain]
    #[arg(long, value_enum)]
    sender_identity: Option<IdentityArg>,
    /// Assign users before adding the message's edges.
    #[arg(long)]
    assign_before_update: bool,
    /// Score clusters before recording the message's label.
    #[arg(long)]
    score_before_update: bool,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let d = EngineConfig::default();
        let config = EngineConfig {
            tau: self.tau.unwrap_or(d.tau),
            omega: self.omega.unwrap_or(d.omega),
            sender_identity: self.sender_identity.map_or(d.sender_identity, Into::into),
            assign_before_update: self.assign_before_update,
            score_before_update: self.score_before_update,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks explicitly given options against a loaded configuration.
    fn check_against(&self, loaded: &EngineConfig) -> Result<()> {
        let clash = |name: &str| Err(Error::Config(format!("--{name} differs from the snapshot configuration")));
        if self.tau.is_some_and(|t| t != loaded.tau) {
            return clash("tau");
        }
        if self.omega.is_some_and(|o| o != loaded.omega) {
            return clash("omega");
        }
        if self.sender_identity.is_some_and(|i| SenderIdentity::from(i) != loaded.sender_identity) {
            return clash("sender-identity");
        }
        if self.assign_before_update && !loaded.assign_before_update {
            return clash("assign-before-update");
        }
        if self.score_before_update && !loaded.score_before_update {
            return clash("score-before-update");
        }
        Ok(())
    }
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Input log; `-` reads stdin. Without it a synthetic corpus is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input line format.
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for generated corpora and label flips.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Input log; `-` reads stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    /// Verdict output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Recorded in output headers.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Resume from a saved state.
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    /// Save the final state.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of messages [default: 3650]
    #[arg(long)]
    messages: Option<usize>,
    /// Fraction of auxiliary labels that disagree with the truth [default: 0.05]
    #[arg(long)]
    flip_rate: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// `start:end:step` or a comma list [default: 0:1:0.1 for τ, 0.5:1.0:0.05 for ω]
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_enum, default_value = "tsv")]
    report_format: ReportFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Tsv,
    Jsonl,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 0.25)]
    bin_size: f64,
    #[arg(long, value_enum, default_value = "tsv")]
    report_format: ReportFormat,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Fraction of ground-truth labels flipped to form the auxiliary labels.
    #[arg(long, default_value_t = 0.1)]
    flip_rate: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spamcluster: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run("run", a),
        Command::Generate(a) => cmd_generate(a),
        Command::SweepTau(a) => cmd_sweep(a, false),
        Command::SweepOmega(a) => cmd_sweep(a, true),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::NoiseExperiment(a) => cmd_noise(a),
        Command::SnapshotSave(a) => {
            if a.snapshot_out.is_none() {
                return Err(Error::Config("snapshot-save needs --snapshot-out".into()));
            }
            cmd_run("snapshot-save", a)
        }
        Command::SnapshotLoad(a) => {
            if a.snapshot_in.is_none() {
                return Err(Error::Config("snapshot-load needs --snapshot-in".into()));
            }
            if a.input.is_none() {
                return describe_snapshot(&a);
            }
            cmd_run("snapshot-load", a)
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    Ok(if path.as_os_str() == "-" {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        Box::new(BufReader::new(File::open(path)?))
    })
}

fn read_input(path: Option<&Path>, format: FormatArg, identity: SenderIdentity) -> Result<ParsedStream> {
    let reader = open_input(path.unwrap_or(Path::new("-")))?;
    let parsed = parse_stream(reader, format.into(), identity)?;
    if parsed.counts.malformed > 0 {
        eprintln!("spamcluster: skipped {} malformed line(s)", parsed.counts.malformed);
    }
    Ok(parsed)
}

/// Records plus optional per-message ground truth.
fn load_corpus(args: &CorpusArgs, identity: SenderIdentity) -> Result<(Vec<MessageRecord>, Vec<Option<Label>>)> {
    match &args.input {
        Some(p) => {
            let parsed = read_input(Some(p), args.format, identity)?;
            Ok((parsed.records, parsed.truth))
        }
        None => {
            let w = generate(&WorkloadSpec { seed: args.seed, ..WorkloadSpec::default() })?;
            Ok((w.records(identity), w.truth().into_iter().map(Some).collect()))
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    command: &'static str,
    fingerprint: String,
    messages: usize,
    spam: usize,
    legit: usize,
    deferred: usize,
    accordance_pct: f64,
    skipped_lines: usize,
    sender_clusters: usize,
    recipient_clusters: usize,
    elapsed_s: f64,
    throughput_msgs_per_s: f64,
}

fn cmd_run(command: &'static str, a: RunArgs) -> Result<()> {
    let mut engine = match &a.snapshot_in {
        Some(p) => {
            let e = snapshot::load(p)?;
            a.engine.check_against(e.config())?;
            e
        }
        None => Engine::new(a.engine.config()?)?,
    };
    let config = *engine.config();
    let fingerprint = config.fingerprint();
    let parsed = read_input(a.input.as_deref(), a.format, config.sender_identity)?;

    let mut out = open_output(a.output.as_deref())?;
    Header::new(command, fingerprint.clone(), a.seed).write(&mut out)?;
    let start = Instant::now();
    let mut summary = RunSummary {
        command,
        fingerprint,
        messages: 0,
        spam: 0,
        legit: 0,
        deferred: 0,
        accordance_pct: 0.0,
        skipped_lines: parsed.skipped(),
        sender_clusters: 0,
        recipient_clusters: 0,
        elapsed_s: 0.0,
        throughput_msgs_per_s: 0.0,
    };
    let mut verdicts = Vec::with_capacity(parsed.records.len());
    for record in &parsed.records {
        let v = engine.process(record)?;
        report::write_json_line(&mut out, &v)?;
        match v.decision {
            Decision::Spam => summary.spam += 1,
            Decision::Legitimate => summary.legit += 1,
            Decision::Deferred => summary.deferred += 1,
        }
        verdicts.push(v);
    }
    out.flush()?;
    let elapsed = start.elapsed().as_secs_f64();
    summary.messages = verdicts.len();
    summary.accordance_pct = Accordance::from_verdicts(&verdicts).accordance_pct;
    summary.sender_clusters = engine.state().sender_side.num_clusters();
    summary.recipient_clusters = engine.state().recipient_side.num_clusters();
    summary.elapsed_s = elapsed;
    summary.throughput_msgs_per_s = if elapsed > 0.0 { verdicts.len() as f64 / elapsed } else { 0.0 };

    if let Some(p) = &a.snapshot_out {
        snapshot::save(&engine, a.seed, p)?;
    }
    print_summary(&summary)
}

fn print_summary<T: Serialize>(summary: &T) -> Result<()> {
    let mut err = io::stderr().lock();
    report::write_json_line(&mut err, summary)
}

#[derive(Serialize)]
struct SnapshotInfo {
    fingerprint: String,
    config: EngineConfig,
    messages: u64,
    senders: usize,
    recipients: usize,
    sender_clusters: usize,
    recipient_clusters: usize,
}

fn describe_snapshot(a: &RunArgs) -> Result<()> {
    let engine = snapshot::load(a.snapshot_in.as_deref().expect("checked by caller"))?;
    a.engine.check_against(engine.config())?;
    let state = engine.state();
    let info = SnapshotInfo {
        fingerprint: engine.config().fingerprint(),
        config: *engine.config(),
        messages: engine.messages_processed(),
        senders: state.senders.len(),
        recipients: state.recipients.len(),
        sender_clusters: state.sender_side.num_clusters(),
        recipient_clusters: state.recipient_side.num_clusters(),
    };
    let mut out = open_output(a.output.as_deref())?;
    Header::new("snapshot-load", info.fingerprint.clone(), a.seed).write(&mut out)?;
    report::write_json_line(&mut out, &info)?;
    out.flush()?;
    if let Some(p) = &a.snapshot_out {
        snapshot::save(&engine, a.seed, p)?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let d = WorkloadSpec::default();
    let spec = WorkloadSpec {
        seed: a.seed,
        n_messages: a.messages.unwrap_or(d.n_messages),
        aux_flip_rate: a.flip_rate.unwrap_or(d.aux_flip_rate),
        ..d
    };
    let workload = generate(&spec)?;
    let canonical = serde_json::to_string(&spec).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = open_output(a.output.as_deref())?;
    Header::new("generate", spamcluster::engine::fingerprint_of(canonical.as_bytes()), a.seed).write(&mut out)?;
    match a.format {
        FormatArg::Jsonl => workload.write_jsonl(&mut out)?,
        FormatArg::Tsv => {
            for r in &workload.raw {
                writeln!(out, "{}\t{}\t{}\t{}", r.ts, r.from, r.to.join(","), r.aux)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs, omega: bool) -> Result<()> {
    let base = a.corpus.engine.config()?;
    let default_grid = if omega { "0.5:1.0:0.05" } else { "0:1:0.1" };
    let grid = parse_grid(a.grid.as_deref().unwrap_or(default_grid))?;
    let (records, _) = load_corpus(&a.corpus, base.sender_identity)?;
    let sweep = if omega { omega_sweep(&records, base, &grid)? } else { tau_sweep(&records, base, &grid)? };
    let mut out = open_output(a.corpus.output.as_deref())?;
    let command = if omega { "sweep-omega" } else { "sweep-tau" };
    Header::new(command, base.fingerprint(), a.corpus.seed).write(&mut out)?;
    match a.report_format {
        ReportFormat::Tsv => report::write_sweep_tsv(&mut out, &sweep)?,
        ReportFormat::Jsonl => report::write_sweep_jsonl(&mut out, &sweep)?,
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HeatmapSummary {
    messages: usize,
    bin_size: f64,
    corner_separation: Option<f64>,
}

fn cmd_heatmap(a: HeatmapArgs) -> Result<()> {
    let config = a.corpus.engine.config()?;
    let (records, _) = load_corpus(&a.corpus, config.sender_identity)?;
    let (_, verdicts) = spamcluster::engine::replay(config, &records)?;
    let grid = bin_heatmap(&verdicts, a.bin_size)?;
    let mut out = open_output(a.corpus.output.as_deref())?;
    Header::new("heatmap", config.fingerprint(), a.corpus.seed).write(&mut out)?;
    match a.report_format {
        ReportFormat::Tsv => report::write_bins_tsv(&mut out, &grid)?,
        ReportFormat::Jsonl => report::write_bins_jsonl(&mut out, &grid)?,
    }
    out.flush()?;
    print_summary(&HeatmapSummary {
        messages: grid.total(),
        bin_size: a.bin_size,
        corner_separation: grid.corner_separation(),
    })
}

#[derive(Serialize)]
struct BaselineReport {
    messages: usize,
    baseline: Accordance,
    engine: Accordance,
}

fn cmd_baseline(a: CorpusArgs) -> Result<()> {
    let config = a.engine.config()?;
    let (records, _) = load_corpus(&a, config.sender_identity)?;
    let (_, verdicts) = spamcluster::engine::replay(config, &records)?;
    let report = BaselineReport {
        messages: records.len(),
        baseline: sender_history_baseline(&records),
        engine: Accordance::from_verdicts(&verdicts),
    };
    let mut out = open_output(a.output.as_deref())?;
    Header::new("baseline", config.fingerprint(), a.seed).write(&mut out)?;
    report::write_json_line(&mut out, &report)?;
    out.flush()?;
    Ok(())
}

fn cmd_noise(a: NoiseArgs) -> Result<()> {
    let config = a.corpus.engine.config()?;
    let (mut records, truth) = load_corpus(&a.corpus, config.sender_identity)?;
    let truth: Vec<Label> = truth
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Config("noise experiment needs ground truth on every record".into()))?;
    let aux = flip_labels(&truth, a.flip_rate, a.corpus.seed)?;
    for (r, l) in records.iter_mut().zip(aux) {
        r.aux_label = l;
    }
    let (_, verdicts) = spamcluster::engine::replay(config, &records)?;
    let report = noise_report(a.flip_rate, &truth, &verdicts)?;
    let mut out = open_output(a.corpus.output.as_deref())?;
    Header::new("noise-experiment", config.fingerprint(), a.corpus.seed).write(&mut out)?;
    report::write_json_line(&mut out, &report)?;
    out.flush()?;
    Ok(())
}
