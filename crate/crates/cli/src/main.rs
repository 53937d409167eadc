use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfms::harness::{
    ablation_variants, aggregate, fixtures, load_dataset, read_records, read_trace, render_report, write_ablation,
    write_report, write_run, AblationReport, DatasetTag, Pipeline, Report, RunConfig, RunMode, RECORDS_FILE,
};

#[derive(Parser)]
#[command(name = "cfms", version, about = "Coarse-to-fine table question answering and fact verification")]
struct Cli {
    /// Log progress and provider retries to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer every task in a dataset and write records, traces and a report.
    Run {
        #[command(flatten)]
        input: RunInput,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate an existing records file (or a run directory) into a report.
    Eval {
        /// records.jsonl, or a directory containing one.
        records: PathBuf,
        /// Where to write report.json, report.txt and chain_length.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ablation sweep: stage removals and each operation disabled.
    Ablate {
        #[command(flatten)]
        input: RunInput,
        /// Output directory; each variant gets a subdirectory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretty-print a per-question trace file.
    Inspect {
        trace: PathBuf,
        /// Print whole responses instead of their first line.
        #[arg(long)]
        full: bool,
    },
    /// Write the bundled desk-scale fixtures (tasks, replay script, config).
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunInput {
    /// Dataset file: fixture jsonl, WikiTQ split tsv, or TabFact json.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset layout: fixture, wikitq or tabfact.
    #[arg(long, default_value = "fixture")]
    tag: DatasetTag,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured mode: full, no_coarse, no_fine or offline.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Override the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Disable an operation in addition to the configured ones; repeatable.
    #[arg(long = "disable-op")]
    disable_ops: Vec<String>,
    /// Split name recorded with every result.
    #[arg(long)]
    split: Option<String>,
    /// Only run the first N tasks (after sorting by id).
    #[arg(long)]
    limit: Option<usize>,
}

impl RunInput {
    fn load(&self) -> Result<(RunConfig, Vec<cfms::harness::Task>)> {
        let mut config = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        config.disabled_ops.extend(self.disable_ops.iter().cloned());
        if self.split.is_some() {
            config.split = self.split.clone();
        }
        config.validate()?;
        let mut tasks =
            load_dataset(&self.dataset, self.tag).with_context(|| format!("loading {}", self.dataset.display()))?;
        if let Some(n) = self.limit {
            tasks.truncate(n);
        }
        if tasks.is_empty() {
            bail!("{} contains no tasks", self.dataset.display());
        }
        Ok((config, tasks))
    }
}

fn run_once(config: &RunConfig, tasks: &[cfms::harness::Task], out: &Path) -> Result<Report> {
    let pipeline = Pipeline::from_config(config)?;
    tracing::info!(tasks = tasks.len(), mode = config.mode.name(), "running");
    let results = pipeline.run_all(tasks);
    let report = write_run(out, &results).with_context(|| format!("writing {}", out.display()))?;
    std::fs::write(out.join("config.toml"), config.to_toml())?;
    Ok(report)
}

fn inspect(path: &Path, full: bool) -> Result<()> {
    let trace = read_trace(path).with_context(|| format!("reading {}", path.display()))?;
    for r in &trace {
        let mut head = format!("[{}] {} #{}", r.stage, r.role, r.ordinal);
        if let Some(step) = r.step {
            head += &format!(" step {step}");
        }
        if let Some(attempt) = r.attempt {
            head += &format!(" attempt {attempt}");
        }
        if r.cached {
            head += " (cached)";
        }
        println!("{head}  prompt {}", &r.prompt_hash[..r.prompt_hash.len().min(12)]);
        if let Some(resp) = &r.raw_response {
            let shown = if full { resp.as_str() } else { resp.lines().next().unwrap_or("") };
            println!("    response: {shown}");
        }
        if let Some(call) = &r.parsed_call {
            println!("    call:     {call}");
        }
        if let (Some(rows), Some(cols)) = (r.rows, r.columns) {
            println!("    table:    {rows} x {cols}");
        }
        if let Some(e) = &r.error {
            println!("    error:    {e}");
        }
        if !r.flags.is_empty() {
            println!("    flags:    {}", r.flags.join(", "));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose { tracing::Level::INFO } else { tracing::Level::WARN })
        .init();

    match cli.command {
        Command::Run { input, out } => {
            let (config, tasks) = input.load()?;
            let report = run_once(&config, &tasks, &out)?;
            print!("{}", render_report(&report));
        }
        Command::Eval { records, out } => {
            let file = if records.is_dir() { records.join(RECORDS_FILE) } else { records.clone() };
            let recs = read_records(&file).with_context(|| format!("reading {}", file.display()))?;
            let report = aggregate(&recs)?;
            if let Some(out) = out {
                write_report(&out, &report)?;
            }
            print!("{}", render_report(&report));
        }
        Command::Ablate { input, out } => {
            let (config, tasks) = input.load()?;
            let mut reports = Vec::new();
            for (name, variant) in ablation_variants(&config) {
                eprintln!("variant {name}");
                reports.push((name.clone(), run_once(&variant, &tasks, &out.join(&name))?));
            }
            let ablation = AblationReport::new(&reports).expect("at least the base variant");
            write_ablation(&out, &ablation)?;
            print!("{}", ablation.render());
        }
        Command::Inspect { trace, full } => inspect(&trace, full)?,
        Command::Fixtures { out } => {
            fixtures::write_bundled(&out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {}, {} and {} to {}",
                fixtures::TASKS_FILE,
                fixtures::SCRIPT_FILE,
                fixtures::CONFIG_FILE,
                out.display()
            );
        }
    }
    Ok(())
}
