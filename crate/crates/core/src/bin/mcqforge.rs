use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mcqforge::backends::BackendKind;
use mcqforge::corpus::{self, McqItem, SquadItem};
use mcqforge::humaneval::{self, AssignmentPlan, RatingRecord};
use mcqforge::interface::pipeline::{self, AnswerInput, QuestionInput};
use mcqforge::interface::{PipelineConfig, RatingStore, ServiceState};
use mcqforge::jsonl;
use mcqforge::metrics::{self, Aggregation, EvalConfig};
use mcqforge::qafilter::AccuracyReport;

#[derive(Parser)]
#[command(
    name = "mcqforge",
    version,
    about = "Multiple-choice question generation pipeline"
)]
struct Cli {
    /// Pipeline config (TOML). Falls back to $MCQFORGE_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation, shuffling and assignment planning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Backend kind for every model role.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read SQuAD v2 and/or RACE into JSONL.
    Ingest(IngestArgs),
    /// Distractor length statistics per split.
    Stats(StatsArgs),
    /// Generate a question for every (context, answer) record.
    GenerateQuestions(InputArgs),
    /// Generate three distractors for every (context, question, answer) record.
    GenerateDistractors(InputArgs),
    /// Answer every MCQ with the QA model and accept or reject it.
    QaFilter(InputArgs),
    /// BLEU and ROUGE-L of generated distractors against references.
    Evaluate(EvaluateArgs),
    /// Plan the human-evaluation assignment from QA verdicts.
    HumanevalPlan(PlanArgs),
    /// Serve the rating API.
    Serve(ServeArgs),
    /// Agreement, significance and percentage tables from ratings.
    HumanevalStats(HumanevalStatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// SQuAD v2 JSON file (default: paths.squad).
    #[arg(long)]
    squad: Option<PathBuf>,
    /// RACE directory (default: paths.race).
    #[arg(long)]
    race: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// MCQ JSONL file; when absent the RACE directory is read.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    race: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Pool n-gram counts over the corpus instead of averaging sentence scores.
    #[arg(long)]
    pooled: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    assessors: Option<usize>,
    #[arg(long)]
    shared: Option<usize>,
    #[arg(long)]
    unique: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    plan: PathBuf,
    /// MCQ JSONL files holding the texts of planned items.
    #[arg(long = "items", required = true, num_args = 1..)]
    items: Vec<PathBuf>,
    /// Rating log (default: <out>/ratings.jsonl).
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    show_context: bool,
}

#[derive(Args)]
struct HumanevalStatsArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Ratings as JSONL or CSV (by extension).
    #[arg(long)]
    ratings: PathBuf,
    /// Also export the ratings with verdicts as CSV.
    #[arg(long)]
    export_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::discover(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.generation.seed = seed;
        cfg.humaneval.seed = seed;
    }
    if let Some(kind) = cli.backend {
        for b in [
            &mut cfg.backends.qg,
            &mut cfg.backends.dg,
            &mut cfg.backends.qa,
        ] {
            b.kind = kind;
        }
    }
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    let out = cfg.paths.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Stats(a) => stats(&cfg, a),
        Command::GenerateQuestions(a) => {
            let tok = cfg.tokenizer()?;
            let backend = cfg
                .backends
                .qg
                .build_generator(&tok)
                .context("question generator backend")?;
            let inputs: Vec<AnswerInput> = jsonl::read(&a.input)?;
            let output = pipeline::generate_questions(
                &inputs,
                backend.as_ref(),
                &tok,
                &cfg.generation,
                cfg.generation.seed,
                cfg.workers,
            )?;
            let path = pipeline::write_stage(&out, pipeline::QUESTIONS_FILE, &output)?;
            report_stage(&path, output.records.len(), output.failures.len());
            Ok(())
        }
        Command::GenerateDistractors(a) => {
            let tok = cfg.tokenizer()?;
            let backend = cfg
                .backends
                .dg
                .build_generator(&tok)
                .context("distractor generator backend")?;
            let inputs: Vec<QuestionInput> = jsonl::read(&a.input)?;
            let output = pipeline::generate_distractors(
                &inputs,
                backend.as_ref(),
                &tok,
                &cfg.generation,
                cfg.generation.seed,
                cfg.workers,
            )?;
            let path = pipeline::write_stage(&out, pipeline::MCQ_FILE, &output)?;
            report_stage(&path, output.records.len(), output.failures.len());
            Ok(())
        }
        Command::QaFilter(a) => {
            let tok = cfg.tokenizer()?;
            let scorer = cfg
                .backends
                .qa
                .build_scorer(&tok)
                .context("QA scorer backend")?;
            let items: Vec<McqItem> = jsonl::read(&a.input)?;
            if items.is_empty() {
                bail!("{} contains no items", a.input.display());
            }
            let verdicts = pipeline::qa_filter(
                &items,
                scorer.as_ref(),
                &tok,
                cfg.qa.max_len,
                cfg.generation.seed,
                cfg.workers,
            )?;
            let (acc, rej) = pipeline::partition_by_verdict(&items, &verdicts);
            jsonl::write(out.join(pipeline::VERDICTS_FILE), &verdicts)?;
            jsonl::write(out.join(pipeline::ACCEPTED_FILE), &acc)?;
            jsonl::write(out.join(pipeline::REJECTED_FILE), &rej)?;
            let report = AccuracyReport::from_verdicts(&verdicts)?;
            print!(
                "{}",
                AccuracyReport::render_table(&[("QA filter", &report)])
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let generated: Vec<McqItem> = jsonl::read(&a.generated)?;
            let references: Vec<McqItem> = jsonl::read(&a.reference)?;
            let eval_cfg = EvalConfig {
                aggregation: if a.pooled {
                    Aggregation::Pooled
                } else {
                    Aggregation::Averaged
                },
                ..EvalConfig::default()
            };
            let report = pipeline::evaluate(&generated, &references, &eval_cfg)?;
            write_json(&out.join("evaluation.json"), &report)?;
            print!(
                "{}",
                metrics::render_table(&[("Generated", &report.averaged)])
            );
            Ok(())
        }
        Command::HumanevalPlan(a) => {
            let mut params = cfg.humaneval;
            params.n_assessors = a.assessors.unwrap_or(params.n_assessors);
            params.shared_n = a.shared.unwrap_or(params.shared_n);
            params.unique_n = a.unique.unwrap_or(params.unique_n);
            let verdicts = jsonl::read(&a.verdicts)?;
            let plan = pipeline::plan_from_verdicts(&verdicts, params)?;
            write_json(&out.join("plan.json"), &plan)?;
            println!(
                "{} distinct items, {} rating tasks, {} accepted / {} rejected",
                plan.distinct_items(),
                plan.task_count(),
                plan.accepted_items.len(),
                plan.rejected_items.len()
            );
            Ok(())
        }
        Command::Serve(a) => serve(&cfg, a),
        Command::HumanevalStats(a) => humaneval_stats(&out, a),
    }
}

fn report_stage(path: &Path, records: usize, failures: usize) {
    println!("wrote {records} records to {}", path.display());
    if failures > 0 {
        println!("{failures} items failed; see the .failures.jsonl file next to it");
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ingest(cfg: &PipelineConfig, a: IngestArgs) -> Result<()> {
    let squad = a.squad.or_else(|| cfg.paths.squad.clone());
    let race = a.race.or_else(|| cfg.paths.race.clone());
    if squad.is_none() && race.is_none() {
        bail!("nothing to ingest: pass --squad and/or --race, or set paths.squad / paths.race");
    }
    let out = &cfg.paths.out;
    if let Some(p) = squad {
        let items: Vec<SquadItem> = corpus::ingest_squad(&p)?;
        jsonl::write(out.join("squad.jsonl"), &items)?;
        println!(
            "squad: {} answerable items from {}",
            items.len(),
            p.display()
        );
    }
    if let Some(p) = race {
        let items = corpus::ingest_race(&p)?;
        jsonl::write(out.join("race.jsonl"), &items)?;
        println!("race: {} items from {}", items.len(), p.display());
    }
    Ok(())
}

fn stats(cfg: &PipelineConfig, a: StatsArgs) -> Result<()> {
    let items: Vec<McqItem> = match (a.input, a.race.or_else(|| cfg.paths.race.clone())) {
        (Some(p), _) => jsonl::read(&p)?,
        (None, Some(dir)) => corpus::ingest_race(&dir)?,
        (None, None) => bail!("pass --input <mcq.jsonl> or --race <dir>, or set paths.race"),
    };
    let by_split = corpus::stats_by_split(&items);
    let all = corpus::corpus_stats(&items);
    let report = serde_json::json!({ "all": all, "splits": by_split });
    write_json(&cfg.paths.out.join("stats.json"), &report)?;
    println!("{:<8} {:>8} {:>10} {:>10}", "split", "items", "mean", "std");
    for (split, s) in &by_split {
        println!(
            "{:<8} {:>8} {:>10.3} {:>10.3}",
            split.to_string(),
            s.item_count,
            s.distractor_word_mean,
            s.distractor_word_std
        );
    }
    println!(
        "{:<8} {:>8} {:>10.3} {:>10.3}",
        "all", all.item_count, all.distractor_word_mean, all.distractor_word_std
    );
    Ok(())
}

fn serve(cfg: &PipelineConfig, a: ServeArgs) -> Result<()> {
    let plan: AssignmentPlan = read_json(&a.plan)?;
    let mut texts = HashMap::new();
    for p in &a.items {
        for it in jsonl::read::<McqItem>(p)? {
            texts.insert(it.id.clone(), (&it).into());
        }
    }
    let log = a
        .ratings
        .unwrap_or_else(|| cfg.paths.out.join("ratings.jsonl"));
    let store = RatingStore::open(&log)?;
    let show_context = a.show_context || cfg.service.show_context;
    let state = ServiceState::new(plan, texts, store, show_context).map_err(anyhow::Error::msg)?;
    let bind = a.bind.unwrap_or_else(|| cfg.service.bind.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(mcqforge::interface::serve(&bind, Arc::new(state)))
        .with_context(|| format!("serving on {bind}"))
}

fn humaneval_stats(out: &Path, a: HumanevalStatsArgs) -> Result<()> {
    let plan: AssignmentPlan = read_json(&a.plan)?;
    let is_csv = a
        .ratings
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let ratings: Vec<RatingRecord> = if is_csv {
        let file = std::fs::File::open(&a.ratings)
            .with_context(|| format!("reading {}", a.ratings.display()))?;
        humaneval::read_ratings_csv(file)?
            .into_iter()
            .map(|(r, _)| r)
            .collect()
    } else {
        jsonl::read(&a.ratings)?
    };
    for r in &ratings {
        r.validate()?;
    }
    let stats = humaneval::compute_stats(&plan, &ratings)?;
    write_json(&out.join("humaneval_stats.json"), &stats)?;
    if let Some(csv_path) = a.export_csv {
        let file = std::fs::File::create(&csv_path)
            .with_context(|| format!("writing {}", csv_path.display()))?;
        humaneval::write_ratings_csv(file, &ratings, |item| plan.verdict(item))?;
    }
    let fmt_kappa = |k: &Option<humaneval::KappaResult>| {
        k.as_ref().map_or("pending".to_string(), |k| {
            format!("{:.3} ({} items)", k.kappa, k.n_subjects)
        })
    };
    let fmt_chi = |c: &Option<humaneval::ChiSquaredTest>| {
        c.as_ref().map_or("pending".to_string(), |c| {
            format!("{:.3} (df {}, p = {:.4})", c.statistic, c.df, c.p_value)
        })
    };
    println!("ratings: {}", stats.ratings);
    println!("Fleiss' kappa Q1: {}", fmt_kappa(&stats.kappa_q1));
    println!("Fleiss' kappa Q2: {}", fmt_kappa(&stats.kappa_q2));
    println!("chi-squared Q1:   {}", fmt_chi(&stats.chi2_q1));
    println!("chi-squared Q2:   {}", fmt_chi(&stats.chi2_q2));
    print!("{}", stats.table.render());
    for note in &stats.pending {
        println!("pending: {note}");
    }
    Ok(())
}
