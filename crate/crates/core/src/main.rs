use std::error::Error;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use main_annotate::agreement::{
    format_kappa, kappa_by_category, kappa_by_cohort, AnnotationStore, KappaResult, Scope,
};
use main_annotate::annotate::{annotate_corpus, AnnotateOptions, RunManifest};
use main_annotate::chat::{render_numbered_block, Cohort, Overrides, ParticipantMeta, TextMode};
use main_annotate::config::{Config, CONFIG_ENV};
use main_annotate::corpus::{load_annotations, load_corpus, read_manifest, Corpus};
use main_annotate::llm::LlmClient;
use main_annotate::report::{build_report, score_rows, ReportFormat, ReportSpec, WorkflowInputs};
use main_annotate::review::{serve, total_review_seconds, ReviewConfig, ReviewService, GOLD_RATER};
use main_annotate::sampling::stratified_sample;

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "main-annotate",
    version,
    about = "LLM annotation of MAIN narrative macrostructure"
)]
struct Cli {
    /// TOML config with model profiles.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus directory and print a summary of each transcript.
    Parse {
        dir: PathBuf,
        /// Also print the numbered line block of each transcript.
        #[arg(long, value_enum)]
        block: Option<Mode>,
    },
    /// Proportional stratified sample of participants by cohort.
    Sample {
        /// Corpus directory or corpus manifest JSON.
        input: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Annotate a corpus with a model profile.
    Annotate {
        #[arg(long)]
        model: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep narratives whose annotation file already validates.
        #[arg(long)]
        resume: bool,
    },
    /// Story structure score (0-17) of every annotation, as CSV.
    Score {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Pairwise Cohen's kappa between raters.
    Agree {
        #[command(flatten)]
        src: Sources,
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<String>,
        #[arg(long, value_enum, default_value_t = By::Overall)]
        by: By,
        #[arg(long)]
        json: bool,
    },
    /// Agreement, score, cost and workflow report.
    Report {
        #[command(flatten)]
        src: Sources,
        #[arg(long, value_delimiter = ',', default_value = "human1,human2")]
        humans: Vec<String>,
        /// Defaults to every other rater found.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Run manifests for the cost and time table.
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
        /// Verified directory of a review pass, for review time.
        #[arg(long)]
        review_dir: Option<PathBuf>,
        /// Workflow inputs; override values derived from manifests.
        #[arg(long)]
        stories: Option<usize>,
        #[arg(long)]
        llm_minutes: Option<f64>,
        #[arg(long)]
        review_minutes: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Human verification service.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
}

#[derive(Subcommand)]
enum ReviewCommand {
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        verified_dir: PathBuf,
        /// Adjudicate two human annotation directories into a gold set.
        #[arg(long, num_args = 2, value_names = ["HUMAN1_DIR", "HUMAN2_DIR"])]
        adjudicate: Option<Vec<PathBuf>>,
        #[arg(long)]
        rater_id: Option<String>,
        /// Built review UI to serve at /.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Sources {
    /// Annotation directories (files carry their rater id).
    #[arg(long = "annotations", required = true)]
    annotations: Vec<PathBuf>,
    /// Corpus directory, for cohorts.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Raw,
    Clean,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum By {
    Overall,
    Category,
    Cohort,
}

fn load_config(path: Option<&Path>) -> Res<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn load_store(src: &Sources) -> Res<AnnotationStore> {
    let mut store = AnnotationStore::new();
    for dir in &src.annotations {
        let loaded = load_annotations(dir)?;
        for (path, why) in loaded.skipped {
            log::debug!("skipping {path}: {why}");
        }
        for a in loaded.sets {
            if let Some(prev) = store.insert(a) {
                log::warn!(
                    "{} annotated {} twice, keeping the later file",
                    prev.rater_id,
                    prev.narrative_id
                );
            }
        }
    }
    if let Some(dir) = &src.corpus {
        for t in load_corpus(dir)?.transcripts {
            if let Some(c) = t.cohort() {
                store.set_cohort(t.narrative_id.clone(), c);
            }
        }
    }
    Ok(store)
}

/// Participants, plus (participant id, narrative id) pairs so the output can
/// name the sampled narratives.
type Population = (Vec<ParticipantMeta>, Vec<(String, String)>);

fn participants_from(input: &Path) -> Res<Population> {
    let mut people = Vec::new();
    let mut narratives = Vec::new();
    if input.is_dir() {
        let corpus: Corpus = load_corpus(input)?;
        for t in corpus.transcripts {
            narratives.push((t.participant.participant_id.clone(), t.narrative_id.clone()));
            people.push(t.participant);
        }
    } else {
        for (path, o) in read_manifest(input)? {
            let Overrides {
                narrative_id,
                cohort,
                participant_id,
                age,
                ..
            } = o;
            let narrative = narrative_id.unwrap_or_else(|| {
                Path::new(&path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(path.clone())
            });
            let pid = participant_id.unwrap_or_else(|| narrative.clone());
            narratives.push((pid.clone(), narrative));
            people.push(ParticipantMeta {
                participant_id: pid,
                cohort: cohort.or_else(|| age.and_then(Cohort::from_age)),
                age,
            });
        }
    }
    Ok((people, narratives))
}

fn kappa_json(pair: (&str, &str), scope: &str, k: &KappaResult) -> serde_json::Value {
    json!({
        "rater_a": pair.0, "rater_b": pair.1, "scope": scope,
        "n": k.n, "a": k.a, "b": k.b, "c": k.c, "d": k.d,
        "p_o": k.p_o, "p_e": k.p_e, "kappa": k.kappa,
        "band": k.band.map(|b| b.label()),
    })
}

async fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Parse { dir, block } => {
            let corpus = load_corpus(&dir)?;
            for t in &corpus.transcripts {
                let summary = json!({
                    "narrative_id": t.narrative_id,
                    "story": t.story,
                    "participant_id": t.participant.participant_id,
                    "cohort": t.cohort(),
                    "age": t.participant.age,
                    "lines": t.line_count(),
                    "warnings": t.warnings,
                });
                println!("{summary}");
                if let Some(mode) = block {
                    let mode = match mode {
                        Mode::Raw => TextMode::Raw,
                        Mode::Clean => TextMode::Clean,
                    };
                    println!("{}", render_numbered_block(t, mode));
                }
            }
            for f in &corpus.failures {
                eprintln!("{}: {}", f.source_path, f.error);
            }
            if corpus.transcripts.is_empty() {
                return Err("no parseable transcripts".into());
            }
        }
        Command::Sample { input, rate, seed } => {
            let (people, narratives) = participants_from(&input)?;
            let result = stratified_sample(&people, rate, seed)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let chosen: std::collections::BTreeSet<String> =
                result.selected().into_iter().collect();
            let mut sampled: Vec<&String> = narratives
                .iter()
                .filter(|(p, _)| chosen.contains(p))
                .map(|(_, n)| n)
                .collect();
            sampled.sort();
            sampled.dedup();
            let out = json!({
                "rate": result.rate,
                "seed": result.seed,
                "cohorts": result.cohorts,
                "participants": result.selected(),
                "narratives": sampled,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Annotate {
            model,
            input,
            out,
            resume,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let profile = cfg.profile(&model)?.clone();
            let client = LlmClient::from_env(profile)?;
            let corpus = load_corpus(&input)?;
            let manifest =
                annotate_corpus(&corpus, &model, &client, &out, &AnnotateOptions { resume })
                    .await?;
            let summary = json!({
                "run_id": manifest.run_id,
                "narratives": manifest.narratives.len(),
                "ok": manifest.count(main_annotate::annotate::NarrativeStatus::Ok),
                "ledger": manifest.ledger,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Score { dirs } => {
            let store = load_store(&Sources {
                annotations: dirs,
                corpus: None,
            })?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["narrative_id", "rater_id", "story", "score", "present"])?;
            for r in score_rows(&store) {
                w.write_record([
                    r.narrative_id,
                    r.rater_id,
                    r.story.to_string(),
                    r.score.to_string(),
                    r.present.join(" "),
                ])?;
            }
            w.flush()?;
        }
        Command::Agree {
            src,
            raters,
            by,
            json: as_json,
        } => {
            let store = load_store(&src)?;
            let mut rows = Vec::new();
            for (i, a) in raters.iter().enumerate() {
                for b in &raters[i + 1..] {
                    match by {
                        By::Overall => rows.push((
                            "overall".to_string(),
                            a,
                            b,
                            store.kappa(a, b, Scope::Overall)?,
                        )),
                        By::Category => {
                            for (c, k) in kappa_by_category(&store, a, b)? {
                                rows.push((c.display_name().to_string(), a, b, k));
                            }
                        }
                        By::Cohort => {
                            let r = kappa_by_cohort(&store, a, b)?;
                            for n in &r.notes {
                                eprintln!("note: {a} vs {b}: {n}");
                            }
                            for (c, k) in r.results {
                                rows.push((c.to_string(), a, b, k));
                            }
                        }
                    }
                }
            }
            if as_json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(s, a, b, k)| kappa_json((a, b), s, k))
                    .collect();
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("rater_a\trater_b\tscope\tn\tkappa\tinterpretation");
                for (s, a, b, k) in rows {
                    println!(
                        "{a}\t{b}\t{s}\t{}\t{}\t{}",
                        k.n,
                        format_kappa(k.kappa),
                        main_annotate::agreement::interpretation(k.kappa)
                    );
                }
            }
        }
        Command::Report {
            src,
            humans,
            models,
            format,
            manifests,
            review_dir,
            stories,
            llm_minutes,
            review_minutes,
            out,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let store = load_store(&src)?;
            let humans: Vec<String> = humans.into_iter().filter(|h| !h.is_empty()).collect();
            let models = if models.is_empty() {
                store
                    .raters()
                    .filter(|r| !humans.iter().any(|h| h == r) && *r != GOLD_RATER)
                    .map(str::to_string)
                    .collect()
            } else {
                models
            };
            let mut runs = Vec::new();
            for p in &manifests {
                runs.push(
                    RunManifest::load(p)
                        .ok_or_else(|| format!("cannot read manifest {}", p.display()))?,
                );
            }
            let derived_stories = runs.first().map(|m| m.narratives.len());
            let derived_llm = (!runs.is_empty()).then(|| {
                runs.iter()
                    .map(|m| m.ledger.wall_time_ms as f64)
                    .sum::<f64>()
                    / 60_000.0
            });
            let derived_review = review_dir
                .as_deref()
                .map(|d| total_review_seconds(d) / 60.0);
            let workflow = match (
                stories.or(derived_stories),
                llm_minutes.or(derived_llm),
                review_minutes.or(derived_review),
            ) {
                (Some(stories), Some(llm), review) => Some(WorkflowInputs {
                    stories,
                    baseline_minutes_per_story: cfg.workflow.baseline_minutes_per_story,
                    llm_minutes: llm,
                    review_minutes: review.unwrap_or(0.0),
                }),
                _ => None,
            };
            let spec = ReportSpec { humans, models };
            let report = build_report(&store, &spec, &runs, workflow)?;
            let text = report.render(format);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Review {
            command:
                ReviewCommand::Serve {
                    bind,
                    corpus,
                    model_dir,
                    verified_dir,
                    adjudicate,
                    rater_id,
                    static_dir,
                },
        } => {
            let mut rc = ReviewConfig::new(corpus, verified_dir);
            rc.model_dir = model_dir;
            rc.static_dir = static_dir;
            if let Some(dirs) = adjudicate {
                rc.adjudication = Some((dirs[0].clone(), dirs[1].clone()));
                rc.rater_id = GOLD_RATER.to_string();
            }
            if let Some(r) = rater_id {
                rc.rater_id = r;
            }
            let svc = ReviewService::load(rc)?;
            serve(svc, bind).await?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
