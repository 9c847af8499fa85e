//! `seam`: corpus ingestion, export, analytics and the HTTP server.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use seam_core::analytics::BucketSpec;
use seam_core::ingestion::{self, ImportOptions, RawPair};
use seam_core::report::{run_report, ReportKind, ReportOptions};
use seam_core::store::{ExportFilter, Store};
use seam_core::{AccountType, Category};
use seam_service::{ServiceConfig, SqliteStore};

#[derive(Parser)]
#[command(name = "seam", version, about = "Human/machine boundary game: data tools and server")]
struct Cli {
    /// TOML configuration file; SEAM_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// SQLite database, overriding the configuration.
    #[arg(long, global = true)]
    store: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve,
    /// Import example records (JSONL) into the store.
    Ingest {
        file: PathBuf,
        /// Assign this category to every record.
        #[arg(long)]
        category: Option<String>,
    },
    /// Export the annotation dump (or the example corpus) as JSONL.
    Export {
        #[command(flatten)]
        filter: FilterArgs,
        /// Export examples instead of annotations.
        #[arg(long)]
        examples: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build attention-check examples from instruction records.
    ///
    /// Each input line is `{"id": .., "category": .., "sentences": [..]}`.
    MakeChecks {
        file: PathBuf,
        /// Category for records that do not name one.
        #[arg(long, default_value = "news")]
        category: String,
        /// Write examples here instead of inserting them into the store.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Assemble examples from human/generated sentence pairs with a random
    /// prompt length per pair.
    Assemble {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compute a report over an annotation dump.
    Analyze {
        dump: PathBuf,
        #[arg(long, value_enum)]
        report: ReportArg,
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        #[arg(long)]
        csv: bool,
        /// Use every annotation rather than the attention-check filtered set.
        #[arg(long)]
        unfiltered: bool,
        /// Slice fraction for the percentiles report.
        #[arg(long, default_value_t = 0.05)]
        percentile: f64,
        /// Number of equal-width decoding_p buckets.
        #[arg(long, default_value_t = 10)]
        p_buckets: u32,
        /// Extra stopword file, one word per line, added to the defaults.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    category: Option<String>,
    #[arg(long, value_parser = parse_account_type)]
    account_type: Option<AccountType>,
    /// Inclusive lower bound, milliseconds since the epoch.
    #[arg(long)]
    since: Option<i64>,
    /// Exclusive upper bound, milliseconds since the epoch.
    #[arg(long)]
    until: Option<i64>,
    #[arg(long)]
    include_attention_checks: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Filter,
    Agreement,
    Histogram,
    PointsByOrder,
    PointsByP,
    Percentiles,
    Comments,
    Accuracy,
}

impl From<ReportArg> for ReportKind {
    fn from(r: ReportArg) -> Self {
        match r {
            ReportArg::Filter => ReportKind::Filter,
            ReportArg::Agreement => ReportKind::Agreement,
            ReportArg::Histogram => ReportKind::Histogram,
            ReportArg::PointsByOrder => ReportKind::PointsByOrder,
            ReportArg::PointsByP => ReportKind::PointsByP,
            ReportArg::Percentiles => ReportKind::Percentiles,
            ReportArg::Comments => ReportKind::Comments,
            ReportArg::Accuracy => ReportKind::Accuracy,
        }
    }
}

fn parse_account_type(s: &str) -> Result<AccountType, String> {
    AccountType::parse(s).ok_or_else(|| format!("expected paid or organic, got {s}"))
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

#[derive(serde::Deserialize)]
struct CheckRecord {
    id: String,
    #[serde(default)]
    category: Option<String>,
    sentences: Vec<String>,
}

/// Exit status 2 signals partial success: some records were rejected.
fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(store) = cli.store {
        cfg.store = store;
    }
    let n = cfg.n_sentences;
    let open_store = || SqliteStore::open(&cfg.store).with_context(|| format!("opening store {}", cfg.store));

    match cli.command {
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(seam_service::serve(cfg))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest { file, category } => {
            let store = open_store()?;
            let opts = ImportOptions {
                n_sentences: n,
                category_override: category.map(Category::from),
            };
            let report = ingestion::import_corpus(open_input(&file)?, &store, &opts)?;
            println!("{}", json!({ "imported": report.imported, "rejected": report.rejected.len() }));
            if report.rejected.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", json!({ "error": "rejected records", "rejected": report.rejected }));
                Ok(ExitCode::from(2))
            }
        }
        Command::Export {
            filter,
            examples,
            output,
        } => {
            let store = open_store()?;
            let mut out = create_output(&output)?;
            let count = if examples {
                ingestion::export_examples(&store, &mut out)?
            } else {
                let filter = ExportFilter {
                    category: filter.category.map(Category::from),
                    account_type: filter.account_type,
                    since: filter.since,
                    until: filter.until,
                    include_attention_checks: filter.include_attention_checks,
                };
                ingestion::export_annotations(&store, &filter, &mut out)?
            };
            out.flush()?;
            println!("{}", json!({ "exported": count }));
            Ok(ExitCode::SUCCESS)
        }
        Command::MakeChecks {
            file,
            category,
            output,
        } => {
            let mut built = Vec::new();
            let mut rejected = Vec::new();
            for (i, line) in open_input(&file)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let result = serde_json::from_str::<CheckRecord>(&line)
                    .map_err(|e| e.to_string())
                    .and_then(|r| {
                        let cat = Category::from(r.category.unwrap_or_else(|| category.clone()));
                        ingestion::make_attention_check(&r.id, &cat, r.sentences, n).map_err(|e| e.to_string())
                    });
                match result {
                    Ok(e) => built.push(e),
                    Err(reason) => rejected.push(json!({ "line": i + 1, "reason": reason })),
                }
            }
            let mut written = 0;
            match output {
                Some(path) => {
                    let mut out = create_output(&path)?;
                    for e in &built {
                        writeln!(out, "{}", ingestion::to_canonical_json(e)?)?;
                    }
                    out.flush()?;
                    written = built.len();
                }
                None => {
                    let store = open_store()?;
                    for e in &built {
                        match store.insert_example(e) {
                            Ok(()) => written += 1,
                            Err(err) => rejected.push(json!({ "id": e.id, "reason": err.to_string() })),
                        }
                    }
                }
            }
            println!("{}", json!({ "created": written, "rejected": rejected.len() }));
            if rejected.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", json!({ "error": "rejected records", "rejected": rejected }));
                Ok(ExitCode::from(2))
            }
        }
        Command::Assemble { file, seed, output } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = create_output(&output)?;
            let (mut written, mut rejected) = (0, Vec::new());
            for (i, line) in open_input(&file)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // Draw k for every line so one bad line does not shift the rest.
                let k = ingestion::sample_assembly_params(&mut rng, n);
                let result = serde_json::from_str::<RawPair>(&line)
                    .map_err(|e| e.to_string())
                    .and_then(|pair| ingestion::assemble_example(&pair, k, n).map_err(|e| e.to_string()));
                match result {
                    Ok(e) => {
                        writeln!(out, "{}", ingestion::to_canonical_json(&e)?)?;
                        written += 1;
                    }
                    Err(reason) => rejected.push(json!({ "line": i + 1, "reason": reason })),
                }
            }
            out.flush()?;
            println!("{}", json!({ "assembled": written, "rejected": rejected.len() }));
            if rejected.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", json!({ "error": "rejected records", "rejected": rejected }));
                Ok(ExitCode::from(2))
            }
        }
        Command::Analyze {
            dump,
            report,
            json: _,
            csv,
            unfiltered,
            percentile,
            p_buckets,
            stopwords,
        } => {
            let records = ingestion::read_dump(open_input(&dump)?)?;
            let mut opts = ReportOptions {
                n_sentences: n,
                unfiltered,
                percentile,
                buckets: BucketSpec::uniform(p_buckets)?,
                ..ReportOptions::default()
            };
            if let Some(path) = stopwords {
                for word in open_input(&path)?.lines() {
                    let word = word?.trim().to_lowercase();
                    if !word.is_empty() {
                        opts.stopwords.insert(word);
                    }
                }
            }
            let kind = ReportKind::from(report);
            let rendered = run_report(kind, &records, &opts)?;
            let stdout = io::stdout();
            let mut out = stdout.lock();
            if csv {
                write!(out, "{}", rendered.to_csv())?;
            } else {
                writeln!(out, "{}", rendered.to_json(kind))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
