use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use revgen::corpus::{fetch_reviews, FetchConfig, FetchError, GraphqlTransport, HttpResponse};
use revgen::pipeline::{self, PipelineError, Settings, Start};
use revgen::tagger::LineRun;

#[derive(Parser, Debug)]
#[command(name = "revgen", about = "Generate code-review comments for tagged Java lines", disable_version_flag = true)]
struct Cli {
    /// Print the artifact schema version and exit.
    #[arg(long, global = true)]
    version: bool,
    /// Settings file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set d_model=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine review triplets from a GitHub repository (token in GITHUB_TOKEN).
    Fetch(FetchArgs),
    /// Dedup, filter and normalize raw triplets.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Insert review tags and extract the reviewed methods.
    Tag {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded 80/10/10 split into train/valid/test JSONL files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Augment training comments.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the vocabulary from training pairs.
    Vocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-token pre-training.
    Pretrain {
        #[command(flatten)]
        data: TrainData,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
    },
    /// Fine-tune for comment generation.
    Finetune {
        #[command(flatten)]
        data: TrainData,
        /// Pre-trained checkpoint to start from.
        #[arg(long, conflicts_with_all = ["no_pretrain", "resume"])]
        pretrained: Option<PathBuf>,
        /// Start from random weights.
        #[arg(long)]
        no_pretrain: bool,
        /// Continue a fine-tuning checkpoint for another `steps_finetune` steps.
        #[arg(long, conflicts_with = "no_pretrain")]
        resume: Option<PathBuf>,
        /// Drop review tags from the inputs.
        #[arg(long)]
        no_review_tag: bool,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the weights with the lowest validation loss.
        #[arg(long)]
        best: Option<PathBuf>,
        #[arg(long)]
        curve: PathBuf,
    },
    /// Top-k comment generation for tagged pairs.
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        no_review_tag: bool,
    },
    /// Score generations against reference comments.
    Evaluate {
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate comments for chosen lines of a Java file.
    Apply {
        #[arg(long)]
        file: PathBuf,
        /// 1-based inclusive ranges, e.g. `12:14,30:30`.
        #[arg(long)]
        lines: String,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

#[derive(Args, Debug)]
struct FetchArgs {
    /// `owner/name`.
    #[arg(long)]
    repo: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    max_prs: usize,
    #[arg(long, default_value_t = 20)]
    page_size: usize,
    #[arg(long, default_value = "https://api.github.com/graphql")]
    endpoint: String,
}

#[derive(Args, Debug)]
struct TrainData {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

/// A rendered error plus the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(err: anyhow::Error) -> Self {
        Self {
            code: 1,
            msg: format!("{err:#}"),
        }
    }
}

// Pipeline errors already carry their causes in the message.
impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_usage() { 1 } else { 2 };
        Self { code, msg: e.to_string() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self {
            code: 2,
            msg: format!("{err:#}"),
        }
    }
}

struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    fn new() -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent }
    }
}

impl GraphqlTransport for UreqTransport {
    fn post(&mut self, endpoint: &str, token: &str, body: &str) -> Result<HttpResponse, FetchError> {
        let mut resp = self
            .agent
            .post(endpoint)
            .header("Authorization", &format!("bearer {token}"))
            .header("User-Agent", "revgen")
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(HttpResponse {
            status,
            retry_after,
            body,
        })
    }
}

fn parse_ranges(spec: &str) -> Result<Vec<LineRun>, Failure> {
    spec.split(',')
        .map(|r| {
            let (a, b) = r.trim().split_once(':').unwrap_or((r.trim(), r.trim()));
            let (a, b): (usize, usize) = (
                a.parse().map_err(|_| Failure::usage(anyhow::anyhow!("bad line range {r:?}")))?,
                b.parse().map_err(|_| Failure::usage(anyhow::anyhow!("bad line range {r:?}")))?,
            );
            if a == 0 || b < a {
                return Err(Failure::usage(anyhow::anyhow!("bad line range {r:?}")));
            }
            Ok(LineRun::new(a, b))
        })
        .collect()
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::usage)?;
        s.apply_kv(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::usage(anyhow::anyhow!("--set expects KEY=VALUE, got {o:?}")))?;
        s.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        s.model.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn print(v: serde_json::Value) {
    println!("{v}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.version {
        println!("revgen {} (schema {})", env!("CARGO_PKG_VERSION"), revgen::SCHEMA_VERSION);
        return Ok(());
    }
    let mut s = settings(&cli)?;
    let Some(command) = cli.command else {
        return Err(Failure::usage(anyhow::anyhow!("no subcommand given; see --help")));
    };
    match command {
        Command::Fetch(a) => {
            let token = std::env::var("GITHUB_TOKEN").map_err(|_| Failure::usage(anyhow::anyhow!("GITHUB_TOKEN is not set")))?;
            let checkpoint = a.checkpoint.unwrap_or_else(|| a.out.with_extension("cursor"));
            let cfg = FetchConfig {
                endpoint: a.endpoint,
                repo: a.repo,
                auth_token: token,
                max_prs: a.max_prs,
                page_size: a.page_size,
                out_path: a.out,
                checkpoint_path: checkpoint,
            };
            let stats = fetch_reviews(&mut UreqTransport::new(), &cfg).context("fetch failed")?;
            print(json!({
                "prs_seen": stats.prs_seen,
                "threads_seen": stats.threads_seen,
                "written": stats.written,
                "skipped_non_java": stats.skipped_non_java,
                "skipped_unrevised": stats.skipped_unrevised,
                "schema_errors": stats.schema_errors,
            }));
        }
        Command::Prepare { input, out, rejected } => {
            print(json!(pipeline::prepare(&input, &out, rejected.as_deref(), &s)?));
        }
        Command::Tag { input, out } => print(json!(pipeline::tag(&input, &out, &s)?)),
        Command::Split { input, out_dir } => {
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let (train, valid, test) = pipeline::split(&input, &out_dir, s.model.seed)?;
            print(json!({"train": train, "valid": valid, "test": test}));
        }
        Command::Augment { input, out } => {
            let (records, short) = pipeline::augment(&input, &out, &s)?;
            print(json!({"records": records, "too_short_to_augment": short}));
        }
        Command::Vocab { input, out } => {
            let v = pipeline::build_vocabulary(&input, &out, &s)?;
            print(json!({"size": v.size()}));
        }
        Command::Pretrain { data, out, curve } => {
            let r = pipeline::pretrain(&data.train, data.valid.as_deref(), &data.vocab, &out, &curve, &s)?;
            print(json!(r));
        }
        Command::Finetune {
            data,
            pretrained,
            no_pretrain,
            resume,
            no_review_tag,
            out,
            best,
            curve,
        } => {
            if no_review_tag {
                s.keep_tag = false;
            }
            let start = match (&pretrained, &resume, no_pretrain) {
                (_, Some(r), _) => Start::Resume(r),
                (Some(p), None, _) => Start::Pretrained(p),
                (None, None, true) => Start::Scratch,
                (None, None, false) => {
                    return Err(Failure::usage(anyhow::anyhow!(
                        "give --pretrained <ckpt>, --resume <ckpt> or --no-pretrain"
                    )))
                }
            };
            let r = pipeline::finetune(
                &data.train,
                data.valid.as_deref(),
                &data.vocab,
                start,
                &out,
                best.as_deref(),
                &curve,
                &s,
            )?;
            print(json!(r));
        }
        Command::Generate {
            input,
            model,
            out,
            top_k,
            no_review_tag,
        } => {
            if let Some(k) = top_k {
                s.top_k = k;
            }
            if no_review_tag {
                s.keep_tag = false;
            }
            s.validate()?;
            let stats = pipeline::generate(&input, &model.model, &model.vocab, &out, &s)?;
            if !stats.untagged.is_empty() && s.keep_tag {
                eprintln!("warning: {} inputs carry no review tag", stats.untagged.len());
            }
            print(json!({"inputs": stats.inputs, "untagged": stats.untagged.len()}));
        }
        Command::Evaluate { generations, refs, out } => {
            let reports = pipeline::evaluate(&generations, &refs, out.as_deref(), &s)?;
            print!("{}", revgen::eval::render_table(&reports));
        }
        Command::Apply {
            file,
            lines,
            model,
            top_k,
        } => {
            if top_k == 0 {
                return Err(Failure::usage(anyhow::anyhow!("--top-k must be positive")));
            }
            let ranges = parse_ranges(&lines)?;
            let source = read_source(&file)?;
            let applied = pipeline::apply(&source, &ranges, &model.model, &model.vocab, top_k, &s)?;
            for a in applied {
                print(json!(a));
            }
        }
    }
    Ok(())
}

fn read_source(path: &Path) -> Result<String, Failure> {
    Ok(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
