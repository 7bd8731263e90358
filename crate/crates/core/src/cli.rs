//! The `nlim` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid data or input, 3 runtime
//! failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::encoding;
use crate::evalharness::{self, CompareConfig};
use crate::grammar::{self, LabeledSentence};
use crate::interpreter::{self, Interpretation, Registry};
use crate::models::{self, ArchKind, ArchSpec, Model, TrainConfig};
use crate::persistence;
use crate::service::{http, Service};

#[derive(Debug, Parser)]
#[command(name = "nlim", version, about = "Natural-language command interpreter for a mock trading desk")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Synthesize a labeled corpus from a spec file.
    Augment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one architecture and save the model.
    Train(TrainArgs),
    /// Evaluate a saved model on a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Train and evaluate every architecture on one split.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON file with comparison settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Interpret one sentence.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        text: String,
    },
    /// Interpret lines from standard input.
    Repl {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    arch: ArchKind,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the training report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(argv: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 1;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match dispatch(cli.command, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let msg = match &e {
                CliError::Data(m) | CliError::Runtime(m) => m,
            };
            let _ = writeln!(stderr, "error: {msg}");
            e.code()
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<LabeledSentence>, CliError> {
    grammar::load_corpus(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn load_registry(path: Option<&Path>) -> Result<Registry, CliError> {
    match path {
        Some(p) => Registry::load(p).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => Registry::parse(interpreter::DEMO_REGISTRY).map_err(data),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(runtime)?;
    writeln!(f).and_then(|_| f.flush()).map_err(runtime)
}

fn dispatch(cmd: Cmd, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Cmd::Augment { spec, seed, count, out: path } => {
            let spec = grammar::load_corpus_spec(&spec).map_err(data)?;
            let corpus = grammar::augment(&spec, seed, count).map_err(data)?;
            let f = File::create(&path).map_err(runtime)?;
            let mut w = BufWriter::new(f);
            grammar::write_corpus(&mut w, &corpus).and_then(|_| w.flush()).map_err(runtime)?;
            writeln!(out, "wrote {} sentences to {}", corpus.len(), path.display()).map_err(runtime)
        }
        Cmd::Train(a) => train(a, out, err),
        Cmd::Eval { model, corpus, pretty } => {
            let m = load_model(&model)?;
            let corpus = load_corpus(&corpus)?;
            let metrics = evalharness::evaluate(&m.params, &m.arch, &corpus).map_err(data)?;
            let text = if pretty { serde_json::to_string_pretty(&metrics) } else { serde_json::to_string(&metrics) };
            writeln!(out, "{}", text.map_err(runtime)?).map_err(runtime)
        }
        Cmd::Compare { corpus, config, out: path, pretty } => {
            let corpus = load_corpus(&corpus)?;
            let cfg: CompareConfig = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", p.display())))?
                }
                None => CompareConfig::default(),
            };
            let (report, _) = evalharness::compare_architectures(&corpus, &cfg, |kind, e| {
                let _ = writeln!(err, "{kind} epoch {} val loss {:.4}", e.epoch, e.val_loss);
            })
            .map_err(runtime)?;
            write_json(&path, &report)?;
            if pretty {
                write!(out, "{}", evalharness::render_table(&report)).map_err(runtime)?;
            }
            Ok(())
        }
        Cmd::Interpret { model, registry, text } => {
            let m = load_model(&model)?;
            let reg = load_registry(registry.as_deref())?;
            let interp = interpreter::interpret(&m, &reg, &text).map_err(data)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&interp).map_err(runtime)?).map_err(runtime)
        }
        Cmd::Repl { model, registry } => {
            let m = load_model(&model)?;
            let reg = load_registry(registry.as_deref())?;
            repl(&m, &reg, stdin, out)
        }
        Cmd::Serve { model, registry, port, host } => {
            let m = load_model(&model)?;
            let reg = load_registry(registry.as_deref())?;
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(data)?;
            let fingerprint = m.fingerprint();
            let svc = Arc::new(Service::new(Arc::new(m), reg, fingerprint));
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(http::serve(svc, addr)).map_err(runtime)
        }
    }
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let arch = ArchSpec::new(a.arch, a.hidden.unwrap_or(a.arch.default_hidden()));
    let cfg = TrainConfig {
        batch_size: a.batch,
        max_epochs: a.epochs,
        lr: a.lr,
        patience: a.patience,
        val_fraction: a.val_fraction,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (params, report) = models::train_with_progress(&arch, &corpus, &cfg, |e| {
        let _ = writeln!(
            err,
            "epoch {:>3}  train {:.4}  val {:.4}  intent {}  tags {}  {:.1}s",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_intent_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            e.val_tag_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            e.seconds
        );
    })
    .map_err(|e| match e {
        models::ModelError::CorpusTooSmall(_) | models::ModelError::InvalidArch(_) | models::ModelError::InvalidConfig(_) => data(e),
        other => runtime(other),
    })?;
    let bytes = persistence::save_model(&params, &arch, &a.out).map_err(runtime)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    encoding::write_vocab_tables(dir).map_err(runtime)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    writeln!(
        out,
        "saved {} ({} bytes, {} parameters); best epoch {} of {}",
        a.out.display(),
        bytes,
        report.param_count,
        report.best_epoch,
        report.epochs.len()
    )
    .map_err(runtime)
}

/// `text` with each span wrapped as `[surface]{TAG}`.
pub fn highlight(text: &str, interp: &Interpretation) -> String {
    let mut s = String::new();
    let mut pos = 0;
    for span in &interp.spans {
        s.push_str(&text[pos..span.start]);
        s.push_str(&format!("[{}]{{{}}}", span.text, span.tag));
        pos = span.end;
    }
    s.push_str(&text[pos..]);
    s
}

fn repl(model: &Model, reg: &Registry, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let mut line = Vec::new();
    loop {
        write!(out, "> ").and_then(|_| out.flush()).map_err(runtime)?;
        line.clear();
        if input.read_until(b'\n', &mut line).map_err(runtime)? == 0 {
            writeln!(out).map_err(runtime)?;
            return Ok(());
        }
        let Ok(text) = std::str::from_utf8(&line) else {
            writeln!(out, "error: input is not valid UTF-8").map_err(runtime)?;
            continue;
        };
        let text = text.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        match interpreter::interpret(model, reg, text) {
            Ok(i) => {
                let conf = i.confidence.map_or_else(String::new, |c| format!(" ({c:.3})"));
                writeln!(out, "intent: {}{conf}", i.intent).map_err(runtime)?;
                writeln!(out, "spans:  {}", highlight(text, &i)).map_err(runtime)?;
                match &i.command {
                    Ok(c) => writeln!(out, "command: {}", serde_json::to_string(c).map_err(runtime)?),
                    Err(e) => writeln!(out, "command: error: {e}"),
                }
                .map_err(runtime)?;
            }
            Err(e) => writeln!(out, "error: {e}").map_err(runtime)?,
        }
    }
}
