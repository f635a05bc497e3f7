//! Subcommands of the `mmnmt` binary: train, translate, score,
//! backtranslate and gradcheck.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! error (including a failed gradient check).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use mmnmt::data::{
    build_vocab, encode_pairs, load_parallel_corpus, read_features, read_token_lines,
    write_lines, Example,
};
use mmnmt::decoder::translate;
use mmnmt::evaluation::{score_files, Metric};
use mmnmt::numerics::Real;
use mmnmt::training::{
    backtranslate, read_checkpoint_header, tiny_gradcheck, train, BleuScorer, Checkpoint, TrainOptions,
};
use mmnmt::{Error, Mode, ModelConfig, Precision};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "mmnmt", version, about = "Multi-modal attention NMT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// JSON file with ModelConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides applied after the config file, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model with early stopping on dev BLEU.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long)]
        train_feats: Option<PathBuf>,
        #[arg(long)]
        dev_src: PathBuf,
        #[arg(long)]
        dev_tgt: PathBuf,
        #[arg(long)]
        dev_feats: Option<PathBuf>,
        /// Best checkpoint; the epoch log goes to `<out>.log`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a tokenized source file.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        feats: Option<PathBuf>,
        /// Beam width; defaults to the checkpoint's `beam`.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypotheses against references and print a JSON report.
    Score {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Produce a synthetic parallel corpus from monolingual target text.
    Backtranslate {
        #[arg(long)]
        reverse_model: PathBuf,
        #[arg(long)]
        mono_tgt: PathBuf,
        #[arg(long)]
        feats: Option<PathBuf>,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Check analytic gradients of a tiny model against finite differences.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Doubles one parameter's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Config file (if any) with overrides applied, validated.
pub fn load_config(args: &ConfigArgs) -> Result<ModelConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::config(format!("bad config {}: {e}", path.display())))?
        }
        None => ModelConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("override {kv:?} is not key=value")))?;
        cfg.apply_override(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_features(mode: Mode, feats: Option<&Path>, flag: &str) -> CmdResult {
    match (mode.uses_image(), feats) {
        (true, None) => Err(Failure::config(format!("{mode} mode requires {flag}"))),
        (false, Some(_)) => Err(Failure::config(format!("{mode} mode takes no {flag}"))),
        _ => Ok(()),
    }
}

pub fn cmd_train(
    config: &ConfigArgs,
    paths: [&Path; 4],
    train_feats: Option<&Path>,
    dev_feats: Option<&Path>,
    out: &Path,
    log: &mut dyn Write,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    check_features(cfg.mode, train_feats, "--train-feats")?;
    check_features(cfg.mode, dev_feats, "--dev-feats")?;
    let [train_src, train_tgt, dev_src, dev_tgt] = paths;
    let train_pairs = load_parallel_corpus(train_src, train_tgt, train_feats, cfg.max_len)?;
    let dev_pairs = load_parallel_corpus(dev_src, dev_tgt, dev_feats, cfg.max_len)?;
    if train_pairs.is_empty() || dev_pairs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let src_lines: Vec<Vec<String>> = train_pairs.iter().map(|p| p.source.clone()).collect();
    let tgt_lines: Vec<Vec<String>> = train_pairs.iter().map(|p| p.target.clone()).collect();
    let src_vocab = build_vocab(&src_lines, cfg.src_vocab_size)?;
    let tgt_vocab = build_vocab(&tgt_lines, cfg.tgt_vocab_size)?;
    // The configured sizes are caps; the model uses the actual sizes.
    cfg.src_vocab_size = src_vocab.len();
    cfg.tgt_vocab_size = tgt_vocab.len();
    let train_set = encode_pairs(&train_pairs, &src_vocab, &tgt_vocab);
    let dev_set = encode_pairs(&dev_pairs, &src_vocab, &tgt_vocab);

    let log_path = log_path(out);
    let mut log_text = format!(
        "config {}\n",
        serde_json::to_string(&cfg).expect("config serialises")
    );
    write!(log, "{log_text}").ok();
    let run = |cfg: &ModelConfig, log_text: &mut String, log: &mut dyn Write| -> CmdResult {
        match cfg.precision {
            Precision::F32 => run_train::<f32>(cfg, &train_set, &dev_set, &src_vocab, &tgt_vocab, out, log_text, log),
            Precision::F64 => run_train::<f64>(cfg, &train_set, &dev_set, &src_vocab, &tgt_vocab, out, log_text, log),
        }
    };
    let result = run(&cfg, &mut log_text, log);
    fs::write(&log_path, &log_text).map_err(|e| Failure::from(Error::Io {
        path: log_path.clone(),
        source: e,
    }))?;
    result
}

pub fn log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log");
    p.into()
}

#[allow(clippy::too_many_arguments)]
fn run_train<F: Real>(
    cfg: &ModelConfig,
    train_set: &[Example],
    dev_set: &[Example],
    src_vocab: &mmnmt::data::Vocabulary,
    tgt_vocab: &mmnmt::data::Vocabulary,
    out: &Path,
    log_text: &mut String,
    log: &mut dyn Write,
) -> CmdResult {
    let mut scorer = BleuScorer { examples: dev_set };
    let options = TrainOptions {
        checkpoint_path: Some(out),
        ..TrainOptions::default()
    };
    let outcome = train::<F, _>(cfg, train_set, src_vocab, tgt_vocab, &mut scorer, options, |r| {
        writeln!(log, "{r}").ok();
        log_text.push_str(&format!("{r}\n"));
    })?;
    let summary = format!(
        "best epoch {} dev_bleu {:.2}\n",
        outcome.best.epoch,
        outcome.best.dev_bleu.unwrap_or(0.0)
    );
    write!(log, "{summary}").ok();
    log_text.push_str(&summary);
    Ok(())
}

fn read_optional_features(path: Option<&Path>) -> Result<Option<Vec<Vec<f32>>>, Failure> {
    Ok(path.map(read_features).transpose()?)
}

pub fn cmd_translate(model: &Path, src: &Path, feats: Option<&Path>, beam: Option<usize>, out: &Path) -> CmdResult {
    let header = read_checkpoint_header(model)?;
    check_features(header.config.mode, feats, "--feats")?;
    match header.config.precision {
        Precision::F32 => translate_file::<f32>(model, src, feats, beam, out),
        Precision::F64 => translate_file::<f64>(model, src, feats, beam, out),
    }
}

fn translate_file<F: Real>(model: &Path, src: &Path, feats: Option<&Path>, beam: Option<usize>, out: &Path) -> CmdResult {
    let ck: Checkpoint<F> = Checkpoint::load(model)?;
    let beam = beam.unwrap_or(ck.model.config.beam);
    if beam == 0 {
        return Err(Failure::config("--beam must be at least 1"));
    }
    let lines = read_token_lines(src)?;
    let images = read_optional_features(feats)?;
    if let Some(im) = &images {
        if im.len() != lines.len() {
            return Err(Error::Alignment {
                what: format!("rows in {} and lines in {}", feats.unwrap().display(), src.display()),
                left: im.len(),
                right: lines.len(),
            }
            .into());
        }
    }
    let mut hyps = Vec::with_capacity(lines.len());
    for (i, tokens) in lines.iter().enumerate() {
        if tokens.is_empty() {
            hyps.push(String::new());
            continue;
        }
        let ids = ck.src_vocab.encode(tokens);
        let image = images.as_ref().map(|im| im[i].as_slice());
        let out_ids = translate(&ck.model, &ids, image, beam)?;
        hyps.push(ck.tgt_vocab.detokenize(&out_ids));
    }
    write_lines(out, &hyps)?;
    Ok(())
}

pub fn cmd_score(metric: &str, hyp: &Path, reference: &Path, out: &mut dyn Write) -> CmdResult {
    let metric = Metric::parse(metric)
        .ok_or_else(|| Failure::config(format!("unknown metric {metric:?}; use bleu4 or chrf3")))?;
    let report = score_files(metric, hyp, reference)?;
    writeln!(out, "{}", report.to_json()).ok();
    Ok(())
}

pub fn cmd_backtranslate(
    reverse_model: &Path,
    mono_tgt: &Path,
    feats: Option<&Path>,
    out_src: &Path,
    out_tgt: &Path,
    beam: Option<usize>,
) -> CmdResult {
    let header = read_checkpoint_header(reverse_model)?;
    if header.config.mode != Mode::TextOnly {
        return Err(Failure::config(format!(
            "reverse model {} is {}; back-translation needs a TEXT_ONLY model",
            reverse_model.display(),
            header.config.mode
        )));
    }
    match header.config.precision {
        Precision::F32 => backtranslate_files::<f32>(reverse_model, mono_tgt, feats, out_src, out_tgt, beam),
        Precision::F64 => backtranslate_files::<f64>(reverse_model, mono_tgt, feats, out_src, out_tgt, beam),
    }
}

fn backtranslate_files<F: Real>(
    reverse_model: &Path,
    mono_tgt: &Path,
    feats: Option<&Path>,
    out_src: &Path,
    out_tgt: &Path,
    beam: Option<usize>,
) -> CmdResult {
    let ck: Checkpoint<F> = Checkpoint::load(reverse_model)?;
    let mono = read_token_lines(mono_tgt)?;
    let images = read_optional_features(feats)?;
    let beam = beam.unwrap_or(ck.model.config.beam);
    let pairs = backtranslate(&ck, &mono, images.as_deref(), beam)?;
    let src: Vec<String> = pairs.iter().map(|p| p.source.join(" ")).collect();
    let tgt: Vec<String> = pairs.iter().map(|p| p.target.join(" ")).collect();
    write_lines(out_src, &src)?;
    write_lines(out_tgt, &tgt)?;
    Ok(())
}

pub fn cmd_gradcheck(config: &ConfigArgs, eps: f64, corrupt: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let cfg = load_config(config)?;
    if !(eps > 0.0) {
        return Err(Failure::config("--eps must be positive"));
    }
    let report = tiny_gradcheck(cfg.mode, cfg.init_seed, eps, corrupt)?;
    writeln!(out, "gradcheck mode {} eps {eps:e}", cfg.mode).ok();
    for e in &report.entries {
        let verdict = if e.max_rel_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<16} rel {:.3e} abs {:.3e} {verdict}",
            e.name, e.max_rel_error, e.max_abs_error
        )
        .ok();
    }
    let failing = report.failing(GRADCHECK_TOLERANCE);
    if failing.is_empty() {
        writeln!(out, "max relative error {:.3e}", report.max_rel_error()).ok();
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("gradient check failed for {}", failing.join(", ")),
        })
    }
}

/// Parses `args` (program name first) and runs the subcommand. Reports go
/// to `out`, logs and errors to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if e.use_stderr() {
                write!(err, "{e}").ok();
            } else {
                write!(out, "{e}").ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train {
            config,
            train_src,
            train_tgt,
            train_feats,
            dev_src,
            dev_tgt,
            dev_feats,
            out: ckpt,
        } => cmd_train(
            config,
            [train_src, train_tgt, dev_src, dev_tgt],
            train_feats.as_deref(),
            dev_feats.as_deref(),
            ckpt,
            err,
        ),
        Command::Translate {
            model,
            src,
            feats,
            beam,
            out: path,
        } => cmd_translate(model, src, feats.as_deref(), *beam, path),
        Command::Score {
            metric,
            hyp,
            reference,
        } => cmd_score(metric, hyp, reference, out),
        Command::Backtranslate {
            reverse_model,
            mono_tgt,
            feats,
            out_src,
            out_tgt,
            beam,
        } => cmd_backtranslate(reverse_model, mono_tgt, feats.as_deref(), out_src, out_tgt, *beam),
        Command::Gradcheck { config, eps, corrupt } => cmd_gradcheck(config, *eps, corrupt.as_deref(), out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            writeln!(err, "error: {}", f.message).ok();
            f.code
        }
    }
}

/// Shorthand used by tests: builds an argument list from string slices.
pub fn args<S: AsRef<str>>(parts: &[S]) -> Vec<String> {
    std::iter::once("mmnmt".to_string())
        .chain(parts.iter().map(|s| s.as_ref().to_string()))
        .collect()
}
