//! Command-line front end. Exit codes: 0 success, 2 bad arguments, 3 IO
//! failure, 4 data, format or shape failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sentigan_tensor::RngState;

use crate::error::{Error, Result};
use crate::inference::{run_transfer, TransferJob, TransferRequest};
use crate::io::{read_captions, read_image, read_mask, read_segmentation, read_text, resolve, write_image, write_mask};
use crate::mask::{extract_object_masks, filter_anp, MaskFusionConfig};
use crate::train::{
    eval_hue_shift, generate_corpus, load_checkpoint, read_corpus, read_train_config, save_checkpoint, write_corpus,
    SyntheticCorpusSpec, TrainConfig, Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "sentigan", version, about = "Object-level colour and sentiment transfer")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse per-noun attention maps with a segmentation map into object masks.
    ExtractMasks(ExtractArgs),
    /// Train a model on a corpus manifest and write a checkpoint.
    Train(TrainArgs),
    /// Transfer objects of an input image according to a job file.
    Transfer(TransferArgs),
    /// Report the mean hue gap-closure ratio of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Print the ANP lines whose noun appears among the caption nouns.
    FilterAnp(FilterArgs),
    /// Write a synthetic two-palette corpus and its manifest.
    SynthCorpus(SynthArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    image: PathBuf,
    /// `noun<TAB>attention-file` lines, one per noun occurrence.
    #[arg(long)]
    captions: PathBuf,
    /// Segmentation label map (8-bit grayscale PNG).
    #[arg(long)]
    seg: PathBuf,
    #[arg(long, default_value_t = 1.4)]
    alpha: f32,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Log losses every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `mask<TAB>reference<TAB>reference-mask[<TAB>strength[<TAB>align_t]]` lines.
    #[arg(long)]
    jobs: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    strength: f32,
    #[arg(long = "align-t", default_value_t = 1.0)]
    align_t: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// One ANP per line, `adjective_noun` or `adjective noun`.
    #[arg(long)]
    anp_list: PathBuf,
    /// One caption noun per line.
    #[arg(long)]
    caption_nouns: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.cmd {
        Command::ExtractMasks(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Transfer(a) => transfer(a),
        Command::Eval(a) => eval(a),
        Command::FilterAnp(a) => filter(a),
        Command::SynthCorpus(a) => synth(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            exit_code(&e)
        }
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = MaskFusionConfig::new(a.alpha)?;
    let image = read_image(&a.image)?;
    let seg = read_segmentation(&a.seg)?;
    if (seg.height(), seg.width()) != (image.height(), image.width()) {
        return Err(Error::format(format!(
            "segmentation {}×{} does not match image {}×{}",
            seg.height(),
            seg.width(),
            image.height(),
            image.width()
        )));
    }
    let captions = read_captions(&a.captions)?;
    if captions.is_empty() {
        return Err(Error::format(format!("{}: no caption nouns", a.captions.display())));
    }
    let masks = extract_object_masks(&captions, &seg, &cfg)?;
    for noun in masks.keys() {
        if noun.is_empty() || noun.contains(['/', '\\']) || noun.starts_with('.') {
            return Err(Error::format(format!("noun {noun:?} is not usable as a file name")));
        }
    }
    // Everything is computed before the first file is written.
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (noun, m) in &masks {
        let path = a.out_dir.join(format!("{noun}.png"));
        write_mask(&path, m)?;
        println!("{noun}\t{}", path.display());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let corpus = read_corpus(&a.corpus)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_checkpoint(cfg.clone(), load_checkpoint(p)?)?,
        None => Trainer::new(cfg.clone())?,
    };
    while trainer.iteration < cfg.iters {
        let r = trainer.step(&corpus)?;
        if a.log_every > 0 && (trainer.iteration % a.log_every == 0 || trainer.iteration == cfg.iters) {
            let terms: Vec<String> = crate::losses::TERM_NAMES
                .iter()
                .zip(r.terms)
                .map(|(n, v)| format!("{n}={v:.4}"))
                .collect();
            eprintln!("step {} total={:.4} disc={:.4} {}", trainer.iteration, r.total, r.disc, terms.join(" "));
        }
    }
    save_checkpoint(&trainer.checkpoint(), &a.out)
}

fn parse_jobs(path: &Path, strength: f32, align_t: f32) -> Result<Vec<TransferJob>> {
    let mut jobs = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: String| Error::format(format!("{}:{}: {what}", path.display(), n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=5).contains(&cols.len()) {
            return Err(bad(format!("expected 3 to 5 tab-separated fields, found {}", cols.len())));
        }
        let num = |i: usize, default: f32| -> Result<f32> {
            match cols.get(i) {
                Some(v) => v.trim().parse().map_err(|_| bad(format!("invalid number {v:?}"))),
                None => Ok(default),
            }
        };
        jobs.push(TransferJob {
            mask: read_mask(&resolve(path, cols[0].trim()))?,
            reference: read_image(&resolve(path, cols[1].trim()))?,
            reference_mask: read_mask(&resolve(path, cols[2].trim()))?,
            strength: num(3, strength)?,
            align_t: num(4, align_t)?,
        });
    }
    Ok(jobs)
}

fn transfer(a: TransferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let input = read_image(&a.input)?;
    let jobs = parse_jobs(&a.jobs, a.strength, a.align_t)?;
    let result = run_transfer(&TransferRequest { input, jobs }, &ck.params)?;
    for (i, d) in result.diagnostics.iter().enumerate() {
        let hue = |h: Option<f64>| h.map_or("-".to_string(), |h| format!("{h:.1}"));
        eprintln!(
            "job {i}: hue in {} ref {} out {}",
            hue(d.input_hue),
            hue(d.reference_hue),
            hue(d.output_hue)
        );
    }
    write_image(&a.out, &result.output)
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let corpus = read_corpus(&a.corpus)?;
    let ratio = eval_hue_shift(&ck.params, &corpus, a.trials, &mut RngState::new(a.seed))?;
    println!("{ratio:.4}");
    Ok(())
}

fn anp_noun(line: &str) -> &str {
    let line = line.trim();
    match line.rfind(|c: char| c == '_' || c.is_whitespace()) {
        Some(i) => &line[i + 1..],
        None => line,
    }
}

fn filter(a: FilterArgs) -> Result<()> {
    let anps = read_text(&a.anp_list)?;
    let nouns_text = read_text(&a.caption_nouns)?;
    let nouns: Vec<&str> = nouns_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    for line in anps.lines().filter(|l| !l.trim().is_empty()) {
        if filter_anp(anp_noun(line), &nouns) {
            println!("{}", line.trim());
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let samples = generate_corpus(&SyntheticCorpusSpec::two_palette(a.count, a.size, a.seed))?;
    let manifest = write_corpus(&a.out_dir, &samples)?;
    println!("{}", manifest.display());
    Ok(())
}
