//! Command-line definitions. A `--config` TOML file supplies defaults and
//! explicit flags override it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use segweight_core::dataio::SplitPolicy;
use segweight_core::metareweight::Mode;
use segweight_core::noisegen::Importance;

use crate::commands::{self, EvalOptions, EvalSet, GenOptions, NoiseOptions, SweepOptions};
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "segweight", version, about = "Pixel-wise meta-reweighting for segmentation with noisy labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic lesion corpus.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        n: usize,
        #[arg(long, default_value_t = 24)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Corrupt a corpus's masks with one noise kind.
    Noise {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "3-vertex")]
        noise: String,
        #[arg(long, value_enum, default_value_t = ImportanceArg::AngleLength)]
        importance: ImportanceArg,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the run directory's saved state.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a run's test or validation set.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SetArg::Test)]
        set: SetArg,
        /// Directory with `masks/<id>.pgm` used as ground truth instead.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        save_predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (noise, K, mode, seed) combination and tabulate test Dice.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "24")]
        ks: Vec<usize>,
        /// Seeds 0..R-1.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::FineTune, ModeArg::PerImage, ModeArg::Reweight])]
        modes: Vec<ModeArg>,
        #[arg(long, value_delimiter = ',')]
        noises: Vec<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        sweep_out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reweight,
    Plain,
    #[value(name = "fine_tune")]
    FineTune,
    #[value(name = "per_image")]
    PerImage,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Reweight => Mode::Reweight,
            ModeArg::Plain => Mode::Plain,
            ModeArg::FineTune => Mode::FineTune,
            ModeArg::PerImage => Mode::PerImage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImportanceArg {
    AngleLength,
    TriangleArea,
}

impl From<ImportanceArg> for Importance {
    fn from(i: ImportanceArg) -> Importance {
        match i {
            ImportanceArg::AngleLength => Importance::AngleLength,
            ImportanceArg::TriangleArea => Importance::TriangleArea,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Disjoint,
    Subset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Test,
    Validation,
}

/// Overrides applied on top of the defaults or a `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus directory; omitted means the in-memory synthetic corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub corpus_size: Option<usize>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    /// K, the clean pool size.
    #[arg(long)]
    pub clean: Option<usize>,
    /// M, the noisy pool size.
    #[arg(long)]
    pub noisy: Option<usize>,
    #[arg(long)]
    pub validation: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long, value_enum)]
    pub importance: Option<ImportanceArg>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub batch_noisy: Option<usize>,
    #[arg(long)]
    pub batch_clean: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub finetune_iterations: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub lr_patience: Option<usize>,
    /// Sets the network, sampler and split seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    c.$($target)+ = v.into();
                }
            };
        }
        set!(mode => mode);
        set!(out => out_dir);
        if let Some(dir) = &self.corpus {
            c.corpus.dir = Some(dir.clone());
        }
        set!(corpus_size => corpus.size);
        set!(corpus_seed => corpus.seed);
        set!(clean => split.clean);
        set!(noisy => split.noisy);
        set!(validation => split.validation);
        set!(test => split.test);
        if let Some(p) = self.policy {
            c.split.policy = match p {
                PolicyArg::Disjoint => SplitPolicy::Disjoint,
                PolicyArg::Subset => SplitPolicy::Subset,
            };
        }
        set!(noise => noise);
        set!(importance => importance);
        set!(side => net.image_side);
        set!(depth => net.depth);
        set!(base_channels => net.base_channels);
        set!(alpha => hyper.alpha);
        set!(eta => hyper.eta);
        set!(batch_noisy => hyper.batch_noisy);
        set!(batch_clean => hyper.batch_clean);
        set!(momentum => hyper.momentum);
        set!(weight_decay => hyper.weight_decay);
        set!(iterations => hyper.iterations);
        set!(finetune_iterations => hyper.finetune_iterations);
        set!(eval_interval => hyper.eval_interval);
        if let Some(p) = self.lr_patience {
            c.hyper.lr_patience = Some(p);
        }
        if let Some(s) = self.seed {
            c.set_seed(s);
        }
        set!(snapshot_every => snapshot_every);
        set!(checkpoint_every => checkpoint_every);
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { out, n, side, seed } => {
            let n = commands::cmd_gen(&GenOptions { out: out.clone(), n, side, seed })?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Noise { corpus, out, noise, importance } => {
            let s = commands::cmd_noise(&NoiseOptions { corpus, out, noise, importance: importance.into() })?;
            println!("samples {}  mean dice {:.4}  warnings {}", s.samples, s.mean_dice, s.warnings);
        }
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            let r = commands::cmd_train(&cfg, resume)?;
            print!("iterations {}", r.iterations);
            if let Some(d) = r.final_val_dice {
                print!("  val dice {d:.4}");
            }
            if let Some(q) = r.mislabelled_ratio {
                print!("  mislabelled/correct weight {q:.3}");
            }
            println!();
        }
        Command::Eval { run, checkpoint, set, masks, save_predictions, out } => {
            let set = match set {
                SetArg::Test => EvalSet::Test,
                SetArg::Validation => EvalSet::Validation,
            };
            let s = commands::cmd_eval(&EvalOptions { run, checkpoint, set, masks, save_predictions, out })?;
            println!("images {}  mean dice {:.4}  median dice {:.4}", s.per_image.len(), s.mean, s.median);
        }
        Command::Sweep { run, ks, seeds, modes, noises, workers, sweep_out } => {
            let base = run.resolve()?;
            let noises = if noises.is_empty() { vec![base.noise.clone()] } else { noises };
            if workers == 0 {
                return Err(HarnessError::contract("workers must be >= 1"));
            }
            let opts = SweepOptions {
                base,
                ks,
                seeds,
                modes: modes.into_iter().map(Mode::from).collect(),
                noises,
                workers,
                out: sweep_out,
            };
            let (_, cells) = commands::cmd_sweep(&opts)?;
            println!("{:<14} {:>4} {:<10} {:>5} {:>8} {:>8}", "noise", "K", "mode", "runs", "mean", "sd");
            for c in cells {
                println!(
                    "{:<14} {:>4} {:<10} {:>5} {:>8.4} {:>8.4}",
                    c.noise, c.k, c.mode, c.runs, c.mean_test_dice, c.sd_test_dice
                );
            }
        }
    }
    Ok(())
}
