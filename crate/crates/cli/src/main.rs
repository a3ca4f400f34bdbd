use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ldyconv::complexity::{self, count_breakdown, load_count_spec, formula_costs, write_cost_csv, CostReport, CountSpec};
use ldyconv::evalkit::{self, NoiseSet, DEFAULT_RATES, DEFAULT_SNRS};
use ldyconv::features::{extract_dir, Mfcc};
use ldyconv::ldy::TAPS;
use ldyconv::model::{gradcheck_suite, group_by_block, ModelConfig};
use ldyconv::numeric::gradcheck::DEFAULT_EPS;
use ldyconv::train::{
    evaluate, load_labeled_dir, load_noise_dir, load_splits, train, write_metrics_csv, Checkpoint, ClassMap, Dataset,
    TrainConfig,
};
use ldyconv::Error;

#[derive(Parser)]
#[command(name = "ldyconv", version, about = "Keyword spotting with a lightweight dynamic convolution front-end")]
struct Cli {
    /// Worker threads; 1 gives the bit-reproducible path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MFCC every wav under a directory into LDYF cache files.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config supplying MFCC settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; metrics are written next to the checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Accuracy and confusion matrix of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of `<label>/*.wav`; defaults to the config's test split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Accuracy under additive noise at fixed SNRs.
    NoiseSweep {
        #[arg(long)]
        ckpt: PathBuf,
        /// Noise directories, one set each.
        #[arg(long, value_delimiter = ',', required = true)]
        noise: Vec<PathBuf>,
        /// SNRs in dB; `inf` is the clean condition.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SNRS.to_vec())]
        snrs: Vec<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against the fraction of training data used.
    RateSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATES.to_vec())]
        rates: Vec<f64>,
        /// Seeds averaged per rate; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and operation counts.
    Count {
        /// Training config or layer list; the default model when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input frames.
        #[arg(long, default_value_t = 98)]
        time: usize,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Forward-pass timings of the front-end against the dense oracle.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![98, 196, 392])]
        times: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    training_rate: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) -> ldyconv::Result<()> {
        if let Some(v) = self.iters {
            cfg.optim.total_iters = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optim.batch_size = v;
        }
        if let Some(v) = self.training_rate {
            cfg.optim.training_rate = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.base_lr = v;
        }
        cfg.validate()
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn metrics_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_stem().unwrap_or_default().to_os_string();
    name.push(".metrics.csv");
    ckpt.with_file_name(name)
}

fn eval_set(cfg: &TrainConfig, data: &Option<PathBuf>) -> ldyconv::Result<Dataset> {
    match data {
        Some(dir) => load_labeled_dir(dir, &cfg.data),
        None => {
            let test = load_splits(&cfg.data, cfg.seed)?.test;
            if test.is_empty() {
                return Err(Error::Config("no --data given and the config defines no test split".into()));
            }
            Ok(test)
        }
    }
}

fn cmd_extract(input: &Path, out: &Path, config: &Option<PathBuf>) -> Result<()> {
    let cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let mfcc = Mfcc::new(cfg.mfcc)?;
    let written = extract_dir(input, out, &mfcc, cfg.data.downmix)?;
    println!("wrote {} feature files to {}", written.len(), out.display());
    Ok(())
}

fn cmd_train(config: &Path, out: &Path, resume: &Option<PathBuf>, overrides: &Overrides) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let resume = resume.as_ref().map(Checkpoint::load).transpose()?;
    let splits = load_splits(&cfg.data, cfg.seed)?;
    eprintln!(
        "training on {} clips ({} validation), {} iterations",
        splits.train.len(),
        splits.val.len(),
        cfg.optim.total_iters
    );
    let outcome = train(&cfg, &splits, resume, |row| {
        let val = row.val_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        eprintln!("iter {:>6}  lr {:.0e}  loss {:.4}  val_acc {val}", row.iter, row.lr, row.loss);
    })?;
    outcome.checkpoint.save(out)?;
    let metrics = metrics_path(out);
    write_metrics_csv(&metrics, &outcome.metrics)?;
    println!("checkpoint {} (iteration {})", out.display(), outcome.checkpoint.iteration);
    println!("metrics {}", metrics.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Option<PathBuf>) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let ds = eval_set(&ck.config, data)?;
    let classes = ClassMap::new(ck.config.data.classes());
    let mfcc = Mfcc::new(ck.config.mfcc.clone())?;
    let r = evaluate(&ck.model, &mfcc, &classes, &ds)?;
    println!("accuracy {:.4} ({} clips)", r.accuracy, r.n);
    println!("confusion (rows: true, columns: predicted)");
    let width = classes.names().iter().map(|n| n.len()).max().unwrap_or(1).max(5);
    print!("{:>width$}", "");
    for name in classes.names() {
        print!(" {name:>width$}");
    }
    println!();
    for (name, row) in classes.names().iter().zip(&r.confusion) {
        print!("{name:>width$}");
        for v in row {
            print!(" {v:>width$}");
        }
        println!();
    }
    Ok(())
}

fn cmd_noise_sweep(
    ckpt: &Path,
    noise: &[PathBuf],
    snrs: &[f64],
    data: &Option<PathBuf>,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let test = eval_set(&ck.config, data)?;
    let sets = noise
        .iter()
        .map(|dir| {
            Ok(NoiseSet {
                name: dir.file_name().unwrap_or(dir.as_os_str()).to_string_lossy().into_owned(),
                clips: load_noise_dir(dir, ck.config.data.downmix)?,
            })
        })
        .collect::<ldyconv::Result<Vec<_>>>()?;
    let classes = ClassMap::new(ck.config.data.classes());
    let mfcc = Mfcc::new(ck.config.mfcc.clone())?;
    let rows = evalkit::noise_sweep(&ck.model, &mfcc, &classes, &test, &sets, snrs, seed)?;
    evalkit::write_noise_csv(output(out)?, &rows)?;
    Ok(())
}

fn cmd_rate_sweep(
    config: &Path,
    rates: &[f64],
    seeds: &[u64],
    overrides: &Overrides,
    out: &Option<PathBuf>,
) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    if let Some(r) = rates.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Config(format!("rate {r} not in (0, 1]")).into());
    }
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let splits = load_splits(&cfg.data, cfg.seed)?;
    let sweep = evalkit::training_rate_sweep(&cfg, &splits, rates, &seeds)?;
    evalkit::write_rate_csv(output(out)?, &sweep.rows)?;
    if !sweep.monotone {
        eprintln!("note: accuracy is not monotone in the training rate for these seeds");
    }
    Ok(())
}

fn cmd_count(config: &Option<PathBuf>, time: usize) -> Result<()> {
    let spec = match config {
        Some(p) => load_count_spec(p, time)?,
        None => CountSpec::from_model(&ModelConfig::default(), time),
    };
    let rows = count_breakdown(&spec)?;
    let subtotal = |prefix: &str| -> CostReport {
        rows.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, c)| *c).sum()
    };
    let mut table = rows.clone();
    let front = subtotal("ldyconv.");
    let has_front = rows.iter().any(|(n, _)| n.starts_with("ldyconv."));
    if has_front {
        table.push(("ldyconv".into(), front));
    }
    if rows.iter().any(|(n, _)| n.starts_with("backbone.")) {
        table.push(("backbone".into(), subtotal("backbone.")));
    }
    table.push(("total".into(), rows.iter().map(|(_, c)| *c).sum()));
    let (k, f, n) = (TAPS as u64, spec.freq as u64, (spec.time * spec.freq) as u64);
    let t1 = formula_costs(k, f, n);
    table.push(("formula.conv".into(), t1.conv));
    table.push(("formula.dyconv".into(), t1.dyconv));
    table.push(("formula.ldyconv".into(), t1.ldyconv));
    table.push(("formula.ldyconv_lower_order".into(), t1.ldyconv_lower_order));
    let mut stdout = std::io::stdout().lock();
    write_cost_csv(&mut stdout, &table)?;
    if has_front {
        writeln!(
            stdout,
            "# ldyconv front-end (K={k}, F={f}, T={}): params={} flops={} (enumerated)",
            spec.time, front.params, front.flops
        )?;
    }
    writeln!(
        stdout,
        "# formula K(F+1)={} (second dense layer only; omits the first dense layer, pdf kernel and affines: +{})",
        t1.ldyconv.params, t1.ldyconv_lower_order.params
    )?;
    Ok(())
}

fn cmd_gradcheck(seed: u64, eps: f64, tolerance: f64) -> Result<()> {
    let checks = gradcheck_suite(seed, eps)?;
    let groups = group_by_block(&checks);
    for (name, err) in &groups {
        println!("{name:<16} max_rel_error={err:.3e}");
    }
    let worst = groups.iter().map(|g| g.1).fold(0.0, f64::max);
    let verdict = if worst < tolerance { "PASS" } else { "FAIL" };
    println!("seed {seed} eps {eps:e}: max_rel_error={worst:.3e} tolerance={tolerance:e} {verdict}");
    if worst >= tolerance {
        bail!("gradient check exceeded tolerance (a ReLU input within eps of zero also does this)");
    }
    Ok(())
}

fn cmd_bench(config: &Option<PathBuf>, reps: usize, times: &[usize], out: &Option<PathBuf>) -> Result<()> {
    let model = match config {
        Some(p) => TrainConfig::load(p)?.model,
        None => ModelConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let stats = pool.install(|| complexity::bench(&model, times, reps))?;
    complexity::write_bench_csv(output(out)?, &stats)?;
    let median = |c: &str, t: usize| stats.iter().find(|s| s.component == c && s.time == t).map(|s| s.median_s);
    for &t in times {
        if let (Some(a), Some(b)) = (median("ldyconv", t), median("dyconv_oracle", t)) {
            eprintln!("T={t}: ldyconv {:.3} ms, dyconv oracle {:.3} ms ({:.1}x)", a * 1e3, b * 1e3, b / a);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Extract { input, out, config } => cmd_extract(input, out, config),
        Command::Train {
            config,
            out,
            resume,
            overrides,
        } => cmd_train(config, out, resume, overrides),
        Command::Eval { ckpt, data } => cmd_eval(ckpt, data),
        Command::NoiseSweep {
            ckpt,
            noise,
            snrs,
            data,
            seed,
            out,
        } => cmd_noise_sweep(ckpt, noise, snrs, data, *seed, out),
        Command::RateSweep {
            config,
            rates,
            seeds,
            overrides,
            out,
        } => cmd_rate_sweep(config, rates, seeds, overrides, out),
        Command::Count { config, time } => cmd_count(config, *time),
        Command::Gradcheck { seed, eps, tolerance } => cmd_gradcheck(*seed, *eps, *tolerance),
        Command::Bench {
            config,
            reps,
            times,
            out,
        } => cmd_bench(config, *reps, times, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_usage));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
