use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handnet::{Architecture, OptimizerKind};
use handnet_harness::config::{sgd_hyper, ExperimentConfig, ExperimentId, ReportFormat, Subset};
use handnet_harness::datasets;
use handnet_harness::experiments::{self as exps, Variant, WidthModels};
use handnet_harness::report::{self, ExperimentReport, Table};
use handnet_harness::serve::{self, ServeOptions, SessionConfig};
use handnet_harness::{Dataset, Result, RunRecord};

#[derive(Parser)]
#[command(name = "handnet", version, about = "Train and evaluate the MNIST / CIFAR-10 experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MLP learning-rate sweep (epoch x lr error tables).
    Exp1(Opts),
    /// Hidden-width sweep: MLP (lr=0.5), MLP (lr=best), CNN.
    Exp2(Opts),
    /// Per-digit precision/recall/F1 of the MNIST CNN.
    Exp3(Opts),
    /// CIFAR-10 CNN: SGD against momentum SGD.
    Exp4(Opts),
    /// CIFAR-10 CNN with dropout: momentum SGD against Adadelta.
    Exp5(Opts),
    /// Live training server speaking newline-delimited JSON over TCP.
    Serve(ServeArgs),
    /// Train a fixed number of batches without a server and save a checkpoint.
    Train(TrainArgs),
}

#[derive(Args, Clone)]
struct Opts {
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Repeat to run several seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// `full`, a sample count, or a fraction in (0, 1].
    #[arg(long)]
    subset: Option<Subset>,
    /// Repeat for a sweep (exp1); otherwise the single learning rate.
    #[arg(long = "lr")]
    lrs: Vec<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Run only this optimizer (exp4/exp5).
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Hidden width; repeat for a sweep (exp2).
    #[arg(long = "width")]
    widths: Vec<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Training samples per CIFAR run.
    #[arg(long)]
    budget: Option<usize>,
    /// Samples between CIFAR evaluation points.
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// `mnist` or `cifar10`.
    #[arg(long)]
    dataset: Option<Dataset>,
    /// Hidden width; selects the MNIST CNN (or `--mlp`).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    mlp: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    subset: Option<Subset>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long, default_value_t = 1000)]
    stats_every: usize,
    /// Maximum queued stats events before the oldest is dropped.
    #[arg(long, default_value_t = 1024)]
    stats_buffer: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long)]
    batches: usize,
    #[arg(long)]
    checkpoint: PathBuf,
}

impl SessionArgs {
    fn config(&self) -> Result<SessionConfig> {
        let mut c = SessionConfig::default();
        if let Some(d) = self.dataset {
            c.dataset = d;
            if d == Dataset::Mnist {
                c.architecture = Architecture::MnistCnn { hidden: 784 };
            }
        }
        if let Some(w) = self.width {
            c.architecture = if self.mlp {
                Architecture::Mlp { hidden: w }
            } else {
                Architecture::MnistCnn { hidden: w }
            };
        } else if self.mlp {
            c.architecture = Architecture::Mlp { hidden: 784 };
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        if let Some(v) = self.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = self.dropout_rate {
            c.dropout_rate = Some(v);
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.subset {
            c.subset = v;
        }
        Ok(c)
    }
}

impl Opts {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.data_dir = self.data_dir.clone();
        cfg.out_dir = self.out.clone();
        cfg.batch_size = self.batch_size;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = self.subset {
            cfg.subset = s;
        }
        if let Some(b) = self.budget {
            cfg.sample_budget = Some(b);
        }
        if let Some(e) = self.eval_every {
            cfg.eval_every = e;
        }
        if let Some(&s) = self.seeds.first() {
            cfg.seed = s;
        }
    }

    fn seeds_or(&self, default: &[u64]) -> Vec<u64> {
        if self.seeds.is_empty() {
            default.to_vec()
        } else {
            self.seeds.clone()
        }
    }

    fn width(&self) -> usize {
        self.widths.first().copied().unwrap_or(784)
    }

    fn lr_or(&self, default: f64) -> f64 {
        self.lrs.first().copied().unwrap_or(default)
    }
}

fn announce(rec: &RunRecord) {
    let outcome = match (&rec.diverged, rec.final_test_error()) {
        (Some(d), _) => format!("diverged at {} samples", d.samples_seen),
        (None, Some(e)) => format!("test error {e:.2}%"),
        (None, None) => "no result".into(),
    };
    eprintln!("  {:<24} {outcome}  ({:.1}s)", rec.label, rec.wall_clock_secs);
}

fn print_table(t: &Table) {
    println!("{}", t.name);
    print!("{:>10}", t.row_header);
    for c in &t.columns {
        print!(" {c:>16}");
    }
    println!();
    for r in &t.rows {
        print!("{:>10}", r.label);
        for v in &r.values {
            match v {
                Some(x) => print!(" {x:>16.2}"),
                None => print!(" {:>16}", report::DIVERGED),
            }
        }
        println!();
    }
    println!();
}

fn finish(id: ExperimentId, opts: &Opts, tables: Vec<Table>, records: Vec<RunRecord>) -> Result<()> {
    for t in &tables {
        print_table(t);
    }
    let dir = opts.out.join(id.as_str());
    let report = ExperimentReport {
        experiment: id.as_str().to_string(),
        tables,
        records,
    };
    let written = report::emit_report(&dir, opts.format, &report)?;
    eprintln!("wrote {} files under {}", written.len(), dir.display());
    Ok(())
}

fn exp1(o: &Opts) -> Result<()> {
    let mut cfg = ExperimentConfig::mnist(ExperimentId::Exp1, Architecture::Mlp { hidden: o.width() });
    o.apply(&mut cfg);
    cfg.track_train_error = true;
    let lrs = if o.lrs.is_empty() { exps::PAPER_LRS.to_vec() } else { o.lrs.clone() };
    let seeds = o.seeds_or(&exps::SWEEP_SEEDS);
    let splits = datasets::load_mnist(&cfg.data_dir)?;
    let sweep = exps::run_lr_sweep(&cfg, &lrs, &seeds, &splits, &mut announce)?;
    let mut tables = Vec::new();
    for i in 0..seeds.len() {
        tables.extend(report::lr_tables(&sweep, i));
    }
    tables.push(report::lr_summary(&sweep));
    finish(ExperimentId::Exp1, o, tables, sweep.runs)
}

fn exp2(o: &Opts) -> Result<()> {
    let mut cfg = ExperimentConfig::mnist(ExperimentId::Exp2, Architecture::Mlp { hidden: 784 });
    cfg.epochs = exps::WIDTH_SWEEP_EPOCHS;
    o.apply(&mut cfg);
    let widths = if o.widths.is_empty() { exps::PAPER_WIDTHS.to_vec() } else { o.widths.clone() };
    let defaults = WidthModels::default();
    let best = o.lr_or(defaults.best_lr);
    let models = WidthModels {
        best_lr: best,
        cnn_lr: best,
        ..defaults
    };
    let splits = datasets::load_mnist(&cfg.data_dir)?;
    let sweep = exps::run_width_sweep(&cfg, &widths, models, &splits, &mut announce)?;
    finish(ExperimentId::Exp2, o, vec![report::width_table(&sweep)], sweep.runs)
}

fn exp3(o: &Opts) -> Result<()> {
    let mut cfg = ExperimentConfig::mnist(ExperimentId::Exp3, Architecture::MnistCnn { hidden: o.width() });
    cfg.subset = Subset::Full;
    o.apply(&mut cfg);
    cfg.hyper = sgd_hyper(o.lr_or(0.1));
    let seeds = o.seeds_or(&exps::DIGIT_SEEDS);
    let splits = datasets::load_mnist(&cfg.data_dir)?;
    let res = exps::run_per_digit(&cfg, &seeds, &splits, &mut announce)?;
    let mut tables: Vec<Table> = res.runs.iter().map(report::digit_table).collect();
    tables.push(report::digit_summary(&res));
    finish(ExperimentId::Exp3, o, tables, res.runs)
}

fn cifar(o: &Opts, id: ExperimentId) -> Result<()> {
    let dropout = match id {
        ExperimentId::Exp5 => Some(o.dropout_rate.unwrap_or(0.5)),
        _ => o.dropout_rate,
    };
    let mut cfg = ExperimentConfig::cifar(id, dropout);
    o.apply(&mut cfg);
    let lr = o.lr_or(0.01);
    let mu = o.momentum.unwrap_or(0.9);
    let mut variants = match id {
        ExperimentId::Exp5 => vec![Variant::momentum(lr, mu), Variant::adadelta()],
        _ => vec![Variant::sgd(lr), Variant::momentum(lr, mu)],
    };
    if let Some(k) = o.optimizer {
        variants = vec![match k {
            OptimizerKind::Sgd => Variant::sgd(lr),
            OptimizerKind::Momentum => Variant::momentum(lr, mu),
            OptimizerKind::Adadelta => Variant::adadelta(),
        }];
    }
    let splits = datasets::load_cifar(&cfg.data_dir)?;
    let runs = exps::run_cifar(&cfg, &variants, &splits, &mut announce)?;
    finish(id, o, vec![report::cifar_summary(&runs)], runs)
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let mut config = a.session.config()?;
    config.stats_every = a.stats_every;
    config.validate()?;
    let listener = TcpListener::bind(&a.listen)?;
    let opts = ServeOptions {
        data_dir: a.session.data_dir.clone(),
        out_dir: a.out.clone(),
        config,
        stats_buffer: a.stats_buffer,
    };
    let handle = serve::spawn(listener, opts)?;
    eprintln!("listening on {}", handle.addr);
    handle.wait();
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = a.session.config()?;
    let splits = datasets::load(cfg.dataset, &a.session.data_dir)?;
    let t = serve::headless_run(&cfg, &splits, a.batches)?;
    handnet::checkpoint::save(t.network(), &a.checkpoint)?;
    eprintln!("{} samples seen; saved {}", t.samples_seen(), a.checkpoint.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Exp1(o) => exp1(o),
        Command::Exp2(o) => exp2(o),
        Command::Exp3(o) => exp3(o),
        Command::Exp4(o) => cifar(o, ExperimentId::Exp4),
        Command::Exp5(o) => cifar(o, ExperimentId::Exp5),
        Command::Serve(a) => serve_cmd(a),
        Command::Train(a) => train_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
