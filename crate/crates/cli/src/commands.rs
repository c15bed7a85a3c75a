use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cawave::convergence::{steady_study, transient_study, write_rows_csv, DEFAULT_MESHES};
use cawave::datasets::{build_ode_dataset, gen_training_set_i, gen_training_set_ii, series_to_samples, write_dataset, write_dataset_csv, read_dataset};
use cawave::hybrid::{run_simulation, ChannelKind, SimConfig};
use cawave::markov::{open_probability, steady_state};
use cawave::surrogate::{load_weights, save_weights, train, TrainingSample};
use clap::{Args, ValueEnum};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::meta::{sha256_hex, write_sidecar, Meta};

/// Settings shared by every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    fn prepare_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(CliError::io(&self.out))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn meta<'a>(&self, command: &'a str, seed: u64, args: &impl Serialize, inputs: Vec<(String, String)>) -> Meta<'a> {
        Meta {
            tool: "cawave",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_sha256: sha256_hex(self.config.canonical_json().as_bytes()),
            args: serde_json::to_value(args).expect("arguments serialize"),
            inputs,
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn finish(w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.into_inner()
        .map_err(|e| CliError::io(path)(e.into_error()))?
        .sync_all()
        .map_err(CliError::io(path))
}

fn hash_file(path: &Path) -> CliResult<(String, String)> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok((path.display().to_string(), sha256_hex(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSet {
    Ode,
    #[value(name = "artificial-1")]
    #[serde(rename = "artificial-1")]
    Artificial1,
    #[value(name = "artificial-2")]
    #[serde(rename = "artificial-2")]
    Artificial2,
}

impl DataSet {
    fn file_stem(self) -> &'static str {
        match self {
            DataSet::Ode => "ode",
            DataSet::Artificial1 => "artificial-1",
            DataSet::Artificial2 => "artificial-2",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "ode")]
    pub set: DataSet,
    /// Number of ODE signals (seeded subset of the grid).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Also write a CSV copy.
    #[arg(long)]
    pub csv: bool,
}

pub fn gen_data(ctx: &Context, args: &GenDataArgs) -> CliResult<()> {
    ctx.prepare_out()?;
    let seed = ctx.seed.unwrap_or(0);
    let (samples, series) = match args.set {
        DataSet::Ode => {
            let ds = &ctx.config.dataset;
            let n = args.subset.unwrap_or(ds.num_signals).min(ds.grid.num_signals());
            (build_ode_dataset(&ds.grid, n, seed, &ctx.config.markov)?, n)
        }
        DataSet::Artificial1 => {
            let s = gen_training_set_i();
            (series_to_samples(&s), s.len())
        }
        DataSet::Artificial2 => {
            let s = gen_training_set_ii();
            (series_to_samples(&s), s.len())
        }
    };
    let path = ctx.path(&format!("{}.cwds", args.set.file_stem()));
    write_dataset(&path, &samples).map_err(|e| match e {
        cawave::Error::Io(source) => CliError::Io { path: path.clone(), source },
        other => other.into(),
    })?;
    let meta = ctx.meta("gen-data", seed, args, Vec::new());
    write_sidecar(&path, &meta)?;
    if args.csv || ctx.config.dataset.csv {
        let csv = path.with_extension("csv");
        let mut w = create(&csv)?;
        write_dataset_csv(&mut w, &samples)?;
        finish(w, &csv)?;
        write_sidecar(&csv, &meta)?;
    }
    let unit = if args.set == DataSet::Ode { "signals" } else { "series" };
    println!("{}: {series} {unit}, {} samples -> {}", args.set.file_stem(), samples.len(), path.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset file written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Train on a seeded subset of this many samples.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Standardize inputs during training (folded into the saved weights).
    #[arg(long)]
    pub normalize_inputs: bool,
    /// Output stem: `<name>.cwnn` and `<name>.loss.csv`.
    #[arg(long, default_value = "weights")]
    pub name: String,
}

pub fn train_cmd(ctx: &Context, args: &TrainArgs) -> CliResult<()> {
    ctx.prepare_out()?;
    let mut cfg = ctx.config.network;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(v) = args.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(lr) = args.learning_rate {
        cfg.adam.learning_rate = lr;
    }
    cfg.normalize_inputs |= args.normalize_inputs;

    let mut data: Vec<TrainingSample> = read_dataset(&args.data).map_err(|e| match e {
        cawave::Error::Io(source) => CliError::Io {
            path: args.data.clone(),
            source,
        },
        other => other.into(),
    })?;
    if let Some(n) = args.subset {
        if n < data.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, data.len(), n).into_vec();
            idx.sort_unstable();
            data = idx.into_iter().map(|i| data[i]).collect();
        }
    }
    println!(
        "training on {} samples: {} epochs, batch {}, validation {:.2}, seed {}",
        data.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.validation_fraction,
        cfg.seed
    );
    let outcome = train(&data, &cfg)?;

    let weights = ctx.path(&format!("{}.cwnn", args.name));
    save_weights(&outcome.params, &weights).map_err(|e| match e {
        cawave::Error::Io(source) => CliError::Io {
            path: weights.clone(),
            source,
        },
        other => other.into(),
    })?;
    let loss_path = ctx.path(&format!("{}.loss.csv", args.name));
    let mut w = create(&loss_path)?;
    let io = CliError::io(&loss_path);
    (|| -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,validation_loss")?;
        for h in &outcome.history {
            let v = h.validation.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(w, "{},{:.16e},{v}", h.epoch, h.train)?;
        }
        Ok(())
    })()
    .map_err(io)?;
    finish(w, &loss_path)?;

    let meta = ctx.meta("train", cfg.seed, args, vec![hash_file(&args.data)?]);
    write_sidecar(&weights, &meta)?;
    write_sidecar(&loss_path, &meta)?;
    if let Some(last) = outcome.history.last() {
        match last.validation {
            Some(v) => println!("final loss: train {:.6e}, validation {v:.6e}", last.train),
            None => println!("final loss: train {:.6e}", last.train),
        }
    }
    println!("weights -> {}", weights.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Example1,
    #[value(name = "example1-reduced")]
    #[serde(rename = "example1-reduced")]
    Example1Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Markov,
    Surrogate,
    Zero,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Stimulus preset; overrides `[stimulus]` from the config.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum, default_value = "markov")]
    pub channel: Channel,
    /// Surrogate weights (`.cwnn`).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Output stem: `<name>.csv` (and `<name>.snapshots.csv`).
    #[arg(long, default_value = "simulation")]
    pub name: String,
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = ctx.config.sim_config();
    match args.preset {
        Some(Preset::Example1) => cfg.stimulus = SimConfig::example1().stimulus,
        Some(Preset::Example1Reduced) => cfg.stimulus = SimConfig::example1_reduced().stimulus,
        None => {}
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(t) = args.t_end {
        cfg.t_end = t;
    }
    cfg.channel = match args.channel {
        Channel::Markov => ChannelKind::Markov,
        Channel::Surrogate => ChannelKind::Surrogate,
        Channel::Zero => ChannelKind::Zero,
    };
    cfg.validate()?;
    let mut inputs = Vec::new();
    let weights = match (&args.weights, args.channel) {
        (Some(p), Channel::Surrogate) => {
            inputs.push(hash_file(p)?);
            Some(Arc::new(load_weights(p).map_err(|e| match e {
                cawave::Error::Io(source) => CliError::Io { path: p.clone(), source },
                other => other.into(),
            })?))
        }
        (None, Channel::Surrogate) => return Err(CliError::Config("--channel surrogate needs --weights".into())),
        _ => None,
    };
    ctx.prepare_out()?;
    let out = run_simulation(&cfg, weights)?;

    let path = ctx.path(&format!("{}.csv", args.name));
    let mut w = create(&path)?;
    out.write_csv(&mut w)?;
    finish(w, &path)?;
    let meta = ctx.meta("simulate", ctx.seed.unwrap_or(0), args, inputs);
    write_sidecar(&path, &meta)?;
    if cfg.snapshot_stride.is_some() {
        let snap = ctx.path(&format!("{}.snapshots.csv", args.name));
        let mut w = create(&snap)?;
        out.write_snapshots_csv(&mut w)?;
        finish(w, &snap)?;
        write_sidecar(&snap, &meta)?;
    }
    println!("steps: {} (dt = {:e}, t_end = {})", out.steps, cfg.dt, cfg.t_end);
    println!("peak u(L): {:.6} at t = {:.4}", out.peak_u_l, out.peak_u_l_time);
    println!("peak u(R): {:.6} at t = {:.4}", out.peak_u_r, out.peak_u_r_time);
    println!("peak u: {:.6}", out.peak_u);
    println!("wave duration (u(L) > 0.1): {:.4}", out.wave_duration);
    println!("series -> {}", path.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    /// Element counts, coarsest first.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MESHES.to_vec())]
    pub meshes: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub t_final: f64,
    /// Time step as a multiple of h².
    #[arg(long, default_value_t = 1.0)]
    pub dt_factor: f64,
}

pub fn convergence(ctx: &Context, args: &ConvergenceArgs) -> CliResult<()> {
    if args.meshes.is_empty() || !(args.t_final > 0.0 && args.dt_factor > 0.0) {
        return Err(CliError::Config("need meshes and positive t_final, dt_factor".into()));
    }
    ctx.prepare_out()?;
    let length = ctx.config.geometry.er_radius;
    let steady = steady_study(length, &args.meshes)?;
    let transient = transient_study(length, &args.meshes, args.t_final, args.dt_factor)?;
    let path = ctx.path("convergence.csv");
    let mut w = create(&path)?;
    write_rows_csv(&mut w, "steady", &steady, true)?;
    write_rows_csv(&mut w, "transient", &transient, false)?;
    finish(w, &path)?;
    write_sidecar(&path, &ctx.meta("convergence", ctx.seed.unwrap_or(0), args, Vec::new()))?;
    println!("{:>10} {:>6} {:>12} {:>14} {:>8}", "study", "M", "h", "L2 error", "order");
    for (name, rows) in [("steady", &steady), ("transient", &transient)] {
        for r in rows.iter() {
            let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
            println!("{name:>10} {:>6} {:>12.6e} {:>14.6e} {order:>8}", r.elements, r.h, r.l2_error);
        }
    }
    println!("table -> {}", path.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SteadyArgs {
    /// Points on the log grid over [0.01, 100].
    #[arg(long, default_value_t = 41)]
    pub points: usize,
}

pub fn steady(ctx: &Context, args: &SteadyArgs) -> CliResult<()> {
    if args.points < 2 {
        return Err(CliError::Config("--points must be at least 2".into()));
    }
    ctx.prepare_out()?;
    let rates = &ctx.config.markov;
    let mut grid = vec![0.0];
    grid.extend((0..args.points).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / (args.points - 1) as f64)));
    let path = ctx.path("steady.csv");
    let mut w = create(&path)?;
    writeln!(w, "u,c1,o,c2,P").map_err(CliError::io(&path))?;
    println!("{:>12} {:>14} {:>14} {:>14} {:>14}", "u", "c1", "o", "c2", "P");
    for u in grid {
        let s = steady_state(u, rates)?;
        let p = open_probability(&s)?;
        // Steady states can come back as -0.0 at u = 0.
        let (c1, o, c2, p) = (s.c1 + 0.0, s.o + 0.0, s.c2 + 0.0, p + 0.0);
        println!("{u:>12.5e} {c1:>14.6e} {o:>14.6e} {c2:>14.6e} {p:>14.6e}");
        writeln!(w, "{u:.16e},{c1:.16e},{o:.16e},{c2:.16e},{p:.16e}").map_err(CliError::io(&path))?;
    }
    finish(w, &path)?;
    write_sidecar(&path, &ctx.meta("steady", ctx.seed.unwrap_or(0), args, Vec::new()))?;
    Ok(())
}
