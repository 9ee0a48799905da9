use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glaudio::analysis::{
    energy_trace, oracle_check, oversmoothing_metric, sensitivity, sensitivity_jacobian_analytic,
    sweep_steps, SweepResult,
};
use glaudio::audio::{export_wav, Channel};
use glaudio::data::{
    load_bundle, load_content_cites, load_geom_gcn, make_splits, save_bundle, synth_distance_task,
    synth_sbm, GraphBundle, IngestReport,
};
use glaudio::decoder::{load_checkpoint, save_checkpoint};
use glaudio::encoder::propagate;
use glaudio::graph::Graph;
use glaudio::operator::build_operator;
use glaudio::train::{evaluate, train, Pipeline, TrainReport};
use glaudio::{par, Error, Result};
use serde::Serialize;
use serde_json::json;

mod config;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "glaudio", version, about = "Wave-signal graph learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.learning_rate=0.01`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Graph bundle; takes precedence over the config's dataset
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long = "out-dir", default_value = "out", global = true)]
    out_dir: PathBuf,
    /// Replaces `train.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel sections on the calling thread
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw dataset or synthetic generator to a graph bundle
    Convert(ConvertArgs),
    /// Run the wave encoder and write the full signal
    Encode,
    /// Train a decoder; writes report, checkpoint and timing
    Train {
        /// Train once per seed listed in the config
        #[arg(long)]
        all_seeds: bool,
    },
    /// Score a checkpoint on a split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Accuracy against step count at fixed stop time
    Sweep,
    /// Energy drift, node similarity and sensitivity probes
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output vertex for the sensitivity probe
        #[arg(long, requires = "checkpoint")]
        vertex: Option<usize>,
        /// Input vertex for the sensitivity probe
        #[arg(long, requires = "vertex")]
        source: Option<usize>,
    },
    /// Compare the encoder with the closed-form solution
    OracleCheck {
        #[arg(long)]
        h: f64,
        #[arg(long = "T")]
        stop_time: f64,
        /// Number of step halvings for the convergence fit
        #[arg(long, default_value_t = 2)]
        refinements: usize,
    },
    /// Write a vertex's wave signal as a WAV file
    ExportWav {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "mix")]
        vertex: Option<usize>,
        #[arg(long)]
        mix: bool,
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, requires = "cites", group = "source")]
    content: Option<PathBuf>,
    #[arg(long)]
    cites: Option<PathBuf>,
    /// geom-gcn node table (`node_id  features  label`)
    #[arg(long, requires = "edges", group = "source")]
    nodes: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Stochastic block model `n,classes,p_in,p_out,noise`
    #[arg(long, group = "source")]
    sbm: Option<String>,
    /// Distance task `k,chains`
    #[arg(long, group = "source")]
    distance: Option<String>,
    /// Output bundle path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

fn main() {
    std::process::exit(run(std::env::args_os().collect()));
}

fn run(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn configure_threads(common: &Common) -> Result<()> {
    if let Some(v) = std::env::var_os("GLAUDIO_THREADS") {
        let n: usize = v
            .to_str()
            .and_then(|s| s.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("GLAUDIO_THREADS={v:?} is not a positive integer")))?;
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    par::set_parallel(!common.sequential);
    Ok(())
}

struct Context {
    cfg: ExperimentConfig,
    config_dir: PathBuf,
    out_dir: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let (mut cfg, config_dir) = match &common.config {
            Some(p) => ExperimentConfig::load(p, &common.overrides)?,
            None => (
                ExperimentConfig::default().with_overrides(&common.overrides)?,
                PathBuf::new(),
            ),
        };
        if let Some(s) = common.seed {
            cfg.train.seed = s;
        }
        std::fs::create_dir_all(&common.out_dir)?;
        Ok(Context {
            cfg,
            config_dir,
            out_dir: common.out_dir.clone(),
        })
    }

    fn bundle(&self, common: &Common) -> Result<(GraphBundle, Option<String>)> {
        let path = match &common.graph {
            Some(p) => p.clone(),
            None => self.cfg.dataset_path(&self.config_dir).ok_or_else(|| {
                Error::InvalidConfig("no graph given (use --graph or set `dataset`)".into())
            })?,
        };
        let mut bundle = load_bundle(&path)?;
        let note = self.fill_splits(&mut bundle)?;
        Ok((bundle, note))
    }

    /// Seeded splits for bundles without any; returns a note when applied.
    fn fill_splits(&self, bundle: &mut GraphBundle) -> Result<Option<String>> {
        match (&bundle.splits, &self.cfg.splits) {
            (None, Some(f)) => {
                bundle.splits = Some(make_splits(
                    bundle.num_nodes,
                    (f.train, f.val, f.test),
                    f.seed,
                )?);
                Ok(Some(format!(
                    "no public split in the bundle; using seeded splits {}/{}/{} (seed {})",
                    f.train, f.val, f.test, f.seed
                )))
            }
            _ => Ok(None),
        }
    }

    fn graph(&self, common: &Common) -> Result<Graph> {
        Ok(self.graph_with_note(common)?.0)
    }

    fn graph_with_note(&self, common: &Common) -> Result<(Graph, Option<String>)> {
        let (bundle, note) = self.bundle(common)?;
        let (g, report) = bundle.to_graph()?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        Ok((g, note))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn write_timing(&self, command: &str, start: Instant) -> Result<()> {
        self.write_json(
            "timing.json",
            &json!({ "command": command, "wall_clock_secs": start.elapsed().as_secs_f64() }),
        )?;
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(spec: &str, what: &str, n: usize) -> Result<Vec<T>> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let vals: Option<Vec<T>> = parts.iter().map(|p| p.parse().ok()).collect();
    match vals {
        Some(v) if v.len() == n => Ok(v),
        _ => Err(Error::InvalidConfig(format!(
            "--{what} expects {n} comma-separated values, got `{spec}`"
        ))),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    configure_threads(common)?;
    let ctx = Context::new(common)?;
    let start = Instant::now();
    match &cli.command {
        Command::Convert(a) => convert(&ctx, a, common)?,
        Command::Encode => encode(&ctx, common)?,
        Command::Train { all_seeds } => train_cmd(&ctx, common, *all_seeds)?,
        Command::Eval { checkpoint, split } => eval_cmd(&ctx, common, checkpoint, *split)?,
        Command::Sweep => sweep_cmd(&ctx, common)?,
        Command::Analyze {
            checkpoint,
            vertex,
            source,
        } => analyze(&ctx, common, checkpoint.as_deref(), *vertex, *source)?,
        Command::OracleCheck {
            h,
            stop_time,
            refinements,
        } => oracle(&ctx, common, *h, *stop_time, *refinements)?,
        Command::ExportWav {
            out,
            vertex,
            mix,
            sample_rate,
            duration,
        } => {
            let mut audio = ctx.cfg.audio;
            if *mix {
                audio.channel = Channel::Mix;
            } else if let Some(v) = vertex {
                audio.channel = Channel::Vertex(*v);
            }
            if let Some(sr) = sample_rate {
                audio.sample_rate = *sr;
            }
            if let Some(d) = duration {
                audio.duration = *d;
            }
            let (bundle, _) = ctx.bundle(common)?;
            let path = out.clone().unwrap_or_else(|| ctx.out_dir.join("signal.wav"));
            let r = export_wav(&bundle, ctx.cfg.train.variant(), &audio, &path)?;
            for n in &r.notes {
                eprintln!("note: {n}");
            }
            ctx.write_json("export_wav.json", &r)?;
            println!("wrote {} ({} samples)", path.display(), r.num_samples);
        }
    }
    ctx.write_timing(command_name(&cli.command), start)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Convert(_) => "convert",
        Command::Encode => "encode",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Sweep => "sweep",
        Command::Analyze { .. } => "analyze",
        Command::OracleCheck { .. } => "oracle-check",
        Command::ExportWav { .. } => "export-wav",
    }
}

fn convert(ctx: &Context, a: &ConvertArgs, common: &Common) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let (mut bundle, report) = if let (Some(c), Some(e)) = (&a.content, &a.cites) {
        load_content_cites(c, e)?
    } else if let (Some(n), Some(e)) = (&a.nodes, &a.edges) {
        load_geom_gcn(n, e)?
    } else if let Some(s) = &a.sbm {
        let v: Vec<f64> = parse_list(s, "sbm", 5)?;
        let bundle = synth_sbm(v[0] as usize, v[1] as usize, v[2], v[3], v[4], seed)?;
        (bundle, IngestReport::default())
    } else if let Some(s) = &a.distance {
        let v: Vec<usize> = parse_list(s, "distance", 2)?;
        (synth_distance_task(v[0], v[1], seed)?, IngestReport::default())
    } else {
        return Err(Error::InvalidConfig(
            "convert needs --content/--cites, --nodes/--edges, --sbm or --distance".into(),
        ));
    };
    if let Some(note) = ctx.fill_splits(&mut bundle)? {
        bundle.metadata.notes.push(note);
    }
    bundle.to_graph()?;
    let name = bundle.metadata.name.clone().unwrap_or_else(|| "graph".into());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("{name}.json")));
    save_bundle(&bundle, &out)?;
    ctx.write_json("convert_report.json", &report)?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        out.display(),
        bundle.num_nodes,
        bundle.edges.len()
    );
    Ok(())
}

fn encode(ctx: &Context, common: &Common) -> Result<()> {
    let g = ctx.graph(common)?;
    let op = build_operator(&g, ctx.cfg.train.variant());
    let signal = propagate(&op, g.features(), ctx.cfg.train.wave()?)?;
    let energy = energy_trace(&signal, &op)?;
    ctx.write_json("signal.json", &signal)?;
    ctx.write_json("energy.json", &energy)?;
    println!(
        "encoded {} steps; max relative energy drift {:.3e}",
        signal.config().steps(),
        energy.max_relative_drift
    );
    Ok(())
}

fn train_cmd(ctx: &Context, common: &Common, all_seeds: bool) -> Result<()> {
    let (g, split_note) = ctx.graph_with_note(common)?;
    let seeds = if all_seeds {
        ctx.cfg.seeds.clone()
    } else {
        vec![ctx.cfg.train.seed]
    };
    let mut reports: Vec<TrainReport> = Vec::new();
    for &seed in &seeds {
        let cfg = glaudio::train::TrainConfig {
            seed,
            ..ctx.cfg.train.clone()
        };
        let (params, mut report) = train(&g, &cfg)?;
        report.notes.extend(split_note.clone());
        let suffix = if all_seeds {
            format!("_seed{seed}")
        } else {
            String::new()
        };
        ctx.write_json(&format!("report{suffix}.json"), &report)?;
        save_checkpoint(
            &params,
            vec![seed],
            &ctx.out_dir.join(format!("checkpoint{suffix}.json")),
        )?;
        println!(
            "seed {seed}: test {} = {}",
            metric_name(&report),
            report
                .test_metric
                .map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"))
        );
        reports.push(report);
    }
    if all_seeds {
        let metrics: Vec<f64> = reports.iter().filter_map(|r| r.test_metric).collect();
        let k = metrics.len() as f64;
        let mean = metrics.iter().sum::<f64>() / k;
        let std = (metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k).sqrt();
        ctx.write_json(
            "summary.json",
            &json!({ "seeds": seeds, "test_metrics": metrics, "mean": mean, "std": std }),
        )?;
        println!("mean {mean:.4} std {std:.4} over {} seeds", metrics.len());
    }
    Ok(())
}

fn metric_name(r: &TrainReport) -> String {
    serde_json::to_value(r.metric)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn eval_cmd(ctx: &Context, common: &Common, checkpoint: &Path, split: Split) -> Result<()> {
    let g = ctx.graph(common)?;
    let (params, _) = load_checkpoint(checkpoint)?;
    let masks = g.masks();
    let (name, mask) = match split {
        Split::Train => ("train", &masks.train),
        Split::Val => ("val", &masks.val),
        Split::Test => ("test", &masks.test),
    };
    let value = evaluate(&params, &g, &ctx.cfg.train, mask)?;
    ctx.write_json("eval.json", &json!({ "split": name, "metric": value }))?;
    println!("{name}: {value:.4}");
    Ok(())
}

fn sweep_cmd(ctx: &Context, common: &Common) -> Result<()> {
    let g = ctx.graph(common)?;
    let t = ctx.cfg.sweep_stop_time();
    let r: SweepResult = sweep_steps(&g, &ctx.cfg.train, &ctx.cfg.sweep.steps, &ctx.cfg.seeds, t)?;
    ctx.write_json("sweep.json", &r)?;
    std::fs::write(ctx.out_dir.join("sweep.csv"), r.to_csv())?;
    let decay = r.mu_decay_rate().ok();
    let best = r.best().map(|e| e.steps);
    ctx.write_json(
        "sweep_summary.json",
        &json!({ "stop_time": t, "best_steps": best, "mu_decay_rate": decay }),
    )?;
    for e in &r.entries {
        println!(
            "N={:<4} h={:.4} mean={:.4} std={:.4} mu={:.4e}",
            e.steps, e.step_size, e.mean_metric, e.std_metric, e.mean_mu
        );
    }
    Ok(())
}

fn analyze(
    ctx: &Context,
    common: &Common,
    checkpoint: Option<&Path>,
    vertex: Option<usize>,
    source: Option<usize>,
) -> Result<()> {
    let g = ctx.graph(common)?;
    let op = build_operator(&g, ctx.cfg.train.variant());
    let signal = propagate(&op, g.features(), ctx.cfg.train.wave()?)?;
    let energy = energy_trace(&signal, &op)?;
    let last = signal.positions().last().expect("at least X^0");
    let mut report = json!({
        "max_relative_energy_drift": energy.max_relative_drift,
        "energy_unstable": energy.unstable,
        "mu_initial": oversmoothing_metric(&op, g.features())?,
        "mu_final_signal": oversmoothing_metric(&op, last)?,
    });
    if let Some(ck) = checkpoint {
        let (params, _) = load_checkpoint(ck)?;
        let pipe = Pipeline::new(&g, &ctx.cfg.train)?;
        if params.spec != pipe.spec() {
            return Err(Error::ShapeMismatch(
                "checkpoint was built for a different configuration".into(),
            ));
        }
        let all: Vec<usize> = (0..g.num_vertices()).collect();
        let y = pipe.predict(&params, &pipe.encode(&params, &all)?.seqs)?;
        report["mu_outputs"] = json!(oversmoothing_metric(&op, &y)?);
        if let Some(v) = vertex {
            let u = source.unwrap_or(v);
            let fd = sensitivity(&pipe, &params, v, u, None)?;
            let an = sensitivity_jacobian_analytic(&pipe, &params, v, u)?.frobenius();
            report["sensitivity"] = json!({
                "vertex": v, "source": u, "finite_difference": fd, "analytic": an
            });
        }
    }
    ctx.write_json("analysis.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn oracle(ctx: &Context, common: &Common, h: f64, t: f64, refinements: usize) -> Result<()> {
    let g = ctx.graph(common)?;
    let op = build_operator(&g, ctx.cfg.train.variant());
    let r = oracle_check(&op, g.features(), h, t, refinements)?;
    ctx.write_json("oracle_check.json", &r)?;
    println!(
        "max deviation {:.3e} at h={h}; convergence order {}",
        r.deviations[0],
        r.convergence_order
            .map_or_else(|| "n/a".into(), |o| format!("{o:.3}"))
    );
    Ok(())
}
