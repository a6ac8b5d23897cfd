mod run;
mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use retain_asd::bench::{
    self, comparison_csv, run_eval_many, BenchError, ClipSource, DatasetDir, OracleEmbedder,
    Scorer, SubsetName, SweepAxis, SweepPlan, SweepPoint, SweepRow, TrainedModel,
};
use retain_asd::metrics::{hmean_or_zero, render_grid, EvalReport};
use retain_asd::par::Execution;
use retain_asd::trainer::{Objective, SnrPolicy, TrainError};

use run::{new_run_dir, write_json, RunConfig};
use svg::{line_chart, Series};

/// Bad configuration or arguments; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "retain-asd", version, about = "Synthetic noisy-ASD benchmark, encoder pre-training and KNN evaluation")]
struct Cli {
    /// Global seed; overrides the config and propagates to every component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build benchmark subsets and write them as dataset directories.
    Synth(SynthArgs),
    /// Pre-train an encoder on the synthetic corpus.
    Train(TrainArgs),
    /// KNN evaluation of a checkpoint on benchmark subsets.
    Eval(EvalArgs),
    /// Compare waveform embeddings with the embedding-mixture oracle.
    Oracle(OracleArgs),
    /// Train and evaluate along one axis.
    Sweep(SweepArgs),
    /// Render comparison grids from earlier eval reports and sweeps.
    Report(ReportArgs),
}

#[derive(Args)]
struct SubsetArgs {
    /// Subsets to build; all three when omitted.
    #[arg(long, value_parser = parse_subset)]
    subset: Vec<SubsetName>,
    /// A single evaluation SNR in dB.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "snr_grid")]
    snr: Option<i64>,
    /// Comma-separated evaluation SNRs in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr_grid: Option<String>,
    /// Noise clips synthesized per noise kind.
    #[arg(long)]
    noise_clips: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    subsets: SubsetArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Retain,
    Denoise,
    DenoiseLinearMixup,
    DenoiseSnrMixup,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directories written by `synth`; built in memory from the config when omitted.
    #[arg(long)]
    dataset: Vec<PathBuf>,
    #[command(flatten)]
    subsets: SubsetArgs,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Score every clip by its ground-truth label.
    #[arg(long)]
    perfect: bool,
    /// Also write an SNR-vs-score chart.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    subsets: SubsetArgs,
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    TrainingSnr,
    Layer,
    LossWeights,
    PretrainData,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Points on the axis, comma separated: `0,-5:5` for SNR policies, `1:0,0:1`
    /// for loss weights, `1,2,3` for layers, clips per class for pre-training data.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    subsets: SubsetArgs,
    /// Train points concurrently.
    #[arg(long)]
    parallel_points: bool,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` files or sweep directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn parse_subset(s: &str) -> Result<SubsetName, String> {
    SubsetName::parse(s).ok_or_else(|| format!("unknown subset {s:?}"))
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| config_err(format!("bad {what} {v:?}"))))
        .collect()
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| config_err(format!("bad {what} {s:?}")))?;
    let a = a.trim().parse().map_err(|_| config_err(format!("bad {what} {s:?}")))?;
    let b = b.trim().parse().map_err(|_| config_err(format!("bad {what} {s:?}")))?;
    Ok((a, b))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    mode: Execution,
}

impl Ctx {
    fn run_dir(&self, command: &str) -> Result<PathBuf> {
        let dir = new_run_dir(&self.out, command)?;
        write_json(&dir.join("config.json"), &self.cfg)?;
        Ok(dir)
    }

    fn apply_subsets(&mut self, args: &SubsetArgs) -> Result<()> {
        let e = &mut self.cfg.experiment;
        if !args.subset.is_empty() {
            let mut specs = Vec::new();
            for &name in &args.subset {
                let spec = e
                    .subsets
                    .iter()
                    .find(|s| s.name == name)
                    .cloned()
                    .unwrap_or_else(|| bench::SubsetSpec::new(name).with_counts(e.pools.counts));
                specs.push(spec);
            }
            e.subsets = specs;
        }
        let grid = match (args.snr, &args.snr_grid) {
            (Some(v), _) => Some(vec![v]),
            (None, Some(g)) => Some(parse_list::<i64>(g, "SNR")?),
            (None, None) => None,
        };
        if let Some(g) = grid {
            for s in &mut e.subsets {
                s.snr_grid = g.clone();
            }
        }
        if let Some(n) = args.noise_clips {
            e.pools.noise_clips_per_kind = n;
        }
        for s in &e.subsets {
            s.validate().map_err(anyhow::Error::from)?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration, 3 for data, 4 for a diverged loss.
fn exit_code(e: &anyhow::Error) -> u8 {
    fn train(t: &TrainError) -> u8 {
        match t {
            TrainError::NonFiniteLoss { .. } => 4,
            TrainError::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return train(t);
        }
        if let Some(b) = cause.downcast_ref::<BenchError>() {
            return match b {
                BenchError::InvalidSpec(_) => 2,
                BenchError::Train(t) => train(t),
                _ => 3,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn real_main(cli: Cli) -> Result<()> {
    let mode = match cli.jobs {
        Some(0) => return Err(config_err("--jobs must be at least 1")),
        Some(1) => Execution::Sequential,
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new().num_threads(_n).build_global().context("building thread pool")?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let mut ctx = Ctx { cfg, out: cli.out, mode };
    ctx.cfg.experiment.eval.mode = mode;
    match cli.command {
        Command::Synth(a) => synth(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Oracle(a) => oracle(&mut ctx, a),
        Command::Sweep(a) => sweep(&mut ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn synth(ctx: &mut Ctx, a: SynthArgs) -> Result<()> {
    ctx.apply_subsets(&a.subsets)?;
    let dir = ctx.run_dir("synth")?;
    let e = &ctx.cfg.experiment;
    let (machines, noises) = e.synth_pools(ctx.mode)?;
    let subsets = e.build_subsets(&machines, &noises, ctx.mode)?;
    let mut hashes = BTreeMap::new();
    for s in &subsets {
        let sub = dir.join(s.spec.name.as_str());
        s.write_dir(&sub, ctx.mode)?;
        let hash = s.manifest.hash()?;
        println!("{} {} rows={} sha256={}", s.spec.name.as_str(), sub.display(), s.manifest.rows.len(), hash);
        hashes.insert(s.spec.name.as_str().to_string(), hash);
    }
    write_json(&dir.join("hashes.json"), &hashes)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn train(ctx: &mut Ctx, a: TrainArgs) -> Result<()> {
    let t = &mut ctx.cfg.experiment.train;
    if let Some(s) = a.steps {
        t.steps = s;
    }
    if let Some(o) = a.objective {
        t.objective = match o {
            ObjectiveArg::Retain => Objective::Retain,
            ObjectiveArg::Denoise => Objective::Denoise,
            ObjectiveArg::DenoiseLinearMixup => Objective::DenoiseLinearMixup { beta_ab: 0.5 },
            ObjectiveArg::DenoiseSnrMixup => Objective::DenoiseSnrMixup,
        };
    }
    let dir = ctx.run_dir("train")?;
    let e = &ctx.cfg.experiment;
    let corpus = e.synth_corpus(ctx.mode)?;
    let train_dir = dir.join("train");
    bench::train_model(&corpus, &e.train, ctx.mode, Some(&train_dir))?;
    let ck = train_dir.join("checkpoints").join(format!("step_{}.bin", e.train.steps));
    println!("checkpoint: {}", ck.display());
    println!("run directory: {}", dir.display());
    Ok(())
}

fn load_model(path: Option<&Path>) -> Result<TrainedModel> {
    let path = path.ok_or_else(|| config_err("--checkpoint is required unless --perfect is set"))?;
    Ok(TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))?)
}

fn snr_chart(title: &str, rows: &[(String, &EvalReport)]) -> String {
    let mut series = Vec::new();
    for (label, r) in rows {
        for s in r.subsets() {
            let points = r.snrs().into_iter().filter_map(|snr| r.cell(&s, snr).map(|v| (snr as f64, v * 100.0))).collect();
            let name = if rows.len() == 1 { s.clone() } else { format!("{label} {s}") };
            series.push(Series { name, points });
        }
    }
    line_chart(title, "SNR (dB)", &series)
}

fn write_report(dir: &Path, label: &str, r: &EvalReport) -> Result<String> {
    r.write_json(dir.join("report.json"))?;
    r.write_csv(dir.join("report.csv")).context("writing report.csv")?;
    let table = render_grid(&[(label.to_string(), r.clone())]);
    fs::write(dir.join("table.txt"), &table)?;
    Ok(table)
}

fn eval(ctx: &mut Ctx, a: EvalArgs) -> Result<()> {
    if let Some(k) = a.k {
        ctx.cfg.experiment.eval.k = k;
    }
    if a.dataset.is_empty() {
        ctx.apply_subsets(&a.subsets)?;
    }
    let dir = ctx.run_dir("eval")?;
    let e = &ctx.cfg.experiment;
    let model = if a.perfect { None } else { Some(load_model(a.checkpoint.as_deref())?) };
    let embedder = match &model {
        Some(m) => Some(m.embedder(m.scoring_layer(a.layer.or(e.layer))?)),
        None => None,
    };
    let scorer = match &embedder {
        Some(emb) => Scorer::knn(emb),
        None => Scorer::Label,
    };
    let label = if a.perfect { "perfect".to_string() } else { format!("Layer {}", embedder.as_ref().map_or(0, |e| e.layer)) };

    let report = if a.dataset.is_empty() {
        let (machines, noises) = e.synth_pools(ctx.mode)?;
        let subsets = e.build_subsets(&machines, &noises, ctx.mode)?;
        let sources: Vec<&dyn ClipSource> = subsets.iter().map(|s| s as &dyn ClipSource).collect();
        run_eval_many(&sources, &[scorer], &e.eval)?.remove(0)
    } else {
        let dirs = a
            .dataset
            .iter()
            .map(|p| DatasetDir::open(p).with_context(|| format!("opening dataset {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let sources: Vec<&dyn ClipSource> = dirs.iter().map(|s| s as &dyn ClipSource).collect();
        run_eval_many(&sources, &[scorer], &e.eval)?.remove(0)
    };
    let table = write_report(&dir, &label, &report)?;
    if a.svg {
        fs::write(dir.join("snr_curve.svg"), snr_chart("Official score vs SNR", &[(label.clone(), &report)]))?;
    }
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn oracle(ctx: &mut Ctx, a: OracleArgs) -> Result<()> {
    if a.subsets.subset.is_empty() && a.subsets.snr.is_none() && a.subsets.snr_grid.is_none() {
        ctx.cfg.experiment.subsets = vec![bench::SubsetSpec::new(SubsetName::Mismatch).with_snrs(&[0])];
    }
    ctx.apply_subsets(&a.subsets)?;
    let dir = ctx.run_dir("oracle")?;
    let e = &ctx.cfg.experiment;
    let model = load_model(Some(&a.checkpoint))?;
    let layer = model.scoring_layer(a.layer.or(e.layer))?;
    let wave = model.embedder(layer);
    let oracle = OracleEmbedder::new(&model.params, layer, model.norm);
    let (machines, noises) = e.synth_pools(ctx.mode)?;
    let subsets = e.build_subsets(&machines, &noises, ctx.mode)?;
    let sources: Vec<&dyn ClipSource> = subsets.iter().map(|s| s as &dyn ClipSource).collect();
    let reports = run_eval_many(&sources, &[Scorer::knn(&wave), Scorer::knn(&oracle)], &e.eval)?;

    let mut csv = String::from("machine_type,method,hmean\n");
    let mut table = format!("{:<12} {:<18} {:>6}\n", "machine", "method", "Hmean");
    let machines: Vec<String> = {
        let mut m: Vec<String> = reports[0].rows.iter().map(|r| r.machine_type.clone()).collect();
        m.dedup();
        m.sort();
        m.dedup();
        m
    };
    for m in &machines {
        for (method, r) in ["wave", "embedding-oracle"].iter().zip(&reports) {
            let comps: Vec<f64> = r
                .rows
                .iter()
                .filter(|row| &row.machine_type == m)
                .flat_map(|row| [row.source_auc, row.target_auc, row.pauc])
                .collect();
            let h = hmean_or_zero(&comps);
            csv.push_str(&format!("{m},{method},{:.4}\n", h * 100.0));
            table.push_str(&format!("{m:<12} {method:<18} {:>6.1}\n", h * 100.0));
        }
    }
    fs::write(dir.join("oracle.csv"), &csv)?;
    fs::write(dir.join("table.txt"), &table)?;
    write_json(&dir.join("reports.json"), &reports)?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn sweep_points(axis: AxisArg, grid: Option<&str>, ctx: &Ctx) -> Result<SweepPlan> {
    let base = ctx.cfg.experiment.clone();
    let plan = match axis {
        AxisArg::TrainingSnr => {
            let g = grid.unwrap_or("0,-5:5");
            let policies = g
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    if v.contains(':') {
                        let (lo, hi) = parse_pair(v, "SNR range")?;
                        Ok(SnrPolicy::Uniform(lo, hi))
                    } else {
                        v.parse().map(SnrPolicy::Fixed).map_err(|_| config_err(format!("bad SNR {v:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            SweepPlan::training_snr(&policies, base)
        }
        AxisArg::Layer => match grid {
            None => SweepPlan::layers(base),
            Some(g) => {
                let layers = parse_list::<usize>(g, "layer")?;
                SweepPlan::new(SweepAxis::Layer, layers.into_iter().map(SweepPoint::Layer).collect(), base)
            }
        },
        AxisArg::LossWeights => {
            let g = grid.unwrap_or("1:0,0:1,1:1");
            let w = g.split(',').map(|v| parse_pair(v.trim(), "loss weights")).collect::<Result<Vec<_>>>()?;
            SweepPlan::loss_weights(&w, base)
        }
        AxisArg::PretrainData => {
            let g = grid.ok_or_else(|| config_err("pretrain_data sweeps need --grid with clips per class"))?;
            let points = parse_list::<usize>(g, "clips per class")?
                .into_iter()
                .map(|n| {
                    let mut corpus = base.corpus.clone();
                    corpus.clips_per_class = n;
                    SweepPoint::PretrainData { label: format!("{n} clips per class"), corpus }
                })
                .collect();
            SweepPlan::new(SweepAxis::PretrainData, points, base)
        }
    };
    Ok(plan)
}

fn sweep(ctx: &mut Ctx, a: SweepArgs) -> Result<()> {
    if let Some(s) = a.steps {
        ctx.cfg.experiment.train.steps = s;
    }
    ctx.apply_subsets(&a.subsets)?;
    let mut plan = sweep_points(a.axis, a.grid.as_deref(), ctx)?;
    plan.parallel = a.parallel_points;
    plan.validate()?;
    let dir = ctx.run_dir("sweep")?;
    let rows = bench::sweep(&plan, Some(&dir), ctx.mode)?;
    let labelled: Vec<(String, EvalReport)> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
    let table = render_grid(&labelled);
    fs::write(dir.join("table.txt"), &table)?;
    if a.svg {
        let chart = if plan.axis == SweepAxis::Layer {
            let points = rows
                .iter()
                .filter_map(|r| match r.point {
                    SweepPoint::Layer(l) => Some((l as f64, r.report.hmean_all * 100.0)),
                    _ => None,
                })
                .collect();
            line_chart("Hmean vs layer", "layer", &[Series { name: "Hmean (all)".into(), points }])
        } else {
            let refs: Vec<(String, &EvalReport)> = rows.iter().map(|r| (r.label.clone(), &r.report)).collect();
            snr_chart("Official score vs SNR", &refs)
        };
        fs::write(dir.join("curve.svg"), chart)?;
    }
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn load_sweep_rows(dir: &Path) -> Result<Vec<SweepRow>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("points"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            serde_json::from_slice(&bytes).map_err(|e| config_err(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let mut grids: Vec<(String, Vec<(String, EvalReport)>)> = Vec::new();
    let mut loose: Vec<(String, EvalReport)> = Vec::new();
    for input in &a.inputs {
        if input.is_dir() && input.join("points").is_dir() {
            let rows = load_sweep_rows(input)?;
            if rows.is_empty() {
                bail!(ConfigError(format!("sweep {} has no finished points", input.display())));
            }
            let name = input.file_name().map_or_else(|| input.display().to_string(), |n| n.to_string_lossy().into_owned());
            grids.push((name, rows.into_iter().map(|r| (r.label, r.report)).collect()));
        } else {
            let path = if input.is_dir() { input.join("report.json") } else { input.clone() };
            let r = EvalReport::read_json(&path).with_context(|| format!("reading {}", path.display()))?;
            let label = path
                .parent()
                .and_then(|p| p.file_name())
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            loose.push((label, r));
        }
    }
    if !loose.is_empty() {
        grids.push(("reports".to_string(), loose));
    }
    let dir = ctx.run_dir("report")?;
    let mut text = String::new();
    for (i, (name, rows)) in grids.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        text.push_str(&format!("== {name} ==\n"));
        text.push_str(&render_grid(rows));
        fs::write(
            dir.join(format!("grid_{i:02}.csv")),
            comparison_csv(rows.iter().map(|(l, r)| (l.as_str(), r))),
        )?;
    }
    fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    println!("run directory: {}", dir.display());
    Ok(())
}
