// Copyright 2026 The gancomp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! `gancomp` command-line interface.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gancomp::arch::{ChannelConfig, GeneratorSpec};
use gancomp::config::RunConfig;
use gancomp::cost::{generator_cost, render_table};
use gancomp::data::{self, Dataset, DatasetSpec};
use gancomp::error::{Error, Result};
use gancomp::io::write_atomic;
use gancomp::metrics::evaluate_images;
use gancomp::pipeline::run_pipeline;
use gancomp::search::{
    brute_force_search, evolution_search, Algo, Metric, SpecCost, ValidationFitness,
};
use gancomp::tensor::Tensor;
use gancomp::trainer::{self, TrainData, TrainLog, TrainedModel};

#[derive(Parser)]
#[command(
    name = "gancomp",
    version,
    about = "Compress conditional image-to-image GANs"
)]
struct Cli {
    /// Intra-op thread cap. Kernels are single-threaded, so every value
    /// gives the same bitwise results.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic datasets.
    Data {
        #[command(subcommand)]
        cmd: DataCmd,
    },
    /// Train one model.
    Train(TrainArgs),
    /// Search a trained supernet for the best sub-network under a MAC budget.
    Search(SearchArgs),
    /// Extract a sub-network from a supernet and fine-tune it.
    Finetune(FinetuneArgs),
    /// Score a generator or a directory of images against a dataset.
    Eval(EvalArgs),
    /// Print MAC and parameter counts of a generator.
    Macs(MacsArgs),
    /// Whole compression recipes.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Write a dataset as PPM images plus `dataset.json`.
    Gen {
        /// Run config or bare dataset spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run (or resume) the configured pipeline into an artifacts directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainWhat {
    Teacher,
    Distill,
    Ofa,
}

#[derive(Args)]
struct TrainArgs {
    what: TrainWhat,
    #[arg(long)]
    config: PathBuf,
    /// Teacher checkpoint (required for distill and ofa).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-step JSON lines log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Brute,
    Evolution,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Ffd,
    L1,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    supernet: PathBuf,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    budget_macs: Option<u64>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Output SearchResult JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    supernet: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    /// Channel widths, e.g. "8,16,32,...".
    #[arg(long)]
    config_vec: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory written by `data gen`, or a directory of reference
    /// images.
    #[arg(long)]
    data: PathBuf,
    #[arg(
        long,
        conflicts_with = "generated",
        required_unless_present = "generated"
    )]
    ckpt: Option<PathBuf>,
    /// Directory of generated images (or a dataset directory).
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Sub-network to evaluate when the checkpoint is a supernet.
    #[arg(long, requires = "ckpt")]
    config_vec: Option<String>,
    /// Also write the generated images as a tiled PPM contact sheet.
    #[arg(long)]
    sheet: Option<PathBuf>,
}

#[derive(Args)]
struct MacsArgs {
    /// Generator spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    config_vec: Option<String>,
    /// Input side length; defaults to the spec's resolution.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let _ = cli.threads;
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Data {
            cmd: DataCmd::Gen { config, out },
        } => {
            let spec = dataset_spec(&config)?;
            let ds = data::generate(&spec)?;
            ds.write_dir(&out)?;
            println!(
                "wrote {} train + {} val samples to {} ({})",
                spec.n_train,
                spec.n_val,
                out.display(),
                ds.content_hash()
            );
            Ok(())
        }
        Cmd::Train(a) => train(a),
        Cmd::Search(a) => search(a),
        Cmd::Finetune(a) => finetune(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Macs(a) => macs(a),
        Cmd::Pipeline {
            cmd: PipelineCmd::Run { config, out },
        } => {
            let cfg = RunConfig::load(&config)?;
            let run = run_pipeline(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&run.report)?);
            Ok(())
        }
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::RunConfig(format!("{}: {e}", path.display())))
}

/// A run config's dataset section, or a bare dataset spec.
fn dataset_spec(path: &Path) -> Result<DatasetSpec> {
    let v = read_json(path)?;
    if v.get("dataset").is_some() {
        return Ok(RunConfig::load(path)?.dataset);
    }
    let spec: DatasetSpec =
        serde_json::from_value(v).map_err(|e| Error::RunConfig(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

fn log_for(path: Option<&Path>) -> Result<TrainLog> {
    match path {
        Some(p) => TrainLog::append(p),
        None => Ok(TrainLog::Discard),
    }
}

fn load_teacher(path: Option<&Path>) -> Result<TrainedModel> {
    let p = path.ok_or_else(|| Error::RunConfig("--teacher is required".into()))?;
    TrainedModel::load(p)
}

fn student_data(ds: &Dataset, teacher: &TrainedModel) -> Result<TrainData> {
    let val = ds.val.paired(ds.spec.task)?;
    let d = if ds.spec.task.is_paired() {
        TrainData::paired(&ds.train.paired(ds.spec.task)?)
    } else {
        TrainData::pseudo(teacher, &ds.train.inputs)?
    };
    Ok(d.with_val(val))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let ds = data::generate(&cfg.dataset)?;
    let mut log = log_for(a.log.as_deref())?;
    let conditional = cfg.dataset.task.is_paired();
    let model = match a.what {
        TrainWhat::Teacher => {
            let mut t = TrainedModel::init_teacher(
                &cfg.generator.teacher,
                cfg.discriminator.ndf,
                cfg.discriminator.n_layers,
                conditional,
                cfg.seed,
            )?;
            let d = TrainData::paired(&ds.train.paired(ds.spec.task)?)
                .with_val(ds.val.paired(ds.spec.task)?);
            let loss = cfg.teacher_gan_loss.unwrap_or(cfg.gan_loss);
            trainer::train_teacher(
                &mut t,
                &d,
                &cfg.train_plan(cfg.plan.pretrain, cfg.seed, loss),
                &mut log,
            )?;
            t
        }
        TrainWhat::Distill => {
            let teacher = load_teacher(a.teacher.as_deref())?;
            let mut s = TrainedModel::init_student(
                &teacher,
                &cfg.generator.student,
                None,
                true,
                cfg.plan.map_noise,
                cfg.seed,
            )?;
            let d = student_data(&ds, &teacher)?;
            trainer::distill_student(
                &mut s,
                &teacher,
                &d,
                &cfg.train_plan(cfg.plan.distill, cfg.seed, cfg.gan_loss),
                &mut log,
            )?;
            s
        }
        TrainWhat::Ofa => {
            let teacher = load_teacher(a.teacher.as_deref())?;
            let mut s = TrainedModel::init_student(
                &teacher,
                &cfg.generator.student,
                Some(cfg.choice_sets()),
                true,
                cfg.plan.map_noise,
                cfg.seed,
            )?;
            let d = student_data(&ds, &teacher)?;
            trainer::train_ofa(
                &mut s,
                &teacher,
                &d,
                &cfg.train_plan(cfg.plan.ofa, cfg.seed, cfg.gan_loss),
                &mut log,
            )?;
            s
        }
    };
    log.flush()?;
    model.save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let supernet = TrainedModel::load(&a.supernet)?;
    let sets = supernet
        .choice_sets
        .clone()
        .ok_or_else(|| Error::RunConfig(format!("{} is not a supernet", a.supernet.display())))?;
    let ds = data::generate(&cfg.dataset)?;
    let spec = supernet.spec().clone();
    let budget = match a.budget_macs.or(cfg.search.budget_macs) {
        Some(b) => b,
        None => {
            let t =
                generator_cost(&cfg.generator.teacher, None, cfg.dataset.resolution)?.total_macs;
            (t as f64 / cfg.search.budget_divisor.unwrap_or(1.0)).floor() as u64
        }
    };
    let metric = match a.metric {
        Some(MetricArg::Ffd) => Metric::Ffd,
        Some(MetricArg::L1) => Metric::L1,
        None => cfg.search.metric,
    };
    let cost = SpecCost {
        spec,
        resolution: cfg.dataset.resolution,
    };
    let mut fit = ValidationFitness {
        model: &supernet,
        inputs: &ds.val.inputs,
        references: ds.val.references(),
        metric,
    };
    let algo = match a.algo {
        Some(AlgoArg::Brute) => Algo::Brute,
        Some(AlgoArg::Evolution) => Algo::Evolution,
        None => cfg.algo(),
    };
    let result = match algo {
        Algo::Brute => brute_force_search(&sets, budget, &cost, &mut fit)?,
        Algo::Evolution => evolution_search(&sets, budget, &cost, &mut fit, &cfg.search.evolution)?,
    };
    write_atomic(&a.out, serde_json::to_string_pretty(&result)?.as_bytes())?;
    println!(
        "best {} macs {} fitness {} after {} evaluations",
        result.best.config, result.best.macs, result.best.fitness, result.evaluations
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let supernet = TrainedModel::load(&a.supernet)?;
    let teacher = TrainedModel::load(&a.teacher)?;
    let config = ChannelConfig::parse(&a.config_vec)?;
    let ds = data::generate(&cfg.dataset)?;
    let d = student_data(&ds, &teacher)?;
    let mut log = log_for(a.log.as_deref())?;
    let m = trainer::finetune(
        &supernet,
        &config,
        &teacher,
        &d,
        &cfg.train_plan(cfg.plan.finetune, cfg.seed, cfg.gan_loss),
        &mut log,
    )?;
    log.flush()?;
    m.save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

/// `dir/val/<sub>` for dataset directories, `dir` itself otherwise.
fn images_in(dir: &Path, sub: &str) -> Result<Tensor> {
    let nested = dir.join("val").join(sub);
    data::read_ppm_dir(if nested.is_dir() { &nested } else { dir })
}

fn eval(a: EvalArgs) -> Result<()> {
    let references = images_in(&a.data, "target")?;
    let generated = match (&a.ckpt, &a.generated) {
        (Some(ckpt), _) => {
            let model = TrainedModel::load(ckpt)?;
            let config = a
                .config_vec
                .as_deref()
                .map(ChannelConfig::parse)
                .transpose()?;
            let inputs = data::read_ppm_dir(&a.data.join("val").join("input"))?;
            model.translate(config.as_ref(), &inputs)?
        }
        (None, Some(dir)) => images_in(dir, "target")?,
        (None, None) => unreachable!("enforced by the argument parser"),
    };
    // Pixel targets: the paired targets, or the reference translation of the
    // inputs for unpaired datasets.
    let targets = match read_json(&a.data.join("dataset.json")) {
        Ok(v) => {
            let spec: DatasetSpec = serde_json::from_value(v["spec"].clone())
                .map_err(|e| Error::RunConfig(e.to_string()))?;
            if spec.task.is_paired() {
                references.clone()
            } else {
                data::reference_translation(
                    spec.task,
                    &data::read_ppm_dir(&a.data.join("val").join("input"))?,
                )?
            }
        }
        Err(_) => references.clone(),
    };
    if let Some(sheet) = &a.sheet {
        let cols = (generated.shape()[0] as f64).sqrt().ceil() as usize;
        data::write_ppm(sheet, &data::contact_sheet(&generated, cols.max(1))?)?;
    }
    let m = evaluate_images(&generated, &references, &targets)?;
    println!("{}", serde_json::to_string(&m)?);
    Ok(())
}

fn macs(a: MacsArgs) -> Result<()> {
    let v = read_json(&a.spec)?;
    let spec: GeneratorSpec =
        serde_json::from_value(v).map_err(|e| Error::RunConfig(e.to_string()))?;
    spec.validate()?;
    let config = a
        .config_vec
        .as_deref()
        .map(ChannelConfig::parse)
        .transpose()?;
    let report = generator_cost(
        &spec,
        config.as_ref(),
        a.resolution.unwrap_or(spec.resolution),
    )?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_table(&report));
    }
    Ok(())
}
