//! `drpt` command line. Every subcommand is a thin wrapper over library calls
//! and ends by writing `<out>/<command>.manifest.json`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (including a failed gradient check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{batch_iter, load_features, synth_generate, write_synth_dir, Dataset, Sample};
use crate::entanglement::{compute_entanglement, EntanglementStats};
use crate::error::{Error, Result};
use crate::eval::{evaluate, topk_image_retrieval, topk_text_retrieval};
use crate::hash::hex_digest;
use crate::model::{init_model, load_checkpoint, save_checkpoint, Backbone, Checkpoint, CheckpointSidecar};
use crate::space::{load_space, CompositionSpace, Pair, Split, OBJECTS_FILE, STATES_FILE};
use crate::training::{
    finite_diff_check, sweep_csv, sweep_sequences, train, Objective, StatusSchedule, TrainStatus,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(name = "drpt", version, about = "Disentangled recurrent prompt tuning at desk scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation (synth) or training and initialisation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation scoring.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic split manifest with feature files.
    Synth(SynthArgs),
    /// Print entanglement statistics of a split manifest.
    EntStats {
        data: PathBuf,
    },
    /// Train a prompt table on the seen split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a val or test split.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        data: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Train all six status orderings plus the joint baseline and compare.
    SweepSequences(SweepArgs),
    /// Top-k retrieval between images and composition prompts.
    Retrieve(RetrieveArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    seen_fraction: Option<f64>,
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Status ordering such as `o-a-ao`.
    #[arg(long)]
    schedule: Option<StatusSchedule>,
    /// Epochs per status (K).
    #[arg(long)]
    round_range: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    data: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Train both tables every epoch without reweighting.
    #[arg(long)]
    joint_baseline: bool,
    /// Force a single status for every epoch (`o`, `a` or `ao`).
    #[arg(long, conflicts_with = "schedule")]
    force_status: Option<TrainStatus>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    data: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["sample", "pair"]))]
struct RetrieveArgs {
    checkpoint: PathBuf,
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Image-to-text: rank candidate pairs for this sample of the split.
    #[arg(long)]
    sample: Option<usize>,
    /// Text-to-image: rank the split's samples for `state,object`.
    #[arg(long)]
    pair: Option<String>,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
}

/// Provenance record written at the end of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path to sha256.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    pub version: String,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
    /// A check ran cleanly and failed.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn exit_code(failure: &Failure) -> i32 {
    match failure {
        Failure::Usage(_) | Failure::Lib(Error::Config(_)) => EXIT_USAGE,
        Failure::Lib(e) if e.is_numeric() => EXIT_NUMERIC,
        Failure::Lib(_) => EXIT_DATA,
        Failure::Check(_) => EXIT_NUMERIC,
    }
}

/// Parse `args` (including the program name) and run one command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let msg = match &failure {
                Failure::Usage(m) | Failure::Check(m) => m.clone(),
                Failure::Lib(e) => e.to_string(),
            };
            eprintln!("drpt: error: {msg}");
            exit_code(&failure)
        }
    }
}

struct Run {
    command: &'static str,
    started: Instant,
    common: Common,
    config: RunConfig,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    fn new(command: &'static str, common: Common) -> CmdResult<Self> {
        let mut run = Run {
            command,
            started: Instant::now(),
            config: RunConfig::default(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            common,
        };
        if let Some(path) = run.common.config.clone() {
            run.config = RunConfig::load(&path)?;
            run.input(&path)?;
        }
        Ok(run)
    }

    fn threads(&self) -> usize {
        self.common.threads as usize
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(path.display().to_string(), hex_digest(&bytes));
        Ok(())
    }

    fn manifest_inputs(&mut self, data: &Path, splits: &[Split]) -> Result<()> {
        self.input(&data.join(STATES_FILE))?;
        self.input(&data.join(OBJECTS_FILE))?;
        for split in Split::ALL {
            self.input(&data.join(split.pairs_file()))?;
        }
        for split in splits {
            self.input(&feature_path(data, *split))?;
        }
        Ok(())
    }

    fn out_dir(&self, fallback: Option<&Path>) -> CmdResult<PathBuf> {
        let dir = match (&self.common.out, fallback) {
            (Some(out), _) => out.clone(),
            (None, Some(f)) => f.to_path_buf(),
            (None, None) => return Err(Failure::Usage(format!("{} requires --out <DIR>", self.command))),
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.outputs.insert(path.display().to_string(), hex_digest(&bytes));
        Ok(())
    }

    fn write_output(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        write_atomic(path, contents)?;
        self.output(path)
    }

    fn finish(self, out: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(&self.config)?,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_atomic(
            &out.join(RunManifest::file_name(self.command)),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn feature_path(data: &Path, split: Split) -> PathBuf {
    data.join(format!("{split}.bin"))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(Run::new("synth", cli.common)?, args),
        Command::EntStats { data } => cmd_ent_stats(Run::new("ent-stats", cli.common)?, &data),
        Command::Train(args) => cmd_train(Run::new("train", cli.common)?, args),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => cmd_eval(Run::new("eval", cli.common)?, &checkpoint, &data, split),
        Command::Gradcheck { data, threshold, h } => {
            cmd_gradcheck(Run::new("gradcheck", cli.common)?, &data, threshold, h)
        }
        Command::SweepSequences(args) => cmd_sweep(Run::new("sweep-sequences", cli.common)?, args),
        Command::Retrieve(args) => cmd_retrieve(Run::new("retrieve", cli.common)?, args),
    }
}

fn cmd_synth(mut run: Run, args: SynthArgs) -> CmdResult<()> {
    let out = run.out_dir(None)?;
    let synth = &mut run.config.synth;
    if let Some(seed) = run.common.seed {
        synth.seed = seed;
    }
    synth.n_states = args.states.unwrap_or(synth.n_states);
    synth.n_objects = args.objects.unwrap_or(synth.n_objects);
    synth.seen_fraction = args.seen_fraction.unwrap_or(synth.seen_fraction);
    synth.skew = args.skew.unwrap_or(synth.skew);
    synth.noise_sigma = args.noise.unwrap_or(synth.noise_sigma);
    run.seed = Some(synth.seed);

    let generated = synth_generate(synth)?;
    write_synth_dir(&out, &generated)?;
    for name in [STATES_FILE, OBJECTS_FILE, Backbone::FILE] {
        run.output(&out.join(name))?;
    }
    for split in Split::ALL {
        run.output(&out.join(split.pairs_file()))?;
        run.output(&feature_path(&out, split))?;
    }
    let stats = compute_entanglement(&generated.space);
    report_stats(&stats, run.common.json)?;
    run.finish(&out)?;
    Ok(())
}

fn report_stats(stats: &EntanglementStats, json: bool) -> Result<()> {
    if json {
        return print_json(stats);
    }
    println!("{:<10} {:>10}", "|A|", stats.n_states);
    println!("{:<10} {:>10}", "|O|", stats.n_objects);
    println!("{:<10} {:>10}", "|C^s|", stats.n_seen);
    println!("{:<10} {:>10.2}", "ent_avg", stats.ent_avg);
    println!("{:<10} {:>10.4}", "var_a", stats.var_a);
    println!("{:<10} {:>10.4}", "var_o", stats.var_o);
    Ok(())
}

fn cmd_ent_stats(mut run: Run, data: &Path) -> CmdResult<()> {
    let space = load_space(data)?;
    run.manifest_inputs(data, &[])?;
    let stats = compute_entanglement(&space);
    report_stats(&stats, run.common.json)?;
    let out = run.out_dir(Some(data))?;
    run.write_output(&out.join("ent_stats.json"), serde_json::to_string_pretty(&stats)?.as_bytes())?;
    run.finish(&out)?;
    Ok(())
}

fn apply_train_overrides(run: &mut Run, o: &TrainOverrides) -> CmdResult<()> {
    let train = &mut run.config.train;
    if let Some(seed) = run.common.seed {
        train.seed = seed;
    }
    train.epochs = o.epochs.unwrap_or(train.epochs);
    train.learning_rate = o.lr.unwrap_or(train.learning_rate);
    if let Some(alpha) = o.alpha {
        train.weight.alpha = alpha;
    }
    if let Some(schedule) = &o.schedule {
        train.schedule = schedule.with_round_range(train.schedule.round_range())?;
    }
    if let Some(k) = o.round_range {
        train.schedule = train.schedule.with_round_range(k)?;
    }
    train.validate()?;
    run.seed = Some(train.seed);
    Ok(())
}

/// Space, datasets and the initial model for a data directory.
struct Prepared {
    space: CompositionSpace,
    backbone: Backbone,
    datasets: BTreeMap<Split, Dataset>,
}

impl Prepared {
    fn dataset(&self, split: Split) -> &Dataset {
        &self.datasets[&split]
    }
}

fn prepare(run: &mut Run, data: &Path, splits: &[Split]) -> Result<Prepared> {
    let space = load_space(data)?;
    let mut datasets = BTreeMap::new();
    for &split in splits {
        datasets.insert(split, load_features(&feature_path(data, split), split, &space)?);
    }
    run.manifest_inputs(data, splits)?;
    let backbone_path = data.join(Backbone::FILE);
    let backbone = if backbone_path.exists() {
        run.input(&backbone_path)?;
        Backbone::load(data)?
    } else {
        Backbone {
            latent_dim: run.config.model.latent_dim,
            feature_dim: datasets.values().next().map_or(0, |d| d.feature_dim),
            seed: run.config.model.backbone_seed,
        }
    };
    if let Some(embedding) = match &run.config.model.init {
        crate::model::InitSource::EmbeddingFile(p) => Some(p.clone()),
        crate::model::InitSource::Gaussian => None,
    } {
        run.input(&embedding)?;
    }
    Ok(Prepared {
        space,
        backbone,
        datasets,
    })
}

fn initial_model(run: &Run, prep: &Prepared) -> Result<Checkpoint> {
    let train = &run.config.train;
    let (table, encoders) = init_model(&prep.space, &prep.backbone, train.tau, train.seed, &run.config.model.init)?;
    Ok(Checkpoint { table, encoders })
}

fn cmd_train(mut run: Run, args: TrainArgs) -> CmdResult<()> {
    let out = run.out_dir(None)?;
    apply_train_overrides(&mut run, &args.overrides)?;
    if args.joint_baseline {
        run.config.train.joint_baseline = true;
        run.config.train.weight.alpha = 0.0;
    }
    if let Some(status) = args.force_status {
        let k = run.config.train.schedule.round_range();
        run.config.train.schedule = StatusSchedule::forced(status, k)?;
    }
    let mut splits = vec![Split::Train];
    if run.config.train.eval_every > 0 {
        splits.push(Split::Val);
    }
    let prep = prepare(&mut run, &args.data, &splits)?;
    let init = initial_model(&run, &prep)?;
    let (table, history) = train(
        &run.config.train,
        &prep.space,
        &init.encoders,
        init.table,
        prep.dataset(Split::Train),
        prep.datasets.get(&Split::Val),
    )?;
    let checkpoint = Checkpoint {
        table,
        encoders: init.encoders,
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let sidecar = CheckpointSidecar {
        space_hash: prep.space.manifest_hash(),
        config: serde_json::to_value(&run.config)?,
    };
    save_checkpoint(&ckpt_path, &checkpoint, &sidecar)?;
    run.output(&ckpt_path)?;
    history.write(&out)?;
    run.output(&out.join("history.csv"))?;
    run.output(&out.join("history.json"))?;
    let config_toml = run.config.to_toml();
    run.write_output(&out.join("config.toml"), config_toml.as_bytes())?;

    let last = history.epochs.last();
    if run.common.json {
        print_json(&serde_json::json!({
            "checkpoint": ckpt_path,
            "epochs": history.epochs.len(),
            "final_loss": last.map(|e| e.loss),
            "final_train_acc": last.map(|e| e.train_acc),
            "freeze_sound": history.freeze_sound(),
        }))?;
    } else {
        for e in &history.epochs {
            println!("epoch {:>3}  {:<2}  loss {:.5}  train_acc {:.4}", e.epoch, e.status.code(), e.loss, e.train_acc);
        }
        println!("wrote {}", ckpt_path.display());
    }
    run.finish(&out)?;
    Ok(())
}

fn load_checked(run: &mut Run, path: &Path, space: &CompositionSpace) -> Result<Checkpoint> {
    let (checkpoint, sidecar) = load_checkpoint(path)?;
    run.input(path)?;
    if let Some(side) = sidecar {
        if side.space_hash != space.manifest_hash() {
            return Err(Error::InvalidSpace(format!(
                "checkpoint {} was trained on a different split manifest",
                path.display()
            )));
        }
    }
    if checkpoint.table.theta_a.nrows() != space.n_states() || checkpoint.table.theta_o.nrows() != space.n_objects() {
        return Err(Error::InvalidSpace(format!(
            "checkpoint {} does not match the manifest's primitives",
            path.display()
        )));
    }
    Ok(checkpoint)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_eval(mut run: Run, checkpoint: &Path, data: &Path, split: Split) -> CmdResult<()> {
    if split == Split::Train {
        return Err(Failure::Usage("eval needs the val or test split".into()));
    }
    let space = load_space(data)?;
    let ckpt = load_checked(&mut run, checkpoint, &space)?;
    let dataset = load_features(&feature_path(data, split), split, &space)?;
    run.manifest_inputs(data, &[split])?;
    let report = evaluate(&ckpt.encoders, &ckpt.table, &dataset, &space, run.threads())?;
    let out = run.out_dir(Some(&parent_dir(checkpoint)))?;
    run.write_output(
        &out.join(format!("eval_{split}.json")),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    run.write_output(&out.join(format!("curve_{split}.csv")), report.curve_csv().as_bytes())?;
    if run.common.json {
        print_json(&report)?;
    } else {
        println!("split      {split}");
        println!("seen       {:.4}", report.seen_acc);
        println!("unseen     {:.4}", report.unseen_acc);
        println!("hm@0       {:.4}", report.hm_at_zero);
        println!("best_hm    {:.4}", report.best_hm);
        println!("auc        {:.4}", report.auc);
        println!("state_acc  {:.4}", report.state_acc);
        println!("object_acc {:.4}", report.object_acc);
    }
    run.finish(&out)?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport {
    h: f64,
    threshold: f64,
    batch_size: usize,
    per_status: BTreeMap<String, f64>,
    max_rel_error: f64,
    passed: bool,
}

fn cmd_gradcheck(mut run: Run, data: &Path, threshold: Option<f64>, h: Option<f64>) -> CmdResult<()> {
    if let Some(seed) = run.common.seed {
        run.config.train.seed = seed;
    }
    run.seed = Some(run.config.train.seed);
    let gc = &mut run.config.gradcheck;
    gc.threshold = threshold.unwrap_or(gc.threshold);
    gc.h = h.unwrap_or(gc.h);
    let gc = gc.clone();
    if gc.batch_size == 0 || gc.statuses.is_empty() {
        return Err(Failure::Usage("gradcheck needs batch_size >= 1 and at least one status".into()));
    }
    let prep = prepare(&mut run, data, &[Split::Train])?;
    let mut model = initial_model(&run, &prep)?;
    model.table.theta_a *= gc.table_scale;
    model.table.theta_o *= gc.table_scale;
    let train_set = prep.dataset(Split::Train);
    let order = batch_iter(train_set.len(), gc.batch_size, run.config.train.seed, 0)?;
    let batch: Vec<&Sample> = order[0].iter().map(|&i| &train_set.samples[i]).collect();
    let objective = Objective::new(&prep.space, &run.config.train.weight)?;

    let mut per_status = BTreeMap::new();
    for &status in &gc.statuses {
        let err = finite_diff_check(&model.encoders, &model.table, &batch, &objective, status, gc.h)?;
        per_status.insert(status.code().to_string(), err);
    }
    let max_rel_error = per_status.values().copied().fold(0.0, f64::max);
    let passed = max_rel_error < gc.threshold;
    let report = GradcheckReport {
        h: gc.h,
        threshold: gc.threshold,
        batch_size: batch.len(),
        per_status,
        max_rel_error,
        passed,
    };
    if run.common.json {
        print_json(&report)?;
    } else {
        for (status, err) in &report.per_status {
            println!("{status:<3} max rel error {err:.3e}");
        }
        println!("max rel error {max_rel_error:.3e} (threshold {:.1e})", gc.threshold);
    }
    let out = run.out_dir(Some(data))?;
    run.write_output(&out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    run.finish(&out)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: max relative error {max_rel_error:.3e} >= {:.1e}",
            gc.threshold
        )))
    }
}

fn cmd_sweep(mut run: Run, args: SweepArgs) -> CmdResult<()> {
    let out = run.out_dir(None)?;
    apply_train_overrides(&mut run, &args.overrides)?;
    let prep = prepare(&mut run, &args.data, &[Split::Train, Split::Test])?;
    let init = initial_model(&run, &prep)?;
    let rows = sweep_sequences(
        &run.config.train,
        &prep.space,
        &init.encoders,
        &init.table,
        prep.dataset(Split::Train),
        prep.dataset(Split::Test),
        run.threads(),
    )?;
    let csv = sweep_csv(&rows);
    run.write_output(&out.join("sequence_sweep.csv"), csv.as_bytes())?;
    run.write_output(&out.join("sequence_sweep.json"), serde_json::to_string_pretty(&rows)?.as_bytes())?;
    if run.common.json {
        print_json(&rows)?;
    } else {
        print!("{csv}");
    }
    run.finish(&out)?;
    Ok(())
}

fn parse_pair(text: &str, space: &CompositionSpace) -> CmdResult<Pair> {
    let (s, o) = text
        .split_once(',')
        .ok_or_else(|| Failure::Usage(format!("--pair expects state,object; got {text:?}")))?;
    let find = |names: &[String], name: &str| names.iter().position(|n| n == name.trim());
    match (find(&space.states, s), find(&space.objects, o)) {
        (Some(state), Some(object)) => Ok(Pair::new(state, object)),
        _ => Err(Failure::Lib(Error::UnknownPrimitive {
            path: PathBuf::from("--pair"),
            name: text.to_string(),
        })),
    }
}

fn cmd_retrieve(mut run: Run, args: RetrieveArgs) -> CmdResult<()> {
    let space = load_space(&args.data)?;
    let ckpt = load_checked(&mut run, &args.checkpoint, &space)?;
    let dataset = load_features(&feature_path(&args.data, args.split), args.split, &space)?;
    run.manifest_inputs(&args.data, &[args.split])?;
    let result = if let Some(i) = args.sample {
        let sample = dataset
            .samples
            .get(i)
            .ok_or_else(|| Failure::Usage(format!("sample {i} out of range ({} samples)", dataset.len())))?;
        let (candidates, _) = space.candidates(args.split);
        let hits = topk_text_retrieval(&ckpt.encoders, &ckpt.table, &sample.features, &candidates, args.k)?;
        serde_json::json!({
            "query": { "sample": i, "label": space.pair_name(sample.label) },
            "results": hits.iter().map(|h| serde_json::json!({
                "pair": space.pair_name(h.item),
                "seen": space.is_seen(h.item),
                "score": h.score,
            })).collect::<Vec<_>>(),
        })
    } else {
        let pair = parse_pair(args.pair.as_deref().unwrap_or_default(), &space)?;
        let hits = topk_image_retrieval(&ckpt.encoders, &ckpt.table, pair, &dataset, args.k)?;
        serde_json::json!({
            "query": { "pair": space.pair_name(pair) },
            "results": hits.iter().map(|h| serde_json::json!({
                "sample": h.item,
                "label": space.pair_name(dataset.samples[h.item].label),
                "score": h.score,
            })).collect::<Vec<_>>(),
        })
    };
    let text = serde_json::to_string_pretty(&result)?;
    println!("{text}");
    let out = run.out_dir(Some(&parent_dir(&args.checkpoint)))?;
    run.write_output(&out.join("retrieve.json"), text.as_bytes())?;
    run.finish(&out)?;
    std::io::stdout().flush().ok();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["drpt", "--help"]), EXIT_OK);
        assert_eq!(run(["drpt", "train", "--help"]), EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["drpt", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["drpt", "ent-stats"]), EXIT_USAGE);
        assert_eq!(run(["drpt", "synth"]), EXIT_USAGE);
        assert_eq!(run(["drpt", "--threads", "0", "ent-stats", "x"]), EXIT_USAGE);
    }

    #[test]
    fn missing_data_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert_eq!(run(["drpt".into(), "ent-stats".into(), missing.into_os_string()]), EXIT_DATA);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Failure::Lib(Error::Config("x".into()))), EXIT_USAGE);
        assert_eq!(exit_code(&Failure::Lib(Error::DegenerateEntanglement)), EXIT_NUMERIC);
        assert_eq!(exit_code(&Failure::Lib(Error::EmptyDataset)), EXIT_DATA);
        assert_eq!(exit_code(&Failure::Check("x".into())), EXIT_NUMERIC);
    }
}
