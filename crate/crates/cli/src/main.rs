use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dpreg::eval::{export_hypotheses_csv, HypothesisStats};
use dpreg::io::{load_point_cloud, read_dataset, write_dataset};
use dpreg::pipeline::{
    bench_dataset, describe_fragment, match_fragments, matching_recall_on, register_descriptions, train_on_dataset, Ablation,
    FragmentDescription,
};
use dpreg::registration::register_ransac_detailed;
use dpreg::synth::{generate_dataset, Split};
use dpreg::training::write_loss_log;
use dpreg::{
    BenchConfig, CorrespondenceSet, DatasetSpec, DescriptorSource, FragmentPair, MatchStrategy, Networks, PipelineConfig,
    RegistrationResult, RigidTransform, SceneSpec, TrainConfig,
};

/// Direct pairwise registration of point clouds.
#[derive(Parser)]
#[command(name = "dpreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PLY fragments + manifest.csv).
    Gen(GenArgs),
    /// Train the networks on a dataset.
    Train(TrainArgs),
    /// Describe the keypoints of one cloud.
    Describe(DescribeArgs),
    /// Match two descriptor files.
    Match(MatchArgs),
    /// Register one fragment pair of a dataset.
    Register(RegisterArgs),
    /// Evaluate matching and registration on a dataset.
    Bench(BenchArgs),
    /// Train and evaluate with each loss term removed in turn.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Scale {
    /// Scene diameter the desk defaults derive from.
    #[arg(long)]
    diameter: Option<f64>,
    /// Keypoint voxel edge (overrides the derived default).
    #[arg(long)]
    voxel: Option<f64>,
}

impl Scale {
    fn pipeline(&self) -> PipelineConfig {
        let mut c = PipelineConfig::desk(self.diameter.unwrap_or_else(SceneSpec::nominal_diameter));
        if let Some(v) = self.voxel {
            c.voxel = v;
            c.r_match = 0.5 * v;
            c.r_inlier = v;
            c.registration.tau = 2.5 * v;
        }
        c
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    split: SplitArg,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Noise sigma as a fraction of the scene diameter.
    #[arg(long, default_value_t = 0.005)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    min_overlap: f64,
    #[arg(long, default_value_t = 0.7)]
    max_overlap: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory (or manifest).
    #[arg(long)]
    data: PathBuf,
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    scale: Scale,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// PLY or XYZ cloud; normals are estimated when absent.
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scale: Scale,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    MutualK,
    Closest,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Ppf,
    Pc,
}

impl From<SourceArg> for DescriptorSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Ppf => DescriptorSource::PpfInvariant,
            SourceArg::Pc => DescriptorSource::PcVariant,
        }
    }
}

#[derive(Args)]
struct Matching {
    #[arg(long, value_enum, default_value = "mutual-k")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_enum, default_value = "ppf")]
    source: SourceArg,
}

impl Matching {
    fn strategy(&self) -> Result<MatchStrategy> {
        Ok(match self.strategy {
            StrategyArg::MutualK if self.k == 0 => bail!("--k must be at least 1"),
            StrategyArg::MutualK => MatchStrategy::MutualK(self.k),
            StrategyArg::Closest => MatchStrategy::Closest,
        })
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    matching: Matching,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    Ransac,
}

#[derive(Args)]
struct RegisterArgs {
    /// Dataset directory (or manifest).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pair: usize,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "direct")]
    method: MethodArg,
    /// Inlier distance (default 2.5 voxel edges).
    #[arg(long)]
    tau: Option<f64>,
    /// RANSAC iterations.
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the ground-truth rotation for every direct hypothesis.
    #[arg(long)]
    oracle_rotations: bool,
    /// Append the JSON record here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the hypothesis CSV (Rodrigues vector, translation, score).
    #[arg(long)]
    hypotheses: Option<PathBuf>,
    #[command(flatten)]
    matching: Matching,
    #[command(flatten)]
    scale: Scale,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for direct.csv, ransac.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long)]
    oracle_rotations: bool,
    /// Write per-pair hypothesis CSVs into this directory.
    #[arg(long)]
    dump_hypotheses: Option<PathBuf>,
    /// Judge registrations by correspondence RMSE below this bound instead
    /// of by pose error.
    #[arg(long)]
    rmse_max: Option<f64>,
    #[command(flatten)]
    matching: Matching,
    #[command(flatten)]
    scale: Scale,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comparison table CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scale: Scale,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Describe(a) => describe(a),
        Command::Match(a) => match_cmd(a),
        Command::Register(a) => register(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = DatasetSpec {
        scene: SceneSpec {
            points_per_fragment: a.points,
            ..SceneSpec::default()
        },
        pairs: a.pairs,
        min_overlap: a.min_overlap,
        max_overlap: a.max_overlap,
        relative_noise: a.noise,
        seed: a.seed,
    };
    let splits: &[(Split, &str)] = match a.split {
        SplitArg::Train => &[(Split::Train, "train")],
        SplitArg::Test => &[(Split::Test, "test")],
        SplitArg::Both => &[(Split::Train, "train"), (Split::Test, "test")],
    };
    for (split, name) in splits {
        let pairs = generate_dataset(&spec, *split)?;
        let dir = a.out.join(name);
        let manifest = write_dataset(&pairs, &dir)?;
        println!("{name}: {} pairs -> {}", pairs.len(), manifest.display());
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    })
}

fn load_pairs(path: &Path) -> Result<Vec<FragmentPair>> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_nets(path: &Path) -> Result<Networks> {
    Networks::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let pairs = load_pairs(&a.data)?;
    let (nets, log) = train_on_dataset(&pairs, &cfg, &a.scale.pipeline(), |e, l| {
        eprintln!(
            "epoch {e:>3}  l_rec {:.5}  l_pose {:.5}  l_feat {:.5}  total {:.5}",
            l.l_rec, l.l_pose, l.l_feat, l.total
        );
    })?;
    nets.save(&a.out)?;
    if let Some(p) = &a.loss_log {
        write_loss_log(p, &log)?;
    }
    println!("checkpoint -> {}", a.out.display());
    Ok(())
}

fn describe(a: DescribeArgs) -> Result<()> {
    let nets = load_nets(&a.checkpoint)?;
    let cloud = load_point_cloud(&a.cloud)?;
    let d = describe_fragment(&nets, &cloud, &a.scale.pipeline())?;
    d.save(&a.out)?;
    println!("{} keypoints -> {}", d.len(), a.out.display());
    Ok(())
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let da = FragmentDescription::load(&a.a)?;
    let db = FragmentDescription::load(&a.b)?;
    let set = match_fragments(&da, &db, a.matching.strategy()?, a.matching.source.into())?;
    set.write_csv(&a.out)?;
    println!("{} correspondences -> {}", set.len(), a.out.display());
    Ok(())
}

/// One line of `register` output.
#[derive(Serialize)]
struct RegisterRecord<'a> {
    pair_id: usize,
    strategy: String,
    correspondences: usize,
    #[serde(flatten)]
    result: &'a RegistrationResult,
    rotation_error: f64,
    translation_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hypothesis_stats: Option<HypothesisStats>,
}

fn register(a: RegisterArgs) -> Result<()> {
    let pairs = load_pairs(&a.data)?;
    let Some(pair) = pairs.iter().find(|p| p.id == a.pair) else {
        bail!("pair {} not in {}", a.pair, a.data.display());
    };
    let nets = load_nets(&a.checkpoint)?;
    let mut pc = a.scale.pipeline();
    if let Some(t) = a.tau {
        pc.registration.tau = t;
    }
    let da = describe_fragment(&nets, &pair.cloud_a, &pc)?;
    let db = describe_fragment(&nets, &pair.cloud_b, &pc)?;
    let strategy = a.matching.strategy()?;
    let set: CorrespondenceSet = match_fragments(&da, &db, strategy, a.matching.source.into())?;
    let gt: RigidTransform = pair.gt_transform;
    let (result, hyps) = match a.method {
        MethodArg::Direct => register_descriptions(&nets, &da, &db, &set, &pc.registration, a.oracle_rotations.then_some(gt))?,
        MethodArg::Ransac => register_ransac_detailed(&da.keypoints(), &db.keypoints(), &set, a.iterations, &pc.registration, a.seed)?,
    };
    let hypothesis_stats = match &a.hypotheses {
        Some(p) if !hyps.is_empty() => Some(export_hypotheses_csv(&hyps, &gt, p)?),
        _ => None,
    };
    let record = RegisterRecord {
        pair_id: pair.id,
        strategy: strategy.to_string(),
        correspondences: set.len(),
        result: &result,
        rotation_error: result.transform.rotation_error(&gt),
        translation_error: result.transform.translation_error(&gt),
        hypothesis_stats,
    };
    let line = serde_json::to_string(&record)?;
    match &a.out {
        Some(p) => writeln!(OpenOptions::new().create(true).append(true).open(p)?, "{line}")?,
        None => println!("{line}"),
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let pairs = load_pairs(&a.data)?;
    let nets = load_nets(&a.checkpoint)?;
    let mut cfg = BenchConfig::new(a.scale.pipeline());
    cfg.ransac_iterations = a.iterations;
    cfg.oracle_rotations = a.oracle_rotations;
    if let Some(max) = a.rmse_max {
        cfg.pipeline.thresholds = cfg.pipeline.thresholds.with_rmse(max);
    }
    cfg.registration_strategy = a.matching.strategy()?;
    cfg.source = a.matching.source.into();
    let report = bench_dataset(&nets, &pairs, &cfg, a.dump_hypotheses.as_deref(), |o| {
        eprintln!(
            "pair {:>4}  |G| {:>5}  inlier ratio {:.3}  direct {:>6.2} deg  ransac {:>6.2} deg",
            o.pair_id,
            o.matching.correspondences,
            o.matching.inlier_ratio,
            o.direct.transform.rotation_error(&o.gt).to_degrees(),
            o.ransac.transform.rotation_error(&o.gt).to_degrees()
        );
    })?;
    fs::create_dir_all(&a.out)?;
    report.direct.write_csv(&a.out.join("direct.csv"))?;
    report.ransac.write_csv(&a.out.join("ransac.csv"))?;
    let summary = report.summary();
    fs::write(a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    matching_recall_mutual1: f64,
    direct_registration_recall: f64,
    ransac_registration_recall: f64,
    final_total_loss: f64,
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = load_config(a.config.as_deref())?;
    let train_pairs = load_pairs(&a.train)?;
    let test_pairs = load_pairs(&a.test)?;
    let pc = a.scale.pipeline();
    let mut w = csv::Writer::from_path(&a.out)?;
    println!("{:<8} {:>14} {:>12} {:>12} {:>10}", "variant", "match_recall", "direct_rec", "ransac_rec", "loss");
    for ab in Ablation::ALL {
        let (nets, log) = train_on_dataset(&train_pairs, &ab.apply(&base), &pc, |e, l| {
            eprintln!("[{ab}] epoch {e:>3} total {:.5}", l.total);
        })?;
        let report = bench_dataset(&nets, &test_pairs, &BenchConfig::new(pc), None, |_| {})?;
        let row = AblationRow {
            variant: ab.to_string(),
            matching_recall_mutual1: matching_recall_on(&nets, &test_pairs, &pc, MatchStrategy::MutualK(1), DescriptorSource::PpfInvariant)?,
            direct_registration_recall: report.direct.aggregates.registration_recall,
            ransac_registration_recall: report.ransac.aggregates.registration_recall,
            final_total_loss: log.last().map_or(f64::NAN, |l| l.total),
        };
        println!(
            "{:<8} {:>14.3} {:>12.3} {:>12.3} {:>10.4}",
            row.variant, row.matching_recall_mutual1, row.direct_registration_recall, row.ransac_registration_recall, row.final_total_loss
        );
        w.serialize(&row)?;
        w.flush()?;
    }
    Ok(())
}
