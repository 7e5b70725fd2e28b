mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use posedrag::eval::{reconstruct_clip, run_ablation, run_scenario, standard_scenarios, FaultSchedule, ReportTable, ScenarioDescriptor, Variant};
use posedrag::motion::{default_roles, make_sparse, synth_motion, write_bvh, Manifest, ManifestEntry, MotionKind, Split};
use posedrag::optimizer::{Mode, OptimizerConfig};
use posedrag::service::{reconstruct_stream, serve_session, Envelope, Message, PoseFrame};
use posedrag::temporal::{evaluate_one_step, train_temporal, TemporalConfig, TemporalTrainConfig};
use posedrag::vae::{train_vae, VaeConfig, VaeLossWeights, VaeTrainConfig};
use posedrag::{Dof, SensorRole};

#[derive(Parser)]
#[command(name = "posedrag", version, about = "Full-body pose reconstruction from sparse tracking signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the pose autoencoder.
    TrainVae(TrainVaeArgs),
    /// Train the temporal predictor against a trained autoencoder.
    TrainTemporal(TrainTemporalArgs),
    /// Reconstruct poses from a BVH clip or a recorded sparse stream.
    Reconstruct(ReconstructArgs),
    /// Run sensor scenarios on held-out clips and report metrics.
    Evaluate(EvaluateArgs),
    /// Compare model variants on the same clips.
    Ablate(AblateArgs),
    /// Serve live sessions over TCP.
    Serve(ServeArgs),
    /// Generate synthetic motion.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Manifest (.json), BVH file, or directory of BVH files.
    #[arg(long)]
    data: PathBuf,
    /// `standard` or a BVH file defining the skeleton.
    #[arg(long, default_value = "standard")]
    skeleton: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainVaeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 24)]
    latent_dim: usize,
    /// Weight of the continuity term; 0 trains without it.
    #[arg(long, default_value_t = 1.0)]
    continuity_weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTemporalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Autoencoder checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Frames per predictor step.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Past window in predictor steps.
    #[arg(long, default_value_t = 16)]
    wp: usize,
    /// Future window in predictor steps.
    #[arg(long, default_value_t = 16)]
    wf: usize,
    #[arg(long, default_value_t = 2048)]
    ff_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value = "offline", value_parser = ["realtime", "offline", "ablation"])]
    mode: String,
    /// Overrides the iteration limit implied by --mode.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    epsilon_pos_cm: f64,
    #[arg(long, default_value_t = 5.0)]
    epsilon_rot_deg: f64,
    #[arg(long)]
    lambda_po: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
}

impl OptArgs {
    fn config(&self) -> Result<OptimizerConfig> {
        let mode: Mode = self.mode.parse()?;
        let mut c = OptimizerConfig::for_mode(mode);
        if let Some(m) = self.max_iters {
            c.max_iterations = m;
        }
        c.eps_position = self.epsilon_pos_cm / 100.0;
        c.eps_rotation_deg = self.epsilon_rot_deg;
        if let Some(v) = self.lambda_po {
            c.lambda_po = v;
        }
        if let Some(v) = self.lambda_t {
            c.lambda_t = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Autoencoder checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Temporal predictor checkpoint; omit to run without it.
    #[arg(long)]
    temporal: Option<PathBuf>,
    /// Future window override for the temporal predictor.
    #[arg(long)]
    wf: Option<usize>,
}

#[derive(Args)]
struct SensorArgs {
    /// Comma-separated roles; `hands` and `feet` expand to both sides.
    #[arg(long, default_value = "hip,head,hands,feet")]
    roles: String,
    /// 6 for position and rotation, 3 for position only.
    #[arg(long, default_value_t = 6)]
    dof: u32,
}

impl SensorArgs {
    fn parse(&self) -> Result<(Vec<SensorRole>, Dof)> {
        Ok((SensorRole::parse_list(&self.roles)?, Dof::from_count(self.dof)?))
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[command(flatten)]
    sensors: SensorArgs,
    /// BVH clip (sensors are extracted with --roles/--dof) or a JSON-lines
    /// stream of sparse_frame messages.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "standard")]
    skeleton: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output: `.bvh` writes a clip, anything else JSON lines of pose frames.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON-lines iteration trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[command(flatten)]
    sensors: SensorArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Run every standard scenario instead of the one given by --roles/--dof.
    #[arg(long)]
    all_scenarios: bool,
    /// Per-frame sensor dropout probability (e.g. 0.01).
    #[arg(long)]
    fault: Option<f64>,
    /// Report path prefix; writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Autoencoder trained without the continuity term.
    #[arg(long)]
    checkpoint_no_continuity: Option<PathBuf>,
    #[command(flatten)]
    sensors: SensorArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "ablation", value_parser = ["realtime", "offline", "ablation"])]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "standard")]
    skeleton: String,
}

#[derive(Args)]
struct SynthArgs {
    /// walk_cycle, arm_wave, squat, pushup_like, or `all`.
    #[arg(long, default_value = "walk_cycle")]
    kind: String,
    /// Seconds per clip.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clips per kind. With more than one clip, or `--kind all`, --out is a
    /// directory that receives the BVH files and a manifest.
    #[arg(long, default_value_t = 1)]
    clips: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the sparse sensor stream of a single clip as JSON lines.
    #[arg(long)]
    sparse_out: Option<PathBuf>,
    #[command(flatten)]
    sensors: SensorArgs,
}

fn train_vae_cmd(a: TrainVaeArgs) -> Result<()> {
    let sk = io::skeleton(&a.data.skeleton)?;
    let clips = io::clips(&a.data.data, Split::Train, &sk)?;
    let frames: usize = clips.iter().map(|c| c.len()).sum();
    info!("training autoencoder on {} clips, {frames} frames", clips.len());
    let cfg = VaeTrainConfig {
        model: VaeConfig {
            latent_dim: a.latent_dim,
            ..VaeConfig::default()
        },
        weights: VaeLossWeights {
            c: a.continuity_weight,
            ..VaeLossWeights::default()
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.data.seed,
    };
    let (vae, log) = train_vae(&clips, &cfg)?;
    for e in &log.epochs {
        info!("epoch {} loss {:.6} (q {:.6}, fk {:.6}, kld {:.6}, c {:.6})", e.epoch, e.total, e.q, e.fk, e.kld, e.c);
    }
    io::write(&a.out, "")?;
    vae.to_checkpoint()?.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn train_temporal_cmd(a: TrainTemporalArgs) -> Result<()> {
    let sk = io::skeleton(&a.data.skeleton)?;
    let vae = io::load_vae(&a.checkpoint, Some(&sk))?;
    let clips = io::clips(&a.data.data, Split::Train, &sk)?;
    let cfg = TemporalTrainConfig {
        model: TemporalConfig {
            n: a.n,
            past: a.wp,
            future: a.wf,
            ff_dim: a.ff_dim,
            ..TemporalConfig::default()
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.data.seed,
        ..TemporalTrainConfig::default()
    };
    let (model, log) = train_temporal(&vae, &clips, &cfg)?;
    for e in &log {
        info!("epoch {} loss {:.6}", e.epoch, e.loss);
    }
    let (mse, hold) = evaluate_one_step(&model, &vae, &clips)?;
    info!("one-step latent mse {mse:.6} (hold-last {hold:.6})");
    io::write(&a.out, "")?;
    model.to_checkpoint().save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn pose_lines(frames: &[PoseFrame]) -> Result<String> {
    let mut out = String::new();
    for f in frames {
        out += &serde_json::to_string(f)?;
        out.push('\n');
    }
    Ok(out)
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let sk = io::skeleton(&a.skeleton)?;
    let models = io::load_models(&a.model.checkpoint, a.model.temporal.as_deref(), Some(&sk), a.model.wf)?;
    let config = a.opt.config()?;
    let is_bvh = a.data.extension().is_some_and(|e| e == "bvh");
    let to_bvh = a.out.extension().is_some_and(|e| e == "bvh");
    let mut trace = String::new();
    if is_bvh {
        let clip = io::clips(&a.data, Split::Test, &sk)?.remove(0);
        let (roles, dof) = a.sensors.parse()?;
        let scenario = ScenarioDescriptor::new("reconstruct", roles, dof);
        models.check()?;
        let run = reconstruct_clip(&models, &clip, &scenario, None, &config)?;
        for t in &run.traces {
            trace += &serde_json::to_string(t)?;
            trace.push('\n');
        }
        if to_bvh {
            io::write(&a.out, &write_bvh(&run.predicted)?)?;
        } else {
            let roots = run.predicted.root_states()?;
            let frames: Vec<PoseFrame> = run
                .traces
                .iter()
                .zip(&run.predicted.frames[1..])
                .zip(&roots[1..])
                .map(|((t, p), r)| PoseFrame::new(p, *r, t))
                .collect();
            io::write(&a.out, &pose_lines(&frames)?)?;
        }
    } else {
        if to_bvh {
            bail!("a sparse stream reconstructs to pose frames; use a .jsonl output");
        }
        let inputs = io::sparse_stream(&a.data)?;
        if inputs.is_empty() {
            bail!("{} holds no sparse_frame messages", a.data.display());
        }
        let frames = reconstruct_stream(&models, &config, None, &inputs)?;
        io::write(&a.out, &pose_lines(&frames)?)?;
    }
    if let Some(p) = &a.trace {
        io::write(p, &trace)?;
    }
    println!("{}", a.out.display());
    Ok(())
}

fn write_table(table: &ReportTable, out: &Path) -> Result<()> {
    let json = out.with_extension("json");
    let csv = out.with_extension("csv");
    io::write(&json, &table.to_json()?)?;
    io::write(&csv, &table.to_csv())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let sk = io::skeleton(&a.data.skeleton)?;
    let models = io::load_models(&a.model.checkpoint, a.model.temporal.as_deref(), Some(&sk), a.model.wf)?;
    let clips = io::clips(&a.data.data, Split::Test, &sk)?;
    let config = a.opt.config()?;
    let scenarios = if a.all_scenarios {
        standard_scenarios(a.data.seed)
    } else {
        let (roles, dof) = a.sensors.parse()?;
        let names: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
        let mut s = ScenarioDescriptor::new(format!("{} {}", roles.len(), names.join("+")), roles, dof);
        if let Some(p) = a.fault {
            s.fault = Some(FaultSchedule::new(p, a.data.seed));
        }
        vec![s]
    };
    let mut rows = Vec::new();
    for s in &scenarios {
        info!("scenario {}", s.name);
        rows.push(run_scenario(&models, &clips, s, &config)?.report);
    }
    write_table(&ReportTable { rows }, &a.out)
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let sk = io::skeleton(&a.data.skeleton)?;
    let full = io::load_models(&a.model.checkpoint, a.model.temporal.as_deref(), Some(&sk), a.model.wf)?;
    let clips = io::clips(&a.data.data, Split::Test, &sk)?;
    let (roles, dof) = a.sensors.parse()?;
    let config = OptimizerConfig::for_mode(a.mode.parse()?);
    let mut variants = vec![Variant {
        name: "full".into(),
        models: full.clone(),
    }];
    if full.temporal.is_some() {
        variants.push(Variant {
            name: "no_temporal".into(),
            models: full.without_temporal(),
        });
    }
    if let Some(p) = &a.checkpoint_no_continuity {
        variants.push(Variant {
            name: "no_continuity".into(),
            models: io::load_models(p, None, Some(&sk), None)?,
        });
    }
    let scenario = ScenarioDescriptor::new("ablation", roles, dof);
    write_table(&run_ablation(&variants, &clips, &scenario, &config)?, &a.out)
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let sk = io::skeleton(&a.skeleton)?;
    let models = io::load_models(&a.model.checkpoint, a.model.temporal.as_deref(), Some(&sk), a.model.wf)?;
    let config = a.opt.config()?;
    serve_session(&format!("{}:{}", a.host, a.port), models, config)?;
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let kinds: Vec<MotionKind> = if a.kind == "all" {
        MotionKind::ALL.to_vec()
    } else {
        vec![a.kind.parse()?]
    };
    if a.clips == 0 {
        bail!("--clips must be at least 1");
    }
    if kinds.len() == 1 && a.clips == 1 {
        let clip = synth_motion(kinds[0], a.duration, a.seed)?;
        io::write(&a.out, &write_bvh(&clip)?)?;
        if let Some(p) = &a.sparse_out {
            let (roles, dof) = a.sensors.parse()?;
            let sparse = make_sparse(&clip, &roles, dof)?;
            let mut text = String::new();
            for (k, f) in sparse.frames.iter().enumerate() {
                let env = Envelope {
                    seq: k as u64 + 1,
                    message: Message::SparseFrame {
                        signals: f.signals.clone(),
                    },
                };
                text += &env.to_line()?;
                text.push('\n');
            }
            io::write(p, &text)?;
        }
        println!("{}", a.out.display());
        return Ok(());
    }
    if a.sparse_out.is_some() {
        bail!("--sparse-out needs a single clip");
    }
    let mut entries = Vec::new();
    for kind in &kinds {
        for i in 0..a.clips {
            let seed = a.seed.wrapping_mul(1000).wrapping_add(i as u64);
            let clip = synth_motion(*kind, a.duration, seed)?;
            let name = format!("{kind}_{i:03}.bvh");
            io::write(&a.out.join(&name), &write_bvh(&clip)?)?;
            // The last clip of each kind is held out, the one before it
            // validates.
            let split = match a.clips - 1 - i {
                0 if a.clips > 1 => Split::Test,
                1 if a.clips > 2 => Split::Val,
                _ => Split::Train,
            };
            entries.push(ManifestEntry {
                path: name.into(),
                split,
            });
        }
    }
    let manifest = Manifest {
        roles: Some(default_roles(6)?),
        clips: entries,
    };
    let path = a.out.join("manifest.json");
    io::write(&path, &serde_json::to_string_pretty(&manifest)?)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainVae(a) => train_vae_cmd(a),
        Command::TrainTemporal(a) => train_temporal_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::SynthData(a) => synth_cmd(a),
    }
    .context("posedrag failed")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let incompatible = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<posedrag::Error>(), Some(posedrag::Error::IncompatibleCheckpoint(_))));
            ExitCode::from(if incompatible { 3 } else { 1 })
        }
    }
}
