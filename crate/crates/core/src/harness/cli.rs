//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::checkpoint::Checkpoint;
use super::config::{MapKind, RunConfig};
use super::episode::{compare, run_episode, Episode};
use super::export::{export, prepare_dir, write_frames, write_rows, write_summaries, write_trajectory};
use super::metrics::Summary;
use super::workflow::{collect, read_transitions, train, write_transitions};
use crate::error::{PatrolError, Result};
use crate::policies::PolicyKind;

pub const TRANSFER_HORIZON: usize = 144;

#[derive(Debug, Parser)]
#[command(name = "patrol", version, about = "Drone-swarm traffic patrolling simulator and learner")]
struct Cli {
    /// Run configuration file (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    drones: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing results.
    #[arg(long)]
    force: bool,
    #[arg(long, value_parser = parse_map)]
    map: Option<MapKind>,
    #[arg(long)]
    epsilon: Option<f64>,
}

fn parse_map(s: &str) -> std::result::Result<MapKind, String> {
    match s {
        "training" => Ok(MapKind::Training),
        "test" => Ok(MapKind::Test),
        "demand" => Ok(MapKind::Demand),
        other => Err(format!("unknown map `{other}` (expected training, test or demand)")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gather random-rollout transitions on the training map.
    Collect {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Pretrain the Q-network and write a checkpoint.
    Train {
        #[arg(long)]
        seed: u64,
        /// Transitions from `collect`; gathered on the fly when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Checkpoint path; defaults to `<out>/q.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Run one episode with a baseline or a learned policy.
    Eval {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Run several policies on the same map and seed.
    Compare {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "random,greedy,sweeping")]
        policies: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Frozen learned policy against random on a demand map.
    Transfer {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Dump idleness-times-importance frames of one episode.
    Render {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frame cadence in steps.
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[command(flatten)]
        o: Overrides,
    },
}

fn apply(cfg: &mut RunConfig, seed: Option<u64>, o: &Overrides) {
    if let Some(s) = seed {
        cfg.episode.seed = s;
    }
    if let Some(h) = o.horizon {
        cfg.episode.horizon = h;
    }
    if let Some(d) = o.drones {
        cfg.swarm.drones = d;
    }
    if let Some(dir) = &o.out {
        cfg.output.dir = dir.clone();
    }
    cfg.output.force |= o.force;
    if let Some(m) = o.map {
        cfg.environment.map = m;
    }
    if let Some(e) = o.epsilon {
        cfg.policy.epsilon = e;
    }
}

fn load_model(cfg: &RunConfig, kind: &PolicyKind, path: Option<&Path>) -> Result<Option<Checkpoint>> {
    let path = path.map(Path::to_path_buf).or_else(|| (!cfg.policy.checkpoint.is_empty()).then(|| PathBuf::from(&cfg.policy.checkpoint)));
    match (kind.is_learned(), path) {
        (true, Some(p)) => Ok(Some(Checkpoint::load(&p)?)),
        (true, None) => Err(PatrolError::Config(format!("policy {} needs --checkpoint", kind.name()))),
        (false, _) => Ok(None),
    }
}

fn table(rows: &[Summary]) -> String {
    let mut out = format!("{:<18} {:>10} {:>10} {:>10} {:>10}\n", "policy", "R_hat", "C_hat", "max_C_%", "covered_%");
    for r in rows {
        let share = r.max_coverage_pct.map_or("-".to_string(), |v| format!("{v:.1}"));
        out += &format!("{:<18} {:>10.4} {:>10.4} {:>10} {:>10.1}\n", r.policy, r.mean_score, r.mean_coverage, share, r.covered_pct);
    }
    out
}

fn export_episode(dir: &Path, cfg: &RunConfig, e: &Episode, summary: &Summary) -> Result<()> {
    export(dir, &cfg.grid, &e.metrics, summary, &e.log, cfg.output.force)
}

fn run_compare(cfgs: &[RunConfig], model: Option<&Checkpoint>, out: &mut dyn Write, name: &str) -> Result<()> {
    let base = &cfgs[0];
    let (episodes, summaries) = compare(cfgs, model)?;
    let dir = &base.output.dir;
    prepare_dir(dir, base.output.force)?;
    write_summaries(&dir.join(name), &summaries)?;
    for ((cfg, e), s) in cfgs.iter().zip(&episodes).zip(&summaries) {
        export_episode(&dir.join(s.policy.as_str()), cfg, e, s)?;
    }
    write!(out, "{}", table(&summaries)).map_err(|source| PatrolError::Io { path: PathBuf::from("<stdout>"), source })
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let say = |out: &mut dyn Write, msg: String| writeln!(out, "{msg}").map_err(|source| PatrolError::Io { path: PathBuf::from("<stdout>"), source });
    match cli.command {
        Command::Collect { seed, o } => {
            apply(&mut cfg, seed, &o);
            cfg.validate()?;
            let data = collect(&cfg)?;
            prepare_dir(&cfg.output.dir, cfg.output.force)?;
            let path = cfg.output.dir.join("transitions.csv");
            write_transitions(&path, &data)?;
            say(out, format!("wrote {} transitions to {}", data.iter().map(|b| b.len()).sum::<usize>(), path.display()))
        }
        Command::Train { seed, data, epochs, iters, checkpoint, o } => {
            apply(&mut cfg, Some(seed), &o);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(i) = iters {
                cfg.train.iters_per_epoch = i;
            }
            cfg.validate()?;
            let data = match data {
                Some(p) => read_transitions(&p, cfg.train.buffer_capacity)?,
                None => collect(&cfg)?,
            };
            let (ckpt, losses) = train(&cfg, &data)?;
            let path = checkpoint.unwrap_or_else(|| cfg.output.dir.join("q.ckpt"));
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if path.exists() && !cfg.output.force {
                return Err(PatrolError::Config(format!("{} already exists; pass --force to overwrite", path.display())));
            }
            std::fs::create_dir_all(dir).map_err(|source| PatrolError::Io { path: dir.to_path_buf(), source })?;
            ckpt.save(&path)?;
            #[derive(serde::Serialize)]
            struct LossRow {
                epoch: usize,
                loss: f64,
            }
            write_rows(&dir.join("loss.csv"), losses.iter().enumerate().map(|(epoch, &loss)| LossRow { epoch, loss }))?;
            say(out, format!("trained {} epochs, final loss {:.6}, checkpoint {}", losses.len(), losses.last().copied().unwrap_or(f64::NAN), path.display()))
        }
        Command::Eval { seed, policy, checkpoint, o } => {
            apply(&mut cfg, Some(seed), &o);
            if let Some(p) = policy {
                cfg.policy.kind = p;
            }
            cfg.validate()?;
            let kind = cfg.policy_kind()?;
            let model = load_model(&cfg, &kind, checkpoint.as_deref())?;
            let e = run_episode(&cfg, model.as_ref())?;
            let s = e.summary();
            export_episode(&cfg.output.dir, &cfg, &e, &s)?;
            write!(out, "{}", table(std::slice::from_ref(&s))).map_err(|source| PatrolError::Io { path: PathBuf::from("<stdout>"), source })
        }
        Command::Compare { seed, policies, checkpoint, o } => {
            apply(&mut cfg, seed, &o);
            cfg.validate()?;
            let cfgs = policies
                .iter()
                .map(|p| {
                    let mut c = cfg.clone();
                    c.policy.kind = p.trim().to_string();
                    c.validate().map(|_| c)
                })
                .collect::<Result<Vec<_>>>()?;
            let learned = cfgs.iter().map(|c| c.policy_kind()).collect::<Result<Vec<_>>>()?.into_iter().find(|k| k.is_learned());
            let model = match learned {
                Some(k) => load_model(&cfg, &k, checkpoint.as_deref())?,
                None => None,
            };
            run_compare(&cfgs, model.as_ref(), out, "compare.csv")
        }
        Command::Transfer { seed, checkpoint, o } => {
            cfg.environment.map = MapKind::Demand;
            cfg.episode.horizon = TRANSFER_HORIZON;
            cfg.online.frozen = true;
            apply(&mut cfg, seed, &o);
            cfg.validate()?;
            let model = Checkpoint::load(&checkpoint)?;
            let cfgs = ["rl", "random"]
                .iter()
                .map(|p| {
                    let mut c = cfg.clone();
                    c.policy.kind = p.to_string();
                    c
                })
                .collect::<Vec<_>>();
            run_compare(&cfgs, Some(&model), out, "transfer.csv")
        }
        Command::Render { seed, policy, checkpoint, every, o } => {
            apply(&mut cfg, seed, &o);
            if let Some(p) = policy {
                cfg.policy.kind = p;
            }
            if every == 0 {
                return Err(PatrolError::InvalidParameter { name: "every", reason: "must be >= 1".into() });
            }
            cfg.output.frame_every = every;
            cfg.validate()?;
            let kind = cfg.policy_kind()?;
            let model = load_model(&cfg, &kind, checkpoint.as_deref())?;
            let e = run_episode(&cfg, model.as_ref())?;
            let dir = &cfg.output.dir;
            if dir.join("frames").exists() && !cfg.output.force {
                return Err(PatrolError::Config(format!("{} already exists; pass --force to overwrite", dir.join("frames").display())));
            }
            std::fs::create_dir_all(dir).map_err(|source| PatrolError::Io { path: dir.clone(), source })?;
            let frames = write_frames(dir, &cfg.grid, &e.log)?;
            write_trajectory(&dir.join("trajectory.csv"), &e.log)?;
            say(out, format!("wrote {} frames to {}", frames.len(), dir.join("frames").display()))
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Diagnostics go to `err` as a single line.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
