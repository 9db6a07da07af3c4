//! Episode runner shared by every policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::{strict_max_share, Frame, MetricsRecord, Summary, TrajectoryLog, VisitTracker};
use crate::environment::{Environment, TrafficField};
use crate::error::{PatrolError, Result};
use crate::gridmap::{Action, CellIndex};
use crate::learner::{random_start_cells, CoordinationMode, OnlineLearner, ReplayBuffer, StepRecord, Trainer, WorldState};
use crate::policies::{greedy_policy, random_policy, sweep_policy, sweeping_roles, PolicyKind, SweepRole, SweepState};

const POLICY_STREAM: u64 = 3;
const START_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct Episode {
    pub policy: PolicyKind,
    pub metrics: MetricsRecord,
    pub log: TrajectoryLog,
    /// Steps on which the coordinator fell back to per-drone selection.
    pub solver_fallbacks: usize,
    /// Parameters at the end of the run, for learned policies.
    pub final_model: Option<Checkpoint>,
}

impl Episode {
    pub fn summary(&self) -> Summary {
        self.metrics.summary(self.policy.name())
    }
}

/// Start cells from the config, or distinct free cells drawn from the seed.
pub fn start_cells(cfg: &RunConfig) -> Result<Vec<CellIndex>> {
    match cfg.start_cells() {
        Some(cells) => Ok(cells),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.episode.seed);
            rng.set_stream(START_STREAM);
            random_start_cells(&cfg.grid, cfg.swarm.drones, &mut rng)
        }
    }
}

enum Driver {
    Baseline { roles: Vec<SweepRole>, sweepers: Vec<Option<SweepState>>, rng: ChaCha8Rng },
    Learned { learner: Box<OnlineLearner<f64>>, coordinated: bool },
}

impl Driver {
    fn new(cfg: &RunConfig, kind: &PolicyKind, model: Option<&Checkpoint>, starts: &[CellIndex]) -> Result<Self> {
        let n = starts.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.episode.seed);
        rng.set_stream(POLICY_STREAM);
        let roles = match kind {
            PolicyKind::Random => vec![SweepRole::Random; n],
            PolicyKind::Greedy => vec![SweepRole::Greedy; n],
            PolicyKind::Sweeping => sweeping_roles(n),
            PolicyKind::RlCoordinated | PolicyKind::RlDecentralized { .. } => {
                let model = model.ok_or_else(|| PatrolError::Config(format!("policy {} needs a checkpoint", kind.name())))?;
                let mut train = cfg.train.clone();
                train.net_dims = model.params.dims();
                let mut trainer = Trainer::from_params(model.params.clone(), &train)?;
                trainer.opt = model.optimizer.clone();
                let buffers = (0..n).map(|_| ReplayBuffer::new(train.buffer_capacity)).collect::<Result<Vec<_>>>()?;
                let mut online = cfg.online_config();
                if let PolicyKind::RlDecentralized { epsilon } = kind {
                    online.epsilon = *epsilon;
                }
                let learner = OnlineLearner::new(trainer, buffers, online, cfg.episode.seed)?;
                return Ok(Driver::Learned {
                    learner: Box::new(learner),
                    coordinated: matches!(kind, PolicyKind::RlCoordinated),
                });
            }
        };
        let sweepers = roles
            .iter()
            .zip(starts)
            .map(|(r, &c)| match r {
                SweepRole::Sweeper => SweepState::start_at(&cfg.grid, c).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Driver::Baseline { roles, sweepers, rng })
    }
}

/// Simulates one episode. Per tick: states from the current idleness and
/// importance, action selection, move, idleness update, scoring, logging.
pub fn run_episode(cfg: &RunConfig, model: Option<&Checkpoint>) -> Result<Episode> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let kind = cfg.policy_kind()?;
    run_episode_in(cfg, &env, &kind, model)
}

/// Like [`run_episode`] but with an explicit environment and policy.
pub fn run_episode_in(cfg: &RunConfig, env: &Environment<f64>, kind: &PolicyKind, model: Option<&Checkpoint>) -> Result<Episode> {
    let grid = env.grid().clone();
    let reward = cfg.reward_config()?;
    let starts = start_cells(cfg)?;
    let mut driver = Driver::new(cfg, kind, model, &starts)?;
    let mut world = WorldState::new(env, starts.clone(), &cfg.idleness)?;
    let mut metrics = MetricsRecord::default();
    let mut log = TrajectoryLog::new(starts.clone());
    let mut visits = VisitTracker::new(&grid);
    visits.visit(&grid, &starts);
    let mut solver_fallbacks = 0;

    for k in 0..cfg.episode.horizon {
        let record: StepRecord<f64> = match &mut driver {
            Driver::Baseline { roles, sweepers, rng } => {
                let mut actions = Vec::with_capacity(roles.len());
                for (d, role) in roles.iter().enumerate() {
                    let c = world.positions[d];
                    let a = match role {
                        SweepRole::Random => random_policy(&grid, c, rng)?,
                        SweepRole::Greedy => greedy_policy(env, &world.idleness, c, k)?,
                        SweepRole::Sweeper => {
                            let state = sweepers[d].expect("sweeper has a cursor");
                            let (a, next) = sweep_policy(&grid, state)?;
                            sweepers[d] = Some(next);
                            a
                        }
                    };
                    actions.push(a);
                }
                world.advance(env, &actions, &reward)?
            }
            Driver::Learned { learner, coordinated } => {
                let outage = cfg.online.outage_step > 0 && k >= cfg.online.outage_step;
                let mode = if *coordinated && !outage { CoordinationMode::Coordinated } else { CoordinationMode::Decentralized };
                let out = learner.step(env, &mut world, mode, &reward)?;
                solver_fallbacks += usize::from(out.solver_fallback);
                out.record
            }
        };
        visits.visit(&grid, &record.to);
        metrics.push(k, record.score, world.idleness.coverage_score(&grid)?, visits.percent());
        log.positions.push(record.to.clone());
        if cfg.output.frame_every > 0 && (k + 1) % cfg.output.frame_every == 0 {
            let values = grid.cells().map(|c| world.idleness.get(c) * env.importance(c, k + 1)).collect();
            log.frames.push(Frame { step: k + 1, values });
        }
    }

    let final_model = match driver {
        Driver::Learned { learner, .. } => Some(Checkpoint::from_trainer(&learner.shared, cfg)),
        Driver::Baseline { .. } => None,
    };
    Ok(Episode { policy: kind.clone(), metrics, log, solver_fallbacks, final_model })
}

/// Runs every policy on the same environment, seed and start cells and fills
/// in the strict-max coverage share.
pub fn compare(configs: &[RunConfig], model: Option<&Checkpoint>) -> Result<(Vec<Episode>, Vec<Summary>)> {
    let Some(first) = configs.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let env = first.environment()?;
    for cfg in &configs[1..] {
        cfg.validate()?;
        if cfg.environment()? != env {
            return Err(PatrolError::IncomparableRuns("environments differ".into()));
        }
        if cfg.episode.horizon != first.episode.horizon {
            return Err(PatrolError::IncomparableRuns(format!("horizons {} and {}", first.episode.horizon, cfg.episode.horizon)));
        }
        if start_cells(cfg)? != start_cells(first)? {
            return Err(PatrolError::IncomparableRuns("start cells differ".into()));
        }
    }
    let episodes = configs
        .iter()
        .map(|cfg| run_episode_in(cfg, &env, &cfg.policy_kind()?, model))
        .collect::<Result<Vec<_>>>()?;
    let coverages: Vec<Vec<f64>> = episodes.iter().map(|e| e.metrics.coverages()).collect();
    let shares = strict_max_share(&coverages)?;
    let summaries = episodes
        .iter()
        .zip(shares)
        .map(|(e, s)| Summary { max_coverage_pct: Some(s), ..e.summary() })
        .collect();
    Ok((episodes, summaries))
}

/// Recovers the per-step joint actions from a trajectory.
pub fn actions_from_log(cfg: &RunConfig, log: &TrajectoryLog) -> Result<Vec<Vec<Action>>> {
    let grid = &cfg.grid;
    let mut prev = &log.start;
    let mut out = Vec::with_capacity(log.positions.len());
    for now in &log.positions {
        let actions = prev
            .iter()
            .zip(now)
            .map(|(&a, &b)| {
                Action::ALL
                    .into_iter()
                    .find(|&u| grid.offset(a, u) == Some(b))
                    .ok_or_else(|| PatrolError::InvalidParameter {
                        name: "trajectory",
                        reason: format!("({}, {}) to ({}, {}) is not a single move", a.i, a.j, b.i, b.j),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(actions);
        prev = now;
    }
    Ok(out)
}
