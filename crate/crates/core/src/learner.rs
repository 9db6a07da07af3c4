//! Experience collection, replay buffers, offline Double DQN pretraining and
//! the online semi-decentralized learning loop.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::TrafficField;
use crate::error::{PatrolError, Result};
use crate::gridmap::{Action, ActionMask, CellIndex};
use crate::idleness::IdlenessMap;
use crate::policies::{joint_action_solve, random_policy, rl_decentralized};
use crate::qnet::{loss_and_grad, OptimizerState, QParams, TargetParams, DESK_DIMS, FULL_DIMS};
use crate::scalar::Scalar;
use crate::statereward::{build_state, drone_rewards, swarm_score, RewardConfig, StateVector};

/// One experience tuple `(s, u, r, s')` plus the actions feasible in `s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub s: StateVector<S>,
    pub u: Action,
    pub r: S,
    pub s_next: StateVector<S>,
    pub feasible_next: ActionMask,
}

/// Bounded FIFO of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    items: VecDeque<Transition<S>>,
    capacity: usize,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 100_000;

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(PatrolError::InvalidParameter { name: "buffer_capacity", reason: "must be >= 1".into() });
        }
        Ok(Self { items: VecDeque::with_capacity(capacity.min(4096)), capacity })
    }

    pub fn push(&mut self, t: Transition<S>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> Option<&Transition<S>> {
        self.items.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }
}

/// Uniform sample without replacement from the union of `buffers`.
pub fn sample_batch<S: Scalar, R: Rng>(buffers: &[&ReplayBuffer<S>], size: usize, rng: &mut R) -> Result<Vec<Transition<S>>> {
    let total: usize = buffers.iter().map(|b| b.len()).sum();
    if size > total || size == 0 {
        return Err(PatrolError::InsufficientData { requested: size, available: total });
    }
    Ok(sample(rng, total, size)
        .into_iter()
        .map(|mut idx| {
            for b in buffers {
                if idx < b.len() {
                    return b.items[idx].clone();
                }
                idx -= b.len();
            }
            unreachable!("index below pooled length")
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Target network is hard-updated every this many epochs.
    pub target_update_period: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub net_dims: Vec<usize>,
}

impl Default for TrainConfig {
    /// Reduced network and schedule used for quick experiments.
    fn default() -> Self {
        Self {
            epochs: 2000,
            iters_per_epoch: 10,
            batch_size: 32,
            gamma: crate::qnet::DEFAULT_GAMMA,
            learning_rate: 1e-3,
            target_update_period: 100,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            seed: 0,
            net_dims: DESK_DIMS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-size network and schedule.
    pub fn full() -> Self {
        Self {
            epochs: 30_000,
            iters_per_epoch: 30,
            learning_rate: crate::qnet::DEFAULT_LEARNING_RATE,
            net_dims: FULL_DIMS.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("iters_per_epoch", self.iters_per_epoch),
            ("batch_size", self.batch_size),
            ("target_update_period", self.target_update_period),
            ("buffer_capacity", self.buffer_capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PatrolError::InvalidParameter { name, reason: "must be >= 1".into() });
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(PatrolError::InvalidParameter { name: "gamma", reason: format!("must lie in [0, 1), got {}", self.gamma) });
        }
        if !(self.learning_rate > 0.0) {
            return Err(PatrolError::InvalidParameter { name: "learning_rate", reason: "must be positive".into() });
        }
        if self.net_dims.first() != Some(&crate::statereward::STATE_DIM) || self.net_dims.last() != Some(&crate::qnet::ACTION_COUNT) {
            return Err(PatrolError::InvalidParameter {
                name: "net_dims",
                reason: format!("must start at 13 and end at 5, got {:?}", self.net_dims),
            });
        }
        Ok(())
    }
}

/// Live network, its target copy, optimizer state and the batch-sampling
/// stream. Owns the only mutable copy of the parameters.
#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub params: QParams<S>,
    pub target: TargetParams<S>,
    pub opt: OptimizerState<S>,
    pub epochs_done: usize,
    gamma: S,
    batch_size: usize,
    iters_per_epoch: usize,
    target_update_period: usize,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = QParams::init(&config.net_dims, &mut init_rng)?;
        Self::from_params(params, config)
    }

    pub fn from_params(params: QParams<S>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if params.dims() != config.net_dims {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{:?}", config.net_dims),
                found: format!("{:?}", params.dims()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(7);
        Ok(Self {
            target: TargetParams::from_params(&params),
            opt: OptimizerState::new(&config.net_dims, S::lit(config.learning_rate))?,
            params,
            epochs_done: 0,
            gamma: S::lit(config.gamma),
            batch_size: config.batch_size,
            iters_per_epoch: config.iters_per_epoch,
            target_update_period: config.target_update_period,
            rng,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `iters_per_epoch` gradient steps on fresh batches from the pooled
    /// buffers, then a target hard update if the epoch count calls for it.
    /// Returns the mean loss over the epoch.
    pub fn train_epoch(&mut self, buffers: &[&ReplayBuffer<S>]) -> Result<S> {
        let mut total = S::zero();
        for _ in 0..self.iters_per_epoch {
            let batch = sample_batch(buffers, self.batch_size, &mut self.rng)?;
            let (l, grads) = loss_and_grad(&self.params, &self.target, &batch, self.gamma)?;
            self.opt.apply(&mut self.params, &grads)?;
            total = total + l;
        }
        self.epochs_done += 1;
        if self.epochs_done % self.target_update_period == 0 {
            self.target.hard_update(&self.params)?;
        }
        Ok(total / S::from_usize_lossy(self.iters_per_epoch))
    }
}

/// Result of offline pretraining.
#[derive(Debug, Clone)]
pub struct Pretrained<S> {
    pub trainer: Trainer<S>,
    /// Mean loss of every epoch.
    pub loss_curve: Vec<S>,
}

pub fn pretrain<S: Scalar>(buffers: &[ReplayBuffer<S>], config: &TrainConfig) -> Result<Pretrained<S>> {
    let mut trainer = Trainer::new(config)?;
    let refs: Vec<&ReplayBuffer<S>> = buffers.iter().collect();
    let pooled: usize = refs.iter().map(|b| b.len()).sum();
    if pooled < config.batch_size {
        return Err(PatrolError::InsufficientData { requested: config.batch_size, available: pooled });
    }
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        loss_curve.push(trainer.train_epoch(&refs)?);
    }
    Ok(Pretrained { trainer, loss_curve })
}

/// Idleness parameters shared by every simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdlenessParams {
    pub eta: f64,
    pub delta: f64,
    pub fill: f64,
}

impl Default for IdlenessParams {
    fn default() -> Self {
        Self {
            eta: crate::idleness::DEFAULT_ETA,
            delta: crate::idleness::DEFAULT_DELTA,
            fill: crate::idleness::DEFAULT_FILL,
        }
    }
}

/// Drone positions, the shared idleness map and the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState<S> {
    pub positions: Vec<CellIndex>,
    pub idleness: IdlenessMap<S>,
    pub k: usize,
}

/// Everything that changed during one [`WorldState::advance`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub from: Vec<CellIndex>,
    pub to: Vec<CellIndex>,
    pub actions: Vec<Action>,
    pub pre_idleness: IdlenessMap<S>,
    pub rewards: Vec<S>,
    pub score: S,
}

/// Draws `n` distinct free cells.
pub fn random_start_cells<R: Rng>(grid: &crate::gridmap::GridSpec, n: usize, rng: &mut R) -> Result<Vec<CellIndex>> {
    let free: Vec<CellIndex> = grid.free_cells().collect();
    if free.len() < n {
        return Err(PatrolError::GridTooSmall { needed: n, available: free.len() });
    }
    Ok(sample(rng, free.len(), n).into_iter().map(|i| free[i]).collect())
}

impl<S: Scalar> WorldState<S> {
    pub fn new<E: TrafficField<S>>(env: &E, positions: Vec<CellIndex>, idle: &IdlenessParams) -> Result<Self> {
        let grid = env.grid();
        for &p in &positions {
            grid.check_free(p)?;
        }
        let idleness = IdlenessMap::new(grid, S::lit(idle.eta), S::lit(idle.delta), S::lit(idle.fill))?;
        Ok(Self { positions, idleness, k: 0 })
    }

    pub fn n_drones(&self) -> usize {
        self.positions.len()
    }

    pub fn state<E: TrafficField<S>>(&self, env: &E, d: usize) -> Result<StateVector<S>> {
        build_state(env, &self.idleness, &self.positions, d, self.k)
    }

    pub fn states<E: TrafficField<S>>(&self, env: &E) -> Result<Vec<StateVector<S>>> {
        (0..self.n_drones()).map(|d| self.state(env, d)).collect()
    }

    pub fn masks<E: TrafficField<S>>(&self, env: &E) -> Result<Vec<ActionMask>> {
        self.positions.iter().map(|&p| env.grid().feasible_mask(p)).collect()
    }

    /// Moves every drone, steps the idleness map and scores the transition.
    pub fn advance<E: TrafficField<S>>(&mut self, env: &E, actions: &[Action], reward: &RewardConfig<S>) -> Result<StepRecord<S>> {
        if actions.len() != self.positions.len() {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{} actions", self.positions.len()),
                found: format!("{}", actions.len()),
            });
        }
        let grid = env.grid();
        let to = self
            .positions
            .iter()
            .zip(actions)
            .map(|(&p, &a)| grid.apply_action(p, a))
            .collect::<Result<Vec<_>>>()?;
        let post = self.idleness.step(grid, &to)?;
        let rewards = drone_rewards(&self.idleness, &post, env, &self.positions, &to, self.k, reward)?;
        let score = rewards.iter().fold(S::zero(), |a, &r| a + r);
        let pre = std::mem::replace(&mut self.idleness, post);
        let from = std::mem::replace(&mut self.positions, to.clone());
        self.k += 1;
        Ok(StepRecord { from, to, actions: actions.to_vec(), pre_idleness: pre, rewards, score })
    }
}

/// Recomputes a step's score from scratch; used by replay checks.
pub fn rescore<S: Scalar, E: TrafficField<S>>(env: &E, rec: &StepRecord<S>, k: usize, reward: &RewardConfig<S>) -> Result<S> {
    let post = rec.pre_idleness.step(env.grid(), &rec.to)?;
    swarm_score(&rec.pre_idleness, &post, env, &rec.from, &rec.to, k, reward)
}

/// Runs `n_drones` uniformly random drones for `steps` steps and records one
/// transition per drone per step into that drone's buffer.
pub fn collect_random_rollouts<S: Scalar, E: TrafficField<S>>(
    env: &E,
    n_drones: usize,
    steps: usize,
    idle: &IdlenessParams,
    reward: &RewardConfig<S>,
    capacity: usize,
    seed: u64,
) -> Result<Vec<ReplayBuffer<S>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = random_start_cells(env.grid(), n_drones, &mut rng)?;
    let mut world = WorldState::new(env, starts, idle)?;
    let mut buffers = (0..n_drones).map(|_| ReplayBuffer::new(capacity)).collect::<Result<Vec<_>>>()?;
    for _ in 0..steps {
        let states = world.states(env)?;
        let actions = world
            .positions
            .iter()
            .map(|&p| random_policy(env.grid(), p, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let rec = world.advance(env, &actions, reward)?;
        store_transitions(env, &world, &states, &rec, &mut buffers)?;
    }
    Ok(buffers)
}

fn store_transitions<S: Scalar, E: TrafficField<S>>(
    env: &E,
    world: &WorldState<S>,
    states: &[StateVector<S>],
    rec: &StepRecord<S>,
    buffers: &mut [ReplayBuffer<S>],
) -> Result<()> {
    let next = world.states(env)?;
    let masks = world.masks(env)?;
    for d in 0..world.n_drones() {
        buffers[d].push(Transition {
            s: states[d],
            u: rec.actions[d],
            r: rec.rewards[d],
            s_next: next[d],
            feasible_next: masks[d],
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinationMode {
    Coordinated,
    Decentralized,
}

/// Online-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Disable all parameter updates.
    pub frozen: bool,
    /// Run one update epoch every this many steps.
    pub update_period: usize,
    pub epsilon: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { frozen: false, update_period: 1, epsilon: crate::policies::DEFAULT_EPSILON }
    }
}

/// What happened during one online step.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome<S> {
    pub record: StepRecord<S>,
    pub mode: CoordinationMode,
    /// Mean loss of the update epoch(s) run this step, if any.
    pub loss: Option<S>,
    /// The coordinator could not find distinct destinations and the step fell
    /// back to per-drone selection.
    pub solver_fallback: bool,
}

/// Semi-decentralized learner. While coordinated, one shared network is
/// trained on the pooled buffers and actions come from the joint solver.
/// Once coordination is lost every drone keeps the last broadcast parameters
/// and, if learning, trains its private copy on its own buffer only.
#[derive(Debug, Clone)]
pub struct OnlineLearner<S> {
    pub shared: Trainer<S>,
    pub buffers: Vec<ReplayBuffer<S>>,
    local: Option<Vec<Trainer<S>>>,
    config: OnlineConfig,
    rng: ChaCha8Rng,
}

impl<S: Scalar> OnlineLearner<S> {
    pub fn new(shared: Trainer<S>, buffers: Vec<ReplayBuffer<S>>, config: OnlineConfig, seed: u64) -> Result<Self> {
        if config.update_period == 0 {
            return Err(PatrolError::InvalidParameter { name: "update_period", reason: "must be >= 1".into() });
        }
        if !(0.0..=1.0).contains(&config.epsilon) {
            return Err(PatrolError::InvalidParameter { name: "epsilon", reason: "must lie in [0, 1]".into() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        Ok(Self { shared, buffers, local: None, config, rng })
    }

    pub fn mode(&self) -> CoordinationMode {
        if self.local.is_some() {
            CoordinationMode::Decentralized
        } else {
            CoordinationMode::Coordinated
        }
    }

    /// Parameters drone `d` acts with.
    pub fn params_for(&self, d: usize) -> &QParams<S> {
        match &self.local {
            Some(local) => &local[d].params,
            None => &self.shared.params,
        }
    }

    /// Coordinator outage: every drone keeps a snapshot of the current
    /// shared parameters.
    pub fn lose_coordination(&mut self, n_drones: usize) {
        if self.local.is_none() {
            self.local = Some(vec![self.shared.clone(); n_drones]);
        }
    }

    fn learning_due(&self, k: usize) -> bool {
        !self.config.frozen && k % self.config.update_period == 0
    }

    /// One tick of the online loop: optional update, state building, action
    /// selection, move, idleness update, rewards and buffer writes.
    pub fn step<E: TrafficField<S>>(
        &mut self,
        env: &E,
        world: &mut WorldState<S>,
        mode: CoordinationMode,
        reward: &RewardConfig<S>,
    ) -> Result<OnlineOutcome<S>> {
        if self.buffers.len() != world.n_drones() {
            self.buffers.resize_with(world.n_drones(), || {
                ReplayBuffer::new(DEFAULT_BUFFER_CAPACITY).expect("positive capacity")
            });
        }
        if mode == CoordinationMode::Decentralized {
            self.lose_coordination(world.n_drones());
        }
        let mode = self.mode();

        let mut loss = None;
        if self.learning_due(world.k) {
            match &mut self.local {
                None => {
                    let refs: Vec<&ReplayBuffer<S>> = self.buffers.iter().collect();
                    if refs.iter().map(|b| b.len()).sum::<usize>() >= self.shared.batch_size() {
                        loss = Some(self.shared.train_epoch(&refs)?);
                    }
                }
                Some(local) => {
                    let mut sum = S::zero();
                    let mut n = 0usize;
                    for (trainer, buf) in local.iter_mut().zip(&self.buffers) {
                        if buf.len() >= trainer.batch_size() {
                            sum = sum + trainer.train_epoch(&[buf])?;
                            n += 1;
                        }
                    }
                    if n > 0 {
                        loss = Some(sum / S::from_usize_lossy(n));
                    }
                }
            }
        }

        let states = world.states(env)?;
        let masks = world.masks(env)?;
        let mut solver_fallback = false;
        let actions = match mode {
            CoordinationMode::Coordinated => {
                let q = states.iter().map(|s| self.shared.params.forward(s)).collect::<Result<Vec<_>>>()?;
                match joint_action_solve(&q, &world.positions, env.grid()) {
                    Ok(actions) => actions,
                    Err(PatrolError::NoDistinctAssignment { .. }) => {
                        solver_fallback = true;
                        self.decentralized_actions(&states, &masks)?
                    }
                    Err(e) => return Err(e),
                }
            }
            CoordinationMode::Decentralized => self.decentralized_actions(&states, &masks)?,
        };

        let record = world.advance(env, &actions, reward)?;
        store_transitions(env, world, &states, &record, &mut self.buffers)?;
        Ok(OnlineOutcome { record, mode, loss, solver_fallback })
    }

    fn decentralized_actions(&mut self, states: &[StateVector<S>], masks: &[ActionMask]) -> Result<Vec<Action>> {
        let eps = self.config.epsilon;
        let mut actions = Vec::with_capacity(states.len());
        for (d, (s, m)) in states.iter().zip(masks).enumerate() {
            let params = match &self.local {
                Some(local) => &local[d].params,
                None => &self.shared.params,
            };
            actions.push(rl_decentralized(params, s, *m, eps, &mut self.rng)?);
        }
        Ok(actions)
    }
}
