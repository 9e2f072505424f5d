//! Dueling double DQN: epsilon-greedy acting, uniform experience replay,
//! double-estimator targets and periodic target synchronisation.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{episode_cost, CostBreakdown, Environment, EpisodeTrace, ModeSelection};
use crate::error::{Error, Result};
use crate::neural::{Adam, AdamConfig, Architecture, Checkpoint, DuelingNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with its own seeded sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::with_capacity(capacity.clamp(1, 1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
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

    /// Stored transitions, oldest first.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample(&mut self, n: usize) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..self.items.len())).collect();
        idx.into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub eps_max: f64,
    pub eps_min: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            eps_max: 1.0,
            eps_min: 0.01,
            decay: 0.005,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        self.eps_min + (self.eps_max - self.eps_min) * (-self.decay * episode as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_steps: usize,
    pub hidden: [usize; 2],
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 1500,
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            replay_capacity: 100_000,
            target_sync_steps: 200,
            hidden: [128, 128],
        }
    }
}

impl TrainingConfig {
    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.episodes == 0 {
            out.push("training.episodes: must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("training.gamma: {} not in (0, 1]", self.gamma));
        }
        let e = &self.epsilon;
        if !(0.0 <= e.eps_min && e.eps_min <= e.eps_max && e.eps_max <= 1.0) {
            out.push(format!(
                "training.epsilon: need 0 <= eps_min ({}) <= eps_max ({}) <= 1",
                e.eps_min, e.eps_max
            ));
        }
        if !(e.decay >= 0.0) {
            out.push("training.epsilon.decay: must be >= 0".into());
        }
        if !(self.adam.learning_rate > 0.0) {
            out.push("training.adam.learning_rate: must be > 0".into());
        }
        if self.batch_size == 0 {
            out.push("training.batch_size: must be >= 1".into());
        }
        if self.replay_capacity < self.batch_size {
            out.push(format!(
                "training.replay_capacity: {} smaller than batch_size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.target_sync_steps == 0 {
            out.push("training.target_sync_steps: must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            out.push("training.hidden: layer widths must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn architecture(&self, input: usize, actions: usize) -> Architecture {
        Architecture {
            input,
            hidden1: self.hidden[0],
            hidden2: self.hidden[1],
            actions,
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn select_action<R: Rng + ?Sized>(net: &DuelingNetwork, observation: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.architecture().actions));
    }
    Ok(argmax(&net.forward(observation)?))
}

/// Double-estimator targets: the main network picks `a'`, the target network values it.
pub fn compute_targets(main: &DuelingNetwork, target: &DuelingNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    if main.architecture() != target.architecture() {
        return Err(Error::Compatibility("main and target networks differ in shape".into()));
    }
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.reward);
            }
            let a_next = argmax(&main.forward(&t.next_observation)?);
            Ok(t.reward + gamma * target.forward(&t.next_observation)?[a_next])
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub main: DuelingNetwork,
    pub target: DuelingNetwork,
    pub optimizer: Adam,
    pub gradient_steps: u64,
}

impl DqnAgent {
    pub fn new(arch: Architecture, adam: AdamConfig, seed: u64) -> Result<Self> {
        let main = DuelingNetwork::new(arch, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self {
            target: main.clone(),
            optimizer: Adam::new(adam, main.param_count()),
            main,
            gradient_steps: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self {
            target: ck.network.clone(),
            main: ck.network,
            optimizer: ck.optimizer,
            gradient_steps: ck.gradient_steps,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.main.clone(),
            optimizer: self.optimizer.clone(),
            gradient_steps: self.gradient_steps,
        }
    }

    /// One minibatch update; synchronises the target every `sync` steps.
    pub fn learn(&mut self, batch: &[&Transition], gamma: f64, sync: usize) -> Result<f64> {
        let y = compute_targets(&self.main, &self.target, batch, gamma)?;
        let inputs: Vec<&[f64]> = batch.iter().map(|t| t.observation.as_slice()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let loss = self
            .main
            .train_batch(&inputs, &actions, &y, &mut self.optimizer)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{m} at gradient step {}", self.gradient_steps + 1)),
                other => other,
            })?;
        self.gradient_steps += 1;
        if self.gradient_steps % sync as u64 == 0 {
            self.target.copy_from(&self.main)?;
        }
        Ok(loss)
    }
}

/// Where training episodes come from.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSource {
    /// Candidate absolute start steps; one is drawn uniformly per episode.
    pub starts: Vec<usize>,
    pub modes: ModeSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub epsilon: f64,
    pub cum_reward: f64,
    /// `None` while the buffer is still warming up.
    pub loss_mean: Option<f64>,
}

pub struct TrainingOutcome {
    pub agent: DqnAgent,
    pub curve: Vec<CurvePoint>,
}

pub fn train(env: &mut Environment, config: &TrainingConfig, source: &EpisodeSource, seed: u64) -> Result<TrainingOutcome> {
    train_with(env, config, source, seed, |_, _| {})
}

/// As [`train`], calling `progress` with the agent after every episode.
pub fn train_with<F>(
    env: &mut Environment,
    config: &TrainingConfig,
    source: &EpisodeSource,
    seed: u64,
    mut progress: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(&CurvePoint, &DqnAgent),
{
    config.validate()?;
    if source.starts.is_empty() {
        return Err(Error::Parameter("no training episode starts".into()));
    }
    let arch = config.architecture(env.observation_len(), env.action_count());
    let mut agent = DqnAgent::new(arch, config.adam.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut buffer = ReplayBuffer::new(config.replay_capacity, seed.wrapping_add(2));
    let mut curve = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let eps = config.epsilon.value(episode);
        let start = source.starts[rng.random_range(0..source.starts.len())];
        let mut obs = env.reset(start, &source.modes)?;
        let width = env.scenario().roster.len();
        let mut cum_reward = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        loop {
            let a = select_action(&agent.main, &obs, eps, &mut rng)?;
            let res = env.step(crate::env::JointAction::from_index(a, width)?)?;
            cum_reward += res.reward.total;
            buffer.push(Transition {
                observation: obs,
                action: a,
                reward: res.reward.total,
                next_observation: res.observation.clone(),
                terminal: res.terminal,
            });
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size);
                loss_sum += agent.learn(&batch, config.gamma, config.target_sync_steps)?;
                updates += 1;
            }
            if res.terminal {
                break;
            }
            obs = res.observation;
        }
        let point = CurvePoint {
            episode,
            epsilon: eps,
            cum_reward,
            loss_mean: (updates > 0).then(|| loss_sum / updates as f64),
        };
        progress(&point, &agent);
        curve.push(point);
    }
    Ok(TrainingOutcome { agent, curve })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trace: EpisodeTrace,
    pub costs: CostBreakdown,
}

/// Greedy rollout of `net` from `start` under `modes`.
pub fn evaluate(net: &DuelingNetwork, env: &mut Environment, start: usize, modes: &ModeSelection) -> Result<Evaluation> {
    let expected = Architecture {
        input: env.observation_len(),
        actions: env.action_count(),
        ..net.architecture()
    };
    if net.architecture() != expected {
        return Err(Error::Compatibility(format!(
            "network {:?} does not fit environment (input {}, actions {})",
            net.architecture(),
            expected.input,
            expected.actions
        )));
    }
    let mut failure = None;
    let trace = env.rollout(start, modes, |obs| match net.forward(obs) {
        Ok(q) => argmax(&q),
        Err(e) => {
            failure.get_or_insert(e);
            0
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let costs = episode_cost(&trace, env.scenario().grid.dt_hours());
    Ok(Evaluation { trace, costs })
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("episode,epsilon,cum_reward,loss_mean\n");
    for p in curve {
        let loss = p.loss_mean.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.episode, p.epsilon, p.cum_reward, loss));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        row: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let bad = |m: String| Error::Parse {
            path: path.into(),
            row: i + 2,
            message: m,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| bad(format!("missing column {j}")))?
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))
        };
        out.push(CurvePoint {
            episode: num(0)? as usize,
            epsilon: num(1)?,
            cum_reward: num(2)?,
            loss_mean: match rec.get(3) {
                Some("") | None => None,
                Some(_) => Some(num(3)?),
            },
        });
    }
    Ok(out)
}
