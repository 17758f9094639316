use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameState;
use crate::neuralnet::{Adam, AdamConfig, Architecture, Gradients, Mlp};

/// Anomaly flags, burned flags and a one-hot of the current topology.
pub fn encode_state(state: &GameState, topology_count: usize) -> Vec<f64> {
    let b = |x: &bool| if *x { 1.0 } else { 0.0 };
    let mut f: Vec<f64> = state.flags.iter().map(b).chain(state.burned.iter().map(b)).collect();
    let base = f.len();
    f.resize(base + topology_count, 0.0);
    if state.topology < topology_count {
        f[base + state.topology] = 1.0;
    }
    f
}

/// `B_t = B_0 · e^(−λ t)`.
pub fn exploration_threshold(t: u64, b0: f64, lambda: f64) -> f64 {
    b0 * (-lambda * t as f64).exp()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice: uniform with probability `b_t`, otherwise greedy on `net`.
pub fn select_action<R: Rng + ?Sized>(net: &Mlp, features: &[f64], b_t: f64, rng: &mut R) -> Result<usize> {
    let u: f64 = rng.random();
    if u < b_t {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&net.forward(features)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Bounded ring buffer with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), next: 0 })
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

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Index drawn uniformly over the current contents.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        (!self.items.is_empty()).then(|| rng.random_range(0..self.items.len()))
    }

    /// `size` experiences drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&Experience> {
        (0..size).filter_map(|_| self.sample_index(rng).map(|i| &self.items[i])).collect()
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }
}

/// TD target `U_D + γ · max Q(Θ′, ·, w⁻)`, or `U_D` alone at episode end.
pub fn td_target(target: &Mlp, e: &Experience, gamma: f64) -> Result<f64> {
    if e.terminal {
        return Ok(e.reward);
    }
    let q = target.forward(&e.next_state)?;
    Ok(e.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// One Adam step on the minibatch TD loss; returns the loss before the update.
pub fn train_step(online: &mut Mlp, target: &Mlp, batch: &[&Experience], gamma: f64, opt: &mut Adam) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let mut grads = Gradients::zeros_like(online);
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for e in batch {
        if e.action >= online.output_dim() || !e.reward.is_finite() {
            return Err(Error::Contract(format!("bad experience: action {} reward {}", e.action, e.reward)));
        }
        let y = td_target(target, e, gamma)?;
        let trace = online.forward_trace(&e.state)?;
        let err = trace.output[e.action] - y;
        loss += err * err / n;
        let mut up = vec![0.0; online.output_dim()];
        up[e.action] = 2.0 * err / n;
        grads.add_assign(&online.backward(&trace, &up)?);
    }
    opt.update(online, &grads)?;
    Ok(loss)
}

/// Copies `online` into `target` when `step` is a multiple of `period`.
pub fn sync_target(online: &Mlp, target: &mut Mlp, step: u64, period: u64) -> bool {
    if period == 0 || step % period == 0 {
        *target = online.clone();
        true
    } else {
        false
    }
}

/// Sudden reward drop: `current` falls below the trailing mean by more than
/// `drop_fraction · |mean|` (and by more than `floor`).
pub fn maybe_retrain(window: &[f64], current: f64, drop_fraction: f64, floor: f64, min_window: usize) -> bool {
    if window.len() < min_window.max(1) {
        return false;
    }
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    current < mean - (drop_fraction * mean.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub b0: f64,
    pub lambda_decay: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Train steps between target-network syncs.
    pub target_period: u64,
    pub drop_fraction: f64,
    pub trailing_window: usize,
    /// Minimum absolute drop that can trigger retraining.
    pub retrain_floor: f64,
    pub b_reset: f64,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            b0: 1.0,
            lambda_decay: 0.01,
            gamma: 0.95,
            batch_size: 32,
            replay_capacity: 10_000,
            target_period: 50,
            drop_fraction: 0.2,
            trailing_window: 10,
            retrain_floor: 1e-3,
            b_reset: 0.3,
            hidden: vec![24, 24],
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.b0 > 0.0 && self.b0 <= 1.0) {
            return bad("B0 must lie in (0, 1]");
        }
        if !(self.lambda_decay >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.b_reset >= 0.0 && self.b_reset <= self.b0) {
            return bad("B_r must lie in [0, B0]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.trailing_window == 0 {
            return bad("batch size, replay capacity and trailing window must be positive");
        }
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return bad("drop fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Deep Q-learning defender.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub online: Mlp,
    pub target: Mlp,
    optimizer: Adam,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    /// Environment steps taken since exploration was last (re)started.
    explore_steps: u64,
    explore_start: f64,
    train_steps: u64,
    recent: VecDeque<f64>,
    retrain_events: u64,
}

impl DqnAgent {
    pub fn new(inputs: usize, actions: usize, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = Mlp::new(Architecture::new(inputs, &config.hidden, actions), &mut rng)?;
        Self::assemble(online, config, rng, None)
    }

    /// A trained network put into service: greedy until a reward drop triggers exploration.
    pub fn deployed(online: Mlp, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        online.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(online, config, rng, Some(0.0))
    }

    fn assemble(online: Mlp, config: AgentConfig, rng: ChaCha8Rng, start: Option<f64>) -> Result<Self> {
        Ok(Self {
            target: online.clone(),
            optimizer: Adam::new(&online, config.adam.clone()),
            memory: ReplayMemory::new(config.replay_capacity)?,
            rng,
            explore_steps: 0,
            explore_start: start.unwrap_or(config.b0),
            train_steps: 0,
            recent: VecDeque::new(),
            retrain_events: 0,
            online,
            config,
        })
    }

    pub fn exploration(&self) -> f64 {
        exploration_threshold(self.explore_steps, self.explore_start, self.config.lambda_decay)
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn retrain_events(&self) -> u64 {
        self.retrain_events
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    /// ε-greedy action; advances the exploration clock.
    pub fn act(&mut self, features: &[f64]) -> Result<usize> {
        let b = self.exploration();
        self.explore_steps += 1;
        select_action(&self.online, features, b, &mut self.rng)
    }

    pub fn greedy(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.online.forward(features)?))
    }

    /// Stores a transition and trains once the memory holds a full batch.
    pub fn observe(&mut self, e: Experience) -> Result<Option<f64>> {
        self.memory.push(e);
        self.train_once()
    }

    /// One gradient step on a replayed batch; `None` until the memory holds a full batch.
    pub fn train_once(&mut self) -> Result<Option<f64>> {
        if self.memory.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch: Vec<Experience> = self
            .memory
            .sample(self.config.batch_size, &mut self.rng)
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let loss = train_step(&mut self.online, &self.target, &refs, self.config.gamma, &mut self.optimizer)?;
        self.train_steps += 1;
        sync_target(&self.online, &mut self.target, self.train_steps, self.config.target_period);
        Ok(Some(loss))
    }

    /// Tracks rewards; on a sudden drop, restarts exploration at `B_r`. Returns whether it did.
    pub fn record_reward(&mut self, reward: f64) -> bool {
        let window: Vec<f64> = self.recent.iter().copied().collect();
        let triggered = maybe_retrain(
            &window,
            reward,
            self.config.drop_fraction,
            self.config.retrain_floor,
            self.config.trailing_window,
        );
        if triggered {
            self.explore_start = self.config.b_reset;
            self.explore_steps = 0;
            self.retrain_events += 1;
        }
        self.recent.push_back(reward);
        while self.recent.len() > self.config.trailing_window {
            self.recent.pop_front();
        }
        triggered
    }

    /// Clears the reward window, e.g. between episodes.
    pub fn reset_episode(&mut self) {
        self.recent.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_layout() {
        let mut s = GameState { theta: vec![false; 4], topology: 0, burned: vec![false; 4], flags: vec![false; 4], step: 0 };
        let f = encode_state(&s, 16);
        assert_eq!(f.len(), 24);
        assert_eq!(f.iter().sum::<f64>(), 1.0);
        assert_eq!(f[8], 1.0);
        s.burned[0] = true;
        s.topology = 5;
        let f = encode_state(&s, 16);
        assert_eq!(f[4], 1.0);
        assert_eq!(f[8 + 5], 1.0);
    }

    #[test]
    fn exploration_examples() {
        assert_eq!(exploration_threshold(0, 1.0, 0.01), 1.0);
        assert_eq!(exploration_threshold(500, 0.7, 0.0), 0.7);
        assert!((exploration_threshold(100, 1.0, 0.01) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn greedy_and_ties() {
        let mut net = Mlp::zeros(Architecture::new(1, &[], 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&net, &[0.0], 0.0, &mut rng).unwrap(), 0);
        net.layers[0].biases = vec![0.2, 0.9, 0.1];
        assert_eq!(select_action(&net, &[0.0], 0.0, &mut rng).unwrap(), 1);
    }

    #[test]
    fn retrain_rule() {
        assert!(!maybe_retrain(&[1.0; 10], 1.0, 0.2, 1e-3, 10));
        assert!(maybe_retrain(&[1.0; 10], 0.5, 0.2, 1e-3, 10));
        assert!(!maybe_retrain(&[-0.5; 10], -0.5, 0.2, 1e-3, 10));
        assert!(!maybe_retrain(&[1.0; 3], 0.0, 0.2, 1e-3, 10));
        let mut a = DqnAgent::new(2, 2, AgentConfig::default()).unwrap();
        for _ in 0..10 {
            assert!(!a.record_reward(1.0));
        }
        assert!(a.record_reward(0.1));
        assert_eq!(a.exploration(), a.config.b_reset);
    }

    #[test]
    fn sync_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut online = Mlp::new(Architecture::new(2, &[3], 2), &mut rng).unwrap();
        let mut target = Mlp::zeros(Architecture::new(2, &[3], 2));
        assert!(sync_target(&online, &mut target, 0, 50));
        assert_eq!(online.forward(&[0.3, 0.1]).unwrap(), target.forward(&[0.3, 0.1]).unwrap());
        online.layers[0].biases[0] += 1.0;
        assert!(!sync_target(&online, &mut target, 17, 50));
        assert_ne!(online, target);
    }

    #[test]
    fn ring_buffer_wraps() {
        let mut m = ReplayMemory::new(3).unwrap();
        for i in 0..5 {
            m.push(Experience { state: vec![], action: i, reward: 0.0, next_state: vec![], terminal: true });
        }
        assert_eq!(m.len(), 3);
        let actions: Vec<usize> = (0..3).map(|i| m.get(i).unwrap().action).collect();
        assert_eq!(actions, vec![3, 4, 2]);
    }
}
