use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::{encode_state, AgentConfig, DqnAgent, Experience};
use crate::consensus::{enumerate_topologies, CommTopology};
use crate::error::Result;
use crate::game::GameState;

/// Reduced defender problem with a known optimum.
///
/// State: persistent compromise pattern Θ plus the current tree. Action: next tree.
/// Reward: `−Σ θ_k · deg(k)` on the chosen tree, minus a cost for switching.
#[derive(Debug, Clone)]
pub struct SurrogateGame {
    pub n: usize,
    pub topologies: Vec<CommTopology>,
    pub switch_cost: f64,
    pub gamma: f64,
    pub episode_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub states: usize,
    pub matches: usize,
    pub fraction: f64,
    pub episodes: usize,
    pub seconds: f64,
}

impl SurrogateGame {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self { n, topologies: enumerate_topologies(n)?, switch_cost: 0.5, gamma: 0.95, episode_len: 50 })
    }

    /// Learner settings used for the surrogate check: faster steps, slower exploration decay.
    pub fn agent_config(seed: u64) -> AgentConfig {
        let mut cfg = AgentConfig { lambda_decay: 1e-3, seed, ..AgentConfig::default() };
        cfg.adam.learning_rate = 3e-3;
        cfg
    }

    pub fn actions(&self) -> usize {
        self.topologies.len()
    }

    pub fn state_count(&self) -> usize {
        (1 << self.n) * self.actions()
    }

    /// `(Θ bit pattern, topology)` of a state index.
    pub fn decode(&self, s: usize) -> (usize, usize) {
        (s / self.actions(), s % self.actions())
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        let (theta, topo) = self.decode(s);
        let exposure: usize = (0..self.n).filter(|k| theta >> k & 1 == 1).map(|k| self.topologies[a].degree(k)).sum();
        let switch = if a != topo { self.switch_cost } else { 0.0 };
        -(exposure as f64) - switch
    }

    pub fn next(&self, s: usize, a: usize) -> usize {
        self.decode(s).0 * self.actions() + a
    }

    pub fn features(&self, s: usize) -> Vec<f64> {
        let (theta, topo) = self.decode(s);
        let gs = GameState {
            theta: vec![false; self.n],
            topology: topo,
            burned: vec![false; self.n],
            flags: (0..self.n).map(|k| theta >> k & 1 == 1).collect(),
            step: 0,
        };
        encode_state(&gs, self.actions())
    }

    /// Trains a fresh agent for `episodes` episodes from uniformly random start states.
    pub fn train(&self, episodes: usize, config: AgentConfig) -> Result<DqnAgent> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
        let mut agent = DqnAgent::new(self.features(0).len(), self.actions(), config)?;
        for _ in 0..episodes {
            let mut s = rng.random_range(0..self.state_count());
            for _ in 0..self.episode_len {
                let f = self.features(s);
                let a = agent.act(&f)?;
                let r = self.reward(s, a);
                let s2 = self.next(s, a);
                // time-limit truncation is not a true terminal state
                agent.observe(Experience { state: f, action: a, reward: r, next_state: self.features(s2), terminal: false })?;
                s = s2;
            }
        }
        Ok(agent)
    }

    /// Fraction of states where the agent's greedy action is optimal under `q_star`.
    pub fn evaluate(&self, agent: &DqnAgent, q_star: &[Vec<f64>]) -> Result<(usize, usize)> {
        let mut matches = 0;
        for (s, q) in q_star.iter().enumerate() {
            let a = agent.greedy(&self.features(s))?;
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if q[a] >= best - 1e-6 {
                matches += 1;
            }
        }
        Ok((matches, q_star.len()))
    }

    /// Trains, solves and compares.
    pub fn run(&self, episodes: usize, config: AgentConfig) -> Result<SurrogateReport> {
        let start = Instant::now();
        let q_star = value_iteration(self, 1e-12, 100_000);
        let agent = self.train(episodes, config)?;
        let (matches, states) = self.evaluate(&agent, &q_star)?;
        Ok(SurrogateReport {
            states,
            matches,
            fraction: matches as f64 / states as f64,
            episodes,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Optimal action values by value iteration, until the update falls below `tol`.
pub fn value_iteration(game: &SurrogateGame, tol: f64, max_iter: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (game.state_count(), game.actions());
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..max_iter {
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                q[s][a] = game.reward(s, a) + game.gamma * v[game.next(s, a)];
            }
            let best = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < tol {
            break;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_structure() {
        let g = SurrogateGame::new(3).unwrap();
        assert_eq!(g.state_count(), 24);
        assert_eq!(g.features(0).len(), 9);
        // no compromise and no switch is free
        assert_eq!(g.reward(0, 0), 0.0);
        assert_eq!(g.reward(1, 0), -0.5);
    }

    #[test]
    fn optimum_isolates_compromised_dgs() {
        let g = SurrogateGame::new(3).unwrap();
        let q = value_iteration(&g, 1e-12, 100_000);
        for s in 0..g.state_count() {
            let (theta, _) = g.decode(s);
            let best = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = q[s].iter().position(|&v| v == best).unwrap();
            let exposure = |t: usize| (0..3).filter(|k| theta >> k & 1 == 1).map(|k| g.topologies[t].degree(k)).sum::<usize>();
            let min = (0..3).map(exposure).min().unwrap();
            assert_eq!(exposure(a), min);
        }
    }
}
