//! Proximal policy optimization over the four-way categorical action space.
//!
//! Actor-critic with a shared tanh torso, one logits block per action
//! dimension and a scalar value head. Rollouts are collected from a single
//! environment, advantages come from GAE, and each update runs several
//! shuffled mini-batch epochs of the clipped surrogate objective.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, ACTION_CHOICES, ACTION_DIMS};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, ForwardTrace, Mlp, OptimizerKind};
use crate::rng::{child_seed, seeded, Rng};

pub type Action = [usize; ACTION_DIMS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub rollout_len: usize,
    pub update_epochs: usize,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    pub hidden: usize,
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            minibatch_size: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coeff: 0.0,
            value_coeff: 0.5,
            rollout_len: 2048,
            update_epochs: 10,
            clip_range: 0.2,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
            hidden: 64,
            total_steps: 1_000_000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("ppo.gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("ppo.gae_lambda", "must lie in [0, 1]"));
        }
        if !(self.clip_range > 0.0) {
            return Err(Error::config("ppo.clip_range", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("ppo.learning_rate", "must be positive"));
        }
        if self.minibatch_size == 0 || self.rollout_len == 0 || self.update_epochs == 0 || self.hidden == 0 {
            return Err(Error::config("ppo", "sizes must be positive"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("ppo.max_grad_norm", "must be positive"));
        }
        Ok(())
    }
}

/// Shared torso, policy logits (4 blocks of 3) and value head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub torso: Mlp,
    pub pi: Mlp,
    pub vf: Mlp,
}

#[derive(Debug, Clone)]
pub struct PolicyTrace {
    torso: ForwardTrace,
    pi: ForwardTrace,
    vf: ForwardTrace,
}

impl PolicyTrace {
    pub fn logits(&self) -> &[f64] {
        self.pi.output()
    }

    pub fn value(&self) -> f64 {
        self.vf.output()[0]
    }
}

/// Log-softmax of each 3-wide block.
pub fn log_probs(logits: &[f64]) -> Result<[[f64; ACTION_CHOICES]; ACTION_DIMS]> {
    if logits.len() != ACTION_DIMS * ACTION_CHOICES || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("policy logits"));
    }
    let mut out = [[0.0; ACTION_CHOICES]; ACTION_DIMS];
    for (k, block) in logits.chunks(ACTION_CHOICES).enumerate() {
        let m = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + block.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        for j in 0..ACTION_CHOICES {
            out[k][j] = block[j] - lse;
        }
    }
    Ok(out)
}

/// Joint log-probability: the sum over dimensions.
pub fn joint_log_prob(lp: &[[f64; ACTION_CHOICES]; ACTION_DIMS], action: &Action) -> f64 {
    action.iter().enumerate().map(|(k, &a)| lp[k][a]).sum()
}

pub fn entropy(lp: &[[f64; ACTION_CHOICES]; ACTION_DIMS]) -> f64 {
    lp.iter()
        .map(|block| -block.iter().map(|&l| l.exp() * l).sum::<f64>())
        .sum()
}

impl PolicyNet {
    /// Orthogonal init: gain √2 on the torso, 0.01 on the logits, 1 on the value.
    pub fn new(obs_width: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let g = std::f64::consts::SQRT_2;
        let torso = Mlp::orthogonal(
            &[obs_width, hidden, hidden],
            &[Activation::Tanh, Activation::Tanh],
            &[g, g],
            rng,
        )?;
        let pi = Mlp::orthogonal(&[hidden, ACTION_DIMS * ACTION_CHOICES], &[Activation::Identity], &[0.01], rng)?;
        let vf = Mlp::orthogonal(&[hidden, 1], &[Activation::Identity], &[1.0], rng)?;
        Ok(Self { torso, pi, vf })
    }

    pub fn obs_width(&self) -> usize {
        self.torso.n_inputs()
    }

    pub fn n_params(&self) -> usize {
        self.torso.params.len() + self.pi.params.len() + self.vf.params.len()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<PolicyTrace> {
        let torso = self.torso.forward_trace(obs)?;
        let h = torso.output();
        let pi = self.pi.forward_trace(h)?;
        let vf = self.vf.forward_trace(h)?;
        Ok(PolicyTrace { torso, pi, vf })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.forward(obs)?.value())
    }

    /// Samples each dimension independently; returns the action, its joint
    /// log-probability and the value estimate.
    pub fn sample_action(&self, obs: &[f64], rng: &mut Rng) -> Result<(Action, f64, f64)> {
        let tr = self.forward(obs)?;
        let lp = log_probs(tr.logits())?;
        let mut action = [0; ACTION_DIMS];
        for (k, a) in action.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            *a = ACTION_CHOICES - 1;
            for (j, l) in lp[k].iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    *a = j;
                    break;
                }
            }
        }
        Ok((action, joint_log_prob(&lp, &action), tr.value()))
    }

    /// Per-dimension argmax, ties to the lowest index.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<Action> {
        let tr = self.forward(obs)?;
        let lp = log_probs(tr.logits())?;
        let mut action = [0; ACTION_DIMS];
        for (k, a) in action.iter_mut().enumerate() {
            for j in 1..ACTION_CHOICES {
                if lp[k][j] > lp[k][*a] {
                    *a = j;
                }
            }
        }
        Ok(action)
    }

    /// Probability of every one of the 81 joint actions, base-3 ordered with
    /// the first dimension most significant.
    pub fn joint_distribution(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let lp = log_probs(self.forward(obs)?.logits())?;
        let n = ACTION_CHOICES.pow(ACTION_DIMS as u32);
        Ok((0..n)
            .map(|mut i| {
                let mut a = [0; ACTION_DIMS];
                for d in a.iter_mut().rev() {
                    *d = i % ACTION_CHOICES;
                    i /= ACTION_CHOICES;
                }
                joint_log_prob(&lp, &a).exp()
            })
            .collect())
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            torso: vec![0.0; self.torso.params.len()],
            pi: vec![0.0; self.pi.params.len()],
            vf: vec![0.0; self.vf.params.len()],
        }
    }

    fn backward(&self, tr: &PolicyTrace, d_logits: &[f64], d_value: f64, g: &mut Grads) {
        let mut dh = self.pi.backward(&tr.pi, d_logits, &mut g.pi);
        let dv = self.vf.backward(&tr.vf, &[d_value], &mut g.vf);
        for (a, b) in dh.iter_mut().zip(dv) {
            *a += b;
        }
        self.torso.backward(&tr.torso, &dh, &mut g.torso);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
struct Grads {
    torso: Vec<f64>,
    pi: Vec<f64>,
    vf: Vec<f64>,
}

impl Grads {
    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.torso.iter_mut().chain(self.pi.iter_mut()).chain(self.vf.iter_mut())
    }

    fn norm(&self) -> f64 {
        self.torso
            .iter()
            .chain(&self.pi)
            .chain(&self.vf)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Generalized advantage estimation, backwards over the sequence.
/// `values[t]` estimates step t; `bootstrap_value` estimates the state after
/// the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::InvalidArgument(format!(
            "gae inputs differ in length: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// One rollout's worth of transitions.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
    capacity: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Action, log_prob: f64, reward: f64, value: f64, done: bool) -> Result<()> {
        if self.is_full() {
            return Err(Error::InvalidArgument("rollout buffer is full".into()));
        }
        self.observations.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.advantages = None;
        self.returns = None;
        Ok(())
    }

    pub fn compute_gae(&mut self, bootstrap_value: f64, gamma: f64, lambda: f64) -> Result<()> {
        let (a, r) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap_value, gamma, lambda)?;
        self.advantages = Some(a);
        self.returns = Some(r);
        Ok(())
    }

    pub fn clear(&mut self) {
        let capacity = self.capacity;
        *self = Self::new(capacity);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// The learner: network plus optimizer state.
pub struct Ppo {
    pub cfg: PpoConfig,
    pub policy: PolicyNet,
    opt: [Adam; 3],
    rng: Rng,
}

impl Ppo {
    pub fn new(obs_width: usize, cfg: PpoConfig) -> Result<Self> {
        cfg.validate()?;
        let policy = PolicyNet::new(obs_width, cfg.hidden, &mut seeded(child_seed(cfg.seed, 0)))?;
        Ok(Self::with_policy(policy, cfg))
    }

    pub fn with_policy(policy: PolicyNet, cfg: PpoConfig) -> Self {
        let adam = |n| Adam::new(OptimizerKind::Adam, n, cfg.learning_rate, cfg.adam_eps);
        let opt = [
            adam(policy.torso.params.len()),
            adam(policy.pi.params.len()),
            adam(policy.vf.params.len()),
        ];
        let rng = seeded(child_seed(cfg.seed, 1));
        Self { cfg, policy, opt, rng }
    }

    /// Loss and gradients for one mini-batch. Advantages are normalized
    /// within the batch.
    fn minibatch_grads(&self, buf: &RolloutBuffer, idx: &[usize]) -> Result<(Grads, UpdateStats)> {
        let adv_all = buf.advantages.as_ref().ok_or(Error::InvalidArgument("advantages not computed".into()))?;
        let ret_all = buf.returns.as_ref().ok_or(Error::InvalidArgument("returns not computed".into()))?;
        let b = idx.len() as f64;
        let mut adv: Vec<f64> = idx.iter().map(|&i| adv_all[i]).collect();
        if idx.len() > 1 {
            let mean = adv.iter().sum::<f64>() / b;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        let eps = self.cfg.clip_range;
        let mut g = self.policy.zero_grads();
        let mut stats = UpdateStats::default();
        let mut d_logits = vec![0.0; ACTION_DIMS * ACTION_CHOICES];
        for (n, &i) in idx.iter().enumerate() {
            let tr = self.policy.forward(&buf.observations[i])?;
            let lp = log_probs(tr.logits())?;
            let action = &buf.actions[i];
            let new_lp = joint_log_prob(&lp, action);
            let ratio = (new_lp - buf.log_probs[i]).exp();
            let a = adv[n];
            let unclipped = ratio * a;
            let surrogate = clipped_surrogate(ratio, a, eps);
            stats.policy_loss -= surrogate / b;
            if (ratio - 1.0).abs() > eps {
                stats.clip_fraction += 1.0 / b;
            }
            let h = entropy(&lp);
            stats.entropy += h / b;
            let v = tr.value();
            let err = v - ret_all[i];
            stats.value_loss += err * err / b;

            // d(-surrogate)/d(log pi) on the unclipped branch, zero otherwise
            let d_lp = if unclipped <= surrogate { -a * ratio / b } else { 0.0 };
            for k in 0..ACTION_DIMS {
                let block_h = -lp[k].iter().map(|&l| l.exp() * l).sum::<f64>();
                for j in 0..ACTION_CHOICES {
                    let p = lp[k][j].exp();
                    let onehot = if action[k] == j { 1.0 } else { 0.0 };
                    // entropy bonus enters the loss as -coeff * H
                    let d_ent = self.cfg.entropy_coeff * p * (lp[k][j] + block_h) / b;
                    d_logits[k * ACTION_CHOICES + j] = d_lp * (onehot - p) + d_ent;
                }
            }
            let d_value = self.cfg.value_coeff * 2.0 * err / b;
            self.policy.backward(&tr, &d_logits, d_value, &mut g);
        }
        if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite()) {
            return Err(Error::NonFinite("ppo loss"));
        }
        Ok((g, stats))
    }

    /// Several epochs of shuffled mini-batch steps over a full buffer.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<UpdateStats> {
        if buf.advantages.is_none() {
            return Err(Error::InvalidArgument("compute advantages before updating".into()));
        }
        let mut order: Vec<usize> = (0..buf.len()).collect();
        let mut total = UpdateStats::default();
        let mut batches = 0.0;
        for _ in 0..self.cfg.update_epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(self.cfg.minibatch_size) {
                let (mut g, stats) = self.minibatch_grads(buf, idx)?;
                let norm = g.norm();
                if norm > self.cfg.max_grad_norm {
                    let scale = self.cfg.max_grad_norm / norm;
                    g.iter_mut().for_each(|x| *x *= scale);
                }
                self.opt[0].step(&mut self.policy.torso.params, &g.torso);
                self.opt[1].step(&mut self.policy.pi.params, &g.pi);
                self.opt[2].step(&mut self.policy.vf.params, &g.vf);
                total.policy_loss += stats.policy_loss;
                total.value_loss += stats.value_loss;
                total.entropy += stats.entropy;
                total.clip_fraction += stats.clip_fraction;
                total.grad_norm += norm;
                batches += 1.0;
            }
        }
        if batches > 0.0 {
            total.policy_loss /= batches;
            total.value_loss /= batches;
            total.entropy /= batches;
            total.clip_fraction /= batches;
            total.grad_norm /= batches;
        }
        Ok(total)
    }
}

/// Mean episode reward over the most recent completed episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_episode_reward: f64,
}

pub fn write_reward_curve<W: Write>(curve: &[CurvePoint], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["step", "mean_episode_reward"])?;
    for p in curve {
        w.write_record([p.step.to_string(), p.mean_episode_reward.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<reward curve>", e))?;
    Ok(())
}

/// Window of finished episodes averaged into the curve.
pub const CURVE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub policy: PolicyNet,
    pub config: PpoConfig,
    pub seed: u64,
}

impl PolicyCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNet,
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateStats>,
}

/// Alternates rollouts and updates until `total_steps` environment steps.
/// Episode `k` is reset with `child_seed(cfg.seed, 1000 + k)`.
pub fn train<E: Environment>(env: &mut E, cfg: &PpoConfig) -> Result<TrainOutcome> {
    let mut learner = Ppo::new(env.observation_width(), cfg.clone())?;
    let mut sample_rng = seeded(child_seed(cfg.seed, 2));
    let mut buf = RolloutBuffer::new(cfg.rollout_len);
    let mut curve = Vec::new();
    let mut updates = Vec::new();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(CURVE_WINDOW);
    let mut episode = 0u64;
    let mut obs = env.reset(child_seed(cfg.seed, 1000))?;
    let mut ep_reward = 0.0;
    let mut steps = 0u64;

    while steps < cfg.total_steps {
        buf.clear();
        let mut last_done = false;
        while !buf.is_full() && steps < cfg.total_steps {
            let (action, lp, value) = learner.policy.sample_action(&obs, &mut sample_rng)?;
            let s = env.step(action)?;
            ep_reward += s.reward;
            steps += 1;
            buf.push(std::mem::take(&mut obs), action, lp, s.reward, value, s.done)?;
            last_done = s.done;
            if s.done {
                if recent.len() == CURVE_WINDOW {
                    recent.pop_front();
                }
                recent.push_back(ep_reward);
                ep_reward = 0.0;
                episode += 1;
                obs = env.reset(child_seed(cfg.seed, 1000 + episode))?;
            } else {
                obs = s.observation;
            }
        }
        let bootstrap = if last_done { 0.0 } else { learner.policy.value(&obs)? };
        buf.compute_gae(bootstrap, cfg.gamma, cfg.gae_lambda)?;
        updates.push(learner.update(&buf)?);
        if !recent.is_empty() {
            curve.push(CurvePoint {
                step: steps,
                mean_episode_reward: recent.iter().sum::<f64>() / recent.len() as f64,
            });
        }
    }
    Ok(TrainOutcome {
        policy: learner.policy,
        curve,
        updates,
    })
}

/// Greedy rollout of one episode; returns its total reward.
pub fn run_greedy_episode<E: Environment>(policy: &PolicyNet, env: &mut E, seed: u64) -> Result<f64> {
    let mut obs = env.reset(seed)?;
    let mut total = 0.0;
    loop {
        let s = env.step(policy.greedy_action(&obs)?)?;
        total += s.reward;
        if s.done {
            return Ok(total);
        }
        obs = s.observation;
    }
}

/// Sample mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("need at least two values for a sample deviation".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Greedy episodes with the given seeds; (mean, sd) of episode reward.
pub fn evaluate<E: Environment>(policy: &PolicyNet, env: &mut E, seeds: &[u64]) -> Result<(f64, f64)> {
    let rewards = seeds
        .iter()
        .map(|&s| run_greedy_episode(policy, env, s))
        .collect::<Result<Vec<_>>>()?;
    mean_sd(&rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Step;
    use proptest::prelude::*;

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.0], &[0.5], &[true], 7.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![0.5]);
        assert_eq!(r, vec![1.0]);
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.5, 0.5], &[false, true], 0.0, 0.99, 0.95).unwrap();
        assert!((a[0] - 1.46525).abs() < 1e-12, "{}", a[0]);
        assert!((a[1] - 0.5).abs() < 1e-12);
        assert!(compute_gae(&[1.0], &[0.5, 0.1], &[true], 0.0, 0.99, 0.95).is_err());
    }

    fn discounted_return(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, t: usize) -> f64 {
        let mut g = 0.0;
        let mut disc = 1.0;
        for k in t..rewards.len() {
            g += disc * rewards[k];
            if dones[k] {
                return g;
            }
            disc *= gamma;
        }
        g + disc * bootstrap
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gae_lambda_identities(
            rewards in prop::collection::vec(-5.0f64..5.0, 10),
            values in prop::collection::vec(-5.0f64..5.0, 10),
            dones in prop::collection::vec(prop::bool::weighted(0.2), 10),
            bootstrap in -5.0f64..5.0,
            gamma in 0.5f64..1.0,
        ) {
            let (a0, _) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, 0.0).unwrap();
            let (a1, _) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, 1.0).unwrap();
            for t in 0..10 {
                let next = if t + 1 < 10 { values[t + 1] } else { bootstrap };
                let live = if dones[t] { 0.0 } else { 1.0 };
                let delta = rewards[t] + gamma * next * live - values[t];
                prop_assert!((a0[t] - delta).abs() < 1e-12);
                let mc = discounted_return(&rewards, &dones, bootstrap, gamma, t) - values[t];
                prop_assert!((a1[t] - mc).abs() < 1e-10);
            }
        }

        #[test]
        fn gae_matches_lambda_weighted_brute_force(
            rewards in prop::collection::vec(-5.0f64..5.0, 10),
            values in prop::collection::vec(-5.0f64..5.0, 10),
            bootstrap in -5.0f64..5.0,
            gamma in 0.5f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            // Without dones, A_t = sum_k (γλ)^k δ_{t+k}.
            let dones = vec![false; 10];
            let (a, r) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
            let delta: Vec<f64> = (0..10).map(|t| {
                let next = if t + 1 < 10 { values[t + 1] } else { bootstrap };
                rewards[t] + gamma * next - values[t]
            }).collect();
            for t in 0..10 {
                let brute: f64 = (t..10).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
                prop_assert!((a[t] - brute).abs() < 1e-10);
                prop_assert!((r[t] - a[t] - values[t]).abs() < 1e-12);
            }
        }

        #[test]
        fn surrogate_is_pessimistic(ratio in 0.01f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.9) {
            prop_assert!(clipped_surrogate(ratio, adv, eps) <= ratio * adv + 1e-12);
        }

        #[test]
        fn joint_distribution_sums_to_one(seed in 0u64..500, x in prop::collection::vec(-3.0f64..3.0, 15)) {
            let mut net = PolicyNet::new(15, 16, &mut seeded(seed)).unwrap();
            net.pi.params.iter_mut().enumerate().for_each(|(i, p)| *p += (i as f64 * 0.37).sin());
            let d = net.joint_distribution(&x).unwrap();
            prop_assert_eq!(d.len(), 81);
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_examples() {
        for a in [-3.0, 0.0, 2.5] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits() {
        let lp = log_probs(&[0.0; 12]).unwrap();
        for block in &lp {
            for &l in block {
                assert!((l.exp() - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!((joint_log_prob(&lp, &[0, 1, 2, 0]) - 4.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((joint_log_prob(&lp, &[0, 1, 2, 0]) + 4.394449154672439).abs() < 1e-12);
        assert!(log_probs(&[f64::NAN; 12]).is_err());
    }

    #[test]
    fn greedy_is_argmax() {
        let mut net = PolicyNet::new(3, 8, &mut seeded(1)).unwrap();
        net.pi.params.iter_mut().for_each(|p| *p = 0.0);
        let (_, b) = net.pi.layer_range(0);
        let bias = [0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 1.0, 1.0];
        net.pi.params[b].copy_from_slice(&bias);
        assert_eq!(net.greedy_action(&[0.1, 0.2, 0.3]).unwrap(), [1, 0, 2, 1]);
    }

    #[test]
    fn clip_norm_ten_to_half() {
        let mut g = vec![6.0, 8.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 10.0);
        let after = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((after - 0.5).abs() < 1e-15);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-15);
        let mut small = vec![0.1, 0.2];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    fn filled_buffer(net: &PolicyNet, n: usize, zero_adv: bool) -> RolloutBuffer {
        let mut rng = seeded(3);
        let mut buf = RolloutBuffer::new(n);
        for i in 0..n {
            let obs: Vec<f64> = (0..5).map(|k| ((i * 7 + k) as f64 * 0.13).sin()).collect();
            let (a, lp, v) = net.sample_action(&obs, &mut rng).unwrap();
            buf.push(obs, a, lp, (i % 3) as f64, v, i % 10 == 9).unwrap();
        }
        buf.compute_gae(0.0, 0.99, 0.95).unwrap();
        if zero_adv {
            buf.advantages = Some(vec![0.0; n]);
        }
        buf
    }

    #[test]
    fn zero_advantages_leave_policy_gradient_zero() {
        let net = PolicyNet::new(5, 8, &mut seeded(2)).unwrap();
        let buf = filled_buffer(&net, 32, true);
        let ppo = Ppo::with_policy(net, PpoConfig::default());
        let idx: Vec<usize> = (0..32).collect();
        let (g, stats) = ppo.minibatch_grads(&buf, &idx).unwrap();
        assert_eq!(stats.policy_loss, 0.0);
        assert!(g.pi.iter().all(|&x| x == 0.0));
        assert!(g.vf.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn minibatch_gradient_matches_finite_differences() {
        let net = PolicyNet::new(5, 6, &mut seeded(4)).unwrap();
        let mut buf = filled_buffer(&net, 16, false);
        // shift old log-probs so some ratios leave the clip band
        for (i, lp) in buf.log_probs.iter_mut().enumerate() {
            *lp += 0.3 * ((i as f64) * 1.7).sin();
        }
        let cfg = PpoConfig {
            entropy_coeff: 0.01,
            ..PpoConfig::default()
        };
        let idx: Vec<usize> = (0..16).collect();
        let ppo = Ppo::with_policy(net.clone(), cfg.clone());
        let (g, _) = ppo.minibatch_grads(&buf, &idx).unwrap();
        let loss = |p: &PolicyNet| {
            let l = Ppo::with_policy(p.clone(), cfg.clone());
            let (_, s) = l.minibatch_grads(&buf, &idx).unwrap();
            s.policy_loss + cfg.value_coeff * s.value_loss - cfg.entropy_coeff * s.entropy
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for which in 0..3 {
            let n = match which {
                0 => net.torso.params.len(),
                1 => net.pi.params.len(),
                _ => net.vf.params.len(),
            };
            for i in (0..n).step_by(7) {
                let mut up = net.clone();
                let mut dn = net.clone();
                let (pu, pd, an) = match which {
                    0 => (&mut up.torso.params, &mut dn.torso.params, g.torso[i]),
                    1 => (&mut up.pi.params, &mut dn.pi.params, g.pi[i]),
                    _ => (&mut up.vf.params, &mut dn.vf.params, g.vf[i]),
                };
                pu[i] += eps;
                pd[i] -= eps;
                let num = (loss(&up) - loss(&dn)) / (2.0 * eps);
                let scale = num.abs().max(an.abs()).max(1e-6);
                worst = worst.max((num - an).abs() / scale);
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn advantage_normalization_centres_the_batch() {
        let net = PolicyNet::new(5, 8, &mut seeded(2)).unwrap();
        let buf = filled_buffer(&net, 64, false);
        let adv = buf.advantages.as_ref().unwrap();
        let mean = adv.iter().sum::<f64>() / 64.0;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 63.0).sqrt();
        let norm: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();
        assert!(norm.iter().sum::<f64>().abs() / 64.0 < 1e-9);
    }

    /// Pays +10 when the action equals a fixed target.
    struct ToyEnv {
        target: Action,
        t: usize,
        len: usize,
    }

    impl Environment for ToyEnv {
        fn observation_width(&self) -> usize {
            4
        }
        fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
            self.t = 0;
            Ok(vec![1.0, 0.0, 0.5, 0.0])
        }
        fn step(&mut self, action: Action) -> Result<Step> {
            self.t += 1;
            Ok(Step {
                observation: vec![1.0, 0.0, 0.5, self.t as f64 / self.len as f64],
                reward: if action == self.target { 10.0 } else { 0.0 },
                done: self.t >= self.len,
                info: Default::default(),
            })
        }
    }

    #[test]
    fn zero_steps_leave_policy_at_init() {
        let mut env = ToyEnv {
            target: [2, 0, 1, 2],
            t: 0,
            len: 50,
        };
        let cfg = PpoConfig {
            total_steps: 0,
            seed: 5,
            ..PpoConfig::default()
        };
        let out = train(&mut env, &cfg).unwrap();
        assert_eq!(out.policy, Ppo::new(4, cfg).unwrap().policy);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn toy_env_converges_to_paying_action() {
        let target = [2, 0, 1, 2];
        let mut env = ToyEnv { target, t: 0, len: 100 };
        let cfg = PpoConfig {
            total_steps: 50_000,
            seed: 11,
            ..PpoConfig::default()
        };
        let out = train(&mut env, &cfg).unwrap();
        let obs = env.reset(0).unwrap();
        assert_eq!(out.policy.greedy_action(&obs).unwrap(), target);
        let last = out.curve.last().unwrap().mean_episode_reward;
        assert!(last > 500.0, "{last}");

        let again = train(&mut env, &cfg).unwrap();
        assert_eq!(again.curve, out.curve);
        let (mean, sd) = evaluate(&out.policy, &mut env, &[1, 2, 3]).unwrap();
        assert_eq!((mean, sd), (1000.0, 0.0));
    }

    #[test]
    fn sample_sd_examples() {
        let (m, s) = mean_sd(&[10.0, 20.0]).unwrap();
        assert_eq!(m, 15.0);
        assert!((s - 7.0710678118654755).abs() < 1e-12);
        assert!(mean_sd(&[1.0]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = PolicyNet::new(15, 64, &mut seeded(8)).unwrap();
        let ck = PolicyCheckpoint {
            policy: net,
            config: PpoConfig::default(),
            seed: 8,
        };
        assert_eq!(PolicyCheckpoint::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }
}
