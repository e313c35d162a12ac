//! Episode rollouts, dual-discount returns, clipped-surrogate policy updates,
//! value regression, KL-targeted adaptation, and corner-case evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ChaserState, ControlAction, STATE_DIM};
use crate::env::DockingEnv;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    gaussian_kl, gaussian_logprob, sample_action, scale_action, AdamState, GaussianPolicy, Matrix, Mlp,
    RunningNormalizer, POLICY_LAYERS, VALUE_LAYERS,
};
use crate::reward::RewardTerms;
use crate::scenario::{sample_initial_condition, InitialConditionRange};

pub const ACTION_DIM: usize = 6;

/// Stream offsets keep the independent RNG uses of one master seed apart.
const STREAM_INIT: u64 = 1 << 62;
const STREAM_SHUFFLE: u64 = 1 << 61;
const STREAM_EVAL: u64 = 1 << 60;

/// RNG for one purpose/index under a master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Seeded RNG for training episode `index`.
pub fn episode_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(master_seed, index)
}

/// Seeded RNG for evaluation trial `index`.
pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(master_seed, STREAM_EVAL + index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyperparams {
    pub epsilon: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub kl_target: f64,
    pub batch_episodes: usize,
    pub epochs_per_update: usize,
    pub minibatch: usize,
    pub normalize_advantages: bool,
    /// Remaining policy epochs are skipped once KL exceeds this multiple of the target.
    pub kl_stop_factor: f64,
    /// Initial log-variance of every raw action component.
    pub init_log_var: f64,
    /// Multiplier on the policy learning rate for the log-variances.
    pub log_var_lr_scale: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            kl_target: 0.001,
            batch_episodes: 128,
            epochs_per_update: 10,
            minibatch: 4096,
            normalize_advantages: true,
            kl_stop_factor: 4.0,
            init_log_var: 0.0,
            log_var_lr_scale: 1.0,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.kl_target > 0.0 && self.kl_stop_factor > 0.0) {
            return bad("kl_target and kl_stop_factor must be positive");
        }
        if self.batch_episodes == 0 || self.epochs_per_update == 0 || self.minibatch == 0 {
            return bad("batch_episodes, epochs_per_update and minibatch must be at least 1");
        }
        if !self.init_log_var.is_finite() {
            return bad("init_log_var must be finite");
        }
        if !(self.log_var_lr_scale > 0.0 && self.log_var_lr_scale.is_finite()) {
            return bad("log_var_lr_scale must be positive");
        }
        Ok(())
    }
}

/// Widths of both networks, input layer excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub policy_layers: Vec<usize>,
    pub value_layers: Vec<usize>,
    /// Feed quaternion components to the networks without running normalization.
    pub raw_quaternion: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { policy_layers: POLICY_LAYERS.to_vec(), value_layers: VALUE_LAYERS.to_vec(), raw_quaternion: false }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policy_layers.last() != Some(&ACTION_DIM) {
            return Err(Error::Config(format!("network: policy output width must be {ACTION_DIM}")));
        }
        if self.value_layers.last() != Some(&1) {
            return Err(Error::Config("network: value output width must be 1".into()));
        }
        if self.policy_layers.iter().chain(&self.value_layers).any(|&w| w == 0) {
            return Err(Error::Config("network: layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Policy, value function, and the statistics used to scale their inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub obs_norm: RunningNormalizer,
    /// Running moments of observed returns; `V(s) = mean + std * value_net(s)`.
    pub ret_norm: RunningNormalizer,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(net: &NetworkConfig, init_log_var: f64, rng: &mut R) -> Self {
        let widths = |hidden: &[usize]| {
            let mut w = vec![STATE_DIM];
            w.extend_from_slice(hidden);
            w
        };
        let policy = GaussianPolicy { net: Mlp::init(&widths(&net.policy_layers), rng), log_var: vec![init_log_var; ACTION_DIM] };
        let value = Mlp::init(&widths(&net.value_layers), rng);
        let mut obs_norm = RunningNormalizer::new(STATE_DIM);
        if net.raw_quaternion {
            for p in &mut obs_norm.passthrough[6..10] {
                *p = true;
            }
        }
        Self { policy, value, obs_norm, ret_norm: RunningNormalizer::new(1) }
    }

    pub fn observe(&self, state: &ChaserState) -> [f64; STATE_DIM] {
        let n = self.obs_norm.normalize(&state.to_array());
        let mut o = [0.0; STATE_DIM];
        o.copy_from_slice(&n);
        o
    }

    fn value_scale(&self) -> (f64, f64) {
        (self.ret_norm.mean[0], self.ret_norm.std()[0])
    }

    pub fn value_of(&self, obs: &[f64]) -> Result<f64> {
        let (m, s) = self.value_scale();
        Ok(m + s * self.value.forward(obs)?[0])
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.net.forward(obs)
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Docked,
    TimeLimit,
}

/// One simulated episode. Index `t` of every per-step array refers to the
/// state at the start of step `t` and the action applied during it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub dt: f64,
    pub states: Vec<ChaserState>,
    /// Network inputs actually used to act.
    pub obs: Vec<[f64; STATE_DIM]>,
    pub raw_actions: Vec<[f64; ACTION_DIM]>,
    pub actions: Vec<ControlAction>,
    pub logp: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub values: Vec<f64>,
    pub terms: Vec<RewardTerms>,
    pub final_state: ChaserState,
    pub termination: Termination,
    pub collided: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.r1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r1.is_empty()
    }

    pub fn docked(&self) -> bool {
        self.termination == Termination::Docked
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    /// Undiscounted `sum r1 + sum r2`.
    pub fn score(&self) -> f64 {
        self.r1.iter().sum::<f64>() + self.r2.iter().sum::<f64>()
    }

    pub fn term_totals(&self) -> RewardTerms {
        let mut t = RewardTerms::default();
        for x in &self.terms {
            t.add(x);
        }
        t
    }
}

/// Raw action choice: a Gaussian draw, or the mean when `rng` is `None`.
pub fn choose_action<R: Rng + ?Sized>(agent: &Agent, obs: &[f64], rng: Option<&mut R>) -> Result<([f64; ACTION_DIM], f64)> {
    let mean = agent.mean_action(obs)?;
    let raw = match rng {
        Some(rng) => sample_action(&mean, &agent.policy.log_var, rng),
        None => mean.clone(),
    };
    let logp = gaussian_logprob(&mean, &agent.policy.log_var, &raw);
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(&raw);
    Ok((a, logp))
}

/// Simulates from `initial` until docking or `max_steps` samples. With `rng`
/// present the policy acts stochastically.
pub fn rollout_from<R: Rng + ?Sized>(
    agent: &Agent,
    env: &DockingEnv,
    initial: ChaserState,
    max_steps: usize,
    mut rng: Option<&mut R>,
) -> Result<EpisodeRecord> {
    let limits = env.scenario.limits();
    let mut ep = EpisodeRecord {
        dt: env.scenario.dt_s,
        states: Vec::with_capacity(max_steps),
        obs: Vec::with_capacity(max_steps),
        raw_actions: Vec::with_capacity(max_steps),
        actions: Vec::with_capacity(max_steps),
        logp: Vec::with_capacity(max_steps),
        r1: Vec::with_capacity(max_steps),
        r2: Vec::with_capacity(max_steps),
        values: Vec::with_capacity(max_steps),
        terms: Vec::with_capacity(max_steps),
        final_state: initial,
        termination: Termination::TimeLimit,
        collided: false,
    };
    let mut state = initial;
    for _ in 0..max_steps {
        let obs = agent.observe(&state);
        let (raw, logp) = choose_action(agent, &obs, rng.as_deref_mut())?;
        let action = scale_action(&raw, &limits);
        let tr = env.transition(&state, &action)?;
        if !tr.next.is_finite() {
            return Err(Error::Numerical("non-finite state during rollout".into()));
        }
        ep.values.push(agent.value_of(&obs)?);
        ep.states.push(state);
        ep.obs.push(obs);
        ep.raw_actions.push(raw);
        ep.actions.push(action);
        ep.logp.push(logp);
        ep.r1.push(tr.r1);
        ep.r2.push(tr.r2);
        ep.terms.push(tr.terms);
        ep.collided |= tr.collided;
        state = tr.next;
        if tr.docked {
            ep.termination = Termination::Docked;
            break;
        }
    }
    ep.final_state = state;
    Ok(ep)
}

/// Samples an initial condition from `range` and runs one episode with `rng`.
pub fn rollout<R: Rng + ?Sized>(
    agent: &Agent,
    env: &DockingEnv,
    range: &InitialConditionRange,
    max_steps: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let ic = sample_initial_condition(range, rng);
    if stochastic {
        rollout_from(agent, env, ic, max_steps, Some(rng))
    } else {
        rollout_from::<R>(agent, env, ic, max_steps, None)
    }
}

/// Training episodes `first..first + count`, each with its own seeded stream.
/// The result does not depend on the number of worker threads.
pub fn collect_batch(
    agent: &Agent,
    env: &DockingEnv,
    master_seed: u64,
    first: u64,
    count: usize,
) -> Result<Vec<EpisodeRecord>> {
    let max_steps = env.scenario.max_steps(false);
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = episode_rng(master_seed, first + k);
            rollout(agent, env, &env.scenario.ic_train, max_steps, true, &mut rng)
        })
        .collect()
}

/// Per-step dual-discount returns and `return - value` advantages.
pub fn returns_and_advantages(ep: &EpisodeRecord, gamma1: f64, gamma2: f64) -> (Vec<f64>, Vec<f64>) {
    let n = ep.len();
    let mut ret = vec![0.0; n];
    let (mut g1, mut g2) = (0.0, 0.0);
    for t in (0..n).rev() {
        g1 = ep.r1[t] + gamma1 * g1;
        g2 = ep.r2[t] + gamma2 * g2;
        ret[t] = g1 + g2;
    }
    let adv = ret.iter().zip(&ep.values).map(|(g, v)| g - v).collect();
    (ret, adv)
}

/// Clipped surrogate `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn ppo_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    (ratio * advantage).min(clipped)
}

/// Derivative of [`ppo_surrogate`] with respect to the log-probability.
fn surrogate_dlogp(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if ratio * advantage <= clipped {
        ratio * advantage
    } else {
        0.0
    }
}

/// KL-targeted adjustment of the policy learning rate and clip parameter.
pub fn adapt_kl(observed_kl: f64, hyper: &PpoHyperparams) -> PpoHyperparams {
    let mut h = hyper.clone();
    if observed_kl > 2.0 * hyper.kl_target {
        h.lr_policy /= 1.5;
        h.epsilon = (h.epsilon / 1.2).max(0.05);
    } else if observed_kl < 0.5 * hyper.kl_target {
        h.lr_policy *= 1.5;
        h.epsilon = (h.epsilon * 1.2).min(0.4);
    }
    h
}

/// Flattened training data for one update.
#[derive(Clone, Debug)]
pub struct Transitions {
    pub obs: Matrix,
    pub actions: Matrix,
    pub logp_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Transitions {
    pub fn from_episodes(eps: &[EpisodeRecord], gamma1: f64, gamma2: f64, normalize: bool) -> Self {
        let n: usize = eps.iter().map(EpisodeRecord::len).sum();
        let mut obs = Vec::with_capacity(n * STATE_DIM);
        let mut actions = Vec::with_capacity(n * ACTION_DIM);
        let mut logp_old = Vec::with_capacity(n);
        let mut advantages = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for ep in eps {
            let (ret, adv) = returns_and_advantages(ep, gamma1, gamma2);
            for t in 0..ep.len() {
                obs.extend_from_slice(&ep.obs[t]);
                actions.extend_from_slice(&ep.raw_actions[t]);
            }
            logp_old.extend_from_slice(&ep.logp);
            advantages.extend(adv);
            returns.extend(ret);
        }
        if normalize && n > 1 {
            let mean = advantages.iter().sum::<f64>() / n as f64;
            let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt().max(1e-8);
            for a in &mut advantages {
                *a = (*a - mean) / std;
            }
        }
        Self {
            obs: Matrix { rows: n, cols: STATE_DIM, data: obs },
            actions: Matrix { rows: n, cols: ACTION_DIM, data: actions },
            logp_old,
            advantages,
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.logp_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_old.is_empty()
    }

    fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), m.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(m.row(i));
        }
        out
    }
}

/// Mean clipped surrogate over `idx` and its gradient with respect to the
/// policy parameters (network then log-variance), for gradient ascent.
pub fn surrogate_and_grad(
    policy: &GaussianPolicy,
    data: &Transitions,
    idx: &[usize],
    epsilon: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let obs = Transitions::gather(&data.obs, idx);
    let cache = policy.net.forward_batch(&obs)?;
    let mean = cache.output();
    let n = idx.len() as f64;
    let inv_var: Vec<f64> = policy.log_var.iter().map(|lv| (-lv).exp()).collect();
    let mut grad_mean = Matrix::zeros(idx.len(), ACTION_DIM);
    let mut grad_lv = vec![0.0; ACTION_DIM];
    let mut objective = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let a = data.actions.row(i);
        let mu = mean.row(r);
        let logp = gaussian_logprob(mu, &policy.log_var, a);
        let ratio = (logp - data.logp_old[i]).exp();
        let adv = data.advantages[i];
        objective += ppo_surrogate(ratio, adv, epsilon) / n;
        let coef = surrogate_dlogp(ratio, adv, epsilon) / n;
        if coef != 0.0 {
            let g = grad_mean.row_mut(r);
            for d in 0..ACTION_DIM {
                let diff = a[d] - mu[d];
                g[d] = coef * diff * inv_var[d];
                grad_lv[d] += coef * 0.5 * (diff * diff * inv_var[d] - 1.0);
            }
        }
    }
    let grads = policy.net.backward(&cache, &grad_mean)?;
    Ok((objective, grads.params().copied().collect(), grad_lv))
}

/// Mean squared error of the scaled value net against `targets` and its gradient.
pub fn value_loss_and_grad(value: &Mlp, obs: &Matrix, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cache = value.forward_batch(obs)?;
    let out = cache.output();
    let n = targets.len() as f64;
    let mut g = Matrix::zeros(targets.len(), 1);
    let mut loss = 0.0;
    for (r, t) in targets.iter().enumerate() {
        let e = out.data[r] - t;
        loss += e * e / n;
        g.data[r] = 2.0 * e / n;
    }
    let grads = value.backward(&cache, &g)?;
    Ok((loss, grads.params().copied().collect()))
}

pub fn value_loss(value: &Mlp, obs: &Matrix, targets: &[f64]) -> Result<f64> {
    let out = value.forward_batch(obs)?;
    let n = targets.len() as f64;
    Ok(out.output().data.iter().zip(targets).map(|(o, t)| (o - t) * (o - t) / n).sum())
}

/// Mean closed-form KL between the policy that generated `data` (means `old_mean`,
/// log-variances `old_lv`) and `policy`.
pub fn mean_kl(policy: &GaussianPolicy, obs: &Matrix, old_mean: &Matrix, old_lv: &[f64]) -> Result<f64> {
    if obs.rows == 0 {
        return Ok(0.0);
    }
    let new = policy.net.forward_batch(obs)?;
    let new_mean = new.output();
    let mut kl = 0.0;
    for r in 0..obs.rows {
        kl += gaussian_kl(old_mean.row(r), old_lv, new_mean.row(r), &policy.log_var);
    }
    Ok(kl / obs.rows as f64)
}

/// Optimizer state carried between updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub policy: AdamState,
    pub value: AdamState,
}

impl Optimizers {
    pub fn for_agent(agent: &Agent) -> Self {
        Self { policy: AdamState::new(agent.policy.num_params()), value: AdamState::new(agent.value.num_params()) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub transitions: usize,
    pub kl: f64,
    pub policy_epochs: usize,
    /// Largest `|ratio - 1|` on the first minibatch pass.
    pub first_pass_ratio_dev: f64,
    pub surrogate: f64,
    pub value_loss_before: f64,
    pub value_loss_after: f64,
}

fn minibatches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let count = n.div_ceil(size).max(1);
    // Equal-sized chunks avoid a tiny trailing minibatch.
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for c in 0..count {
        let len = base + usize::from(c < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// One PPO update on a batch of episodes. On a non-finite result the agent and
/// optimizers are left exactly as they were and an error is returned.
pub fn update(
    agent: &mut Agent,
    opt: &mut Optimizers,
    episodes: &[EpisodeRecord],
    hyper: &PpoHyperparams,
    gamma1: f64,
    gamma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics> {
    let mut data = Transitions::from_episodes(episodes, gamma1, gamma2, hyper.normalize_advantages);
    if data.is_empty() {
        return Err(invalid("update needs at least one transition"));
    }
    let snapshot = (agent.clone(), opt.clone());
    let result = update_inner(agent, opt, &mut data, hyper, rng);
    let ok = matches!(&result, Ok(d) if d.kl.is_finite() && d.value_loss_after.is_finite()) && agent.is_finite();
    if !ok {
        *agent = snapshot.0;
        *opt = snapshot.1;
        return match result {
            Err(e) => Err(e),
            Ok(_) => Err(Error::Numerical("non-finite loss or parameters; update discarded".into())),
        };
    }
    result
}

fn update_inner(
    agent: &mut Agent,
    opt: &mut Optimizers,
    data: &mut Transitions,
    hyper: &PpoHyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics> {
    let n = data.len();
    let mut diag = UpdateDiagnostics { transitions: n, ..Default::default() };
    let old_mean = agent.policy.net.forward_batch(&data.obs)?.output().clone();
    let old_lv = agent.policy.log_var.clone();
    // Reference log-probabilities come from the same batched arithmetic as the
    // update; they differ from the acting values only by rounding.
    for (i, lp) in data.logp_old.iter_mut().enumerate() {
        *lp = gaussian_logprob(old_mean.row(i), &old_lv, data.actions.row(i));
    }
    let data = &*data;

    for epoch in 0..hyper.epochs_per_update {
        let mut surrogate = 0.0;
        for (b, idx) in minibatches(n, hyper.minibatch, rng).iter().enumerate() {
            if epoch == 0 && b == 0 {
                let obs = Transitions::gather(&data.obs, idx);
                let mean = agent.policy.net.forward_batch(&obs)?;
                for (r, &i) in idx.iter().enumerate() {
                    let lp = gaussian_logprob(mean.output().row(r), &agent.policy.log_var, data.actions.row(i));
                    let dev = ((lp - data.logp_old[i]).exp() - 1.0).abs();
                    diag.first_pass_ratio_dev = diag.first_pass_ratio_dev.max(dev);
                }
            }
            let (obj, g_net, g_lv) = surrogate_and_grad(&agent.policy, data, idx, hyper.epsilon)?;
            surrogate += obj * idx.len() as f64 / n as f64;
            // Ascent on the surrogate is descent on its negation.
            let neg: Vec<f64> = g_net.iter().chain(&g_lv).map(|g| -g).collect();
            let lv_start = g_net.len();
            let lv_lr = hyper.lr_policy * hyper.log_var_lr_scale;
            opt.policy.step_with(agent.policy.params_mut(), neg.iter(), |k| if k < lv_start { hyper.lr_policy } else { lv_lr });
        }
        diag.surrogate = surrogate;
        diag.policy_epochs = epoch + 1;
        diag.kl = mean_kl(&agent.policy, &data.obs, &old_mean, &old_lv)?;
        if !diag.kl.is_finite() {
            return Err(Error::Numerical("non-finite KL divergence".into()));
        }
        if diag.kl > hyper.kl_stop_factor * hyper.kl_target {
            break;
        }
    }

    agent.ret_norm.update(&data.returns.iter().map(|g| [*g]).collect::<Vec<_>>());
    let (m, s) = agent.value_scale();
    let targets: Vec<f64> = data.returns.iter().map(|g| (g - m) / s).collect();
    diag.value_loss_before = value_loss(&agent.value, &data.obs, &targets)?;
    for _ in 0..hyper.epochs_per_update {
        for idx in minibatches(n, hyper.minibatch, rng) {
            let obs = Transitions::gather(&data.obs, &idx);
            let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let (_, g) = value_loss_and_grad(&agent.value, &obs, &t)?;
            opt.value.step(agent.value.params_mut(), g.iter(), hyper.lr_value);
        }
    }
    diag.value_loss_after = value_loss(&agent.value, &data.obs, &targets)?;
    Ok(diag)
}

/// Deterministic docking count over the 128 corner cases of `range`.
pub fn corner_case_eval(agent: &Agent, env: &DockingEnv, range: &InitialConditionRange) -> Result<usize> {
    let max_steps = env.scenario.max_steps(true);
    let docked: Vec<bool> = range
        .corner_cases()
        .into_par_iter()
        .map(|ic| rollout_from::<ChaCha8Rng>(agent, env, ic, max_steps, None).map(|ep| ep.docked()))
        .collect::<Result<_>>()?;
    Ok(docked.iter().filter(|d| **d).count())
}

/// Best-snapshot bookkeeping: a new snapshot replaces the held one when its
/// corner-case count is at least as large.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub agent: Agent,
    pub corner_docks: usize,
    pub update: usize,
}

pub fn retain_best(best: &mut Option<BestSnapshot>, candidate: &Agent, corner_docks: usize, update: usize) -> bool {
    let replace = best.as_ref().is_none_or(|b| corner_docks >= b.corner_docks);
    if replace {
        *best = Some(BestSnapshot { agent: candidate.clone(), corner_docks, update });
    }
    replace
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub update: usize,
    pub episodes: u64,
    pub mean_score: f64,
    pub mean_lqr: f64,
    pub mean_attitude: f64,
    pub mean_control: f64,
    pub mean_collision: f64,
    pub mean_length_s: f64,
    pub train_dock_rate: f64,
    pub kl: f64,
    pub policy_epochs: usize,
    pub epsilon: f64,
    pub lr_policy: f64,
    pub max_variance: f64,
    pub value_loss: f64,
    /// `-1` when no corner-case evaluation ran after this update.
    pub corner_docks: i64,
}

pub fn batch_summary(eps: &[EpisodeRecord]) -> (f64, RewardTerms, f64, f64) {
    let n = eps.len().max(1) as f64;
    let mut terms = RewardTerms::default();
    let mut score = 0.0;
    let mut len = 0.0;
    let mut docks = 0.0;
    for ep in eps {
        score += ep.score();
        terms.add(&ep.term_totals());
        len += ep.duration();
        docks += f64::from(u8::from(ep.docked()));
    }
    let scale = |t: f64| t / n;
    (
        score / n,
        RewardTerms {
            lqr: scale(terms.lqr),
            attitude: scale(terms.attitude),
            control: scale(terms.control),
            collision: scale(terms.collision),
        },
        len / n,
        docks / n,
    )
}

/// Complete training state; advancing it is deterministic given the master seed.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub env: DockingEnv,
    pub agent: Agent,
    pub optimizers: Optimizers,
    pub hyper: PpoHyperparams,
    pub master_seed: u64,
    pub updates_done: usize,
    pub episodes_done: u64,
    pub best: Option<BestSnapshot>,
    /// Corner-case evaluation runs after every `eval_interval` updates (0 disables).
    pub eval_interval: usize,
}

impl Trainer {
    pub fn new(env: DockingEnv, net: &NetworkConfig, hyper: PpoHyperparams, master_seed: u64, eval_interval: usize) -> Result<Self> {
        hyper.validate()?;
        net.validate()?;
        let mut rng = stream_rng(master_seed, STREAM_INIT);
        let agent = Agent::new(net, hyper.init_log_var, &mut rng);
        let optimizers = Optimizers::for_agent(&agent);
        Ok(Self { env, agent, optimizers, hyper, master_seed, updates_done: 0, episodes_done: 0, best: None, eval_interval })
    }

    /// Collects one batch, updates the agent, adapts KL settings, and optionally
    /// runs the corner-case evaluation.
    pub fn step(&mut self) -> Result<LogRow> {
        let eps = collect_batch(&self.agent, &self.env, self.master_seed, self.episodes_done, self.hyper.batch_episodes)?;
        let mut rng = stream_rng(self.master_seed, STREAM_SHUFFLE + self.updates_done as u64);
        let diag = update(
            &mut self.agent,
            &mut self.optimizers,
            &eps,
            &self.hyper,
            self.env.weights.gamma1,
            self.env.weights.gamma2,
            &mut rng,
        )?;
        let states: Vec<[f64; STATE_DIM]> = eps.iter().flat_map(|e| e.states.iter().map(ChaserState::to_array)).collect();
        self.agent.obs_norm.update(&states);
        let used = self.hyper.clone();
        self.hyper = adapt_kl(diag.kl, &self.hyper);
        self.updates_done += 1;
        self.episodes_done += eps.len() as u64;

        let mut corner = -1;
        if self.eval_interval > 0 && self.updates_done % self.eval_interval == 0 {
            let count = corner_case_eval(&self.agent, &self.env, &self.env.scenario.ic_test)?;
            retain_best(&mut self.best, &self.agent, count, self.updates_done);
            corner = count as i64;
        }
        let (mean_score, terms, mean_len, rate) = batch_summary(&eps);
        Ok(LogRow {
            update: self.updates_done,
            episodes: self.episodes_done,
            mean_score,
            mean_lqr: terms.lqr,
            mean_attitude: terms.attitude,
            mean_control: terms.control,
            mean_collision: terms.collision,
            mean_length_s: mean_len,
            train_dock_rate: rate,
            kl: diag.kl,
            policy_epochs: diag.policy_epochs,
            epsilon: used.epsilon,
            lr_policy: used.lr_policy,
            max_variance: self.agent.policy.max_variance(),
            value_loss: diag.value_loss_after,
            corner_docks: corner,
        })
    }
}
