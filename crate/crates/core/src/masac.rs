//! Discrete soft actor-critic with centralised twin critics, plus baselines.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathsel::{self, PathCandidate, PsruConfig, Route};
use crate::rng::{self, tag};
use crate::topology::{LinkId, NetworkGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SacError {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("non-finite {0} loss")]
    NonFiniteLoss(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// Fully connected net with ReLU hidden layers and a linear output.
///
/// Parameters are one flat vector: per layer, the (in × out) weight matrix in
/// row-major order followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Activations kept for the backward pass.
pub struct Tape {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(sizes);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let limit = (6.0 / (i + o) as f64).sqrt();
            for p in &mut m.params[off..off + i * o] {
                *p = rng.random_range(-limit..limit);
            }
            off += i * o + o;
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0usize, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut h = x.to_owned();
        for (k, (off, i, o)) in self.layers().enumerate() {
            let w = ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).expect("layer shape");
            let b = ndarray::ArrayView1::from(&self.params[off + i * o..off + i * o + o]);
            let mut z = h.dot(&w);
            z += &b;
            if k + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        (h, Tape { inputs })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(x).0
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape((1, x.len()), x).expect("row");
        self.forward(v).into_raw_vec_and_offset().0
    }

    /// Parameter gradient given dLoss/dOutput.
    pub fn backward(&self, tape: &Tape, dout: Array2<f64>) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let mut d = dout;
        for (k, &(off, i, o)) in layers.iter().enumerate().rev() {
            let h = &tape.inputs[k];
            let gw = h.t().dot(&d);
            let gb = d.sum_axis(Axis(0));
            ArrayViewMut2::from_shape((i, o), &mut grads[off..off + i * o]).expect("layer shape").assign(&gw);
            grads[off + i * o..off + i * o + o].copy_from_slice(gb.as_slice().expect("contiguous"));
            if k > 0 {
                let w = ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).expect("layer shape");
                let mut dh = d.dot(&w.t());
                ndarray::Zip::from(&mut dh).and(h).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                d = dh;
            }
        }
        grads
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Gradient descent with classical momentum: v ← μv + g, p ← p − lr·v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n: usize, lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

// ---------------------------------------------------------------------------
// Policy helpers
// ---------------------------------------------------------------------------

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, SacError> {
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(SacError::NonFiniteLogits);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn policy_distribution(actor: &Mlp, obs: &[f64]) -> Result<Vec<f64>, SacError> {
    softmax(&actor.forward_one(obs))
}

/// −Σ π log π with 0·log 0 = 0, in nats.
pub fn entropy(pi: &[f64]) -> f64 {
    -pi.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Draws from `pi` or takes its argmax (lowest index on ties).
pub fn choose(pi: &[f64], mode: ActMode, rng: &mut ChaCha8Rng) -> usize {
    match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for (i, &p) in pi.iter().enumerate() {
                if p > pi[best] {
                    best = i;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            pi.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
    }
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Critic input at decision time.
    pub state: Vec<f64>,
    /// Actor input at decision time.
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), head: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest entry is overwritten once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform sample with replacement; `None` until `n` entries exist.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<Batch> {
        if self.items.len() < n || n == 0 {
            return None;
        }
        let picks: Vec<&Transition> = (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect();
        Some(Batch::from_transitions(&picks))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let stack = |f: &dyn Fn(&Transition) -> &Vec<f64>| {
            let cols = ts.first().map_or(0, |t| f(t).len());
            let flat: Vec<f64> = ts.iter().flat_map(|t| f(t).iter().copied()).collect();
            Array2::from_shape_vec((ts.len(), cols), flat).expect("uniform transition shapes")
        };
        Self {
            states: stack(&|t| &t.state),
            obs: stack(&|t| &t.obs),
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: stack(&|t| &t.next_state),
            next_obs: stack(&|t| &t.next_obs),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub momentum: f64,
    /// α_H
    pub entropy_coef: f64,
    pub gamma: f64,
    pub rho: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions (summed over agents) collected before the first update.
    pub warmup: usize,
    pub updates_per_transition: usize,
    /// Reward each agent with r^c over its own tasks instead of the slot.
    pub per_agent_reward: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            momentum: 0.9,
            entropy_coef: 0.2,
            gamma: 0.99,
            rho: 0.995,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup: 1000,
            updates_per_transition: 1,
            per_agent_reward: false,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("hidden sizes must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err("gamma must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err("rho must lie in [0, 1]".into());
        }
        if !(self.lr_actor >= 0.0) || !(self.lr_critic >= 0.0) {
            return Err("learning rates must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("momentum must lie in [0, 1)".into());
        }
        if !(self.entropy_coef >= 0.0) {
            return Err("entropy_coef must be >= 0".into());
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err("need 0 < batch_size <= buffer_capacity".into());
        }
        Ok(())
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(output);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub rho: f64,
    opt_actor: Sgd,
    opt_q1: Sgd,
    opt_q2: Sgd,
}

impl AgentNets {
    pub fn new(obs_dim: usize, state_dim: usize, n_actions: usize, cfg: &SacConfig, rng: &mut ChaCha8Rng) -> Self {
        let actor = Mlp::glorot(&cfg.sizes(obs_dim, n_actions), rng);
        let q1 = Mlp::glorot(&cfg.sizes(state_dim, n_actions), rng);
        let q2 = Mlp::glorot(&cfg.sizes(state_dim, n_actions), rng);
        Self::from_parts(actor, q1, q2, cfg)
    }

    pub fn from_parts(actor: Mlp, q1: Mlp, q2: Mlp, cfg: &SacConfig) -> Self {
        Self {
            opt_actor: Sgd::new(actor.params.len(), cfg.lr_actor, cfg.momentum),
            opt_q1: Sgd::new(q1.params.len(), cfg.lr_critic, cfg.momentum),
            opt_q2: Sgd::new(q2.params.len(), cfg.lr_critic, cfg.momentum),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            entropy_coef: cfg.entropy_coef,
            gamma: cfg.gamma,
            rho: cfg.rho,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut ChaCha8Rng) -> Result<usize, SacError> {
        Ok(choose(&policy_distribution(&self.actor, obs)?, mode, rng))
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target].iter().all(|m| m.is_finite())
    }
}

fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut pi = logits.clone();
    let mut logpi = logits.clone();
    for (mut p_row, (mut l_row, z)) in pi.rows_mut().into_iter().zip(logpi.rows_mut().into_iter().zip(logits.rows())) {
        let z = z.to_vec();
        let lp = log_softmax_row(&z);
        for (k, v) in lp.iter().enumerate() {
            l_row[k] = *v;
            p_row[k] = v.exp();
        }
    }
    (pi, logpi)
}

/// y = r + γ(1−done)·Σ_a π(a|o')·(min Q_targ(s', a) − α log π(a|o')).
pub fn q_target(batch: &Batch, nets: &AgentNets) -> Result<Vec<f64>, SacError> {
    if batch.next_states.ncols() != nets.q1_target.input_dim() || batch.next_obs.ncols() != nets.actor.input_dim() {
        return Err(SacError::Shape("batch width differs from network input".into()));
    }
    let logits = nets.actor.forward(batch.next_obs.view());
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SacError::NonFiniteLogits);
    }
    let (pi, logpi) = softmax_rows(&logits);
    let t1 = nets.q1_target.forward(batch.next_states.view());
    let t2 = nets.q2_target.forward(batch.next_states.view());
    let mut y = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let mut v = 0.0;
        for a in 0..pi.ncols() {
            v += pi[[b, a]] * (t1[[b, a]].min(t2[[b, a]]) - nets.entropy_coef * logpi[[b, a]]);
        }
        let boot = if batch.dones[b] { 0.0 } else { nets.gamma * v };
        y.push(batch.rewards[b] + boot);
    }
    Ok(y)
}

/// Mean squared TD error and its parameter gradient.
pub fn critic_loss_grad(q: &Mlp, states: ArrayView2<f64>, actions: &[usize], y: &[f64]) -> (f64, Vec<f64>) {
    let (out, tape) = q.forward_tape(states);
    let n = actions.len() as f64;
    let mut dout = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (b, (&a, &yb)) in actions.iter().zip(y).enumerate() {
        let e = out[[b, a]] - yb;
        loss += e * e / n;
        dout[[b, a]] = 2.0 * e / n;
    }
    (loss, q.backward(&tape, dout))
}

/// One descent step on both critics towards `y`; returns pre-step losses.
pub fn critic_update(batch: &Batch, nets: &mut AgentNets, y: &[f64]) -> Result<(f64, f64), SacError> {
    let (l1, g1) = critic_loss_grad(&nets.q1, batch.states.view(), &batch.actions, y);
    let (l2, g2) = critic_loss_grad(&nets.q2, batch.states.view(), &batch.actions, y);
    if !l1.is_finite() {
        return Err(SacError::NonFiniteLoss("q1"));
    }
    if !l2.is_finite() {
        return Err(SacError::NonFiniteLoss("q2"));
    }
    nets.opt_q1.step(&mut nets.q1.params, &g1);
    nets.opt_q2.step(&mut nets.q2.params, &g2);
    Ok((l1, l2))
}

/// E_s[Σ_a π(a|s)(α log π(a|s) − qmin(s, a))], its gradient, and mean entropy.
pub fn actor_loss_grad(actor: &Mlp, obs: ArrayView2<f64>, qmin: &Array2<f64>, alpha: f64) -> (f64, Vec<f64>, f64) {
    let (logits, tape) = actor.forward_tape(obs);
    let (pi, logpi) = softmax_rows(&logits);
    let n = pi.nrows() as f64;
    let mut dz = Array2::zeros(pi.raw_dim());
    let (mut loss, mut ent) = (0.0, 0.0);
    for b in 0..pi.nrows() {
        let f: Vec<f64> = (0..pi.ncols()).map(|a| alpha * logpi[[b, a]] - qmin[[b, a]]).collect();
        let mean_f: f64 = (0..pi.ncols()).map(|a| pi[[b, a]] * f[a]).sum();
        loss += mean_f / n;
        ent -= (0..pi.ncols()).map(|a| pi[[b, a]] * logpi[[b, a]]).sum::<f64>() / n;
        for a in 0..pi.ncols() {
            dz[[b, a]] = pi[[b, a]] * (f[a] - mean_f) / n;
        }
    }
    (loss, actor.backward(&tape, dz), ent)
}

/// One descent step on the actor against the online critics; returns (loss, entropy).
pub fn actor_update(batch: &Batch, nets: &mut AgentNets) -> Result<(f64, f64), SacError> {
    let q1 = nets.q1.forward(batch.states.view());
    let q2 = nets.q2.forward(batch.states.view());
    let qmin = ndarray::Zip::from(&q1).and(&q2).map_collect(|a, b| a.min(*b));
    let (loss, g, ent) = actor_loss_grad(&nets.actor, batch.obs.view(), &qmin, nets.entropy_coef);
    if !loss.is_finite() {
        return Err(SacError::NonFiniteLoss("actor"));
    }
    nets.opt_actor.step(&mut nets.actor.params, &g);
    Ok((loss, ent))
}

/// target ← ρ·target + (1−ρ)·online.
pub fn soft_update(target: &mut Mlp, online: &Mlp, rho: f64) {
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = rho * *t + (1.0 - rho) * o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    pub loss_actor: f64,
    pub loss_q1: f64,
    pub loss_q2: f64,
    pub entropy: f64,
}

/// Critic step, actor step, then target tracking.
pub fn update(batch: &Batch, nets: &mut AgentNets) -> Result<UpdateStats, SacError> {
    let y = q_target(batch, nets)?;
    let (loss_q1, loss_q2) = critic_update(batch, nets, &y)?;
    let (loss_actor, entropy) = actor_update(batch, nets)?;
    let rho = nets.rho;
    soft_update(&mut nets.q1_target, &nets.q1, rho);
    soft_update(&mut nets.q2_target, &nets.q2, rho);
    Ok(UpdateStats { loss_actor, loss_q1, loss_q2, entropy })
}

/// A set of learners: one per agent (centralised critics) or one shared.
#[derive(Debug, Clone)]
pub struct Learner {
    pub nets: Vec<AgentNets>,
    pub buffers: Vec<ReplayBuffer>,
    pub cfg: SacConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    /// Single shared network on local observations.
    pub shared: bool,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(n_agents: usize, obs_dim: usize, n_actions: usize, shared: bool, cfg: &SacConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, &[tag::INIT]);
        let copies = if shared { 1 } else { n_agents };
        let state_dim = if shared { obs_dim } else { n_agents * (obs_dim + n_actions) };
        let nets = (0..copies).map(|_| AgentNets::new(obs_dim, state_dim, n_actions, cfg, &mut init)).collect();
        Self {
            nets,
            buffers: (0..copies).map(|_| ReplayBuffer::new(cfg.buffer_capacity)).collect(),
            cfg: cfg.clone(),
            obs_dim,
            n_actions,
            n_agents,
            shared,
            rng: rng::stream(seed, &[tag::REPLAY]),
        }
    }

    pub fn state_dim(&self) -> usize {
        if self.shared {
            self.obs_dim
        } else {
            self.n_agents * (self.obs_dim + self.n_actions)
        }
    }

    fn slot(&self, agent: usize) -> usize {
        if self.shared {
            0
        } else {
            agent
        }
    }

    pub fn agent(&self, agent: usize) -> &AgentNets {
        &self.nets[self.slot(agent)]
    }

    pub fn act(&self, agent: usize, obs: &[f64], mode: ActMode, rng: &mut ChaCha8Rng) -> Result<usize, SacError> {
        self.agent(agent).act(obs, mode, rng)
    }

    /// Critic input: the agent's observation for the shared variant, otherwise
    /// every agent's latest observation and last action one-hot.
    pub fn critic_input(&self, own_obs: &[f64], all_obs: &[Vec<f64>], last_actions: &[Option<usize>]) -> Vec<f64> {
        if self.shared {
            return own_obs.to_vec();
        }
        let mut s = Vec::with_capacity(self.state_dim());
        for o in all_obs {
            s.extend_from_slice(o);
        }
        for a in last_actions {
            let mut one_hot = vec![0.0; self.n_actions];
            if let Some(a) = a {
                one_hot[*a] = 1.0;
            }
            s.extend(one_hot);
        }
        s
    }

    pub fn store(&mut self, agent: usize, t: Transition) {
        let k = self.slot(agent);
        self.buffers[k].push(t);
    }

    pub fn total_transitions(&self) -> usize {
        self.buffers.iter().map(|b| b.len()).sum()
    }

    /// One update for `agent` if warm-up is over and its buffer holds a batch.
    pub fn update_agent(&mut self, agent: usize) -> Result<Option<UpdateStats>, SacError> {
        if self.total_transitions() < self.cfg.warmup {
            return Ok(None);
        }
        let k = self.slot(agent);
        let Some(batch) = self.buffers[k].sample(self.cfg.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        update(&batch, &mut self.nets[k]).map(Some)
    }

    pub fn is_finite(&self) -> bool {
        self.nets.iter().all(|n| n.is_finite())
    }

    pub fn checkpoint(&self, scheme: &str, config_hash: &str) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            scheme: scheme.to_string(),
            obs_dim: self.obs_dim,
            state_dim: self.state_dim(),
            n_actions: self.n_actions,
            n_agents: self.n_agents,
            shared: self.shared,
            agents: self
                .nets
                .iter()
                .map(|n| AgentParams {
                    actor: n.actor.clone(),
                    q1: n.q1.clone(),
                    q2: n.q2.clone(),
                    q1_target: n.q1_target.clone(),
                    q2_target: n.q2_target.clone(),
                })
                .collect(),
        }
    }

    /// Replaces all parameters, refusing any dimension mismatch.
    pub fn load(&mut self, ck: &Checkpoint) -> Result<(), SacError> {
        let bad = |m: String| Err(SacError::Checkpoint(m));
        if ck.version != CHECKPOINT_VERSION {
            return bad(format!("version {} (expected {CHECKPOINT_VERSION})", ck.version));
        }
        if ck.shared != self.shared || ck.agents.len() != self.nets.len() {
            return bad(format!("{} agent parameter sets, expected {}", ck.agents.len(), self.nets.len()));
        }
        if (ck.obs_dim, ck.state_dim, ck.n_actions) != (self.obs_dim, self.state_dim(), self.n_actions) {
            return bad(format!(
                "dimensions obs={} state={} actions={} do not match obs={} state={} actions={}",
                ck.obs_dim,
                ck.state_dim,
                ck.n_actions,
                self.obs_dim,
                self.state_dim(),
                self.n_actions
            ));
        }
        for (n, p) in self.nets.iter().zip(&ck.agents) {
            for (have, got) in [(&n.actor, &p.actor), (&n.q1, &p.q1), (&n.q2, &p.q2), (&n.q1, &p.q1_target), (&n.q2, &p.q2_target)] {
                if have.sizes != got.sizes || got.params.len() != param_count(&got.sizes) {
                    return bad(format!("layer sizes {:?} do not match {:?}", got.sizes, have.sizes));
                }
            }
        }
        for (n, p) in self.nets.iter_mut().zip(&ck.agents) {
            n.actor = p.actor.clone();
            n.q1 = p.q1.clone();
            n.q2 = p.q2.clone();
            n.q1_target = p.q1_target.clone();
            n.q2_target = p.q2_target.clone();
        }
        Ok(())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub scheme: String,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub shared: bool,
    pub agents: Vec<AgentParams>,
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Most paths a baseline enumerates per task.
pub const BASELINE_PATH_CAP: usize = 4096;

/// Highest ladder level whose rate fits on every link, given the rate already
/// held there.
pub fn highest_fitting_level(g: &NetworkGraph, links: &[LinkId], rates: &[u64], held: u64) -> Option<usize> {
    (0..rates.len()).rev().find(|&k| {
        let extra = rates[k].saturating_sub(held);
        links.iter().all(|&l| g.link(l).available_bps() >= extra)
    })
}

/// Random feasible path; the caller then takes the highest fitting level.
pub fn baseline_rnd_maxbr(
    g: &NetworkGraph,
    route: &Route,
    rate_bps: u64,
    psru: &PsruConfig,
    rng: &mut ChaCha8Rng,
) -> Option<PathCandidate> {
    let mut all = pathsel::feasible_candidates(g, route, rate_bps, psru, BASELINE_PATH_CAP);
    if all.is_empty() {
        return None;
    }
    let k = rng.random_range(0..all.len());
    Some(all.swap_remove(k))
}

/// Feasible path with the most residual link plus compute share; first in
/// lexicographic order on ties.
pub fn baseline_rrp(g: &NetworkGraph, route: &Route, rate_bps: u64, psru: &PsruConfig) -> Option<PathCandidate> {
    let mut best: Option<(f64, PathCandidate)> = None;
    for c in pathsel::feasible_candidates(g, route, rate_bps, psru, BASELINE_PATH_CAP) {
        let s = pathsel::residual_score(&c);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, c));
        }
    }
    best.map(|p| p.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn policy_examples() {
        let actor = Mlp::zeros(&[3, 4, 4]);
        let pi = policy_distribution(&actor, &[0.3, -1.0, 2.0]).unwrap();
        assert!(pi.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let pi = softmax(&[10.0, -10.0, -10.0, -10.0]).unwrap();
        assert!(pi[0] > 0.9999);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        let mut r = rng(1);
        for _ in 0..1000 {
            let m = Mlp::glorot(&[5, 8, 4], &mut r);
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
            let pi = policy_distribution(&m, &x).unwrap();
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(pi.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn action_selection() {
        let mut r = rng(3);
        assert_eq!(choose(&[0.0, 0.0, 1.0, 0.0], ActMode::Sample, &mut r), 2);
        assert_eq!(choose(&[0.0, 0.0, 1.0, 0.0], ActMode::Greedy, &mut r), 2);
        assert_eq!(choose(&[0.4, 0.4, 0.2], ActMode::Greedy, &mut r), 0);
        let pi = [0.1, 0.2, 0.3, 0.4];
        let seq = |s| {
            let mut r = rng(s);
            (0..20).map(|_| choose(&pi, ActMode::Sample, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
        let mut counts = [0usize; 4];
        let mut r = rng(10);
        let n = 100_000;
        for _ in 0..n {
            counts[choose(&pi, ActMode::Sample, &mut r)] += 1;
        }
        for (c, p) in counts.iter().zip(pi) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    fn transition(state: Vec<f64>, action: usize, reward: f64, done: bool) -> Transition {
        Transition {
            obs: state.clone(),
            next_state: state.clone(),
            next_obs: state.clone(),
            state,
            action,
            reward,
            done,
        }
    }

    fn small_cfg() -> SacConfig {
        SacConfig { hidden: vec![6], batch_size: 4, buffer_capacity: 16, warmup: 0, ..Default::default() }
    }

    #[test]
    fn targets_without_bootstrap_equal_reward() {
        let cfg = SacConfig { gamma: 0.0, ..small_cfg() };
        let nets = AgentNets::new(2, 2, 3, &cfg, &mut rng(4));
        let ts = [transition(vec![0.1, 0.2], 0, 1.5, false), transition(vec![0.3, -0.2], 2, -2.0, false)];
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        assert_eq!(q_target(&b, &nets).unwrap(), vec![1.5, -2.0]);
        let nets = AgentNets::new(2, 2, 3, &small_cfg(), &mut rng(4));
        let ts = [transition(vec![0.1, 0.2], 0, 1.5, true)];
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        assert_eq!(q_target(&b, &nets).unwrap(), vec![1.5]);
    }

    #[test]
    fn target_matches_hand_evaluation() {
        // Single-layer nets so outputs are set directly through the biases.
        let cfg = SacConfig { hidden: vec![], gamma: 0.9, entropy_coef: 0.5, ..small_cfg() };
        let mut actor = Mlp::zeros(&[1, 2]);
        actor.params[2..4].copy_from_slice(&[0.0, 2f64.ln()]);
        let mut q1 = Mlp::zeros(&[1, 2]);
        q1.params[2..4].copy_from_slice(&[1.0, 4.0]);
        let mut q2 = Mlp::zeros(&[1, 2]);
        q2.params[2..4].copy_from_slice(&[2.0, 3.0]);
        let nets = AgentNets::from_parts(actor, q1, q2, &cfg);
        let ts = [transition(vec![0.0], 0, 0.25, false)];
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        // π = (1/3, 2/3); min Q = (1, 3).
        let (p0, p1): (f64, f64) = (1.0 / 3.0, 2.0 / 3.0);
        let v = p0 * (1.0 - 0.5 * p0.ln()) + p1 * (3.0 - 0.5 * p1.ln());
        let want = 0.25 + 0.9 * v;
        let got = q_target(&b, &nets).unwrap()[0];
        assert!((got - want).abs() < 1e-12);
        // Swapping the critics leaves the target alone.
        let mut swapped = nets.clone();
        std::mem::swap(&mut swapped.q1_target, &mut swapped.q2_target);
        assert_eq!(q_target(&b, &swapped).unwrap()[0], got);
    }

    fn central_diff(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut p = params.to_vec();
        (0..p.len())
            .map(|i| {
                let orig = p[i];
                p[i] = orig + h;
                let up = f(&p);
                p[i] = orig - h;
                let dn = f(&p);
                p[i] = orig;
                (up - dn) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut r = rng(5);
        for sizes in [vec![1, 1, 1], vec![4, 7, 5, 3]] {
            let q = Mlp::glorot(&sizes, &mut r);
            let b = 6;
            let x = Array2::from_shape_fn((b, sizes[0]), |_| r.random_range(-1.0..1.0));
            let actions: Vec<usize> = (0..b).map(|_| r.random_range(0..q.output_dim())).collect();
            let y: Vec<f64> = (0..b).map(|_| r.random_range(-2.0..2.0)).collect();
            let (_, g) = critic_loss_grad(&q, x.view(), &actions, &y);
            let num = central_diff(&q.params, |p| {
                let m = Mlp { sizes: q.sizes.clone(), params: p.to_vec() };
                critic_loss_grad(&m, x.view(), &actions, &y).0
            });
            assert_close(&g, &num);
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut r = rng(6);
        let actor = Mlp::glorot(&[3, 8, 4], &mut r);
        let x = Array2::from_shape_fn((5, 3), |_| r.random_range(-1.0..1.0));
        let qmin = Array2::from_shape_fn((5, 4), |_| r.random_range(-3.0..3.0));
        let (_, g, _) = actor_loss_grad(&actor, x.view(), &qmin, 0.3);
        let num = central_diff(&actor.params, |p| {
            let m = Mlp { sizes: actor.sizes.clone(), params: p.to_vec() };
            actor_loss_grad(&m, x.view(), &qmin, 0.3).0
        });
        assert_close(&g, &num);
    }

    #[test]
    fn critic_fixed_point_and_descent() {
        let cfg = SacConfig { hidden: vec![5], lr_critic: 0.02, momentum: 0.0, ..small_cfg() };
        let mut nets = AgentNets::new(2, 2, 3, &cfg, &mut rng(7));
        let ts: Vec<Transition> = (0..4).map(|i| transition(vec![i as f64 * 0.3, 1.0 - i as f64 * 0.2], i % 3, 0.0, true)).collect();
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        let y: Vec<f64> = {
            let q = nets.q1.forward(b.states.view());
            b.actions.iter().enumerate().map(|(i, &a)| q[[i, a]]).collect()
        };
        let before = nets.q1.clone();
        let (l1, _) = critic_update(&b, &mut nets, &y).unwrap();
        assert_eq!(l1, 0.0);
        assert_eq!(nets.q1, before);
        let y = vec![1.0, -1.0, 0.5, 2.0];
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (l, _) = critic_update(&b, &mut nets, &y).unwrap();
            assert!(l < last);
            last = l;
        }
        let mut heavy = AgentNets::new(2, 2, 3, &SacConfig { momentum: 0.9, ..cfg }, &mut rng(7));
        let (first, _) = critic_update(&b, &mut heavy, &y).unwrap();
        for _ in 0..300 {
            critic_update(&b, &mut heavy, &y).unwrap();
        }
        assert!(critic_update(&b, &mut heavy, &y).unwrap().0 < first * 0.1);
    }

    #[test]
    fn actor_moves_in_expected_directions() {
        let cfg = SacConfig { hidden: vec![6], lr_actor: 0.1, entropy_coef: 5.0, ..small_cfg() };
        let mut nets = AgentNets::new(2, 2, 4, &cfg, &mut rng(8));
        // Skew the starting policy.
        let n = nets.actor.params.len();
        nets.actor.params[n - 4] = 2.0;
        let ts = [transition(vec![0.5, -0.5], 0, 0.0, true)];
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        for m in [&mut nets.q1, &mut nets.q2] {
            m.params.iter_mut().for_each(|p| *p = 0.0);
        }
        let h0 = entropy(&policy_distribution(&nets.actor, &[0.5, -0.5]).unwrap());
        actor_update(&b, &mut nets).unwrap();
        let h1 = entropy(&policy_distribution(&nets.actor, &[0.5, -0.5]).unwrap());
        assert!(h1 > h0);

        let cfg = SacConfig { hidden: vec![6], lr_actor: 0.1, entropy_coef: 0.0, ..small_cfg() };
        let mut nets = AgentNets::new(2, 2, 4, &cfg, &mut rng(9));
        for m in [&mut nets.q1, &mut nets.q2] {
            m.params.iter_mut().for_each(|p| *p = 0.0);
            let k = m.params.len();
            m.params[k - 2] = 1.0;
        }
        let p0 = policy_distribution(&nets.actor, &[0.5, -0.5]).unwrap()[2];
        actor_update(&b, &mut nets).unwrap();
        let p1 = policy_distribution(&nets.actor, &[0.5, -0.5]).unwrap()[2];
        assert!(p1 > p0);
    }

    #[test]
    fn soft_update_rules() {
        let mut r = rng(10);
        let online = Mlp::glorot(&[3, 4, 2], &mut r);
        let mut t = Mlp::glorot(&[3, 4, 2], &mut r);
        let mut same = t.clone();
        soft_update(&mut same, &online, 1.0);
        assert_eq!(same, t);
        let mut hard = t.clone();
        soft_update(&mut hard, &online, 0.0);
        assert_eq!(hard, online);
        let dist = |a: &Mlp| a.params.iter().zip(&online.params).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut d = dist(&t);
        for _ in 0..50 {
            soft_update(&mut t, &online, 0.9);
            let nd = dist(&t);
            assert!((nd / d - 0.9).abs() < 1e-9);
            d = nd;
        }
    }

    #[test]
    fn replay_is_fifo_and_waits_for_batch() {
        let mut buf = ReplayBuffer::new(3);
        let mut r = rng(11);
        assert!(buf.sample(2, &mut r).is_none());
        for i in 0..5 {
            buf.push(transition(vec![i as f64], 0, i as f64, false));
        }
        assert_eq!(buf.len(), 3);
        let mut rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert_eq!(buf.sample(2, &mut r).unwrap().len(), 2);
    }

    #[test]
    fn bellman_fixed_point_at_zero_discount() {
        let cfg = SacConfig {
            hidden: vec![8],
            gamma: 0.0,
            lr_critic: 0.05,
            lr_actor: 0.0,
            batch_size: 8,
            ..small_cfg()
        };
        let mut nets = AgentNets::new(1, 1, 2, &cfg, &mut rng(12));
        // State 0: action 0 pays 1 or 3 (mean 2); action 1 pays -1.
        let ts = [
            transition(vec![0.0], 0, 1.0, false),
            transition(vec![0.0], 0, 3.0, false),
            transition(vec![0.0], 1, -1.0, false),
            transition(vec![1.0], 1, 0.5, false),
        ];
        let b = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        for _ in 0..3000 {
            let y = q_target(&b, &nets).unwrap();
            critic_update(&b, &mut nets, &y).unwrap();
        }
        let q = nets.q1.forward(array![[0.0], [1.0]].view());
        assert!((q[[0, 0]] - 2.0).abs() < 1e-3);
        assert!((q[[0, 1]] + 1.0).abs() < 1e-3);
        assert!((q[[1, 1]] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = small_cfg();
        let l = Learner::new(3, 4, 4, false, &cfg, 1);
        let ck = l.checkpoint("cc-masac", "abc");
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut l2 = Learner::new(3, 4, 4, false, &cfg, 2);
        l2.load(&back).unwrap();
        assert_eq!(l2.nets[0].actor, l.nets[0].actor);
        let mut l3 = Learner::new(3, 5, 4, false, &cfg, 2);
        assert!(l3.load(&back).is_err());
        let mut l4 = Learner::new(1, 4, 4, true, &cfg, 2);
        assert!(l4.load(&back).is_err());
    }

    #[test]
    fn critic_input_layout() {
        let l = Learner::new(2, 2, 3, false, &small_cfg(), 1);
        let s = l.critic_input(&[9.0, 9.0], &[vec![1.0, 2.0], vec![3.0, 4.0]], &[Some(2), None]);
        assert_eq!(s, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let shared = Learner::new(2, 2, 3, true, &small_cfg(), 1);
        assert_eq!(shared.critic_input(&[9.0, 8.0], &[], &[]), vec![9.0, 8.0]);
    }
}
