//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's numeric code paths: forward passes,
//! finite differences, Adam and value iteration are re-derived in plain f64.

#![allow(dead_code)]
// Textbook index loops are the point of a reference implementation.
#![allow(clippy::needless_range_loop)]

use offload_lab::agents::{Agent, AgentConfig, Experience, ModelKind, StateVector};
use offload_lab::nn::{Activation, DenseNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// f64 copy of one dense layer: `w` is row-major `[outputs][inputs]`.
#[derive(Clone, Debug)]
pub struct RefLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

pub fn ref_layers(net: &DenseNet) -> Vec<RefLayer> {
    net.layers()
        .iter()
        .map(|l| RefLayer {
            inputs: l.inputs,
            outputs: l.outputs,
            w: l.weights.iter().map(|&v| v as f64).collect(),
            b: l.bias.iter().map(|&v| v as f64).collect(),
            act: l.activation,
        })
        .collect()
}

/// Textbook forward pass: loops, no vectorization, f64 throughout.
pub fn ref_forward(layers: &[RefLayer], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for l in layers {
        let mut z = vec![0.0; l.outputs];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut s = l.b[o];
            for i in 0..l.inputs {
                s += l.w[o * l.inputs + i] * a[i];
            }
            *zo = s;
        }
        a = match l.act {
            Activation::Identity => z,
            Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        };
    }
    a
}

/// Location of one scalar parameter.
#[derive(Clone, Copy, Debug)]
pub struct ParamRef {
    pub layer: usize,
    pub is_bias: bool,
    pub index: usize,
}

pub fn get_param(layers: &mut [RefLayer], p: ParamRef) -> &mut f64 {
    let l = &mut layers[p.layer];
    if p.is_bias {
        &mut l.b[p.index]
    } else {
        &mut l.w[p.index]
    }
}

/// Position of `p` in the canonical flatten order (per layer: W row-major, then b).
pub fn flat_index(layers: &[RefLayer], p: ParamRef) -> usize {
    let before: usize = layers[..p.layer].iter().map(|l| l.w.len() + l.b.len()).sum();
    before + if p.is_bias { layers[p.layer].w.len() + p.index } else { p.index }
}

/// Draws `per_layer_w` weights and up to `per_layer_b` biases from every layer.
pub fn sample_params(layers: &[RefLayer], per_layer_w: usize, per_layer_b: usize, seed: u64) -> Vec<ParamRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (li, l) in layers.iter().enumerate() {
        for _ in 0..per_layer_w {
            out.push(ParamRef {
                layer: li,
                is_bias: false,
                index: rng.random_range(0..l.w.len()),
            });
        }
        for _ in 0..per_layer_b.min(l.b.len()) {
            out.push(ParamRef {
                layer: li,
                is_bias: true,
                index: rng.random_range(0..l.b.len()),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Compares backprop of `L = Σ g_k y_k` against f64 central differences.
///
/// Relative error is `|bp - fd| / max(|bp|, |fd|, floor)`.
pub fn gradient_check(net: &DenseNet, x: &[f32], g: &[f32], params: &[ParamRef], h: f64, floor: f64) -> GradCheck {
    let pass = net.forward(x).unwrap();
    let bp = net.backward(&pass, g).unwrap().flatten();
    let mut layers = ref_layers(net);
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let loss = |layers: &[RefLayer]| -> f64 {
        ref_forward(layers, &x64)
            .iter()
            .zip(g)
            .map(|(y, gk)| y * *gk as f64)
            .sum()
    };
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for &p in params {
        let orig = *get_param(&mut layers, p);
        *get_param(&mut layers, p) = orig + h;
        let up = loss(&layers);
        *get_param(&mut layers, p) = orig - h;
        let down = loss(&layers);
        *get_param(&mut layers, p) = orig;
        let fd = (up - down) / (2.0 * h);
        let b = bp[flat_index(&layers, p)] as f64;
        let abs = (b - fd).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / b.abs().max(fd.abs()).max(floor));
    }
    GradCheck {
        checked: params.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Scalar Adam, written out per parameter in f32 with the same operation
/// order as the textbook update.
pub struct ScalarAdam {
    pub lr: f32,
    pub b1: f32,
    pub b2: f32,
    pub eps: f32,
    pub t: i32,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl ScalarAdam {
    pub fn new(n: usize, lr: f32) -> Self {
        Self {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let bc1 = 1.0 - self.b1.powi(self.t);
        let bc2 = 1.0 - self.b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Two contexts, three arms. Context 0 pays +1 for arm 1, context 1 pays
/// +1 for arm 2; everything else pays 0.
pub fn bandit_state(context: usize) -> StateVector {
    if context == 0 {
        [1.0, 0.0, 0.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0, 0.0, 0.0]
    }
}

pub fn bandit_optimal(context: usize) -> u8 {
    if context == 0 {
        1
    } else {
        2
    }
}

/// Trains an AC agent online on the bandit; returns π(optimal | context)
/// for both contexts afterwards.
pub fn train_ac_bandit(steps: usize, seed: u64) -> [f32; 2] {
    let cfg = AgentConfig {
        learning_rate: 1e-3,
        gamma: 0.0,
        init_seed: seed,
        policy_seed: seed + 1,
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(ModelKind::Ac, &cfg);
    let mut ctx_rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for i in 0..steps {
        let c = ctx_rng.random_range(0..2);
        let s = bandit_state(c);
        let a = agent.select_action(&s).unwrap().action;
        let reward = if a == bandit_optimal(c) { 1.0 } else { 0.0 };
        agent
            .train_step(&Experience {
                device_id: 0,
                model_kind: ModelKind::Ac,
                sequence: i as u64,
                state: s,
                action: a,
                reward,
                next_state: s,
                done: true,
            })
            .unwrap();
    }
    let Agent::Ac(ac) = &agent else { unreachable!() };
    [0, 1].map(|c| ac.probabilities(&bandit_state(c)).unwrap()[bandit_optimal(c) as usize])
}

/// Deterministic 3-state MDP: action `a` moves to state `a`; reward is 0
/// when `a == (s + 1) % 3` and -1 otherwise.
pub fn mdp_state(s: usize) -> StateVector {
    let mut v = [0.0; 5];
    v[s] = 1.0;
    v
}

pub fn mdp_reward(s: usize, a: usize) -> f32 {
    if a == (s + 1) % 3 {
        0.0
    } else {
        -1.0
    }
}

/// Value iteration in f64; returns the greedy policy and Q*.
pub fn value_iteration(gamma: f64) -> ([usize; 3], [[f64; 3]; 3]) {
    let mut v = [0.0f64; 3];
    let mut q = [[0.0f64; 3]; 3];
    for _ in 0..10_000 {
        for s in 0..3 {
            for a in 0..3 {
                q[s][a] = mdp_reward(s, a) as f64 + gamma * v[a];
            }
        }
        let next: [f64; 3] = [0, 1, 2].map(|s| q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let delta = (0..3).map(|s| (next[s] - v[s]).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    let policy = [0, 1, 2].map(|s| {
        let mut best = 0;
        for a in 1..3 {
            if q[s][a] > q[s][best] {
                best = a;
            }
        }
        best
    });
    (policy, q)
}

/// Online DQN on the MDP (no replay, no target network); returns the
/// greedy policy afterwards.
pub fn train_dqn_mdp(steps: usize, seed: u64) -> [usize; 3] {
    let cfg = AgentConfig {
        learning_rate: 1e-3,
        gamma: 0.9,
        epsilon_start: 1.0,
        epsilon_decay: 0.9995,
        epsilon_min: 0.1,
        init_seed: seed,
        policy_seed: seed + 1,
    };
    let mut agent = Agent::new(ModelKind::Dqn, &cfg);
    let mut s = 0usize;
    for i in 0..steps {
        let a = agent.select_action(&mdp_state(s)).unwrap().action as usize;
        let next = a;
        agent
            .train_step(&Experience {
                device_id: 0,
                model_kind: ModelKind::Dqn,
                sequence: i as u64,
                state: mdp_state(s),
                action: a as u8,
                reward: mdp_reward(s, a),
                next_state: mdp_state(next),
                done: false,
            })
            .unwrap();
        s = next;
    }
    let Agent::Dqn(dqn) = &agent else { unreachable!() };
    [0, 1, 2].map(|s| dqn.greedy_action(&mdp_state(s)).unwrap() as usize)
}
