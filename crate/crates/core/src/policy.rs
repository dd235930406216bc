//! Actor-critic over the hybrid placement action.
//!
//! The actor factorizes the action distribution as
//! focal -> element -> (d, alpha, |psi|) -> kappa. Discrete heads are
//! masked softmaxes, the continuous block is an axis-aligned Gaussian with
//! one global learned log standard deviation per component, and kappa is a
//! two-way softmax over the two candidate placements the dihedral sign
//! could produce. All heads read rotation- and translation-invariant
//! features, so the distribution over internal-coordinate actions is
//! invariant under rigid motion of the canvas.
//!
//! Only the action components the current canvas can use contribute to the
//! log-probability: with n atoms on the canvas, alpha needs n >= 2 and
//! |psi|, kappa need n >= 3.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::chem::{Bag, Element};
use crate::env::clamp_continuous;
use crate::geometry::{local_frame, position_from_internal};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::mlp::{Activation, Mlp};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::schnet::{SchNet, SchNetConfig};
use crate::{Action, Real, State};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no valid element to draw: bag {0} has no element within e_max")]
    NoValidElement(Bag),
    #[error("canvas atom {0} exceeds the policy's e_max")]
    ElementOutOfRange(Element),
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    pub encoder: SchNetConfig,
    /// Hidden width of the bag embedding MLP and its output size.
    pub bag_hidden: usize,
    pub bag_dim: usize,
    /// Hidden width of all heads.
    pub head_hidden: usize,
    /// Range the distance mean is rescaled into.
    pub d_min: Real,
    pub d_max: Real,
    /// Initial standard deviations for (d, alpha, |psi|).
    pub sigma_init: [Real; 3],
    /// Disable the dihedral sign head (ablation); the dihedral is then a
    /// single signed Gaussian with mean rescaled into [-pi, pi] and the
    /// kappa factor vanishes.
    pub use_kappa_head: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            encoder: SchNetConfig::default(),
            bag_hidden: 128,
            bag_dim: 32,
            head_hidden: 128,
            d_min: 0.95,
            d_max: 1.80,
            sigma_init: [0.15, 0.25, 0.25],
            use_kappa_head: true,
        }
    }
}

impl PolicyConfig {
    pub fn e_max(&self) -> usize {
        self.encoder.e_max
    }
}

/// An action drawn from the policy, with the quantities PPO stores.
#[derive(Debug, Clone)]
pub struct SampledAction {
    pub action: Action,
    pub log_prob: Real,
    pub value: Real,
}

/// Tape nodes for one state-action pair during an update.
pub struct ActionEvaluation {
    pub log_prob: NodeId,
    /// Entropy of the discrete heads (focal and element).
    pub entropy: NodeId,
    pub value: NodeId,
}

pub struct Policy {
    config: PolicyConfig,
    encoder: SchNet,
    bag_mlp: Mlp,
    focal_mlp: Mlp,
    element_mlp: Mlp,
    cont_mlp: Mlp,
    kappa_mlp: Mlp,
    value_mlp: Mlp,
    log_sigma: ParamId,
}

struct StateEmbedding {
    /// (n, n_atom_basis) per-atom features; None for an empty canvas.
    atoms: Option<NodeId>,
    /// (1, bag_dim) bag embedding.
    beta: NodeId,
    /// (n, n_atom_basis + bag_dim) per-atom features with bag appended.
    joint: Option<NodeId>,
}

impl Policy {
    pub fn new<R: Rng>(store: &mut ParamStore<Real>, config: PolicyConfig, rng: &mut R) -> Self {
        let e_max = config.e_max();
        let basis = config.encoder.n_atom_basis;
        let s_dim = basis + config.bag_dim;
        let encoder = SchNet::new(store, "enc", config.encoder.clone(), rng);
        let bag_mlp = Mlp::new(
            store,
            "bag",
            &[e_max, config.bag_hidden, config.bag_dim],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let focal_mlp = Mlp::new(
            store,
            "focal",
            &[s_dim, config.head_hidden, 1],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let element_mlp = Mlp::new(
            store,
            "element",
            &[s_dim, config.head_hidden, e_max],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let cont_mlp = Mlp::new(
            store,
            "cont",
            &[s_dim + e_max, config.head_hidden, 3],
            Activation::Relu,
            Activation::Tanh,
            rng,
        );
        let kappa_mlp = Mlp::new(
            store,
            "kappa",
            &[s_dim, config.head_hidden, 1],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let value_mlp = Mlp::new(
            store,
            "value",
            &[s_dim, config.head_hidden, config.head_hidden, 1],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let log_sigma = store.add(
            "log_sigma",
            1,
            3,
            config.sigma_init.iter().map(|s| s.ln()).collect(),
        );
        Policy {
            config,
            encoder,
            bag_mlp,
            focal_mlp,
            element_mlp,
            cont_mlp,
            kappa_mlp,
            value_mlp,
            log_sigma,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    fn bag_vector(&self, bag: &Bag) -> Vec<Real> {
        let mut v = vec![0.0; self.config.e_max()];
        for (e, m) in bag.elements() {
            let i = e.atomic_number() as usize - 1;
            if i < v.len() {
                v[i] = m as Real;
            }
        }
        v
    }

    fn check_canvas(&self, state: &State) -> Result<(), PolicyError> {
        for e in state.canvas.elements() {
            if e.atomic_number() as usize > self.config.e_max() {
                return Err(PolicyError::ElementOutOfRange(e));
            }
        }
        Ok(())
    }

    fn embed(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        state: &State,
    ) -> StateEmbedding {
        let bag_in = g.constant(self.bag_vector(&state.bag), 1, self.config.e_max());
        let beta = self.bag_mlp.forward(store, g, bag_in);
        if state.canvas.is_empty() {
            return StateEmbedding { atoms: None, beta, joint: None };
        }
        let atoms = self.encoder.forward(store, g, &state.canvas);
        let n = state.canvas.len();
        let beta_rep = g.repeat_rows(beta, n);
        let joint = g.concat_cols(atoms, beta_rep);
        StateEmbedding { atoms: Some(atoms), beta, joint: Some(joint) }
    }

    /// Critic input: summed atom features (zeros for an empty canvas)
    /// concatenated with the bag embedding.
    fn value_node(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        emb: &StateEmbedding,
    ) -> NodeId {
        let basis = self.config.encoder.n_atom_basis;
        let pooled = match emb.atoms {
            Some(atoms) => g.sum_rows(atoms),
            None => g.constant(vec![0.0; basis], 1, basis),
        };
        let joint = g.concat_cols(pooled, emb.beta);
        let v = self.value_mlp.forward(store, g, joint);
        g.entry(v, 0, 0)
    }

    /// Critic value as a plain number.
    pub fn value(&self, store: &ParamStore<Real>, state: &State) -> Result<Real, PolicyError> {
        self.check_canvas(state)?;
        let mut g = Graph::new();
        let emb = self.embed(store, &mut g, state);
        let v = self.value_node(store, &mut g, &emb);
        Ok(g.scalar(v))
    }

    fn element_mask(&self, bag: &Bag) -> Result<Vec<bool>, PolicyError> {
        let mask: Vec<bool> = (1..=self.config.e_max() as u8)
            .map(|z| Element::from_atomic_number(z).map(|e| bag.contains(e)).unwrap_or(false))
            .collect();
        if mask.iter().any(|&m| m) {
            Ok(mask)
        } else {
            Err(PolicyError::NoValidElement(bag.clone()))
        }
    }

    /// Focal log-probabilities, shape (1, n).
    fn focal_log_probs(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        joint: NodeId,
        n: usize,
    ) -> NodeId {
        let logits = self.focal_mlp.forward(store, g, joint);
        let row = g.reshape(logits, 1, n);
        g.masked_log_softmax(row, vec![true; n])
    }

    /// Element log-probabilities given the focal row, shape (1, e_max).
    fn element_log_probs(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        s_focal: NodeId,
        mask: Vec<bool>,
    ) -> NodeId {
        let logits = self.element_mlp.forward(store, g, s_focal);
        g.masked_log_softmax(logits, mask)
    }

    /// Row of per-atom features for the focal atom; for an empty canvas,
    /// zeros concatenated with the bag embedding.
    fn focal_row(
        &self,
        g: &mut Graph<Real>,
        emb: &StateEmbedding,
        focal: usize,
    ) -> NodeId {
        match emb.joint {
            Some(joint) => g.row(joint, focal),
            None => {
                let basis = self.config.encoder.n_atom_basis;
                let zeros = g.constant(vec![0.0; basis], 1, basis);
                g.concat_cols(zeros, emb.beta)
            }
        }
    }

    /// Gaussian means for (d, alpha, |psi|), rescaled from tanh output.
    fn continuous_means(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        s_focal: NodeId,
        element: Element,
    ) -> NodeId {
        let e_max = self.config.e_max();
        let mut onehot = vec![0.0; e_max];
        onehot[element.atomic_number() as usize - 1] = 1.0;
        let eh = g.constant(onehot, 1, e_max);
        let x = g.concat_cols(s_focal, eh);
        let t = self.cont_mlp.forward(store, g, x);
        let half_pi = std::f64::consts::PI / 2.0;
        // With the sign head, |psi| lives in [0, pi]; in the ablation the
        // dihedral is signed and its mean spans [-pi, pi].
        let (psi_scale, psi_offset) = if self.config.use_kappa_head {
            (half_pi, half_pi)
        } else {
            (std::f64::consts::PI, 0.0)
        };
        let scale = g.constant(
            vec![(self.config.d_max - self.config.d_min) / 2.0, half_pi, psi_scale],
            1,
            3,
        );
        let offset = g.constant(
            vec![(self.config.d_max + self.config.d_min) / 2.0, half_pi, psi_offset],
            1,
            3,
        );
        let st = g.mul(t, scale);
        g.add(st, offset)
    }

    /// Log-density of the first `k` continuous components at `x`.
    fn gaussian_log_prob(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        mu: NodeId,
        x: &[Real],
        k: usize,
    ) -> NodeId {
        let log_sigma = g.param(store, self.log_sigma);
        let mut total = g.scalar_const(0.0);
        for i in 0..k {
            let mu_i = g.entry(mu, 0, i);
            let ls_i = g.entry(log_sigma, 0, i);
            let xi = g.scalar_const(x[i]);
            let diff = g.sub(xi, mu_i);
            let neg_ls = g.neg(ls_i);
            let inv_sigma = g.exp(neg_ls);
            let z = g.mul(diff, inv_sigma);
            let zz = g.mul(z, z);
            let q = g.scale(zz, -0.5);
            let q = g.sub(q, ls_i);
            let q = g.add_const(q, -0.5 * LN_2PI);
            total = g.add(total, q);
        }
        total
    }

    /// Log-probabilities (1,2) of kappa = +1 and -1 via the shared-weight
    /// sign head over the two candidate placements. `None` when the
    /// candidates cannot be resolved (degenerate frame).
    fn kappa_log_probs(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        state: &State,
        action: &Action,
    ) -> Option<NodeId> {
        let frame = local_frame(&state.canvas, action.focal).ok()?;
        let (d, alpha, abs_psi) = clamp_continuous(
            self.config.d_min,
            self.config.d_max,
            action.distance_d,
            action.angle_alpha,
            action.abs_dihedral_psi,
        );
        let pos_plus = position_from_internal(&frame, d, alpha, abs_psi, 1).ok()?;
        let pos_minus = position_from_internal(&frame, d, alpha, abs_psi, -1).ok()?;
        let next_bag = state.bag.without(action.element).ok()?;

        let bag_in = g.constant(self.bag_vector(&next_bag), 1, self.config.e_max());
        let beta_next = self.bag_mlp.forward(store, g, bag_in);

        let mut utilities = Vec::with_capacity(2);
        for pos in [pos_plus, pos_minus] {
            let candidate = state.canvas.with_atom(action.element, pos);
            let feats = self.encoder.forward(store, g, &candidate);
            let new_row = g.row(feats, candidate.len() - 1);
            let s = g.concat_cols(new_row, beta_next);
            let u = self.kappa_mlp.forward(store, g, s);
            utilities.push(u);
        }
        let pair = g.concat_cols(utilities[0], utilities[1]);
        Some(g.masked_log_softmax(pair, vec![true, true]))
    }

    /// Number of continuous components the current canvas makes live.
    fn active_continuous(n_atoms: usize) -> usize {
        match n_atoms {
            0 => 0,
            1 => 1,
            2 => 2,
            _ => 3,
        }
    }

    /// Log-probability, discrete-head entropy, and value of a
    /// state-action pair, on the tape.
    pub fn evaluate_action(
        &self,
        store: &ParamStore<Real>,
        g: &mut Graph<Real>,
        state: &State,
        action: &Action,
    ) -> Result<ActionEvaluation, PolicyError> {
        self.check_canvas(state)?;
        let n = state.canvas.len();
        let emb = self.embed(store, g, state);
        let value = self.value_node(store, g, &emb);
        let mut entropy_terms: Vec<NodeId> = Vec::new();
        let mut lp_terms: Vec<NodeId> = Vec::new();

        if let Some(joint) = emb.joint {
            let flp = self.focal_log_probs(store, g, joint, n);
            lp_terms.push(g.entry(flp, 0, action.focal));
            entropy_terms.push(categorical_entropy(g, flp));
        }

        let mask = self.element_mask(&state.bag)?;
        let s_focal = self.focal_row(g, &emb, action.focal);
        let elp = self.element_log_probs(store, g, s_focal, mask);
        lp_terms.push(g.entry(elp, 0, action.element.atomic_number() as usize - 1));
        entropy_terms.push(categorical_entropy(g, elp));

        let k = Self::active_continuous(n);
        if k > 0 {
            let mu = self.continuous_means(store, g, s_focal, action.element);
            // In the ablation the stored (|psi|, kappa) pair reconstructs
            // the signed Gaussian sample.
            let psi = if self.config.use_kappa_head {
                action.abs_dihedral_psi
            } else {
                action.kappa as Real * action.abs_dihedral_psi
            };
            let x = [action.distance_d, action.angle_alpha, psi];
            lp_terms.push(self.gaussian_log_prob(store, g, mu, &x, k));
        }

        if n >= 3 && self.config.use_kappa_head {
            if let Some(klp) = self.kappa_log_probs(store, g, state, action) {
                let idx = if action.kappa >= 0 { 0 } else { 1 };
                lp_terms.push(g.entry(klp, 0, idx));
            }
        }

        let mut log_prob = lp_terms[0];
        for &t in &lp_terms[1..] {
            log_prob = g.add(log_prob, t);
        }
        let mut entropy = entropy_terms[0];
        for &t in &entropy_terms[1..] {
            entropy = g.add(entropy, t);
        }
        Ok(ActionEvaluation { log_prob, entropy, value })
    }

    /// Draw an action. `deterministic` takes the mode of every head
    /// instead of sampling.
    pub fn act<R: Rng>(
        &self,
        store: &ParamStore<Real>,
        state: &State,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<SampledAction, PolicyError> {
        self.check_canvas(state)?;
        let n = state.canvas.len();
        let mut g = Graph::new();
        let emb = self.embed(store, &mut g, state);
        let value = {
            let v = self.value_node(store, &mut g, &emb);
            g.scalar(v)
        };
        let mut log_prob = 0.0;

        let focal = match emb.joint {
            Some(joint) => {
                let flp = self.focal_log_probs(store, &mut g, joint, n);
                let probs: Vec<Real> =
                    g.value(flp).data.iter().map(|lp| lp.exp()).collect();
                let i = draw_categorical(&probs, rng, deterministic);
                log_prob += g.value(flp).data[i];
                i
            }
            None => 0,
        };

        let mask = self.element_mask(&state.bag)?;
        let s_focal = self.focal_row(&mut g, &emb, focal);
        let elp = self.element_log_probs(store, &mut g, s_focal, mask);
        let eprobs: Vec<Real> = g.value(elp).data.iter().map(|lp| lp.exp()).collect();
        let ei = draw_categorical(&eprobs, rng, deterministic);
        log_prob += g.value(elp).data[ei];
        let element = Element::from_atomic_number(ei as u8 + 1).expect("mask bounds e_max");

        let k = Self::active_continuous(n);
        let mut cont = [0.0; 3];
        if k > 0 {
            let mu = self.continuous_means(store, &mut g, s_focal, element);
            let mu_v = g.value(mu).data.clone();
            let sigma: Vec<Real> =
                store.get(self.log_sigma).value.iter().map(|ls| ls.exp()).collect();
            for i in 0..3 {
                if i < k && !deterministic {
                    let dist = Normal::new(mu_v[i], sigma[i]).expect("sigma > 0");
                    cont[i] = dist.sample(rng);
                    let z = (cont[i] - mu_v[i]) / sigma[i];
                    log_prob += -0.5 * z * z - sigma[i].ln() - 0.5 * LN_2PI;
                } else if i < k {
                    cont[i] = mu_v[i];
                    log_prob += -sigma[i].ln() - 0.5 * LN_2PI;
                } else {
                    cont[i] = mu_v[i];
                }
            }
        }

        let mut action = Action {
            focal,
            element,
            distance_d: cont[0],
            angle_alpha: cont[1],
            abs_dihedral_psi: cont[2],
            kappa: 1,
        };
        if !self.config.use_kappa_head && k == 3 {
            // Ablation: the signed Gaussian sample carries the sign.
            action.kappa = if cont[2] >= 0.0 { 1 } else { -1 };
            action.abs_dihedral_psi = cont[2].abs();
        }

        if n >= 3 && self.config.use_kappa_head {
            if let Some(klp) = self.kappa_log_probs(store, &mut g, state, &action) {
                let probs: Vec<Real> =
                    g.value(klp).data.iter().map(|lp| lp.exp()).collect();
                let i = draw_categorical(&probs, rng, deterministic);
                action.kappa = if i == 0 { 1 } else { -1 };
                log_prob += g.value(klp).data[i];
            }
        }

        Ok(SampledAction { action, log_prob, value })
    }
}

/// Entropy of a (1,n) row of log-probabilities from a masked softmax.
/// Masked entries carry probability exactly zero and contribute nothing.
fn categorical_entropy(g: &mut Graph<Real>, log_probs: NodeId) -> NodeId {
    let p = g.exp(log_probs);
    let plp = g.mul(p, log_probs);
    let s = g.sum_all(plp);
    g.neg(s)
}

fn draw_categorical<R: Rng>(probs: &[Real], rng: &mut R, deterministic: bool) -> usize {
    if deterministic {
        let mut best = 0;
        for i in 1..probs.len() {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        return best;
    }
    let total: Real = probs.iter().sum();
    let mut u: Real = rng.gen_range(0.0..total);
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}
