//! Episodic molecular design tasks: single-bag, multi-bag, and solvation.
//!
//! An episode starts from an initial canvas and bag, and ends when the bag
//! is exhausted (after all refills, for solvation) or when a placement
//! violates the distance guards or drives the reward below the floor.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::{transition, Bag, ChemError, Element, DEFAULT_E_MAX};
use crate::energy::{reward_delta_e, EnergyBackend};
use crate::geometry::{local_frame, position_from_internal, GeometryError};
use crate::{Action, Canvas, Real, State, Vec3};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("invalid action: {0}")]
    InvalidAction(#[from] ChemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SingleBag,
    MultiBag,
    Solvation,
}

/// Configuration of one task instance.
#[derive(Debug, Clone)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Candidate bags. Single-bag uses the first; multi-bag samples
    /// uniformly at each reset; solvation ignores this (H2O refills).
    pub bags: Vec<Bag>,
    /// Pre-existing atoms (the solute, for solvation).
    pub initial_canvas: Canvas,
    /// Total number of bags consumed in a solvation episode (n >= 1).
    pub refills: u32,
    /// Distance penalty coefficient rho in Hartree/angstrom (solvation).
    pub distance_penalty: Real,
    /// Minimum reward; reaching it ends the episode.
    pub reward_floor: Real,
    /// Proximity guard: a new atom closer than this to any atom fails.
    pub min_dist: Real,
    /// Isolation guard: a new atom farther than this from all atoms fails.
    pub max_dist: Real,
    /// Policy distance range [d_min, d_max] in angstrom.
    pub d_min: Real,
    pub d_max: Real,
    /// Largest selectable atomic number.
    pub e_max: usize,
}

impl TaskConfig {
    pub fn single_bag(bag: Bag) -> Self {
        TaskConfig {
            kind: TaskKind::SingleBag,
            bags: vec![bag],
            initial_canvas: Canvas::empty(),
            refills: 1,
            distance_penalty: 0.0,
            reward_floor: -0.6,
            min_dist: 0.6,
            max_dist: 2.0,
            d_min: 0.95,
            d_max: 1.80,
            e_max: DEFAULT_E_MAX,
        }
    }

    pub fn multi_bag(bags: Vec<Bag>) -> Self {
        assert!(!bags.is_empty(), "multi-bag task needs at least one bag");
        TaskConfig { kind: TaskKind::MultiBag, ..TaskConfig::single_bag(bags[0].clone()) }
            .with_bags(bags)
    }

    pub fn solvation(solute: Canvas, n: u32) -> Self {
        assert!(n >= 1, "solvation needs at least one bag");
        TaskConfig {
            kind: TaskKind::Solvation,
            bags: vec![Bag::from_formula("H2O").unwrap()],
            initial_canvas: solute,
            refills: n,
            distance_penalty: 0.01,
            reward_floor: -0.6,
            min_dist: 0.6,
            max_dist: 2.0,
            d_min: 0.90,
            d_max: 2.80,
            e_max: DEFAULT_E_MAX,
        }
    }

    fn with_bags(mut self, bags: Vec<Bag>) -> Self {
        self.bags = bags;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bags.is_empty() {
            return Err("no bags configured".into());
        }
        if self.reward_floor >= 0.0 {
            return Err("reward_floor must be negative".into());
        }
        if !(0.0 < self.min_dist && self.min_dist < self.max_dist) {
            return Err("need 0 < min_dist < max_dist".into());
        }
        if self.d_min >= self.d_max {
            return Err("need d_min < d_max".into());
        }
        Ok(())
    }

    /// Worst-case number of placements in one episode.
    pub fn max_episode_len(&self) -> usize {
        match self.kind {
            TaskKind::Solvation => 3 * self.refills as usize,
            _ => self.bags.iter().map(|b| b.total()).max().unwrap_or(0) as usize,
        }
    }
}

/// Named task presets shipped with the repository.
pub fn preset(name: &str) -> Option<TaskConfig> {
    let bags = |formulas: &[&str]| -> Vec<Bag> {
        formulas.iter().map(|f| Bag::from_formula(f).unwrap()).collect()
    };
    match name {
        "single_bag_small" => {
            let mut cfg = TaskConfig::single_bag(Bag::from_formula("CH4O").unwrap());
            cfg.bags = bags(&["CH4O", "CH3NO", "C2H2O2"]);
            Some(cfg)
        }
        "multi_bag_qm9_5" => Some(TaskConfig::multi_bag(bags(&[
            "H2O", "CHN", "C2N2", "H3N", "C2H2", "CH2O", "C2HNO", "N4O", "C3HN", "CH4", "CF4",
        ]))),
        "single_bag_large" => {
            let mut cfg = TaskConfig::single_bag(Bag::from_formula("C3H5NO3").unwrap());
            cfg.bags = bags(&["C3H5NO3", "C4H7N", "C3H8O"]);
            Some(cfg)
        }
        "solvation_formaldehyde" => Some(TaskConfig::solvation(formaldehyde(), 5)),
        _ => None,
    }
}

/// Formaldehyde solute geometry (C=O 1.21 A, C-H 1.12 A, H-C-H 116 deg).
pub fn formaldehyde() -> Canvas {
    let mut c = Canvas::empty();
    c.push(Element::C, Vec3::new(0.0, 0.0, 0.0));
    c.push(Element::O, Vec3::new(0.0, 0.0, 1.21));
    c.push(Element::H, Vec3::new(0.950, 0.0, -0.594));
    c.push(Element::H, Vec3::new(-0.950, 0.0, -0.594));
    c
}

/// Why a step ended (or did not end) the episode.
#[derive(Debug, Clone, PartialEq)]
pub enum StepReason {
    Placed,
    BagExhausted,
    TooClose,
    TooFar,
    RewardFloor,
    GeometryError(String),
    BackendError(String),
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub reason: StepReason,
    /// Raw energy difference Delta_E before negation, floor, and penalty.
    pub raw_delta_e: Real,
    /// Distance penalty rho * |x| actually subtracted (solvation).
    pub penalty: Real,
    /// Cartesian position the action resolved to.
    pub position: Vec3,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: State,
    pub reward: Real,
    pub done: bool,
    pub info: StepInfo,
}

/// Clamp raw continuous samples into the ranges the geometry accepts.
/// Used identically by the environment and by the policy's dihedral-sign
/// head, so both resolve the same Cartesian position for one action.
pub fn clamp_continuous(
    d_min: Real,
    d_max: Real,
    d: Real,
    alpha: Real,
    abs_psi: Real,
) -> (Real, Real, Real) {
    (
        d.clamp(0.25 * d_min, 4.0 * d_max),
        alpha.clamp(0.0, std::f64::consts::PI),
        abs_psi.clamp(0.0, std::f64::consts::PI),
    )
}

/// Validity masks for the discrete action components: one flag per canvas
/// atom (focal choice) and one per atomic number `1..=e_max`.
pub fn valid_action_masks(state: &State, e_max: usize) -> (Vec<bool>, Vec<bool>) {
    let focal_mask = vec![true; state.canvas.len()];
    let element_mask = (1..=e_max)
        .map(|z| {
            Element::from_atomic_number(z as u8)
                .map(|e| state.bag.contains(e))
                .unwrap_or(false)
        })
        .collect();
    (focal_mask, element_mask)
}

/// One episodic environment instance. Owns its RNG; many instances can run
/// concurrently (one per rollout worker).
pub struct MolEnv {
    config: TaskConfig,
    backend: Arc<dyn EnergyBackend<Real>>,
    rng: ChaCha8Rng,
    state: State,
    bags_used: u32,
    done: bool,
}

impl MolEnv {
    pub fn new(config: TaskConfig, backend: Arc<dyn EnergyBackend<Real>>, seed: u64) -> Self {
        let mut env = MolEnv {
            config,
            backend,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: State::new(Canvas::empty(), Bag::empty()),
            bags_used: 0,
            done: true,
        };
        env.reset();
        env
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Start a new episode and return its initial state.
    pub fn reset(&mut self) -> State {
        let bag = match self.config.kind {
            TaskKind::SingleBag => self.config.bags[0].clone(),
            TaskKind::MultiBag => {
                let i = self.rng.gen_range(0..self.config.bags.len());
                self.config.bags[i].clone()
            }
            TaskKind::Solvation => self.config.bags[0].clone(),
        };
        // The solvation penalty is measured from the origin, so the solute
        // is centered there.
        let canvas = if self.config.kind == TaskKind::Solvation {
            self.config.initial_canvas.centered()
        } else {
            self.config.initial_canvas.clone()
        };
        self.state = State::new(canvas, bag);
        self.bags_used = 1;
        self.done = false;
        self.state.clone()
    }

    /// Resolve the action's internal coordinates to a Cartesian position.
    /// Continuous values are clamped into their geometric ranges here;
    /// log-probabilities elsewhere always use the raw samples.
    pub fn resolve_position(&self, state: &State, action: &Action) -> Result<Vec3, GeometryError> {
        if state.canvas.is_empty() {
            return Ok(Vec3::zeros());
        }
        let frame = local_frame(&state.canvas, action.focal)?;
        let (d, alpha, abs_psi) = clamp_continuous(
            self.config.d_min,
            self.config.d_max,
            action.distance_d,
            action.angle_alpha,
            action.abs_dihedral_psi,
        );
        position_from_internal(&frame, d, alpha, abs_psi, action.kappa)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if !self.state.bag.contains(action.element) {
            return Err(ChemError::ElementNotInBag(action.element).into());
        }
        if !self.state.canvas.is_empty() && action.focal >= self.state.canvas.len() {
            return Err(ChemError::InvalidFocal {
                focal: action.focal,
                n_atoms: self.state.canvas.len(),
            }
            .into());
        }

        let position = match self.resolve_position(&self.state, action) {
            Ok(p) => p,
            Err(e) => {
                return Ok(self.floored_step(action, Vec3::zeros(), StepReason::GeometryError(
                    e.to_string(),
                )));
            }
        };

        // Distance guards: not too close to any atom, not too far from all.
        if !self.state.canvas.is_empty() {
            let dists: Vec<Real> =
                self.state.canvas.positions().map(|p| p.distance(&position)).collect();
            if dists.iter().any(|&d| d < self.config.min_dist) {
                return Ok(self.floored_step(action, position, StepReason::TooClose));
            }
            if dists.iter().all(|&d| d > self.config.max_dist) {
                return Ok(self.floored_step(action, position, StepReason::TooFar));
            }
        }

        let next_canvas = self.state.canvas.with_atom(action.element, position);
        let delta_e = match reward_delta_e(
            self.backend.as_ref(),
            &self.state,
            &next_canvas,
            action.element,
        ) {
            Ok(r) => -r,
            Err(e) => {
                return Ok(self.floored_step(action, position, StepReason::BackendError(
                    e.to_string(),
                )));
            }
        };
        let penalty = if self.config.kind == TaskKind::Solvation {
            self.config.distance_penalty * position.norm()
        } else {
            0.0
        };
        let mut reward = -delta_e - penalty;
        let mut reason = StepReason::Placed;
        let mut floored = false;
        if reward < self.config.reward_floor {
            reward = self.config.reward_floor;
            reason = StepReason::RewardFloor;
            floored = true;
        }

        let mut next_state = transition(&self.state, action, position)
            .map_err(EnvError::InvalidAction)?;

        let mut done = floored;
        if !floored && next_state.bag.is_empty() {
            if self.config.kind == TaskKind::Solvation && self.bags_used < self.config.refills {
                self.bags_used += 1;
                next_state = State::new(next_state.canvas, self.config.bags[0].clone());
            } else {
                done = true;
                reason = StepReason::BagExhausted;
            }
        }

        self.state = next_state.clone();
        self.done = done;
        Ok(StepResult {
            next_state,
            reward,
            done,
            info: StepInfo { reason, raw_delta_e: delta_e, penalty, position },
        })
    }

    /// Guard violations and floor breaches share one code path: the floor
    /// reward, a terminal step, and the atom still recorded on the canvas.
    fn floored_step(&mut self, action: &Action, position: Vec3, reason: StepReason) -> StepResult {
        let next_state = transition(&self.state, action, position)
            .unwrap_or_else(|_| self.state.clone());
        self.state = next_state.clone();
        self.done = true;
        StepResult {
            next_state,
            reward: self.config.reward_floor,
            done: true,
            info: StepInfo { reason, raw_delta_e: 0.0, penalty: 0.0, position },
        }
    }
}
