//! Building blocks for reinforcement-learning-driven molecular design in
//! Cartesian coordinates.
//!
//! An agent draws atoms from a bag and places them one by one onto a 3D
//! canvas. Placements are parametrized in internal coordinates (distance,
//! angle, dihedral) relative to a focal atom, which makes the action space
//! invariant under rigid transformations of the canvas. The reward is the
//! negative energy difference caused by each placement, evaluated by a
//! pluggable backend (a built-in Morse pair potential or an external
//! process speaking a simple stdio protocol).
//!
//! The crate is organized bottom-up:
//!
//! - [`chem`]: elements, canvas, bag, state, action, and the MDP transition
//! - [`geometry`]: internal <-> Cartesian conversion, Kabsch RMSD
//! - [`energy`]: energy backends and the per-step reward
//! - [`env`]: the episodic design tasks (single-bag, multi-bag, solvation)
//! - [`nn`]: dense tensors with reverse-mode autodiff, MLPs, and a
//!   SchNet-style invariant atom encoder
//! - [`policy`]: the factorized actor-critic over the hybrid action space
//! - [`ppo`]: clipped-surrogate PPO with GAE and parallel rollouts
//! - [`baselines`]: multi-start relaxation baselines and structure metrics
//! - [`io`]: XYZ files, run configs, metrics CSV
//!
//! The numeric core (`chem`, `geometry`, `energy`, `nn::graph`) is generic
//! over the scalar type through the [`scalar::Scalar`] trait; the training
//! stack works in `f64` via the [`Real`] alias below.

pub mod baselines;
pub mod chem;
pub mod energy;
pub mod env;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod scalar;
pub mod vec3;

/// Scalar type used by the training stack.
pub type Real = f64;

/// 3-vector over [`Real`].
pub type Vec3 = vec3::Vector3<Real>;
/// Canvas over [`Real`] positions.
pub type Canvas = chem::Canvas<Real>;
/// MDP state over [`Real`] positions.
pub type State = chem::State<Real>;
/// Placement action over [`Real`] coordinates.
pub type Action = chem::Action<Real>;
/// Local reference frame over [`Real`] positions.
pub type LocalFrame = geometry::LocalFrame<Real>;

pub use chem::{Bag, Element};
