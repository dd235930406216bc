//! Energy backends and the per-step reward.
//!
//! The reward for placing an atom is the negative energy difference between
//! the grown canvas and the previous canvas plus an isolated atom of the
//! placed element. Because the differences telescope, the undiscounted
//! return of a complete episode depends only on the final structure, not on
//! the placement order.

mod external;
mod morse;

pub use external::{ExternalBackend, ExternalBackendConfig};
pub use morse::{MorseBackend, MorseParams, PairParams};

use thiserror::Error;

use crate::chem::{Canvas, Element, State};
use crate::scalar::Scalar;
use crate::vec3::Vector3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("no pair parameters for ({0}, {1})")]
    MissingPairParams(Element, Element),
    #[error("energy backend timed out after {0:?}")]
    BackendTimeout(std::time::Duration),
    #[error("energy backend protocol error: {0}")]
    BackendProtocolError(String),
    #[error("energy backend failure: {0}")]
    BackendFailure(String),
}

/// Maps a canvas to a scalar energy in Hartree.
///
/// Implementations must be invariant under rotation, translation, and
/// permutation of the canvas atoms; the reward inherits this invariance.
pub trait EnergyBackend<F: Scalar>: Send + Sync {
    fn evaluate(&self, canvas: &Canvas<F>) -> Result<F, EnergyError>;

    /// Energy of an isolated atom: the energy of a single-atom canvas of
    /// the element at the origin.
    fn atomic_energy(&self, element: Element) -> Result<F, EnergyError> {
        let mut canvas = Canvas::empty();
        canvas.push(element, Vector3::zeros());
        self.evaluate(&canvas)
    }
}

/// An energy backend that also exposes analytic position gradients, as
/// needed by structure relaxation.
pub trait GradientBackend<F: Scalar>: EnergyBackend<F> {
    /// Energy plus dE/dx for every atom, in Hartree and Hartree/angstrom.
    fn energy_and_gradient(
        &self,
        canvas: &Canvas<F>,
    ) -> Result<(F, Vec<Vector3<F>>), EnergyError>;
}

/// Per-step reward: `-(E(next) - E(current) - E_atom(placed))`.
pub fn reward_delta_e<F: Scalar>(
    backend: &dyn EnergyBackend<F>,
    state: &State<F>,
    next_canvas: &Canvas<F>,
    placed_element: Element,
) -> Result<F, EnergyError> {
    debug_assert_eq!(next_canvas.len(), state.canvas.len() + 1);
    let e_next = backend.evaluate(next_canvas)?;
    let e_cur = backend.evaluate(&state.canvas)?;
    let e_atom = backend.atomic_energy(placed_element)?;
    Ok(-(e_next - e_cur - e_atom))
}
