//! Built-in surrogate energy: a sum of pairwise Morse potentials with
//! analytic position gradients. Deterministic stand-in for an external
//! quantum-chemistry engine.

use std::collections::HashMap;

use crate::chem::{Canvas, Element};
use crate::scalar::Scalar;
use crate::vec3::Vector3;

use super::{EnergyBackend, EnergyError, GradientBackend};

/// Parameters of one Morse pair interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParams<F> {
    /// Well depth D_e in Hartree.
    pub well_depth: F,
    /// Width a in 1/angstrom.
    pub width: F,
    /// Equilibrium separation r0 in angstrom.
    pub equilibrium: F,
}

/// Symmetric table of Morse parameters per element pair.
#[derive(Debug, Clone, Default)]
pub struct MorseParams<F> {
    pairs: HashMap<(Element, Element), PairParams<F>>,
}

fn key(e1: Element, e2: Element) -> (Element, Element) {
    if e1 <= e2 {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

impl<F: Scalar> MorseParams<F> {
    pub fn new() -> Self {
        MorseParams { pairs: HashMap::new() }
    }

    /// The table shipped with the repository (see `data/morse_params.tsv`).
    pub fn default_table() -> Self {
        Self::parse(include_str!("../../data/morse_params.tsv"))
            .expect("shipped parameter table must parse")
    }

    /// Parse a TSV table of `element element well_depth width equilibrium`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut params = MorseParams::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(format!("line {}: expected 5 fields", lineno + 1));
            }
            let e1 = Element::from_symbol(fields[0]).map_err(|e| e.to_string())?;
            let e2 = Element::from_symbol(fields[1]).map_err(|e| e.to_string())?;
            let parse = |s: &str| -> Result<F, String> {
                s.parse::<f64>()
                    .map(F::from_f64_c)
                    .map_err(|_| format!("line {}: bad number {:?}", lineno + 1, s))
            };
            params.insert(
                e1,
                e2,
                PairParams {
                    well_depth: parse(fields[2])?,
                    width: parse(fields[3])?,
                    equilibrium: parse(fields[4])?,
                },
            );
        }
        Ok(params)
    }

    pub fn insert(&mut self, e1: Element, e2: Element, p: PairParams<F>) {
        assert!(
            p.well_depth > F::zero() && p.width > F::zero() && p.equilibrium > F::zero(),
            "Morse parameters must be positive"
        );
        self.pairs.insert(key(e1, e2), p);
    }

    pub fn pair(&self, e1: Element, e2: Element) -> Result<PairParams<F>, EnergyError> {
        self.pairs
            .get(&key(e1, e2))
            .copied()
            .ok_or(EnergyError::MissingPairParams(e1, e2))
    }
}

/// Surrogate backend evaluating the Morse pair sum.
#[derive(Debug, Clone, Default)]
pub struct MorseBackend<F> {
    params: MorseParams<F>,
}

impl<F: Scalar> MorseBackend<F> {
    pub fn new(params: MorseParams<F>) -> Self {
        MorseBackend { params }
    }

    pub fn with_default_params() -> Self {
        MorseBackend::new(MorseParams::default_table())
    }

    pub fn params(&self) -> &MorseParams<F> {
        &self.params
    }

    fn pair_energy(&self, p: &PairParams<F>, r: F) -> F {
        let x = F::one() - (-p.width * (r - p.equilibrium)).exp();
        p.well_depth * (x * x - F::one())
    }

    /// dE/dr for one pair.
    fn pair_energy_derivative(&self, p: &PairParams<F>, r: F) -> F {
        let e = (-p.width * (r - p.equilibrium)).exp();
        F::from_f64_c(2.0) * p.well_depth * (F::one() - e) * p.width * e
    }
}

impl<F: Scalar> EnergyBackend<F> for MorseBackend<F> {
    fn evaluate(&self, canvas: &Canvas<F>) -> Result<F, EnergyError> {
        let atoms = canvas.atoms();
        let mut total = F::zero();
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                let p = self.params.pair(atoms[i].element, atoms[j].element)?;
                let r = atoms[i].position.distance(&atoms[j].position);
                total += self.pair_energy(&p, r);
            }
        }
        Ok(total)
    }
}

impl<F: Scalar> GradientBackend<F> for MorseBackend<F> {
    fn energy_and_gradient(
        &self,
        canvas: &Canvas<F>,
    ) -> Result<(F, Vec<Vector3<F>>), EnergyError> {
        let atoms = canvas.atoms();
        let mut energy = F::zero();
        let mut grad = vec![Vector3::zeros(); atoms.len()];
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                let p = self.params.pair(atoms[i].element, atoms[j].element)?;
                let rij = atoms[i].position - atoms[j].position;
                let r = rij.norm();
                energy += self.pair_energy(&p, r);
                let de_dr = self.pair_energy_derivative(&p, r);
                let dir = rij.scale(de_dr / r);
                grad[i] += dir;
                grad[j] -= dir;
            }
        }
        Ok((energy, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::Rigid;
    use rand::{Rng, SeedableRng};

    fn backend() -> MorseBackend<f64> {
        MorseBackend::with_default_params()
    }

    fn h2_at(r: f64) -> Canvas<f64> {
        let mut c = Canvas::empty();
        c.push(Element::H, Vector3::zeros());
        c.push(Element::H, Vector3::new(r, 0.0, 0.0));
        c
    }

    #[test]
    fn single_atom_has_zero_energy() {
        let b = backend();
        let mut c = Canvas::empty();
        c.push(Element::H, Vector3::zeros());
        assert_eq!(b.evaluate(&c).unwrap(), 0.0);
        assert_eq!(b.evaluate(&Canvas::empty()).unwrap(), 0.0);
        assert_eq!(b.atomic_energy(Element::O).unwrap(), 0.0);
    }

    #[test]
    fn dimer_minimum_and_dissociation() {
        let b = backend();
        let p = b.params().pair(Element::H, Element::H).unwrap();
        assert!((b.evaluate(&h2_at(p.equilibrium)).unwrap() + p.well_depth).abs() < 1e-12);
        assert!(b.evaluate(&h2_at(1e6)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn missing_pair_is_an_error() {
        let b = backend();
        let mut c = Canvas::empty();
        c.push(Element::H, Vector3::zeros());
        c.push(Element::from_atomic_number(10).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(b.evaluate(&c), Err(EnergyError::MissingPairParams(_, _))));
    }

    #[test]
    fn energy_is_rigid_and_permutation_invariant() {
        let b = backend();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let elements = [Element::H, Element::C, Element::O, Element::N, Element::H];
        let mut canvas = Canvas::empty();
        for e in elements {
            canvas.push(
                e,
                Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
            );
        }
        let e0 = b.evaluate(&canvas).unwrap();

        let t = Rigid::from_euler(1.0, -0.5, 0.8, Vector3::new(5.0, -3.0, 2.0));
        let mut moved = Canvas::empty();
        for a in canvas.atoms() {
            moved.push(a.element, t.apply(a.position));
        }
        assert!((b.evaluate(&moved).unwrap() - e0).abs() < 1e-12);

        let mut permuted = Canvas::empty();
        for i in [4, 2, 0, 3, 1] {
            let a = canvas.atom(i);
            permuted.push(a.element, a.position);
        }
        assert!((b.evaluate(&permuted).unwrap() - e0).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let b = backend();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut canvas = Canvas::empty();
            for e in [Element::H, Element::O, Element::C, Element::H] {
                canvas.push(
                    e,
                    Vector3::new(
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                    ),
                );
            }
            let (_, grad) = b.energy_and_gradient(&canvas).unwrap();
            let h = 1e-5;
            for i in 0..canvas.len() {
                for axis in 0..3 {
                    let mut plus = canvas.clone();
                    let mut minus = canvas.clone();
                    let mut atoms_p: Vec<_> = plus.atoms().to_vec();
                    let mut atoms_m: Vec<_> = minus.atoms().to_vec();
                    atoms_p[i].position.0[axis] += h;
                    atoms_m[i].position.0[axis] -= h;
                    plus = Canvas::from_atoms(atoms_p);
                    minus = Canvas::from_atoms(atoms_m);
                    let fd =
                        (b.evaluate(&plus).unwrap() - b.evaluate(&minus).unwrap()) / (2.0 * h);
                    let an = grad[i][axis];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        ((fd - an) / denom).abs() <= 1e-6,
                        "atom {i} axis {axis}: fd={fd} analytic={an}"
                    );
                }
            }
        }
    }
}
