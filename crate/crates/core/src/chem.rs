//! Chemical domain types: elements, the canvas of placed atoms, the bag of
//! atoms still to be placed, and the deterministic MDP transition.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::vec3::Vector3;

/// Default upper bound on selectable atomic numbers.
pub const DEFAULT_E_MAX: usize = 10;

/// Symbols for atomic numbers 1..=18, enough to cover all shipped tasks.
const SYMBOLS: [&str; 18] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar",
];

/// Covalent radii in angstrom (Cordero et al.) for atomic numbers 1..=18.
const COVALENT_RADII: [f64; 18] = [
    0.31, 0.28, 1.28, 0.96, 0.84, 0.76, 0.71, 0.66, 0.57, 0.58, 1.66, 1.41, 1.21, 1.11, 1.07,
    1.05, 1.02, 1.06,
];

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ChemError {
    #[error("unknown element symbol or atomic number: {0}")]
    UnknownElement(String),
    #[error("element {0} is not in the bag")]
    ElementNotInBag(Element),
    #[error("focal index {focal} out of range for canvas of {n_atoms} atoms")]
    InvalidFocal { focal: usize, n_atoms: usize },
    #[error("formula parse error at position {position}: {message}")]
    ParseError { position: usize, message: String },
}

/// A chemical element, identified by atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);

    pub fn from_atomic_number(z: u8) -> Result<Self, ChemError> {
        if z == 0 || z as usize > SYMBOLS.len() {
            return Err(ChemError::UnknownElement(z.to_string()));
        }
        Ok(Element(z))
    }

    /// Case-insensitive symbol lookup ("h" and "H" both parse).
    pub fn from_symbol(symbol: &str) -> Result<Self, ChemError> {
        SYMBOLS
            .iter()
            .position(|s| s.eq_ignore_ascii_case(symbol))
            .map(|i| Element(i as u8 + 1))
            .ok_or_else(|| ChemError::UnknownElement(symbol.to_string()))
    }

    pub fn atomic_number(&self) -> u8 {
        self.0
    }

    pub fn symbol(&self) -> &'static str {
        SYMBOLS[self.0 as usize - 1]
    }

    /// Covalent radius in angstrom.
    pub fn covalent_radius(&self) -> f64 {
        COVALENT_RADII[self.0 as usize - 1]
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One placed atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<F> {
    pub element: Element,
    pub position: Vector3<F>,
}

/// Ordered list of placed atoms. Index 0 is the first placed (or first
/// pre-existing) atom; insertion order is preserved so focal indices are
/// stable across the episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Canvas<F> {
    atoms: Vec<Atom<F>>,
}

impl<F: Scalar> Canvas<F> {
    pub fn empty() -> Self {
        Canvas { atoms: Vec::new() }
    }

    pub fn from_atoms(atoms: Vec<Atom<F>>) -> Self {
        Canvas { atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom<F>] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom<F> {
        &self.atoms[i]
    }

    pub fn push(&mut self, element: Element, position: Vector3<F>) {
        self.atoms.push(Atom { element, position });
    }

    /// A copy with one more atom appended.
    pub fn with_atom(&self, element: Element, position: Vector3<F>) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.push(Atom { element, position });
        Canvas { atoms }
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<F>> + '_ {
        self.atoms.iter().map(|a| a.position)
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        self.atoms.iter().map(|a| a.element)
    }

    /// Centroid of the atom positions; zero for an empty canvas.
    pub fn centroid(&self) -> Vector3<F> {
        if self.atoms.is_empty() {
            return Vector3::zeros();
        }
        let mut c = Vector3::zeros();
        for a in &self.atoms {
            c += a.position;
        }
        c.scale(F::one() / F::from_f64_c(self.atoms.len() as f64))
    }

    /// Canvas with every position shifted so the centroid is at the origin.
    pub fn centered(&self) -> Self {
        let c = self.centroid();
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { element: a.element, position: a.position - c })
            .collect();
        Canvas { atoms }
    }
}

/// Multiset of atoms still to be placed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bag {
    counts: BTreeMap<Element, u32>,
}

impl Bag {
    pub fn empty() -> Self {
        Bag::default()
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (Element, u32)>) -> Self {
        let mut bag = Bag::empty();
        for (e, m) in counts {
            if m > 0 {
                *bag.counts.entry(e).or_insert(0) += m;
            }
        }
        bag
    }

    /// Parse a Hill-style chemical formula such as `"C2H2O2"` or `"CH4O"`.
    pub fn from_formula(formula: &str) -> Result<Self, ChemError> {
        let bytes = formula.as_bytes();
        let mut counts = BTreeMap::new();
        let mut i = 0;
        while i < bytes.len() {
            if !bytes[i].is_ascii_uppercase() {
                return Err(ChemError::ParseError {
                    position: i,
                    message: format!("expected element symbol, found {:?}", bytes[i] as char),
                });
            }
            let mut end = i + 1;
            if end < bytes.len() && bytes[end].is_ascii_lowercase() {
                end += 1;
            }
            let element = Element::from_symbol(&formula[i..end])
                .map_err(|_| ChemError::ParseError {
                    position: i,
                    message: format!("unknown element symbol {:?}", &formula[i..end]),
                })?;
            i = end;
            let digits_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let count: u32 = if digits_start == i {
                1
            } else {
                formula[digits_start..i].parse().map_err(|_| ChemError::ParseError {
                    position: digits_start,
                    message: "invalid count".into(),
                })?
            };
            if count == 0 {
                return Err(ChemError::ParseError {
                    position: digits_start,
                    message: "zero count is not allowed".into(),
                });
            }
            *counts.entry(element).or_insert(0) += count;
        }
        Ok(Bag { counts })
    }

    /// Render as a formula string with elements in atomic-number order.
    /// Hill-order formula: carbon first, then hydrogen, then the rest
    /// alphabetically (all alphabetical when there is no carbon).
    pub fn to_formula(&self) -> String {
        let mut entries: Vec<(&str, u32)> =
            self.counts.iter().map(|(e, m)| (e.symbol(), *m)).collect();
        let has_carbon = entries.iter().any(|(s, _)| *s == "C");
        entries.sort_by_key(|(s, _)| {
            let rank = match (*s, has_carbon) {
                ("C", true) => 0,
                ("H", true) => 1,
                _ => 2,
            };
            (rank, *s)
        });
        let mut out = String::new();
        for (s, m) in entries {
            out.push_str(s);
            if m > 1 {
                out.push_str(&m.to_string());
            }
        }
        out
    }

    pub fn count(&self, element: Element) -> u32 {
        self.counts.get(&element).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn contains(&self, element: Element) -> bool {
        self.count(element) > 0
    }

    pub fn elements(&self) -> impl Iterator<Item = (Element, u32)> + '_ {
        self.counts.iter().map(|(e, m)| (*e, *m))
    }

    /// A copy with one atom of `element` removed.
    pub fn without(&self, element: Element) -> Result<Self, ChemError> {
        let mut counts = self.counts.clone();
        match counts.get_mut(&element) {
            Some(m) if *m > 0 => {
                *m -= 1;
                if *m == 0 {
                    counts.remove(&element);
                }
                Ok(Bag { counts })
            }
            _ => Err(ChemError::ElementNotInBag(element)),
        }
    }
}

impl fmt::Display for Bag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_formula())
    }
}

/// MDP state: the canvas built so far plus the bag of remaining atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct State<F> {
    pub canvas: Canvas<F>,
    pub bag: Bag,
}

impl<F: Scalar> State<F> {
    pub fn new(canvas: Canvas<F>, bag: Bag) -> Self {
        State { canvas, bag }
    }

    /// A state is terminal when no atoms remain to be placed. Tasks with
    /// bag refills extend this at the environment level.
    pub fn is_terminal(&self) -> bool {
        self.bag.is_empty()
    }
}

/// Placement action. Components beyond the canvas arity are carried but
/// unused: `angle_alpha` needs at least 2 atoms on the canvas,
/// `abs_dihedral_psi` and `kappa` at least 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action<F> {
    /// Index of the focal atom; ignored when the canvas is empty.
    pub focal: usize,
    pub element: Element,
    /// Distance from the focal atom, in angstrom.
    pub distance_d: F,
    /// Angle at the new atom between the focal atom and its nearest
    /// neighbor, in [0, pi].
    pub angle_alpha: F,
    /// Absolute dihedral angle in [0, pi].
    pub abs_dihedral_psi: F,
    /// Sign of the dihedral angle: +1 or -1.
    pub kappa: i8,
}

/// Deterministic MDP transition: append the placed atom and take one atom
/// of its element out of the bag. Inputs are left unmodified.
pub fn transition<F: Scalar>(
    state: &State<F>,
    action: &Action<F>,
    resolved_position: Vector3<F>,
) -> Result<State<F>, ChemError> {
    if !state.canvas.is_empty() && action.focal >= state.canvas.len() {
        return Err(ChemError::InvalidFocal { focal: action.focal, n_atoms: state.canvas.len() });
    }
    let bag = state.bag.without(action.element)?;
    let canvas = state.canvas.with_atom(action.element, resolved_position);
    Ok(State { canvas, bag })
}
