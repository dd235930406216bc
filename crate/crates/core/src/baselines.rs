//! Optimal-return baselines via multi-start relaxation, and structure
//! quality metrics (validity, RMSD after relaxation, diversity).
//!
//! Baseline returns use the same sign convention as the environment:
//! larger is better, and a complete episode's return equals
//! -(E(C_T) - E(C_0) - sum E(e_i)) minus any distance penalties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{Bag, Element};
use crate::energy::{EnergyError, GradientBackend};
use crate::geometry::kabsch_rmsd;
use crate::vec3::Rigid;
use crate::{Canvas, Real, Vec3};

/// Gradient max-norm below which a structure counts as relaxed.
pub const RELAX_TOL: Real = 1e-6;
pub const RELAX_MAX_ITERS: usize = 5000;
/// Half-width of the cube initial positions are drawn from.
const INIT_BOX: Real = 1.5;
/// Initial placements closer than this are resampled.
const INIT_MIN_DIST: Real = 0.6;

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub relaxed_canvas: Canvas,
    pub energy: Real,
    pub iterations: usize,
    pub converged: bool,
    pub rmsd_from_start: Real,
}

/// Outcome of a multi-start baseline search.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub bag: Bag,
    pub optimal_return: Real,
    pub best_canvas: Canvas,
    pub restarts: usize,
    pub seed: u64,
}

/// Objective for relaxation: backend energy plus, for atoms at index
/// `penalty_from` onward, a distance-from-origin penalty `rho * |x|`.
fn objective(
    backend: &dyn GradientBackend<Real>,
    canvas: &Canvas,
    penalty_from: usize,
    rho: Real,
) -> Result<(Real, Vec<Vec3>), EnergyError> {
    let (mut e, mut grad) = backend.energy_and_gradient(canvas)?;
    if rho != 0.0 {
        for (i, p) in canvas.positions().enumerate().skip(penalty_from) {
            let r = p.norm();
            e += rho * r;
            if r > 1e-12 {
                grad[i] = grad[i] + p.scale(rho / r);
            }
        }
    }
    Ok((e, grad))
}

fn relax_objective(
    backend: &dyn GradientBackend<Real>,
    canvas: &Canvas,
    frozen_prefix: usize,
    rho: Real,
) -> Result<OptimizationResult, EnergyError> {
    // Atoms before `frozen_prefix` (the solvation solute) never move and
    // never feel the distance penalty, matching what an agent could reach.
    let movable_norm = |grad: &[Vec3]| -> Real {
        grad.iter().skip(frozen_prefix).map(|g| g.norm()).fold(0.0, Real::max)
    };
    let start = canvas.clone();
    let mut current = canvas.clone();
    let (mut energy, mut grad) = objective(backend, &current, frozen_prefix, rho)?;
    let mut iterations = 0;
    let mut converged = movable_norm(&grad) <= RELAX_TOL;
    let mut step = 0.05;

    while !converged && iterations < RELAX_MAX_ITERS {
        // Steepest descent with a step length carried between iterations
        // and halved until the energy actually decreases.
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = Canvas::empty();
            for (i, (a, g)) in current.atoms().iter().zip(&grad).enumerate() {
                if i < frozen_prefix {
                    trial.push(a.element, a.position);
                } else {
                    trial.push(a.element, a.position - g.scale(step));
                }
            }
            let (e_trial, g_trial) = objective(backend, &trial, frozen_prefix, rho)?;
            if e_trial < energy {
                current = trial;
                energy = e_trial;
                grad = g_trial;
                accepted = true;
                step *= 1.6;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break; // line search stalled; report best-so-far
        }
        converged = movable_norm(&grad) <= RELAX_TOL;
    }

    let rmsd_from_start = if start.len() >= 1 {
        kabsch_rmsd(&start, &current).unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(OptimizationResult {
        relaxed_canvas: current,
        energy,
        iterations,
        converged,
        rmsd_from_start,
    })
}

/// Local structure optimization until the gradient max-norm falls below
/// `RELAX_TOL` or the iteration budget runs out.
pub fn relax(
    backend: &dyn GradientBackend<Real>,
    canvas: &Canvas,
) -> Result<OptimizationResult, EnergyError> {
    if canvas.len() < 2 {
        let energy = if canvas.is_empty() { 0.0 } else { backend.evaluate(canvas)? };
        return Ok(OptimizationResult {
            relaxed_canvas: canvas.clone(),
            energy,
            iterations: 0,
            converged: true,
            rmsd_from_start: 0.0,
        });
    }
    relax_objective(backend, canvas, 0, 0.0)
}

/// Draw positions uniformly in the init box, resampling any draw closer
/// than `INIT_MIN_DIST` to an already placed atom.
fn random_positions<R: Rng>(existing: &Canvas, count: usize, rng: &mut R) -> Vec<Vec3> {
    let mut placed: Vec<Vec3> = existing.positions().collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pos = Vec3::zeros();
        for _ in 0..1000 {
            pos = Vec3::new(
                rng.gen_range(-INIT_BOX..INIT_BOX),
                rng.gen_range(-INIT_BOX..INIT_BOX),
                rng.gen_range(-INIT_BOX..INIT_BOX),
            );
            if placed.iter().all(|p| p.distance(&pos) >= INIT_MIN_DIST) {
                break;
            }
        }
        placed.push(pos);
        out.push(pos);
    }
    out
}

/// Best return for building the bag from an empty canvas:
/// max over restarts of -(E(C*) - sum E(e_i)).
pub fn optimal_return_single(
    backend: &dyn GradientBackend<Real>,
    bag: &Bag,
    restarts: usize,
    seed: u64,
) -> Result<BaselineRun, EnergyError> {
    assert!(restarts >= 1);
    let elements: Vec<Element> = bag
        .elements()
        .flat_map(|(e, m)| std::iter::repeat(e).take(m as usize))
        .collect();
    let atomic_sum: Real =
        elements.iter().map(|e| backend.atomic_energy(*e)).sum::<Result<Real, _>>()?;

    let results: Vec<Result<(Real, Canvas), EnergyError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..restarts)
            .map(|i| {
                let elements = &elements;
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                    let mut canvas = Canvas::empty();
                    for (e, p) in elements
                        .iter()
                        .zip(random_positions(&Canvas::empty(), elements.len(), &mut rng))
                    {
                        canvas.push(*e, p);
                    }
                    let relaxed = relax(backend, &canvas)?;
                    Ok((relaxed.energy, relaxed.relaxed_canvas))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("restart panicked")).collect()
    });

    // Deterministic reduction: best value, earliest restart on ties.
    let mut best: Option<(Real, Canvas)> = None;
    for r in results {
        let (energy, canvas) = r?;
        let ret = -(energy - atomic_sum);
        if best.as_ref().is_none_or(|(b, _)| ret > *b) {
            best = Some((ret, canvas));
        }
    }
    let (optimal_return, best_canvas) = best.unwrap();
    Ok(BaselineRun { bag: bag.clone(), optimal_return, best_canvas, restarts, seed })
}

/// Rigid water (O-H 0.9572 A, H-O-H 104.5 deg) with the O at the origin.
fn water_template() -> Vec<(Element, Vec3)> {
    let r = 0.9572;
    let half = (104.5f64).to_radians() / 2.0;
    vec![
        (Element::O, Vec3::zeros()),
        (Element::H, Vec3::new(r * half.sin(), 0.0, r * half.cos())),
        (Element::H, Vec3::new(-r * half.sin(), 0.0, r * half.cos())),
    ]
}

/// Best solvation return over randomly generated solute + n-water
/// clusters, with the distance penalty inside the relaxation objective.
pub fn optimal_return_solvation(
    backend: &dyn GradientBackend<Real>,
    solute: &Canvas,
    n: u32,
    rho: Real,
    clusters: usize,
    seed: u64,
) -> Result<BaselineRun, EnergyError> {
    let bag = Bag::from_formula("H2O").unwrap();
    if n == 0 {
        return Ok(BaselineRun {
            bag,
            optimal_return: 0.0,
            best_canvas: solute.centered(),
            restarts: clusters,
            seed,
        });
    }
    assert!(clusters >= 1);
    let solute = solute.centered();
    let e_solute = if solute.is_empty() { 0.0 } else { backend.evaluate(&solute)? };
    let mut atomic_sum = 0.0;
    for _ in 0..n {
        for (e, _) in water_template() {
            atomic_sum += backend.atomic_energy(e)?;
        }
    }

    let mut best: Option<(Real, Canvas)> = None;
    for c in 0..clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let mut canvas = solute.clone();
        for _ in 0..n {
            // Random rigid placement of one water; retry on overlap.
            for _attempt in 0..1000 {
                let t = Rigid::from_euler(
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    Vec3::new(
                        rng.gen_range(-2.0 * INIT_BOX..2.0 * INIT_BOX),
                        rng.gen_range(-2.0 * INIT_BOX..2.0 * INIT_BOX),
                        rng.gen_range(-2.0 * INIT_BOX..2.0 * INIT_BOX),
                    ),
                );
                let placed: Vec<(Element, Vec3)> = water_template()
                    .into_iter()
                    .map(|(e, p)| (e, t.apply(p)))
                    .collect();
                let clear = placed.iter().all(|(_, p)| {
                    canvas.positions().all(|q| q.distance(p) >= INIT_MIN_DIST)
                });
                if clear {
                    for (e, p) in placed {
                        canvas.push(e, p);
                    }
                    break;
                }
            }
        }
        let relaxed = relax_objective(backend, &canvas, solute.len(), rho)?;
        let e_final = backend.evaluate(&relaxed.relaxed_canvas)?;
        let penalty: Real = relaxed
            .relaxed_canvas
            .positions()
            .skip(solute.len())
            .map(|p| rho * p.norm())
            .sum();
        let ret = -(e_final - e_solute - atomic_sum) - penalty;
        if best.as_ref().is_none_or(|(b, _)| ret > *b) {
            best = Some((ret, relaxed.relaxed_canvas));
        }
    }
    let (optimal_return, best_canvas) = best.unwrap();
    Ok(BaselineRun { bag, optimal_return, best_canvas, restarts: clusters, seed })
}

/// Maximum bond count per element, indexed by atomic number - 1.
const MAX_DEGREE: [usize; 10] = [1, 0, 1, 2, 3, 4, 3, 2, 1, 0];
/// A pair closer than this multiple of the reference distance is bonded.
const BOND_FACTOR: Real = 1.2;
/// Reference distances are floored here, matching the floor applied to
/// the surrogate's equilibrium separations.
const BOND_REF_FLOOR: Real = 1.0;
/// Bond lengths are rounded to this resolution for the diversity key.
const BOND_LEN_RESOLUTION: Real = 0.05;

/// Undirected bond list under the covalent-radius heuristic.
pub fn bonds(canvas: &Canvas) -> Vec<(usize, usize, Real)> {
    let atoms = canvas.atoms();
    let mut out = Vec::new();
    for i in 0..atoms.len() {
        for j in (i + 1)..atoms.len() {
            let d = atoms[i].position.distance(&atoms[j].position);
            let radius_sum =
                atoms[i].element.covalent_radius() + atoms[j].element.covalent_radius();
            let cutoff = BOND_FACTOR * radius_sum.max(BOND_REF_FLOOR);
            if d < cutoff {
                out.push((i, j, d));
            }
        }
    }
    out
}

/// A structure is valid when its bond graph is a single connected
/// component and no atom exceeds its maximum degree.
pub fn is_valid_structure(canvas: &Canvas) -> bool {
    let n = canvas.len();
    if n == 0 {
        return false;
    }
    let bond_list = bonds(canvas);
    let mut degree = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in &bond_list {
        degree[i] += 1;
        degree[j] += 1;
        adj[i].push(j);
        adj[j].push(i);
    }
    for (a, &d) in canvas.atoms().iter().zip(&degree) {
        let z = a.element.atomic_number() as usize;
        let limit = MAX_DEGREE.get(z - 1).copied().unwrap_or(0);
        if d > limit || d == 0 && n > 1 {
            return false;
        }
    }
    // Connectivity by breadth-first search from atom 0.
    let mut seen = vec![false; n];
    let mut queue = vec![0usize];
    seen[0] = true;
    while let Some(i) = queue.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Order-insensitive fingerprint of the bond graph: the sorted
/// (element, degree) multiset plus sorted rounded bond lengths.
pub fn diversity_key(canvas: &Canvas) -> Vec<(u8, usize, i64)> {
    let bond_list = bonds(canvas);
    let mut degree = vec![0usize; canvas.len()];
    for &(i, j, _) in &bond_list {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut key: Vec<(u8, usize, i64)> = canvas
        .atoms()
        .iter()
        .zip(&degree)
        .map(|(a, &d)| (a.element.atomic_number(), d, -1))
        .collect();
    for &(_, _, d) in &bond_list {
        key.push((0, 0, (d / BOND_LEN_RESOLUTION).round() as i64));
    }
    key.sort();
    key
}

/// Quality metrics over a batch of generated structures.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    /// Fraction of structures passing the validity heuristic.
    pub validity: Real,
    /// Median Kabsch RMSD between each valid structure and its relaxed
    /// counterpart; None when nothing is valid.
    pub median_rmsd: Option<Real>,
    /// Number of distinct bond-graph fingerprints in the batch.
    pub diversity: usize,
}

pub fn assess_structures(
    canvases: &[Canvas],
    backend: &dyn GradientBackend<Real>,
) -> Result<Assessment, EnergyError> {
    assert!(!canvases.is_empty());
    let mut valid = 0usize;
    let mut rmsds = Vec::new();
    let mut keys = std::collections::BTreeSet::new();
    for c in canvases {
        keys.insert(diversity_key(c));
        if is_valid_structure(c) {
            valid += 1;
            let relaxed = relax(backend, c)?;
            if c.len() >= 2 {
                rmsds.push(kabsch_rmsd(c, &relaxed.relaxed_canvas).unwrap_or(0.0));
            } else {
                rmsds.push(0.0);
            }
        }
    }
    rmsds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_rmsd = if rmsds.is_empty() {
        None
    } else if rmsds.len() % 2 == 1 {
        Some(rmsds[rmsds.len() / 2])
    } else {
        Some(0.5 * (rmsds[rmsds.len() / 2 - 1] + rmsds[rmsds.len() / 2]))
    };
    Ok(Assessment {
        validity: valid as Real / canvases.len() as Real,
        median_rmsd,
        diversity: keys.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{EnergyBackend, MorseBackend};

    fn backend() -> MorseBackend<Real> {
        MorseBackend::with_default_params()
    }

    #[test]
    fn relax_finds_the_dimer_minimum() {
        let b = backend();
        let pair = b.params().pair(Element::H, Element::H).unwrap();
        let mut c = Canvas::empty();
        c.push(Element::H, Vec3::zeros());
        c.push(Element::H, Vec3::new(0.9, 0.0, 0.0));
        let r = relax(&b, &c).unwrap();
        assert!(r.converged);
        let positions: Vec<Vec3> = r.relaxed_canvas.positions().collect();
        let sep = positions[0].distance(&positions[1]);
        assert!((sep - pair.equilibrium).abs() < 1e-5, "sep {sep}");
        assert!((r.energy + pair.well_depth).abs() < 1e-9);
    }

    #[test]
    fn relax_leaves_a_relaxed_structure_alone() {
        let b = backend();
        let pair = b.params().pair(Element::H, Element::H).unwrap();
        let mut c = Canvas::empty();
        c.push(Element::H, Vec3::zeros());
        c.push(Element::H, Vec3::new(pair.equilibrium, 0.0, 0.0));
        let r = relax(&b, &c).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.rmsd_from_start <= 1e-6);
    }

    #[test]
    fn relax_never_raises_the_energy() {
        let b = backend();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let mut c = Canvas::empty();
            for e in [Element::H, Element::O, Element::H, Element::C] {
                let ps = random_positions(&c, 1, &mut rng);
                c.push(e, ps[0]);
            }
            let e0 = b.evaluate(&c).unwrap();
            let r = relax(&b, &c).unwrap();
            assert!(r.energy <= e0 + 1e-12);
        }
    }

    #[test]
    fn dimer_baseline_is_the_well_depth() {
        let b = backend();
        let pair = b.params().pair(Element::H, Element::H).unwrap();
        let run =
            optimal_return_single(&b, &Bag::from_formula("H2").unwrap(), 4, 0).unwrap();
        assert!((run.optimal_return - pair.well_depth).abs() < 1e-9);
    }

    #[test]
    fn single_atom_bag_has_zero_return() {
        let b = backend();
        let run = optimal_return_single(&b, &Bag::from_formula("O").unwrap(), 2, 0).unwrap();
        assert_eq!(run.optimal_return, 0.0);
    }

    #[test]
    fn baseline_is_reproducible_and_monotone_in_restarts() {
        let b = backend();
        let bag = Bag::from_formula("H2O").unwrap();
        let a1 = optimal_return_single(&b, &bag, 8, 5).unwrap();
        let a2 = optimal_return_single(&b, &bag, 8, 5).unwrap();
        assert_eq!(a1.optimal_return, a2.optimal_return);
        let more = optimal_return_single(&b, &bag, 16, 5).unwrap();
        assert!(more.optimal_return >= a1.optimal_return - 1e-12);
    }

    #[test]
    fn solvation_penalty_never_helps() {
        let b = backend();
        let mut solute = Canvas::empty();
        solute.push(Element::O, Vec3::zeros());
        let r0 = optimal_return_solvation(&b, &solute, 1, 0.0, 3, 9).unwrap();
        let r1 = optimal_return_solvation(&b, &solute, 1, 0.05, 3, 9).unwrap();
        assert!(r1.optimal_return <= r0.optimal_return + 1e-9);
    }

    #[test]
    fn solvation_with_nothing_to_place_returns_zero() {
        let b = backend();
        let r = optimal_return_solvation(&b, &Canvas::empty(), 0, 0.01, 3, 0).unwrap();
        assert_eq!(r.optimal_return, 0.0);
    }

    #[test]
    fn relaxed_dimer_assesses_cleanly() {
        let b = backend();
        let pair = b.params().pair(Element::H, Element::H).unwrap();
        let mut c = Canvas::empty();
        c.push(Element::H, Vec3::zeros());
        c.push(Element::H, Vec3::new(pair.equilibrium, 0.0, 0.0));
        let a = assess_structures(&[c], &b).unwrap();
        assert_eq!(a.validity, 1.0);
        assert!(a.median_rmsd.unwrap() <= 1e-5);
        assert_eq!(a.diversity, 1);
    }

    #[test]
    fn disconnected_fragments_are_invalid() {
        let mut c = Canvas::empty();
        c.push(Element::H, Vec3::zeros());
        c.push(Element::H, Vec3::new(0.74, 0.0, 0.0));
        c.push(Element::O, Vec3::new(8.0, 0.0, 0.0));
        assert!(!is_valid_structure(&c));
    }

    #[test]
    fn overbonded_hydrogen_is_invalid() {
        let mut c = Canvas::empty();
        c.push(Element::H, Vec3::zeros());
        c.push(Element::H, Vec3::new(0.74, 0.0, 0.0));
        c.push(Element::H, Vec3::new(-0.74, 0.0, 0.0));
        assert!(!is_valid_structure(&c));
    }

    #[test]
    fn duplicates_and_permutations_do_not_add_diversity() {
        let b = backend();
        let mut c1 = Canvas::empty();
        c1.push(Element::O, Vec3::zeros());
        c1.push(Element::H, Vec3::new(0.97, 0.0, 0.0));
        let mut c2 = Canvas::empty();
        c2.push(Element::H, Vec3::new(5.0, 2.0, 0.97));
        c2.push(Element::O, Vec3::new(5.0, 2.0, 0.0));
        let a = assess_structures(&[c1.clone(), c1, c2], &b).unwrap();
        assert_eq!(a.diversity, 1);
    }

    #[test]
    fn assessment_is_permutation_invariant() {
        let b = backend();
        let mut c1 = Canvas::empty();
        c1.push(Element::O, Vec3::zeros());
        c1.push(Element::H, Vec3::new(0.97, 0.0, 0.0));
        let mut c2 = Canvas::empty();
        c2.push(Element::H, Vec3::zeros());
        c2.push(Element::H, Vec3::new(0.74, 0.0, 0.0));
        let a = assess_structures(&[c1.clone(), c2.clone()], &b).unwrap();
        let r = assess_structures(&[c2, c1], &b).unwrap();
        assert_eq!(a.validity, r.validity);
        assert_eq!(a.diversity, r.diversity);
    }
}
