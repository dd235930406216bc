//! Acceptance gate for the library: one test per criterion, run with
//! `cargo test --test acceptance`. The learning criteria train real
//! policies against the built-in surrogate backend and compare to the
//! committed multi-start baselines, so this suite takes several minutes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use molgen::chem::Bag;
use molgen::energy::{reward_delta_e, EnergyBackend, MorseBackend};
use molgen::env::{MolEnv, StepReason, TaskConfig, TaskKind};
use molgen::geometry::{
    internal_from_position, local_frame, position_from_internal,
    position_from_internal_checked, LocalFrame,
};
use molgen::nn::graph::{Graph, NodeId};
use molgen::nn::params::ParamStore;
use molgen::nn::schnet::{SchNet, SchNetConfig};
use molgen::policy::{Policy, PolicyConfig};
use molgen::ppo::{evaluate_episode, TrainConfig, Trainer};
use molgen::vec3::Rigid;
use molgen::{Action, Canvas, Element, Real, State, Vec3};

const CANDIDATE_ELEMENTS: [Element; 5] =
    [Element::H, Element::C, Element::N, Element::O, Element::F];

fn random_canvas(rng: &mut ChaCha8Rng, n: usize) -> Canvas {
    // Rejection keeps pair distances above 0.7 A so Morse energies and
    // SchNet features stay in a well-conditioned regime.
    let mut canvas = Canvas::empty();
    while canvas.len() < n {
        let p = Vec3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        if canvas.positions().all(|q| q.distance(&p) > 0.7) {
            let e = CANDIDATE_ELEMENTS[rng.gen_range(0..CANDIDATE_ELEMENTS.len())];
            canvas.push(e, p);
        }
    }
    canvas
}

fn random_rigid(rng: &mut ChaCha8Rng) -> Rigid<Real> {
    let t = Vec3::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
    );
    Rigid::from_euler(
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        t,
    )
}

fn transformed(canvas: &Canvas, rigid: &Rigid<Real>) -> Canvas {
    Canvas::from_atoms(
        canvas
            .atoms()
            .iter()
            .map(|a| molgen::chem::Atom { element: a.element, position: rigid.apply(a.position) })
            .collect(),
    )
}

/// Criterion 1: SchNet features, critic values, and step rewards are
/// unchanged by rigid transforms; resolved placements move with the frame.
#[test]
fn criterion_01_invariance_under_rigid_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let encoder = SchNet::new(
        &mut store,
        "enc",
        SchNetConfig { n_interactions: 2, n_filters: 16, n_atom_basis: 16, n_rbf: 8, ..Default::default() },
        &mut rng,
    );
    let mut pstore = ParamStore::new();
    let policy = Policy::new(
        &mut pstore,
        PolicyConfig {
            encoder: SchNetConfig { n_interactions: 2, n_filters: 16, n_atom_basis: 16, n_rbf: 8, ..Default::default() },
            bag_hidden: 32,
            bag_dim: 8,
            head_hidden: 32,
            ..Default::default()
        },
        &mut rng,
    );
    let backend: MorseBackend<Real> = MorseBackend::with_default_params();
    let bag = Bag::from_formula("CH2O").unwrap();

    let mut covariance_checked = 0usize;
    for case in 0..200 {
        let n = 2 + (case % 11);
        let canvas = random_canvas(&mut rng, n);
        let rigid = random_rigid(&mut rng);
        let moved = transformed(&canvas, &rigid);

        let mut g = Graph::new();
        let feat = encoder.forward(&store, &mut g, &canvas);
        let a = g.value(feat).data.clone();
        let mut g2 = Graph::new();
        let feat2 = encoder.forward(&store, &mut g2, &moved);
        let b = g2.value(feat2).data.clone();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6, "SchNet features changed under rigid transform");
        }

        let v1 = policy.value(&pstore, &State::new(canvas.clone(), bag.clone())).unwrap();
        let v2 = policy.value(&pstore, &State::new(moved.clone(), bag.clone())).unwrap();
        assert!((v1 - v2).abs() < 1e-6, "critic value changed under rigid transform");

        // Step reward for appending one atom at matching positions.
        let p = Vec3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let state = State::new(canvas.clone(), bag.clone());
        let state_m = State::new(moved.clone(), bag.clone());
        let r1 = reward_delta_e(&backend, &state, &canvas.with_atom(Element::H, p), Element::H)
            .unwrap();
        let r2 = reward_delta_e(
            &backend,
            &state_m,
            &moved.with_atom(Element::H, rigid.apply(p)),
            Element::H,
        )
        .unwrap();
        assert!((r1 - r2).abs() < 1e-6, "step reward changed under rigid transform");

        // Positional covariance needs a full three-point frame; a two-atom
        // canvas leaves the dihedral reference arbitrary.
        if n >= 3 {
            let focal = rng.gen_range(0..n);
            let frame = local_frame(&canvas, focal).unwrap();
            if frame.arity == 3 && frame_is_well_conditioned(&frame) {
                let d = rng.gen_range(0.8..1.6);
                let alpha = rng.gen_range(0.3..std::f64::consts::PI - 0.3);
                let psi = rng.gen_range(0.1..std::f64::consts::PI - 0.1);
                let kappa = if rng.gen_bool(0.5) { 1 } else { -1 };
                let x = position_from_internal(&frame, d, alpha, psi, kappa).unwrap();
                let frame_m = local_frame(&moved, focal).unwrap();
                let x_m = position_from_internal(&frame_m, d, alpha, psi, kappa).unwrap();
                let want = rigid.apply(x);
                assert!(
                    want.distance(&x_m) < 1e-6,
                    "resolved position not covariant: |R x + t - x'| = {}",
                    want.distance(&x_m)
                );
                covariance_checked += 1;
            }
        }
    }
    assert!(covariance_checked >= 100, "too few covariance cases: {covariance_checked}");
}

fn frame_is_well_conditioned(frame: &LocalFrame<Real>) -> bool {
    let u = frame.neighbor1_position - frame.focal_position;
    let w = frame.neighbor2_position - frame.focal_position;
    let cross = u.cross(&w);
    cross.norm() > 1e-2 * u.norm() * w.norm()
}

/// Criterion 2: the telescoped per-step rewards of any build order sum to
/// the negative interaction energy of the final structure.
#[test]
fn criterion_02_return_is_independent_of_build_order() {
    let backend: MorseBackend<Real> = MorseBackend::with_default_params();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let n = rng.gen_range(2..=8);
        let canvas = random_canvas(&mut rng, n);
        let e_final = backend.evaluate(&canvas).unwrap();
        let atomic_sum: Real = canvas
            .elements()
            .map(|e| backend.atomic_energy(e).unwrap())
            .sum();
        let expected = -(e_final - atomic_sum);

        for _ in 0..10 {
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut built = Canvas::empty();
            let mut total = 0.0;
            for &i in &order {
                let atom = canvas.atom(i);
                let bag = Bag::from_counts([(atom.element, 1)]);
                let state = State::new(built.clone(), bag);
                let next = built.with_atom(atom.element, atom.position);
                total += reward_delta_e(&backend, &state, &next, atom.element).unwrap();
                built = next;
            }
            assert!(
                (total - expected).abs() < 1e-9,
                "order-dependent return: {total} vs {expected}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: finite-difference gradient oracle.

/// Central finite differences against the tape for a scalar-valued graph.
/// `build` must construct the same graph from the current store contents.
fn fd_check(
    label: &str,
    store: &mut ParamStore<Real>,
    probes: usize,
    rng: &mut ChaCha8Rng,
    build: &dyn Fn(&mut Graph<Real>, &ParamStore<Real>) -> NodeId,
) {
    let eval = |store: &ParamStore<Real>| -> Real {
        let mut g = Graph::new();
        let out = build(&mut g, store);
        g.scalar(out)
    };
    store.zero_grad();
    {
        let mut g = Graph::new();
        let out = build(&mut g, store);
        g.backward(out, 1.0, store);
    }
    let ids: Vec<_> = store.ids().collect();
    for _ in 0..probes {
        let id = ids[rng.gen_range(0..ids.len())];
        let len = store.get(id).value.len();
        let i = rng.gen_range(0..len);
        let x0 = store.get(id).value[i];
        let h = 1e-5 * x0.abs().max(1.0);
        store.value_mut(id)[i] = x0 + h;
        let f_plus = eval(store);
        store.value_mut(id)[i] = x0 - h;
        let f_minus = eval(store);
        store.value_mut(id)[i] = x0;
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let analytic = store.grad(id)[i];
        let denom = numeric.abs().max(analytic.abs());
        if denom < 1e-8 {
            continue;
        }
        let rel = (numeric - analytic).abs() / denom;
        assert!(
            rel <= 1e-5,
            "{label}: gradient mismatch at {}[{i}]: fd {numeric} vs tape {analytic} (rel {rel})",
            store.get(id).name,
        );
    }
}

/// Random data kept away from the kinks of relu / min / clamp so central
/// differences are valid.
fn smooth_random(rng: &mut ChaCha8Rng, len: usize) -> Vec<Real> {
    (0..len)
        .map(|_| {
            let mag = rng.gen_range(0.3..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);

    // Elementwise and structural graph ops, each weighted by a fixed
    // random tensor so every entry of the op output carries a distinct
    // upstream gradient.
    type OpBuild = Box<dyn Fn(&mut Graph<Real>, &ParamStore<Real>) -> NodeId>;
    let mut check_op = |label: &str, n_params: &[(usize, usize)], op: OpBuild| {
        let mut store = ParamStore::new();
        let mut rng_local = ChaCha8Rng::seed_from_u64(333);
        for (k, &(r, c)) in n_params.iter().enumerate() {
            let data = smooth_random(&mut rng_local, r * c);
            store.add(&format!("p{k}"), r, c, data);
        }
        fd_check(label, &mut store, 8, &mut rng, &op);
    };

    let weight = |g: &mut Graph<Real>, out: NodeId, seed: u64| -> NodeId {
        let n = g.value(out).data.len();
        let (rows, cols) = (g.value(out).rows, g.value(out).cols);
        let mut wrng = ChaCha8Rng::seed_from_u64(seed);
        let w_data: Vec<Real> = (0..n).map(|_| wrng.gen_range(0.5..1.5)).collect();
        let w = g.constant(w_data, rows, cols);
        let prod = g.mul(out, w);
        g.sum_all(prod)
    };

    check_op("matmul", &[(3, 4), (4, 2)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.matmul(a, b);
        weight(g, m, 1)
    }));
    check_op("add", &[(3, 4), (3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.add(a, b);
        weight(g, m, 2)
    }));
    check_op("sub", &[(3, 4), (3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.sub(a, b);
        weight(g, m, 3)
    }));
    check_op("mul", &[(3, 4), (3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.mul(a, b);
        weight(g, m, 4)
    }));
    check_op("min", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        // Offset keeps the two arguments apart so min has no tie.
        let b = g.add_const(a, 0.25);
        let c = g.neg(a);
        let m = g.min(b, c);
        weight(g, m, 5)
    }));
    check_op("add_row_broadcast", &[(3, 4), (1, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.add_row_broadcast(a, b);
        weight(g, m, 6)
    }));
    check_op("mul_col_broadcast", &[(3, 4), (3, 1)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.mul_col_broadcast(a, b);
        weight(g, m, 7)
    }));
    check_op("repeat_rows", &[(1, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.repeat_rows(a, 3);
        weight(g, m, 8)
    }));
    check_op("scale_add_const_neg", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.scale(a, -1.7);
        let m = g.add_const(m, 0.4);
        let m = g.neg(m);
        weight(g, m, 9)
    }));
    check_op("relu", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.relu(a);
        weight(g, m, 10)
    }));
    check_op("tanh", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.tanh(a);
        weight(g, m, 11)
    }));
    check_op("exp", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.exp(a);
        weight(g, m, 12)
    }));
    check_op("ssp", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.ssp(a);
        weight(g, m, 13)
    }));
    check_op("clamp_const", &[(3, 4)], Box::new(move |g, s| {
        // Values lie in (0.3, 1.5) by construction; bounds at 0.1 and 1.2
        // leave every entry at least 0.2 from a clamp kink.
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.clamp_const(a, 0.1, 1.2);
        weight(g, m, 14)
    }));
    check_op("sum_rows", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.sum_rows(a);
        weight(g, m, 15)
    }));
    check_op("row_entry", &[(3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let r = g.row(a, 1);
        let e = g.entry(a, 2, 3);
        let rw = weight(g, r, 16);
        g.add(rw, e)
    }));
    check_op("gather_rows", &[(4, 3)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.gather_rows(a, vec![2, 0, 3, 1, 2]);
        weight(g, m, 17)
    }));
    check_op("segment_sum", &[(5, 3)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.segment_sum(a, vec![0, 1, 1, 2, 0], 3);
        weight(g, m, 18)
    }));
    check_op("concat_cols_reshape", &[(3, 2), (3, 4)], Box::new(move |g, s| {
        let a = g.param(s, s.id_of("p0").unwrap());
        let b = g.param(s, s.id_of("p1").unwrap());
        let m = g.concat_cols(a, b);
        let m = g.reshape(m, 2, 9);
        weight(g, m, 19)
    }));
    check_op("masked_log_softmax", &[(1, 6)], Box::new(move |g, s| {
        // Masked entries hold a large negative sentinel; summing them
        // would drown the finite difference, so weight only live columns.
        let a = g.param(s, s.id_of("p0").unwrap());
        let m = g.masked_log_softmax(a, vec![true, false, true, true, false, true]);
        let mut wrng = ChaCha8Rng::seed_from_u64(20);
        let mut out = None;
        for c in [0usize, 2, 3, 5] {
            let e = g.entry(m, 0, c);
            let t = g.scale(e, wrng.gen_range(0.5..1.5));
            out = Some(match out {
                None => t,
                Some(acc) => g.add(acc, t),
            });
        }
        out.unwrap()
    }));

    // Full per-sample PPO loss through the policy, over states covering
    // every head arity (empty-canvas focal skip, 1 and 2 continuous
    // components, and the dihedral-sign head at three atoms).
    let policy_cfg = PolicyConfig {
        encoder: SchNetConfig { n_interactions: 1, n_filters: 8, n_atom_basis: 8, n_rbf: 5, ..Default::default() },
        bag_hidden: 8,
        bag_dim: 4,
        head_hidden: 8,
        ..Default::default()
    };
    let mut pstore = ParamStore::new();
    let policy = Policy::new(&mut pstore, policy_cfg, &mut rng);
    let bag = Bag::from_formula("CH3O").unwrap();
    for n_atoms in [1usize, 2, 4] {
        let canvas = random_canvas(&mut rng, n_atoms);
        let state = State::new(canvas, bag.clone());
        let sampled = policy.act(&pstore, &state, &mut rng, false).unwrap();
        let action = sampled.action.clone();
        // An old log-prob slightly below the new one puts the ratio near
        // 1.05: inside the clip band and away from the min tie at 1.
        let lp_old = sampled.log_prob - 0.05;
        let advantage = 0.7;
        let ret = -0.3;
        let state_c = state.clone();
        let policy_ref = &policy;
        fd_check(
            &format!("ppo_loss_{n_atoms}_atoms"),
            &mut pstore,
            40,
            &mut rng.clone(),
            &move |g, s| {
                let eval = policy_ref.evaluate_action(s, g, &state_c, &action).unwrap();
                let lp_old_node = g.scalar_const(lp_old);
                let diff = g.sub(eval.log_prob, lp_old_node);
                let ratio = g.exp(diff);
                let surr = g.scale(ratio, advantage);
                let clipped = g.clamp_const(ratio, 0.8, 1.2);
                let surr_clipped = g.scale(clipped, advantage);
                let objective = g.min(surr, surr_clipped);
                let policy_loss = g.neg(objective);
                let vdiff = g.add_const(eval.value, -ret);
                let value_loss = g.mul(vdiff, vdiff);
                let ent_term = g.scale(eval.entropy, -0.01);
                let a = g.add(policy_loss, value_loss);
                g.add(a, ent_term)
            },
        );
    }
}

/// Criterion 4: measuring a placed point returns the requested internal
/// coordinates, and re-placing from the measurement returns the point.
#[test]
fn criterion_04_geometry_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut done = 0usize;
    while done < 10_000 {
        let focal = Vec3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let rand_dir = |rng: &mut ChaCha8Rng| {
            loop {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if let Some(u) = v.normalized(1e-6) {
                    return u;
                }
            }
        };
        let u1 = rand_dir(&mut rng);
        let u2 = rand_dir(&mut rng);
        if u1.cross(&u2).norm() < 0.1 {
            continue;
        }
        let n1 = focal + u1.scale(rng.gen_range(0.5..2.0));
        let n2 = focal + u2.scale(rng.gen_range(0.5..2.0));
        let frame = LocalFrame::triple(focal, n1, n2);

        let d = rng.gen_range(0.5..2.0);
        let alpha = rng.gen_range(0.1..std::f64::consts::PI - 0.1);
        let abs_psi = rng.gen_range(0.05..std::f64::consts::PI - 0.05);
        let kappa = if rng.gen_bool(0.5) { 1i8 } else { -1 };
        let (x, clamped) =
            position_from_internal_checked(&frame, d, alpha, abs_psi, kappa).unwrap();
        if clamped {
            continue;
        }
        let coords = internal_from_position(&frame, x).unwrap();
        assert!((coords.d - d).abs() < 1e-9, "d mismatch: {} vs {d}", coords.d);
        assert!(
            (coords.alpha.unwrap() - alpha).abs() < 1e-9,
            "alpha mismatch: {} vs {alpha}",
            coords.alpha.unwrap()
        );
        assert!(
            (coords.abs_psi.unwrap() - abs_psi).abs() < 1e-9,
            "|psi| mismatch: {} vs {abs_psi}",
            coords.abs_psi.unwrap()
        );
        assert_eq!(coords.kappa.unwrap(), kappa, "kappa flipped");
        let x2 = position_from_internal(
            &frame,
            coords.d,
            coords.alpha.unwrap(),
            coords.abs_psi.unwrap(),
            coords.kappa.unwrap(),
        )
        .unwrap();
        assert!(x.distance(&x2) < 1e-9, "position round trip drift {}", x.distance(&x2));
        done += 1;
    }
}

// ---------------------------------------------------------------------------
// Learning criteria. Each trains with the default PPO hyperparameters and
// stops as soon as a deterministic evaluation reaches the target.

/// Trains on `task` until the deterministic-evaluation return reaches
/// `target` or `cap` environment steps have been collected. Returns the
/// step count at which the target was first met.
fn steps_to_target(
    task: &TaskConfig,
    policy_cfg: PolicyConfig,
    seed: u64,
    target: Real,
    cap: usize,
) -> Option<usize> {
    let backend: Arc<MorseBackend<Real>> = Arc::new(MorseBackend::with_default_params());
    let config = TrainConfig { seed, total_steps: cap, eval_every: 0, ..Default::default() };
    let mut trainer = Trainer::new(task.clone(), policy_cfg, config, backend.clone());
    let mut update = 0;
    while trainer.steps_done() < cap {
        trainer.train_batch(update, None).unwrap();
        update += 1;
        let mut env = MolEnv::new(task.clone(), backend.clone(), 1);
        let (ret, _) = evaluate_episode(trainer.policy(), trainer.store(), &mut env).unwrap();
        if ret >= target {
            return Some(trainer.steps_done());
        }
    }
    None
}

/// Committed surrogate baselines (see the baseline tests in
/// `src/baselines.rs` for how they are produced and pinned).
const BASELINE_H2: Real = 0.174;
const BASELINE_H2O: Real = 0.5259999999999971;
const BASELINE_CH4: Real = 1.6060411559499028;

#[test]
fn criterion_05_learns_the_dimer() {
    let task = TaskConfig::single_bag(Bag::from_formula("H2").unwrap());
    let target = 0.95 * BASELINE_H2;
    let mut successes = 0;
    for seed in 0..10 {
        if steps_to_target(&task, PolicyConfig::default(), seed, target, 20_000).is_some() {
            successes += 1;
        }
    }
    assert!(successes >= 8, "dimer: only {successes}/10 seeds reached 95% of baseline");
}

#[test]
fn criterion_06_learns_the_triatomic() {
    let task = TaskConfig::single_bag(Bag::from_formula("H2O").unwrap());
    let target = 0.90 * BASELINE_H2O;
    let mut successes = 0;
    for seed in 0..10 {
        if steps_to_target(&task, PolicyConfig::default(), seed, target, 80_000).is_some() {
            successes += 1;
        }
    }
    assert!(successes >= 7, "triatomic: only {successes}/10 seeds reached 90% of baseline");
}

#[test]
fn criterion_07_dihedral_sign_head_speeds_up_learning() {
    // Methane needs dihedral choices from the fourth placement on, so the
    // sign head has something to contribute. A reduced encoder keeps the
    // 20 runs tractable; both arms use the identical configuration.
    let task = TaskConfig::single_bag(Bag::from_formula("CH4").unwrap());
    let target = 0.90 * BASELINE_CH4;
    let cap = 40_000;
    let policy_cfg = |use_kappa_head: bool| PolicyConfig {
        encoder: SchNetConfig {
            n_interactions: 2,
            n_filters: 32,
            n_atom_basis: 24,
            n_rbf: 16,
            ..Default::default()
        },
        bag_hidden: 64,
        bag_dim: 16,
        head_hidden: 64,
        use_kappa_head,
        ..Default::default()
    };
    // Seeds that never reach the target are censored at one step past the
    // cap, which can only make the ablation look better.
    let censored = |v: Option<usize>| v.unwrap_or(cap + 1);
    let median = |mut xs: Vec<usize>| -> f64 {
        xs.sort_unstable();
        let n = xs.len();
        (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0
    };
    let with_kappa: Vec<usize> = (0..10)
        .map(|seed| censored(steps_to_target(&task, policy_cfg(true), seed, target, cap)))
        .collect();
    let without_kappa: Vec<usize> = (0..10)
        .map(|seed| censored(steps_to_target(&task, policy_cfg(false), seed, target, cap)))
        .collect();
    let m_with = median(with_kappa.clone());
    let m_without = median(without_kappa.clone());
    assert!(
        m_with < m_without,
        "sign head did not speed up learning: median {m_with} vs {m_without} \
         (with {with_kappa:?}, without {without_kappa:?})"
    );
}

/// Criterion 8: solvation bookkeeping with a single O solute and two
/// bags: one refill, six placements, and the exact distance penalty.
#[test]
fn criterion_08_solvation_refill_and_penalty() {
    let solute = Canvas::empty().with_atom(Element::O, Vec3::zeros());
    let task = TaskConfig::solvation(solute, 2);
    let backend: Arc<MorseBackend<Real>> = Arc::new(MorseBackend::with_default_params());
    let mut env = MolEnv::new(task.clone(), backend, 7);

    // Extend a straight chain: focal is always the newest atom and
    // alpha = 0 (the angle subtended at the new atom) points away from the
    // focal atom's neighbor, so no placement trips the proximity guard.
    let full_bag = Bag::from_formula("H2O").unwrap();
    let order = [Element::H, Element::H, Element::O];
    let mut refills = 0;
    let mut placements = 0;
    for i in 0..6 {
        assert!(!env.is_done(), "episode ended early at placement {i}");
        let bag_before = env.state().bag.total();
        let action = Action {
            focal: env.state().canvas.len() - 1,
            element: order[i % 3],
            distance_d: 1.0,
            angle_alpha: 0.0,
            abs_dihedral_psi: 0.0,
            kappa: 1,
        };
        let result = env.step(&action).unwrap();
        placements += 1;
        let penalty = task.distance_penalty * result.info.position.norm();
        assert!(
            (result.info.penalty - penalty).abs() < 1e-15,
            "logged penalty {} differs from rho*|x| = {penalty}",
            result.info.penalty
        );
        assert!(
            (result.reward - (-result.info.raw_delta_e - penalty)).abs() < 1e-12,
            "reward {} is not -delta_e - penalty", result.reward
        );
        if bag_before == 1 && result.next_state.bag.total() == 3 {
            assert_eq!(result.next_state.bag, full_bag, "refill bag is not a fresh H2O");
            refills += 1;
        }
        if i < 5 {
            assert!(!result.done, "episode ended after {placements} placements");
        } else {
            assert!(result.done, "episode still open after 6 placements");
            assert_eq!(result.info.reason, StepReason::BagExhausted);
        }
    }
    assert_eq!(refills, 1, "bag refilled {refills} times, expected exactly 1");
    assert_eq!(placements, 6);
    assert_eq!(task.kind, TaskKind::Solvation);
}

/// Criterion 9: across a million sampled actions the policy never draws a
/// masked element or an out-of-range focal index.
#[test]
fn criterion_09_sampled_actions_respect_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let policy = Policy::new(
        &mut store,
        PolicyConfig {
            encoder: SchNetConfig { n_interactions: 1, n_filters: 8, n_atom_basis: 8, n_rbf: 5, ..Default::default() },
            bag_hidden: 8,
            bag_dim: 4,
            head_hidden: 8,
            ..Default::default()
        },
        &mut rng,
    );

    // A fixed pool of states with deliberately sparse bags; sampling a
    // million actions cycles through it.
    let mut states = Vec::new();
    for _ in 0..64 {
        let n = rng.gen_range(1..=3);
        let canvas = random_canvas(&mut rng, n);
        let k = rng.gen_range(1..=2);
        let mut counts = Vec::new();
        for _ in 0..k {
            let e = CANDIDATE_ELEMENTS[rng.gen_range(0..CANDIDATE_ELEMENTS.len())];
            counts.push((e, rng.gen_range(1..3u32)));
        }
        states.push(State::new(canvas, Bag::from_counts(counts)));
    }

    for i in 0..1_000_000usize {
        let state = &states[i % states.len()];
        let sampled = policy.act(&store, state, &mut rng, false).unwrap();
        assert!(
            state.bag.contains(sampled.action.element),
            "sampled masked element {} from bag {}",
            sampled.action.element.symbol(),
            state.bag
        );
        assert!(
            sampled.action.focal < state.canvas.len(),
            "sampled focal {} on a {}-atom canvas",
            sampled.action.focal,
            state.canvas.len()
        );
    }
}

/// Criterion 10: a single-worker run with a fixed seed writes a
/// byte-identical metrics file every time.
#[test]
fn criterion_10_single_worker_runs_are_deterministic() {
    let task = TaskConfig::single_bag(Bag::from_formula("H2").unwrap());
    let run = |dir: &std::path::Path| -> Vec<u8> {
        let backend: Arc<MorseBackend<Real>> = Arc::new(MorseBackend::with_default_params());
        let config = TrainConfig {
            seed: 5,
            total_steps: 576,
            n_workers: 1,
            eval_every: 192,
            out_dir: Some(dir.to_path_buf()),
            ..Default::default()
        };
        let mut trainer = Trainer::new(task.clone(), PolicyConfig::default(), config, backend);
        trainer.run().unwrap();
        std::fs::read(dir.join("metrics.csv")).unwrap()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run(dir_a.path());
    let b = run(dir_b.path());
    assert!(!a.is_empty(), "metrics.csv is empty");
    assert_eq!(a, b, "repeated runs produced different metrics.csv bytes");
}

/// Criterion 11 (non-gating): when an external energy executable is
/// configured through MOLGEN_BACKEND_CMD, a CH4O run trains end to end
/// against it; without one the check is skipped.
#[test]
fn criterion_11_external_backend_round_trip() {
    let cmd = match std::env::var("MOLGEN_BACKEND_CMD") {
        Ok(c) if !c.is_empty() => c,
        _ => {
            println!("MOLGEN_BACKEND_CMD not set; external-backend criterion skipped");
            return;
        }
    };
    use molgen::energy::{ExternalBackend, ExternalBackendConfig};
    let backend: Arc<ExternalBackend> =
        Arc::new(ExternalBackend::new(ExternalBackendConfig::new(cmd)));
    let task = TaskConfig::single_bag(Bag::from_formula("CH4O").unwrap());
    let config = TrainConfig {
        seed: 0,
        total_steps: 192,
        n_workers: 1,
        eval_every: 0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(task.clone(), PolicyConfig::default(), config, backend.clone());
    trainer.train_batch(0, None).unwrap();
    let mut env = MolEnv::new(task, backend, 1);
    let (ret, final_state) =
        evaluate_episode(trainer.policy(), trainer.store(), &mut env).unwrap();
    assert!(ret.is_finite(), "external-backend evaluation returned {ret}");
    assert!(final_state.canvas.len() <= 6);
}
