//! Continuous-filter convolution encoder over atom positions.
//!
//! Produces one feature row per atom. All geometric information enters
//! through interatomic distances (radial basis expansion times a cosine
//! cutoff), so the features are exactly invariant under rotation and
//! translation of the canvas, and permuting atoms permutes the rows.

use rand::Rng;

use crate::chem::Canvas;

use super::graph::{Graph, GraphScalar, NodeId};
use super::init::orthogonal;
use super::mlp::Dense;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct SchNetConfig {
    pub n_interactions: usize,
    /// Distance cutoff in angstrom; pairs at or beyond it do not interact.
    pub cutoff: f64,
    pub n_filters: usize,
    pub n_atom_basis: usize,
    pub n_rbf: usize,
    /// Number of embedding rows (atomic numbers 1..=e_max).
    pub e_max: usize,
}

impl Default for SchNetConfig {
    fn default() -> Self {
        SchNetConfig {
            n_interactions: 3,
            cutoff: 5.0,
            n_filters: 128,
            n_atom_basis: 64,
            n_rbf: 32,
            e_max: 10,
        }
    }
}

#[derive(Debug, Clone)]
struct Interaction {
    in2f: Dense,
    filter1: Dense,
    filter2: Dense,
    f2out1: Dense,
    f2out2: Dense,
}

#[derive(Debug, Clone)]
pub struct SchNet {
    config: SchNetConfig,
    embedding: ParamId,
    interactions: Vec<Interaction>,
}

impl SchNet {
    pub fn new<F: GraphScalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        config: SchNetConfig,
        rng: &mut R,
    ) -> Self {
        let emb: Vec<F> = orthogonal(config.e_max, config.n_atom_basis, 1.0, rng)
            .into_iter()
            .map(F::from_f64_c)
            .collect();
        let embedding = store.add(
            &format!("{name}.embedding"),
            config.e_max,
            config.n_atom_basis,
            emb,
        );
        let interactions = (0..config.n_interactions)
            .map(|i| {
                let p = format!("{name}.int{i}");
                Interaction {
                    in2f: Dense::new(
                        store,
                        &format!("{p}.in2f"),
                        config.n_atom_basis,
                        config.n_filters,
                        1.0,
                        false,
                        rng,
                    ),
                    filter1: Dense::new(
                        store,
                        &format!("{p}.filter1"),
                        config.n_rbf,
                        config.n_filters,
                        1.0,
                        true,
                        rng,
                    ),
                    filter2: Dense::new(
                        store,
                        &format!("{p}.filter2"),
                        config.n_filters,
                        config.n_filters,
                        1.0,
                        true,
                        rng,
                    ),
                    f2out1: Dense::new(
                        store,
                        &format!("{p}.f2out1"),
                        config.n_filters,
                        config.n_atom_basis,
                        1.0,
                        true,
                        rng,
                    ),
                    f2out2: Dense::new(
                        store,
                        &format!("{p}.f2out2"),
                        config.n_atom_basis,
                        config.n_atom_basis,
                        1.0,
                        true,
                        rng,
                    ),
                }
            })
            .collect();
        SchNet { config, embedding, interactions }
    }

    pub fn config(&self) -> &SchNetConfig {
        &self.config
    }

    /// Gaussian radial basis values for one distance.
    pub fn rbf(&self, r: f64) -> Vec<f64> {
        let n = self.config.n_rbf;
        let spacing = self.config.cutoff / (n - 1) as f64;
        let gamma = 1.0 / (2.0 * spacing * spacing);
        (0..n)
            .map(|k| {
                let mu = k as f64 * spacing;
                (-gamma * (r - mu) * (r - mu)).exp()
            })
            .collect()
    }

    /// Smooth cutoff factor, 1 at r=0 and 0 at the cutoff.
    pub fn cutoff_factor(&self, r: f64) -> f64 {
        if r >= self.config.cutoff {
            0.0
        } else {
            0.5 * ((std::f64::consts::PI * r / self.config.cutoff).cos() + 1.0)
        }
    }

    /// Per-atom features, shape (n_atoms, n_atom_basis).
    pub fn forward<F: GraphScalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        canvas: &Canvas<F>,
    ) -> NodeId {
        let n = canvas.len();
        assert!(n > 0, "encoder needs at least one atom");
        let z_rows: Vec<usize> = canvas
            .elements()
            .map(|e| {
                let row = e.atomic_number() as usize - 1;
                assert!(row < self.config.e_max, "element {} beyond e_max", e.symbol());
                row
            })
            .collect();
        let emb = g.param(store, self.embedding);
        let mut x = g.gather_rows(emb, z_rows);

        // Directed neighbor list within the cutoff.
        let positions: Vec<_> = canvas.positions().collect();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut rbf_data: Vec<F> = Vec::new();
        let mut cut_data: Vec<F> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = positions[i].distance(&positions[j]).to_f64_c();
                if r >= self.config.cutoff {
                    continue;
                }
                dst.push(i);
                src.push(j);
                rbf_data.extend(self.rbf(r).into_iter().map(F::from_f64_c));
                cut_data.push(F::from_f64_c(self.cutoff_factor(r)));
            }
        }
        let n_pairs = src.len();

        for it in &self.interactions {
            let xf = it.in2f.forward(store, g, x);
            let v = if n_pairs > 0 {
                let rbf = g.constant(rbf_data.clone(), n_pairs, self.config.n_rbf);
                let cut = g.constant(cut_data.clone(), n_pairs, 1);
                let f = it.filter1.forward(store, g, rbf);
                let f = g.ssp(f);
                let f = it.filter2.forward(store, g, f);
                let f = g.ssp(f);
                let f = g.mul_col_broadcast(f, cut);
                let neighbors = g.gather_rows(xf, src.clone());
                let msg = g.mul(neighbors, f);
                g.segment_sum(msg, dst.clone(), n)
            } else {
                g.constant(vec![F::zero(); n * self.config.n_filters], n, self.config.n_filters)
            };
            let v = it.f2out1.forward(store, g, v);
            let v = g.ssp(v);
            let v = it.f2out2.forward(store, g, v);
            x = g.add(x, v);
        }
        x
    }
}
