//! Satellite transmit codebook for a 4×4 uniform planar array and the beam
//! adjacency graph used by the graph model.
//!
//! A steering offset `(az, el)` maps to direction cosines `(sin az, sin el)`
//! along the two array axes. Beam `b` sits at grid cell
//! `(b % n_az, b / n_az)`.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARRAY_SIDE: usize = 4;
pub const ARRAY_ELEMENTS: usize = ARRAY_SIDE * ARRAY_SIDE;
pub const GAIN_FLOOR_DB: f64 = -200.0;

pub type ArrayVector = [Complex64; ARRAY_ELEMENTS];

/// Unit-norm array response toward direction cosines `(u, v)`.
pub fn steering_from_cosines(u: f64, v: f64, spacing: f64) -> ArrayVector {
    let amp = 1.0 / (ARRAY_ELEMENTS as f64).sqrt();
    let k = 2.0 * std::f64::consts::PI * spacing;
    let mut out = [Complex64::new(0.0, 0.0); ARRAY_ELEMENTS];
    for m in 0..ARRAY_SIDE {
        for n in 0..ARRAY_SIDE {
            let phase = k * (m as f64 * u + n as f64 * v);
            out[m * ARRAY_SIDE + n] = Complex64::from_polar(amp, phase);
        }
    }
    out
}

/// Array response toward the steering offset `(az_off, el_off)` in degrees.
pub fn steering_vector(az_off: f64, el_off: f64, spacing: f64) -> ArrayVector {
    steering_from_cosines(az_off.to_radians().sin(), el_off.to_radians().sin(), spacing)
}

/// `w^H h`
pub fn inner(w: &ArrayVector, h: &ArrayVector) -> Complex64 {
    w.iter().zip(h).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(h: &ArrayVector) -> f64 {
    h.iter().map(|c| c.norm_sqr()).sum()
}

/// Gain of beam `w` on channel `h` relative to one isotropic element:
/// `10 log10(16 |w^H h|^2 / |h|^2)`, floored at -200 dB.
pub fn array_gain_db(w: &ArrayVector, h: &ArrayVector) -> Result<f64> {
    let hh = norm_sqr(h);
    if hh == 0.0 {
        return Err(Error::DegenerateChannel);
    }
    let g = ARRAY_ELEMENTS as f64 * inner(w, h).norm_sqr() / hh;
    Ok(if g > 0.0 {
        (10.0 * g.log10()).max(GAIN_FLOOR_DB)
    } else {
        GAIN_FLOOR_DB
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub n_az: usize,
    pub n_el: usize,
    pub fov_az_deg: f64,
    pub fov_el_deg: f64,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            n_az: 4,
            n_el: 4,
            fov_az_deg: 100.0,
            fov_el_deg: 100.0,
            element_spacing: 0.5,
        }
    }
}

impl CodebookConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_az < 1 || self.n_el < 1 {
            errs.push("codebook.n_az and codebook.n_el must be >= 1".into());
        }
        if !(self.fov_az_deg > 0.0 && self.fov_az_deg < 180.0) || !(self.fov_el_deg > 0.0 && self.fov_el_deg < 180.0) {
            errs.push("codebook field of view must lie in (0, 180) degrees".into());
        }
        if !(self.element_spacing > 0.0) {
            errs.push("codebook.element_spacing must be positive".into());
        }
        errs
    }

    pub fn build(&self) -> BeamCodebook {
        build_codebook_with_spacing(
            self.n_az,
            self.n_el,
            self.fov_az_deg,
            self.fov_el_deg,
            self.element_spacing,
        )
    }
}

#[derive(Debug, Clone)]
pub struct BeamCodebook {
    pub n_az: usize,
    pub n_el: usize,
    pub element_spacing: f64,
    /// `(az, el)` offsets from boresight in degrees, one per beam.
    pub steer_offsets: Vec<(f64, f64)>,
    pub weights: Vec<ArrayVector>,
}

impl BeamCodebook {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn beam_index(&self, az_idx: usize, el_idx: usize) -> usize {
        el_idx * self.n_az + az_idx
    }

    /// Index of the beam with the largest `|w^H h|^2`; ties go to the lower index.
    pub fn best_beam(&self, h: &ArrayVector) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (b, w) in self.weights.iter().enumerate() {
            let v = inner(w, h).norm_sqr();
            if v > best_val {
                best_val = v;
                best = b;
            }
        }
        best
    }
}

pub fn build_codebook(n_az: usize, n_el: usize, fov_az: f64, fov_el: f64) -> BeamCodebook {
    build_codebook_with_spacing(n_az, n_el, fov_az, fov_el, 0.5)
}

fn grid_centres(n: usize, fov: f64) -> Vec<f64> {
    let step = fov / n as f64;
    (0..n).map(|i| -0.5 * fov + (i as f64 + 0.5) * step).collect()
}

pub fn build_codebook_with_spacing(n_az: usize, n_el: usize, fov_az: f64, fov_el: f64, spacing: f64) -> BeamCodebook {
    let az = grid_centres(n_az, fov_az);
    let el = grid_centres(n_el, fov_el);
    let mut steer_offsets = Vec::with_capacity(n_az * n_el);
    let mut weights = Vec::with_capacity(n_az * n_el);
    for &e in &el {
        for &a in &az {
            steer_offsets.push((a, e));
            weights.push(steering_vector(a, e, spacing));
        }
    }
    BeamCodebook {
        n_az,
        n_el,
        element_spacing: spacing,
        steer_offsets,
        weights,
    }
}

/// 4-connected beam grid with its symmetric-normalized propagation matrix
/// `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone)]
pub struct BeamGraph {
    pub adjacency: Array2<bool>,
    pub normalized_adjacency: Array2<f64>,
}

impl BeamGraph {
    pub fn for_grid(n_az: usize, n_el: usize) -> Self {
        let n = n_az * n_el;
        let mut adjacency = Array2::from_elem((n, n), false);
        for el in 0..n_el {
            for az in 0..n_az {
                let b = el * n_az + az;
                if az + 1 < n_az {
                    adjacency[[b, b + 1]] = true;
                    adjacency[[b + 1, b]] = true;
                }
                if el + 1 < n_el {
                    adjacency[[b, b + n_az]] = true;
                    adjacency[[b + n_az, b]] = true;
                }
            }
        }
        let deg: Vec<f64> = (0..n)
            .map(|i| 1.0 + adjacency.row(i).iter().filter(|&&x| x).count() as f64)
            .collect();
        let normalized_adjacency = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j || adjacency[[i, j]] {
                1.0 / (deg[i] * deg[j]).sqrt()
            } else {
                0.0
            }
        });
        Self {
            adjacency,
            normalized_adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().filter(|&&x| x).count()
    }

    /// Non-zero entries of each row of the normalized adjacency.
    pub fn sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.normalized_adjacency
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect()
    }
}

pub fn beam_graph(cb: &BeamCodebook) -> BeamGraph {
    BeamGraph::for_grid(cb.n_az, cb.n_el)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn boresight_is_flat() {
        for c in steering_vector(0.0, 0.0, 0.5) {
            assert_eq!(c, Complex64::new(0.25, 0.0));
        }
    }

    #[test]
    fn negated_offsets_conjugate() {
        let a = steering_vector(23.0, -11.0, 0.5);
        let b = steering_vector(-23.0, 11.0, 0.5);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x.re, y.re, epsilon = 1e-15);
            assert_abs_diff_eq!(x.im, -y.im, epsilon = 1e-15);
        }
    }

    #[test]
    fn thirty_degree_phases() {
        let sv = steering_vector(30.0, 0.0, 0.5);
        // Oracle: element (m, n) has phase pi * m * sin(30°) = m * pi / 2.
        for m in 0..4 {
            let expected = Complex64::from_polar(0.25, m as f64 * std::f64::consts::FRAC_PI_2);
            for n in 0..4 {
                let got = sv[m * 4 + n];
                assert_abs_diff_eq!(got.re, expected.re, epsilon = 1e-15);
                assert_abs_diff_eq!(got.im, expected.im, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn codebook_grid() {
        let cb = build_codebook(1, 1, 100.0, 100.0);
        assert_eq!(cb.len(), 1);
        assert_eq!(cb.steer_offsets[0], (0.0, 0.0));

        let cb = build_codebook(4, 4, 100.0, 100.0);
        assert_eq!(cb.len(), 16);
        let az: Vec<f64> = cb.steer_offsets[..4].iter().map(|o| o.0).collect();
        assert_eq!(az, vec![-37.5, -12.5, 12.5, 37.5]);
        for w in &cb.weights {
            assert_abs_diff_eq!(norm_sqr(w), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gain_reference_values() {
        let h = steering_vector(0.0, 0.0, 0.5);
        let g = array_gain_db(&h, &h).unwrap();
        assert_abs_diff_eq!(g, 10.0 * 16f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(g, 12.041, epsilon = 1e-3);

        // steering at u = 0.5 is orthogonal to boresight for a 4-element row
        let w = steering_from_cosines(0.5, 0.0, 0.5);
        assert_eq!(array_gain_db(&w, &h).unwrap(), GAIN_FLOOR_DB);

        let zero = [Complex64::new(0.0, 0.0); 16];
        assert!(matches!(array_gain_db(&h, &zero), Err(Error::DegenerateChannel)));
    }

    #[test]
    fn best_beam_matches_exhaustive_search() {
        use rand::Rng;
        let cb = build_codebook(4, 4, 100.0, 100.0);
        let mut rng = crate::seed::substream(3, "test", &[]);
        for _ in 0..200 {
            let mut h = [Complex64::new(0.0, 0.0); 16];
            for c in h.iter_mut() {
                *c = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
            let gains: Vec<f64> = cb.weights.iter().map(|w| array_gain_db(w, &h).unwrap()).collect();
            let mut oracle = 0;
            for b in 0..gains.len() {
                let mag = |i: usize| {
                    cb.weights[i]
                        .iter()
                        .zip(&h)
                        .map(|(w, x)| w.conj() * x)
                        .sum::<Complex64>()
                        .norm_sqr()
                };
                if mag(b) > mag(oracle) {
                    oracle = b;
                }
            }
            assert_eq!(cb.best_beam(&h), oracle);
            let argmax_gain = gains
                .iter()
                .enumerate()
                .fold(0, |best, (i, &g)| if g > gains[best] { i } else { best });
            assert_eq!(argmax_gain, oracle);
        }
    }

    #[test]
    fn graph_degrees() {
        let g = BeamGraph::for_grid(1, 1);
        assert!(!g.adjacency[[0, 0]]);
        assert_eq!(g.normalized_adjacency[[0, 0]], 1.0);

        let g = BeamGraph::for_grid(4, 4);
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(1), 3);
        assert_eq!(g.degree(5), 4);
        assert_eq!(g.degree(15), 2);
        for i in 0..16 {
            assert!(!g.adjacency[[i, i]]);
            for j in 0..16 {
                assert_eq!(g.adjacency[[i, j]], g.adjacency[[j, i]]);
                assert_abs_diff_eq!(
                    g.normalized_adjacency[[i, j]],
                    g.normalized_adjacency[[j, i]],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn normalized_adjacency_identity() {
        // Oracle: rebuild D^-1/2 (A+I) D^-1/2 by explicit matrix products.
        let g = BeamGraph::for_grid(4, 4);
        let n = 16;
        let a_plus_i: Array2<f64> =
            Array2::from_shape_fn((n, n), |(i, j)| if i == j || g.adjacency[[i, j]] { 1.0 } else { 0.0 });
        for i in 0..n {
            assert_eq!(a_plus_i.row(i).sum() as usize, g.degree(i) + 1);
        }
        let d_inv_sqrt = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0 / a_plus_i.row(i).sum().sqrt()
            } else {
                0.0
            }
        });
        let oracle = d_inv_sqrt.dot(&a_plus_i).dot(&d_inv_sqrt);
        for (x, y) in oracle.iter().zip(g.normalized_adjacency.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalized_adjacency_spectrum_in_unit_interval() {
        let g = BeamGraph::for_grid(4, 4);
        let m = nalgebra::DMatrix::from_fn(16, 16, |i, j| g.normalized_adjacency[[i, j]]);
        let eig = nalgebra::SymmetricEigen::new(m);
        for &l in eig.eigenvalues.iter() {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&l), "eigenvalue {l}");
        }
    }

    proptest! {
        #[test]
        fn gain_invariant_to_phase_and_scale(
            re in proptest::collection::vec(-1.0f64..1.0, 16),
            im in proptest::collection::vec(-1.0f64..1.0, 16),
            phase in 0.0f64..std::f64::consts::TAU,
            s in 0.01f64..100.0,
            beam in 0usize..16,
        ) {
            let mut h = [Complex64::new(0.0, 0.0); 16];
            for i in 0..16 { h[i] = Complex64::new(re[i], im[i]); }
            prop_assume!(norm_sqr(&h) > 1e-6);
            let rot = Complex64::from_polar(s, phase);
            let h2: ArrayVector = std::array::from_fn(|i| h[i] * rot);
            let cb = build_codebook(4, 4, 100.0, 100.0);
            let g1 = array_gain_db(&cb.weights[beam], &h).unwrap();
            let g2 = array_gain_db(&cb.weights[beam], &h2).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-9 || (g1 <= -150.0 && g2 <= -150.0));
        }

        #[test]
        fn los_argmax_is_nearest_beam_in_cosine_space(az in -55.0f64..55.0, el in -55.0f64..55.0) {
            let cb = build_codebook(4, 4, 100.0, 100.0);
            let h = steering_vector(az, el, 0.5);
            let (u, v) = (az.to_radians().sin(), el.to_radians().sin());
            let dist = |b: usize| {
                let (a, e) = cb.steer_offsets[b];
                (a.to_radians().sin() - u).powi(2) + (e.to_radians().sin() - v).powi(2)
            };
            let nearest = (0..16).fold(0, |best, b| if dist(b) < dist(best) { b } else { best });
            let best = cb.best_beam(&h);
            // exact ties on cell boundaries may resolve either way
            prop_assert!(best == nearest || (dist(best) - dist(nearest)).abs() < 1e-9);
        }
    }
}
