//! Ground-truth LTI systems, reproducible Gaussian noise streams and the
//! multi-rollout data collection procedure.
//!
//! Every rollout starts from `x₀ = 0` and is excited by i.i.d. Gaussian input.
//! Each rollout draws `u`, `w` and `v` from its own streams derived from the
//! master seed and the rollout index, so rollouts can be generated in any
//! order (or concurrently) and still reproduce bit-for-bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_norm, Matrix, SolverTolerances};

/// The triple `(A, B, C)` of `x⁺ = A x + B u + w`, `y = C x + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemMatrices {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl SystemMatrices {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let sys = Self { a, b, c };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.rows();
        if !self.a.is_square() {
            return Err(Error::DimensionMismatch(format!("A must be square, got {:?}", self.a.shape())));
        }
        if self.b.rows() != n {
            return Err(Error::DimensionMismatch(format!("B has {} rows, expected {n}", self.b.rows())));
        }
        if self.c.cols() != n {
            return Err(Error::DimensionMismatch(format!("C has {} columns, expected {n}", self.c.cols())));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    /// Open-loop stable benchmark: tridiagonal `A` with 0.9 on the diagonal.
    pub fn stable_benchmark() -> Self {
        Self::tridiagonal_benchmark(0.9)
    }

    /// Open-loop unstable benchmark: tridiagonal `A` with 1.01 on the diagonal.
    pub fn unstable_benchmark() -> Self {
        Self::tridiagonal_benchmark(1.01)
    }

    fn tridiagonal_benchmark(diag: f64) -> Self {
        let a = Matrix::from_rows(&[vec![diag, 0.01, 0.0], vec![0.01, diag, 0.01], vec![0.0, 0.01, diag]])
            .expect("static matrix");
        let b = Matrix::column(&[1.0, 1.5, 2.0]);
        Self { a, b, c: Matrix::identity(3) }
    }

    /// Whether `‖A‖ ≤ M` and `‖B‖ ≤ M` hold for the declared bound.
    pub fn norm_bound_holds(&self, big_m: f64, tol: &SolverTolerances) -> Result<(bool, bool)> {
        Ok((spectral_norm(&self.a, tol)? <= big_m, spectral_norm(&self.b, tol)? <= big_m))
    }
}

/// Noise and excitation standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub sigma_u: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma_w: 1.0, sigma_v: 0.0, sigma_u: 1.0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma_w, self.sigma_v, self.sigma_u].iter().all(|s| s.is_finite() && *s >= 0.0);
        if !ok || self.sigma_u <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise spec needs finite sigma_w, sigma_v >= 0 and sigma_u > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// Counter-based random stream: ChaCha8 keyed by `master_seed`, positioned on
/// the independent stream `stream_id`.
#[derive(Clone)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream")
            .field("master_seed", &self.master_seed)
            .field("stream_id", &self.stream_id)
            .finish_non_exhaustive()
    }
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, rng, spare: None }
    }

    /// A child stream keyed by this stream's identity and `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self::new(mix_seed(&[self.master_seed, self.stream_id]), tag)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// One standard normal draw (Box–Muller, both outputs used).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// `dim` independent `N(0, sigma²)` samples.
    pub fn gaussian_vector(&mut self, dim: usize, sigma: f64) -> Vec<f64> {
        if sigma == 0.0 {
            return vec![0.0; dim];
        }
        (0..dim).map(|_| sigma * self.standard_normal()).collect()
    }
}

/// SplitMix64-style mixing of several words into one seed.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// `A x + B u + w`.
pub fn step(sys: &SystemMatrices, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let n = sys.n();
    if x.len() != n || u.len() != sys.m() || w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "step expects x:{n}, u:{}, w:{n}; got {}, {}, {}",
            sys.m(),
            x.len(),
            u.len(),
            w.len()
        )));
    }
    let ax = sys.a.mul_vec(x);
    let bu = sys.b.mul_vec(u);
    Ok(ax.iter().zip(&bu).zip(w).map(|((a, b), w)| a + b + w).collect())
}

/// `C x + v`.
pub fn observe(sys: &SystemMatrices, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != sys.n() || v.len() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "observe expects x:{}, v:{}; got {}, {}",
            sys.n(),
            sys.p(),
            x.len(),
            v.len()
        )));
    }
    Ok(sys.c.mul_vec(x).iter().zip(v).map(|(cx, v)| cx + v).collect())
}

/// One trajectory `x₀..x_T0`, `u₀..u_{T0−1}`, `y₀..y_T0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSet {
    pub seed: u64,
    pub t0: usize,
    pub noise: NoiseSpec,
    pub rollouts: Vec<Rollout>,
}

impl RolloutSet {
    pub fn n_rollouts(&self) -> usize {
        self.rollouts.len()
    }

    /// State and input dimensions `(n, m)`.
    pub fn dims(&self) -> (usize, usize) {
        let first = &self.rollouts[0];
        (first.states[0].len(), first.inputs.first().map_or(0, Vec::len))
    }

    /// Checks shape invariants; needed after deserializing external files.
    pub fn validate(&self) -> Result<()> {
        if self.rollouts.is_empty() {
            return Err(Error::EmptyData);
        }
        if self.t0 < 2 {
            return Err(Error::InvalidParameter(format!("t0 must be at least 2, got {}", self.t0)));
        }
        let n = self.rollouts[0].states.first().map_or(0, Vec::len);
        let m = self.rollouts[0].inputs.first().map_or(0, Vec::len);
        let p = self.rollouts[0].outputs.first().map_or(0, Vec::len);
        for (i, r) in self.rollouts.iter().enumerate() {
            let lengths_ok =
                r.states.len() == self.t0 + 1 && r.inputs.len() == self.t0 && r.outputs.len() == self.t0 + 1;
            let dims_ok = r.states.iter().all(|x| x.len() == n)
                && r.inputs.iter().all(|u| u.len() == m)
                && r.outputs.iter().all(|y| y.len() == p);
            if !lengths_ok || !dims_ok || n == 0 || m == 0 {
                return Err(Error::DimensionMismatch(format!("rollout {i} is inconsistent with t0 = {}", self.t0)));
            }
        }
        Ok(())
    }
}

/// Stream tags for the three noise channels of one rollout.
const INPUT_TAG: u64 = 0;
const PROCESS_TAG: u64 = 1;
const MEASUREMENT_TAG: u64 = 2;

/// Runs `n_rollouts` independent rollouts of length `t0` from `x₀ = 0`.
pub fn collect_rollouts(
    sys: &SystemMatrices,
    noise: &NoiseSpec,
    n_rollouts: usize,
    t0: usize,
    seed: u64,
) -> Result<RolloutSet> {
    sys.validate()?;
    noise.validate()?;
    if n_rollouts == 0 || t0 < 2 {
        return Err(Error::InvalidParameter(format!("need N >= 1 and T0 >= 2, got N = {n_rollouts}, T0 = {t0}")));
    }
    let rollouts = (0..n_rollouts)
        .into_par_iter()
        .map(|i| single_rollout(sys, noise, t0, &RngStream::new(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutSet { seed, t0, noise: *noise, rollouts })
}

fn single_rollout(sys: &SystemMatrices, noise: &NoiseSpec, t0: usize, root: &RngStream) -> Result<Rollout> {
    let mut u_stream = root.derive(INPUT_TAG);
    let mut w_stream = root.derive(PROCESS_TAG);
    let mut v_stream = root.derive(MEASUREMENT_TAG);
    let (n, m, p) = (sys.n(), sys.m(), sys.p());

    let mut states = Vec::with_capacity(t0 + 1);
    let mut inputs = Vec::with_capacity(t0);
    let mut outputs = Vec::with_capacity(t0 + 1);
    let mut x = vec![0.0; n];
    outputs.push(observe(sys, &x, &v_stream.gaussian_vector(p, noise.sigma_v))?);
    states.push(x.clone());
    for _ in 0..t0 {
        let u = u_stream.gaussian_vector(m, noise.sigma_u);
        let w = w_stream.gaussian_vector(n, noise.sigma_w);
        x = step(sys, &x, &u, &w)?;
        outputs.push(observe(sys, &x, &v_stream.gaussian_vector(p, noise.sigma_v))?);
        states.push(x.clone());
        inputs.push(u);
    }
    Ok(Rollout { states, inputs, outputs })
}
