//! Noisy benchmark suite in the layout of f101–f130: ten base functions, each
//! combined with Gaussian, uniform and Cauchy noise, plus the noiseless sphere,
//! Rosenbrock, ellipsoid and Rastrigin (f1, f8, f10, f15) used for timing.
//!
//! The noise-free channel ([`ProblemInstance::evaluate_true`],
//! [`ProblemInstance::delta_f`]) is meant for the harness only; an optimizer
//! sees [`ProblemInstance::evaluate_noisy`].

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Below this noise-free Δf the objective is returned without noise.
pub const NOISE_GATE: f64 = 1e-8;
const UNIFORM_EPS: f64 = 1e-99;
const CAUCHY_EPS: f64 = 1e-199;
const GALLAGHER_PEAKS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseFunction {
    Sphere,
    Rosenbrock,
    StepEllipsoid,
    Ellipsoid,
    DifferentPowers,
    SchafferF7,
    GriewankRosenbrock,
    Gallagher101,
    Rastrigin,
}

impl BaseFunction {
    /// Whether instances carry a random rotation.
    pub fn is_rotated(self) -> bool {
        matches!(
            self,
            BaseFunction::Ellipsoid
                | BaseFunction::DifferentPowers
                | BaseFunction::SchafferF7
                | BaseFunction::GriewankRosenbrock
                | BaseFunction::Gallagher101
                | BaseFunction::Rastrigin
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Severity {
    Moderate,
    Severe,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    None,
    /// `f·exp(β·N(0,1))`
    Gaussian { beta: f64 },
    /// `f·U^β·max(1, (10⁹/(f+ε))^{α·U'})`
    Uniform { alpha: f64, beta: f64 },
    /// `f + α·max(0, 1000 + 1{U<p}·N/(|N'|+ε))`
    Cauchy { alpha: f64, p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub model: NoiseModel,
    pub severity: Severity,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            model: NoiseModel::None,
            severity: Severity::Moderate,
        }
    }

    pub fn gaussian(severity: Severity) -> Self {
        let beta = match severity {
            Severity::Moderate => 0.01,
            Severity::Severe => 1.0,
        };
        Self {
            model: NoiseModel::Gaussian { beta },
            severity,
        }
    }

    pub fn uniform(severity: Severity, dim: usize) -> Self {
        let base = 0.49 + 1.0 / dim as f64;
        let (alpha, beta) = match severity {
            Severity::Moderate => (0.01 * base, 0.01),
            Severity::Severe => (base, 1.0),
        };
        Self {
            model: NoiseModel::Uniform { alpha, beta },
            severity,
        }
    }

    pub fn cauchy(severity: Severity) -> Self {
        let (alpha, p) = match severity {
            Severity::Moderate => (0.01, 0.05),
            Severity::Severe => (1.0, 0.2),
        };
        Self {
            model: NoiseModel::Cauchy { alpha, p },
            severity,
        }
    }

    pub fn is_noisy(&self) -> bool {
        !matches!(self.model, NoiseModel::None)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.model {
            NoiseModel::None => true,
            NoiseModel::Gaussian { beta } => beta >= 0.0,
            NoiseModel::Uniform { alpha, beta } => alpha >= 0.0 && beta >= 0.0,
            NoiseModel::Cauchy { alpha, p } => alpha >= 0.0 && (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise parameters {:?}", self.model)))
        }
    }
}

/// Perturbs `value` by noising its noise-free excess `delta` over the optimum.
/// Values with `delta ≤ 10⁻⁸` are returned unchanged.
pub fn apply_noise<R: Rng + ?Sized>(cfg: &NoiseConfig, delta: f64, value: f64, rng: &mut R) -> f64 {
    if delta <= NOISE_GATE {
        return value;
    }
    let noised = match cfg.model {
        NoiseModel::None => return value,
        NoiseModel::Gaussian { beta } => {
            let g: f64 = rng.sample(StandardNormal);
            delta * (beta * g).exp()
        }
        NoiseModel::Uniform { alpha, beta } => {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            delta * u1.powf(beta) * (1e9 / (delta + UNIFORM_EPS)).powf(alpha * u2).max(1.0)
        }
        NoiseModel::Cauchy { alpha, p } => {
            let u: f64 = rng.random();
            let outlier = if u < p {
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                g1 / (g2.abs() + CAUCHY_EPS)
            } else {
                0.0
            };
            delta + alpha * (1000.0 + outlier).max(0.0)
        }
    };
    if noised == delta {
        value
    } else {
        (value - delta) + noised
    }
}

#[derive(Clone, Debug)]
struct GallagherPeaks {
    /// Peak centres mapped by the instance rotation.
    rotated_centres: Vec<DVector<f64>>,
    weights: Vec<f64>,
    /// Diagonal conditioning of each peak in rotated coordinates.
    conditioning: Vec<DVector<f64>>,
}

/// One benchmark problem: base function, noise model and instance data.
#[derive(Debug)]
pub struct ProblemInstance {
    pub function_id: u32,
    pub base: BaseFunction,
    pub dim: usize,
    pub instance_id: u32,
    pub x_opt: DVector<f64>,
    pub f_opt: f64,
    pub noise: NoiseConfig,
    pub rotation: Option<DMatrix<f64>>,
    ellipsoid_condition: f64,
    gallagher: Option<GallagherPeaks>,
    evaluations: AtomicU64,
}

impl Clone for ProblemInstance {
    fn clone(&self) -> Self {
        Self {
            function_id: self.function_id,
            base: self.base,
            dim: self.dim,
            instance_id: self.instance_id,
            x_opt: self.x_opt.clone(),
            f_opt: self.f_opt,
            noise: self.noise,
            rotation: self.rotation.clone(),
            ellipsoid_condition: self.ellipsoid_condition,
            gallagher: self.gallagher.clone(),
            evaluations: AtomicU64::new(self.evaluations()),
        }
    }
}

/// Base function and noise of a function id.
pub fn describe_function(function_id: u32, dim: usize) -> Result<(BaseFunction, NoiseConfig)> {
    let noiseless = |b| Ok((b, NoiseConfig::none()));
    match function_id {
        1 => return noiseless(BaseFunction::Sphere),
        8 => return noiseless(BaseFunction::Rosenbrock),
        10 => return noiseless(BaseFunction::Ellipsoid),
        15 => return noiseless(BaseFunction::Rastrigin),
        101..=130 => {}
        _ => return Err(Error::UnknownFunction(function_id)),
    }
    let k = function_id - 101;
    let (base, severity) = match k / 3 {
        0 => (BaseFunction::Sphere, Severity::Moderate),
        1 => (BaseFunction::Rosenbrock, Severity::Moderate),
        2 => (BaseFunction::Sphere, Severity::Severe),
        3 => (BaseFunction::Rosenbrock, Severity::Severe),
        4 => (BaseFunction::StepEllipsoid, Severity::Severe),
        5 => (BaseFunction::Ellipsoid, Severity::Severe),
        6 => (BaseFunction::DifferentPowers, Severity::Severe),
        7 => (BaseFunction::SchafferF7, Severity::Severe),
        8 => (BaseFunction::GriewankRosenbrock, Severity::Severe),
        _ => (BaseFunction::Gallagher101, Severity::Severe),
    };
    let noise = match k % 3 {
        0 => NoiseConfig::gaussian(severity),
        1 => NoiseConfig::uniform(severity, dim),
        _ => NoiseConfig::cauchy(severity),
    };
    Ok((base, noise))
}

/// All valid function ids: the noiseless timing bases and f101–f130.
pub fn function_ids() -> impl Iterator<Item = u32> {
    [1, 8, 10, 15].into_iter().chain(101..=130)
}

/// Fixed 64-bit mix of the instance triple.
fn instance_seed(function_id: u32, dim: usize, instance_id: u32) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for v in [function_id as u64, dim as u64, instance_id as u64] {
        h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix64(h);
    }
    h
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Haar-distributed random orthogonal matrix.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Builds the deterministic instance `(function_id, dim, instance_id)`.
pub fn make_instance(function_id: u32, dim: usize, instance_id: u32) -> Result<ProblemInstance> {
    if dim < 2 {
        return Err(Error::Config(format!("dimension must be >= 2, got {dim}")));
    }
    if instance_id == 0 {
        return Err(Error::Config("instance ids start at 1".into()));
    }
    let (base, noise) = describe_function(function_id, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(function_id, dim, instance_id));
    let x_opt = DVector::from_fn(dim, |_, _| rng.random_range(-4.0..=4.0));
    let f_opt = rng.random_range(-100.0..=100.0);
    let rotation = base.is_rotated().then(|| random_rotation(dim, &mut rng));
    let gallagher = (base == BaseFunction::Gallagher101).then(|| {
        let rot = rotation.as_ref().expect("gallagher is rotated");
        gallagher_peaks(dim, &x_opt, rot, &mut rng)
    });
    let ellipsoid_condition = if function_id == 10 { 1e6 } else { 1e4 };
    Ok(ProblemInstance {
        function_id,
        base,
        dim,
        instance_id,
        x_opt,
        f_opt,
        noise,
        rotation,
        ellipsoid_condition,
        gallagher,
        evaluations: AtomicU64::new(0),
    })
}

fn gallagher_peaks(dim: usize, x_opt: &DVector<f64>, rot: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> GallagherPeaks {
    let n = dim as f64;
    let mut centres = vec![x_opt.clone()];
    centres.extend((1..GALLAGHER_PEAKS).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-5.0..=5.0))));
    let weights: Vec<f64> = (0..GALLAGHER_PEAKS)
        .map(|i| if i == 0 { 10.0 } else { 1.1 + 8.0 * (i - 1) as f64 / 99.0 })
        .collect();

    // Condition numbers 1000^{2j/99}, randomly assigned; the global peak gets 1000.
    let mut alphas: Vec<f64> = (0..GALLAGHER_PEAKS - 1).map(|j| 1000f64.powf(2.0 * j as f64 / 99.0)).collect();
    shuffle(&mut alphas, rng);
    alphas.insert(0, 1000.0);
    let conditioning = alphas
        .iter()
        .map(|&a| {
            let mut diag: Vec<f64> = (0..dim)
                .map(|i| {
                    let e = if dim > 1 { i as f64 / (n - 1.0) } else { 0.0 };
                    a.powf(0.5 * e) / a.powf(0.25)
                })
                .collect();
            shuffle(&mut diag, rng);
            DVector::from_vec(diag)
        })
        .collect();
    GallagherPeaks {
        rotated_centres: centres.iter().map(|c| rot * c).collect(),
        weights,
        conditioning,
    }
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Oscillation transform.
fn t_osz(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let xh = x.abs().ln();
    let (c1, c2) = if x > 0.0 { (10.0, 7.9) } else { (5.5, 3.1) };
    x.signum() * (xh + 0.049 * ((c1 * xh).sin() + (c2 * xh).sin())).exp()
}

/// Asymmetry transform with exponent `beta`.
fn t_asy(z: &mut DVector<f64>, beta: f64) {
    let n = z.len();
    for i in 0..n {
        if z[i] > 0.0 {
            let e = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            z[i] = z[i].powf(1.0 + beta * e * z[i].sqrt());
        }
    }
}

/// `α^{½·i/(D−1)}` for coordinate `i`.
fn lambda_diag(alpha: f64, i: usize, n: usize) -> f64 {
    if n > 1 {
        alpha.powf(0.5 * i as f64 / (n - 1) as f64)
    } else {
        1.0
    }
}

fn boundary_penalty(x: &DVector<f64>) -> f64 {
    100.0 * x.iter().map(|v| (v.abs() - 5.0).max(0.0).powi(2)).sum::<f64>()
}

impl ProblemInstance {
    /// Moves the optimum; for tests and hand-built instances.
    pub fn with_optimum(mut self, x_opt: DVector<f64>, f_opt: f64) -> Result<Self> {
        if x_opt.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x_opt.len(),
            });
        }
        if let (Some(peaks), Some(rot)) = (self.gallagher.as_mut(), self.rotation.as_ref()) {
            peaks.rotated_centres[0] = rot * &x_opt;
        }
        self.x_opt = x_opt;
        self.f_opt = f_opt;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn rotate(&self, v: DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            Some(r) => r * v,
            None => v,
        }
    }

    /// Noise-free excess over the optimum, zero exactly at `x_opt`.
    pub fn delta_f(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim;
        let nf = n as f64;
        let shifted = x - &self.x_opt;
        let value = match self.base {
            BaseFunction::Sphere => shifted.norm_squared(),
            BaseFunction::Rosenbrock => {
                let z = shifted * (nf.sqrt() / 8.0).max(1.0);
                let z = z.add_scalar(1.0);
                rosenbrock_sum(&z)
            }
            BaseFunction::StepEllipsoid => {
                let z_hat = DVector::from_fn(n, |i, _| lambda_diag(10.0, i, n) * shifted[i]);
                let mut sum = 0.0;
                for i in 0..n {
                    let zi = z_hat[i];
                    let rounded = if zi.abs() > 0.5 {
                        (0.5 + zi).floor()
                    } else {
                        (0.5 + 10.0 * zi).floor() / 10.0
                    };
                    sum += 10f64.powf(2.0 * i as f64 / (nf - 1.0)) * rounded * rounded;
                }
                0.1 * (z_hat[0].abs() / 1e4).max(sum)
            }
            BaseFunction::Ellipsoid => {
                let z = self.rotate(shifted).map(t_osz);
                z.iter()
                    .enumerate()
                    .map(|(i, v)| self.ellipsoid_condition.powf(i as f64 / (nf - 1.0)) * v * v)
                    .sum()
            }
            BaseFunction::DifferentPowers => {
                let z = self.rotate(shifted);
                z.iter()
                    .enumerate()
                    .map(|(i, v)| v.abs().powf(2.0 + 4.0 * i as f64 / (nf - 1.0)))
                    .sum::<f64>()
                    .sqrt()
            }
            BaseFunction::SchafferF7 => {
                let mut z = self.rotate(shifted);
                t_asy(&mut z, 0.5);
                let z = self.rotate(z);
                let z = DVector::from_fn(n, |i, _| lambda_diag(10.0, i, n) * z[i]);
                let mut acc = 0.0;
                for i in 0..n - 1 {
                    let s = (z[i] * z[i] + z[i + 1] * z[i + 1]).sqrt();
                    let root = s.sqrt();
                    acc += root + root * (50.0 * s.powf(0.2)).sin().powi(2);
                }
                (acc / (nf - 1.0)).powi(2)
            }
            BaseFunction::GriewankRosenbrock => {
                let z = (self.rotate(shifted) * (nf.sqrt() / 8.0).max(1.0)).add_scalar(1.0);
                let mut acc = 0.0;
                for i in 0..n - 1 {
                    let s = 100.0 * (z[i] * z[i] - z[i + 1]).powi(2) + (z[i] - 1.0).powi(2);
                    acc += s / 4000.0 - s.cos();
                }
                10.0 * acc / (nf - 1.0) + 10.0
            }
            BaseFunction::Gallagher101 => {
                let peaks = self.gallagher.as_ref().expect("gallagher instance has peaks");
                let rx = self.rotate(x.clone());
                let mut best: f64 = 0.0;
                for ((c, w), cond) in peaks.rotated_centres.iter().zip(&peaks.weights).zip(&peaks.conditioning) {
                    let u = &rx - c;
                    let q: f64 = u.iter().zip(cond.iter()).map(|(ui, ci)| ci * ui * ui).sum();
                    best = best.max(w * (-q / (2.0 * nf)).exp());
                }
                t_osz(10.0 - best).powi(2)
            }
            BaseFunction::Rastrigin => {
                let z = self.rotate(shifted);
                let cos_sum: f64 = z.iter().map(|v| (2.0 * PI * v).cos()).sum();
                10.0 * (nf - cos_sum) + z.norm_squared()
            }
        };
        if self.function_id >= 101 {
            value + boundary_penalty(x)
        } else {
            value
        }
    }

    /// Noise-free objective value.
    pub fn evaluate_true(&self, x: &DVector<f64>) -> f64 {
        self.f_opt + self.delta_f(x)
    }

    /// Objective value seen by an optimizer; counts as one evaluation.
    pub fn evaluate_noisy<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let delta = self.delta_f(x);
        apply_noise(&self.noise, delta, self.f_opt + delta, rng)
    }
}

fn rosenbrock_sum(z: &DVector<f64>) -> f64 {
    (0..z.len() - 1)
        .map(|i| 100.0 * (z[i] * z[i] - z[i + 1]).powi(2) + (z[i] - 1.0).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantile(sorted: &[f64], q: f64) -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }

    fn draws(cfg: &NoiseConfig, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n).map(|_| apply_noise(cfg, 1.0, 1.0, &mut rng)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn instances_are_deterministic() {
        let a = make_instance(101, 5, 3).unwrap();
        let b = make_instance(101, 5, 3).unwrap();
        assert_eq!(a.x_opt, b.x_opt);
        assert_eq!(a.f_opt.to_bits(), b.f_opt.to_bits());
        let c = make_instance(125, 5, 3).unwrap();
        let d = make_instance(125, 5, 3).unwrap();
        assert_eq!(c.rotation, d.rotation);
    }

    #[test]
    fn fifteen_distinct_optima() {
        let opts: Vec<DVector<f64>> = (1..=15).map(|i| make_instance(101, 5, i).unwrap().x_opt).collect();
        for i in 0..15 {
            for j in (i + 1)..15 {
                assert_ne!(opts[i], opts[j]);
            }
            assert!(opts[i].iter().all(|v| (-4.0..=4.0).contains(v)));
        }
    }

    #[test]
    fn optimum_value_is_exact_for_every_function() {
        for fid in function_ids() {
            for dim in [2, 3, 5, 10, 20] {
                let inst = make_instance(fid, dim, 1).unwrap();
                assert_eq!(inst.delta_f(&inst.x_opt), 0.0, "f{fid} D={dim}");
                assert_eq!(inst.evaluate_true(&inst.x_opt), inst.f_opt, "f{fid} D={dim}");
            }
        }
    }

    #[test]
    fn optimum_is_a_minimum_locally() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for fid in function_ids() {
            let inst = make_instance(fid, 5, 2).unwrap();
            for _ in 0..50 {
                let x = &inst.x_opt + DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
                assert!(inst.delta_f(&x) >= 0.0, "f{fid}");
            }
        }
    }

    #[test]
    fn hand_computed_values() {
        let sphere = make_instance(1, 2, 1).unwrap().with_optimum(DVector::zeros(2), 0.0).unwrap();
        assert_eq!(sphere.evaluate_true(&DVector::from_vec(vec![3.0, 4.0])), 25.0);
        let rosen = make_instance(8, 4, 1).unwrap();
        let at = rosen.x_opt.clone();
        assert_eq!(rosen.delta_f(&at), 0.0);
        // z = x − x_opt + 1 = (2, 1, 1, 1): 100·(4−1)² + (2−1)² = 901
        let mut x = at.clone();
        x[0] += 1.0;
        assert!((rosen.delta_f(&x) - 901.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_function_is_rejected() {
        assert!(matches!(make_instance(131, 5, 1), Err(Error::UnknownFunction(131))));
        assert!(matches!(make_instance(2, 5, 1), Err(Error::UnknownFunction(2))));
        assert!(make_instance(101, 1, 1).is_err());
    }

    #[test]
    fn function_layout() {
        let (b, n) = describe_function(101, 5).unwrap();
        assert_eq!((b, n), (BaseFunction::Sphere, NoiseConfig::gaussian(Severity::Moderate)));
        let (b, n) = describe_function(103, 5).unwrap();
        assert_eq!((b, n), (BaseFunction::Sphere, NoiseConfig::cauchy(Severity::Moderate)));
        let (b, n) = describe_function(107, 5).unwrap();
        assert_eq!((b, n), (BaseFunction::Sphere, NoiseConfig::gaussian(Severity::Severe)));
        let (b, n) = describe_function(129, 5).unwrap();
        assert_eq!((b, n), (BaseFunction::Gallagher101, NoiseConfig::uniform(Severity::Severe, 5)));
        assert_eq!(NoiseConfig::gaussian(Severity::Moderate).model, NoiseModel::Gaussian { beta: 0.01 });
        assert_eq!(NoiseConfig::cauchy(Severity::Severe).model, NoiseModel::Cauchy { alpha: 1.0, p: 0.2 });
    }

    #[test]
    fn zero_beta_is_identity() {
        let cfg = NoiseConfig {
            model: NoiseModel::Gaussian { beta: 0.0 },
            severity: Severity::Moderate,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in [0.3, 17.25, 1e6] {
            assert_eq!(apply_noise(&cfg, v, v - 42.125, &mut rng), v - 42.125);
        }
    }

    #[test]
    fn gate_suppresses_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for cfg in [
            NoiseConfig::gaussian(Severity::Severe),
            NoiseConfig::uniform(Severity::Severe, 5),
            NoiseConfig::cauchy(Severity::Severe),
        ] {
            assert_eq!(apply_noise(&cfg, 1e-9, 3.5, &mut rng), 3.5);
        }
    }

    #[test]
    fn noise_free_instance_matches_true_channel() {
        let inst = make_instance(10, 5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DVector::from_element(5, 0.7);
        assert_eq!(inst.evaluate_noisy(&x, &mut rng), inst.evaluate_true(&x));
        assert_eq!(inst.evaluations(), 1);
    }

    #[test]
    fn gaussian_log_ratio_statistics() {
        let v = draws(&NoiseConfig::gaussian(Severity::Moderate), 100_000, 4);
        let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let std = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.01).abs() <= 0.001, "std {std}");
        let median = quantile(&v, 0.5);
        assert!((median - 1.0).abs() <= 0.01);
    }

    #[test]
    fn cauchy_outlier_frequency() {
        let cfg = NoiseConfig::cauchy(Severity::Severe);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let baseline = 1.0 + 1.0 * 1000.0;
        let perturbed = (0..100_000).filter(|_| apply_noise(&cfg, 1.0, 1.0, &mut rng) != baseline).count();
        let frac = perturbed as f64 / 100_000.0;
        assert!((0.18..=0.22).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn severe_noise_is_wider_than_moderate() {
        let iqr = |v: &[f64]| quantile(v, 0.75) - quantile(v, 0.25);
        for (m, s) in [
            (NoiseConfig::gaussian(Severity::Moderate), NoiseConfig::gaussian(Severity::Severe)),
            (NoiseConfig::uniform(Severity::Moderate, 5), NoiseConfig::uniform(Severity::Severe, 5)),
        ] {
            assert!(iqr(&draws(&s, 10_000, 6)) > iqr(&draws(&m, 10_000, 7)));
        }
        // Both Cauchy variants leave more than half of the draws unperturbed,
        // so their spread shows in the outer quantiles only.
        let spread = |v: &[f64]| quantile(v, 0.95) - quantile(v, 0.05);
        let m = draws(&NoiseConfig::cauchy(Severity::Moderate), 10_000, 8);
        let s = draws(&NoiseConfig::cauchy(Severity::Severe), 10_000, 9);
        assert!(spread(&s) > spread(&m));
    }

    #[test]
    fn noisy_outputs_are_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for fid in 101..=130 {
            let inst = make_instance(fid, 5, 1).unwrap();
            for _ in 0..200 {
                let x = DVector::from_fn(5, |_, _| rng.random_range(-6.0..6.0));
                assert!(inst.evaluate_noisy(&x, &mut rng).is_finite(), "f{fid}");
            }
        }
    }
}
