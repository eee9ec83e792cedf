//! Self-checks: randomized manifold properties and the toy-model gradient sweep.
//!
//! The manifold operations are injected through [`ManifoldOps`] so that a
//! deliberately broken implementation can be fed to the same suite.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Pair;
use crate::error::Result;
use crate::manifold::{self, LorentzPoint, TangentVector};
use crate::model::{HyperParams, Model};
use crate::training::{self, GradCheckReport};

pub type ExpFn = fn(&LorentzPoint, &TangentVector) -> Result<LorentzPoint>;
pub type LogFn = fn(&LorentzPoint, &LorentzPoint) -> Result<TangentVector>;
pub type DistFn = fn(&LorentzPoint, &LorentzPoint) -> Result<f64>;
pub type TransportFn = fn(&LorentzPoint, &LorentzPoint, &TangentVector) -> Result<TangentVector>;

#[derive(Clone, Copy)]
pub struct ManifoldOps {
    pub exp_map: ExpFn,
    pub log_map: LogFn,
    pub distance: DistFn,
    pub parallel_transport: TransportFn,
}

impl Default for ManifoldOps {
    fn default() -> Self {
        ManifoldOps {
            exp_map: manifold::exp_map,
            log_map: manifold::log_map,
            distance: manifold::distance,
            parallel_transport: manifold::parallel_transport,
        }
    }
}

pub const CONSTRAINT_TOL: f64 = 1e-8;
pub const ROUNDTRIP_TOL: f64 = 1e-7;
pub const TRIANGLE_SLACK: f64 = 1e-9;
pub const TRANSPORT_TOL: f64 = 1e-7;
pub const GEODESIC_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub dims: Vec<usize>,
    pub curvatures: Vec<f64>,
    pub instances: usize,
    pub seed: u64,
}

impl SuiteConfig {
    pub fn quick() -> Self {
        SuiteConfig {
            dims: vec![2, 8],
            curvatures: vec![0.5, 1.0, 2.0],
            instances: 200,
            seed: 0,
        }
    }

    pub fn thorough() -> Self {
        SuiteConfig {
            dims: vec![2, 8, 64],
            curvatures: vec![0.5, 1.0, 2.0],
            instances: 1000,
            seed: 0,
        }
    }
}

/// Worst observed value of one property against its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    /// `d`, `k` and instance index of the worst case.
    pub worst_case: (usize, f64, usize),
    /// Exact properties compare with `<=`, the rest with `<`.
    pub exact: bool,
}

impl PropertyResult {
    fn new(name: &'static str, tolerance: f64, exact: bool) -> Self {
        PropertyResult {
            name,
            worst: 0.0,
            tolerance,
            worst_case: (0, 0.0, 0),
            exact,
        }
    }

    fn record(&mut self, value: f64, case: (usize, f64, usize)) {
        if value > self.worst || value.is_nan() && !self.worst.is_nan() {
            self.worst = value;
            self.worst_case = case;
        }
    }

    pub fn passed(&self) -> bool {
        if self.exact {
            self.worst <= self.tolerance
        } else {
            self.worst < self.tolerance
        }
    }

    /// How far past its tolerance the worst case is; NaN counts as infinite.
    fn severity(&self) -> f64 {
        if self.worst.is_nan() {
            f64::INFINITY
        } else {
            self.worst / self.tolerance.max(f64::MIN_POSITIVE)
        }
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (d, k, i) = self.worst_case;
        write!(
            f,
            "{:<20} worst={:.3e} tol={:.0e} (d={d} k={k} #{i}) {}",
            self.name,
            self.worst,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub results: Vec<PropertyResult>,
    /// Operations that returned an error, with their case.
    pub errors: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.results.iter().all(PropertyResult::passed)
    }

    /// The failing property furthest past its tolerance.
    pub fn worst_offender(&self) -> Option<&PropertyResult> {
        self.results
            .iter()
            .filter(|r| !r.passed())
            .max_by(|a, b| a.severity().total_cmp(&b.severity()))
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_point(rng: &mut impl Rng, d: usize, k: f64) -> LorentzPoint {
    let dir = gaussian(rng, d);
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = rng.random_range(0.0..2.0) * k.sqrt();
    let space: Vec<f64> = dir.iter().map(|v| v * r / n).collect();
    manifold::exp_origin(&space, k)
}

/// A tangent vector at `x` with Lorentz norm in `[1e-3, 3)·√k`.
fn random_tangent(rng: &mut impl Rng, x: &LorentzPoint) -> TangentVector {
    let k = x.k();
    let mut v = gaussian(rng, x.coords().len());
    let coef = manifold::lorentz_inner(&v, x.coords()).expect("same length") / k;
    for (vi, xi) in v.iter_mut().zip(x.coords()) {
        *vi += coef * xi;
    }
    let t = TangentVector::new(v, x).expect("projected onto the tangent space");
    let norm = manifold::lorentz_norm(&t).max(1e-300);
    let target = rng.random_range(1e-3..3.0) * k.sqrt();
    t.scaled(target / norm)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    inf_norm(&diff) / inf_norm(b).max(f64::MIN_POSITIVE)
}

fn constraint(x: &LorentzPoint) -> f64 {
    let inner = manifold::lorentz_inner(x.coords(), x.coords()).unwrap_or(f64::NAN);
    (inner + x.k()).abs()
}

/// Randomized manifold property checks over every `(d, k)` in `cfg`.
pub fn run_manifold_suite(ops: &ManifoldOps, cfg: &SuiteConfig) -> SuiteReport {
    let mut constraint_r = PropertyResult::new("constraint", CONSTRAINT_TOL, false);
    let mut exp_log = PropertyResult::new("exp_log_roundtrip", ROUNDTRIP_TOL, false);
    let mut log_exp = PropertyResult::new("log_exp_roundtrip", ROUNDTRIP_TOL, false);
    let mut symmetry = PropertyResult::new("distance_symmetry", 0.0, true);
    let mut triangle = PropertyResult::new("triangle_inequality", TRIANGLE_SLACK, true);
    let mut transport = PropertyResult::new("transport_isometry", TRANSPORT_TOL, false);
    let mut errors = Vec::new();

    for &d in &cfg.dims {
        for &k in &cfg.curvatures {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((d as u64) << 32) ^ k.to_bits());
            for i in 0..cfg.instances {
                let case = (d, k, i);
                let x = random_point(&mut rng, d, k);
                let y = random_point(&mut rng, d, k);
                let z = random_point(&mut rng, d, k);
                let u = random_tangent(&mut rng, &x);
                let w = random_tangent(&mut rng, &x);
                let outcome = (|| -> Result<()> {
                    for p in [&x, &y, &z] {
                        constraint_r.record(constraint(p), case);
                    }

                    let ex = (ops.exp_map)(&x, &u)?;
                    constraint_r.record(constraint(&ex), case);
                    let back = (ops.log_map)(&x, &ex)?;
                    log_exp.record(rel_diff(back.coords(), u.coords()), case);

                    let l = (ops.log_map)(&x, &y)?;
                    let again = (ops.exp_map)(&x, &l)?;
                    constraint_r.record(constraint(&again), case);
                    exp_log.record(rel_diff(again.coords(), y.coords()), case);

                    let dxy = (ops.distance)(&x, &y)?;
                    let dyx = (ops.distance)(&y, &x)?;
                    symmetry.record((dxy - dyx).abs(), case);
                    let dxz = (ops.distance)(&x, &z)?;
                    let dyz = (ops.distance)(&y, &z)?;
                    triangle.record(dxz - dxy - dyz, case);

                    let pu = (ops.parallel_transport)(&x, &y, &u)?;
                    let pw = (ops.parallel_transport)(&x, &y, &w)?;
                    let before = manifold::lorentz_inner(u.coords(), w.coords())?;
                    let after = manifold::lorentz_inner(pu.coords(), pw.coords())?;
                    transport.record((before - after).abs(), case);
                    Ok(())
                })();
                if let Err(e) = outcome {
                    errors.push(format!("d={d} k={k} #{i}: {e}"));
                }
            }
        }
    }
    SuiteReport {
        results: vec![
            constraint_r,
            exp_log,
            log_exp,
            symmetry,
            triangle,
            transport,
        ],
        errors,
    }
}

/// `distance(o, (cosh t, sinh t, 0)) − t` for `t ∈ {0.1, 1, 3}` at `k = 1`.
pub fn geodesic_check() -> Result<Vec<(f64, f64)>> {
    let o = manifold::origin(2, 1.0);
    [0.1f64, 1.0, 3.0]
        .iter()
        .map(|&t| {
            let p = LorentzPoint::from_coords_unchecked(vec![t.cosh(), t.sinh(), 0.0], 1.0);
            Ok((t, (manifold::distance(&o, &p)? - t).abs()))
        })
        .collect()
}

pub const GRAD_CHECK_H: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-3;

/// Finite-difference sweep over the toy model (`d = 4`, `|V| = 6`, `L = 1`,
/// `J = 1`, three sessions) with `β = 0` and `β = 0.1`.
pub fn toy_gradient_sweep(seed: u64) -> Result<Vec<(f64, GradCheckReport)>> {
    let pairs = vec![
        Pair {
            session: 0,
            prefix: vec![0, 1, 2, 1],
            target: 3,
        },
        Pair {
            session: 1,
            prefix: vec![4],
            target: 5,
        },
        Pair {
            session: 2,
            prefix: vec![2, 2, 5],
            target: 0,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = pairs
        .iter()
        .map(|p| training::sample_negatives(&mut rng, 6, p, 1))
        .collect::<Result<Vec<_>>>()?;
    [0.0, 0.1]
        .iter()
        .map(|&beta| {
            let hyper = HyperParams {
                dim: 4,
                layers: 1,
                blocks: 1,
                beta,
                ..HyperParams::default()
            };
            let model = Model::new(hyper, 6, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let report = training::gradient_check(
                &model,
                &pairs,
                &negatives,
                3e-3,
                GRAD_CHECK_H,
                GRAD_CHECK_TOL,
            )?;
            Ok((beta, report))
        })
        .collect()
}
