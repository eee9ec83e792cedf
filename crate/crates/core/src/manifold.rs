//! Lorentz (hyperboloid) model of hyperbolic space.
//!
//! A point lives on the upper sheet
//!
//! ```text
//! H^d_k = { x ∈ R^{d+1} : ⟨x,x⟩_L = −k, x_0 > 0 },   ⟨x,y⟩_L = −x_0 y_0 + Σ_{i≥1} x_i y_i
//! ```
//!
//! whose sectional curvature is `−1/k`. The distinguished origin is
//! `o = (√k, 0, …, 0)`; the tangent space at `o` is exactly the set of
//! vectors with a zero time coordinate, which is where item embeddings and
//! all trainable linear maps live.
//!
//! These are plain `f64` routines used for analysis, diagnostics and as the
//! reference path in tests. The differentiable versions used by the model are
//! in [`crate::lorentz_tape`].

use crate::error::{HcgrError, Result};
use crate::tensor::Tensor;

/// Lower bound added to the softplus so that `k` never reaches zero.
pub const CURVATURE_FLOOR: f64 = 1e-4;

/// Below this Lorentzian norm `exp_map` uses the first-order series `x + v`.
pub const EXP_SERIES_THRESHOLD: f64 = 1e-12;

/// Below this distance `log_map` returns the zero vector.
pub const LOG_COINCIDENT_THRESHOLD: f64 = 1e-10;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "softplus range is (0, inf)");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Trainable curvature, reparameterised so that `k = softplus(raw) + 1e-4 > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    pub kappa_raw: f64,
}

impl Curvature {
    /// The raw value that yields exactly `k`.
    pub fn from_k(k: f64) -> Self {
        assert!(k > CURVATURE_FLOOR, "k must exceed the curvature floor");
        Curvature {
            kappa_raw: inverse_softplus(k - CURVATURE_FLOOR),
        }
    }

    pub fn k(&self) -> f64 {
        softplus(self.kappa_raw) + CURVATURE_FLOOR
    }

    /// Sectional curvature `c = −1/k`.
    pub fn sectional(&self) -> f64 {
        -1.0 / self.k()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    k: f64,
}

impl LorentzPoint {
    /// Wraps coordinates that are already on the hyperboloid, without repair.
    pub fn from_coords_unchecked(coords: Vec<f64>, k: f64) -> Self {
        LorentzPoint { coords, k }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Intrinsic dimension `d` (the ambient dimension is `d + 1`).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[1..]
    }

    /// `|⟨x,x⟩_L + k|`.
    pub fn constraint_residual(&self) -> f64 {
        (minkowski(&self.coords, &self.coords) + self.k).abs()
    }

    pub fn is_origin(&self) -> bool {
        self.space().iter().all(|&v| v == 0.0)
    }
}

/// `o = (√k, 0, …, 0)` in `H^d_k`.
pub fn origin(d: usize, k: f64) -> LorentzPoint {
    let mut coords = vec![0.0; d + 1];
    coords[0] = k.sqrt();
    LorentzPoint { coords, k }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    base: LorentzPoint,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>, base: &LorentzPoint) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(HcgrError::invalid(format!(
                "tangent vector has {} coordinates, base point has {}",
                coords.len(),
                base.coords.len()
            )));
        }
        Ok(TangentVector {
            coords,
            base: base.clone(),
        })
    }

    pub fn zero(base: &LorentzPoint) -> Self {
        TangentVector {
            coords: vec![0.0; base.coords.len()],
            base: base.clone(),
        }
    }

    /// A tangent vector at the origin from its `d` space coordinates.
    pub fn at_origin(space: &[f64], k: f64) -> Self {
        let mut coords = Vec::with_capacity(space.len() + 1);
        coords.push(0.0);
        coords.extend_from_slice(space);
        TangentVector {
            coords,
            base: origin(space.len(), k),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    /// `|⟨v, base⟩_L|`.
    pub fn tangency_residual(&self) -> f64 {
        minkowski(&self.coords, &self.base.coords).abs()
    }

    pub fn scaled(&self, alpha: f64) -> TangentVector {
        TangentVector {
            coords: self.coords.iter().map(|v| alpha * v).collect(),
            base: self.base.clone(),
        }
    }
}

#[inline]
fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    let space: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    -x[0] * y[0] + space
}

/// Lorentz inner product `−x_0 y_0 + Σ_{i≥1} x_i y_i`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HcgrError::invalid(format!(
            "lorentz_inner dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(HcgrError::invalid("lorentz_inner needs dimension >= 2"));
    }
    Ok(minkowski(x, y))
}

fn norm_of(coords: &[f64]) -> f64 {
    minkowski(coords, coords).max(0.0).sqrt()
}

/// `√max(⟨v,v⟩_L, 0)`.
pub fn lorentz_norm(v: &TangentVector) -> f64 {
    norm_of(&v.coords)
}

fn same_curvature(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn check_pair(x: &LorentzPoint, y: &LorentzPoint, op: &str) -> Result<()> {
    if !same_curvature(x.k, y.k) {
        return Err(HcgrError::invalid(format!(
            "{op}: curvature mismatch ({} vs {})",
            x.k, y.k
        )));
    }
    if x.coords.len() != y.coords.len() {
        return Err(HcgrError::invalid(format!(
            "{op}: dimension mismatch ({} vs {})",
            x.coords.len(),
            y.coords.len()
        )));
    }
    Ok(())
}

fn check_base(x: &LorentzPoint, v: &TangentVector, op: &str) -> Result<()> {
    check_pair(x, &v.base, op)?;
    let scale = x.coords.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
    let mismatch = x
        .coords
        .iter()
        .zip(&v.base.coords)
        .any(|(a, b)| (a - b).abs() > 1e-12 * scale);
    if mismatch {
        return Err(HcgrError::invalid(format!(
            "{op}: tangent vector is based at a different point"
        )));
    }
    Ok(())
}

/// Geodesic distance `√k · arcosh(−⟨x,y⟩_L / k)`.
///
/// Near the diagonal the equivalent chord form
/// `2√k · asinh(‖x − y‖_L / 2√k)` is used; it avoids the catastrophic
/// cancellation of `arcosh(1 + ε)`.
pub fn distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_pair(x, y, "distance")?;
    Ok(distance_unchecked(&x.coords, &y.coords, x.k))
}

fn distance_unchecked(x: &[f64], y: &[f64], k: f64) -> f64 {
    let arg = (-minkowski(x, y) / k).max(1.0);
    if arg > 1.0 + 1e-3 {
        return k.sqrt() * arg.acosh();
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let chord = norm_of(&diff);
    2.0 * k.sqrt() * (chord / (2.0 * k.sqrt())).asinh()
}

/// Recomputes the time coordinate so that `⟨x,x⟩_L = −k` and `x_0 > 0`.
pub fn project_to_hyperboloid(coords: &[f64], k: f64) -> LorentzPoint {
    let mut out = coords.to_vec();
    let space_sq: f64 = out[1..].iter().map(|v| v * v).sum();
    out[0] = (k + space_sq).sqrt();
    LorentzPoint { coords: out, k }
}

/// Removes the component of `v` along `x`: `v + (⟨v,x⟩_L / k) x`.
fn project_to_tangent(v: &mut [f64], x: &LorentzPoint) {
    let coef = minkowski(v, &x.coords) / x.k;
    for (vi, xi) in v.iter_mut().zip(&x.coords) {
        *vi += coef * xi;
    }
}

pub fn exp_map(x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    check_base(x, v, "exp_map")?;
    let norm = lorentz_norm(v);
    if norm < EXP_SERIES_THRESHOLD {
        let sum: Vec<f64> = x.coords.iter().zip(&v.coords).map(|(a, b)| a + b).collect();
        return Ok(project_to_hyperboloid(&sum, x.k));
    }
    let sqrt_k = x.k.sqrt();
    let r = norm / sqrt_k;
    let (c, s) = (r.cosh(), sqrt_k * r.sinh() / norm);
    let out: Vec<f64> = x
        .coords
        .iter()
        .zip(&v.coords)
        .map(|(a, b)| c * a + s * b)
        .collect();
    Ok(project_to_hyperboloid(&out, x.k))
}

pub fn log_map(x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    check_pair(x, y, "log_map")?;
    let dist = distance_unchecked(&x.coords, &y.coords, x.k);
    if dist < LOG_COINCIDENT_THRESHOLD {
        return Ok(TangentVector::zero(x));
    }
    let inner = minkowski(&x.coords, &y.coords);
    let mut u: Vec<f64> = y
        .coords
        .iter()
        .zip(&x.coords)
        .map(|(b, a)| b + inner / x.k * a)
        .collect();
    let norm = norm_of(&u);
    if norm == 0.0 {
        return Ok(TangentVector::zero(x));
    }
    for ui in u.iter_mut() {
        *ui *= dist / norm;
    }
    project_to_tangent(&mut u, x);
    Ok(TangentVector {
        coords: u,
        base: x.clone(),
    })
}

/// Transports `v ∈ T_x` to `T_y` along the geodesic:
/// `v − (⟨log_x y, v⟩_L / d(x,y)²) (log_x y + log_y x)`.
pub fn parallel_transport(
    x: &LorentzPoint,
    y: &LorentzPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    check_pair(x, y, "parallel_transport")?;
    check_base(x, v, "parallel_transport")?;
    let dist = distance_unchecked(&x.coords, &y.coords, x.k);
    if dist < LOG_COINCIDENT_THRESHOLD {
        return Ok(TangentVector {
            coords: v.coords.clone(),
            base: y.clone(),
        });
    }
    let lxy = log_map(x, y)?;
    let lyx = log_map(y, x)?;
    let coef = minkowski(&lxy.coords, &v.coords) / (dist * dist);
    let mut out: Vec<f64> = v
        .coords
        .iter()
        .zip(lxy.coords.iter().zip(&lyx.coords))
        .map(|(vi, (a, b))| vi - coef * (a + b))
        .collect();
    project_to_tangent(&mut out, y);
    Ok(TangentVector {
        coords: out,
        base: y.clone(),
    })
}

/// `W ⊗ x = exp_o(W · log_o(x))`; `W` is `m×(d+1)` and the result lives in
/// `H^{m−1}` under the same `k`. The time coordinate of `W · log_o(x)` is
/// zeroed so that it is tangent at the output origin.
pub fn hyp_matmul(w: &Tensor, x: &LorentzPoint) -> Result<LorentzPoint> {
    if w.rows() < 2 {
        return Err(HcgrError::invalid(
            "hyp_matmul needs at least 2 output rows",
        ));
    }
    if w.cols() != x.coords.len() {
        return Err(HcgrError::invalid(format!(
            "hyp_matmul: W has {} columns, point has {} coordinates",
            w.cols(),
            x.coords.len()
        )));
    }
    let o_in = origin(x.dim(), x.k);
    let t = log_map(&o_in, x)?;
    let mut u = w.matvec(&t.coords)?;
    u[0] = 0.0;
    let o_out = origin(w.rows() - 1, x.k);
    exp_map(&o_out, &TangentVector::new(u, &o_out)?)
}

/// `x ⊕ b = exp_x(P_{o→x}(b))` for a bias `b` tangent at the origin.
pub fn hyp_bias_add(x: &LorentzPoint, b: &TangentVector) -> Result<LorentzPoint> {
    let o = origin(x.dim(), x.k);
    check_base(&o, b, "hyp_bias_add")?;
    let moved = parallel_transport(&o, x, b)?;
    exp_map(x, &moved)
}

/// Elementwise activations that fix zero, so that the origin is a fixed point
/// of [`hyp_activation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(slope) => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.2)
    }
}

/// `exp_o^{k_next}(σ(log_o^{k}(x)))`, moving the point between curvatures.
pub fn hyp_activation(x: &LorentzPoint, act: Activation, k_next: f64) -> Result<LorentzPoint> {
    if k_next <= 0.0 {
        return Err(HcgrError::invalid("k_next must be positive"));
    }
    let t = log_map(&origin(x.dim(), x.k), x)?;
    let mut a: Vec<f64> = t.coords.iter().map(|&v| act.apply(v)).collect();
    a[0] = 0.0;
    let o_next = origin(x.dim(), k_next);
    exp_map(&o_next, &TangentVector::new(a, &o_next)?)
}

/// `exp_o^k` of a tangent vector given by its space coordinates.
pub fn exp_origin(space: &[f64], k: f64) -> LorentzPoint {
    let v = TangentVector::at_origin(space, k);
    exp_map(v.base(), &v).expect("origin-based vector is always valid")
}

/// `log_o^k(x)` with its (zero) time coordinate included.
pub fn log_origin(x: &LorentzPoint) -> Vec<f64> {
    let mut t = log_map(&origin(x.dim(), x.k), x)
        .expect("point and origin share curvature")
        .into_coords();
    t[0] = 0.0;
    t
}
