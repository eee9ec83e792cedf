//! Lorentz-model operations recorded on a [`Tape`].
//!
//! Every function works on a stack of `n` row vectors of width `D = d + 1`,
//! with the curvature parameter `k` passed as a `1×1` variable so that it is
//! trainable. The closed forms below are algebraically identical to the ones
//! in [`crate::manifold`] but are written in terms of smooth scalar functions
//! so that gradients stay finite at zero tangent vectors and coincident
//! points:
//!
//! - `exp_x(v) = cosh(r)·x + sinhc(r)·v` with `r² = ⟨v,v⟩_L / k`
//! - `log_x(y) = h(a)·(y − a·x)` with `a = −⟨x,y⟩_L / k`, `h(a) = arcosh(a)/√(a²−1)`
//! - `P_{o→x}(b) = b + ⟨x,b⟩_L / (k − ⟨o,x⟩_L) · (o + x)`

use crate::autodiff::{Tape, Unary, Var};
use crate::error::Result;
use crate::manifold::{Activation, CURVATURE_FLOOR};
use crate::tensor::Tensor;

/// `k = softplus(raw) + floor` as a `1×1` variable.
pub fn curvature(t: &mut Tape, kappa_raw: Var) -> Result<Var> {
    let sp = t.softplus(kappa_raw)?;
    t.affine(sp, 1.0, CURVATURE_FLOOR)
}

fn width(t: &Tape, x: Var) -> usize {
    t.shape(x)[1]
}

/// Row-wise Lorentz inner products, `n×1`.
pub fn inner_rows(t: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let d1 = width(t, x);
    let mut sig = vec![1.0; d1];
    sig[0] = -1.0;
    let sig = t.constant(Tensor::column_vector(sig));
    let prod = t.mul(x, y)?;
    t.matmul(prod, sig)
}

/// Zeroes the time coordinate of every row.
pub fn zero_time(t: &mut Tape, v: Var) -> Result<Var> {
    let d1 = width(t, v);
    let mut mask = vec![1.0; d1];
    mask[0] = 0.0;
    let mask = t.constant(Tensor::row_vector(mask));
    t.mul(v, mask)
}

/// Lifts space coordinates onto the hyperboloid: `x_0 = √(k + ‖x_s‖²)`.
pub fn project(t: &mut Tape, space: Var, k: Var) -> Result<Var> {
    let sq = t.square(space)?;
    let norms = t.sum_rows(sq)?;
    let shifted = t.add(norms, k)?;
    let time = t.sqrt(shifted)?;
    t.concat_cols(&[time, space])
}

fn space_of(t: &mut Tape, x: Var) -> Result<Var> {
    let d1 = width(t, x);
    t.slice_cols(x, 1..d1)
}

fn time_of(t: &mut Tape, x: Var) -> Result<Var> {
    t.slice_cols(x, 0..1)
}

/// `exp_o^k` of rows tangent at the origin (their time coordinate is ignored).
pub fn exp_origin(t: &mut Tape, v: Var, k: Var) -> Result<Var> {
    let space = space_of(t, v)?;
    let sq = t.square(space)?;
    let s = t.sum_rows(sq)?;
    let u = t.div(s, k)?;
    let f = t.unary(u, Unary::SinhcSqrt)?;
    let scaled = t.mul(space, f)?;
    project(t, scaled, k)
}

/// `log_o^k` of points; the time coordinate of the result is exactly zero.
pub fn log_origin(t: &mut Tape, x: Var, k: Var) -> Result<Var> {
    let rows = t.shape(x)[0];
    let time = time_of(t, x)?;
    let space = space_of(t, x)?;
    let sqrt_k = t.sqrt(k)?;
    let a = t.div(time, sqrt_k)?;
    let h = t.unary(a, Unary::ArcoshRatio)?;
    let scaled = t.mul(space, h)?;
    let zeros = t.constant(Tensor::zeros(rows, 1));
    t.concat_cols(&[zeros, scaled])
}

/// Row-wise `exp_x(v)` for `v` tangent at `x`.
pub fn exp_at(t: &mut Tape, x: Var, v: Var, k: Var) -> Result<Var> {
    let vv = inner_rows(t, v, v)?;
    let vv = t.clamp(vv, 0.0, f64::INFINITY)?;
    let u = t.div(vv, k)?;
    let c = t.unary(u, Unary::CoshSqrt)?;
    let s = t.unary(u, Unary::SinhcSqrt)?;
    let cx = t.mul(x, c)?;
    let sv = t.mul(v, s)?;
    let sum = t.add(cx, sv)?;
    let space = space_of(t, sum)?;
    project(t, space, k)
}

/// Row-wise `log_x(y)`.
pub fn log_at(t: &mut Tape, x: Var, y: Var, k: Var) -> Result<Var> {
    let xy = inner_rows(t, x, y)?;
    let neg = t.neg(xy)?;
    let a = t.div(neg, k)?;
    let h = t.unary(a, Unary::ArcoshRatio)?;
    let ax = t.mul(x, a)?;
    let diff = t.sub(y, ax)?;
    t.mul(diff, h)
}

/// Row-wise geodesic distance `√k · arcosh(−⟨x,y⟩_L / k)`, `n×1`.
pub fn distance(t: &mut Tape, x: Var, y: Var, k: Var) -> Result<Var> {
    let xy = inner_rows(t, x, y)?;
    let neg = t.neg(xy)?;
    let a = t.div(neg, k)?;
    let ac = t.arcosh(a)?;
    let sqrt_k = t.sqrt(k)?;
    t.mul(ac, sqrt_k)
}

/// `P_{o→x}(b)` for rows `b` tangent at the origin.
pub fn transport_from_origin(t: &mut Tape, x: Var, b: Var, k: Var) -> Result<Var> {
    let b = zero_time(t, b)?;
    let xb = inner_rows(t, x, b)?;
    let sqrt_k = t.sqrt(k)?;
    let x0 = time_of(t, x)?;
    let x0_sqrt_k = t.mul(x0, sqrt_k)?;
    let denom = t.add(x0_sqrt_k, k)?;
    let coef = t.div(xb, denom)?;
    let shifted_time = t.add(x0, sqrt_k)?;
    let x_space = space_of(t, x)?;
    let o_plus_x = t.concat_cols(&[shifted_time, x_space])?;
    let correction = t.mul(o_plus_x, coef)?;
    t.add(b, correction)
}

/// `x ⊕ b = exp_x(P_{o→x}(b))`; `b` is a single `1×D` bias row.
pub fn bias_add(t: &mut Tape, x: Var, b: Var, k: Var) -> Result<Var> {
    let rows = t.shape(x)[0];
    let b_rows = t.gather_rows(b, &vec![0; rows])?;
    let moved = transport_from_origin(t, x, b_rows, k)?;
    exp_at(t, x, moved, k)
}

/// `W ⊗ x = exp_o(W · log_o(x))` applied to each row, i.e. `exp_o(log_o(X) Wᵀ)`.
pub fn matmul_hyp(t: &mut Tape, x: Var, w: Var, k: Var) -> Result<Var> {
    let tangent = log_origin(t, x, k)?;
    let wt = t.transpose(w)?;
    let mapped = t.matmul(tangent, wt)?;
    let mapped = zero_time(t, mapped)?;
    exp_origin(t, mapped, k)
}

/// `exp_o^{k_out}(σ(log_o^{k_in}(x)))`.
pub fn activation(t: &mut Tape, x: Var, act: Activation, k_in: Var, k_out: Var) -> Result<Var> {
    let tangent = log_origin(t, x, k_in)?;
    let activated = match act {
        Activation::Identity => tangent,
        Activation::Relu => t.relu(tangent)?,
        Activation::LeakyRelu(slope) => t.leaky_relu(tangent, slope)?,
        Activation::Tanh => t.tanh(tangent)?,
    };
    let activated = zero_time(t, activated)?;
    exp_origin(t, activated, k_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{self, LorentzPoint, TangentVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows_of(t: &Tape, v: Var) -> Vec<Vec<f64>> {
        t.value(v).to_nested()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    fn random_space(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn tape_ops_agree_with_reference_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &k in &[0.5, 1.0, 2.0] {
            let d = 5;
            let xs: Vec<LorentzPoint> = (0..4)
                .map(|_| manifold::exp_origin(&random_space(&mut rng, d, 0.8), k))
                .collect();
            let ys: Vec<LorentzPoint> = (0..4)
                .map(|_| manifold::exp_origin(&random_space(&mut rng, d, 0.8), k))
                .collect();
            let mut t = Tape::new();
            let kv = t.constant(Tensor::scalar(k));
            let xv = t.constant(
                Tensor::from_rows(&xs.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>())
                    .unwrap(),
            );
            let yv = t.constant(
                Tensor::from_rows(&ys.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>())
                    .unwrap(),
            );

            let logs = log_at(&mut t, xv, yv, kv).unwrap();
            let dists = distance(&mut t, xv, yv, kv).unwrap();
            let back = exp_at(&mut t, xv, logs, kv).unwrap();
            let lo = log_origin(&mut t, xv, kv).unwrap();
            let bias = t.constant(Tensor::row_vector(
                std::iter::once(0.0)
                    .chain(random_space(&mut rng, d, 0.5))
                    .collect(),
            ));
            let moved = bias_add(&mut t, xv, bias, kv).unwrap();

            let b_ref = TangentVector::at_origin(&t.value(bias).data()[1..], k);
            for i in 0..4 {
                let l_ref = manifold::log_map(&xs[i], &ys[i]).unwrap();
                assert!(close(&rows_of(&t, logs)[i], l_ref.coords(), 1e-10));
                let d_ref = manifold::distance(&xs[i], &ys[i]).unwrap();
                assert!((t.value(dists).get(i, 0) - d_ref).abs() < 1e-10);
                assert!(close(&rows_of(&t, back)[i], ys[i].coords(), 1e-10));
                assert!(close(
                    &rows_of(&t, lo)[i],
                    &manifold::log_origin(&xs[i]),
                    1e-10
                ));
                let m_ref = manifold::hyp_bias_add(&xs[i], &b_ref).unwrap();
                assert!(close(&rows_of(&t, moved)[i], m_ref.coords(), 1e-10));
            }
        }
    }

    #[test]
    fn exp_of_zero_tangent_is_identity_with_finite_gradient() {
        let mut t = Tape::new();
        let k = t.param(Tensor::scalar(1.3));
        let space = t.param(Tensor::row_vector(vec![0.2, -0.1]));
        let x = project(&mut t, space, k).unwrap();
        let zero = t.constant(Tensor::zeros(1, 3));
        let y = exp_at(&mut t, x, zero, k).unwrap();
        assert!(close(t.value(y).data(), t.value(x).data(), 1e-15));
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(space).all_finite());
        assert!(g.get(k).all_finite());
    }
}
