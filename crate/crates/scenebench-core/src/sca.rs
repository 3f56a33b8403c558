//! Numeric reference kernel for scene-context attention and the
//! rectified-flow matching loss.
//!
//! Everything here runs in f64: this module exists to check identities at
//! tight tolerances, not to be fast.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Queries/keys/values for one instance plus the scene-branch keys/values.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q_instance: DMatrix<f64>,
    pub k_instance: DMatrix<f64>,
    pub k_scene: DMatrix<f64>,
    pub v_instance: DMatrix<f64>,
    pub v_scene: DMatrix<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `softmax(Q K^T / sqrt(d)) V`.
pub fn self_attention(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>, KernelError> {
    if q.ncols() != k.ncols() {
        return Err(KernelError::Shape(format!(
            "Q has d={} but K has d={}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(KernelError::Shape(format!(
            "K has {} rows but V has {}",
            k.nrows(),
            v.nrows()
        )));
    }
    if !q.iter().chain(k.iter()).chain(v.iter()).all(|x| x.is_finite()) {
        return Err(KernelError::Domain("non-finite attention input".into()));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let logits = q * k.transpose() * scale;
    Ok(softmax_rows(&logits) * v)
}

/// Attention over the concatenation `[K_i; K_s]`, `[V_i; V_s]`.
pub fn scene_context_attention(inputs: &AttentionInputs) -> Result<DMatrix<f64>, KernelError> {
    let AttentionInputs {
        q_instance,
        k_instance,
        k_scene,
        v_instance,
        v_scene,
    } = inputs;
    if k_instance.ncols() != k_scene.ncols() {
        return Err(KernelError::Shape(format!(
            "instance keys d={} vs scene keys d={}",
            k_instance.ncols(),
            k_scene.ncols()
        )));
    }
    if v_instance.ncols() != v_scene.ncols() {
        return Err(KernelError::Shape(format!(
            "instance values d_v={} vs scene values d_v={}",
            v_instance.ncols(),
            v_scene.ncols()
        )));
    }
    if k_instance.nrows() != v_instance.nrows() || k_scene.nrows() != v_scene.nrows() {
        return Err(KernelError::Shape(
            "key/value row counts differ within a branch".into(),
        ));
    }
    let k_cat = stack_rows(k_instance, k_scene);
    let v_cat = stack_rows(v_instance, v_scene);
    self_attention(q_instance, &k_cat, &v_cat)
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), (top.nrows(), top.ncols())).copy_from(top);
    out.view_mut((top.nrows(), 0), (bottom.nrows(), bottom.ncols()))
        .copy_from(bottom);
    out
}

/// `softmax([z, z])`, which must equal `[softmax(z)/2, softmax(z)/2]`.
pub fn duplicated_softmax(z: &DVector<f64>) -> DVector<f64> {
    let n = z.len();
    let mut doubled = DVector::zeros(2 * n);
    doubled.rows_mut(0, n).copy_from(z);
    doubled.rows_mut(n, n).copy_from(z);
    let m = DMatrix::from_row_slice(1, 2 * n, doubled.as_slice());
    let s = softmax_rows(&m);
    DVector::from_row_slice(s.row(0).transpose().as_slice())
}

/// One point on the linear interpolant `x(t) = (1-t) x0 + t eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: DVector<f64>,
    pub epsilon: DVector<f64>,
    pub t: f64,
    pub x_t: DVector<f64>,
}

pub fn interpolant(
    x0: &DVector<f64>,
    epsilon: &DVector<f64>,
    t: f64,
) -> Result<FlowSample, KernelError> {
    if x0.len() != epsilon.len() {
        return Err(KernelError::Shape(format!(
            "x0 has dim {} but epsilon has dim {}",
            x0.len(),
            epsilon.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(KernelError::Domain(format!("t={t} outside [0, 1]")));
    }
    let x_t = x0 * (1.0 - t) + epsilon * t;
    Ok(FlowSample {
        x0: x0.clone(),
        epsilon: epsilon.clone(),
        t,
        x_t,
    })
}

/// `|| v_pred - (epsilon - x0) ||^2`.
pub fn cfm_loss(
    v_pred: &DVector<f64>,
    x0: &DVector<f64>,
    epsilon: &DVector<f64>,
) -> Result<f64, KernelError> {
    if v_pred.len() != x0.len() || x0.len() != epsilon.len() {
        return Err(KernelError::Shape(format!(
            "dims {} / {} / {} differ",
            v_pred.len(),
            x0.len(),
            epsilon.len()
        )));
    }
    let diff = v_pred - (epsilon - x0);
    Ok(diff.norm_squared())
}

/// Analytic gradient of [`cfm_loss`] with respect to `v_pred`.
pub fn cfm_loss_grad(
    v_pred: &DVector<f64>,
    x0: &DVector<f64>,
    epsilon: &DVector<f64>,
) -> Result<DVector<f64>, KernelError> {
    if v_pred.len() != x0.len() || x0.len() != epsilon.len() {
        return Err(KernelError::Shape("dimension mismatch".into()));
    }
    Ok(2.0 * (v_pred - (epsilon - x0)))
}

/// Seeded Monte Carlo estimate of `E_{t, eps} || v(x_t, t) - (eps - x0) ||^2`
/// with `t ~ U[0,1]` and `eps ~ N(0, I)`.
pub fn monte_carlo_cfm_loss(
    velocity: impl Fn(&DVector<f64>, f64) -> DVector<f64>,
    x0: &DVector<f64>,
    draws: usize,
    seed: u64,
) -> Result<f64, KernelError> {
    if draws == 0 {
        return Err(KernelError::Domain("need at least one draw".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let t: f64 = rng.random_range(0.0..1.0);
        let eps = DVector::from_iterator(
            x0.len(),
            (0..x0.len()).map(|_| StandardNormal.sample(&mut rng)),
        );
        let sample = interpolant(x0, &eps, t)?;
        let v = velocity(&sample.x_t, t);
        total += cfm_loss(&v, x0, &eps)?;
    }
    Ok(total / draws as f64)
}

/// Tolerances for [`verify_kernel`].
pub const SCA_EQUIVALENCE_TOL: f64 = 1e-9;
pub const SOFTMAX_IDENTITY_TOL: f64 = 1e-12;
pub const CFM_GRAD_REL_TOL: f64 = 1e-5;

/// Worst observed deviations over a seeded verification run.
#[derive(Debug, Clone)]
pub struct KernelVerification {
    pub trials: usize,
    /// `max |SCA - SelfAttn|` with coinciding instance/scene branches.
    pub max_sca_deviation: f64,
    /// `max |softmax([z, z]) - [softmax(z)/2, softmax(z)/2]|`.
    pub max_softmax_deviation: f64,
    /// Max relative error of the analytic CFM gradient vs central
    /// finite differences (100 draws).
    pub max_grad_rel_error: f64,
}

impl KernelVerification {
    pub fn passed(&self) -> bool {
        self.max_sca_deviation < SCA_EQUIVALENCE_TOL
            && self.max_softmax_deviation < SOFTMAX_IDENTITY_TOL
            && self.max_grad_rel_error < CFM_GRAD_REL_TOL
    }
}

/// Run the kernel identity checks over `trials` seeded random draws.
pub fn verify_kernel(trials: usize, seed: u64) -> Result<KernelVerification, KernelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_sca: f64 = 0.0;
    let mut max_softmax: f64 = 0.0;
    for _ in 0..trials {
        let t = rng.random_range(1..8);
        let n = rng.random_range(1..64);
        let d = rng.random_range(1..32);
        let dv = rng.random_range(1..32);
        let q = DMatrix::from_fn(t, d, |_, _| rng.random_range(-4.0..4.0));
        let k = DMatrix::from_fn(n, d, |_, _| rng.random_range(-4.0..4.0));
        let v = DMatrix::from_fn(n, dv, |_, _| rng.random_range(-4.0..4.0));
        let sca = scene_context_attention(&AttentionInputs {
            q_instance: q.clone(),
            k_instance: k.clone(),
            k_scene: k.clone(),
            v_instance: v.clone(),
            v_scene: v.clone(),
        })?;
        let plain = self_attention(&q, &k, &v)?;
        max_sca = max_sca.max((&sca - &plain).abs().max());

        let z = DVector::from_fn(n, |_, _| rng.random_range(-6.0..6.0));
        let dup = duplicated_softmax(&z);
        let m = DMatrix::from_row_slice(1, n, z.as_slice());
        let half = softmax_rows(&m) * 0.5;
        for i in 0..n {
            max_softmax = max_softmax
                .max((dup[i] - half[(0, i)]).abs())
                .max((dup[i + n] - half[(0, i)]).abs());
        }
    }

    let mut max_grad: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(1..16);
        let x0 = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let eps = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let grad = cfm_loss_grad(&v, &x0, &eps)?;
        let h = 1e-6;
        for i in 0..dim {
            let mut plus = v.clone();
            plus[i] += h;
            let mut minus = v.clone();
            minus[i] -= h;
            let fd =
                (cfm_loss(&plus, &x0, &eps)? - cfm_loss(&minus, &x0, &eps)?) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(1.0);
            max_grad = max_grad.max(rel);
        }
    }

    Ok(KernelVerification {
        trials,
        max_sca_deviation: max_sca,
        max_softmax_deviation: max_softmax,
        max_grad_rel_error: max_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn verification_run_passes() {
        let report = verify_kernel(100, 42).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_sca_deviation < SCA_EQUIVALENCE_TOL);
        assert!(report.max_softmax_deviation < SOFTMAX_IDENTITY_TOL);
        assert!(report.max_grad_rel_error < CFM_GRAD_REL_TOL);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 6, 40);
        let s = softmax_rows(&m);
        for row in s.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_softmax_selects_one_value_row() {
        // Huge logit gap: query aligned with key row 2.
        let mut k = DMatrix::zeros(4, 4);
        for i in 0..4 {
            k[(i, i)] = 1.0;
        }
        let q = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 200.0, 0.0]);
        let v = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let out = self_attention(&q, &k, &v).unwrap();
        for j in 0..3 {
            assert!((out[(0, j)] - v[(2, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_matrix(&mut rng, 3, 8);
        let k = random_matrix(&mut rng, 5, 8);
        let v = DMatrix::zeros(5, 4);
        let out = self_attention(&q, &k, &v).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, n, d, dv) = (4, 8, 8, 5);
        let q = random_matrix(&mut rng, t, d);
        let k = random_matrix(&mut rng, n, d);
        let v = random_matrix(&mut rng, n, dv);
        let fast = self_attention(&q, &k, &v).unwrap();

        // Direct scalar-loop evaluation.
        let scale = 1.0 / (d as f64).sqrt();
        for ti in 0..t {
            let mut logits = vec![0.0; n];
            for (ni, logit) in logits.iter_mut().enumerate() {
                let mut dot = 0.0;
                for di in 0..d {
                    dot += q[(ti, di)] * k[(ni, di)];
                }
                *logit = dot * scale;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for vi in 0..dv {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += exps[ni] / sum * v[(ni, vi)];
                }
                assert!((fast[(ti, vi)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let q = DMatrix::zeros(2, 4);
        let k = DMatrix::zeros(3, 5);
        let v = DMatrix::zeros(3, 2);
        assert!(matches!(
            self_attention(&q, &k, &v),
            Err(KernelError::Shape(_))
        ));
    }

    #[test]
    fn sca_equals_self_attention_when_branches_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t = rng.random_range(1..6);
            let n = rng.random_range(1..20);
            let d = rng.random_range(1..16);
            let dv = rng.random_range(1..12);
            let q = random_matrix(&mut rng, t, d);
            let k = random_matrix(&mut rng, n, d);
            let v = random_matrix(&mut rng, n, dv);
            let sca = scene_context_attention(&AttentionInputs {
                q_instance: q.clone(),
                k_instance: k.clone(),
                k_scene: k.clone(),
                v_instance: v.clone(),
                v_scene: v.clone(),
            })
            .unwrap();
            let plain = self_attention(&q, &k, &v).unwrap();
            let max_dev = (&sca - &plain).abs().max();
            assert!(max_dev < 1e-9, "deviation {max_dev}");
        }
    }

    #[test]
    fn sca_with_masked_scene_equals_instance_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_matrix(&mut rng, 3, 6);
        let k = random_matrix(&mut rng, 7, 6);
        let v = random_matrix(&mut rng, 7, 4);
        // Scene keys pushed to very large negative logits.
        let k_masked = DMatrix::from_element(7, 6, -1e4);
        let v_scene = random_matrix(&mut rng, 7, 4);
        let sca = scene_context_attention(&AttentionInputs {
            q_instance: q.clone(),
            k_instance: k.clone(),
            k_scene: k_masked,
            v_instance: v.clone(),
            v_scene,
        })
        .unwrap();
        let plain = self_attention(&q, &k, &v).unwrap();
        assert!((&sca - &plain).abs().max() < 1e-6);
    }

    #[test]
    fn sca_matches_explicit_concatenation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_matrix(&mut rng, 2, 5);
        let ki = random_matrix(&mut rng, 4, 5);
        let ks = random_matrix(&mut rng, 4, 5);
        let vi = random_matrix(&mut rng, 4, 3);
        let vs = random_matrix(&mut rng, 4, 3);
        let sca = scene_context_attention(&AttentionInputs {
            q_instance: q.clone(),
            k_instance: ki.clone(),
            k_scene: ks.clone(),
            v_instance: vi.clone(),
            v_scene: vs.clone(),
        })
        .unwrap();
        let k_cat = stack_rows(&ki, &ks);
        let v_cat = stack_rows(&vi, &vs);
        let oracle = self_attention(&q, &k_cat, &v_cat).unwrap();
        assert_eq!(sca, oracle);
    }

    #[test]
    fn sca_invariant_to_joint_key_value_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_matrix(&mut rng, 3, 4);
        let k = random_matrix(&mut rng, 6, 4);
        let v = random_matrix(&mut rng, 6, 2);
        let base = self_attention(&q, &k, &v).unwrap();
        let perm = [5usize, 2, 0, 4, 1, 3];
        let kp = DMatrix::from_fn(6, 4, |i, j| k[(perm[i], j)]);
        let vp = DMatrix::from_fn(6, 2, |i, j| v[(perm[i], j)]);
        let permuted = self_attention(&q, &kp, &vp).unwrap();
        assert!((&base - &permuted).abs().max() < 1e-12);
    }

    #[test]
    fn logit_shift_leaves_attention_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_matrix(&mut rng, 4, 6);
        let k = random_matrix(&mut rng, 9, 6);
        let v = random_matrix(&mut rng, 9, 3);
        let scale = 1.0 / (6.0f64).sqrt();
        let logits = &q * k.transpose() * scale;
        let base = softmax_rows(&logits) * &v;
        let shifted = softmax_rows(&logits.map(|x| x + 123.456)) * &v;
        assert!((&base - &shifted).abs().max() < 1e-12);
    }

    #[test]
    fn duplicated_softmax_uniform_case() {
        let z = DVector::from_row_slice(&[0.0, 0.0]);
        let s = duplicated_softmax(&z);
        for i in 0..4 {
            assert!((s[i] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_softmax_closed_form() {
        let z = DVector::from_row_slice(&[3f64.ln(), 0.0]);
        let s = duplicated_softmax(&z);
        let expect = [3.0 / 8.0, 1.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
        for i in 0..4 {
            assert!((s[i] - expect[i]).abs() < 1e-15, "{} vs {}", s[i], expect[i]);
        }
    }

    #[test]
    fn duplicated_softmax_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = DVector::from_fn(64, |_, _| rng.random_range(-5.0..5.0));
        let s = duplicated_softmax(&z);
        let m = DMatrix::from_row_slice(1, 64, z.as_slice());
        let half = softmax_rows(&m) * 0.5;
        for i in 0..64 {
            assert!((s[i] - half[(0, i)]).abs() < 1e-12);
            assert!((s[i + 64] - half[(0, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn cfm_loss_zero_at_exact_velocity() {
        let x0 = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let eps = DVector::from_row_slice(&[0.0, 1.0, 2.0]);
        let v = &eps - &x0;
        assert_eq!(cfm_loss(&v, &x0, &eps).unwrap(), 0.0);
    }

    #[test]
    fn cfm_loss_zero_target() {
        let x0 = DVector::from_row_slice(&[0.7, -0.1]);
        let v = DVector::zeros(2);
        assert_eq!(cfm_loss(&v, &x0, &x0).unwrap(), 0.0);
    }

    #[test]
    fn cfm_loss_counts_squared_components() {
        let x0 = DVector::zeros(3);
        let eps = DVector::from_row_slice(&[1.0, 2.0, 2.0]);
        let v = DVector::zeros(3);
        assert_eq!(cfm_loss(&v, &x0, &eps).unwrap(), 9.0);
    }

    #[test]
    fn cfm_grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let dim = rng.random_range(1..8);
            let x0 = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let eps = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let v = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let grad = cfm_loss_grad(&v, &x0, &eps).unwrap();
            let h = 1e-6;
            for i in 0..dim {
                let mut plus = v.clone();
                plus[i] += h;
                let mut minus = v.clone();
                minus[i] -= h;
                let fd = (cfm_loss(&plus, &x0, &eps).unwrap()
                    - cfm_loss(&minus, &x0, &eps).unwrap())
                    / (2.0 * h);
                let denom = grad[i].abs().max(1.0);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-5,
                    "component {i}: analytic {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn interpolant_endpoints_exact() {
        let x0 = DVector::from_row_slice(&[0.25, -4.0]);
        let eps = DVector::from_row_slice(&[1.5, 2.0]);
        assert_eq!(interpolant(&x0, &eps, 0.0).unwrap().x_t, x0);
        assert_eq!(interpolant(&x0, &eps, 1.0).unwrap().x_t, eps);
        let mid = interpolant(&DVector::zeros(2), &DVector::from_row_slice(&[4.0, 8.0]), 0.25)
            .unwrap();
        assert_eq!(mid.x_t, DVector::from_row_slice(&[1.0, 2.0]));
    }

    #[test]
    fn interpolant_rejects_out_of_range_t() {
        let x = DVector::zeros(2);
        assert!(matches!(
            interpolant(&x, &x, 1.5),
            Err(KernelError::Domain(_))
        ));
        assert!(matches!(
            interpolant(&x, &x, -0.1),
            Err(KernelError::Domain(_))
        ));
    }

    #[test]
    fn monte_carlo_loss_is_zero_for_exact_field() {
        // v(x, t) must equal eps - x0; with x_t known, eps - x0 = (x_t - x0)/t.
        // Instead test the trivial exact case x0 = 0: target = eps = x_t/t for t>0.
        let x0 = DVector::zeros(4);
        let loss = monte_carlo_cfm_loss(
            |x_t, t| {
                if t > 0.0 {
                    x_t / t
                } else {
                    x_t.clone()
                }
            },
            &x0,
            200,
            13,
        )
        .unwrap();
        assert!(loss < 1e-18, "loss {loss}");
    }
}
