//! Closed-form and brute-force reference values.
//!
//! Nothing here touches the grid machinery; these functions exist so that the
//! solvers can be checked against routes that share no code with them.

use itertools::Itertools;
use serde::Serialize;

use crate::error::{MfviError, Result};

/// A reference value together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub name: String,
    pub inputs: Vec<f64>,
    pub values: Vec<f64>,
    pub method: String,
}

/// Gaussian mean-field fixed point of `U = ½θᵀAθ + bᵀθ`: the Gauss–Seidel
/// recursion `m_i = −(b_i + Σ_{j≠i} A_ij m_j)/A_ii`, variances `1/A_ii`.
pub fn gaussian_cavi_fixed_point(a: &[Vec<f64>], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = b.len();
    if a.len() != d || a.iter().any(|r| r.len() != d) {
        return Err(MfviError::DimensionMismatch {
            expected: d,
            got: a.len(),
        });
    }
    if (0..d).any(|i| !(a[i][i] > 0.0)) {
        return Err(MfviError::Divergence);
    }
    let mut m = vec![0.0; d];
    for _ in 0..1_000_000 {
        let mut change: f64 = 0.0;
        for i in 0..d {
            let s: f64 = (0..d).filter(|&j| j != i).map(|j| a[i][j] * m[j]).sum();
            let next = -(b[i] + s) / a[i][i];
            change = change.max((next - m[i]).abs());
            m[i] = next;
        }
        if !change.is_finite() || change > 1e12 {
            return Err(MfviError::Divergence);
        }
        if change < 1e-14 {
            let vars = (0..d).map(|i| 1.0 / a[i][i]).collect();
            return Ok((m, vars));
        }
    }
    Err(MfviError::Divergence)
}

/// Exact W2 between two uniform empirical measures with equally many atoms,
/// by enumerating every permutation coupling.
pub fn discrete_ot_bruteforce(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(MfviError::DimensionMismatch {
            expected: mu.len(),
            got: nu.len(),
        });
    }
    let n = mu.len();
    if n > 6 {
        return Err(MfviError::TooManyAtoms(n));
    }
    if n == 0 {
        return Err(MfviError::InvalidArgument("no atoms".into()));
    }
    let best = (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (mu[i] - nu[j]).powi(2))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok((best / n as f64).sqrt())
}

/// One minimizing-movement step for `U = a x²/2` from `N(m, σ²)`:
/// `m′ = m/(1 + h a)` and `σ′` solving `σ′ − σ + h(aσ′ − 1/σ′) = 0`,
/// the latter by bisection on `(0, σ + 1]`.
pub fn gaussian_jko_step_oracle(a: f64, m: f64, sigma: f64, h: f64) -> (f64, f64) {
    if h == 0.0 {
        return (m, sigma);
    }
    let m_next = m / (1.0 + h * a);
    let f = |s: f64| s - sigma + h * (a * s - 1.0 / s);
    // f → −∞ as s → 0⁺ and f(σ + 1) > 0 whenever a ≥ 0
    let (mut lo, mut hi) = (1e-300, sigma + 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    (m_next, 0.5 * (lo + hi))
}

/// Movement objective of a Gaussian candidate `N(m′, σ′²)` for the same step,
/// dropping terms that do not depend on the candidate.
pub fn gaussian_jko_objective(a: f64, m: f64, sigma: f64, h: f64, m_next: f64, s_next: f64) -> f64 {
    0.5 * ((m_next - m).powi(2) + (s_next - sigma).powi(2))
        + h * (0.5 * a * (m_next * m_next + s_next * s_next) - s_next.ln())
}

/// Free energy `J` of `N(m, σ²)` under `U = a x²/2`.
pub fn gaussian_free_energy(a: f64, m: f64, sigma: f64) -> f64 {
    0.5 * a * (m * m + sigma * sigma)
        - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln()
}

/// Mean and variance of `∂_t ρ = ∂_x(a x ρ) + ∂²_x ρ` started from `N(m₀, σ₀²)`.
pub fn ou_moments(a: f64, m0: f64, var0: f64, t: f64) -> (f64, f64) {
    let mean = m0 * (-a * t).exp();
    let var = 1.0 / a + (var0 - 1.0 / a) * (-2.0 * a * t).exp();
    (mean, var)
}

/// Dispatch by name, for the command line.
pub fn run_named(name: &str, args: &[f64]) -> Result<OracleResult> {
    let need = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(MfviError::InvalidArgument(format!(
                "oracle '{name}' takes {n} arguments, got {}",
                args.len()
            )))
        }
    };
    let (values, method) = match name {
        "ou-moments" => {
            need(4)?;
            let (m, v) = ou_moments(args[0], args[1], args[2], args[3]);
            (vec![m, v], "closed form")
        }
        "gaussian-jko-step" => {
            need(4)?;
            let (m, s) = gaussian_jko_step_oracle(args[0], args[1], args[2], args[3]);
            (vec![m, s], "scalar optimization")
        }
        "discrete-ot" => {
            if args.len() % 2 != 0 {
                return Err(MfviError::InvalidArgument(
                    "discrete-ot takes two equally long atom lists".into(),
                ));
            }
            let (mu, nu) = args.split_at(args.len() / 2);
            (vec![discrete_ot_bruteforce(mu, nu)?], "exhaustive")
        }
        "gaussian-cavi" => {
            // d² matrix entries followed by d vector entries
            let d = ((((4 * args.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
            if d == 0 || d * d + d != args.len() {
                return Err(MfviError::InvalidArgument(
                    "gaussian-cavi takes d*d matrix entries followed by d offsets".into(),
                ));
            }
            let a: Vec<Vec<f64>> = args[..d * d].chunks(d).map(<[f64]>::to_vec).collect();
            let (m, v) = gaussian_cavi_fixed_point(&a, &args[d * d..])?;
            (m.into_iter().chain(v).collect(), "closed form")
        }
        other => {
            return Err(MfviError::InvalidArgument(format!(
                "unknown oracle '{other}' (ou-moments, gaussian-jko-step, discrete-ot, gaussian-cavi)"
            )))
        }
    };
    Ok(OracleResult {
        name: name.to_string(),
        inputs: args.to_vec(),
        values,
        method: method.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn cavi_oracle_examples() {
        let (m, v) = gaussian_cavi_fixed_point(&[vec![1.0, 0.5], vec![0.5, 1.0]], &[0.0, 0.0]).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert_eq!(v, vec![1.0, 1.0]);
        let (m, v) = gaussian_cavi_fixed_point(&[vec![2.0, 0.0], vec![0.0, 4.0]], &[-2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(m[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], -1.0, epsilon = 1e-12);
        assert_eq!(v, vec![0.5, 0.25]);
        let (m, v) = gaussian_cavi_fixed_point(&[vec![3.0]], &[1.5]).unwrap();
        assert_abs_diff_eq!(m[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cavi_oracle_diverges_on_indefinite() {
        assert_eq!(
            gaussian_cavi_fixed_point(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[1.0, 0.0]),
            Err(MfviError::Divergence)
        );
    }

    #[test]
    fn ot_examples() {
        assert_eq!(discrete_ot_bruteforce(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(discrete_ot_bruteforce(&[0.3, -1.0, 2.0], &[2.0, 0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(discrete_ot_bruteforce(&[0.0], &[-2.5]).unwrap(), 2.5);
        assert_eq!(discrete_ot_bruteforce(&[0.0; 7], &[0.0; 7]), Err(MfviError::TooManyAtoms(7)));
    }

    #[test]
    fn jko_oracle_examples() {
        assert_eq!(gaussian_jko_step_oracle(1.0, 2.0, 1.3, 0.0), (2.0, 1.3));
        for h in [0.01, 0.1, 1.0, 10.0] {
            let (_, s) = gaussian_jko_step_oracle(1.0, 0.5, 1.0, h);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        let (m, s) = gaussian_jko_step_oracle(1.0, 2.0, 1.0, 0.1);
        assert_abs_diff_eq!(m, 1.818_181_818_181_818, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jko_oracle_beats_parameter_grid() {
        for &(a, m, sigma, h) in &[(1.0, 2.0, 1.0, 0.1), (2.0, -1.0, 1.5, 0.3), (0.5, 0.3, 0.4, 0.05)] {
            let (m1, s1) = gaussian_jko_step_oracle(a, m, sigma, h);
            let best = gaussian_jko_objective(a, m, sigma, h, m1, s1);
            for i in 0..100 {
                for j in 0..100 {
                    let mc = m1 + (i as f64 - 49.5) * 0.01;
                    let sc = s1 + (j as f64 - 49.5) * 0.004;
                    if sc <= 0.0 {
                        continue;
                    }
                    assert!(best <= gaussian_jko_objective(a, m, sigma, h, mc, sc) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ou_examples() {
        assert_eq!(ou_moments(2.0, 3.0, 1.0, 0.0), (3.0, 1.0));
        let (m, v) = ou_moments(2.0, 3.0, 1.0, 1e3);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        let (m, v) = ou_moments(2.0, 3.0, 1.0, 1.0);
        assert_abs_diff_eq!(m, 0.40601, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 0.50916, epsilon = 1e-5);
    }

    #[test]
    fn named_dispatch() {
        let r = run_named("gaussian-cavi", &[2.0, 0.0, 0.0, 4.0, -2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.values[3], 0.25, epsilon = 1e-12);
        assert!(run_named("nope", &[]).is_err());
        assert!(run_named("ou-moments", &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn cavi_oracle_solves_linear_system(seed in prop::collection::vec(-1.0f64..1.0, 30), d in 1usize..=5) {
            // A = BᵀB + I is symmetric positive definite
            let b_mat = DMatrix::from_fn(d, d, |i, j| seed[i * 5 + j]);
            let a = b_mat.transpose() * &b_mat + DMatrix::identity(d, d);
            let b: Vec<f64> = (0..d).map(|i| seed[25 + i] * 2.0).collect();
            let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| a[(i, j)]).collect()).collect();
            let (m, _) = gaussian_cavi_fixed_point(&rows, &b).unwrap();
            let direct = a.lu().solve(&(-DVector::from_vec(b))).unwrap();
            for i in 0..d {
                prop_assert!((m[i] - direct[i]).abs() < 1e-10);
            }
        }
    }
}
