//! Collective-qubit perturbations.
//!
//! The generator for `n_q` qubits is `V = sum_j sigma^j / 2` on a
//! `2^n_q`-dimensional space, with qubit `j` the `j`-th bit of the basis index.

use std::fmt;

use crate::ensembles::{collective_x_basis, pairing_transform, sample_cue, walsh_conjugate};
use crate::error::{Error, Result};
use crate::matops::{c64, cis, ComplexMatrix, HermitianMatrix, UnitaryMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Z,
    X,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Z => "z",
            Axis::X => "x",
        })
    }
}

/// Basis in which the collective generator acts. A basis `T` replaces `V` by
/// `T^dagger V T`, which is the same echo as evolving `T U T^dagger` under `V`.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisSpec {
    Identity,
    Pairing,
    CollectiveX,
    Random { seed: u64 },
    Custom(UnitaryMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub n_q: u32,
    pub epsilon: f64,
    pub axis: Axis,
    pub basis: BasisSpec,
}

impl PerturbationSpec {
    /// Generator for a system of dimension `dim`.
    pub fn hamiltonian(&self, dim: usize) -> Result<PerturbationHamiltonian> {
        if !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be finite"));
        }
        check_qubit_dim(self.n_q, dim)?;
        let v = collective_hamiltonian(self.n_q, self.axis)?;
        let t = match &self.basis {
            BasisSpec::Identity => return Ok(v),
            BasisSpec::Pairing => pairing_transform(dim)?,
            BasisSpec::CollectiveX => return conjugate_collective_x(&v),
            BasisSpec::Random { seed } => sample_cue(dim, *seed)?,
            BasisSpec::Custom(t) => t.clone(),
        };
        conjugate(&v, &t.adjoint())
    }
}

fn check_qubit_dim(n_q: u32, dim: usize) -> Result<()> {
    if n_q == 0 || n_q >= usize::BITS {
        return Err(Error::invalid("n_q", format!("qubit count {n_q} out of range")));
    }
    if 1usize << n_q != dim {
        return Err(Error::DimensionMismatch {
            context: "collective perturbation needs dim = 2^n_q",
            expected: 1usize << n_q,
            found: dim,
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum Eigenbasis {
    Computational,
    Dense(ComplexMatrix),
}

/// Perturbation generator `V` with its spectrum.
#[derive(Clone, Debug)]
pub struct PerturbationHamiltonian {
    v: HermitianMatrix,
    eigenvalues: Vec<f64>,
    mean_sq: f64,
    eigenbasis: Eigenbasis,
}

impl PerturbationHamiltonian {
    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.v
    }

    /// Eigenvalues `lambda_i`, in the order of the eigenvector columns.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `N^-1 sum_i lambda_i^2`.
    pub fn mean_sq(&self) -> f64 {
        self.mean_sq
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.eigenbasis, Eigenbasis::Computational)
    }
}

fn popcount_diag(n_q: u32) -> Vec<f64> {
    (0..1usize << n_q)
        .map(|i| (f64::from(n_q) - 2.0 * f64::from(i.count_ones())) / 2.0)
        .collect()
}

/// Collective generator about `axis` for `n_q` qubits.
pub fn collective_hamiltonian(n_q: u32, axis: Axis) -> Result<PerturbationHamiltonian> {
    check_qubit_dim(n_q, 1usize << n_q.min(usize::BITS - 1))?;
    let lambda = popcount_diag(n_q);
    let n = lambda.len();
    let mean_sq = lambda.iter().map(|x| x * x).sum::<f64>() / n as f64;
    match axis {
        Axis::Z => Ok(PerturbationHamiltonian {
            v: HermitianMatrix::from_real_diagonal(&lambda),
            eigenvalues: lambda,
            mean_sq,
            eigenbasis: Eigenbasis::Computational,
        }),
        Axis::X => {
            let mut v = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n_q {
                    v.set(i, i ^ (1 << j), c64::new(0.5, 0.0));
                }
            }
            Ok(PerturbationHamiltonian {
                v: HermitianMatrix::new(v)?,
                eigenvalues: lambda,
                mean_sq,
                eigenbasis: Eigenbasis::Dense(collective_x_basis(n_q)?.into_matrix()),
            })
        }
    }
}

/// `exp(-i eps V)`; entrywise for a diagonal generator.
pub fn perturbation_unitary(v: &PerturbationHamiltonian, epsilon: f64) -> UnitaryMatrix {
    let phases: Vec<c64> = v.eigenvalues.iter().map(|&l| cis(-epsilon * l)).collect();
    match &v.eigenbasis {
        Eigenbasis::Computational => {
            UnitaryMatrix::from_trusted(ComplexMatrix::from_diagonal(&phases))
        }
        Eigenbasis::Dense(w) => UnitaryMatrix::from_trusted(w.scale_columns(&phases).mul_adjoint(w)),
    }
}

/// Golden-rule decay rate `eps^2 * mean_sq`.
pub fn rmt_rate(v: &PerturbationHamiltonian, epsilon: f64) -> f64 {
    epsilon * epsilon * v.mean_sq
}

/// `T V T^dagger`.
pub fn conjugate(v: &PerturbationHamiltonian, t: &UnitaryMatrix) -> Result<PerturbationHamiltonian> {
    if t.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            context: "perturbation basis",
            expected: v.dim(),
            found: t.dim(),
        });
    }
    let tm = t.matrix();
    let w = match &v.eigenbasis {
        Eigenbasis::Computational => tm.clone(),
        Eigenbasis::Dense(w) => tm * w,
    };
    let lambda: Vec<c64> = v.eigenvalues.iter().map(|&l| c64::new(l, 0.0)).collect();
    let m = HermitianMatrix::from_trusted(w.scale_columns(&lambda).mul_adjoint(&w));
    let mean_sq = m.matrix().frobenius_norm_sq() / v.dim() as f64;
    Ok(PerturbationHamiltonian {
        v: m,
        eigenvalues: v.eigenvalues.clone(),
        mean_sq,
        eigenbasis: Eigenbasis::Dense(w),
    })
}

/// `H V H` with `H = collective_x_basis(n_q)`, computed exactly by Walsh
/// butterflies.
pub fn conjugate_collective_x(v: &PerturbationHamiltonian) -> Result<PerturbationHamiltonian> {
    let m = walsh_conjugate(v.v.matrix())?;
    let h = collective_x_basis(v.dim().trailing_zeros())?.into_matrix();
    let w = match &v.eigenbasis {
        Eigenbasis::Computational => h,
        Eigenbasis::Dense(w) => &h * w,
    };
    Ok(PerturbationHamiltonian {
        v: HermitianMatrix::new(m)?,
        eigenvalues: v.eigenvalues.clone(),
        mean_sq: v.mean_sq,
        eigenbasis: Eigenbasis::Dense(w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::index_complement;
    use proptest::prelude::*;

    fn diag(v: &PerturbationHamiltonian) -> Vec<f64> {
        v.matrix().matrix().diagonal().iter().map(|z| z.re).collect()
    }

    #[test]
    fn small_generators() {
        assert_eq!(diag(&collective_hamiltonian(1, Axis::Z).unwrap()), vec![0.5, -0.5]);
        assert_eq!(
            diag(&collective_hamiltonian(2, Axis::Z).unwrap()),
            vec![1.0, 0.0, 0.0, -1.0]
        );
    }

    #[test]
    fn nine_qubit_mean_square() {
        let v = collective_hamiltonian(9, Axis::Z).unwrap();
        // sum over k of C(9,k) ((9-2k)/2)^2 / 512
        let binom = |n: u64, k: u64| (1..=k).fold(1u64, |acc, i| acc * (n + 1 - i) / i);
        let direct: f64 = (0..=9u64)
            .map(|k| binom(9, k) as f64 * ((9.0 - 2.0 * k as f64) / 2.0).powi(2))
            .sum::<f64>()
            / 512.0;
        assert!((v.mean_sq() - direct).abs() < 1e-12);
        assert!((v.mean_sq() - 2.25).abs() < 1e-12);
        let from_eigs = v.eigenvalues().iter().map(|x| x * x).sum::<f64>() / 512.0;
        assert!((v.mean_sq() - from_eigs).abs() < 1e-12);
    }

    #[test]
    fn rates() {
        let v2 = collective_hamiltonian(2, Axis::Z).unwrap();
        assert_eq!(rmt_rate(&v2, 0.0), 0.0);
        assert!((rmt_rate(&v2, 0.3) - 0.045).abs() < 1e-15);
        let v7 = collective_hamiltonian(7, Axis::Z).unwrap();
        assert!((rmt_rate(&v7, 0.3) - 0.1575).abs() < 1e-14);
    }

    #[test]
    fn unitary_zero_and_single_qubit() {
        let v = collective_hamiltonian(1, Axis::Z).unwrap();
        assert_eq!(perturbation_unitary(&v, 0.0).matrix(), &ComplexMatrix::identity(2));
        let u = perturbation_unitary(&v, 0.8);
        assert!((u.matrix().get(0, 0) - cis(-0.4)).norm() < 1e-15);
        assert!((u.matrix().get(1, 1) - cis(0.4)).norm() < 1e-15);
    }

    #[test]
    fn collective_unitary_factorises() {
        let eps = 0.37;
        let u = perturbation_unitary(&collective_hamiltonian(3, Axis::Z).unwrap(), eps);
        for i in 0..8usize {
            // qubit j contributes exp(-i eps/2) if bit j is clear, exp(+i eps/2) if set
            let mut prod = c64::new(1.0, 0.0);
            for j in 0..3 {
                let s = if i >> j & 1 == 0 { -1.0 } else { 1.0 };
                prod *= cis(s * eps / 2.0);
            }
            assert!((u.matrix().get(i, i) - prod).norm() < 1e-14);
        }
    }

    #[test]
    fn x_generator_matches_conjugated_z() {
        let z = collective_hamiltonian(3, Axis::Z).unwrap();
        let x = collective_hamiltonian(3, Axis::X).unwrap();
        let h = collective_x_basis(3).unwrap();
        let c = conjugate(&z, &h).unwrap();
        assert!(c.matrix().matrix().max_abs_diff(x.matrix().matrix()) < 1e-15);
        for n_q in [3, 7] {
            let exact = conjugate_collective_x(&collective_hamiltonian(n_q, Axis::Z).unwrap()).unwrap();
            let x = collective_hamiltonian(n_q, Axis::X).unwrap();
            assert_eq!(exact.matrix(), x.matrix());
        }
        let ux = perturbation_unitary(&x, 0.6);
        let direct = crate::matops::expm_i_hermitian(x.matrix(), 0.6).unwrap();
        assert!(ux.matrix().max_abs_diff(direct.matrix()) < 1e-12);
    }

    #[test]
    fn complement_anticommutes_with_z_generator() {
        let v = collective_hamiltonian(5, Axis::Z).unwrap();
        let c = index_complement(32);
        let cvc = &(&c * v.matrix().matrix()) * &c;
        assert_eq!(cvc, v.matrix().matrix().scale(c64::new(-1.0, 0.0)));
    }

    #[test]
    fn conjugate_identity_and_dimension_check() {
        let v = collective_hamiltonian(3, Axis::Z).unwrap();
        let c = conjugate(&v, &UnitaryMatrix::identity(8)).unwrap();
        assert_eq!(c.matrix(), v.matrix());
        assert!(conjugate(&v, &UnitaryMatrix::identity(4)).is_err());
    }

    #[test]
    fn random_basis_delocalises() {
        let v = collective_hamiltonian(9, Axis::Z).unwrap();
        let c = conjugate(&v, &sample_cue(512, 17).unwrap()).unwrap();
        let m = c.matrix().matrix();
        let big = (0..512)
            .flat_map(|j| m.column(j).iter().map(|z| z.norm()).collect::<Vec<_>>())
            .filter(|&a| a > 1e-12)
            .count();
        assert!(big as f64 >= 0.99 * 512.0 * 512.0);
        assert!((c.mean_sq() - v.mean_sq()).abs() < 1e-10);
    }

    #[test]
    fn spec_rejects_non_power_of_two() {
        let spec = PerturbationSpec {
            n_q: 9,
            epsilon: 0.2,
            axis: Axis::Z,
            basis: BasisSpec::Identity,
        };
        assert!(spec.hamiltonian(513).is_err());
        assert!(spec.hamiltonian(512).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn rate_invariant_under_conjugation(seed in any::<u64>(), n_q in 1u32..6, eps in -1.0f64..1.0) {
            let v = collective_hamiltonian(n_q, Axis::Z).unwrap();
            let c = conjugate(&v, &sample_cue(1 << n_q, seed).unwrap()).unwrap();
            prop_assert!((rmt_rate(&c, eps) - rmt_rate(&v, eps)).abs() < 1e-10);
        }

        #[test]
        fn adjoint_is_negated_angle(n_q in 1u32..6, eps in -3.0f64..3.0, axis in prop_oneof![Just(Axis::Z), Just(Axis::X)]) {
            let v = collective_hamiltonian(n_q, axis).unwrap();
            let a = perturbation_unitary(&v, eps).adjoint();
            let b = perturbation_unitary(&v, -eps);
            prop_assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-12);
        }
    }
}
