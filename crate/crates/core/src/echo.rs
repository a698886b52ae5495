//! Initial states, two-track echo evolution and trial averaging.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matops::{c64, ComplexMatrix, UnitaryMatrix};
use crate::perturb::{perturbation_unitary, PerturbationHamiltonian};
use crate::seed;
use crate::spin::{coherent_state, SpinJ};

const NORM_TOL: f64 = 1e-12;
/// States evolved together in one batch. Fixed so results never depend on the
/// worker count.
const STATE_CHUNK: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<c64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<c64>) -> Result<Self> {
        let norm = norm(&amplitudes);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::invalid("state", format!("norm {norm} is not 1")));
        }
        Ok(Self { amplitudes })
    }

    pub fn normalized(mut amplitudes: Vec<c64>) -> Result<Self> {
        let n = norm(&amplitudes);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("state", "cannot normalise a zero or non-finite vector"));
        }
        for a in amplitudes.iter_mut() {
            *a /= n;
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amplitudes = vec![c64::new(0.0, 0.0); dim];
        amplitudes[index] = c64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.amplitudes
    }
}

fn norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Normalised vector of i.i.d. standard complex Gaussian entries.
pub fn haar_state(dim: usize, seed: u64) -> Result<StateVector> {
    if dim == 0 {
        return Err(Error::invalid("dim", "state dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = (0..dim)
        .map(|_| c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    StateVector::normalized(amps)
}

/// Coherent state pointing in a uniformly random direction.
pub fn random_coherent_state(spin: SpinJ, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_theta: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    coherent_state(spin, cos_theta.acos(), phi)
}

/// Unperturbed map `U` and perturbed map `U exp(-i eps V)`.
#[derive(Clone, Debug)]
pub struct EchoPair {
    unperturbed: UnitaryMatrix,
    perturbed: UnitaryMatrix,
}

impl EchoPair {
    /// `perturbation` is the kick `exp(-i eps V)` applied before each step of
    /// `unperturbed`.
    pub fn new(unperturbed: UnitaryMatrix, perturbation: &UnitaryMatrix) -> Result<Self> {
        if unperturbed.dim() != perturbation.dim() {
            return Err(Error::DimensionMismatch {
                context: "echo pair",
                expected: unperturbed.dim(),
                found: perturbation.dim(),
            });
        }
        let p = perturbation.matrix();
        let perturbed = if p.is_diagonal() {
            unperturbed.matrix().scale_columns(&p.diagonal())
        } else {
            unperturbed.matrix() * p
        };
        Ok(Self {
            unperturbed,
            perturbed: UnitaryMatrix::from_trusted(perturbed),
        })
    }

    pub fn dim(&self) -> usize {
        self.unperturbed.dim()
    }

    pub fn unperturbed(&self) -> &UnitaryMatrix {
        &self.unperturbed
    }

    pub fn perturbed(&self) -> &UnitaryMatrix {
        &self.perturbed
    }
}

/// `F(t)` for `t = 0..=steps`, optionally with a standard error per step.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityCurve {
    values: Vec<f64>,
    stderr: Option<Vec<f64>>,
    trial_count: usize,
}

impl FidelityCurve {
    /// Curve from raw values; `values[0]` must be 1.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&1.0) {
            return Err(Error::invalid("values", "a fidelity curve starts at F(0) = 1"));
        }
        Ok(Self {
            values,
            stderr: None,
            trial_count: 1,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    pub fn trial_count(&self) -> usize {
        self.trial_count
    }

    /// Last kick index `T`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    /// First `t` with `F(t) <= level`.
    pub fn time_to(&self, level: f64) -> Option<usize> {
        self.values.iter().position(|&f| f <= level)
    }
}

/// Evolves the columns of `states` on both tracks, one curve per column.
fn evolve_batch(pair: &EchoPair, states: ComplexMatrix, steps: usize) -> Vec<Vec<f64>> {
    let b_count = states.cols();
    let mut curves: Vec<Vec<f64>> = (0..b_count)
        .map(|_| {
            let mut v = Vec::with_capacity(steps + 1);
            v.push(1.0);
            v
        })
        .collect();
    let u = pair.unperturbed.matrix();
    let up = pair.perturbed.matrix();
    let mut a = states.clone();
    let mut b = states;
    for _ in 0..steps {
        a = u * &a;
        b = up * &b;
        for (j, curve) in curves.iter_mut().enumerate() {
            let overlap: c64 = a
                .column(j)
                .iter()
                .zip(b.column(j))
                .map(|(x, y)| x.conj() * y)
                .sum();
            curve.push(overlap.norm_sqr());
        }
    }
    curves
}

fn stack(states: &[StateVector]) -> ComplexMatrix {
    let n = states[0].dim();
    ComplexMatrix::from_fn(n, states.len(), |i, j| states[j].amplitudes[i])
}

/// Single-trial echo `F(t) = |<a_t|b_t>|^2` with `a_{t+1} = U a_t` and
/// `b_{t+1} = U exp(-i eps V) b_t`.
pub fn fidelity_curve(pair: &EchoPair, psi: &StateVector, steps: usize) -> Result<FidelityCurve> {
    if psi.dim() != pair.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: pair.dim(),
            found: psi.dim(),
        });
    }
    let values = evolve_batch(pair, stack(std::slice::from_ref(psi)), steps)
        .pop()
        .expect("one column");
    Ok(FidelityCurve {
        values,
        stderr: None,
        trial_count: 1,
    })
}

/// Provider of the unperturbed operators averaged over.
pub trait OperatorSource: Sync {
    fn dim(&self) -> usize;

    /// Operator number `index`; random sources draw it from `seed`.
    fn operator(&self, index: usize, seed: u64) -> Result<UnitaryMatrix>;

    /// Whether distinct indices give distinct operators.
    fn is_random(&self) -> bool;
}

/// A single fixed operator, such as a kicked top.
#[derive(Clone, Debug)]
pub struct FixedOperator(pub UnitaryMatrix);

impl OperatorSource for FixedOperator {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn operator(&self, _index: usize, _seed: u64) -> Result<UnitaryMatrix> {
        Ok(self.0.clone())
    }

    fn is_random(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    Haar,
    Coherent(SpinJ),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialPlan {
    pub n_states: usize,
    pub n_operators: usize,
    pub master_seed: u64,
    pub steps: usize,
    pub initial: InitialState,
}

impl TrialPlan {
    pub fn trial_count(&self) -> usize {
        self.n_states * self.n_operators
    }

    fn initial_state(&self, dim: usize, op: usize, state: usize) -> Result<StateVector> {
        let s = seed::state_seed(self.master_seed, op as u64, state as u64);
        match self.initial {
            InitialState::Haar => haar_state(dim, s),
            InitialState::Coherent(spin) => {
                if spin.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "coherent initial state",
                        expected: dim,
                        found: spin.dim(),
                    });
                }
                Ok(random_coherent_state(spin, s))
            }
        }
    }
}

fn trial_error(trial: usize, stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Trial {
        trial,
        stage,
        source: Box::new(e),
    }
}

/// Per-trial curves in ascending `(operator, state)` order.
pub fn trial_curves(
    system: &dyn OperatorSource,
    perturbation: &UnitaryMatrix,
    plan: &TrialPlan,
) -> Result<Vec<Vec<f64>>> {
    if plan.n_states == 0 || plan.n_operators == 0 {
        return Err(Error::invalid("trials", "n_states and n_operators must be at least 1"));
    }
    if plan.n_operators > 1 && !system.is_random() {
        return Err(Error::invalid(
            "n_operators",
            "a fixed system has exactly one operator",
        ));
    }
    let dim = system.dim();
    let per_op: Vec<Vec<Vec<f64>>> = (0..plan.n_operators)
        .into_par_iter()
        .map(|op| {
            let first = op * plan.n_states;
            let u = system
                .operator(op, seed::operator_seed(plan.master_seed, op as u64))
                .map_err(trial_error(first, "operator construction"))?;
            let pair = EchoPair::new(u, perturbation).map_err(trial_error(first, "echo setup"))?;
            let chunks: Vec<Vec<Vec<f64>>> = (0..plan.n_states)
                .step_by(STATE_CHUNK)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|start| {
                    let end = (start + STATE_CHUNK).min(plan.n_states);
                    let states = (start..end)
                        .map(|s| {
                            plan.initial_state(dim, op, s)
                                .map_err(trial_error(first + s, "state preparation"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(evolve_batch(&pair, stack(&states), plan.steps))
                })
                .collect::<Result<_>>()?;
            Ok(chunks.into_iter().flatten().collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_op.into_iter().flatten().collect())
}

/// Pointwise mean and standard error of curves, summed in the given order.
/// The mean is clamped to the per-step range of the inputs.
pub fn average_curves(curves: &[Vec<f64>]) -> Result<FidelityCurve> {
    let n = curves.len();
    if n == 0 {
        return Err(Error::invalid("curves", "nothing to average"));
    }
    let len = curves[0].len();
    if let Some(c) = curves.iter().find(|c| c.len() != len) {
        return Err(Error::DimensionMismatch {
            context: "curve length",
            expected: len,
            found: c.len(),
        });
    }
    let mut values = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for t in 0..len {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for c in curves {
            lo = lo.min(c[t]);
            hi = hi.max(c[t]);
            sum += c[t];
        }
        let mean = (sum / n as f64).clamp(lo, hi);
        let se = if n > 1 {
            let ss: f64 = curves.iter().map(|c| (c[t] - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        values.push(mean);
        stderr.push(se);
    }
    Ok(FidelityCurve {
        values,
        stderr: Some(stderr),
        trial_count: n,
    })
}

/// Mean echo over `n_operators x n_states` trials with per-trial seeds derived
/// from the plan's master seed.
pub fn averaged_fidelity(
    system: &dyn OperatorSource,
    v: &PerturbationHamiltonian,
    epsilon: f64,
    plan: &TrialPlan,
) -> Result<FidelityCurve> {
    if v.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            context: "perturbation",
            expected: system.dim(),
            found: v.dim(),
        });
    }
    let p = perturbation_unitary(v, epsilon);
    average_curves(&trial_curves(system, &p, plan)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::{cis, HermitianMatrix};
    use crate::perturb::{collective_hamiltonian, Axis};
    use crate::ensembles::sample_cue;
    use proptest::prelude::*;

    fn qubit_pair(eps: f64) -> EchoPair {
        let p = UnitaryMatrix::new(ComplexMatrix::from_diagonal(&[cis(-eps / 2.0), cis(eps / 2.0)]))
            .unwrap();
        EchoPair::new(UnitaryMatrix::identity(2), &p).unwrap()
    }

    fn plus_state() -> StateVector {
        let a = c64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        StateVector::normalized(vec![a, a]).unwrap()
    }

    #[test]
    fn single_qubit_closed_form() {
        for eps in [0.1, 0.7] {
            let f = fidelity_curve(&qubit_pair(eps), &plus_state(), 100).unwrap();
            for (t, v) in f.values().iter().enumerate() {
                let expected = (eps * t as f64 / 2.0).cos().powi(2);
                assert!((v - expected).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn zero_perturbation_keeps_fidelity_one() {
        let u = sample_cue(16, 4).unwrap();
        let pair = EchoPair::new(u, &UnitaryMatrix::identity(16)).unwrap();
        let f = fidelity_curve(&pair, &haar_state(16, 1).unwrap(), 50).unwrap();
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn haar_state_dim_one_is_unimodular() {
        let s = haar_state(1, 99).unwrap();
        assert!((s.amplitudes()[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn haar_state_is_uniform_on_average() {
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|s| haar_state(8, s).unwrap().amplitudes()[3].norm_sqr())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.125).abs() < 3.0 * se);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(fidelity_curve(&qubit_pair(0.3), &haar_state(3, 0).unwrap(), 4).is_err());
        assert!(EchoPair::new(UnitaryMatrix::identity(2), &UnitaryMatrix::identity(3)).is_err());
    }

    #[test]
    fn single_trial_average_matches_curve() {
        let u = sample_cue(8, 2).unwrap();
        let v = collective_hamiltonian(3, Axis::Z).unwrap();
        let plan = TrialPlan {
            n_states: 1,
            n_operators: 1,
            master_seed: 11,
            steps: 30,
            initial: InitialState::Haar,
        };
        let avg = averaged_fidelity(&FixedOperator(u.clone()), &v, 0.4, &plan).unwrap();
        let psi = haar_state(8, seed::state_seed(11, 0, 0)).unwrap();
        let pair = EchoPair::new(u, &perturbation_unitary(&v, 0.4)).unwrap();
        let single = fidelity_curve(&pair, &psi, 30).unwrap();
        assert_eq!(avg.values(), single.values());
        assert!(avg.stderr().unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn averaged_curve_bounds_and_stderr_at_zero() {
        let u = sample_cue(16, 5).unwrap();
        let v = collective_hamiltonian(4, Axis::Z).unwrap();
        let p = perturbation_unitary(&v, 0.5);
        let plan = TrialPlan {
            n_states: 45,
            n_operators: 1,
            master_seed: 3,
            steps: 20,
            initial: InitialState::Haar,
        };
        let curves = trial_curves(&FixedOperator(u), &p, &plan).unwrap();
        let avg = average_curves(&curves).unwrap();
        assert_eq!(avg.values()[0], 1.0);
        assert_eq!(avg.stderr().unwrap()[0], 0.0);
        for t in 0..=20 {
            let lo = curves.iter().map(|c| c[t]).fold(f64::INFINITY, f64::min);
            let hi = curves.iter().map(|c| c[t]).fold(f64::NEG_INFINITY, f64::max);
            assert!(avg.values()[t] >= lo && avg.values()[t] <= hi);
        }
    }

    #[test]
    fn fixed_system_rejects_many_operators() {
        let plan = TrialPlan {
            n_states: 2,
            n_operators: 2,
            master_seed: 0,
            steps: 3,
            initial: InitialState::Haar,
        };
        let r = trial_curves(&FixedOperator(UnitaryMatrix::identity(2)), &UnitaryMatrix::identity(2), &plan);
        assert!(r.is_err());
    }

    #[test]
    fn norms_survive_long_evolution() {
        let u = sample_cue(32, 8).unwrap();
        let v = HermitianMatrix::from_real_diagonal(&(0..32).map(|i| i as f64 / 10.0).collect::<Vec<_>>());
        let p = crate::matops::expm_i_hermitian(&v, 0.3).unwrap();
        let pair = EchoPair::new(u, &p).unwrap();
        let mut a = stack(&[haar_state(32, 0).unwrap()]);
        let mut b = a.clone();
        for _ in 0..1000 {
            a = pair.unperturbed().matrix() * &a;
            b = pair.perturbed().matrix() * &b;
        }
        assert!((norm(a.column(0)) - 1.0).abs() < 1e-10);
        assert!((norm(b.column(0)) - 1.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prefix_property(seed in 0u64..1000, t_short in 0usize..20, eps in 0.0f64..1.0) {
            let u = sample_cue(8, seed).unwrap();
            let v = collective_hamiltonian(3, Axis::Z).unwrap();
            let pair = EchoPair::new(u, &perturbation_unitary(&v, eps)).unwrap();
            let psi = haar_state(8, seed ^ 1).unwrap();
            let long = fidelity_curve(&pair, &psi, 25).unwrap();
            let short = fidelity_curve(&pair, &psi, t_short).unwrap();
            prop_assert_eq!(&long.values()[..=t_short], short.values());
        }

        #[test]
        fn haar_state_unit_norm(dim in 1usize..64, seed in any::<u64>()) {
            let s = haar_state(dim, seed).unwrap();
            prop_assert!((norm(s.amplitudes()) - 1.0).abs() < 1e-12);
        }
    }
}
