//! Spin-J operators, the kicked top and its parity sectors.
//!
//! Basis index `i` always labels `m = J - i`, so index 0 is the top state
//! `|J, J>` and `J_z` is diagonal with descending entries.

use std::f64::consts::PI;
use std::fmt;

use crate::echo::StateVector;
use crate::error::{Error, Result};
use crate::matops::{
    c64, cis, eig_hermitian, eig_unitary, ComplexMatrix, EigenSystem, HermitianMatrix,
    UnitaryMatrix,
};

/// Tolerance for picking a parity eigenvalue out of a numerical spectrum.
const BRANCH_TOL: f64 = 1e-6;
/// Largest allowed `max |U S - S (S^dagger U S)|` in [`restrict`].
pub const LEAKAGE_TOL: f64 = 1e-8;
/// Largest allowed unitarity violation of a restricted operator.
pub const RESTRICTED_UNITARY_TOL: f64 = 1e-9;

/// Spin magnitude stored as `2J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpinJ {
    two_j: u32,
}

impl SpinJ {
    pub fn new(two_j: u32) -> Self {
        Self { two_j }
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn j(&self) -> f64 {
        f64::from(self.two_j) / 2.0
    }

    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    pub fn is_integer(&self) -> bool {
        self.two_j.is_multiple_of(2)
    }

    /// Magnetic quantum number of basis index `i`.
    pub fn m(&self, i: usize) -> f64 {
        self.j() - i as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KickedTopParams {
    pub spin: SpinJ,
    pub k: f64,
}

impl KickedTopParams {
    pub fn new(spin: SpinJ, k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::invalid("k", format!("kick strength must be finite, got {k}")));
        }
        Ok(Self { spin, k })
    }
}

fn ladder_entries(spin: SpinJ) -> Vec<f64> {
    // <m+1| J_+ |m> for the pair (i-1, i)
    let j = spin.j();
    (1..spin.dim())
        .map(|i| {
            let m = spin.m(i);
            (j * (j + 1.0) - m * (m + 1.0)).sqrt()
        })
        .collect()
}

/// `(J_x, J_y, J_z)` in the `J_z` eigenbasis.
pub fn spin_operators(spin: SpinJ) -> (HermitianMatrix, HermitianMatrix, HermitianMatrix) {
    let n = spin.dim();
    let lad = ladder_entries(spin);
    let mut jx = ComplexMatrix::zeros(n, n);
    let mut jy = ComplexMatrix::zeros(n, n);
    for (idx, &a) in lad.iter().enumerate() {
        let (r, c) = (idx, idx + 1);
        // J_+ has a at (r, c), J_- has a at (c, r)
        jx.set(r, c, c64::new(a / 2.0, 0.0));
        jx.set(c, r, c64::new(a / 2.0, 0.0));
        jy.set(r, c, c64::new(0.0, -a / 2.0));
        jy.set(c, r, c64::new(0.0, a / 2.0));
    }
    let jz: Vec<f64> = (0..n).map(|i| spin.m(i)).collect();
    (
        HermitianMatrix::from_trusted(jx),
        HermitianMatrix::from_trusted(jy),
        HermitianMatrix::from_real_diagonal(&jz),
    )
}

fn jy_eigen(spin: SpinJ) -> Result<EigenSystem> {
    let (_, jy, _) = spin_operators(spin);
    eig_hermitian(&jy)
}

fn jx_eigen(spin: SpinJ) -> Result<EigenSystem> {
    let (jx, _, _) = spin_operators(spin);
    eig_hermitian(&jx)
}

/// Kicked top of fixed spin with the rotation factor cached, so several kick
/// strengths can share one eigendecomposition.
#[derive(Clone, Debug)]
pub struct KickedTop {
    spin: SpinJ,
    rotation: UnitaryMatrix,
}

impl KickedTop {
    pub fn new(spin: SpinJ) -> Result<Self> {
        if spin.two_j() == 0 {
            return Err(Error::invalid(
                "two_j",
                "J = 0 leaves the torsion k Jz^2 / 2J undefined",
            ));
        }
        let rotation = jy_eigen(spin)?.exp_i(PI / 2.0);
        Ok(Self { spin, rotation })
    }

    pub fn spin(&self) -> SpinJ {
        self.spin
    }

    /// `exp(-i pi J_y / 2)`.
    pub fn rotation(&self) -> &UnitaryMatrix {
        &self.rotation
    }

    /// Diagonal of the torsion factor `exp(-i k J_z^2 / 2J)`.
    pub fn torsion_phases(&self, k: f64) -> Vec<c64> {
        let two_j = f64::from(self.spin.two_j());
        (0..self.spin.dim())
            .map(|i| {
                let m = self.spin.m(i);
                cis(-k * m * m / two_j)
            })
            .collect()
    }

    /// Floquet operator: torsion first, then rotation.
    pub fn floquet(&self, k: f64) -> Result<UnitaryMatrix> {
        KickedTopParams::new(self.spin, k)?;
        let u = self.rotation.matrix().scale_columns(&self.torsion_phases(k));
        Ok(UnitaryMatrix::from_trusted(u))
    }
}

/// `exp(-i pi J_y / 2) exp(-i k J_z^2 / 2J)`.
pub fn qkt_floquet(params: &KickedTopParams) -> Result<UnitaryMatrix> {
    KickedTop::new(params.spin)?.floquet(params.k)
}

/// Spin coherent state `exp(-i theta (J_x sin phi - J_y cos phi)) |J, J>`.
pub fn coherent_state(spin: SpinJ, theta: f64, phi: f64) -> StateVector {
    let two_j = spin.two_j() as i32;
    let (s, c) = (theta / 2.0).sin_cos();
    let ln_fact = |n: i32| statrs::function::factorial::ln_factorial(n as u64);
    let ln_pow = |base: f64, e: i32| if e == 0 { 0.0 } else { f64::from(e) * base.ln() };
    let amps: Vec<c64> = (0..=two_j)
        .map(|i| {
            let ln_binom = ln_fact(two_j) - ln_fact(i) - ln_fact(two_j - i);
            let mag = (0.5 * ln_binom + ln_pow(c.abs(), two_j - i) + ln_pow(s.abs(), i)).exp();
            let mut sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if c < 0.0 && (two_j - i) % 2 == 1 {
                sign = -sign;
            }
            if s < 0.0 && i % 2 == 1 {
                sign = -sign;
            }
            cis(f64::from(i) * phi) * (sign * mag)
        })
        .collect();
    StateVector::normalized(amps).expect("coherent amplitudes are finite and nonzero")
}

/// `(R_y, R_x) = (exp(-i pi J_y), exp(-i pi J_x))`.
pub fn parity_operators(spin: SpinJ) -> Result<(UnitaryMatrix, UnitaryMatrix)> {
    Ok((jy_eigen(spin)?.exp_i(PI), jx_eigen(spin)?.exp_i(PI)))
}

/// Branch of a 180-degree rotation. For integer J the branches are the
/// eigenvalues +1 (even) and -1 (odd); for half-integer J they are +i (even)
/// and -i (odd).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn eigenvalue(self, spin: SpinJ) -> c64 {
        match (spin.is_integer(), self) {
            (true, Parity::Even) => c64::new(1.0, 0.0),
            (true, Parity::Odd) => c64::new(-1.0, 0.0),
            (false, Parity::Even) => c64::new(0.0, 1.0),
            (false, Parity::Odd) => c64::new(0.0, -1.0),
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SectorSpec {
    pub y_parity: Parity,
    pub x_parity: Option<Parity>,
}

impl SectorSpec {
    pub fn label(&self) -> String {
        match self.x_parity {
            Some(x) => format!("y-{}/x-{}", self.y_parity, x),
            None => format!("y-{}", self.y_parity),
        }
    }
}

/// Column-orthonormal embedding `S` of a parity sector.
#[derive(Clone, Debug)]
pub struct SectorTransform {
    source_dim: usize,
    isometry: ComplexMatrix,
    label: String,
}

impl SectorTransform {
    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn sector_dim(&self) -> usize {
        self.isometry.cols()
    }

    pub fn isometry(&self) -> &ComplexMatrix {
        &self.isometry
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

fn branch_columns(eig: &EigenSystem, target: c64) -> Vec<usize> {
    (0..eig.dim())
        .filter(|&i| (cis(-eig.values[i]) - target).norm() < BRANCH_TOL)
        .collect()
}

/// Dimension of a sector, counted from `R_y |m> = (-1)^(J-m) |-m>` for
/// integer J; half-integer J splits evenly.
pub fn expected_sector_dim(spin: SpinJ, sector: SectorSpec) -> usize {
    let n = spin.dim();
    if !spin.is_integer() {
        return n / 2;
    }
    let j = (spin.two_j() / 2) as usize;
    let zero_even = j.is_multiple_of(2);
    let y_dim = match sector.y_parity {
        Parity::Even => j + usize::from(zero_even),
        Parity::Odd => j + usize::from(!zero_even),
    };
    match sector.x_parity {
        None => y_dim,
        Some(Parity::Even) => j / 2 + 1,
        Some(Parity::Odd) => j / 2,
    }
}

/// Sector embedding for `sector`, found by diagonalising `R_y` and then, for
/// an x refinement, `R_x` inside the chosen y branch.
pub fn sector_basis(spin: SpinJ, sector: SectorSpec) -> Result<SectorTransform> {
    if sector.x_parity.is_some() && !(spin.is_integer() && (spin.two_j() / 2).is_multiple_of(2)) {
        return Err(Error::invalid(
            "x_parity",
            format!(
                "x parity is only conserved inside the y-even sector of even integer J (got J = {})",
                spin.j()
            ),
        ));
    }
    if sector.x_parity.is_some() && sector.y_parity != Parity::Even {
        return Err(Error::invalid(
            "x_parity",
            "x parity refinement requires the y-even sector",
        ));
    }
    let label = sector.label();
    let empty = || Error::EmptySector {
        label: sector.label(),
        dim: spin.dim(),
    };

    let ry = jy_eigen(spin)?.exp_i(PI);
    let ey = eig_unitary(&ry)?;
    let cols = branch_columns(&ey, sector.y_parity.eigenvalue(spin));
    if cols.is_empty() {
        return Err(empty());
    }
    let sy = ey.vectors.select_columns(&cols);

    let isometry = match sector.x_parity {
        None => sy,
        Some(xp) => {
            let rx = jx_eigen(spin)?.exp_i(PI);
            let inner = sy.adjoint_mul(&(rx.matrix() * &sy));
            let ex = eig_unitary(&UnitaryMatrix::from_trusted(inner))?;
            let cols = branch_columns(&ex, xp.eigenvalue(spin));
            if cols.is_empty() {
                return Err(empty());
            }
            &sy * &ex.vectors.select_columns(&cols)
        }
    };
    Ok(SectorTransform {
        source_dim: spin.dim(),
        isometry,
        label,
    })
}

/// `S^dagger U S` for an operator that leaves the sector invariant.
///
/// Invariance is checked directly as `max |U S - S (S^dagger U S)| <= 1e-8`.
pub fn restrict(u: &UnitaryMatrix, t: &SectorTransform) -> Result<UnitaryMatrix> {
    if u.dim() != t.source_dim() {
        return Err(Error::DimensionMismatch {
            context: "sector restriction",
            expected: t.source_dim(),
            found: u.dim(),
        });
    }
    let s = t.isometry();
    let us = u.matrix() * s;
    let block = s.adjoint_mul(&us);
    let leakage = us.max_abs_diff(&(s * &block));
    if leakage > LEAKAGE_TOL {
        return Err(Error::SectorLeak { leakage });
    }
    let violation = block.unitarity_violation();
    if violation > RESTRICTED_UNITARY_TOL {
        return Err(Error::NotUnitary { violation });
    }
    Ok(UnitaryMatrix::from_trusted(block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::expm_i_hermitian;
    use proptest::prelude::*;

    fn minus_identity(n: usize) -> ComplexMatrix {
        ComplexMatrix::identity(n).scale(c64::new(-1.0, 0.0))
    }

    #[test]
    fn spin_half_operators() {
        let (jx, jy, jz) = spin_operators(SpinJ::new(1));
        assert_eq!(jz.matrix().diagonal(), vec![c64::new(0.5, 0.0), c64::new(-0.5, 0.0)]);
        assert_eq!(jy.matrix().get(0, 1), c64::new(0.0, -0.5));
        assert_eq!(jy.matrix().get(1, 0), c64::new(0.0, 0.5));
        assert_eq!(jx.matrix().get(0, 1), c64::new(0.5, 0.0));
    }

    #[test]
    fn spin_one_jz() {
        let (_, _, jz) = spin_operators(SpinJ::new(2));
        let d: Vec<f64> = jz.matrix().diagonal().iter().map(|z| z.re).collect();
        assert_eq!(d, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn casimir_large_spin() {
        let spin = SpinJ::new(511);
        let (jx, jy, jz) = spin_operators(spin);
        let sq = |h: &HermitianMatrix| h.matrix() * h.matrix();
        let c = sq(&jx).add(&sq(&jy)).add(&sq(&jz));
        let j = spin.j();
        let expected = ComplexMatrix::identity(spin.dim()).scale(c64::new(j * (j + 1.0), 0.0));
        assert!(c.max_abs_diff(&expected) < 1e-8);
    }

    #[test]
    fn commutation_relation() {
        let (jx, jy, jz) = spin_operators(SpinJ::new(7));
        let comm = (jx.matrix() * jy.matrix()).sub(&(jy.matrix() * jx.matrix()));
        assert!(comm.max_abs_diff(&jz.matrix().scale(c64::new(0.0, 1.0))) < 1e-9);
    }

    #[test]
    fn zero_kick_is_pure_rotation() {
        let spin = SpinJ::new(6);
        let u = qkt_floquet(&KickedTopParams::new(spin, 0.0).unwrap()).unwrap();
        let (_, jy, _) = spin_operators(spin);
        let r = expm_i_hermitian(&jy, PI / 2.0).unwrap();
        assert!(u.matrix().max_abs_diff(r.matrix()) < 1e-12);
    }

    #[test]
    fn spin_half_torsion_is_global_phase() {
        let top = KickedTop::new(SpinJ::new(1)).unwrap();
        for k in [0.3, 2.0, 7.5] {
            for z in top.torsion_phases(k) {
                assert!((z - cis(-k / 4.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_spin_rejected() {
        assert!(qkt_floquet(&KickedTopParams::new(SpinJ::new(0), 1.0).unwrap()).is_err());
        assert!(KickedTopParams::new(SpinJ::new(2), f64::NAN).is_err());
    }

    #[test]
    fn qkt_y_parity_symmetry_j255_5() {
        let spin = SpinJ::new(511);
        let u = qkt_floquet(&KickedTopParams::new(spin, 1.0).unwrap()).unwrap();
        let (ry, _) = parity_operators(spin).unwrap();
        assert!(u.matrix().commutator_norm(ry.matrix()) <= 1e-9);
    }

    #[test]
    fn coherent_state_limits() {
        let spin = SpinJ::new(9);
        let top = coherent_state(spin, 0.0, 1.3);
        assert!((top.amplitudes()[0] - c64::new(1.0, 0.0)).norm() < 1e-15);
        let flip = coherent_state(spin, PI, 0.4);
        assert!((flip.amplitudes()[9].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_matches_rotation_definition() {
        let spin = SpinJ::new(6);
        let (theta, phi): (f64, f64) = (1.1, 0.7);
        let (jx, jy, _) = spin_operators(spin);
        let gen = HermitianMatrix::new(
            jx.matrix()
                .scale(c64::new(phi.sin(), 0.0))
                .sub(&jy.matrix().scale(c64::new(phi.cos(), 0.0))),
        )
        .unwrap();
        let r = expm_i_hermitian(&gen, theta).unwrap();
        let direct: Vec<c64> = r.matrix().column(0).to_vec();
        let state = coherent_state(spin, theta, phi);
        for (a, b) in direct.iter().zip(state.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn coherent_state_jz_expectation() {
        let spin = SpinJ::new(40);
        let theta = PI / 3.0;
        let psi = coherent_state(spin, theta, 0.2);
        let jz: f64 = psi
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * spin.m(i))
            .sum();
        assert!((jz - spin.j() * theta.cos()).abs() < 1e-9);
    }

    #[test]
    fn parity_squares() {
        let (ry, rx) = parity_operators(SpinJ::new(2)).unwrap();
        let id = ComplexMatrix::identity(3);
        assert!((ry.matrix() * ry.matrix()).max_abs_diff(&id) < 1e-10);
        assert!((rx.matrix() * rx.matrix()).max_abs_diff(&id) < 1e-10);
        let (ry, _) = parity_operators(SpinJ::new(1)).unwrap();
        assert!((ry.matrix() * ry.matrix()).max_abs_diff(&minus_identity(2)) < 1e-10);
    }

    #[test]
    fn y_branches_partition() {
        for two_j in [1u32, 4, 7, 10] {
            let spin = SpinJ::new(two_j);
            let total: usize = [Parity::Even, Parity::Odd]
                .iter()
                .map(|&y| {
                    sector_basis(spin, SectorSpec { y_parity: y, x_parity: None })
                        .map(|t| t.sector_dim())
                        .unwrap_or(0)
                })
                .sum();
            assert_eq!(total, spin.dim());
        }
    }

    #[test]
    fn j2_sectors_match_projector_traces() {
        // integer J: R_x and R_y commute, so the joint projector rank is its trace
        let spin = SpinJ::new(4);
        let (ry, rx) = parity_operators(spin).unwrap();
        let n = spin.dim();
        let id = ComplexMatrix::identity(n);
        let proj = |r: &UnitaryMatrix, sign: f64| {
            id.add(&r.matrix().scale(c64::new(sign, 0.0))).scale(c64::new(0.5, 0.0))
        };
        for (xp, sx) in [(Parity::Even, 1.0), (Parity::Odd, -1.0)] {
            let p = &proj(&ry, 1.0) * &proj(&rx, sx);
            let rank = p.diagonal().iter().map(|z| z.re).sum::<f64>().round() as usize;
            let t = sector_basis(spin, SectorSpec { y_parity: Parity::Even, x_parity: Some(xp) })
                .unwrap();
            assert_eq!(t.sector_dim(), rank);
            assert!(t.isometry().unitarity_violation() < 1e-10);
        }
    }

    #[test]
    fn sector_dims_match_counting_formula() {
        for two_j in [1u32, 2, 3, 4, 6, 8, 9, 12] {
            let spin = SpinJ::new(two_j);
            let mut specs = vec![
                SectorSpec { y_parity: Parity::Even, x_parity: None },
                SectorSpec { y_parity: Parity::Odd, x_parity: None },
            ];
            if two_j % 4 == 0 {
                for x in [Parity::Even, Parity::Odd] {
                    specs.push(SectorSpec { y_parity: Parity::Even, x_parity: Some(x) });
                }
            }
            for spec in specs {
                let t = sector_basis(spin, spec).unwrap();
                assert_eq!(t.sector_dim(), expected_sector_dim(spin, spec), "2J={two_j} {spec:?}");
            }
        }
    }

    #[test]
    fn x_refinement_rejected_outside_even_j() {
        let spec = SectorSpec { y_parity: Parity::Even, x_parity: Some(Parity::Odd) };
        assert!(sector_basis(SpinJ::new(6), spec).is_err());
        assert!(sector_basis(SpinJ::new(7), spec).is_err());
        let odd_y = SectorSpec { y_parity: Parity::Odd, x_parity: Some(Parity::Odd) };
        assert!(sector_basis(SpinJ::new(8), odd_y).is_err());
    }

    #[test]
    fn restrict_identity_and_own_branch() {
        let spin = SpinJ::new(8);
        let spec = SectorSpec { y_parity: Parity::Odd, x_parity: None };
        let t = sector_basis(spin, spec).unwrap();
        let d = t.sector_dim();
        let id = restrict(&UnitaryMatrix::identity(spin.dim()), &t).unwrap();
        assert!(id.matrix().max_abs_diff(&ComplexMatrix::identity(d)) < 1e-12);
        let (ry, _) = parity_operators(spin).unwrap();
        let r = restrict(&ry, &t).unwrap();
        assert!(r.matrix().max_abs_diff(&minus_identity(d)) < 1e-10);
    }

    #[test]
    fn restrict_rejects_symmetry_breaking_operator() {
        let spin = SpinJ::new(8);
        let t = sector_basis(spin, SectorSpec { y_parity: Parity::Even, x_parity: None }).unwrap();
        let (_, _, jz) = spin_operators(spin);
        let u = expm_i_hermitian(&jz, 0.3).unwrap();
        assert!(matches!(restrict(&u, &t), Err(Error::SectorLeak { .. })));
    }

    #[test]
    fn restricted_spectrum_is_included_in_full() {
        let spin = SpinJ::new(16);
        let u = qkt_floquet(&KickedTopParams::new(spin, 7.0).unwrap()).unwrap();
        let spec = SectorSpec { y_parity: Parity::Even, x_parity: Some(Parity::Odd) };
        let t = sector_basis(spin, spec).unwrap();
        let ur = restrict(&u, &t).unwrap();
        let full = eig_unitary(&u).unwrap().values;
        for phi in eig_unitary(&ur).unwrap().values {
            let best = full
                .iter()
                .map(|&f| (cis(-f) - cis(-phi)).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8);
        }
    }

    #[test]
    fn restricted_qkt_commutes_with_restricted_rx() {
        let spin = SpinJ::new(12);
        let u = qkt_floquet(&KickedTopParams::new(spin, 3.0).unwrap()).unwrap();
        let t = sector_basis(spin, SectorSpec { y_parity: Parity::Even, x_parity: None }).unwrap();
        let (_, rx) = parity_operators(spin).unwrap();
        let ur = restrict(&u, &t).unwrap();
        let rxr = restrict(&rx, &t).unwrap();
        assert!(ur.matrix().commutator_norm(rxr.matrix()) < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn coherent_norm_is_one(two_j in 1u32..60, theta in -7.0f64..7.0, phi in -7.0f64..7.0) {
            let psi = coherent_state(SpinJ::new(two_j), theta, phi);
            let n: f64 = psi.amplitudes().iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn qkt_commutes_with_ry(two_j in 1u32..40, k in 0.0f64..12.0) {
            let spin = SpinJ::new(two_j);
            let u = qkt_floquet(&KickedTopParams::new(spin, k).unwrap()).unwrap();
            let (ry, _) = parity_operators(spin).unwrap();
            prop_assert!(u.matrix().commutator_norm(ry.matrix()) <= 1e-9);
            prop_assert!(u.matrix().unitarity_violation() <= 1e-10);
        }
    }
}
