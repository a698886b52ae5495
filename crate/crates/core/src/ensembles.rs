//! CUE and interpolating ensembles, block-diagonal composition and the basis
//! transforms used with them.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::echo::OperatorSource;
use crate::error::{Error, Result};
use crate::matops::{c64, cis, eig_unitary, ComplexMatrix, UnitaryMatrix};
use crate::seed;
use crate::stats::{ks_test, poisson_cdf, wigner_unitary_cdf, KsResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleParams {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
}

impl EnsembleParams {
    pub fn new(n: usize, delta: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", format!("ensemble dimension must be at least 2, got {n}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid("delta", format!("must lie in [0, 1], got {delta}")));
        }
        Ok(Self { n, delta, seed })
    }
}

/// Haar-random unitary from the Hurwitz product of two-level rotations.
pub fn sample_cue(n: usize, seed: u64) -> Result<UnitaryMatrix> {
    sample_interpolating(&EnsembleParams::new(n, 1.0, seed)?)
}

/// Hurwitz construction with every mixing angle scaled by `delta`.
///
/// For `k = 1..n` and `l = k..1` the rotation on columns `(l-1, l)` uses
/// `phi = delta * asin(xi^(1/2l))`, phase `psi` and, when `l = 1`, phase `chi`,
/// drawn in that order; a global phase is drawn last.
pub fn sample_interpolating(params: &EnsembleParams) -> Result<UnitaryMatrix> {
    let EnsembleParams { n, delta, seed } = EnsembleParams::new(params.n, params.delta, params.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = ComplexMatrix::identity(n);
    let mut ci = vec![c64::new(0.0, 0.0); n];
    let mut cj = vec![c64::new(0.0, 0.0); n];
    for k in 1..n {
        for l in (1..=k).rev() {
            let xi: f64 = rng.random();
            let phi = delta * xi.powf(1.0 / (2.0 * l as f64)).asin();
            let psi = rng.random::<f64>() * 2.0 * PI;
            let chi = if l == 1 { rng.random::<f64>() * 2.0 * PI } else { 0.0 };
            let (s, c) = phi.sin_cos();
            let e_ii = cis(psi) * c;
            let e_ij = cis(chi) * s;
            let e_ji = -cis(-chi) * s;
            let e_jj = cis(-psi) * c;
            ci.copy_from_slice(u.column(l - 1));
            cj.copy_from_slice(u.column(l));
            for (r, z) in u.column_mut(l - 1).iter_mut().enumerate() {
                *z = ci[r] * e_ii + cj[r] * e_ji;
            }
            for (r, z) in u.column_mut(l).iter_mut().enumerate() {
                *z = ci[r] * e_ij + cj[r] * e_jj;
            }
        }
    }
    let alpha = rng.random::<f64>() * 2.0 * PI;
    Ok(UnitaryMatrix::from_trusted(u.scale(cis(alpha))))
}

/// `diag(A, B)`.
pub fn compose_block_diagonal(a: &UnitaryMatrix, b: &UnitaryMatrix) -> Result<UnitaryMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "block-diagonal composition",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let h = a.dim();
    let m = ComplexMatrix::from_fn(2 * h, 2 * h, |i, j| match (i < h, j < h) {
        (true, true) => a.matrix().get(i, j),
        (false, false) => b.matrix().get(i - h, j - h),
        _ => c64::new(0.0, 0.0),
    });
    Ok(UnitaryMatrix::from_trusted(m))
}

/// Index-complement permutation `|i> -> |n-1-i>`.
pub fn index_complement(n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |i, j| {
        if i + j + 1 == n {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

/// Real orthogonal `P` pairing `|i>` with `|n-1-i>`:
/// `P|i> = (|i> + |n-1-i>)/sqrt 2` for `i < n/2` and
/// `P|i> = (|n-1-i> - |i>)/sqrt 2` otherwise.
pub fn pairing_transform(n: usize) -> Result<UnitaryMatrix> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::invalid("n", format!("pairing needs an even dimension, got {n}")));
    }
    let r = FRAC_1_SQRT_2;
    let m = ComplexMatrix::from_fn(n, n, |row, col| {
        let partner = n - 1 - col;
        let v = if col < n / 2 {
            if row == col || row == partner {
                r
            } else {
                0.0
            }
        } else if row == partner {
            r
        } else if row == col {
            -r
        } else {
            0.0
        };
        c64::new(v, 0.0)
    });
    Ok(UnitaryMatrix::from_trusted(m))
}

/// `n_q`-fold tensor power of `[[1, 1], [1, -1]] / sqrt 2`.
pub fn collective_x_basis(n_q: u32) -> Result<UnitaryMatrix> {
    if n_q == 0 || n_q >= 31 {
        return Err(Error::invalid("n_q", format!("qubit count {n_q} out of range")));
    }
    let n = 1usize << n_q;
    let scale = (n as f64).sqrt().recip();
    let m = ComplexMatrix::from_fn(n, n, |r, c| {
        let sign = if (r & c).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        c64::new(sign * scale, 0.0)
    });
    Ok(UnitaryMatrix::from_trusted(m))
}

/// `H M H` for `H = collective_x_basis(n_q)`, using unnormalised butterflies
/// and a single division by `2^n_q`. Exact whenever the entries of `M` are
/// dyadic rationals of modest size, such as collective generators.
pub fn walsh_conjugate(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = m.rows();
    if !m.is_square() || n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid("matrix", format!("needs a square power-of-two dimension, got {}x{}", n, m.cols())));
    }
    let butterfly = |v: &mut [c64]| {
        let mut h = 1;
        while h < v.len() {
            for start in (0..v.len()).step_by(2 * h) {
                for i in start..start + h {
                    let (a, b) = (v[i], v[i + h]);
                    v[i] = a + b;
                    v[i + h] = a - b;
                }
            }
            h *= 2;
        }
    };
    let mut out = m.clone();
    for j in 0..n {
        butterfly(out.column_mut(j));
    }
    let mut t = out.adjoint();
    for j in 0..n {
        butterfly(t.column_mut(j));
    }
    let inv = c64::new(1.0 / n as f64, 0.0);
    Ok(t.adjoint().scale(inv))
}

/// Nearest-neighbour spacings of eigenangles on the circle, including the
/// wrap-around gap, in units of the mean spacing `2 pi / n`.
pub fn unfolded_spacings(angles: &[f64]) -> Result<Vec<f64>> {
    let n = angles.len();
    if n < 2 {
        return Err(Error::invalid("angles", "need at least two eigenangles"));
    }
    let mut a = angles.to_vec();
    a.sort_by(f64::total_cmp);
    let unit = n as f64 / (2.0 * PI);
    let mut s: Vec<f64> = a.windows(2).map(|w| (w[1] - w[0]) * unit).collect();
    s.push((a[0] + 2.0 * PI - a[n - 1]) * unit);
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct SpacingHistogram {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub sample_count: usize,
    pub spacings: Vec<f64>,
    pub ks_poisson: KsResult,
    pub ks_wigner: KsResult,
}

impl SpacingHistogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn mean_spacing(&self) -> f64 {
        self.spacings.iter().sum::<f64>() / self.spacings.len() as f64
    }
}

const SPACING_BIN: f64 = 0.1;

/// Pooled unfolded spacings of `samples`, their histogram and KS tests
/// against the Poisson and unitary Wigner laws.
pub fn spacing_distribution(samples: &[UnitaryMatrix]) -> Result<SpacingHistogram> {
    let Some(first) = samples.first() else {
        return Err(Error::invalid("samples", "no samples"));
    };
    let mut spacings = Vec::new();
    for u in samples {
        if u.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                context: "spacing samples",
                expected: first.dim(),
                found: u.dim(),
            });
        }
        spacings.extend(unfolded_spacings(&eig_unitary(u)?.values)?);
    }
    Ok(histogram_spacings(spacings, samples.len()))
}

pub(crate) fn histogram_spacings(spacings: Vec<f64>, sample_count: usize) -> SpacingHistogram {
    let max = spacings.iter().copied().fold(0.0f64, f64::max);
    let upper = max.ceil().max(4.0);
    let n_bins = (upper / SPACING_BIN).round() as usize;
    let width = upper / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &s in &spacings {
        let b = ((s / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let total = spacings.len() as f64;
    SpacingHistogram {
        bin_edges: (0..=n_bins).map(|i| i as f64 * width).collect(),
        densities: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        sample_count,
        ks_poisson: ks_test(&spacings, poisson_cdf),
        ks_wigner: ks_test(&spacings, wigner_unitary_cdf),
        spacings,
    }
}

/// Interpolating-ensemble operators of fixed `n` and `delta`.
#[derive(Clone, Copy, Debug)]
pub struct InterpolatingSource {
    pub n: usize,
    pub delta: f64,
}

impl OperatorSource for InterpolatingSource {
    fn dim(&self) -> usize {
        self.n
    }

    fn operator(&self, _index: usize, seed: u64) -> Result<UnitaryMatrix> {
        sample_interpolating(&EnsembleParams::new(self.n, self.delta, seed)?)
    }

    fn is_random(&self) -> bool {
        true
    }
}

/// `diag(A, B)` with independent interpolating blocks.
#[derive(Clone, Copy, Debug)]
pub struct BlockSource {
    pub block_dim: usize,
    pub delta: f64,
}

impl OperatorSource for BlockSource {
    fn dim(&self) -> usize {
        2 * self.block_dim
    }

    fn operator(&self, _index: usize, seed: u64) -> Result<UnitaryMatrix> {
        let a = sample_interpolating(&EnsembleParams::new(
            self.block_dim,
            self.delta,
            seed::mix(seed, &[0]),
        )?)?;
        let b = sample_interpolating(&EnsembleParams::new(
            self.block_dim,
            self.delta,
            seed::mix(seed, &[1]),
        )?)?;
        compose_block_diagonal(&a, &b)
    }

    fn is_random(&self) -> bool {
        true
    }
}
