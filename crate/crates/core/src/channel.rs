//! Correlated Rayleigh channel realizations and MMSE channel estimation.
//!
//! Channels are drawn as `h = R^{1/2} z` with `z` standard complex Gaussian,
//! so `h ~ CN(0, R)`. Estimation follows the pilot-reuse-1 uplink: every
//! cell uses the same `K` orthogonal pilots, so BS `j` observes for pilot
//! `i` the superposition of all cells' UEs `i` plus noise, and the MMSE
//! estimate of each contributing channel is a regularized projection of that
//! shared observation — the root of pilot contamination.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::NetworkRealization;
use crate::{C64, Error, Result};

/// Channel realizations for every BS-UE pair.
///
/// `h[(l*K + i)*L + j]` is `M x n_real`; column `r` is the channel
/// `h_li^j` in Monte-Carlo realization `r`.
#[derive(Debug, Clone)]
pub struct ChannelBatch {
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub n_real: usize,
    pub h: Vec<DMatrix<C64>>,
}

impl ChannelBatch {
    #[inline]
    pub fn triple_index(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.k + i) * self.l + j
    }

    pub fn of(&self, l: usize, i: usize, j: usize) -> &DMatrix<C64> {
        &self.h[self.triple_index(l, i, j)]
    }
}

/// MMSE channel estimates and their statistics.
///
/// `est` mirrors the layout of [`ChannelBatch::h`]. `phi[(l*K+i)*L+j]` is the
/// estimate covariance `Phi_li^j = R Q^{-1} R`, so the estimation-error
/// covariance is `R - Phi`.
#[derive(Debug, Clone)]
pub struct EstimateBatch {
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub n_real: usize,
    pub est: Vec<DMatrix<C64>>,
    pub phi: Vec<DMatrix<C64>>,
}

impl EstimateBatch {
    #[inline]
    pub fn triple_index(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.k + i) * self.l + j
    }

    pub fn of(&self, l: usize, i: usize, j: usize) -> &DMatrix<C64> {
        &self.est[self.triple_index(l, i, j)]
    }

    pub fn phi_of(&self, l: usize, i: usize, j: usize) -> &DMatrix<C64> {
        &self.phi[self.triple_index(l, i, j)]
    }
}

/// Draw an `M x n` matrix of i.i.d. CN(0, `var`) entries.
fn complex_gaussian(m: usize, n: usize, var: f64, rng: &mut ChaCha12Rng) -> DMatrix<C64> {
    let s = (var / 2.0).sqrt();
    DMatrix::from_fn(m, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * s, im * s)
    })
}

/// Hermitian square root `U diag(sqrt(max(lambda, 0))) U^H`.
///
/// Eigenvalues that are slightly negative from roundoff are clamped to zero
/// so the result is always a valid factor.
fn matrix_sqrt(r: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(r.clone());
    let mut scaled = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        scaled.column_mut(c).scale_mut(root);
    }
    &scaled * eig.eigenvectors.adjoint()
}

/// Sample `n_real` i.i.d. channel realizations `h ~ CN(0, R)` for every
/// BS-UE pair. Deterministic given `seed`; triples are drawn in flat index
/// order.
pub fn sample_channels(net: &NetworkRealization, n_real: usize, seed: u64) -> Result<ChannelBatch> {
    if n_real == 0 {
        return Err(Error::Domain("n_real must be >= 1".into()));
    }
    let cfg = &net.config;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(cfg.l * cfg.k * cfg.l);
    for r in &net.corr {
        let root = matrix_sqrt(r);
        let z = complex_gaussian(cfg.m, n_real, 1.0, &mut rng);
        h.push(&root * z);
    }
    Ok(ChannelBatch {
        l: cfg.l,
        k: cfg.k,
        m: cfg.m,
        n_real,
        h,
    })
}

/// MMSE-estimate every channel from pilot-reuse-1 uplink pilots.
///
/// For BS `j` and pilot `i` the whitened observation is
/// `y = sum_l h_li^j + n'` with `n' ~ CN(0, (sigma^2 / (tau_p rho)) I)`
/// drawn fresh per (j, i, realization), and
///
/// ```text
/// Q_ji    = sum_l R_li^j + (sigma^2 / (tau_p rho)) I
/// hhat    = R_li^j Q_ji^{-1} y
/// Phi_li^j = R_li^j Q_ji^{-1} R_li^j
/// ```
pub fn mmse_estimate(
    net: &NetworkRealization,
    channels: &ChannelBatch,
    seed: u64,
) -> Result<EstimateBatch> {
    let cfg = &net.config;
    if channels.l != cfg.l || channels.k != cfg.k || channels.m != cfg.m {
        return Err(Error::Shape(
            "channel batch does not match the network realization".into(),
        ));
    }
    let n_real = channels.n_real;
    let s = cfg.pilot_noise_var();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let empty = DMatrix::<C64>::zeros(0, 0);
    let mut est = vec![empty.clone(); cfg.l * cfg.k * cfg.l];
    let mut phi = vec![empty; cfg.l * cfg.k * cfg.l];

    for j in 0..cfg.l {
        for i in 0..cfg.k {
            // Shared pilot observation: all cells' UEs i superpose at BS j.
            let mut q = DMatrix::<C64>::from_diagonal_element(cfg.m, cfg.m, C64::new(s, 0.0));
            let mut y = complex_gaussian(cfg.m, n_real, s, &mut rng);
            for l in 0..cfg.l {
                q += net.corr_of(l, i, j);
                y += channels.of(l, i, j);
            }
            let chol = Cholesky::new(q).ok_or_else(|| {
                Error::Numeric(format!("pilot Gram matrix not positive definite at BS {j}, pilot {i}"))
            })?;
            let x = chol.solve(&y);
            for l in 0..cfg.l {
                let r = net.corr_of(l, i, j);
                let idx = (l * cfg.k + i) * cfg.l + j;
                est[idx] = r * &x;
                let p = r * chol.solve(r);
                // Symmetrize away solver roundoff; Phi is Hermitian exactly.
                phi[idx] = (&p + p.adjoint()) * C64::new(0.5, 0.0);
            }
        }
    }

    Ok(EstimateBatch {
        l: cfg.l,
        k: cfg.k,
        m: cfg.m,
        n_real,
        est,
        phi,
    })
}
