//! Downlink precoding vectors derived from uplink combining by duality.
//!
//! Maximum-ratio (MR) points the beam along the channel estimate; M-MMSE
//! additionally whitens inter- and intra-cell interference using all
//! estimates available at the BS plus the estimation-error statistics. Both
//! are normalized per realization so transmit power is carried entirely by
//! the allocation coefficients.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::channel::EstimateBatch;
use crate::geometry::NetworkRealization;
use crate::{C64, Error, Result};

/// Precoding scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precoder {
    Mr,
    Mmse,
}

impl std::fmt::Display for Precoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precoder::Mr => write!(f, "mr"),
            Precoder::Mmse => write!(f, "mmse"),
        }
    }
}

impl std::str::FromStr for Precoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mr" => Ok(Precoder::Mr),
            "mmse" => Ok(Precoder::Mmse),
            other => Err(Error::Format(format!("unknown precoder `{other}`"))),
        }
    }
}

/// Unit-norm precoding vectors for every served UE.
///
/// `w[j*K + k]` is `M x n_real`; column `r` is the precoder BS `j` uses for
/// its UE `k` in realization `r`, with `||w|| = 1`.
#[derive(Debug, Clone)]
pub struct PrecoderBatch {
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub n_real: usize,
    pub precoder: Precoder,
    pub w: Vec<DMatrix<C64>>,
}

impl PrecoderBatch {
    pub fn of(&self, j: usize, k: usize) -> &DMatrix<C64> {
        &self.w[j * self.k + k]
    }
}

/// Interference-plus-error statistics `Z_j` for M-MMSE at BS `j`:
/// `sum_{l,i} (R_li^j - Phi_li^j) + (sigma^2 / rho_ul) I`.
fn mmse_regularizer(net: &NetworkRealization, est: &EstimateBatch, j: usize) -> DMatrix<C64> {
    let cfg = &net.config;
    let noise = cfg.noise_mw() / cfg.p_ul_mw();
    let mut z = DMatrix::<C64>::from_diagonal_element(cfg.m, cfg.m, C64::new(noise, 0.0));
    for l in 0..cfg.l {
        for i in 0..cfg.k {
            z += net.corr_of(l, i, j);
            z -= est.phi_of(l, i, j);
        }
    }
    z
}

/// Compute normalized precoders for all BSs and realizations.
///
/// MR uses the local estimate directly. M-MMSE solves, per BS and
/// realization, `(sum_{l,i} hhat hhat^H + Z_j) v = hhat_jk^j` with a single
/// Cholesky factorization shared by the K served UEs.
pub fn compute_precoders(
    net: &NetworkRealization,
    est: &EstimateBatch,
    precoder: Precoder,
) -> Result<PrecoderBatch> {
    let cfg = &net.config;
    if est.l != cfg.l || est.k != cfg.k || est.m != cfg.m {
        return Err(Error::Shape(
            "estimate batch does not match the network realization".into(),
        ));
    }
    let n_real = est.n_real;
    let mut w = vec![DMatrix::<C64>::zeros(cfg.m, n_real); cfg.l * cfg.k];

    match precoder {
        Precoder::Mr => {
            for j in 0..cfg.l {
                for k in 0..cfg.k {
                    let mut v = est.of(j, k, j).clone();
                    normalize_columns(&mut v, j, k)?;
                    w[j * cfg.k + k] = v;
                }
            }
        }
        Precoder::Mmse => {
            for j in 0..cfg.l {
                let z = mmse_regularizer(net, est, j);
                for r in 0..n_real {
                    let mut a = z.clone();
                    for l in 0..cfg.l {
                        for i in 0..cfg.k {
                            let col: DVector<C64> = est.of(l, i, j).column(r).into();
                            a.gerc(C64::new(1.0, 0.0), &col, &col, C64::new(1.0, 0.0));
                        }
                    }
                    let chol = Cholesky::new(a).ok_or_else(|| {
                        Error::Numeric(format!(
                            "M-MMSE system matrix not positive definite at BS {j}"
                        ))
                    })?;
                    for k in 0..cfg.k {
                        let rhs: DVector<C64> = est.of(j, k, j).column(r).into();
                        let v = chol.solve(&rhs);
                        w[j * cfg.k + k].set_column(r, &v);
                    }
                }
            }
            for j in 0..cfg.l {
                for k in 0..cfg.k {
                    let mut v = std::mem::replace(
                        &mut w[j * cfg.k + k],
                        DMatrix::zeros(0, 0),
                    );
                    normalize_columns(&mut v, j, k)?;
                    w[j * cfg.k + k] = v;
                }
            }
        }
    }

    Ok(PrecoderBatch {
        l: cfg.l,
        k: cfg.k,
        m: cfg.m,
        n_real,
        precoder,
        w,
    })
}

/// Scale every column to unit norm; a zero column means the estimate
/// degenerated and is reported as a numeric error.
fn normalize_columns(v: &mut DMatrix<C64>, j: usize, k: usize) -> Result<()> {
    for c in 0..v.ncols() {
        let norm = v.column(c).norm();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "degenerate precoder for UE ({j}, {k}): column norm {norm}"
            )));
        }
        v.column_mut(c).unscale_mut(norm);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{mmse_estimate, sample_channels};
    use crate::geometry::{drop_ues, CorrModel, NetworkConfig};

    fn setup(corr: CorrModel, m: usize, n_real: usize) -> (NetworkRealization, EstimateBatch) {
        let cfg = NetworkConfig {
            m,
            corr_model: corr,
            ..NetworkConfig::default()
        };
        let net = drop_ues(&cfg, 8).unwrap();
        let ch = sample_channels(&net, n_real, 9).unwrap();
        let est = mmse_estimate(&net, &ch, 10).unwrap();
        (net, est)
    }

    #[test]
    fn columns_have_unit_norm() {
        let (net, est) = setup(CorrModel::LocalScattering, 8, 5);
        for p in [Precoder::Mr, Precoder::Mmse] {
            let batch = compute_precoders(&net, &est, p).unwrap();
            for w in &batch.w {
                for c in 0..w.ncols() {
                    assert!((w.column(c).norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mr_is_collinear_with_estimate() {
        let (net, est) = setup(CorrModel::LocalScattering, 8, 4);
        let batch = compute_precoders(&net, &est, Precoder::Mr).unwrap();
        for j in 0..net.config.l {
            for k in 0..net.config.k {
                let w = batch.of(j, k);
                let h = est.of(j, k, j);
                for r in 0..4 {
                    let inner = (w.column(r).adjoint() * h.column(r))[(0, 0)];
                    assert!((inner.norm() - h.column(r).norm()).abs() < 1e-9);
                }
            }
        }
    }

    // With one cell, one UE, and identity correlation, the M-MMSE system
    // matrix is a rank-one update of a scaled identity, so its solution is
    // collinear with the estimate and both precoders coincide.
    #[test]
    fn mmse_reduces_to_mr_for_single_ue() {
        let cfg = NetworkConfig {
            l: 1,
            k: 1,
            tau_p: 1,
            m: 6,
            side_m: 250.0,
            corr_model: CorrModel::Identity,
            ..NetworkConfig::default()
        };
        let net = drop_ues(&cfg, 3).unwrap();
        let ch = sample_channels(&net, 6, 4).unwrap();
        let est = mmse_estimate(&net, &ch, 5).unwrap();
        let mr = compute_precoders(&net, &est, Precoder::Mr).unwrap();
        let mm = compute_precoders(&net, &est, Precoder::Mmse).unwrap();
        for r in 0..6 {
            let inner = (mr.of(0, 0).column(r).adjoint() * mm.of(0, 0).column(r))[(0, 0)];
            assert!((inner.norm() - 1.0).abs() < 1e-9);
        }
    }

    // Rotating an estimate by a global phase rotates the precoder the same
    // way, leaving every |w^H h| untouched.
    #[test]
    fn phase_rotation_invariance() {
        let (net, mut est) = setup(CorrModel::LocalScattering, 6, 3);
        let before = compute_precoders(&net, &est, Precoder::Mmse).unwrap();
        let phase = C64::new(0.0, 1.234).exp();
        let idx = est.triple_index(0, 0, 0);
        est.est[idx] *= phase;
        let after = compute_precoders(&net, &est, Precoder::Mmse).unwrap();
        for r in 0..3 {
            let a = before.of(0, 0).column(r).clone_owned();
            let b = after.of(0, 0).column(r).clone_owned();
            let inner = (a.adjoint() * &b)[(0, 0)].norm();
            assert!((inner - 1.0).abs() < 1e-9, "precoder direction changed");
        }
    }

    // M-MMSE trades a little signal gain for much lower leakage toward the
    // other UEs whose estimates the BS knows.
    #[test]
    fn mmse_suppresses_known_interference() {
        let (net, est) = setup(CorrModel::LocalScattering, 16, 40);
        let mr = compute_precoders(&net, &est, Precoder::Mr).unwrap();
        let mm = compute_precoders(&net, &est, Precoder::Mmse).unwrap();
        let cfg = &net.config;
        let mut leak_mr = 0.0;
        let mut leak_mm = 0.0;
        for j in 0..cfg.l {
            for k in 0..cfg.k {
                for l in 0..cfg.l {
                    for i in 0..cfg.k {
                        if (l, i) == (j, k) {
                            continue;
                        }
                        let h = est.of(l, i, j);
                        for r in 0..40 {
                            leak_mr +=
                                (mr.of(j, k).column(r).adjoint() * h.column(r))[(0, 0)].norm_sqr();
                            leak_mm +=
                                (mm.of(j, k).column(r).adjoint() * h.column(r))[(0, 0)].norm_sqr();
                        }
                    }
                }
            }
        }
        assert!(
            leak_mm < 0.5 * leak_mr,
            "expected M-MMSE leakage well below MR: {leak_mm} vs {leak_mr}"
        );
    }
}
