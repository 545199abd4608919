//! Hardening-bound gains, SINR, and spectral efficiency.
//!
//! Monte-Carlo averaging over small-scale fading collapses the network into
//! a [`GainTable`]: one coherent signal gain per served UE and one average
//! interference gain per (source, victim) pair. SINR and SE for any power
//! allocation are then closed-form in the table, which is what makes exact
//! power optimization tractable.

use nalgebra::DMatrix;

use crate::channel::ChannelBatch;
use crate::geometry::NetworkConfig;
use crate::precoding::PrecoderBatch;
use crate::{C64, Error, Result};

/// Monte-Carlo averaged signal and interference gains.
///
/// `a[j*K + k]` is the coherent beamforming gain of UE `(j, k)`.
/// `b[v * LK + s]` is the average interference gain at victim UE `v = j*K+k`
/// caused by the transmission for UE `s = l*K+i`; the diagonal holds the
/// self-interference from beamforming-gain uncertainty (second moment minus
/// squared mean, which Jensen keeps nonnegative).
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub l: usize,
    pub k: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Noise power (mW).
    pub sigma2: f64,
    /// DL data fraction tau_d / tau_c.
    pub prelog: f64,
    /// Realizations the averages were taken over.
    pub n_real: usize,
}

impl GainTable {
    /// Build a table from raw parts, checking every invariant.
    pub fn new(
        l: usize,
        k: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        sigma2: f64,
        prelog: f64,
        n_real: usize,
    ) -> Result<Self> {
        let lk = l * k;
        if a.len() != lk || b.len() != lk * lk {
            return Err(Error::Shape(format!(
                "gain table needs {lk} signal and {} interference entries",
                lk * lk
            )));
        }
        for (idx, &v) in a.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::DegenerateGain {
                    j: idx / k,
                    k: idx % k,
                });
            }
        }
        if b.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("interference gains must be >= 0".into()));
        }
        let sigma2_ok = sigma2 > 0.0; // NaN fails
        let prelog_ok = prelog > 0.0 && prelog <= 1.0;
        if !sigma2_ok || !prelog_ok {
            return Err(Error::Domain("need sigma2 > 0 and 0 < prelog <= 1".into()));
        }
        Ok(GainTable {
            l,
            k,
            a,
            b,
            sigma2,
            prelog,
            n_real,
        })
    }

    #[inline]
    pub fn lk(&self) -> usize {
        self.l * self.k
    }

    pub fn a_of(&self, j: usize, k: usize) -> f64 {
        self.a[j * self.k + k]
    }

    /// Interference gain at victim `(j, k)` from the stream of UE `(l, i)`.
    pub fn b_of(&self, j: usize, k: usize, l: usize, i: usize) -> f64 {
        self.b[(j * self.k + k) * self.lk() + (l * self.k + i)]
    }

    /// Serialize as CSV rows `a,j,k,value` / `b,j,k,l,i,value` after a
    /// one-line header; floats round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "gains,{},{},{},{},{}\n",
            self.l, self.k, self.n_real, self.sigma2, self.prelog
        ));
        for j in 0..self.l {
            for k in 0..self.k {
                s.push_str(&format!("a,{},{},{}\n", j, k, self.a_of(j, k)));
            }
        }
        for j in 0..self.l {
            for k in 0..self.k {
                for l in 0..self.l {
                    for i in 0..self.k {
                        s.push_str(&format!(
                            "b,{},{},{},{},{}\n",
                            j,
                            k,
                            l,
                            i,
                            self.b_of(j, k, l, i)
                        ));
                    }
                }
            }
        }
        s
    }

    /// Parse the format written by [`GainTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty gain CSV".into()))?;
        let h: Vec<&str> = header.split(',').collect();
        if h.len() != 6 || h[0] != "gains" {
            return Err(Error::Format("bad gain CSV header".into()));
        }
        let l: usize = crate::geometry::parse_num("L", h[1])?;
        let k: usize = crate::geometry::parse_num("K", h[2])?;
        let n_real: usize = crate::geometry::parse_num("n_real", h[3])?;
        let sigma2: f64 = crate::geometry::parse_num("sigma2", h[4])?;
        let prelog: f64 = crate::geometry::parse_num("prelog", h[5])?;
        let lk = l * k;
        let mut a = vec![f64::NAN; lk];
        let mut b = vec![f64::NAN; lk * lk];
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            match f[0] {
                "a" if f.len() == 4 => {
                    let j: usize = crate::geometry::parse_num("j", f[1])?;
                    let kk: usize = crate::geometry::parse_num("k", f[2])?;
                    a[j * k + kk] = crate::geometry::parse_num("value", f[3])?;
                }
                "b" if f.len() == 6 => {
                    let j: usize = crate::geometry::parse_num("j", f[1])?;
                    let kk: usize = crate::geometry::parse_num("k", f[2])?;
                    let ll: usize = crate::geometry::parse_num("l", f[3])?;
                    let i: usize = crate::geometry::parse_num("i", f[4])?;
                    b[(j * k + kk) * lk + ll * k + i] =
                        crate::geometry::parse_num("value", f[5])?;
                }
                _ => return Err(Error::Format(format!("bad gain CSV row `{line}`"))),
            }
        }
        GainTable::new(l, k, a, b, sigma2, prelog, n_real)
    }
}

/// Columnwise inner products `w_r^H h_r` for matching realizations.
fn column_inners(w: &DMatrix<C64>, h: &DMatrix<C64>) -> Vec<C64> {
    (0..w.ncols())
        .map(|r| {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..w.nrows() {
                acc += w[(m, r)].conj() * h[(m, r)];
            }
            acc
        })
        .collect()
}

/// Estimate the gain table by averaging over channel realizations.
///
/// For victim UE `(j, k)` and the stream of UE `(l, i)`:
///
/// ```text
/// a_jk            = |mean_r w_jk^H h_jk^j|^2
/// b (cross terms) = mean_r |w_li^H h_jk^l|^2
/// b (self term)   = mean_r |w_jk^H h_jk^j|^2 - a_jk
/// ```
pub fn estimate_gains(
    channels: &ChannelBatch,
    precoders: &PrecoderBatch,
    config: &NetworkConfig,
) -> Result<GainTable> {
    if channels.n_real < 2 {
        return Err(Error::Domain("gain averaging needs >= 2 realizations".into()));
    }
    if channels.l != precoders.l
        || channels.k != precoders.k
        || channels.m != precoders.m
        || channels.n_real != precoders.n_real
    {
        return Err(Error::Shape("channel and precoder batches disagree".into()));
    }
    let (l_cells, k_ues) = (channels.l, channels.k);
    let lk = l_cells * k_ues;
    let n = channels.n_real as f64;

    let mut a = vec![0.0; lk];
    let mut b = vec![0.0; lk * lk];

    for j in 0..l_cells {
        for k in 0..k_ues {
            let victim = j * k_ues + k;
            for l in 0..l_cells {
                // Channel from BS l to the victim, shared by all K streams of BS l.
                let h = channels.of(j, k, l);
                for i in 0..k_ues {
                    let source = l * k_ues + i;
                    let inners = column_inners(precoders.of(l, i), h);
                    let second: f64 = inners.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
                    if source == victim {
                        let mean = inners.iter().sum::<C64>() / C64::new(n, 0.0);
                        let coherent = mean.norm_sqr();
                        if coherent <= 0.0 {
                            return Err(Error::DegenerateGain { j, k });
                        }
                        a[victim] = coherent;
                        // Jensen guarantees nonnegativity; clamp roundoff.
                        b[victim * lk + source] = (second - coherent).max(0.0);
                    } else {
                        b[victim * lk + source] = second;
                    }
                }
            }
        }
    }

    GainTable::new(
        l_cells,
        k_ues,
        a,
        b,
        config.noise_mw(),
        config.prelog(),
        channels.n_real,
    )
}

/// SINR of UE `(j, k)` under the flat power vector `rho` (mW, indexed
/// `l*K + i`): `rho_jk a_jk / (sum_li rho_li b_lijk + sigma2)`.
pub fn sinr(g: &GainTable, rho: &[f64], j: usize, k: usize) -> f64 {
    let lk = g.lk();
    debug_assert_eq!(rho.len(), lk);
    let victim = j * g.k + k;
    let row = &g.b[victim * lk..(victim + 1) * lk];
    let denom = g.sigma2 + row.iter().zip(rho).map(|(b, r)| b * r).sum::<f64>();
    rho[victim] * g.a[victim] / denom
}

/// SINRs of all UEs in flat order.
pub fn sinr_all(g: &GainTable, rho: &[f64]) -> Vec<f64> {
    (0..g.l)
        .flat_map(|j| (0..g.k).map(move |k| (j, k)))
        .map(|(j, k)| sinr(g, rho, j, k))
        .collect()
}

/// Spectral efficiency from an SINR: `prelog * log2(1 + gamma)`.
pub fn se_per_ue(gamma: f64, g: &GainTable) -> f64 {
    debug_assert!(gamma >= 0.0);
    g.prelog * (1.0 + gamma).log2()
}

/// SEs of all UEs in flat order.
pub fn se_all(g: &GainTable, rho: &[f64]) -> Vec<f64> {
    sinr_all(g, rho)
        .into_iter()
        .map(|gamma| se_per_ue(gamma, g))
        .collect()
}


#[cfg(test)]
mod tests {
    use super::testutil::random_table;
    use super::*;
    use crate::precoding::Precoder;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_table() -> GainTable {
        GainTable::new(1, 1, vec![1.0], vec![0.5], 1.0, 0.975, 100).unwrap()
    }

    fn hand_batches(
        h: Vec<DMatrix<C64>>,
        w: Vec<DMatrix<C64>>,
        l: usize,
        k: usize,
        m: usize,
        n_real: usize,
    ) -> (ChannelBatch, PrecoderBatch) {
        (
            ChannelBatch {
                l,
                k,
                m,
                n_real,
                h,
            },
            PrecoderBatch {
                l,
                k,
                m,
                n_real,
                precoder: Precoder::Mr,
                w,
            },
        )
    }

    #[test]
    fn deterministic_channel_gives_unit_gain() {
        let m = 2;
        let n = 5;
        let col = nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let fixed = DMatrix::from_fn(m, n, |r, _| col[r]);
        let (ch, pre) = hand_batches(vec![fixed.clone()], vec![fixed], 1, 1, m, n);
        let g = estimate_gains(&ch, &pre, &NetworkConfig::default()).unwrap();
        assert!((g.a[0] - 1.0).abs() < 1e-12);
        assert_eq!(g.b[0], 0.0);
    }

    #[test]
    fn orthogonal_precoder_is_degenerate() {
        let m = 2;
        let n = 3;
        let h = DMatrix::from_fn(m, n, |r, _| C64::new(if r == 0 { 1.0 } else { 0.0 }, 0.0));
        let w = DMatrix::from_fn(m, n, |r, _| C64::new(if r == 1 { 1.0 } else { 0.0 }, 0.0));
        let (ch, pre) = hand_batches(vec![h], vec![w], 1, 1, m, n);
        let err = estimate_gains(&ch, &pre, &NetworkConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateGain { j: 0, k: 0 }));
    }

    // M = 1, h ~ CN(0,1), w = h/|h|: a = (E|h|)^2 = pi/4 and the
    // self-interference is 1 - pi/4.
    #[test]
    fn rayleigh_quarter_pi_gain() {
        let n = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let mut h = DMatrix::zeros(1, n);
        let mut w = DMatrix::zeros(1, n);
        for r in 0..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let z = C64::new(re * 0.5f64.sqrt(), im * 0.5f64.sqrt());
            h[(0, r)] = z;
            w[(0, r)] = z / z.norm();
        }
        let (ch, pre) = hand_batches(vec![h], vec![w], 1, 1, 1, n);
        let g = estimate_gains(&ch, &pre, &NetworkConfig::default()).unwrap();
        let quarter_pi = std::f64::consts::FRAC_PI_4;
        assert!(
            (g.a[0] - quarter_pi).abs() < 0.02 * quarter_pi,
            "a = {} vs pi/4",
            g.a[0]
        );
        let expect_self = 1.0 - quarter_pi;
        assert!(
            (g.b[0] - expect_self).abs() < 0.05 * expect_self,
            "b_self = {} vs 1 - pi/4",
            g.b[0]
        );
    }

    #[test]
    fn too_few_realizations_rejected() {
        let h = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let (ch, pre) = hand_batches(vec![h.clone()], vec![h], 1, 1, 1, 1);
        assert!(matches!(
            estimate_gains(&ch, &pre, &NetworkConfig::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sinr_examples() {
        let g = unit_table();
        assert_eq!(sinr(&g, &[0.0], 0, 0), 0.0);
        // a=1, self b=0.5, rho=2, sigma2=1 -> 2/(1+1) = 1
        assert!((sinr(&g, &[2.0], 0, 0) - 1.0).abs() < 1e-12);
        // interference-free single UE
        let free = GainTable::new(1, 1, vec![2.0], vec![0.0], 0.5, 1.0, 2).unwrap();
        assert!((sinr(&free, &[3.0], 0, 0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn se_examples() {
        let g = unit_table();
        assert_eq!(se_per_ue(0.0, &g), 0.0);
        assert!((se_per_ue(1.0, &g) - 0.975).abs() < 1e-12);
        let unit_prelog = GainTable::new(1, 1, vec![1.0], vec![0.0], 1.0, 1.0, 2).unwrap();
        assert!((se_per_ue(3.0, &unit_prelog) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_scale_invariance() {
        let g = random_table(4, 3, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let rho: Vec<f64> = (0..g.lk()).map(|_| rng.gen::<f64>() * 10.0).collect();
        let before = sinr_all(&g, &rho);
        let c = 7.5;
        let scaled_rho: Vec<f64> = rho.iter().map(|r| r * c).collect();
        let mut g2 = g.clone();
        g2.sigma2 *= c;
        let after = sinr_all(&g2, &scaled_rho);
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-12 * x.max(1e-300));
        }
    }

    #[test]
    fn sinr_monotonicity() {
        let g = random_table(1, 4, 9);
        let rho = vec![1.0; 4];
        let base = sinr(&g, &rho, 0, 0);
        let mut up = rho.clone();
        up[0] = 2.0;
        assert!(sinr(&g, &up, 0, 0) > base);
        let mut other = rho.clone();
        other[3] = 5.0;
        assert!(sinr(&g, &other, 0, 0) <= base);
    }

    #[test]
    fn csv_round_trip() {
        let g = random_table(4, 5, 31);
        let parsed = GainTable::from_csv(&g.to_csv()).unwrap();
        assert_eq!(g, parsed);
    }

    #[test]
    fn pipeline_table_is_sane() {
        use crate::channel::{mmse_estimate, sample_channels};
        use crate::geometry::drop_ues;
        let cfg = NetworkConfig {
            m: 8,
            ..NetworkConfig::default()
        };
        let net = drop_ues(&cfg, 1).unwrap();
        let ch = sample_channels(&net, 50, 2).unwrap();
        let est = mmse_estimate(&net, &ch, 3).unwrap();
        for p in [Precoder::Mr, Precoder::Mmse] {
            let pre = crate::precoding::compute_precoders(&net, &est, p).unwrap();
            let g = estimate_gains(&ch, &pre, &cfg).unwrap();
            assert!(g.a.iter().all(|&v| v > 0.0 && v.is_finite()));
            assert!(g.b.iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert_eq!(g.prelog, 0.975);
        }
    }
}
