//! Network layout, UE drops, pathloss, and spatial correlation.
//!
//! The network is a square torus tiled by `L` equal square cells (L must be a
//! perfect square; the reference scenario is a 2x2 grid). Each cell has one
//! BS at its center and `K` uniformly dropped UEs. Distances are measured
//! with wrap-around over the 9 toroidal images so the layout has no edge
//! effects. Large-scale gains follow a log-distance pathloss law and every
//! BS-UE pair gets an `M x M` Hermitian PSD spatial correlation matrix,
//! either scaled-identity or a Gaussian local-scattering model for a
//! half-wavelength ULA.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{C64, Error, Result};

/// Spatial correlation model for BS antenna arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrModel {
    /// `R = beta * I`: uncorrelated antennas.
    Identity,
    /// Gaussian local scattering around the UE azimuth for a ULA.
    LocalScattering,
}

impl std::fmt::Display for CorrModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrModel::Identity => write!(f, "identity"),
            CorrModel::LocalScattering => write!(f, "local-scattering"),
        }
    }
}

impl std::str::FromStr for CorrModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CorrModel::Identity),
            "local-scattering" => Ok(CorrModel::LocalScattering),
            other => Err(Error::Format(format!("unknown corr_model `{other}`"))),
        }
    }
}

/// A position in the network plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// All scenario constants for one network.
///
/// Powers are stored in dB/dBm as configured; use the `*_mw` accessors for
/// linear values.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Number of cells (must be a perfect square).
    pub l: usize,
    /// UEs per cell.
    pub k: usize,
    /// BS antennas.
    pub m: usize,
    /// Side of the full network square (m).
    pub side_m: f64,
    /// Side of one cell square (m).
    pub cell_side_m: f64,
    /// Minimum BS-UE distance enforced when dropping UEs (m).
    pub min_dist_m: f64,
    /// Median channel gain at 1 km (dB).
    pub upsilon_db: f64,
    /// Pathloss exponent.
    pub alpha: f64,
    /// Receiver noise power (dBm).
    pub noise_dbm: f64,
    /// UL transmit power per UE (dBm).
    pub p_ul_dbm: f64,
    /// Per-BS DL power budget (dBm).
    pub p_dl_max_dbm: f64,
    /// Samples per coherence block.
    pub tau_c: usize,
    /// Pilot sequence length (pilot reuse 1 requires `tau_p == k`).
    pub tau_p: usize,
    /// Angular standard deviation of local scattering (degrees).
    pub asd_deg: f64,
    /// Correlation model.
    pub corr_model: CorrModel,
    /// Antenna spacing in wavelengths.
    pub wavelength_spacing: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            l: 4,
            k: 5,
            m: 100,
            side_m: 500.0,
            cell_side_m: 250.0,
            min_dist_m: 35.0,
            upsilon_db: -148.0,
            alpha: 3.76,
            noise_dbm: -94.0,
            p_ul_dbm: 20.0,
            p_dl_max_dbm: 30.0,
            tau_c: 200,
            tau_p: 5,
            asd_deg: 10.0,
            corr_model: CorrModel::LocalScattering,
            wavelength_spacing: 0.5,
        }
    }
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl NetworkConfig {
    /// Cells per grid row/column; `l` must equal `grid_dim^2`.
    pub fn grid_dim(&self) -> usize {
        (self.l as f64).sqrt().round() as usize
    }

    /// Receiver noise power in mW.
    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }

    /// UL transmit power per UE in mW.
    pub fn p_ul_mw(&self) -> f64 {
        dbm_to_mw(self.p_ul_dbm)
    }

    /// Per-BS DL budget in mW.
    pub fn p_dl_max_mw(&self) -> f64 {
        dbm_to_mw(self.p_dl_max_dbm)
    }

    /// Effective pilot noise variance `sigma^2 / (tau_p * rho)`.
    pub fn pilot_noise_var(&self) -> f64 {
        self.noise_mw() / (self.tau_p as f64 * self.p_ul_mw())
    }

    /// DL data fraction of the coherence block, `tau_d / tau_c` with
    /// `tau_d = tau_c - tau_p`.
    pub fn prelog(&self) -> f64 {
        (self.tau_c - self.tau_p) as f64 / self.tau_c as f64
    }

    /// BS positions: the centers of the cell squares, row-major.
    pub fn bs_positions(&self) -> Vec<Point> {
        let g = self.grid_dim();
        let mut out = Vec::with_capacity(self.l);
        for cell in 0..self.l {
            let col = cell % g;
            let row = cell / g;
            out.push(Point::new(
                (col as f64 + 0.5) * self.cell_side_m,
                (row as f64 + 0.5) * self.cell_side_m,
            ));
        }
        out
    }

    /// Lower-left corner of cell `l`.
    pub fn cell_origin(&self, cell: usize) -> Point {
        let g = self.grid_dim();
        Point::new(
            (cell % g) as f64 * self.cell_side_m,
            (cell / g) as f64 * self.cell_side_m,
        )
    }

    /// Validate all invariants; returns the config on success.
    pub fn validate(&self) -> Result<()> {
        if self.l < 1 || self.k < 1 || self.m < 1 {
            return Err(Error::Config("L, K, M must all be >= 1".into()));
        }
        let g = self.grid_dim();
        if g * g != self.l {
            return Err(Error::Config(format!(
                "L = {} is not a perfect square; cells tile a square grid",
                self.l
            )));
        }
        let expect_side = g as f64 * self.cell_side_m;
        if (self.side_m - expect_side).abs() > 1e-9 * expect_side.max(1.0) {
            return Err(Error::Config(format!(
                "side_m = {} but grid_dim * cell_side_m = {}",
                self.side_m, expect_side
            )));
        }
        if self.tau_p != self.k {
            return Err(Error::Config(format!(
                "pilot reuse 1 requires tau_p = K (got tau_p = {}, K = {})",
                self.tau_p, self.k
            )));
        }
        if self.tau_p >= self.tau_c {
            return Err(Error::Config(format!(
                "tau_p = {} must be < tau_c = {}",
                self.tau_p, self.tau_c
            )));
        }
        if self.min_dist_m < 0.0 {
            return Err(Error::Config("min_dist_m must be >= 0".into()));
        }
        // UEs live in their own cell, so the farthest point from the BS is a
        // cell corner at cell_side / sqrt(2).
        let corner = self.cell_side_m * std::f64::consts::FRAC_1_SQRT_2;
        if self.min_dist_m >= corner {
            return Err(Error::Config(format!(
                "min_dist_m = {} leaves no valid drop area in a {} m cell",
                self.min_dist_m, self.cell_side_m
            )));
        }
        if self.cell_side_m <= 0.0 || self.side_m <= 0.0 {
            return Err(Error::Config("cell and network sides must be > 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("pathloss exponent must be > 0".into()));
        }
        if self.wavelength_spacing <= 0.0 {
            return Err(Error::Config("wavelength_spacing must be > 0".into()));
        }
        if self.asd_deg < 0.0 {
            return Err(Error::Config("asd_deg must be >= 0".into()));
        }
        Ok(())
    }

    /// Serialize as a flat `key = value` text block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("L = {}\n", self.l));
        s.push_str(&format!("K = {}\n", self.k));
        s.push_str(&format!("M = {}\n", self.m));
        s.push_str(&format!("side_m = {}\n", self.side_m));
        s.push_str(&format!("cell_side_m = {}\n", self.cell_side_m));
        s.push_str(&format!("min_dist_m = {}\n", self.min_dist_m));
        s.push_str(&format!("upsilon_db = {}\n", self.upsilon_db));
        s.push_str(&format!("alpha = {}\n", self.alpha));
        s.push_str(&format!("noise_dbm = {}\n", self.noise_dbm));
        s.push_str(&format!("p_ul_dbm = {}\n", self.p_ul_dbm));
        s.push_str(&format!("p_dl_max_dbm = {}\n", self.p_dl_max_dbm));
        s.push_str(&format!("tau_c = {}\n", self.tau_c));
        s.push_str(&format!("tau_p = {}\n", self.tau_p));
        s.push_str(&format!("asd_deg = {}\n", self.asd_deg));
        s.push_str(&format!("corr_model = {}\n", self.corr_model));
        s.push_str(&format!("wavelength_spacing = {}\n", self.wavelength_spacing));
        s
    }

    /// Parse a flat `key = value` block. Unknown keys are ignored so the
    /// same file can carry solver and training settings.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        let mut saw_k = false;
        let mut saw_tau_p = false;
        for (entry, value) in parse_kv_lines(text)? {
            match entry.as_str() {
                "L" => cfg.l = parse_num(&entry, &value)?,
                "K" => {
                    cfg.k = parse_num(&entry, &value)?;
                    saw_k = true;
                }
                "M" => cfg.m = parse_num(&entry, &value)?,
                "side_m" => cfg.side_m = parse_num(&entry, &value)?,
                "cell_side_m" => cfg.cell_side_m = parse_num(&entry, &value)?,
                "min_dist_m" => cfg.min_dist_m = parse_num(&entry, &value)?,
                "upsilon_db" => cfg.upsilon_db = parse_num(&entry, &value)?,
                "alpha" => cfg.alpha = parse_num(&entry, &value)?,
                "noise_dbm" => cfg.noise_dbm = parse_num(&entry, &value)?,
                "p_ul_dbm" => cfg.p_ul_dbm = parse_num(&entry, &value)?,
                "p_dl_max_dbm" => cfg.p_dl_max_dbm = parse_num(&entry, &value)?,
                "tau_c" => cfg.tau_c = parse_num(&entry, &value)?,
                "tau_p" => {
                    cfg.tau_p = parse_num(&entry, &value)?;
                    saw_tau_p = true;
                }
                "asd_deg" => cfg.asd_deg = parse_num(&entry, &value)?,
                "corr_model" => cfg.corr_model = value.parse()?,
                "wavelength_spacing" => cfg.wavelength_spacing = parse_num(&entry, &value)?,
                _ => {}
            }
        }
        if saw_k && !saw_tau_p {
            cfg.tau_p = cfg.k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Split `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("invalid value `{value}` for key `{key}`")))
}

/// One UE drop with all macroscopic propagation quantities.
///
/// Index conventions: UE `(l, i)` is UE `i` of cell `l` with flat index
/// `l * K + i`; the triple `(l, i, j)` refers to that UE as seen from BS `j`
/// with flat index `(l * K + i) * L + j`.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub config: NetworkConfig,
    /// UE positions, flat-indexed by `l * K + i`.
    pub positions: Vec<Point>,
    /// BS positions, indexed by cell.
    pub bs_positions: Vec<Point>,
    /// Wrap-around distances d_li^j, indexed by `(l * K + i) * L + j`.
    pub distances: Vec<f64>,
    /// Large-scale gains beta_li^j (linear), same indexing.
    pub beta: Vec<f64>,
    /// Spatial correlation matrices R_li^j, same indexing.
    pub corr: Vec<DMatrix<C64>>,
}

impl NetworkRealization {
    #[inline]
    pub fn ue_index(&self, l: usize, i: usize) -> usize {
        l * self.config.k + i
    }

    #[inline]
    pub fn triple_index(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.config.k + i) * self.config.l + j
    }

    pub fn beta_of(&self, l: usize, i: usize, j: usize) -> f64 {
        self.beta[self.triple_index(l, i, j)]
    }

    pub fn dist_of(&self, l: usize, i: usize, j: usize) -> f64 {
        self.distances[self.triple_index(l, i, j)]
    }

    pub fn corr_of(&self, l: usize, i: usize, j: usize) -> &DMatrix<C64> {
        &self.corr[self.triple_index(l, i, j)]
    }
}

/// Minimum Euclidean distance over the 9 toroidal images of `q`.
pub fn wrap_distance(p: Point, q: Point, side_m: f64) -> f64 {
    let (dx, dy) = wrap_displacement(p, q, side_m);
    (dx * dx + dy * dy).sqrt()
}

/// Displacement `q_image - p` for the toroidal image of `q` closest to `p`.
pub fn wrap_displacement(p: Point, q: Point, side_m: f64) -> (f64, f64) {
    debug_assert!(side_m > 0.0);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for sx in [-1.0, 0.0, 1.0] {
        for sy in [-1.0, 0.0, 1.0] {
            let dx = q.x + sx * side_m - p.x;
            let dy = q.y + sy * side_m - p.y;
            let d2 = dx * dx + dy * dy;
            if d2 < best.0 {
                best = (d2, dx, dy);
            }
        }
    }
    (best.1, best.2)
}

/// Log-distance pathloss `upsilon_db - 10 * alpha * log10(d / 1 km)` in dB.
pub fn pathloss_db(d_m: f64, config: &NetworkConfig) -> Result<f64> {
    if d_m <= 0.0 {
        return Err(Error::Domain(format!(
            "pathloss needs distance > 0, got {d_m}"
        )));
    }
    Ok(config.upsilon_db - 10.0 * config.alpha * (d_m / 1000.0).log10())
}

/// Spatial correlation matrix for one BS-UE pair.
///
/// Scaled identity gives `beta * I_M`. The local-scattering model for a ULA
/// with spacing `Delta` wavelengths and Gaussian angular spread `sigma_phi`
/// (radians) around azimuth `theta` has entries
///
/// ```text
/// R[m][n] = beta * exp(i 2 pi Delta (m - n) sin(theta))
///                * exp(-(sigma_phi 2 pi Delta (m - n) cos(theta))^2 / 2)
/// ```
///
/// which is Hermitian Toeplitz with trace `M * beta`.
pub fn correlation_matrix(beta: f64, azimuth_rad: f64, config: &NetworkConfig) -> DMatrix<C64> {
    debug_assert!(beta > 0.0, "correlation model needs beta > 0");
    let m = config.m;
    match config.corr_model {
        CorrModel::Identity => DMatrix::from_diagonal_element(m, m, C64::new(beta, 0.0)),
        CorrModel::LocalScattering => {
            let sigma_phi = config.asd_deg.to_radians();
            let two_pi_delta = 2.0 * std::f64::consts::PI * config.wavelength_spacing;
            let sin_t = azimuth_rad.sin();
            let cos_t = azimuth_rad.cos();
            // First column as a function of antenna lag; the matrix is Toeplitz.
            let lags: Vec<C64> = (0..m)
                .map(|lag| {
                    let x = lag as f64 * two_pi_delta;
                    let phase = x * sin_t;
                    let damp = (-(sigma_phi * x * cos_t).powi(2) / 2.0).exp();
                    C64::new(phase.cos(), phase.sin()) * (beta * damp)
                })
                .collect();
            DMatrix::from_fn(m, m, |r, c| {
                if r >= c {
                    lags[r - c]
                } else {
                    lags[c - r].conj()
                }
            })
        }
    }
}

/// Drop `K` UEs uniformly in every cell and compute distances, large-scale
/// gains, and correlation matrices for all BS-UE pairs.
///
/// Positions are rejection-sampled until the wrap-around distance to the
/// serving BS is at least `min_dist_m`. Deterministic given `seed`.
pub fn drop_ues(config: &NetworkConfig, seed: u64) -> Result<NetworkRealization> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bs_positions = config.bs_positions();
    let lk = config.l * config.k;

    let mut positions = Vec::with_capacity(lk);
    for (cell, &bs) in bs_positions.iter().enumerate() {
        let origin = config.cell_origin(cell);
        for _ in 0..config.k {
            let mut placed = false;
            for _ in 0..1_000_000u32 {
                let p = Point::new(
                    origin.x + rng.gen::<f64>() * config.cell_side_m,
                    origin.y + rng.gen::<f64>() * config.cell_side_m,
                );
                if wrap_distance(bs, p, config.side_m) >= config.min_dist_m {
                    positions.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Config(format!(
                    "could not place a UE at >= {} m from the BS of cell {cell}",
                    config.min_dist_m
                )));
            }
        }
    }

    let mut distances = Vec::with_capacity(lk * config.l);
    let mut beta = Vec::with_capacity(lk * config.l);
    let mut corr = Vec::with_capacity(lk * config.l);
    for &ue in &positions {
        for &bs in &bs_positions {
            let (dx, dy) = wrap_displacement(bs, ue, config.side_m);
            let d = (dx * dx + dy * dy).sqrt();
            let b = 10f64.powf(pathloss_db(d, config)? / 10.0);
            let azimuth = dy.atan2(dx);
            distances.push(d);
            beta.push(b);
            corr.push(correlation_matrix(b, azimuth, config));
        }
    }

    Ok(NetworkRealization {
        config: config.clone(),
        positions,
        bs_positions,
        distances,
        beta,
        corr,
    })
}
