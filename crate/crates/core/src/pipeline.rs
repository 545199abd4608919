//! End-to-end orchestration: dataset generation, solver labeling, per-cell
//! training, and CDF evaluation.
//!
//! Each sample is an independent UE drop labeled by the exact solvers. The
//! dataset file is self-describing (text header echoing the network
//! configuration, then fixed-width binary records) and is written in sample
//! id order, so parallel and serial runs — and interrupted runs resumed
//! later — produce byte-identical files. All randomness flows from a master
//! seed through per-sample derived seeds.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::channel::{mmse_estimate, sample_channels};
use crate::geometry::{drop_ues, NetworkConfig, NetworkRealization};
use crate::nn::{self, Dataset, MlpModel, Normalizer, TrainConfig};
use crate::power::{solve, SolverOptions, Strategy};
use crate::precoding::{compute_precoders, Precoder};
use crate::se::{estimate_gains, se_all, sinr_all, GainTable};
use crate::{Error, Result};

const DATASET_MAGIC: &[u8; 8] = b"DLPSET1\n";
const GAINS_MAGIC: &[u8; 8] = b"DLPGNS1\n";
const CHANNEL_SALT: u64 = 1;
const ESTIMATE_SALT: u64 = 2;
const MODEL_SALT: u64 = 1_000;

/// SplitMix64-style mixing of a master seed and a stream index; used for
/// per-sample seeds and their channel/estimation sub-seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ── Generation options and outcomes ──

/// Knobs for dataset generation.
#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Small-scale fading realizations per sample.
    pub n_real: usize,
    /// (strategy, precoder) pairs to label, in record order.
    pub pairs: Vec<(Strategy, Precoder)>,
    pub solver: SolverOptions,
    /// Also write a `.gains` sidecar so evaluation can skip the Monte-Carlo
    /// recomputation.
    pub cache_gains: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            n_real: 100,
            pairs: vec![
                (Strategy::MaxProd, Precoder::Mmse),
                (Strategy::MaxProd, Precoder::Mr),
                (Strategy::MaxMin, Precoder::Mmse),
                (Strategy::MaxMin, Precoder::Mr),
            ],
            solver: SolverOptions::default(),
            cache_gains: false,
        }
    }
}

impl GenOptions {
    /// Precoders appearing in `pairs`, in first-appearance order; gains are
    /// computed (and cached) once per precoder, not once per pair.
    pub fn distinct_precoders(&self) -> Vec<Precoder> {
        let mut out = Vec::new();
        for &(_, p) in &self.pairs {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

/// One solver labeling of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSet {
    pub strategy: Strategy,
    pub precoder: Precoder,
    /// Optimal DL powers (mW), flat-indexed `j*K + k`.
    pub rho: Vec<f64>,
    pub objective: f64,
    pub iterations: u64,
    pub converged: bool,
}

/// One dataset row: an id, its seed, the raw UE positions, and the solver
/// labels for every configured (strategy, precoder) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub seed: u64,
    /// `[x, y]` per UE in flat `l*K + i` order (m).
    pub positions: Vec<f64>,
    pub powers: Vec<PowerSet>,
}

/// Everything computed for one sample, including the gain tables (which the
/// dataset file does not store unless caching is on).
#[derive(Debug)]
pub struct SampleOutcome {
    pub seed: u64,
    pub positions: Vec<f64>,
    pub powers: Vec<PowerSet>,
    /// One table per distinct precoder, in `GenOptions::distinct_precoders`
    /// order.
    pub gains: Vec<(Precoder, GainTable)>,
}

/// Drop UEs, sample channels, estimate, precode, average gains, and solve
/// every configured pair. Fully determined by `sample_seed`.
pub fn sample_instance(
    config: &NetworkConfig,
    opts: &GenOptions,
    sample_seed: u64,
) -> Result<SampleOutcome> {
    let net = drop_ues(config, sample_seed)?;
    let channels = sample_channels(&net, opts.n_real, derive_seed(sample_seed, CHANNEL_SALT))?;
    let estimates = mmse_estimate(&net, &channels, derive_seed(sample_seed, ESTIMATE_SALT))?;
    let mut gains = Vec::new();
    for precoder in opts.distinct_precoders() {
        let w = compute_precoders(&net, &estimates, precoder)?;
        gains.push((precoder, estimate_gains(&channels, &w, config)?));
    }
    let p_max = config.p_dl_max_mw();
    let mut powers = Vec::with_capacity(opts.pairs.len());
    for &(strategy, precoder) in &opts.pairs {
        let table = &gains.iter().find(|(p, _)| *p == precoder).unwrap().1;
        let alloc = solve(table, strategy, p_max, &opts.solver)?;
        if !alloc.is_budget_feasible(config.l, config.k, p_max) {
            return Err(Error::Solver(format!(
                "{strategy} allocation violates a cell budget"
            )));
        }
        powers.push(PowerSet {
            strategy,
            precoder,
            rho: alloc.rho,
            objective: alloc.objective,
            iterations: alloc.iterations as u64,
            converged: alloc.converged,
        });
    }
    let positions = net.positions.iter().flat_map(|p| [p.x, p.y]).collect();
    Ok(SampleOutcome {
        seed: sample_seed,
        positions,
        powers,
        gains,
    })
}

// ── Dataset header and file format ──

/// Parsed self-describing header of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub master_seed: u64,
    pub n_real: usize,
    pub pairs: Vec<(Strategy, Precoder)>,
    pub config: NetworkConfig,
}

impl DatasetHeader {
    pub fn new(config: &NetworkConfig, opts: &GenOptions, master_seed: u64) -> Self {
        DatasetHeader {
            version: 1,
            master_seed,
            n_real: opts.n_real,
            pairs: opts.pairs.clone(),
            config: config.clone(),
        }
    }

    pub fn distinct_precoders(&self) -> Vec<Precoder> {
        let mut out = Vec::new();
        for &(_, p) in &self.pairs {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Record width in bytes: id + seed + positions + per-pair payload.
    pub fn record_len(&self) -> usize {
        let lk = self.config.l * self.config.k;
        16 + 16 * lk + self.pairs.len() * (8 * lk + 24)
    }

    pub fn to_text(&self) -> String {
        let pairs = self
            .pairs
            .iter()
            .map(|(s, p)| format!("{s}:{p}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "version = {}\nmaster_seed = {}\nn_real = {}\npairs = {}\n\
             # record: u64 id, u64 seed, f64 positions[2KL],\n\
             # then per pair: f64 rho[LK], f64 objective, u64 iterations, u64 converged\n\n{}",
            self.version,
            self.master_seed,
            self.n_real,
            pairs,
            self.config.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        use crate::geometry::{parse_kv_lines, parse_num};
        let mut version = None;
        let mut master_seed = None;
        let mut n_real = None;
        let mut pairs = None;
        for (key, value) in parse_kv_lines(text)? {
            match key.as_str() {
                "version" => version = Some(parse_num::<u32>(&key, &value)?),
                "master_seed" => master_seed = Some(parse_num::<u64>(&key, &value)?),
                "n_real" => n_real = Some(parse_num::<usize>(&key, &value)?),
                "pairs" => pairs = Some(pairs_from_text(&value)?),
                _ => {}
            }
        }
        let version = version.ok_or_else(|| Error::Format("header missing version".into()))?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        Ok(DatasetHeader {
            version,
            master_seed: master_seed
                .ok_or_else(|| Error::Format("header missing master_seed".into()))?,
            n_real: n_real.ok_or_else(|| Error::Format("header missing n_real".into()))?,
            pairs: pairs.ok_or_else(|| Error::Format("header missing pairs".into()))?,
            config: NetworkConfig::from_text(text)?,
        })
    }
}

fn pairs_from_text(value: &str) -> Result<Vec<(Strategy, Precoder)>> {
    let mut out = Vec::new();
    for token in value.split_whitespace() {
        let (s, p) = token
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad pair token '{token}'")))?;
        out.push((Strategy::from_str(s)?, Precoder::from_str(p)?));
    }
    if out.is_empty() {
        return Err(Error::Format("pairs list is empty".into()));
    }
    Ok(out)
}

fn write_record<W: Write>(w: &mut W, rec: &SampleRecord) -> Result<()> {
    w.write_all(&rec.id.to_le_bytes())?;
    w.write_all(&rec.seed.to_le_bytes())?;
    for v in &rec.positions {
        w.write_all(&v.to_le_bytes())?;
    }
    for ps in &rec.powers {
        for v in &ps.rho {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&ps.objective.to_le_bytes())?;
        w.write_all(&ps.iterations.to_le_bytes())?;
        w.write_all(&(ps.converged as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_record<R: Read>(r: &mut R, header: &DatasetHeader) -> Result<SampleRecord> {
    let lk = header.config.l * header.config.k;
    let mut u = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u)?;
        Ok(u64::from_le_bytes(u))
    };
    let id = next_u64(r)?;
    let seed = next_u64(r)?;
    let mut positions = Vec::with_capacity(2 * lk);
    for _ in 0..2 * lk {
        positions.push(f64::from_bits(next_u64(r)?));
    }
    let mut powers = Vec::with_capacity(header.pairs.len());
    for &(strategy, precoder) in &header.pairs {
        let mut rho = Vec::with_capacity(lk);
        for _ in 0..lk {
            rho.push(f64::from_bits(next_u64(r)?));
        }
        let objective = f64::from_bits(next_u64(r)?);
        let iterations = next_u64(r)?;
        let converged = next_u64(r)? != 0;
        powers.push(PowerSet {
            strategy,
            precoder,
            rho,
            objective,
            iterations,
            converged,
        });
    }
    Ok(SampleRecord {
        id,
        seed,
        positions,
        powers,
    })
}

/// An in-memory dataset: header plus all records in id order.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<SampleRecord>,
}

impl DatasetFile {
    /// Records whose id lies in `[range.0, range.1)`.
    pub fn records_in(&self, range: (u64, u64)) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| r.id >= range.0 && r.id < range.1)
            .collect()
    }

    pub fn pair_index(&self, strategy: Strategy, precoder: Precoder) -> Result<usize> {
        self.header
            .pairs
            .iter()
            .position(|&p| p == (strategy, precoder))
            .ok_or_else(|| {
                Error::Config(format!("dataset carries no {strategy}:{precoder} labels"))
            })
    }
}

/// Read magic, header length, and header text; leaves the reader at the
/// first record.
fn read_file_header<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<String> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format("unrecognized file magic".into()));
    }
    let mut lenb = [0u8; 8];
    r.read_exact(&mut lenb)?;
    let len = u64::from_le_bytes(lenb) as usize;
    if len > 16 * 1024 * 1024 {
        return Err(Error::Format("implausible header size".into()));
    }
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    String::from_utf8(text).map_err(|_| Error::Format("header is not UTF-8".into()))
}

fn write_file_header<W: Write>(w: &mut W, magic: &[u8; 8], text: &str) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

/// Load a whole dataset file.
pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let mut r = BufReader::new(File::open(path)?);
    let text = read_file_header(&mut r, DATASET_MAGIC)?;
    let header = DatasetHeader::from_text(&text)?;
    let mut records = Vec::new();
    let rec_len = header.record_len() as u64;
    let data_len = std::fs::metadata(path)?.len() - (16 + text.len() as u64);
    for _ in 0..data_len / rec_len {
        records.push(read_record(&mut r, &header)?);
    }
    Ok(DatasetFile { header, records })
}

/// Export records as CSV (id, seed, positions, then per-pair powers and
/// solver metadata) for interoperability.
pub fn dataset_to_csv<W: Write>(ds: &DatasetFile, w: &mut W) -> Result<()> {
    let lk = ds.header.config.l * ds.header.config.k;
    let mut cols = vec!["id".to_string(), "seed".to_string()];
    for ue in 0..lk {
        cols.push(format!("x_{ue}"));
        cols.push(format!("y_{ue}"));
    }
    for (s, p) in &ds.header.pairs {
        for ue in 0..lk {
            cols.push(format!("{s}_{p}_rho_{ue}"));
        }
        cols.push(format!("{s}_{p}_objective"));
        cols.push(format!("{s}_{p}_iterations"));
        cols.push(format!("{s}_{p}_converged"));
    }
    writeln!(w, "{}", cols.join(","))?;
    for rec in &ds.records {
        let mut row = vec![rec.id.to_string(), rec.seed.to_string()];
        row.extend(rec.positions.iter().map(|v| v.to_string()));
        for ps in &rec.powers {
            row.extend(ps.rho.iter().map(|v| v.to_string()));
            row.push(ps.objective.to_string());
            row.push(ps.iterations.to_string());
            row.push((ps.converged as u8).to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

// ── Gain-table sidecar cache ──

fn gains_cache_path(dataset_path: &Path) -> PathBuf {
    let mut os = dataset_path.as_os_str().to_owned();
    os.push(".gains");
    PathBuf::from(os)
}

fn gains_record_len(header: &DatasetHeader) -> usize {
    let lk = header.config.l * header.config.k;
    let n_prec = header.distinct_precoders().len();
    8 + n_prec * (lk + lk * lk) * 8
}

fn write_gains_record<W: Write>(
    w: &mut W,
    id: u64,
    gains: &[(Precoder, GainTable)],
) -> Result<()> {
    w.write_all(&id.to_le_bytes())?;
    for (_, g) in gains {
        for v in g.a.iter().chain(g.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load cached gain tables for ids in `[range.0, range.1)`, keyed by sample
/// id; tables per id follow the header's distinct-precoder order.
pub fn load_gain_cache(
    dataset_path: &Path,
    header: &DatasetHeader,
    range: (u64, u64),
) -> Result<HashMap<u64, Vec<GainTable>>> {
    let path = gains_cache_path(dataset_path);
    let mut r = BufReader::new(File::open(&path)?);
    let text = read_file_header(&mut r, GAINS_MAGIC)?;
    if text != header.to_text() {
        return Err(Error::Format(
            "gain cache header does not match the dataset".into(),
        ));
    }
    let lk = header.config.l * header.config.k;
    let n_prec = header.distinct_precoders().len();
    let per_table = lk + lk * lk;
    let mut out = HashMap::new();
    let mut idb = [0u8; 8];
    loop {
        match r.read_exact(&mut idb) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = u64::from_le_bytes(idb);
        let mut flat = vec![0.0f64; n_prec * per_table];
        let mut buf = [0u8; 8];
        for v in flat.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        if id < range.0 || id >= range.1 {
            continue;
        }
        let mut tables = Vec::with_capacity(n_prec);
        for p in 0..n_prec {
            let base = p * per_table;
            tables.push(GainTable::new(
                header.config.l,
                header.config.k,
                flat[base..base + lk].to_vec(),
                flat[base + lk..base + per_table].to_vec(),
                header.config.noise_mw(),
                header.config.prelog(),
                header.n_real,
            )?);
        }
        out.insert(id, tables);
    }
    Ok(out)
}

// ── Generation ──

/// What a generation run did; skipped ids are reported, never silently
/// dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct GenReport {
    pub requested: u64,
    /// Records newly written by this run.
    pub written: u64,
    /// Ids skipped by this run (solver failure), logged to stderr.
    pub skipped: Vec<u64>,
    /// Records now present in the file.
    pub total_records: u64,
}

/// Generate (or resume) a labeled dataset at `path`. Sample ids run
/// `0..n_samples`; each id gets `derive_seed(master_seed, id)`. A failed
/// sample is logged and skipped; everything else is deterministic, so
/// resumed, parallel, and serial runs produce byte-identical files.
pub fn generate_dataset(
    config: &NetworkConfig,
    n_samples: u64,
    opts: &GenOptions,
    master_seed: u64,
    path: &Path,
) -> Result<GenReport> {
    config.validate()?;
    let header = DatasetHeader::new(config, opts, master_seed);
    let header_text = header.to_text();
    let rec_len = header.record_len() as u64;
    let data_start = 16 + header_text.len() as u64;

    // Open or create, verifying any existing header byte-for-byte.
    let mut existing = 0u64;
    let mut next_id = 0u64;
    let file = if path.exists() {
        let mut f = OpenOptions::new().read(true).write(true).open(path)?;
        let text = read_file_header(&mut BufReader::new(&mut f), DATASET_MAGIC)?;
        if text != header_text {
            return Err(Error::Config(
                "existing dataset was generated with different settings".into(),
            ));
        }
        let len = f.metadata()?.len();
        existing = (len - data_start) / rec_len;
        // Drop any partial trailing record from an interrupted run.
        f.set_len(data_start + existing * rec_len)?;
        if existing > 0 {
            f.seek(SeekFrom::Start(data_start + (existing - 1) * rec_len))?;
            let last = read_record(&mut BufReader::new(&mut f), &header)?;
            next_id = last.id + 1;
        }
        f.seek(SeekFrom::End(0))?;
        f
    } else {
        let mut f = File::create(path)?;
        write_file_header(&mut f, DATASET_MAGIC, &header_text)?;
        f
    };
    let mut writer = BufWriter::new(file);

    // Gain sidecar: keep it aligned with the dataset on resume.
    let mut cache_writer = if opts.cache_gains {
        Some(open_gain_cache_for_append(path, &header, next_id)?)
    } else {
        None
    };

    let mut report = GenReport {
        requested: n_samples,
        written: 0,
        skipped: Vec::new(),
        total_records: existing,
    };
    const BATCH: u64 = 32;
    let mut id = next_id;
    while id < n_samples {
        let hi = (id + BATCH).min(n_samples);
        let results: Vec<(u64, Result<SampleOutcome>)> = (id..hi)
            .into_par_iter()
            .map(|i| (i, sample_instance(config, opts, derive_seed(master_seed, i))))
            .collect();
        for (i, res) in results {
            match res {
                Ok(outcome) => {
                    let rec = SampleRecord {
                        id: i,
                        seed: outcome.seed,
                        positions: outcome.positions,
                        powers: outcome.powers,
                    };
                    write_record(&mut writer, &rec)?;
                    if let Some(cw) = cache_writer.as_mut() {
                        write_gains_record(cw, i, &outcome.gains)?;
                    }
                    report.written += 1;
                    report.total_records += 1;
                }
                Err(e) => {
                    eprintln!("sample {i} skipped: {e}");
                    report.skipped.push(i);
                }
            }
        }
        id = hi;
    }
    writer.flush()?;
    if let Some(mut cw) = cache_writer {
        cw.flush()?;
    }
    Ok(report)
}

/// Create or resume the `.gains` sidecar, truncating any records past the
/// dataset's resume point so both files stay in lockstep.
fn open_gain_cache_for_append(
    dataset_path: &Path,
    header: &DatasetHeader,
    next_id: u64,
) -> Result<BufWriter<File>> {
    let path = gains_cache_path(dataset_path);
    let header_text = header.to_text();
    let grec = gains_record_len(header) as u64;
    let data_start = 16 + header_text.len() as u64;
    if path.exists() {
        let mut f = OpenOptions::new().read(true).write(true).open(&path)?;
        let text = read_file_header(&mut BufReader::new(&mut f), GAINS_MAGIC)?;
        if text != header_text {
            return Err(Error::Config(
                "existing gain cache was generated with different settings".into(),
            ));
        }
        let complete = (f.metadata()?.len() - data_start) / grec;
        // Scan for the first cached id at or past the resume point.
        let mut keep = complete;
        for i in 0..complete {
            f.seek(SeekFrom::Start(data_start + i * grec))?;
            let mut idb = [0u8; 8];
            f.read_exact(&mut idb)?;
            if u64::from_le_bytes(idb) >= next_id {
                keep = i;
                break;
            }
        }
        f.set_len(data_start + keep * grec)?;
        f.seek(SeekFrom::End(0))?;
        Ok(BufWriter::new(f))
    } else {
        let mut f = File::create(&path)?;
        write_file_header(&mut f, GAINS_MAGIC, &header_text)?;
        Ok(BufWriter::new(f))
    }
}

// ── Training orchestration ──

/// Named network architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetPreset {
    /// 6,373 trainable parameters at L=4, K=5.
    Compact,
    /// 202,373 trainable parameters at L=4, K=5.
    Wide,
}

impl std::fmt::Display for NetPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetPreset::Compact => "compact",
            NetPreset::Wide => "wide",
        })
    }
}

impl FromStr for NetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compact" => Ok(NetPreset::Compact),
            "wide" => Ok(NetPreset::Wide),
            other => Err(Error::Config(format!(
                "unknown net preset '{other}' (expected compact|wide)"
            ))),
        }
    }
}

/// Assemble the supervised set for one cell from stored records: inputs are
/// positions divided by the network side, targets the K cell powers plus
/// their sum divided by the budget.
pub fn build_training_set(
    ds: &DatasetFile,
    strategy: Strategy,
    precoder: Precoder,
    cell: usize,
    range: (u64, u64),
) -> Result<Dataset> {
    let pair_idx = ds.pair_index(strategy, precoder)?;
    let config = &ds.header.config;
    let (l, k) = (config.l, config.k);
    if cell >= l {
        return Err(Error::Config(format!("cell {cell} out of range (L={l})")));
    }
    let recs = ds.records_in(range);
    if recs.is_empty() {
        return Err(Error::Config(format!(
            "no records with id in [{}, {})",
            range.0, range.1
        )));
    }
    let inputs = DMatrix::from_fn(2 * l * k, recs.len(), |r, c| {
        recs[c].positions[r] / config.side_m
    });
    let p_max = config.p_dl_max_mw();
    let targets = DMatrix::from_fn(k + 1, recs.len(), |r, c| {
        let rho = &recs[c].powers[pair_idx].rho[cell * k..(cell + 1) * k];
        if r < k {
            rho[r] / p_max
        } else {
            rho.iter().sum::<f64>() / p_max
        }
    });
    let set = Dataset {
        inputs,
        targets,
        cell,
        strategy,
        precoder,
    };
    set.check_sum_consistency(p_max)?;
    Ok(set)
}

/// Train one model per cell (in parallel; each is deterministic). Models
/// carry their cell, labeling pair, and training id range as metadata.
pub fn train_models(
    ds: &DatasetFile,
    strategy: Strategy,
    precoder: Precoder,
    preset: NetPreset,
    cfg: &TrainConfig,
    train_range: (u64, u64),
) -> Result<Vec<(MlpModel, nn::History)>> {
    let config = &ds.header.config;
    let (l, k) = (config.l, config.k);
    (0..l)
        .into_par_iter()
        .map(|cell| {
            let data = build_training_set(ds, strategy, precoder, cell, train_range)?;
            let seed = derive_seed(cfg.seed, MODEL_SALT + cell as u64);
            let mut model = match preset {
                NetPreset::Compact => MlpModel::compact(l, k, seed),
                NetPreset::Wide => MlpModel::wide(l, k, seed),
            };
            model.input_norm = Normalizer::scaling(2 * l * k, config.side_m);
            model.target_norm = Normalizer::scaling(k + 1, config.p_dl_max_mw());
            model.metadata = format!(
                "cell = {cell}\nstrategy = {strategy}\nprecoder = {precoder}\n\
                 train_lo = {}\ntrain_hi = {}\nmaster_seed = {}\n",
                train_range.0, train_range.1, ds.header.master_seed
            );
            let history = nn::train(&mut model, &data, cfg)?;
            Ok((model, history))
        })
        .collect()
}

// ── Evaluation ──

/// Evaluation result: per-UE spectral efficiencies under the exact and the
/// predicted allocations, per-sample MSE of the SEs, and their CDFs.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Per-UE SEs from the stored optimal powers (n_samples * L * K values).
    pub se_exact: Vec<f64>,
    /// Per-UE SEs from the predicted powers, same order.
    pub se_nn: Vec<f64>,
    /// Per-sample MSE of the SEs: mean over the L*K UEs of (exact - nn)^2.
    pub mse: Vec<f64>,
    pub mean_mse: f64,
    /// Largest relative deviation between stored objectives and objectives
    /// recomputed from the gains and stored powers.
    pub max_objective_dev: f64,
}

impl EvalReport {
    pub fn se_cdf(&self) -> Vec<(f64, f64)> {
        ecdf(&self.se_nn)
    }

    pub fn se_exact_cdf(&self) -> Vec<(f64, f64)> {
        ecdf(&self.se_exact)
    }

    pub fn mse_cdf(&self) -> Vec<(f64, f64)> {
        ecdf(&self.mse)
    }

    pub fn median_se_exact(&self) -> f64 {
        median(&self.se_exact)
    }

    pub fn median_se_nn(&self) -> f64 {
        median(&self.se_nn)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical CDF: sorted values paired with probabilities (i+1)/n, ending
/// at exactly 1.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Write a CDF as `value,probability` CSV rows.
pub fn write_cdf_csv<W: Write>(w: &mut W, cdf: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "value,probability")?;
    for (v, p) in cdf {
        writeln!(w, "{v},{p}")?;
    }
    Ok(())
}

/// Recompute the gain table for one stored sample (same derived seeds as
/// generation), verifying that the stored positions match the seed.
pub fn recompute_gains(
    config: &NetworkConfig,
    n_real: usize,
    rec: &SampleRecord,
    precoder: Precoder,
) -> Result<GainTable> {
    let net = drop_ues(config, rec.seed)?;
    let repro: Vec<f64> = net.positions.iter().flat_map(|p| [p.x, p.y]).collect();
    if repro != rec.positions {
        return Err(Error::Format(format!(
            "sample {}: stored positions do not match its seed (config drift?)",
            rec.id
        )));
    }
    gains_for_net(&net, n_real, rec.seed, precoder)
}

fn gains_for_net(
    net: &NetworkRealization,
    n_real: usize,
    sample_seed: u64,
    precoder: Precoder,
) -> Result<GainTable> {
    let channels = sample_channels(net, n_real, derive_seed(sample_seed, CHANNEL_SALT))?;
    let estimates = mmse_estimate(net, &channels, derive_seed(sample_seed, ESTIMATE_SALT))?;
    let w = compute_precoders(net, &estimates, precoder)?;
    estimate_gains(&channels, &w, &net.config)
}

fn objective_from_powers(g: &GainTable, rho: &[f64], strategy: Strategy) -> f64 {
    let sinrs = sinr_all(g, rho);
    match strategy {
        Strategy::MaxMin => {
            let t = sinrs.iter().cloned().fold(f64::INFINITY, f64::min);
            g.prelog * (1.0 + t).log2()
        }
        Strategy::MaxProd => sinrs.iter().map(|s| s.ln()).sum(),
    }
}

/// Core evaluation loop over an arbitrary per-cell predictor
/// `(cell, raw positions) -> K powers (mW)`. Gains come from the cache when
/// present, otherwise they are recomputed from the sample seed.
pub fn evaluate_with<F>(
    mut predict: F,
    ds: &DatasetFile,
    strategy: Strategy,
    precoder: Precoder,
    test_range: (u64, u64),
    cache: Option<&HashMap<u64, Vec<GainTable>>>,
) -> Result<EvalReport>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let pair_idx = ds.pair_index(strategy, precoder)?;
    let config = &ds.header.config;
    let (l, k) = (config.l, config.k);
    let prec_idx = ds
        .header
        .distinct_precoders()
        .iter()
        .position(|&p| p == precoder)
        .unwrap();
    let recs = ds.records_in(test_range);
    if recs.is_empty() {
        return Err(Error::Config(format!(
            "no test records with id in [{}, {})",
            test_range.0, test_range.1
        )));
    }
    let mut report = EvalReport {
        n_samples: recs.len(),
        se_exact: Vec::with_capacity(recs.len() * l * k),
        se_nn: Vec::with_capacity(recs.len() * l * k),
        mse: Vec::with_capacity(recs.len()),
        mean_mse: 0.0,
        max_objective_dev: 0.0,
    };
    for rec in recs {
        let owned;
        let table: &GainTable = match cache.and_then(|c| c.get(&rec.id)) {
            Some(tables) => &tables[prec_idx],
            None => {
                owned = recompute_gains(config, ds.header.n_real, rec, precoder)?;
                &owned
            }
        };
        let stored = &rec.powers[pair_idx];
        let se_ex = se_all(table, &stored.rho);
        let dev = (objective_from_powers(table, &stored.rho, strategy) - stored.objective).abs()
            / stored.objective.abs().max(1.0);
        report.max_objective_dev = report.max_objective_dev.max(dev);

        let mut rho_nn = vec![0.0; l * k];
        for cell in 0..l {
            let p = predict(cell, &rec.positions)?;
            if p.len() != k {
                return Err(Error::Shape(format!(
                    "predictor returned {} powers for K={k}",
                    p.len()
                )));
            }
            rho_nn[cell * k..(cell + 1) * k].copy_from_slice(&p);
        }
        let se_pred = se_all(table, &rho_nn);

        let mse = se_ex
            .iter()
            .zip(&se_pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (l * k) as f64;
        report.mse.push(mse);
        report.se_exact.extend(se_ex);
        report.se_nn.extend(se_pred);
    }
    report.mean_mse = report.mse.iter().sum::<f64>() / report.mse.len() as f64;
    Ok(report)
}

/// Evaluate trained per-cell models on a test id range, refusing any overlap
/// with the range the models were trained on.
pub fn evaluate(
    models: &[MlpModel],
    ds: &DatasetFile,
    strategy: Strategy,
    precoder: Precoder,
    test_range: (u64, u64),
    cache: Option<&HashMap<u64, Vec<GainTable>>>,
) -> Result<EvalReport> {
    let config = &ds.header.config;
    let (l, k) = (config.l, config.k);
    if models.len() != l {
        return Err(Error::Shape(format!(
            "need one model per cell: got {}, L={l}",
            models.len()
        )));
    }
    for (cell, model) in models.iter().enumerate() {
        if model.input_dim() != 2 * l * k || model.output_dim() != k + 1 {
            return Err(Error::Shape(format!(
                "model {cell} is {}->{}, expected {}->{}",
                model.input_dim(),
                model.output_dim(),
                2 * l * k,
                k + 1
            )));
        }
        let (lo, hi) = model_train_range(model)?;
        if lo < test_range.1 && test_range.0 < hi {
            return Err(Error::Config(format!(
                "model {cell} was trained on ids [{lo}, {hi}), which overlaps \
                 the test range [{}, {})",
                test_range.0, test_range.1
            )));
        }
    }
    let p_max = config.p_dl_max_mw();
    evaluate_with(
        |cell, positions| nn::predict_powers(&models[cell], positions, p_max),
        ds,
        strategy,
        precoder,
        test_range,
        cache,
    )
}

/// Parse the `train_lo`/`train_hi` range a model's metadata records.
fn model_train_range(model: &MlpModel) -> Result<(u64, u64)> {
    use crate::geometry::{parse_kv_lines, parse_num};
    let mut lo = None;
    let mut hi = None;
    for (key, value) in parse_kv_lines(&model.metadata)? {
        match key.as_str() {
            "train_lo" => lo = Some(parse_num::<u64>(&key, &value)?),
            "train_hi" => hi = Some(parse_num::<u64>(&key, &value)?),
            _ => {}
        }
    }
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => Err(Error::Config(
            "model metadata lacks its training id range; cannot certify \
             train/test disjointness"
                .into(),
        )),
    }
}
