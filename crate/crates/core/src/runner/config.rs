//! Experiment configuration.
//!
//! The file is TOML restricted to top-level keys and one level of sections:
//!
//! ```toml
//! experiment = "fidelity"        # fidelity | ldos | ensemble_stats | sector_info
//! output_dir = "out/qkt"
//! steps = 150
//!
//! [system]
//! kind = "qkt"                   # qkt | qkt_sector | interpolating | interpolating_blocks
//! two_j = 511
//! k = [1, 3, 5, 7]               # a number or a list; lists are swept
//!
//! [sector]                       # qkt_sector only
//! y_parity = "even"
//! x_parity = "odd"
//!
//! [perturbation]
//! n_q = 9                        # defaults to log2 of the system dimension
//! epsilon = 0.2                  # a number or a list
//! axis = "z"                     # z | x
//! basis = "identity"             # identity | pairing | collective_x | random | custom
//! basis_seed = 7                 # random basis only
//! basis_file = "t.txt"           # custom basis only
//!
//! [trials]
//! n_states = 100
//! n_operators = 1
//! master_seed = 0x5EED
//! initial_state = "haar"         # haar | coherent
//!
//! [analysis]
//! f_floor = 0.01
//! n_bins = 201
//! ldos = false
//! reference_rate = 0.405
//! ```
//!
//! Ensemble systems take `n` and `delta`, block systems `block_dim` and
//! `block_delta`. A custom basis file holds one matrix row per line as
//! whitespace-separated `re im` pairs.

use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::matops::{c64, ComplexMatrix, UnitaryMatrix};
use crate::perturb::Axis;
use crate::spectra::{DEFAULT_F_FLOOR, DEFAULT_LDOS_BINS};
use crate::spin::{expected_sector_dim, Parity, SectorSpec, SpinJ};

pub const DEFAULT_MASTER_SEED: u64 = 0x5EED;
pub const DEFAULT_OUTPUT_DIR: &str = "output";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Fidelity,
    Ldos,
    EnsembleStats,
    SectorInfo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fidelity => "fidelity",
            ExperimentKind::Ldos => "ldos",
            ExperimentKind::EnsembleStats => "ensemble_stats",
            ExperimentKind::SectorInfo => "sector_info",
        }
    }

    fn parse(key: &str, s: &str) -> Result<Self> {
        Ok(match s {
            "fidelity" => ExperimentKind::Fidelity,
            "ldos" => ExperimentKind::Ldos,
            "ensemble_stats" | "ensemble-stats" => ExperimentKind::EnsembleStats,
            "sector_info" | "sector-info" => ExperimentKind::SectorInfo,
            other => return Err(Error::config(key, format!("unknown experiment `{other}`"))),
        })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemConfig {
    Qkt { two_j: u32, k: Vec<f64> },
    QktSector { two_j: u32, k: Vec<f64>, sector: SectorSpec },
    Interpolating { n: usize, delta: Vec<f64> },
    InterpolatingBlocks { block_dim: usize, block_delta: Vec<f64> },
}

impl SystemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            SystemConfig::Qkt { .. } => "qkt",
            SystemConfig::QktSector { .. } => "qkt_sector",
            SystemConfig::Interpolating { .. } => "interpolating",
            SystemConfig::InterpolatingBlocks { .. } => "interpolating_blocks",
        }
    }

    /// Dimension of the space the echo runs in.
    pub fn dim(&self) -> usize {
        match self {
            SystemConfig::Qkt { two_j, .. } => SpinJ::new(*two_j).dim(),
            SystemConfig::QktSector { two_j, sector, .. } => {
                expected_sector_dim(SpinJ::new(*two_j), *sector)
            }
            SystemConfig::Interpolating { n, .. } => *n,
            SystemConfig::InterpolatingBlocks { block_dim, .. } => 2 * block_dim,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(
            self,
            SystemConfig::Interpolating { .. } | SystemConfig::InterpolatingBlocks { .. }
        )
    }

    /// Swept system parameter: its name and values.
    pub fn sweep(&self) -> (&'static str, &[f64]) {
        match self {
            SystemConfig::Qkt { k, .. } | SystemConfig::QktSector { k, .. } => ("k", k),
            SystemConfig::Interpolating { delta, .. } => ("delta", delta),
            SystemConfig::InterpolatingBlocks { block_delta, .. } => ("delta", block_delta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    Identity,
    Pairing,
    CollectiveX,
    Random,
    Custom,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Identity => "identity",
            BasisKind::Pairing => "pairing",
            BasisKind::CollectiveX => "collective_x",
            BasisKind::Random => "random",
            BasisKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationConfig {
    pub n_q: u32,
    pub epsilon: Vec<f64>,
    pub axis: Axis,
    pub basis: BasisKind,
    pub basis_seed: u64,
    pub basis_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    Haar,
    Coherent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialsConfig {
    pub n_states: usize,
    pub n_operators: usize,
    pub master_seed: u64,
    pub initial_state: InitialKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub f_floor: f64,
    pub n_bins: usize,
    pub ldos: bool,
    pub reference_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub steps: usize,
    pub system: SystemConfig,
    pub perturbation: Option<PerturbationConfig>,
    pub trials: TrialsConfig,
    pub analysis: AnalysisConfig,
}

struct Section<'a> {
    path: &'a str,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn new(path: &'a str, table: &'a Table, allowed: &[&str]) -> Result<Self> {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(join(path, key), "unknown key"));
            }
        }
        Ok(Self { path, table })
    }

    fn key(&self, key: &str) -> String {
        join(self.path, key)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn require(&self, key: &str) -> Result<&'a Value> {
        self.get(key)
            .ok_or_else(|| Error::config(self.key(key), "missing required key"))
    }

    fn str_opt(&self, key: &str) -> Result<Option<&'a str>> {
        self.get(key)
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| Error::config(self.key(key), "expected a string"))
            })
            .transpose()
    }

    fn str_req(&self, key: &str) -> Result<&'a str> {
        self.require(key)?;
        Ok(self.str_opt(key)?.expect("present"))
    }

    fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                Value::Integer(_) => Err(Error::config(self.key(key), "must be nonnegative")),
                _ => Err(Error::config(self.key(key), "expected an integer")),
            })
            .transpose()
    }

    /// Seeds are 64-bit patterns; negative integers are read as two's complement.
    fn seed_opt(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| match v {
                Value::Integer(i) => Ok(*i as u64),
                _ => Err(Error::config(self.key(key), "expected an integer")),
            })
            .transpose()
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.u64_opt(key)?
            .map(|v| usize::try_from(v).map_err(|_| Error::config(self.key(key), "too large")))
            .transpose()
    }

    fn usize_req(&self, key: &str) -> Result<usize> {
        self.require(key)?;
        Ok(self.usize_opt(key)?.expect("present"))
    }

    fn f64_of(&self, key: &str, v: &Value) -> Result<f64> {
        let x = match v {
            Value::Integer(i) => *i as f64,
            Value::Float(f) => *f,
            _ => return Err(Error::config(self.key(key), "expected a number")),
        };
        if !x.is_finite() {
            return Err(Error::config(self.key(key), "must be finite"));
        }
        Ok(x)
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.f64_of(key, v)).transpose()
    }

    /// A number or a nonempty list of numbers.
    fn f64_list_req(&self, key: &str) -> Result<Vec<f64>> {
        match self.require(key)? {
            Value::Array(items) => {
                if items.is_empty() {
                    return Err(Error::config(self.key(key), "list must not be empty"));
                }
                items.iter().map(|v| self.f64_of(key, v)).collect()
            }
            v => Ok(vec![self.f64_of(key, v)?]),
        }
    }

    fn bool_opt(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| {
                v.as_bool()
                    .ok_or_else(|| Error::config(self.key(key), "expected true or false"))
            })
            .transpose()
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn section<'a>(root: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    root.get(name)
        .map(|v| {
            v.as_table()
                .ok_or_else(|| Error::config(name, "expected a section"))
        })
        .transpose()
}

fn parity(key: String, s: &str) -> Result<Parity> {
    match s {
        "even" | "+" => Ok(Parity::Even),
        "odd" | "-" => Ok(Parity::Odd),
        other => Err(Error::config(key, format!("expected even or odd, got `{other}`"))),
    }
}

/// Parses and validates a configuration; the file must name its experiment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// Like [`parse_config`], with `experiment` used when the file names none and
/// required to match when it does.
pub fn parse_config_for(text: &str, experiment: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    let top = Section::new(
        "",
        &root,
        &[
            "experiment",
            "output_dir",
            "steps",
            "system",
            "sector",
            "perturbation",
            "trials",
            "analysis",
        ],
    )?;
    let experiment = match (top.str_opt("experiment")?, experiment) {
        (Some(s), None) => ExperimentKind::parse("experiment", s)?,
        (Some(s), Some(cli)) => {
            let named = ExperimentKind::parse("experiment", s)?;
            if named != cli {
                return Err(Error::config(
                    "experiment",
                    format!("config is for `{named}` but `{cli}` was requested"),
                ));
            }
            named
        }
        (None, Some(cli)) => cli,
        (None, None) => return Err(Error::config("experiment", "missing required key")),
    };
    let output_dir = PathBuf::from(top.str_opt("output_dir")?.unwrap_or(DEFAULT_OUTPUT_DIR));
    let steps = match (top.usize_opt("steps")?, experiment) {
        (Some(s), _) => s,
        (None, ExperimentKind::Fidelity) => {
            return Err(Error::config("steps", "missing required key"))
        }
        (None, _) => 0,
    };

    let empty = Table::new();
    let sys_t = section(&root, "system")?.ok_or_else(|| Error::config("system", "missing section"))?;
    let sys = Section::new(
        "system",
        sys_t,
        &["kind", "two_j", "k", "n", "delta", "block_dim", "block_delta"],
    )?;
    let kind = sys.str_req("kind")?;
    let only = |allowed: &[&str]| -> Result<()> {
        for key in sys_t.keys() {
            if key != "kind" && !allowed.contains(&key.as_str()) {
                return Err(Error::config(
                    sys.key(key),
                    format!("not used by system kind `{kind}`"),
                ));
            }
        }
        Ok(())
    };
    let two_j = |s: &Section| -> Result<u32> {
        let v = s.usize_req("two_j")?;
        if v == 0 {
            return Err(Error::config(s.key("two_j"), "must be positive (J = 0 has no kicked top)"));
        }
        u32::try_from(v).map_err(|_| Error::config(s.key("two_j"), "too large"))
    };
    let k_list = |s: &Section| -> Result<Vec<f64>> {
        match experiment {
            ExperimentKind::SectorInfo if s.get("k").is_none() => Ok(Vec::new()),
            _ => s.f64_list_req("k"),
        }
    };
    let deltas = |s: &Section, key: &str| -> Result<Vec<f64>> {
        let d = s.f64_list_req(key)?;
        if let Some(bad) = d.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::config(s.key(key), format!("must lie in [0, 1], got {bad}")));
        }
        Ok(d)
    };
    let sector_t = section(&root, "sector")?;
    let system = match kind {
        "qkt" => {
            only(&["two_j", "k"])?;
            if sector_t.is_some() {
                return Err(Error::config("sector", "only used with system kind `qkt_sector`"));
            }
            SystemConfig::Qkt {
                two_j: two_j(&sys)?,
                k: k_list(&sys)?,
            }
        }
        "qkt_sector" => {
            only(&["two_j", "k"])?;
            let sec_t = sector_t.ok_or_else(|| Error::config("sector", "missing section"))?;
            let sec = Section::new("sector", sec_t, &["y_parity", "x_parity"])?;
            let spec = SectorSpec {
                y_parity: parity(sec.key("y_parity"), sec.str_req("y_parity")?)?,
                x_parity: sec
                    .str_opt("x_parity")?
                    .map(|s| parity(sec.key("x_parity"), s))
                    .transpose()?,
            };
            let tj = two_j(&sys)?;
            if spec.x_parity.is_some() {
                if tj % 4 != 0 {
                    return Err(Error::config(
                        "sector.x_parity",
                        format!("x parity needs an even integer J, got J = {}", f64::from(tj) / 2.0),
                    ));
                }
                if spec.y_parity != Parity::Even {
                    return Err(Error::config("sector.x_parity", "x parity needs y_parity = even"));
                }
            }
            SystemConfig::QktSector {
                two_j: tj,
                k: k_list(&sys)?,
                sector: spec,
            }
        }
        "interpolating" => {
            only(&["n", "delta"])?;
            let n = sys.usize_req("n")?;
            if n < 2 {
                return Err(Error::config("system.n", "must be at least 2"));
            }
            SystemConfig::Interpolating {
                n,
                delta: deltas(&sys, "delta")?,
            }
        }
        "interpolating_blocks" => {
            only(&["block_dim", "block_delta"])?;
            let block_dim = sys.usize_req("block_dim")?;
            if block_dim < 2 {
                return Err(Error::config("system.block_dim", "must be at least 2"));
            }
            SystemConfig::InterpolatingBlocks {
                block_dim,
                block_delta: deltas(&sys, "block_delta")?,
            }
        }
        other => {
            return Err(Error::config(
                "system.kind",
                format!("unknown system kind `{other}`"),
            ))
        }
    };
    if kind != "qkt_sector" && sector_t.is_some() {
        return Err(Error::config("sector", "only used with system kind `qkt_sector`"));
    }
    match (experiment, &system) {
        (ExperimentKind::SectorInfo, SystemConfig::QktSector { .. }) => {}
        (ExperimentKind::SectorInfo, _) => {
            return Err(Error::config("system.kind", "sector_info needs system kind `qkt_sector`"))
        }
        (ExperimentKind::EnsembleStats, SystemConfig::Interpolating { .. } | SystemConfig::InterpolatingBlocks { .. }) => {}
        (ExperimentKind::EnsembleStats, _) => {
            return Err(Error::config(
                "system.kind",
                "ensemble_stats needs an interpolating system",
            ))
        }
        _ => {}
    }
    let dim = system.dim();

    let trials_t = section(&root, "trials")?.unwrap_or(&empty);
    let tr = Section::new(
        "trials",
        trials_t,
        &["n_states", "n_operators", "master_seed", "initial_state"],
    )?;
    let n_states = match (tr.usize_opt("n_states")?, experiment) {
        (Some(n), _) => n,
        (None, ExperimentKind::Fidelity) => {
            return Err(Error::config("trials.n_states", "missing required key"))
        }
        (None, _) => 1,
    };
    let n_operators = tr.usize_opt("n_operators")?.unwrap_or(1);
    if n_states == 0 {
        return Err(Error::config("trials.n_states", "must be at least 1"));
    }
    if n_operators == 0 {
        return Err(Error::config("trials.n_operators", "must be at least 1"));
    }
    if n_operators > 1 && !system.is_random() {
        return Err(Error::config(
            "trials.n_operators",
            format!("system kind `{}` has a single operator", system.kind()),
        ));
    }
    let initial_state = match tr.str_opt("initial_state")?.unwrap_or("haar") {
        "haar" => InitialKind::Haar,
        "coherent" => {
            if !matches!(system, SystemConfig::Qkt { .. }) {
                return Err(Error::config(
                    "trials.initial_state",
                    "coherent states need system kind `qkt`",
                ));
            }
            InitialKind::Coherent
        }
        other => {
            return Err(Error::config(
                "trials.initial_state",
                format!("expected haar or coherent, got `{other}`"),
            ))
        }
    };
    let trials = TrialsConfig {
        n_states,
        n_operators,
        master_seed: tr.seed_opt("master_seed")?.unwrap_or(DEFAULT_MASTER_SEED),
        initial_state,
    };

    let needs_perturbation = matches!(experiment, ExperimentKind::Fidelity | ExperimentKind::Ldos);
    let perturbation = match section(&root, "perturbation")? {
        None if needs_perturbation => {
            return Err(Error::config("perturbation", "missing section"))
        }
        None => None,
        Some(t) => Some(parse_perturbation(t, dim, trials.master_seed)?),
    };

    let an_t = section(&root, "analysis")?.unwrap_or(&empty);
    let an = Section::new("analysis", an_t, &["f_floor", "n_bins", "ldos", "reference_rate"])?;
    let f_floor = an.f64_opt("f_floor")?.unwrap_or(DEFAULT_F_FLOOR);
    if !(f_floor > 0.0 && f_floor < 1.0) {
        return Err(Error::config("analysis.f_floor", "must lie in (0, 1)"));
    }
    let n_bins = an.usize_opt("n_bins")?.unwrap_or(DEFAULT_LDOS_BINS);
    if n_bins == 0 {
        return Err(Error::config("analysis.n_bins", "must be at least 1"));
    }
    let analysis = AnalysisConfig {
        f_floor,
        n_bins,
        ldos: an.bool_opt("ldos")?.unwrap_or(false),
        reference_rate: an.f64_opt("reference_rate")?,
    };

    Ok(ExperimentConfig {
        experiment,
        output_dir,
        steps,
        system,
        perturbation,
        trials,
        analysis,
    })
}

fn parse_perturbation(t: &Table, dim: usize, master_seed: u64) -> Result<PerturbationConfig> {
    let p = Section::new(
        "perturbation",
        t,
        &["n_q", "epsilon", "axis", "basis", "basis_seed", "basis_file"],
    )?;
    let n_q = match p.u64_opt("n_q")? {
        Some(q) => {
            let q = u32::try_from(q)
                .ok()
                .filter(|q| (1..31).contains(q))
                .ok_or_else(|| Error::config("perturbation.n_q", "must lie in 1..=30"))?;
            if 1usize << q != dim {
                return Err(Error::config(
                    "perturbation.n_q",
                    format!("2^{q} = {} does not match the system dimension {dim}", 1usize << q),
                ));
            }
            q
        }
        None => {
            if !dim.is_power_of_two() || dim < 2 {
                return Err(Error::config(
                    "perturbation.n_q",
                    format!("system dimension {dim} is not a power of two, so no qubit register fits"),
                ));
            }
            dim.trailing_zeros()
        }
    };
    let axis = match p.str_opt("axis")?.unwrap_or("z") {
        "z" => Axis::Z,
        "x" => Axis::X,
        other => {
            return Err(Error::config(
                "perturbation.axis",
                format!("expected z or x, got `{other}`"),
            ))
        }
    };
    let basis = match p.str_opt("basis")?.unwrap_or("identity") {
        "identity" => BasisKind::Identity,
        "pairing" => BasisKind::Pairing,
        "collective_x" => BasisKind::CollectiveX,
        "random" => BasisKind::Random,
        "custom" => BasisKind::Custom,
        other => {
            return Err(Error::config(
                "perturbation.basis",
                format!("unknown basis `{other}`"),
            ))
        }
    };
    if basis != BasisKind::Random && p.get("basis_seed").is_some() {
        return Err(Error::config("perturbation.basis_seed", "only used with basis = \"random\""));
    }
    let basis_file = p.str_opt("basis_file")?.map(PathBuf::from);
    match (basis, &basis_file) {
        (BasisKind::Custom, None) => {
            return Err(Error::config("perturbation.basis_file", "missing required key"))
        }
        (BasisKind::Custom, Some(_)) => {}
        (_, Some(_)) => {
            return Err(Error::config("perturbation.basis_file", "only used with basis = \"custom\""))
        }
        _ => {}
    }
    Ok(PerturbationConfig {
        n_q,
        epsilon: p.f64_list_req("epsilon")?,
        axis,
        basis,
        basis_seed: p
            .seed_opt("basis_seed")?
            .unwrap_or_else(|| crate::seed::auxiliary_seed(master_seed, 0)),
        basis_file,
    })
}

/// Reads a custom basis: one row per line of whitespace-separated `re im`
/// pairs.
pub fn read_basis_file(path: &Path, dim: usize) -> Result<UnitaryMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let key = "perturbation.basis_file";
    let mut entries = Vec::with_capacity(dim * dim);
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config(key, format!("line {}: {e}", lineno + 1)))?;
        if nums.len() != 2 * dim {
            return Err(Error::config(
                key,
                format!("line {}: expected {} numbers, found {}", lineno + 1, 2 * dim, nums.len()),
            ));
        }
        entries.extend(nums.chunks(2).map(|p| c64::new(p[0], p[1])));
        rows += 1;
    }
    if rows != dim {
        return Err(Error::config(key, format!("expected {dim} rows, found {rows}")));
    }
    UnitaryMatrix::new(ComplexMatrix::from_row_major(dim, dim, &entries)?)
}

fn num_value(x: f64) -> Value {
    Value::Float(x)
}

fn list_value(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num_value(x)).collect())
}

impl ExperimentConfig {
    /// The resolved configuration in the input schema, with every default
    /// filled in.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        root.insert("experiment".into(), Value::String(self.experiment.name().into()));
        root.insert(
            "output_dir".into(),
            Value::String(self.output_dir.to_string_lossy().into_owned()),
        );
        root.insert("steps".into(), Value::Integer(self.steps as i64));

        let mut sys = Table::new();
        sys.insert("kind".into(), Value::String(self.system.kind().into()));
        match &self.system {
            SystemConfig::Qkt { two_j, k } => {
                sys.insert("two_j".into(), Value::Integer(i64::from(*two_j)));
                sys.insert("k".into(), list_value(k));
            }
            SystemConfig::QktSector { two_j, k, sector } => {
                sys.insert("two_j".into(), Value::Integer(i64::from(*two_j)));
                sys.insert("k".into(), list_value(k));
                let mut sec = Table::new();
                sec.insert("y_parity".into(), Value::String(sector.y_parity.to_string()));
                if let Some(x) = sector.x_parity {
                    sec.insert("x_parity".into(), Value::String(x.to_string()));
                }
                root.insert("sector".into(), Value::Table(sec));
            }
            SystemConfig::Interpolating { n, delta } => {
                sys.insert("n".into(), Value::Integer(*n as i64));
                sys.insert("delta".into(), list_value(delta));
            }
            SystemConfig::InterpolatingBlocks {
                block_dim,
                block_delta,
            } => {
                sys.insert("block_dim".into(), Value::Integer(*block_dim as i64));
                sys.insert("block_delta".into(), list_value(block_delta));
            }
        }
        root.insert("system".into(), Value::Table(sys));

        if let Some(p) = &self.perturbation {
            let mut t = Table::new();
            t.insert("n_q".into(), Value::Integer(i64::from(p.n_q)));
            t.insert("epsilon".into(), list_value(&p.epsilon));
            t.insert("axis".into(), Value::String(p.axis.to_string()));
            t.insert("basis".into(), Value::String(p.basis.name().into()));
            if p.basis == BasisKind::Random {
                t.insert("basis_seed".into(), seed_value(p.basis_seed));
            }
            if let Some(f) = &p.basis_file {
                t.insert("basis_file".into(), Value::String(f.to_string_lossy().into_owned()));
            }
            root.insert("perturbation".into(), Value::Table(t));
        }

        let mut tr = Table::new();
        tr.insert("n_states".into(), Value::Integer(self.trials.n_states as i64));
        tr.insert("n_operators".into(), Value::Integer(self.trials.n_operators as i64));
        tr.insert("master_seed".into(), seed_value(self.trials.master_seed));
        tr.insert(
            "initial_state".into(),
            Value::String(
                match self.trials.initial_state {
                    InitialKind::Haar => "haar",
                    InitialKind::Coherent => "coherent",
                }
                .into(),
            ),
        );
        root.insert("trials".into(), Value::Table(tr));

        let mut an = Table::new();
        an.insert("f_floor".into(), num_value(self.analysis.f_floor));
        an.insert("n_bins".into(), Value::Integer(self.analysis.n_bins as i64));
        an.insert("ldos".into(), Value::Boolean(self.analysis.ldos));
        if let Some(r) = self.analysis.reference_rate {
            an.insert("reference_rate".into(), num_value(r));
        }
        root.insert("analysis".into(), Value::Table(an));
        root
    }
}

fn seed_value(seed: u64) -> Value {
    Value::Integer(seed as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL_TOP: &str = r#"
experiment = "fidelity"
steps = 150

[system]
kind = "qkt"
two_j = 511
k = 1

[perturbation]
epsilon = 0.2

[trials]
n_states = 100
"#;

    #[test]
    fn minimal_fidelity_config() {
        let c = parse_config(FULL_TOP).unwrap();
        assert_eq!(c.system, SystemConfig::Qkt { two_j: 511, k: vec![1.0] });
        let p = c.perturbation.as_ref().unwrap();
        assert_eq!(p.n_q, 9);
        assert_eq!(p.epsilon, vec![0.2]);
        assert_eq!(c.trials.n_states, 100);
        assert_eq!(c.steps, 150);
        assert_eq!(c.analysis.f_floor, 0.01);
        assert_eq!(c.analysis.n_bins, 201);
        assert_eq!(c.trials.master_seed, DEFAULT_MASTER_SEED);
    }

    #[test]
    fn defaults_are_echoed_in_resolved_table() {
        let c = parse_config(FULL_TOP).unwrap();
        let t = c.to_table();
        assert_eq!(t["analysis"]["f_floor"].as_float(), Some(0.01));
        let again = parse_config(&toml::to_string(&t).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn inconsistent_qubit_count_rejected() {
        let text = FULL_TOP.replace("epsilon = 0.2", "epsilon = 0.2\nn_q = 7");
        match parse_config(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "perturbation.n_q"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys_name_their_path() {
        let text = FULL_TOP.replace("k = 1", "k = 1\nkick = 2");
        match parse_config(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "system.kick"),
            other => panic!("unexpected {other:?}"),
        }
        let text = FULL_TOP.replace("n_states = 100", "");
        match parse_config(&text) {
            Err(Error::Config { key, reason }) => {
                assert_eq!(key, "trials.n_states");
                assert!(reason.contains("missing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn experiment_must_match_request() {
        assert!(parse_config_for(FULL_TOP, Some(ExperimentKind::Ldos)).is_err());
        let anon = FULL_TOP.replace("experiment = \"fidelity\"", "");
        assert!(parse_config(&anon).is_err());
        let c = parse_config_for(&anon, Some(ExperimentKind::Fidelity)).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Fidelity);
    }

    #[test]
    fn sector_dimension_drives_qubit_count() {
        let text = r#"
experiment = "fidelity"
steps = 150
[system]
kind = "qkt_sector"
two_j = 2048
k = [1, 7]
[sector]
y_parity = "even"
x_parity = "odd"
[perturbation]
epsilon = 0.2
[trials]
n_states = 10
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.system.dim(), 512);
        assert_eq!(c.perturbation.unwrap().n_q, 9);
        let bad = text.replace("two_j = 2048", "two_j = 2046");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn value_checks() {
        let bad_delta = r#"
experiment = "ensemble_stats"
[system]
kind = "interpolating"
n = 128
delta = [0.0, 1.2]
"#;
        match parse_config(bad_delta) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "system.delta"),
            other => panic!("unexpected {other:?}"),
        }
        let many_ops = FULL_TOP.replace("n_states = 100", "n_states = 100\nn_operators = 3");
        assert!(parse_config(&many_ops).is_err());
        let floor = format!("{FULL_TOP}\n[analysis]\nf_floor = 1.5\n");
        assert!(parse_config(&floor).is_err());
        let not_pow2 = FULL_TOP.replace("two_j = 511", "two_j = 510");
        assert!(parse_config(&not_pow2).is_err());
    }

    #[test]
    fn basis_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.txt");
        std::fs::write(&path, "0.7071067811865476 0 0.7071067811865476 0\n0.7071067811865476 0 -0.7071067811865476 0\n").unwrap();
        let u = read_basis_file(&path, 2).unwrap();
        assert!((u.matrix().get(1, 1).re + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(read_basis_file(&path, 3).is_err());
        std::fs::write(&path, "1 0 1 0\n0 0 1 0\n").unwrap();
        assert!(matches!(read_basis_file(&path, 2), Err(Error::NotUnitary { .. })));
    }
}
