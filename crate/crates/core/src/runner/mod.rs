//! Experiment orchestration: builds systems and perturbations from a config,
//! runs the sweeps and writes CSV outputs plus a manifest.

pub mod config;
pub mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use toml::{Table, Value};

use crate::echo::{
    average_curves, trial_curves, EchoPair, FidelityCurve, FixedOperator, InitialState,
    OperatorSource, TrialPlan,
};
use crate::ensembles::{
    spacing_distribution, BlockSource, InterpolatingSource, SpacingHistogram,
};
use crate::error::{Error, Result};
use crate::matops::UnitaryMatrix;
use crate::perturb::{
    collective_hamiltonian, conjugate_collective_x, perturbation_unitary, rmt_rate, Axis,
    BasisSpec, PerturbationHamiltonian, PerturbationSpec,
};
use crate::seed;
use crate::spectra::{
    average_histograms, fit_exponential_decay, fit_ldos, ldos, DecayFit, LdosFit, LdosHistogram,
    LineShape, CURVATURE_THRESHOLD,
};
use crate::spin::{restrict, sector_basis, KickedTop, SectorTransform, SpinJ};

pub use config::{
    parse_config, parse_config_for, read_basis_file, AnalysisConfig, BasisKind, ExperimentConfig,
    ExperimentKind, InitialKind, PerturbationConfig, SystemConfig, TrialsConfig,
};
pub use manifest::{RunManifest, MANIFEST_FILE};

pub const FITS_FILE: &str = "fits.csv";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// Results for one `(parameter, epsilon)` point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub label: String,
    pub parameter: f64,
    pub epsilon: Option<f64>,
    pub curve: Option<FidelityCurve>,
    pub fit: Option<DecayFit>,
    pub rmt_rate: Option<f64>,
    pub ldos: Option<LdosResult>,
    pub spacings: Option<SpacingHistogram>,
}

#[derive(Clone, Debug)]
pub struct LdosResult {
    pub histogram: LdosHistogram,
    pub lorentzian: Option<LdosFit>,
    pub gaussian: Option<LdosFit>,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub files: Vec<OutputFile>,
    pub points: Vec<PointResult>,
    pub notes: Table,
}

impl RunOutputs {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.contents.as_str())
    }

    pub fn point(&self, label: &str) -> Option<&PointResult> {
        self.points.iter().find(|p| p.label == label)
    }
}

/// `{name}{value}` with the shortest round-trip rendering of `value`.
pub fn point_label(name: &str, value: f64, epsilon: Option<f64>) -> String {
    match epsilon {
        Some(e) => format!("{name}{value}_eps{e}"),
        None => format!("{name}{value}"),
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

struct FitsTable(String);

impl FitsTable {
    fn new() -> Self {
        Self("quantity,model,value\n".to_string())
    }

    fn num(&mut self, quantity: &str, model: &str, value: f64) {
        let _ = writeln!(self.0, "{quantity},{model},{}", fmt_f(value));
    }

    fn int(&mut self, quantity: &str, model: &str, value: usize) {
        let _ = writeln!(self.0, "{quantity},{model},{value}");
    }

    fn text(&mut self, quantity: &str, model: &str, value: &str) {
        let _ = writeln!(self.0, "{quantity},{model},{value}");
    }
}

fn fidelity_csv(curve: &FidelityCurve) -> String {
    let mut s = String::from("t,F_mean,F_stderr\n");
    let zeros;
    let se = match curve.stderr() {
        Some(se) => se,
        None => {
            zeros = vec![0.0; curve.values().len()];
            &zeros
        }
    };
    for (t, (f, e)) in curve.values().iter().zip(se).enumerate() {
        let _ = writeln!(s, "{t},{},{}", fmt_f(*f), fmt_f(*e));
    }
    s
}

fn density_csv(centers: &[f64], densities: &[f64]) -> String {
    let mut s = String::from("bin_center,density\n");
    for (c, d) in centers.iter().zip(densities) {
        let _ = writeln!(s, "{},{}", fmt_f(*c), fmt_f(*d));
    }
    s
}

/// A system with its swept parameter fixed.
enum System {
    Fixed(FixedOperator),
    Interpolating(InterpolatingSource),
    Blocks(BlockSource),
}

impl System {
    fn source(&self) -> &dyn OperatorSource {
        match self {
            System::Fixed(s) => s,
            System::Interpolating(s) => s,
            System::Blocks(s) => s,
        }
    }
}

struct Builder {
    kicked_top: Option<KickedTop>,
    sector: Option<SectorTransform>,
}

impl Builder {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        let (kicked_top, sector) = match &config.system {
            SystemConfig::Qkt { two_j, .. } => (Some(KickedTop::new(SpinJ::new(*two_j))?), None),
            SystemConfig::QktSector { two_j, sector, .. } => {
                let spin = SpinJ::new(*two_j);
                info!("building sector {} of 2J = {two_j}", sector.label());
                (Some(KickedTop::new(spin)?), Some(sector_basis(spin, *sector)?))
            }
            _ => (None, None),
        };
        Ok(Self { kicked_top, sector })
    }

    fn system(&self, config: &ExperimentConfig, value: f64) -> Result<System> {
        Ok(match &config.system {
            SystemConfig::Qkt { .. } | SystemConfig::QktSector { .. } => {
                let top = self.kicked_top.as_ref().expect("kicked top built");
                let u = top.floquet(value)?;
                let u = match &self.sector {
                    Some(t) => restrict(&u, t)?,
                    None => u,
                };
                System::Fixed(FixedOperator(u))
            }
            SystemConfig::Interpolating { n, .. } => System::Interpolating(InterpolatingSource {
                n: *n,
                delta: value,
            }),
            SystemConfig::InterpolatingBlocks { block_dim, .. } => System::Blocks(BlockSource {
                block_dim: *block_dim,
                delta: value,
            }),
        })
    }
}

fn perturbation_generator(config: &ExperimentConfig, p: &PerturbationConfig) -> Result<PerturbationHamiltonian> {
    let dim = config.system.dim();
    let basis = match p.basis {
        BasisKind::Identity => BasisSpec::Identity,
        BasisKind::Pairing => BasisSpec::Pairing,
        BasisKind::CollectiveX => BasisSpec::CollectiveX,
        BasisKind::Random => BasisSpec::Random { seed: p.basis_seed },
        BasisKind::Custom => {
            let path = p.basis_file.as_ref().expect("validated");
            BasisSpec::Custom(read_basis_file(path, dim)?)
        }
    };
    PerturbationSpec {
        n_q: p.n_q,
        epsilon: p.epsilon[0],
        axis: p.axis,
        basis,
    }
    .hamiltonian(dim)
}

fn trial_plan(config: &ExperimentConfig) -> TrialPlan {
    let initial = match (config.trials.initial_state, &config.system) {
        (InitialKind::Coherent, SystemConfig::Qkt { two_j, .. }) => {
            InitialState::Coherent(SpinJ::new(*two_j))
        }
        _ => InitialState::Haar,
    };
    TrialPlan {
        n_states: config.trials.n_states,
        n_operators: config.trials.n_operators,
        master_seed: config.trials.master_seed,
        steps: config.steps,
        initial,
    }
}

fn ldos_for(
    system: &dyn OperatorSource,
    p: &UnitaryMatrix,
    config: &ExperimentConfig,
) -> Result<LdosResult> {
    let hists = (0..config.trials.n_operators)
        .map(|op| {
            let first = op * config.trials.n_states;
            let wrap = |stage: &'static str| {
                move |e| Error::Trial {
                    trial: first,
                    stage,
                    source: Box::new(e),
                }
            };
            let u = system
                .operator(op, seed::operator_seed(config.trials.master_seed, op as u64))
                .map_err(wrap("operator construction"))?;
            let pair = EchoPair::new(u, p).map_err(wrap("echo setup"))?;
            ldos(pair.unperturbed(), pair.perturbed(), config.analysis.n_bins)
                .map_err(wrap("ldos"))
        })
        .collect::<Result<Vec<_>>>()?;
    let histogram = average_histograms(&hists)?;
    let fit = |shape| match fit_ldos(&histogram, shape) {
        Ok(f) => Some(f),
        Err(e) => {
            warn!("{} fit failed: {e}", shape.name());
            None
        }
    };
    Ok(LdosResult {
        lorentzian: fit(LineShape::Lorentzian),
        gaussian: fit(LineShape::Gaussian),
        histogram,
    })
}

fn record_ldos(fits: &mut FitsTable, label: &str, r: &LdosResult) {
    for f in [r.lorentzian, r.gaussian].into_iter().flatten() {
        let m = f.model.name();
        fits.num(&format!("{label}/ldos_width"), m, f.width);
        fits.num(&format!("{label}/ldos_center"), m, f.center);
        fits.num(&format!("{label}/ldos_rss"), m, f.rss);
    }
}

/// Runs every point of `config` in memory.
pub fn compute_outputs(config: &ExperimentConfig) -> Result<RunOutputs> {
    let mut notes = Table::new();
    notes.insert(
        "classification_threshold".into(),
        Value::Float(CURVATURE_THRESHOLD),
    );
    let builder = Builder::new(config)?;
    if let Some(t) = &builder.sector {
        notes.insert("sector_dim".into(), Value::Integer(t.sector_dim() as i64));
        notes.insert("sector_label".into(), Value::String(t.label().into()));
    }
    if let Some(r) = config.analysis.reference_rate {
        notes.insert("reference_rate".into(), Value::Float(r));
        notes.insert(
            "reference_rate_caveat".into(),
            Value::String(
                "the reference value uses an unstated normalisation of the perturbation; \
                 fitted and RMT rates here share one convention and only their ratio is comparable"
                    .into(),
            ),
        );
    }
    let out = match config.experiment {
        ExperimentKind::Fidelity | ExperimentKind::Ldos => run_echo(config, &builder)?,
        ExperimentKind::EnsembleStats => run_ensemble_stats(config, &builder)?,
        ExperimentKind::SectorInfo => run_sector_info(config, &builder)?,
    };
    Ok(RunOutputs {
        files: out.0,
        points: out.1,
        notes,
    })
}

type Produced = (Vec<OutputFile>, Vec<PointResult>);

fn run_echo(config: &ExperimentConfig, builder: &Builder) -> Result<Produced> {
    let p_cfg = config.perturbation.as_ref().expect("validated");
    let v = perturbation_generator(config, p_cfg)?;
    let plan = trial_plan(config);
    let (name, values) = config.system.sweep();
    let do_fidelity = config.experiment == ExperimentKind::Fidelity;
    let do_ldos = config.experiment == ExperimentKind::Ldos || config.analysis.ldos;
    let mut files = Vec::new();
    let mut points = Vec::new();
    let mut fits = FitsTable::new();
    for &value in values {
        let system = builder.system(config, value)?;
        for &eps in &p_cfg.epsilon {
            let label = point_label(name, value, Some(eps));
            info!("running {label}");
            let p = perturbation_unitary(&v, eps);
            let rmt = rmt_rate(&v, eps);
            let mut point = PointResult {
                label: label.clone(),
                parameter: value,
                epsilon: Some(eps),
                curve: None,
                fit: None,
                rmt_rate: Some(rmt),
                ldos: None,
                spacings: None,
            };
            fits.num(&format!("{label}/rmt_rate"), "rmt", rmt);
            if do_fidelity {
                let curve = average_curves(&trial_curves(system.source(), &p, &plan)?)?;
                files.push(OutputFile {
                    name: format!("fidelity_{label}.csv"),
                    contents: fidelity_csv(&curve),
                });
                match fit_exponential_decay(&curve, config.analysis.f_floor) {
                    Ok(fit) => {
                        fits.num(&format!("{label}/rate"), "exponential", fit.rate);
                        fits.num(&format!("{label}/intercept"), "exponential", fit.intercept);
                        fits.num(&format!("{label}/r_squared"), "exponential", fit.r_squared);
                        fits.num(&format!("{label}/c1"), "quadratic", fit.c1);
                        fits.num(&format!("{label}/c2"), "quadratic", fit.c2);
                        fits.int(&format!("{label}/t_lo"), "window", fit.t_lo);
                        fits.int(&format!("{label}/t_hi"), "window", fit.t_hi);
                        fits.num(
                            &format!("{label}/curvature_ratio"),
                            "classification",
                            fit.curvature_ratio(),
                        );
                        fits.text(
                            &format!("{label}/class"),
                            "classification",
                            &fit.class().to_string(),
                        );
                        info!("{label}: rate {:.4e}, class {}", fit.rate, fit.class());
                        point.fit = Some(fit);
                    }
                    Err(e) => {
                        warn!("{label}: {e}");
                        fits.text(&format!("{label}/class"), "classification", "unfit");
                    }
                }
                if let Some(t) = curve.time_to(0.1) {
                    fits.int(&format!("{label}/time_to_0.1"), "threshold", t);
                }
                point.curve = Some(curve);
            }
            if do_ldos {
                let r = ldos_for(system.source(), &p, config)?;
                files.push(OutputFile {
                    name: format!("ldos_{label}.csv"),
                    contents: density_csv(&r.histogram.bin_centers(), r.histogram.densities()),
                });
                record_ldos(&mut fits, &label, &r);
                point.ldos = Some(r);
            }
            points.push(point);
        }
    }
    files.push(OutputFile {
        name: FITS_FILE.into(),
        contents: fits.0,
    });
    Ok((files, points))
}

fn run_ensemble_stats(config: &ExperimentConfig, builder: &Builder) -> Result<Produced> {
    let (name, values) = config.system.sweep();
    let mut files = Vec::new();
    let mut points = Vec::new();
    let mut fits = FitsTable::new();
    for &value in values {
        let label = point_label(name, value, None);
        info!("sampling {label}");
        let system = builder.system(config, value)?;
        let source = system.source();
        let samples = (0..config.trials.n_operators)
            .map(|op| {
                source
                    .operator(op, seed::operator_seed(config.trials.master_seed, op as u64))
                    .map_err(|e| Error::Trial {
                        trial: op * config.trials.n_states,
                        stage: "operator construction",
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let h = spacing_distribution(&samples)?;
        files.push(OutputFile {
            name: format!("spacing_{label}.csv"),
            contents: density_csv(&h.bin_centers(), &h.densities),
        });
        fits.num(&format!("{label}/mean_spacing"), "unfolded", h.mean_spacing());
        for (model, ks) in [("poisson", h.ks_poisson), ("wigner_unitary", h.ks_wigner)] {
            fits.num(&format!("{label}/ks_statistic"), model, ks.statistic);
            fits.num(&format!("{label}/ks_p_value"), model, ks.p_value);
        }
        points.push(PointResult {
            label,
            parameter: value,
            epsilon: None,
            curve: None,
            fit: None,
            rmt_rate: None,
            ldos: None,
            spacings: Some(h),
        });
    }
    let n_q = config
        .perturbation
        .as_ref()
        .map(|p| p.n_q)
        .or_else(|| {
            let d = config.system.dim();
            d.is_power_of_two().then(|| d.trailing_zeros())
        });
    if let Some(n_q) = n_q {
        let z = collective_hamiltonian(n_q, Axis::Z)?;
        let x = collective_hamiltonian(n_q, Axis::X)?;
        let diff = conjugate_collective_x(&z)?
            .matrix()
            .matrix()
            .max_abs_diff(x.matrix().matrix());
        fits.num("collective_x/max_abs_diff", "conjugation", diff);
    }
    files.push(OutputFile {
        name: FITS_FILE.into(),
        contents: fits.0,
    });
    Ok((files, points))
}

fn run_sector_info(config: &ExperimentConfig, builder: &Builder) -> Result<Produced> {
    let t = builder.sector.as_ref().expect("validated");
    let mut fits = FitsTable::new();
    let s = t.isometry();
    let iso = s
        .adjoint_mul(s)
        .max_abs_diff(&crate::matops::ComplexMatrix::identity(t.sector_dim()));
    fits.int("sector/source_dim", "sector", t.source_dim());
    fits.int("sector/dim", "sector", t.sector_dim());
    fits.num("sector/isometry_error", "sector", iso);
    let (name, values) = config.system.sweep();
    let mut points = Vec::new();
    for &value in values {
        let label = point_label(name, value, None);
        let System::Fixed(FixedOperator(u)) = builder.system(config, value)? else {
            unreachable!("sector systems are fixed operators")
        };
        fits.num(
            &format!("{label}/restricted_unitarity"),
            "sector",
            u.matrix().unitarity_violation(),
        );
        points.push(PointResult {
            label,
            parameter: value,
            epsilon: None,
            curve: None,
            fit: None,
            rmt_rate: None,
            ldos: None,
            spacings: None,
        });
    }
    Ok((
        vec![OutputFile {
            name: FITS_FILE.into(),
            contents: fits.0,
        }],
        points,
    ))
}

fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for f in files {
        let path = dir.join(&f.name);
        if let Err(e) = fs::write(&path, &f.contents).map_err(io(&path)) {
            remove_all(&written);
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `config`, writes its outputs and the manifest into
/// `config.output_dir` and returns the manifest. Nothing is left behind on
/// failure.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunManifest> {
    run_experiment_with_outputs(config, options).map(|(m, _)| m)
}

/// [`run_experiment`] that also returns the in-memory results.
pub fn run_experiment_with_outputs(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<(RunManifest, RunOutputs)> {
    let start = Instant::now();
    let outputs = with_pool(options.threads, || compute_outputs(config))??;
    let written = write_outputs(&config.output_dir, &outputs.files)?;
    let manifest = RunManifest::new(
        config.clone(),
        start.elapsed().as_secs_f64(),
        &outputs.files,
        outputs.notes.clone(),
    );
    let path = config.output_dir.join(MANIFEST_FILE);
    if let Err(source) = fs::write(&path, manifest.to_toml()) {
        remove_all(&written);
        return Err(Error::Io { path, source });
    }
    Ok((manifest, outputs))
}
