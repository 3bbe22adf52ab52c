//! `uws` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
//! failure. Diagnostics go to stderr; data goes to the declared output files
//! or stdout. Every report starts with `# key=value` lines recording the
//! effective configuration.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ensemble::container::write_atomic;
use crate::ensemble::{
    adapt_coefficients, extract_universal, load_weights, merge_models, project_model,
    reconstruct_model, save_weights, scree_report, AdaptMethod, AdaptationBudget, CoefficientSet,
    ExtractionConfig, LayerExclusion, MemoryPreset, MemorySpec, ModelWeights, Stacking,
    UniversalSubspace,
};
use crate::error::Error;
use crate::hosvd::{Centering, SliceCoefficients};
use crate::report::{Cell, ReportFormat, Table};
use crate::spectral::RankPolicy;
use crate::tensor::{DenseTensor, Matrix};
use crate::theory::{
    convergence_study, dk_study, ensemble_bounds, BoundParameters, ConvergenceConfig, NormControl,
    Perturbation,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "uws", version, about = "Universal weight subspaces: extraction, projection, merging, adaptation and theory checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a universal subspace to an ensemble of models.
    Extract(ExtractArgs),
    /// Print the explained-variance table of a fitted subspace.
    Scree(ScreeArgs),
    /// Express one model as subspace coefficients.
    Project(ProjectArgs),
    /// Rebuild a model from its coefficients.
    Reconstruct(ReconstructArgs),
    /// Merge models by averaging their coefficients.
    Merge(MergeArgs),
    /// Fit one layer's coefficients to linear input/output data.
    Adapt(AdaptArgs),
    /// Storage ratio of a shared basis against separate models.
    Memcalc(MemcalcArgs),
    /// Synthetic checks of the task-ensemble bounds.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
}

#[derive(Subcommand, Debug)]
enum TheoryCommand {
    /// Monte-Carlo study of operator and subspace error against T.
    Converge(ConvergeArgs),
    /// Evaluate the operator and subspace bounds.
    Bounds(BoundsArgs),
    /// Check the Davis-Kahan inequality on random operators.
    DkCheck(DkArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CenterArg {
    Feature,
    Global,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
struct PolicyArgs {
    /// Smallest rank reaching this cumulative explained variance (default 0.95).
    #[arg(long)]
    tau: Option<f64>,
    /// Keep components whose explained-variance ratio exceeds this floor.
    #[arg(long)]
    eigen_floor: Option<f64>,
    /// Keep exactly K components (fewer if the data has lower rank).
    #[arg(long)]
    fixed_k: Option<usize>,
    /// Keep singular values above the optimal hard threshold.
    #[arg(long)]
    hard_threshold: bool,
    /// Known noise level for --hard-threshold; estimated when omitted.
    #[arg(long, requires = "hard_threshold")]
    noise_sigma: Option<f64>,
}

impl PolicyArgs {
    fn policy(&self) -> RankPolicy {
        if let Some(epsilon) = self.eigen_floor {
            RankPolicy::EigenFloor { epsilon }
        } else if let Some(k) = self.fixed_k {
            RankPolicy::FixedK { k }
        } else if self.hard_threshold {
            RankPolicy::HardThreshold {
                noise_sigma: self.noise_sigma,
            }
        } else {
            RankPolicy::CumulativeVariance {
                tau: self.tau.unwrap_or(0.95),
            }
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Model files or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<String>,
    /// Subspace output file.
    #[arg(long)]
    out: PathBuf,
    /// Full scree table output file.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// 1 = flattened models (PCA), 2 = row-stacked matrix, 3 = model mode.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    order: u8,
    /// Comma-separated layers to leave out; `none` keeps every shared layer.
    /// By default the first and last layers are left out.
    #[arg(long, value_delimiter = ',')]
    exclude_layers: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "feature")]
    center: CenterArg,
    /// Architecture label stored in the subspace.
    #[arg(long, default_value = "unspecified")]
    architecture: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct ScreeArgs {
    #[arg(long)]
    subspace: PathBuf,
    /// Components shown per layer on stdout.
    #[arg(long, default_value_t = 100)]
    top: usize,
    /// Write the untruncated table here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    subspace: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    subspace: PathBuf,
    #[arg(long)]
    coeffs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MergeArgs {
    #[arg(long)]
    subspace: PathBuf,
    /// Model files or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    models: Vec<String>,
    /// Comma-separated weights, one per model in sorted path order.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Merge report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    ClosedForm,
    Gd,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    subspace: PathBuf,
    #[arg(long)]
    layer: String,
    /// Inputs, one sample per line, `cols` comma-separated values.
    #[arg(long)]
    x: PathBuf,
    /// Targets, one sample per line, `rows` comma-separated values.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value = "closed-form")]
    method: MethodArg,
    /// Gradient step size; defaults to 0.5 / L.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Ridge added to the normal equations (closed form).
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value = "adapted")]
    model_id: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct MemcalcArgs {
    /// Number of models.
    #[arg(long, requires_all = ["per_model", "basis", "coeffs"])]
    t: Option<u64>,
    /// Parameters per model.
    #[arg(long, requires = "t")]
    per_model: Option<u64>,
    /// Parameters in the shared basis.
    #[arg(long, requires = "t")]
    basis: Option<u64>,
    /// Coefficients per model.
    #[arg(long, requires = "t")]
    coeffs: Option<u64>,
    /// Parameters in the stored mean.
    #[arg(long, default_value_t = 0)]
    mean: u64,
    /// Append the documented presets (always shown when no custom spec is given).
    #[arg(long)]
    presets: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    Clip,
    Sphere,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PerturbationArg {
    Isotropic,
    Radial,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
    t_grid: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 10.0)]
    b: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// Planted eigenvalues, comma-separated; default `k` ones.
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "clip")]
    norm: NormArg,
    #[arg(long, value_enum, default_value = "isotropic")]
    perturbation: PerturbationArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    b: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    t: usize,
    #[arg(long)]
    eta_bar: f64,
    #[arg(long)]
    eta2_bar: f64,
    #[arg(long)]
    gamma_k: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct DkArgs {
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Fixed rank; drawn per trial when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    perturb: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial table; only the summary is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Parse(_) | Error::Io { .. } => EXIT_DATA,
            Error::NumericalFailure(_)
            | Error::DegenerateSpectrum(_)
            | Error::RankDeficient { .. }
            | Error::Internal(_) => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

/// Runs `uws` with `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("uws: error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, out: &mut impl Write) -> CliResult<()> {
    match command {
        Command::Extract(a) => extract(a, out),
        Command::Scree(a) => scree(a, out),
        Command::Project(a) => project(a, out),
        Command::Reconstruct(a) => reconstruct(a, out),
        Command::Merge(a) => merge(a, out),
        Command::Adapt(a) => adapt(a, out),
        Command::Memcalc(a) => memcalc(a, out),
        Command::Theory { command } => match command {
            TheoryCommand::Converge(a) => converge(a, out),
            TheoryCommand::Bounds(a) => bounds(a, out),
            TheoryCommand::DkCheck(a) => dk_check(a, out),
        },
    }
}

fn emit(out: &mut impl Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::data(format!("stdout: {e}")))
}

fn write_report(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Expands each pattern (a literal path is its own pattern), sorted and
/// deduplicated. A pattern matching nothing is an error.
fn expand_models(patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)
            .map_err(|e| Failure::data(format!("bad glob {p:?}: {e}")))?
            .filter_map(std::result::Result::ok)
            .filter(|m| m.is_file())
            .collect();
        if matches.is_empty() {
            return Err(Failure::data(format!("no model files match {p:?}")));
        }
        paths.extend(matches);
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn load_models(paths: &[PathBuf]) -> CliResult<Vec<ModelWeights>> {
    paths
        .iter()
        .map(|p| load_weights(p).map_err(|e| Failure::from(e).context(p.display())))
        .collect()
}

fn load_subspace(path: &Path) -> CliResult<UniversalSubspace> {
    UniversalSubspace::load(path).map_err(|e| Failure::from(e).context(path.display()))
}

fn policy_label(p: &RankPolicy) -> String {
    match p {
        RankPolicy::CumulativeVariance { tau } => format!("cumulative_variance(tau={tau})"),
        RankPolicy::EigenFloor { epsilon } => format!("eigen_floor(epsilon={epsilon})"),
        RankPolicy::HardThreshold { noise_sigma: None } => "hard_threshold(sigma=estimated)".into(),
        RankPolicy::HardThreshold { noise_sigma: Some(s) } => format!("hard_threshold(sigma={s})"),
        RankPolicy::FixedK { k } => format!("fixed_k(k={k})"),
    }
}

fn extract(a: ExtractArgs, out: &mut impl Write) -> CliResult<()> {
    let paths = expand_models(&a.models)?;
    let models = load_models(&paths)?;
    let exclusion = match &a.exclude_layers {
        None => LayerExclusion::FirstAndLast,
        Some(v) if v.len() == 1 && v[0] == "none" => LayerExclusion::None,
        Some(v) => LayerExclusion::Named(v.iter().filter(|s| !s.is_empty()).cloned().collect()),
    };
    let config = ExtractionConfig::default()
        .with_architecture(&a.architecture)
        .with_policy(a.policy.policy())
        .with_stacking(Stacking::from_order(a.order as usize)?)
        .with_centering(match a.center {
            CenterArg::Feature => Centering::Feature,
            CenterArg::Global => Centering::Global,
        })
        .with_exclusion(exclusion.clone());
    let u = extract_universal(&models, &config)?;
    u.save(&a.out)?;

    let mut table = scree_report(&u).table();
    table.config = extraction_header(&u, &paths);
    write_report(&a.report, &table.render(a.format.into()))?;

    let mut summary = String::new();
    for (name, layer) in &u.layers {
        summary.push_str(&format!("{name}\t{}x{}\tranks {:?}\n", layer.rows, layer.cols, layer.model.ranks()));
    }
    for name in &u.excluded {
        summary.push_str(&format!("{name}\texcluded\n"));
    }
    summary.push_str(&format!(
        "wrote {} ({} layers from {} models) and {}\n",
        a.out.display(),
        u.layers.len(),
        models.len(),
        a.report.display()
    ));
    emit(out, &summary)
}

fn extraction_header(u: &UniversalSubspace, paths: &[PathBuf]) -> Vec<(String, String)> {
    let c = &u.config;
    let exclusion = match &c.exclusion {
        LayerExclusion::FirstAndLast => "first_and_last".to_string(),
        LayerExclusion::None => "none".to_string(),
        LayerExclusion::Named(v) => v.join(" "),
    };
    let mut h = vec![
        ("command".to_string(), "extract".to_string()),
        ("architecture".into(), c.architecture_id.clone()),
        ("models".into(), paths.len().to_string()),
        ("model_files".into(), paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" ")),
        ("policy".into(), c.policies.iter().map(policy_label).collect::<Vec<_>>().join(" ")),
        ("order".into(), c.stacking.order().to_string()),
        ("center".into(), format!("{:?}", c.centering).to_lowercase()),
        ("exclusion".into(), exclusion),
        ("excluded".into(), u.excluded.join(" ")),
    ];
    for (name, l) in &u.layers {
        h.push((format!("ranks.{name}"), format!("{:?}", l.model.ranks())));
    }
    h
}

fn scree(a: ScreeArgs, out: &mut impl Write) -> CliResult<()> {
    let u = load_subspace(&a.subspace)?;
    let report = scree_report(&u);
    let header = |t: &mut Table, top: Option<usize>| {
        t.set("command", "scree").set("subspace", a.subspace.display());
        t.set("top", top.map_or("all".to_string(), |n| n.to_string()));
    };
    if let Some(path) = &a.out {
        let mut full = report.table();
        header(&mut full, None);
        write_report(path, &full.render(a.format.into()))?;
    }
    let mut shown = report.truncated(a.top).table();
    header(&mut shown, Some(a.top));
    emit(out, &shown.render(a.format.into()))
}

fn project(a: ProjectArgs, out: &mut impl Write) -> CliResult<()> {
    let u = load_subspace(&a.subspace)?;
    let w = load_weights(&a.model).map_err(|e| Failure::from(e).context(a.model.display()))?;
    let c = project_model(&u, &w)?;
    c.save(&a.out)?;
    emit(
        out,
        &format!(
            "wrote {}: {} coefficients over {} layers, {} layers passed through\n",
            a.out.display(),
            c.parameter_count(),
            c.coefficients.len(),
            c.passthrough.len()
        ),
    )
}

fn reconstruct(a: ReconstructArgs, out: &mut impl Write) -> CliResult<()> {
    let u = load_subspace(&a.subspace)?;
    let c = CoefficientSet::load(&a.coeffs).map_err(|e| Failure::from(e).context(a.coeffs.display()))?;
    let w = reconstruct_model(&u, &c)?;
    save_weights(&w, &a.out)?;
    emit(out, &format!("wrote {}: {} layers\n", a.out.display(), w.layers.len()))
}

fn merge(a: MergeArgs, out: &mut impl Write) -> CliResult<()> {
    let u = load_subspace(&a.subspace)?;
    let paths = expand_models(&a.models)?;
    let models = load_models(&paths)?;
    let (merged, report) = merge_models(&u, &models, a.weights.as_deref())?;
    save_weights(&merged, &a.out)?;
    if let Some(path) = &a.report {
        let doc = serde_json::json!({
            "command": "merge",
            "subspace": a.subspace.display().to_string(),
            "model_files": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "report": report,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::data(e.to_string()))?;
        text.push('\n');
        write_report(path, &text)?;
    }
    emit(
        out,
        &format!(
            "wrote {}: merged {} models ({} subspace layers, {} averaged, {} omitted)\n",
            a.out.display(),
            models.len(),
            report.merged_layers.len(),
            report.averaged_passthrough.len(),
            report.omitted.len()
        ),
    )
}

/// Reads a headerless numeric CSV. Blank lines and lines starting with `#`
/// are skipped.
pub fn read_csv_matrix(path: &Path) -> crate::Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{}:{}: non-finite value", path.display(), i + 1)));
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: {} values, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no data rows", path.display())));
    }
    let cols = rows[0].len();
    Ok(Matrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

fn adapt(a: AdaptArgs, out: &mut impl Write) -> CliResult<()> {
    let u = load_subspace(&a.subspace)?;
    let x = read_csv_matrix(&a.x)?;
    let y = read_csv_matrix(&a.y)?;
    let method = match a.method {
        MethodArg::ClosedForm => AdaptMethod::ClosedForm { ridge: a.ridge },
        MethodArg::Gd => AdaptMethod::Gradient {
            lr: a.lr,
            epochs: a.epochs,
        },
    };
    let (fitted, fit) = adapt_coefficients(&u, &a.layer, &x, &y, method)?;
    let mut set = CoefficientSet {
        model_id: a.model_id.clone(),
        coefficients: Default::default(),
        passthrough: Default::default(),
    };
    for name in u.layers.keys() {
        let c = if *name == a.layer {
            fitted.clone()
        } else {
            let shape = u.coefficient_shape(name)?;
            SliceCoefficients::new(DenseTensor::zeros(shape)?)
        };
        set.coefficients.insert(name.clone(), c.with_label(name.clone()));
    }
    set.save(&a.out)?;
    let mut table = fit.table();
    table
        .set("command", "adapt")
        .set("subspace", a.subspace.display())
        .set("x", a.x.display())
        .set("y", a.y.display())
        .set("model_id", &a.model_id);
    write_report(&a.report, &table.render(a.format.into()))?;
    emit(
        out,
        &format!(
            "layer {}: {} coefficients, final loss {:.6e}, relative residual {:.3e}\nwrote {} and {}\n",
            a.layer,
            fit.trainable_params,
            fit.final_loss,
            fit.relative_residual,
            a.out.display(),
            a.report.display()
        ),
    )
}

fn memcalc(a: MemcalcArgs, out: &mut impl Write) -> CliResult<()> {
    let mut table = Table::new(&[
        "name",
        "models",
        "per_model_params",
        "basis_params",
        "coeff_params_per_model",
        "mean_params",
        "ratio",
    ]);
    table.set("command", "memcalc");
    let row = |name: &str, s: &MemorySpec, ratio: f64| {
        vec![
            Cell::from(name),
            Cell::Int(s.models as i64),
            Cell::Int(s.per_model_params as i64),
            Cell::Int(s.basis_params as i64),
            Cell::Int(s.coeff_params_per_model as i64),
            Cell::Int(s.mean_params as i64),
            Cell::from(ratio),
        ]
    };
    let custom = a.t.map(|models| MemorySpec {
        models,
        per_model_params: a.per_model.unwrap_or(0),
        basis_params: a.basis.unwrap_or(0),
        coeff_params_per_model: a.coeffs.unwrap_or(0),
        mean_params: a.mean,
    });
    if let Some(spec) = &custom {
        let ratio = crate::ensemble::memory_savings(spec)?;
        table.push(row("custom", spec, ratio));
    }
    if custom.is_none() || a.presets {
        for p in MemoryPreset::all() {
            table.set(format!("preset.{}", p.name), p.description);
            table.push(row(p.name, &p.spec, p.ratio()));
        }
        let budget = AdaptationBudget::vit_base();
        table.set(
            "adaptation.vit-base",
            format!(
                "k={} x layers={} = {} trainable vs {} full",
                budget.k,
                budget.layers,
                budget.trainable(),
                budget.full_params
            ),
        );
    }
    emit(out, &table.render(a.format.into()))
}

fn converge(a: ConvergeArgs, out: &mut impl Write) -> CliResult<()> {
    let cfg = ConvergenceConfig {
        d: a.d,
        k: a.k,
        t_grid: a.t_grid,
        trials: a.trials,
        eta: a.eta,
        b: a.b,
        delta: a.delta,
        c1: a.c1,
        c2: a.c2,
        spectrum: a.spectrum.unwrap_or_default(),
        norm: match a.norm {
            NormArg::Clip => NormControl::Clip,
            NormArg::Sphere => NormControl::Sphere,
        },
        perturbation: match a.perturbation {
            PerturbationArg::Isotropic => Perturbation::Isotropic,
            PerturbationArg::Radial => Perturbation::Radial,
        },
        seed: a.seed,
    };
    let report = convergence_study(&cfg)?;
    let mut table = report.table();
    table.config.insert(0, ("command".into(), "theory converge".into()));
    let text = table.render(a.format.into());
    let Some(path) = &a.out else {
        return emit(out, &text);
    };
    write_report(path, &text)?;
    let mut summary = String::from("T\tmean_op_error\tmean_subspace_error\top_bound\tsubspace_bound\n");
    for g in &report.grid {
        summary.push_str(&format!(
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\n",
            g.t, g.mean_op_error, g.mean_subspace_error, g.op_bound, g.subspace_bound
        ));
    }
    summary.push_str(&match report.slope {
        Some(s) => format!("log-log slope {s:.4}\n"),
        None => "log-log slope undefined (fewer than two distinct T)\n".to_string(),
    });
    summary.push_str(&format!("wrote {}\n", path.display()));
    emit(out, &summary)
}

fn bounds(a: BoundsArgs, out: &mut impl Write) -> CliResult<()> {
    let mut p = BoundParameters::new(a.b, a.delta, a.t, a.eta_bar, a.eta2_bar);
    p.c1 = a.c1;
    p.c2 = a.c2;
    p.gamma_k = a.gamma_k;
    let b = ensemble_bounds(&p)?;
    let mut table = Table::new(&["op_bound", "subspace_bound"]);
    table
        .set("command", "theory bounds")
        .set("b", a.b)
        .set("delta", a.delta)
        .set("t", a.t)
        .set("eta_bar", a.eta_bar)
        .set("eta2_bar", a.eta2_bar)
        .set("gamma_k", a.gamma_k.map_or("none".to_string(), |g| g.to_string()))
        .set("c1", a.c1)
        .set("c2", a.c2)
        .set("delta_task", p.delta_task())
        .set("delta_across", p.delta_across());
    table.push(vec![Cell::from(b.op_bound), Cell::from(b.subspace_bound)]);
    emit(out, &table.render(a.format.into()))
}

fn dk_check(a: DkArgs, out: &mut impl Write) -> CliResult<()> {
    let study = dk_study(a.d, a.k, a.perturb, a.trials, a.seed)?;
    let mut table = study.table();
    table.config.insert(0, ("command".into(), "theory dk-check".into()));
    if let Some(path) = &a.out {
        write_report(path, &table.render(a.format.into()))?;
    }
    emit(
        out,
        &format!(
            "davis-kahan: {} trials, {} violations, max lhs/rhs {:.4}\n",
            study.trials, study.violations, study.max_ratio
        ),
    )
}
