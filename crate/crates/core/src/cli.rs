//! Command-line front end: `calibrate`, `simulate` and `ctt`.
//!
//! Exit codes: 0 success, 2 unreadable or unparseable input or unwritable
//! output, 3 refusal (nothing could be fitted), 4 some models failed while
//! others were reported.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ranked_table, Axis, RankedTable};
use crate::ctt::{clean_test, CttOptions, CttReport};
use crate::error::IrtError;
use crate::estimation::{estimate_from_rasch, estimate_rasch, EstimationConfig, FitResult};
use crate::matrix::ResponseMatrix;
use crate::model::{LinkFunction, ModelKind, ModelSpec, ParameterSet};
use crate::report;
use crate::simulation::{sample_population, simulate, SimulationScenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_REFUSAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TableAxis {
    Persons,
    Items,
    #[default]
    Both,
}

impl TableAxis {
    fn axes(self) -> &'static [Axis] {
        match self {
            TableAxis::Persons => &[Axis::Persons],
            TableAxis::Items => &[Axis::Items],
            TableAxis::Both => &[Axis::Persons, Axis::Items],
        }
    }
}

/// Everything a run needs. Loaded from an optional JSON file, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    pub models: Vec<ModelKind>,
    pub link: LinkFunction,
    pub estimation: EstimationConfig,
    pub ctt_options: CttOptions,
    pub clean: bool,
    pub output_format: OutputFormat,
    pub table_axis: TableAxis,
    pub seed: u64,
    pub n_persons: usize,
    pub n_items: usize,
    pub d_spread: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_path: None,
            out_path: None,
            models: ModelKind::ALL.to_vec(),
            link: LinkFunction::NormalOgive,
            estimation: EstimationConfig::default(),
            ctt_options: CttOptions::default(),
            clean: false,
            output_format: OutputFormat::Text,
            table_axis: TableAxis::Both,
            seed: 1,
            n_persons: 46,
            n_items: 44,
            d_spread: 0.3,
        }
    }
}

impl RunConfig {
    pub fn specs(&self) -> Vec<ModelSpec> {
        self.models
            .iter()
            .map(|&k| ModelSpec::new(k, self.link))
            .collect()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "irtcal",
    version,
    about = "Calibrate dichotomous test data under Rasch-family models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the requested models and print ranked person and item tables.
    Calibrate(CommonArgs),
    /// Write a simulated response matrix and a sidecar file with the true parameters.
    Simulate(CommonArgs),
    /// Classical item and person statistics, optionally writing the cleaned matrix.
    Ctt(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated list of rasch, 2pl-item, 2pl-person, 3p.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// logistic or normal.
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Run the classical cleaning pass before calibration.
    #[arg(long)]
    clean: bool,
    #[arg(long)]
    item_r_threshold: Option<f64>,
    #[arg(long)]
    person_quota: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long, value_enum)]
    axis: Option<TableAxis>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    persons: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    /// Log-scale spread of simulated discriminations around sqrt(2).
    #[arg(long)]
    d_spread: Option<f64>,
}

impl CommonArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if self.input.is_some() {
            cfg.input_path = self.input;
        }
        if self.out.is_some() {
            cfg.out_path = self.out;
        }
        if let Some(models) = self.models {
            cfg.models = models
                .iter()
                .map(|m| m.parse::<ModelKind>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
        }
        if let Some(link) = self.link {
            cfg.link = link.parse().map_err(|e: IrtError| e.to_string())?;
        }
        if let Some(tol) = self.tol {
            cfg.estimation.tolerance = tol;
        }
        if let Some(n) = self.max_iter {
            cfg.estimation.max_iterations = n;
        }
        cfg.clean |= self.clean;
        if let Some(t) = self.item_r_threshold {
            cfg.ctt_options.item_r_threshold = t;
        }
        if let Some(q) = self.person_quota {
            cfg.ctt_options.person_quota = q;
        }
        if let Some(f) = self.format {
            cfg.output_format = f;
        }
        if let Some(a) = self.axis {
            cfg.table_axis = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.persons {
            cfg.n_persons = n;
        }
        if let Some(n) = self.items {
            cfg.n_items = n;
        }
        if let Some(s) = self.d_spread {
            cfg.d_spread = s;
        }
        Ok(cfg)
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let (cmd, args): (fn(&RunConfig, &mut dyn Write, &mut dyn Write) -> i32, CommonArgs) = match cli.command {
        Command::Calibrate(a) => (run_calibrate, a),
        Command::Simulate(a) => (run_simulate, a),
        Command::Ctt(a) => (run_ctt, a),
    };
    let mut stderr = std::io::stderr();
    let cfg = match args.into_config() {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INPUT;
        }
    };
    cmd(&cfg, &mut std::io::stdout(), &mut stderr)
}

/// Machine-readable summary of one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelSpec,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub last_change: f64,
    pub excluded_persons: Vec<String>,
    pub excluded_items: Vec<String>,
    /// Estimates keyed by the labels in `persons` and `items`.
    pub params: ParameterSet,
    pub persons: Vec<String>,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFailure {
    pub model: ModelSpec,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub input: Option<PathBuf>,
    pub n_persons: usize,
    pub n_items: usize,
    pub ctt: Option<CttReport>,
    pub estimation: EstimationConfig,
    pub baseline: ModelSpec,
    pub models: Vec<ModelSummary>,
    pub failures: Vec<ModelFailure>,
    pub tables: Vec<RankedTable>,
}

fn load_matrix(cfg: &RunConfig, err: &mut dyn Write) -> Result<ResponseMatrix, i32> {
    let Some(path) = &cfg.input_path else {
        let _ = writeln!(err, "error: --input is required");
        return Err(EXIT_INPUT);
    };
    let file = fs::File::open(path).map_err(|e| {
        let _ = writeln!(err, "error: {}: {e}", path.display());
        EXIT_INPUT
    })?;
    ResponseMatrix::read_csv(std::io::BufReader::new(file)).map_err(|e| {
        let _ = writeln!(err, "error: {}: {e}", path.display());
        match e {
            IrtError::Parse { .. } | IrtError::Io(_) => EXIT_INPUT,
            _ => EXIT_REFUSAL,
        }
    })
}

/// Writes `text` to `--out` if given, otherwise to `out`.
fn emit(cfg: &RunConfig, text: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cfg.out_path {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => out.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: cannot write output: {e}");
            EXIT_INPUT
        }
    }
}

fn summarize(spec: ModelSpec, fit: &FitResult, m: &ResponseMatrix) -> ModelSummary {
    let pick = |ids: &[String], idx: &[usize]| idx.iter().map(|&k| ids[k].clone()).collect();
    ModelSummary {
        model: spec,
        converged: fit.converged,
        iterations: fit.iterations,
        log_likelihood: fit.log_likelihood,
        last_change: fit.last_change,
        excluded_persons: pick(m.person_ids(), &fit.excluded_persons),
        excluded_items: pick(m.item_ids(), &fit.excluded_items),
        params: fit.params.clone(),
        persons: pick(m.person_ids(), &fit.kept_persons),
        items: pick(m.item_ids(), &fit.kept_items),
    }
}

pub fn run_calibrate(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if cfg.models.is_empty() {
        let _ = writeln!(err, "error: no models requested");
        return EXIT_INPUT;
    }
    if let Err(e) = cfg.estimation.validate() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_INPUT;
    }
    let raw = match load_matrix(cfg, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let (matrix, ctt) = if cfg.clean {
        match clean_test(&raw, &cfg.ctt_options) {
            Ok((m, r)) => (m, Some(r)),
            Err(e) => {
                let _ = writeln!(err, "error: cleaning: {e}");
                return EXIT_REFUSAL;
            }
        }
    } else {
        (raw, None)
    };

    let rasch = match estimate_rasch(&matrix, cfg.link, &cfg.estimation) {
        Ok(fit) => fit,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_REFUSAL;
        }
    };

    let mut specs = cfg.specs();
    specs.dedup();
    let outcomes: Vec<(ModelSpec, crate::error::Result<FitResult>)> = specs
        .par_iter()
        .map(|&spec| {
            let fit = if spec.kind == ModelKind::Rasch {
                Ok(rasch.clone())
            } else {
                estimate_from_rasch(&matrix, spec, &cfg.estimation, &rasch)
            };
            (spec, fit)
        })
        .collect();

    let mut fitted = Vec::new();
    let mut failures = Vec::new();
    for (spec, outcome) in outcomes {
        match outcome {
            Ok(fit) => fitted.push((spec, fit)),
            Err(e) => {
                let _ = writeln!(err, "error: {spec}: {e}");
                failures.push(ModelFailure {
                    model: spec,
                    error: e.to_string(),
                });
            }
        }
    }
    if fitted.is_empty() {
        return fit_status(0, failures.len());
    }
    for (spec, fit) in &fitted {
        if !fit.converged {
            let _ = writeln!(
                err,
                "warning: {spec} did not converge in {} iterations (last change {:.3e})",
                fit.iterations, fit.last_change
            );
        }
    }

    let baseline = match fitted.iter().find(|(s, _)| s.kind == ModelKind::ThreeParam) {
        Some((s, _)) => *s,
        None => {
            let last = specs
                .iter()
                .rev()
                .find(|s| fitted.iter().any(|(f, _)| f == *s))
                .copied();
            let last = last.expect("at least one fitted model");
            if fitted.len() > 1 {
                let _ = writeln!(err, "warning: 3p not fitted, comparing against {last}");
            }
            last
        }
    };

    let mut tables = Vec::new();
    for &axis in cfg.table_axis.axes() {
        match ranked_table(&fitted, axis, baseline, &matrix) {
            Ok(t) => tables.push(t),
            Err(e) => {
                let _ = writeln!(err, "error: building {axis:?} table: {e}");
                return EXIT_REFUSAL;
            }
        }
    }

    let report = CalibrationReport {
        input: cfg.input_path.clone(),
        n_persons: matrix.n_persons(),
        n_items: matrix.n_items(),
        ctt,
        estimation: cfg.estimation.clone(),
        baseline,
        models: fitted.iter().map(|(s, f)| summarize(*s, f, &matrix)).collect(),
        failures,
        tables,
    };
    let text = match render_calibration(&report, cfg.output_format) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    match emit(cfg, &text, out, err) {
        EXIT_OK => fit_status(report.models.len(), report.failures.len()),
        code => code,
    }
}

/// Exit status once all requested models have been attempted.
pub fn fit_status(fitted: usize, failed: usize) -> i32 {
    match (fitted, failed) {
        (0, _) => EXIT_REFUSAL,
        (_, 0) => EXIT_OK,
        _ => EXIT_PARTIAL,
    }
}

pub fn render_calibration(report: &CalibrationReport, format: OutputFormat) -> Result<String, String> {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
            s.push('\n');
            Ok(s)
        }
        OutputFormat::Csv => {
            let mut s = String::new();
            for (k, t) in report.tables.iter().enumerate() {
                if k > 0 {
                    s.push('\n');
                }
                s.push_str(&report::table_csv(t).map_err(|e| e.to_string())?);
            }
            Ok(s)
        }
        OutputFormat::Text => {
            let mut s = String::new();
            for m in &report.models {
                s.push_str(&format!(
                    "{:<12} loglik {:>12.3}  iterations {:>4}  converged {}\n",
                    m.model.kind.title(),
                    m.log_likelihood,
                    m.iterations,
                    if m.converged { "yes" } else { "no" }
                ));
            }
            for f in &report.failures {
                s.push_str(&format!("{:<12} failed: {}\n", f.model.kind.title(), f.error));
            }
            for t in &report.tables {
                s.push('\n');
                s.push_str(&report::table_text(t));
            }
            Ok(s)
        }
    }
}

/// Sidecar written next to a simulated matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub population_seed: u64,
    pub d_spread: f64,
    pub scenario: SimulationScenario,
    pub persons: Vec<String>,
    pub items: Vec<String>,
}

/// Path of the true-parameter file for a simulated matrix at `out`.
pub fn truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

/// Simulates one matrix. The population is drawn with `seed`, the responses
/// with `seed + 1`. The first requested model generates the data.
pub fn run_simulate(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(path) = &cfg.out_path else {
        let _ = writeln!(err, "error: --out is required");
        return EXIT_INPUT;
    };
    let Some(&kind) = cfg.models.first() else {
        let _ = writeln!(err, "error: no models requested");
        return EXIT_INPUT;
    };
    let spec = ModelSpec::new(kind, cfg.link);
    let simulated = sample_population(cfg.n_persons, cfg.n_items, cfg.seed, cfg.d_spread)
        .and_then(|pop| SimulationScenario::new(spec, pop, cfg.seed.wrapping_add(1)))
        .and_then(|sc| simulate(&sc).map(|m| (sc, m)));
    let (scenario, matrix) = match simulated {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let mut csv = Vec::new();
    if let Err(e) = matrix.write_csv(&mut csv) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_INPUT;
    }
    let truth = SimulationTruth {
        population_seed: cfg.seed,
        d_spread: cfg.d_spread,
        scenario,
        persons: matrix.person_ids().to_vec(),
        items: matrix.item_ids().to_vec(),
    };
    let sidecar = truth_path(path);
    let json = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
    for (p, bytes) in [
        (path.as_path(), csv.as_slice()),
        (sidecar.as_path(), json.as_bytes()),
    ] {
        if let Err(e) = fs::write(p, bytes) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_INPUT;
        }
    }
    let _ = writeln!(
        out,
        "wrote {}x{} {} matrix to {} (true parameters in {})",
        cfg.n_persons,
        cfg.n_items,
        spec,
        path.display(),
        sidecar.display()
    );
    EXIT_OK
}

/// Prints the classical report. With `--out`, also writes the cleaned matrix.
pub fn run_ctt(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let matrix = match load_matrix(cfg, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let (cleaned, report) = match clean_test(&matrix, &cfg.ctt_options) {
        Ok(v) => v,
        Err(e @ IrtError::Refusal(_)) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_REFUSAL;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let text = match cfg.output_format {
        OutputFormat::Text => report::ctt_text(&report, &matrix),
        OutputFormat::Csv => match report::ctt_csv(&report, &matrix) {
            Ok(s) => s,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INPUT;
            }
        },
        OutputFormat::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    };
    if let Err(e) = out.write_all(text.as_bytes()) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_INPUT;
    }
    if let Some(path) = &cfg.out_path {
        let written = fs::File::create(path)
            .map_err(IrtError::from)
            .and_then(|f| cleaned.write_csv(std::io::BufWriter::new(f)));
        if let Err(e) = written {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            return EXIT_INPUT;
        }
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"models": ["rasch"], "link": "logistic", "seed": 5, "estimation": {"tolerance": 0.01}}"#,
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "irtcal",
            "calibrate",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .unwrap();
        let Command::Calibrate(args) = cli.command else {
            panic!()
        };
        let cfg = args.into_config().unwrap();
        assert_eq!(cfg.models, vec![ModelKind::Rasch]);
        assert_eq!(cfg.link, LinkFunction::Logistic);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.estimation.tolerance, 0.01);
        assert_eq!(
            cfg.estimation.max_iterations,
            EstimationConfig::default().max_iterations
        );
    }

    #[test]
    fn model_list_parsing() {
        let cli =
            Cli::try_parse_from(["irtcal", "calibrate", "--models", "rasch,3p", "--link", "normal"]).unwrap();
        let Command::Calibrate(args) = cli.command else {
            panic!()
        };
        let cfg = args.into_config().unwrap();
        assert_eq!(cfg.models, vec![ModelKind::Rasch, ModelKind::ThreeParam]);
        assert_eq!(cfg.link, LinkFunction::NormalOgive);

        let cli = Cli::try_parse_from(["irtcal", "calibrate", "--models", "4pl"]).unwrap();
        let Command::Calibrate(args) = cli.command else {
            panic!()
        };
        assert!(args.into_config().is_err());
    }

    #[test]
    fn missing_input_is_exit_2() {
        let cfg = RunConfig::default();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_calibrate(&cfg, &mut out, &mut err), EXIT_INPUT);
    }

    #[test]
    fn exit_status_taxonomy() {
        assert_eq!(fit_status(4, 0), EXIT_OK);
        assert_eq!(fit_status(3, 1), EXIT_PARTIAL);
        assert_eq!(fit_status(0, 4), EXIT_REFUSAL);
    }

    #[test]
    fn truth_path_extension() {
        assert_eq!(
            truth_path(Path::new("a/sim.csv")),
            PathBuf::from("a/sim.truth.json")
        );
    }
}
