use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cavity_tomography::analysis::{analyze, from_db, loss_correct_variance, to_db, AnalysisReport};
use cavity_tomography::covariance::{CovarianceParams, Param};
use cavity_tomography::fixtures;
use cavity_tomography::forward_model::{predict_trace, SweepConfiguration};
use cavity_tomography::synthesis::{expected_dataset, generate_dataset, MeasuredTrace, TraceMetadata};
use cavity_tomography::tomography::{curves_from_measured, fit, residuals, FitProblem, Weighting};
use serde::{Deserialize, Serialize};

use crate::config::{read_params_with_std, RunConfig};
use crate::error::{CliError, CliResult};

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct SimulateArgs {
    pub seed: Option<u64>,
    pub noiseless: bool,
    pub samples: Option<usize>,
    pub omega_hz: Option<f64>,
}

pub fn simulate(config: &RunConfig, args: &SimulateArgs, out: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(out)?;
    let state = config.state()?;
    let (signal, idler) = (config.signal_cavity(), config.idler_cavity());
    let omega_hz = config.omega_hz(args.omega_hz)?;
    let grid = config.grid()?;
    let mut detection = config.detection.unwrap_or_default();
    if let Some(seed) = args.seed.or(config.seed) {
        detection.rng_seed = seed;
    }
    if let Some(n) = args.samples {
        detection.samples_per_point = n;
    }

    let mut written = Vec::new();
    for mode in config.configurations() {
        let mut sweep = SweepConfiguration::new(mode, omega_hz, grid.clone())?;
        sweep.parking = config.parking;
        sweep.apply_mode_matching = config.apply_mode_matching;
        let trace = if args.noiseless {
            expected_dataset(&state, &signal, &idler, &sweep, &detection)?
        } else {
            generate_dataset(&state, &signal, &idler, &sweep, &detection)?
        };
        let csv_path = out.join(format!("{}.csv", mode.label()));
        let mut w = create(&csv_path)?;
        trace.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(&csv_path, e))?;
        let meta_path = csv_path.with_extension("json");
        write_json(&meta_path, &trace.metadata)?;
        written.push(csv_path);
        written.push(meta_path);

        if args.noiseless {
            let model_path = out.join(format!("{}_model.csv", mode.label()));
            let mut w = create(&model_path)?;
            predict_trace(&state, &signal, &idler, &sweep)?.write_csv(&mut w)?;
            w.flush().map_err(|e| CliError::io(&model_path, e))?;
            written.push(model_path);
        }
    }
    let truth = out.join("truth.json");
    write_json(&truth, &state)?;
    written.push(truth);
    Ok(written)
}

/// Reads a trace CSV and its JSON metadata sidecar (same stem).
pub fn read_trace(path: &Path) -> CliResult<MeasuredTrace> {
    let meta_path = path.with_extension("json");
    let meta_file = File::open(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let metadata: TraceMetadata =
        serde_json::from_reader(BufReader::new(meta_file)).map_err(|e| CliError::io(&meta_path, e))?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    MeasuredTrace::read_csv(BufReader::new(file), metadata).map_err(|e| match e {
        cavity_tomography::Error::MalformedTrace(m) | cavity_tomography::Error::Io(m) => CliError::io(path, m),
        other => other.into(),
    })
}

pub struct FitArgs {
    pub traces: Vec<PathBuf>,
    pub pins: Vec<(Param, f64)>,
    pub fit_cavities: bool,
    pub uniform: bool,
}

pub fn fit_traces(config: &RunConfig, args: &FitArgs, out: &Path) -> CliResult<cavity_tomography::tomography::FitResult> {
    ensure_dir(out)?;
    let mut curves = Vec::new();
    for path in &args.traces {
        curves.extend(curves_from_measured(&read_trace(path)?)?);
    }
    let mut problem = FitProblem::new(curves, config.signal_cavity(), config.idler_cavity());
    problem.fixed = config.pinned()?;
    problem.fixed.extend(args.pins.iter().copied());
    problem.weighting = if args.uniform { Weighting::Uniform } else { config.weighting };
    problem.fit_cavities = args.fit_cavities || config.fit_cavities;
    let result = fit(&problem)?;
    write_json(&out.join("fit_result.json"), &result)?;

    let path = out.join("residuals.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["curve", "detuning", "observed", "predicted", "sigma"])
        .map_err(|e| CliError::io(&path, e))?;
    for r in residuals(&problem, &result)? {
        w.serialize((&r.curve, r.detuning, r.observed, r.predicted, r.sigma))
            .map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(result)
}

/// A measured squeezing level referred back through the detection loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingCorrection {
    pub measured_db: f64,
    pub efficiency: f64,
    pub corrected_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    #[serde(flatten)]
    pub report: AnalysisReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub squeezing: Option<SqueezingCorrection>,
}

pub struct AnalyzeArgs {
    pub params: PathBuf,
    pub std: Option<PathBuf>,
    pub efficiency: Option<f64>,
    pub squeezing_db: Option<f64>,
}

pub fn analyze_params(config: &RunConfig, args: &AnalyzeArgs, out: &Path) -> CliResult<(AnalysisOutput, String)> {
    ensure_dir(out)?;
    let (params, mut std): (CovarianceParams, _) = read_params_with_std(&args.params)?;
    if let Some(path) = &args.std {
        std = Some(read_params_with_std(path)?.0);
    }
    let efficiency = args.efficiency.or(config.efficiency).unwrap_or(fixtures::DETECTION_EFFICIENCY);
    let report = analyze(&params, std.as_ref(), Some(efficiency))?;
    let squeezing = args
        .squeezing_db
        .map(|db| -> CliResult<SqueezingCorrection> {
            Ok(SqueezingCorrection {
                measured_db: db,
                efficiency,
                corrected_db: to_db(loss_correct_variance(from_db(db), efficiency)?),
            })
        })
        .transpose()?;
    let mut summary = report.summary();
    if let Some(s) = &squeezing {
        summary.push_str(&format!(
            "squeezing {:+.2} dB at efficiency {:.3} -> {:+.2} dB before detection loss\n",
            s.measured_db, s.efficiency, s.corrected_db
        ));
    }
    let output = AnalysisOutput { report, squeezing };
    write_json(&out.join("analysis.json"), &output)?;
    let path = out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| CliError::io(&path, e))?;
    Ok((output, summary))
}
