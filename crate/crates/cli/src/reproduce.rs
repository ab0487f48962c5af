//! Plot-ready data for the standard figures. Only data is written; each CSV
//! has one column per plotted quantity.

use std::path::{Path, PathBuf};

use cavity_tomography::cavity::{coupling, cross_coupling, reflection, CrossCoefficients};
use cavity_tomography::covariance::{BeamParams, CovarianceParams};
use cavity_tomography::forward_model::{predict_trace, sweep_couplings, SweepConfiguration, SweepMode};
use clap::ValueEnum;

use crate::commands::{create, ensure_dir};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Single-beam coupling coefficients and reflection of the idler cavity.
    #[value(name = "figS2")]
    FigS2,
    /// Thermal state with excess phase noise swept by the signal cavity.
    #[value(name = "figS3")]
    FigS3,
    /// Cross coefficients c_mu, c_nu, c_kappa, c_lambda for each acquisition.
    #[value(name = "figS4")]
    FigS4,
    /// Cross coefficients c_xi, c_zeta, c_eta, c_tau for each acquisition.
    #[value(name = "figS5")]
    FigS5,
    /// Signal and idler spectra, synchronous sweep.
    #[value(name = "fig2a")]
    Fig2a,
    /// Sum and difference quadrature variances, synchronous sweep.
    #[value(name = "fig2b")]
    Fig2b,
    /// Real and imaginary cross-correlation for each acquisition.
    #[value(name = "fig3")]
    Fig3,
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

fn write_table(path: &Path, table: &Table) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(&table.header).map_err(|e| CliError::io(path, e))?;
    for row in &table.rows {
        w.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn sweep(config: &RunConfig, mode: SweepMode, omega_hz: f64) -> CliResult<SweepConfiguration> {
    let mut s = SweepConfiguration::new(mode, omega_hz, config.grid()?)?;
    s.parking = config.parking;
    s.apply_mode_matching = config.apply_mode_matching;
    Ok(s)
}

fn cross_table(
    config: &RunConfig,
    mode: SweepMode,
    omega_hz: f64,
    header: [&'static str; 4],
    pick: fn(&CrossCoefficients) -> [f64; 4],
) -> CliResult<Table> {
    let s = sweep(config, mode, omega_hz)?;
    let couplings = sweep_couplings(&config.signal_cavity(), &config.idler_cavity(), &s)?;
    let rows = s
        .grid
        .iter()
        .zip(&couplings)
        .map(|(d, (ks, ki))| {
            let mut row = vec![d.value()];
            row.extend(pick(&cross_coupling(ks, ki)));
            row
        })
        .collect();
    let mut full = vec!["detuning"];
    full.extend(header);
    Ok(Table { header: full, rows })
}

/// Writes the data files for `figure` into `out` and returns their paths.
pub fn reproduce(config: &RunConfig, figure: Figure, omega_flag: Option<f64>, out: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(out)?;
    let omega_hz = config.omega_hz(omega_flag)?;
    let mut files: Vec<(String, Table)> = Vec::new();
    let mut extra = Vec::new();
    match figure {
        Figure::FigS2 => {
            let cavity = config.idler_cavity();
            let grid = config.grid()?;
            let mut rows = Vec::with_capacity(grid.len());
            for d in grid {
                let k = coupling(&cavity, d, omega_hz)?;
                let r = reflection(&cavity, d);
                rows.push(vec![d.value(), k.c_alpha, k.c_beta, k.c_gamma, k.c_delta, r.norm_sqr(), r.arg()]);
            }
            let header = vec!["detuning", "c_alpha", "c_beta", "c_gamma", "c_delta", "reflectance", "reflection_phase"];
            files.push(("figS2".into(), Table { header, rows }));
        }
        Figure::FigS3 => {
            let thermal = BeamParams { alpha: 1.0, beta: 2.0, gamma: 0.0, delta: 0.0 };
            let state = CovarianceParams::from_beams(thermal, BeamParams::VACUUM, [0.0; 8]);
            let s = sweep(config, SweepMode::SignalSweepIdlerParked, omega_hz)?;
            let cavity = config.signal_cavity();
            let trace = predict_trace(&state, &cavity, &config.idler_cavity(), &s)?;
            let rows: Vec<Vec<f64>> = trace.points.iter().map(|p| vec![p.detuning, p.s_signal, 1.0]).collect();
            let features = thermal_features(&rows, omega_hz / cavity.bandwidth);
            files.push((
                "figS3".into(),
                Table { header: vec!["detuning", "spectral_density", "shot_noise"], rows },
            ));
            let path = out.join("figS3_features.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["feature", "detuning", "spectral_density"])
                .map_err(|e| CliError::io(&path, e))?;
            for f in features {
                w.serialize(f).map_err(|e| CliError::io(&path, e))?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            extra.push(path);
        }
        Figure::FigS4 | Figure::FigS5 => {
            for mode in SweepMode::ALL {
                let (name, table) = if figure == Figure::FigS4 {
                    let t = cross_table(config, mode, omega_hz, ["c_mu", "c_nu", "c_kappa", "c_lambda"], |x| {
                        [x.c_mu, x.c_nu, x.c_kappa, x.c_lambda]
                    })?;
                    ("figS4", t)
                } else {
                    let t = cross_table(config, mode, omega_hz, ["c_xi", "c_zeta", "c_eta", "c_tau"], |x| {
                        [x.c_xi, x.c_zeta, x.c_eta, x.c_tau]
                    })?;
                    ("figS5", t)
                };
                files.push((format!("{name}_{}", mode.label()), table));
            }
        }
        Figure::Fig2a | Figure::Fig2b => {
            let s = sweep(config, SweepMode::Synchronous, omega_hz)?;
            let trace = predict_trace(&config.state()?, &config.signal_cavity(), &config.idler_cavity(), &s)?;
            let (name, header, rows) = if figure == Figure::Fig2a {
                let rows = trace.points.iter().map(|p| vec![p.detuning, p.s_signal, p.s_idler, 1.0]).collect();
                ("fig2a", vec!["detuning", "s_signal", "s_idler", "shot_noise"], rows)
            } else {
                let rows = trace
                    .points
                    .iter()
                    .map(|p| {
                        let mean = 0.5 * (p.s_signal + p.s_idler);
                        vec![p.detuning, mean + p.corr_re, mean - p.corr_re, 1.0]
                    })
                    .collect();
                ("fig2b", vec!["detuning", "var_x_plus", "var_x_minus", "shot_noise"], rows)
            };
            files.push((name.into(), Table { header, rows }));
        }
        Figure::Fig3 => {
            let state = config.state()?;
            for mode in SweepMode::ALL {
                let s = sweep(config, mode, omega_hz)?;
                let trace = predict_trace(&state, &config.signal_cavity(), &config.idler_cavity(), &s)?;
                let rows = trace.points.iter().map(|p| vec![p.detuning, p.corr_re, p.corr_im]).collect();
                files.push((
                    format!("fig3_{}", mode.label()),
                    Table { header: vec!["detuning", "corr_re", "corr_im"], rows },
                ));
            }
        }
    }
    let mut written = Vec::new();
    for (name, table) in files {
        let path = out.join(format!("{name}.csv"));
        write_table(&path, &table)?;
        written.push(path);
    }
    written.extend(extra);
    Ok(written)
}

/// The four marked points of the thermal sweep: far off resonance, the
/// sideband resonance, the peak between it and the carrier resonance, and
/// the carrier resonance itself, numbered 1 to 4.
fn thermal_features(rows: &[Vec<f64>], sideband: f64) -> Vec<(u32, f64, f64)> {
    let nearest = |x: f64| {
        rows.iter()
            .min_by(|a, b| (a[0] - x).abs().total_cmp(&(b[0] - x).abs()))
            .expect("non-empty grid")
    };
    let far = &rows[0];
    let at_sideband = rows
        .iter()
        .filter(|r| (r[0] + sideband).abs() < 1.0)
        .max_by(|a, b| a[1].total_cmp(&b[1]))
        .unwrap_or_else(|| nearest(-sideband));
    let peak = rows
        .iter()
        .filter(|r| r[0] > -sideband && r[0] < 0.0)
        .max_by(|a, b| a[1].total_cmp(&b[1]))
        .unwrap_or(at_sideband);
    let carrier = nearest(0.0);
    [far, at_sideband, peak, carrier]
        .iter()
        .enumerate()
        .map(|(k, r)| (k as u32 + 1, r[0], r[1]))
        .collect()
}
