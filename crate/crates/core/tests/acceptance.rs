//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use cavity_tomography::analysis::{
    check_physicality, duan_sum, frame_rotation, from_db, loss_correct_variance, phase_noise_family, ppt_scan,
    ppt_test, purity, symplectic_eigenvalues, symplectic_form, to_db,
};
use cavity_tomography::cavity::{coupling, CavityParams, CouplingRegime, Detuning};
use cavity_tomography::covariance::{assemble, Beam, BeamParams, CovarianceParams, Param};
use cavity_tomography::fixtures;
use cavity_tomography::forward_model::{predict_trace, uniform_grid, SweepConfiguration, SweepMode};
use cavity_tomography::synthesis::{expected_dataset, generate_dataset, DetectionParams};
use cavity_tomography::tomography::{curves_from_measured, fit, fit_single_beam, Curve, FitProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(number: &str, name: &str, budget: Option<Duration>, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let pass = result.pass && in_time;
    let budget_note = budget.map(|b| format!(" (budget {:.0?})", b)).unwrap_or_default();
    println!(
        "{} criterion {number} [{name}]: {} | {:.2?}{budget_note}",
        if pass { "PASS" } else { "FAIL" },
        result.detail,
        elapsed
    );
    pass
}

fn cavities() -> Vec<(&'static str, CavityParams)> {
    let (s, i) = (fixtures::signal_cavity(), fixtures::idler_cavity());
    let under = |c: CavityParams| CavityParams {
        regime: CouplingRegime::Undercoupled,
        ..c
    };
    vec![
        ("signal", s),
        ("idler", i),
        ("signal/undercoupled", under(s)),
        ("idler/undercoupled", under(i)),
    ]
}

fn vacuum_closure() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    for (_, cavity) in cavities() {
        for omega in [5e6, 20e6, 50e6] {
            for mode in SweepMode::ALL {
                let config = SweepConfiguration::standard(mode, omega).unwrap();
                let trace = predict_trace(&CovarianceParams::vacuum(), &cavity, &cavity, &config).unwrap();
                for p in &trace.points {
                    worst = worst.max((p.s_signal - 1.0).abs()).max((p.s_idler - 1.0).abs());
                    worst = worst.max(p.corr_re.abs()).max(p.corr_im.abs());
                    evaluated += 1;
                }
            }
        }
    }
    outcome(worst < 1e-12, format!("max |S-1| = {worst:.1e} over {evaluated} grid points"))
}

fn three_configurations(params: &CovarianceParams) -> Vec<Curve> {
    let (s, i) = (fixtures::signal_cavity(), fixtures::idler_cavity());
    let detection = DetectionParams::default();
    SweepMode::ALL
        .iter()
        .flat_map(|&mode| {
            let config = SweepConfiguration::standard(mode, fixtures::ANALYSIS_FREQUENCY_HZ).unwrap();
            curves_from_measured(&expected_dataset(params, &s, &i, &config, &detection).unwrap()).unwrap()
        })
        .collect()
}

fn max_relative_error(a: &CovarianceParams, b: &CovarianceParams, skip: Option<Param>) -> (f64, Param) {
    Param::ALL
        .into_iter()
        .filter(|p| Some(*p) != skip)
        .map(|p| ((a.get(p) - b.get(p)).abs() / b.get(p).abs(), p))
        .fold((0.0, Param::AlphaS), |m, x| if x.0 > m.0 { x } else { m })
}

fn round_trip() -> Outcome {
    let truth = fixtures::reference_state();
    let curves = three_configurations(&truth);
    let problem = FitProblem::new(curves, fixtures::signal_cavity(), fixtures::idler_cavity());
    let free = fit(&problem).unwrap();
    let pinned = fit(&problem.clone().pin(Param::Mu, 10.1)).unwrap();
    let (e_free, p_free) = max_relative_error(&free.params, &truth, None);
    let (e_pin, p_pin) = max_relative_error(&pinned.params, &truth, Some(Param::Mu));
    outcome(
        e_free < 1e-6 && e_pin < 1e-6 && pinned.free.len() == 15 && free.free.len() == 16,
        format!(
            "16 free: max rel err {e_free:.1e} ({p_free}); mu pinned: {} free, max rel err {e_pin:.1e} ({p_pin})",
            pinned.free.len()
        ),
    )
}

const CALIBRATION_SEEDS: u64 = 200;
const CALIBRATION_GRID: usize = 201;
const TARGET_STD_ALPHA: f64 = 0.03;
const TARGET_STD_BETA: f64 = 0.09;

/// Signal-beam fit over all three configurations for one seed:
/// `(α, β, σ̂α, σ̂β)`.
fn signal_fit(seed: u64, samples: usize) -> (f64, f64, f64, f64) {
    let (s, i) = (fixtures::signal_cavity(), fixtures::idler_cavity());
    let detection = DetectionParams {
        electronic_noise_s: 0.05,
        electronic_noise_i: 0.05,
        gain_imbalance: 0.02,
        samples_per_point: samples,
        rng_seed: seed,
        ..DetectionParams::default()
    };
    let curves: Vec<Curve> = SweepMode::ALL
        .iter()
        .flat_map(|&mode| {
            let grid = uniform_grid(-8.0, 8.0, CALIBRATION_GRID).unwrap();
            let config = SweepConfiguration::new(mode, fixtures::ANALYSIS_FREQUENCY_HZ, grid).unwrap();
            let mut detection = detection;
            detection.rng_seed = seed.wrapping_mul(3).wrapping_add(mode as u64);
            curves_from_measured(&generate_dataset(&fixtures::reference_state(), &s, &i, &config, &detection).unwrap())
                .unwrap()
        })
        .collect();
    let problem = FitProblem::new(curves, s, i);
    let beam = fit_single_beam(&problem, Beam::Signal).unwrap();
    (beam.params.alpha, beam.params.beta, beam.std_devs.alpha, beam.std_devs.beta)
}

fn scatter(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn statistical_calibration() -> Outcome {
    // Pilot run sets the per-point sample count at which the reported σ̂α
    // matches the target; the scatter over independent seeds is then
    // compared with both targets.
    let pilot_samples = 400;
    let pilot: Vec<f64> = (10_000..10_010u64).into_par_iter().map(|s| signal_fit(s, pilot_samples).2).collect();
    let pilot_std = pilot.iter().sum::<f64>() / pilot.len() as f64;
    let samples = ((pilot_samples as f64) * (pilot_std / TARGET_STD_ALPHA).powi(2)).round().max(1.0) as usize;

    let fits: Vec<_> = (0..CALIBRATION_SEEDS).into_par_iter().map(|s| signal_fit(s, samples)).collect();
    let alphas: Vec<f64> = fits.iter().map(|f| f.0).collect();
    let betas: Vec<f64> = fits.iter().map(|f| f.1).collect();
    let reported_beta = fits.iter().map(|f| f.3).sum::<f64>() / fits.len() as f64;
    let (sa, sb) = (scatter(&alphas), scatter(&betas));
    let ra = sa / TARGET_STD_ALPHA;
    let rb = sb / TARGET_STD_BETA;
    let within = |r: f64| (0.5..=2.0).contains(&r);
    outcome(
        within(ra) && within(rb),
        format!(
            "n = {samples} samples/point on {CALIBRATION_GRID}-point sweeps; scatter alpha_s {sa:.4} ({ra:.2}x of 0.03), \
             beta_s {sb:.4} ({rb:.2}x of 0.09); mean reported sigma beta_s {reported_beta:.4}"
        ),
    )
}

fn squeezing_arithmetic() -> Outcome {
    let d = duan_sum(&fixtures::reference_state());
    let pass = (d.variance_minus_p - 0.64).abs() < 1e-12
        && (d.variance_plus_q - 12.825).abs() < 1e-12
        && (d.sum - 13.465).abs() < 1e-12
        && !d.witness;
    outcome(
        pass,
        format!(
            "var(p-) = {:.12}, var(q+) = {:.12}, sum = {:.12}, witness = {}",
            d.variance_minus_p, d.variance_plus_q, d.sum, d.witness
        ),
    )
}

fn loss_anchor() -> Outcome {
    let corrected = to_db(loss_correct_variance(from_db(-2.3), fixtures::DETECTION_EFFICIENCY).unwrap());
    outcome(
        (corrected - -4.87).abs() < 0.005 && (corrected - -4.9).abs() < 0.05,
        format!("-2.3 dB at eta = 0.61 -> {corrected:.4} dB"),
    )
}

fn tmsv(r: f64) -> DMatrix<f64> {
    let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
    DMatrix::from_row_slice(4, 4, &[c, 0.0, s, 0.0, 0.0, c, 0.0, -s, s, 0.0, c, 0.0, 0.0, -s, 0.0, c])
}

/// Random symplectic matrix for the block form `⊕ [[0, 1], [-1, 0]]`, built
/// from local squeezers, local rotations and beam splitters.
fn random_symplectic(rng: &mut ChaCha8Rng, modes: usize) -> DMatrix<f64> {
    let n = 2 * modes;
    let mut s = DMatrix::identity(n, n);
    for _ in 0..3 {
        for k in 0..modes {
            let r: f64 = rng.random_range(-0.8..0.8);
            let mut sq = DMatrix::identity(n, n);
            sq[(2 * k, 2 * k)] = r.exp();
            sq[(2 * k + 1, 2 * k + 1)] = (-r).exp();
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut rot = DMatrix::identity(n, n);
            rot[(2 * k, 2 * k)] = t.cos();
            rot[(2 * k, 2 * k + 1)] = t.sin();
            rot[(2 * k + 1, 2 * k)] = -t.sin();
            rot[(2 * k + 1, 2 * k + 1)] = t.cos();
            s = rot * sq * s;
        }
        for j in 0..modes {
            for k in j + 1..modes {
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let mut bs = DMatrix::identity(n, n);
                for q in 0..2 {
                    bs[(2 * j + q, 2 * j + q)] = t.cos();
                    bs[(2 * j + q, 2 * k + q)] = t.sin();
                    bs[(2 * k + q, 2 * j + q)] = -t.sin();
                    bs[(2 * k + q, 2 * k + q)] = t.cos();
                }
                s = bs * s;
            }
        }
    }
    s
}

fn random_physical(rng: &mut ChaCha8Rng, modes: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut nu: Vec<f64> = (0..modes).map(|_| rng.random_range(1.0..3.0)).collect();
    let d = DMatrix::from_fn(2 * modes, 2 * modes, |r, c| if r == c { nu[r / 2] } else { 0.0 });
    let s = random_symplectic(rng, modes);
    let v = &s * d * s.transpose();
    nu.sort_by(f64::total_cmp);
    ((&v + v.transpose()) * 0.5, nu)
}

fn complement(partition: &[usize], modes: usize) -> Vec<usize> {
    (0..modes).filter(|m| !partition.contains(m)).collect()
}

fn ppt_suite() -> Outcome {
    let tmsv_min = ppt_test(&tmsv(0.5), &[0]).unwrap();
    let a = (tmsv_min - (-1.0f64).exp()).abs() < 1e-9;

    let fixture = ppt_scan(&fixtures::reference_state(), None).unwrap();
    let fixture_min = fixture.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    let b = fixture.len() == 7 && fixture_min >= 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut states = vec![assemble(&fixtures::reference_state()).to_dmatrix()];
    states.extend((0..50).map(|_| random_physical(&mut rng, 4).0));
    let mut worst: f64 = 0.0;
    for v in &states {
        for mask in 1u32..15 {
            let part: Vec<usize> = (0..4).filter(|m| mask & (1 << m) != 0).collect();
            let x = ppt_test(v, &part).unwrap();
            let y = ppt_test(v, &complement(&part, 4)).unwrap();
            worst = worst.max((x - y).abs());
        }
    }
    let c = worst < 1e-9;
    outcome(
        a && b && c,
        format!(
            "(a) TMSV r=0.5 min PT nu = {tmsv_min:.12} vs e^-1 {}; (b) reference state min over 7 partitions = {fixture_min:.4} {}; \
             (c) complement asymmetry {worst:.1e} {}",
            mark(a),
            mark(b),
            mark(c)
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn williamson() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = symplectic_form(4);
    let mut purity_err: f64 = 0.0;
    let mut nu_err: f64 = 0.0;
    let mut invariance_err: f64 = 0.0;
    let mut symplectic_err: f64 = 0.0;
    for _ in 0..1000 {
        let (v, nu) = random_physical(&mut rng, 4);
        let got = symplectic_eigenvalues(&v).unwrap();
        let det_purity = 1.0 / v.determinant().sqrt();
        let nu_purity = 1.0 / got.iter().product::<f64>();
        purity_err = purity_err
            .max((det_purity - nu_purity).abs() / nu_purity)
            .max((purity(&v).unwrap() - det_purity).abs() / det_purity);
        for (a, b) in got.iter().zip(&nu) {
            nu_err = nu_err.max((a - b).abs());
        }
        let s = random_symplectic(&mut rng, 4);
        symplectic_err = symplectic_err.max((&s * &w * s.transpose() - &w).amax());
        let moved = &s * &v * s.transpose();
        let moved = (&moved + moved.transpose()) * 0.5;
        for (a, b) in symplectic_eigenvalues(&moved).unwrap().iter().zip(&got) {
            invariance_err = invariance_err.max((a - b).abs());
        }
    }
    outcome(
        purity_err < 1e-9 && invariance_err < 1e-8 && nu_err < 1e-8 && symplectic_err < 1e-9,
        format!(
            "1000 states: purity det vs prod(nu) rel {purity_err:.1e}; nu vs construction {nu_err:.1e}; \
             nu under extra symplectic {invariance_err:.1e}"
        ),
    )
}

fn frame_rotation_check() -> Outcome {
    let base = fixtures::reference_state();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut states = vec![base];
    while states.len() < 200 {
        let mut values = base.to_array();
        for v in values.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let p = CovarianceParams::from_array(values);
        let v = assemble(&p).to_dmatrix();
        if let Ok(ph) = check_physicality(&v) {
            if ph.physical {
                states.push(p);
            }
        }
    }
    let mut gamma: f64 = 0.0;
    let mut purity_err: f64 = 0.0;
    for p in &states {
        let r = frame_rotation(p).unwrap();
        gamma = gamma.max(r.rotated.gamma_s.abs()).max(r.rotated.gamma_i.abs());
        let before = purity(&assemble(p).to_dmatrix()).unwrap();
        let after = purity(&assemble(&r.rotated).to_dmatrix()).unwrap();
        purity_err = purity_err.max((before - after).abs() / before);
    }
    let fixture = frame_rotation(&base).unwrap();
    let rotated_minus_p = duan_sum(&fixture.rotated).variance_minus_p;
    outcome(
        gamma < 1e-12 && purity_err < 1e-9 && rotated_minus_p > 1.0 && fixture.two_mode.variance_minus_p > 1.0,
        format!(
            "{} states: max |gamma'| {gamma:.1e}, purity rel change {purity_err:.1e}; reference state rotated var(p-) = {rotated_minus_p:.3} \
             (two-mode path {:.3})",
            states.len(),
            fixture.two_mode.variance_minus_p
        ),
    )
}

fn thermal_reproduction() -> Outcome {
    let thermal = BeamParams {
        alpha: 1.0,
        beta: 2.0,
        gamma: 0.0,
        delta: 0.0,
    };
    let params = CovarianceParams::from_beams(thermal, thermal, [0.0; 8]);
    let mut identity_err: f64 = 0.0;
    let mut peak: f64 = 0.0;
    let mut far: f64 = 0.0;
    for (_, cavity) in cavities() {
        for omega in [5e6, 20e6, 50e6] {
            let config = SweepConfiguration::standard(SweepMode::SignalSweepIdlerParked, omega).unwrap();
            let trace = predict_trace(&params, &cavity, &cavity, &config).unwrap();
            for (p, d) in trace.points.iter().zip(&config.grid) {
                let k = coupling(&cavity, *d, omega).unwrap();
                identity_err = identity_err.max((p.s_signal - (1.0 + k.c_beta)).abs());
                peak = peak.max(p.s_signal);
            }
            for x in [-1e7, 1e7] {
                let config = SweepConfiguration::new(SweepMode::Synchronous, omega, vec![Detuning::new(x).unwrap()]).unwrap();
                let p = &predict_trace(&params, &cavity, &cavity, &config).unwrap().points[0];
                far = far.max((p.s_signal - 1.0).abs()).max((p.s_idler - 1.0).abs());
            }
            let parked = SweepConfiguration::standard(SweepMode::IdlerSweepSignalParked, omega).unwrap();
            for p in predict_trace(&params, &cavity, &cavity, &parked).unwrap().points {
                far = far.max((p.s_signal - 1.0).abs());
            }
        }
    }
    outcome(
        identity_err < 1e-12 && far < 1e-12 && peak <= 2.0,
        format!("max |S - (1 + c_beta)| {identity_err:.1e}; far-detuned |S - 1| {far:.1e}; peak {peak:.4}"),
    )
}

fn phase_noise_demo() -> Outcome {
    let increments = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
    let family = phase_noise_family(&fixtures::reference_state(), &increments);
    let purities: Vec<f64> = family
        .iter()
        .map(|p| purity(&assemble(p).to_dmatrix()).unwrap())
        .collect();
    let monotone = purities.windows(2).all(|w| w[1] < w[0]);
    let listed: Vec<String> = increments
        .iter()
        .zip(&purities)
        .map(|(k, p)| format!("+{k}: {p:.3e}"))
        .collect();
    outcome(monotone, format!("purity by added phase noise {}", listed.join(", ")))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let s = Duration::from_secs;
    let results = [
        run("1", "vacuum closure", Some(s(1)), vacuum_closure),
        run("2", "round-trip tomography", Some(s(10)), round_trip),
        run("3", "statistical calibration", Some(s(300)), statistical_calibration),
        run("4", "squeezing arithmetic", None, squeezing_arithmetic),
        run("5", "loss-correction anchor", None, loss_anchor),
        run("6", "PPT suite", None, ppt_suite),
        run("7", "Williamson and purity identities", None, williamson),
        run("8", "frame rotation", None, frame_rotation_check),
        run("9", "thermal spectrum", None, thermal_reproduction),
        run("demo", "phase-noise purity degradation", None, phase_noise_demo),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
