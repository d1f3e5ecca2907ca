use std::fmt::Write as _;
use std::time::Instant;

use bohmlab::experiments::{
    self, coupled_coefficients, equivariance_scenario, EprbConfig, EquivarianceScenario, ParadoxConfig,
    SternGerlachConfig, SystemState, TimeOfFlightConfig,
};
use bohmlab::formalism::{
    approximate_povm, coin_flip, ideal_measurement, marginal_discrepancy, povm_of, sequential_monte_carlo,
    sequential_probability, density_update, ensemble_density, shift_experiment, DensityMatrix, Effects, Label,
};
use bohmlab::hilbert::{pauli, HermitianOperator, Operator, StateVector, UnitaryOperator};
use bohmlab::nogo;
use bohmlab::rng::Stream;
use bohmlab::wavefield::SgParams;
use bohmlab::C64;
use serde::{Deserialize, Serialize};

use crate::report::{emit, init_threads, load, Check, Failure, Outcome};
use crate::Common;

fn setup<T: serde::de::DeserializeOwned + Default>(common: &Common) -> Result<(T, Instant), Failure> {
    let cfg = load(common.config.as_deref())?;
    init_threads(common.threads)?;
    Ok((cfg, Instant::now()))
}

fn trial_count(common: &Common, default: usize) -> Result<usize, Failure> {
    match common.n.unwrap_or(default) {
        0 => Err(Failure::Config("n must be positive".into())),
        n => Ok(n),
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivarianceConfig {
    pub scenarios: Vec<EquivarianceScenario>,
    pub tv_max: f64,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![EquivarianceScenario::Trap, EquivarianceScenario::Free, EquivarianceScenario::Control],
            tv_max: 0.02,
        }
    }
}

pub fn equivariance(common: &Common, scenario: Option<&str>) -> Outcome {
    let (mut cfg, t0): (EquivarianceConfig, _) = setup(common)?;
    if let Some(s) = scenario {
        let parsed: EquivarianceScenario = serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Failure::Config(format!("unknown scenario {s:?} (trap, free, control)")))?;
        cfg.scenarios = vec![parsed];
    }
    let n = trial_count(common, 20_000)?;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    let mut csv = String::from("scenario,time,tv,tv_analytic,aborted\n");
    for s in &cfg.scenarios {
        let r = equivariance_scenario(*s, n, common.seed)?;
        let name = serde_json::to_value(s).unwrap_or_default();
        let name = name.as_str().unwrap_or("?");
        writeln!(csv, "{name},{},{:.12e},{:.12e},{}", r.report.time, r.report.tv_distance, r.tv_analytic, r.report.aborted).ok();
        checks.push(Check::at_most(&format!("{name}.tv"), r.report.tv_distance, cfg.tv_max));
        checks.push(Check::holds(&format!("{name}.not_flagged"), !r.report.flagged));
        reports.push(r);
    }
    emit(common, "equivariance", Some(n), &cfg, &reports, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupledConfig {
    pub oscillator: experiments::CoupledOscillatorConfig,
    pub max_error: f64,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        Self { oscillator: Default::default(), max_error: 1e-4 }
    }
}

#[derive(Serialize)]
struct CoupledResults {
    max_error: f64,
    symmetry_error: f64,
    aborted: usize,
}

pub fn coupled_oscillator(common: &Common) -> Outcome {
    let (cfg, t0): (CoupledConfig, _) = setup(common)?;
    let n = trial_count(common, 100)?;
    let r = experiments::coupled_oscillator(&cfg.oscillator, n, common.seed)?;
    let mut csv = String::from("trial,t,x,y,x_exact,y_exact\n");
    for (k, tr) in r.trajectories.iter().enumerate() {
        let (x, y) = (tr.start().0[0], tr.start().0[1]);
        for (t, p) in tr.times.iter().zip(&tr.points) {
            let (a, b) = coupled_coefficients(*t);
            writeln!(csv, "{k},{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", p.0[0], p.0[1], a * x + b * y, b * x + a * y).ok();
        }
    }
    let checks = vec![
        Check::at_most("max_error", r.max_error, cfg.max_error),
        Check::at_most("symmetry_error", r.symmetry_error, 1e-6),
        Check::at_most("aborted", r.aborted as f64, 0.0),
    ];
    let res = CoupledResults { max_error: r.max_error, symmetry_error: r.symmetry_error, aborted: r.aborted };
    emit(common, "coupled-oscillator", Some(n), &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SternGerlachCli {
    pub magnet: SternGerlachConfig,
    /// `|α|²`; the state is `√w ψ⁺ + √(1−w) ψ⁻`.
    pub alpha2: f64,
    /// Also compare packet moments and the Green's-function oracle.
    pub moments: bool,
}

impl Default for SternGerlachCli {
    fn default() -> Self {
        Self { magnet: Default::default(), alpha2: 0.7, moments: true }
    }
}

#[derive(Serialize)]
struct SternGerlachResults {
    frequencies: Vec<experiments::LabelFrequency>,
    label_mean: Vec<f64>,
    born_plus: f64,
    sigma: f64,
    aborted: usize,
    flagged: bool,
    warnings: Vec<String>,
    moments: Option<experiments::SgMoments>,
}

pub fn stern_gerlach(common: &Common, alpha2: Option<f64>) -> Outcome {
    let (mut cfg, t0): (SternGerlachCli, _) = setup(common)?;
    if let Some(a) = alpha2 {
        cfg.alpha2 = a;
    }
    let n = trial_count(common, 10_000)?;
    let spec = experiments::stern_gerlach(&cfg.magnet)?;
    let psi = experiments::spin_state(cfg.alpha2)?;
    let rec = experiments::run(&spec, &SystemState::Spinor(psi), n, common.seed)?;
    let p = &cfg.magnet.params;
    let t = cfg.magnet.duration;
    let mut checks = vec![Check::holds("not_flagged", !rec.flagged)];
    let mut born_plus = f64::NAN;
    let mut sigma = f64::NAN;
    if cfg.magnet.calibration == experiments::SgCalibration::Sign {
        // outcome +1 means "along the gradient"
        let (up, down) = (p.upper_weight(t, 1.0), p.upper_weight(t, -1.0));
        let (up, down) = if p.a > 0.0 { (up, down) } else { (1.0 - up, 1.0 - down) };
        born_plus = cfg.alpha2 * up + (1.0 - cfg.alpha2) * down;
        let done = n - rec.aborted;
        sigma = bohmlab::stats::binomial_sigma(born_plus, done.max(1));
        checks.push(Check::at_most("frequency_plus_deviation", (rec.frequency(&[1.0]) - born_plus).abs(), (3.0 * sigma).max(1e-12)));
        checks.push(Check::at_most("frequency_plus_vs_alpha2", (rec.frequency(&[1.0]) - cfg.alpha2).abs(), 0.015));
    }
    let moments = if cfg.moments { Some(experiments::sg_moments(&cfg.magnet)?) } else { None };
    if let Some(m) = &moments {
        checks.push(Check::at_most("mean_rel_error", m.mean_rel_error, 1e-6));
        checks.push(Check::at_most("green_rms", m.green_rms, 1e-8));
    }
    let res = SternGerlachResults {
        frequencies: rec.frequencies.clone(),
        label_mean: rec.label_mean.clone(),
        born_plus,
        sigma,
        aborted: rec.aborted,
        flagged: rec.flagged,
        warnings: rec.warnings.clone(),
        moments,
    };
    emit(common, "stern-gerlach", Some(n), &cfg, &res, checks, Some(rec.trials_csv()), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeOfFlightCli {
    pub flight: TimeOfFlightConfig,
    pub tv_max: f64,
    pub tv_exact_max: f64,
}

impl Default for TimeOfFlightCli {
    fn default() -> Self {
        Self { flight: Default::default(), tv_max: 0.03, tv_exact_max: 0.01 }
    }
}

pub fn time_of_flight(common: &Common) -> Outcome {
    let (cfg, t0): (TimeOfFlightCli, _) = setup(common)?;
    let n = trial_count(common, 20_000)?;
    let (r, rec) = experiments::time_of_flight_report(&cfg.flight, n, common.seed)?;
    let checks = vec![
        Check::at_most("tv_empirical", r.tv_empirical, cfg.tv_max),
        Check::at_most("tv_exact", r.tv_exact, cfg.tv_exact_max),
        Check::holds("not_flagged", !rec.flagged),
    ];
    emit(common, "time-of-flight", Some(n), &cfg, &r, checks, Some(rec.trials_csv()), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParadoxCli {
    pub paradox: ParadoxConfig,
    pub angular_velocity_max: f64,
    pub tv_max: f64,
    pub median_min: f64,
}

impl Default for ParadoxCli {
    fn default() -> Self {
        Self { paradox: Default::default(), angular_velocity_max: 1e-6, tv_max: 0.02, median_min: 0.05 }
    }
}

#[derive(Serialize)]
struct ParadoxResults {
    period: f64,
    angular_velocity_error: f64,
    tv: f64,
    tv_two_sample: f64,
    median_displacement: f64,
    fraction_displaced: f64,
    aborted: usize,
}

pub fn oscillator2d(common: &Common) -> Outcome {
    let (cfg, t0): (ParadoxCli, _) = setup(common)?;
    let n = trial_count(common, 20_000)?;
    let r = experiments::oscillator2d_paradox(&cfg.paradox, n, common.seed)?;
    let mut csv = String::from("trial,displacement\n");
    for (k, d) in r.displacements.iter().enumerate() {
        writeln!(csv, "{k},{d:.12e}").ok();
    }
    let checks = vec![
        Check::at_most("angular_velocity_error", r.angular_velocity_error, cfg.angular_velocity_max),
        Check::at_most("tv", r.tv, cfg.tv_max),
        Check::at_least("median_displacement", r.median_displacement, cfg.median_min),
    ];
    let res = ParadoxResults {
        period: r.period,
        angular_velocity_error: r.angular_velocity_error,
        tv: r.tv,
        tv_two_sample: r.tv_two_sample,
        median_displacement: r.median_displacement,
        fraction_displaced: r.fraction_displaced,
        aborted: r.aborted,
    };
    emit(common, "oscillator2d", Some(n), &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipCli {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
    /// Lattice points per axis for the quadrature value.
    pub lattice: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EprbCli {
    pub setup: EprbConfig,
    /// Setting pairs `[wing 1, wing 2]`.
    pub settings: Vec<[[f64; 3]; 2]>,
    pub tolerance: f64,
    pub flip: Option<FlipCli>,
}

impl Default for EprbCli {
    fn default() -> Self {
        let [a, b, c] = nogo::trine();
        Self {
            setup: Default::default(),
            settings: vec![[a, b], [b, c], [c, a]],
            tolerance: 0.015,
            // b and c must not be mirror images about a, or wing 1 cannot flip
            flip: Some(FlipCli { a, b: [0.75f64.sqrt(), 0.0, 0.5], c: [1.0, 0.0, 0.0], lattice: 48 }),
        }
    }
}

#[derive(Serialize)]
struct EprbPair {
    settings: [[f64; 3]; 2],
    anticorrelation: f64,
    expected: f64,
    sigma: f64,
    aborted: usize,
}

#[derive(Serialize)]
struct EprbResults {
    pairs: Vec<EprbPair>,
    bell_lhs: f64,
    flip: Option<experiments::FlipReport>,
}

pub fn eprb(common: &Common) -> Outcome {
    let (cfg, t0): (EprbCli, _) = setup(common)?;
    let n = trial_count(common, 10_000)?;
    let mut checks = Vec::new();
    let mut pairs = Vec::new();
    let mut csv = String::new();
    for (k, s) in cfg.settings.iter().enumerate() {
        let r = experiments::eprb_run(&cfg.setup, *s, n, common.seed)?;
        checks.push(Check::at_most(&format!("pair{k}.deviation"), (r.anticorrelation - r.expected).abs(), cfg.tolerance));
        checks.push(Check::holds(&format!("pair{k}.not_flagged"), !r.record.flagged));
        let body = r.record.trials_csv();
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            writeln!(csv, "pair,{header}").ok();
        }
        for l in lines {
            writeln!(csv, "{k},{l}").ok();
        }
        pairs.push(EprbPair {
            settings: *s,
            anticorrelation: r.anticorrelation,
            expected: r.expected,
            sigma: r.sigma,
            aborted: r.record.aborted,
        });
    }
    let flip = match &cfg.flip {
        Some(f) => {
            let r = experiments::eprb_flip(&cfg.setup, f.a, f.b, f.c, n, common.seed, f.lattice)?;
            checks.push(Check::at_least("flip_fraction_positive", r.flip_fraction, f64::MIN_POSITIVE));
            Some(r)
        }
        None => None,
    };
    let res = EprbResults { bell_lhs: pairs.iter().map(|p| p.anticorrelation).sum(), pairs, flip };
    emit(common, "eprb", Some(n), &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellCli {
    /// Angle between successive coplanar settings, degrees.
    pub angle_deg: f64,
}

impl Default for BellCli {
    fn default() -> Self {
        Self { angle_deg: 120.0 }
    }
}

#[derive(Serialize)]
struct BellResults {
    terms: [f64; 3],
    lhs: f64,
    bound: f64,
    violated: bool,
    certificate: nogo::FeasibilityCertificate,
}

pub fn bell(common: &Common, angles: Option<f64>) -> Outcome {
    let (mut cfg, t0): (BellCli, _) = setup(common)?;
    if let Some(a) = angles {
        cfg.angle_deg = a;
    }
    let th = cfg.angle_deg.to_radians();
    let dirs = [pauli::xz_direction(0.0), pauli::xz_direction(th), pauli::xz_direction(2.0 * th)];
    let terms = nogo::bell_terms(dirs[0], dirs[1], dirs[2])?;
    let lhs: f64 = terms.iter().sum();
    let dot = |u: [f64; 3], v: [f64; 3]| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    let expected = [(0, 1), (1, 2), (2, 0)].map(|(i, j)| 0.5 * (1.0 + dot(dirs[i], dirs[j])));
    let model = nogo::bell_model(dirs)?;
    let certificate = nogo::value_map_feasibility(&model)?;
    let dev = terms.iter().zip(&expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let violated = lhs < 1.0;
    let checks = vec![
        Check::at_most("terms_vs_closed_form", dev, 1e-12),
        Check::holds("certificate_verifies", certificate.verify(&model).is_ok()),
        Check::holds("violation_implies_infeasible", !violated || !certificate.feasible),
    ];
    let mut csv = String::from("pair,term,expected\n");
    for (k, (t, e)) in terms.iter().zip(&expected).enumerate() {
        writeln!(csv, "{k},{t:.15e},{e:.15e}").ok();
    }
    let res = BellResults { terms, lhs, bound: 1.0, violated, certificate };
    emit(common, "bell", None, &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardyCli {
    pub grid: usize,
    pub budget: usize,
    pub product_states: usize,
    pub product_directions: usize,
}

impl Default for HardyCli {
    fn default() -> Self {
        Self { grid: 64, budget: 1_000_000, product_states: 64, product_directions: 6 }
    }
}

#[derive(Serialize)]
struct HardyResults {
    search: nogo::HardySearch,
    certificate: nogo::FeasibilityCertificate,
    product_sup: f64,
}

pub fn hardy(common: &Common) -> Outcome {
    let (cfg, t0): (HardyCli, _) = setup(common)?;
    let search = nogo::hardy_search(cfg.grid, cfg.budget)?;
    let model = nogo::hardy_model(&search.best)?;
    let certificate = nogo::value_map_feasibility(&model)?;
    let product_sup = nogo::hardy_product_sweep(cfg.product_states, cfg.product_directions, common.seed)?;
    let c = &search.best.conditions;
    let checks = vec![
        Check::holds("converged", search.converged),
        Check::within("p", search.best.p, 0.085, 0.095),
        Check::at_most("condition2_defect", 1.0 - c.d_given_a, nogo::HARDY_TOL),
        Check::at_most("condition3_defect", 1.0 - c.c_given_b, nogo::HARDY_TOL),
        Check::at_most("condition4", c.p_cd, nogo::HARDY_TOL),
        Check::at_most("reevaluation_diff", search.reevaluation_diff, 1e-8),
        Check::holds("noncontextual_infeasible", !certificate.feasible),
        Check::at_most("product_state_sup_p", product_sup, 1e-6),
    ];
    let b = &search.best;
    let csv = format!(
        "p,p_ab,d_given_a,c_given_b,p_cd\n{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}\n",
        b.p, c.p_ab, c.d_given_a, c.c_given_b, c.p_cd
    );
    let res = HardyResults { search, certificate, product_sup };
    emit(common, "hardy", None, &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormalismCli {
    /// Real amplitudes of the state for the σ_z, σ_x, σ_z sequence.
    pub sequence_state: Vec<f64>,
}

impl Default for FormalismCli {
    fn default() -> Self {
        Self { sequence_state: vec![0.6, 0.8] }
    }
}

#[derive(Serialize)]
struct SequenceRow {
    outcomes: Vec<f64>,
    exact: f64,
    frequency: f64,
    sigma: f64,
}

#[derive(Serialize)]
struct FormalismResults {
    sequence: Vec<SequenceRow>,
    max_deviation_in_sigma: f64,
    marginal_discrepancy: f64,
    closure: Vec<(String, f64)>,
    mixture_update_diff: f64,
    singlet_reduced_diff: f64,
    ensemble_born_diff: f64,
}

pub fn formalism_suite(common: &Common) -> Outcome {
    let (cfg, t0): (FormalismCli, _) = setup(common)?;
    let n = trial_count(common, 10_000)?;
    let (sz, sx) = (pauli::sigma_z(), pauli::sigma_x());
    let mz = ideal_measurement(&sz)?;
    let mx = ideal_measurement(&sx)?;
    let id = UnitaryOperator::identity(2);

    // Wigner formula against chained strong measurements
    let psi = StateVector::from_real(&cfg.sequence_state)?.normalized()?;
    let ms = [mz.clone(), mx.clone(), mz.clone()];
    let us = [id.clone(), id.clone(), id.clone()];
    let exact = sequential_probability(&ms, &us, &psi)?;
    let mc = sequential_monte_carlo(&ms, &us, &psi, n, common.seed)?;
    let mut sequence = Vec::new();
    let mut worst: f64 = 0.0;
    for (ls, p) in &exact {
        let f = mc.iter().find(|(m, _)| m.iter().zip(ls).all(|(a, b)| a.same_as(b))).map_or(0.0, |x| x.1);
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let dev = if sigma > 0.0 { (f - p).abs() / sigma } else if f == *p { 0.0 } else { f64::INFINITY };
        worst = worst.max(dev);
        sequence.push(SequenceRow { outcomes: ls.iter().map(|l| l.first()).collect(), exact: *p, frequency: f, sigma });
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus_x = StateVector::from_real(&[s, s])?;
    let discrepancy = marginal_discrepancy(&[mz.clone(), mx.clone()], &[id.clone(), id.clone()], &plus_x)?;

    // closure of constructed measurements
    let mut closure = Vec::new();
    let mut rng = Stream::new(common.seed, u64::MAX);
    closure.push(("ideal_sigma_z".to_string(), povm_of(&mz)?.closure_defect()));
    closure.push(("shift_experiment".into(), povm_of(&shift_experiment(3)?)?.closure_defect()));
    let coins = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
    closure.push(("coin_flip".into(), povm_of(&coin_flip(&coins, 3)?)?.closure_defect()));
    let edges: Vec<f64> = (0..=40).map(|k| -5.0 + 0.25 * k as f64).collect();
    closure.push(("approximate_sigma_z".into(), approximate_povm(&sz, 0.5, &edges)?.closure_defect()));
    closure.push(("random_povm".into(), nogo::random_povm(4, 5, &mut rng)?.closure_defect()));
    let mut checks: Vec<Check> = closure.iter().map(|(k, v)| Check::at_most(&format!("closure.{k}"), *v, 1e-10)).collect();
    let sg = experiments::sg_config_for(SgParams::default(), 1.0);
    let basis = [SystemState::Spinor(pauli::up()), SystemState::Spinor(pauli::down())];
    let grid_povm = experiments::povm_of_experiment(&experiments::stern_gerlach(&sg)?, &basis)?;
    closure.push(("stern_gerlach_grid".into(), grid_povm.closure_defect()));
    checks.push(Check::at_most("closure.stern_gerlach_grid", grid_povm.closure_defect(), 1e-4));

    // density matrices
    let r3 = |rng: &mut Stream| nogo::random_state(3, rng);
    let states = [(0.2, r3(&mut rng)?), (0.5, r3(&mut rng)?), (0.3, r3(&mut rng)?)];
    let w = ensemble_density(&states)?;
    let m3 = ideal_measurement(&HermitianOperator::diagonal(&[1.0, 1.0, -1.0]))?;
    let label = Label::scalar(1.0);
    let (p, updated) = density_update(&w, &m3, &label)?;
    let mut mixed = Operator::zeros(3);
    for (q, s) in &states {
        let (pk, wk) = density_update(&DensityMatrix::pure(s)?, &m3, &label)?;
        mixed = &mixed + &wk.op().scale_real(q * pk / p);
    }
    let mixture_update_diff = updated.op().max_abs_diff(&mixed);
    let singlet = DensityMatrix::pure(&pauli::singlet())?;
    let singlet_reduced_diff = singlet.reduce(0, &[2, 2])?.op().max_abs_diff(&Operator::identity(2).scale_real(0.5));
    let plus_minus = [(0.5, plus_x.clone()), (0.5, StateVector::from_real(&[s, -s])?)];
    let (w1, w2) = (ensemble_density(&[(0.5, pauli::up()), (0.5, pauli::down())])?, ensemble_density(&plus_minus)?);
    let probe = nogo::random_povm(2, 3, &mut rng)?;
    let ensemble_born_diff = probe
        .effects()
        .iter()
        .map(|(l, _)| (w1.probability(&probe, |x| x.same_as(l)) - w2.probability(&probe, |x| x.same_as(l))).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("sequence_max_deviation_sigma", worst, 3.0));
    checks.push(Check::at_least("sum_rule_discrepancy", discrepancy, 0.1));
    checks.push(Check::at_most("mixture_update_diff", mixture_update_diff, 1e-12));
    checks.push(Check::at_most("singlet_reduced_diff", singlet_reduced_diff, 1e-12));
    checks.push(Check::at_most("ensemble_born_diff", ensemble_born_diff, 1e-12));
    let mut csv = String::from("outcomes,exact,frequency,sigma\n");
    for r in &sequence {
        let o: Vec<String> = r.outcomes.iter().map(|x| format!("{x}")).collect();
        writeln!(csv, "{},{:.15e},{:.15e},{:.15e}", o.join(" "), r.exact, r.frequency, r.sigma).ok();
    }
    let res = FormalismResults {
        sequence,
        max_deviation_in_sigma: worst,
        marginal_discrepancy: discrepancy,
        closure,
        mixture_update_diff,
        singlet_reduced_diff,
        ensemble_born_diff,
    };
    emit(common, "formalism-suite", Some(n), &cfg, &res, checks, Some(csv), t0)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PovmCli {
    pub params: SgParams,
    /// First flight time; doubled until `O_T(+1)` changes by less than `tol`.
    pub t0: f64,
    pub tol: f64,
    pub max_doublings: usize,
    pub pvm_distance_max: f64,
}

impl Default for PovmCli {
    fn default() -> Self {
        Self { params: SgParams::default(), t0: 0.5, tol: 1e-3, max_doublings: 5, pvm_distance_max: 1e-3 }
    }
}

pub fn povm_extract(common: &Common) -> Outcome {
    let (cfg, t0): (PovmCli, _) = setup(common)?;
    let points = experiments::sg_povm_limit(cfg.params, cfg.t0, cfg.tol, cfg.max_doublings)?;
    let mut checks = Vec::new();
    let mono = points.windows(2).all(|w| w[1].p_up >= w[0].p_up && w[1].p_down <= w[0].p_down);
    checks.push(Check::holds("monotone", mono));
    let last = points.last().ok_or_else(|| Failure::Numerical("no POVM computed".into()))?;
    checks.push(Check::at_most("distance_to_pvm", last.distance_to_pvm, cfg.pvm_distance_max));
    let worst_closure = points.iter().map(|p| p.closure_defect).fold(0.0, f64::max);
    checks.push(Check::at_most("closure", worst_closure, 1e-4));
    let mut csv = String::from("time,p_up,p_down,p_up_exact,p_down_exact,off_diagonal,closure_defect,distance_to_pvm\n");
    for p in &points {
        writeln!(
            csv,
            "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.3e},{:.3e},{:.15e}",
            p.time, p.p_up, p.p_down, p.p_up_exact, p.p_down_exact, p.off_diagonal, p.closure_defect, p.distance_to_pvm
        )
        .ok();
    }
    emit(common, "povm-extract", None, &cfg, &points, checks, Some(csv), t0)
}
