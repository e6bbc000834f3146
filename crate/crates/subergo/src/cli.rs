//! Scenario-driven front end: rate validation and the full verification
//! pipeline, with machine-checkable outputs.
//!
//! Pipeline stages, in order:
//!   1. rate_validation      — standing assumptions and the two lemmas
//!   2. drift_certificate    — Condition 3 on the scenario's (V, phi)
//!   3. psi_from_v           — the drift-to-time-space construction + Condition 2
//!   4. condition1_moments   — Step-3 calibration and hitting moments over C
//!   5. psi_from_hitting     — Condition 1 back to Condition 2, Monte Carlo
//!   6. quantitative_bounds  — Step-1/Step-4 and the hitting-integral bound
//!   7. convergence          — exact TV curve, vanishing gate, rate fit
//!
//! A failing stage marks the remaining stages as skipped. Exit codes:
//! 0 all checks pass, 1 some check failed, 2 configuration or runtime error.
//!
//! All output files are byte-deterministic: no timestamps, no wall-clock
//! entropy, floats printed with shortest-roundtrip formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use crate::convergence::{check_vanishing, fit_polynomial_rate, tv_curve, TvCurve};
use crate::drift::{
    build_psi_from_v, check_condition2, check_subgeometric_drift, DriftCertificate,
    LyapunovCandidate, PsiFunction,
};
use crate::error::{Error, Result};
use crate::hitting::{
    calibrate_r, check_step1_bound, check_step4_bound, check_tau_delta_bound, psi_via_hitting,
    HittingSampler, MomentEstimate, Start,
};
use crate::models::{model_from_registry, Ctmc, Model, ModelSpec, TargetSet};
use crate::rates::{
    check_scaling, check_submultiplicative, validate_assumptions, RateProfile,
};
use crate::report::CheckReport;
use crate::rng::{substream, StreamRole};
use crate::scenario::{KSpec, RSpec, Scenario, TargetSpec};

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub jobs: Option<usize>,
}

/// Whether every check in the command passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdOutcome {
    AllPassed,
    CheckFailed,
}

impl CmdOutcome {
    pub fn exit_code(self) -> i32 {
        match self {
            CmdOutcome::AllPassed => 0,
            CmdOutcome::CheckFailed => 1,
        }
    }
}

#[derive(Debug, Serialize)]
struct StageSummary {
    name: String,
    status: String, // "pass" | "fail" | "skipped" | "error"
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    constants: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    checks: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

impl StageSummary {
    fn from_checks(name: &str, checks: Vec<CheckReport>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        StageSummary {
            name: name.into(),
            status: if passed { "pass" } else { "fail" }.into(),
            constants: BTreeMap::new(),
            checks,
            notes: Vec::new(),
        }
    }

    fn passed(&self) -> bool {
        self.status == "pass"
    }
}

#[derive(Debug, Serialize)]
struct PipelineSummary {
    scenario_id: String,
    model: String,
    rate: String,
    seed: u64,
    n_paths: usize,
    all_passed: bool,
    stages: Vec<StageSummary>,
}

/// Validate the scenario's rate function: standing assumptions, the
/// submultiplicativity and scaling lemmas, the round trip, and the
/// derivative identity. Writes `rate_checks.csv`.
pub fn cmd_validate_rate(scenario: &Scenario, opts: &RunOptions) -> Result<CmdOutcome> {
    with_pool(opts.jobs, || {
        let seed = opts.seed.unwrap_or(scenario.seed);
        let profile = scenario.rate_profile()?;
        let checks = rate_check_suite(&profile, seed, 10_000)?;
        std::fs::create_dir_all(&opts.out_dir)?;
        write_rate_checks_csv(&opts.out_dir.join("rate_checks.csv"), &checks)?;
        let all = checks.iter().all(|c| c.passed);
        for c in &checks {
            eprintln!("{c}");
        }
        Ok(if all {
            CmdOutcome::AllPassed
        } else {
            CmdOutcome::CheckFailed
        })
    })
}

/// The rate-validation check battery.
fn rate_check_suite(
    profile: &RateProfile,
    seed: u64,
    n_samples: usize,
) -> Result<Vec<CheckReport>> {
    let mut checks = Vec::new();

    let grid: Vec<f64> = (0..=40).map(|i| 10f64.powf(6.0 * i as f64 / 40.0)).collect();
    checks.push(validate_assumptions(profile, &grid)?);

    let mut rng = substream(seed ^ 0x72617465, 0, StreamRole::Path);
    let pairs: Vec<(f64, f64)> = (0..n_samples)
        .map(|_| (50.0 * rng.gen::<f64>(), 50.0 * rng.gen::<f64>()))
        .collect();
    checks.push(check_submultiplicative(profile, &pairs)?);

    let samples: Vec<(f64, f64)> = (0..n_samples)
        .map(|_| {
            (
                10f64.powf(6.0 * rng.gen::<f64>()),
                10f64.powf(2.0 * rng.gen::<f64>()),
            )
        })
        .collect();
    checks.push(check_scaling(profile, &samples)?);

    // Round trip Hinv(H(u)) = u on a log-spaced grid.
    let mut roundtrip = CheckReport::new(format!("roundtrip[{}]", profile.id()));
    for k in 0..=60 {
        let u = 10f64.powf(6.0 * k as f64 / 60.0);
        let back = profile.h_inv(profile.h(u)?)?;
        roundtrip.record(
            format!("u={u:.3e}"),
            (back - u).abs() / u,
            10.0 * profile.tolerance(),
            0.0,
        );
    }
    checks.push(roundtrip);

    // Finite-difference derivative of Hinv against phi(Hinv).
    let mut deriv = CheckReport::new(format!("derivative_identity[{}]", profile.id()));
    for k in 0..=25 {
        let t = 2.0 * k as f64;
        let h = 1e-4 * (1.0 + t);
        let lo = (t - h).max(0.0);
        let fd = (profile.h_inv(t + h)? - profile.h_inv(lo)?) / (t + h - lo);
        let analytic = profile.phi(profile.h_inv(t)?)?;
        deriv.record(
            format!("t={t}"),
            (fd - analytic).abs() / analytic.abs().max(1e-300),
            1e-4,
            0.0,
        );
    }
    checks.push(deriv);

    Ok(checks)
}

/// Run the full verification pipeline for the scenario.
pub fn cmd_full_pipeline(scenario: &Scenario, opts: &RunOptions) -> Result<CmdOutcome> {
    with_pool(opts.jobs, || run_pipeline(scenario, opts))
}

fn with_pool<T>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match jobs {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(f)
        }
        _ => f(),
    }
}

const STAGES: [&str; 7] = [
    "rate_validation",
    "drift_certificate",
    "psi_from_v",
    "condition1_moments",
    "psi_from_hitting",
    "quantitative_bounds",
    "convergence",
];

fn run_pipeline(scenario: &Scenario, opts: &RunOptions) -> Result<CmdOutcome> {
    let out = &opts.out_dir;
    std::fs::create_dir_all(out)?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let n_paths = opts.paths.unwrap_or(scenario.estimator.n_paths);

    let mut stages: Vec<StageSummary> = Vec::new();
    let mut hitting_rows: Vec<HittingRow> = Vec::new();
    let mut fatal: Option<Error> = None;

    // Shared artifacts threaded through the stages.
    let profile = scenario.rate_profile()?;
    let model = model_from_registry(&scenario.model)?;
    let run = PipelineRun {
        scenario,
        seed,
        n_paths,
        profile: &profile,
        model: &model,
        out,
    };

    let mut artifacts = Artifacts::default();
    for (i, name) in STAGES.iter().enumerate() {
        let result = run.stage(name, &mut artifacts, &mut hitting_rows);
        match result {
            Ok(summary) => {
                let go_on = summary.passed();
                stages.push(summary);
                if !go_on {
                    mark_skipped(&mut stages, &STAGES[i + 1..]);
                    break;
                }
            }
            Err(e) => {
                stages.push(StageSummary {
                    name: name.to_string(),
                    status: "error".into(),
                    constants: BTreeMap::new(),
                    checks: Vec::new(),
                    notes: vec![e.to_string()],
                });
                mark_skipped(&mut stages, &STAGES[i + 1..]);
                fatal = Some(e);
                break;
            }
        }
    }

    write_hitting_csv(&out.join("hitting_estimates.csv"), &hitting_rows)?;
    let all_passed = fatal.is_none() && stages.iter().all(|s| s.passed());
    let summary = PipelineSummary {
        scenario_id: scenario.id.clone(),
        model: model.id().to_string(),
        rate: profile.id(),
        seed,
        n_paths,
        all_passed,
        stages,
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    for s in &summary.stages {
        eprintln!("[{}] {}", s.status.to_uppercase(), s.name);
    }
    if let Some(e) = fatal {
        return Err(e);
    }
    Ok(if all_passed {
        CmdOutcome::AllPassed
    } else {
        CmdOutcome::CheckFailed
    })
}

fn mark_skipped(stages: &mut Vec<StageSummary>, rest: &[&str]) {
    for name in rest {
        stages.push(StageSummary {
            name: name.to_string(),
            status: "skipped".into(),
            constants: BTreeMap::new(),
            checks: Vec::new(),
            notes: vec!["earlier stage did not pass".into()],
        });
    }
}

/// Artifacts passed from stage to stage.
#[derive(Default)]
struct Artifacts {
    cert: Option<DriftCertificate>,
    v: Option<LyapunovCandidate>,
    psi_v: Option<PsiFunction>,
    r: Option<f64>,
    r0: Option<f64>,
}

struct PipelineRun<'a> {
    scenario: &'a Scenario,
    seed: u64,
    n_paths: usize,
    profile: &'a RateProfile,
    model: &'a Model,
    out: &'a Path,
}

impl PipelineRun<'_> {
    fn chain(&self) -> Result<&Ctmc> {
        self.model.as_chain()
    }

    fn stage(
        &self,
        name: &str,
        artifacts: &mut Artifacts,
        rows: &mut Vec<HittingRow>,
    ) -> Result<StageSummary> {
        match name {
            "rate_validation" => self.stage_rate_validation(),
            "drift_certificate" => self.stage_drift(artifacts),
            "psi_from_v" => self.stage_psi_from_v(artifacts),
            "condition1_moments" => self.stage_condition1(artifacts, rows),
            "psi_from_hitting" => self.stage_psi_from_hitting(artifacts, rows),
            "quantitative_bounds" => self.stage_quantitative(artifacts, rows),
            "convergence" => self.stage_convergence(),
            other => Err(Error::Config(format!("unknown stage {other}"))),
        }
    }

    fn stage_rate_validation(&self) -> Result<StageSummary> {
        let checks = rate_check_suite(self.profile, self.seed, 2000)?;
        write_rate_checks_csv(&self.out.join("rate_checks.csv"), &checks)?;
        Ok(StageSummary::from_checks("rate_validation", checks))
    }

    fn stage_drift(&self, artifacts: &mut Artifacts) -> Result<StageSummary> {
        let chain = self.chain()?;
        let vspec = self
            .scenario
            .lyapunov
            .as_ref()
            .ok_or_else(|| Error::Config("pipeline needs a lyapunov spec".into()))?;
        let v = vspec.build(chain.n_states())?;
        let c = match &self.scenario.target_set {
            TargetSpec::Auto(_) => None,
            TargetSpec::States { states } => Some(TargetSet::states(states.clone())?),
        };
        let k = match self.scenario.k {
            KSpec::Auto(_) => None,
            KSpec::Fixed(k) => Some(k),
        };
        let cert = check_subgeometric_drift(chain, &v, self.profile, c.as_ref(), k)?;
        write_drift_certificate_csv(&self.out.join("drift_certificate.csv"), &cert, None)?;

        let mut summary = StageSummary {
            name: "drift_certificate".into(),
            status: if cert.passed { "pass" } else { "fail" }.into(),
            constants: BTreeMap::new(),
            checks: Vec::new(),
            notes: vec![format!("C = {}", cert.target.describe())],
        };
        summary.constants.insert("K".into(), cert.k);
        summary
            .constants
            .insert("worst_residual".into(), cert.worst_residual());
        artifacts.v = Some(v);
        artifacts.cert = Some(cert);
        Ok(summary)
    }

    fn stage_psi_from_v(&self, artifacts: &mut Artifacts) -> Result<StageSummary> {
        let chain = self.chain()?;
        let cert = artifacts.cert.as_ref().expect("drift stage ran");
        let v = artifacts.v.as_ref().expect("drift stage ran");
        let psi = build_psi_from_v(v, self.profile, cert)?;
        // re-emit the certificate with the time-space constants appended
        write_drift_certificate_csv(
            &self.out.join("drift_certificate.csv"),
            cert,
            Some((psi.kappa(), psi.eta)),
        )?;
        let t_grid = self.scenario.condition2_grid.build()?;
        let report = check_condition2(chain, &psi, &cert.target, &t_grid, self.scenario.condition2_dt)?;
        let mut summary = StageSummary::from_checks("psi_from_v", vec![report]);
        summary.constants.insert("kappa".into(), psi.kappa());
        summary.constants.insert("kappa_sup".into(), psi.kappa_sup);
        summary
            .constants
            .insert("kappa_drift".into(), psi.kappa_drift);
        summary.constants.insert("eta".into(), psi.eta);
        artifacts.psi_v = Some(psi);
        Ok(summary)
    }

    fn stage_condition1(
        &self,
        artifacts: &mut Artifacts,
        rows: &mut Vec<HittingRow>,
    ) -> Result<StageSummary> {
        let chain = self.chain()?;
        let cert = artifacts.cert.as_ref().expect("drift stage ran");
        let psi = artifacts.psi_v.as_ref().expect("psi stage ran");
        let base_sampler = HittingSampler::new(
            self.model.clone(),
            cert.target.clone(),
            1.0,
            self.scenario.estimator.horizon_cap,
            self.seed,
        )?;
        let cal = calibrate_r(&base_sampler, psi, self.n_paths, false)?;
        let r = match self.scenario.estimator.r {
            RSpec::Fixed(r) => r,
            RSpec::Calibrate(_) => cal.r0,
        };
        artifacts.r = Some(r);
        artifacts.r0 = Some(cal.r0);

        let sampler = base_sampler.with_r(r)?;
        let mut checks = vec![cal.report.clone()];
        let mut reliable = true;
        let mut states: Vec<usize> = (0..chain.n_states())
            .filter(|&x| cert.target.contains_state(x))
            .collect();
        if !states.contains(&self.scenario.x0) && self.scenario.x0 < chain.n_states() {
            states.push(self.scenario.x0);
        }
        for &x in &states {
            let est = sampler.estimate_hitting_moment(Start::State(x), self.profile, self.n_paths)?;
            reliable &= est.reliable();
            rows.push(HittingRow {
                scenario: self.scenario.id.clone(),
                operation: "hitting_moment".into(),
                x0: x.to_string(),
                r,
                n_paths: self.n_paths,
                est,
                bound: None,
                pass: est.reliable(),
            });
        }
        let mut summary = StageSummary::from_checks("condition1_moments", checks.drain(..).collect());
        if !reliable {
            summary.status = "fail".into();
            summary
                .notes
                .push("censored fraction above threshold for some state".into());
        }
        summary.constants.insert("r".into(), r);
        summary.constants.insert("r0".into(), cal.r0);
        summary
            .constants
            .insert("step3_sup".into(), cal.step3_sup);
        Ok(summary)
    }

    fn stage_psi_from_hitting(
        &self,
        artifacts: &mut Artifacts,
        rows: &mut Vec<HittingRow>,
    ) -> Result<StageSummary> {
        let chain = self.chain()?;
        let cert = artifacts.cert.as_ref().expect("drift stage ran");
        let r = artifacts.r.expect("condition1 stage ran");
        let sampler = HittingSampler::new(
            self.model.clone(),
            cert.target.clone(),
            r,
            self.scenario.estimator.horizon_cap,
            self.seed,
        )?;
        let t_grid = self.scenario.condition2_grid.build()?;
        let all_states: Vec<usize> = (0..chain.n_states()).collect();
        let (psi_h, table) = psi_via_hitting(
            &sampler,
            self.profile,
            &t_grid,
            &all_states,
            self.scenario.estimator.psi_paths,
        )?;
        for (slot, &x) in table.states.iter().enumerate() {
            rows.push(HittingRow {
                scenario: self.scenario.id.clone(),
                operation: "psi0_via_hitting".into(),
                x0: x.to_string(),
                r,
                n_paths: self.scenario.estimator.psi_paths,
                est: MomentEstimate {
                    mean: table.mean[slot][0],
                    std_error: table.se[slot][0],
                    n_paths: self.scenario.estimator.psi_paths,
                    censored_fraction: table.censored_fraction[slot],
                },
                bound: None,
                pass: table.censored_fraction[slot] <= crate::hitting::CENSOR_THRESHOLD,
            });
        }
        let report =
            check_condition2(chain, &psi_h, &cert.target, &t_grid, self.scenario.condition2_dt)?;
        let mut summary = StageSummary::from_checks("psi_from_hitting", vec![report]);
        summary.constants.insert("kappa".into(), psi_h.kappa());
        summary
            .constants
            .insert("kappa_sup".into(), psi_h.kappa_sup);
        Ok(summary)
    }

    fn stage_quantitative(
        &self,
        artifacts: &mut Artifacts,
        rows: &mut Vec<HittingRow>,
    ) -> Result<StageSummary> {
        let chain = self.chain()?;
        let cert = artifacts.cert.as_ref().expect("drift stage ran");
        let psi = artifacts.psi_v.as_ref().expect("psi stage ran");
        let r0 = artifacts.r0.expect("condition1 stage ran");
        let sampler = HittingSampler::new(
            self.model.clone(),
            cert.target.clone(),
            r0,
            self.scenario.estimator.horizon_cap,
            self.seed,
        )?;

        let mut states: Vec<usize> = (0..chain.n_states())
            .filter(|&x| cert.target.contains_state(x))
            .collect();
        if !states.contains(&self.scenario.x0) && self.scenario.x0 < chain.n_states() {
            states.push(self.scenario.x0);
        }

        let step1 = check_step1_bound(&sampler, psi, &states, self.n_paths)?;
        for &x in &states {
            if let (Some(mean), Some(se)) = (
                step1.constants.get(&format!("E_Hinv_tau1[{x}]")),
                step1.constants.get(&format!("se[{x}]")),
            ) {
                rows.push(HittingRow {
                    scenario: self.scenario.id.clone(),
                    operation: "step1_hinv_tau1".into(),
                    x0: x.to_string(),
                    r: r0,
                    n_paths: self.n_paths,
                    est: MomentEstimate {
                        mean: *mean,
                        std_error: *se,
                        n_paths: self.n_paths,
                        censored_fraction: 0.0,
                    },
                    bound: Some(2.0 * psi.eval(0.0, x)?),
                    pass: step1.passed,
                });
            }
        }

        let step4 = check_step4_bound(&sampler, psi, r0, self.n_paths, self.scenario.estimator.horizon_cap)?;
        for x in 0..chain.n_states() {
            if let Some(a) = step4.constants.get(&format!("A[{x}]")) {
                rows.push(HittingRow {
                    scenario: self.scenario.id.clone(),
                    operation: "step4_a_functional".into(),
                    x0: x.to_string(),
                    r: r0,
                    n_paths: self.n_paths,
                    est: MomentEstimate {
                        mean: *a,
                        std_error: step4.constants[&format!("A_se[{x}]")],
                        n_paths: self.n_paths,
                        censored_fraction: 0.0,
                    },
                    bound: Some(4.0 * psi.kappa()),
                    pass: step4.passed,
                });
            }
        }

        let mut checks = vec![step1, step4];
        for &x in &states {
            let report = check_tau_delta_bound(&sampler, x, psi, self.scenario.delta, self.n_paths)?;
            rows.push(HittingRow {
                scenario: self.scenario.id.clone(),
                operation: "tau_delta_integral".into(),
                x0: x.to_string(),
                r: r0,
                n_paths: self.n_paths,
                est: MomentEstimate {
                    mean: report.constants["lhs_mean"],
                    std_error: report.constants["lhs_se"],
                    n_paths: self.n_paths,
                    censored_fraction: 0.0,
                },
                bound: Some(report.constants["bound"]),
                pass: report.passed,
            });
            checks.push(report);
        }
        Ok(StageSummary::from_checks("quantitative_bounds", checks))
    }

    fn stage_convergence(&self) -> Result<StageSummary> {
        let chain = self.chain()?;
        let times = self
            .scenario
            .tv_times
            .as_ref()
            .ok_or_else(|| Error::Config("pipeline needs tv_times".into()))?
            .build()?;
        let curve = tv_curve(chain, self.scenario.x0, self.profile, &times)?;
        write_tv_csv(&self.out.join("tv_curve.csv"), &curve)?;

        let vanish = check_vanishing(&curve, self.scenario.burn_in, self.scenario.window)?;
        let mut checks = vec![vanish];
        let mut constants = BTreeMap::new();

        let t_max = *times.last().expect("non-empty grid");
        let slope = fit_polynomial_rate(&curve, self.scenario.burn_in.max(times[0]), t_max)?;
        constants.insert("slope".into(), slope);
        if let crate::scenario::RateSpec::Polynomial { alpha, .. } = self.scenario.rate {
            let mut slope_check = CheckReport::new("polynomial_rate_slope");
            slope_check.record(
                "slope <= -alpha/(1-alpha) + 0.2",
                slope,
                -alpha / (1.0 - alpha) + 0.2,
                0.0,
            );
            checks.push(slope_check);
        }

        // Truncation sensitivity: rerun at 2N and record the TV-curve shift.
        if let Some(doubled) = doubled_model_spec(&self.scenario.model) {
            let Model::Chain(chain2) = model_from_registry(&doubled)? else {
                return Err(Error::Config("doubled model is not a chain".into()));
            };
            let curve2 = tv_curve(&chain2, self.scenario.x0, self.profile, &times)?;
            let shift = curve
                .tv
                .iter()
                .zip(&curve2.tv)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            constants.insert("truncation_shift".into(), shift);
            let mut shift_check = CheckReport::new("truncation_shift");
            shift_check.record("max |tv_N - tv_2N|", shift, 1e-3, 0.0);
            checks.push(shift_check);
        }

        let mut summary = StageSummary::from_checks("convergence", checks);
        summary.constants = constants;
        Ok(summary)
    }
}

fn doubled_model_spec(spec: &ModelSpec) -> Option<ModelSpec> {
    match spec {
        ModelSpec::BdGeometric { lambda, mu, n_max } => Some(ModelSpec::BdGeometric {
            lambda: *lambda,
            mu: *mu,
            n_max: n_max * 2,
        }),
        ModelSpec::BdPolynomial { c, n_max } => Some(ModelSpec::BdPolynomial {
            c: *c,
            n_max: n_max * 2,
        }),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

struct HittingRow {
    scenario: String,
    operation: String,
    x0: String,
    r: f64,
    n_paths: usize,
    est: MomentEstimate,
    bound: Option<f64>,
    pass: bool,
}

fn write_hitting_csv(path: &Path, rows: &[HittingRow]) -> Result<()> {
    let mut s = String::from(
        "scenario,operation,x0,r,n_paths,mean,std_error,censored_fraction,bound,pass\n",
    );
    for row in rows {
        let bound = row.bound.map_or(String::new(), |b| b.to_string());
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            row.scenario,
            row.operation,
            row.x0,
            row.r,
            row.n_paths,
            row.est.mean,
            row.est.std_error,
            row.est.censored_fraction,
            bound,
            row.pass
        )
        .expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_rate_checks_csv(path: &Path, checks: &[CheckReport]) -> Result<()> {
    let mut s = String::from("check,points,passed,worst_margin,worst_location\n");
    for c in checks {
        writeln!(
            s,
            "{},{},{},{},{}",
            c.name,
            c.checked,
            c.passed,
            c.worst_margin,
            c.worst_location.as_deref().unwrap_or("")
        )
        .expect("string write");
        for v in &c.violations {
            writeln!(s, "#violation,{},{},{},{}", c.name, v.location, v.lhs, v.rhs)
                .expect("string write");
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn write_drift_certificate_csv(
    path: &Path,
    cert: &DriftCertificate,
    psi_constants: Option<(f64, f64)>,
) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "# model: {}", cert.model_id).expect("string write");
    writeln!(s, "# rate: {}", cert.rate_id).expect("string write");
    writeln!(s, "# tolerance: {}", cert.tolerance).expect("string write");
    writeln!(s, "location,v,residual,in_c").expect("string write");
    for (i, (loc, r)) in cert.residuals.iter().enumerate() {
        let v = cert.v_values.get(i).copied().unwrap_or(f64::NAN);
        let in_c = match &cert.target {
            TargetSet::States(_) => cert.target.contains_state(i),
            TargetSet::Interval { .. } => false,
        };
        writeln!(s, "{loc},{v},{r},{in_c}").expect("string write");
    }
    writeln!(s, "# C: {}", cert.target.describe()).expect("string write");
    writeln!(s, "# K: {}", cert.k).expect("string write");
    if let Some((kappa, eta)) = psi_constants {
        writeln!(s, "# kappa: {kappa}").expect("string write");
        writeln!(s, "# eta: {eta}").expect("string write");
    }
    writeln!(s, "# passed: {}", cert.passed).expect("string write");
    std::fs::write(path, s)?;
    Ok(())
}

fn write_tv_csv(path: &Path, curve: &TvCurve) -> Result<()> {
    let mut s = String::from("t,tv,rate_value,rate_product\n");
    for k in 0..curve.times.len() {
        writeln!(
            s,
            "{},{},{},{}",
            curve.times[k], curve.tv[k], curve.rate_value[k], curve.rate_product[k]
        )
        .expect("string write");
    }
    std::fs::write(path, s)?;
    Ok(())
}
