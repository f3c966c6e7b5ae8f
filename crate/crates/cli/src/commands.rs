//! Subcommand implementations: run solvers, write artifacts, pick exit codes.

use mfvi_core::cavi::{cavi_solve, CaviOutcome};
use mfvi_core::diagnostics::{
    compare_all, dissipation_check, energy_dissipation_residual, h_refinement_study,
    second_moment_bound, AgreementReport, CompareConfig, DissipationLedger, EnergyResidual, HStudy,
    Method, MomentBound, Verdict,
};
use mfvi_core::fp::{fp_run, stationary_residual, FpTrajectory};
use mfvi_core::functionals::PsiOptions;
use mfvi_core::jko::{jko_run, JkoTrajectory};
use mfvi_core::model::GammaEstimate;
use mfvi_core::sde::{mkv_run, SdeOutcome};
use mfvi_core::{Model, ProductMeasure};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_CHECK_FAILED, EXIT_OK};
use crate::output::{indexed, marginals_table, num, nums, time_label, OutputDir, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RunCavi,
    RunJko,
    RunFp,
    RunSde,
    Compare,
    StudyH,
    Dissipation,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::RunCavi => "run-cavi",
            Command::RunJko => "run-jko",
            Command::RunFp => "run-fp",
            Command::RunSde => "run-sde",
            Command::Compare => "compare",
            Command::StudyH => "study-h",
            Command::Dissipation => "dissipation",
        }
    }
}

/// What a finished command hands back to the front end.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    /// One line per solver run.
    pub summary: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    gamma: GammaEstimate,
    results: R,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    model: Model,
    nu0: ProductMeasure,
    opts: PsiOptions,
    out: OutputDir,
    gamma: GammaEstimate,
    summary: Vec<String>,
}

impl Ctx<'_> {
    fn report<R: Serialize>(&self, command: Command, results: R) -> Result<(), CliError> {
        if self.cfg.output.report {
            self.out.write_json(
                "report.json",
                &Report {
                    command: command.name(),
                    config: self.cfg,
                    gamma: self.gamma,
                    results,
                },
            )?;
        }
        Ok(())
    }

    fn trace(&self, method: &str, table: &Table) -> Result<(), CliError> {
        if self.cfg.output.traces {
            self.out.write_csv(&format!("trace_{method}.csv"), table)?;
        }
        Ok(())
    }

    fn marginals(&self, method: &str, label: &str, nu: &ProductMeasure) -> Result<(), CliError> {
        if self.cfg.output.snapshots {
            self.out
                .write_csv(&format!("marginals_{method}_{label}.csv"), &marginals_table(nu))?;
        }
        Ok(())
    }
}

pub fn dispatch(cfg: &RunConfig, command: Command) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grids = cfg.grids()?;
    let domain: Vec<(f64, f64)> = grids.iter().map(|g| (g.x_min(), g.x_max())).collect();
    // a nonpositive estimate is logged by the model and echoed in the report
    let gamma = model.gamma_estimate(&domain)?;
    let mut ctx = Ctx {
        cfg,
        nu0: cfg.initial_measure()?,
        opts: cfg.psi_options(),
        out: OutputDir::create(&cfg.output.dir)?,
        model,
        gamma,
        summary: Vec::new(),
    };
    let exit_code = match command {
        Command::RunCavi => run_cavi(&mut ctx)?,
        Command::RunJko => run_jko(&mut ctx)?,
        Command::RunFp => run_fp(&mut ctx)?,
        Command::RunSde => run_sde(&mut ctx)?,
        Command::Compare => compare(&mut ctx)?,
        Command::StudyH => study_h(&mut ctx)?,
        Command::Dissipation => dissipation(&mut ctx)?,
    };
    ctx.out.write_run_meta(command.name())?;
    Ok(Outcome {
        exit_code,
        summary: ctx.summary,
    })
}

#[derive(Serialize)]
struct Marginals {
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl Marginals {
    fn of(nu: &ProductMeasure) -> Self {
        Self {
            means: nu.means(),
            variances: nu.variances(),
        }
    }
}

fn moments_line(nu: &ProductMeasure) -> String {
    let fmt = |xs: Vec<f64>| xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
    format!("mean=[{}] var=[{}]", fmt(nu.means()), fmt(nu.variances()))
}

fn run_cavi_solver(ctx: &Ctx) -> Result<CaviOutcome, CliError> {
    let c = &ctx.cfg.cavi;
    Ok(cavi_solve(&ctx.model, &ctx.nu0, c.tol, c.max_sweeps, &ctx.opts)?)
}

fn run_cavi(ctx: &mut Ctx) -> Result<i32, CliError> {
    let out = run_cavi_solver(ctx)?;
    let d = ctx.nu0.dim();
    let mut t = Table::new(
        ["sweep", "J"]
            .into_iter()
            .map(String::from)
            .chain(indexed("w2_move", d))
            .chain(indexed("mean", d))
            .chain(indexed("var", d))
            .collect(),
    );
    for s in &out.trace.sweeps {
        let mut row = vec![s.sweep.to_string(), num(s.objective)];
        row.extend(nums(&s.w2_move).chain(nums(&s.means)).chain(nums(&s.variances)));
        t.push(row);
    }
    ctx.trace("cavi", &t)?;
    ctx.marginals("cavi", "final", &out.measure)?;
    let objective = out.trace.sweeps.last().map_or(out.initial_objective, |s| s.objective);
    let movement = out.trace.sweeps.last().map_or(0.0, |s| s.w2_move.iter().copied().fold(0.0, f64::max));
    #[derive(Serialize)]
    struct R {
        sweeps: usize,
        converged: bool,
        initial_objective: f64,
        objective: f64,
        marginals: Marginals,
    }
    ctx.report(
        Command::RunCavi,
        R {
            sweeps: out.trace.sweeps.len(),
            converged: out.converged,
            initial_objective: out.initial_objective,
            objective,
            marginals: Marginals::of(&out.measure),
        },
    )?;
    if !out.converged {
        log::warn!("cavi: sweep budget exhausted before the movement tolerance was met");
    }
    ctx.summary.push(format!(
        "cavi: J={objective:.8} sweeps={} last_move={movement:.3e} converged={} {}",
        out.trace.sweeps.len(),
        out.converged,
        moments_line(&out.measure)
    ));
    Ok(EXIT_OK)
}

fn jko_trace(traj: &JkoTrajectory) -> Table {
    let d = traj.steps[0].measure.dim();
    let mut t = Table::new(
        ["k", "t", "J"]
            .into_iter()
            .map(String::from)
            .chain(indexed("w2_step", d))
            .chain(indexed("mean", d))
            .chain(indexed("var", d))
            .chain(["fallbacks".to_string(), "slack".to_string()])
            .collect(),
    );
    for s in &traj.steps[1..] {
        let mut row = vec![s.k.to_string(), num(s.t), num(s.objective)];
        row.extend(
            nums(&s.w2_steps)
                .chain(nums(&s.measure.means()))
                .chain(nums(&s.measure.variances())),
        );
        row.extend([s.fallbacks.to_string(), num(s.slack)]);
        t.push(row);
    }
    t
}

fn run_jko_solver(ctx: &Ctx) -> Result<JkoTrajectory, CliError> {
    Ok(jko_run(&ctx.model, &ctx.nu0, &ctx.cfg.jko.settings, ctx.cfg.jko.horizon, &ctx.opts)?)
}

fn jko_artifacts(ctx: &Ctx, traj: &JkoTrajectory) -> Result<(), CliError> {
    ctx.trace("jko", &jko_trace(traj))?;
    for &t in &ctx.cfg.output.snapshot_times {
        ctx.marginals("jko", &time_label(t), traj.at(t))?;
    }
    let last = traj.last();
    ctx.marginals("jko", &time_label(last.t), &last.measure)
}

fn jko_summary(traj: &JkoTrajectory) -> String {
    let last = traj.last();
    let fallbacks: usize = traj.steps.iter().map(|s| s.fallbacks).sum();
    let movement = last.w2_steps.iter().copied().fold(0.0, f64::max);
    format!(
        "jko: J={:.8} sweeps={} t={} last_move={movement:.3e} fallbacks={fallbacks} {}",
        last.objective,
        traj.sweeps(),
        last.t,
        moments_line(&last.measure)
    )
}

fn run_jko(ctx: &mut Ctx) -> Result<i32, CliError> {
    let traj = run_jko_solver(ctx)?;
    jko_artifacts(ctx, &traj)?;
    #[derive(Serialize)]
    struct R {
        sweeps: usize,
        t: f64,
        stationary: bool,
        objective: f64,
        fallbacks: usize,
        marginals: Marginals,
    }
    let last = traj.last();
    ctx.report(
        Command::RunJko,
        R {
            sweeps: traj.sweeps(),
            t: last.t,
            stationary: traj.stationary,
            objective: last.objective,
            fallbacks: traj.steps.iter().map(|s| s.fallbacks).sum(),
            marginals: Marginals::of(&last.measure),
        },
    )?;
    ctx.summary.push(jko_summary(&traj));
    Ok(EXIT_OK)
}

fn run_fp(ctx: &mut Ctx) -> Result<i32, CliError> {
    let traj: FpTrajectory =
        fp_run(&ctx.model, &ctx.nu0, &ctx.cfg.fp.settings, ctx.cfg.fp.horizon, &ctx.opts)?;
    let d = ctx.nu0.dim();
    let mut t = Table::new(
        ["t", "J", "residual"]
            .into_iter()
            .map(String::from)
            .chain(indexed("mean", d))
            .chain(indexed("var", d))
            .chain(indexed("mass", d))
            .chain(std::iter::once("step".to_string()))
            .collect(),
    );
    for s in &traj.snapshots[1..] {
        let residual = stationary_residual(&ctx.model, &s.measure, &ctx.opts)?;
        let mut row = vec![num(s.t), num(s.objective), num(residual)];
        row.extend(
            nums(&s.measure.means())
                .chain(nums(&s.measure.variances()))
                .chain(nums(&s.masses)),
        );
        row.push(s.step.to_string());
        t.push(row);
    }
    ctx.trace("fp", &t)?;
    for &time in &ctx.cfg.output.snapshot_times {
        ctx.marginals("fp", &time_label(time), &traj.at(time).measure)?;
    }
    let last = traj.last();
    // the clock accumulates `dt`, so label the final state by its horizon
    ctx.marginals("fp", &time_label(ctx.cfg.fp.horizon), &last.measure)?;
    #[derive(Serialize)]
    struct R {
        steps: usize,
        t: f64,
        objective: f64,
        max_mass_drift: f64,
        min_density: f64,
        positivity_preserved: bool,
        stationary_residual: f64,
        marginals: Marginals,
    }
    ctx.report(
        Command::RunFp,
        R {
            steps: last.step,
            t: last.t,
            objective: last.objective,
            max_mass_drift: traj.max_mass_drift,
            min_density: traj.min_density,
            positivity_preserved: traj.positivity_preserved(),
            stationary_residual: traj.final_residual,
            marginals: Marginals::of(&last.measure),
        },
    )?;
    ctx.summary.push(format!(
        "fp: J={:.8} steps={} residual={:.3e} mass_drift={:.3e} {}",
        last.objective,
        last.step,
        traj.final_residual,
        traj.max_mass_drift,
        moments_line(&last.measure)
    ));
    Ok(EXIT_OK)
}

fn run_sde(ctx: &mut Ctx) -> Result<i32, CliError> {
    let run: SdeOutcome =
        mkv_run(&ctx.model, &ctx.nu0, &ctx.cfg.sde.settings, ctx.cfg.sde.horizon, &ctx.opts)?;
    let d = ctx.nu0.dim();
    let mut t = Table::new(
        std::iter::once("t".to_string())
            .chain(indexed("mean", d))
            .chain(indexed("var", d))
            .chain(["oob_fraction".to_string(), "step".to_string()])
            .collect(),
    );
    for m in &run.moments {
        let mut row = vec![num(m.t)];
        row.extend(nums(&m.means).chain(nums(&m.variances)));
        row.extend([num(m.out_of_bounds), m.step.to_string()]);
        t.push(row);
    }
    ctx.trace("sde", &t)?;
    ctx.marginals("sde", &time_label(ctx.cfg.sde.horizon), &run.averaged)?;
    #[derive(Serialize)]
    struct R {
        steps: usize,
        particles: usize,
        max_out_of_bounds: f64,
        averaged: Marginals,
        final_cloud: Marginals,
    }
    ctx.report(
        Command::RunSde,
        R {
            steps: run.steps,
            particles: run.cloud.len(),
            max_out_of_bounds: run.max_out_of_bounds,
            averaged: Marginals::of(&run.averaged),
            final_cloud: Marginals {
                means: run.cloud.means(),
                variances: run.cloud.variances(),
            },
        },
    )?;
    ctx.summary.push(format!(
        "sde: steps={} particles={} out_of_bounds={:.3e} {}",
        run.steps,
        run.cloud.len(),
        run.max_out_of_bounds,
        moments_line(&run.averaged)
    ));
    Ok(EXIT_OK)
}

fn compare(ctx: &mut Ctx) -> Result<i32, CliError> {
    let cfg = ctx.cfg;
    let enabled = [cfg.cavi.enabled, cfg.jko.enabled, cfg.fp.enabled, cfg.sde.enabled];
    let report = if enabled.iter().all(|&e| e) {
        let cc = CompareConfig {
            cavi_tol: cfg.cavi.tol,
            cavi_max_sweeps: cfg.cavi.max_sweeps,
            jko: cfg.jko.settings,
            jko_horizon: cfg.jko.horizon,
            fp: cfg.fp.settings,
            fp_horizon: cfg.fp.horizon,
            sde: cfg.sde.settings,
            sde_horizon: cfg.sde.horizon,
        };
        compare_all(&ctx.model, &ctx.nu0, &cc, &ctx.opts)?
    } else {
        let mut results = Vec::new();
        for (method, on) in Method::ALL.into_iter().zip(enabled) {
            if on {
                results.push((method, final_measure(ctx, method)?));
            }
        }
        AgreementReport::from_measures(&ctx.model, results, &ctx.opts)?
    };
    for (method, nu) in report.methods.iter().zip(&report.measures) {
        let label = match method {
            Method::Cavi => "final".to_string(),
            Method::Jko => time_label(cfg.jko.horizon),
            Method::Fp => time_label(cfg.fp.horizon),
            Method::Sde => time_label(cfg.sde.horizon),
        };
        ctx.marginals(method.name(), &label, nu)?;
    }
    for s in &report.summaries {
        let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        ctx.summary.push(format!(
            "{}: J={:.8} mean=[{}] var=[{}]",
            s.method.name(),
            s.objective,
            fmt(&s.means),
            fmt(&s.variances)
        ));
    }
    let worst = |stochastic: bool| {
        let mut w: f64 = 0.0;
        for a in 0..report.methods.len() {
            for b in a + 1..report.methods.len() {
                let pair_stochastic =
                    report.methods[a].is_stochastic() || report.methods[b].is_stochastic();
                if pair_stochastic == stochastic {
                    w = report.distances[a][b].iter().copied().fold(w, f64::max);
                }
            }
        }
        w
    };
    ctx.summary.push(format!(
        "compare: verdict={} worst_grid_w2={:.3e} worst_sde_w2={:.3e}",
        report.verdict,
        worst(false),
        worst(true)
    ));
    let verdict = report.verdict;
    ctx.report(Command::Compare, &report)?;
    Ok(exit_for(verdict))
}

fn final_measure(ctx: &Ctx, method: Method) -> Result<ProductMeasure, CliError> {
    let cfg = ctx.cfg;
    Ok(match method {
        Method::Cavi => run_cavi_solver(ctx)?.measure,
        Method::Jko => run_jko_solver(ctx)?.last().measure.clone(),
        Method::Fp => fp_run(&ctx.model, &ctx.nu0, &cfg.fp.settings, cfg.fp.horizon, &ctx.opts)?
            .last()
            .measure
            .clone(),
        Method::Sde => {
            mkv_run(&ctx.model, &ctx.nu0, &cfg.sde.settings, cfg.sde.horizon, &ctx.opts)?.averaged
        }
    })
}

fn study_h(ctx: &mut Ctx) -> Result<i32, CliError> {
    let s = &ctx.cfg.study_h;
    let study: HStudy =
        h_refinement_study(&ctx.model, &ctx.nu0, &s.hs, &s.times, &ctx.cfg.jko.settings, &ctx.opts)?;
    #[derive(Serialize)]
    struct R<'a> {
        study: &'a HStudy,
        cells: Vec<mfvi_core::diagnostics::CellVerdict>,
        verdict: Verdict,
    }
    let d = ctx.nu0.dim();
    let mut table = Table::new(
        ["h", "t"]
            .into_iter()
            .map(String::from)
            .chain(indexed("gap", d))
            .chain(std::iter::once("gap_product".to_string()))
            .collect(),
    );
    for r in &study.rows {
        let mut row = vec![num(r.h), num(r.t)];
        row.extend(nums(&r.per_coordinate));
        row.push(num(r.product));
        table.push(row);
    }
    ctx.trace("study_h", &table)?;
    for &t in &s.times {
        let ratios = study.ratios(t).iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(",");
        ctx.summary.push(format!(
            "study-h: t={t} max_gap={:.3e} ratios=[{ratios}]",
            study.max_gap(t)
        ));
    }
    ctx.summary.push(format!("study-h: verdict={}", study.verdict()));
    ctx.report(
        Command::StudyH,
        R {
            study: &study,
            cells: study.cell_verdicts(),
            verdict: study.verdict(),
        },
    )?;
    // the table is the product; a failed shrink test is information, not an error
    Ok(EXIT_OK)
}

fn dissipation(ctx: &mut Ctx) -> Result<i32, CliError> {
    let traj = run_jko_solver(ctx)?;
    jko_artifacts(ctx, &traj)?;
    let ledger: DissipationLedger = dissipation_check(&traj);
    let moments: MomentBound = second_moment_bound(&traj);
    let energy: EnergyResidual = energy_dissipation_residual(&traj);
    let verdict = Verdict::from_bool(!ledger.violated && moments.holds);
    let mut table = Table::new(["k", "i", "half_w2_sq"].map(String::from).to_vec());
    for e in &ledger.entries {
        table.push(vec![e.k.to_string(), (e.i + 1).to_string(), num(e.half_w2_sq)]);
    }
    ctx.trace("ledger", &table)?;
    ctx.summary.push(jko_summary(&traj));
    ctx.summary.push(format!(
        "dissipation: cumulative={:.6e} bound={:.6e} slack={:.3e} moment_ratio={:.3} \
         energy_residual={:.3e} verdict={verdict}",
        ledger.cumulative, ledger.bound, ledger.slack, moments.worst_ratio, energy.median_relative
    ));
    #[derive(Serialize)]
    struct R<'a> {
        ledger: &'a DissipationLedger,
        moment_bound: MomentBound,
        energy_residual: &'a EnergyResidual,
        verdict: Verdict,
    }
    ctx.report(
        Command::Dissipation,
        R {
            ledger: &ledger,
            moment_bound: moments,
            energy_residual: &energy,
            verdict,
        },
    )?;
    Ok(exit_for(verdict))
}

fn exit_for(v: Verdict) -> i32 {
    if v.passed() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
