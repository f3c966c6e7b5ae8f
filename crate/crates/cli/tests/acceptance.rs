//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mfvi_core::cavi::{cavi_solve, CaviOutcome};
use mfvi_core::diagnostics::{dissipation_check, h_refinement_study, MIN_REFINEMENT_RATIO};
use mfvi_core::fp::{fp_run, stationary_residual, FpConfig, FpTrajectory};
use mfvi_core::functionals::PsiOptions;
use mfvi_core::jko::{jko_run, JkoConfig, JkoTrajectory};
use mfvi_core::measure::w2;
use mfvi_core::model::catalog;
use mfvi_core::oracle::{discrete_ot_bruteforce, gaussian_cavi_fixed_point, ou_moments};
use mfvi_core::rng::CounterRng;
use mfvi_core::sde::{mkv_run, SdeConfig, SdeOutcome};
use mfvi_core::{Grid1D, GridMeasure1D, Model, ProductMeasure, QuadraticModel};
use rand::Rng;

const MEAN_TOL: f64 = 2e-3;
const VAR_TOL: f64 = 1e-2;
const SDE_VAR_TOL: f64 = 5e-2;
const GRID_W2_TOL: f64 = 1e-2;
const SDE_W2_TOL: f64 = 5e-2;
const FULL_POSTERIOR_VAR: f64 = 4.0 / 3.0;
const UNDERDISPERSION_GAP: f64 = 0.25;
const CAVI_MONOTONE_TOL: f64 = 1e-8;
const MASS_DRIFT_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-4;
const OU_REL_TOL: f64 = 1e-2;
const OT_TOL: f64 = 1e-10;
const GAUSSIAN_W2_TOL: f64 = 2e-2;
const SEEDED_CONFIGS: u64 = 20;

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn coupled() -> (Vec<Vec<f64>>, Vec<f64>) {
    (vec![vec![1.0, 0.5], vec![0.5, 1.0]], vec![0.0, 0.0])
}

fn separable() -> (Vec<Vec<f64>>, Vec<f64>) {
    (vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![-2.0, 4.0])
}

fn quadratic((a, b): (Vec<Vec<f64>>, Vec<f64>)) -> Model {
    QuadraticModel::new(a, b).unwrap().into()
}

fn grid() -> Grid1D {
    Grid1D::new(-8.0, 8.0, 512).unwrap()
}

fn gaussian_start(params: &[(f64, f64)]) -> ProductMeasure {
    let g = grid();
    ProductMeasure::gaussian(&vec![g; params.len()], params).unwrap()
}

struct Runs {
    cavi: CaviOutcome,
    jko: JkoTrajectory,
    fp: FpTrajectory,
    sde: SdeOutcome,
}

fn run_all(model: &Model, nu0: &ProductMeasure) -> Runs {
    let opts = PsiOptions::default();
    Runs {
        cavi: cavi_solve(model, nu0, 1e-10, 500, &opts).unwrap(),
        jko: jko_run(model, nu0, &JkoConfig::with_h(0.05), 20.0, &opts).unwrap(),
        fp: fp_run(model, nu0, &FpConfig::with_dt(1e-3), 20.0, &opts).unwrap(),
        sde: mkv_run(model, nu0, &SdeConfig::default(), 10.0, &opts).unwrap(),
    }
}

impl Runs {
    fn grid_finals(&self) -> [(&'static str, &ProductMeasure); 3] {
        [
            ("cavi", &self.cavi.measure),
            ("jko", &self.jko.last().measure),
            ("fp", &self.fp.last().measure),
        ]
    }
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Criteria 1 and 3 on the coupled model.
fn fixed_point_and_underdispersion(runs: &Runs) -> (Verdict, Verdict) {
    let (a, b) = coupled();
    let (m_star, v_star) = gaussian_cavi_fixed_point(&a, &b).unwrap();
    let mut ok1 = true;
    let mut ok3 = true;
    let mut d1 = Vec::new();
    let mut d3 = Vec::new();
    for (name, nu) in runs.grid_finals() {
        let dm: Vec<f64> = nu.means().iter().zip(&m_star).map(|(m, s)| (m - s).abs()).collect();
        let dv: Vec<f64> = nu.variances().iter().zip(&v_star).map(|(v, s)| (v - s).abs()).collect();
        ok1 &= dm.iter().all(|&x| x < MEAN_TOL) && dv.iter().all(|&x| x < VAR_TOL);
        d1.push(format!("{name} |dm|={} |dv|={}", fmt(&dm), fmt(&dv)));
        ok3 &= nu
            .variances()
            .iter()
            .all(|&v| (v - 1.0).abs() < VAR_TOL && FULL_POSTERIOR_VAR - v > UNDERDISPERSION_GAP);
    }
    let sv = runs.sde.averaged.variances();
    let sdv: Vec<f64> = sv.iter().zip(&v_star).map(|(v, s)| (v - s).abs()).collect();
    ok1 &= sdv.iter().all(|&x| x < SDE_VAR_TOL);
    d1.push(format!("sde |dv|={}", fmt(&sdv)));
    ok3 &= sv
        .iter()
        .all(|&v| (v - 1.0).abs() < SDE_VAR_TOL && FULL_POSTERIOR_VAR - v > UNDERDISPERSION_GAP);
    let all_vars: Vec<f64> = runs
        .grid_finals()
        .iter()
        .flat_map(|(_, nu)| nu.variances())
        .chain(sv.iter().copied())
        .collect();
    let max_var = all_vars.iter().copied().fold(f64::MIN, f64::max);
    d3.push(format!("largest marginal variance {max_var:.5} vs full-posterior 4/3"));
    (
        Verdict {
            id: 1,
            title: "coupled Gaussian fixed point",
            pass: ok1,
            detail: d1.join("; "),
        },
        Verdict {
            id: 3,
            title: "mean-field under-dispersion",
            pass: ok3,
            detail: d3.join("; "),
        },
    )
}

fn separable_exactness(runs: &Runs) -> Verdict {
    let (a, b) = separable();
    let (m, v) = gaussian_cavi_fixed_point(&a, &b).unwrap();
    let exact = gaussian_start(&[(m[0], v[0]), (m[1], v[1])]);
    let mut ok = true;
    let mut detail = Vec::new();
    let mut check = |name: &str, nu: &ProductMeasure, tol: f64| {
        let d = nu.w2_per_coordinate(&exact).unwrap();
        ok &= d.iter().all(|&x| x < tol);
        detail.push(format!("{name} W2={}", fmt(&d)));
    };
    for (name, nu) in runs.grid_finals() {
        check(name, nu, GRID_W2_TOL);
    }
    check("sde", &runs.sde.averaged, SDE_W2_TOL);
    Verdict {
        id: 2,
        title: "exactness on a separable target",
        pass: ok,
        detail: detail.join("; "),
    }
}

/// A seeded random SPD model, dimension 2 or 3, and a seeded start.
fn seeded_problem(seed: u64) -> (Model, ProductMeasure, f64) {
    let mut rng = CounterRng::new(seed, &[0xacce]);
    let d = if seed % 4 == 3 { 3 } else { 2 };
    let mut a = vec![vec![0.0f64; d]; d];
    for i in 0..d {
        a[i][i] = rng.random_range(0.8..2.5);
    }
    for i in 0..d {
        for j in 0..i {
            let c = rng.random_range(-0.3..0.3) * (a[i][i] * a[j][j]).sqrt() / (d - 1) as f64;
            a[i][j] = c;
            a[j][i] = c;
        }
    }
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Grid1D::new(-8.0, 8.0, 256).unwrap();
    let params: Vec<(f64, f64)> = (0..d)
        .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.3..2.5)))
        .collect();
    let nu0 = ProductMeasure::gaussian(&vec![g; d], &params).unwrap();
    let h = [0.2, 0.1, 0.05][(seed % 3) as usize];
    (QuadraticModel::new(a, b).unwrap().into(), nu0, h)
}

/// Ledger verdict and the slack it needed, relative to its bound.
fn ledger_row(name: impl Into<String>, traj: &JkoTrajectory) -> (String, bool, f64) {
    let l = dissipation_check(traj);
    let rel = if l.bound > 0.0 { l.slack / l.bound } else { l.slack };
    (name.into(), !l.violated, rel)
}

/// Index of the first rise in a CAVI trace beyond tolerance.
fn cavi_rise(out: &CaviOutcome) -> Option<usize> {
    let mut prev = out.initial_objective;
    for s in &out.trace.sweeps {
        if s.objective > prev + CAVI_MONOTONE_TOL {
            return Some(s.sweep);
        }
        prev = s.objective;
    }
    None
}

/// Index of the first rise in a JKO trace beyond the granted slack.
fn jko_rise(traj: &JkoTrajectory) -> Option<usize> {
    let h = traj.h();
    traj.steps
        .windows(2)
        .find(|w| w[1].objective > w[0].objective + w[1].slack / h + 1e-12)
        .map(|w| w[1].k)
}

fn w2_correctness() -> Verdict {
    // equal-weight atoms at distinct cell centers; 240 levels split evenly for any count up to six
    let g = Grid1D::new(-4.0, 4.0, 64).unwrap();
    let levels = 240;
    let mut worst_ot: f64 = 0.0;
    for case in 0..200u64 {
        let mut rng = CounterRng::new(8, &[case]);
        let n = rng.random_range(1..=6usize);
        let atoms = |rng: &mut CounterRng| {
            let cells = rand::seq::index::sample(rng, g.len(), n).into_vec();
            let mut raw = vec![0.0; g.len()];
            for &c in &cells {
                raw[c] = 1.0;
            }
            let xs: Vec<f64> = cells.iter().map(|&c| g.center(c)).collect();
            (GridMeasure1D::normalize(&raw, g).unwrap(), xs)
        };
        let (mu, xa) = atoms(&mut rng);
        let (nu, xb) = atoms(&mut rng);
        let exact = discrete_ot_bruteforce(&xa, &xb).unwrap();
        worst_ot = worst_ot.max((w2(&mu, &nu, levels) - exact).abs());
    }
    let g = grid();
    let mut worst_gauss: f64 = 0.0;
    for case in 0..50u64 {
        let mut rng = CounterRng::new(9, &[case]);
        // at least four standard deviations of room on either side of [-8, 8]
        let (m1, m2): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.3..1.5), rng.random_range(0.3..1.5));
        let a = GridMeasure1D::gaussian(g, m1, s1 * s1).unwrap();
        let b = GridMeasure1D::gaussian(g, m2, s2 * s2).unwrap();
        let exact = ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt();
        worst_gauss = worst_gauss.max((w2(&a, &b, 4 * g.len()) - exact).abs());
    }
    Verdict {
        id: 8,
        title: "W2 against exhaustive transport and the Gaussian closed form",
        pass: worst_ot < OT_TOL && worst_gauss < GAUSSIAN_W2_TOL,
        detail: format!("worst atom error {worst_ot:.1e}; worst Gaussian error {worst_gauss:.1e}"),
    }
}

fn fp_checks(coupled_runs: &Runs) -> Verdict {
    let model = quadratic(coupled());
    let opts = PsiOptions::default();
    let fp = &coupled_runs.fp;
    let steps = fp.last().step;
    let residual = stationary_residual(&model, &coupled_runs.cavi.measure, &opts).unwrap();
    let mut ok = fp.max_mass_drift < MASS_DRIFT_TOL
        && steps >= 20_000
        && fp.positivity_preserved()
        && residual < RESIDUAL_TOL;

    // OU moments on the separable model, shifted to its stationary mean
    let (a, b) = separable();
    let diag = quadratic((a.clone(), b.clone()));
    let start = [(3.0, 1.0), (-3.0, 0.5)];
    let cfg = FpConfig {
        output_every: 500,
        ..FpConfig::with_dt(1e-3)
    };
    let traj = fp_run(&diag, &gaussian_start(&start), &cfg, 2.0, &opts).unwrap();
    let mut worst_rel: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let snap = traj.at(t);
        assert!((snap.t - t).abs() < 1e-6, "snapshot grid misses t={t}");
        for i in 0..2 {
            let (aii, mu) = (a[i][i], -b[i] / a[i][i]);
            let (m, v) = ou_moments(aii, start[i].0 - mu, start[i].1, t);
            let m = m + mu;
            let got = snap.measure.marginal(i);
            worst_rel = worst_rel
                .max(((got.mean() - m) / m).abs())
                .max(((got.variance() - v) / v).abs());
        }
    }
    ok &= worst_rel < OU_REL_TOL;
    Verdict {
        id: 7,
        title: "Fokker-Planck conservation and stationarity",
        pass: ok,
        detail: format!(
            "{steps} steps, mass drift {:.1e}, min density {:.1e}, residual at CAVI point {residual:.1e}, \
             worst OU relative error {worst_rel:.1e}",
            fp.max_mass_drift, fp.min_density
        ),
    }
}

fn uniqueness_probe(first: &FpTrajectory) -> Verdict {
    let model = quadratic(coupled());
    let other = gaussian_start(&[(-2.0, 2.0), (2.5, 0.5)]);
    let second = fp_run(&model, &other, &FpConfig::with_dt(1e-3), 20.0, &PsiOptions::default()).unwrap();
    let d = first.last().measure.w2_per_coordinate(&second.last().measure).unwrap();
    Verdict {
        id: 9,
        title: "Fokker-Planck runs from two starts meet",
        pass: d.iter().all(|&x| x < GRID_W2_TOL),
        detail: format!("W2 between end states {}", fmt(&d)),
    }
}

fn h_refinement(ledger_runs: &mut Vec<(String, bool, f64)>) -> Verdict {
    let model = quadratic(coupled());
    let nu0 = gaussian_start(&[(3.0, 1.0), (-3.0, 1.0)]);
    let hs = [0.2, 0.1, 0.05, 0.025];
    let study =
        h_refinement_study(&model, &nu0, &hs, &[1.0], &JkoConfig::default(), &PsiOptions::default())
            .unwrap();
    // the study's own runs are repeated here for the ledger count
    for &h in &hs {
        let traj = jko_run(&model, &nu0, &JkoConfig::with_h(h), 1.0, &PsiOptions::default()).unwrap();
        ledger_runs.push(ledger_row(format!("refinement h={h}"), &traj));
    }
    let gaps: Vec<String> = study
        .rows
        .iter()
        .map(|r| format!("h={}: {}", r.h, fmt(&r.per_coordinate)))
        .collect();
    let ok = study.cell_verdicts().iter().all(|c| c.verdict.passed());
    Verdict {
        id: 6,
        title: "step-size refinement at t=1",
        pass: ok,
        detail: format!(
            "gaps {}; product-metric ratios {:?} (need >= {MIN_REFINEMENT_RATIO})",
            gaps.join(", "),
            study.ratios(1.0).iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    }
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "model": {"type": "quadratic", "A": [[1, 0.5], [0.5, 1]], "b": [0, 0]},
  "grid": {"x_min": -8, "x_max": 8, "M": 256},
  "jko": {"horizon": 4},
  "fp": {"horizon": 4},
  "sde": {"horizon": 3, "burn_in": 1, "n_particles": 8000},
  "output": {"snapshot_times": [0.5, 1]},
  "seed": 31
}"#,
    )
    .unwrap();
    // each invocation runs in its own working directory with the same
    // relative output path, so the echoed config is identical too
    let run = |cwd: &Path, threads: &str| {
        std::fs::create_dir_all(cwd).unwrap();
        for cmd in ["compare", "run-jko", "run-fp", "run-sde", "run-cavi"] {
            let status = Command::new(env!("CARGO_BIN_EXE_mfvi"))
                .args([cmd, "--config", cfg_path.to_str().unwrap(), "--quiet", "--out", cmd])
                .current_dir(cwd)
                .env("RAYON_NUM_THREADS", threads)
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
        }
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, "1");
    run(&b, "4");
    let mut compared = 0;
    let mut differing = Vec::new();
    for cmd in std::fs::read_dir(&a).unwrap() {
        let cmd = cmd.unwrap().file_name();
        for f in std::fs::read_dir(a.join(&cmd)).unwrap() {
            let name = f.unwrap().file_name();
            if name == "run_meta.json" {
                continue;
            }
            compared += 1;
            let x = std::fs::read(a.join(&cmd).join(&name)).unwrap();
            let y = std::fs::read(b.join(&cmd).join(&name)).unwrap_or_default();
            if x != y {
                differing.push(format!("{}/{}", cmd.to_string_lossy(), name.to_string_lossy()));
            }
        }
    }
    Verdict {
        id: 10,
        title: "byte-identical artifacts across invocations",
        pass: differing.is_empty() && compared > 0,
        detail: format!("{compared} files compared (1 vs 4 worker threads); differing: {differing:?}"),
    }
}

fn main() {
    let started = Instant::now();
    let opts = PsiOptions::default();
    let mut verdicts = Vec::new();

    let coupled_model = quadratic(coupled());
    let coupled_runs = run_all(&coupled_model, &gaussian_start(&[(3.0, 1.0), (-3.0, 1.0)]));
    let separable_model = quadratic(separable());
    let separable_runs = run_all(&separable_model, &gaussian_start(&[(0.0, 1.0), (0.0, 1.0)]));

    let (v1, v3) = fixed_point_and_underdispersion(&coupled_runs);
    verdicts.push(v1);
    verdicts.push(separable_exactness(&separable_runs));
    verdicts.push(v3);

    // every minimizing-movement run in the suite goes through the ledger
    let mut ledger_runs: Vec<(String, bool, f64)> = Vec::new();
    let mut cavi_rises = Vec::new();
    let mut jko_rises = Vec::new();
    for (name, runs) in [("coupled", &coupled_runs), ("separable", &separable_runs)] {
        ledger_runs.push(ledger_row(name, &runs.jko));
        cavi_rises.extend(cavi_rise(&runs.cavi).map(|k| format!("{name} sweep {k}")));
        jko_rises.extend(jko_rise(&runs.jko).map(|k| format!("{name} step {k}")));
    }
    for seed in 0..SEEDED_CONFIGS {
        let (model, nu0, h) = seeded_problem(seed);
        let traj = jko_run(&model, &nu0, &JkoConfig::with_h(h), 2.0, &opts).unwrap();
        ledger_runs.push(ledger_row(format!("seed {seed}"), &traj));
        jko_rises.extend(jko_rise(&traj).map(|k| format!("seed {seed} step {k}")));
        let cavi = cavi_solve(&model, &nu0, 1e-10, 500, &opts).unwrap();
        cavi_rises.extend(cavi_rise(&cavi).map(|k| format!("seed {seed} sweep {k}")));
    }
    {
        // non-convex catalog target: monotonicity must survive it too
        let model = catalog::build("double_well", 2, 0.3).unwrap();
        let g = Grid1D::new(-4.0, 4.0, 256).unwrap();
        let nu0 = ProductMeasure::gaussian(&[g, g], &[(0.5, 0.5), (-0.5, 0.5)]).unwrap();
        let cavi = cavi_solve(&model, &nu0, 1e-10, 500, &opts).unwrap();
        cavi_rises.extend(cavi_rise(&cavi).map(|k| format!("double_well sweep {k}")));
        let traj = jko_run(&model, &nu0, &JkoConfig::with_h(0.1), 2.0, &opts).unwrap();
        ledger_runs.push(ledger_row("double_well", &traj));
        jko_rises.extend(jko_rise(&traj).map(|k| format!("double_well step {k}")));
    }
    let v6 = h_refinement(&mut ledger_runs);

    let violations: Vec<&String> = ledger_runs.iter().filter(|r| !r.1).map(|r| &r.0).collect();
    let worst_slack = ledger_runs.iter().map(|r| r.2).fold(0.0, f64::max);
    verdicts.push(Verdict {
        id: 4,
        title: "dissipation inequality on every minimizing-movement run",
        pass: violations.is_empty(),
        detail: format!(
            "{} runs ({SEEDED_CONFIGS} seeded), violations: {violations:?}, largest slack/bound {worst_slack:.1e}",
            ledger_runs.len()
        ),
    });
    verdicts.push(Verdict {
        id: 5,
        title: "objective monotonicity",
        pass: cavi_rises.is_empty() && jko_rises.is_empty(),
        detail: format!("cavi rises: {cavi_rises:?}; jko rises beyond slack: {jko_rises:?}"),
    });
    verdicts.push(v6);
    verdicts.push(fp_checks(&coupled_runs));
    verdicts.push(w2_correctness());
    verdicts.push(uniqueness_probe(&coupled_runs.fp));
    verdicts.push(reproducibility());

    verdicts.sort_by_key(|v| v.id);
    let mut failed = 0;
    for v in &verdicts {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("{tag} criterion {:>2}: {} ({})", v.id, v.title, v.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        verdicts.len() - failed,
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
