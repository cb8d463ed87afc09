use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sntrap::axial::sweep_axial;
use sntrap::constants::ATOMIC_MASS_UNIT;
use sntrap::dynamics::{evolve_moments, sweep_omega_sn, GaussianTrapRun};
use sntrap::kernels::{KernelFamily, KernelModel};
use sntrap::oracle::{ground_state, propagate, verify_h_identity, GridWavefunction, OracleConfig, OracleMode};
use sntrap::polynomials::p_polynomial;
use sntrap::spectrum::{f_n_full, f_tilde, mass_frequency_table, transition_energy, wide_table, SpectrumQuery};
use sntrap::{CrystalParams, Material, McConfig, Regime, SweepResult};

use crate::config::{manifest, manifest_path, write_atomic, Resolver};
use crate::values::{Figure, Grid, Levels, Mode};
use crate::{
    AxialArgs, Cli, CliError, Command, DynamicsRunArgs, DynamicsSub, DynamicsSweepArgs, FiguresArgs, KernelsArgs,
    MaterialArgs, OracleArgs, PolysArgs, SpectrumArgs,
};

const DEFAULT_OMEGA0: f64 = 2.0 * PI * 10.0;

/// One output file (or stdout) with everything its manifest needs.
struct Artifact {
    label: &'static str,
    body: String,
    resolved: Vec<(String, String)>,
    seed: Option<u64>,
    failures: usize,
}

fn emit(a: &Artifact, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            write_atomic(p, a.body.as_bytes())?;
            let m = manifest(a.label, &a.resolved, a.body.as_bytes(), a.seed);
            write_atomic(&manifest_path(p), m.as_bytes())?;
        }
        None => print!("{}", a.body),
    }
    if a.failures > 0 {
        return Err(CliError::Numeric(format!(
            "{} row(s) failed to converge; see the error column",
            a.failures
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Kernels(a) => kernels(a, cfg),
        Command::Polys(a) => polys(a, cfg),
        Command::Spectrum(a) => spectrum(a, cfg),
        Command::Dynamics(a) => match a.sweep {
            Some(DynamicsSub::Sweep(s)) => dynamics_sweep(s, cfg),
            None => dynamics(a.run, cfg),
        },
        Command::Axial(a) => axial(a, cfg),
        Command::Oracle(a) => oracle(a, cfg),
        Command::Figures(a) => figures(a, cfg),
    }
}

fn parse_with<T: std::str::FromStr<Err = sntrap::Error>>(s: &str) -> Result<T, CliError> {
    s.parse::<T>().map_err(|e| CliError::Usage(e.to_string()))
}

fn material(r: &mut Resolver, name: Option<String>, presets: Option<PathBuf>) -> Result<Material, CliError> {
    let name = r.value("material", name, "silicon".to_string())?;
    let presets = r.optional("presets", presets.map(|p| p.display().to_string()))?;
    if let Some(path) = presets {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read presets '{path}': {e}")))?;
        if let Some(m) = Material::from_presets_text(&text)?.into_iter().find(|m| m.name == name) {
            return Ok(m);
        }
    }
    Ok(Material::preset(&name)?)
}

fn material_and_omega(r: &mut Resolver, a: MaterialArgs) -> Result<(Material, f64), CliError> {
    let mat = material(r, a.material, a.presets)?;
    let omega0 = r.value("omega0", a.omega0, DEFAULT_OMEGA0)?;
    if !(omega0 > 0.0 && omega0.is_finite()) {
        return Err(CliError::Usage(format!("omega0 must be positive, got {omega0}")));
    }
    Ok((mat, omega0))
}

fn kernels(a: KernelsArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "kernels")?;
    let family: KernelFamily = parse_with(&r.value("family", a.family, "sphere".to_string())?)?;
    let grid = r.value("zeta_grid", a.zeta_grid, Grid::Linear { start: 0.0, stop: 3.0, count: 61 })?;
    let n_atoms = r.value("n_atoms", a.n_atoms, 0.0)?;
    let varrho = r.value("varrho", a.varrho, f64::INFINITY)?;
    let resolved = r.finish()?;
    let model = KernelModel::new(family, n_atoms, varrho)?;
    let mut t = SweepResult::new(["zeta", "i", "i_prime", "combo"]);
    for z in grid.points() {
        if !(z >= 0.0) {
            return Err(CliError::Usage(format!("zeta must be >= 0, got {z}")));
        }
        t.push(vec![z, model.i(z), model.i_prime(z), model.combo(z)], None);
    }
    emit(
        &Artifact {
            label: "kernels",
            body: t.to_csv(),
            resolved,
            seed: None,
            failures: 0,
        },
        a.out.out.as_deref(),
    )
}

fn polys(a: PolysArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "polys")?;
    let max_n = r.value("max_n", a.max_n, 5usize)?;
    let resolved = r.finish()?;
    let mut body = String::from("n,F_n,P_n\n");
    for n in 0..=max_n {
        let p = p_polynomial(n)?;
        let _ = writeln!(body, "{n},{},{}", p.at_zero(), p);
    }
    emit(
        &Artifact {
            label: "polys",
            body,
            resolved,
            seed: None,
            failures: 0,
        },
        a.out.out.as_deref(),
    )
}

fn spectrum(a: SpectrumArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "spectrum")?;
    let family: KernelFamily = parse_with(&r.value("family", a.family, "sphere".to_string())?)?;
    let regime: Regime = parse_with(&r.value("regime", a.regime, "intermediate".to_string())?)?;
    let levels = r.value("levels", a.levels, Levels { first: 0, last: 4 })?;
    let (mat, omega0) = material_and_omega(&mut r, a.material)?;
    let m_u = r.optional("m_u", a.m_u)?;
    let alphas = match m_u {
        Some(mu) => vec![mat.alpha(mu * ATOMIC_MASS_UNIT, omega0)],
        None => r
            .value("alpha", a.alpha, Grid::Log { start: 1.0, stop: 10.0, count: 25 })?
            .points(),
    };
    let resolved = r.finish()?;
    if levels.last == levels.first {
        return Err(CliError::Usage("need at least two levels".into()));
    }
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(CliError::Usage("alpha values must be positive".into()));
    }
    let pairs: Vec<usize> = (levels.first..levels.last).collect();
    let mut columns = vec!["alpha".to_string(), "mass_kg".to_string()];
    for prefix in ["f", "err", "grav"] {
        columns.extend(pairs.iter().map(|n| format!("{prefix}{}{}", n, n + 1)));
    }
    let rows: Vec<Result<(Vec<f64>, Option<String>, Vec<String>), CliError>> = alphas
        .par_iter()
        .map(|&alpha| {
            let m = mat.mass_for_alpha(alpha, omega0);
            let params = CrystalParams::new(mat.clone(), m)?;
            let q = SpectrumQuery::new(params, omega0, family, regime);
            let model = q.model();
            let (mut f, mut e, mut g) = (Vec::new(), Vec::new(), Vec::new());
            let mut errors = Vec::new();
            let mut warnings = Vec::new();
            for &n in &pairs {
                let ft = f_tilde(n, n + 1, alpha, &model, regime);
                let te = transition_energy(n, n + 1, &q);
                match (ft, te) {
                    (Ok(ft), Ok(te)) => {
                        f.push(ft.value);
                        e.push(ft.error_estimate);
                        g.push(te.gravitational_part);
                        warnings.extend(te.warnings);
                    }
                    (ft, te) => {
                        let msg = ft.err().or(te.err()).map(|e| e.to_string()).unwrap_or_default();
                        if let Some(sntrap::Error::Unsupported(_) | sntrap::Error::Domain(_)) =
                            f_tilde(n, n + 1, alpha, &model, regime).err()
                        {
                            return Err(CliError::Usage(msg));
                        }
                        f.push(f64::NAN);
                        e.push(f64::NAN);
                        g.push(f64::NAN);
                        errors.push(format!("f{}{}: {msg}", n, n + 1));
                    }
                }
            }
            let mut row = vec![alpha, m];
            row.extend(f);
            row.extend(e);
            row.extend(g);
            let err = if errors.is_empty() { None } else { Some(errors.join(" | ")) };
            Ok((row, err, warnings))
        })
        .collect();
    let mut t = SweepResult::new(columns);
    let mut warnings = BTreeSet::new();
    for row in rows {
        let (v, e, w) = row?;
        t.push(v, e);
        warnings.extend(w);
    }
    for w in warnings {
        eprintln!("warning: {w}");
    }
    emit(
        &Artifact {
            label: "spectrum",
            body: t.to_csv(),
            resolved,
            seed: None,
            failures: t.failures(),
        },
        a.out.out.as_deref(),
    )
}

fn dynamics(a: DynamicsRunArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "dynamics")?;
    let (mat, omega0) = material_and_omega(&mut r, a.material)?;
    let kappa = r.value("kappa", a.kappa, 2.0)?;
    let family: KernelFamily = parse_with(&r.value("family", a.family, "sphere".to_string())?)?;
    let regime: Regime = parse_with(&r.value("regime", a.regime, "full".to_string())?)?;
    let m_u = r.optional("m_u", a.m_u)?;
    let m = match m_u {
        Some(mu) => mu * ATOMIC_MASS_UNIT,
        None => mat.mass_for_alpha(r.value("alpha", a.alpha, 10.0)?, omega0),
    };
    let t_end = r.value("t_end", a.t_end, 10.0 * 2.0 * PI / omega0)?;
    let samples = r.value("samples", a.samples, 2001usize)?;
    let gravity_scale = r.value("gravity_scale", a.gravity_scale, 1.0)?;
    let x0 = r.value("x0", a.x0, 0.0)?;
    let tolerance = r.value("tolerance", a.tolerance, 1e-9)?;
    let resolved = r.finish()?;

    let params = CrystalParams::new(mat, m)?;
    let mut run = GaussianTrapRun::new(params, omega0, family, kappa);
    run.regime = regime;
    run.t_end = t_end;
    run.samples = samples;
    run.gravity_scale = gravity_scale;
    run.x0 = x0 * run.ground_variance().sqrt();
    run.tolerance = tolerance;
    let traj = evolve_moments(&run)?;
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    let mut t = traj.to_sweep();
    if let Some(e) = &traj.failure {
        // mark the last row reached so the CSV carries the diagnostic
        if let Some(last) = t.rows.last_mut() {
            last.error = Some(e.to_string());
        }
    }
    emit(
        &Artifact {
            label: "dynamics",
            body: t.to_csv(),
            resolved,
            seed: None,
            failures: t.failures(),
        },
        a.out.out.as_deref(),
    )
}

fn omega_sn_table(mat: &Material, alphas: &[f64]) -> Result<SweepResult, CliError> {
    let s = sweep_omega_sn(alphas, &KernelModel::atomic(KernelFamily::Sphere), mat)?;
    let g = sweep_omega_sn(alphas, &KernelModel::atomic(KernelFamily::Gaussian), mat)?;
    let mut t = SweepResult::new([
        "alpha",
        "omega_sn_sq_sphere",
        "omega_sn_sq_gaussian",
        "error_estimate_sphere",
        "error_estimate_gaussian",
    ]);
    for (rs, rg) in s.rows.iter().zip(&g.rows) {
        let err = match (&rs.error, &rg.error) {
            (None, None) => None,
            (a, b) => Some([a.clone(), b.clone()].into_iter().flatten().collect::<Vec<_>>().join(" | ")),
        };
        t.push(vec![rs.values[0], rs.values[1], rg.values[1], rs.values[2], rg.values[2]], err);
    }
    Ok(t)
}

fn dynamics_sweep(a: DynamicsSweepArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "dynamics.sweep")?;
    let mat = material(&mut r, a.material, a.presets)?;
    let alphas = r.value("alpha", a.alpha, Grid::Log { start: 1.0, stop: 100.0, count: 41 })?;
    let resolved = r.finish()?;
    let t = omega_sn_table(&mat, &alphas.points())?;
    emit(
        &Artifact {
            label: "dynamics.sweep",
            body: t.to_csv(),
            resolved,
            seed: None,
            failures: t.failures(),
        },
        a.out.out.as_deref(),
    )
}

fn axial(a: AxialArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "axial")?;
    let n = r.value("n", a.n, Levels { first: 0, last: 2 })?;
    let alphas = r.value("alpha", a.alpha, Grid::Linear { start: 1.0, stop: 6.0, count: 11 })?;
    let mu = r.value("mu", a.mu, 0.5)?;
    let defaults = McConfig::default();
    let mc = McConfig {
        seed: r.value("seed", a.seed, defaults.seed)?,
        max_samples: r.value("max_samples", a.max_samples, defaults.max_samples)?,
        target_rel_error: r.value("target_rel_err", a.target_rel_err, defaults.target_rel_error)?,
        ..defaults
    };
    let resolved = r.finish()?;
    let t = sweep_axial(n.first..=n.last, &alphas.points(), mu, &mc)?;
    emit(
        &Artifact {
            label: "axial",
            body: t.to_csv(),
            resolved,
            seed: Some(mc.seed),
            failures: t.failures(),
        },
        a.out.out.as_deref(),
    )
}

fn oracle(a: OracleArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "oracle")?;
    let mode = r.value("mode", a.mode, Mode::It)?;
    let (mat, omega0) = material_and_omega(&mut r, a.material)?;
    let family: KernelFamily = parse_with(&r.value("family", a.family, "sphere".to_string())?)?;
    let alpha = r.value("alpha", a.alpha, 2.0)?;
    let params = CrystalParams::new(mat.clone(), mat.mass_for_alpha(alpha, omega0))?;
    let om = match mode {
        Mode::It => OracleMode::ImaginaryTime,
        Mode::Rt => OracleMode::RealTime,
    };
    let mut c = OracleConfig::new(params, omega0, family, om);
    c.lambda_g = r.value("lambda_g", a.lambda_g, 0.0)?;
    c.grid_points = r.value("grid_points", a.grid_points, c.grid_points)?;
    c.box_widths = r.value("box_widths", a.box_widths, c.box_widths)?;
    c.dt = r.value("dt", a.dt, c.dt * omega0)? / omega0;
    c.steps = r.value("steps", a.steps, c.steps)?;
    c.sample_every = r.value("sample_every", a.sample_every, c.sample_every)?;
    let kappa = r.value("kappa", a.kappa, 1.0)?;
    let x0 = r.value("x0", a.x0, 0.0)?;
    let odd = r.value("odd", a.odd, false)?;
    c.snapshot_every = r.value("snapshot_every", a.snapshot_every, 0usize)?;
    let snapshot_dir = r.optional("snapshot_dir", a.snapshot_dir.map(|p| p.display().to_string()))?;
    let resolved = r.finish()?;
    if c.snapshot_every > 0 && snapshot_dir.is_none() {
        return Err(CliError::Usage("--snapshot-every needs --snapshot-dir".into()));
    }

    let body = match mode {
        Mode::It => {
            let (_, e) = ground_state(&c, odd)?;
            let n = usize::from(odd);
            let model = KernelModel::from_params(&c.params, family);
            let pre = c.params.material.spectral_prefactor(omega0);
            let f = f_n_full(n, alpha, &model)?;
            let mut t = SweepResult::new([
                "alpha",
                "lambda_g",
                "level",
                "eigenvalue",
                "functional",
                "vg_mean",
                "vg_mean_variable",
                "perturbative_vg_variable",
                "steps",
            ]);
            t.push(
                vec![
                    alpha,
                    c.lambda_g,
                    n as f64,
                    e.eigenvalue,
                    e.functional,
                    e.vg_mean,
                    e.vg_mean_variable,
                    -c.lambda_g * pre * f.variable.value,
                    e.steps as f64,
                ],
                None,
            );
            t.to_csv()
        }
        Mode::Rt => {
            let init = GridWavefunction::gaussian(c.grid_points, c.box_widths, kappa, x0, 0.0)?;
            let traj = propagate(&c, &init)?;
            eprintln!(
                "h-identity residual {:.3e}, max norm drift {:.3e}",
                verify_h_identity(&traj),
                traj.max_norm_drift
            );
            if let Some(dir) = &snapshot_dir {
                fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{dir}: {e}")))?;
                for (step, w) in &traj.snapshots {
                    let mut buf = Vec::new();
                    w.write_snapshot(&mut buf, c.dt, *step as u64)
                        .map_err(|e| CliError::Io(e.to_string()))?;
                    write_atomic(&Path::new(dir).join(format!("psi_{step:08}.bin")), &buf)?;
                }
            }
            traj.to_trajectory().to_sweep().to_csv()
        }
    };
    emit(
        &Artifact {
            label: "oracle",
            body,
            resolved,
            seed: None,
            failures: 0,
        },
        a.out.out.as_deref(),
    )
}

fn fig3(family: KernelFamily) -> Result<SweepResult, CliError> {
    let alphas = Grid::Log { start: 1.0, stop: 10.0, count: 46 }.points();
    let s = sntrap::spectrum::sweep_spectrum(&alphas, 4, &KernelModel::atomic(family), Regime::Intermediate)?;
    let mut t = SweepResult::new(["alpha", "f01", "f12", "f23", "f34"]);
    for row in s.rows {
        t.push(row.values[..5].to_vec(), row.error);
    }
    Ok(t)
}

fn figures(a: FiguresArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut r = Resolver::load(cfg, "figures")?;
    let which = r.value("which", a.which, Figure::All)?;
    let family = r.optional("family", a.family)?;
    let out_dir = PathBuf::from(r.value("out_dir", a.out_dir.map(|p| p.display().to_string()), ".".to_string())?);
    let target = r.value("target_rel_err", a.target_rel_err, 1e-3)?;
    let seed = r.value("seed", a.seed, McConfig::default().seed)?;
    let resolved = r.finish()?;
    fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let selected: Vec<Figure> = match which {
        Figure::All => vec![Figure::Fig3, Figure::Fig4, Figure::Fig5, Figure::Fig6, Figure::Fig7],
        f => vec![f],
    };
    let families: Vec<KernelFamily> = match &family {
        Some(f) => vec![parse_with(f)?],
        None => vec![KernelFamily::Sphere, KernelFamily::Gaussian],
    };
    let mut failures = 0;
    for fig in selected {
        let mut outputs: Vec<(String, SweepResult, Option<u64>)> = Vec::new();
        match fig {
            Figure::Fig3 => {
                for &f in &families {
                    outputs.push((format!("fig3_{}.csv", f.name()), fig3(f)?, None));
                }
            }
            Figure::Fig4 => {
                let omegas = Grid::Log { start: 2.0 * PI, stop: 2.0 * PI * 1e3, count: 31 }.points();
                let t = mass_frequency_table(&[Material::silicon(), Material::osmium()], &omegas, &[1.0, 5.0, 10.0])?;
                outputs.push(("fig4.csv".into(), t, None));
            }
            Figure::Fig5 => {
                let alphas = Grid::Log { start: 1.0, stop: 100.0, count: 41 }.points();
                outputs.push(("fig5.csv".into(), omega_sn_table(&Material::silicon(), &alphas)?, None));
            }
            Figure::Fig6 => {
                let mc = McConfig {
                    seed,
                    target_rel_error: target,
                    ..McConfig::default()
                };
                let alphas = Grid::Linear { start: 1.0, stop: 6.0, count: 11 }.points();
                outputs.push(("fig6.csv".into(), sweep_axial(0..=2, &alphas, 0.5, &mc)?, Some(seed)));
            }
            Figure::Fig7 => {
                let masses: Vec<f64> = Grid::Log { start: 1e3, stop: 1e12, count: 91 }
                    .points()
                    .into_iter()
                    .map(|u| u * ATOMIC_MASS_UNIT)
                    .collect();
                let t = wide_table(&Material::silicon(), DEFAULT_OMEGA0, &masses, 3)?;
                outputs.push(("fig7.csv".into(), t, None));
            }
            Figure::All => unreachable!(),
        }
        for (name, t, s) in outputs {
            let path = out_dir.join(&name);
            let mut res = resolved.clone();
            for (k, v) in res.iter_mut() {
                if k == "which" {
                    *v = fig.to_string();
                }
            }
            let body = t.to_csv();
            failures += t.failures();
            write_atomic(&path, body.as_bytes())?;
            write_atomic(&manifest_path(&path), manifest("figures", &res, body.as_bytes(), s).as_bytes())?;
            println!("{}", path.display());
        }
    }
    if failures > 0 {
        return Err(CliError::Numeric(format!("{failures} row(s) failed; see the error columns")));
    }
    Ok(())
}
