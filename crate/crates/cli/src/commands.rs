use anyhow::Context;
use serde::Serialize;

use robust_is::data::{simulate_glmm, simulate_panel, simulate_poisson_ssm, Dataset, PanelParams, SsmParams};
use robust_is::experiments::{
    self, check_dataset, impose_dataset, LoglikConfig, McmcConfig, PanelCase, Report, Table1Config, Table2Config,
    Table3Config, Table5Config,
};
use robust_is::inference::Psi;

use crate::config::{read_overrides, ConfigError, Layered};
use crate::output::{ensure_dir, in_dir, write_csv, write_json};
use crate::{
    CheckArgs, DataArgs, Fig2Args, ImposeArgs, Kind, LoglikArgs, McmcArgs, SimulateArgs, TableArgs, EXIT_FAILURES,
};

pub fn simulate(a: &SimulateArgs) -> anyhow::Result<u8> {
    let panels = a.panels.unwrap_or(20);
    let ds = match a.kind {
        Kind::PoissonSsm => simulate_poisson_ssm(SsmParams::dgp(), a.len.unwrap_or(500), a.seed)?,
        Kind::PanelAr1 => simulate_panel(
            PanelParams::dgp(a.sigma_alpha2.unwrap_or(1.0)),
            panels,
            a.len.unwrap_or(20),
            a.seed,
        )?,
        Kind::GlmmPoisson => simulate_glmm([0.5, -0.3], 2.0, panels, a.per_cluster, a.seed)?,
        Kind::Bernoulli => Dataset::Bernoulli {
            trials: a.trials,
            successes: a.successes,
            prior_precision: a.prior_precision,
        },
    };
    if let Dataset::Bernoulli { .. } = &ds {
        ds.bernoulli()?;
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    ds.save(&a.out)?;
    Ok(0)
}

fn load(d: &DataArgs) -> anyhow::Result<(Dataset, Option<Psi>)> {
    let ds = Dataset::load(&d.data).with_context(|| format!("reading {}", d.data.display()))?;
    let psi = match &d.psi {
        None => None,
        Some(v) if v.len() >= 3 => {
            let k = v.len() - 2;
            Some(Psi::new(v[..k].to_vec(), v[k], v[k + 1]))
        }
        Some(_) => return Err(ConfigError::Invalid("--psi needs beta values, phi and sigma2".into()).into()),
    };
    Ok((ds, psi))
}

pub fn check(a: &CheckArgs) -> anyhow::Result<u8> {
    let (ds, psi) = load(&a.data)?;
    let r = check_dataset(&ds, psi.as_ref(), a.n_moment)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    if let Some(out) = &a.out {
        write_json(out, &r)?;
    }
    Ok(if r.condition_holds { 0 } else { EXIT_FAILURES })
}

pub fn impose(a: &ImposeArgs) -> anyhow::Result<u8> {
    let (ds, psi) = load(&a.data)?;
    let r = impose_dataset(&ds, psi.as_ref(), a.n_moment, a.eps_inflate)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    if let Some(out) = &a.out {
        write_json(out, &r)?;
    }
    Ok(if r.blocks.iter().all(|b| b.holds_after) { 0 } else { EXIT_FAILURES })
}

fn finish<C: Serialize, R: Serialize, S: Serialize>(
    report: &Report<C, R, S>,
    dir: &std::path::Path,
) -> anyhow::Result<u8> {
    ensure_dir(dir)?;
    write_csv(&in_dir(dir, &format!("{}.csv", report.experiment)), &report.rows)?;
    write_json(&in_dir(dir, &format!("{}.json", report.experiment)), report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    for f in &report.failures {
        eprintln!("replication {} failed: {}", f.rep, f.error);
    }
    Ok(if report.failed() { EXIT_FAILURES } else { 0 })
}

pub fn loglik(a: &LoglikArgs) -> anyhow::Result<u8> {
    let (ds, psi) = load(&a.data)?;
    let cfg = LoglikConfig {
        sampler: a.sampler,
        psi,
        reps: a.reps,
        samples: a.samples,
        seed: a.seed,
    };
    finish(&experiments::loglik(&ds, &cfg)?, &a.out)
}

pub fn mcmc(a: &McmcArgs) -> anyhow::Result<u8> {
    let (ds, psi) = load(&a.data)?;
    let cfg = McmcConfig {
        sampler: a.sampler,
        samples: a.samples,
        iterations: a.iterations,
        burn_in: a.burn_in,
        init: psi,
        seed: a.seed,
    };
    let r = experiments::mcmc(&ds, &cfg)?;
    ensure_dir(&a.out)?;
    r.output.write_csv(std::fs::File::create(in_dir(&a.out, "mcmc.csv"))?)?;
    write_json(&in_dir(&a.out, "mcmc.json"), &r)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(0)
}

/// Preset, then `--config`, then flags.
fn layered<T: Serialize>(base: &T, a: &TableArgs) -> anyhow::Result<Layered> {
    let mut l = Layered::new(base)?;
    if let Some(path) = &a.config {
        l.merge(read_overrides(path)?)?;
    }
    l.set("seed", a.seed)?;
    l.set("samples", a.samples)?;
    l.set("n", a.n_moment)?;
    l.set("pi", a.pi)?;
    l.set("eps_inflate", a.eps_inflate)?;
    l.set("evals", a.evals)?;
    l.set("len", a.len)?;
    l.set("sigma_alpha2", a.sigma_alpha2)?;
    l.set("iterations", a.iterations)?;
    l.set("burn_in", a.burn_in)?;
    Ok(l)
}

fn preset<'a>(a: &'a TableArgs, default: &'a str) -> &'a str {
    a.preset.as_deref().unwrap_or(default)
}

pub fn table1(a: &TableArgs) -> anyhow::Result<u8> {
    let mut base = match preset(a, "hard") {
        "hard" => Table1Config::hard(),
        "easy" => Table1Config::easy(),
        p => return Err(ConfigError::Preset(p.into()).into()),
    };
    if !a.full_scale {
        base.reps = 20;
        base.samples = 100_000;
    }
    let mut l = layered(&base, a)?;
    l.set("reps", a.reps)?;
    finish(&experiments::table1(&l.build()?)?, &a.out)
}

pub fn table2(a: &TableArgs) -> anyhow::Result<u8> {
    let psi = match preset(a, "extreme") {
        "extreme" => SsmParams::extreme(),
        "dgp" => SsmParams::dgp(),
        p => return Err(ConfigError::Preset(p.into()).into()),
    };
    let mut base = Table2Config::full(psi);
    if !a.full_scale {
        base.datasets = 20;
        base.evals = 20;
    }
    let mut l = layered(&base, a)?;
    l.set("datasets", a.reps)?;
    finish(&experiments::table2(&l.build()?)?, &a.out)
}

pub fn table3(a: &TableArgs) -> anyhow::Result<u8> {
    let case = match preset(a, "truth") {
        "truth" => PanelCase::Truth,
        "far" => PanelCase::Far,
        p => return Err(ConfigError::Preset(p.into()).into()),
    };
    let mut base = Table3Config::full(20, 1.0, case);
    if !a.full_scale {
        base.datasets = 20;
        base.evals = 20;
    }
    let mut l = layered(&base, a)?;
    l.set("datasets", a.reps)?;
    finish(&experiments::table3(&l.build()?)?, &a.out)
}

pub fn table5(a: &TableArgs) -> anyhow::Result<u8> {
    if let Some(p) = &a.preset {
        return Err(ConfigError::Preset(p.clone()).into());
    }
    let mut base = Table5Config::full(20, 1.0);
    if !a.full_scale {
        base.reps = 3;
        base.iterations = 5000;
        base.burn_in = 5000;
    }
    let mut l = layered(&base, a)?;
    l.set("reps", a.reps)?;
    finish(&experiments::table5(&l.build()?)?, &a.out)
}

pub fn fig2(a: &Fig2Args) -> anyhow::Result<u8> {
    let cfg = experiments::Fig2Config {
        phi: a.phi,
        sigma_alpha2: a.sigma_alpha2,
        n: a.n_moment,
        len: a.len,
        v: a.v.clone(),
    };
    let r = experiments::fig2(&cfg)?;
    ensure_dir(&a.out)?;
    for v in &cfg.v {
        let rows: Vec<_> = r.rows.iter().filter(|row| row.v == *v).collect();
        write_csv(&in_dir(&a.out, &format!("fig2_v{v}.csv")), &rows)?;
    }
    write_json(&in_dir(&a.out, "fig2.json"), &r)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(0)
}
