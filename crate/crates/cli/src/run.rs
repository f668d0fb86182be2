use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use chemobranch::analysis::{
    coupling_experiment, measure_convergence_experiment, perturbation_response, yule_bound_check,
    ConvergenceReport, TestFunctionBank,
};
use chemobranch::config::ExperimentConfig;
use chemobranch::field::Field;
use chemobranch::macroscopic::{compare_with_monte_carlo, observed_order, solve_pks};
use chemobranch::meanfield::{
    estimate_mu, hybrid_pairing, simulate_hybrid_ensemble, simulate_mass_ensemble, solve_selfconsistent_field,
    SelfConsistentMode,
};
use chemobranch::micro::{simulate_microscopic, write_events_csv, Discretization, Recording};
use chemobranch::model::ModelParams;
use chemobranch::noise::NoiseUniverse;
use chemobranch::state::fmt_f64;
use chemobranch::Point;

use crate::Command;

/// Bank functions used when a few test functions are compared.
pub const COMPARED_PHIS: [usize; 3] = [0, 2, 5];

pub enum Outcome {
    Pass,
    CheckFailed(String),
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

struct Out {
    dir: PathBuf,
    command: &'static str,
    preamble: Vec<String>,
    head: BTreeMap<String, Value>,
}

impl Out {
    fn file(&self, name: &str) -> AnyResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir.join(format!("{}_{name}", self.command)))?))
    }

    /// CSV file whose first line carries the config hash and seed.
    fn csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> AnyResult<()> {
        let mut w = self.file(name)?;
        for p in &self.preamble {
            writeln!(w, "# {p}")?;
        }
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn report(&self, name: &str, r: &ConvergenceReport) -> AnyResult<()> {
        let mut w = self.file(name)?;
        r.write_csv(&mut w, &self.preamble)?;
        w.flush()?;
        Ok(())
    }

    fn summary(&self, body: BTreeMap<String, Value>) -> AnyResult<()> {
        let mut all = self.head.clone();
        all.extend(body);
        let mut w = self.file("summary.json")?;
        writeln!(w, "{}", serde_json::to_string_pretty(&all)?)?;
        w.flush()?;
        Ok(())
    }

    fn field(&self, name: &str, f: &Field) -> AnyResult<()> {
        self.csv(&format!("{name}.csv"), |w| f.write_csv(w))?;
        let mut b = self.file(&format!("{name}.bin"))?;
        f.write_binary(&mut b)?;
        b.flush()?;
        Ok(())
    }
}

pub fn run(cmd: Command, cfg: ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> AnyResult<Outcome> {
    std::fs::create_dir_all(out_dir)?;
    let seed = seed.unwrap_or(cfg.run.seed);
    let hash = cfg.hash();
    let out = Out {
        dir: out_dir.to_path_buf(),
        command: cmd.name(),
        preamble: vec![format!("config_hash={hash} master_seed={seed} command={}", cmd.name())],
        head: BTreeMap::from([
            ("config_hash".to_string(), json!(hash)),
            ("master_seed".to_string(), json!(seed)),
            ("command".to_string(), json!(cmd.name())),
        ]),
    };
    let universe = NoiseUniverse::new(seed, cfg.params.dim);
    match cmd {
        Command::Micro => micro(&cfg, universe, &out),
        Command::Macro => macroscopic(&cfg, &out),
        Command::Hybrid => hybrid(&cfg, universe, &out),
        Command::Mass => mass(&cfg, universe, &out),
        Command::Converge => {
            let r = measure_convergence_experiment(&cfg.params, &cfg.run.n0_list, cfg.run.replicas, &universe)?;
            out.report("report.csv", &r)?;
            out.summary(r.summary.clone())?;
            Ok(check(r.summary["d_M_strictly_decreasing"] == true, "mean sup_t d_M is not strictly decreasing in n0"))
        }
        Command::Couple => {
            let r = coupling_experiment(
                &cfg.params,
                &cfg.run.n0_list,
                cfg.run.replicas,
                &cfg.run.epsilon_list,
                &universe,
            )?;
            out.report("report.csv", &r)?;
            let mut summary = r.summary.clone();
            let max_s = r
                .rows
                .iter()
                .filter(|x| x.replica.is_some() && x.kind == "coupling")
                .map(|x| x.value)
                .fold(0.0, f64::max);
            summary.insert("max_sup_d_X".into(), json!(max_s));
            if !cfg.run.deltas.is_empty() {
                let p = perturbation_response(&cfg.params, &cfg.run.deltas, cfg.run.replicas, &universe)?;
                out.report("perturbation.csv", &p)?;
                summary.insert("perturbation".into(), json!(p.summary));
            }
            let monotone = summary["non_increasing"]
                .as_object()
                .is_some_and(|m| m.values().all(|v| v == true));
            out.summary(summary)?;
            Ok(check(monotone, "exceedance probabilities increase with n0"))
        }
        Command::Yule => {
            let r = yule_bound_check(&cfg.params, cfg.run.n0, cfg.run.replicas, &universe)?;
            out.report("report.csv", &r)?;
            out.summary(r.summary.clone())?;
            Ok(check(r.summary["pass"] == true, "mean - 3 SE exceeds exp(lambda_bar T)"))
        }
    }
}

fn check(ok: bool, why: &str) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::CheckFailed(why.into())
    }
}

fn micro(cfg: &ExperimentConfig, universe: NoiseUniverse, out: &Out) -> AnyResult<Outcome> {
    let traj = simulate_microscopic(&cfg.params, cfg.run.n0, universe, Recording::default())?;
    out.csv("snapshots.csv", |w| traj.write_snapshots_csv(w))?;
    out.csv("events.csv", |w| write_events_csv(&traj.events, w))?;
    if let Some(f) = traj.fields.last() {
        out.field("rho_T", f)?;
    }
    let counts = traj.live_counts();
    out.summary(BTreeMap::from([
        ("n0".into(), json!(cfg.run.n0)),
        ("live_counts".into(), json!(counts)),
        ("events".into(), json!(traj.events.len())),
    ]))?;
    Ok(Outcome::Pass)
}

fn macroscopic(cfg: &ExperimentConfig, out: &Out) -> AnyResult<Outcome> {
    let solve = |params: &ModelParams| -> AnyResult<_> {
        let disc = Discretization::new(params)?;
        let grid = disc.spectral.grid;
        let p0 = params.mu0.density(&grid, &disc.kernel)?;
        Ok(solve_pks(params, &disc, p0, params.rho0.sample(&grid), cfg.pks)?)
    };
    let sol = solve(&cfg.params)?;
    out.field("density_T", sol.p.last().expect("nonempty path"))?;
    out.field("rho_T", sol.rho.last().expect("nonempty path"))?;
    let masses = sol.masses();
    out.csv("mass.csv", |w| {
        writeln!(w, "step,time,mass")?;
        for (k, m) in masses.iter().enumerate() {
            writeln!(w, "{k},{},{}", fmt_f64(sol.p[k].time), fmt_f64(*m))?;
        }
        Ok(())
    })?;
    let mut summary = BTreeMap::from([
        ("max_cfl".into(), json!(sol.max_cfl)),
        ("used_semi_lagrangian".into(), json!(sol.used_semi_lagrangian)),
        ("mass_T".into(), json!(masses.last())),
        ("min_density".into(), json!(sol.p.iter().map(Field::min).fold(f64::INFINITY, f64::min))),
    ]);
    let mut outcome = Outcome::Pass;
    if cfg.run.order_check {
        let finals = |s: &chemobranch::macroscopic::PksSolution| {
            let mut v = s.p.last().expect("nonempty").values.clone();
            v.extend(&s.rho.last().expect("nonempty").values);
            v
        };
        let half = ModelParams { dt: cfg.params.dt / 2.0, ..cfg.params.clone() };
        let quarter = ModelParams { dt: cfg.params.dt / 4.0, ..cfg.params.clone() };
        let order = observed_order(&finals(&sol), &finals(&solve(&half)?), &finals(&solve(&quarter)?));
        let pass = (1.8..=2.2).contains(&order);
        summary.insert("observed_order".into(), json!(order));
        summary.insert("order_pass".into(), json!(pass));
        outcome = check(pass, &format!("observed order {order} outside [1.8, 2.2]"));
    }
    out.summary(summary)?;
    Ok(outcome)
}

fn selfconsistent(
    cfg: &ExperimentConfig,
    disc: &Discretization,
    universe: NoiseUniverse,
) -> AnyResult<chemobranch::meanfield::SelfConsistentField> {
    let mode = if cfg.run.picard {
        SelfConsistentMode::Picard {
            ensemble: cfg.run.ensemble,
            tol: cfg.run.picard_tol,
            max_iters: cfg.run.picard_max_iters,
            // keep the Picard noise apart from the ensembles that follow
            universe: universe.replica(u64::MAX),
        }
    } else {
        SelfConsistentMode::Macroscopic
    };
    Ok(solve_selfconsistent_field(&cfg.params, disc, mode)?)
}

fn checkpoints(steps: usize) -> [usize; 3] {
    [steps / 3, 2 * steps / 3, steps]
}

fn pairing_table(
    out: &Out,
    name: &str,
    bank: &TestFunctionBank,
    dt: f64,
    steps: usize,
    est: impl Fn(usize, &dyn Fn(&Point) -> f64) -> chemobranch::measure::Estimate,
) -> AnyResult<()> {
    out.csv(name, |w| {
        writeln!(w, "step,time,phi,mean,se")?;
        for k in 0..=steps {
            for j in 0..bank.len() {
                let e = est(k, &|x| bank.eval(j, x));
                writeln!(w, "{k},{},{j},{},{}", fmt_f64(k as f64 * dt), fmt_f64(e.mean), fmt_f64(e.se))?;
            }
        }
        Ok(())
    })
}

fn hybrid(cfg: &ExperimentConfig, universe: NoiseUniverse, out: &Out) -> AnyResult<Outcome> {
    let p = &cfg.params;
    let disc = Discretization::new(p)?;
    let sc = selfconsistent(cfg, &disc, universe)?;
    out.field("rho_T", sc.rho.fields.last().expect("nonempty path"))?;
    let prepared = sc.rho.prepare(&disc.spectral, p.dt, p.steps())?;
    let runs = simulate_hybrid_ensemble(p, &prepared, &universe, cfg.run.replicas)?;
    let bank = TestFunctionBank::default_for(disc.spectral.grid);
    pairing_table(out, "pairings.csv", &bank, p.dt, p.steps(), |k, phi| hybrid_pairing(&runs, k, phi))?;
    out.csv("line1_events.csv", |w| write_events_csv(&runs[0].events, w))?;
    let live_t = hybrid_pairing(&runs, p.steps(), |_| 1.0);
    out.summary(BTreeMap::from([
        ("replicas".into(), json!(cfg.run.replicas)),
        ("picard_gaps".into(), json!(sc.gaps)),
        ("mean_live_T".into(), json!(live_t.mean)),
        ("se_live_T".into(), json!(live_t.se)),
    ]))?;
    Ok(Outcome::Pass)
}

fn mass(cfg: &ExperimentConfig, universe: NoiseUniverse, out: &Out) -> AnyResult<Outcome> {
    let p = &cfg.params;
    let disc = Discretization::new(p)?;
    let sc = selfconsistent(cfg, &disc, universe)?;
    let prepared = sc.rho.prepare(&disc.spectral, p.dt, p.steps())?;
    let ens = simulate_mass_ensemble(p, &prepared, &universe, cfg.run.ensemble)?;
    let mu = estimate_mu(&ens)?;
    let bank = TestFunctionBank::default_for(disc.spectral.grid);
    pairing_table(out, "pairings.csv", &bank, p.dt, p.steps(), |k, phi| mu.pairing(k, phi))?;
    let total = mu.pairing(p.steps(), &|_: &Point| 1.0);
    let mut summary = BTreeMap::from([
        ("ensemble".into(), json!(cfg.run.ensemble)),
        ("mean_M_T".into(), json!(total.mean)),
        ("se_M_T".into(), json!(total.se)),
        ("picard_gaps".into(), json!(sc.gaps)),
    ]);
    // the PDE density is the other side of the comparison
    let density = match sc.density {
        Some(d) => d,
        None => {
            let grid = disc.spectral.grid;
            let p0 = p.mu0.density(&grid, &disc.kernel)?;
            solve_pks(p, &disc, p0, p.rho0.sample(&grid), cfg.pks)?.p
        }
    };
    let phis: Vec<Box<dyn Fn(&Point) -> f64 + Sync>> = COMPARED_PHIS
        .iter()
        .map(|&j| {
            let b = bank.clone();
            Box::new(move |x: &Point| b.eval(j, x)) as Box<dyn Fn(&Point) -> f64 + Sync>
        })
        .collect();
    let refs: Vec<&(dyn Fn(&Point) -> f64 + Sync)> = phis.iter().map(|b| b.as_ref()).collect();
    let rows = compare_with_monte_carlo(&density, &mu, &refs, &checkpoints(p.steps()), 3.0);
    out.csv("compare.csv", |w| {
        writeln!(w, "step,time,phi,pde,mc,se,within")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_f64(r.time),
                COMPARED_PHIS[r.phi],
                fmt_f64(r.pde),
                fmt_f64(r.mc),
                fmt_f64(r.se),
                r.within
            )?;
        }
        Ok(())
    })?;
    let all = rows.iter().all(|r| r.within);
    summary.insert("all_within_3se".into(), json!(all));
    out.summary(summary)?;
    Ok(check(all, "PDE and Monte-Carlo pairings differ by more than 3 SE"))
}
