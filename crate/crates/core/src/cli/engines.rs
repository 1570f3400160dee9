//! One function per subcommand: run the engine, write CSV artifacts, and
//! assemble the report.

use std::path::Path;

use serde_json::{json, Value};

use super::config::{
    CheckSection, DualitySection, Engine, ExperimentConfig, SimulateSection, SuperhedgeSection, ValueSection,
};
use crate::conditions::{certify_all, classify, Certificates};
use crate::duality::{conjugacy_check, power_scaling_check, shape_check, weak_duality_check};
use crate::error::{Error, Result};
use crate::model::UncertaintySpec;
use crate::report::Report;
use crate::simulate::{
    euler_paths, girsanov_drift_check, mean_se, moment_stability_check, stochastic_exponential, Direction, Selector,
};
use crate::value::{
    audit_superhedge, audit_superhedge_exhaustive, initial_fractions, primal_value, superhedge, dual_value,
    LatticeConfig, Payoff, UtilitySpec, ValueSurface,
};

/// Conditions a `check` run can require.
pub const CONDITIONS: [&str; 5] = ["growth", "convexity", "mpr", "mpr_bounded", "ellipticity"];

/// Run the config's engine. CSV artifacts go to `out` when given.
pub fn execute(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Report> {
    let engine = cfg.engine()?;
    let spec = cfg.build_model()?;
    let (pass, results) = match engine {
        Engine::Check(s) => check(&spec, s, cfg.seed)?,
        Engine::Simulate(s) => simulate(&spec, s, cfg.seed, out)?,
        Engine::Superhedge(s) => superhedge_engine(&spec, s, cfg.seed, out)?,
        Engine::Value(s) => value(&spec, s, cfg.seed, out)?,
        Engine::Duality(s) => duality(&spec, s, cfg.seed, out)?,
    };
    let mut body = serde_json::Map::new();
    body.insert("model".into(), json!(spec.name));
    if let Value::Object(fields) = results {
        body.extend(fields);
    }
    let results = Value::Object(body);
    Ok(Report::new(engine.name(), cfg.seed, pass, results))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn parse_utility(s: &str) -> Result<UtilitySpec> {
    s.parse()
}

fn certify(spec: &UncertaintySpec, s: &super::config::CertifySection, seed: u64) -> Result<Certificates> {
    certify_all(spec, &s.options(seed))
}

fn check(spec: &UncertaintySpec, s: &CheckSection, seed: u64) -> Result<(bool, Value)> {
    for c in &s.conditions {
        if !CONDITIONS.contains(&c.as_str()) {
            return Err(Error::config("check.conditions", format!("unknown condition `{c}` ({})", CONDITIONS.join(", "))));
        }
    }
    let utilities = s.utilities.iter().map(|u| parse_utility(u)).collect::<Result<Vec<_>>>()?;
    let certs = certify(spec, &s.certify, seed)?;
    let (g, cv, m, e) = (
        certs.growth.as_ref().expect("certified"),
        certs.convexity.as_ref().expect("certified"),
        certs.mpr.as_ref().expect("certified"),
        certs.ellipticity.as_ref().expect("certified"),
    );
    let conditions = json!({
        "growth": {
            "status": certs.growth_status(),
            "estimate": g.estimated_c,
            "witness": g.worst_point,
        },
        "convexity": {
            "status": certs.convexity_status(),
            "estimate": cv.max_distance,
            "witness": cv.witness,
        },
        "mpr": {
            "status": certs.mpr_status(),
            "estimate": m.local_bounds,
            "witness": m.infeasible_at,
            "divergent": m.divergent,
        },
        "mpr_bounded": {
            "status": certs.mpr_bounded_status(),
            "estimate": m.global_bound,
            "witness": Value::Null,
        },
        "ellipticity": {
            "status": certs.ellipticity_status(),
            "estimate": [e.lambda_min, e.lambda_max],
            "witness": e.witness_min,
        },
    });
    let pass = s.conditions.iter().all(|c| conditions[c.as_str()]["status"] == "pass");
    let table: Vec<Value> = utilities.iter().map(|u| to_value(&classify(u, &certs))).collect();
    Ok((
        pass,
        json!({
            "requested": s.conditions,
            "conditions": conditions,
            "applicability": table,
            "certificates": to_value(&certs),
        }),
    ))
}

fn simulate(spec: &UncertaintySpec, s: &SimulateSection, seed: u64, out: Option<&Path>) -> Result<(bool, Value)> {
    let tol = s.certify.mpr_residual_tol;
    let selectors = if s.corners {
        spec.param_box.corners().into_iter().map(Selector::constant).collect()
    } else {
        vec![Selector::parse(spec, &s.selector)?]
    };
    let mut pass = true;
    let mut runs = Vec::new();
    for (idx, sel) in selectors.iter().enumerate() {
        let ens = euler_paths(spec, sel, s.paths, s.steps, seed)?;
        let density = stochastic_exponential(spec, &ens, Direction::PtoQ, tol)?;
        let girsanov = girsanov_drift_check(&ens, &density)?;
        let terminal: Vec<(f64, f64)> = (0..ens.dim)
            .map(|j| mean_se(&(0..ens.n_paths).map(|i| ens.state(i, ens.n_steps)[j]).collect::<Vec<_>>()))
            .collect();
        pass &= girsanov.pass && girsanov.martingale_pass;
        if let (true, Some(dir)) = (s.dump, out) {
            let name = if selectors.len() == 1 { "paths.csv".to_string() } else { format!("paths_{idx}.csv") };
            dump_paths(&dir.join(name), &ens, &density)?;
        }
        runs.push(json!({
            "selector": sel.label(),
            "terminal_mean": terminal.iter().map(|t| t.0).collect::<Vec<_>>(),
            "terminal_se": terminal.iter().map(|t| t.1).collect::<Vec<_>>(),
            "clamped": ens.clamped,
            "z_mean": girsanov.z_mean,
            "z_se": girsanov.z_se,
            "girsanov": to_value(&girsanov),
        }));
    }
    let mut results = json!({ "paths": s.paths, "steps": s.steps, "runs": runs });
    if let Some(m) = &s.moments {
        let certs = certify(spec, &s.certify, seed)?;
        let report = moment_stability_check(spec, &selectors[0], &certs, &m.p, &m.steps, m.paths, seed, tol)?;
        pass &= report.pass;
        results["moments"] = to_value(&report);
    }
    Ok((pass, results))
}

fn dump_paths(
    path: &Path,
    ens: &crate::simulate::PathEnsemble,
    density: &crate::simulate::DensityProcess,
) -> Result<()> {
    let io = |e: csv::Error| Error::io(path.display().to_string(), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    header.extend((1..=ens.dim).map(|j| format!("X_{j}")));
    header.push("logZ".into());
    w.write_record(&header).map_err(io)?;
    for i in 0..ens.n_paths {
        let log_z = density.log_path(i);
        for (k, lz) in log_z.iter().enumerate().take(ens.n_steps + 1) {
            let mut row = vec![i.to_string(), fmt(k as f64 * ens.dt)];
            row.extend(ens.state(i, k).iter().map(|v| fmt(*v)));
            row.push(fmt(*lz));
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn band(a: f64, b: Option<f64>) -> Value {
    match b {
        Some(b) => json!([a.min(b), a.max(b)]),
        None => json!([a, a]),
    }
}

fn superhedge_engine(spec: &UncertaintySpec, s: &SuperhedgeSection, seed: u64, out: Option<&Path>) -> Result<(bool, Value)> {
    s.lattice.validate()?;
    let payoff = Payoff::parse(&s.payoff)?;
    let surface = superhedge(spec, &payoff, &s.lattice)?;
    let price = surface.root_value();
    let refined = if s.refine { Some(superhedge(spec, &payoff, &s.lattice.refined())?.root_value()) } else { None };
    let shape = shape_check(&surface);
    let mut pass = shape.pass;
    let audit = if payoff.uses_running_max() {
        None
    } else {
        let r = audit_superhedge(&surface, spec, s.verify_paths, seed, s.slack_const)?;
        pass &= r.pass;
        Some(r)
    };
    let exhaustive = if s.exhaustive_steps > 0 {
        let cfg = LatticeConfig {
            n_steps: s.exhaustive_steps,
            ..s.lattice.clone()
        };
        let small = superhedge(spec, &payoff, &cfg)?;
        let r = audit_superhedge_exhaustive(&small)?;
        pass &= r.pass;
        Some(r)
    } else {
        None
    };
    if let Some(dir) = out {
        surface.write_csv(&dir.join("superhedge.csv"), s.dump_all_times)?;
    }
    Ok((
        pass,
        json!({
            "payoff": payoff.label(),
            "n_steps": surface.lattice.n_steps,
            "h": surface.lattice.h,
            "price": price,
            "refined_price": refined,
            "band": band(price, refined),
            "hedge": surface.initial_hedge().first().copied(),
            "audit": audit.as_ref().map(to_value),
            "exhaustive": exhaustive.as_ref().map(to_value),
            "shape": to_value(&shape),
        }),
    ))
}

/// Value at each point, from a surface and (optionally) its refinement.
fn evaluated(points: &[f64], base: &ValueSurface, fine: Option<&ValueSurface>) -> Result<Vec<Value>> {
    points
        .iter()
        .map(|&z| {
            let v = base.eval_initial(z)?;
            let r = fine.map(|f| f.eval_initial(z)).transpose()?;
            Ok(json!({ "at": z, "value": v, "refined": r, "band": band(v, r) }))
        })
        .collect()
}

fn value(spec: &UncertaintySpec, s: &ValueSection, seed: u64, out: Option<&Path>) -> Result<(bool, Value)> {
    s.lattice.validate()?;
    let utility = parse_utility(&s.utility)?;
    let certs = certify(spec, &s.certify, seed)?;
    let u = primal_value(spec, &utility, &s.x, &s.lattice, &certs)?;
    let u_fine = if s.refine { Some(primal_value(spec, &utility, &s.x, &s.lattice.refined(), &certs)?) } else { None };
    let u_shape = shape_check(&u);
    let mut pass = u_shape.pass;
    let fractions = initial_fractions(&u);
    let positions: Vec<Value> = s
        .x
        .iter()
        .map(|&x| {
            let (w, f) = fractions
                .iter()
                .min_by(|a, b| (a.0 / x).ln().abs().total_cmp(&(b.0 / x).ln().abs()))
                .copied()
                .unwrap_or((x, f64::NAN));
            json!({ "x": x, "node_wealth": w, "fraction": f })
        })
        .collect();
    let mut results = json!({
        "utility": utility.to_string(),
        "n_steps": u.lattice.n_steps,
        "u": evaluated(&s.x, &u, u_fine.as_ref())?,
        "positions": positions,
        "u_shape": to_value(&u_shape),
    });
    if let Some(dir) = out {
        u.write_csv(&dir.join("value_u.csv"), s.dump_all_times)?;
    }
    if !s.y.is_empty() {
        let v = dual_value(spec, &utility, &s.y, &s.lattice, &certs)?;
        let v_fine = if s.refine { Some(dual_value(spec, &utility, &s.y, &s.lattice.refined(), &certs)?) } else { None };
        let v_shape = shape_check(&v);
        pass &= v_shape.pass;
        results["v"] = json!(evaluated(&s.y, &v, v_fine.as_ref())?);
        results["v_shape"] = to_value(&v_shape);
        if let Some(dir) = out {
            v.write_csv(&dir.join("value_v.csv"), s.dump_all_times)?;
        }
    }
    if let Some(c) = s.scaling {
        let UtilitySpec::Power { p } = utility else {
            return Err(Error::config("value.scaling", "scaling check needs a power utility"));
        };
        let grid = u.axis.log_grid().expect("wealth axis");
        let mut base_cfg = s.lattice.clone();
        base_cfg.wealth_grid.min = Some(grid.start.exp());
        base_cfg.wealth_grid.max = Some(grid.end().exp());
        let mut scaled_cfg = base_cfg.clone();
        scaled_cfg.wealth_grid.min = Some(c * grid.start.exp());
        scaled_cfg.wealth_grid.max = Some(c * grid.end().exp());
        let scaled_x: Vec<f64> = s.x.iter().map(|x| c * x).collect();
        let scaled = primal_value(spec, &utility, &scaled_x, &scaled_cfg, &certs)?;
        let report = power_scaling_check(&u, &scaled, c, p)?;
        pass &= report.pass;
        results["scaling"] = to_value(&report);
    }
    Ok((pass, results))
}

fn duality(spec: &UncertaintySpec, s: &DualitySection, seed: u64, out: Option<&Path>) -> Result<(bool, Value)> {
    s.lattice.validate()?;
    let utility = parse_utility(&s.utility)?;
    let xs = s.x_grid.points("duality.x_grid")?;
    let ys = s.y_grid.points("duality.y_grid")?;
    let certs = certify(spec, &s.certify, seed)?;
    let mut wealths = xs.clone();
    wealths.push(1.0);
    if let Some(w) = &s.weak_duality {
        wealths.push(w.x);
    }
    let u = primal_value(spec, &utility, &wealths, &s.lattice, &certs)?;
    let v = dual_value(spec, &utility, &ys, &s.lattice, &certs)?;
    let u1 = u.eval_initial(1.0)?;
    let tolerance = s.tolerance.unwrap_or(0.02 * (1.0 + u1.abs()));
    let conj = conjugacy_check(&u, &v, &xs, &ys, tolerance)?;
    let (u_shape, v_shape) = (shape_check(&u), shape_check(&v));
    let mut pass = conj.pass && u_shape.pass && v_shape.pass;
    let weak = match &s.weak_duality {
        Some(w) => {
            let sel = Selector::parse(spec, &w.selector)?;
            let u_x = u.eval_initial(w.x)?;
            let r = weak_duality_check(
                spec,
                &utility,
                w.x,
                w.y,
                u_x,
                &sel,
                &certs,
                w.paths,
                w.steps,
                seed,
                s.certify.mpr_residual_tol,
            )?;
            pass &= r.pass;
            Some(r)
        }
        None => None,
    };
    if let (true, Some(dir)) = (s.dump, out) {
        write_columns(&dir.join("conjugacy_u.csv"), ["x", "u", "biconj_u"], &conj.x_grid, &conj.u_vals, &conj.biconj_u)?;
        write_columns(&dir.join("conjugacy_v.csv"), ["y", "v", "biconj_v"], &conj.y_grid, &conj.v_vals, &conj.biconj_v)?;
    }
    Ok((
        pass,
        json!({
            "utility": utility.to_string(),
            "n_steps": u.lattice.n_steps,
            "u_at_1": u1,
            "conjugacy": to_value(&conj),
            "u_shape": to_value(&u_shape),
            "v_shape": to_value(&v_shape),
            "weak_duality": weak.as_ref().map(to_value),
        }),
    ))
}

fn write_columns(path: &Path, header: [&str; 3], a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path.display().to_string(), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for i in 0..a.len() {
        w.write_record([fmt(a[i]), fmt(b[i]), fmt(c[i])]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
