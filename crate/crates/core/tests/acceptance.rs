//! Acceptance suite. Each scenario runs from its experiment file under
//! `experiments/`, once on one worker thread and once on eight; verdicts are
//! taken from the reports and compared with oracles computed here.
//!
//! Run with `cargo test -p rsl-core --test acceptance -- --nocapture` to see
//! one PASS/FAIL line per criterion.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rsl_core::cli::{execute_with_threads, ExperimentConfig};
use serde_json::Value;

fn experiment(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(format!("{name}.toml"));
    ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

struct Run {
    report: Value,
    single: String,
    multi: String,
    elapsed: Duration,
}

fn run(name: &str) -> Run {
    let cfg = experiment(name);
    let start = Instant::now();
    let single = execute_with_threads(&cfg, None, Some(1)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let elapsed = start.elapsed();
    let multi = execute_with_threads(&cfg, None, Some(8)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let single = single.render().unwrap();
    Run {
        report: serde_json::from_str(&single).unwrap(),
        single,
        multi: multi.render().unwrap(),
        elapsed,
    }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

struct Verdict {
    pass: bool,
    detail: String,
}

/// Criterion number, name, verdict and optional `(seconds, limit)`.
type Line<'a> = (usize, &'a str, Verdict, Option<(f64, f64)>);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// `Z_T` has mean one and the `Z`-weighted step increments have no drift.
fn girsanov(r: &Value) -> Verdict {
    let runs = r["results"]["runs"].as_array().unwrap();
    let mut pass = runs.len() == 4;
    let mut worst = 0.0_f64;
    let mut worst_drift = 0.0_f64;
    for run in runs {
        let (m, se) = (f(&run["z_mean"]), f(&run["z_se"]));
        worst = worst.max((m - 1.0).abs() / se);
        for b in run["girsanov"]["buckets"].as_array().unwrap() {
            let (wm, wse) = (f(&b["weighted_mean"][0]), f(&b["weighted_se"][0]));
            worst_drift = worst_drift.max(wm.abs() / wse);
        }
    }
    pass &= worst <= 4.0 && worst_drift <= 4.0;
    verdict(pass, format!("{} corners, max |Z̄−1|/SE = {worst:.2}, max drift/SE = {worst_drift:.2}", runs.len()))
}

/// `E[Z^p]` for log-normal `Z` with `θ²a T = 0.25`.
fn moments(r: &Value) -> Verdict {
    let m = &r["results"]["moments"];
    let mut pass = m["n_paths"].as_u64() == Some(1_000_000);
    let mut worst_rel = 0.0_f64;
    for row in m["rows"].as_array().unwrap() {
        let p = f(&row["p"]);
        let oracle = (0.5 * p * (p - 1.0) * 0.25).exp();
        worst_rel = worst_rel.max((f(&row["moment"]) / oracle - 1.0).abs());
    }
    let drift = m["max_drift_factor"].as_array().unwrap().iter().map(|d| f(&d[1])).fold(1.0, f64::max);
    pass &= worst_rel <= 0.2 && drift < 3.0;
    verdict(pass, format!("max relative error {worst_rel:.4}, max refinement factor {drift:.4}"))
}

/// Worst-case log growth over the rectangle's corners.
fn log_oracle() -> f64 {
    [0.05, 0.1]
        .iter()
        .flat_map(|b| [0.04, 0.09].map(|a| 0.5 * b * b / a))
        .fold(f64::INFINITY, f64::min)
}

fn log_value(r: &Value) -> Verdict {
    let u = &r["results"]["u"][0];
    let oracle = log_oracle();
    let (coarse, fine) = (f(&u["value"]), f(&u["refined"]));
    let rel = |v: f64| (v / oracle - 1.0).abs();
    verdict(
        rel(coarse) <= 0.1 && rel(fine) <= 0.1,
        format!("u(1) = {coarse:.7}, doubled resolution {fine:.7}, oracle {oracle:.7}"),
    )
}

fn conjugacy(log: &Value, power: &Value) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, r) in [("log", log), ("power 0.5", power)] {
        let res = &r["results"];
        let bound = 0.02 * (1.0 + f(&res["u_at_1"]).abs());
        let (gu, gv) = (f(&res["conjugacy"]["gap_u"]), f(&res["conjugacy"]["gap_v"]));
        pass &= gu <= bound && gv <= bound;
        detail.push(format!("{label}: gaps {gu:.2e}/{gv:.2e} ≤ {bound:.4}"));
    }
    verdict(pass, detail.join("; "))
}

/// Call price on the binomial tree with variance 0.09 and the same spacing.
fn fixed_vol_price(n: usize, h: f64) -> f64 {
    let mut v: Vec<f64> = (0..=n).map(|k| (1.0 + (2.0 * k as f64 - n as f64) * h - 1.0).max(0.0)).collect();
    for step in (0..n).rev() {
        for k in 0..=step {
            v[k] = 0.5 * (v[k] + v[k + 1]);
        }
    }
    v[0]
}

fn superhedging(r: &Value) -> Verdict {
    let res = &r["results"];
    let n = res["n_steps"].as_u64().unwrap() as usize;
    let h = f(&res["h"]);
    // The interval lattice uses h² = a_max·dt, so the fixed-variance tree is binomial.
    assert!((h * h - 0.09 / n as f64).abs() < 1e-15);
    let oracle = fixed_vol_price(n, h);
    let price = f(&res["price"]);
    let rel = (price / oracle - 1.0).abs();
    let audit = &res["audit"];
    let ex = &res["exhaustive"];
    let pass = rel <= 0.02
        && audit["n_paths"].as_u64() == Some(10_000)
        && audit["violations"].as_u64() == Some(0)
        && ex["n_steps"].as_u64() == Some(10)
        && ex["violations"].as_u64() == Some(0)
        && f(&ex["worst_shortfall"]) <= f(&ex["floor"]);
    verdict(
        pass,
        format!(
            "price {price:.6} vs fixed-variance {oracle:.6} ({:.3}%), audit violations {}, exhaustive {} paths with {} violations",
            100.0 * rel,
            audit["violations"],
            ex["n_paths"],
            ex["violations"]
        ),
    )
}

fn certifiers(remark: &Value, delay: &Value, scaled: &Value) -> Verdict {
    let mpr = &remark["results"]["certificates"]["mpr"];
    let levels = mpr["levels"].as_array().unwrap();
    let level_ns: Vec<f64> = levels.iter().map(|l| f(&l["level"])).collect();
    let ratios: Vec<f64> = levels.iter().map(|l| f(&l["last_ratio"])).collect();
    let divergent = mpr["divergent"] == true
        && remark["pass"] == false
        && level_ns == [0.25, 0.5, 1.0]
        && ratios.iter().all(|r| *r > 2.0);
    let ell = &delay["results"]["conditions"]["ellipticity"];
    let delay_ok = ell["status"] == "pass" && f(&ell["estimate"][0]) == 0.04 && f(&ell["estimate"][1]) == 0.09;
    let sc = &scaled["results"]["conditions"]["ellipticity"];
    let scaled_ok = sc["status"] == "fail" && f(&sc["estimate"][0]) == 0.0 && scaled["pass"] == false;
    verdict(
        divergent && delay_ok && scaled_ok,
        format!(
            "remark ratios {ratios:.3?}; delay λ = ({}, {}); scaled λ_min = {}",
            ell["estimate"][0], ell["estimate"][1], sc["estimate"][0]
        ),
    )
}

fn shapes(reports: &[(&str, &Value)], scaling: &Value) -> Verdict {
    let mut pass = true;
    let mut checked = 0;
    for (name, r) in reports {
        for key in ["u_shape", "v_shape", "shape"] {
            let s = &r["results"][key];
            if s.is_null() {
                continue;
            }
            checked += 1;
            let tol_ok = (f(&s["tolerance"]) - 1e-6 * f(&s["range"])).abs() <= 1e-12 * f(&s["range"]);
            let ok = s["pass"] == true && f(&s["worst"]) <= f(&s["tolerance"]) && tol_ok;
            if !ok {
                eprintln!("shape sweep failed: {name}.{key}");
            }
            pass &= ok;
        }
    }
    let sc = &scaling["results"]["scaling"];
    let scale_ok = sc["pass"] == true && f(&sc["fraction_deviation"]) <= f(&sc["cell_tolerance"]);
    verdict(
        pass && scale_ok && checked == 6,
        format!(
            "{checked} surfaces swept; scaling fraction deviation {:.2e} within one cell {:.2e}",
            f(&sc["fraction_deviation"]),
            f(&sc["cell_tolerance"])
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let names = [
        "girsanov_corners",
        "moment_stability",
        "robust_log_value",
        "conjugacy_log",
        "conjugacy_power",
        "superhedge_call",
        "remark_divergence",
        "delay_ellipticity",
        "scaled_ellipticity",
        "power_scaling",
    ];
    let runs: Vec<(&str, Run)> = names.iter().map(|n| (*n, run(n))).collect();
    let get = |n: &str| &runs.iter().find(|(k, _)| *k == n).expect("run").1;
    let secs = |ns: &[&str]| ns.iter().map(|n| get(n).elapsed.as_secs_f64()).sum::<f64>();

    let mut lines: Vec<Line> = vec![
        (1, "Girsanov identity at the box corners", girsanov(&get("girsanov_corners").report), Some((secs(&["girsanov_corners"]), 30.0))),
        (2, "density moment control", moments(&get("moment_stability").report), Some((secs(&["moment_stability"]), 120.0))),
        (3, "robust log value", log_value(&get("robust_log_value").report), Some((secs(&["robust_log_value"]), 120.0))),
        (
            4,
            "primal/dual conjugacy",
            conjugacy(&get("conjugacy_log").report, &get("conjugacy_power").report),
            Some((secs(&["conjugacy_log", "conjugacy_power"]), 300.0)),
        ),
        (5, "superhedging price and hedge", superhedging(&get("superhedge_call").report), Some((secs(&["superhedge_call"]), 60.0))),
        (
            6,
            "condition certifiers",
            certifiers(
                &get("remark_divergence").report,
                &get("delay_ellipticity").report,
                &get("scaled_ellipticity").report,
            ),
            Some((secs(&["remark_divergence", "delay_ellipticity", "scaled_ellipticity"]), 10.0)),
        ),
        (
            7,
            "shape sweeps and power scaling",
            shapes(
                &[
                    ("robust_log_value", &get("robust_log_value").report),
                    ("conjugacy_log", &get("conjugacy_log").report),
                    ("conjugacy_power", &get("conjugacy_power").report),
                    ("superhedge_call", &get("superhedge_call").report),
                ],
                &get("power_scaling").report,
            ),
            Some((secs(&["power_scaling"]), 30.0)),
        ),
    ];
    let differing: Vec<&str> = runs.iter().filter(|(_, r)| r.single != r.multi).map(|(n, _)| *n).collect();
    // A second single-thread run of the cheapest scenario guards against state
    // leaking between runs.
    let again = run("superhedge_call");
    let repeat_ok = again.single == get("superhedge_call").single;
    lines.push((
        8,
        "byte-identical reports (1 vs 8 threads, repeated run)",
        verdict(
            differing.is_empty() && repeat_ok,
            format!("{} reports compared, differing: {differing:?}, repeat identical: {repeat_ok}", runs.len()),
        ),
        None,
    ));

    let mut all = true;
    for (id, name, v, time) in &lines {
        let in_time = time.is_none_or(|(t, limit)| t < limit);
        let pass = v.pass && in_time;
        all &= pass;
        let timing = time.map(|(t, limit)| format!(" [{t:.1} s, limit {limit:.0} s]")).unwrap_or_default();
        // Written to the raw handle so the verdicts show without `--nocapture`.
        let line = format!("criterion {id} {}: {name}: {}{timing}\n", if pass { "PASS" } else { "FAIL" }, v.detail);
        std::io::stderr().write_all(line.as_bytes()).unwrap();
    }
    assert!(all, "some acceptance criteria failed");
}
