//! Plain-text tables for `--pretty`.

use std::fmt::Write;

use serde_json::Value;

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) => format!("{x:.4e}"),
        Some(x) => format!("{x:.4}"),
        None => v.to_string(),
    }
}

fn column<'a>(doc: &'a Value, key: &str) -> &'a [Value] {
    doc[key].as_array().map(Vec::as_slice).unwrap_or(&[])
}

fn render_fit(doc: &Value) -> String {
    let mut out = String::new();
    let fit = &doc["fit"];
    let data = &doc["data"];
    let _ = writeln!(
        out,
        "m = {}, m' = {}, n = {}, loglik = {}, converged = {}, iterations = {}",
        data["m"],
        data["m_prime"],
        data["n_total"],
        num(&fit["loglik_at_optimum"]),
        fit["converged"],
        fit["iterations"]
    );
    let inf = &doc["inference"];
    let _ = writeln!(
        out,
        "{:<16} {:>12} {:>12} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "parameter", "estimate", "se", "z", "p", "p_upper", "ci_low", "ci_high"
    );
    for (k, name) in column(inf, "names").iter().enumerate() {
        let get = |key: &str| num(&inf[key][k]);
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>12} {:>10} {:>10} {:>10} {:>12} {:>12}",
            name.as_str().unwrap_or(""),
            get("estimates"),
            get("se"),
            get("z"),
            get("p"),
            get("p_upper"),
            get("ci_low"),
            get("ci_high")
        );
    }
    for w in column(fit, "warnings") {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

fn render_verify(doc: &Value) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "suite {} (seed {}): {}",
        doc["suite"].as_str().unwrap_or(""),
        doc["seed"],
        verdict(&doc["passed"])
    );
    let _ = writeln!(out, "{:<40} {:>12} {:>12} {:>6}", "check", "value", "threshold", "");
    for c in column(doc, "checks") {
        let _ = writeln!(
            out,
            "{:<40} {:>12} {:>12} {:>6}",
            c["name"].as_str().unwrap_or(""),
            num(&c["value"]),
            num(&c["threshold"]),
            verdict(&c["passed"])
        );
    }
    out
}

fn verdict(v: &Value) -> &'static str {
    if v.as_bool() == Some(true) {
        "PASS"
    } else {
        "FAIL"
    }
}

fn render_power(doc: &Value) -> String {
    let r = &doc["result"];
    format!(
        "m = {}, slope = {}, replications = {}, failures = {}\n\
         rejections = {}, empirical power = {} (CI {} to {})\n\
         formula power at m = {}\n",
        doc["m"],
        num(&doc["slope"]),
        r["replications"],
        r["failures"],
        r["rejections"],
        num(&r["empirical_power"]),
        num(&r["ci_low"]),
        num(&r["ci_high"]),
        num(&doc["formula_power_at_m"])
    )
}

fn render_simulate(doc: &Value) -> String {
    let mut out = String::new();
    for f in column(doc, "files") {
        let _ = writeln!(out, "{}  ({} rows)", f["path"].as_str().unwrap_or(""), f["n_total"]);
    }
    out
}

pub fn render(doc: &Value) -> String {
    match doc["command"].as_str() {
        Some("fit") => render_fit(doc),
        Some("ssize") => format!("m = {}\npower at m = {}\n", doc["m"], num(&doc["power_at_m"])),
        Some("power") => render_power(doc),
        Some("simulate") => render_simulate(doc),
        Some("verify") => render_verify(doc),
        _ => serde_json::to_string_pretty(doc).unwrap_or_default() + "\n",
    }
}
