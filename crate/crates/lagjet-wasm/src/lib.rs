//! Browser bindings for a few lagjet operations.

use lagjet::maslov::{qfrac, LagrangianChartData};
use lagjet::module::{extract_scalar_cocycle, module_transition, phase_from_generating, ChartModel, ModuleJet};
use lagjet::suites::{bundled, run_suite, RunConfig};
use lagjet::weyl::WeylAlgebra;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Moyal product f★g in n degrees of freedom, truncated at weight `cap`.
#[wasm_bindgen]
pub fn moyal(f: &str, g: &str, n: usize, cap: u32) -> Result<String, JsValue> {
    if !(1..=3).contains(&n) || !(1..=12).contains(&cap) {
        return Err(err("need 1 ≤ n ≤ 3 and 1 ≤ cap ≤ 12"));
    }
    let w = WeylAlgebra::new(n, cap);
    let f = w.parse(f).map_err(err)?;
    let g = w.parse(g).map_err(err)?;
    let fg = w.star(&f, &g).map_err(err)?;
    let br = w.bracket_over_ih(&f, &g).map_err(err)?;
    Ok(json!({ "star": fg.to_string(), "bracket_over_ih": br.to_string() }).to_string())
}

/// Transition of the unit jet of L = {ξ = kx} from its graph chart to its
/// fibre chart at x = x0.
#[wasm_bindgen]
pub fn linear_transition(k: i32, x_num: i32, x_den: i32, cap: u32) -> Result<String, JsValue> {
    if k == 0 || x_den == 0 || !(2..=10).contains(&cap) {
        return Err(err("need k ≠ 0, a nonzero denominator and 2 ≤ cap ≤ 10"));
    }
    let chart = |id: &str, xp: Vec<usize>, f: String| LagrangianChartData { id: id.into(), base_chart: "X".into(), n: 1, x_params: xp, generating_function: f };
    let x = qfrac(x_num as i64, x_den as i64);
    let point = vec![x.clone(), x * qfrac(k as i64, 1)];
    let graph = chart("graph", vec![0], format!("{k}*x^2/2"));
    let fibre = chart("fibre", vec![], format!("-xi^2/(2*{k})"));
    let g = ChartModel::new(&phase_from_generating(&graph, &point).map_err(err)?, cap).map_err(err)?;
    let f = ChartModel::new(&phase_from_generating(&fibre, &point).map_err(err)?, cap).map_err(err)?;
    let m = module_transition(&g, &f, &ModuleJet::one(&g)).map_err(err)?;
    let sc = extract_scalar_cocycle(&g, &f).map_err(err)?;
    let c0 = m.amplitude.constant_term();
    Ok(json!({
        "amplitude": m.amplitude.to_string(),
        "leading": { "re": c0.re, "im": c0.im, "abs": c0.norm(), "arg_over_pi": c0.arg() / std::f64::consts::PI },
        "maslov_doubled": sc.maslov_mu2,
        "phase_doubled": sc.mu2,
        "g": sc.g.to_string(),
    })
    .to_string())
}

/// Runs one verification suite on a bundled configuration; returns the JSON report.
#[wasm_bindgen]
pub fn verify(suite: &str, example: &str, seed: u64) -> Result<String, JsValue> {
    let src = bundled().into_iter().find(|(n, _)| *n == example).map(|(_, s)| s).ok_or_else(|| err(format!("no bundled configuration {example}")))?;
    let mut cfg: RunConfig = serde_json::from_str(src).map_err(err)?;
    cfg.seed = seed;
    let rep = run_suite(suite, &cfg).map_err(err)?;
    Ok(json!({ "passed": rep.passed(), "checks": rep.checks }).to_string())
}

#[wasm_bindgen]
pub fn examples() -> String {
    serde_json::to_string(&bundled().iter().map(|(n, _)| *n).collect::<Vec<_>>()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moyal_of_x_and_xi() {
        let v: serde_json::Value = serde_json::from_str(&moyal("x", "xi", 1, 4).unwrap()).unwrap();
        assert_eq!(v["bracket_over_ih"], "-1");
    }

    #[test]
    fn linear_transition_phase() {
        let v: serde_json::Value = serde_json::from_str(&linear_transition(-2, 1, 2, 4).unwrap()).unwrap();
        assert!((v["leading"]["arg_over_pi"].as_f64().unwrap() + 0.25).abs() < 1e-12);
        assert!((v["leading"]["abs"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(v["maslov_doubled"], -1);
    }

    #[test]
    fn verify_runs_a_suite() {
        let v: serde_json::Value = serde_json::from_str(&verify("compare", "linear_k1", 3).unwrap()).unwrap();
        assert_eq!(v["passed"], true);
    }
}
