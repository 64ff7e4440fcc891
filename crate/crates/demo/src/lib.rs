//! Browser bindings: band surfaces of the checkerboard and doubled-period
//! models, and the flat-direction probe of the second-order correction.
//!
//! Surfaces are returned row-major, `k₁` varying fastest, over `[0, π]²`.

use bandedge::bands::{edge_set, find_gaps, sample_bands, EdgeOptions, EdgeSide};
use bandedge::discrete::{checkerboard_bands, verify_nondegenerate_min_on, CheckerboardModel, DoubledModel, DOUBLED_UPPER_BAND};
use bandedge::perturb::z_second_derivative_probe;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest grid the page may request; keeps a slider drag interactive.
pub const MAX_GRID: usize = 201;

fn check_grid(n: usize) -> Result<[usize; 2], String> {
    if !(2..=MAX_GRID).contains(&n) {
        return Err(format!("grid size must be in 2..={MAX_GRID}, got {n}"));
    }
    Ok([n, n])
}

pub fn checkerboard_surface(v0: f64, v1: f64, n: usize, band: usize) -> Result<Vec<f64>, String> {
    if band > 1 {
        return Err(format!("the checkerboard has bands 0 and 1, got {band}"));
    }
    let bg = sample_bands(&CheckerboardModel { v0, v1 }, check_grid(n)?, 2).map_err(|e| e.to_string())?;
    Ok(bg.values.iter().map(|v| v[band]).collect())
}

/// Closed-form bands, sampled gap and the classification of both gap edges.
pub fn checkerboard_summary(v0: f64, v1: f64, n: usize) -> Result<String, String> {
    let m = CheckerboardModel { v0, v1 };
    let bg = sample_bands(&m, check_grid(n)?, 2).map_err(|e| e.to_string())?;
    let gaps = find_gaps(&bg, 1e-9).gaps;
    let mut edges = Vec::new();
    if let Some(g) = gaps.first() {
        for (side, value) in [(EdgeSide::Lower, g.lower), (EdgeSide::Upper, g.upper)] {
            let es = edge_set(&m, &bg, value, side, &EdgeOptions::default()).map_err(|e| e.to_string())?;
            edges.push(json!({ "side": side, "value": value, "classification": es.classification, "points": es.points.len() }));
        }
    }
    Ok(json!({ "closed_form": checkerboard_bands(&m), "gaps": gaps, "edges": edges }).to_string())
}

pub fn doubled_surface(v: f64, eps: f64, n: usize) -> Result<Vec<f64>, String> {
    let m = DoubledModel::new(v, eps).map_err(|e| e.to_string())?;
    let bg = sample_bands(&m, check_grid(n)?, 4).map_err(|e| e.to_string())?;
    Ok(bg.values.iter().map(|x| x[DOUBLED_UPPER_BAND]).collect())
}

/// Minimum of the upper band: location, value, Hessian and classification.
pub fn doubled_summary(v: f64, eps: f64, n: usize) -> Result<String, String> {
    let m = DoubledModel::new(v, eps).map_err(|e| e.to_string())?;
    let r = verify_nondegenerate_min_on(&m, check_grid(n)?).map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

/// Probe for `λ(x) = x⁴ + b·x⁵`.
pub fn z_probe(b: f64, delta: f64) -> Result<String, String> {
    let r = z_second_derivative_probe(&|x: f64| x.powi(4) + b * x.powi(5), delta).map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = checkerboardSurface)]
pub fn checkerboard_surface_js(v0: f64, v1: f64, n: usize, band: usize) -> Result<Vec<f64>, JsError> {
    checkerboard_surface(v0, v1, n, band).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = checkerboardSummary)]
pub fn checkerboard_summary_js(v0: f64, v1: f64, n: usize) -> Result<String, JsError> {
    checkerboard_summary(v0, v1, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = doubledSurface)]
pub fn doubled_surface_js(v: f64, eps: f64, n: usize) -> Result<Vec<f64>, JsError> {
    doubled_surface(v, eps, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = doubledSummary)]
pub fn doubled_summary_js(v: f64, eps: f64, n: usize) -> Result<String, JsError> {
    doubled_summary(v, eps, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = zProbe)]
pub fn z_probe_js(b: f64, delta: f64) -> Result<String, JsError> {
    z_probe(b, delta).map_err(|e| JsError::new(&e))
}
