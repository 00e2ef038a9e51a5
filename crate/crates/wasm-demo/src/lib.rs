//! 2-D conceptors for the browser: every conceptor crosses the JS boundary as a
//! row-major `[c11, c12, c21, c22]` array.

use codecl_core::{Conceptor, FeatureBatch};
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

fn to_conceptor(c: &[f64]) -> Result<Conceptor, String> {
    if c.len() != 4 {
        return Err(format!("expected 4 entries, got {}", c.len()));
    }
    Conceptor::from_matrix(DMatrix::from_row_slice(2, 2, c)).map_err(|e| e.to_string())
}

fn flat(c: &Conceptor) -> Vec<f64> {
    c.matrix().transpose().as_slice().to_vec()
}

/// Conceptor of a point cloud given as `[x0, y0, x1, y1, ...]`.
#[wasm_bindgen]
pub fn conceptor_from_points(xy: &[f64], alpha: f64) -> Result<Vec<f64>, String> {
    if xy.is_empty() || !xy.len().is_multiple_of(2) {
        return Err("need a non-empty list of x, y pairs".into());
    }
    let batch = FeatureBatch::from_row_slice(xy.len() / 2, 2, xy).map_err(|e| e.to_string())?;
    Conceptor::from_batch(&batch, alpha).map(|c| flat(&c)).map_err(|e| e.to_string())
}

/// `op` is one of `and`, `or`, `not` (`b` is ignored for `not`).
#[wasm_bindgen]
pub fn combine(op: &str, a: &[f64], b: &[f64]) -> Result<Vec<f64>, String> {
    let a = to_conceptor(a)?;
    let out = match op {
        "not" => a.not(),
        "and" => a.and(&to_conceptor(b)?).map_err(|e| e.to_string())?,
        "or" => a.or(&to_conceptor(b)?).map_err(|e| e.to_string())?,
        _ => return Err(format!("unknown operation {op:?}")),
    };
    Ok(flat(&out))
}

#[wasm_bindgen]
pub fn aperture(c: &[f64], beta: f64) -> Result<Vec<f64>, String> {
    to_conceptor(c)?
        .aperture_adapt(beta)
        .map(|c| flat(&c))
        .map_err(|e| e.to_string())
}

/// `[s1, s2, angle]`: semi-axes (the eigenvalues, descending) and the angle in
/// radians of the major axis.
#[wasm_bindgen]
pub fn ellipse(c: &[f64]) -> Result<Vec<f64>, String> {
    let s = to_conceptor(c)?.spectrum();
    let v = s.vectors.column(0);
    Ok(vec![s.values[0], s.values[1], v[1].atan2(v[0])])
}

#[wasm_bindgen]
pub fn capacity(c: &[f64]) -> Result<f64, String> {
    Ok(to_conceptor(c)?.capacity())
}
