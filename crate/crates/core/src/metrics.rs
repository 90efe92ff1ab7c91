//! Agreement between a computed field and a reference field.

use nalgebra::Vector3;

use crate::error::{GsmError, Result};
use crate::field::FieldGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub ces: f64,
    /// Cells valid in both distance fields.
    pub distance_cells: usize,
    /// Cells with a gradient in both fields.
    pub gradient_cells: usize,
}

pub fn rmse(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(GsmError::ShapeMismatch(format!(
            "{} predicted values, {} reference values",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(GsmError::InvalidParameter("no values to compare".into()));
    }
    let sum: f64 = predicted.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Root mean square of `1 - cos` between paired directions: 0 for identical,
/// 1 for orthogonal and 2 for opposite directions.
pub fn cosine_error_score(predicted: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(GsmError::ShapeMismatch(format!(
            "{} predicted directions, {} reference directions",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(GsmError::InvalidParameter("no directions to compare".into()));
    }
    let mut sum = 0.0;
    for (a, b) in predicted.iter().zip(reference) {
        let denom = a.norm() * b.norm();
        if denom == 0.0 || !denom.is_finite() {
            return Err(GsmError::InvalidParameter("zero or non-finite direction".into()));
        }
        let cos = (a.dot(b) / denom).clamp(-1.0, 1.0);
        sum += (1.0 - cos).powi(2);
    }
    Ok((sum / predicted.len() as f64).sqrt())
}

/// RMSE over cells valid in both grids, CES over cells with a gradient in both.
pub fn compare_fields(predicted: &FieldGrid, reference: &FieldGrid) -> Result<MetricsReport> {
    if predicted.res != reference.res || predicted.cells.len() != reference.cells.len() {
        return Err(GsmError::ShapeMismatch(format!(
            "{}x{} versus {}x{}",
            predicted.res.0, predicted.res.1, reference.res.0, reference.res.1
        )));
    }
    let pairs = || predicted.cells.iter().zip(&reference.cells);
    let (dp, dr): (Vec<f64>, Vec<f64>) = pairs()
        .filter(|(a, b)| a.valid && b.valid)
        .map(|(a, b)| (a.distance, b.distance))
        .unzip();
    let (gp, gr): (Vec<_>, Vec<_>) = pairs()
        .filter_map(|(a, b)| Some((a.gradient?, b.gradient?)))
        .unzip();
    Ok(MetricsReport {
        rmse: rmse(&dp, &dr)?,
        ces: cosine_error_score(&gp, &gr)?,
        distance_cells: dp.len(),
        gradient_cells: gp.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldCell;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(GsmError::ShapeMismatch(_))));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn ces_reference_values() {
        let x = Vector3::x();
        assert_eq!(cosine_error_score(&[x], &[x * 3.0]).unwrap(), 0.0);
        assert!((cosine_error_score(&[x], &[Vector3::y()]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_error_score(&[x], &[-x]).unwrap() - 2.0).abs() < 1e-15);
        // sqrt(mean(0, 1)) for one aligned and one orthogonal pair
        let ces = cosine_error_score(&[x, x], &[x, Vector3::z()]).unwrap();
        assert!((ces - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine_error_score(&[Vector3::zeros()], &[x]).is_err());
    }

    fn cell(d: f64, g: Option<Vector3<f64>>, valid: bool) -> FieldCell {
        FieldCell {
            point: Vector3::zeros(),
            distance: d,
            gradient: g,
            probability: None,
            degraded: false,
            valid,
        }
    }

    #[test]
    fn compare_skips_invalid_cells() {
        let a = FieldGrid {
            res: (3, 1),
            cells: vec![
                cell(1.0, Some(Vector3::x()), true),
                cell(f64::NAN, None, false),
                cell(0.0, None, true),
            ],
        };
        let b = FieldGrid {
            res: (3, 1),
            cells: vec![
                cell(1.5, Some(Vector3::y()), true),
                cell(9.0, Some(Vector3::x()), true),
                cell(0.5, Some(Vector3::x()), true),
            ],
        };
        let r = compare_fields(&a, &b).unwrap();
        assert_eq!((r.distance_cells, r.gradient_cells), (2, 1));
        assert!((r.rmse - 0.5).abs() < 1e-15);
        assert!((r.ces - 1.0).abs() < 1e-15);
        let c = FieldGrid { res: (1, 3), cells: b.cells.clone() };
        assert!(matches!(compare_fields(&a, &c), Err(GsmError::ShapeMismatch(_))));
    }
}
