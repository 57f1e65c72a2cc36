use super::HarnessError;
use crate::refsolver::FieldGrid;

/// Squared-norm ratio `sum (ref - est)^2 A / sum ref^2 A` by midpoint
/// quadrature over the cells.
pub fn relative_error(reference: &FieldGrid, estimate: &[f64]) -> Result<f64, HarnessError> {
    if estimate.len() != reference.len() {
        return Err(HarnessError::Runtime(format!(
            "estimate has {} values for {} cells",
            estimate.len(),
            reference.len()
        )));
    }
    let area = reference.cell_area();
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, e) in reference.values.iter().zip(estimate) {
        num += (r - e) * (r - e) * area;
        den += r * r * area;
    }
    if den == 0.0 {
        return Err(HarnessError::Runtime("reference field is identically zero".into()));
    }
    Ok(num / den)
}
