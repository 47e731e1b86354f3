//! Output side of the pipeline: patch-state slicing, per-component linear
//! projection, denormalization and summation.

use ndarray::s;

use crate::autodiff::Matrix;
use crate::component::Component;
use crate::error::{Error, Result};
use crate::preprocess::{denormalize, NormStats};

/// Linear map from flattened `[K × D]` states (patch-major) to `H` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub component: Component,
    /// `[(K·D) × H]`
    pub weight: Matrix,
    /// `[1 × H]`
    pub bias: Matrix,
}

/// Per-component denormalized forecasts (`[N × H]`, in [`Component::ALL`] order) and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub per_component: [Matrix; 3],
    pub combined: Matrix,
}

pub fn slice_patch_states(hidden: &Matrix, prompt_len: usize) -> Result<Matrix> {
    if prompt_len > hidden.nrows() {
        return Err(Error::shape(
            "slice_patch_states",
            format!("prompt length ≤ {}", hidden.nrows()),
            prompt_len,
        ));
    }
    Ok(hidden.slice(s![prompt_len.., ..]).to_owned())
}

pub fn project_component(states: &Matrix, head: &ProjectionHead) -> Result<Vec<f64>> {
    if states.len() != head.weight.nrows() {
        return Err(Error::shape("project_component", head.weight.nrows(), states.len()));
    }
    if head.bias.dim() != (1, head.weight.ncols()) {
        return Err(Error::shape("projection bias", head.weight.ncols(), format!("{:?}", head.bias.dim())));
    }
    let flat = Matrix::from_shape_vec((1, states.len()), states.iter().copied().collect())
        .expect("element count preserved");
    Ok((flat.dot(&head.weight) + &head.bias).row(0).to_vec())
}

/// Denormalizes each component with its own statistics and sums them.
pub fn combine_forecast(
    trend: &[f64],
    seasonal: &[f64],
    residual: &[f64],
    stats: &[NormStats; 3],
) -> Result<Vec<f64>> {
    if trend.len() != seasonal.len() || trend.len() != residual.len() {
        return Err(Error::shape(
            "combine_forecast",
            trend.len(),
            format!("{} / {}", seasonal.len(), residual.len()),
        ));
    }
    let t = denormalize(trend, &stats[0]);
    let s = denormalize(seasonal, &stats[1]);
    let r = denormalize(residual, &stats[2]);
    Ok(t.iter().zip(&s).zip(&r).map(|((a, b), c)| a + b + c).collect())
}
