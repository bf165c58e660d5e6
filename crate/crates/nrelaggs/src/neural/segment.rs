//! Segment aggregation: reduce contiguous row groups of a matrix, one group
//! per parent row, as directed by a nondecreasing id vector.
//!
//! These four kernels (sum, mean, min, max) are the aggregation core of the
//! whole crate: both the static propositionalization and the trainable
//! composite layers call them, which is what makes the two paths agree to
//! the last bit when the trainable layers are pinned to identity.
//!
//! Conventions:
//! * a segment with no rows aggregates to 0 in every kind;
//! * min/max backward routes the incoming gradient entirely to the *first*
//!   row attaining the extremum (lowest row index wins ties);
//! * mean backward divides by the segment size; sum backward copies.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::NeuralError;

/// A validated nondecreasing map from rows to segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentIndex {
    ids: Vec<u32>,
    n_segments: usize,
}

impl SegmentIndex {
    /// `ids[r]` is the segment of row `r`; ids must be nondecreasing and
    /// below `n_segments`. Segments may be empty (skipped ids).
    pub fn new(ids: Vec<u32>, n_segments: usize) -> Result<Self, NeuralError> {
        let mut previous = 0u32;
        for (row, &id) in ids.iter().enumerate() {
            if id < previous || (id as usize) >= n_segments {
                return Err(NeuralError::BadSegmentIndex { row, value: id, n_segments });
            }
            previous = id;
        }
        Ok(SegmentIndex { ids, n_segments })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Contiguous row range of every segment, in segment order (empty ranges
    /// for skipped ids).
    pub fn bounds(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.n_segments);
        let mut start = 0usize;
        for s in 0..self.n_segments as u32 {
            let mut end = start;
            while end < self.ids.len() && self.ids[end] == s {
                end += 1;
            }
            out.push(start..end);
            start = end;
        }
        out
    }
}

/// Which reduction a segment aggregation applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Sum,
    Mean,
    Min,
    Max,
}

/// Aggregate order used by the composite layers' concatenated output.
pub const COMPOSITE_ORDER: [SegmentKind; 4] =
    [SegmentKind::Sum, SegmentKind::Mean, SegmentKind::Min, SegmentKind::Max];

fn check_rows<F: Scalar>(x: &ArrayView2<F>, seg: &SegmentIndex) -> Result<(), NeuralError> {
    if x.nrows() != seg.n_rows() {
        return Err(NeuralError::ShapeMismatch {
            context: "segment aggregate".into(),
            expected: format!("({}, *)", seg.n_rows()),
            found: format!("({}, {})", x.nrows(), x.ncols()),
        });
    }
    Ok(())
}

/// Reduce `x` (`rows × d`) to `n_segments × d`.
pub fn segment_aggregate<F: Scalar>(
    x: &ArrayView2<F>,
    seg: &SegmentIndex,
    kind: SegmentKind,
) -> Result<Array2<F>, NeuralError> {
    check_rows(x, seg)?;
    let d = x.ncols();
    let mut out = Array2::zeros((seg.n_segments(), d));
    for (s, range) in seg.bounds().into_iter().enumerate() {
        if range.is_empty() {
            continue; // empty group stays all-zero
        }
        let m = F::from_f64(range.len() as f64);
        for j in 0..d {
            let column = x.slice(s![range.clone(), j]);
            let value = match kind {
                SegmentKind::Sum => column.iter().fold(F::zero(), |a, &v| a + v),
                SegmentKind::Mean => column.iter().fold(F::zero(), |a, &v| a + v) / m,
                SegmentKind::Min => column.iter().fold(F::infinity(), |a, &v| a.min(v)),
                SegmentKind::Max => column.iter().fold(F::neg_infinity(), |a, &v| a.max(v)),
            };
            out[(s, j)] = value;
        }
    }
    Ok(out)
}

/// Gradient of [`segment_aggregate`] with respect to `x`, given
/// `grad_out: n_segments × d`.
pub fn segment_aggregate_backward<F: Scalar>(
    x: &ArrayView2<F>,
    seg: &SegmentIndex,
    kind: SegmentKind,
    grad_out: &ArrayView2<F>,
) -> Result<Array2<F>, NeuralError> {
    check_rows(x, seg)?;
    if grad_out.dim() != (seg.n_segments(), x.ncols()) {
        return Err(NeuralError::ShapeMismatch {
            context: "segment aggregate backward".into(),
            expected: format!("({}, {})", seg.n_segments(), x.ncols()),
            found: format!("({}, {})", grad_out.nrows(), grad_out.ncols()),
        });
    }
    let d = x.ncols();
    let mut grad_x = Array2::zeros((x.nrows(), d));
    for (s, range) in seg.bounds().into_iter().enumerate() {
        if range.is_empty() {
            continue; // nothing flowed forward, nothing flows back
        }
        let m = F::from_f64(range.len() as f64);
        for j in 0..d {
            let g = grad_out[(s, j)];
            match kind {
                SegmentKind::Sum => {
                    for r in range.clone() {
                        grad_x[(r, j)] = grad_x[(r, j)] + g;
                    }
                }
                SegmentKind::Mean => {
                    let share = g / m;
                    for r in range.clone() {
                        grad_x[(r, j)] = grad_x[(r, j)] + share;
                    }
                }
                SegmentKind::Min | SegmentKind::Max => {
                    let arg = extremum_row(x, range.clone(), j, kind);
                    grad_x[(arg, j)] = grad_x[(arg, j)] + g;
                }
            }
        }
    }
    Ok(grad_x)
}

/// First row of `range` attaining the column extremum.
fn extremum_row<F: Scalar>(
    x: &ArrayView2<F>,
    range: std::ops::Range<usize>,
    j: usize,
    kind: SegmentKind,
) -> usize {
    let mut best = range.start;
    for r in range {
        let better = match kind {
            SegmentKind::Min => x[(r, j)] < x[(best, j)],
            SegmentKind::Max => x[(r, j)] > x[(best, j)],
            _ => unreachable!("extremum_row is only for min/max"),
        };
        if better {
            best = r;
        }
    }
    best
}

/// What [`segment_four_way_backward`] needs from the forward pass.
#[derive(Clone, Debug)]
pub struct FourWayCache {
    bounds: Vec<std::ops::Range<usize>>,
    /// First row attaining the minimum / maximum, per `(segment, column)`;
    /// `usize::MAX` for empty segments.
    argmin: Array2<usize>,
    argmax: Array2<usize>,
}

/// All four reductions in one pass, concatenated column-blocks in
/// [`COMPOSITE_ORDER`]: output is `n_segments × 4d`.
pub fn segment_four_way<F: Scalar>(
    x: &ArrayView2<F>,
    seg: &SegmentIndex,
) -> Result<(Array2<F>, FourWayCache), NeuralError> {
    check_rows(x, seg)?;
    let d = x.ncols();
    let n = seg.n_segments();
    let mut out = Array2::zeros((n, 4 * d));
    let bounds = seg.bounds();
    let mut argmin = Array2::from_elem((n, d), usize::MAX);
    let mut argmax = Array2::from_elem((n, d), usize::MAX);
    for (s, range) in bounds.iter().enumerate() {
        if range.is_empty() {
            continue;
        }
        let m = F::from_f64(range.len() as f64);
        for j in 0..d {
            let mut sum = F::zero();
            let mut min = x[(range.start, j)];
            let mut max = min;
            let mut arg_min = range.start;
            let mut arg_max = range.start;
            for r in range.clone() {
                let v = x[(r, j)];
                sum = sum + v;
                if v < min {
                    min = v;
                    arg_min = r;
                }
                if v > max {
                    max = v;
                    arg_max = r;
                }
            }
            out[(s, j)] = sum;
            out[(s, d + j)] = sum / m;
            out[(s, 2 * d + j)] = min;
            out[(s, 3 * d + j)] = max;
            argmin[(s, j)] = arg_min;
            argmax[(s, j)] = arg_max;
        }
    }
    Ok((out, FourWayCache { bounds, argmin, argmax }))
}

/// Gradient of [`segment_four_way`] with respect to `x`, given the gradient
/// of the concatenated output (`n_segments × 4d`).
pub fn segment_four_way_backward<F: Scalar>(
    grad_out: &ArrayView2<F>,
    cache: &FourWayCache,
    n_rows: usize,
) -> Result<Array2<F>, NeuralError> {
    let n = cache.bounds.len();
    if grad_out.nrows() != n || grad_out.ncols() % 4 != 0 {
        return Err(NeuralError::ShapeMismatch {
            context: "segment four-way backward".into(),
            expected: format!("({n}, 4d)"),
            found: format!("({}, {})", grad_out.nrows(), grad_out.ncols()),
        });
    }
    let d = grad_out.ncols() / 4;
    let mut grad_x = Array2::zeros((n_rows, d));
    for (s, range) in cache.bounds.iter().enumerate() {
        if range.is_empty() {
            continue;
        }
        let m = F::from_f64(range.len() as f64);
        for j in 0..d {
            let g_sum = grad_out[(s, j)];
            let g_mean = grad_out[(s, d + j)] / m;
            let spread = g_sum + g_mean;
            for r in range.clone() {
                grad_x[(r, j)] = grad_x[(r, j)] + spread;
            }
            let am = cache.argmin[(s, j)];
            grad_x[(am, j)] = grad_x[(am, j)] + grad_out[(s, 2 * d + j)];
            let ax = cache.argmax[(s, j)];
            grad_x[(ax, j)] = grad_x[(ax, j)] + grad_out[(s, 3 * d + j)];
        }
    }
    Ok(grad_x)
}
