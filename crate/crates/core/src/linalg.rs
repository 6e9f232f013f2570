//! Small dense kernels used in hot loops.

/// `log |det A|` of a row-major `dim x dim` buffer, overwritten with its LU
/// factors. Returns `-inf` when a pivot falls to rounding level.
pub(crate) fn log_abs_det_in_place(a: &mut [f64], dim: usize) -> f64 {
    debug_assert_eq!(a.len(), dim * dim);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return f64::NEG_INFINITY;
    }
    let tiny = scale * f64::EPSILON * dim as f64;
    let mut log_det = 0.0;
    for col in 0..dim {
        let (pivot_row, pivot_abs) = (col..dim)
            .map(|row| (row, a[row * dim + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= tiny {
            return f64::NEG_INFINITY;
        }
        if pivot_row != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot_row * dim + j);
            }
        }
        let pivot = a[col * dim + col];
        log_det += pivot_abs.ln();
        for row in col + 1..dim {
            let factor = a[row * dim + col] / pivot;
            if factor != 0.0 {
                for j in col + 1..dim {
                    a[row * dim + j] -= factor * a[col * dim + j];
                }
            }
        }
    }
    log_det
}
