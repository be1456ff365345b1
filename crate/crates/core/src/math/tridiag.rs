//! Thomas algorithm for tridiagonal systems.

/// Solves `lower[i]*x[i-1] + diag[i]*x[i] + upper[i]*x[i+1] = rhs[i]` in
/// place, returning the solution in `rhs`. `lower[0]` and `upper[n-1]` are
/// ignored. `scratch` must have the same length and avoids reallocation in
/// hot loops.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n && scratch.len() == n);
    if n == 0 {
        return;
    }

    // Forward sweep: scratch holds the modified super-diagonal.
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }

    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}
