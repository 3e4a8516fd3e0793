//! Small dense-vector helpers over `&[f64]`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Groups identical rows of a row-major matrix. Returns the index of the first
/// occurrence of every distinct row (in order of first appearance) and, for
/// each row, the position of its group in that list.
pub fn group_rows(data: &[f64], stride: usize) -> (Vec<usize>, Vec<usize>) {
    use std::collections::HashMap;
    let rows = data.len().checked_div(stride).unwrap_or(0);
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut firsts = Vec::new();
    let mut group_of = Vec::with_capacity(rows);
    for r in 0..rows {
        let key: Vec<u64> = data[r * stride..(r + 1) * stride]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let next = firsts.len();
        let g = *seen.entry(key).or_insert(next);
        if g == next {
            firsts.push(r);
        }
        group_of.push(g);
    }
    (firsts, group_of)
}
