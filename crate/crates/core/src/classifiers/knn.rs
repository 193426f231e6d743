/// Majority vote of the `k` nearest stored rows (squared Euclidean distance,
/// ties by lower row index). A split vote counts as diseased.
pub(crate) fn predict(x: &[Vec<f64>], y: &[bool], k: usize, row: &[f64]) -> bool {
    let mut d: Vec<(f64, usize)> = x
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.min(d.len());
    let pos = d[..k].iter().filter(|(_, i)| y[*i]).count();
    2 * pos >= k
}
