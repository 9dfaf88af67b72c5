use std::cmp::Ordering;

/// Orders `(score, tie_rank)` pairs best first.
fn better(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// The best `k` of `(score, tie_rank, row)` entries, sorted best first.
pub(crate) fn top_k(mut items: Vec<(f64, u32, u32)>, k: usize) -> Vec<(f64, u32, u32)> {
    let cmp = |a: &(f64, u32, u32), b: &(f64, u32, u32)| better(&(a.0, a.1), &(b.0, b.1));
    if items.len() > k && k > 0 {
        items.select_nth_unstable_by(k - 1, cmp);
        items.truncate(k);
    }
    items.truncate(k);
    items.sort_by(cmp);
    items
}
