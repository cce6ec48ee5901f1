//! Euclidean projection onto a scaled probability simplex.

/// Projects `v` onto `{x : x >= 0, sum(x) = radius}` in place.
///
/// Sort-and-threshold, O(K log K).
pub fn project_simplex(v: &mut [f64], radius: f64) {
    let k = v.len();
    if k == 0 {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
        total += *x;
    }
    // Rescale away rounding drift so the row sum is exact to the last ulp or so.
    if total > 0.0 && (total - radius).abs() > 0.0 {
        let s = radius / total;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Projects `v` onto the simplex restricted to coordinates where `allowed` is true.
/// Disallowed coordinates are set to zero.
pub fn project_simplex_masked(v: &mut [f64], allowed: &[bool], radius: f64) {
    debug_assert_eq!(v.len(), allowed.len());
    let mut sub: Vec<f64> = v.iter().zip(allowed).filter(|(_, &a)| a).map(|(&x, _)| x).collect();
    project_simplex(&mut sub, radius);
    let mut it = sub.into_iter();
    for (x, &a) in v.iter_mut().zip(allowed) {
        *x = if a { it.next().unwrap() } else { 0.0 };
    }
}
