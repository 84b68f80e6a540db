use larp::geom::Vec3;

fn ternary(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..120 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Closest points of two segments by nested ternary search over both
/// segment parameters. Segment distance is jointly convex, so the search
/// converges to the global minimum.
pub fn brute_closest(a0: Vec3, a1: Vec3, b0: Vec3, b1: Vec3) -> (Vec3, Vec3) {
    let at = |s: f64| a0 + (a1 - a0) * s;
    let bt = |t: f64| b0 + (b1 - b0) * t;
    let d = |s: f64, t: f64| (at(s) - bt(t)).norm();
    let inner = |s: f64| ternary(0.0, 1.0, |t| d(s, t));
    let s = ternary(0.0, 1.0, |s| d(s, inner(s)));
    (at(s), bt(inner(s)))
}
