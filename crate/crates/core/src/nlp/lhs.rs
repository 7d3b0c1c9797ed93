use rand::seq::SliceRandom;
use rand::Rng;

/// Latin hypercube sample of `n` points in the box `[lower, upper]`.
///
/// Along every dimension each of the `n` equal-width strata
/// `[l + k/n·(u−l), l + (k+1)/n·(u−l))` holds exactly one point.
pub fn latin_hypercube<R: Rng + ?Sized>(
    n: usize,
    lower: &[f64],
    upper: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    assert_eq!(lower.len(), upper.len(), "bound dimensions differ");
    let dim = lower.len();
    let mut points = vec![vec![0.0; dim]; n];
    if n == 0 {
        return points;
    }
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        let (l, u) = (lower[d], upper[d]);
        let width = u - l;
        for (i, &k) in strata.iter().enumerate() {
            let r: f64 = rng.random();
            let mut v = l + width * ((k as f64 + r) / n as f64);
            // Rounding can push a point onto the next stratum's edge.
            let edge = l + width * ((k + 1) as f64 / n as f64);
            if width > 0.0 && v >= edge {
                v = edge.next_down().max(l);
            }
            points[i][d] = v;
        }
    }
    points
}
