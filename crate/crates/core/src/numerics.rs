//! Small numerical helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Correctly rounded sum of a sequence (Shewchuk partials). The result does
/// not depend on the order of the inputs.
pub fn fsum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0;
    for mut x in values {
        if !x.is_finite() {
            special += x;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() {
        return special;
    }
    // Round-half-even correction as in Python's math.fsum.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Deterministic RNG for item `index` of the stream named `tag`.
/// Streams for distinct `(seed, tag, index)` are independent of iteration order.
pub fn keyed_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let th = fnv1a(tag.as_bytes());
    key[8..16].copy_from_slice(&th.to_le_bytes());
    key[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Least-squares fit `y ≈ c0 + c1 x`. Returns `(c0, c1)`.
pub fn fit_affine(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() == 1 {
        return (y[0], 0.0);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let c1 = sxy / sxx;
    (my - c1 * mx, c1)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit directions used to sample the sphere: ±1 in 1D, `n` equally spaced
/// angles in 2D, a Fibonacci lattice of `n` points in 3D.
pub fn sphere_directions(dim: usize, n: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fsum_is_exact_on_cancellation() {
        assert_eq!(fsum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(fsum([0.1; 10]), 1.0);
    }

    #[test]
    fn fsum_is_order_independent() {
        let mut rng = keyed_rng(3, "t", 0);
        let mut v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-5..5))).collect();
        let a = fsum(v.iter().copied());
        v.reverse();
        assert_eq!(a, fsum(v.iter().copied()));
    }

    #[test]
    fn keyed_streams_differ() {
        let a: f64 = keyed_rng(1, "x", 0).random();
        let b: f64 = keyed_rng(1, "x", 1).random();
        let c: f64 = keyed_rng(1, "x", 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn affine_fit_exact() {
        let x = [1.0, 0.5, 0.25];
        let y: Vec<f64> = x.iter().map(|t| 3.0 - 2.0 * t).collect();
        let (c0, c1) = fit_affine(&x, &y);
        assert!((c0 - 3.0).abs() < 1e-12 && (c1 + 2.0).abs() < 1e-12);
    }
}
