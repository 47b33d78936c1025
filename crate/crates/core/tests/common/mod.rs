//! Oracles shared by the integration tests. Each one is computed by a route
//! that does not go through the code under test.
#![allow(dead_code)]

use direal::nn::Network;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Elementwise `|a − n| / max(|a|, |n|, floor)`, maximized.
pub fn max_rel_err(a: &[f64], n: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), n.len());
    a.iter()
        .zip(n)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` over every entry of `x`.
pub fn fd_matrix(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    Array2::from_shape_fn(x.raw_dim(), |(r, c)| {
        let mut p = x.clone();
        p[[r, c]] += h;
        let mut m = x.clone();
        m[[r, c]] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Stored gradients of `net`, flattened in parameter order.
pub fn stored_grads(net: &Network) -> Vec<f64> {
    let mut n = net.clone();
    n.params_mut()
        .iter()
        .flat_map(|p| p.grad.to_vec())
        .collect()
}

/// Central differences of `objective` over every parameter of `net`, in parameter order.
pub fn fd_params(net: &Network, h: f64, objective: &mut dyn FnMut(&Network) -> f64) -> Vec<f64> {
    let sizes: Vec<usize> = net
        .clone()
        .params_mut()
        .iter()
        .map(|p| p.value.len())
        .collect();
    let mut out = Vec::new();
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let mut plus = net.clone();
            plus.params_mut()[t].value[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[t].value[k] -= h;
            out.push((objective(&plus) - objective(&minus)) / (2.0 * h));
        }
    }
    out
}

/// Fourth-order central differences, for smooth objectives where a step small
/// enough for the two-point rule would drown in roundoff.
pub fn fd_params_smooth(
    net: &Network,
    h: f64,
    objective: &mut dyn FnMut(&Network) -> f64,
) -> Vec<f64> {
    let sizes: Vec<usize> = net
        .clone()
        .params_mut()
        .iter()
        .map(|p| p.value.len())
        .collect();
    let mut out = Vec::new();
    for (t, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let mut at = |d: f64| {
                let mut n = net.clone();
                n.params_mut()[t].value[k] += d;
                objective(&n)
            };
            out.push((8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h));
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

/// Largest singular value via the eigenvalues of `MᵀM`.
pub fn top_singular_value(m: &Array2<f64>) -> f64 {
    let gram = m.t().dot(m);
    jacobi_eigenvalues(&gram)
        .into_iter()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Minimum-cost perfect assignment (Hungarian algorithm, O(n³)).
pub fn assignment_cost(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[[p[j] - 1, j - 1]]).sum()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Optimal transport cost between uniform empirical measures on `a` and `b`
/// under |x − y|. Each point is split into equal-mass atoms so the problem
/// becomes a square assignment, solved without using 1-D structure.
pub fn ot_cost(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() / gcd(a.len(), b.len()) * b.len();
    let atoms = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .flat_map(|&x| std::iter::repeat_n(x, k / v.len()))
            .collect()
    };
    let (aa, bb) = (atoms(a), atoms(b));
    let cost = Array2::from_shape_fn((k, k), |(i, j)| (aa[i] - bb[j]).abs());
    assignment_cost(&cost) / k as f64
}

/// Minimum over all permutations of the mean matched distance (equal sizes).
pub fn brute_force_matching(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &mut Vec<f64>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in i..b.len() {
            b.swap(i, j);
            go(a, b, i + 1, acc + (a[i] - b[i]).abs(), best);
            b.swap(i, j);
        }
    }
    let mut best = f64::INFINITY;
    go(a, &mut b.to_vec(), 0, 0.0, &mut best);
    best / a.len() as f64
}

/// E|⟨u, v⟩| for independent uniform unit vectors in Rᵈ: Γ(d/2) / (√π Γ((d+1)/2)).
pub fn expected_abs_cosine(d: usize) -> f64 {
    // Γ(x)/Γ(x+½) by stepping x down to ½ or 1 where both values are known.
    let mut x = d as f64 / 2.0;
    let mut ratio = 1.0;
    while x > 1.0 {
        x -= 1.0;
        // Γ(x+1)/Γ(x+1.5) = x/(x+½) · Γ(x)/Γ(x+½)
        ratio *= x / (x + 0.5);
    }
    let pi = std::f64::consts::PI;
    let base = if (x - 0.5).abs() < 1e-12 {
        // Γ(½)/Γ(1)
        pi.sqrt()
    } else {
        // Γ(1)/Γ(3/2)
        2.0 / pi.sqrt()
    };
    ratio * base / pi.sqrt()
}

/// Second moment E⟨u, v⟩² = 1/d.
pub fn expected_sq_cosine(d: usize) -> f64 {
    1.0 / d as f64
}

/// Bytes of an IDX image file assembled by hand.
pub fn idx_images_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x03];
    for d in [count, rows, cols] {
        b.extend(d.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

pub fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x01];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}
