//! Weighted communication graph and its algebraic connectivity.
//!
//! Edge weights decay smoothly to zero at the communication range:
//!
//! ```text
//! a_ij = exp((r_c² − d_ij²)² / σ) − 1   if d_ij ≤ r_c,   0 otherwise
//! ```
//!
//! `λ₂` of the Laplacian `L = D − A` is positive iff the graph is connected.
//! For a simple eigenvalue its gradient follows from `dλ₂ = v₂ᵀ dL v₂`:
//!
//! ```text
//! ∂λ₂/∂x_i = Σ_j ∂a_ij/∂x_i · (v₂,i − v₂,j)²
//! ```

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::belief::Vec2;

/// Eigenvalue gaps below this make `∂λ₂/∂x` ill-defined.
pub const REPEATED_EIGENVALUE_GAP: f64 = 1e-8;

/// `exp((r_c² − d²)²/σ) − 1` inside the range, zero outside.
pub fn adjacency_weight(d: f64, r_c: f64, sigma: f64) -> f64 {
    if d <= r_c {
        let s = r_c * r_c - d * d;
        (s * s / sigma).exp_m1()
    } else {
        0.0
    }
}

/// `∂a_ij/∂x_i = −(4(r_c² − d²)/σ)·exp((r_c² − d²)²/σ)·(x_i − x_j)`.
pub fn adjacency_weight_gradient(xi: &Vec2, xj: &Vec2, r_c: f64, sigma: f64) -> Vec2 {
    let delta = xi - xj;
    let d2 = delta.norm_squared();
    if d2 > r_c * r_c {
        return Vec2::zeros();
    }
    let s = r_c * r_c - d2;
    delta * (-4.0 * s / sigma * (s * s / sigma).exp())
}

/// Snapshot of the communication graph at one set of positions.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub adjacency: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// Laplacian spectrum, ascending.
    pub eigenvalues: DVector<f64>,
    pub lambda2: f64,
    /// Unit eigenvector of `λ₂`, sign fixed so its first significant entry is positive.
    pub fiedler: DVector<f64>,
    /// Unit eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// `∂λ₂/∂x` stacked robot-major, length `2N`.
    pub beta: DVector<f64>,
    /// `λ₃ − λ₂` is below [`REPEATED_EIGENVALUE_GAP`]; `beta` is then only one
    /// element of the subdifferential.
    pub repeated_lambda2: bool,
}

/// Builds adjacency, Laplacian, spectrum, Fiedler pair, and `∂λ₂/∂x`.
///
/// A single robot yields the trivial graph with `λ₂ = 0`.
pub fn build_graph(robot_means: &[Vec2], r_c: f64, sigma: f64) -> GraphState {
    let n = robot_means.len();
    let mut adjacency = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = adjacency_weight((robot_means[i] - robot_means[j]).norm(), r_c, sigma);
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
        }
    }
    let degree = DMatrix::from_diagonal(&adjacency.column_sum());
    let laplacian = degree - &adjacency;

    let (eigenvalues, eigenvectors) = if n < 2 {
        (DVector::zeros(n), DMatrix::from_element(n, n, 1.0))
    } else {
        let eig = SymmetricEigen::new(laplacian.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            v /= v.norm();
            if v.iter().find(|x| x.abs() > 1e-9).is_some_and(|first| *first < 0.0) {
                v = -v;
            }
            vectors.set_column(col, &v);
        }
        (values, vectors)
    };
    let fiedler = if n < 2 {
        DVector::from_element(n, 1.0)
    } else {
        eigenvectors.column(1).into_owned()
    };
    let lambda2 = if n < 2 { 0.0 } else { eigenvalues[1] };
    let repeated_lambda2 = n >= 3 && eigenvalues[2] - eigenvalues[1] < REPEATED_EIGENVALUE_GAP;

    let mut gs = GraphState {
        adjacency,
        laplacian,
        eigenvalues,
        lambda2,
        fiedler,
        eigenvectors,
        beta: DVector::zeros(2 * n),
        repeated_lambda2,
    };
    gs.beta = lambda2_gradient(&gs, robot_means, r_c, sigma).beta;
    gs
}

#[derive(Debug, Clone)]
pub struct Lambda2Gradient {
    pub beta: DVector<f64>,
    pub repeated: bool,
}

/// `β_i = Σ_j ∂a_ij/∂x_i · (v₂,i − v₂,j)²`, stacked robot-major.
pub fn lambda2_gradient(gs: &GraphState, robot_means: &[Vec2], r_c: f64, sigma: f64) -> Lambda2Gradient {
    Lambda2Gradient {
        beta: eigenvalue_gradient(&gs.fiedler, robot_means, r_c, sigma),
        repeated: gs.repeated_lambda2,
    }
}

/// Gradient of the simple Laplacian eigenvalue with unit eigenvector `v`:
/// `Σ_j ∂a_ij/∂x_i · (v_i − v_j)²` per robot, stacked robot-major.
pub fn eigenvalue_gradient(v: &DVector<f64>, robot_means: &[Vec2], r_c: f64, sigma: f64) -> DVector<f64> {
    let n = robot_means.len();
    let mut beta = DVector::zeros(2 * n);
    if n >= 2 {
        for i in 0..n {
            let mut bi = Vec2::zeros();
            for j in (0..n).filter(|&j| j != i) {
                let diff = v[i] - v[j];
                bi += adjacency_weight_gradient(&robot_means[i], &robot_means[j], r_c, sigma) * (diff * diff);
            }
            beta[2 * i] = bi.x;
            beta[2 * i + 1] = bi.y;
        }
    }
    beta
}

/// Breadth-first search over the unit-disk graph (edge iff distance ≤ `r_c`).
pub fn is_connected_bfs(robot_means: &[Vec2], r_c: f64) -> bool {
    let n = robot_means.len();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && (robot_means[i] - robot_means[j]).norm() <= r_c {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// Smallest pairwise distance, `+∞` for fewer than two points.
pub fn min_pairwise_distance(points: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min((p - q).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_sigma_norm;
    use proptest::prelude::*;

    const RC: f64 = 10.0;

    fn sigma() -> f64 {
        default_sigma_norm(RC)
    }

    #[test]
    fn weight_examples() {
        assert_eq!(adjacency_weight(RC, RC, sigma()), 0.0);
        assert_eq!(adjacency_weight(RC + 0.5, RC, sigma()), 0.0);
        assert!((adjacency_weight(0.0, RC, sigma()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_robot_spectrum() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(4.0, 3.0)];
        let w = adjacency_weight(5.0, RC, sigma());
        let gs = build_graph(&pts, RC, sigma());
        assert!(gs.eigenvalues[0].abs() < 1e-12);
        assert!((gs.lambda2 - 2.0 * w).abs() < 1e-12);
        assert!((gs.fiedler.norm() - 1.0).abs() < 1e-12);
        assert!(gs.fiedler[0] > 0.0);

        let apart = [Vec2::new(0.0, 0.0), Vec2::new(RC + 1.0, 0.0)];
        assert_eq!(build_graph(&apart, RC, sigma()).lambda2, 0.0);
    }

    #[test]
    fn unit_triangle_spectrum() {
        // σ = 1/ln 2 at unit side and r_c² − 1 = 1 gives weight exp(ln 2) − 1 = 1.
        let rc = 2f64.sqrt();
        let s = 1.0 / std::f64::consts::LN_2;
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.5, 3f64.sqrt() / 2.0),
        ];
        let gs = build_graph(&pts, rc, s);
        assert!((gs.adjacency[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((gs.lambda2 - 3.0).abs() < 1e-12);
        assert!((gs.eigenvalues[2] - 3.0).abs() < 1e-12);
        assert!(gs.repeated_lambda2);
    }

    #[test]
    fn two_robot_gradient_is_antisymmetric() {
        let pts = [Vec2::new(1.0, 2.0), Vec2::new(6.0, -1.0)];
        let gs = build_graph(&pts, RC, sigma());
        assert!((gs.beta[0] + gs.beta[2]).abs() < 1e-15);
        assert!((gs.beta[1] + gs.beta[3]).abs() < 1e-15);
        assert!(gs.beta.norm() > 0.0);
        // Moving apart lowers λ₂.
        let outward = pts[0] - pts[1];
        assert!(gs.beta[0] * outward.x + gs.beta[1] * outward.y < 0.0);
    }

    #[test]
    fn out_of_range_gradient_vanishes() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(20.0, 0.0), Vec2::new(0.0, 20.0)];
        let gs = build_graph(&pts, RC, sigma());
        assert_eq!(gs.beta, DVector::zeros(6));
    }

    #[test]
    fn higher_eigenvalue_gradient_matches_differences() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(6.0, 1.0),
            Vec2::new(2.0, 7.0),
            Vec2::new(8.0, 8.0),
        ];
        let gs = build_graph(&pts, RC, sigma());
        let lambda3 = |p: &[Vec2]| build_graph(p, RC, sigma()).eigenvalues[2];
        let grad = eigenvalue_gradient(&gs.eigenvectors.column(2).into_owned(), &pts, RC, sigma());
        let h = 1e-6;
        for k in 0..2 * pts.len() {
            let (mut up, mut down) = (pts, pts);
            up[k / 2][k % 2] += h;
            down[k / 2][k % 2] -= h;
            let fd = (lambda3(&up) - lambda3(&down)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{k}: {fd} vs {}",
                grad[k]
            );
        }
        assert_eq!(gs.eigenvectors.column(1).into_owned(), gs.fiedler);
    }

    #[test]
    fn bfs_examples() {
        let chain: Vec<Vec2> = (0..5).map(|k| Vec2::new(k as f64 * RC * 0.9, 0.0)).collect();
        assert!(is_connected_bfs(&chain, RC));
        let clusters = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0 * RC, 0.0),
            Vec2::new(2.0 * RC + 1.0, 0.0),
        ];
        assert!(!is_connected_bfs(&clusters, RC));
        assert!(is_connected_bfs(&[Vec2::new(3.0, 3.0)], RC));
    }

    fn layout() -> impl Strategy<Value = Vec<Vec2>> {
        proptest::collection::vec((0.0f64..25.0, 0.0f64..25.0), 2..8)
            .prop_map(|v| v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn laplacian_invariants(pts in layout()) {
            let gs = build_graph(&pts, RC, sigma());
            let ones = DVector::from_element(pts.len(), 1.0);
            prop_assert!((&gs.laplacian * ones).amax() < 1e-12);
            prop_assert!(gs.eigenvalues[0].abs() <= 1e-10);
            prop_assert!(gs.lambda2 >= -1e-10);
            prop_assert!((&gs.adjacency - gs.adjacency.transpose()).amax() == 0.0);
            prop_assert!(gs.adjacency.iter().all(|&a| a >= 0.0));
            prop_assert!((0..pts.len()).all(|i| gs.adjacency[(i, i)] == 0.0));
        }

        #[test]
        fn gradient_sums_to_zero(pts in layout()) {
            let gs = build_graph(&pts, RC, sigma());
            let (sx, sy) = gs.beta.as_slice().chunks(2).fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
            let scale = gs.beta.amax().max(1e-12);
            prop_assert!(sx.abs() / scale < 1e-9 && sy.abs() / scale < 1e-9);
        }

        #[test]
        fn weight_is_monotone(a in 0.0f64..RC, b in 0.0f64..RC) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(adjacency_weight(lo, RC, sigma()) >= adjacency_weight(hi, RC, sigma()));
        }
    }
}
