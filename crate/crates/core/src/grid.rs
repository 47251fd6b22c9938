//! Sampling grids used for grid suprema over [0,1].

/// Smallest point of the geometric grid.
pub const GEOMETRIC_FLOOR: f64 = 1e-12;

/// Default number of points of each grid component.
pub const DEFAULT_GRID_SIZE: usize = 1000;

/// Geometric grid `x_k = r^k` with `grid_size` points covering
/// `[GEOMETRIC_FLOOR, 1]`, returned in increasing order.
pub fn geometric(grid_size: usize) -> Vec<f64> {
    let n = grid_size.max(2);
    let log_floor = GEOMETRIC_FLOOR.ln();
    let mut pts: Vec<f64> = (0..n)
        .map(|k| (log_floor * (1.0 - k as f64 / (n - 1) as f64)).exp())
        .collect();
    pts[0] = GEOMETRIC_FLOOR;
    pts[n - 1] = 1.0;
    pts
}

/// Uniform grid of `grid_size` points on `[lo, hi]`, endpoints included.
pub fn uniform(lo: f64, hi: f64, grid_size: usize) -> Vec<f64> {
    let n = grid_size.max(2);
    let mut pts: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    pts[n - 1] = hi;
    pts
}

/// Union of the geometric grid and a uniform grid on `[d_bar, 1]`, sorted
/// and deduplicated.
pub fn supremum_grid(d_bar: f64, grid_size: usize) -> Vec<f64> {
    let mut pts = geometric(grid_size);
    pts.extend(uniform(d_bar, 1.0, grid_size));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Grid points split by branch domain. The first branch also gets its
/// closure point `d_bar` so that one-sided limits at the branch point enter
/// the suprema; the origin is never included.
pub fn branch_samples(d_bar: f64, grid_size: usize) -> [Vec<f64>; 2] {
    let all = supremum_grid(d_bar, grid_size);
    let mut first: Vec<f64> = all.iter().copied().filter(|&x| x < d_bar).collect();
    first.push(d_bar);
    let second: Vec<f64> = all.into_iter().filter(|&x| x >= d_bar).collect();
    [first, second]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_grid_covers_range() {
        let g = geometric(1000);
        assert_eq!(g.len(), 1000);
        assert_eq!(g[0], 1e-12);
        assert_eq!(g[999], 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn branch_samples_split_at_branch_point() {
        let [a, b] = branch_samples(0.5, 100);
        assert!(a.iter().all(|&x| x > 0.0 && x <= 0.5));
        assert_eq!(*a.last().unwrap(), 0.5);
        assert!(b.iter().all(|&x| x >= 0.5));
        assert_eq!(b[0], 0.5);
        assert_eq!(*b.last().unwrap(), 1.0);
    }
}
