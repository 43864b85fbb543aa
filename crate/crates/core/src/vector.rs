//! Small dense-vector helpers shared by the numeric modules.

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    squared_l2(a, b).sqrt()
}

/// Coordinate-wise arithmetic mean. Panics on an empty set.
pub fn mean<'a, I>(points: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = points.into_iter();
    let first = iter.next().expect("mean of an empty point set");
    let mut acc = first.to_vec();
    let mut n = 1usize;
    for p in iter {
        for (a, x) in acc.iter_mut().zip(p) {
            *a += x;
        }
        n += 1;
    }
    let inv = n as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    acc
}

/// Coordinate-wise median (mean of the two middle values for even counts).
pub fn median<'a, I>(points: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let points: Vec<&[f64]> = points.into_iter().collect();
    assert!(!points.is_empty(), "median of an empty point set");
    let dim = points[0].len();
    let mut column = Vec::with_capacity(points.len());
    (0..dim)
        .map(|j| {
            column.clear();
            column.extend(points.iter().map(|p| p[j]));
            column.sort_by(f64::total_cmp);
            let n = column.len();
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
