//! Floating point helpers that work without `std`.

pub use libm::{acos, atan2, cos, exp, fabs as abs, floor, log, pow, sin, sqrt};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    sqrt(a[0] * a[0] + a[1] * a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Twice the signed area of the triangle `(a, b, c)`.
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot_slices(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| if abs(*x) > m { abs(*x) } else { m })
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

#[inline]
pub fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Least-squares slope of `log(err)` against `log(step)`.
pub fn loglog_slope(steps: &[f64], errors: &[f64]) -> f64 {
    let n = steps.len().min(errors.len()) as f64;
    let xs = steps.iter().map(|s| log(*s));
    let ys = errors.iter().map(|e| log(e.max(f64::MIN_POSITIVE)));
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in xs.zip(ys) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
