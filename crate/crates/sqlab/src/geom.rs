//! Small geometric helpers shared by the plank modules.

use crate::scalar::{dot, norm, Real};

/// `(lo, hi)` with `lo ≤ hi`, or `None` for the empty interval.
pub type Interval<T> = Option<(T, T)>;

/// Intersects `[lo, hi]` with `{a : |p - q·a| ≤ w}`.
pub fn clip_affine<T: Real>(iv: Interval<T>, p: T, q: T, w: T) -> Interval<T> {
    let (lo, hi) = iv?;
    if w < T::zero() {
        return None;
    }
    let (lo, hi) = if q.abs() <= T::epsilon() * (p.abs() + w + T::one()) {
        if p.abs() > w {
            return None;
        }
        (lo, hi)
    } else {
        let a = (p - w) / q;
        let b = (p + w) / q;
        (lo.max(a.min(b)), hi.min(a.max(b)))
    };
    if lo <= hi {
        Some((lo, hi))
    } else {
        None
    }
}

/// Minimizes max_i |p_i - q_i·a| / w_i over a ∈ ℝ. Returns (a*, value).
///
/// The objective is convex and piecewise linear, so its minimum sits at a
/// crossing of two of the lines ±(p_i - q_i·a)/w_i or at a zero of one of them.
pub fn min_max_abs_affine<T: Real>(terms: &[(T, T, T)]) -> (T, T) {
    let eval = |a: T| {
        terms
            .iter()
            .fold(T::zero(), |m, &(p, q, w)| m.max((p - q * a).abs() / w))
    };
    let lines: Vec<(T, T)> = terms
        .iter()
        .flat_map(|&(p, q, w)| [(p / w, -q / w), (-p / w, q / w)])
        .collect();
    let mut best = (T::zero(), eval(T::zero()));
    let mut consider = |a: T| {
        if a.is_finite() {
            let v = eval(a);
            if v < best.1 {
                best = (a, v);
            }
        }
    };
    for &(p, q, _) in terms {
        if q != T::zero() {
            consider(p / q);
        }
    }
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (c0, s0) = lines[i];
            let (c1, s1) = lines[j];
            if s0 != s1 {
                consider((c1 - c0) / (s0 - s1));
            }
        }
    }
    best
}

/// Uniform bucket grid over an axis-aligned box, mapping cells to the ids of
/// boxes registered over them.
#[derive(Clone, Debug)]
pub struct BucketIndex<const N: usize> {
    lo: [f64; N],
    inv: [f64; N],
    nb: usize,
    cells: Vec<Vec<u32>>,
}

impl<const N: usize> BucketIndex<N> {
    pub fn new(lo: [f64; N], hi: [f64; N], nb: usize) -> Self {
        let mut inv = [0.0; N];
        for i in 0..N {
            inv[i] = nb as f64 / (hi[i] - lo[i]).max(f64::MIN_POSITIVE);
        }
        Self { lo, inv, nb, cells: vec![Vec::new(); nb.pow(N as u32)] }
    }

    fn cell_of(&self, x: f64, axis: usize) -> usize {
        let c = ((x - self.lo[axis]) * self.inv[axis]).floor();
        c.clamp(0.0, (self.nb - 1) as f64) as usize
    }

    pub fn insert(&mut self, id: u32, lo: [f64; N], hi: [f64; N]) {
        let mut a = [0usize; N];
        let mut b = [0usize; N];
        for i in 0..N {
            a[i] = self.cell_of(lo[i], i);
            b[i] = self.cell_of(hi[i], i);
        }
        let mut cur = a;
        loop {
            let mut flat = 0;
            for i in 0..N {
                flat = flat * self.nb + cur[i];
            }
            self.cells[flat].push(id);
            let mut axis = N;
            while axis > 0 {
                axis -= 1;
                if cur[axis] < b[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = a[axis];
                if axis == 0 {
                    return;
                }
            }
            if N == 0 {
                return;
            }
        }
    }

    /// Candidate ids whose registered box may contain `p`. Points outside the
    /// grid are clamped to the boundary cells.
    pub fn query(&self, p: &[f64; N]) -> &[u32] {
        let mut flat = 0;
        for i in 0..N {
            flat = flat * self.nb + self.cell_of(p[i], i);
        }
        &self.cells[flat]
    }
}

/// Enclosure of a polynomial Σ coeffs[j]·x^j on [lo, hi], by interval Horner
/// evaluation over `pieces` equal subintervals.
pub fn poly_range(coeffs: &[f64], lo: f64, hi: f64, pieces: usize) -> (f64, f64) {
    let mut out = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..pieces {
        let a = lo + (hi - lo) * i as f64 / pieces as f64;
        let b = lo + (hi - lo) * (i + 1) as f64 / pieces as f64;
        let (mut l, mut h) = (0.0f64, 0.0f64);
        for &c in coeffs.iter().rev() {
            let prods = [l * a, l * b, h * a, h * b];
            let pl = prods.iter().cloned().fold(f64::INFINITY, f64::min);
            let ph = prods.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            l = pl + c;
            h = ph + c;
        }
        out.0 = out.0.min(l);
        out.1 = out.1.max(h);
    }
    out
}

pub fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Oriented box {Σ x_j·axes[j] : |x_j| ≤ half[j]} centered at the origin, with
/// orthonormal axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthoBox<T, const N: usize> {
    pub axes: [[T; N]; N],
    pub half: [T; N],
}

impl<T: Real, const N: usize> OrthoBox<T, N> {
    pub fn coords(&self, p: &[T; N]) -> [T; N] {
        let mut x = [T::zero(); N];
        for j in 0..N {
            x[j] = dot(p, &self.axes[j]);
        }
        x
    }

    pub fn contains(&self, p: &[T; N]) -> bool {
        let x = self.coords(p);
        (0..N).all(|j| x[j].abs() <= self.half[j] * (T::one() + T::slack()))
    }

    pub fn volume(&self) -> T {
        self.half.iter().fold(T::one(), |v, &h| v * (h + h))
    }

    /// Index of the translate U ∥ self containing p; the tile 0 is centered at the origin.
    pub fn tile(&self, p: &[T; N]) -> [i64; N] {
        let x = self.coords(p);
        let mut out = [0i64; N];
        for j in 0..N {
            let two = self.half[j] + self.half[j];
            out[j] = ((x[j] + self.half[j]) / two).floor().to_i64().unwrap_or(i64::MAX);
        }
        out
    }

    /// Half-lengths along `axes` of the smallest box with those axes containing self.
    pub fn enclosing_half(&self, axes: &[[T; N]; N]) -> [T; N] {
        let mut h = [T::zero(); N];
        for j in 0..N {
            for m in 0..N {
                h[j] += dot(&axes[j], &self.axes[m]).abs() * self.half[m];
            }
        }
        h
    }
}

/// Gram–Schmidt orthonormalization of linearly independent vectors, in order.
pub fn gram_schmidt<T: Real, const N: usize>(v: &[[T; N]; N]) -> [[T; N]; N] {
    let mut out = [[T::zero(); N]; N];
    for i in 0..N {
        let mut u = v[i];
        for j in 0..i {
            let p = dot(&u, &out[j]);
            for m in 0..N {
                u[m] -= p * out[j][m];
            }
        }
        let n = norm(&u);
        for m in 0..N {
            u[m] = u[m] / n;
        }
        out[i] = u;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_affine_examples() {
        let iv = Some((0.0, 10.0));
        assert_eq!(clip_affine(iv, 4.0, 1.0, 1.0), Some((3.0, 5.0)));
        assert_eq!(clip_affine(iv, 4.0, -2.0, 2.0), None);
        assert_eq!(clip_affine(Some((-10.0, 10.0)), 4.0, -2.0, 2.0), Some((-3.0, -1.0)));
        assert_eq!(clip_affine(iv, 3.0, 0.0, 1.0), None);
        assert_eq!(clip_affine(iv, 0.5, 0.0, 1.0), iv);
        assert_eq!(clip_affine(Some((0.0, 1.0)), 5.0, 1.0, 1.0), None);
    }

    #[test]
    fn min_max_matches_brute_force() {
        let terms = [(1.0, 1.0, 0.5), (3.0, -2.0, 1.0), (0.2, 0.0, 2.0)];
        let (a, v) = min_max_abs_affine(&terms);
        let f = |a: f64| terms.iter().fold(0.0f64, |m, &(p, q, w)| m.max((p - q * a).abs() / w));
        assert!((f(a) - v).abs() < 1e-12);
        for i in -4000..4000 {
            assert!(f(i as f64 / 1000.0) >= v - 1e-12);
        }
    }

    #[test]
    fn buckets_return_registered_ids() {
        let mut b = BucketIndex::<2>::new([0.0, 0.0], [1.0, 1.0], 4);
        b.insert(7, [0.1, 0.1], [0.6, 0.3]);
        assert!(b.query(&[0.5, 0.2]).contains(&7));
        assert!(!b.query(&[0.9, 0.9]).contains(&7));
        assert!(b.query(&[-5.0, 0.0]).contains(&7));
    }

    #[test]
    fn poly_range_encloses_samples() {
        let c = [2.0, 0.4, 0.02];
        let (lo, hi) = poly_range(&c, -1.0, 1.0, 256);
        for i in 0..=200 {
            let x = -1.0 + i as f64 / 100.0;
            let y = c[0] + c[1] * x + c[2] * x * x;
            assert!(lo <= y && y <= hi);
        }
        assert!((lo - 1.62).abs() < 1e-2 && (hi - 2.42).abs() < 1e-2);
    }

    #[test]
    fn gram_schmidt_is_orthonormal_and_keeps_first_direction() {
        let v = [[2.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 3.0]];
        let u = gram_schmidt(&v);
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&u[i], &u[j]) - e).abs() < 1e-14);
            }
        }
        assert!((u[0][0] - 2.0 / 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn box_tiles_and_encloses() {
        let b = OrthoBox { axes: [[1.0, 0.0], [0.0, 1.0]], half: [1.0, 2.0] };
        assert_eq!(b.tile(&[0.5, -1.5]), [0, 0]);
        assert_eq!(b.tile(&[1.5, 2.5]), [1, 1]);
        assert_eq!(b.volume(), 8.0);
        let s = 0.5f64.sqrt();
        let h = b.enclosing_half(&[[s, s], [-s, s]]);
        assert!((h[0] - 3.0 * s).abs() < 1e-14 && (h[1] - 3.0 * s).abs() < 1e-14);
    }
}
