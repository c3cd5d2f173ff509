//! Canonical covering of the δ-neighbourhood of γ_k = {(ξ, ξ^k)} by rectangles.
//!
//! The origin block |ξ| ≤ δ^{1/k} gets one rectangle of tangential half-length
//! c₀·δ^{1/k}. Away from the origin, base points run left to right through the
//! dyadic blocks |ξ| ∈ [K, 2K); consecutive points are one canonical length
//! apart, measured at the right-hand point, and the last point of a block is
//! clamped to the block end.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scalar::{cast, dot, dyadic_floor, norm, Real};

/// Rectangle dilation constant c₀.
pub const DEFAULT_C0: f64 = 4.0;
/// Multiplicity ceiling for sampled coverage checks.
pub const C_MULT: usize = 8;
pub const DOC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelCurve<T> {
    pub k: u32,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> ModelCurve<T> {
    pub fn new(k: u32) -> Result<Self> {
        if k < 2 {
            return Err(invalid("k", format!("{k} < 2")));
        }
        Ok(Self {
            k,
            lo: -T::one(),
            hi: T::one(),
        })
    }

    pub fn eval(&self, xi: T) -> T {
        xi.powi(self.k as i32)
    }

    /// n-th derivative of ξ^k, exact falling-factorial form.
    pub fn derivative(&self, n: u32, xi: T) -> T {
        if n > self.k {
            return T::zero();
        }
        let mut c = T::one();
        for j in 0..n {
            c = c * T::lit((self.k - j) as f64);
        }
        c * xi.powi((self.k - n) as i32)
    }

    pub fn point(&self, xi: T) -> [T; 2] {
        [xi, self.eval(xi)]
    }

    /// Unit tangent at ξ.
    pub fn unit_tangent(&self, xi: T) -> [T; 2] {
        let d = self.derivative(1, xi);
        let n = (T::one() + d * d).sqrt();
        [T::one() / n, d / n]
    }

    /// Unit normal (−kξ^{k−1}, 1)/|·|.
    pub fn unit_normal(&self, xi: T) -> [T; 2] {
        let d = self.derivative(1, xi);
        let n = (T::one() + d * d).sqrt();
        [-d / n, T::one() / n]
    }
}

fn check_k_delta<T: Real>(k: u32, delta: T) -> Result<()> {
    if k < 2 {
        return Err(invalid("k", format!("{k} < 2")));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(invalid("delta", format!("{delta} not in (0,1)")));
    }
    Ok(())
}

/// δ^{1/k} if |ξ| ≤ δ^{1/k}, else δ^{1/2}/|ξ|^{(k−2)/2}.
pub fn canonical_tangential_length<T: Real>(k: u32, delta: T, xi1: T) -> Result<T> {
    check_k_delta(k, delta)?;
    if xi1.abs() > T::one() {
        return Err(invalid("xi1", format!("|{xi1}| > 1")));
    }
    Ok(tangential_length_unchecked(k, delta, xi1))
}

/// Same formula without range checks; used for rescaled scales δ ≥ 1.
pub(crate) fn tangential_length_unchecked<T: Real>(k: u32, delta: T, xi1: T) -> T {
    let x0 = delta.powf(T::one() / T::lit(k as f64));
    let a = xi1.abs();
    if a <= x0 {
        x0
    } else {
        delta.sqrt() / a.powf(T::lit((k as f64 - 2.0) / 2.0))
    }
}

/// Dyadic sector of a base point: 0 for the origin block, else K with |ξ| ∈ [K, 2K).
pub(crate) fn sector_of<T: Real>(xi: T, x0: T) -> T {
    let a = xi.abs();
    if a <= x0 {
        return T::zero();
    }
    let half = T::lit(0.5);
    if a >= T::one() {
        return half;
    }
    dyadic_floor(a)
}

/// Base points and sectors of the canonical layout at scale `delta`.
///
/// Accepts any δ > 0 so that rescaled families (δ up to 1) share the layout.
pub(crate) fn base_layout<T: Real>(k: u32, delta: T) -> (Vec<T>, Vec<T>) {
    let x0 = delta.powf(T::one() / T::lit(k as f64)).min(T::one());
    let mut side: Vec<T> = Vec::new();
    if x0 > T::zero() {
        side.push(x0);
    }
    if x0 < T::one() {
        let mut kb = dyadic_floor(x0);
        loop {
            let lo = kb.max(x0);
            let hi = (kb + kb).min(T::one());
            if lo >= T::one() {
                break;
            }
            if hi > lo {
                if side.last().map_or(true, |&l| l < lo) {
                    side.push(lo);
                }
                let mut b = lo;
                loop {
                    let s = right_step(k, delta, b);
                    let nb = b + s;
                    if nb >= hi * (T::one() - T::slack()) {
                        if b < hi {
                            side.push(hi);
                        }
                        break;
                    }
                    side.push(nb);
                    b = nb;
                }
            }
            kb = kb + kb;
        }
    }
    let mut pts: Vec<T> = side.iter().rev().map(|&x| -x).collect();
    pts.push(T::zero());
    pts.extend(side.iter().copied());
    let sectors = pts.iter().map(|&x| sector_of(x, x0)).collect();
    (pts, sectors)
}

/// Step s with s = len(b + s).
fn right_step<T: Real>(k: u32, delta: T, b: T) -> T {
    let len = |x: T| tangential_length_unchecked(k, delta, x);
    if k == 2 {
        return len(b);
    }
    let (mut lo, mut hi) = (T::zero(), len(b));
    for _ in 0..80 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid - len(b + mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect2<T> {
    pub center: [T; 2],
    pub tangent: [T; 2],
    pub normal: [T; 2],
    pub half_t: T,
    pub half_n: T,
}

impl<T: Real> Rect2<T> {
    /// Coordinates of `p` along (tangent, normal) relative to the center.
    pub fn local(&self, p: &[T; 2]) -> (T, T) {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        (dot(&d, &self.tangent), dot(&d, &self.normal))
    }

    pub fn contains(&self, p: &[T; 2], dilation: T) -> bool {
        let (u, v) = self.local(p);
        let tol = T::one() + T::slack();
        u.abs() <= dilation * self.half_t * tol && v.abs() <= dilation * self.half_n * tol
    }

    pub fn corners(&self) -> [[T; 2]; 4] {
        let mut out = [[T::zero(); 2]; 4];
        let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        for (c, (su, sv)) in out.iter_mut().zip(signs) {
            let u = self.half_t * T::lit(su);
            let v = self.half_n * T::lit(sv);
            for i in 0..2 {
                c[i] = self.center[i] + u * self.tangent[i] + v * self.normal[i];
            }
        }
        out
    }

    /// `other ⊆ dilation·self`, decided on the four corners.
    pub fn contains_rect(&self, other: &Rect2<T>, dilation: T) -> bool {
        self.required_dilation(other) <= dilation * (T::one() + T::slack())
    }

    /// Smallest dilation D with `other ⊆ D·self`.
    pub fn required_dilation(&self, other: &Rect2<T>) -> T {
        // Rounding in the corner coordinates scales with the rect sizes, not with the
        // short side, so it is absorbed as an absolute allowance.
        let gap = [other.center[0] - self.center[0], other.center[1] - self.center[1]];
        let err = T::slack() * (norm(&gap) + other.half_t + other.half_n);
        other.corners().iter().fold(T::zero(), |m, c| {
            let (u, v) = self.local(c);
            let u = (u.abs() - err).max(T::zero());
            let v = (v.abs() - err).max(T::zero());
            m.max(u / self.half_t).max(v / self.half_n)
        })
    }

    /// Half-width of the axis-aligned bounding box along the first axis.
    pub fn x_extent(&self) -> T {
        self.half_t * self.tangent[0].abs() + self.half_n * self.normal[0].abs()
    }
}

/// `point ∈ dilation·rect`.
pub fn rect_contains<T: Real>(rect: &Rect2<T>, point: &[T; 2], dilation: T) -> Result<bool> {
    if dilation < T::one() {
        return Err(invalid("dilation", format!("{dilation} < 1")));
    }
    Ok(rect.contains(point, dilation))
}

#[derive(Clone, Debug)]
pub struct Covering2<T> {
    pub delta: T,
    pub c0: T,
    pub curve: ModelCurve<T>,
    pub rects: Vec<Rect2<T>>,
    /// 𝓡₁(δ), ascending.
    pub base_points: Vec<T>,
    /// Dyadic sector K per rect (0 for the origin block).
    pub sectors: Vec<T>,
    reach_right: Vec<T>,
    reach_left: Vec<T>,
}

pub fn build_curve_cover<T: Real>(k: u32, delta: T) -> Result<Covering2<T>> {
    build_curve_cover_with(k, delta, T::lit(DEFAULT_C0))
}

pub fn build_curve_cover_with<T: Real>(k: u32, delta: T, c0: T) -> Result<Covering2<T>> {
    let curve = ModelCurve::new(k)?;
    let lo = T::lit(2.0).powi(-30);
    let hi = T::lit(0.25);
    if !(delta > lo && delta < hi) {
        return Err(invalid("delta", format!("{delta} outside (2^-30, 2^-2)")));
    }
    if !(c0 >= T::one()) {
        return Err(invalid("c0", format!("{c0} < 1")));
    }
    let (base_points, sectors) = base_layout(k, delta);
    let rects = base_points
        .iter()
        .map(|&b| Rect2 {
            center: curve.point(b),
            tangent: curve.unit_tangent(b),
            normal: curve.unit_normal(b),
            half_t: c0 * tangential_length_unchecked(k, delta, b),
            half_n: c0 * delta,
        })
        .collect();
    Ok(Covering2::assemble(delta, c0, curve, rects, base_points, sectors))
}

impl<T: Real> Covering2<T> {
    fn assemble(
        delta: T,
        c0: T,
        curve: ModelCurve<T>,
        rects: Vec<Rect2<T>>,
        base_points: Vec<T>,
        sectors: Vec<T>,
    ) -> Self {
        let n = rects.len();
        let mut reach_right = vec![T::zero(); n];
        let mut reach_left = vec![T::zero(); n];
        let mut m = T::neg_infinity();
        for (i, r) in rects.iter().enumerate() {
            m = m.max(r.center[0] + r.x_extent());
            reach_right[i] = m;
        }
        let mut m = T::infinity();
        for (i, r) in rects.iter().enumerate().rev() {
            m = m.min(r.center[0] - r.x_extent());
            reach_left[i] = m;
        }
        Self {
            delta,
            c0,
            curve,
            rects,
            base_points,
            sectors,
            reach_right,
            reach_left,
        }
    }

    pub fn k(&self) -> u32 {
        self.curve.k
    }

    /// δ^{1/k}, the radius of the origin block.
    pub fn origin_radius(&self) -> T {
        self.delta.powf(T::one() / T::lit(self.k() as f64))
    }

    pub fn origin_index(&self) -> usize {
        self.assign_theta(T::zero())
    }

    /// Index of the rect whose base point is nearest to ξ₁; ties go to the smaller index.
    pub fn assign_theta(&self, xi1: T) -> usize {
        nearest_index(&self.base_points, xi1)
    }

    /// Indices of all rects whose `dilation`-dilate contains `p`.
    pub fn containing(&self, p: &[T; 2], dilation: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_containing(p, dilation, |i| out.push(i));
        out.sort_unstable();
        out
    }

    fn for_each_containing(&self, p: &[T; 2], dilation: T, mut f: impl FnMut(usize)) {
        // Reach arrays are built for dilation 1; widen the scan for larger dilations.
        let extra = (dilation - T::one()).max(T::zero());
        let pad = if extra > T::zero() {
            self.rects
                .iter()
                .map(|r| r.x_extent())
                .fold(T::zero(), T::max)
                * extra
        } else {
            T::zero()
        };
        let j0 = self.assign_theta(p[0]);
        let mut j = j0 as isize;
        while j >= 0 && self.reach_right[j as usize] + pad >= p[0] {
            if self.rects[j as usize].contains(p, dilation) {
                f(j as usize);
            }
            j -= 1;
        }
        let mut j = j0 + 1;
        while j < self.rects.len() && self.reach_left[j] - pad <= p[0] {
            if self.rects[j].contains(p, dilation) {
                f(j);
            }
            j += 1;
        }
    }

    pub fn multiplicity(&self, p: &[T; 2]) -> usize {
        let mut n = 0;
        self.for_each_containing(p, T::one(), |_| n += 1);
        n
    }

    /// Rect indices per dyadic sector, ascending K (origin block first).
    pub fn sector_index(&self) -> Vec<(T, Vec<usize>)> {
        let mut out: Vec<(T, Vec<usize>)> = Vec::new();
        for (i, &kk) in self.sectors.iter().enumerate() {
            match out.iter_mut().find(|(k2, _)| *k2 == kk) {
                Some((_, v)) => v.push(i),
                None => out.push((kk, vec![i])),
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    pub fn to_doc(&self) -> CoveringDoc {
        CoveringDoc {
            version: DOC_VERSION,
            dim: 2,
            k: self.k(),
            delta: self.delta.as_f64(),
            c0: self.c0.as_f64(),
            rects: self
                .rects
                .iter()
                .map(|r| RectDoc {
                    center: cast(&r.center),
                    tangent: cast(&r.tangent),
                    normal: cast(&r.normal),
                    half_t: r.half_t.as_f64(),
                    half_n: r.half_n.as_f64(),
                })
                .collect(),
            base_points: self.base_points.iter().map(|b| b.as_f64()).collect(),
            sectors: self.sectors.iter().map(|b| b.as_f64()).collect(),
        }
    }

    pub fn from_doc(doc: &CoveringDoc) -> Result<Self> {
        if doc.version != DOC_VERSION || doc.dim != 2 {
            return Err(Error::Document(format!(
                "expected version {DOC_VERSION}, dim 2; got version {}, dim {}",
                doc.version, doc.dim
            )));
        }
        if doc.rects.len() != doc.base_points.len() || doc.sectors.len() != doc.rects.len() {
            return Err(Error::Document("rect/base point count mismatch".into()));
        }
        let curve = ModelCurve::new(doc.k)?;
        let rects = doc
            .rects
            .iter()
            .map(|r| Rect2 {
                center: [T::lit(r.center[0]), T::lit(r.center[1])],
                tangent: [T::lit(r.tangent[0]), T::lit(r.tangent[1])],
                normal: [T::lit(r.normal[0]), T::lit(r.normal[1])],
                half_t: T::lit(r.half_t),
                half_n: T::lit(r.half_n),
            })
            .collect();
        Ok(Self::assemble(
            T::lit(doc.delta),
            T::lit(doc.c0),
            curve,
            rects,
            doc.base_points.iter().map(|&b| T::lit(b)).collect(),
            doc.sectors.iter().map(|&b| T::lit(b)).collect(),
        ))
    }
}

pub(crate) fn nearest_index<T: Real>(sorted: &[T], x: T) -> usize {
    let i = sorted.partition_point(|&b| b < x);
    if i == 0 {
        return 0;
    }
    if i == sorted.len() {
        return sorted.len() - 1;
    }
    if x - sorted[i - 1] <= sorted[i] - x {
        i - 1
    } else {
        i
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectDoc {
    pub center: [f64; 2],
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
    pub half_t: f64,
    pub half_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringDoc {
    pub version: u32,
    pub dim: u32,
    pub k: u32,
    pub delta: f64,
    pub c0: f64,
    pub rects: Vec<RectDoc>,
    pub base_points: Vec<f64>,
    pub sectors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverReport {
    pub n_samples: usize,
    pub n_covered: usize,
    pub covered_fraction: f64,
    pub max_multiplicity: usize,
}

impl CoverReport {
    pub fn merge(self, o: Self) -> Self {
        let n_samples = self.n_samples + o.n_samples;
        let n_covered = self.n_covered + o.n_covered;
        Self {
            n_samples,
            n_covered,
            covered_fraction: n_covered as f64 / n_samples.max(1) as f64,
            max_multiplicity: self.max_multiplicity.max(o.max_multiplicity),
        }
    }

    pub fn complete(&self) -> bool {
        self.n_covered == self.n_samples
    }
}

/// Samples `n_samples` points of 𝒩_δ(γ_k): ξ₁ uniform in [−1,1], normal offset uniform in [−δ,δ].
pub fn verify_neighborhood_cover<T: Real>(
    cov: &Covering2<T>,
    n_samples: usize,
    seed: u64,
) -> Result<CoverReport> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    let chunks = n_samples.div_ceil(rng::CHUNK);
    let rep = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::label(rng::tag::CURVE_SAMPLES, c as u64, 0, 0));
            let m = rng::CHUNK.min(n_samples - c * rng::CHUNK);
            let mut covered = 0;
            let mut maxm = 0;
            for _ in 0..m {
                let xi = T::lit(r.random_range(-1.0..=1.0));
                let off = T::lit(r.random_range(-1.0..=1.0)) * cov.delta;
                let p0 = cov.curve.point(xi);
                let nrm = cov.curve.unit_normal(xi);
                let p = [p0[0] + off * nrm[0], p0[1] + off * nrm[1]];
                let mult = cov.multiplicity(&p);
                if mult > 0 {
                    covered += 1;
                }
                maxm = maxm.max(mult);
            }
            CoverReport {
                n_samples: m,
                n_covered: covered,
                covered_fraction: 0.0,
                max_multiplicity: maxm,
            }
        })
        .reduce(
            || CoverReport {
                n_samples: 0,
                n_covered: 0,
                covered_fraction: 0.0,
                max_multiplicity: 0,
            },
            CoverReport::merge,
        );
    Ok(rep)
}

/// Smallest c₀ among `candidates` with complete sampled coverage.
///
/// Scans `candidates` in increasing order and returns the first one whose
/// sampled coverage is complete for every `(k, δ)` in `configs`.
pub fn minimal_passing_c0(
    configs: &[(u32, f64)],
    candidates: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Option<f64>> {
    for &c0 in candidates {
        let mut ok = true;
        for &(k, d) in configs {
            let cov = build_curve_cover_with::<f64>(k, d, c0)?;
            if !verify_neighborhood_cover(&cov, n_samples, seed)?.complete() {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(Some(c0));
        }
    }
    Ok(None)
}
