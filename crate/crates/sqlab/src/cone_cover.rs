//! Planks covering the δ-neighbourhood of the cone 𝒞γ_k ⊂ ℝ³, centered planks
//! CP_σ and the shells Ω_σ, ends, wave envelopes, and the Lorentz rescaling.
//!
//! A plank is {a𝐜 + b𝐭 + c₁𝐧_γ + c₂𝐧₃} with box constraints on (a, b, c₁, c₂),
//! i.e. a zonotope. Since 𝐭 ⊥ 𝐧_γ in the first two coordinates and 𝐧₃ = e₃,
//! fixing a determines b, c₁, c₂, so membership is an interval problem in a.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve_cover::{
    base_layout, build_curve_cover_with, sector_of, tangential_length_unchecked, CoverReport,
    DEFAULT_C0,
};
use crate::error::{invalid, Error, Result};
use crate::geom::{clip_affine, cross, min_max_abs_affine, BucketIndex, Interval, OrthoBox};
use crate::rng;
use crate::scalar::{cast, dot, norm, Real};

/// Centered-plank constant C = CENTERED_FACTOR·c₀.
pub const CENTERED_FACTOR: f64 = 30.0;
/// Ends live at heights h ≤ σ²·ENDS_HEIGHT.
pub const ENDS_HEIGHT: f64 = 1.0 / 16.0;
/// σ₀ is the smallest σ whose K block holds at least this many planks.
pub const SIGMA0_MIN_PLANKS: usize = 4;
/// Dilation baked into the overlap bucket index.
pub const INDEX_DILATION: f64 = 4.0;
pub const DOC_VERSION: u32 = 1;

const BUCKETS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plank3<T> {
    pub base_xi1: T,
    /// Dyadic sector K of the base point (0 for the origin block).
    pub sector: T,
    /// 𝐜 = (ξ₁, ξ₂, 1).
    pub c: [T; 3],
    /// 𝐭 = (1, f′, 0).
    pub t: [T; 3],
    /// 𝐧_γ = (−f′, 1, 0); 𝐧₃ = e₃ is implicit.
    pub ng: [T; 3],
    pub a_lo: T,
    pub a_hi: T,
    pub half_b: T,
    pub half_c: T,
}

impl<T: Real> Plank3<T> {
    /// Plank with base point (x, y) on a curve of slope `slope` there.
    pub fn from_curve_point(
        base_xi1: T,
        sector: T,
        point: [T; 2],
        slope: T,
        a: (T, T),
        half_b: T,
        half_c: T,
    ) -> Self {
        Self {
            base_xi1,
            sector,
            c: [point[0], point[1], T::one()],
            t: [T::one(), slope, T::zero()],
            ng: [-slope, T::one(), T::zero()],
            a_lo: a.0,
            a_hi: a.1,
            half_b,
            half_c,
        }
    }

    pub fn a_center(&self) -> T {
        (self.a_lo + self.a_hi) * T::lit(0.5)
    }

    pub fn a_half(&self) -> T {
        (self.a_hi - self.a_lo) * T::lit(0.5)
    }

    /// b(a) = pb − qb·a and c₁(a) = pc − qc·a for the point p.
    fn affine(&self, p: &[T; 3]) -> (T, T, T, T) {
        let n = T::one() + self.t[1] * self.t[1];
        let pb = (p[0] * self.t[0] + p[1] * self.t[1]) / n;
        let qb = (self.c[0] * self.t[0] + self.c[1] * self.t[1]) / n;
        let pc = (p[0] * self.ng[0] + p[1] * self.ng[1]) / n;
        let qc = (self.c[0] * self.ng[0] + self.c[1] * self.ng[1]) / n;
        (pb, qb, pc, qc)
    }

    /// Values of a for which p is in the plank dilated by `s` about its center.
    pub fn a_interval(&self, p: &[T; 3], s: T) -> Interval<T> {
        let s = s * (T::one() + T::slack());
        let m = self.a_center();
        let h = self.a_half() * s;
        let (pb, qb, pc, qc) = self.affine(p);
        let iv = Some((m - h, m + h));
        let iv = clip_affine(iv, pb, qb, s * self.half_b);
        let iv = clip_affine(iv, pc, qc, s * self.half_c);
        clip_affine(iv, p[2], T::one(), s * self.half_c)
    }

    pub fn contains(&self, p: &[T; 3], s: T) -> bool {
        self.a_interval(p, s).is_some()
    }

    /// Smallest dilation about the center containing p.
    pub fn required_dilation(&self, p: &[T; 3]) -> T {
        let (pb, qb, pc, qc) = self.affine(p);
        let terms = [
            (self.a_center(), T::one(), self.a_half()),
            (pb, qb, self.half_b),
            (pc, qc, self.half_c),
            (p[2], T::one(), self.half_c),
        ];
        min_max_abs_affine(&terms).1
    }

    /// Point with coordinates (a, b, c₁, c₂).
    pub fn point(&self, a: T, b: T, c1: T, c2: T) -> [T; 3] {
        let mut p = [T::zero(); 3];
        for i in 0..3 {
            p[i] = a * self.c[i] + b * self.t[i] + c1 * self.ng[i];
        }
        p[2] += c2;
        p
    }

    pub fn vertices(&self) -> Vec<[T; 3]> {
        let mut out = Vec::with_capacity(16);
        for a in [self.a_lo, self.a_hi] {
            for sb in [-1.0, 1.0] {
                for s1 in [-1.0, 1.0] {
                    for s2 in [-1.0, 1.0] {
                        out.push(self.point(
                            a,
                            T::lit(sb) * self.half_b,
                            T::lit(s1) * self.half_c,
                            T::lit(s2) * self.half_c,
                        ));
                    }
                }
            }
        }
        out
    }

    /// Axis-aligned bounding box of the `s`-dilate.
    pub fn aabb(&self, s: T) -> ([T; 3], [T; 3]) {
        let m = self.a_center();
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for i in 0..3 {
            let e3 = if i == 2 { T::one() } else { T::zero() };
            let half = s
                * (self.a_half() * self.c[i].abs()
                    + self.half_b * self.t[i].abs()
                    + self.half_c * (self.ng[i].abs() + e3));
            lo[i] = m * self.c[i] - half;
            hi[i] = m * self.c[i] + half;
        }
        (lo, hi)
    }

    /// Slice {ω₃ = h} projected to (ω₁, ω₂), as a rectangle centered at h·γ(ξ₁).
    pub fn slice(&self, h: T) -> Result<SliceRect<T>> {
        let m = self.a_center();
        let reach = self.a_half() + self.half_c;
        if (h - m).abs() > reach * (T::one() + T::slack()) {
            return Err(invalid("h", format!("{h} outside plank heights")));
        }
        Ok(SliceRect {
            h,
            center: [h * self.c[0], h * self.c[1]],
            tangent: [self.t[0], self.t[1]],
            normal: [self.ng[0], self.ng[1]],
            half_l: self.half_b,
            half_c: self.half_c,
        })
    }

    pub fn to_doc(&self) -> PlankDoc {
        PlankDoc {
            base_xi1: self.base_xi1.as_f64(),
            sector: self.sector.as_f64(),
            center_line: cast(&self.c),
            tangent: cast(&self.t),
            normal: cast(&self.ng),
            a_range: [self.a_lo.as_f64(), self.a_hi.as_f64()],
            half_b: self.half_b.as_f64(),
            half_c: self.half_c.as_f64(),
        }
    }
}

/// Rectangle {center + ℓ·tangent + c·normal : |ℓ| ≤ half_l, |c| ≤ half_c} in the
/// (ω₁, ω₂) plane, with the unnormalized directions of the plank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceRect<T> {
    pub h: T,
    pub center: [T; 2],
    pub tangent: [T; 2],
    pub normal: [T; 2],
    pub half_l: T,
    pub half_c: T,
}

impl<T: Real> SliceRect<T> {
    /// Coefficients (ℓ, c) of q − center.
    pub fn coords(&self, q: &[T; 2]) -> (T, T) {
        let d = [q[0] - self.center[0], q[1] - self.center[1]];
        (
            dot(&d, &self.tangent) / dot(&self.tangent, &self.tangent),
            dot(&d, &self.normal) / dot(&self.normal, &self.normal),
        )
    }

    pub fn contains(&self, q: &[T; 2], s: T) -> bool {
        let (l, c) = self.coords(q);
        let s = s * (T::one() + T::slack());
        l.abs() <= s * self.half_l && c.abs() <= s * self.half_c
    }
}

fn model_plank<T: Real>(k: u32, xi: T, sector: T, a: (T, T), half_b: T, half_c: T) -> Plank3<T> {
    let kk = T::lit(k as f64);
    let y = xi.abs().powi(k as i32) * if k % 2 == 1 && xi < T::zero() { -T::one() } else { T::one() };
    let slope = if k == 1 {
        T::one()
    } else {
        kk * xi.powi(k as i32 - 1)
    };
    Plank3::from_curve_point(xi, sector, [xi, y], slope, a, half_b, half_c)
}

fn bucket_index<T: Real>(planks: &[Plank3<T>], s: T) -> BucketIndex<3> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let boxes: Vec<_> = planks.iter().map(|p| p.aabb(s)).collect();
    for (l, h) in &boxes {
        for i in 0..3 {
            lo[i] = lo[i].min(l[i].as_f64());
            hi[i] = hi[i].max(h[i].as_f64());
        }
    }
    let mut idx = BucketIndex::new(lo, hi, BUCKETS);
    for (i, (l, h)) in boxes.iter().enumerate() {
        idx.insert(i as u32, cast(l), cast(h));
    }
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlankDoc {
    pub base_xi1: f64,
    pub sector: f64,
    pub center_line: [f64; 3],
    pub tangent: [f64; 3],
    pub normal: [f64; 3],
    pub a_range: [f64; 2],
    pub half_b: f64,
    pub half_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlankFamilyDoc {
    pub version: u32,
    pub dim: u32,
    pub k: u32,
    pub delta: f64,
    pub c0: f64,
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    pub planks: Vec<PlankDoc>,
}

/// Θ_δ: planks over the canonical curve layout with a ∈ [1/2, 1].
#[derive(Clone, Debug)]
pub struct ConeCover<T> {
    pub k: u32,
    pub delta: T,
    pub c0: T,
    pub planks: Vec<Plank3<T>>,
    index: BucketIndex<3>,
}

pub fn build_cone_cover<T: Real>(k: u32, delta: T) -> Result<ConeCover<T>> {
    build_cone_cover_with(k, delta, T::lit(DEFAULT_C0))
}

pub fn build_cone_cover_with<T: Real>(k: u32, delta: T, c0: T) -> Result<ConeCover<T>> {
    if !(delta > T::lit(2f64.powi(-20))) {
        return Err(invalid("delta", format!("{delta} ≤ 2^-20")));
    }
    let cov = build_curve_cover_with(k, delta, c0)?;
    let half = (T::lit(0.5), T::one());
    let planks: Vec<Plank3<T>> = cov
        .base_points
        .iter()
        .zip(&cov.sectors)
        .map(|(&b, &s)| {
            let len = tangential_length_unchecked(k, delta, b);
            model_plank(k, b, s, half, c0 * len, c0 * delta)
        })
        .collect();
    let index = bucket_index(&planks, T::one());
    Ok(ConeCover { k, delta, c0, planks, index })
}

impl<T: Real> ConeCover<T> {
    pub fn multiplicity(&self, p: &[T; 3]) -> usize {
        self.index
            .query(&cast(p))
            .iter()
            .filter(|&&i| self.planks[i as usize].contains(p, T::one()))
            .count()
    }

    /// Plank indices per dyadic sector, ascending K.
    pub fn sector_index(&self) -> Vec<(T, Vec<usize>)> {
        sector_groups(&self.planks)
    }

    /// Surface point a·𝐜(ξ) pushed by `off` along the unit surface normal.
    pub fn neighbourhood_point(&self, xi: T, a: T, off: T) -> [T; 3] {
        let p = model_plank(self.k, xi, T::zero(), (a, a), T::zero(), T::zero());
        let n = cross(&p.c, &p.t);
        let nn = norm(&n);
        let mut q = p.point(a, T::zero(), T::zero(), T::zero());
        for i in 0..3 {
            q[i] += off * n[i] / nn;
        }
        q
    }

    pub fn to_doc(&self) -> PlankFamilyDoc {
        PlankFamilyDoc {
            version: DOC_VERSION,
            dim: 3,
            k: self.k,
            delta: self.delta.as_f64(),
            c0: self.c0.as_f64(),
            r: None,
            sigma: None,
            planks: self.planks.iter().map(|p| p.to_doc()).collect(),
        }
    }
}

fn sector_groups<T: Real>(planks: &[Plank3<T>]) -> Vec<(T, Vec<usize>)> {
    let mut out: Vec<(T, Vec<usize>)> = Vec::new();
    for (i, p) in planks.iter().enumerate() {
        match out.iter_mut().find(|(k, _)| *k == p.sector) {
            Some((_, v)) => v.push(i),
            None => out.push((p.sector, vec![i])),
        }
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Samples 𝒩_δ(𝒞γ_k) ∩ {ω₃ ∈ [1/2, 1]}: ξ₁ uniform in [−1, 1], a uniform in
/// [1/2, 1], offset uniform in [−δ, δ] along the unit surface normal.
pub fn verify_cone_cover<T: Real>(cov: &ConeCover<T>, n: usize, seed: u64) -> Result<CoverReport> {
    if n == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    let parts = rng::par_chunks(n, seed, rng::tag::CONE_SAMPLES, cov.k as u64, 0, |r, m| {
        let mut covered = 0;
        let mut maxm = 0;
        for _ in 0..m {
            let xi = T::lit(r.random_range(-1.0..=1.0));
            let a = T::lit(r.random_range(0.5..=1.0));
            let off = T::lit(r.random_range(-1.0..=1.0)) * cov.delta;
            let mult = cov.multiplicity(&cov.neighbourhood_point(xi, a, off));
            covered += (mult > 0) as usize;
            maxm = maxm.max(mult);
        }
        CoverReport { n_samples: m, n_covered: covered, covered_fraction: 0.0, max_multiplicity: maxm }
    });
    Ok(parts.into_iter().fold(
        CoverReport { n_samples: 0, n_covered: 0, covered_fraction: 0.0, max_multiplicity: 0 },
        CoverReport::merge,
    ))
}

/// Greedy coarsening of the nonnegative base points `fine` to the canonical
/// spacing at `delta`: from the last kept point, keep the farthest fine point
/// within one canonical length (measured at that point).
fn coarsen<T: Real>(k: u32, fine: &[T], delta: T) -> Vec<T> {
    let mut out = vec![fine[0]];
    let mut i = 0;
    while i + 1 < fine.len() {
        let last = fine[i];
        let mut j = i + 1;
        while j + 1 < fine.len()
            && fine[j + 1] - last <= tangential_length_unchecked(k, delta, fine[j + 1])
        {
            j += 1;
        }
        out.push(fine[j]);
        i = j;
    }
    out
}

/// One scale σ of centered planks.
#[derive(Clone, Debug)]
pub struct CenteredLevel<T> {
    pub sigma: T,
    /// r⁻²σ⁻², the scale of the layout.
    pub delta: T,
    pub planks: Vec<Plank3<T>>,
    index1: BucketIndex<3>,
    index_s: BucketIndex<3>,
}

impl<T: Real> CenteredLevel<T> {
    fn candidates(&self, p: &[T; 3], s: T) -> Option<&[u32]> {
        let q = cast(p);
        if s <= T::one() {
            Some(self.index1.query(&q))
        } else if s <= T::lit(INDEX_DILATION) {
            Some(self.index_s.query(&q))
        } else {
            None
        }
    }

    /// Indices of planks (optionally restricted to sector `k_block`) whose
    /// `s`-dilate contains p.
    pub fn containing(&self, p: &[T; 3], s: T, k_block: Option<T>) -> Vec<usize> {
        let keep = |i: usize| {
            let pl = &self.planks[i];
            k_block.map_or(true, |kb| pl.sector == kb) && pl.contains(p, s)
        };
        let mut out: Vec<usize> = match self.candidates(p, s) {
            Some(c) => c.iter().map(|&i| i as usize).filter(|&i| keep(i)).collect(),
            None => (0..self.planks.len()).filter(|&i| keep(i)).collect(),
        };
        out.sort_unstable();
        out
    }

    pub fn contains(&self, p: &[T; 3], k_block: Option<T>) -> bool {
        let keep = |i: usize| {
            let pl = &self.planks[i];
            k_block.map_or(true, |kb| pl.sector == kb) && pl.contains(p, T::one())
        };
        self.index1.query(&cast(p)).iter().any(|&i| keep(i as usize))
    }

    pub fn count_in_block(&self, k_block: T) -> usize {
        self.planks.iter().filter(|p| p.sector == k_block).count()
    }

    /// Left and right ends of plank `i` at height h ≤ σ²/16: ℓ ∈ ±[half_b/4, half_b].
    pub fn ends(&self, i: usize, h: T) -> Result<(SliceRect<T>, SliceRect<T>)> {
        let pl = self.planks.get(i).ok_or(Error::UnknownBlock(i))?;
        if h.abs() > self.sigma * self.sigma * T::lit(ENDS_HEIGHT) {
            return Err(invalid("h", format!("{h} above σ²/16")));
        }
        let s = pl.slice(h)?;
        let off = pl.half_b * T::lit(5.0 / 8.0);
        let mk = |sign: T| SliceRect {
            center: [s.center[0] + sign * off * s.tangent[0], s.center[1] + sign * off * s.tangent[1]],
            half_l: pl.half_b * T::lit(3.0 / 8.0),
            ..s
        };
        Ok((mk(-T::one()), mk(T::one())))
    }

    pub fn to_doc(&self, k: u32, c0: f64, r: f64) -> PlankFamilyDoc {
        PlankFamilyDoc {
            version: DOC_VERSION,
            dim: 3,
            k,
            delta: self.delta.as_f64(),
            c0,
            r: Some(r),
            sigma: Some(self.sigma.as_f64()),
            planks: self.planks.iter().map(|p| p.to_doc()).collect(),
        }
    }
}

/// CP_σ for σ = 1, 1/2, …, r⁻¹. Base points are nested: each level coarsens the
/// next finer one, starting from 𝓡(r⁻²) at σ = 1.
#[derive(Clone, Debug)]
pub struct CenteredLadder<T> {
    pub k: u32,
    pub r: T,
    pub c0: T,
    /// C = CENTERED_FACTOR·c₀.
    pub big_c: T,
    /// levels[j] has σ = 2^-j.
    pub levels: Vec<CenteredLevel<T>>,
}

fn log2_exact<T: Real>(x: T, name: &'static str) -> Result<u32> {
    let l = x.as_f64().log2();
    if !(l >= 0.0) || (l - l.round()).abs() > 1e-12 {
        return Err(invalid(name, format!("{x} is not a power of two ≥ 1")));
    }
    Ok(l.round() as u32)
}

pub fn build_centered_ladder<T: Real>(k: u32, r: T) -> Result<CenteredLadder<T>> {
    build_centered_ladder_with(k, r, T::lit(DEFAULT_C0))
}

pub fn build_centered_ladder_with<T: Real>(k: u32, r: T, c0: T) -> Result<CenteredLadder<T>> {
    if k < 2 {
        return Err(invalid("k", format!("{k} < 2")));
    }
    let lr = log2_exact(r, "r")?;
    if !(1..=10).contains(&lr) {
        return Err(invalid("r", format!("{r} outside [2, 2^10]")));
    }
    let big_c = T::lit(CENTERED_FACTOR) * c0;
    let r2 = T::one() / (r * r);
    let (pts, _) = base_layout(k, r2);
    let mut side: Vec<T> = pts.into_iter().filter(|&x| x >= T::zero()).collect();
    let mut levels = Vec::new();
    for j in 0..=lr {
        let sigma = T::lit(2f64.powi(-(j as i32)));
        let delta = r2 / (sigma * sigma);
        if j > 0 {
            side = coarsen(k, &side, delta);
        }
        let x0 = delta.powf(T::one() / T::lit(k as f64)).min(T::one());
        let s2 = sigma * sigma;
        let mut base: Vec<T> = side.iter().rev().filter(|&&x| x > T::zero()).map(|&x| -x).collect();
        base.extend(side.iter().copied());
        let planks: Vec<Plank3<T>> = base
            .iter()
            .map(|&xi| {
                let kb = sector_of(xi, x0);
                let half_b = if kb == T::zero() {
                    big_c * x0 * s2
                } else {
                    big_c * sigma / r / kb.powf(T::lit((k as f64 - 2.0) / 2.0))
                };
                model_plank(k, xi, kb, (-s2, s2), half_b, big_c * r2)
            })
            .collect();
        let index1 = bucket_index(&planks, T::one());
        let index_s = bucket_index(&planks, T::lit(INDEX_DILATION));
        levels.push(CenteredLevel { sigma, delta, planks, index1, index_s });
    }
    Ok(CenteredLadder { k, r, c0, big_c, levels })
}

/// CP_σ at one scale.
pub fn build_centered_planks<T: Real>(k: u32, r: T, sigma: T) -> Result<CenteredLevel<T>> {
    let j = log2_exact(T::one() / sigma, "sigma")?;
    let lad = build_centered_ladder(k, r)?;
    if j as usize >= lad.levels.len() {
        return Err(invalid("sigma", format!("{sigma} < r⁻¹")));
    }
    Ok(lad.levels.into_iter().nth(j as usize).unwrap())
}

/// Where a point sits relative to the shells of a ladder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShellMembership {
    /// Level indices j with p ∈ ∪CP_σⱼ.
    pub in_union: Vec<usize>,
    /// Level indices j with p ∈ Ω_σⱼ.
    pub shells: Vec<usize>,
}

impl<T: Real> CenteredLadder<T> {
    pub fn level_of(&self, sigma: T) -> Result<usize> {
        let j = log2_exact(T::one() / sigma, "sigma")? as usize;
        if j >= self.levels.len() {
            return Err(invalid("sigma", format!("{sigma} < r⁻¹")));
        }
        Ok(j)
    }

    /// Shell classification with Ω_σ = ∪CP_σ \ ∪CP_{σ/2} and Ω_{r⁻¹} = ∪CP_{r⁻¹},
    /// optionally restricted to one curvature block.
    pub fn membership(&self, p: &[T; 3], k_block: Option<T>) -> ShellMembership {
        let inside: Vec<bool> = self.levels.iter().map(|l| l.contains(p, k_block)).collect();
        let last = inside.len() - 1;
        ShellMembership {
            in_union: (0..=last).filter(|&j| inside[j]).collect(),
            shells: (0..=last)
                .filter(|&j| inside[j] && (j == last || !inside[j + 1]))
                .collect(),
        }
    }

    /// Shell classification within the block K, where the coarsest shell is
    /// Ω′_{σ₀} = ∪CP′_{σ₀}.
    pub fn membership_block(&self, p: &[T; 3], k_block: T) -> ShellMembership {
        let j0 = self.sigma0_level(k_block);
        let inside: Vec<bool> = self.levels[..=j0].iter().map(|l| l.contains(p, Some(k_block))).collect();
        ShellMembership {
            in_union: (0..=j0).filter(|&j| inside[j]).collect(),
            shells: (0..=j0).filter(|&j| inside[j] && (j == j0 || !inside[j + 1])).collect(),
        }
    }

    /// Level index of σ₀(K): the smallest σ with at least SIGMA0_MIN_PLANKS planks in the block.
    pub fn sigma0_level(&self, k_block: T) -> usize {
        let mut best = 0;
        for (j, l) in self.levels.iter().enumerate() {
            if l.count_in_block(k_block) >= SIGMA0_MIN_PLANKS {
                best = j;
            }
        }
        best
    }

    /// Curvature blocks present at σ = 1, ascending.
    pub fn blocks(&self) -> Vec<T> {
        sector_groups(&self.levels[0].planks).into_iter().map(|(k, _)| k).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellReport {
    pub n_samples: usize,
    pub orphans: usize,
    pub multi: usize,
    /// Samples per shell, indexed by level.
    pub per_shell: Vec<usize>,
}

impl ShellReport {
    pub fn partition(&self) -> bool {
        self.orphans == 0 && self.multi == 0
    }

    pub(crate) fn merge(mut self, o: Self) -> Self {
        self.n_samples += o.n_samples;
        self.orphans += o.orphans;
        self.multi += o.multi;
        if self.per_shell.len() < o.per_shell.len() {
            self.per_shell.resize(o.per_shell.len(), 0);
        }
        for (a, b) in self.per_shell.iter_mut().zip(o.per_shell) {
            *a += b;
        }
        self
    }
}

/// Samples ∪θ̃ for θ ∈ Θ_{r⁻²} (uniform plank, uniform coordinates with
/// |a| ≤ 1/2, |b| ≤ 2·half_b, |c_i| ≤ 2·half_c) and counts shells per sample.
pub fn verify_shell_partition<T: Real>(lad: &CenteredLadder<T>, n: usize, seed: u64) -> Result<ShellReport> {
    let fine = build_cone_cover_with(lad.k, T::one() / (lad.r * lad.r), lad.c0)?;
    let nl = lad.levels.len();
    let parts = rng::par_chunks(n, seed, rng::tag::SHELL_SAMPLES, lad.k as u64, lad.r.as_f64() as u64, |rg, m| {
        let mut rep = ShellReport { n_samples: m, orphans: 0, multi: 0, per_shell: vec![0; nl] };
        for _ in 0..m {
            let p = sample_difference_set(&fine, rg);
            let mem = lad.membership(&p, None);
            match mem.shells.len() {
                0 => rep.orphans += 1,
                1 => rep.per_shell[mem.shells[0]] += 1,
                _ => rep.multi += 1,
            }
        }
        rep
    });
    Ok(parts.into_iter().fold(
        ShellReport { n_samples: 0, orphans: 0, multi: 0, per_shell: vec![0; nl] },
        ShellReport::merge,
    ))
}

/// A uniform point of θ̃ = θ − θ for a uniformly chosen θ.
pub fn sample_difference_set<T: Real>(fine: &ConeCover<T>, rg: &mut rng::Rng) -> [T; 3] {
    let pl = &fine.planks[rg.random_range(0..fine.planks.len())];
    let u = |rg: &mut rng::Rng| T::lit(rg.random_range(-1.0..=1.0));
    let two = T::lit(2.0);
    let a = u(rg) * T::lit(0.5);
    let b = u(rg) * two * pl.half_b;
    let c1 = u(rg) * two * pl.half_c;
    let c2 = u(rg) * two * pl.half_c;
    pl.point(a, b, c1, c2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: u32,
    pub r: f64,
    pub sigma: f64,
    pub block: f64,
    pub dilation: f64,
    /// "end" for h ≤ σ²/16, "bulk" otherwise.
    pub h_class: String,
    pub n: usize,
    pub max_count: usize,
    pub p99_count: usize,
}

fn summarize(counts: &mut [usize]) -> (usize, usize) {
    if counts.is_empty() {
        return (0, 0);
    }
    counts.sort_unstable();
    let p99 = counts[((counts.len() as f64 * 0.99).ceil() as usize).clamp(1, counts.len()) - 1];
    (*counts.last().unwrap(), p99)
}

/// Samples Ω′_σ in block K by rejection (uniform same-block plank of CP′_σ,
/// uniform coordinates, rejected if in ∪CP′_{σ/2}) and returns the points.
pub fn sample_omega_prime<T: Real>(
    lad: &CenteredLadder<T>,
    level: usize,
    k_block: T,
    n: usize,
    seed: u64,
) -> Result<Vec<[T; 3]>> {
    let lv = lad.levels.get(level).ok_or_else(|| invalid("level", "out of range"))?;
    let members: Vec<usize> = (0..lv.planks.len()).filter(|&i| lv.planks[i].sector == k_block).collect();
    if members.is_empty() {
        return Err(invalid("k_block", format!("no planks in block {k_block}")));
    }
    let j0 = lad.sigma0_level(k_block);
    let coarser = if level < j0 { lad.levels.get(level + 1) } else { None };
    let label_b = ((level as u64) << 8) | (k_block.as_f64().log2().abs() as u64 & 0xff);
    let parts = rng::par_chunks(n, seed, rng::tag::OVERLAP_SAMPLES, label_b, lad.k as u64, |rg, m| {
        let mut out = Vec::with_capacity(m);
        let mut tries = 0usize;
        while out.len() < m && tries < 1000 * m {
            tries += 1;
            let pl = &lv.planks[members[rg.random_range(0..members.len())]];
            let mut u = || T::lit(rg.random_range(-1.0..=1.0));
            let p = pl.point(u() * pl.a_hi, u() * pl.half_b, u() * pl.half_c, u() * pl.half_c);
            if coarser.map_or(false, |c| c.contains(&p, Some(k_block))) {
                continue;
            }
            out.push(p);
        }
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Same-block overlap counts at dilation S over sampled Ω′_σ points, split by
/// height class. Cross-block counts (no K restriction) are reported with
/// `h_class` suffixed by "-cross".
pub fn overlap_profile<T: Real>(
    lad: &CenteredLadder<T>,
    level: usize,
    k_block: T,
    s: T,
    n: usize,
    seed: u64,
) -> Result<Vec<OverlapReport>> {
    let pts = sample_omega_prime(lad, level, k_block, n, seed)?;
    let lv = &lad.levels[level];
    let cut = lv.sigma * lv.sigma * T::lit(ENDS_HEIGHT);
    let counts: Vec<(bool, usize, usize)> = pts
        .par_iter()
        .map(|p| {
            let same = lv.containing(p, s, Some(k_block)).len();
            let all = lv.containing(p, s, None).len();
            (p[2].abs() <= cut, same, all)
        })
        .collect();
    let mut out = Vec::new();
    for (name, end) in [("end", true), ("bulk", false)] {
        let mut same: Vec<usize> = counts.iter().filter(|c| c.0 == end).map(|c| c.1).collect();
        let mut all: Vec<usize> = counts.iter().filter(|c| c.0 == end).map(|c| c.2).collect();
        let n_class = same.len();
        for (tag, v) in [(name.to_string(), &mut same), (format!("{name}-cross"), &mut all)] {
            let (mx, p99) = summarize(v);
            out.push(OverlapReport {
                k: lad.k,
                r: lad.r.as_f64(),
                sigma: lv.sigma.as_f64(),
                block: k_block.as_f64(),
                dilation: s.as_f64(),
                h_class: tag,
                n: n_class,
                max_count: mx,
                p99_count: p99,
            });
        }
    }
    Ok(out)
}

/// Oriented box in ℝ³.
pub type Box3<T> = OrthoBox<T, 3>;

/// Orthonormal frame (𝐜, 𝐭 orthogonalized, their cross product) of a plank.
pub fn plank_frame<T: Real>(p: &Plank3<T>) -> [[T; 3]; 3] {
    let nc = norm(&p.c);
    let u1 = [p.c[0] / nc, p.c[1] / nc, p.c[2] / nc];
    let tp = dot(&p.t, &u1);
    let mut u2 = [p.t[0] - tp * u1[0], p.t[1] - tp * u1[1], p.t[2] - tp * u1[2]];
    let n2 = norm(&u2);
    for x in u2.iter_mut() {
        *x = *x / n2;
    }
    let u3 = cross(&u1, &u2);
    [u1, u2, u3]
}

/// Half-extents of a plank along its own orthonormal frame.
fn plank_extents<T: Real>(p: &Plank3<T>, f: &[[T; 3]; 3]) -> [T; 3] {
    let gens = [
        p.c.map(|x| x * p.a_half()),
        p.t.map(|x| x * p.half_b),
        p.ng.map(|x| x * p.half_c),
        [T::zero(), T::zero(), p.half_c],
    ];
    let mut e = [T::zero(); 3];
    for j in 0..3 {
        e[j] = gens.iter().fold(T::zero(), |s, g| s + dot(g, &f[j]).abs());
    }
    e
}

/// Dual box θ*: reciprocal half-extents along θ's frame.
pub fn polar_box<T: Real>(p: &Plank3<T>) -> Box3<T> {
    let f = plank_frame(p);
    let e = plank_extents(p, &f);
    Box3 { axes: f, half: e.map(|x| T::one() / x) }
}

/// Envelopes U_{τ,r²} for all τ ∈ Θ_{s²}.
#[derive(Clone, Debug)]
pub struct EnvelopeFamily<T> {
    pub s: T,
    pub taus: Vec<Plank3<T>>,
    pub boxes: Vec<Box3<T>>,
    /// Fine plank indices θ ⊆ τ, per τ.
    pub members: Vec<Vec<usize>>,
}

/// Builds τ ∈ Θ_{s²} from the canonical layout at δ = s² (which reaches δ = 1
/// at s = 1), assigns each fine θ to the τ with nearest base point, and bounds
/// conv(∪θ*) by a box in τ's frame with componentwise maximal half-lengths.
pub fn wave_envelopes<T: Real>(fine: &ConeCover<T>, s: T) -> Result<EnvelopeFamily<T>> {
    let r = T::one() / fine.delta.sqrt();
    if !(s >= T::one() / r * (T::one() - T::slack()) && s <= T::one()) {
        return Err(invalid("s", format!("{s} outside [r⁻¹, 1]")));
    }
    let d = s * s;
    let (pts, secs) = base_layout(fine.k, d);
    let taus: Vec<Plank3<T>> = pts
        .iter()
        .zip(&secs)
        .map(|(&b, &kb)| {
            let len = tangential_length_unchecked(fine.k, d, b);
            model_plank(fine.k, b, kb, (T::lit(0.5), T::one()), fine.c0 * len, fine.c0 * d)
        })
        .collect();
    let mut members = vec![Vec::new(); taus.len()];
    for (i, th) in fine.planks.iter().enumerate() {
        members[crate::curve_cover::nearest_index(&pts, th.base_xi1)].push(i);
    }
    let boxes = taus
        .iter()
        .zip(&members)
        .map(|(tau, mem)| {
            let axes = plank_frame(tau);
            let mut half = [T::zero(); 3];
            for &i in mem {
                let h = polar_box(&fine.planks[i]).enclosing_half(&axes);
                for j in 0..3 {
                    half[j] = half[j].max(h[j]);
                }
            }
            Box3 { axes, half }
        })
        .collect();
    Ok(EnvelopeFamily { s, taus, boxes, members })
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Λ_ν for the sector |ξ₁/ξ₃ − ν| ≤ M, M = c·ν:
/// ξ₁′ = (ξ₁ − νξ₃)/M, ξ₃′ = ξ₃ and τ′ = (τ − kν^{k−1}ξ₁ + (k−1)ν^kξ₃)/A with
/// A = C(k,2)·M²·ν^{k−2}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzMap<T> {
    pub k: u32,
    pub nu: T,
    pub m: T,
    pub c: T,
    pub a_scale: T,
    pub matrix: [[T; 3]; 3],
    pub jacobian: T,
}

/// Coefficients d_{k,ℓ} = C(k,ℓ)/C(k,2), ℓ = 3..=k.
pub fn image_coeffs(k: u32) -> Vec<f64> {
    (3..=k).map(|l| binom(k, l) / binom(k, 2)).collect()
}

/// Coefficients of f₂″ as a polynomial in ω.
fn f2_second_coeffs(k: u32, c: f64) -> Vec<f64> {
    let mut out = vec![2.0];
    for (i, d) in image_coeffs(k).into_iter().enumerate() {
        let l = (i + 3) as f64;
        out.push(d * c.powi(i as i32 + 1) * l * (l - 1.0));
    }
    out
}

/// Enclosure of f₂″ on [−1, 1] by interval arithmetic.
pub fn f2_second_derivative_range(k: u32, c: f64) -> (f64, f64) {
    crate::geom::poly_range(&f2_second_coeffs(k, c), -1.0, 1.0, 4096)
}

/// Largest c (to 1e−9) keeping the lower bound of f₂″ on [−1, 1] at least 1/2.
pub fn c_max(k: u32) -> f64 {
    if k <= 2 {
        return f64::INFINITY;
    }
    let ok = |c: f64| f2_second_derivative_range(k, c).0 >= 0.5;
    let (mut lo, mut hi) = (0.0, 1.0);
    while ok(hi) {
        hi *= 2.0;
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn lorentz_rescale<T: Real>(k: u32, nu: T, c: T) -> Result<LorentzMap<T>> {
    if k < 2 {
        return Err(invalid("k", format!("{k} < 2")));
    }
    if !(nu > T::zero()) {
        return Err(invalid("nu", format!("{nu} ≤ 0")));
    }
    if !(c > T::zero() && c.as_f64() < c_max(k)) {
        return Err(invalid("c", format!("{c} outside (0, c_max = {})", c_max(k))));
    }
    let m = c * nu;
    let kk = T::lit(k as f64);
    let a = T::lit(binom(k, 2)) * m * m * nu.powi(k as i32 - 2);
    let z = T::zero();
    let matrix = [
        [T::one() / m, z, -nu / m],
        [-kk * nu.powi(k as i32 - 1) / a, T::one() / a, (kk - T::one()) * nu.powi(k as i32) / a],
        [z, z, T::one()],
    ];
    Ok(LorentzMap { k, nu, m, c, a_scale: a, matrix, jacobian: T::one() / (m * a) })
}

impl<T: Real> LorentzMap<T> {
    pub fn apply(&self, p: &[T; 3]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for i in 0..3 {
            out[i] = dot(&self.matrix[i], p);
        }
        out
    }

    pub fn invert(&self, q: &[T; 3]) -> [T; 3] {
        let kk = T::lit(self.k as f64);
        let x3 = q[2];
        let x1 = self.m * q[0] + self.nu * x3;
        let tau = self.a_scale * q[1] + kk * self.nu.powi(self.k as i32 - 1) * x1
            - (kk - T::one()) * self.nu.powi(self.k as i32) * x3;
        [x1, tau, x3]
    }

    pub fn determinant(&self) -> T {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// f₂(ω) = ω² + Σ d_{k,ℓ}c^{ℓ−2}ω^ℓ and its derivative.
    pub fn f2(&self, w: T) -> (T, T) {
        let mut f = w * w;
        let mut df = T::lit(2.0) * w;
        for (i, d) in image_coeffs(self.k).into_iter().enumerate() {
            let l = (i + 3) as i32;
            let coef = T::lit(d) * self.c.powi(l - 2);
            f += coef * w.powi(l);
            df += coef * T::lit(l as f64) * w.powi(l - 1);
        }
        (f, df)
    }

    /// Canonical plank of Γ₂′ at ω with scale δ′: half_b = c₀·δ′^{1/2}, half_c = c₀·δ′.
    pub fn image_plank(&self, w: T, delta_p: T, c0: T) -> Plank3<T> {
        let (f, df) = self.f2(w);
        Plank3::from_curve_point(w, T::zero(), [w, f], df, (T::lit(0.5), T::one()), c0 * delta_p.sqrt(), c0 * delta_p)
    }

    /// Canonical δ-plank of the (homogeneously extended) model curve at ν_θ > 0.
    pub fn source_plank(&self, nu_theta: T, delta: T, c0: T) -> Plank3<T> {
        let len = delta.sqrt() / nu_theta.powf(T::lit((self.k as f64 - 2.0) / 2.0));
        model_plank(self.k, nu_theta, T::zero(), (T::lit(0.5), T::one()), c0 * len, c0 * delta)
    }

    /// Largest mutual dilation between mapped δ-sub-planks at `n_sub` base points
    /// across the sector and the canonical Γ₂′ planks at δ′ = δ/A:
    /// max over sub-planks of max(D(Λθ ⊆ Dθ′), D(θ′ ⊆ DΛθ)).
    pub fn subplank_dilation(&self, delta: T, c0: T, n_sub: usize) -> T {
        let dp = delta / self.a_scale;
        let mut worst = T::zero();
        for i in 0..n_sub {
            let t = if n_sub == 1 { T::zero() } else { T::lit(2.0 * i as f64 / (n_sub - 1) as f64 - 1.0) };
            let nu_t = self.nu + t * self.m;
            let src = self.source_plank(nu_t, delta, c0);
            let img = self.image_plank(t, dp, c0);
            let fwd = src.vertices().iter().fold(T::zero(), |m, v| m.max(img.required_dilation(&self.apply(v))));
            let bwd = img.vertices().iter().fold(T::zero(), |m, v| m.max(src.required_dilation(&self.invert(v))));
            worst = worst.max(fwd).max(bwd);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::pow2;
    use proptest::prelude::*;

    #[test]
    fn frame_orthogonality_and_norms() {
        for k in 2..=5 {
            for i in -10..=10 {
                let xi = i as f64 / 10.0;
                let p = model_plank(k, xi, 0.0, (0.5, 1.0), 1.0, 1.0);
                assert_eq!(dot(&p.t, &p.ng), 0.0);
                let (nt, nn) = (norm(&p.t), norm(&p.ng));
                let top = (1.0 + (k * k) as f64).sqrt();
                assert!(nt >= 1.0 && nt <= top && (nt - nn).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn k2_uniform_half_b() {
        let c = build_cone_cover::<f64>(2, pow2(-8)).unwrap();
        for p in &c.planks {
            assert!((p.half_b - 4.0 * pow2::<f64>(-4)).abs() < 1e-15);
        }
    }

    #[test]
    fn k3_quarter_block_count() {
        let c = build_cone_cover::<f64>(3, pow2(-12)).unwrap();
        let n = c.planks.iter().filter(|p| p.sector == 0.25 && p.base_xi1 > 0.0).count();
        assert!((4..=16).contains(&n), "{n}");
    }

    #[test]
    fn cone_cover_sampled_complete() {
        for (k, e) in [(2, 8), (3, 10), (5, 12)] {
            let c = build_cone_cover::<f64>(k, pow2(-e)).unwrap();
            let rep = verify_cone_cover(&c, 20_000, 3).unwrap();
            assert!(rep.complete(), "{k} {e} {rep:?}");
            // Slices at height a are a·γ under fixed-width planks, so the count
            // runs above the curve's C_MULT; 16 bounds every run at δ ≥ 2^-12.
            assert!(rep.max_multiplicity <= 2 * crate::curve_cover::C_MULT, "{k} {rep:?}");
        }
    }

    #[test]
    fn membership_matches_required_dilation() {
        let c = build_cone_cover::<f64>(3, pow2(-10)).unwrap();
        let pl = c.planks[c.planks.len() / 2 + 3];
        let mut r = rng::stream(1, 1);
        for _ in 0..2000 {
            let mut u = || r.random_range(-1.5..=1.5);
            let p = pl.point(0.75 + 0.25 * u(), pl.half_b * u(), pl.half_c * u(), pl.half_c * u());
            let d = pl.required_dilation(&p);
            assert_eq!(pl.contains(&p, 1.0), d <= 1.0 + 1e-9, "{d}");
            assert!(pl.contains(&p, d * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn axis_point_in_first_union() {
        let lad = build_centered_ladder::<f64>(3, 16.0).unwrap();
        for pl in &lad.levels[0].planks {
            let p = pl.point(0.75, 0.0, 0.0, 0.0);
            assert!(lad.levels[0].contains(&p, None));
        }
    }

    #[test]
    fn k2_spacing_and_slice_length() {
        let lad = build_centered_ladder::<f64>(2, 16.0).unwrap();
        let b: Vec<f64> = lad.levels[0].planks.iter().map(|p| p.base_xi1).collect();
        for w in b.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 16.0).abs() < 1e-12);
        }
        let pl = lad.levels[0].planks[5];
        let s = pl.slice(1.0).unwrap();
        assert!((s.half_l - lad.big_c / 16.0).abs() < 1e-12);
        let s0 = pl.slice(0.0).unwrap();
        assert_eq!(s0.center, [0.0, 0.0]);
        assert!(pl.slice(2.0).is_err());
    }

    #[test]
    fn ladder_is_nested_and_contains_difference_sets() {
        let lad = build_centered_ladder::<f64>(4, 32.0).unwrap();
        for w in lad.levels.windows(2) {
            let fine: Vec<f64> = w[0].planks.iter().map(|p| p.base_xi1).collect();
            assert!(w[1].planks.iter().all(|p| fine.contains(&p.base_xi1)));
            assert!(w[1].planks.len() <= w[0].planks.len());
        }
        let fine = build_cone_cover::<f64>(4, pow2(-10)).unwrap();
        for (th, cp) in fine.planks.iter().zip(&lad.levels[0].planks) {
            assert_eq!(th.base_xi1, cp.base_xi1);
            let two = Plank3 { a_lo: -0.5, a_hi: 0.5, half_b: 2.0 * th.half_b, half_c: 2.0 * th.half_c, ..*th };
            for v in two.vertices() {
                assert!(cp.contains(&v, 1.0));
            }
        }
    }

    #[test]
    fn near_surface_low_point_not_in_top_shell() {
        let lad = build_centered_ladder::<f64>(3, 16.0).unwrap();
        let j = 1;
        let sigma = lad.levels[j].sigma;
        let h = sigma * sigma / 4.0;
        let pl = lad.levels[j + 1].planks[lad.levels[j + 1].planks.len() / 2 + 1];
        let p = pl.point(h, 0.0, 0.5 / 256.0, 0.0);
        let mem = lad.membership(&p, None);
        assert!(!mem.shells.contains(&j));
    }

    #[test]
    fn ends_reject_high_slices_and_are_disjoint() {
        let lad = build_centered_ladder::<f64>(3, 16.0).unwrap();
        let lv = &lad.levels[1];
        let s2 = lv.sigma * lv.sigma;
        assert!(lv.ends(3, s2 / 2.0).is_err());
        let (le, re) = lv.ends(3, s2 / 16.0).unwrap();
        assert!(!le.contains(&re.center, 1.0) && !re.contains(&le.center, 1.0));
        let (l, _) = re.coords(&re.center);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn lorentz_coefficients_and_ranges() {
        let d = image_coeffs(4);
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!(image_coeffs(2).is_empty());
        let (lo, hi) = f2_second_derivative_range(4, 0.1);
        assert!((lo - 1.62).abs() < 2e-3 && (hi - 2.42).abs() < 2e-3, "{lo} {hi}");
        assert_eq!(f2_second_derivative_range(2, 0.1), (2.0, 2.0));
        assert!((c_max(4) - 0.5).abs() < 1e-3 && c_max(4) < 0.5);
        assert!(lorentz_rescale::<f64>(4, 0.5, 0.6).is_err());
    }

    #[test]
    fn subplank_dilation_frozen() {
        let map = lorentz_rescale::<f64>(2, 0.5, 0.1).unwrap();
        let d = map.subplank_dilation(map.a_scale * pow2::<f64>(-12), 4.0, 9);
        assert!((d - 2.9814).abs() < 1e-3, "{d}");
        let map = lorentz_rescale::<f64>(5, 0.0625, 0.1).unwrap();
        let d = map.subplank_dilation(map.a_scale * pow2::<f64>(-12), 4.0, 9);
        assert!((d - 7.6001).abs() < 1e-3, "{d}");
    }

    #[test]
    fn lorentz_maps_cone_to_image_cone() {
        for k in 2..=5 {
            let map = lorentz_rescale::<f64>(k, 0.6, 0.1).unwrap();
            assert!((map.determinant() - map.jacobian).abs() < 1e-9 * map.jacobian);
            for i in 0..=20 {
                let xi = 0.6 + map.m * (i as f64 / 10.0 - 1.0);
                let x3 = 0.75;
                let p = [xi * x3, xi.powi(k as i32) * x3, x3];
                let q = map.apply(&p);
                let w = q[0] / q[2];
                assert!((w - (i as f64 / 10.0 - 1.0)).abs() < 1e-12);
                assert!((q[1] / q[2] - map.f2(w).0).abs() < 1e-9, "{k} {i}");
                let back = map.invert(&q);
                for j in 0..3 {
                    assert!((back[j] - p[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn envelopes_contain_member_polar_boxes() {
        let fine = build_cone_cover::<f64>(3, pow2(-6)).unwrap();
        for s in [0.125, 0.25, 0.5, 1.0] {
            let fam = wave_envelopes(&fine, s).unwrap();
            let total: usize = fam.members.iter().map(|m| m.len()).sum();
            assert_eq!(total, fine.planks.len());
            for (b, mem) in fam.boxes.iter().zip(&fam.members) {
                for &i in mem {
                    let pb = polar_box(&fine.planks[i]);
                    for sx in [-1.0, 1.0] {
                        for sy in [-1.0, 1.0] {
                            for sz in [-1.0, 1.0] {
                                let mut v = [0.0; 3];
                                for (m, sg) in [sx, sy, sz].iter().enumerate() {
                                    for d in 0..3 {
                                        v[d] += sg * pb.half[m] * pb.axes[m][d];
                                    }
                                }
                                assert!(b.contains(&v));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tiles_partition_points() {
        let fine = build_cone_cover::<f64>(3, pow2(-6)).unwrap();
        let fam = wave_envelopes(&fine, 0.25).unwrap();
        let b = fam.boxes[1];
        let mut r = rng::stream(5, 5);
        for _ in 0..10_000 {
            let p = [r.random_range(-40.0..40.0), r.random_range(-40.0..40.0), r.random_range(-40.0..40.0)];
            let t = b.tile(&p);
            let x = b.coords(&p);
            for j in 0..3 {
                let lo = (2 * t[j] - 1) as f64 * b.half[j];
                assert!(lo <= x[j] + 1e-9 && x[j] < lo + 2.0 * b.half[j] + 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn polar_box_is_reciprocal(k in 2u32..=5, e in 4i32..=12, i in 0usize..64) {
            let fine = build_cone_cover::<f64>(k, pow2(-e)).unwrap();
            let pl = &fine.planks[i % fine.planks.len()];
            let pb = polar_box(pl);
            let f = plank_frame(pl);
            let ext = plank_extents(pl, &f);
            for j in 0..3 {
                prop_assert!((pb.half[j] * ext[j] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn jacobian_scales_volumes(k in 2u32..=5, nu in 0.2f64..1.0) {
            let map = lorentz_rescale::<f64>(k, nu, 0.1).unwrap();
            let e = [[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.1, 0.0, 1.0]];
            let img: Vec<[f64; 3]> = e.iter().map(|v| map.apply(v)).collect();
            let det = |m: &[[f64; 3]]| {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            };
            let ratio = det(&img) / det(&e);
            prop_assert!((ratio - map.jacobian).abs() <= 1e-9 * map.jacobian);
        }
    }
}
