//! Complex planks for the neighbourhood of ℂΓ₂ = {a·(z, z², 1)} ⊂ ℝ⁵, centered
//! planks Θ(σ,z), the shells Ω_σ, complex ends and the alternating-ends check.
//!
//! ℂ² is identified with ℝ⁴ by F(z₁, z₂) = (Re z₁, Im z₁, Re z₂, Im z₂). The
//! vectors 𝐭_s, 𝐭_t, 𝐧_s, 𝐧_t lie in ℝ⁴ × {0}, are mutually orthogonal and share
//! the squared norm 1 + 4|z|², so fixing a determines every other coordinate of
//! a point and plank membership is an interval problem in a, as in ℝ³.

use num_complex::Complex;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone_cover::{OverlapReport, ShellMembership, ShellReport};
use crate::curve_cover::CoverReport;
use crate::error::{invalid, Error, Result};
use crate::geom::{clip_affine, gram_schmidt, min_max_abs_affine, Interval, OrthoBox};
use crate::rng;
use crate::scalar::{dot, Real};

pub type C<T> = Complex<T>;

/// Fine plank constant d.
pub const SMALL_D: f64 = 3.0;
/// Centered plank constant D.
pub const LARGE_D: f64 = 30.0;
/// Default dilation for overlap counts.
pub const DEFAULT_S: f64 = 10.0;
/// Lattice points per axis of each normal coefficient disc in the ends
/// intersection search.
pub const ENDS_C_GRID: usize = 9;
/// Ends live at heights h ≤ σ²·ENDS_HEIGHT.
pub const ENDS_HEIGHT: f64 = 1.0 / 16.0;
/// Minimal |z − z′| in units of r⁻¹σ⁻¹ for the alternating-ends check.
pub const ENDS_MIN_SEPARATION: f64 = 8.0;
pub const DOC_VERSION: u32 = 1;

/// F: ℂ² → ℝ⁴.
pub fn embed<T: Real>(v: &[C<T>; 2]) -> [T; 4] {
    [v[0].re, v[0].im, v[1].re, v[1].im]
}

/// γ_{2,ℂ}(z) = (z, z²).
pub fn gamma_c<T: Real>(z: C<T>) -> [C<T>; 2] {
    [z, z * z]
}

/// γ̇_{2,ℂ}(z) = (1, 2z).
pub fn gamma_dot<T: Real>(z: C<T>) -> [C<T>; 2] {
    [C::new(T::one(), T::zero()), z + z]
}

/// 𝐧_ℂ(z) = (−2z̄, 1).
pub fn normal_c<T: Real>(z: C<T>) -> [C<T>; 2] {
    let w = z.conj();
    [-(w + w), C::new(T::one(), T::zero())]
}

/// Spanning vector of the Hermitian orthogonal complement, ∧(a, b) = (−b̄, ā),
/// so ∧γ̇(z) = 𝐧_ℂ(z).
pub fn wedge<T: Real>(v: &[C<T>; 2]) -> [C<T>; 2] {
    [-v[1].conj(), v[0].conj()]
}

/// Hermitian product, linear in the first argument.
pub fn hdot<T: Real>(a: &[C<T>; 2], b: &[C<T>; 2]) -> C<T> {
    a[0] * b[0].conj() + a[1] * b[1].conj()
}

fn hnorm2<T: Real>(a: &[C<T>; 2]) -> T {
    a[0].norm_sqr() + a[1].norm_sqr()
}

fn csub<T: Real>(a: &[C<T>; 2], b: &[C<T>; 2]) -> [C<T>; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot4<T: Real>(p: &[T; 5], v: &[T; 5]) -> T {
    p[0] * v[0] + p[1] * v[1] + p[2] * v[2] + p[3] * v[3]
}

/// (w₁, w₂) ∈ ℂ² of a point of ℝ⁵.
pub fn complex_part<T: Real>(p: &[T; 5]) -> [C<T>; 2] {
    [C::new(p[0], p[1]), C::new(p[2], p[3])]
}

/// 𝐜, 𝐭_s, 𝐭_t, 𝐧_s, 𝐧_t at z = s + it; 𝐧₅ = e₅ is implicit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame5<T> {
    pub c: [T; 5],
    pub ts: [T; 5],
    pub tt: [T; 5],
    pub ns: [T; 5],
    pub nt: [T; 5],
}

pub fn frame<T: Real>(z: C<T>) -> Frame5<T> {
    let (s, t) = (z.re, z.im);
    let (o, two) = (T::zero(), T::lit(2.0));
    Frame5 {
        c: [s, t, s * s - t * t, two * s * t, T::one()],
        ts: [T::one(), o, two * s, two * t, o],
        tt: [o, T::one(), -two * t, two * s, o],
        ns: [-two * s, two * t, T::one(), o, o],
        nt: [-two * t, -two * s, o, T::one(), o],
    }
}

impl<T: Real> Frame5<T> {
    /// 𝐜, 𝐭_s, 𝐭_t, 𝐧_s, 𝐧_t, 𝐧₅.
    pub fn vectors(&self) -> [[T; 5]; 6] {
        let mut e5 = [T::zero(); 5];
        e5[4] = T::one();
        [self.c, self.ts, self.tt, self.ns, self.nt, e5]
    }

    /// |𝐭_s|² = |𝐭_t|² = |𝐧_s|² = |𝐧_t|² = 1 + 4|z|².
    pub fn norm2(&self) -> T {
        dot(&self.ts, &self.ts)
    }
}

/// {a𝐜 + b₁𝐭_s + b₂𝐭_t + c₁𝐧_s + c₂𝐧_t + e𝐧₅ : a ∈ [a_lo, a_hi], |b_i| ≤ half_b,
/// |c_i|, |e| ≤ half_c}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plank5<T> {
    pub z: C<T>,
    pub frame: Frame5<T>,
    pub a_lo: T,
    pub a_hi: T,
    pub half_b: T,
    pub half_c: T,
}

impl<T: Real> Plank5<T> {
    pub fn new(z: C<T>, a: (T, T), half_b: T, half_c: T) -> Self {
        Self { z, frame: frame(z), a_lo: a.0, a_hi: a.1, half_b, half_c }
    }

    pub fn a_center(&self) -> T {
        (self.a_lo + self.a_hi) * T::lit(0.5)
    }

    pub fn a_half(&self) -> T {
        (self.a_hi - self.a_lo) * T::lit(0.5)
    }

    /// b₁, b₂, c₁, c₂ of p as affine functions p_i − q_i·a.
    fn affine(&self, p: &[T; 5]) -> [(T, T); 4] {
        let f = &self.frame;
        let n = f.norm2();
        [f.ts, f.tt, f.ns, f.nt].map(|v| (dot4(p, &v) / n, dot4(&f.c, &v) / n))
    }

    /// Values of a for which p is in the plank dilated by `s` about its center.
    pub fn a_interval(&self, p: &[T; 5], s: T) -> Interval<T> {
        let s = s * (T::one() + T::slack());
        let m = self.a_center();
        let h = self.a_half() * s;
        let aff = self.affine(p);
        let mut iv = Some((m - h, m + h));
        for (i, &(pp, q)) in aff.iter().enumerate() {
            let w = if i < 2 { self.half_b } else { self.half_c };
            iv = clip_affine(iv, pp, q, s * w);
        }
        clip_affine(iv, p[4], T::one(), s * self.half_c)
    }

    pub fn contains(&self, p: &[T; 5], s: T) -> bool {
        self.a_interval(p, s).is_some()
    }

    /// Smallest dilation about the center containing p.
    pub fn required_dilation(&self, p: &[T; 5]) -> T {
        let aff = self.affine(p);
        let mut terms = vec![(self.a_center(), T::one(), self.a_half()), (p[4], T::one(), self.half_c)];
        for (i, &(pp, q)) in aff.iter().enumerate() {
            terms.push((pp, q, if i < 2 { self.half_b } else { self.half_c }));
        }
        min_max_abs_affine(&terms).1
    }

    /// Point with coordinates (a, b₁, b₂, c₁, c₂, e).
    pub fn point(&self, a: T, b: [T; 2], c: [T; 2], e: T) -> [T; 5] {
        let f = &self.frame;
        let mut p = [T::zero(); 5];
        for i in 0..5 {
            p[i] = a * f.c[i] + b[0] * f.ts[i] + b[1] * f.tt[i] + c[0] * f.ns[i] + c[1] * f.nt[i];
        }
        p[4] += e;
        p
    }

    /// Slice {ω₅ = h} in ℂ², centered at h·γ_{2,ℂ}(z).
    pub fn slice(&self, h: T) -> Result<ComplexSlice<T>> {
        let reach = self.a_half() + self.half_c;
        if (h - self.a_center()).abs() > reach * (T::one() + T::slack()) {
            return Err(invalid("h", format!("{h} outside plank heights")));
        }
        let g = gamma_c(self.z);
        Ok(ComplexSlice {
            h,
            z: self.z,
            center: [g[0] * h, g[1] * h],
            tangent: gamma_dot(self.z),
            normal: normal_c(self.z),
            half_l: self.half_b,
            half_c: self.half_c,
        })
    }

    pub fn to_doc(&self) -> Plank5Doc {
        Plank5Doc {
            base_z: [self.z.re.as_f64(), self.z.im.as_f64()],
            a_range: [self.a_lo.as_f64(), self.a_hi.as_f64()],
            half_b: self.half_b.as_f64(),
            half_c: self.half_c.as_f64(),
        }
    }
}

/// {center + ℓ·γ̇(z) + c·𝐧_ℂ(z) : ℓ, c ∈ ℂ, |ℓ| ≤ half_l, |c| ≤ half_c} ⊂ ℂ².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexSlice<T> {
    pub h: T,
    pub z: C<T>,
    pub center: [C<T>; 2],
    pub tangent: [C<T>; 2],
    pub normal: [C<T>; 2],
    pub half_l: T,
    pub half_c: T,
}

impl<T: Real> ComplexSlice<T> {
    /// Coefficients (ℓ, c) of q − center. γ̇ and 𝐧_ℂ are Hermitian-orthogonal.
    pub fn coords(&self, q: &[C<T>; 2]) -> (C<T>, C<T>) {
        let d = csub(q, &self.center);
        (
            hdot(&d, &self.tangent) / hnorm2(&self.tangent),
            hdot(&d, &self.normal) / hnorm2(&self.normal),
        )
    }

    pub fn point(&self, l: C<T>, c: C<T>) -> [C<T>; 2] {
        [
            self.center[0] + l * self.tangent[0] + c * self.normal[0],
            self.center[1] + l * self.tangent[1] + c * self.normal[1],
        ]
    }

    pub fn contains(&self, q: &[C<T>; 2], s: T) -> bool {
        let (l, c) = self.coords(q);
        let s = s * (T::one() + T::slack());
        l.norm() <= s * self.half_l && c.norm() <= s * self.half_c
    }

    /// q in the `s`-dilated ends: half_l/(4s) ≤ |ℓ| ≤ s·half_l, |c| ≤ s·half_c.
    pub fn in_ends(&self, q: &[C<T>; 2], s: T) -> bool {
        let (l, c) = self.coords(q);
        let sl = s * (T::one() + T::slack());
        let ln = l.norm();
        ln >= self.half_l / (T::lit(4.0) * sl) && ln <= sl * self.half_l && c.norm() <= sl * self.half_c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plank5Doc {
    pub base_z: [f64; 2],
    pub a_range: [f64; 2],
    pub half_b: f64,
    pub half_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexFamilyDoc {
    pub version: u32,
    pub dim: u32,
    /// R for a fine cover.
    pub big_r: Option<f64>,
    /// r and σ for a centered family.
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    pub spacing: f64,
    pub planks: Vec<Plank5Doc>,
}

/// Planks with a common shape over the base grid spacing·(ℤ × ℤ) ∩ [−1, 1]².
#[derive(Clone, Debug)]
pub struct PlankGrid<T> {
    pub spacing: T,
    /// Base points spacing·(i + i·j) for |i|, |j| ≤ n, stored row-major in i.
    pub n: i64,
    pub planks: Vec<Plank5<T>>,
}

impl<T: Real> PlankGrid<T> {
    pub fn new(spacing: T, a: (T, T), half_b: T, half_c: T) -> Self {
        let n = (T::one() / spacing * (T::one() + T::slack())).floor().to_i64().unwrap_or(0);
        let mut planks = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
        for i in -n..=n {
            for j in -n..=n {
                let z = C::new(T::lit(i as f64) * spacing, T::lit(j as f64) * spacing);
                planks.push(Plank5::new(z, a, half_b, half_c));
            }
        }
        Self { spacing, n, planks }
    }

    pub fn side(&self) -> i64 {
        2 * self.n + 1
    }

    pub fn index(&self, i: i64, j: i64) -> Option<usize> {
        if i.abs() > self.n || j.abs() > self.n {
            return None;
        }
        Some(((i + self.n) * self.side() + (j + self.n)) as usize)
    }

    /// Grid coordinates of plank `idx`.
    pub fn ij(&self, idx: usize) -> (i64, i64) {
        let idx = idx as i64;
        (idx / self.side() - self.n, idx % self.side() - self.n)
    }

    /// Nearest base point, clamped to the grid.
    pub fn nearest(&self, z: C<T>) -> usize {
        let r = |x: T| (x / self.spacing).round().to_i64().unwrap_or(0).clamp(-self.n, self.n);
        self.index(r(z.re), r(z.im)).unwrap()
    }

    /// Grid window that can hold planks whose `s`-dilate contains p, and the
    /// grid point to search from.
    ///
    /// With w = (w₁, w₂) the ℂ² part of p and p = a𝐜 + ℓγ̇ + c𝐧_ℂ + e𝐧₅:
    /// w₁ − a·z = ℓ − 2z̄c and w₂ − z·w₁ = z·ℓ + (1 + 2|z|²)·c, which bound z
    /// independently of a and of ℓ, c.
    fn window(&self, p: &[T; 5], s: T) -> Option<([i64; 4], (i64, i64))> {
        let pl = self.planks.first()?;
        let s = s * (T::one() + T::lit(1e-9));
        let sqrt2 = T::SQRT_2();
        let lmax = sqrt2 * s * pl.half_b;
        let cmax = sqrt2 * s * pl.half_c;
        let zmax = sqrt2 * T::lit(self.n as f64) * self.spacing;
        let w = complex_part(p);
        let (mut center, mut radius) = (C::new(T::zero(), T::zero()), T::infinity());
        let mut consider = |c: C<T>, r: T| {
            if r < radius {
                center = c;
                radius = r;
            }
        };
        let rho2 = zmax * lmax + (T::one() + T::lit(2.0) * zmax * zmax) * cmax;
        let w1n = w[0].norm();
        if w1n > T::zero() {
            consider(w[1] / w[0], rho2 / w1n);
        }
        let (m, h) = (pl.a_center(), pl.a_half() * s);
        let (a1, a2) = ((m - h).max(p[4] - s * pl.half_c), (m + h).min(p[4] + s * pl.half_c));
        if a1 > a2 {
            return None;
        }
        if a1 > T::zero() || a2 < T::zero() {
            let amin = a1.abs().min(a2.abs());
            let rho1 = lmax + T::lit(2.0) * zmax * cmax;
            let mid = w[0] * ((T::one() / a1 + T::one() / a2) * T::lit(0.5));
            let spread = w1n * (T::one() / a1 - T::one() / a2).abs() * T::lit(0.5);
            consider(mid, spread + rho1 / amin);
        }
        let grid = |x: T, dir: T| {
            let v = (x / self.spacing + dir * T::lit(1e-9)).to_f64().unwrap_or(0.0);
            let v = if dir > T::zero() { v.floor() } else { v.ceil() };
            (v.clamp(-(self.n as f64) - 1.0, self.n as f64 + 1.0)) as i64
        };
        let (i0, i1, j0, j1) = if radius.is_finite() {
            (
                grid(center.re - radius, -T::one()).max(-self.n),
                grid(center.re + radius, T::one()).min(self.n),
                grid(center.im - radius, -T::one()).max(-self.n),
                grid(center.im + radius, T::one()).min(self.n),
            )
        } else {
            (-self.n, self.n, -self.n, self.n)
        };
        if i0 > i1 || j0 > j1 {
            return None;
        }
        let ci = grid(center.re, T::one()).clamp(i0, i1);
        let cj = grid(center.im, T::one()).clamp(j0, j1);
        Some(([i0, i1, j0, j1], (ci, cj)))
    }

    /// Calls `f` on candidate plank indices in rings of growing Chebyshev radius
    /// around the predicted base point; stops when `f` returns true.
    fn scan(&self, p: &[T; 5], s: T, mut f: impl FnMut(usize) -> bool) {
        let Some(([i0, i1, j0, j1], (ci, cj))) = self.window(p, s) else {
            return;
        };
        let reach = (ci - i0).max(i1 - ci).max(cj - j0).max(j1 - cj);
        for rho in 0..=reach {
            for i in (ci - rho).max(i0)..=(ci + rho).min(i1) {
                let edge = (i - ci).abs() == rho;
                let mut visit = |j: i64| j >= j0 && j <= j1 && f(self.index(i, j).unwrap());
                if edge {
                    for j in (cj - rho).max(j0)..=(cj + rho).min(j1) {
                        if visit(j) {
                            return;
                        }
                    }
                } else if visit(cj - rho) || (rho > 0 && visit(cj + rho)) {
                    return;
                }
            }
        }
    }

    /// Indices of planks whose `s`-dilate contains p, ascending.
    pub fn containing(&self, p: &[T; 5], s: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.scan(p, s, |i| {
            if self.planks[i].contains(p, s) {
                out.push(i);
            }
            false
        });
        out.sort_unstable();
        out
    }

    pub fn contains_any(&self, p: &[T; 5], s: T) -> bool {
        let mut hit = false;
        self.scan(p, s, |i| {
            hit = self.planks[i].contains(p, s);
            hit
        });
        hit
    }

    pub fn multiplicity(&self, p: &[T; 5]) -> usize {
        self.containing(p, T::one()).len()
    }
}

/// Θ_{R⁻¹}: complex planks over R^{−1/2}(ℤ × ℤ) ∩ [−1, 1]² with a ∈ [1/2, 1].
#[derive(Clone, Debug)]
pub struct ComplexCover<T> {
    pub big_r: T,
    pub grid: PlankGrid<T>,
}

fn fine_grid<T: Real>(big_r: T) -> PlankGrid<T> {
    let h = T::one() / big_r.sqrt();
    let d = T::lit(SMALL_D);
    PlankGrid::new(h, (T::lit(0.5), T::one()), d * h, d / big_r)
}

fn log2_exact<T: Real>(x: T, name: &'static str, lo: u32, hi: u32) -> Result<u32> {
    let l = x.as_f64().log2();
    if !(l >= 0.0) || (l - l.round()).abs() > 1e-12 || !(lo as f64..=hi as f64).contains(&l.round()) {
        return Err(invalid(name, format!("{x} is not a power of two in [2^{lo}, 2^{hi}]")));
    }
    Ok(l.round() as u32)
}

pub fn build_complex_cover<T: Real>(big_r: T) -> Result<ComplexCover<T>> {
    log2_exact(big_r, "R", 4, 16)?;
    Ok(ComplexCover { big_r, grid: fine_grid(big_r) })
}

impl<T: Real> ComplexCover<T> {
    pub fn planks(&self) -> &[Plank5<T>] {
        &self.grid.planks
    }

    pub fn to_doc(&self) -> ComplexFamilyDoc {
        ComplexFamilyDoc {
            version: DOC_VERSION,
            dim: 5,
            big_r: Some(self.big_r.as_f64()),
            r: None,
            sigma: None,
            spacing: self.grid.spacing.as_f64(),
            planks: self.grid.planks.iter().map(|p| p.to_doc()).collect(),
        }
    }
}

fn ball_offset<T: Real>(rg: &mut rng::Rng, radius: T) -> [T; 5] {
    let mut v = [0.0f64; 5];
    for x in v.iter_mut() {
        *x = rg.sample(StandardNormal);
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = rg.random_range(0.0..=1.0f64).powf(0.2);
    v.map(|x| T::lit(x / n * r) * radius)
}

/// Samples 𝒩_{R⁻¹}(ℂΓ₂): z uniform in [−1, 1]², a uniform in [1/2, 1], plus a
/// uniform offset in the 5-ball of radius R⁻¹.
pub fn verify_complex_cover<T: Real>(cov: &ComplexCover<T>, n: usize, seed: u64) -> Result<CoverReport> {
    if n == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    let rad = T::one() / cov.big_r;
    let lr = cov.big_r.as_f64().log2() as u64;
    let parts = rng::par_chunks(n, seed, rng::tag::COMPLEX_SAMPLES, lr, 0, |rg, m| {
        let mut covered = 0;
        let mut maxm = 0;
        for _ in 0..m {
            let z = C::new(T::lit(rg.random_range(-1.0..=1.0)), T::lit(rg.random_range(-1.0..=1.0)));
            let a = T::lit(rg.random_range(0.5..=1.0));
            let c = frame(z).c;
            let off = ball_offset(rg, rad);
            let mut p = [T::zero(); 5];
            for i in 0..5 {
                p[i] = a * c[i] + off[i];
            }
            let mult = cov.grid.multiplicity(&p);
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

/// CP_σ: Θ(σ, z) over r⁻¹σ⁻¹(ℤ × ℤ) ∩ [−1, 1]² with a ∈ [−σ², σ²],
/// half_b = D·r⁻¹σ, half_c = D·r⁻².
#[derive(Clone, Debug)]
pub struct ComplexLevel<T> {
    pub sigma: T,
    pub grid: PlankGrid<T>,
}

impl<T: Real> ComplexLevel<T> {
    fn new(r: T, sigma: T) -> Self {
        let d = T::lit(LARGE_D);
        let s2 = sigma * sigma;
        Self { sigma, grid: PlankGrid::new(T::one() / (r * sigma), (-s2, s2), d * sigma / r, d / (r * r)) }
    }

    /// Ends of plank `i` at height h ≤ σ²/16: the slice with half_l/4 ≤ |ℓ| ≤ half_l.
    pub fn ends(&self, i: usize, h: T) -> Result<ComplexSlice<T>> {
        let pl = self.grid.planks.get(i).ok_or(Error::UnknownBlock(i))?;
        if h.abs() > self.sigma * self.sigma * T::lit(ENDS_HEIGHT) {
            return Err(invalid("h", format!("{h} above σ²/16")));
        }
        pl.slice(h)
    }

    pub fn to_doc(&self, r: f64) -> ComplexFamilyDoc {
        ComplexFamilyDoc {
            version: DOC_VERSION,
            dim: 5,
            big_r: None,
            r: Some(r),
            sigma: Some(self.sigma.as_f64()),
            spacing: self.grid.spacing.as_f64(),
            planks: self.grid.planks.iter().map(|p| p.to_doc()).collect(),
        }
    }
}

/// CP_σ for σ = 1, 1/2, …, r⁻¹. The base grids are nested.
#[derive(Clone, Debug)]
pub struct ComplexLadder<T> {
    pub r: T,
    /// levels[j] has σ = 2^-j.
    pub levels: Vec<ComplexLevel<T>>,
}

pub fn build_complex_ladder<T: Real>(r: T) -> Result<ComplexLadder<T>> {
    let lr = log2_exact(r, "r", 1, 7)?;
    let levels = (0..=lr).map(|j| ComplexLevel::new(r, T::lit(2f64.powi(-(j as i32))))).collect();
    Ok(ComplexLadder { r, levels })
}

/// CP_σ at one scale.
pub fn build_complex_centered<T: Real>(r: T, sigma: T) -> Result<ComplexLevel<T>> {
    let lr = log2_exact(r, "r", 1, 7)?;
    let j = log2_exact(T::one() / sigma, "sigma", 0, lr)?;
    Ok(ComplexLevel::new(r, T::lit(2f64.powi(-(j as i32)))))
}

impl<T: Real> ComplexLadder<T> {
    pub fn level_of(&self, sigma: T) -> Result<usize> {
        let j = log2_exact(T::one() / sigma, "sigma", 0, self.levels.len() as u32 - 1)?;
        Ok(j as usize)
    }

    /// Ω_σ = ∪CP_σ \ ∪CP_{σ/2}, Ω_{r⁻¹} = ∪CP_{r⁻¹}.
    pub fn membership(&self, p: &[T; 5]) -> ShellMembership {
        let inside: Vec<bool> = self.levels.iter().map(|l| l.grid.contains_any(p, T::one())).collect();
        let last = inside.len() - 1;
        ShellMembership {
            in_union: (0..=last).filter(|&j| inside[j]).collect(),
            shells: (0..=last).filter(|&j| inside[j] && (j == last || !inside[j + 1])).collect(),
        }
    }

    pub fn in_shell(&self, p: &[T; 5], level: usize) -> bool {
        self.levels[level].grid.contains_any(p, T::one())
            && self.levels.get(level + 1).map_or(true, |l| !l.grid.contains_any(p, T::one()))
    }

    /// Number of Θ(σ, z) at `level` whose `s`-dilate contains p ∈ Ω_σ.
    pub fn overlap_count(&self, p: &[T; 5], level: usize, s: T) -> Result<usize> {
        if level >= self.levels.len() {
            return Err(invalid("level", "out of range"));
        }
        if !self.in_shell(p, level) {
            return Err(Error::Precondition(format!("point not in Ω_σ at level {level}")));
        }
        Ok(self.levels[level].grid.containing(p, s).len())
    }

    /// Fine cover Θ_{r⁻²} the ladder decomposes.
    pub fn fine(&self) -> PlankGrid<T> {
        fine_grid(self.r * self.r)
    }
}

/// A uniform point of θ̃ = θ − θ for a uniformly chosen θ, with its plank index.
pub fn sample_complex_difference<T: Real>(fine: &PlankGrid<T>, rg: &mut rng::Rng) -> (usize, [T; 5]) {
    let i = rg.random_range(0..fine.planks.len());
    let pl = &fine.planks[i];
    let mut u = || T::lit(rg.random_range(-1.0..=1.0));
    let two = T::lit(2.0);
    let a = u() * T::lit(0.5);
    let b = [u() * two * pl.half_b, u() * two * pl.half_b];
    let c = [u() * two * pl.half_c, u() * two * pl.half_c];
    let e = u() * two * pl.half_c;
    (i, pl.point(a, b, c, e))
}

/// Samples ∪θ̃_z over Θ_{r⁻²} and counts shells per sample.
pub fn verify_complex_shell_partition<T: Real>(lad: &ComplexLadder<T>, n: usize, seed: u64) -> Result<ShellReport> {
    let fine = lad.fine();
    let nl = lad.levels.len();
    let parts = rng::par_chunks(n, seed, rng::tag::SHELL_SAMPLES, 0x100, lad.r.as_f64() as u64, |rg, m| {
        let mut rep = ShellReport { n_samples: m, orphans: 0, multi: 0, per_shell: vec![0; nl] };
        for _ in 0..m {
            let (_, p) = sample_complex_difference(&fine, rg);
            let mem = lad.membership(&p);
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

/// Samples Ω_σ by rejection: uniform plank of CP_σ, uniform coordinates,
/// rejected if in ∪CP_{σ/2}.
pub fn sample_complex_omega<T: Real>(lad: &ComplexLadder<T>, level: usize, n: usize, seed: u64) -> Result<Vec<[T; 5]>> {
    let lv = lad.levels.get(level).ok_or_else(|| invalid("level", "out of range"))?;
    let coarser = lad.levels.get(level + 1);
    let parts = rng::par_chunks(n, seed, rng::tag::OVERLAP_SAMPLES, 0x100 | level as u64, lad.r.as_f64() as u64, |rg, m| {
        let mut out = Vec::with_capacity(m);
        let mut tries = 0usize;
        while out.len() < m && tries < 1000 * m {
            tries += 1;
            let pl = &lv.grid.planks[rg.random_range(0..lv.grid.planks.len())];
            let mut u = || T::lit(rg.random_range(-1.0..=1.0));
            let p = pl.point(
                u() * pl.a_hi,
                [u() * pl.half_b, u() * pl.half_b],
                [u() * pl.half_c, u() * pl.half_c],
                u() * pl.half_c,
            );
            if coarser.map_or(false, |c| c.grid.contains_any(&p, T::one())) {
                continue;
            }
            out.push(p);
        }
        out
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Overlap counts at dilation `s` over sampled Ω_σ points, split into "end"
/// (|h| ≤ σ²/16) and "bulk" rows. Rows carry k = 2 and block 0.
pub fn complex_overlap_profile<T: Real>(
    lad: &ComplexLadder<T>,
    level: usize,
    s: T,
    n: usize,
    seed: u64,
) -> Result<Vec<OverlapReport>> {
    let pts = sample_complex_omega(lad, level, n, seed)?;
    let lv = &lad.levels[level];
    let cut = lv.sigma * lv.sigma * T::lit(ENDS_HEIGHT);
    let counts: Vec<(bool, usize)> =
        pts.par_iter().map(|p| (p[4].abs() <= cut, lv.grid.containing(p, s).len())).collect();
    let mut out = Vec::new();
    for (name, end) in [("end", true), ("bulk", false)] {
        let mut v: Vec<usize> = counts.iter().filter(|c| c.0 == end).map(|c| c.1).collect();
        v.sort_unstable();
        let p99 = if v.is_empty() {
            0
        } else {
            v[((v.len() as f64 * 0.99).ceil() as usize).clamp(1, v.len()) - 1]
        };
        out.push(OverlapReport {
            k: 2,
            r: lad.r.as_f64(),
            sigma: lv.sigma.as_f64(),
            block: 0.0,
            dilation: s.as_f64(),
            h_class: name.to_string(),
            n: v.len(),
            max_count: v.last().copied().unwrap_or(0),
            p99_count: p99,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub r: f64,
    pub sigma: f64,
    pub dilation: f64,
    pub n_tested: usize,
    pub n_failed: usize,
}

/// Samples θ̃_z (z in Θ_{r⁻²}) at heights |h| ≤ σ²/16 that land in Ω_σ and checks
/// that each lies in the `s`-dilated ends of some Θ(σ, z′) with
/// |z − z′| ≤ 2r⁻¹σ⁻¹.
pub fn representation_check<T: Real>(
    lad: &ComplexLadder<T>,
    level: usize,
    s: T,
    n: usize,
    seed: u64,
) -> Result<RepresentationReport> {
    let lv = lad.levels.get(level).ok_or_else(|| invalid("level", "out of range"))?;
    let fine = lad.fine();
    let cut = lv.sigma * lv.sigma * T::lit(ENDS_HEIGHT);
    let reach = T::lit(2.0) / (lad.r * lv.sigma);
    let parts = rng::par_chunks(n, seed, rng::tag::OVERLAP_SAMPLES, 0x200 | level as u64, lad.r.as_f64() as u64, |rg, m| {
        let (mut tested, mut failed) = (0usize, 0usize);
        let mut tries = 0usize;
        while tested < m && tries < 200 * m {
            tries += 1;
            let (i, mut p) = sample_complex_difference(&fine, rg);
            // Rescale the height into the ends band, keeping the rest of the point.
            let h = T::lit(rg.random_range(-1.0..=1.0)) * cut;
            let a_old = p[4];
            let c = fine.planks[i].frame.c;
            for k in 0..5 {
                p[k] += (h - a_old) * c[k];
            }
            if !lad.in_shell(&p, level) {
                continue;
            }
            tested += 1;
            let z = fine.planks[i].z;
            let q = complex_part(&p);
            let h = p[4];
            let ok = lv.grid.planks.iter().any(|pl| {
                (pl.z - z).norm() <= reach * (T::one() + T::slack())
                    && pl.slice(h).map_or(false, |sl| sl.in_ends(&q, s))
            });
            failed += (!ok) as usize;
        }
        (tested, failed)
    });
    let (t, f) = parts.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(RepresentationReport {
        r: lad.r.as_f64(),
        sigma: lv.sigma.as_f64(),
        dilation: s.as_f64(),
        n_tested: t,
        n_failed: f,
    })
}

/// Sign alternation counts per component X ∈ {Re, Im}.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EndsSignReport {
    /// (C, C₁) lattice pairs tried.
    pub grid_points: usize,
    /// Pairs whose point lies in both ends.
    pub intersections: usize,
    /// Index 0 is Re, 1 is Im.
    pub tested: [usize; 2],
    pub alternating: [usize; 2],
    pub counterexamples: [usize; 2],
}

impl EndsSignReport {
    pub fn vacuous(&self) -> bool {
        self.intersections == 0
    }

    pub fn pass(&self) -> bool {
        self.counterexamples == [0, 0]
    }
}

/// Searches Ends(Θ(σ,z),h) ∩ Ends(Θ(σ,z′),h). The normal widths are far below the
/// tangential ones, so the intersection is parametrized by the normal
/// coefficients: C (about z) and C₁ (about z′) run over ENDS_C_GRID² lattices of
/// the disc of radius half_c, and ℓ is solved from C₁ = C₁⁰ + α′ℓ + β′C. A pair
/// is a witness when half_b/4 ≤ |ℓ|, |ℓ₁| ≤ half_b; every witness is checked for
/// sign(X(ℓ)) = −sign(X(ℓ₁)) whenever |X(ℓ)| ≥ half_b/4.
pub fn alternating_ends_check<T: Real>(z: C<T>, z2: C<T>, h: T, r: T, sigma: T) -> Result<EndsSignReport> {
    if !(r > T::one() && sigma > T::zero() && sigma <= T::one() && sigma * r >= T::one()) {
        return Err(invalid("sigma", format!("σ = {sigma}, r = {r}: need r⁻¹ ≤ σ ≤ 1")));
    }
    let sep = T::lit(ENDS_MIN_SEPARATION) / (r * sigma);
    if (z2 - z).norm() < sep {
        return Err(Error::Precondition(format!("|z − z′| = {} < 8r⁻¹σ⁻¹", (z2 - z).norm())));
    }
    if !(h.abs() <= sigma * sigma * T::lit(ENDS_HEIGHT)) {
        return Err(Error::Precondition(format!("h = {h} > σ²/16")));
    }
    let d = T::lit(LARGE_D);
    let hb = d * sigma / r;
    let hc = d / (r * r);
    let (g, g2) = (gamma_c(z), gamma_c(z2));
    let (t, t2) = (gamma_dot(z), gamma_dot(z2));
    let (nc, nc2) = (normal_c(z), normal_c(z2));
    let (nt2, nn2) = (hnorm2(&t2), hnorm2(&nc2));
    let d0 = [(g[0] - g2[0]) * h, (g[1] - g2[1]) * h];
    let l0 = hdot(&d0, &t2) / nt2;
    let c0 = hdot(&d0, &nc2) / nn2;
    let (al, bl) = (hdot(&t, &t2) / nt2, hdot(&nc, &t2) / nt2);
    let (ac, bc) = (hdot(&t, &nc2) / nn2, hdot(&nc, &nc2) / nn2);
    let tol = T::one() + T::slack();
    let quarter = hb / T::lit(4.0);
    let m = ENDS_C_GRID;
    let mut disc: Vec<C<T>> = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let x = T::lit(2.0 * i as f64 / (m - 1) as f64 - 1.0);
            let y = T::lit(2.0 * j as f64 / (m - 1) as f64 - 1.0);
            if x * x + y * y <= T::one() + T::slack() {
                disc.push(C::new(x * hc, y * hc));
            }
        }
    }
    let in_annulus = |v: T| v * tol >= quarter && v <= hb * tol;
    let mut rep = EndsSignReport::default();
    for &cc in &disc {
        for &c1 in &disc {
            rep.grid_points += 1;
            let l = (c1 - c0 - bc * cc) / ac;
            let l1 = l0 + al * l + bl * cc;
            if !in_annulus(l.norm()) || !in_annulus(l1.norm()) {
                continue;
            }
            rep.intersections += 1;
            for (x, (a, b)) in [(l.re, l1.re), (l.im, l1.im)].into_iter().enumerate() {
                if a.abs() >= quarter {
                    rep.tested[x] += 1;
                    if a * b < T::zero() {
                        rep.alternating[x] += 1;
                    } else {
                        rep.counterexamples[x] += 1;
                    }
                }
            }
        }
    }
    Ok(rep)
}

/// One admissible configuration of the alternating-ends sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndsConfig {
    pub r: f64,
    pub sigma: f64,
    pub z: [f64; 2],
    pub z2: [f64; 2],
    pub h: f64,
    pub report: EndsSignReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndsSweepReport {
    pub attempts: usize,
    pub vacuous: usize,
    /// Configurations with nonempty intersections.
    pub configs: Vec<EndsConfig>,
}

impl EndsSweepReport {
    pub fn counterexamples(&self) -> usize {
        self.configs.iter().map(|c| c.report.counterexamples[0] + c.report.counterexamples[1]).sum()
    }
}

/// Scales for the sweep. With D = 30 the ends of Θ(σ,z) and Θ(σ,z′) at h ≤ σ²/16
/// can only meet when h·|Δz|/2 ≳ half_b/4, i.e. |Δz| ≳ 240·r⁻¹σ⁻¹, which needs
/// rσ ≳ 85 inside [−1, 1]².
pub const SWEEP_SCALES: [(f64, f64); 5] =
    [(256.0, 1.0), (256.0, 0.5), (512.0, 1.0), (512.0, 0.5), (1024.0, 0.25)];

fn sweep_attempt<T: Real>(rg: &mut rng::Rng) -> Option<(T, T, C<T>, C<T>, T)> {
    let (r, sigma) = SWEEP_SCALES[rg.random_range(0..SWEEP_SCALES.len())];
    let n = (r * sigma) as i64;
    let pick = |rg: &mut rng::Rng| (rg.random_range(-n..=n), rg.random_range(-n..=n));
    let (a, b) = (pick(rg), pick(rg));
    let step = 1.0 / (r * sigma);
    let z = C::new(a.0 as f64 * step, a.1 as f64 * step);
    let z2 = C::new(b.0 as f64 * step, b.1 as f64 * step);
    let dz = (z2 - z).norm();
    if dz < ENDS_MIN_SEPARATION * step {
        return None;
    }
    let hb = LARGE_D * sigma / r;
    let lo = hb / (4.0 * dz);
    let hi = (sigma * sigma * ENDS_HEIGHT).min(2.0 * hb / dz);
    if lo >= hi {
        return None;
    }
    let h = rg.random_range(lo..=hi);
    let c = |w: Complex<f64>| C::new(T::lit(w.re), T::lit(w.im));
    Some((T::lit(r), T::lit(sigma), c(z), c(z2), T::lit(h)))
}

/// Random admissible (z, z′, h, σ) on the grids of [`SWEEP_SCALES`] until
/// `n_configs` have nonempty end intersections or `max_attempts` are used.
/// Attempt i draws from its own stream, so results do not depend on batching.
pub fn alternating_ends_sweep<T: Real>(n_configs: usize, max_attempts: usize, seed: u64) -> Result<EndsSweepReport> {
    const BATCH: usize = 64;
    let mut rep = EndsSweepReport { attempts: 0, vacuous: 0, configs: Vec::new() };
    while rep.configs.len() < n_configs && rep.attempts < max_attempts {
        let start = rep.attempts;
        let end = (start + BATCH).min(max_attempts);
        let batch: Vec<Option<EndsConfig>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut rg = rng::stream(seed, rng::label(rng::tag::ENDS_CONFIGS, i as u64, (i >> 16) as u64, 0));
                let (r, sigma, z, z2, h) = sweep_attempt::<T>(&mut rg)?;
                let report = alternating_ends_check(z, z2, h, r, sigma).ok()?;
                Some(EndsConfig {
                    r: r.as_f64(),
                    sigma: sigma.as_f64(),
                    z: [z.re.as_f64(), z.im.as_f64()],
                    z2: [z2.re.as_f64(), z2.im.as_f64()],
                    h: h.as_f64(),
                    report,
                })
            })
            .collect();
        for cfg in batch {
            if rep.configs.len() >= n_configs {
                break;
            }
            rep.attempts += 1;
            match cfg {
                Some(c) if !c.report.vacuous() => rep.configs.push(c),
                Some(_) => rep.vacuous += 1,
                None => {}
            }
        }
    }
    Ok(rep)
}

/// {γ(z) + ℓ·γ̇(z) + c·∧γ̇(z) : |ℓ| ≤ half_l, |c| ≤ half_c} ⊂ ℂ².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexRect<T> {
    pub z: C<T>,
    pub half_l: T,
    pub half_c: T,
}

impl<T: Real> ComplexRect<T> {
    fn basis(&self) -> ([C<T>; 2], [C<T>; 2], [C<T>; 2]) {
        let t = gamma_dot(self.z);
        (gamma_c(self.z), t, wedge(&t))
    }

    pub fn coords(&self, q: &[C<T>; 2]) -> (C<T>, C<T>) {
        let (g, t, w) = self.basis();
        let d = csub(q, &g);
        (hdot(&d, &t) / hnorm2(&t), hdot(&d, &w) / hnorm2(&w))
    }

    pub fn contains(&self, q: &[C<T>; 2], s: T) -> bool {
        let (l, c) = self.coords(q);
        let s = s * (T::one() + T::slack());
        l.norm() <= s * self.half_l && c.norm() <= s * self.half_c
    }

    /// Smallest D with other ⊆ D·self (dilation about the center γ(z)). The
    /// coordinates are complex-affine in (ℓ, c) and ℓ, c range over discs, so
    /// the maximum modulus is attained with aligned phases.
    pub fn required_dilation(&self, other: &ComplexRect<T>) -> T {
        let (g, t, w) = self.basis();
        let (g1, t1, w1) = other.basis();
        let (nt, nw) = (hnorm2(&t), hnorm2(&w));
        let d = csub(&g1, &g);
        let reach = |v: &[C<T>; 2], n: T| {
            (hdot(&d, v) / n).norm()
                + (hdot(&t1, v) / n).norm() * other.half_l
                + (hdot(&w1, v) / n).norm() * other.half_c
        };
        (reach(&t, nt) / self.half_l).max(reach(&w, nw) / self.half_c)
    }
}

/// Covering of 𝒩_δ(γ_{2,ℂ}) ⊂ ℂ² by rectangles over δ^{1/2}(ℤ × ℤ) ∩ [−1, 1]².
#[derive(Clone, Debug)]
pub struct ComplexCurveCover<T> {
    pub delta: T,
    pub spacing: T,
    pub n: i64,
    pub rects: Vec<ComplexRect<T>>,
}

pub fn build_complex_curve_cover<T: Real>(delta: T) -> Result<ComplexCurveCover<T>> {
    if !(delta > T::lit(2f64.powi(-24)) && delta <= T::one()) {
        return Err(invalid("delta", format!("{delta} outside (2^-24, 1]")));
    }
    let h = delta.sqrt();
    let d = T::lit(SMALL_D);
    let n = (T::one() / h * (T::one() + T::slack())).floor().to_i64().unwrap_or(0);
    let mut rects = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let z = C::new(T::lit(i as f64) * h, T::lit(j as f64) * h);
            rects.push(ComplexRect { z, half_l: d * h, half_c: d * delta });
        }
    }
    Ok(ComplexCurveCover { delta, spacing: h, n, rects })
}

impl<T: Real> ComplexCurveCover<T> {
    /// Rectangle with the nearest base point (ties away from zero), clamped.
    pub fn assign(&self, z: C<T>) -> usize {
        let r = |x: T| (x / self.spacing).round().to_i64().unwrap_or(0).clamp(-self.n, self.n);
        ((r(z.re) + self.n) * (2 * self.n + 1) + r(z.im) + self.n) as usize
    }
}

/// Orthonormal frame of a complex plank: Gram–Schmidt of (𝐜, 𝐭_s, 𝐭_t, 𝐧_s, 𝐧_t).
pub fn plank5_frame<T: Real>(p: &Plank5<T>) -> [[T; 5]; 5] {
    let f = &p.frame;
    gram_schmidt(&[f.c, f.ts, f.tt, f.ns, f.nt])
}

fn plank5_extents<T: Real>(p: &Plank5<T>, axes: &[[T; 5]; 5]) -> [T; 5] {
    let v = p.frame.vectors();
    let w = [p.a_half(), p.half_b, p.half_b, p.half_c, p.half_c, p.half_c];
    let mut e = [T::zero(); 5];
    for j in 0..5 {
        for g in 0..6 {
            e[j] += (dot(&v[g], &axes[j]) * w[g]).abs();
        }
    }
    e
}

/// Dual box θ*: reciprocal half-extents along θ's frame.
pub fn polar_box5<T: Real>(p: &Plank5<T>) -> OrthoBox<T, 5> {
    let axes = plank5_frame(p);
    let e = plank5_extents(p, &axes);
    OrthoBox { axes, half: e.map(|x| T::one() / x) }
}

/// Envelopes U_{τ,r²} for τ ∈ Θ_{s²} over a fine complex cover.
#[derive(Clone, Debug)]
pub struct ComplexEnvelopes<T> {
    pub s: T,
    pub taus: Vec<Plank5<T>>,
    pub boxes: Vec<OrthoBox<T, 5>>,
    /// Fine plank indices θ ⊆ τ, per τ.
    pub members: Vec<Vec<usize>>,
}

/// τ ∈ Θ_{s²} on the grid s(ℤ × ℤ) ∩ [−1, 1]²; each fine θ goes to the τ with
/// nearest base point; U_τ is the box in τ's frame enclosing every θ*.
pub fn complex_envelopes<T: Real>(fine: &ComplexCover<T>, s: T) -> Result<ComplexEnvelopes<T>> {
    let r = fine.big_r.sqrt();
    if !(s * r >= T::one() - T::slack() && s <= T::one()) {
        return Err(invalid("s", format!("{s} outside [r⁻¹, 1]")));
    }
    let tau_grid = fine_grid(T::one() / (s * s));
    let mut members = vec![Vec::new(); tau_grid.planks.len()];
    for (i, th) in fine.grid.planks.iter().enumerate() {
        members[tau_grid.nearest(th.z)].push(i);
    }
    let boxes = tau_grid
        .planks
        .iter()
        .zip(&members)
        .map(|(tau, mem)| {
            let axes = plank5_frame(tau);
            let mut half = [T::zero(); 5];
            for &i in mem {
                let h = polar_box5(&fine.grid.planks[i]).enclosing_half(&axes);
                for j in 0..5 {
                    half[j] = half[j].max(h[j]);
                }
            }
            OrthoBox { axes, half }
        })
        .collect();
    Ok(ComplexEnvelopes { s, taus: tau_grid.planks, boxes, members })
}

/// Largest deviation from F(λγ̇) = c𝐭_s + d𝐭_t and F(λ𝐧_ℂ) = c𝐧_s + d𝐧_t over
/// `n` random (z, λ = c + id) with z ∈ [−1, 1]², c, d ∈ [−2, 2].
pub fn frame_identity_error(n: usize, seed: u64) -> f64 {
    let mut rg = rng::stream(seed, rng::label(rng::tag::COMPLEX_SAMPLES, 0xfff0, 0, 0));
    let mut worst = 0.0f64;
    for _ in 0..n {
        let z: C<f64> = C::new(rg.random_range(-1.0..=1.0), rg.random_range(-1.0..=1.0));
        let (c, d): (f64, f64) = (rg.random_range(-2.0..=2.0), rg.random_range(-2.0..=2.0));
        let lam = C::new(c, d);
        let f = frame(z);
        let g = gamma_dot(z);
        let nc = normal_c(z);
        let ig = embed(&[lam * g[0], lam * g[1]]);
        let inn = embed(&[lam * nc[0], lam * nc[1]]);
        for k in 0..4 {
            worst = worst.max((ig[k] - (c * f.ts[k] + d * f.tt[k])).abs());
            worst = worst.max((inn[k] - (c * f.ns[k] + d * f.nt[k])).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cz(s: f64, t: f64) -> C<f64> {
        C::new(s, t)
    }

    #[test]
    fn frame_is_orthogonal_with_common_norm() {
        for &(s, t) in &[(0.0, 0.0), (0.3, -0.7), (-1.0, 1.0), (0.125, 0.5)] {
            let f = frame(cz(s, t));
            let v = [f.ts, f.tt, f.ns, f.nt];
            let n = 1.0 + 4.0 * (s * s + t * t);
            for i in 0..4 {
                for j in 0..4 {
                    let e = if i == j { n } else { 0.0 };
                    assert!((dot(&v[i], &v[j]) - e).abs() < 1e-12);
                }
                assert_eq!(v[i][4], 0.0);
            }
            let g = dot4(&f.c, &f.ts);
            assert!((g - s * (1.0 + 2.0 * (s * s + t * t))).abs() < 1e-12);
            assert!((dot4(&f.c, &f.ns) + (s * s - t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_at_origin() {
        let f = frame(cz(0.0, 0.0));
        assert_eq!(f.ts, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.ns, [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.c, [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normals_are_images_of_the_complex_normal() {
        let z = cz(0.4, -0.3);
        let f = frame(z);
        let n = normal_c(z);
        let i = C::new(0.0, 1.0);
        let a = embed(&n);
        let b = embed(&[n[0] * i, n[1] * i]);
        for k in 0..4 {
            assert!((a[k] - f.ns[k]).abs() < 1e-15 && (b[k] - f.nt[k]).abs() < 1e-15);
        }
        let w = wedge(&gamma_dot(z));
        assert!((w[0] - n[0]).norm() < 1e-15 && (w[1] - n[1]).norm() < 1e-15);
        assert!(hdot(&gamma_dot(z), &n).norm() < 1e-15);
    }

    #[test]
    fn r256_grid() {
        let cov = build_complex_cover(256.0).unwrap();
        assert_eq!(cov.grid.spacing, 1.0 / 16.0);
        assert_eq!(cov.grid.side(), 33);
        assert_eq!(cov.grid.planks.len(), 33 * 33);
        assert_eq!(cov.grid.planks[0].half_b, 3.0 / 16.0);
        assert_eq!(cov.grid.planks[0].half_c, 3.0 / 256.0);
        assert!(build_complex_cover(8.0).is_err());
        assert!(build_complex_cover(2f64.powi(17)).is_err());
        assert!(build_complex_cover(100.0).is_err());
    }

    #[test]
    fn odd_exponent_grid_stays_inside_square() {
        let cov = build_complex_cover(32.0).unwrap();
        let h = 32f64.sqrt().recip();
        assert_eq!(cov.grid.n, (1.0 / h).floor() as i64);
        assert!(cov.grid.n as f64 * h <= 1.0);
    }

    #[test]
    fn centered_spacing_and_widths() {
        let l = build_complex_centered(16.0, 1.0).unwrap();
        assert_eq!(l.grid.spacing, 1.0 / 16.0);
        assert_eq!(l.grid.planks[0].half_b, 30.0 / 16.0);
        let l = build_complex_centered(16.0, 0.25).unwrap();
        assert_eq!(l.grid.spacing, 0.25);
        assert_eq!(l.grid.planks[0].a_hi, 1.0 / 16.0);
        assert!(build_complex_centered(16.0, 1.0 / 32.0).is_err());
        assert!(build_complex_centered(16.0, 0.3).is_err());
    }

    #[test]
    fn fine_bases_have_close_centered_bases() {
        let r = 16.0;
        let fine = fine_grid(r * r);
        for j in 0..=4 {
            let sigma = 2f64.powi(-j);
            let l = build_complex_centered(r, sigma).unwrap();
            let bound = 2.0 / (r * sigma);
            for p in &fine.planks {
                let q = &l.grid.planks[l.grid.nearest(p.z)];
                assert!((q.z - p.z).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn membership_matches_required_dilation_and_full_scan() {
        let cov = build_complex_cover(64.0).unwrap();
        let mut rg = rng::stream(3, 0);
        for _ in 0..400 {
            let (i, p) = sample_complex_difference(&cov.grid, &mut rg);
            let mut p = p;
            p[4] += 0.75;
            let _ = i;
            let fast = cov.grid.containing(&p, 1.0);
            let slow: Vec<usize> =
                (0..cov.grid.planks.len()).filter(|&k| cov.grid.planks[k].contains(&p, 1.0)).collect();
            assert_eq!(fast, slow);
            for k in 0..cov.grid.planks.len() {
                let d = cov.grid.planks[k].required_dilation(&p);
                assert_eq!(d <= 1.0 + 1e-9, cov.grid.planks[k].contains(&p, 1.0 + 1e-9));
            }
        }
        let lad = build_complex_ladder(8.0).unwrap();
        for _ in 0..200 {
            let (_, p) = sample_complex_difference(&lad.fine(), &mut rg);
            for lv in &lad.levels {
                for s in [1.0, 4.0, 10.0] {
                    let fast = lv.grid.containing(&p, s);
                    let slow: Vec<usize> =
                        (0..lv.grid.planks.len()).filter(|&k| lv.grid.planks[k].contains(&p, s)).collect();
                    assert_eq!(fast, slow);
                }
            }
        }
    }

    #[test]
    fn complex_cover_samples_are_covered() {
        let cov = build_complex_cover(256.0).unwrap();
        let rep = verify_complex_cover(&cov, 20_000, 1).unwrap();
        assert!(rep.complete());
    }

    #[test]
    fn axis_point_in_top_union() {
        let lad = build_complex_ladder(16.0).unwrap();
        let z = cz(0.25, -0.5);
        let p = frame(z).c.map(|x| 0.75 * x);
        assert!(lad.levels[0].grid.contains_any(&p, 1.0));
    }

    #[test]
    fn near_curve_low_point_is_not_in_the_shell() {
        let lad = build_complex_ladder(16.0).unwrap();
        let (r, sigma) = (16.0, 0.5);
        let j = lad.level_of(sigma).unwrap();
        let h = sigma * sigma / 4.0;
        let z = cz(0.3, 0.2);
        let g = gamma_c(z);
        let n = normal_c(z);
        let off = 0.5 / (r * r) / hnorm2(&n).sqrt();
        let q = [g[0] * h + n[0] * off, g[1] * h + n[1] * off];
        let p = [q[0].re, q[0].im, q[1].re, q[1].im, h];
        assert!(lad.levels[j + 1].grid.contains_any(&p, 1.0));
        assert!(!lad.membership(&p).shells.contains(&j));
    }

    #[test]
    fn constructed_end_point_is_in_the_shell() {
        let r = 64.0;
        let lad = build_complex_ladder(r).unwrap();
        for j in 0..3 {
            let lv = &lad.levels[j];
            let sigma = lv.sigma;
            let h = sigma * sigma / 16.0;
            let idx = lv.grid.nearest(cz(0.0, 0.0));
            let sl = lv.ends(idx, h).unwrap();
            let q = sl.point(C::new(0.9 * sl.half_l, 0.0), C::new(0.0, 0.0));
            let p = [q[0].re, q[0].im, q[1].re, q[1].im, h];
            let slow: Vec<bool> = lad
                .levels
                .iter()
                .map(|l| l.grid.planks.iter().any(|pl| pl.contains(&p, 1.0)))
                .collect();
            let in_shell = slow[j] && slow.get(j + 1).map_or(true, |x| !x);
            assert!(in_shell, "level {j}");
            assert_eq!(lad.membership(&p).shells, vec![j]);
        }
    }

    #[test]
    fn shell_partition_small() {
        let lad = build_complex_ladder(8.0).unwrap();
        let rep = verify_complex_shell_partition(&lad, 4000, 5).unwrap();
        assert_eq!(rep.n_samples, 4000);
        assert!(rep.partition(), "{rep:?}");
    }

    #[test]
    fn ends_and_slices_are_consistent() {
        let lv = build_complex_centered(16.0, 0.5).unwrap();
        assert!(lv.ends(0, 0.5).is_err());
        let sl = lv.ends(5, 0.01).unwrap();
        let l = C::new(0.1, -0.05);
        let c = C::new(0.01, 0.02);
        let (l2, c2) = sl.coords(&sl.point(l, c));
        assert!((l2 - l).norm() < 1e-14 && (c2 - c).norm() < 1e-14);
        let q = sl.point(C::new(sl.half_l * 0.5, 0.0), C::new(0.0, 0.0));
        assert!(sl.in_ends(&q, 1.0));
        assert!(!sl.in_ends(&sl.center, 1.0));
    }

    #[test]
    fn symmetric_real_pair_alternates() {
        let (r, sigma) = (256.0, 1.0);
        let hb = LARGE_D * sigma / r;
        let w = 1.0;
        let h = 0.05;
        assert!(h <= sigma * sigma / 16.0 && h * w >= hb / 4.0);
        let rep = alternating_ends_check(cz(w, 0.0), cz(-w, 0.0), h, r, sigma).unwrap();
        assert!(!rep.vacuous());
        assert!(rep.tested[0] > 0);
        assert!(rep.pass(), "{rep:?}");
        // Closed form: ℓ ≈ hΔz/2 = −h·w on the z side.
        let (z, z2) = (cz(w, 0.0), cz(-w, 0.0));
        let l = (z2 - z) * (h / 2.0);
        assert!((l.re + h * w).abs() < 1e-15 && l.re.abs() >= hb / 4.0);
    }

    #[test]
    fn ends_check_rejects_close_or_high_pairs() {
        let z = cz(0.1, 0.1);
        assert!(matches!(alternating_ends_check(z, z, 0.001, 256.0, 1.0), Err(Error::Precondition(_))));
        assert!(matches!(
            alternating_ends_check(z, cz(-0.5, 0.1), 0.2, 256.0, 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn ends_sweep_small() {
        let rep = alternating_ends_sweep::<f64>(20, 20_000, 9).unwrap();
        assert_eq!(rep.configs.len(), 20);
        assert_eq!(rep.counterexamples(), 0);
    }

    #[test]
    fn complex_rect_dilation() {
        let cov = build_complex_curve_cover(1.0 / 64.0).unwrap();
        assert_eq!(cov.spacing, 0.125);
        let a = cov.rects[cov.assign(cz(0.25, 0.125))];
        assert!((a.required_dilation(&a) - 1.0).abs() < 1e-12);
        let b = cov.rects[cov.assign(cz(0.375, 0.125))];
        let d = a.required_dilation(&b);
        let mut rg = rng::stream(1, 1);
        for _ in 0..2000 {
            let u = |rg: &mut rng::Rng| rg.random_range(-1.0..=1.0f64);
            let l = C::new(u(&mut rg), u(&mut rg));
            let c = C::new(u(&mut rg), u(&mut rg));
            let l = if l.norm() > 1.0 { l / l.norm() } else { l } * b.half_l;
            let c = if c.norm() > 1.0 { c / c.norm() } else { c } * b.half_c;
            let g = gamma_c(b.z);
            let t = gamma_dot(b.z);
            let w = wedge(&t);
            let q = [g[0] + l * t[0] + c * w[0], g[1] + l * t[1] + c * w[1]];
            assert!(a.contains(&q, d * (1.0 + 1e-9)));
        }
        for i in -40..=40 {
            for j in -40..=40 {
                let z = cz(i as f64 / 40.0, j as f64 / 40.0);
                let rect = cov.rects[cov.assign(z)];
                assert!(rect.contains(&gamma_c(z), 1.0));
            }
        }
    }

    #[test]
    fn envelopes_hold_member_polar_boxes() {
        let cov = build_complex_cover(64.0).unwrap();
        for s in [0.125, 0.25, 0.5, 1.0] {
            let env = complex_envelopes(&cov, s).unwrap();
            let total: usize = env.members.iter().map(|m| m.len()).sum();
            assert_eq!(total, cov.grid.planks.len());
            for (b, mem) in env.boxes.iter().zip(&env.members) {
                for &i in mem {
                    let pb = polar_box5(&cov.grid.planks[i]);
                    let mut corner = [0.0; 5];
                    for m in 0..5 {
                        for k in 0..5 {
                            corner[k] += pb.axes[m][k] * pb.half[m];
                        }
                    }
                    assert!(b.contains(&corner));
                }
            }
        }
        assert!(complex_envelopes(&cov, 0.0625).is_err());
    }

    #[test]
    fn frame_identity_sweep() {
        assert!(frame_identity_error(1000, 1) < 1e-12);
    }

    proptest! {
        #[test]
        fn frame_identity(c in -2.0..2.0f64, d in -2.0..2.0f64, s in -1.0..1.0f64, t in -1.0..1.0f64) {
            let z = cz(s, t);
            let g = gamma_dot(z);
            let lam = C::new(c, d);
            let img = embed(&[lam * g[0], lam * g[1]]);
            let f = frame(z);
            for k in 0..4 {
                prop_assert!((img[k] - (c * f.ts[k] + d * f.tt[k])).abs() < 1e-12);
            }
        }

        #[test]
        fn plank_point_round_trips(s in -1.0..1.0f64, t in -1.0..1.0f64, a in 0.5..1.0f64,
                                   b1 in -1.0..1.0f64, b2 in -1.0..1.0f64, c1 in -1.0..1.0f64) {
            let p = Plank5::new(cz(s, t), (0.5, 1.0), 0.1, 0.01);
            let q = p.point(a, [b1 * 0.1, b2 * 0.1], [c1 * 0.01, 0.0], 0.0);
            prop_assert!(p.contains(&q, 1.0));
            let d = p.required_dilation(&q);
            prop_assert!(d <= 1.0 + 1e-9);
            let far = p.point(a, [1.5 * 0.1, 0.0], [0.0, 0.0], 0.0);
            prop_assert!(!p.contains(&far, 1.0));
        }
    }
}
