//! Quadruple solutions of ξ₁+ξ₂ = ξ₃+ξ₄, ξ₁^k+ξ₂^k = ξ₃^k+ξ₄^k + O(δ) on a dyadic
//! grid, and the essential biorthogonality check against a curve covering.
//!
//! Grid points are integer multiples of a dyadic step, so the linear constraint and
//! the residual are evaluated exactly in integer arithmetic.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex_cone::{build_complex_curve_cover, ComplexCurveCover, C};
use crate::curve_cover::Covering2;
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

pub const DEFAULT_TOL: f64 = 4.0;
pub const DEFAULT_BUDGET: u128 = 1 << 32;
/// Dilations tested by [`minimal_dilation`].
pub const D_PROFILE: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 8.0, 10.0, 16.0, 32.0, 64.0];
/// C = C′ in [`comparability_oracle`].
pub const COMPARABILITY_C: f64 = 4.0;

/// A canonical representative ξ₁ ≥ ξ₂, ξ₃ ≥ ξ₄, ξ₁ ≥ ξ₃ of a solution orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSolution<T> {
    pub xi: [T; 4],
    /// Grid indices, ξ_i = idx_i · step.
    pub idx: [u32; 4],
    pub residual: T,
}

/// Validated dyadic grid {0, step, …, 1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicGrid {
    /// step = 2^-m
    pub m: u32,
}

impl DyadicGrid {
    pub fn from_step(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(invalid("grid_step", format!("{step} outside (0, 1]")));
        }
        let m = (-step.log2()).round();
        if (2f64.powf(-m) - step).abs() > 0.0 || m > 20.0 {
            return Err(invalid("grid_step", format!("{step} is not 2^-m with m ≤ 20")));
        }
        Ok(Self { m: m as u32 })
    }

    pub fn n(&self) -> u32 {
        1 << self.m
    }

    pub fn step(&self) -> f64 {
        2f64.powi(-(self.m as i32))
    }
}

fn check_real_args(k: u32, delta: f64, step: f64, tol: f64) -> Result<DyadicGrid> {
    if k < 2 {
        return Err(invalid("k", format!("{k} < 2")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} outside (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("{tol} ≤ 0")));
    }
    let grid = DyadicGrid::from_step(step)?;
    if step < delta.sqrt() / 16.0 {
        return Err(invalid("grid_step", format!("{step} < δ^(1/2)/16")));
    }
    Ok(grid)
}

/// Visits every canonical solution on the grid. `f` receives the indices and the
/// integer residual Σ±i^k (in units of step^k). Calls arrive grouped by ξ₁ in
/// ascending order.
pub fn visit_quadruples(
    k: u32,
    delta: f64,
    grid_step: f64,
    tol: f64,
    budget: u128,
    mut f: impl FnMut([u32; 4], i128),
) -> Result<()> {
    let grid = check_real_args(k, delta, grid_step, tol)?;
    let n = grid.n() as u128 + 1;
    let needed = n * n * n;
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    let pw: Vec<i128> = (0..=grid.n()).map(|i| (i as i128).pow(k)).collect();
    let scale = 2f64.powi((grid.m * k) as i32);
    let thr = (tol * delta * scale).floor();
    let thr = if thr >= i128::MAX as f64 { i128::MAX } else { thr as i128 };
    let per_row: Vec<Vec<([u32; 4], i128)>> = (0..=grid.n())
        .into_par_iter()
        .map(|i1| {
            let mut out = Vec::new();
            for i3 in 0..=i1 {
                for i4 in (i1 - i3)..=i3 {
                    let i2 = i3 + i4 - i1;
                    let r = pw[i1 as usize] + pw[i2 as usize] - pw[i3 as usize] - pw[i4 as usize];
                    if r.abs() <= thr {
                        out.push(([i1, i2, i3, i4], r));
                    }
                }
            }
            out
        })
        .collect();
    for row in per_row {
        for (idx, r) in row {
            f(idx, r);
        }
    }
    Ok(())
}

pub fn enumerate_quadruples<T: Real>(
    k: u32,
    delta: T,
    grid_step: T,
    tol: T,
) -> Result<Vec<QuadSolution<T>>> {
    enumerate_quadruples_with(k, delta, grid_step, tol, DEFAULT_BUDGET)
}

pub fn enumerate_quadruples_with<T: Real>(
    k: u32,
    delta: T,
    grid_step: T,
    tol: T,
    budget: u128,
) -> Result<Vec<QuadSolution<T>>> {
    let step = grid_step.as_f64();
    let unit = step.powi(k as i32);
    let mut out = Vec::new();
    visit_quadruples(k, delta.as_f64(), step, tol.as_f64(), budget, |idx, r| {
        out.push(QuadSolution {
            xi: idx.map(|i| T::lit(i as f64 * step)),
            idx,
            residual: T::lit(r.unsigned_abs() as f64 * unit),
        });
    })?;
    Ok(out)
}

/// Smallest D with (θ₁ ⊆ Dθ₃ ∧ θ₂ ⊆ Dθ₄) ∨ (θ₁ ⊆ Dθ₄ ∧ θ₂ ⊆ Dθ₃), where `need(a, b)`
/// is the dilation making θ_a ⊆ D·θ_b.
fn pairing_dilation<T: Real>(t: [usize; 4], need: impl Fn(usize, usize) -> T) -> T {
    let straight = need(t[0], t[2]).max(need(t[1], t[3]));
    let crossed = need(t[0], t[3]).max(need(t[1], t[2]));
    straight.min(crossed)
}

/// Dilation needed for a solution to be essentially biorthogonal, checked in both
/// directions of the pair swap since containment is not symmetric.
pub fn solution_dilation<T: Real>(cov: &Covering2<T>, xi: &[T; 4]) -> T {
    let x0 = cov.origin_radius();
    if xi.iter().all(|x| x.abs() <= x0) {
        return T::one();
    }
    let t = xi.map(|x| cov.assign_theta(x));
    let need = |a: usize, b: usize| cov.rects[b].required_dilation(&cov.rects[a]);
    let fwd = pairing_dilation(t, need);
    let bwd = pairing_dilation([t[2], t[3], t[0], t[1]], need);
    fwd.max(bwd).max(T::one())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiorthReport {
    pub k: u32,
    pub delta: f64,
    pub grid_step: f64,
    pub tol: f64,
    pub n_solutions: u64,
    /// (D, violations) in increasing D.
    pub violations: Vec<(f64, u64)>,
    /// Smallest tested D with zero violations.
    pub d_min: Option<f64>,
    /// Largest dilation any single solution needs.
    pub max_needed: f64,
}

impl BiorthReport {
    pub fn violations_at(&self, d: f64) -> Option<u64> {
        self.violations.iter().find(|(x, _)| *x == d).map(|(_, v)| *v)
    }
}

/// Violations of essential biorthogonality at dilation `d`.
pub fn check_biorthogonality<T: Real>(
    solutions: &[QuadSolution<T>],
    cov: &Covering2<T>,
    d: T,
) -> u64 {
    let lim = d * (T::one() + T::slack());
    solutions
        .par_iter()
        .filter(|s| solution_dilation(cov, &s.xi) > lim)
        .count() as u64
}

fn profile_report<T: Real>(
    needs: &[T],
    k: u32,
    delta: f64,
    grid_step: f64,
    tol: f64,
    ds: &[f64],
) -> BiorthReport {
    let violations: Vec<(f64, u64)> = ds
        .iter()
        .map(|&d| {
            let lim = T::lit(d) * (T::one() + T::slack());
            (d, needs.iter().filter(|&&x| x > lim).count() as u64)
        })
        .collect();
    BiorthReport {
        k,
        delta,
        grid_step,
        tol,
        n_solutions: needs.len() as u64,
        d_min: violations.iter().find(|(_, v)| *v == 0).map(|(d, _)| *d),
        max_needed: needs.iter().fold(1.0, |m, x| m.max(x.as_f64())),
        violations,
    }
}

/// Full violation profile over [`D_PROFILE`] against the default covering.
pub fn minimal_dilation<T: Real>(k: u32, delta: T, grid_step: T) -> Result<BiorthReport> {
    let cov = crate::curve_cover::build_curve_cover(k, delta)?;
    minimal_dilation_with(&cov, grid_step, T::lit(DEFAULT_TOL))
}

pub fn minimal_dilation_with<T: Real>(
    cov: &Covering2<T>,
    grid_step: T,
    tol: T,
) -> Result<BiorthReport> {
    let sols = enumerate_quadruples(cov.k(), cov.delta, grid_step, tol)?;
    let needs: Vec<T> = sols.par_iter().map(|s| solution_dilation(cov, &s.xi)).collect();
    Ok(profile_report(
        &needs,
        cov.k(),
        cov.delta.as_f64(),
        grid_step.as_f64(),
        tol.as_f64(),
        &D_PROFILE,
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub n_enumerated: u64,
    pub n_factored: u64,
    pub only_enumerated: u64,
    pub only_factored: u64,
}

impl FactorizationReport {
    pub fn agrees(&self) -> bool {
        self.only_enumerated == 0 && self.only_factored == 0
    }
}

fn canonical(mut t: [u32; 4]) -> [u32; 4] {
    if t[0] < t[1] {
        t.swap(0, 1);
    }
    if t[2] < t[3] {
        t.swap(2, 3);
    }
    if t[0] < t[2] {
        t = [t[2], t[3], t[0], t[1]];
    }
    t
}

/// For k = 2, compares the enumerated solution set with the set cut out by
/// |(ξ₁−ξ₃)(ξ₁−ξ₄)| ≤ (tol/2)·δ, the latter found by a plain scan over all
/// (ξ₁, ξ₂, ξ₃) without symmetry reduction.
pub fn factorization_agreement(delta: f64, grid_step: f64, tol: f64) -> Result<FactorizationReport> {
    let grid = check_real_args(2, delta, grid_step, tol)?;
    let mut enumerated = HashSet::new();
    visit_quadruples(2, delta, grid_step, tol, DEFAULT_BUDGET, |idx, _| {
        enumerated.insert(idx);
    })?;
    let n = grid.n() as i64;
    let step = grid.step();
    let bound = tol / 2.0 * delta;
    let rows: Vec<Vec<[u32; 4]>> = (0..=n)
        .into_par_iter()
        .map(|i1| {
            let mut out = Vec::new();
            for i2 in 0..=n {
                for i3 in 0..=n {
                    let i4 = i1 + i2 - i3;
                    if !(0..=n).contains(&i4) {
                        continue;
                    }
                    let prod = ((i1 - i3) as f64 * step) * ((i1 - i4) as f64 * step);
                    if prod.abs() <= bound {
                        out.push(canonical([i1 as u32, i2 as u32, i3 as u32, i4 as u32]));
                    }
                }
            }
            out
        })
        .collect();
    let factored: HashSet<[u32; 4]> = rows.into_iter().flatten().collect();
    Ok(FactorizationReport {
        n_enumerated: enumerated.len() as u64,
        n_factored: factored.len() as u64,
        only_enumerated: enumerated.difference(&factored).count() as u64,
        only_factored: factored.difference(&enumerated).count() as u64,
    })
}

/// Whether ξ_b ≥ δ^{1/p} and ξ_a ≤ ξ_b + C·δ^{1/2}/ξ_b^{(p−2)/2} imply
/// ξ_a ≤ ξ_b + C′·δ^{1/2}/ξ_a^{(p−2)/2}, with C = C′ = 4.
pub fn comparability_oracle<T: Real>(p: u32, delta: T, xi_b: T, xi_a: T) -> Result<bool> {
    let c = T::lit(COMPARABILITY_C);
    comparability_oracle_with(p, delta, xi_b, xi_a, c, c)
}

pub fn comparability_oracle_with<T: Real>(
    p: u32,
    delta: T,
    xi_b: T,
    xi_a: T,
    c: T,
    c_prime: T,
) -> Result<bool> {
    if p < 2 {
        return Err(invalid("p", format!("{p} < 2")));
    }
    if !(T::one() >= xi_a && xi_a >= xi_b && xi_b >= T::zero()) {
        return Err(invalid("xi", format!("need 1 ≥ ξ_a={xi_a} ≥ ξ_b={xi_b} ≥ 0")));
    }
    let e = T::lit((p as f64 - 2.0) / 2.0);
    let sd = delta.sqrt();
    let slack = T::one() + T::slack();
    let hyp = xi_b >= delta.powf(T::one() / T::lit(p as f64))
        && xi_a <= (xi_b + c * sd / xi_b.powf(e)) * slack;
    if !hyp {
        return Ok(true);
    }
    Ok(xi_a <= (xi_b + c_prime * sd / xi_a.powf(e)) * slack)
}

/// The constant C′ = C·(1+C)^{(p−2)/2} for which the comparability implication
/// holds for every admissible input.
pub fn implied_constant(p: u32, c: f64) -> f64 {
    c * (1.0 + c).powf((p as f64 - 2.0) / 2.0)
}

/// Deterministic lattice of 10⁴ admissible inputs: p ∈ 2..=6, five values of δ,
/// 20 log-spaced ξ_b ∈ [δ^{1/p}, 1) and 20 ξ_a filling the hypothesis window.
pub fn comparability_lattice() -> Vec<(u32, f64, f64, f64)> {
    let mut out = Vec::with_capacity(10_000);
    for p in 2..=6u32 {
        for e in [6, 8, 10, 12, 14] {
            let delta = 2f64.powi(-e);
            let lo = delta.powf(1.0 / p as f64);
            for i in 0..20 {
                let xb = lo * (1.0 / lo).powf(i as f64 / 20.0);
                let win = COMPARABILITY_C * delta.sqrt() / xb.powf((p as f64 - 2.0) / 2.0);
                let reach = win.min(1.0 - xb);
                for j in 1..=20 {
                    out.push((p, delta, xb, xb + reach * j as f64 / 20.0));
                }
            }
        }
    }
    out
}

/// Canonical representative of a complex solution orbit: z₁ ≤ z₂, z₃ ≤ z₄ and
/// (z₁, z₂) ≤ (z₃, z₄), ordering by grid index pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexQuadSolution<T> {
    /// (Re z_i, Im z_i).
    pub z: [[T; 2]; 4],
    /// Grid indices, z_i = step·(idx_i[0] + i·idx_i[1]).
    pub idx: [[i32; 2]; 4],
    /// |z₁² + z₂² − z₃² − z₄²|.
    pub residual: T,
}

impl<T: Real> ComplexQuadSolution<T> {
    pub fn points(&self) -> [C<T>; 4] {
        self.z.map(|w| C::new(w[0], w[1]))
    }
}

/// Sorts each pair, then the two pairs.
pub fn complex_canonical(t: [[i32; 2]; 4]) -> [[i32; 2]; 4] {
    let p = [t[0].min(t[1]), t[0].max(t[1])];
    let q = [t[2].min(t[3]), t[2].max(t[3])];
    let (a, b) = if p <= q { (p, q) } else { (q, p) };
    [a[0], a[1], b[0], b[1]]
}

fn complex_grid(k_big: u32, grid_step: f64, tol: f64) -> Result<DyadicGrid> {
    if k_big == 0 {
        return Err(invalid("K", "must be >= 1"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("{tol} ≤ 0")));
    }
    let grid = DyadicGrid::from_step(grid_step)?;
    if grid.m > 5 {
        return Err(invalid("grid_step", format!("{grid_step} < 2^-5")));
    }
    Ok(grid)
}

/// Canonical solutions with sum step·(sx + i·sy) and z₁z₂ − z₃z₄ in units of
/// step², sorted. Along a fixed sum, z₁² + z₂² − z₃² − z₄² = −2(z₁z₂ − z₃z₄), so
/// pairs are matched on their products.
fn complex_row(n: i32, thr: f64, (sx, sy): (i32, i32)) -> Vec<([[i32; 2]; 4], [i64; 2])> {
    let mut pairs: Vec<([[i32; 2]; 2], [i64; 2])> = Vec::new();
    for a in (sx - n).max(-n)..=(sx + n).min(n) {
        for b in (sy - n).max(-n)..=(sy + n).min(n) {
            let (c, d) = (sx - a, sy - b);
            if [a, b] > [c, d] {
                continue;
            }
            let (x, y, u, v) = (a as i64, b as i64, c as i64, d as i64);
            pairs.push(([[a, b], [c, d]], [x * u - y * v, x * v + y * u]));
        }
    }
    pairs.sort_unstable_by_key(|p| p.1[0]);
    let thr2 = thr * thr;
    let mut out = Vec::new();
    for i in 0..pairs.len() {
        for j in i..pairs.len() {
            let dx = pairs[j].1[0] - pairs[i].1[0];
            if dx as f64 > thr {
                break;
            }
            let dy = pairs[j].1[1] - pairs[i].1[1];
            if ((dx * dx + dy * dy) as f64) <= thr2 {
                let (p, q) = if pairs[i].0 <= pairs[j].0 { (i, j) } else { (j, i) };
                let diff = [pairs[p].1[0] - pairs[q].1[0], pairs[p].1[1] - pairs[q].1[1]];
                out.push(([pairs[p].0[0], pairs[p].0[1], pairs[q].0[0], pairs[q].0[1]], diff));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Runs `per` on the solution row of every sum, in parallel batches, and feeds
/// the results to `sink` in sum order.
fn complex_rows<R: Send>(
    k_big: u32,
    grid_step: f64,
    tol: f64,
    budget: u128,
    per: impl Fn(Vec<([[i32; 2]; 4], [i64; 2])>) -> R + Sync,
    mut sink: impl FnMut(R),
) -> Result<()> {
    const BATCH: usize = 256;
    let grid = complex_grid(k_big, grid_step, tol)?;
    let n = grid.n() as i32;
    let per_axis = |s: i32| (2 * n + 1 - s.abs()) as u128;
    let sums: Vec<(i32, i32)> = (-2 * n..=2 * n).flat_map(|x| (-2 * n..=2 * n).map(move |y| (x, y))).collect();
    let needed: u128 = sums
        .iter()
        .map(|&(x, y)| {
            let m = (per_axis(x) * per_axis(y)).div_ceil(2);
            m * (m + 1) / 2
        })
        .sum();
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    let thr = tol / (2.0 * k_big as f64) * 4f64.powi(grid.m as i32);
    for chunk in sums.chunks(BATCH) {
        let rows: Vec<R> = chunk.par_iter().map(|&s| per(complex_row(n, thr, s))).collect();
        rows.into_iter().for_each(&mut sink);
    }
    Ok(())
}

/// Visits every canonical solution of z₁ + z₂ = z₃ + z₄,
/// |z₁² + z₂² − z₃² − z₄²| ≤ tol/K over z ∈ (step·ℤ²) ∩ [−1, 1]², grouped by sum.
/// `f` receives the indices and z₁z₂ − z₃z₄ in units of step².
pub fn visit_complex_quadruples(
    k_big: u32,
    grid_step: f64,
    tol: f64,
    budget: u128,
    mut f: impl FnMut([[i32; 2]; 4], [i64; 2]),
) -> Result<()> {
    complex_rows(k_big, grid_step, tol, budget, |row| row, |row| {
        for (idx, d) in row {
            f(idx, d);
        }
    })
}

pub fn enumerate_complex_quadruples<T: Real>(k_big: u32, grid_step: T, tol: T) -> Result<Vec<ComplexQuadSolution<T>>> {
    enumerate_complex_quadruples_with(k_big, grid_step, tol, DEFAULT_BUDGET)
}

pub fn enumerate_complex_quadruples_with<T: Real>(
    k_big: u32,
    grid_step: T,
    tol: T,
    budget: u128,
) -> Result<Vec<ComplexQuadSolution<T>>> {
    let step = grid_step.as_f64();
    let unit = step * step;
    let mut out = Vec::new();
    visit_complex_quadruples(k_big, step, tol.as_f64(), budget, |idx, d| {
        let m = ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt();
        out.push(ComplexQuadSolution {
            z: idx.map(|w| [T::lit(w[0] as f64 * step), T::lit(w[1] as f64 * step)]),
            idx,
            residual: T::lit(2.0 * m * unit),
        });
    })?;
    Ok(out)
}

/// Dilation needed for a complex solution against the rectangles of `cov`.
pub fn complex_solution_dilation<T: Real>(cov: &ComplexCurveCover<T>, z: &[C<T>; 4]) -> T {
    let t = z.map(|w| cov.assign(w));
    let need = |a: usize, b: usize| cov.rects[b].required_dilation(&cov.rects[a]);
    let fwd = pairing_dilation(t, need);
    let bwd = pairing_dilation([t[2], t[3], t[0], t[1]], need);
    fwd.max(bwd).max(T::one())
}

pub fn check_complex_biorthogonality<T: Real>(
    solutions: &[ComplexQuadSolution<T>],
    cov: &ComplexCurveCover<T>,
    d: T,
) -> u64 {
    let lim = d * (T::one() + T::slack());
    solutions
        .par_iter()
        .filter(|s| complex_solution_dilation(cov, &s.points()) > lim)
        .count() as u64
}

/// Violation profile over [`D_PROFILE`] against the complex covering at δ = 1/K.
/// The report carries k = 2. Solutions are streamed, not stored.
pub fn complex_minimal_dilation<T: Real>(k_big: u32, grid_step: T, tol: T) -> Result<BiorthReport> {
    let delta = T::one() / T::lit(k_big.max(1) as f64);
    let cov = build_complex_curve_cover(delta)?;
    let step = grid_step.as_f64();
    let mut count = 0u64;
    let mut needs: Vec<T> = Vec::new();
    complex_rows(
        k_big,
        step,
        tol.as_f64(),
        DEFAULT_BUDGET,
        |row| {
            let big: Vec<T> = row
                .iter()
                .map(|(idx, _)| {
                    let z = idx.map(|w| C::new(T::lit(w[0] as f64 * step), T::lit(w[1] as f64 * step)));
                    complex_solution_dilation(&cov, &z)
                })
                .filter(|&d| d > T::one())
                .collect();
            (row.len() as u64, big)
        },
        |(n, big)| {
            count += n;
            needs.extend(big);
        },
    )?;
    let mut rep = profile_report(&needs, 2, delta.as_f64(), step, tol.as_f64(), &D_PROFILE);
    rep.n_solutions = count;
    Ok(rep)
}
