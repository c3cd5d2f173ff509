//! Random band-limited fields on periodic grids, smooth frequency partitions,
//! and the square function and Kakeya functionals evaluated on them.
//!
//! A [`Grid`] with `n` points per axis and frequency spacing Δ carries the
//! frequencies Δ·m for m ∈ lo + [0, n)^D and the spatial points j·L/n with
//! period L = 2π/Δ. Samples are f(x) = Σ_m c_m e^{iΔm·x}, so the unscaled
//! inverse DFT maps coefficients to samples. Norms are Riemann sums over one
//! period box.
//!
//! Everything here runs in `f64`; covers built over another scalar are
//! converted on entry.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::complex_cone::{build_complex_cover, complex_envelopes, ComplexCover};
use crate::cone_cover::{build_cone_cover, lorentz_rescale, wave_envelopes, Box3, ConeCover, Plank3};
use crate::curve_cover::{build_curve_cover, Covering2, Rect2};
use crate::error::{invalid, Error, Result};
use crate::geom::{cross, OrthoBox};
use crate::rng::{self, tag as tags};
use crate::scalar::{cast, dot, norm, Real};

/// Blocks must be at least this many frequency cells thick (full width).
pub const MIN_CELLS: f64 = 2.0;

/// Length of the rank-1 lattice rule used by [`rank1_lhs`].
pub const RANK1_POINTS: usize = 1 << 22;

/// Frozen bound on the max square-function ratio over k ∈ 2..=5, δ ∈ 2⁻⁴..2⁻⁸
/// (1024² grids, 20 trials, seed 1).
pub const RATIO_C_EMP: f64 = 2.75;
/// Frozen bound on LHS/(RHS·ln r) for the ℝ³ Kakeya functional.
pub const KAKEYA_C_EMP: f64 = 1.0;
/// Frozen bound on LHS/RHS for the complex Kakeya functional at r = 2³.
pub const COMPLEX_KAKEYA_C_EMP: f64 = 6.0;

/// Raised-cosine profile: 1 on [0, 1], 0 from 2 on.
pub fn taper(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else if x >= 2.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (x - 1.0)).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<const D: usize> {
    pub n: usize,
    pub delta: f64,
    pub lo: [i64; D],
}

/// Grid metadata for JSON sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub dims: usize,
    pub n_per_axis: usize,
    pub frequency_spacing: f64,
    pub period: f64,
    pub lo: Vec<i64>,
}

impl<const D: usize> Grid<D> {
    pub fn new(n: usize, delta: f64, lo: [i64; D]) -> Result<Self> {
        if !(n >= 4 && n.is_power_of_two()) {
            return Err(invalid("n", format!("{n} is not a power of two ≥ 4")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid("delta", format!("{delta}")));
        }
        if ![2, 3, 5].contains(&D) {
            return Err(invalid("dims", format!("{D} not in {{2, 3, 5}}")));
        }
        Ok(Self { n, delta, lo })
    }

    /// Isotropic grid whose frequency window contains the box [lo, hi].
    pub fn covering(lo: [f64; D], hi: [f64; D], n: usize) -> Result<Self> {
        let ext = (0..D).map(|j| hi[j] - lo[j]).fold(0.0, f64::max);
        if !(ext > 0.0 && ext.is_finite()) {
            return Err(invalid("extent", format!("{ext}")));
        }
        let delta = ext / (n as f64 - 2.0);
        let mut m = [0i64; D];
        for j in 0..D {
            m[j] = (0.5 * (lo[j] + hi[j]) / delta).round() as i64 - (n / 2) as i64;
        }
        Self::new(n, delta, m)
    }

    pub fn len(&self) -> usize {
        self.n.pow(D as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.delta
    }

    pub fn volume(&self) -> f64 {
        self.period().powi(D as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        (self.period() / self.n as f64).powi(D as i32)
    }

    /// Storage index of the frequency Δ·m, if m is in the window.
    pub fn bin(&self, m: &[i64; D]) -> Option<usize> {
        let n = self.n as i64;
        let mut b = 0usize;
        for j in 0..D {
            if m[j] < self.lo[j] || m[j] >= self.lo[j] + n {
                return None;
            }
            b = b * self.n + m[j].rem_euclid(n) as usize;
        }
        Some(b)
    }

    pub fn index_of(&self, bin: usize) -> [i64; D] {
        let n = self.n as i64;
        let mut m = [0i64; D];
        let mut rest = bin;
        for j in (0..D).rev() {
            let r = (rest % self.n) as i64;
            rest /= self.n;
            m[j] = self.lo[j] + (r - self.lo[j]).rem_euclid(n);
        }
        m
    }

    pub fn freq(&self, bin: usize) -> [f64; D] {
        self.index_of(bin).map(|m| m as f64 * self.delta)
    }

    /// Spatial point of sample `idx`.
    pub fn position(&self, idx: usize) -> [f64; D] {
        let h = self.period() / self.n as f64;
        let mut x = [0.0; D];
        let mut rest = idx;
        for j in (0..D).rev() {
            x[j] = (rest % self.n) as f64 * h;
            rest /= self.n;
        }
        x
    }

    pub fn to_doc(&self) -> GridDoc {
        GridDoc {
            dims: D,
            n_per_axis: self.n,
            frequency_spacing: self.delta,
            period: self.period(),
            lo: self.lo.to_vec(),
        }
    }
}

/// D-dimensional DFT applied axis by axis; all-zero lines are skipped.
#[derive(Clone)]
pub struct Transform<const D: usize> {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl<const D: usize> Transform<D> {
    pub fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self { n, fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }

    /// Coefficients to samples (unscaled).
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &*self.inv);
    }

    /// Samples to coefficients (scaled by 1/N).
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &*self.fwd);
        let s = 1.0 / data.len() as f64;
        for x in data.iter_mut() {
            *x *= s;
        }
    }

    fn run(&self, data: &mut [C64], plan: &dyn Fft<f64>) {
        let n = self.n;
        assert_eq!(data.len(), n.pow(D as u32));
        let mut scratch = vec![C64::default(); plan.get_inplace_scratch_len()];
        let nonzero = |l: &[C64]| l.iter().any(|c| c.re != 0.0 || c.im != 0.0);
        let mut buf = Vec::new();
        let mut stride = 1;
        for _ in 0..D {
            if stride == 1 {
                for line in data.chunks_exact_mut(n) {
                    if nonzero(line) {
                        plan.process_with_scratch(line, &mut scratch);
                    }
                }
            } else {
                let block = n * stride;
                buf.resize(block, C64::default());
                for chunk in data.chunks_exact_mut(block) {
                    for k in 0..n {
                        for i in 0..stride {
                            buf[i * n + k] = chunk[k * stride + i];
                        }
                    }
                    for line in buf.chunks_exact_mut(n) {
                        if nonzero(line) {
                            plan.process_with_scratch(line, &mut scratch);
                        }
                    }
                    for k in 0..n {
                        for i in 0..stride {
                            chunk[k * stride + i] = buf[i * n + k];
                        }
                    }
                }
            }
            stride *= n;
        }
    }
}

/// A field with its coefficients (in storage order) and samples.
#[derive(Clone, Debug)]
pub struct GridField<const D: usize> {
    pub grid: Grid<D>,
    pub spectrum: Vec<C64>,
    pub samples: Vec<C64>,
}

impl<const D: usize> GridField<D> {
    pub fn from_spectrum(grid: Grid<D>, spectrum: Vec<C64>, tf: &Transform<D>) -> Self {
        let mut samples = spectrum.clone();
        tf.inverse(&mut samples);
        Self { grid, spectrum, samples }
    }

    pub fn from_samples(grid: Grid<D>, samples: Vec<C64>, tf: &Transform<D>) -> Self {
        let mut spectrum = samples.clone();
        tf.forward(&mut spectrum);
        Self { grid, spectrum, samples }
    }

    pub fn is_zero(&self) -> bool {
        self.spectrum.iter().all(|c| c.norm_sqr() == 0.0)
    }

    pub fn nonzero_cells(&self) -> usize {
        self.spectrum.iter().filter(|c| c.norm_sqr() > 0.0).count()
    }

    /// Relative ℓ² error of samples → coefficients → samples.
    pub fn round_trip_error(&self, tf: &Transform<D>) -> f64 {
        let mut s = self.samples.clone();
        tf.forward(&mut s);
        tf.inverse(&mut s);
        let num: f64 = s.iter().zip(&self.samples).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = self.samples.iter().map(|a| a.norm_sqr()).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Multiplies by e^{iω·y}·u: the translate f(· + y) times a unimodular u.
    pub fn translated(&self, shift: [usize; D], unit: C64, tf: &Transform<D>) -> Self {
        let n = self.grid.n;
        let spectrum: Vec<C64> = (0..self.grid.len())
            .map(|b| {
                let m = self.grid.index_of(b);
                let ph: f64 = (0..D).map(|j| (m[j] * shift[j] as i64).rem_euclid(n as i64) as f64).sum::<f64>();
                self.spectrum[b] * unit * C64::from_polar(1.0, 2.0 * PI * ph / n as f64)
            })
            .collect();
        Self::from_spectrum(self.grid, spectrum, tf)
    }
}

/// (Σ|f(x)|ᵖ·cellvol)^{1/p} over the period box.
pub fn lp_norm<const D: usize>(field: &GridField<D>, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid("p", format!("{p}")));
    }
    let s: f64 = field.samples.iter().map(|c| c.norm().powf(p)).sum();
    Ok((s * field.grid.cell_volume()).powf(1.0 / p))
}

/// (vol·Σ|c_m|²)^{1/2}, the L² norm by Parseval.
pub fn spectral_l2<const D: usize>(field: &GridField<D>) -> f64 {
    let s: f64 = field.spectrum.iter().map(|c| c.norm_sqr()).sum();
    (s * field.grid.volume()).sqrt()
}

/// A frequency block that a partition of unity can be built over.
pub trait Block<const D: usize>: Sync {
    /// Smallest dilation about the block center containing w.
    fn dilation(&self, w: &[f64; D]) -> f64;
    /// Unnormalized weight: 1 on the block, 0 outside its 2-dilate.
    fn profile(&self, w: &[f64; D]) -> f64 {
        taper(self.dilation(w))
    }
    /// Axis-aligned bounding box of the `s`-dilate.
    fn bbox(&self, s: f64) -> ([f64; D], [f64; D]);
    /// Smallest half-width.
    fn thinnest(&self) -> f64;
    /// Dyadic sector label.
    fn sector(&self) -> f64;
    /// Cheap test: `true` only if w is outside the `s`-dilate.
    fn outside(&self, _w: &[f64; D], _s: f64) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveBlock {
    pub rect: Rect2<f64>,
    pub sector: f64,
}

impl Block<2> for CurveBlock {
    fn dilation(&self, w: &[f64; 2]) -> f64 {
        let (u, v) = self.rect.local(w);
        (u.abs() / self.rect.half_t).max(v.abs() / self.rect.half_n)
    }

    fn profile(&self, w: &[f64; 2]) -> f64 {
        let (u, v) = self.rect.local(w);
        taper(u.abs() / self.rect.half_t) * taper(v.abs() / self.rect.half_n)
    }

    fn bbox(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let r = &self.rect;
        let e = [
            s * (r.half_t * r.tangent[0].abs() + r.half_n * r.normal[0].abs()),
            s * (r.half_t * r.tangent[1].abs() + r.half_n * r.normal[1].abs()),
        ];
        ([r.center[0] - e[0], r.center[1] - e[1]], [r.center[0] + e[0], r.center[1] + e[1]])
    }

    fn thinnest(&self) -> f64 {
        self.rect.half_n.min(self.rect.half_t)
    }

    fn sector(&self) -> f64 {
        self.sector
    }
}

impl Block<3> for Plank3<f64> {
    fn dilation(&self, w: &[f64; 3]) -> f64 {
        self.required_dilation(w)
    }

    fn bbox(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        self.aabb(s)
    }

    fn thinnest(&self) -> f64 {
        self.half_c.min(self.half_b)
    }

    fn sector(&self) -> f64 {
        self.sector
    }

    fn outside(&self, w: &[f64; 3], s: f64) -> bool {
        // The plank lies in a slab about the plane spanned by 𝐜 and 𝐭.
        let u = cross(&self.c, &self.t);
        let nu = norm(&u);
        let u = u.map(|x| x / nu);
        let width = s * self.half_c * (dot(&self.ng, &u).abs() + u[2].abs());
        dot(w, &u).abs() > width * (1.0 + 1e-9) + 1e-12
    }
}

pub fn curve_blocks<T: Real>(cov: &Covering2<T>) -> Vec<CurveBlock> {
    cov.rects
        .iter()
        .zip(&cov.sectors)
        .map(|(r, s)| CurveBlock {
            rect: Rect2 {
                center: cast(&r.center),
                tangent: cast(&r.tangent),
                normal: cast(&r.normal),
                half_t: r.half_t.as_f64(),
                half_n: r.half_n.as_f64(),
            },
            sector: s.as_f64(),
        })
        .collect()
}

pub fn plank_f64<T: Real>(p: &Plank3<T>) -> Plank3<f64> {
    Plank3 {
        base_xi1: p.base_xi1.as_f64(),
        sector: p.sector.as_f64(),
        c: cast(&p.c),
        t: cast(&p.t),
        ng: cast(&p.ng),
        a_lo: p.a_lo.as_f64(),
        a_hi: p.a_hi.as_f64(),
        half_b: p.half_b.as_f64(),
        half_c: p.half_c.as_f64(),
    }
}

pub fn cone_blocks<T: Real>(cov: &ConeCover<T>) -> Vec<Plank3<f64>> {
    cov.planks.iter().map(plank_f64).collect()
}

/// ψ_θ on the grid, stored sparsely.
#[derive(Clone, Debug)]
pub struct PartitionWeights {
    /// Nonzero (bin, ψ_θ) per block, ascending bins.
    pub blocks: Vec<Vec<(u32, f64)>>,
    /// Bins of the cells inside each block, ascending.
    pub inside: Vec<Vec<u32>>,
    /// Cells where some raw profile is positive.
    pub n_covered: usize,
    /// max |Σ_θ ψ_θ − 1| over covered cells.
    pub sum_error: f64,
}

impl PartitionWeights {
    pub fn build<const D: usize, B: Block<D>>(grid: &Grid<D>, blocks: &[B]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid("blocks", "empty family"));
        }
        let thin = blocks.iter().map(|b| b.thinnest()).fold(f64::INFINITY, f64::min);
        if 2.0 * thin < MIN_CELLS * grid.delta {
            return Err(Error::Resolution(format!(
                "thinnest block spans {:.2} cells < {MIN_CELLS}",
                2.0 * thin / grid.delta
            )));
        }
        let raw: Vec<(Vec<(u32, f64)>, Vec<u32>)> = blocks
            .par_iter()
            .map(|b| {
                let (lo, hi) = b.bbox(2.0);
                let mut a = [0i64; D];
                let mut z = [0i64; D];
                for j in 0..D {
                    a[j] = ((lo[j] / grid.delta).ceil() as i64).max(grid.lo[j]);
                    z[j] = ((hi[j] / grid.delta).floor() as i64).min(grid.lo[j] + grid.n as i64 - 1);
                    if a[j] > z[j] {
                        return (Vec::new(), Vec::new());
                    }
                }
                let mut wts = Vec::new();
                let mut inside = Vec::new();
                let mut m = a;
                loop {
                    let w = m.map(|x| x as f64 * grid.delta);
                    if !b.outside(&w, 2.0) {
                        let x = b.dilation(&w);
                        if x < 2.0 {
                            let bin = grid.bin(&m).expect("clamped to window") as u32;
                            let p = b.profile(&w);
                            if p > 0.0 {
                                wts.push((bin, p));
                            }
                            if x <= 1.0 {
                                inside.push(bin);
                            }
                        }
                    }
                    let mut axis = D;
                    loop {
                        if axis == 0 {
                            wts.sort_unstable_by_key(|e| e.0);
                            inside.sort_unstable();
                            return (wts, inside);
                        }
                        axis -= 1;
                        if m[axis] < z[axis] {
                            m[axis] += 1;
                            break;
                        }
                        m[axis] = a[axis];
                    }
                }
            })
            .collect();
        let mut total = vec![0.0f64; grid.len()];
        for (w, _) in &raw {
            for &(b, p) in w {
                total[b as usize] += p;
            }
        }
        let mut sums = vec![0.0f64; grid.len()];
        let mut out_blocks = Vec::with_capacity(raw.len());
        let mut inside = Vec::with_capacity(raw.len());
        for (w, ins) in raw {
            let w: Vec<(u32, f64)> = w.into_iter().map(|(b, p)| (b, p / total[b as usize])).collect();
            for &(b, p) in &w {
                sums[b as usize] += p;
            }
            out_blocks.push(w);
            inside.push(ins);
        }
        let mut n_covered = 0;
        let mut sum_error = 0.0f64;
        for (t, s) in total.iter().zip(&sums) {
            if *t > 0.0 {
                n_covered += 1;
                sum_error = sum_error.max((s - 1.0).abs());
            }
        }
        Ok(Self { blocks: out_blocks, inside, n_covered, sum_error })
    }
}

/// A block family on a grid with its partition of unity and transform plans.
pub struct Lab<const D: usize, B> {
    pub grid: Grid<D>,
    pub blocks: Vec<B>,
    pub weights: PartitionWeights,
    tf: Transform<D>,
}

pub type CurveLab = Lab<2, CurveBlock>;
pub type ConeLab = Lab<3, Plank3<f64>>;

impl<const D: usize, B: Block<D>> Lab<D, B> {
    pub fn new(grid: Grid<D>, blocks: Vec<B>) -> Result<Self> {
        let weights = PartitionWeights::build(&grid, &blocks)?;
        Ok(Self { tf: Transform::new(grid.n), grid, blocks, weights })
    }

    /// Lab on the smallest isotropic `n`-grid holding every block. Parts of
    /// the 2-dilates outside the window carry no cells and are dropped.
    pub fn fitted(blocks: Vec<B>, n: usize) -> Result<Self> {
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for b in &blocks {
            let (l, h) = b.bbox(1.0);
            for j in 0..D {
                lo[j] = lo[j].min(l[j]);
                hi[j] = hi[j].max(h[j]);
            }
        }
        Self::new(Grid::covering(lo, hi, n)?, blocks)
    }

    pub fn transform(&self) -> &Transform<D> {
        &self.tf
    }

    pub fn field(&self, spectrum: Vec<C64>) -> GridField<D> {
        GridField::from_spectrum(self.grid, spectrum, &self.tf)
    }

    /// Spectrum of Σ_{θ ∈ set} F_θ.
    pub fn projected_spectrum(&self, field: &GridField<D>, set: &[usize]) -> Result<Vec<C64>> {
        let mut out = vec![C64::default(); self.grid.len()];
        for &i in set {
            let w = self.weights.blocks.get(i).ok_or(Error::UnknownBlock(i))?;
            for &(b, p) in w {
                out[b as usize] += field.spectrum[b as usize] * p;
            }
        }
        Ok(out)
    }

    /// Samples of F_θ.
    fn block_samples(&self, field: &GridField<D>, i: usize) -> Vec<C64> {
        let mut s = vec![C64::default(); self.grid.len()];
        for &(b, p) in &self.weights.blocks[i] {
            s[b as usize] = field.spectrum[b as usize] * p;
        }
        self.tf.inverse(&mut s);
        s
    }
}

fn gaussian(rg: &mut rng::Rng) -> C64 {
    let re: f64 = rg.sample(StandardNormal);
    let im: f64 = rg.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Gaussian coefficients on the cells inside the kept blocks; each block is
/// kept with probability `occupancy`.
pub fn sample_field<const D: usize, B: Block<D>>(lab: &Lab<D, B>, seed: u64, occupancy: f64) -> Result<GridField<D>> {
    if !(0.0..=1.0).contains(&occupancy) {
        return Err(invalid("occupancy", format!("{occupancy} outside [0, 1]")));
    }
    let mut rg = rng::stream(seed, rng::label(tags::FIELD, 0, 0, 0));
    let keep: Vec<usize> = (0..lab.blocks.len())
        .filter(|_| rg.random::<f64>() < occupancy)
        .collect();
    Ok(fill_blocks(lab, &keep, &mut rg))
}

/// Gaussian coefficients on the cells inside one block.
pub fn sample_block_field<const D: usize, B: Block<D>>(lab: &Lab<D, B>, block: usize, seed: u64) -> Result<GridField<D>> {
    if block >= lab.blocks.len() {
        return Err(Error::UnknownBlock(block));
    }
    let mut rg = rng::stream(seed, rng::label(tags::FIELD, 1, block as u64, 0));
    Ok(fill_blocks(lab, &[block], &mut rg))
}

fn fill_blocks<const D: usize, B: Block<D>>(lab: &Lab<D, B>, keep: &[usize], rg: &mut rng::Rng) -> GridField<D> {
    let mut on = vec![false; lab.grid.len()];
    for &i in keep {
        for &b in &lab.weights.inside[i] {
            on[b as usize] = true;
        }
    }
    let spectrum = on
        .iter()
        .map(|&o| if o { gaussian(rg) } else { C64::default() })
        .collect();
    lab.field(spectrum)
}

/// F_θ: the spectrum multiplied by ψ_θ.
pub fn project_block<const D: usize, B: Block<D>>(lab: &Lab<D, B>, field: &GridField<D>, block: usize) -> Result<GridField<D>> {
    Ok(lab.field(lab.projected_spectrum(field, &[block])?))
}

/// Square function ratio of a Gaussian field on one block, measured against
/// the family consisting of that block alone (so ψ_θ = 1 on the support).
pub fn single_block_ratio<const D: usize, B: Block<D> + Clone>(lab: &Lab<D, B>, block: usize, seed: u64) -> Result<RatioParts> {
    let b = lab.blocks.get(block).ok_or(Error::UnknownBlock(block))?;
    let one = Lab::new(lab.grid, vec![b.clone()])?;
    let f = sample_block_field(&one, 0, seed)?;
    square_function_ratio(&one, &f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioParts {
    pub norm_f: f64,
    pub norm_square: f64,
    pub ratio: f64,
}

/// ‖F‖₄ / ‖(Σ_θ|F_θ|²)^{1/2}‖₄ on the lab grid.
pub fn square_function_ratio<const D: usize, B: Block<D>>(lab: &Lab<D, B>, field: &GridField<D>) -> Result<RatioParts> {
    if field.is_zero() {
        return Err(Error::ZeroField);
    }
    let mut acc = vec![0.0f64; lab.grid.len()];
    for i in 0..lab.blocks.len() {
        if lab.weights.blocks[i].iter().all(|&(b, _)| field.spectrum[b as usize].norm_sqr() == 0.0) {
            continue;
        }
        for (a, s) in acc.iter_mut().zip(lab.block_samples(field, i)) {
            *a += s.norm_sqr();
        }
    }
    let sq: f64 = acc.iter().map(|a| a * a).sum::<f64>() * lab.grid.cell_volume();
    let norm_square = sq.powf(0.25);
    let norm_f = lp_norm(field, 4.0)?;
    Ok(RatioParts { norm_f, norm_square, ratio: norm_f / norm_square })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub k: u32,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
    pub occupancy: f64,
    pub n_trials: usize,
    pub n_empty: usize,
    pub n_blocks: usize,
    /// Largest support size among the sampled fields.
    pub n_cells: usize,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

pub fn curve_lab(k: u32, delta: f64, n: usize) -> Result<CurveLab> {
    let cov = build_curve_cover(k, delta)?;
    Lab::fitted(curve_blocks(&cov), n)
}

/// Square function ratios of `n_trials` Gaussian fields over the δ-covering of γ_k.
pub fn ratio_sweep(k: u32, delta: f64, n: usize, n_trials: usize, seed: u64) -> Result<RatioReport> {
    ratio_sweep_with(k, delta, n, n_trials, seed, 1.0)
}

/// As [`ratio_sweep`] with blocks kept with probability `occupancy`; trials
/// whose draw keeps no block are counted in `n_empty` and skipped.
pub fn ratio_sweep_with(k: u32, delta: f64, n: usize, n_trials: usize, seed: u64, occupancy: f64) -> Result<RatioReport> {
    let lab = curve_lab(k, delta, n)?;
    let mut ratios = Vec::with_capacity(n_trials);
    let mut n_cells = 0;
    let mut n_empty = 0;
    for t in 0..n_trials {
        let f = sample_field(&lab, trial_seed(seed, t, k as u64, delta.log2().abs() as u64), occupancy)?;
        if f.is_zero() {
            n_empty += 1;
            continue;
        }
        n_cells = n_cells.max(f.nonzero_cells());
        ratios.push(square_function_ratio(&lab, &f)?.ratio);
    }
    let (max, mean) = max_mean(&ratios);
    Ok(RatioReport {
        k,
        delta,
        n,
        seed,
        occupancy,
        n_trials,
        n_empty,
        n_blocks: lab.blocks.len(),
        n_cells,
        ratios,
        max,
        mean,
    })
}

fn trial_seed(seed: u64, t: usize, a: u64, b: u64) -> u64 {
    use rand::RngCore;
    rng::stream(seed, rng::label(tags::FIELD, 2 + t as u64, a, b)).next_u64()
}

fn max_mean(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max, v.iter().sum::<f64>() / v.len() as f64)
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorNorm {
    pub sector: f64,
    pub n_blocks: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PigeonholeReport {
    pub norm_f: f64,
    pub sectors: Vec<SectorNorm>,
    pub max_sector: f64,
    /// (number of sectors)·max_M ‖f_M‖₄.
    pub bound: f64,
    pub holds: bool,
}

/// Splits the spectrum by dyadic sector and compares ‖f‖₄ with the largest ‖f_M‖₄.
pub fn sector_pigeonhole<const D: usize, B: Block<D>>(lab: &Lab<D, B>, field: &GridField<D>) -> Result<(PigeonholeReport, Vec<GridField<D>>)> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, b) in lab.blocks.iter().enumerate() {
        groups.entry((b.sector() * 2f64.powi(40)).round() as i64).or_default().push(i);
    }
    let mut sectors = Vec::new();
    let mut fields = Vec::new();
    for (key, set) in groups {
        let f = lab.field(lab.projected_spectrum(field, &set)?);
        sectors.push(SectorNorm { sector: key as f64 / 2f64.powi(40), n_blocks: set.len(), norm: lp_norm(&f, 4.0)? });
        fields.push(f);
    }
    let norm_f = lp_norm(field, 4.0)?;
    let max_sector = sectors.iter().map(|s| s.norm).fold(0.0, f64::max);
    let bound = sectors.len() as f64 * max_sector;
    let holds = norm_f <= bound * (1.0 + 1e-12);
    Ok((PigeonholeReport { norm_f, sectors, max_sector, bound, holds }, fields))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleCheck {
    pub k: u32,
    pub nu: f64,
    pub c: f64,
    pub n_freqs: usize,
    pub norm_f: f64,
    pub norm_h: f64,
    pub determinant: f64,
    /// |det Λ|^{-1/4}·‖f‖₄.
    pub predicted: f64,
    pub rel_err: f64,
}

/// Pushes a Gaussian field supported in the sector |ξ₁/ξ₃ − ν| ≤ cν of the
/// δ-neighbourhood of the cone through Λ_ν and compares L⁴ norms.
///
/// With h(x) = Σ c_ω e^{iΛω·x} = f(Λᵀx), ‖h‖₄ over a period cell of h is
/// evaluated on its own points (Λ^{-T} applied to a shifted, twice finer grid
/// of f's period box), ‖f‖₄ on the zero-padded DFT grid.
pub fn rescaling_consistency(k: u32, nu: f64, c: f64, delta: f64, n: usize, seed: u64) -> Result<RescaleCheck> {
    let map = lorentz_rescale(k, nu, c)?;
    let cov: ConeCover<f64> = build_cone_cover(k, delta)?;
    let m = c * nu;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cov.planks.iter().filter(|p| (p.base_xi1 - nu).abs() <= m) {
        let (l, h) = p.aabb(1.0);
        for j in 0..3 {
            lo[j] = lo[j].min(l[j]);
            hi[j] = hi[j].max(h[j]);
        }
    }
    if !lo[0].is_finite() {
        return Err(Error::Precondition("no plank in the sector".into()));
    }
    let grid = Grid::<3>::covering(lo, hi, n)?;
    let mut rg = rng::stream(seed, rng::label(tags::FIELD, 0xffff, k as u64, 0));
    let mut freqs: Vec<([f64; 3], C64)> = Vec::new();
    let mut spectrum = vec![C64::default(); grid.len()];
    for b in 0..grid.len() {
        let w = grid.freq(b);
        let in_sector = w[2] > 0.0 && (w[0] / w[2] - nu).abs() <= m;
        if in_sector && cov.multiplicity(&w) > 0 {
            let g = gaussian(&mut rg);
            spectrum[b] = g;
            freqs.push((w, g));
        }
    }
    if freqs.is_empty() {
        return Err(Error::ZeroField);
    }
    // ‖f‖₄ exactly: |f|⁴ has bandwidth below 2n, so sample on the 2n grid.
    let fine = Grid::<3>::new(2 * n, grid.delta, grid.lo.map(|x| x - n as i64 / 2))?;
    let mut padded = vec![C64::default(); fine.len()];
    for b in 0..grid.len() {
        if spectrum[b].norm_sqr() > 0.0 {
            padded[fine.bin(&grid.index_of(b)).expect("inside padded window")] = spectrum[b];
        }
    }
    let f = GridField::from_spectrum(fine, padded, &Transform::new(2 * n));
    let norm_f = lp_norm(&f, 4.0)?;

    let mt = transpose(&map.matrix);
    let lt_inv = inverse3(&mt).ok_or_else(|| Error::Precondition("singular map".into()))?;
    let det = map.determinant();
    let mapped: Vec<([f64; 3], C64)> = freqs.iter().map(|(w, g)| (map.apply(w), *g)).collect();
    let h = fine.period() / fine.n as f64;
    let nn = fine.n;
    let s4: f64 = (0..fine.len())
        .into_par_iter()
        .map(|idx| {
            let y = [
                ((idx / (nn * nn)) as f64 + 0.5) * h,
                ((idx / nn % nn) as f64 + 0.5) * h,
                ((idx % nn) as f64 + 0.5) * h,
            ];
            let x = mat_vec(&lt_inv, &y);
            let v: C64 = mapped.iter().map(|(w, g)| g * C64::from_polar(1.0, dot(w, &x))).sum();
            v.norm_sqr().powi(2)
        })
        .sum();
    // Points x = Λ^{-T}y carry cell volume h³/|det Λ|.
    let norm_h = (s4 * h.powi(3) / det.abs()).powf(0.25);
    let predicted = det.abs().powf(-0.25) * norm_f;
    Ok(RescaleCheck {
        k,
        nu,
        c,
        n_freqs: freqs.len(),
        norm_f,
        norm_h,
        determinant: det,
        predicted,
        rel_err: (norm_h - predicted).abs() / predicted,
    })
}

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

fn inverse3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |i: usize, j: usize| {
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        let (p, q) = ((j + 1) % 3, (j + 2) % 3);
        m[a][p] * m[b][q] - m[a][q] * m[b][p]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[j][i] = c(i, j) / det;
        }
    }
    Some(inv)
}

/// Envelope boxes at one scale s and the τ each fine plank belongs to.
#[derive(Clone, Debug)]
pub struct EnvelopeLevel<const N: usize> {
    pub s: f64,
    pub boxes: Vec<OrthoBox<f64, N>>,
    pub parent: Vec<usize>,
}

fn dyadic_scales(r: f64) -> Vec<f64> {
    let steps = r.log2().round() as i32;
    (0..=steps).map(|j| 2f64.powi(j) / r).collect()
}

fn parents(n: usize, members: &[Vec<usize>]) -> Vec<usize> {
    let mut p = vec![usize::MAX; n];
    for (t, mem) in members.iter().enumerate() {
        for &i in mem {
            p[i] = t;
        }
    }
    p
}

fn check_dyadic_r(r: f64, lo: u32, hi: u32) -> Result<()> {
    let l = r.log2();
    if !((l - l.round()).abs() < 1e-12 && (lo as f64..=hi as f64).contains(&l.round())) {
        return Err(invalid("r", format!("{r} is not a power of two in [2^{lo}, 2^{hi}]")));
    }
    Ok(())
}

pub struct KakeyaSetup {
    pub k: u32,
    pub r: f64,
    pub lab: ConeLab,
    pub levels: Vec<EnvelopeLevel<3>>,
}

/// Fine planks at δ = r⁻² on an `n`³ grid and the envelopes at every dyadic s ∈ [r⁻¹, 1].
pub fn kakeya_setup(k: u32, r: f64, n: usize) -> Result<KakeyaSetup> {
    check_dyadic_r(r, 2, 4)?;
    let fine: ConeCover<f64> = build_cone_cover(k, 1.0 / (r * r))?;
    let mut levels = Vec::new();
    for s in dyadic_scales(r) {
        let env = wave_envelopes(&fine, s)?;
        if env.boxes.is_empty() {
            return Err(Error::Precondition(format!("empty envelope family at s = {s}")));
        }
        levels.push(EnvelopeLevel { s, parent: parents(fine.planks.len(), &env.members), boxes: env.boxes });
    }
    let lab = Lab::fitted(cone_blocks(&fine), n)?;
    Ok(KakeyaSetup { k, r, lab, levels })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KakeyaEval {
    /// ∫(Σ_θ|f_θ|²)² over the period box.
    pub lhs: f64,
    /// The same integral from the coefficients of Σ_θ|f_θ|².
    pub lhs_spectral: f64,
    pub rhs: f64,
    /// Σ_τ Σ_U |U|⁻¹‖S_U f‖⁴_{L²(U)} per scale s, ascending s.
    pub per_s: Vec<f64>,
}

impl KakeyaEval {
    pub fn plancherel_error(&self) -> f64 {
        if self.lhs == 0.0 {
            self.lhs_spectral.abs()
        } else {
            (self.lhs - self.lhs_spectral).abs() / self.lhs
        }
    }
}

/// Both sides of the Kakeya inequality on the grid, with tiles U ∥ U_τ
/// truncated to the period box.
pub fn kakeya_functional(setup: &KakeyaSetup, field: &GridField<3>) -> Result<KakeyaEval> {
    kakeya_eval(setup, field, None)
}

fn kakeya_eval(setup: &KakeyaSetup, field: &GridField<3>, only: Option<usize>) -> Result<KakeyaEval> {
    let lab = &setup.lab;
    let grid = lab.grid;
    if field.grid != grid {
        return Err(Error::Resolution("field grid differs from the setup grid".into()));
    }
    let cv = grid.cell_volume();
    let mut total = vec![0.0f64; grid.len()];
    let mut tiles: Vec<Vec<HashMap<[i64; 3], f64>>> =
        setup.levels.iter().map(|l| vec![HashMap::new(); l.boxes.len()]).collect();
    for i in 0..lab.blocks.len() {
        if only.is_some_and(|o| o != i) {
            continue;
        }
        if lab.weights.blocks[i].iter().all(|&(b, _)| field.spectrum[b as usize].norm_sqr() == 0.0) {
            continue;
        }
        let g: Vec<f64> = lab.block_samples(field, i).iter().map(|c| c.norm_sqr()).collect();
        for (t, x) in total.iter_mut().zip(&g) {
            *t += x;
        }
        for (lv, maps) in setup.levels.iter().zip(tiles.iter_mut()) {
            let tau = lv.parent[i];
            tile_sums(&grid, &g, &lv.boxes[tau], cv, &mut maps[tau]);
        }
    }
    let lhs = total.iter().map(|x| x * x).sum::<f64>() * cv;
    let mut spec: Vec<C64> = total.iter().map(|&x| C64::new(x, 0.0)).collect();
    lab.transform().forward(&mut spec);
    let lhs_spectral = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.volume();
    let per_s: Vec<f64> = setup
        .levels
        .iter()
        .zip(&tiles)
        .map(|(lv, maps)| {
            lv.boxes
                .iter()
                .zip(maps)
                .map(|(bx, m)| {
                    let vol = bx.volume();
                    let mut keys: Vec<_> = m.iter().collect();
                    keys.sort_unstable_by_key(|e| *e.0);
                    keys.iter().map(|(_, v)| *v * *v / vol).sum::<f64>()
                })
                .sum()
        })
        .collect();
    Ok(KakeyaEval { lhs, lhs_spectral, rhs: per_s.iter().sum(), per_s })
}

/// Adds ∫_U g over every tile U ∥ `bx` meeting the period box.
fn tile_sums(grid: &Grid<3>, g: &[f64], bx: &Box3<f64>, cv: f64, acc: &mut HashMap<[i64; 3], f64>) {
    let n = grid.n;
    let h = grid.period() / n as f64;
    let mut cur: Option<[i64; 3]> = None;
    let mut sum = 0.0;
    let mut idx = 0;
    for j0 in 0..n {
        for j1 in 0..n {
            for j2 in 0..n {
                let key = bx.tile(&[j0 as f64 * h, j1 as f64 * h, j2 as f64 * h]);
                if cur != Some(key) {
                    if let Some(c) = cur {
                        *acc.entry(c).or_insert(0.0) += sum;
                    }
                    cur = Some(key);
                    sum = 0.0;
                }
                sum += g[idx] * cv;
                idx += 1;
            }
        }
    }
    if let Some(c) = cur {
        *acc.entry(c).or_insert(0.0) += sum;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KakeyaReport {
    pub k: u32,
    pub r: f64,
    pub n: usize,
    pub seed: u64,
    pub n_trials: usize,
    pub n_planks: usize,
    pub scales: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub per_s: Vec<Vec<f64>>,
    /// LHS/(RHS·ln r) per trial.
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub max_plancherel_error: f64,
    /// LHS/(s = 1 term) for a field on one plank.
    pub calibration: f64,
    pub grid: GridDoc,
}

/// LHS / (s = 1 term of the RHS) for a Gaussian field on the middle plank.
pub fn kakeya_calibration(setup: &KakeyaSetup, seed: u64) -> Result<f64> {
    let i = setup.lab.blocks.len() / 2;
    let f = sample_block_field(&setup.lab, i, seed)?;
    let ev = kakeya_eval(setup, &f, Some(i))?;
    Ok(ev.lhs / ev.per_s.last().copied().unwrap_or(f64::NAN))
}

pub fn kakeya_run(k: u32, r: f64, n: usize, n_trials: usize, seed: u64) -> Result<KakeyaReport> {
    let setup = kakeya_setup(k, r, n)?;
    let mut rep = KakeyaReport {
        k,
        r,
        n,
        seed,
        n_trials,
        n_planks: setup.lab.blocks.len(),
        scales: setup.levels.iter().map(|l| l.s).collect(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        per_s: Vec::new(),
        ratio: Vec::new(),
        max_ratio: 0.0,
        mean_ratio: 0.0,
        max_plancherel_error: 0.0,
        calibration: kakeya_calibration(&setup, seed)?,
        grid: setup.lab.grid.to_doc(),
    };
    for t in 0..n_trials {
        let f = sample_field(&setup.lab, trial_seed(seed, t, k as u64, r as u64), 1.0)?;
        let ev = kakeya_functional(&setup, &f)?;
        rep.max_plancherel_error = rep.max_plancherel_error.max(ev.plancherel_error());
        rep.ratio.push(ev.lhs / (ev.rhs * r.ln()));
        rep.lhs.push(ev.lhs);
        rep.rhs.push(ev.rhs);
        rep.per_s.push(ev.per_s);
    }
    (rep.max_ratio, rep.mean_ratio) = max_mean(&rep.ratio);
    Ok(rep)
}

/// Fine complex planks at R = r² on the frequency lattice Δ·ℤ⁵ (Δ half the
/// plank thickness) and the envelopes at every dyadic s ∈ [r⁻¹, 1].
pub struct ComplexKakeyaSetup {
    pub r: f64,
    pub cover: ComplexCover<f64>,
    pub lattice: f64,
    pub levels: Vec<EnvelopeLevel<5>>,
}

pub fn complex_kakeya_setup(r: f64) -> Result<ComplexKakeyaSetup> {
    check_dyadic_r(r, 2, 4)?;
    let cover: ComplexCover<f64> = build_complex_cover(r * r)?;
    let n = cover.planks().len();
    let mut levels = Vec::new();
    for s in dyadic_scales(r) {
        let env = complex_envelopes(&cover, s)?;
        if env.boxes.is_empty() {
            return Err(Error::Precondition(format!("empty envelope family at s = {s}")));
        }
        levels.push(EnvelopeLevel { s, parent: parents(n, &env.members), boxes: env.boxes });
    }
    let lattice = 0.5 * cover.planks()[0].half_c;
    Ok(ComplexKakeyaSetup { r, cover, lattice, levels })
}

/// Trigonometric polynomial per plank: (lattice index, coefficient), ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    pub lattice: f64,
    pub planks: Vec<Vec<([i64; 5], C64)>>,
}

/// Up to `per_plank` distinct lattice frequencies drawn uniformly in each
/// plank's coordinates, with Gaussian coefficients.
pub fn sample_lattice_field(setup: &ComplexKakeyaSetup, per_plank: usize, seed: u64) -> LatticeField {
    let d = setup.lattice;
    let planks = setup
        .cover
        .planks()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rg = rng::stream(seed, rng::label(tags::LATTICE, i as u64, 0, 0));
            let mut pts: BTreeMap<[i64; 5], C64> = BTreeMap::new();
            let mut tries = 0;
            while pts.len() < per_plank && tries < 64 * per_plank {
                tries += 1;
                let mut u = || 2.0 * rg.random::<f64>() - 1.0;
                let a = p.a_center() + p.a_half() * u();
                let b = [p.half_b * u(), p.half_b * u()];
                let c = [p.half_c * u(), p.half_c * u()];
                let e = p.half_c * u();
                let q = p.point(a, b, c, e);
                let m = q.map(|x| (x / d).round() as i64);
                if p.contains(&m.map(|x| x as f64 * d), 1.0) && !pts.contains_key(&m) {
                    pts.insert(m, gaussian(&mut rg));
                }
            }
            pts.into_iter().collect()
        })
        .collect();
    LatticeField { lattice: d, planks }
}

/// Coefficients of |f_θ|²: η = ω − ω′ ↦ Σ c_ω·c̄_ω′.
fn autocorrelation(f: &[([i64; 5], C64)], out: &mut HashMap<[i64; 5], C64>) {
    for (m1, c1) in f {
        for (m2, c2) in f {
            let mut eta = [0i64; 5];
            for j in 0..5 {
                eta[j] = m1[j] - m2[j];
            }
            *out.entry(eta).or_insert(C64::default()) += c1 * c2.conj();
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Both sides of the complex Kakeya inequality as densities (means over space).
///
/// The LHS is Σ_η |Σ_θ ĝ_θ(η)|² with g_θ = |f_θ|². For the RHS the tiling by
/// translates of U is averaged over its offsets, which turns
/// Σ_U |U|⁻¹(∫_U g_τ)² into Σ_η |ĝ_τ(η)|²·Π_j sinc²(h_j⟨η, u_j⟩) for the box
/// with axes u_j and half-lengths h_j.
pub fn complex_kakeya_functional(setup: &ComplexKakeyaSetup, field: &LatticeField) -> Result<KakeyaEval> {
    let n = setup.cover.planks().len();
    if field.planks.len() != n {
        return Err(Error::Precondition(format!("{} plank fields for {n} planks", field.planks.len())));
    }
    let auto: Vec<HashMap<[i64; 5], C64>> = field
        .planks
        .par_iter()
        .map(|f| {
            let mut m = HashMap::new();
            autocorrelation(f, &mut m);
            m
        })
        .collect();
    let mut total: HashMap<[i64; 5], C64> = HashMap::new();
    for a in &auto {
        for (k, v) in a {
            *total.entry(*k).or_insert(C64::default()) += v;
        }
    }
    let lhs = sorted_sum(total.values().map(|v| v.norm_sqr()).collect());
    let d = field.lattice;
    let per_s: Vec<f64> = setup
        .levels
        .iter()
        .map(|lv| {
            let mut groups: Vec<HashMap<[i64; 5], C64>> = vec![HashMap::new(); lv.boxes.len()];
            for (i, a) in auto.iter().enumerate() {
                let g = &mut groups[lv.parent[i]];
                for (k, v) in a {
                    *g.entry(*k).or_insert(C64::default()) += v;
                }
            }
            let terms: Vec<f64> = groups
                .par_iter()
                .zip(&lv.boxes)
                .map(|(g, bx)| {
                    sorted_sum(
                        g.iter()
                            .map(|(eta, v)| {
                                let xi = eta.map(|x| x as f64 * d);
                                let w: f64 = (0..5).map(|j| sinc(bx.half[j] * dot(&xi, &bx.axes[j])).powi(2)).product();
                                v.norm_sqr() * w
                            })
                            .collect(),
                    )
                })
                .collect();
            terms.iter().sum()
        })
        .collect();
    Ok(KakeyaEval { lhs, lhs_spectral: lhs, rhs: per_s.iter().sum(), per_s })
}

/// Mean of (Σ_θ|f_θ|²)² over the rank-1 lattice x_j = (2π/Δ)·frac(j·g/N),
/// N = [`RANK1_POINTS`]. The rule is exact once η ↦ η·g mod N is injective on
/// the frequencies of Σ_θ|f_θ|²; `g` is searched until it is. Returns
/// (spatial mean, generator).
pub fn rank1_lhs(field: &LatticeField, seed: u64) -> Result<(f64, [i64; 5])> {
    let n = RANK1_POINTS as i64;
    let mut etas: HashMap<[i64; 5], ()> = HashMap::new();
    for f in &field.planks {
        for (m1, _) in f {
            for (m2, _) in f {
                let mut e = [0i64; 5];
                for j in 0..5 {
                    e[j] = m1[j] - m2[j];
                }
                etas.insert(e, ());
            }
        }
    }
    let mut rg = rng::stream(seed, rng::label(tags::LATTICE, 0xffff, 0, 0));
    let mut gen = None;
    'search: for _ in 0..256 {
        let g: [i64; 5] = std::array::from_fn(|_| rg.random_range(1..n));
        let mut seen = std::collections::HashSet::with_capacity(etas.len());
        for e in etas.keys() {
            let r = (0..5).map(|j| (e[j] * g[j]).rem_euclid(n)).sum::<i64>().rem_euclid(n);
            if !seen.insert(r) {
                continue 'search;
            }
        }
        gen = Some(g);
        break;
    }
    let g = gen.ok_or_else(|| Error::Precondition("no injective rank-1 generator found".into()))?;
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(RANK1_POINTS);
    let mut acc = vec![0.0f64; RANK1_POINTS];
    let mut buf = vec![C64::default(); RANK1_POINTS];
    for f in &field.planks {
        if f.is_empty() {
            continue;
        }
        buf.iter_mut().for_each(|c| *c = C64::default());
        for (m, c) in f {
            let r = (0..5).map(|j| (m[j] * g[j]).rem_euclid(n)).sum::<i64>().rem_euclid(n);
            buf[r as usize] += c;
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let mean = acc.iter().map(|x| x * x).sum::<f64>() / RANK1_POINTS as f64;
    Ok((mean, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexKakeyaReport {
    pub r: f64,
    pub lattice: f64,
    pub per_plank: usize,
    pub seed: u64,
    pub n_trials: usize,
    pub n_planks: usize,
    pub scales: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub per_s: Vec<Vec<f64>>,
    /// LHS/RHS per trial.
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

pub fn complex_kakeya_run(r: f64, per_plank: usize, n_trials: usize, seed: u64) -> Result<ComplexKakeyaReport> {
    let setup = complex_kakeya_setup(r)?;
    let mut rep = ComplexKakeyaReport {
        r,
        lattice: setup.lattice,
        per_plank,
        seed,
        n_trials,
        n_planks: setup.cover.planks().len(),
        scales: setup.levels.iter().map(|l| l.s).collect(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        per_s: Vec::new(),
        ratio: Vec::new(),
        max_ratio: 0.0,
        mean_ratio: 0.0,
    };
    for t in 0..n_trials {
        let f = sample_lattice_field(&setup, per_plank, trial_seed(seed, t, 5, r as u64));
        let ev = complex_kakeya_functional(&setup, &f)?;
        rep.ratio.push(ev.lhs / ev.rhs);
        rep.lhs.push(ev.lhs);
        rep.rhs.push(ev.rhs);
        rep.per_s.push(ev.per_s);
    }
    (rep.max_ratio, rep.mean_ratio) = max_mean(&rep.ratio);
    Ok(rep)
}

/// Relative gap between the lattice LHS and its rank-1 spatial evaluation, for
/// a field on every `stride`-th plank with `per_plank` frequencies each.
pub fn complex_plancherel_check(setup: &ComplexKakeyaSetup, stride: usize, per_plank: usize, seed: u64) -> Result<f64> {
    let mut f = sample_lattice_field(setup, per_plank, seed);
    for (i, p) in f.planks.iter_mut().enumerate() {
        if i % stride.max(1) != 0 {
            p.clear();
        }
    }
    let ev = complex_kakeya_functional(setup, &f)?;
    let (spatial, _) = rank1_lhs(&f, seed)?;
    Ok((spatial - ev.lhs).abs() / ev.lhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_curve_lab() -> CurveLab {
        curve_lab(3, 2f64.powi(-5), 128).unwrap()
    }

    #[test]
    fn grid_bins_round_trip() {
        let g = Grid::<2>::new(8, 0.5, [-3, 2]).unwrap();
        for b in 0..g.len() {
            assert_eq!(g.bin(&g.index_of(b)), Some(b));
        }
        assert_eq!(g.bin(&[5, 2]), None);
        assert!(Grid::<2>::new(6, 0.5, [0, 0]).is_err());
        assert!(Grid::<4>::new(8, 0.5, [0; 4]).is_err());
    }

    #[test]
    fn transform_round_trip_and_plane_wave() {
        let g = Grid::<3>::new(16, 0.25, [-8; 3]).unwrap();
        let tf = Transform::<3>::new(16);
        let mut spec = vec![C64::default(); g.len()];
        let b = g.bin(&[1, -2, 3]).unwrap();
        spec[b] = C64::new(2.0, 0.0);
        let f = GridField::from_spectrum(g, spec, &tf);
        let x = g.position(123);
        let w = g.freq(b);
        let expect = C64::from_polar(2.0, dot(&w, &x));
        assert!((f.samples[123] - expect).norm() < 1e-12);
        assert!(f.round_trip_error(&tf) < 1e-12);
        // A plane wave has the L⁴ norm of its constant modulus.
        let v = g.volume();
        assert!((lp_norm(&f, 4.0).unwrap() - 2.0 * v.powf(0.25)).abs() < 1e-9 * v.powf(0.25));
        assert!((lp_norm(&f, 2.0).unwrap() - spectral_l2(&f)).abs() < 1e-10 * spectral_l2(&f));
    }

    #[test]
    fn partition_is_exact_and_supported_in_double_blocks() {
        let lab = small_curve_lab();
        assert!(lab.weights.sum_error <= 1e-12);
        for (blk, w) in lab.blocks.iter().zip(&lab.weights.blocks) {
            for &(b, p) in w {
                assert!(p > 0.0 && p <= 1.0 + 1e-15);
                assert!(blk.dilation(&lab.grid.freq(b as usize)) < 2.0);
            }
        }
    }

    #[test]
    fn coarse_grid_is_a_resolution_error() {
        let cov: Covering2<f64> = build_curve_cover(3, 2f64.powi(-8)).unwrap();
        let r = Lab::fitted(curve_blocks(&cov), 64);
        assert!(matches!(r, Err(Error::Resolution(_))));
    }

    #[test]
    fn projections_sum_to_field_and_satisfy_plancherel() {
        let lab = small_curve_lab();
        let f = sample_field(&lab, 3, 1.0).unwrap();
        let mut sum = vec![C64::default(); lab.grid.len()];
        let mut inner = 0.0;
        for i in 0..lab.blocks.len() {
            let p = project_block(&lab, &f, i).unwrap();
            for (s, c) in sum.iter_mut().zip(&p.spectrum) {
                *s += c;
            }
            inner += p.spectrum.iter().zip(&f.spectrum).map(|(a, b)| (a * b.conj()).re).sum::<f64>();
        }
        let err: f64 = sum.iter().zip(&f.spectrum).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        let l2: f64 = f.spectrum.iter().map(|c| c.norm_sqr()).sum();
        assert!((inner - l2).abs() < 1e-8 * l2);
        assert!(matches!(project_block(&lab, &f, 10_000), Err(Error::UnknownBlock(10_000))));
    }

    #[test]
    fn far_blocks_have_disjoint_spectra() {
        let lab = small_curve_lab();
        let f = sample_field(&lab, 4, 1.0).unwrap();
        let a = project_block(&lab, &f, 0).unwrap();
        let b = project_block(&lab, &f, lab.blocks.len() - 1).unwrap();
        assert!(a.spectrum.iter().zip(&b.spectrum).all(|(x, y)| x.norm() == 0.0 || y.norm() == 0.0));
    }

    #[test]
    fn occupancy_extremes() {
        let lab = small_curve_lab();
        assert!(sample_field(&lab, 1, 0.0).unwrap().is_zero());
        assert!(sample_field(&lab, 1, 1.5).is_err());
        let f = sample_field(&lab, 1, 1.0).unwrap();
        assert!(matches!(square_function_ratio(&lab, &lab.field(vec![C64::default(); lab.grid.len()])), Err(Error::ZeroField)));
        assert!(f.nonzero_cells() > 0);
    }

    #[test]
    fn single_block_field_has_ratio_one() {
        let lab = small_curve_lab();
        let i = lab.blocks.len() / 2;
        let f = sample_block_field(&lab, i, 9).unwrap();
        let p = project_block(&lab, &f, i).unwrap();
        for &(b, w) in &lab.weights.blocks[i] {
            if w == 1.0 {
                assert_eq!(p.spectrum[b as usize], f.spectrum[b as usize]);
            }
        }
        // The square function of one block: ratio is exactly ‖F‖₄/‖F_θ‖₄ when the
        // field lives where ψ_θ = 1.
        let only: Vec<C64> = (0..lab.grid.len())
            .map(|b| {
                let w = lab.weights.blocks[i].iter().find(|e| e.0 as usize == b).map_or(0.0, |e| e.1);
                if w == 1.0 {
                    f.spectrum[b]
                } else {
                    C64::default()
                }
            })
            .collect();
        let g = lab.field(only);
        let r = square_function_ratio(&lab, &g).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_block_family_ratio_is_one() {
        let lab = small_curve_lab();
        let r = single_block_ratio(&lab, lab.blocks.len() / 3, 4).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_far_waves_match_closed_form() {
        let lab = small_curve_lab();
        let pick = |i: usize| {
            let blk = &lab.weights.blocks[i];
            blk.iter().find(|e| e.1 == 1.0).expect("flat cell").0 as usize
        };
        let (b1, b2) = (pick(0), pick(lab.blocks.len() - 1));
        let mut spec = vec![C64::default(); lab.grid.len()];
        spec[b1] = C64::new(1.0, 0.0);
        spec[b2] = C64::new(0.0, 1.0);
        let f = lab.field(spec);
        let r = square_function_ratio(&lab, &f).unwrap();
        // ∫|e₁ + e₂|⁴ = 6·vol and ∫(|e₁|² + |e₂|²)² = 4·vol.
        let v = lab.grid.volume();
        assert!((r.norm_f.powi(4) - 6.0 * v).abs() < 1e-9 * v);
        assert!((r.norm_square.powi(4) - 4.0 * v).abs() < 1e-9 * v);
        assert!((r.ratio - 1.5f64.powf(0.25)).abs() < 1e-9);
        assert!(r.ratio <= 2f64.powf(0.25));
    }

    #[test]
    fn ratio_invariant_under_translation_and_phase() {
        let lab = small_curve_lab();
        let f = sample_field(&lab, 5, 0.5).unwrap();
        let r0 = square_function_ratio(&lab, &f).unwrap().ratio;
        let g = f.translated([17, 40], C64::from_polar(1.0, 0.7), lab.transform());
        let r1 = square_function_ratio(&lab, &g).unwrap().ratio;
        assert!((r0 - r1).abs() < 1e-8);
    }

    #[test]
    fn sweep_is_reproducible() {
        let a = ratio_sweep(2, 2f64.powi(-4), 64, 2, 11).unwrap();
        let b = ratio_sweep(2, 2f64.powi(-4), 64, 2, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.ratios.iter().all(|r| r.is_finite() && *r > 0.0));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn pigeonhole_single_and_random() {
        let cov: ConeCover<f64> = build_cone_cover(4, 2f64.powi(-4)).unwrap();
        let lab = Lab::fitted(cone_blocks(&cov), 64).unwrap();
        let f = sample_field(&lab, 2, 1.0).unwrap();
        let (rep, fields) = sector_pigeonhole(&lab, &f).unwrap();
        assert!(rep.holds);
        assert!(rep.sectors.len() >= 2);
        assert_eq!(fields.len(), rep.sectors.len());
        // Single-sector field: f_M = f.
        let f1 = sample_block_field(&lab, 0, 3).unwrap();
        let (r1, fs) = sector_pigeonhole(&lab, &f1).unwrap();
        let own = r1.sectors.iter().position(|s| s.sector == lab.blocks[0].sector).unwrap();
        let err: f64 = fs[own].spectrum.iter().zip(&f1.spectrum).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let same_sector: Vec<usize> = (0..lab.blocks.len()).filter(|&i| lab.blocks[i].sector == lab.blocks[0].sector).collect();
        let leak = lab.weights.inside[0].iter().any(|&b| {
            (0..lab.blocks.len())
                .filter(|i| !same_sector.contains(i))
                .any(|i| lab.weights.blocks[i].iter().any(|e| e.0 == b))
        });
        if !leak {
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn kakeya_zero_field_is_vacuous() {
        let s = kakeya_setup(3, 4.0, 64).unwrap();
        let f = s.lab.field(vec![C64::default(); s.lab.grid.len()]);
        let ev = kakeya_functional(&s, &f).unwrap();
        assert_eq!((ev.lhs, ev.rhs), (0.0, 0.0));
        assert!(kakeya_setup(3, 3.0, 32).is_err());
    }

    #[test]
    fn kakeya_small_grid_plancherel_and_positivity() {
        let s = kakeya_setup(3, 4.0, 64).unwrap();
        let f = sample_field(&s.lab, 1, 1.0).unwrap();
        let ev = kakeya_functional(&s, &f).unwrap();
        assert!(ev.plancherel_error() < 1e-6);
        assert!(ev.lhs > 0.0 && ev.rhs > 0.0);
        assert_eq!(ev.per_s.len(), 3);
    }

    #[test]
    fn complex_lattice_functional_matches_rank1_rule() {
        let s = complex_kakeya_setup(4.0).unwrap();
        let err = complex_plancherel_check(&s, 9, 6, 1).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn complex_single_plank_rhs_top_term_bounded_by_lhs() {
        let s = complex_kakeya_setup(4.0).unwrap();
        let mut f = sample_lattice_field(&s, 16, 2);
        for (i, p) in f.planks.iter_mut().enumerate() {
            if i != 40 {
                p.clear();
            }
        }
        let ev = complex_kakeya_functional(&s, &f).unwrap();
        // Each RHS term is a weighted sum of the LHS coefficients with weights ≤ 1.
        for t in &ev.per_s {
            assert!(*t <= ev.lhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rescaling_matches_change_of_variables() {
        let r = rescaling_consistency(3, 0.5, 0.1, 2f64.powi(-6), 16, 1).unwrap();
        assert!(r.n_freqs > 0);
        assert!(r.rel_err < 1e-2, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn transform_round_trip(seed in 0u64..1000) {
            let g = Grid::<2>::new(32, 0.1, [-16, -16]).unwrap();
            let tf = Transform::<2>::new(32);
            let mut rg = rng::stream(seed, 0);
            let samples: Vec<C64> = (0..g.len()).map(|_| gaussian(&mut rg)).collect();
            let f = GridField::from_samples(g, samples, &tf);
            prop_assert!(f.round_trip_error(&tf) < 1e-10);
        }

        #[test]
        fn ratio_phase_invariant(seed in 0u64..1000, phase in 0.0..6.28f64) {
            let lab = curve_lab(2, 2f64.powi(-4), 64).unwrap();
            let f = sample_field(&lab, seed, 0.7).unwrap();
            prop_assume!(!f.is_zero());
            let g = f.translated([seed as usize % 64, 3], C64::from_polar(1.0, phase), lab.transform());
            let a = square_function_ratio(&lab, &f).unwrap().ratio;
            let b = square_function_ratio(&lab, &g).unwrap().ratio;
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
