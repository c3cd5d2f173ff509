//! One runner per subcommand. Each returns a [`Table`] whose rows depend only
//! on the configuration and seed.

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;

use sqlab::biortho::{
    complex_minimal_dilation, factorization_agreement, minimal_dilation_with, BiorthReport, D_PROFILE,
};
use sqlab::complex_cone::{
    alternating_ends_sweep, build_complex_cover, build_complex_ladder, complex_overlap_profile,
    frame_identity_error, verify_complex_cover, DEFAULT_S, SWEEP_SCALES,
};
use sqlab::cone_cover::{
    build_centered_ladder_with, build_cone_cover_with, f2_second_derivative_range, lorentz_rescale,
    overlap_profile, verify_cone_cover,
};
use sqlab::curve_cover::{build_curve_cover_with, minimal_passing_c0, verify_neighborhood_cover};
use sqlab::fourier_lab::{
    complex_kakeya_run, complex_kakeya_setup, complex_plancherel_check, curve_lab, kakeya_run, loglog_slope,
    ratio_sweep_with, single_block_ratio, COMPLEX_KAKEYA_C_EMP, KAKEYA_C_EMP, RATIO_C_EMP,
};

use crate::config::{Command, Geometry, Occupancy, RunConfig};
use crate::row;
use crate::table::{Cell, Table};

pub const CURVE_MULT: usize = 8;
pub const CONE_OVERLAP: f64 = 8.0;
pub const COMPLEX_OVERLAP: f64 = 6.0;
pub const CONE_S: f64 = 4.0;
pub const F2_RANGE: (f64, f64) = (1.5, 2.5);
pub const RESCALE_FACTOR: f64 = 4.0;
pub const RESCALE_SUBPLANKS: usize = 9;
pub const SINGLE_TOL: f64 = 1e-6;
pub const SLOPE_TOL: f64 = 0.1;
pub const CALIBRATION_RANGE: (f64, f64) = (0.25, 4.0);
pub const PLANCHEREL_TOL: f64 = 1e-9;
pub const FRAME_TOL: f64 = 1e-12;
pub const FRAME_SAMPLES: usize = 1000;
/// Plank stride and lattice points per plank of the rank-1 spatial check.
pub const COMPLEX_CHECK: (usize, usize) = (9, 6);

pub fn run_config(cfg: &RunConfig) -> Result<Table> {
    match cfg.command {
        Command::Cover => cover(cfg),
        Command::Biortho => biortho(cfg),
        Command::Overlap => overlap(cfg),
        Command::Ends => ends(cfg),
        Command::Rescale => rescale(cfg),
        Command::Ratio => ratio(cfg),
        Command::Kakeya => kakeya(cfg),
        Command::Complex => complex(cfg),
        Command::Sweep => sweep(cfg),
    }
}

fn samples(cfg: &RunConfig, default: usize) -> usize {
    cfg.samples.unwrap_or(default)
}

fn cover(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "cover",
        &["geometry", "k", "delta", "c0", "samples", "covered_fraction", "max_multiplicity", "min_c0", "pass"],
    );
    let n = samples(cfg, 100_000);
    let bound = cfg.max_mult;
    let geo = cfg.geometry.to_string();
    for &k in &cfg.k {
        if cfg.geometry == Geometry::Complex {
            break;
        }
        for d in &cfg.delta {
            let (rep, min_c0) = match cfg.geometry {
                Geometry::Curve => {
                    let cov = build_curve_cover_with::<f64>(k, d.0, cfg.c0)?;
                    let min_c0 = if cfg.scan_c0 {
                        let cands: Vec<f64> = (8..=48).map(|i| i as f64 / 8.0).collect();
                        minimal_passing_c0(&[(k, d.0)], &cands, n, cfg.seed)?
                    } else {
                        None
                    };
                    (verify_neighborhood_cover(&cov, n, cfg.seed)?, min_c0)
                }
                _ => (verify_cone_cover(&build_cone_cover_with::<f64>(k, d.0, cfg.c0)?, n, cfg.seed)?, None),
            };
            let pass = rep.complete() && rep.max_multiplicity <= bound;
            t.push(row![
                geo.as_str(),
                k,
                Cell::Dy(d.0),
                cfg.c0,
                n,
                rep.covered_fraction,
                rep.max_multiplicity,
                min_c0,
                pass
            ]);
            t.detail(json!({"k": k, "delta": d.0, "report": rep}));
        }
    }
    if cfg.geometry == Geometry::Complex {
        for d in &cfg.delta {
            let cov = build_complex_cover::<f64>(1.0 / d.0)?;
            let rep = verify_complex_cover(&cov, n, cfg.seed)?;
            let pass = rep.complete() && rep.max_multiplicity <= bound;
            t.push(row![
                geo.as_str(),
                Cell::Empty,
                Cell::Dy(d.0),
                Cell::Empty,
                n,
                rep.covered_fraction,
                rep.max_multiplicity,
                Cell::Empty,
                pass
            ]);
            t.detail(json!({"R": 1.0 / d.0, "report": rep}));
        }
    }
    Ok(t)
}

fn violations_at(rep: &BiorthReport, d: f64) -> Result<u64> {
    match rep.violations_at(d) {
        Some(v) => Ok(v),
        None => bail!("D = {d} is not in the dilation profile {D_PROFILE:?}"),
    }
}

fn biortho(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "biortho",
        &[
            "geometry", "k", "delta", "step", "tol", "D", "solutions", "violations", "d_min", "max_needed",
            "factorization", "pass",
        ],
    );
    let geo = cfg.geometry.to_string();
    match cfg.geometry {
        Geometry::Complex => {
            for d in &cfg.delta {
                let big_k = (1.0 / d.0).round() as u32;
                let rep = complex_minimal_dilation::<f64>(big_k, cfg.step.0, cfg.tol)?;
                let v = violations_at(&rep, cfg.d)?;
                t.push(row![
                    geo.as_str(),
                    Cell::Empty,
                    Cell::Dy(d.0),
                    Cell::Dy(cfg.step.0),
                    cfg.tol,
                    cfg.d,
                    rep.n_solutions,
                    v,
                    rep.d_min,
                    rep.max_needed,
                    Cell::Empty,
                    v == 0
                ]);
                t.detail(json!({"report": rep}));
            }
        }
        _ => {
            for &k in &cfg.k {
                for d in &cfg.delta {
                    let cov = build_curve_cover_with::<f64>(k, d.0, cfg.c0)?;
                    let rep = minimal_dilation_with(&cov, cfg.step.0, cfg.tol)?;
                    let v = violations_at(&rep, cfg.d)?;
                    let fac = if k == 2 { Some(factorization_agreement(d.0, cfg.step.0, cfg.tol)?) } else { None };
                    let fac_ok = fac.as_ref().map_or(true, |f| f.agrees());
                    t.push(row![
                        geo.as_str(),
                        k,
                        Cell::Dy(d.0),
                        Cell::Dy(cfg.step.0),
                        cfg.tol,
                        cfg.d,
                        rep.n_solutions,
                        v,
                        rep.d_min,
                        rep.max_needed,
                        fac.as_ref().map(|f| if f.agrees() { "agrees" } else { "differs" }),
                        v == 0 && fac_ok
                    ]);
                    t.detail(json!({"report": rep, "factorization": fac}));
                }
            }
        }
    }
    Ok(t)
}

fn overlap(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "overlap",
        &["geometry", "k", "r", "sigma", "block", "S", "class", "n", "max", "p99", "bound", "pass"],
    );
    let n = samples(cfg, 10_000);
    let geo = cfg.geometry.to_string();
    match cfg.geometry {
        Geometry::Complex => {
            let s = cfg.s.unwrap_or(DEFAULT_S);
            let bound = cfg.bound.unwrap_or(COMPLEX_OVERLAP);
            for r in &cfg.r {
                let lad = build_complex_ladder::<f64>(r.0)?;
                let levels: Vec<usize> = if cfg.sigma.is_empty() {
                    (0..lad.levels.len()).collect()
                } else {
                    cfg.sigma.iter().map(|sg| lad.level_of(sg.0)).collect::<sqlab::Result<_>>()?
                };
                for lv in levels {
                    for o in complex_overlap_profile(&lad, lv, s, n, cfg.seed)? {
                        let pass = o.max_count as f64 <= bound;
                        t.push(row![
                            geo.as_str(),
                            Cell::Empty,
                            Cell::Dy(o.r),
                            Cell::Dy(o.sigma),
                            Cell::Empty,
                            o.dilation,
                            o.h_class.as_str(),
                            o.n,
                            o.max_count,
                            o.p99_count,
                            bound,
                            pass
                        ]);
                    }
                }
            }
        }
        Geometry::Cone | Geometry::Curve => {
            let s = cfg.s.unwrap_or(CONE_S);
            let bound = cfg.bound.unwrap_or(CONE_OVERLAP);
            for &k in &cfg.k {
                for r in &cfg.r {
                    let lad = build_centered_ladder_with::<f64>(k, r.0, cfg.c0)?;
                    let levels: Vec<usize> = if cfg.sigma.is_empty() {
                        (0..lad.levels.len()).collect()
                    } else {
                        cfg.sigma.iter().map(|sg| lad.level_of(sg.0)).collect::<sqlab::Result<_>>()?
                    };
                    for kb in lad.blocks() {
                        let top = lad.sigma0_level(kb);
                        for &lv in &levels {
                            if lv > top || lad.levels[lv].count_in_block(kb) == 0 {
                                continue;
                            }
                            for o in overlap_profile(&lad, lv, kb, s, n, cfg.seed)? {
                                let status = if o.h_class.ends_with("-cross") {
                                    Cell::Exempt
                                } else {
                                    Cell::Pass(o.max_count as f64 <= bound)
                                };
                                t.push(row![
                                    "cone",
                                    k,
                                    Cell::Dy(o.r),
                                    Cell::Dy(o.sigma),
                                    Cell::Dy(o.block),
                                    o.dilation,
                                    o.h_class.as_str(),
                                    o.n,
                                    o.max_count,
                                    o.p99_count,
                                    bound,
                                    status
                                ]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(t)
}

fn ends(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "ends",
        &["r", "sigma", "configs", "tested_re", "tested_im", "alternating_re", "alternating_im", "counterexamples", "pass"],
    );
    let attempts = cfg.attempts.unwrap_or(20 * cfg.configs);
    let rep = alternating_ends_sweep::<f64>(cfg.configs, attempts, cfg.seed)?;
    for (r, sigma) in SWEEP_SCALES {
        let cs: Vec<_> = rep.configs.iter().filter(|c| c.r == r && c.sigma == sigma).collect();
        let sum = |f: &dyn Fn(&sqlab::complex_cone::EndsSignReport) -> usize| -> usize {
            cs.iter().map(|c| f(&c.report)).sum()
        };
        let ce = sum(&|x| x.counterexamples[0] + x.counterexamples[1]);
        t.push(row![
            Cell::Dy(r),
            Cell::Dy(sigma),
            cs.len(),
            sum(&|x| x.tested[0]),
            sum(&|x| x.tested[1]),
            sum(&|x| x.alternating[0]),
            sum(&|x| x.alternating[1]),
            ce,
            ce == 0
        ]);
    }
    t.check(format!("{} nonempty configurations", cfg.configs), rep.configs.len() >= cfg.configs);
    t.detail(json!({"attempts": rep.attempts, "vacuous": rep.vacuous, "nonempty": rep.configs.len()}));
    Ok(t)
}

fn rescale(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "rescale",
        &["k", "M", "c", "f2pp_lo", "f2pp_hi", "delta_image", "dilation", "pass"],
    );
    for &k in &cfg.k {
        let (lo, hi) = f2_second_derivative_range(k, cfg.c);
        let f2_ok = lo >= F2_RANGE.0 && hi <= F2_RANGE.1;
        for m in &cfg.m {
            let map = lorentz_rescale::<f64>(k, m.0, cfg.c)?;
            for d in &cfg.delta {
                let dil = map.subplank_dilation(map.a_scale * d.0, cfg.c0, RESCALE_SUBPLANKS);
                t.push(row![k, Cell::Dy(m.0), cfg.c, lo, hi, Cell::Dy(d.0), dil, f2_ok && dil <= RESCALE_FACTOR]);
            }
        }
    }
    Ok(t)
}

fn ratio(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "ratio",
        &["k", "delta", "grid", "occupancy", "trials", "empty", "blocks", "cells", "max", "mean", "bound", "pass"],
    );
    let n = cfg.grid.unwrap_or(1024);
    for &k in &cfg.k {
        let mut maxes = Vec::new();
        for d in &cfg.delta {
            match cfg.occupancy {
                Occupancy::Single => {
                    let lab = curve_lab(k, d.0, n)?;
                    let parts = single_block_ratio(&lab, lab.blocks.len() / 2, cfg.seed)?;
                    let pass = (parts.ratio - 1.0).abs() <= SINGLE_TOL;
                    t.push(row![
                        k,
                        Cell::Dy(d.0),
                        n,
                        "single",
                        1usize,
                        0usize,
                        1usize,
                        Cell::Empty,
                        parts.ratio,
                        parts.ratio,
                        1.0,
                        pass
                    ]);
                    t.detail(json!({"k": k, "delta": d.0, "parts": parts}));
                }
                Occupancy::Fraction(p) => {
                    let trials = cfg.trials.unwrap_or(20);
                    let rep = ratio_sweep_with(k, d.0, n, trials, cfg.seed, p)?;
                    let bound = cfg.bound.unwrap_or(RATIO_C_EMP);
                    maxes.push((d.0, rep.max));
                    let pass = rep.ratios.is_empty() || rep.max <= bound;
                    t.push(row![
                        k,
                        Cell::Dy(d.0),
                        n,
                        p,
                        trials,
                        rep.n_empty,
                        rep.n_blocks,
                        rep.n_cells,
                        rep.max,
                        rep.mean,
                        bound,
                        pass
                    ]);
                    t.detail(json!({"report": rep}));
                }
            }
        }
        let (ds, ms): (Vec<f64>, Vec<f64>) = maxes.iter().filter(|x| x.1.is_finite()).cloned().unzip();
        if ds.len() >= 2 {
            let slope = loglog_slope(&ds, &ms);
            t.check(format!("k={k} log-log slope {slope:.4} within ±{SLOPE_TOL}"), slope.abs() <= SLOPE_TOL);
            t.detail(json!({"k": k, "slope": slope}));
        }
    }
    Ok(t)
}

fn kakeya(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "kakeya",
        &[
            "k", "r", "grid", "trials", "planks", "max_ratio", "mean_ratio", "calibration", "plancherel_err", "bound",
            "pass",
        ],
    );
    let n = cfg.grid.unwrap_or(128);
    let trials = cfg.trials.unwrap_or(10);
    let bound = cfg.bound.unwrap_or(KAKEYA_C_EMP);
    for &k in &cfg.k {
        for r in &cfg.r {
            let rep = kakeya_run(k, r.0, n, trials, cfg.seed)?;
            let cal_ok = (CALIBRATION_RANGE.0..=CALIBRATION_RANGE.1).contains(&rep.calibration);
            let pass = rep.max_ratio <= bound && cal_ok && rep.max_plancherel_error <= PLANCHEREL_TOL;
            t.push(row![
                k,
                Cell::Dy(r.0),
                n,
                trials,
                rep.n_planks,
                rep.max_ratio,
                rep.mean_ratio,
                rep.calibration,
                rep.max_plancherel_error,
                bound,
                pass
            ]);
            t.detail(json!({"report": rep}));
        }
    }
    Ok(t)
}

fn complex(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(
        "complex",
        &["r", "lattice", "per_plank", "trials", "planks", "max_ratio", "mean_ratio", "plancherel_err", "bound", "pass"],
    );
    let trials = cfg.trials.unwrap_or(10);
    let bound = cfg.bound.unwrap_or(COMPLEX_KAKEYA_C_EMP);
    for r in &cfg.r {
        let rep = complex_kakeya_run(r.0, cfg.per_plank, trials, cfg.seed)?;
        let setup = complex_kakeya_setup(r.0)?;
        let perr = complex_plancherel_check(&setup, COMPLEX_CHECK.0, COMPLEX_CHECK.1, cfg.seed)?;
        let pass = rep.max_ratio <= bound && perr <= PLANCHEREL_TOL;
        t.push(row![
            Cell::Dy(r.0),
            rep.lattice,
            cfg.per_plank,
            trials,
            rep.n_planks,
            rep.max_ratio,
            rep.mean_ratio,
            perr,
            bound,
            pass
        ]);
        t.detail(json!({"report": rep}));
    }
    let ferr = frame_identity_error(FRAME_SAMPLES, cfg.seed);
    t.check(format!("frame identities within {FRAME_TOL:e}"), ferr <= FRAME_TOL);
    t.detail(json!({"frame_identity_error": ferr}));
    Ok(t)
}

/// The configurations `sweep` fans out to, one per item of the split list.
pub fn split(cfg: &RunConfig) -> Result<Vec<RunConfig>> {
    let Some(of) = cfg.of else { bail!("sweep needs --of <command>") };
    if of == Command::Sweep {
        bail!("sweep cannot sweep itself");
    }
    let mut base = cfg.clone();
    base.command = of;
    base.of = None;
    let complex = cfg.geometry == Geometry::Complex;
    let out: Vec<RunConfig> = match of {
        Command::Ends => vec![base],
        Command::Complex => cfg.r.iter().map(|&r| RunConfig { r: vec![r], ..base.clone() }).collect(),
        Command::Overlap if complex => cfg.r.iter().map(|&r| RunConfig { r: vec![r], ..base.clone() }).collect(),
        Command::Cover | Command::Biortho if complex => {
            cfg.delta.iter().map(|&d| RunConfig { delta: vec![d], ..base.clone() }).collect()
        }
        _ => cfg.k.iter().map(|&k| RunConfig { k: vec![k], ..base.clone() }).collect(),
    };
    Ok(out)
}

fn sweep(cfg: &RunConfig) -> Result<Table> {
    let parts = split(cfg)?;
    let tables: Vec<Table> = parts.par_iter().map(run_config).collect::<Result<_>>()?;
    let mut it = tables.into_iter();
    let mut t = it.next().expect("at least one run");
    for o in it {
        t.extend(o);
    }
    t.name = format!("sweep_{}", t.name);
    Ok(t)
}
