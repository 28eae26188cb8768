//! Empirical lower bounds for `R_s`-bounds of operator families.
//!
//! The defining ratio compares the mixed norm of `(T_j x_j)_j` against that
//! of `(x_j)_j`. The estimator is a seeded multi-restart ascent over tuples:
//! a deterministic candidate pass (canonical witnesses, coordinate
//! one-tuples), then per-restart hill climbing with power-iteration-style
//! reweighting, Gaussian jitter, and greedy operator swaps. Everything it
//! reports is a lower bound for the true `R_s`-bound; certified upper bounds
//! exist only where a scalar oracle does (diagonal and dominated families).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mixed_norm, Exponent, FunctionStack, GridFunction, MeasureGrid};
use crate::operators::{ApplyOp, MaximalOperator, OnbDirection, OperatorHandle, ResolventMember};
use crate::sampling::SeededRng;

/// `|| (sum_j |T_j x_j|^s)^{1/s} || / || (sum_j |x_j|^s)^{1/s} ||`.
pub fn rs_ratio(ops: &[Arc<dyn ApplyOp>], inputs: &[GridFunction], s: Exponent) -> Result<f64> {
    if ops.is_empty() || ops.len() != inputs.len() {
        return Err(Error::Config(format!(
            "tuple needs equal nonzero lengths, got {} ops and {} inputs",
            ops.len(),
            inputs.len()
        )));
    }
    let denom_stack = FunctionStack::from_functions(inputs, None)?;
    let denom = mixed_norm(&denom_stack, s)?;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let mapped: Result<Vec<GridFunction>> =
        ops.iter().zip(inputs).map(|(op, x)| op.apply_to(x)).collect();
    let numer = mixed_norm(&FunctionStack::from_functions(&mapped?, None)?, s)?;
    Ok(numer / denom)
}

type WitnessBuilder =
    Arc<dyn Fn(usize) -> Option<(Vec<usize>, Vec<GridFunction>)> + Send + Sync>;

/// A (finite) operator family plus optional canonical witnesses and a
/// certified upper bound from a scalar oracle.
pub struct OperatorFamily {
    pub label: String,
    pub members: Vec<Arc<dyn ApplyOp>>,
    pub grid: Arc<MeasureGrid>,
    pub witness: Option<WitnessBuilder>,
    pub certified_upper: Option<f64>,
}

impl OperatorFamily {
    pub fn from_members(
        label: impl Into<String>,
        members: Vec<Arc<dyn ApplyOp>>,
        grid: Arc<MeasureGrid>,
    ) -> Self {
        OperatorFamily { label: label.into(), members, grid, witness: None, certified_upper: None }
    }

    /// Positive diagonal multipliers: the exact `R_s`-bound is the largest
    /// scalar entry (domination), certified.
    pub fn diagonal(spectra: &[Vec<f64>], p: Exponent) -> Result<Self> {
        let n = spectra.first().ok_or(Error::EmptyFamily)?.len();
        let mut members: Vec<Arc<dyn ApplyOp>> = Vec::new();
        let mut upper = 0.0_f64;
        let mut grid = None;
        for diag in spectra {
            let complex: Vec<Complex64> = diag.iter().map(|d| Complex64::new(*d, 0.0)).collect();
            let op = OperatorHandle::diagonal(&complex, p)?;
            if grid.is_none() {
                grid = Some(op.grid().clone());
            }
            upper = diag.iter().fold(upper, |a, d| a.max(*d));
            members.push(Arc::new(op));
        }
        Ok(OperatorFamily {
            label: format!("diagonal-family(n={n}, k={})", spectra.len()),
            members,
            grid: grid.unwrap(),
            witness: None,
            certified_upper: Some(upper),
        })
    }

    /// The single Rademacher/indicator map `S` or `T` with its canonical
    /// witness tuples from the classical counterexample.
    pub fn onb(
        direction: OnbDirection,
        max_rank: usize,
        grid_size: usize,
        p: Exponent,
    ) -> Result<Self> {
        let take_rademacher = matches!(direction, OnbDirection::S);
        let (rade, haar) = crate::operators::onb_systems(max_rank, grid_size)?;
        let systems: Vec<Vec<f64>> = if take_rademacher { rade } else { haar };
        let op = OperatorHandle::onb_map(direction, max_rank, grid_size, p)?;
        let grid = op.grid().clone();
        let witness_grid = grid.clone();
        let builder: WitnessBuilder = Arc::new(move |n| {
            if n == 0 || n > systems.len() {
                return None;
            }
            let inputs: Vec<GridFunction> = systems[..n]
                .iter()
                .map(|v| {
                    GridFunction::new(
                        witness_grid.clone(),
                        v.iter().map(|x| Complex64::new(*x, 0.0)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            Some((vec![0; n], inputs))
        });
        Ok(OperatorFamily {
            label: format!(
                "onb-map:{}(rank={max_rank}, n={grid_size})",
                if take_rademacher { "S" } else { "T" }
            ),
            members: vec![Arc::new(op)],
            grid,
            witness: Some(builder),
            certified_upper: None,
        })
    }

    /// `{lambda R(lambda, A)}` over a sampled set outside the sector.
    pub fn resolvent(op: Arc<OperatorHandle>, lambdas: &[Complex64]) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::EmptyFamily);
        }
        let grid = op.grid().clone();
        let members: Vec<Arc<dyn ApplyOp>> = lambdas
            .iter()
            .map(|l| Arc::new(ResolventMember { op: op.clone(), lambda: *l }) as Arc<dyn ApplyOp>)
            .collect();
        Ok(OperatorFamily {
            label: format!("resolvent({}, {} samples)", op.label(), lambdas.len()),
            members,
            grid,
            witness: None,
            certified_upper: None,
        })
    }

    /// The singleton `{M}` with spike witnesses (the log-growth construction
    /// for `s = 1`).
    pub fn maximal(grid: Arc<MeasureGrid>) -> Result<Self> {
        let op = MaximalOperator::new(grid.clone())?;
        let n = grid.len();
        let witness_grid = grid.clone();
        let builder: WitnessBuilder = Arc::new(move |k| {
            if k == 0 || k > n {
                return None;
            }
            let inputs: Vec<GridFunction> = (0..k)
                .map(|j| GridFunction::coordinate(witness_grid.clone(), j * n / k))
                .collect();
            Some((vec![0; k], inputs))
        });
        Ok(OperatorFamily {
            label: format!("maximal(n={n})"),
            members: vec![Arc::new(op)],
            grid,
            witness: Some(builder),
            certified_upper: None,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub op_indices: Vec<usize>,
    pub inputs: Vec<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RsBoundReport {
    pub s: Exponent,
    pub family: String,
    pub best_ratio: f64,
    pub witness: Witness,
    pub trace: Vec<f64>,
    pub n_evaluations: u64,
    pub restarts: usize,
    pub seed: u64,
}

impl RsBoundReport {
    pub fn witness_tuple(&self, grid: &Arc<MeasureGrid>) -> Result<Vec<GridFunction>> {
        self.witness
            .inputs
            .iter()
            .map(|vals| {
                GridFunction::new(
                    grid.clone(),
                    vals.iter().map(|(re, im)| Complex64::new(*re, *im)).collect(),
                )
            })
            .collect()
    }
}

struct Candidate {
    ratio: f64,
    op_indices: Vec<usize>,
    inputs: Vec<GridFunction>,
}

fn evaluate(
    family: &OperatorFamily,
    op_indices: &[usize],
    inputs: &[GridFunction],
    s: Exponent,
) -> Option<f64> {
    let ops: Vec<Arc<dyn ApplyOp>> =
        op_indices.iter().map(|&i| family.members[i].clone()).collect();
    rs_ratio(&ops, inputs, s).ok()
}

/// Randomized multi-restart lower-bound search for `R_s` of the family.
///
/// `budget` caps ratio evaluations; `forced_tuple` pins the tuple size (used
/// by growth scans). Identical seeds give identical reports.
pub fn estimate_rs_bound(
    family: &OperatorFamily,
    s: Exponent,
    budget: u64,
    seed: u64,
    forced_tuple: Option<usize>,
) -> Result<RsBoundReport> {
    if family.members.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let n_points = family.grid.len();
    let mut evals: u64 = 0;
    let mut best: Option<Candidate> = None;
    let mut trace: Vec<f64> = Vec::new();

    let consider = |cand: Candidate, trace: &mut Vec<f64>, best: &mut Option<Candidate>| {
        let improved = best.as_ref().map(|b| cand.ratio > b.ratio).unwrap_or(true);
        if improved {
            *best = Some(cand);
        }
        trace.push(best.as_ref().unwrap().ratio);
    };

    // deterministic candidate pass: canonical witnesses first
    if let Some(builder) = &family.witness {
        let sizes: Vec<usize> = match forced_tuple {
            Some(n) => vec![n],
            None => vec![1, 2, 4, 8, 16, 32],
        };
        for n in sizes {
            if let Some((idx, inputs)) = builder(n) {
                if let Some(r) = evaluate(family, &idx, &inputs, s) {
                    evals += 1;
                    consider(
                        Candidate { ratio: r, op_indices: idx, inputs },
                        &mut trace,
                        &mut best,
                    );
                }
            }
        }
    }
    // coordinate one-tuples (exact for dominated diagonal families)
    if forced_tuple.map(|n| n == 1).unwrap_or(true) {
        let sweep = (family.members.len() as u64) * (n_points as u64);
        if sweep <= budget / 2 {
            for (m, _) in family.members.iter().enumerate() {
                for i in 0..n_points {
                    let x = GridFunction::coordinate(family.grid.clone(), i);
                    if let Some(r) = evaluate(family, &[m], std::slice::from_ref(&x), s) {
                        evals += 1;
                        consider(
                            Candidate { ratio: r, op_indices: vec![m], inputs: vec![x] },
                            &mut trace,
                            &mut best,
                        );
                    }
                }
            }
        }
    }

    // concurrent restarts with independent substreams, deterministic merge
    let restarts = 8usize;
    let per_restart = budget.saturating_sub(evals) / restarts as u64;
    let locals: Vec<(Vec<f64>, Option<Candidate>, u64)> = (0..restarts)
        .into_par_iter()
        .map(|ridx| restart_search(family, s, per_restart, seed, ridx, forced_tuple))
        .collect();
    for (local_trace, local_best, local_evals) in locals {
        evals += local_evals;
        for r in local_trace {
            let running = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
            trace.push(running.max(r));
        }
        if let Some(cand) = local_best {
            let improved = best.as_ref().map(|b| cand.ratio > b.ratio).unwrap_or(true);
            if improved {
                best = Some(cand);
            }
        }
    }
    let best = best.ok_or(Error::ZeroDenominator)?;
    Ok(RsBoundReport {
        s,
        family: family.label.clone(),
        best_ratio: best.ratio,
        witness: Witness {
            op_indices: best.op_indices,
            inputs: best
                .inputs
                .iter()
                .map(|f| f.values().iter().map(|v| (v.re, v.im)).collect())
                .collect(),
        },
        trace,
        n_evaluations: evals,
        restarts,
        seed,
    })
}

fn restart_search(
    family: &OperatorFamily,
    s: Exponent,
    per_restart: u64,
    seed: u64,
    ridx: usize,
    forced_tuple: Option<usize>,
) -> (Vec<f64>, Option<Candidate>, u64) {
    let mut rng = SeededRng::substream(seed, ridx as u64);
    let mut local_best: Option<Candidate> = None;
    let mut local_trace = Vec::new();
    let mut local_evals = 0u64;
    let tuple_sizes = [1usize, 2, 4, 8];
    while local_evals < per_restart {
        let n = forced_tuple.unwrap_or_else(|| tuple_sizes[rng.index(tuple_sizes.len())]);
        let mut op_indices: Vec<usize> =
            (0..n).map(|_| rng.index(family.members.len())).collect();
        let mut inputs: Vec<GridFunction> =
            (0..n).map(|_| random_input(&family.grid, &mut rng)).collect();
        // optionally seed from the canonical witness
        if let Some(builder) = &family.witness {
            if rng.uniform() < 0.5 {
                if let Some((idx, w)) = builder(n) {
                    op_indices = idx;
                    inputs = w;
                }
            }
        }
        let mut current = match evaluate(family, &op_indices, &inputs, s) {
            Some(r) => r,
            None => {
                local_evals += 1;
                continue;
            }
        };
        local_evals += 1;
        let iterations = (per_restart / 8).clamp(8, 200) as usize;
        let mut step = 0.5_f64;
        for _ in 0..iterations {
            if local_evals >= per_restart {
                break;
            }
            let j = rng.index(n);
            let mode = rng.index(3);
            let mut prop_ops = op_indices.clone();
            let mut prop_inputs = inputs.clone();
            match mode {
                0 => {
                    // reweight toward the coordinates the operator amplifies
                    let op = &family.members[op_indices[j]];
                    if let Ok(y) = op.apply_to(&inputs[j]) {
                        let peak = y.values().iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
                        if peak > 0.0 {
                            let vals: Vec<Complex64> = inputs[j]
                                .values()
                                .iter()
                                .zip(y.values())
                                .map(|(xv, yv)| xv * (0.05 + yv.norm() / peak))
                                .collect();
                            if let Ok(f) = GridFunction::new(family.grid.clone(), vals) {
                                prop_inputs[j] = f;
                            }
                        }
                    }
                }
                1 => {
                    let noise = random_input(&family.grid, &mut rng);
                    prop_inputs[j] = inputs[j]
                        .add(&noise.scale(Complex64::new(step, 0.0)))
                        .unwrap_or_else(|_| inputs[j].clone());
                }
                _ => {
                    prop_ops[j] = rng.index(family.members.len());
                }
            }
            if let Some(r) = evaluate(family, &prop_ops, &prop_inputs, s) {
                local_evals += 1;
                if r > current {
                    current = r;
                    op_indices = prop_ops;
                    inputs = prop_inputs;
                } else if mode == 1 {
                    step *= 0.8;
                }
            }
        }
        let cand = Candidate { ratio: current, op_indices, inputs };
        let improved = local_best.as_ref().map(|b| cand.ratio > b.ratio).unwrap_or(true);
        if improved {
            local_best = Some(cand);
        }
        local_trace.push(local_best.as_ref().unwrap().ratio);
    }
    (local_trace, local_best, local_evals)
}

fn random_input(grid: &Arc<MeasureGrid>, rng: &mut SeededRng) -> GridFunction {
    match rng.index(3) {
        0 => GridFunction::coordinate(grid.clone(), rng.index(grid.len())),
        _ => {
            let vals = rng.complex_vector(grid.len());
            GridFunction::new(grid.clone(), vals).unwrap()
        }
    }
}

/// Empirical `M_{s,sigma}(A)` lower bound: the estimator run on the sampled
/// resolvent family `{lambda R(lambda, A)}`.
pub fn rs_sectoriality_scan(
    op: Arc<OperatorHandle>,
    s: Exponent,
    sigma: f64,
    lambdas: &[Complex64],
    budget: u64,
    seed: u64,
) -> Result<RsBoundReport> {
    for l in lambdas {
        if l.arg().abs() <= sigma {
            return Err(Error::LambdaInSector(*l, sigma));
        }
    }
    let family = OperatorFamily::resolvent(op, lambdas)?;
    estimate_rs_bound(&family, s, budget, seed, None)
}

/// Log-spaced resolvent sample on rays outside the closed sector of angle
/// `sigma`, including the negative real axis.
pub fn lambda_sample(sigma: f64, radii: usize, rays: usize) -> Vec<Complex64> {
    let mut out = Vec::new();
    for k in 0..rays {
        let angle = if rays == 1 {
            std::f64::consts::PI
        } else {
            sigma + (std::f64::consts::PI - sigma) * (k as f64 + 1.0) / rays as f64
        };
        for r in 0..radii {
            let rad = 10.0_f64.powf(-4.0 + 8.0 * r as f64 / (radii.max(2) - 1) as f64);
            out.push(Complex64::from_polar(rad, angle));
            if angle < std::f64::consts::PI {
                out.push(Complex64::from_polar(rad, -angle));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthPoint {
    pub n: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub s: Exponent,
    pub family: String,
    pub points: Vec<GrowthPoint>,
    pub slope: f64,
    pub r_squared: f64,
    /// slope > 0.1 with R^2 > 0.9
    pub unbounded_empirical: bool,
}

/// Fit `log best_ratio` against `log n` over doubling tuple sizes; declares
/// "not R_s-bounded (empirical)" on slope > 0.1 with regression R^2 > 0.9.
pub fn growth_scan(
    family: &OperatorFamily,
    s: Exponent,
    n_values: &[usize],
    budget_per_n: u64,
    seed: u64,
) -> Result<GrowthReport> {
    let mut points = Vec::with_capacity(n_values.len());
    for (i, &n) in n_values.iter().enumerate() {
        let report =
            estimate_rs_bound(family, s, budget_per_n, seed.wrapping_add(i as u64), Some(n))?;
        points.push(GrowthPoint { n, ratio: report.best_ratio });
    }
    let (slope, r2) = log_log_fit(&points);
    Ok(GrowthReport {
        s,
        family: family.label.clone(),
        points,
        slope,
        r_squared: r2,
        unbounded_empirical: slope > 0.1 && r2 > 0.9,
    })
}

fn log_log_fit(points: &[GrowthPoint]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ratio.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

#[derive(Clone, Debug, Serialize)]
pub struct PersistenceRecord {
    pub s: Exponent,
    pub family_a: String,
    pub family_b: String,
    pub estimate_a: f64,
    pub estimate_b: f64,
    pub sum_estimate: f64,
    pub product_estimate: f64,
    pub certified_a: Option<f64>,
    pub certified_b: Option<f64>,
    /// `Some(pass)` when both certified bounds exist; `None` records the
    /// three estimates as advisory only.
    pub sum_within_bound: Option<bool>,
    pub product_within_bound: Option<bool>,
}

struct ComposedOp {
    a: Arc<dyn ApplyOp>,
    b: Arc<dyn ApplyOp>,
    sum: bool,
}

impl ApplyOp for ComposedOp {
    fn apply_to(&self, x: &GridFunction) -> Result<GridFunction> {
        if self.sum {
            self.a.apply_to(x)?.add(&self.b.apply_to(x)?)
        } else {
            self.a.apply_to(&self.b.apply_to(x)?)
        }
    }
    fn describe(&self) -> String {
        let sep = if self.sum { "+" } else { "*" };
        format!("({} {sep} {})", self.a.describe(), self.b.describe())
    }
}

/// Estimate the sum and product families and compare against certified upper
/// bounds when those exist.
pub fn rs_persistence_check(
    a: &OperatorFamily,
    b: &OperatorFamily,
    s: Exponent,
    budget: u64,
    seed: u64,
) -> Result<PersistenceRecord> {
    let compose = |sum: bool| -> OperatorFamily {
        let mut members: Vec<Arc<dyn ApplyOp>> = Vec::new();
        for ma in &a.members {
            for mb in &b.members {
                members.push(Arc::new(ComposedOp { a: ma.clone(), b: mb.clone(), sum }));
            }
        }
        OperatorFamily::from_members(
            format!("{} {} {}", a.label, if sum { "+" } else { "*" }, b.label),
            members,
            a.grid.clone(),
        )
    };
    let est_a = estimate_rs_bound(a, s, budget, seed, None)?.best_ratio;
    let est_b = estimate_rs_bound(b, s, budget, seed.wrapping_add(1), None)?.best_ratio;
    let sum_estimate =
        estimate_rs_bound(&compose(true), s, budget, seed.wrapping_add(2), None)?.best_ratio;
    let product_estimate =
        estimate_rs_bound(&compose(false), s, budget, seed.wrapping_add(3), None)?.best_ratio;
    let (sum_ok, prod_ok) = match (a.certified_upper, b.certified_upper) {
        (Some(ua), Some(ub)) => (
            Some(sum_estimate <= (ua + ub) * (1.0 + 1e-9)),
            Some(product_estimate <= ua * ub * (1.0 + 1e-9)),
        ),
        _ => (None, None),
    };
    Ok(PersistenceRecord {
        s,
        family_a: a.label.clone(),
        family_b: b.label.clone(),
        estimate_a: est_a,
        estimate_b: est_b,
        sum_estimate,
        product_estimate,
        certified_a: a.certified_upper,
        certified_b: b.certified_upper,
        sum_within_bound: sum_ok,
        product_within_bound: prod_ok,
    })
}
