//! Continuous and dyadic s-power function norms.
//!
//! The continuous norm is `|| ( int |t^{-theta} phi(tA) x|^s dt/t )^{1/s} ||_X`
//! over a log-uniform t-grid whose step divides `ln 2`, so every dyadic norm
//! is a literal sub-sum of a continuous stack. Windows are derived from the
//! operator's spectral modulus bounds and the symbol's decay rates unless
//! pinned explicitly; boundary layers are extrapolated geometrically to an
//! estimated tail share, and a window is accepted only when that share is
//! below the truncation tolerance.

use std::f64::consts::LN_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcalc::{ContourEngine, ContourSpec, Symbol};
use crate::grid::{mixed_norm, x_norm, Exponent, FunctionStack, GridFunction};
use crate::operators::OperatorHandle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Continuous,
    Dyadic,
    /// Continuous norm truncated to `t <= 1` (equivalent inhomogeneous norm
    /// for `theta > 0`).
    UnitInterval,
    /// Outer `l^s` of layer X-norms instead of `X` of pointwise `l^s`.
    BesovDyadic,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum WindowSpec {
    /// Derive from spectral bounds and symbol decay.
    Auto,
    /// Explicit continuous range (used by `Continuous`/`UnitInterval` modes).
    Continuous { t_min: f64, t_max: f64 },
    /// Explicit dyadic range `j_min..=j_max`.
    Dyadic { j_min: i32, j_max: i32 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NormSpec {
    pub theta: f64,
    pub s: Exponent,
    pub mode: NormMode,
    pub window: WindowSpec,
    /// Nodes per octave of the continuous t-grid (step `ln 2 / per_octave`).
    pub per_octave: u32,
    /// Extra dyadic padding added to auto windows on refinement.
    pub extra_pad: u32,
    pub inhomogeneous: bool,
    pub contour: ContourSpec,
    /// Accepted tail share of the norm.
    pub tail_tol: f64,
}

impl NormSpec {
    pub fn new(theta: f64, s: Exponent, mode: NormMode) -> Self {
        NormSpec {
            theta,
            s,
            mode,
            window: WindowSpec::Auto,
            per_octave: 8,
            extra_pad: 0,
            inhomogeneous: false,
            contour: ContourSpec::default(),
            tail_tol: 1e-6,
        }
    }

    pub fn with_window(mut self, window: WindowSpec) -> Self {
        self.window = window;
        self
    }

    pub fn with_contour(mut self, contour: ContourSpec) -> Self {
        self.contour = contour;
        self
    }

    /// One refinement step: wider window, denser nodes.
    pub fn refined(&self) -> NormSpec {
        let mut next = *self;
        next.extra_pad += 8;
        next.per_octave *= 2;
        next.window = match self.window {
            WindowSpec::Continuous { t_min, t_max } => {
                WindowSpec::Continuous { t_min: t_min / 4.0, t_max: t_max * 4.0 }
            }
            WindowSpec::Dyadic { j_min, j_max } => {
                WindowSpec::Dyadic { j_min: j_min - 8, j_max: j_max + 8 }
            }
            WindowSpec::Auto => WindowSpec::Auto,
        };
        next
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub value: f64,
    pub theta: f64,
    pub s: Exponent,
    pub mode: NormMode,
    pub n_layers: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub tail_share: f64,
    pub tail_ok: bool,
}

/// Dyadic padding (in octaves) pushing a rate-`d` geometric tail below
/// `10^{-target_exp10}` in amplitude.
fn pad_octaves(rate: f64, target_exp10: f64) -> i64 {
    let d = rate.clamp(0.25, 4.0);
    ((target_exp10 * 10.0_f64.ln() / LN_2) / d).ceil() as i64
}

/// Depth at which the `t^{-theta}`-amplified f64 cancellation noise of a
/// layer meets the shrinking tail amplitude; padding beyond this point only
/// adds noise.
fn balanced_octaves(combined_rate: f64) -> i64 {
    (34.5 / (LN_2 * combined_rate.clamp(0.25, 4.0))).ceil() as i64
}

struct ResolvedWindow {
    /// strictly increasing scalings
    t_nodes: Vec<f64>,
    /// `dt/t` trapezoid weights; `None` for dyadic (unit) weights
    weights: Option<Vec<f64>>,
    /// amplitude decay rates per octave at the two ends, for tail
    /// extrapolation
    rate_lo: f64,
    rate_hi: f64,
    octave_step: u32,
}

/// Reusable norm engine for one `(operator, symbol, theta, mode, window)`;
/// the contour solve set is shared across inputs and across `s`.
pub struct NormEvaluator {
    symbol: Symbol,
    spec: NormSpec,
    window: ResolvedWindow,
    engine: ContourEngine,
}

impl NormEvaluator {
    pub fn new(op: Arc<OperatorHandle>, symbol: &Symbol, spec: NormSpec) -> Result<Self> {
        match spec.mode {
            NormMode::Dyadic | NormMode::BesovDyadic => symbol.require_phi_sigma(spec.theta)?,
            _ => symbol.require_phi(spec.theta)?,
        }
        if spec.mode == NormMode::BesovDyadic && !(spec.theta > 0.0 && spec.theta < 1.0) {
            return Err(Error::ThetaRange(format!(
                "Besov dyadic norm needs theta in (0,1), got {}",
                spec.theta
            )));
        }
        if spec.inhomogeneous && spec.theta < 0.0 {
            return Err(Error::ThetaRange(format!(
                "inhomogeneous norms need theta >= 0, got {}",
                spec.theta
            )));
        }
        let window = resolve_window(&op, symbol, &spec)?;
        // Layers carry a t^{-theta} weight, and a layer's truncation noise is
        // an absolute floor ~e^{-width} at BOTH contour ends (for extreme t
        // the whole shifted window sits where lambda R is order one), so the
        // widening must cover the worst weighted amplification on each side.
        let t_min = *window.t_nodes.first().unwrap();
        let t_max = *window.t_nodes.last().unwrap();
        let (r_lo, r_hi) = op.spectral_bounds().unwrap_or((1.0, 1.0));
        let theta = spec.theta;
        let extra = (-theta * (t_min * r_lo).ln())
            .max(theta * (t_max * r_hi).ln())
            .max(0.0)
            + 3.0;
        let engine = ContourEngine::new_with_extra(
            &op,
            symbol,
            &spec.contour,
            &window.t_nodes,
            (extra, extra),
        )?;
        Ok(NormEvaluator { symbol: symbol.clone(), spec, window, engine })
    }

    pub fn spec(&self) -> &NormSpec {
        &self.spec
    }

    pub fn t_nodes(&self) -> &[f64] {
        &self.window.t_nodes
    }

    pub fn layer_weights(&self) -> Option<&[f64]> {
        self.window.weights.as_deref()
    }

    /// The weighted stack `(t^{-theta} phi(tA) x)_t` with `dt/t` weights in
    /// continuous modes.
    pub fn weighted_stack(&self, x: &GridFunction) -> Result<FunctionStack> {
        let resolved = self.engine.resolve(x);
        let eval = self.symbol.h0_part();
        let mut layers = Vec::with_capacity(self.window.t_nodes.len());
        for &t in &self.window.t_nodes {
            let layer = resolved.layer(eval.as_ref(), t)?;
            layers.push(layer.scale(num_complex::Complex64::new(t.powf(-self.spec.theta), 0.0)));
        }
        FunctionStack::from_functions(&layers, self.window.weights.clone())
    }

    pub fn norm(&self, x: &GridFunction) -> Result<NormReport> {
        let stack = self.weighted_stack(x)?;
        self.norm_from_stack(&stack, x, self.spec.s)
    }

    /// Evaluate the norm from a precomputed stack; the stack is independent
    /// of `s`, so several exponents can share it.
    pub fn norm_from_stack(
        &self,
        stack: &FunctionStack,
        x: &GridFunction,
        s: Exponent,
    ) -> Result<NormReport> {
        let core = match self.spec.mode {
            NormMode::BesovDyadic => {
                let layer_norms: Vec<f64> =
                    (0..stack.n_layers()).map(|j| x_norm(&stack.layer_fn(j))).collect();
                match s {
                    Exponent::Infinite => layer_norms.iter().fold(0.0_f64, |a, v| a.max(*v)),
                    Exponent::Finite(s) => {
                        layer_norms.iter().map(|v| v.powf(s)).sum::<f64>().powf(1.0 / s)
                    }
                }
            }
            _ => mixed_norm(stack, s)?,
        };
        let (tail_share, tail_ok) = self.tail_estimate(stack, core, s);
        let value = if self.spec.inhomogeneous || self.spec.mode == NormMode::BesovDyadic {
            x_norm(x) + core
        } else {
            core
        };
        Ok(NormReport {
            value,
            theta: self.spec.theta,
            s,
            mode: self.spec.mode,
            n_layers: stack.n_layers(),
            t_lo: *self.window.t_nodes.first().unwrap(),
            t_hi: *self.window.t_nodes.last().unwrap(),
            tail_share,
            tail_ok,
        })
    }

    /// Boundary-layer share of the norm, extrapolated geometrically with the
    /// symbol's decay rates. The unit-interval upper end is a hard boundary,
    /// not a truncation, so only the lower end counts there.
    fn tail_estimate(&self, stack: &FunctionStack, core: f64, s: Exponent) -> (f64, bool) {
        if core == 0.0 {
            return (0.0, true);
        }
        let n = stack.n_layers();
        let layer_scale = |j: usize| -> f64 {
            let f = stack.layer_fn(j);
            match s {
                Exponent::Infinite => f.values().iter().map(|v| v.norm()).fold(0.0, f64::max),
                _ => x_norm(&f),
            }
        };
        let per_octave = self.window.octave_step.max(1) as f64;
        let mut share = 0.0_f64;
        let ends: [(usize, f64, bool); 2] = [
            (0, self.window.rate_lo, true),
            (n - 1, self.window.rate_hi, self.spec.mode != NormMode::UnitInterval),
        ];
        for (idx, rate, counted) in ends {
            if !counted {
                continue;
            }
            let amp = layer_scale(idx);
            let step_ratio = 2.0_f64.powf(-rate.clamp(0.25, 4.0) / per_octave);
            let geom = step_ratio / (1.0 - step_ratio);
            share += amp * geom / core;
        }
        (share, share <= self.spec.tail_tol)
    }
}

fn resolve_window(
    op: &OperatorHandle,
    symbol: &Symbol,
    spec: &NormSpec,
) -> Result<ResolvedWindow> {
    let decay = symbol
        .class
        .h0_decay
        .ok_or_else(|| Error::ClassTag(format!("{} has no decay data", symbol.name)))?;
    // decay rates of the theta-weighted integrand t -> t^{-theta} phi(t a)
    let rate_lo = decay.rate0 - spec.theta;
    let rate_hi = decay.rate_inf + spec.theta;
    if rate_lo <= 0.0 || rate_hi <= 0.0 {
        return Err(Error::ThetaRange(format!(
            "theta = {} leaves no decay for {} (rates {rate_lo:.3}, {rate_hi:.3})",
            spec.theta, symbol.name
        )));
    }
    let auto_dyadic = || -> Result<(i32, i32)> {
        let (r_lo, r_hi) = op
            .spectral_bounds()
            .ok_or(Error::UnsupportedBackend("auto windows need spectral bounds; pin the window"))?;
        let pad = spec.extra_pad as i64;
        let pad_lo = pad_octaves(rate_lo, 8.0).min(balanced_octaves(rate_lo + spec.theta.max(0.0)));
        let pad_hi =
            pad_octaves(rate_hi, 8.0).min(balanced_octaves(rate_hi + (-spec.theta).max(0.0)));
        let j_min = -(r_hi.log2().ceil() as i64) - pad_lo - pad;
        let j_max = -(r_lo.log2().floor() as i64) + pad_hi + pad;
        Ok((j_min as i32, j_max as i32))
    };
    let dyadic_mode = matches!(spec.mode, NormMode::Dyadic | NormMode::BesovDyadic);
    if dyadic_mode {
        let (j_min, j_max) = match spec.window {
            WindowSpec::Dyadic { j_min, j_max } => (j_min, j_max),
            WindowSpec::Auto => auto_dyadic()?,
            WindowSpec::Continuous { .. } => {
                return Err(Error::Config("dyadic mode needs a dyadic window".into()))
            }
        };
        if j_min > j_max {
            return Err(Error::Config(format!("empty dyadic window [{j_min}, {j_max}]")));
        }
        let t_nodes: Vec<f64> = (j_min..=j_max).map(|j| 2.0_f64.powi(j)).collect();
        return Ok(ResolvedWindow { t_nodes, weights: None, rate_lo, rate_hi, octave_step: 1 });
    }
    // continuous / unit-interval: log-uniform lattice with step ln2/q
    let q = spec.per_octave.max(1);
    let (k_min, k_max) = match spec.window {
        WindowSpec::Continuous { t_min, t_max } => {
            if !(t_min > 0.0 && t_max > t_min) {
                return Err(Error::Config(format!("bad t-window ({t_min}, {t_max})")));
            }
            let k_min = (t_min.log2() * q as f64 - 1e-9).ceil() as i64;
            let k_max = (t_max.log2() * q as f64 + 1e-9).floor() as i64;
            (k_min, k_max)
        }
        WindowSpec::Auto => {
            let (j_min, j_max) = auto_dyadic()?;
            (j_min as i64 * q as i64, j_max as i64 * q as i64)
        }
        WindowSpec::Dyadic { .. } => {
            return Err(Error::Config("continuous mode needs a continuous window".into()))
        }
    };
    let (k_min, k_max) = if spec.mode == NormMode::UnitInterval {
        (k_min, k_max.min(0))
    } else {
        (k_min, k_max)
    };
    if k_min >= k_max {
        return Err(Error::Config("empty continuous window".into()));
    }
    let du = LN_2 / q as f64;
    let t_nodes: Vec<f64> = (k_min..=k_max).map(|k| (k as f64 * du).exp()).collect();
    let mut weights = vec![du; t_nodes.len()];
    weights[0] = du / 2.0;
    let last = weights.len() - 1;
    weights[last] = du / 2.0;
    Ok(ResolvedWindow { t_nodes, weights: Some(weights), rate_lo, rate_hi, octave_step: q })
}

// ---------------------------------------------------------------------------
// One-shot entry points
// ---------------------------------------------------------------------------

/// Continuous s-power norm; errors when the truncation tail exceeds the
/// spec's tolerance.
pub fn spower_norm_continuous(
    op: &Arc<OperatorHandle>,
    spec: &NormSpec,
    symbol: &Symbol,
    x: &GridFunction,
) -> Result<NormReport> {
    let mut spec = *spec;
    spec.mode = NormMode::Continuous;
    let report = NormEvaluator::new(op.clone(), symbol, spec)?.norm(x)?;
    if !report.tail_ok {
        return Err(Error::Truncation { tail: report.tail_share, tol: spec.tail_tol });
    }
    Ok(report)
}

/// Dyadic s-power norm; a boundary-heavy window is reported via `tail_ok`,
/// not an error.
pub fn spower_norm_dyadic(
    op: &Arc<OperatorHandle>,
    spec: &NormSpec,
    symbol: &Symbol,
    x: &GridFunction,
) -> Result<NormReport> {
    let mut spec = *spec;
    spec.mode = NormMode::Dyadic;
    NormEvaluator::new(op.clone(), symbol, spec)?.norm(x)
}

/// Inhomogeneous norm `||x||_X + s-power norm`; `theta >= 0` only.
pub fn inhom_norm(
    op: &Arc<OperatorHandle>,
    spec: &NormSpec,
    symbol: &Symbol,
    x: &GridFunction,
) -> Result<NormReport> {
    if spec.theta < 0.0 {
        return Err(Error::ThetaRange(format!(
            "inhomogeneous spaces are defined for theta >= 0, got {}",
            spec.theta
        )));
    }
    let mut spec = *spec;
    spec.inhomogeneous = true;
    NormEvaluator::new(op.clone(), symbol, spec)?.norm(x)
}

/// Besov-order dyadic norm
/// `||x||_X + (sum_j ||2^{-j theta} phi(2^j A) x||_X^s)^{1/s}`.
pub fn besov_norm_dyadic(
    op: &Arc<OperatorHandle>,
    spec: &NormSpec,
    symbol: &Symbol,
    x: &GridFunction,
) -> Result<NormReport> {
    let mut spec = *spec;
    spec.mode = NormMode::BesovDyadic;
    NormEvaluator::new(op.clone(), symbol, spec)?.norm(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcalc::builtin_symbol;
    use crate::operators::random_sectorial_spectrum;
    use crate::sampling::SeededRng;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn p(p: f64) -> Exponent {
        Exponent::Finite(p)
    }

    fn rand_fn(op: &Arc<OperatorHandle>, seed: u64) -> GridFunction {
        let mut rng = SeededRng::new(seed);
        GridFunction::new(op.grid().clone(), rng.complex_vector(op.n())).unwrap()
    }

    /// 1-D log-grid quadrature of `(sum w (t^{-theta} |phi(t a)|)^s)^{1/s}`
    /// on the same lattice; independent of the operator machinery.
    fn scalar_window_constant(
        symbol: &Symbol,
        a: Complex64,
        theta: f64,
        s: f64,
        t_nodes: &[f64],
        weights: Option<&[f64]>,
    ) -> f64 {
        let mut acc = 0.0;
        for (i, &t) in t_nodes.iter().enumerate() {
            let w = weights.map(|w| w[i]).unwrap_or(1.0);
            let v = t.powf(-theta) * symbol.eval(t * a).norm();
            acc += w * v.powf(s);
        }
        acc.powf(1.0 / s)
    }

    #[test]
    fn identity_operator_reproduces_beta_integral_constants() {
        // int_0^inf (t/(1+t)^2)^2 dt/t = B(2,2) = 1/6, and
        // int_0^inf (t e^{-t})^2 dt/t = 1/4
        let op = Arc::new(OperatorHandle::identity(4, p(2.0)).unwrap());
        let x = rand_fn(&op, 1);
        let nx = x_norm(&x);
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let spec = NormSpec::new(0.0, Exponent::Finite(2.0), NormMode::Continuous);
        let got = spower_norm_continuous(&op, &spec, &rho, &x).unwrap();
        assert!(
            (got.value / nx - 1.0 / 6.0_f64.sqrt()).abs() < 1e-6,
            "{} vs {}",
            got.value / nx,
            1.0 / 6.0_f64.sqrt()
        );
        let ze = builtin_symbol("exp_alpha", &[1.0]).unwrap();
        let got = spower_norm_continuous(&op, &spec, &ze, &x).unwrap();
        assert!((got.value / nx - 0.5).abs() < 1e-6, "{}", got.value / nx);
    }

    #[test]
    fn dyadic_identity_matches_directly_summed_series() {
        let op = Arc::new(OperatorHandle::identity(3, p(2.0)).unwrap());
        let x = rand_fn(&op, 2);
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let spec = NormSpec::new(0.0, Exponent::Finite(2.0), NormMode::Dyadic);
        let got = spower_norm_dyadic(&op, &spec, &rho, &x).unwrap();
        // direct scalar series sum_j phi(2^j)^2, summed until terms vanish
        let mut series = 0.0_f64;
        for j in -200..=200 {
            let v = rho.eval(Complex64::new(2.0_f64.powi(j), 0.0)).norm();
            series += v * v;
        }
        let expect = series.sqrt() * x_norm(&x);
        assert!((got.value - expect).abs() < 1e-8 * expect, "{} vs {expect}", got.value);
    }

    #[test]
    fn single_layer_window_is_plain_norm() {
        let op = Arc::new(
            OperatorHandle::diagonal(&[Complex64::new(1.5, 0.2), Complex64::new(0.4, 0.0)], p(2.0))
                .unwrap(),
        );
        let x = rand_fn(&op, 3);
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let spec = NormSpec::new(0.0, Exponent::Finite(2.0), NormMode::Dyadic)
            .with_window(WindowSpec::Dyadic { j_min: 0, j_max: 0 });
        let got = spower_norm_dyadic(&op, &spec, &rho, &x).unwrap();
        let direct = op.spectral_apply(&|z| rho.eval(z), &x).unwrap();
        assert!((got.value - x_norm(&direct)).abs() < 1e-7 * x_norm(&direct));
    }

    #[test]
    fn diagonal_scale_factorization_matches_scalar_oracle() {
        // for diagonal A the norm is the X-norm of (c_i x_i) with
        // per-eigenvalue scalar window constants
        let mut rng = SeededRng::new(5);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.2, 5.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(3.0)).unwrap());
        let x = rand_fn(&op, 6);
        let sym = builtin_symbol("exp_alpha", &[2.0]).unwrap();
        for theta in [0.0, 0.4, -0.3] {
            for s in [1.0, 2.0, 4.0] {
                let spec = NormSpec::new(theta, Exponent::Finite(s), NormMode::Continuous);
                let eval = NormEvaluator::new(op.clone(), &sym, spec).unwrap();
                let got = eval.norm(&x).unwrap();
                let weights = eval.layer_weights().map(|w| w.to_vec());
                let scaled: Vec<Complex64> = spectrum
                    .iter()
                    .zip(x.values())
                    .map(|(a, xv)| {
                        let c = scalar_window_constant(
                            &sym,
                            *a,
                            theta,
                            s,
                            eval.t_nodes(),
                            weights.as_deref(),
                        );
                        xv * Complex64::new(c, 0.0)
                    })
                    .collect();
                let expect = x_norm(&GridFunction::new(op.grid().clone(), scaled).unwrap());
                assert!(
                    (got.value - expect).abs() < 1e-6 * expect,
                    "theta={theta} s={s}: {} vs {expect}",
                    got.value
                );
            }
        }
    }

    #[test]
    fn inhomogeneous_norm_examples() {
        let op = Arc::new(OperatorHandle::identity(2, p(2.0)).unwrap());
        let zero = GridFunction::zero(op.grid().clone());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let spec = NormSpec::new(0.0, Exponent::Finite(2.0), NormMode::Continuous);
        assert_eq!(inhom_norm(&op, &spec, &rho, &zero).unwrap().value, 0.0);
        let x = rand_fn(&op, 7);
        let got = inhom_norm(&op, &spec, &rho, &x).unwrap();
        let expect = (1.0 + 1.0 / 6.0_f64.sqrt()) * x_norm(&x);
        assert!((got.value - expect).abs() < 1e-6 * expect);
        // negative theta rejected
        let neg = NormSpec::new(-0.2, Exponent::Finite(2.0), NormMode::Continuous);
        assert!(inhom_norm(&op, &neg, &rho, &x).is_err());
    }

    #[test]
    fn unit_interval_norm_is_equivalent_for_positive_theta() {
        let mut rng = SeededRng::new(11);
        let spectrum = random_sectorial_spectrum(8, PI / 4.0, 0.3, 4.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let theta = 0.4;
        let mut ratios = Vec::new();
        for seed in 20..30 {
            let x = rand_fn(&op, seed);
            let full = {
                let mut s = NormSpec::new(theta, Exponent::Finite(2.0), NormMode::Continuous);
                s.inhomogeneous = true;
                NormEvaluator::new(op.clone(), &rho, s).unwrap().norm(&x).unwrap().value
            };
            let unit = {
                let mut s = NormSpec::new(theta, Exponent::Finite(2.0), NormMode::UnitInterval);
                s.inhomogeneous = true;
                NormEvaluator::new(op.clone(), &rho, s).unwrap().norm(&x).unwrap().value
            };
            ratios.push(full / unit);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0_f64, f64::max);
        assert!(lo >= 1.0 - 1e-9, "unit-interval part is a sub-norm: {lo}");
        assert!(hi < 5.0, "equivalence constant blew up: {hi}");
    }

    #[test]
    fn besov_norm_examples() {
        let mut rng = SeededRng::new(13);
        let spectrum = random_sectorial_spectrum(5, PI / 4.0, 0.3, 3.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let theta = 0.5;
        // s = inf: ||x|| + max_j 2^{-j theta} ||phi(2^j A) x||
        let spec = NormSpec::new(theta, Exponent::Infinite, NormMode::BesovDyadic);
        let x = rand_fn(&op, 14);
        let got = besov_norm_dyadic(&op, &spec, &rho, &x).unwrap();
        let eval = NormEvaluator::new(op.clone(), &rho, spec).unwrap();
        let stack = eval.weighted_stack(&x).unwrap();
        let max_layer =
            (0..stack.n_layers()).map(|j| x_norm(&stack.layer_fn(j))).fold(0.0_f64, f64::max);
        let expect = x_norm(&x) + max_layer;
        assert!((got.value - expect).abs() < 1e-10 * expect);
        // on coordinate functions the Besov and TL layer parts coincide
        let e0 = GridFunction::coordinate(op.grid().clone(), 0);
        let s2 = NormSpec::new(theta, Exponent::Finite(2.0), NormMode::BesovDyadic);
        let besov = besov_norm_dyadic(&op, &s2, &rho, &e0).unwrap();
        let mut tl = NormSpec::new(theta, Exponent::Finite(2.0), NormMode::Dyadic);
        tl.inhomogeneous = true;
        let tl_norm = NormEvaluator::new(op.clone(), &rho, tl).unwrap().norm(&e0).unwrap();
        assert!(
            (besov.value - tl_norm.value).abs() < 1e-6 * tl_norm.value,
            "{} vs {}",
            besov.value,
            tl_norm.value
        );
    }

    #[test]
    fn besov_vs_tl_respects_minkowski_direction() {
        let mut rng = SeededRng::new(17);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.2, 4.0, &mut rng);
        let theta = 0.5;
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        for (p_exp, s_exp) in [(4.0, 2.0), (1.5, 3.0)] {
            let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(p_exp)).unwrap());
            for seed in 40..44 {
                let x = rand_fn(&op, seed);
                let spec_b = NormSpec::new(theta, Exponent::Finite(s_exp), NormMode::BesovDyadic);
                let besov_part =
                    besov_norm_dyadic(&op, &spec_b, &rho, &x).unwrap().value - x_norm(&x);
                let spec_t = NormSpec::new(theta, Exponent::Finite(s_exp), NormMode::Dyadic);
                let tl_part = spower_norm_dyadic(&op, &spec_t, &rho, &x).unwrap().value;
                if p_exp >= s_exp {
                    assert!(
                        tl_part <= besov_part * (1.0 + 1e-9),
                        "p >= s: {tl_part} vs {besov_part}"
                    );
                } else {
                    assert!(
                        besov_part <= tl_part * (1.0 + 1e-9),
                        "p <= s: {besov_part} vs {tl_part}"
                    );
                }
            }
        }
    }

    #[test]
    fn dyadic_is_literal_subsum_of_aligned_continuous() {
        let mut rng = SeededRng::new(19);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.3, 3.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 20);
        for s in [Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Infinite] {
            let cont_spec = NormSpec::new(0.0, s, NormMode::Continuous).with_window(
                WindowSpec::Continuous { t_min: 2.0_f64.powi(-22), t_max: 2.0_f64.powi(22) },
            );
            let cont = NormEvaluator::new(op.clone(), &rho, cont_spec).unwrap().norm(&x).unwrap();
            let dy_spec = NormSpec::new(0.0, s, NormMode::Dyadic)
                .with_window(WindowSpec::Dyadic { j_min: -20, j_max: 20 });
            let dy = NormEvaluator::new(op.clone(), &rho, dy_spec).unwrap().norm(&x).unwrap();
            let du = LN_2 / 8.0;
            let bound = match s {
                Exponent::Infinite => cont.value,
                Exponent::Finite(s) => cont.value * du.powf(-1.0 / s),
            };
            assert!(dy.value <= bound * (1.0 + 1e-12), "s = {s:?}: {} vs {bound}", dy.value);
        }
    }

    #[test]
    fn norm_axioms_on_random_inputs() {
        let mut rng = SeededRng::new(23);
        let spectrum = random_sectorial_spectrum(5, PI / 4.0, 0.3, 3.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let spec = NormSpec::new(0.3, Exponent::Finite(2.0), NormMode::Continuous);
        let eval = NormEvaluator::new(op.clone(), &rho, spec).unwrap();
        let x = rand_fn(&op, 30);
        let y = rand_fn(&op, 31);
        let nx = eval.norm(&x).unwrap().value;
        let ny = eval.norm(&y).unwrap().value;
        let nxy = eval.norm(&x.add(&y).unwrap()).unwrap().value;
        assert!(nxy <= nx + ny + 1e-10 * (nx + ny));
        let c = Complex64::new(-2.5, 1.0);
        let ncx = eval.norm(&x.scale(c)).unwrap().value;
        assert!((ncx - c.norm() * nx).abs() < 1e-9 * ncx);
    }

    #[test]
    fn scale_covariance_in_the_operator() {
        // replacing A by 4A multiplies the homogeneous norm by 4^theta once
        // the window shifts two octaves to compensate
        let mut rng = SeededRng::new(29);
        let spectrum = random_sectorial_spectrum(5, PI / 4.0, 0.3, 3.0, &mut rng);
        let theta = 0.4;
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let scaled =
            Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap().scaled(4.0).unwrap());
        let x = rand_fn(&op, 33);
        let spec = NormSpec::new(theta, Exponent::Finite(2.0), NormMode::Continuous).with_window(
            WindowSpec::Continuous { t_min: 2.0_f64.powi(-26), t_max: 2.0_f64.powi(24) },
        );
        let spec_scaled = spec.with_window(WindowSpec::Continuous {
            t_min: 2.0_f64.powi(-28),
            t_max: 2.0_f64.powi(22),
        });
        let base = NormEvaluator::new(op, &rho, spec).unwrap().norm(&x).unwrap().value;
        let scaled_norm =
            NormEvaluator::new(scaled, &rho, spec_scaled).unwrap().norm(&x).unwrap().value;
        let expect = 4.0_f64.powf(theta) * base;
        assert!((scaled_norm - expect).abs() < 1e-7 * expect, "{scaled_norm} vs {expect}");
    }

    #[test]
    fn fractional_power_shift_is_isometric_with_matched_symbols() {
        let mut rng = SeededRng::new(31);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.4, 2.5, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let alpha = 0.5;
        let theta = 0.6;
        let phi = builtin_symbol("rho_1", &[]).unwrap();
        let psi = phi.times_power(alpha);
        let window = WindowSpec::Continuous { t_min: 2.0_f64.powi(-24), t_max: 2.0_f64.powi(24) };
        let x = rand_fn(&op, 34);
        let ax = op.fractional_power_apply(alpha, &x).unwrap();
        let lhs_spec = NormSpec::new(theta - alpha, Exponent::Finite(2.0), NormMode::Continuous)
            .with_window(window);
        let lhs = NormEvaluator::new(op.clone(), &phi, lhs_spec).unwrap().norm(&ax).unwrap().value;
        let rhs_spec =
            NormSpec::new(theta, Exponent::Finite(2.0), NormMode::Continuous).with_window(window);
        let rhs = NormEvaluator::new(op.clone(), &psi, rhs_spec).unwrap().norm(&x).unwrap().value;
        assert!((lhs / rhs - 1.0).abs() < 1e-6, "ratio {}", lhs / rhs);
    }

    #[test]
    fn widening_the_window_is_monotone() {
        let mut rng = SeededRng::new(37);
        let spectrum = random_sectorial_spectrum(5, PI / 4.0, 0.3, 3.0, &mut rng);
        let op = Arc::new(OperatorHandle::diagonal(&spectrum, p(2.0)).unwrap());
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 38);
        let mut prev = 0.0;
        for pad in [0u32, 4, 8] {
            let mut spec = NormSpec::new(0.2, Exponent::Finite(2.0), NormMode::Continuous);
            spec.extra_pad = pad;
            let v = NormEvaluator::new(op.clone(), &rho, spec).unwrap().norm(&x).unwrap().value;
            assert!(v >= prev - 1e-12 * v, "pad {pad}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn dyadic_mode_requires_ue_certificate() {
        let op = Arc::new(OperatorHandle::identity(2, p(2.0)).unwrap());
        // one_over_1pz has no UE certificate
        let sym = builtin_symbol("one_over_1pz", &[]).unwrap();
        let spec = NormSpec::new(-0.5, Exponent::Finite(2.0), NormMode::Dyadic);
        assert!(NormEvaluator::new(op.clone(), &sym, spec).is_err());
        // and rho_1 does not admit theta = 1.5
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let bad = NormSpec::new(1.5, Exponent::Finite(2.0), NormMode::Dyadic);
        assert!(NormEvaluator::new(op, &rho, bad).is_err());
    }
}
