//! Holomorphic functional calculus by contour quadrature.
//!
//! `phi(A)` for decaying symbols is the two-ray Cauchy integral over the
//! sector boundary at angle `omega`, discretized by the trapezoid rule after
//! the substitution `t = e^u`. Symbols with finite limits at `0` and `inf`
//! go through the Dunford-Riesz split `f(A) = phi_f(A) + (f(0) - f(inf))
//! (1 + A)^{-1} + f(inf) I`.
//!
//! Scaling enters only through the symbol: `phi(tA)` reuses the same
//! resolvent evaluations on a shared log-lattice, so a whole stack of
//! layers costs one set of solves plus cheap recombination. Lattice steps
//! divide `ln 2`, which makes dyadic scalings exact index shifts.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FunctionStack, GridFunction, x_norm};
use crate::linalg::principal_pow;
use crate::operators::{OperatorHandle, ResolventSolver};

type Evaluator = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;

/// Certified polynomial decay of an `H^inf_0` function:
/// `|phi(z)| <= c0 (|z|^{rate0} ^ |z|^{-rate_inf})` on the sector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Decay {
    pub c0: f64,
    pub rate0: f64,
    pub rate_inf: f64,
}

/// Class tags a symbol carries. `dunford` stores `(f(0), f(inf))`; the
/// `H^inf_0` part is always `f - (f(0)-f(inf))/(1+z) - f(inf)`.
#[derive(Clone, Debug)]
pub struct ClassInfo {
    pub h_inf_bound: Option<f64>,
    pub h0_decay: Option<Decay>,
    pub dunford: Option<(Complex64, Complex64)>,
    /// Open interval of `theta` with `z^{-theta} phi in H^inf_0`.
    pub theta_range: Option<(f64, f64)>,
    /// Condition (UE) shift of the dyadic class, certified structurally for
    /// the built-in families only.
    pub ue_shift: Option<i64>,
    pub zero_free: bool,
}

#[derive(Clone)]
pub struct Symbol {
    pub name: String,
    pub sigma: f64,
    eval: Evaluator,
    pub class: ClassInfo,
}

impl Symbol {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        (self.eval)(z)
    }

    pub fn dunford_limits(&self) -> (Complex64, Complex64) {
        self.class.dunford.unwrap_or((Complex64::ZERO, Complex64::ZERO))
    }

    /// Evaluator of the `H^inf_0` part of the Dunford-Riesz split.
    pub fn h0_part(&self) -> Evaluator {
        let (f0, finf) = self.dunford_limits();
        if f0 == Complex64::ZERO && finf == Complex64::ZERO {
            return self.eval.clone();
        }
        let eval = self.eval.clone();
        Arc::new(move |z| eval(z) - (f0 - finf) / (Complex64::ONE + z) - finf)
    }

    pub fn is_h0(&self) -> bool {
        let (f0, finf) = self.dunford_limits();
        self.class.h0_decay.is_some() && f0 == Complex64::ZERO && finf == Complex64::ZERO
    }

    pub fn admits_theta(&self, theta: f64) -> bool {
        self.class.theta_range.map(|(lo, hi)| lo < theta && theta < hi).unwrap_or(false)
    }

    pub fn is_phi_sigma(&self, theta: f64) -> bool {
        self.admits_theta(theta) && self.class.ue_shift.is_some() && self.class.zero_free
    }

    pub fn require_phi(&self, theta: f64) -> Result<()> {
        if !self.admits_theta(theta) {
            return Err(Error::ClassTag(format!(
                "{} does not admit theta = {theta} (range {:?})",
                self.name, self.class.theta_range
            )));
        }
        Ok(())
    }

    pub fn require_phi_sigma(&self, theta: f64) -> Result<()> {
        self.require_phi(theta)?;
        if self.class.ue_shift.is_none() || !self.class.zero_free {
            return Err(Error::ClassTag(format!(
                "{} carries no dyadic (UE) certificate",
                self.name
            )));
        }
        Ok(())
    }

    /// `z^alpha * phi(z)`: shifts the admissible theta window by `alpha`.
    pub fn times_power(&self, alpha: f64) -> Symbol {
        let eval = self.eval.clone();
        Symbol {
            name: format!("z^{alpha}*{}", self.name),
            sigma: self.sigma,
            eval: Arc::new(move |z| principal_pow(z, alpha) * eval(z)),
            class: ClassInfo {
                h_inf_bound: None,
                h0_decay: self.class.h0_decay.map(|d| Decay {
                    c0: d.c0,
                    rate0: d.rate0 + alpha,
                    rate_inf: d.rate_inf - alpha,
                }),
                dunford: if alpha > 0.0 { Some((Complex64::ZERO, Complex64::ZERO)) } else { None },
                theta_range: self.class.theta_range.map(|(lo, hi)| (lo + alpha, hi + alpha)),
                ue_shift: self.class.ue_shift,
                zero_free: self.class.zero_free,
            },
        }
    }

    pub fn scaled(&self, c: Complex64) -> Symbol {
        let eval = self.eval.clone();
        Symbol {
            name: format!("{c}*{}", self.name),
            sigma: self.sigma,
            eval: Arc::new(move |z| c * eval(z)),
            class: ClassInfo {
                h_inf_bound: self.class.h_inf_bound.map(|b| b * c.norm()),
                h0_decay: self.class.h0_decay.map(|d| Decay { c0: d.c0 * c.norm(), ..d }),
                dunford: self.class.dunford.map(|(a, b)| (c * a, c * b)),
                theta_range: self.class.theta_range,
                ue_shift: self.class.ue_shift,
                zero_free: self.class.zero_free && c != Complex64::ZERO,
            },
        }
    }

    /// Argument rescaling `phi(t z)`, `t > 0`.
    pub fn scaled_arg(&self, t: f64) -> Symbol {
        let eval = self.eval.clone();
        Symbol {
            name: format!("{}({t}z)", self.name),
            sigma: self.sigma,
            eval: Arc::new(move |z| eval(t * z)),
            class: self.class.clone(),
        }
    }

    pub fn multiply(&self, other: &Symbol) -> Symbol {
        let ea = self.eval.clone();
        let eb = other.eval.clone();
        let decay = match (self.class.h0_decay, other.class.h0_decay) {
            (Some(a), Some(b)) => Some(Decay {
                c0: a.c0 * b.c0,
                rate0: a.rate0 + b.rate0,
                rate_inf: a.rate_inf + b.rate_inf,
            }),
            _ => None,
        };
        Symbol {
            name: format!("{}*{}", self.name, other.name),
            sigma: self.sigma.min(other.sigma),
            eval: Arc::new(move |z| ea(z) * eb(z)),
            class: ClassInfo {
                h_inf_bound: None,
                h0_decay: decay,
                dunford: Some((Complex64::ZERO, Complex64::ZERO)),
                theta_range: None,
                ue_shift: None,
                zero_free: self.class.zero_free && other.class.zero_free,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Certification by ray sampling
// ---------------------------------------------------------------------------

/// Measure the decay constant of the `H^inf_0` part on a dense ray sample;
/// rates above 4 are capped for measurement since faster decay only shrinks
/// the constant.
pub fn certify_h0_decay(symbol: &Symbol) -> Result<f64> {
    let decay = symbol
        .class
        .h0_decay
        .ok_or_else(|| Error::ClassTag(format!("{} has no H^inf_0 decay data", symbol.name)))?;
    let h0 = symbol.h0_part();
    let r0 = decay.rate0.min(4.0);
    let rinf = decay.rate_inf.min(4.0);
    let mut c0 = 0.0_f64;
    let n_ang = 33;
    let n_rad = 129;
    for ia in 0..n_ang {
        let angle = symbol.sigma * 0.999 * (2.0 * ia as f64 / (n_ang - 1) as f64 - 1.0);
        for ir in 0..n_rad {
            let r = 10.0_f64.powf(-8.0 + 16.0 * ir as f64 / (n_rad - 1) as f64);
            let z = Complex64::from_polar(r, angle);
            let v = h0(z).norm();
            if !v.is_finite() {
                return Err(Error::CertificationFailed(format!(
                    "{} is not finite at {z}",
                    symbol.name
                )));
            }
            let envelope = r.powf(r0).min(r.powf(-rinf));
            c0 = c0.max(v / envelope);
        }
    }
    if !c0.is_finite() || c0 > 1e12 {
        return Err(Error::CertificationFailed(format!(
            "{}: measured decay constant {c0:.3e} out of range",
            symbol.name
        )));
    }
    Ok(c0)
}

/// Certify `sup |f| <= bound` on the sector by ray sampling.
pub fn certify_sup_bound(symbol: &Symbol, bound: f64) -> Result<f64> {
    let mut sup = 0.0_f64;
    for ia in 0..33 {
        let angle = symbol.sigma * 0.999 * (2.0 * ia as f64 / 32.0 - 1.0);
        for ir in 0..129 {
            let r = 10.0_f64.powf(-8.0 + 16.0 * ir as f64 / 128.0);
            let v = symbol.eval(Complex64::from_polar(r, angle)).norm();
            if !v.is_finite() {
                return Err(Error::CertificationFailed(format!("{} not finite", symbol.name)));
            }
            sup = sup.max(v);
        }
    }
    if sup > bound * (1.0 + 1e-8) {
        return Err(Error::CertificationFailed(format!(
            "{}: sup {sup:.6} exceeds bound {bound}",
            symbol.name
        )));
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// Built-in symbol library
// ---------------------------------------------------------------------------

fn make_symbol(
    name: String,
    sigma: f64,
    eval: Evaluator,
    class: ClassInfo,
) -> Result<Symbol> {
    let mut symbol = Symbol { name, sigma, eval, class };
    if symbol.class.h0_decay.is_some() {
        let c0 = certify_h0_decay(&symbol)?;
        if let Some(d) = symbol.class.h0_decay.as_mut() {
            d.c0 = c0;
        }
    }
    Ok(symbol)
}

/// Construct a built-in symbol.
///
/// Known names: `rho_m` (`z^m/(1+z)^{2m}`), `exp_alpha` (`z^a e^{-z}`),
/// `exp_frac` (`z^k e^{-z^{1/m}}`), `one_over_1pz`, `interp_phi`
/// (`-z^a/(2+z)`), `interp_psi` (`z^{1-a}/(1+z)`).
pub fn builtin_symbol(name: &str, params: &[f64]) -> Result<Symbol> {
    if let Some(m_text) = name.strip_prefix("rho_") {
        let m: i32 = m_text
            .parse()
            .map_err(|_| Error::UnknownSymbol(name.to_string()))?;
        return rho_symbol(m, params.first().copied());
    }
    match name {
        "rho" => {
            let m = *params.first().ok_or_else(|| Error::SymbolParam("rho needs m".into()))? as i32;
            rho_symbol(m, params.get(1).copied())
        }
        "exp_alpha" => {
            let alpha = *params.first().ok_or_else(|| Error::SymbolParam("exp_alpha needs alpha".into()))?;
            if alpha <= 0.0 {
                return Err(Error::SymbolParam(format!("exp_alpha: alpha = {alpha} must be positive")));
            }
            let sigma = params.get(1).copied().unwrap_or(0.45 * PI);
            if sigma >= PI / 2.0 {
                return Err(Error::SymbolParam(format!(
                    "exp_alpha: sigma = {sigma} must be < pi/2"
                )));
            }
            make_symbol(
                format!("exp_alpha({alpha})"),
                sigma,
                Arc::new(move |z| principal_pow(z, alpha) * (-z).exp()),
                ClassInfo {
                    h_inf_bound: None,
                    h0_decay: Some(Decay { c0: 1.0, rate0: alpha, rate_inf: 64.0 }),
                    dunford: Some((Complex64::ZERO, Complex64::ZERO)),
                    theta_range: Some((-64.0, alpha)),
                    ue_shift: Some(-1),
                    zero_free: true,
                },
            )
        }
        "exp_frac" => {
            let k = *params.first().ok_or_else(|| Error::SymbolParam("exp_frac needs k".into()))?;
            let m = params.get(1).copied().unwrap_or(1.0);
            if k < 1.0 || m < 1.0 || k.fract() != 0.0 || m.fract() != 0.0 {
                return Err(Error::SymbolParam(format!(
                    "exp_frac: k = {k}, m = {m} must be integers >= 1"
                )));
            }
            let sigma = params.get(2).copied().unwrap_or(0.45 * PI);
            if sigma >= (m * PI / 2.0).min(PI) {
                return Err(Error::SymbolParam(format!(
                    "exp_frac: sigma = {sigma} must be < min(pi, m*pi/2)"
                )));
            }
            let ki = k as i32;
            let inv_m = 1.0 / m;
            make_symbol(
                format!("exp_frac({k},{m})"),
                sigma,
                Arc::new(move |z| z.powi(ki) * (-principal_pow(z, inv_m)).exp()),
                ClassInfo {
                    h_inf_bound: None,
                    h0_decay: Some(Decay { c0: 1.0, rate0: k, rate_inf: 64.0 }),
                    dunford: Some((Complex64::ZERO, Complex64::ZERO)),
                    theta_range: Some((-k, k)),
                    ue_shift: Some(-1),
                    zero_free: true,
                },
            )
        }
        "exp_semigroup" => {
            let tau = params.first().copied().unwrap_or(1.0);
            if tau <= 0.0 {
                return Err(Error::SymbolParam(format!("exp_semigroup: tau = {tau} must be positive")));
            }
            let sigma = params.get(1).copied().unwrap_or(0.45 * PI);
            if sigma >= PI / 2.0 {
                return Err(Error::SymbolParam(format!(
                    "exp_semigroup: sigma = {sigma} must be < pi/2"
                )));
            }
            make_symbol(
                format!("exp_semigroup({tau})"),
                sigma,
                Arc::new(move |z| (-(tau * z)).exp()),
                ClassInfo {
                    h_inf_bound: Some(1.0),
                    h0_decay: Some(Decay { c0: 1.0, rate0: 1.0, rate_inf: 1.0 }),
                    dunford: Some((Complex64::ONE, Complex64::ZERO)),
                    theta_range: None,
                    ue_shift: None,
                    zero_free: true,
                },
            )
        }
        "one_over_1pz" => make_symbol(
            "one_over_1pz".into(),
            0.75 * PI,
            Arc::new(|z| Complex64::ONE / (Complex64::ONE + z)),
            ClassInfo {
                h_inf_bound: None,
                h0_decay: Some(Decay { c0: 0.0, rate0: 1.0, rate_inf: 1.0 }),
                dunford: Some((Complex64::ONE, Complex64::ZERO)),
                theta_range: Some((-1.0, 0.0)),
                ue_shift: None,
                zero_free: true,
            },
        ),
        "interp_phi" => {
            let alpha = interp_alpha(params)?;
            make_symbol(
                format!("interp_phi({alpha})"),
                0.75 * PI,
                Arc::new(move |z| -principal_pow(z, alpha) / (Complex64::new(2.0, 0.0) + z)),
                ClassInfo {
                    h_inf_bound: None,
                    h0_decay: Some(Decay { c0: 1.0, rate0: alpha, rate_inf: 1.0 - alpha }),
                    dunford: Some((Complex64::ZERO, Complex64::ZERO)),
                    theta_range: Some((alpha - 1.0, alpha)),
                    ue_shift: Some(0),
                    zero_free: true,
                },
            )
        }
        "interp_psi" => {
            let alpha = interp_alpha(params)?;
            make_symbol(
                format!("interp_psi({alpha})"),
                0.75 * PI,
                Arc::new(move |z| principal_pow(z, 1.0 - alpha) / (Complex64::ONE + z)),
                ClassInfo {
                    h_inf_bound: None,
                    h0_decay: Some(Decay { c0: 1.0, rate0: 1.0 - alpha, rate_inf: alpha }),
                    dunford: Some((Complex64::ZERO, Complex64::ZERO)),
                    theta_range: Some((-alpha, 1.0 - alpha)),
                    ue_shift: Some(0),
                    zero_free: true,
                },
            )
        }
        other => Err(Error::UnknownSymbol(other.to_string())),
    }
}

fn interp_alpha(params: &[f64]) -> Result<f64> {
    let alpha = *params
        .first()
        .ok_or_else(|| Error::SymbolParam("interpolation symbols need alpha".into()))?;
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::SymbolParam(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(alpha)
}

fn rho_symbol(m: i32, sigma: Option<f64>) -> Result<Symbol> {
    if m < 1 {
        return Err(Error::SymbolParam(format!("rho_m: m = {m} must be >= 1")));
    }
    let sigma = sigma.unwrap_or(0.75 * PI);
    if sigma >= PI {
        return Err(Error::SymbolParam(format!("rho_m: sigma = {sigma} must be < pi")));
    }
    let mf = m as f64;
    make_symbol(
        format!("rho_{m}"),
        sigma,
        Arc::new(move |z| (z / (Complex64::ONE + z) / (Complex64::ONE + z)).powi(m)),
        ClassInfo {
            h_inf_bound: None,
            h0_decay: Some(Decay { c0: 1.0, rate0: mf, rate_inf: mf }),
            dunford: Some((Complex64::ZERO, Complex64::ZERO)),
            theta_range: Some((-mf, mf)),
            ue_shift: Some(0),
            zero_free: true,
        },
    )
}

/// Parse `name` or `name:p1,p2,...`.
pub fn parse_symbol(text: &str) -> Result<Symbol> {
    let (name, params) = match text.split_once(':') {
        Some((n, ps)) => {
            let parsed: std::result::Result<Vec<f64>, _> =
                ps.split(',').map(|p| p.trim().parse::<f64>()).collect();
            (n.trim(), parsed.map_err(|_| Error::SymbolParam(format!("bad parameters in `{text}`")))?)
        }
        None => (text.trim(), Vec::new()),
    };
    builtin_symbol(name, &params)
}

// ---------------------------------------------------------------------------
// H^inf unit-ball families
// ---------------------------------------------------------------------------

/// Built-in `H^inf` unit-ball members on sectors of angle < pi/2: decaying
/// exponentials, Moebius transforms, Blaschke-like products of two of them,
/// and partial sums of lacunary exponential series with `sum |c_k| <= 1`.
///
/// The first sixteen members run the four kinds over a fixed scale grid so
/// small families already touch the extremes; later members draw scales at
/// random. Families with the same seed are prefixes of one another.
pub fn hinf_unit_family(sigma: f64, count: usize, seed: u64) -> Result<Vec<Symbol>> {
    if sigma >= PI / 2.0 {
        return Err(Error::SymbolParam(format!(
            "hinf family needs sigma < pi/2, got {sigma}"
        )));
    }
    let grid = [1.0 / 16.0, 0.5, 2.0, 16.0];
    let mut rng = crate::sampling::SeededRng::new(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut draw = |slot: usize| -> f64 {
            let v = 4.0_f64.powf(rng.uniform_in(-2.0, 2.0));
            if i < 16 {
                grid[(i / 4 + slot) % 4]
            } else {
                v
            }
        };
        let symbol = match i % 4 {
            0 => {
                let tau = draw(0);
                hinf_member(
                    format!("exp(-{tau:.6}z)"),
                    sigma,
                    Arc::new(move |z: Complex64| (-(tau * z)).exp()),
                    (Complex64::ONE, Complex64::ZERO),
                )
            }
            1 => {
                let tau = draw(0);
                hinf_member(
                    format!("moebius({tau:.6})"),
                    sigma,
                    Arc::new(move |z: Complex64| {
                        (Complex64::ONE - tau * z) / (Complex64::ONE + tau * z)
                    }),
                    (Complex64::ONE, -Complex64::ONE),
                )
            }
            2 => {
                let a = draw(0);
                let b = draw(1);
                hinf_member(
                    format!("blaschke({a:.4},{b:.4})"),
                    sigma,
                    Arc::new(move |z: Complex64| {
                        ((Complex64::ONE - a * z) / (Complex64::ONE + a * z))
                            * ((Complex64::ONE - b * z) / (Complex64::ONE + b * z))
                    }),
                    (Complex64::ONE, Complex64::ONE),
                )
            }
            _ => {
                let terms = 2 + (i / 4) % 4;
                let raw: Vec<f64> = (0..terms).map(|_| rng.uniform_in(0.1, 1.0)).collect();
                let total: f64 = raw.iter().sum();
                let coeffs: Vec<f64> = raw.iter().map(|c| c / total).collect();
                let f0: f64 = coeffs.iter().sum();
                hinf_member(
                    format!("lacunary({terms})"),
                    sigma,
                    Arc::new(move |z: Complex64| {
                        coeffs
                            .iter()
                            .enumerate()
                            .map(|(k, c)| c * (-(2.0_f64.powi(k as i32) * z)).exp())
                            .sum()
                    }),
                    (Complex64::new(f0, 0.0), Complex64::ZERO),
                )
            }
        };
        let symbol = symbol?;
        certify_sup_bound(&symbol, 1.0)?;
        out.push(symbol);
    }
    Ok(out)
}

fn hinf_member(
    name: String,
    sigma: f64,
    eval: Evaluator,
    limits: (Complex64, Complex64),
) -> Result<Symbol> {
    make_symbol(
        name,
        sigma,
        eval,
        ClassInfo {
            h_inf_bound: Some(1.0),
            h0_decay: Some(Decay { c0: 1.0, rate0: 1.0, rate_inf: 1.0 }),
            dunford: Some(limits),
            theta_range: None,
            ue_shift: None,
            zero_free: false,
        },
    )
}

// ---------------------------------------------------------------------------
// Contour quadrature engine
// ---------------------------------------------------------------------------

/// Quadrature parameters for the two-ray contour integral: trapezoid in
/// `u = ln t`, truncated at `|u| = half_width`, `nodes_per_ray` nodes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContourSpec {
    /// Contour angle; `None` picks the midpoint of the admissible interval.
    pub omega: Option<f64>,
    pub nodes_per_ray: usize,
    pub half_width: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        ContourSpec { omega: None, nodes_per_ray: 400, half_width: 18.0 }
    }
}

impl ContourSpec {
    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = Some(omega);
        self
    }

    fn escalate(&self) -> ContourSpec {
        ContourSpec {
            omega: self.omega,
            nodes_per_ray: self.nodes_per_ray * 2,
            half_width: self.half_width + 5.0,
        }
    }
}

struct EngineNode {
    lam_minus: Complex64,
    lam_plus: Complex64,
    solve_minus: ResolventSolver,
    solve_plus: ResolventSolver,
}

/// Precomputed resolvent data on a log-lattice shared by all scalings `t`.
/// The window is asymmetric: each side is stretched by the reciprocal of the
/// symbol's decay rate there, so weakly decaying symbols (rate < 1) get the
/// wider truncation they need.
pub struct ContourEngine {
    omega: f64,
    du: f64,
    width_lo: f64,
    width_hi: f64,
    rate_scale_lo: f64,
    rate_scale_hi: f64,
    nodes: Vec<EngineNode>,
    k_offset: i64,
}

/// Per-input solved data: `y^{\mp}_k = lambda R(lambda, A) x` at each node.
pub struct ResolvedInput<'a> {
    engine: &'a ContourEngine,
    grid: Arc<crate::grid::MeasureGrid>,
    y_minus: Vec<Vec<Complex64>>,
    y_plus: Vec<Vec<Complex64>>,
}

impl ContourEngine {
    /// Admissible angle window for `phi(A)`.
    pub fn angle_window(op: &OperatorHandle, sigma: f64) -> Result<(f64, f64)> {
        let lo = op.sector_angle();
        if lo + 1e-9 >= sigma {
            return Err(Error::ContourInfeasible { lo, hi: sigma });
        }
        Ok((lo, sigma))
    }

    /// Build the engine for all scalings in `t_nodes` (must be positive).
    /// `extra_width` adds truncation width (lower, upper) on top of the
    /// spec's half width, before the decay-rate stretching; norm engines use
    /// it to compensate the `t^{-theta}` amplification of deep layers.
    pub fn new_with_extra(
        op: &OperatorHandle,
        symbol: &Symbol,
        spec: &ContourSpec,
        t_nodes: &[f64],
        extra_width: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = Self::angle_window(op, symbol.sigma)?;
        let omega = match spec.omega {
            Some(w) => {
                if w <= lo + 1e-12 || w >= hi - 1e-12 {
                    return Err(Error::ContourInfeasible { lo, hi });
                }
                w
            }
            None => 0.5 * (lo + hi),
        };
        if spec.nodes_per_ray < 2 || spec.half_width <= 0.0 {
            return Err(Error::QuadratureDivergence(format!(
                "degenerate quadrature spec: {} nodes, L = {}",
                spec.nodes_per_ray, spec.half_width
            )));
        }
        let decay = symbol
            .class
            .h0_decay
            .ok_or_else(|| Error::ClassTag(format!("{} carries no decay data", symbol.name)))?;
        let ln2 = std::f64::consts::LN_2;
        let raw_du = 2.0 * spec.half_width / (spec.nodes_per_ray - 1) as f64;
        let q = (ln2 / raw_du).ceil().max(1.0);
        let du = ln2 / q;
        let rate_scale_lo = decay.rate0.clamp(0.25, 1.0);
        let rate_scale_hi = decay.rate_inf.clamp(0.25, 1.0);
        let width_lo = (spec.half_width + extra_width.0) / rate_scale_lo;
        let width_hi = (spec.half_width + extra_width.1) / rate_scale_hi;
        let mut k_lo = i64::MAX;
        let mut k_hi = i64::MIN;
        for &t in t_nodes {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("scaling t = {t} must be positive")));
            }
            let (a, b) = window_indices(width_lo, width_hi, du, t);
            k_lo = k_lo.min(a);
            k_hi = k_hi.max(b);
        }
        if k_lo > k_hi {
            return Err(Error::Config("empty scaling set".into()));
        }
        let mut nodes = Vec::with_capacity((k_hi - k_lo + 1) as usize);
        for k in k_lo..=k_hi {
            let r = (k as f64 * du).exp();
            let lam_minus = Complex64::from_polar(r, -omega);
            let lam_plus = Complex64::from_polar(r, omega);
            nodes.push(EngineNode {
                lam_minus,
                lam_plus,
                solve_minus: op.resolvent_solver(lam_minus)?,
                solve_plus: op.resolvent_solver(lam_plus)?,
            });
        }
        Ok(ContourEngine {
            omega,
            du,
            width_lo,
            width_hi,
            rate_scale_lo,
            rate_scale_hi,
            nodes,
            k_offset: k_lo,
        })
    }

    pub fn new(
        op: &OperatorHandle,
        symbol: &Symbol,
        spec: &ContourSpec,
        t_nodes: &[f64],
    ) -> Result<Self> {
        Self::new_with_extra(op, symbol, spec, t_nodes, (0.0, 0.0))
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn du(&self) -> f64 {
        self.du
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Solve the two resolvent families against `x`; reusable for any layer.
    pub fn resolve(&self, x: &GridFunction) -> ResolvedInput<'_> {
        let y_minus: Vec<Vec<Complex64>> = self
            .nodes
            .iter()
            .map(|node| {
                let mut y = (node.solve_minus)(x.values());
                for v in y.iter_mut() {
                    *v *= node.lam_minus;
                }
                y
            })
            .collect();
        let y_plus: Vec<Vec<Complex64>> = self
            .nodes
            .iter()
            .map(|node| {
                let mut y = (node.solve_plus)(x.values());
                for v in y.iter_mut() {
                    *v *= node.lam_plus;
                }
                y
            })
            .collect();
        ResolvedInput { engine: self, grid: x.grid().clone(), y_minus, y_plus }
    }
}

fn window_indices(width_lo: f64, width_hi: f64, du: f64, t: f64) -> (i64, i64) {
    let lnt = t.ln();
    let lo = ((-width_lo - lnt) / du - 1e-9).ceil() as i64;
    let hi = ((width_hi - lnt) / du + 1e-9).floor() as i64;
    (lo, hi)
}

impl ResolvedInput<'_> {
    /// One quadrature layer: `phi(t A) x` for the `H^inf_0` evaluator `phi`.
    pub fn layer(&self, phi: &(dyn Fn(Complex64) -> Complex64 + Sync), t: f64) -> Result<GridFunction> {
        self.layer_narrowed(phi, t, 0.0)
    }

    /// Same layer on a window narrowed by `delta` in raw truncation width;
    /// lets the self-check isolate truncation error with a single engine.
    pub fn layer_narrowed(
        &self,
        phi: &(dyn Fn(Complex64) -> Complex64 + Sync),
        t: f64,
        delta: f64,
    ) -> Result<GridFunction> {
        let engine = self.engine;
        let (k_lo, k_hi) = window_indices(
            engine.width_lo - delta / engine.rate_scale_lo,
            engine.width_hi - delta / engine.rate_scale_hi,
            engine.du,
            t,
        );
        let k_lo = k_lo.max(engine.k_offset);
        let k_hi = k_hi.min(engine.k_offset + engine.nodes.len() as i64 - 1);
        if k_lo > k_hi {
            return Err(Error::QuadratureDivergence(format!(
                "scaling t = {t} falls outside the engine lattice"
            )));
        }
        let n = self.grid.len();
        let mut acc = vec![Complex64::ZERO; n];
        for k in k_lo..=k_hi {
            let idx = (k - engine.k_offset) as usize;
            let node = &engine.nodes[idx];
            let w = if k == k_lo || k == k_hi { 0.5 } else { 1.0 };
            let c_minus = phi(t * node.lam_minus) * w;
            let c_plus = phi(t * node.lam_plus) * w;
            let ym = &self.y_minus[idx];
            let yp = &self.y_plus[idx];
            for i in 0..n {
                acc[i] += c_minus * ym[i] - c_plus * yp[i];
            }
        }
        // 1/(2 pi i) = -i / (2 pi)
        let factor = Complex64::new(0.0, -engine.du / (2.0 * PI));
        for v in acc.iter_mut() {
            *v *= factor;
        }
        GridFunction::new(self.grid.clone(), acc)
    }
}

// ---------------------------------------------------------------------------
// High-level operations
// ---------------------------------------------------------------------------

/// `phi(A) x` for a decaying symbol, single contour pass.
pub fn contour_apply(
    op: &OperatorHandle,
    phi: &Symbol,
    spec: &ContourSpec,
    x: &GridFunction,
) -> Result<GridFunction> {
    if phi.class.h0_decay.is_none() {
        return Err(Error::ClassTag(format!("{} carries no H^inf_0 decay", phi.name)));
    }
    if !phi.is_h0() {
        return Err(Error::ClassTag(format!(
            "{} has nonzero limits; use dunford_riesz_apply",
            phi.name
        )));
    }
    let engine = ContourEngine::new(op, phi, spec, &[1.0])?;
    let eval = phi.h0_part();
    engine.resolve(x).layer(eval.as_ref(), 1.0)
}

/// `phi(A) x` with two self-checks: independence of the contour angle
/// (discretization) and of the truncation width. The truncation probe reuses
/// one wide engine via narrowed-window recombination; a passed angle check
/// stays valid while the lattice step does not grow, so truncation-only
/// escalations widen the window without a second engine. Escalates up to
/// four times before reporting divergence.
pub fn contour_apply_checked(
    op: &OperatorHandle,
    phi: &Symbol,
    spec: &ContourSpec,
    x: &GridFunction,
) -> Result<GridFunction> {
    if phi.class.h0_decay.is_none() {
        return Err(Error::ClassTag(format!("{} carries no decay data", phi.name)));
    }
    let (lo, hi) = ContourEngine::angle_window(op, phi.sigma)?;
    let h0 = phi.h0_part();
    // the returned value lives on the widened window, whose truncation error
    // is the measured one shrunk by four units of certified decay
    let beta_hat = phi
        .class
        .h0_decay
        .map(|d| d.rate0.min(d.rate_inf))
        .unwrap_or(1.0)
        .clamp(0.25, 1.0);
    let trunc_gain = (-4.0 * beta_hat).exp();
    let mut current = *spec;
    let mut last_err = f64::INFINITY;
    let mut disc_ok = false;
    for _round in 0..5 {
        let omega_a = current.omega.unwrap_or(0.5 * (lo + hi));
        let omega_b = lo + 0.75 * (hi - lo);
        let omega_b = if (omega_b - omega_a).abs() < 0.05 * (hi - lo) {
            lo + 0.25 * (hi - lo)
        } else {
            omega_b
        };
        let wide = ContourSpec {
            omega: Some(omega_a),
            nodes_per_ray: current.nodes_per_ray
                + (current.nodes_per_ray as f64 * 4.0 / current.half_width).ceil() as usize,
            half_width: current.half_width + 4.0,
        };
        let engine = ContourEngine::new(op, phi, &wide, &[1.0])?;
        let resolved = engine.resolve(x);
        let y_wide = resolved.layer(h0.as_ref(), 1.0)?;
        let y_narrow = resolved.layer_narrowed(h0.as_ref(), 1.0, 4.0)?;
        let scale = x_norm(&y_wide).max(1e-12 * x_norm(x)).max(1e-300);
        let trunc = x_norm(&y_wide.sub(&y_narrow)?) / scale * trunc_gain;
        let disc = if disc_ok {
            0.0
        } else {
            let engine_b = ContourEngine::new(op, phi, &current.with_omega(omega_b), &[1.0])?;
            let y_other = engine_b.resolve(x).layer(h0.as_ref(), 1.0)?;
            x_norm(&y_narrow.sub(&y_other)?) / scale
        };
        last_err = trunc.max(disc);
        if last_err <= 2e-9 {
            // attach the Dunford-Riesz terms to the accepted contour part
            let (f0, finf) = phi.dunford_limits();
            let mut out = y_wide;
            if f0 != finf {
                let res = op.resolvent_apply(Complex64::new(-1.0, 0.0), x)?;
                out = out.add(&res.scale(-(f0 - finf)))?;
            }
            if finf != Complex64::ZERO {
                out = out.add(&x.scale(finf))?;
            }
            return Ok(out);
        }
        if disc <= 2e-9 {
            disc_ok = true;
            // truncation-only failure: widen, keep the lattice step
            let grown = current.half_width + 5.0;
            current = ContourSpec {
                omega: current.omega,
                nodes_per_ray: (current.nodes_per_ray as f64 * grown / current.half_width).ceil()
                    as usize,
                half_width: grown,
            };
        } else {
            disc_ok = false;
            current = current.escalate();
        }
    }
    Err(Error::QuadratureDivergence(format!(
        "contour self-checks stalled at {last_err:.3e} (nodes = {}, L = {})",
        current.nodes_per_ray, current.half_width
    )))
}

/// `f(A) x` for `f` in the extended Dunford-Riesz class:
/// contour part plus `(f(0) - f(inf)) (1 + A)^{-1} x + f(inf) x`.
pub fn dunford_riesz_apply(
    op: &OperatorHandle,
    f: &Symbol,
    spec: &ContourSpec,
    x: &GridFunction,
) -> Result<GridFunction> {
    if f.class.h0_decay.is_none() {
        return Err(Error::ClassTag(format!("{} carries no decay data", f.name)));
    }
    let engine = ContourEngine::new(op, f, spec, &[1.0])?;
    let eval = f.h0_part();
    let mut out = engine.resolve(x).layer(eval.as_ref(), 1.0)?;
    let (f0, finf) = f.dunford_limits();
    if f0 != finf {
        // (1 + A)^{-1} = -R(-1, A)
        let res = op.resolvent_apply(Complex64::new(-1.0, 0.0), x)?;
        out = out.add(&res.scale(-(f0 - finf)))?;
    }
    if finf != Complex64::ZERO {
        out = out.add(&x.scale(finf))?;
    }
    Ok(out)
}

/// The stack `(phi(t A) x)_{t in t_nodes}`; one shared contour solve set,
/// recombined per layer. Dunford parts are added per layer when present.
pub fn phi_t_stack(
    op: &OperatorHandle,
    phi: &Symbol,
    spec: &ContourSpec,
    t_nodes: &[f64],
    x: &GridFunction,
) -> Result<FunctionStack> {
    if phi.class.h0_decay.is_none() {
        return Err(Error::ClassTag(format!("{} carries no decay data", phi.name)));
    }
    if t_nodes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("t nodes must be strictly increasing".into()));
    }
    let engine = ContourEngine::new(op, phi, spec, t_nodes)?;
    let resolved = engine.resolve(x);
    let eval = phi.h0_part();
    let (f0, finf) = phi.dunford_limits();
    let mut layers = Vec::with_capacity(t_nodes.len());
    for &t in t_nodes {
        let mut layer = resolved.layer(eval.as_ref(), t)?;
        if f0 != finf {
            // (1 + tA)^{-1} x = -(1/t) R(-1/t, A) x
            let res = op.resolvent_apply(Complex64::new(-1.0 / t, 0.0), x)?;
            layer = layer.add(&res.scale(-(f0 - finf) / t))?;
        }
        if finf != Complex64::ZERO {
            layer = layer.add(&x.scale(finf))?;
        }
        layers.push(layer);
    }
    FunctionStack::from_functions(&layers, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{x_norm, Exponent};
    use crate::operators::random_sectorial_spectrum;
    use crate::sampling::SeededRng;

    fn p2() -> Exponent {
        Exponent::Finite(2.0)
    }

    fn rand_fn(op: &OperatorHandle, seed: u64) -> GridFunction {
        let mut rng = SeededRng::new(seed);
        GridFunction::new(op.grid().clone(), rng.complex_vector(op.n())).unwrap()
    }

    fn rel_err(a: &GridFunction, b: &GridFunction) -> f64 {
        x_norm(&a.sub(b).unwrap()) / x_norm(b).max(1e-300)
    }

    #[test]
    fn builtin_values() {
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        assert!((rho.eval(Complex64::ONE) - Complex64::new(0.25, 0.0)).norm() < 1e-15);
        let ea = builtin_symbol("exp_alpha", &[1.0]).unwrap();
        assert!((ea.eval(Complex64::ONE) - Complex64::new((-1.0_f64).exp(), 0.0)).norm() < 1e-15);
        assert!(builtin_symbol("nope", &[]).is_err());
        assert!(builtin_symbol("exp_alpha", &[1.0, 2.0]).is_err()); // sigma >= pi/2
    }

    #[test]
    fn rho_decay_certificate() {
        let rho = builtin_symbol("rho_1", &[0.5 * PI]).unwrap();
        let c0 = certify_h0_decay(&rho).unwrap();
        // |z/(1+z)^2| <= c0 (|z| ^ 1/|z|) on the half-plane sector
        assert!(c0 >= 0.9 && c0 < 10.0, "c0 = {c0}");
    }

    #[test]
    fn contour_matches_scalar_on_identity() {
        let op = OperatorHandle::identity(3, p2()).unwrap();
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 1);
        let y = contour_apply(&op, &rho, &ContourSpec::default(), &x).unwrap();
        let expect = x.scale(Complex64::new(0.25, 0.0));
        assert!(rel_err(&y, &expect) < 1e-7, "{}", rel_err(&y, &expect));
        let yc = contour_apply_checked(&op, &rho, &ContourSpec::default(), &x).unwrap();
        assert!(rel_err(&yc, &expect) < 1e-8, "{}", rel_err(&yc, &expect));
    }

    #[test]
    fn contour_matches_diagonal_oracle() {
        let mut rng = SeededRng::new(7);
        let spectrum = random_sectorial_spectrum(10, PI / 4.0, 0.1, 10.0, &mut rng);
        let op = OperatorHandle::diagonal(&spectrum, p2()).unwrap();
        let x = rand_fn(&op, 2);
        for name in ["rho_1", "rho_2", "exp_alpha", "exp_frac"] {
            let sym = match name {
                "exp_alpha" => builtin_symbol(name, &[1.0]).unwrap(),
                "exp_frac" => builtin_symbol(name, &[2.0, 1.0]).unwrap(),
                _ => builtin_symbol(name, &[]).unwrap(),
            };
            let y = contour_apply(&op, &sym, &ContourSpec::default(), &x).unwrap();
            let oracle = op.spectral_apply(&|z| sym.eval(z), &x).unwrap();
            assert!(rel_err(&y, &oracle) < 1e-7, "{name}: {}", rel_err(&y, &oracle));
            // the checked default path escalates until the 1e-8 target holds
            let yc = contour_apply_checked(&op, &sym, &ContourSpec::default(), &x).unwrap();
            assert!(rel_err(&yc, &oracle) < 1e-8, "{name}: {}", rel_err(&yc, &oracle));
        }
    }

    #[test]
    fn contour_matches_eigendecomposition_oracle() {
        let mut rng = SeededRng::new(13);
        let spectrum = random_sectorial_spectrum(12, PI / 4.0, 0.1, 10.0, &mut rng);
        let op = OperatorHandle::dense_from_spectrum(&spectrum, 5, p2()).unwrap();
        let x = rand_fn(&op, 3);
        let rho = builtin_symbol("rho_2", &[]).unwrap();
        let y = contour_apply(&op, &rho, &ContourSpec::default(), &x).unwrap();
        let oracle = op.spectral_apply(&|z| rho.eval(z), &x).unwrap();
        assert!(rel_err(&y, &oracle) < 1e-8, "{}", rel_err(&y, &oracle));
    }

    #[test]
    fn contour_is_omega_independent() {
        let mut rng = SeededRng::new(17);
        let spectrum = random_sectorial_spectrum(6, PI / 6.0, 0.3, 3.0, &mut rng);
        let op = OperatorHandle::diagonal(&spectrum, p2()).unwrap();
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 4);
        let spec = ContourSpec::default();
        let (lo, hi) = ContourEngine::angle_window(&op, rho.sigma).unwrap();
        let y1 = contour_apply(&op, &rho, &spec.with_omega(lo + 0.3 * (hi - lo)), &x).unwrap();
        let y2 = contour_apply(&op, &rho, &spec.with_omega(lo + 0.7 * (hi - lo)), &x).unwrap();
        assert!(rel_err(&y1, &y2) < 1e-8, "{}", rel_err(&y1, &y2));
    }

    #[test]
    fn quadrature_error_decays_geometrically_in_nodes() {
        // fast-decaying symbol keeps truncation subdominant, so the node
        // count controls the error
        let op = OperatorHandle::diagonal(&[Complex64::new(1.7, 0.4)], p2()).unwrap();
        let sym = builtin_symbol("exp_alpha", &[2.0]).unwrap();
        let x = GridFunction::constant(op.grid().clone(), Complex64::ONE);
        let oracle = op.spectral_apply(&|z| sym.eval(z), &x).unwrap();
        let mut errs = Vec::new();
        for nodes in [50, 100, 200] {
            let spec = ContourSpec { omega: None, nodes_per_ray: nodes, half_width: 18.0 };
            let y = contour_apply(&op, &sym, &spec, &x).unwrap();
            errs.push(rel_err(&y, &oracle).max(1e-16));
        }
        // at least geometric: each doubling cuts the error by 5x or hits noise
        assert!(errs[1] < errs[0] / 5.0 || errs[1] < 1e-12, "{errs:?}");
        assert!(errs[2] < errs[1] / 5.0 || errs[2] < 1e-12, "{errs:?}");
        // widening L beyond sufficiency changes nothing
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let wide = ContourSpec { omega: None, nodes_per_ray: 600, half_width: 30.0 };
        let wider = ContourSpec { omega: None, nodes_per_ray: 700, half_width: 36.0 };
        let yw = contour_apply(&op, &rho, &wide, &x).unwrap();
        let yww = contour_apply(&op, &rho, &wider, &x).unwrap();
        assert!(rel_err(&yw, &yww) < 1e-10, "{}", rel_err(&yw, &yww));
    }

    #[test]
    fn multiplicativity_on_oracle_matrices() {
        let mut rng = SeededRng::new(23);
        let spectrum = random_sectorial_spectrum(8, PI / 4.0, 0.2, 5.0, &mut rng);
        let op = OperatorHandle::dense_from_spectrum(&spectrum, 9, p2()).unwrap();
        let phi = builtin_symbol("rho_1", &[]).unwrap();
        let psi = builtin_symbol("exp_alpha", &[1.0]).unwrap();
        let product = phi.multiply(&psi);
        let x = rand_fn(&op, 5);
        let spec = ContourSpec::default();
        let via_product = contour_apply(&op, &product, &spec, &x).unwrap();
        let composed = contour_apply(
            &op,
            &phi,
            &spec,
            &contour_apply(&op, &psi, &spec, &x).unwrap(),
        )
        .unwrap();
        assert!(rel_err(&via_product, &composed) < 1e-7, "{}", rel_err(&via_product, &composed));
    }

    #[test]
    fn dunford_riesz_examples() {
        let mut rng = SeededRng::new(29);
        let spectrum = random_sectorial_spectrum(7, PI / 4.0, 0.2, 4.0, &mut rng);
        let op = OperatorHandle::diagonal(&spectrum, p2()).unwrap();
        let x = rand_fn(&op, 6);
        let spec = ContourSpec::default();
        // f == 1: identity through the split (f(0) = f(inf) = 1, phi = 0)
        let one = builtin_symbol("one_over_1pz", &[]).unwrap().scaled(Complex64::ZERO);
        let one = Symbol {
            name: "one".into(),
            sigma: one.sigma,
            eval: Arc::new(|_| Complex64::ONE),
            class: ClassInfo {
                h_inf_bound: Some(1.0),
                h0_decay: Some(Decay { c0: 0.0, rate0: 1.0, rate_inf: 1.0 }),
                dunford: Some((Complex64::ONE, Complex64::ONE)),
                theta_range: None,
                ue_shift: None,
                zero_free: true,
            },
        };
        let y1 = dunford_riesz_apply(&op, &one, &spec, &x).unwrap();
        assert!(rel_err(&y1, &x) < 1e-9);
        // f = 1/(1+z): pure resolvent
        let f = builtin_symbol("one_over_1pz", &[]).unwrap();
        let y = dunford_riesz_apply(&op, &f, &spec, &x).unwrap();
        let oracle = op.spectral_apply(&|z| Complex64::ONE / (Complex64::ONE + z), &x).unwrap();
        assert!(rel_err(&y, &oracle) < 1e-10);
        // f = e^{-z}: nonzero limit at 0, pure Dunford-Riesz route
        let e = builtin_symbol("exp_semigroup", &[1.0]).unwrap();
        let ye = contour_apply_checked(&op, &e, &spec, &x).unwrap();
        let oe = op.spectral_apply(&|z| (-z).exp(), &x).unwrap();
        assert!(rel_err(&ye, &oe) < 1e-8, "{}", rel_err(&ye, &oe));
        // a random unit-family member at the plain default quadrature
        let fam = hinf_unit_family(0.45 * PI, 1, 0).unwrap();
        let m = &fam[0];
        let ym = dunford_riesz_apply(&op, m, &spec, &x).unwrap();
        let tau: f64 = m.name["exp(-".len()..m.name.len() - 2].parse().unwrap();
        let om = op.spectral_apply(&|z| (-(tau * z)).exp(), &x).unwrap();
        assert!(rel_err(&ym, &om) < 1e-6, "{}", rel_err(&ym, &om));
    }

    #[test]
    fn stack_on_identity_scales_by_the_scalar_symbol() {
        let op = OperatorHandle::identity(3, p2()).unwrap();
        let phi = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 19);
        let t_nodes = vec![0.3, 1.0, 2.5, 7.0];
        let stack = phi_t_stack(&op, &phi, &ContourSpec::default(), &t_nodes, &x).unwrap();
        for (idx, &t) in t_nodes.iter().enumerate() {
            let expect = x.scale(phi.eval(Complex64::new(t, 0.0)));
            assert!(rel_err(&stack.layer_fn(idx), &expect) < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn stack_layers_match_diagonal_oracle_on_dyadic_scalings() {
        let mut rng = SeededRng::new(31);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.3, 3.0, &mut rng);
        let op = OperatorHandle::diagonal(&spectrum, p2()).unwrap();
        let phi = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 7);
        let t_nodes: Vec<f64> = (-6..=6).map(|j| 2.0_f64.powi(j)).collect();
        let spec = ContourSpec { omega: None, nodes_per_ray: 700, half_width: 26.0 };
        let stack = phi_t_stack(&op, &phi, &spec, &t_nodes, &x).unwrap();
        for (layer_idx, &t) in t_nodes.iter().enumerate() {
            let layer = stack.layer_fn(layer_idx);
            let oracle = op.spectral_apply(&|z| phi.eval(t * z), &x).unwrap();
            assert!(rel_err(&layer, &oracle) < 1e-8, "t = {t}: {}", rel_err(&layer, &oracle));
        }
    }

    #[test]
    fn stack_reuse_agrees_with_independent_contours() {
        let mut rng = SeededRng::new(37);
        let spectrum = random_sectorial_spectrum(5, PI / 4.0, 0.2, 5.0, &mut rng);
        let op = OperatorHandle::dense_from_spectrum(&spectrum, 11, p2()).unwrap();
        let phi = builtin_symbol("rho_1", &[]).unwrap();
        let x = rand_fn(&op, 8);
        let spec = ContourSpec { omega: None, nodes_per_ray: 800, half_width: 26.0 };
        let t_nodes = vec![0.25, 1.0, 4.0, 16.0];
        let stack = phi_t_stack(&op, &phi, &spec, &t_nodes, &x).unwrap();
        for (idx, &t) in t_nodes.iter().enumerate() {
            // shared-lattice layer vs a fresh single-scaling engine
            let single = phi_t_stack(&op, &phi, &spec, &[t], &x).unwrap().layer_fn(0);
            assert!(rel_err(&stack.layer_fn(idx), &single) < 1e-9, "t = {t}");
            // and vs an independent contour of the rescaled symbol on a
            // window wide enough for the scaled decay
            let wide = ContourSpec { omega: None, nodes_per_ray: 1100, half_width: 32.0 };
            let independent = contour_apply(&op, &phi.scaled_arg(t), &wide, &x).unwrap();
            assert!(
                rel_err(&stack.layer_fn(idx), &independent) < 1e-8,
                "t = {t}: {}",
                rel_err(&stack.layer_fn(idx), &independent)
            );
        }
    }

    #[test]
    fn telescoping_identity_of_the_interpolation_proof() {
        // f(z) = -z/((1+z)(2+z)); sum over |j| <= N telescopes to the two
        // boundary resolvent terms
        let mut rng = SeededRng::new(41);
        let spectrum = random_sectorial_spectrum(6, PI / 4.0, 0.2, 5.0, &mut rng);
        let op = OperatorHandle::dense_from_spectrum(&spectrum, 13, p2()).unwrap();
        let phi = builtin_symbol("interp_phi", &[0.5]).unwrap();
        let psi = builtin_symbol("interp_psi", &[0.5]).unwrap();
        let f = phi.multiply(&psi);
        let x = rand_fn(&op, 9);
        let big_n = 8;
        let t_nodes: Vec<f64> = (-big_n..=big_n).map(|j| 2.0_f64.powi(j)).collect();
        let spec = ContourSpec { omega: None, nodes_per_ray: 600, half_width: 26.0 };
        let stack = phi_t_stack(&op, &f, &spec, &t_nodes, &x).unwrap();
        let mut sum = GridFunction::zero(op.grid().clone());
        for idx in 0..stack.n_layers() {
            sum = sum.add(&stack.layer_fn(idx)).unwrap();
        }
        let t_low = 2.0_f64.powi(-big_n);
        let t_high = 2.0_f64.powi(big_n + 1);
        let low = op
            .resolvent_apply(Complex64::new(-t_low, 0.0), &x)
            .unwrap()
            .scale(Complex64::new(-t_low, 0.0));
        let high = op
            .resolvent_apply(Complex64::new(-t_high, 0.0), &x)
            .unwrap()
            .scale(Complex64::new(-t_high, 0.0));
        let expect = low.sub(&high).unwrap();
        assert!(rel_err(&sum, &expect) < 1e-8, "{}", rel_err(&sum, &expect));
    }

    #[test]
    fn checked_apply_reports_or_converges() {
        let op = OperatorHandle::diagonal(&[Complex64::new(2.0, 0.1)], p2()).unwrap();
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = GridFunction::constant(op.grid().clone(), Complex64::ONE);
        // deliberately poor starting spec: escalation must rescue it
        let spec = ContourSpec { omega: None, nodes_per_ray: 40, half_width: 6.0 };
        let y = contour_apply_checked(&op, &rho, &spec, &x).unwrap();
        let oracle = op.spectral_apply(&|z| rho.eval(z), &x).unwrap();
        assert!(rel_err(&y, &oracle) < 1e-8);
    }

    #[test]
    fn contour_rejects_infeasible_angles() {
        let op = OperatorHandle::onb_map(crate::operators::OnbDirection::S, 3, 32, p2()).unwrap();
        let rho = builtin_symbol("rho_1", &[]).unwrap();
        let x = GridFunction::constant(op.grid().clone(), Complex64::ONE);
        assert!(contour_apply(&op, &rho, &ContourSpec::default(), &x).is_err());
    }

    #[test]
    fn symbol_parsing() {
        assert!(parse_symbol("rho_1").is_ok());
        assert!(parse_symbol("rho_3").is_ok());
        assert!(parse_symbol("exp_alpha:1").is_ok());
        assert!(parse_symbol("exp_frac:2,1").is_ok());
        assert!(parse_symbol("interp_phi:0.5").is_ok());
        assert!(parse_symbol("exp_alpha:-1").is_err());
        assert!(parse_symbol("junk:1").is_err());
    }
}
