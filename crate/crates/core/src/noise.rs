//! Scalar noise laws with density `exp(−φ(x)) / Z` and their regularity
//! constants.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, integrate, log_cosh, sech2};
use crate::rng::SimRng;

/// A potential `φ` with its first two derivatives.
pub trait Potential: Send + Sync {
    fn phi(&self, x: f64) -> f64;
    fn dphi(&self, x: f64) -> f64;
    fn ddphi(&self, x: f64) -> f64;
    /// Natural length scale, used to size quadrature windows.
    fn scale(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    Gaussian { nu: f64 },
    BangBang { nu: f64 },
    SmoothedLaplace { c: f64, nu: f64 },
}

impl Potential for NoiseKind {
    fn phi(&self, x: f64) -> f64 {
        match *self {
            NoiseKind::Gaussian { nu } => x * x / (2.0 * nu * nu),
            NoiseKind::BangBang { nu } => (x * x + 1.0) / (2.0 * nu * nu) - log_cosh(x / (nu * nu)),
            NoiseKind::SmoothedLaplace { c, nu } => log_cosh(c * x / nu) / c,
        }
    }

    fn dphi(&self, x: f64) -> f64 {
        match *self {
            NoiseKind::Gaussian { nu } => x / (nu * nu),
            NoiseKind::BangBang { nu } => {
                let v = nu * nu;
                (x - (x / v).tanh()) / v
            }
            NoiseKind::SmoothedLaplace { c, nu } => (c * x / nu).tanh() / nu,
        }
    }

    fn ddphi(&self, x: f64) -> f64 {
        match *self {
            NoiseKind::Gaussian { nu } => 1.0 / (nu * nu),
            NoiseKind::BangBang { nu } => {
                let v = nu * nu;
                1.0 / v - sech2(x / v) / (v * v)
            }
            NoiseKind::SmoothedLaplace { c, nu } => c / (nu * nu) * sech2(c * x / nu),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            NoiseKind::Gaussian { nu } => nu,
            NoiseKind::BangBang { nu } => 1.0 + nu,
            NoiseKind::SmoothedLaplace { c, nu } => nu * (1.0 + 1.0 / c),
        }
    }
}

const PANELS: usize = 4000;
const ORDER: usize = 10;

/// Half-width of the window carrying all but ~e⁻⁴⁰ of the mass.
fn window(kind: &NoiseKind) -> f64 {
    match *kind {
        NoiseKind::Gaussian { nu } => 12.0 * nu,
        NoiseKind::BangBang { nu } => 1.0 + 12.0 * nu,
        NoiseKind::SmoothedLaplace { c, nu } => nu * (45.0 + 20.0 / c),
    }
}

/// Inverse-CDF table for the smoothed Laplace law, in units of `ν = 1`.
///
/// Beyond `±edge` the density equals `2^{1/c} e^{−|x|}/Z(c)` to double
/// precision, so tails are sampled exactly as exponentials.
#[derive(Debug)]
struct QuantileTable {
    c: f64,
    z: f64,
    edge: f64,
    tail: f64,
    knots: Vec<f64>,
    cum: Vec<f64>,
}

impl QuantileTable {
    fn build(c: f64) -> Result<Self> {
        let edge = 12.0f64.max(20.0 / c);
        let f = |x: f64| (-log_cosh(c * x) / c).exp();
        // Adaptive refinement driven by the 5- vs 10-point disagreement on each cell.
        let mut cells: Vec<(f64, f64)> = {
            let n0 = 64;
            let h = 2.0 * edge / n0 as f64;
            (0..n0).map(|i| (-edge + i as f64 * h, -edge + (i + 1) as f64 * h)).collect()
        };
        let mut out = Vec::new();
        while let Some((a, b)) = cells.pop() {
            let coarse = integrate(f, a, b, 1, 5);
            let fine = integrate(f, a, b, 1, 10);
            if (coarse - fine).abs() > 1e-15 && b - a > 1e-6 {
                let m = 0.5 * (a + b);
                cells.push((m, b));
                cells.push((a, m));
            } else {
                out.push((a, b, fine));
            }
            if out.len() > 1_000_000 {
                return Err(Error::Quadrature("inverse-CDF table did not resolve".into()));
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        let tail_raw = 2f64.powf(1.0 / c) * (-edge).exp();
        let body: f64 = out.iter().map(|c| c.2).sum();
        let z = body + 2.0 * tail_raw;
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Quadrature("smoothed Laplace normalizer is not finite".into()));
        }
        let mut knots = Vec::with_capacity(out.len() + 1);
        let mut cum = Vec::with_capacity(out.len() + 1);
        knots.push(out[0].0);
        let mut acc = tail_raw / z;
        cum.push(acc);
        for (_, b, m) in &out {
            acc += m / z;
            knots.push(*b);
            cum.push(acc);
        }
        Ok(QuantileTable {
            c,
            z,
            edge,
            tail: tail_raw / z,
            knots,
            cum,
        })
    }

    fn density(&self, x: f64) -> f64 {
        (-log_cosh(self.c * x) / self.c).exp() / self.z
    }

    /// CDF at `x` (unit scale).
    fn cdf(&self, x: f64) -> f64 {
        if x <= -self.edge {
            return self.tail * (x + self.edge).exp();
        }
        if x >= self.edge {
            return 1.0 - self.tail * (self.edge - x).exp();
        }
        let i = self.knots.partition_point(|k| *k <= x).saturating_sub(1);
        self.cum[i] + self.cell_mass(self.knots[i], x)
    }

    fn cell_mass(&self, a: f64, x: f64) -> f64 {
        if x <= a {
            return 0.0;
        }
        let rule = gauss_legendre(16);
        let h = x - a;
        let mid = a + 0.5 * h;
        0.5 * h * rule.0.iter().zip(&rule.1).map(|(t, w)| w * self.density(mid + 0.5 * h * t)).sum::<f64>()
    }

    fn quantile(&self, u: f64) -> f64 {
        if u <= self.tail {
            return -self.edge + (u / self.tail).ln();
        }
        if u >= 1.0 - self.tail {
            return self.edge - ((1.0 - u) / self.tail).ln();
        }
        let i = self.cum.partition_point(|c| *c <= u).saturating_sub(1).min(self.knots.len() - 2);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let target = u - self.cum[i];
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (b - a) * (target / (self.cum[i + 1] - self.cum[i]).max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let g = self.cell_mass(a, x) - target;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = g / self.density(x);
            let next = x - step;
            x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if step.abs() < 1e-15 * (1.0 + x.abs()) || hi - lo < 1e-15 {
                break;
            }
        }
        x
    }
}

/// A noise law ready for sampling, with its stored regularity constants.
#[derive(Clone, Debug)]
pub struct NoiseFamily {
    kind: NoiseKind,
    log_z: f64,
    sigma_phi_sq: f64,
    beta1: f64,
    beta2: f64,
    table: Option<Arc<QuantileTable>>,
}

/// `Z(c) = ∫ cosh(cx)^{−1/c} dx`.
pub fn laplace_normalizer(c: f64) -> Result<f64> {
    Ok(QuantileTable::build(c)?.z)
}

pub fn make_noise(kind: NoiseKind) -> Result<NoiseFamily> {
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    match kind {
        NoiseKind::Gaussian { nu } => {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::invalid("gaussian noise needs nu > 0"));
            }
            Ok(NoiseFamily {
                kind,
                log_z: (sqrt_2pi * nu).ln(),
                sigma_phi_sq: nu * nu,
                beta1: 1.0,
                beta2: 105.0,
                table: None,
            })
        }
        NoiseKind::BangBang { nu } => {
            if !(nu > 0.0 && nu < 1.0) {
                return Err(Error::invalid("bang-bang noise needs nu in (0, 1)"));
            }
            let mut fam = NoiseFamily {
                kind,
                log_z: (sqrt_2pi * nu).ln(),
                sigma_phi_sq: 1.0,
                beta1: 8.0 / nu.powi(6),
                // Explicit constants from the eighth-moment chain:
                // E[φ'⁸] ≤ 128(8·7⁴(1+ν⁸) + 1)/ν¹⁶ and σ_φ² ≤ 8/ν².
                beta2: 128.0 * 4096.0 * (8.0 * 2401.0 * (1.0 + nu.powi(8)) + 1.0) / nu.powi(24),
                table: None,
            };
            fam.sigma_phi_sq = 1.0 / fam.expect(|x| kind.dphi(x).powi(2));
            Ok(fam)
        }
        NoiseKind::SmoothedLaplace { c, nu } => {
            if !(c > 0.0 && c.is_finite() && nu > 0.0 && nu.is_finite()) {
                return Err(Error::invalid("smoothed Laplace noise needs c > 0 and nu > 0"));
            }
            let table = QuantileTable::build(c)?;
            let zc = table.z;
            let t = (c * zc / 4.0).tanh();
            let mut fam = NoiseFamily {
                kind,
                log_z: (nu * zc).ln(),
                sigma_phi_sq: 1.0,
                beta1: 2.0 * c / (t * t),
                beta2: 16.0 / t.powi(8),
                table: Some(Arc::new(table)),
            };
            fam.sigma_phi_sq = 1.0 / fam.expect(|x| kind.dphi(x).powi(2));
            Ok(fam)
        }
    }
}

impl NoiseFamily {
    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn sigma_phi_sq(&self) -> f64 {
        self.sigma_phi_sq
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.kind.phi(x)
    }

    pub fn dphi(&self, x: f64) -> f64 {
        self.kind.dphi(x)
    }

    pub fn ddphi(&self, x: f64) -> f64 {
        self.kind.ddphi(x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        -self.kind.phi(x) - self.log_z
    }

    /// `E[g(w)]` under the noise law, by composite Gauss–Legendre quadrature.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let l = window(&self.kind);
        integrate(|x| g(x) * self.log_density(x).exp(), -l, l, PANELS, ORDER)
    }

    /// Variance of the noise law.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::Gaussian { nu } => nu * nu,
            NoiseKind::BangBang { nu } => 1.0 + nu * nu,
            NoiseKind::SmoothedLaplace { .. } => self.expect(|x| x * x),
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match self.kind {
            NoiseKind::Gaussian { nu } => nu * rng.sample::<f64, _>(StandardNormal),
            NoiseKind::BangBang { nu } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign + nu * rng.sample::<f64, _>(StandardNormal)
            }
            NoiseKind::SmoothedLaplace { nu, .. } => {
                // open interval (0, 1)
                let u = (rng.random::<u64>() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) + 0.5 / (1u64 << 53) as f64;
                nu * self.table.as_ref().unwrap().quantile(u)
            }
        }
    }

    /// Quantile function; only the smoothed Laplace law is tabulated.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self.kind {
            NoiseKind::SmoothedLaplace { nu, .. } => Some(nu * self.table.as_ref()?.quantile(u)),
            _ => None,
        }
    }

    /// Tabulated CDF; only the smoothed Laplace law is tabulated.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match self.kind {
            NoiseKind::SmoothedLaplace { nu, .. } => Some(self.table.as_ref()?.cdf(x / nu)),
            _ => None,
        }
    }

    pub fn regularity_report(&self, tol: f64) -> RegularityReport {
        check_phi_regularity(&self.kind, Some((self.sigma_phi_sq, self.beta1, self.beta2)), tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    /// `bound − measured` for inequalities, `−|error|` for identities.
    pub slack: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    pub checks: Vec<ConditionCheck>,
}

impl RegularityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the regularity conditions by quadrature.
///
/// `claimed` carries `(σ_φ², β₁, β₂)` when the caller has stored constants;
/// without it only the integrability, tail and identity conditions run.
pub fn check_phi_regularity(pot: &dyn Potential, claimed: Option<(f64, f64, f64)>, tol: f64) -> RegularityReport {
    let mut checks = Vec::new();
    let s = pot.scale();
    // (a) normalizer must settle as the window grows.
    let windows = [15.0 * s, 30.0 * s, 60.0 * s];
    let zs: Vec<f64> = windows
        .iter()
        .map(|l| integrate(|x| (-pot.phi(x)).exp(), -l, *l, PANELS, ORDER))
        .collect();
    let z = zs[2];
    let drift = ((zs[2] - zs[1]) / zs[2]).abs();
    let z_ok = z.is_finite() && z > 0.0 && drift <= tol;
    checks.push(ConditionCheck {
        name: "a_normalizer",
        passed: z_ok,
        measured: z,
        bound: f64::INFINITY,
        slack: -drift,
        note: if z_ok {
            String::new()
        } else {
            format!("normalizer did not converge (relative drift {drift:.3e})")
        },
    });
    let l = windows[2];
    let edge_phi = pot.phi(-l).min(pot.phi(l));
    let edge_flux = [(-l), l]
        .iter()
        .map(|x| pot.dphi(*x).abs() * (-pot.phi(*x)).exp())
        .fold(0.0_f64, f64::max);
    let tails_ok = z_ok && edge_phi > 20.0 && edge_flux / z <= tol;
    checks.push(ConditionCheck {
        name: "b_tails",
        passed: tails_ok,
        measured: edge_flux,
        bound: tol * z,
        slack: tol * z - edge_flux,
        note: if tails_ok { String::new() } else { "φ does not grow or |φ'|e^{−φ} does not vanish at the window edge".into() },
    });
    if !z_ok {
        return RegularityReport { checks };
    }
    let lw = windows[1];
    let ex = |g: &dyn Fn(f64) -> f64| integrate(|x| g(x) * (-pot.phi(x)).exp() / z, -lw, lw, PANELS, ORDER);
    let m1 = ex(&|x| pot.dphi(x));
    let m2 = ex(&|x| pot.dphi(x).powi(2));
    let h1 = ex(&|x| pot.ddphi(x));
    let h2 = ex(&|x| pot.ddphi(x).powi(2));
    let m8 = ex(&|x| pot.dphi(x).powi(8));
    let sigma_sq = 1.0 / m2;
    checks.push(ConditionCheck {
        name: "score_mean_zero",
        passed: m1.abs() <= tol * m2.sqrt(),
        measured: m1,
        bound: 0.0,
        slack: -m1.abs(),
        note: String::new(),
    });
    let ibp = (m2 - h1).abs();
    checks.push(ConditionCheck {
        name: "integration_by_parts",
        passed: ibp <= tol * m2,
        measured: m2,
        bound: h1,
        slack: -ibp,
        note: String::new(),
    });
    let c_ok = sigma_sq.is_finite() && sigma_sq > 0.0;
    let (c_ok, c_bound) = match claimed {
        Some((s2, _, _)) => (c_ok && ((sigma_sq - s2) / s2).abs() <= tol, s2),
        None => (c_ok, sigma_sq),
    };
    checks.push(ConditionCheck {
        name: "c_sigma",
        passed: c_ok,
        measured: sigma_sq,
        bound: c_bound,
        slack: -(sigma_sq - c_bound).abs(),
        note: String::new(),
    });
    if let Some((_, b1, b2)) = claimed {
        let bound_d = b1 / sigma_sq.powi(2);
        checks.push(ConditionCheck {
            name: "d_curvature",
            passed: h2 <= bound_d * (1.0 + tol),
            measured: h2,
            bound: bound_d,
            slack: bound_d - h2,
            note: String::new(),
        });
        let bound_e = b2 / sigma_sq.powi(4);
        checks.push(ConditionCheck {
            name: "e_eighth_moment",
            passed: m8 <= bound_e * (1.0 + tol),
            measured: m8,
            bound: bound_e,
            slack: bound_e - m8,
            note: String::new(),
        });
    }
    RegularityReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_constants() {
        let g = make_noise(NoiseKind::Gaussian { nu: 1.0 }).unwrap();
        assert_eq!((g.sigma_phi_sq(), g.beta1(), g.beta2()), (1.0, 1.0, 105.0));
        let g2 = make_noise(NoiseKind::Gaussian { nu: 2.0 }).unwrap();
        let m8 = g2.expect(|x| g2.dphi(x).powi(8)) * g2.sigma_phi_sq().powi(4);
        assert!((m8 - 105.0).abs() < 1e-8, "{m8}");
    }

    #[test]
    fn parameter_ranges() {
        assert!(make_noise(NoiseKind::BangBang { nu: 1.5 }).is_err());
        assert!(make_noise(NoiseKind::Gaussian { nu: 0.0 }).is_err());
        assert!(make_noise(NoiseKind::SmoothedLaplace { c: -1.0, nu: 1.0 }).is_err());
    }

    #[test]
    fn densities_normalize() {
        for kind in [
            NoiseKind::Gaussian { nu: 0.7 },
            NoiseKind::BangBang { nu: 0.5 },
            NoiseKind::BangBang { nu: 0.2 },
            NoiseKind::SmoothedLaplace { c: 5.0, nu: 1.0 },
            NoiseKind::SmoothedLaplace { c: 0.5, nu: 2.0 },
        ] {
            let f = make_noise(kind).unwrap();
            let mass = f.expect(|_| 1.0);
            assert!((mass - 1.0).abs() < 1e-10, "{kind:?}: {mass}");
        }
    }
}
