//! Radial profile `phi` of the ball solution, the first-order corrector `W`
//! and the per-degree mode ODEs, all integrated with fixed-step RK4 from a
//! series start near the regular singular point `r = 0`.

use thiserror::Error;

use crate::expr::ExprError;
use crate::problem::RescaledProblem;

/// Series start radius.
pub const R_START: f64 = 1e-4;
/// Maximal RK4 step.
pub const H_MAX: f64 = 2.5e-4;
/// Farthest radius the profile is continued to.
pub const R_EXTEND: f64 = 1.25;

const SHOOT_MAX_ITER: usize = 60;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RadialError {
    #[error("NoConvergence in radial.{stage}: {reason}")]
    NoConvergence { stage: &'static str, reason: String },
    #[error("ProfileNegative in radial.solve_phi: {0}")]
    ProfileNegative(String),
    #[error("ModeSolveFailure in radial.mode_log_derivative: degree {degree} has g(1) = {value:.3e}")]
    ModeSolveFailure { degree: usize, value: f64 },
    #[error("evaluation failed in radial solver: {0}")]
    Eval(#[from] ExprError),
}

/// Radial nodes from 0 to `r_stop`, geometric near the origin (step `<= r/k`)
/// and uniform `H_MAX` further out. The node `r = 1` is always present.
fn grid(k: f64, r_stop: f64) -> (Vec<f64>, usize) {
    let eta = (1.0 / k.max(1.0)).min(0.05);
    let mut r = vec![0.0, R_START];
    let mut cur = R_START;
    while cur < 1.0 {
        let h = (eta * cur).min(H_MAX);
        cur = if cur + 1.5 * h >= 1.0 && cur + h < 1.0 { (cur + 1.0) * 0.5 } else { (cur + h).min(1.0) };
        r.push(cur);
    }
    let one = r.len() - 1;
    let steps = ((r_stop - 1.0) / H_MAX).round() as usize;
    for i in 1..=steps {
        r.push(1.0 + i as f64 * H_MAX);
    }
    (r, one)
}

fn rk4_step<F>(f: &mut F, r: f64, h: f64, y: &[f64], out: &mut [f64]) -> Result<(), ExprError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), ExprError>,
{
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f(r, y, &mut k1)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(r + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(r + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..d {
        tmp[i] = y[i] + h * k3[i];
    }
    f(r + h, &tmp, &mut k4)?;
    for i in 0..d {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if !out[i].is_finite() {
            return Err(ExprError::NonFinite("radial integration"));
        }
    }
    Ok(())
}

/// Integrates from `r[1]` with state `y1`; `stop` may end the run early.
/// Returns the states at `r[1..=last]`.
fn integrate<F, S>(r: &[f64], y1: Vec<f64>, mut f: F, mut stop: S) -> Result<Vec<Vec<f64>>, ExprError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), ExprError>,
    S: FnMut(f64, &[f64]) -> bool,
{
    let mut states = vec![y1];
    for w in r[1..].windows(2) {
        let y = states.last().unwrap();
        let mut next = vec![0.0; y.len()];
        rk4_step(&mut f, w[0], w[1] - w[0], y, &mut next)?;
        if stop(w[1], &next) {
            break;
        }
        states.push(next);
    }
    Ok(states)
}

/// Data of the frozen-coefficient problem at the center `p`.
struct CenterData<'a> {
    rp: &'a RescaledProblem,
    n: f64,
    u_center: f64,
}

impl<'a> CenterData<'a> {
    fn new(rp: &'a RescaledProblem) -> Result<Self, ExprError> {
        Ok(CenterData { rp, n: rp.dim() as f64, u_center: rp.f0_center()? })
    }
    fn f(&self, phi: f64) -> Result<f64, ExprError> {
        self.rp.spec.forcing_at(&self.rp.p, self.u_center + phi)
    }
    fn fu(&self, phi: f64) -> Result<f64, ExprError> {
        self.rp.spec.forcing_du_at(&self.rp.p, self.u_center + phi)
    }
    fn fx(&self, j: usize, phi: f64) -> Result<f64, ExprError> {
        self.rp.spec.forcing_dx_at(j, &self.rp.p, self.u_center + phi)
    }
    fn lam(&self) -> f64 {
        self.rp.lambda_bar
    }

    /// `[phi, phi']` right-hand side.
    fn phi_rhs(&self, r: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
        dy[0] = y[1];
        dy[1] = -(self.n - 1.0) / r * y[1] - self.lam() * self.f(y[0])?;
        Ok(())
    }

    fn phi_start(&self, s: f64) -> Result<[f64; 2], ExprError> {
        let c = -self.lam() * self.f(s)? / self.n;
        Ok([s + 0.5 * c * R_START * R_START, c * R_START])
    }
}

/// The radial profile `phi` solving `phi'' + (n-1)/r phi' + lambda_bar F(p, f0(p) + phi) = 0`,
/// regular at 0 with `phi(1) = 0`, tabulated on `[0, 1 + delta]`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub n: usize,
    pub lambda_bar: f64,
    pub p: Vec<f64>,
    /// `f0(p)`.
    pub u_center: f64,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub ddphi: Vec<f64>,
    /// Index of the node `r = 1`.
    pub one: usize,
    /// Extension margin past the unit sphere.
    pub delta: f64,
    pub shooting_iterations: usize,
}

impl RadialProfile {
    pub fn phi_at_origin(&self) -> f64 {
        self.phi[0]
    }
    /// `phi'(1)`.
    pub fn d1(&self) -> f64 {
        self.dphi[self.one]
    }
    /// `phi''(1)`.
    pub fn dd1(&self) -> f64 {
        self.ddphi[self.one]
    }
    /// `phi''(1)/phi'(1)`: the Dirichlet-to-Neumann multiplier of the linearized
    /// operator on degree-one data (equal to 1 when `F` is independent of `u`).
    pub fn degree_one_dtn(&self) -> f64 {
        if self.lambda_bar == 0.0 {
            1.0
        } else {
            self.dd1() / self.d1()
        }
    }
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// `(phi(r), phi'(r))` by cubic Hermite interpolation; `None` beyond the table.
    pub fn eval(&self, r: f64) -> Option<(f64, f64)> {
        let r = r.abs();
        if r > self.r_max() + 1e-14 {
            return None;
        }
        if r <= R_START {
            let c = self.ddphi[0];
            return Some((self.phi[0] + 0.5 * c * r * r, c * r));
        }
        let k = match self.r.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(k) => return Some((self.phi[k], self.dphi[k])),
            Err(k) => k.clamp(1, self.r.len() - 1) - 1,
        };
        let (r0, r1) = (self.r[k], self.r[k + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        let (y0, y1, m0, m1) = (self.phi[k], self.phi[k + 1], self.dphi[k] * h, self.dphi[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / h;
        Some((v, d))
    }
}

/// Shoots on `phi(0)` with Newton steps driven by the variational equation.
pub fn solve_phi(rp: &RescaledProblem) -> Result<RadialProfile, RadialError> {
    let cd = CenterData::new(rp)?;
    let n = rp.dim();
    let lam = rp.lambda_bar;
    let (r_all, one) = grid(n as f64 - 1.0, R_EXTEND);

    if lam == 0.0 {
        let len = r_all.len();
        return Ok(RadialProfile {
            n,
            lambda_bar: 0.0,
            p: rp.p.clone(),
            u_center: cd.u_center,
            r: r_all,
            phi: vec![0.0; len],
            dphi: vec![0.0; len],
            ddphi: vec![0.0; len],
            one,
            delta: R_EXTEND - 1.0,
            shooting_iterations: 0,
        });
    }

    let r_unit = &r_all[..=one];
    // shoot: returns (phi(1), psi(1), min psi on [0,1])
    let shoot = |s: f64| -> Result<(f64, f64, f64), ExprError> {
        let [p0, dp0] = cd.phi_start(s)?;
        let c = -lam * cd.fu(s)? / n as f64;
        let y1 = vec![p0, dp0, 1.0 + 0.5 * c * R_START * R_START, c * R_START];
        let mut min_psi = f64::INFINITY;
        let states = integrate(
            r_unit,
            y1,
            |r, y, dy| {
                cd.phi_rhs(r, &y[..2], &mut dy[..2])?;
                dy[2] = y[3];
                dy[3] = -(n as f64 - 1.0) / r * y[3] - lam * cd.fu(y[0])? * y[2];
                Ok(())
            },
            |_, y| {
                min_psi = min_psi.min(y[2]);
                false
            },
        )?;
        let last = states.last().unwrap();
        Ok((last[0], last[2], min_psi))
    };

    let fail = |reason: String| RadialError::NoConvergence { stage: "solve_phi", reason };
    let mut s = lam * cd.f(0.0)? / (2.0 * n as f64);
    let mut cur = shoot(s).map_err(|e| fail(format!("initial shot failed: {e}")))?;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..SHOOT_MAX_ITER {
        iterations = it + 1;
        if cur.0.abs() <= 1e-13 * (1.0 + s.abs()) {
            converged = true;
            break;
        }
        if cur.1.abs() < 1e-12 {
            return Err(fail(format!("variational solution vanishes at r = 1 (phi(0) = {s:.6e}); lambda_bar too large")));
        }
        let step = -cur.0 / cur.1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = s + t * step;
            if let Ok(next) = shoot(trial) {
                if next.0.abs() < cur.0.abs() || next.0.abs() <= 1e-13 * (1.0 + trial.abs()) {
                    s = trial;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(fail(format!("line search failed at phi(0) = {s:.6e} with phi(1) = {:.3e}; lambda_bar too large", cur.0)));
        }
        if (t * step).abs() <= 1e-15 * (1.0 + s.abs()) {
            converged = cur.0.abs() <= 1e-10;
            break;
        }
    }
    if !converged {
        return Err(fail(format!("shooting Newton did not converge in {SHOOT_MAX_ITER} iterations (phi(1) = {:.3e}); lambda_bar too large", cur.0)));
    }
    if cur.2 <= 0.0 {
        return Err(fail(format!(
            "linearized operator is not positive on the ball (solution past the first fold, phi(0) = {s:.6e}); lambda_bar too large"
        )));
    }

    // final pass with continuation past r = 1
    let [p0, dp0] = cd.phi_start(s)?;
    let mut max_phi = 0.0f64;
    let mut stopped_eval = false;
    let mut states = vec![vec![s, 0.0]];
    {
        let r_ext = &r_all;
        let mut y = vec![p0, dp0];
        states.push(y.clone());
        for (idx, w) in r_ext[1..].windows(2).enumerate() {
            let mut next = vec![0.0; 2];
            let ok = rk4_step(&mut |r, y: &[f64], dy: &mut [f64]| cd.phi_rhs(r, y, dy), w[0], w[1] - w[0], &y, &mut next);
            let node = idx + 2;
            if node <= one {
                if ok.is_err() {
                    return Err(fail("integration failed inside the unit ball".into()));
                }
                max_phi = max_phi.max(next[0].abs());
            } else if ok.is_err() || next[0].abs() > 10.0 * max_phi + 1.0 {
                stopped_eval = true;
                break;
            }
            states.push(next.clone());
            y = next;
        }
    }
    let _ = stopped_eval;
    let len = states.len();
    let r: Vec<f64> = r_all[..len].to_vec();
    let phi: Vec<f64> = states.iter().map(|y| y[0]).collect();
    let dphi: Vec<f64> = states.iter().map(|y| y[1]).collect();
    let mut ddphi = Vec::with_capacity(len);
    ddphi.push(-lam * cd.f(s)? / n as f64);
    for k in 1..len {
        ddphi.push(-(n as f64 - 1.0) / r[k] * dphi[k] - lam * cd.f(phi[k])?);
    }
    let delta = (r[len - 1] - 1.0).min(R_EXTEND - 1.0);

    for k in 0..one {
        if !(phi[k] > 0.0) {
            return Err(RadialError::ProfileNegative(format!("phi({:.4}) = {:.3e} is not positive", r[k], phi[k])));
        }
    }
    if !(dphi[one] < 0.0) {
        return Err(RadialError::ProfileNegative(format!("phi'(1) = {:.3e} is not negative", dphi[one])));
    }

    Ok(RadialProfile {
        n,
        lambda_bar: lam,
        p: rp.p.clone(),
        u_center: cd.u_center,
        r,
        phi,
        dphi,
        ddphi,
        one,
        delta,
        shooting_iterations: iterations,
    })
}

/// First-order corrector: `W_j'' + (n+1)/r W_j' + lambda_bar F'(p,u0) W_j
/// + lambda_bar d_j F(p,u0) + b_j(p) u0'/r = 0`, regular at 0, `W_j(1) = 0`.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub r: Vec<f64>,
    /// `w[j][k]` is `W_j(r_k)`.
    pub w: Vec<Vec<f64>>,
    pub dw: Vec<Vec<f64>>,
    /// `V = W'(1)`.
    pub v: Vec<f64>,
    pub one: usize,
}

impl Corrector {
    /// `W(r)` by cubic Hermite interpolation.
    pub fn eval(&self, r: f64) -> Option<Vec<f64>> {
        let r = r.abs();
        if r > *self.r.last().unwrap() + 1e-14 {
            return None;
        }
        let k = match self.r.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(k) => return Some(self.w.iter().map(|w| w[k]).collect()),
            Err(k) => k.clamp(1, self.r.len() - 1) - 1,
        };
        let (r0, r1) = (self.r[k], self.r[k + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        Some(
            self.w
                .iter()
                .zip(&self.dw)
                .map(|(w, dw)| {
                    (2.0 * t3 - 3.0 * t2 + 1.0) * w[k]
                        + (t3 - 2.0 * t2 + t) * dw[k] * h
                        + (-2.0 * t3 + 3.0 * t2) * w[k + 1]
                        + (t3 - t2) * dw[k + 1] * h
                })
                .collect(),
        )
    }
}

pub fn solve_corrector(rp: &RescaledProblem, prof: &RadialProfile) -> Result<Corrector, RadialError> {
    let cd = CenterData::new(rp)?;
    let n = rp.dim();
    let nf = n as f64;
    let lam = rp.lambda_bar;
    let b = rp.spec.drift_at(&rp.p)?;
    let (r_all, one) = grid(nf + 1.0, 1.0 + prof.delta);
    let s = prof.phi_at_origin();

    // state: phi, phi', hom, hom', part_1, part_1', ..., part_n, part_n'
    let dim = 4 + 2 * n;
    let mut y1 = vec![0.0; dim];
    let [p0, dp0] = cd.phi_start(s)?;
    y1[0] = p0;
    y1[1] = dp0;
    let fu0 = cd.fu(s)?;
    let phi_dd0 = -lam * cd.f(s)? / nf;
    let ch = -lam * fu0 / (2.0 * (nf + 2.0));
    y1[2] = 1.0 + ch * R_START * R_START;
    y1[3] = 2.0 * ch * R_START;
    for j in 0..n {
        let c = -(lam * cd.fx(j, s)? + b[j] * phi_dd0) / (2.0 * (nf + 2.0));
        y1[4 + 2 * j] = c * R_START * R_START;
        y1[5 + 2 * j] = 2.0 * c * R_START;
    }
    let states = integrate(
        &r_all,
        y1.clone(),
        |r, y, dy| {
            cd.phi_rhs(r, &y[..2], &mut dy[..2])?;
            let fu = cd.fu(y[0])?;
            dy[2] = y[3];
            dy[3] = -(nf + 1.0) / r * y[3] - lam * fu * y[2];
            for j in 0..n {
                let (i, d) = (4 + 2 * j, 5 + 2 * j);
                dy[i] = y[d];
                dy[d] = -(nf + 1.0) / r * y[d] - lam * fu * y[i] - lam * cd.fx(j, y[0])? - b[j] * y[1] / r;
            }
            Ok(())
        },
        |_, _| false,
    )?;
    let mut all = vec![vec![0.0; dim]];
    all[0][0] = s;
    all[0][2] = 1.0;
    all.extend(states);
    let hom_one = all[one][2];
    if hom_one.abs() < 1e-12 {
        return Err(RadialError::NoConvergence {
            stage: "solve_corrector",
            reason: format!("homogeneous solution vanishes at r = 1 ({hom_one:.3e}); lambda_bar at an interior eigenvalue"),
        });
    }
    let mut w = vec![Vec::with_capacity(all.len()); n];
    let mut dw = vec![Vec::with_capacity(all.len()); n];
    let mut v = vec![0.0; n];
    for j in 0..n {
        let alpha = -all[one][4 + 2 * j] / hom_one;
        for y in &all {
            w[j].push(y[4 + 2 * j] + alpha * y[2]);
            dw[j].push(y[5 + 2 * j] + alpha * y[3]);
        }
        v[j] = dw[j][one];
    }
    Ok(Corrector { r: r_all, w, dw, v, one })
}

/// `g_l'(1)/g_l(1)` for the regular solution of
/// `g'' + (n-1)/r g' - l(l+n-2)/r^2 g + lambda_bar F'(p, f0(p) + phi) g = 0`.
///
/// Integrates `h = g / r^l`, which satisfies
/// `h'' + (2l+n-1)/r h' + lambda_bar F' h = 0` with `h(0) = 1`.
pub fn mode_log_derivative(rp: &RescaledProblem, prof: &RadialProfile, degree: usize) -> Result<f64, RadialError> {
    let cd = CenterData::new(rp)?;
    let nf = rp.dim() as f64;
    let lam = rp.lambda_bar;
    let l = degree as f64;
    if lam == 0.0 || rp.spec.is_linear() {
        return Ok(l);
    }
    let k = 2.0 * l + nf - 1.0;
    let (r_all, _) = grid(k, 1.0);
    let s = prof.phi_at_origin();
    let [p0, dp0] = cd.phi_start(s)?;
    let c = -lam * cd.fu(s)? / (2.0 * (k + 1.0));
    let y1 = vec![p0, dp0, 1.0 + c * R_START * R_START, 2.0 * c * R_START];
    let states = integrate(
        &r_all,
        y1,
        |r, y, dy| {
            cd.phi_rhs(r, &y[..2], &mut dy[..2])?;
            dy[2] = y[3];
            dy[3] = -k / r * y[3] - lam * cd.fu(y[0])? * y[2];
            Ok(())
        },
        |_, _| false,
    )?;
    let last = states.last().unwrap();
    if last[2].abs() < 1e-12 {
        return Err(RadialError::ModeSolveFailure { degree, value: last[2] });
    }
    Ok(l + last[3] / last[2])
}
