//! Energies, decay fits, monitors, inequality ratios and residuals of the
//! evolution identities along the flow.
//!
//! Residuals compare the Gateaux derivative of a pointwise quantity along
//! `flow_rhs` with a closed-form expression of the flow. Several of the
//! expressions are printed with small errors in the literature; the versions
//! here are the ones that vanish under refinement (see README).

use serde::Serialize;

use crate::calculus::{codiff_two, d_two, form_gradient, grad_norm_sq, periods, spectra_of};
use crate::error::{Error, Result};
use crate::flows::flow_rhs_parts;
use crate::forms::{
    b_p, check_nondegenerate, full, lambdas_p, norm_sq_p, sd_norms_p, star_p, u_p, FlowScheme, Mat4, TwoForm, P6,
    DEFAULT_U_FLOOR, PAIRS,
};
use crate::grid::{integrate, PeriodicGrid, ScalarField};

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn energy(rho: &TwoForm) -> f64 {
    integrate(&rho.norm_sq())
}

/// ∫|ρ − ρ̄|² where ρ̄ is the constant (harmonic) part. Equals E(ρ) − E(ρ̄)
/// for closed ρ and needs no reference class.
pub fn excess_energy(rho: &TwoForm) -> f64 {
    let mut acc = 0.0;
    for f in &rho.c {
        let m = f.mean();
        acc += f.values().iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    acc / rho.len() as f64 * rho.grid().volume()
}

fn omega_periods(g: &PeriodicGrid) -> [f64; 6] {
    let l = g.lengths();
    [l[0] * l[1], 0.0, 0.0, 0.0, 0.0, l[2] * l[3]]
}

/// Fails unless the periods of ρ match those of ω to 1e-8 (relative to the
/// (1,2)-torus area).
pub fn check_omega_class(rho: &TwoForm) -> Result<()> {
    let want = omega_periods(rho.grid());
    let have = periods(rho);
    let scale = want[0].max(want[5]);
    for k in 0..6 {
        if (have[k] - want[k]).abs() > 1e-8 * scale {
            return Err(Error::CohomologyMismatch(format!(
                "period {:?} is {:.12e}, expected {:.12e}",
                (PAIRS[k].0 + 1, PAIRS[k].1 + 1),
                have[k],
                want[k]
            )));
        }
    }
    Ok(())
}

fn omega_distance_sq(rho: &TwoForm) -> f64 {
    let w = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let mut acc = 0.0;
    for (k, f) in rho.c.iter().enumerate() {
        acc += f.values().iter().map(|v| (v - w[k]) * (v - w[k])).sum::<f64>();
    }
    acc / rho.len() as f64 * rho.grid().volume()
}

/// E₀(ρ) = E(ρ) − E(ω) = ∫|ρ − ω|² for closed ρ in [ω].
pub fn normalized_energy(rho: &TwoForm) -> Result<f64> {
    check_omega_class(rho)?;
    Ok(omega_distance_sq(rho))
}

/// Least-squares slope of ln(value) against t, negated, with r².
pub fn decay_rate_fit(series: &[(f64, f64)]) -> Result<(f64, f64)> {
    if series.len() < 10 {
        return Err(Error::BadSeries(format!("need at least 10 samples, got {}", series.len())));
    }
    if let Some(&(t, v)) = series.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::BadSeries(format!("non-positive value {v:e} at t = {t}")));
    }
    let n = series.len() as f64;
    let mt = series.iter().map(|p| p.0).sum::<f64>() / n;
    let my = series.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, v) in series {
        let (dt, dy) = (t - mt, v.ln() - my);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::BadSeries("all samples share one time".into()));
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { (sty * sty / (stt * syy)).clamp(0.0, 1.0) };
    Ok((-slope, r2))
}

/// ∫|d*ρ|² over the grid.
pub fn codiff_energy(rho: &TwoForm) -> Result<f64> {
    let s = codiff_two(rho)?;
    Ok(s.c.iter().map(|f| f.dot(f)).sum())
}

/// Q₁ = ∫|d*ρ|² + A₁∫|ρ − ω|².
pub fn q1_functional(rho: &TwoForm, a1: f64) -> Result<f64> {
    check_omega_class(rho)?;
    Ok(codiff_energy(rho)? + a1 * omega_distance_sq(rho))
}

/// f = |∇ρ|² + A|∇u|² + B|ρ|² + 1
pub fn shi_monitor(rho: &TwoForm, a: f64, b: f64) -> Result<ScalarField> {
    let gr = grad_norm_sq(rho)?;
    let u = crate::forms::volume_potential(rho);
    let du = crate::grid::gradient(&u)?;
    let n2 = rho.norm_sq();
    let mut out = gr;
    for d in &du {
        out.axpy(a, &d.mul(d));
    }
    out.axpy(b, &n2);
    Ok(out.map(|v| v + 1.0))
}

/// sup |∇u| / u
pub fn grad_log_u_sup(rho: &TwoForm) -> Result<f64> {
    check_nondegenerate(rho, DEFAULT_U_FLOOR)?;
    Ok(grad_log_u_sup_unchecked(rho)?)
}

fn grad_log_u_sup_unchecked(rho: &TwoForm) -> Result<f64> {
    let u = crate::forms::volume_potential(rho);
    let du = crate::grid::gradient(&u)?;
    let mut best = 0.0f64;
    for p in 0..u.len() {
        let g2: f64 = du.iter().map(|d| d.values()[p].powi(2)).sum();
        best = best.max(g2.sqrt() / u.values()[p]);
    }
    Ok(best)
}

/// J, K and the union mask where either |ρ⁺| or |ρ⁻| is at most `mask_eps`.
/// J is set wherever |ρ⁺| > eps and K wherever |ρ⁻| > eps; unset values are 0.
#[derive(Clone, Debug)]
pub struct JkFields {
    pub j: ScalarField,
    pub k: ScalarField,
    pub mask: Vec<bool>,
}

/// ∇|ρ±| is taken by the chain rule ⟨ρ±, ∂ρ±⟩/|ρ±| so that Kato's
/// inequality holds pointwise on the grid.
pub fn jk_quantities(rho: &TwoForm, mask_eps: f64) -> Result<JkFields> {
    let grad = form_gradient(rho)?;
    Ok(jk_from_gradient(rho, &grad, mask_eps))
}

fn jk_from_gradient(rho: &TwoForm, grad: &[Vec<ScalarField>], mask_eps: f64) -> JkFields {
    let n = rho.len();
    let mut j = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut mask = vec![false; n];
    for p in 0..n {
        let r = rho.at(p);
        let sr = star_p(&r);
        let rp: P6 = std::array::from_fn(|c| 0.5 * (r[c] + sr[c]));
        let rm: P6 = std::array::from_fn(|c| 0.5 * (r[c] - sr[c]));
        let (np, nm) = (norm_sq_p(&rp).sqrt(), norm_sq_p(&rm).sqrt());
        let (mut gp, mut gm, mut kp, mut km) = (0.0, 0.0, 0.0, 0.0);
        for g in grad.iter().take(4) {
            let d: P6 = std::array::from_fn(|c| g[c].values()[p]);
            let sd = star_p(&d);
            let dp: P6 = std::array::from_fn(|c| 0.5 * (d[c] + sd[c]));
            let dm: P6 = std::array::from_fn(|c| 0.5 * (d[c] - sd[c]));
            gp += norm_sq_p(&dp);
            gm += norm_sq_p(&dm);
            if np > 0.0 {
                kp += (dp.iter().zip(&rp).map(|(a, b)| a * b).sum::<f64>() / np).powi(2);
            }
            if nm > 0.0 {
                km += (dm.iter().zip(&rm).map(|(a, b)| a * b).sum::<f64>() / nm).powi(2);
            }
        }
        if np > mask_eps {
            j[p] = (gp - kp) / (SQRT2 * np);
        }
        if nm > mask_eps {
            k[p] = (gm - km) / (SQRT2 * nm);
        }
        mask[p] = np <= mask_eps || nm <= mask_eps;
    }
    let g = rho.grid();
    JkFields { j: ScalarField::new_unchecked(g, j), k: ScalarField::new_unchecked(g, k), mask }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    NormSq,
    Volume,
    Lambda1,
    Lambda2,
}

impl Quantity {
    pub fn all() -> [Quantity; 4] {
        [Quantity::NormSq, Quantity::Volume, Quantity::Lambda1, Quantity::Lambda2]
    }
    fn masked(&self) -> bool {
        matches!(self, Quantity::Lambda1 | Quantity::Lambda2)
    }
}

/// Which closed form the residual compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormulaSource {
    /// The display specific to the scheme's family (linear, scalar factor,
    /// a/u, a/u², b/u, b/u²); schemes without one fall back to `General`.
    Catalogue,
    /// The identities valid for any weight h.
    General,
}

#[derive(Clone, Copy, Debug)]
pub struct ResidualOptions {
    /// Default 1e-3·max|ρ|.
    pub mask_eps: Option<f64>,
    pub source: FormulaSource,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { mask_eps: None, source: FormulaSource::Catalogue }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResidualReport {
    /// max |LHS − RHS| over evaluated points.
    pub abs: f64,
    /// max |LHS| over evaluated points.
    pub scale: f64,
    pub relative: f64,
    pub points: usize,
}

type MatField = Vec<Mat4>;

/// Shared fields for residual evaluation.
struct Ctx {
    g: PeriodicGrid,
    n: usize,
    scheme: FlowScheme,
    pts: Vec<P6>,
    s: [Vec<f64>; 4],
    f: TwoForm,
    lap: [Vec<f64>; 6],
    grad: Vec<Vec<ScalarField>>,
    u: Vec<f64>,
    nr2: Vec<f64>,
    np: Vec<f64>,
    nm: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
    jk: JkFields,
}

fn lap_vec(g: &PeriodicGrid, v: &[f64]) -> Vec<f64> {
    let mut s = g.forward(v);
    g.apply_laplacian(&mut s);
    g.inverse(s)
}

fn grad_vec(g: &PeriodicGrid, v: &[f64]) -> [Vec<f64>; 4] {
    let s = g.forward(v);
    let specs = (0..4).map(|a| g.partial_spec(&s, a)).collect();
    g.inverse_many(specs).try_into().unwrap()
}

impl Ctx {
    fn new(rho: &TwoForm, scheme: FlowScheme, mask_eps: f64) -> Result<Self> {
        let g = rho.grid().clone();
        let n = rho.len();
        let (sd, f) = flow_rhs_parts(rho, scheme, if scheme.is_linear() { f64::NEG_INFINITY } else { 0.0 })?;
        let s: [Vec<f64>; 4] = std::array::from_fn(|k| sd.c[k].values().to_vec());
        let mut specs = spectra_of(&rho.c);
        for sp in &mut specs {
            g.apply_laplacian(sp);
        }
        let lap: [Vec<f64>; 6] = g.inverse_many(specs).try_into().unwrap();
        let grad = form_gradient(rho)?;
        let pts: Vec<P6> = (0..n).map(|p| rho.at(p)).collect();
        let u = pts.iter().map(u_p).collect();
        let nr2 = pts.iter().map(norm_sq_p).collect();
        let (np, nm): (Vec<f64>, Vec<f64>) = pts.iter().map(sd_norms_p).unzip();
        let (l1, l2): (Vec<f64>, Vec<f64>) = pts.iter().map(lambdas_p).unzip();
        let jk = jk_from_gradient(rho, &grad, mask_eps);
        Ok(Self { g, n, scheme, pts, s, f, lap, grad, u, nr2, np, nm, l1, l2, jk })
    }

    fn mat_field(&self, t: impl Fn(usize) -> Mat4) -> MatField {
        (0..self.n).map(t).collect()
    }

    fn lap_full(&self, p: usize) -> Mat4 {
        full(&std::array::from_fn(|c| self.lap[c][p]))
    }

    /// Σ_kj T_kj Δρ_kj
    fn contract_lap(&self, t: &MatField) -> Vec<f64> {
        (0..self.n)
            .map(|p| {
                let l = self.lap_full(p);
                let m = &t[p];
                (0..4).map(|k| (0..4).map(|j| m[k][j] * l[k][j]).sum::<f64>()).sum()
            })
            .collect()
    }

    /// Σ_kj ∂_j(T_kj) s_k
    fn div_s(&self, t: &MatField) -> Vec<f64> {
        let g = &self.g;
        let mut out = vec![0.0; self.n];
        for k in 0..4 {
            let rows: Vec<Vec<f64>> = (0..4).map(|j| t.iter().map(|m| m[k][j]).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
            let specs = g.forward_many(&refs);
            let mut acc = vec![Default::default(); self.n];
            for (j, sp) in specs.iter().enumerate() {
                let d = g.partial_spec(sp, j);
                for (a, v) in acc.iter_mut().zip(&d) {
                    *a += v;
                }
            }
            let div = g.inverse(acc);
            for p in 0..self.n {
                out[p] += div[p] * self.s[k][p];
            }
        }
        out
    }

    fn quad(&self, m: &Mat4, p: usize) -> f64 {
        (0..4).map(|i| (0..4).map(|k| m[i][k] * self.s[i][p] * self.s[k][p]).sum::<f64>()).sum()
    }

    fn weight(&self, p: usize) -> Mat4 {
        self.scheme.weight_at(&self.pts[p])
    }

    fn hss(&self) -> Vec<f64> {
        (0..self.n).map(|p| self.quad(&self.weight(p), p)).collect()
    }

    fn ss(&self) -> Vec<f64> {
        (0..self.n).map(|p| (0..4).map(|k| self.s[k][p].powi(2)).sum()).collect()
    }

    fn bss(&self) -> Vec<f64> {
        (0..self.n).map(|p| self.quad(&b_p(&self.pts[p]), p)).collect()
    }

    /// (Σ_ijk ρ_ij h_ik,j s_k, Σ_ijk (*ρ)_ij h_ik,j s_k)
    fn rho_dh_s(&self) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.n];
        let mut b = vec![0.0; self.n];
        for i in 0..4 {
            for k in i..4 {
                let h: Vec<f64> = (0..self.n).map(|p| self.weight(p)[i][k]).collect();
                let dh = grad_vec(&self.g, &h);
                for p in 0..self.n {
                    let r = full(&self.pts[p]);
                    let sr = full(&star_p(&self.pts[p]));
                    // entry (i,k) and, off the diagonal, its mirror (k,i)
                    let mut add = |x: usize, y: usize| {
                        let (mut ta, mut tb) = (0.0, 0.0);
                        for j in 0..4 {
                            ta += r[x][j] * dh[j][p];
                            tb += sr[x][j] * dh[j][p];
                        }
                        a[p] += ta * self.s[y][p];
                        b[p] += tb * self.s[y][p];
                    };
                    add(i, k);
                    if i != k {
                        add(k, i);
                    }
                }
            }
        }
        (a, b)
    }

    /// Σ_kj X_kj c_j s_k for a vector field c and X ∈ {ρ, *ρ}.
    fn x_c_s(&self, c: &[Vec<f64>; 4], star: bool) -> Vec<f64> {
        (0..self.n)
            .map(|p| {
                let x = if star { full(&star_p(&self.pts[p])) } else { full(&self.pts[p]) };
                let mut acc = 0.0;
                for k in 0..4 {
                    for j in 0..4 {
                        acc += x[k][j] * c[j][p] * self.s[k][p];
                    }
                }
                acc
            })
            .collect()
    }

    /// Σ_m Σ_{i<j} ∂_m X_ij ∂_m Y_ij for X, Y ∈ {ρ, *ρ, ρ⁺, ρ⁻}
    fn grad_pair(&self, x: impl Fn(&P6) -> P6, y: impl Fn(&P6) -> P6) -> Vec<f64> {
        (0..self.n)
            .map(|p| {
                let mut acc = 0.0;
                for m in 0..4 {
                    let d: P6 = std::array::from_fn(|c| self.grad[m][c].values()[p]);
                    let (a, b) = (x(&d), y(&d));
                    acc += a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>();
                }
                acc
            })
            .collect()
    }

    fn lhs(&self, q: Quantity) -> Vec<f64> {
        (0..self.n)
            .map(|p| {
                let r = &self.pts[p];
                let f: P6 = self.f.at(p);
                let sr = star_p(r);
                match q {
                    Quantity::NormSq => 2.0 * r.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>(),
                    Quantity::Volume => sr.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>(),
                    Quantity::Lambda1 | Quantity::Lambda2 => {
                        let (dp, dm) = self.sd_rates(r, &f, p);
                        let sign = if q == Quantity::Lambda1 { 1.0 } else { -1.0 };
                        (dp + sign * dm) / SQRT2
                    }
                }
            })
            .collect()
    }

    /// (∂ₜ|ρ⁺|, ∂ₜ|ρ⁻|)
    fn sd_rates(&self, r: &P6, f: &P6, p: usize) -> (f64, f64) {
        let sr = star_p(r);
        let mut dp = 0.0;
        let mut dm = 0.0;
        for c in 0..6 {
            dp += 0.5 * (r[c] + sr[c]) * f[c];
            dm += 0.5 * (r[c] - sr[c]) * f[c];
        }
        (dp / self.np[p], dm / self.nm[p])
    }
}

fn plus(p: &P6) -> P6 {
    let s = star_p(p);
    std::array::from_fn(|c| 0.5 * (p[c] + s[c]))
}
fn minus(p: &P6) -> P6 {
    let s = star_p(p);
    std::array::from_fn(|c| 0.5 * (p[c] - s[c]))
}
fn ident(p: &P6) -> P6 {
    *p
}

fn mat_lin(a: f64, x: &Mat4, b: f64, y: &Mat4) -> Mat4 {
    std::array::from_fn(|i| std::array::from_fn(|j| a * x[i][j] + b * y[i][j]))
}

fn scalar_family(s: FlowScheme) -> bool {
    matches!(s, FlowScheme::PowerU(_) | FlowScheme::NormRatio)
}

/// Right-hand sides of the identities for any h:
/// ∂ₜ|ρ|² = ρ_ij h_ik Δρ_kj + 2ρ_ij h_ik,j s_k and
/// ∂ₜu = ½(*ρ)_ij h_ik Δρ_kj + (*ρ)_ij h_ik,j s_k, plus λ via
/// ∂ₜ(|ρ|² ± 2u) = (Tρ ± T*)_kj Δρ_kj + 2∂_j(Tρ ± T*)_kj s_k − 2h_ik s_i s_k.
fn general_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    let tr = c.mat_field(|p| {
        let r = full(&c.pts[p]);
        let h = c.weight(p);
        std::array::from_fn(|k| std::array::from_fn(|j| (0..4).map(|i| r[i][j] * h[i][k]).sum()))
    });
    let ts = c.mat_field(|p| {
        let r = full(&star_p(&c.pts[p]));
        let h = c.weight(p);
        std::array::from_fn(|k| std::array::from_fn(|j| (0..4).map(|i| r[i][j] * h[i][k]).sum()))
    });
    match q {
        Quantity::NormSq => {
            let (a, _) = c.rho_dh_s();
            let l = c.contract_lap(&tr);
            (0..c.n).map(|p| l[p] + 2.0 * a[p]).collect()
        }
        Quantity::Volume => {
            let (_, b) = c.rho_dh_s();
            let l = c.contract_lap(&ts);
            (0..c.n).map(|p| 0.5 * l[p] + b[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let tp: MatField = (0..c.n).map(|p| mat_lin(1.0, &tr[p], 1.0, &ts[p])).collect();
            let tm: MatField = (0..c.n).map(|p| mat_lin(1.0, &tr[p], -1.0, &ts[p])).collect();
            let hss = c.hss();
            let (lp, dp) = (c.contract_lap(&tp), c.div_s(&tp));
            let (lm, dm) = (c.contract_lap(&tm), c.div_s(&tm));
            let sign = if q == Quantity::Lambda1 { 1.0 } else { -1.0 };
            (0..c.n)
                .map(|p| {
                    let ep = lp[p] + 2.0 * dp[p] - 2.0 * hss[p];
                    let em = lm[p] + 2.0 * dm[p] - 2.0 * hss[p];
                    let sp = (c.nr2[p] + 2.0 * c.u[p]).max(0.0).sqrt();
                    let sm = (c.nr2[p] - 2.0 * c.u[p]).max(0.0).sqrt();
                    ep / (4.0 * sp) + sign * em / (4.0 * sm)
                })
                .collect()
        }
    }
}

fn linear_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match q {
        Quantity::NormSq => {
            let l = lap_vec(&c.g, &c.nr2);
            let g2 = c.grad_pair(ident, ident);
            (0..c.n).map(|p| l[p] - 2.0 * g2[p]).collect()
        }
        Quantity::Volume => {
            let l = lap_vec(&c.g, &c.u);
            let gs = c.grad_pair(ident, star_p);
            (0..c.n).map(|p| l[p] - gs[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let (j, k) = (c.jk.j.values(), c.jk.k.values());
            if q == Quantity::Lambda1 {
                let l = lap_vec(&c.g, &c.l1);
                (0..c.n).map(|p| l[p] - j[p] - k[p]).collect()
            } else {
                let l = lap_vec(&c.g, &c.l2);
                (0..c.n).map(|p| l[p] - j[p] + k[p]).collect()
            }
        }
    }
}

/// h = f·δ.
fn scalar_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    let f: Vec<f64> = (0..c.n).map(|p| c.weight(p)[0][0]).collect();
    let df = grad_vec(&c.g, &f);
    // f_i X_ij s_j = −Σ_kj X_kj f_j s_k by antisymmetry
    let first = |star: bool| -> Vec<f64> { c.x_c_s(&df, star).iter().map(|v| -v).collect() };
    match q {
        Quantity::NormSq => {
            let l = lap_vec(&c.g, &c.nr2);
            let g2 = c.grad_pair(ident, ident);
            let t = first(false);
            (0..c.n).map(|p| f[p] * (l[p] - 2.0 * g2[p]) - 2.0 * t[p]).collect()
        }
        Quantity::Volume => {
            let l = lap_vec(&c.g, &c.u);
            let gp = c.grad_pair(plus, plus);
            let gm = c.grad_pair(minus, minus);
            let t = first(true);
            (0..c.n).map(|p| f[p] * (l[p] - gp[p] + gm[p]) - t[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let np2: Vec<f64> = c.np.iter().map(|v| v * v).collect();
            let nm2: Vec<f64> = c.nm.iter().map(|v| v * v).collect();
            let (lp, lm) = (lap_vec(&c.g, &np2), lap_vec(&c.g, &nm2));
            let (gp, gm) = (c.grad_pair(plus, plus), c.grad_pair(minus, minus));
            // f_i ρ±_ij s_j = ½(f_i ρ_ij s_j ± f_i (*ρ)_ij s_j)
            let (tr, ts) = (first(false), first(true));
            let sign = if q == Quantity::Lambda1 { 1.0 } else { -1.0 };
            (0..c.n)
                .map(|p| {
                    let e3 = f[p] * (lp[p] - 2.0 * gp[p]) - (tr[p] + ts[p]);
                    let e4 = f[p] * (lm[p] - 2.0 * gm[p]) - (tr[p] - ts[p]);
                    (e3 / (2.0 * c.np[p]) + sign * e4 / (2.0 * c.nm[p])) / SQRT2
                })
                .collect()
        }
    }
}

/// h = a/u.
fn a1_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match q {
        Quantity::NormSq => {
            let t = c.mat_field(|p| {
                let r = full(&c.pts[p]);
                let s = full(&star_p(&c.pts[p]));
                mat_lin(c.nr2[p] / c.u[p], &r, -1.0, &s)
            });
            let l = c.contract_lap(&t);
            let (a, _) = c.rho_dh_s();
            (0..c.n).map(|p| l[p] + 2.0 * a[p]).collect()
        }
        Quantity::Volume => {
            let t = c.mat_field(|p| full(&c.pts[p]));
            let l = c.contract_lap(&t);
            let (_, b) = c.rho_dh_s();
            (0..c.n).map(|p| 0.5 * l[p] + b[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let ratio: Vec<f64> = (0..c.n).map(|p| c.nr2[p] / c.u[p]).collect();
            let rs = c.x_c_s(&grad_vec(&c.g, &ratio), false);
            let (ss, bss) = (c.ss(), c.bss());
            let (j, k) = (c.jk.j.values(), c.jk.k.values());
            if q == Quantity::Lambda1 {
                let l = lap_vec(&c.g, &c.l1);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q1 = (l1 * bss[p] - u * l2 * ss[p]) / (u * d);
                        l1 / l2 * (l[p] - j[p] - k[p]) + q1 + l1 * rs[p] / d
                    })
                    .collect()
            } else {
                let l = lap_vec(&c.g, &c.l2);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q2 = (l1 * u * ss[p] - l2 * bss[p]) / (u * d);
                        l2 / l1 * (l[p] + k[p] - j[p]) + q2 - l2 * rs[p] / d
                    })
                    .collect()
            }
        }
    }
}

/// h = a/u².
fn a2_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match q {
        Quantity::NormSq => {
            let t = c.mat_field(|p| {
                let (u, n2) = (c.u[p], c.nr2[p]);
                mat_lin(n2 / (u * u), &full(&c.pts[p]), -1.0 / u, &full(&star_p(&c.pts[p])))
            });
            let (l, d, hss) = (c.contract_lap(&t), c.div_s(&t), c.hss());
            (0..c.n).map(|p| l[p] + 2.0 * d[p] - 2.0 * hss[p]).collect()
        }
        Quantity::Volume => {
            let t = c.mat_field(|p| mat_lin(1.0 / c.u[p], &full(&c.pts[p]), 0.0, &[[0.0; 4]; 4]));
            let (l, d) = (c.contract_lap(&t), c.div_s(&t));
            (0..c.n).map(|p| 0.5 * l[p] + d[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let (ss, bss) = (c.ss(), c.bss());
            let (j, k) = (c.jk.j.values(), c.jk.k.values());
            let dl1 = grad_vec(&c.g, &c.l1);
            let dl2 = grad_vec(&c.g, &c.l2);
            // Σ_kj λ_,j s_k X_kj for X = ρ, *ρ
            let (l1r, l1s) = (c.x_c_s(&dl1, false), c.x_c_s(&dl1, true));
            let (l2r, l2s) = (c.x_c_s(&dl2, false), c.x_c_s(&dl2, true));
            if q == Quantity::Lambda1 {
                let l = lap_vec(&c.g, &c.l1);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q1 = (l1 * bss[p] - u * l2 * ss[p]) / (u * u * d);
                        let p1 = (l1s[p] / l2 - l1r[p] / l1) / (l1 * d)
                            + (l2s[p] / l2 + l2r[p] / l1 - 2.0 * l1 / (l2 * l2) * l2r[p]) / (l2 * d);
                        (l[p] - j[p] - k[p]) / (l2 * l2) + q1 + p1
                    })
                    .collect()
            } else {
                let l = lap_vec(&c.g, &c.l2);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q2 = (l1 * u * ss[p] - l2 * bss[p]) / (u * u * d);
                        let p2 = ((2.0 * l2 / (l1 * l1) - 1.0 / l2) * l1r[p] - l1s[p] / l1) / (l1 * d)
                            + (l2r[p] / l2 - l2s[p] / l1) / (l2 * d);
                        (l[p] + k[p] - j[p]) / (l1 * l1) + q2 + p2
                    })
                    .collect()
            }
        }
    }
}

/// h = b/u.
fn b1_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match q {
        Quantity::NormSq => {
            let t = c.mat_field(|p| full(&star_p(&c.pts[p])));
            let (l, bss) = (c.contract_lap(&t), c.bss());
            (0..c.n).map(|p| l[p] - 2.0 * bss[p] / c.u[p]).collect()
        }
        Quantity::Volume => {
            let t = c.mat_field(|p| {
                let (u, n2) = (c.u[p], c.nr2[p]);
                mat_lin(n2 / u, &full(&star_p(&c.pts[p])), -1.0, &full(&c.pts[p]))
            });
            let (l, d) = (c.contract_lap(&t), c.div_s(&t));
            (0..c.n).map(|p| 0.5 * l[p] + d[p]).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let ratio: Vec<f64> = (0..c.n).map(|p| c.nr2[p] / c.u[p]).collect();
            let sr = c.x_c_s(&grad_vec(&c.g, &ratio), true);
            let (ss, bss) = (c.ss(), c.bss());
            let (j, k) = (c.jk.j.values(), c.jk.k.values());
            if q == Quantity::Lambda1 {
                let l = lap_vec(&c.g, &c.l1);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q1 = (l1 * bss[p] - u * l2 * ss[p]) / (u * d);
                        l2 / l1 * (l[p] - j[p] - k[p]) - q1 - l2 * sr[p] / d
                    })
                    .collect()
            } else {
                let l = lap_vec(&c.g, &c.l2);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2, u) = (c.l1[p], c.l2[p], c.u[p]);
                        let d = l1 * l1 - l2 * l2;
                        let q2 = (l2 * bss[p] - u * l1 * ss[p]) / (u * d);
                        l1 / l2 * (l[p] + k[p] - j[p]) + q2 + l1 * sr[p] / d
                    })
                    .collect()
            }
        }
    }
}

/// h = b/u².
fn b2_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match q {
        Quantity::NormSq => {
            let t = c.mat_field(|p| mat_lin(1.0 / c.u[p], &full(&star_p(&c.pts[p])), 0.0, &[[0.0; 4]; 4]));
            let (l, d, hss) = (c.contract_lap(&t), c.div_s(&t), c.hss());
            (0..c.n).map(|p| l[p] + 2.0 * d[p] - 2.0 * hss[p]).collect()
        }
        Quantity::Volume => {
            let t = c.mat_field(|p| {
                let (u, n2) = (c.u[p], c.nr2[p]);
                mat_lin(n2 / (u * u), &full(&star_p(&c.pts[p])), -1.0 / u, &full(&c.pts[p]))
            });
            let (l, d) = (c.contract_lap(&t), c.div_s(&t));
            (0..c.n).map(|p| 0.5 * (l[p] + 2.0 * d[p])).collect()
        }
        Quantity::Lambda1 | Quantity::Lambda2 => {
            let (ss, hss) = (c.ss(), c.hss());
            let (j, k) = (c.jk.j.values(), c.jk.k.values());
            let dl1 = grad_vec(&c.g, &c.l1);
            let dl2 = grad_vec(&c.g, &c.l2);
            let (l1r, l1s) = (c.x_c_s(&dl1, false), c.x_c_s(&dl1, true));
            let (l2r, l2s) = (c.x_c_s(&dl2, false), c.x_c_s(&dl2, true));
            if q == Quantity::Lambda1 {
                let l = lap_vec(&c.g, &c.l1);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2) = (c.l1[p], c.l2[p]);
                        let d = l1 * l1 - l2 * l2;
                        (l[p] - j[p] - k[p]) / (l1 * l1) - l1 * hss[p] / d
                            + ss[p] / (l1 * d)
                            + ((2.0 * l2 / (l1 * l1) - 1.0 / l2) * l1s[p] - l1r[p] / l1) / (l1 * d)
                            + (l2s[p] / l2 - l2r[p] / l1) / (l2 * d)
                    })
                    .collect()
            } else {
                let l = lap_vec(&c.g, &c.l2);
                (0..c.n)
                    .map(|p| {
                        let (l1, l2) = (c.l1[p], c.l2[p]);
                        let d = l1 * l1 - l2 * l2;
                        (l[p] + k[p] - j[p]) / (l2 * l2) + l2 * hss[p] / d - ss[p] / (l2 * d)
                            + (l2r[p] / l2 + l2s[p] / l1 - 2.0 * l1 * l2s[p] / (l2 * l2)) / (l2 * d)
                            + (l1r[p] / l2 - l1s[p] / l1) / (l1 * d)
                    })
                    .collect()
            }
        }
    }
}

fn catalogue_rhs(c: &Ctx, q: Quantity) -> Vec<f64> {
    match c.scheme {
        FlowScheme::Linear => linear_rhs(c, q),
        s if scalar_family(s) => scalar_rhs(c, q),
        FlowScheme::MatrixA1 => a1_rhs(c, q),
        FlowScheme::MatrixA2 => a2_rhs(c, q),
        FlowScheme::MatrixB1 => b1_rhs(c, q),
        FlowScheme::MatrixB2 => b2_rhs(c, q),
        _ => general_rhs(c, q),
    }
}

pub fn default_mask_eps(rho: &TwoForm) -> f64 {
    1e-3 * rho.max_abs()
}

/// Residual of one evolution identity, using the scheme's own display.
pub fn evolution_residual(rho: &TwoForm, scheme: FlowScheme, quantity: Quantity) -> Result<ResidualReport> {
    evolution_residual_with(rho, scheme, quantity, &ResidualOptions::default())
}

pub fn evolution_residual_with(
    rho: &TwoForm,
    scheme: FlowScheme,
    quantity: Quantity,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    Ok(evolution_residuals(rho, scheme, &[quantity], opts)?[0])
}

/// Several quantities sharing one evaluation context.
pub fn evolution_residuals(
    rho: &TwoForm,
    scheme: FlowScheme,
    quantities: &[Quantity],
    opts: &ResidualOptions,
) -> Result<Vec<ResidualReport>> {
    check_nondegenerate(rho, DEFAULT_U_FLOOR)?;
    let eps = opts.mask_eps.unwrap_or_else(|| default_mask_eps(rho));
    let ctx = Ctx::new(rho, scheme, eps)?;
    let mut out = Vec::new();
    for &q in quantities {
        let lhs = ctx.lhs(q);
        let rhs = match opts.source {
            FormulaSource::Catalogue => catalogue_rhs(&ctx, q),
            FormulaSource::General => general_rhs(&ctx, q),
        };
        let (mut abs, mut scale, mut points) = (0.0f64, 0.0f64, 0usize);
        for p in 0..ctx.n {
            // λ₁ − λ₂ = √2|ρ⁻|, so the union mask covers both caveats
            if q.masked() && (ctx.jk.mask[p] || ctx.l1[p] - ctx.l2[p] <= eps) {
                continue;
            }
            points += 1;
            abs = abs.max((lhs[p] - rhs[p]).abs());
            scale = scale.max(lhs[p].abs());
        }
        if !abs.is_finite() {
            return Err(Error::NumericalBlowup("evolution_residual".into()));
        }
        let relative = if abs == 0.0 { 0.0 } else { abs / scale.max(f64::MIN_POSITIVE) };
        out.push(ResidualReport { abs, scale, relative, points });
    }
    Ok(out)
}

/// E₀(ρ)/∫|d*ρ|²
pub fn poincare_ratio(rho: &TwoForm) -> Result<f64> {
    check_omega_class(rho)?;
    let den = codiff_energy(rho)?;
    if den < 1e-14 {
        return Err(Error::BadSeries(format!("∫|d*ρ|² = {den:e} is below 1e-14")));
    }
    Ok(omega_distance_sq(rho) / den)
}

/// ∫|ρ−ω|² / (∫|d*ρ|^{4/3})^{3/2}
pub fn sobolev_poincare_ratio(rho: &TwoForm) -> Result<f64> {
    check_omega_class(rho)?;
    let s = codiff_two(rho)?;
    let den2: f64 = s.c.iter().map(|f| f.dot(f)).sum();
    if den2 < 1e-14 {
        return Err(Error::BadSeries(format!("∫|d*ρ|² = {den2:e} is below 1e-14")));
    }
    let q = integrate(&s.norm().map(|v| v.powf(4.0 / 3.0)));
    Ok(omega_distance_sq(rho) / q.powf(1.5))
}

/// Empirical c₂: the largest Sobolev–Poincaré ratio over the probes.
pub fn sobolev_poincare_constant(probes: &[TwoForm]) -> Result<f64> {
    let mut best = 0.0f64;
    for p in probes {
        best = best.max(sobolev_poincare_ratio(p)?);
    }
    Ok(best)
}

/// ∫|d*ρ|²/√u, the conformal dissipation rate of E₀.
pub fn conformal_dissipation(rho: &TwoForm) -> Result<f64> {
    check_nondegenerate(rho, DEFAULT_U_FLOOR)?;
    let s = codiff_two(rho)?;
    let u = crate::forms::volume_potential(rho);
    let mut acc = ScalarField::zeros(rho.grid());
    for f in &s.c {
        acc.axpy(1.0, &f.mul(f));
    }
    Ok(integrate(&acc.zip_map(&u, |a, b| a / b.sqrt())))
}

#[derive(Clone, Copy, Debug)]
pub struct MonitorConfig {
    pub a1: f64,
    pub shi_a: f64,
    pub shi_b: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { a1: 10.0, shi_a: 10.0, shi_b: 100.0 }
    }
}

/// One row of series.csv.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub dt: f64,
    pub e: f64,
    pub e0: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub mean_u: f64,
    pub min_lambda2: f64,
    pub max_lambda1: f64,
    pub sup_grad_log_u: f64,
    pub q1: f64,
    pub f_max: f64,
    pub d_rho_residual: f64,
    pub period_drift: f64,
}

impl TrajectoryRecord {
    pub const HEADER: [&'static str; 14] = [
        "t", "dt", "E", "E0", "minU", "maxU", "meanU", "minLambda2", "maxLambda1", "supGradLogU", "Q1", "fMax",
        "dRhoResidual", "periodDrift",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.dt,
            self.e,
            self.e0,
            self.min_u,
            self.max_u,
            self.mean_u,
            self.min_lambda2,
            self.max_lambda1,
            self.sup_grad_log_u,
            self.q1,
            self.f_max,
            self.d_rho_residual,
            self.period_drift,
        ]
    }
}

/// Diagnostics of one state. E0 and Q1 use the harmonic part of ρ's own
/// class; they coincide with the [ω] definitions when ρ ∈ [ω].
pub fn trajectory_record(
    rho: &TwoForm,
    t: f64,
    dt: f64,
    reference_periods: &[f64; 6],
    monitor: &MonitorConfig,
) -> Result<TrajectoryRecord> {
    let u = crate::forms::volume_potential(rho);
    let (l1, l2) = crate::forms::eigenvalues(rho);
    let e0 = excess_energy(rho);
    let q1 = codiff_energy(rho)? + monitor.a1 * e0;
    let f_max = shi_monitor(rho, monitor.shi_a, monitor.shi_b)?.max();
    let sup_grad_log_u = if u.min() > 0.0 { grad_log_u_sup_unchecked(rho)? } else { f64::NAN };
    let p = periods(rho);
    let pscale = reference_periods.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let drift = (0..6).map(|k| (p[k] - reference_periods[k]).abs()).fold(0.0, f64::max);
    Ok(TrajectoryRecord {
        t,
        dt,
        e: energy(rho),
        e0,
        min_u: u.min(),
        max_u: u.max(),
        mean_u: u.mean(),
        min_lambda2: l2.min(),
        max_lambda1: l1.max(),
        sup_grad_log_u,
        q1,
        f_max,
        d_rho_residual: d_two(rho)?.max_abs(),
        period_drift: if pscale > 0.0 { drift / pscale } else { drift },
    })
}
