//! Dimension-reduced models on T² and S¹ and the maps that embed them into
//! (or extract them from) the full four-dimensional flow.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::rk4;
use crate::forms::{TwoForm, DEFAULT_U_FLOOR};
use crate::grid::{PeriodicGrid, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedModel {
    /// ∂ₜu = 2Δ√u
    FastDiffusion,
    /// ∂ₜa = Δa/√u, ∂ₜb = Δb/√u with u = 1 − a₁b₂ + a₂b₁
    AbSystem,
    /// ∂ₜv = Δ(−1/v)
    InverseDiffusion,
    /// ∂ₜv = Δ log v
    LogDiffusion,
    Heat,
}

impl ReducedModel {
    pub fn field_count(&self) -> usize {
        if *self == ReducedModel::AbSystem {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReducedState {
    pub fields: Vec<ScalarField>,
    pub t: f64,
    pub model: ReducedModel,
}

impl ReducedState {
    pub fn new(model: ReducedModel, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() != model.field_count() {
            return Err(Error::Precondition(format!(
                "{model:?} takes {} field(s), got {}",
                model.field_count(),
                fields.len()
            )));
        }
        let g = fields[0].grid().clone();
        if !matches!(g.rank(), 1 | 2) || fields.iter().any(|f| f.grid() != &g) {
            return Err(Error::InvalidGrid("reduced fields live on one rank-1 or rank-2 grid".into()));
        }
        Ok(Self { fields, t: 0.0, model })
    }
}

fn laplacian_vec(g: &PeriodicGrid, v: &[f64]) -> Vec<f64> {
    let mut s = g.forward(v);
    g.apply_laplacian(&mut s);
    g.inverse(s)
}

fn positive(v: &ScalarField, floor: f64) -> Result<()> {
    v.check_finite("reduced field")?;
    let m = v.min();
    if m <= floor {
        return Err(Error::DegenerateForm { min_u: m, floor });
    }
    Ok(())
}

/// Δ(φ(v)) after checking min v > floor.
fn diffuse(v: &ScalarField, floor: f64, phi: impl Fn(f64) -> f64) -> Result<ScalarField> {
    positive(v, floor)?;
    let w: Vec<f64> = v.values().iter().map(|&x| phi(x)).collect();
    Ok(ScalarField::new_unchecked(v.grid(), laplacian_vec(v.grid(), &w)))
}

pub fn fast_diffusion_rhs(u: &ScalarField) -> Result<ScalarField> {
    diffuse(u, DEFAULT_U_FLOOR, |x| 2.0 * x.sqrt())
}

pub fn inverse_diffusion_rhs(v: &ScalarField) -> Result<ScalarField> {
    diffuse(v, DEFAULT_U_FLOOR, |x| -1.0 / x)
}

pub fn log_diffusion_rhs(v: &ScalarField) -> Result<ScalarField> {
    diffuse(v, DEFAULT_U_FLOOR, f64::ln)
}

pub fn heat_rhs(field: &ScalarField) -> ScalarField {
    ScalarField::new_unchecked(field.grid(), laplacian_vec(field.grid(), field.values()))
}

/// u = 1 − a₁b₂ + a₂b₁ on a rank-2 grid.
pub fn ab_volume(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    let g = a.grid();
    if g.rank() != 2 || b.grid() != g {
        return Err(Error::InvalidGrid("(a, b) live on one rank-2 grid".into()));
    }
    let sa = g.forward_many(&[a.values(), b.values()]);
    let specs = vec![g.partial_spec(&sa[0], 0), g.partial_spec(&sa[0], 1), g.partial_spec(&sa[1], 0), g.partial_spec(&sa[1], 1)];
    let d = g.inverse_many(specs);
    let u = (0..a.len()).map(|p| 1.0 - d[0][p] * d[3][p] + d[1][p] * d[2][p]).collect();
    Ok(ScalarField::new_unchecked(g, u))
}

pub fn ab_system_rhs(a: &ScalarField, b: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    ab_system_rhs_with_floor(a, b, DEFAULT_U_FLOOR)
}

fn ab_system_rhs_with_floor(a: &ScalarField, b: &ScalarField, floor: f64) -> Result<(ScalarField, ScalarField)> {
    let u = ab_volume(a, b)?;
    positive(&u, floor)?;
    let g = a.grid();
    let mut s = g.forward_many(&[a.values(), b.values()]);
    for x in &mut s {
        g.apply_laplacian(x);
    }
    let l = g.inverse_many(s);
    let scale = |v: &[f64]| {
        let out = v.iter().zip(u.values()).map(|(x, w)| x / w.sqrt()).collect();
        ScalarField::new_unchecked(g, out)
    };
    Ok((scale(&l[0]), scale(&l[1])))
}

fn rhs(model: ReducedModel, y: &[ScalarField], floor: f64) -> Result<Vec<ScalarField>> {
    Ok(match model {
        ReducedModel::FastDiffusion => vec![diffuse(&y[0], floor, |x| 2.0 * x.sqrt())?],
        ReducedModel::InverseDiffusion => vec![diffuse(&y[0], floor, |x| -1.0 / x)?],
        ReducedModel::LogDiffusion => vec![diffuse(&y[0], floor, f64::ln)?],
        ReducedModel::Heat => {
            y[0].check_finite("heat field")?;
            vec![heat_rhs(&y[0])]
        }
        ReducedModel::AbSystem => {
            let (a, b) = ab_system_rhs_with_floor(&y[0], &y[1], floor)?;
            vec![a, b]
        }
    })
}

/// Largest linearized diffusion coefficient, for the CFL bound.
fn diffusivity(model: ReducedModel, y: &[ScalarField]) -> Result<f64> {
    Ok(match model {
        ReducedModel::Heat => 1.0,
        ReducedModel::FastDiffusion => 1.0 / y[0].min().sqrt(),
        ReducedModel::InverseDiffusion => 1.0 / y[0].min().powi(2),
        ReducedModel::LogDiffusion => 1.0 / y[0].min(),
        ReducedModel::AbSystem => 1.0 / ab_volume(&y[0], &y[1])?.min().sqrt(),
    })
}

/// The positive quantity the model keeps above the floor.
fn guarded(model: ReducedModel, y: &[ScalarField]) -> Result<Option<ScalarField>> {
    Ok(match model {
        ReducedModel::Heat => None,
        ReducedModel::AbSystem => Some(ab_volume(&y[0], &y[1])?),
        _ => Some(y[0].clone()),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ReducedOptions {
    pub u_floor: f64,
    pub cfl_safety: f64,
    pub fixed_dt: Option<f64>,
    /// Landing interval for samples; `None` samples only the endpoints.
    pub sample_every: Option<f64>,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self { u_floor: DEFAULT_U_FLOOR, cfl_safety: 0.25, fixed_dt: None, sample_every: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReducedSample {
    pub t: f64,
    pub dt: f64,
    /// Of the first field, or of u for the (a, b) system.
    pub min: f64,
    pub max: f64,
    pub mass: f64,
    pub sup_dev_from_mean: f64,
}

#[derive(Clone, Debug)]
pub struct ReducedRun {
    pub samples: Vec<ReducedSample>,
    /// One entry per accepted step.
    pub steps: Vec<ReducedSample>,
    pub final_state: ReducedState,
}

fn sample(model: ReducedModel, y: &[ScalarField], t: f64, dt: f64) -> Result<ReducedSample> {
    let f = match guarded(model, y)? {
        Some(u) if model == ReducedModel::AbSystem => u,
        _ => y[0].clone(),
    };
    let mean = f.mean();
    Ok(ReducedSample {
        t,
        dt,
        min: f.min(),
        max: f.max(),
        mass: crate::grid::integrate(&f),
        sup_dev_from_mean: f.values().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max),
    })
}

pub fn run_reduced(state: ReducedState, t_end: f64) -> Result<ReducedRun> {
    run_reduced_with(state, t_end, &ReducedOptions::default())
}

/// RK4 with the parabolic CFL step dt = safety·h²/(2·rank·D), landing on
/// sample times and on `t_end`. A stage whose guarded field reaches the floor
/// ends the run with `DegenerateForm`.
pub fn run_reduced_with(state: ReducedState, t_end: f64, opts: &ReducedOptions) -> Result<ReducedRun> {
    let model = state.model;
    if let Some(u) = guarded(model, &state.fields)? {
        positive(&u, opts.u_floor)?;
    }
    if !(opts.cfl_safety > 0.0 && opts.cfl_safety <= 1.0) {
        return Err(Error::Precondition(format!("cfl safety {} outside (0, 1]", opts.cfl_safety)));
    }
    let g = state.fields[0].grid().clone();
    let hmin = g.min_spacing();
    let tol = 1e-12 * t_end.abs().max(1.0);
    let mut y = state.fields;
    let mut t = state.t;
    let mut samples = vec![sample(model, &y, t, 0.0)?];
    let mut steps = Vec::new();
    while t < t_end - tol {
        let mut dt = match opts.fixed_dt {
            Some(dt) => dt,
            None => opts.cfl_safety * hmin * hmin / (2.0 * g.rank() as f64 * diffusivity(model, &y)?),
        };
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::NumericalBlowup(format!("step size {dt} at t = {t}")));
        }
        let mut stop = t_end;
        if let Some(e) = opts.sample_every {
            stop = stop.min(((t / e) * (1.0 + 1e-12) + 1e-9).floor() * e + e);
        }
        let landing = t + dt >= stop - tol;
        if landing {
            dt = stop - t;
        }
        y = rk4(&y, t, dt, |s, _| rhs(model, s, opts.u_floor))?;
        t = if landing { stop } else { t + dt };
        for f in &y {
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup(format!("{model:?} at t = {t}")));
            }
        }
        if let Some(u) = guarded(model, &y)? {
            positive(&u, opts.u_floor)?;
        }
        let s = sample(model, &y, t, dt)?;
        steps.push(s);
        if landing {
            samples.push(s);
        }
    }
    Ok(ReducedRun { samples, steps, final_state: ReducedState { fields: y, t, model } })
}

fn check_rank4(grid4: &PeriodicGrid) -> Result<()> {
    if grid4.rank() != 4 {
        return Err(Error::InvalidGrid("embedding target must be rank 4".into()));
    }
    Ok(())
}

/// Lifts a field on the (axis0, axis1) plane of `grid4`, constant along the
/// other two axes.
pub fn lift(f: &ScalarField, grid4: &PeriodicGrid, axes: (usize, usize)) -> Result<ScalarField> {
    check_rank4(grid4)?;
    let g2 = f.grid();
    let d4 = grid4.dims();
    if g2.rank() != 2
        || g2.dims() != [d4[axes.0], d4[axes.1]]
        || g2.lengths() != [grid4.lengths()[axes.0], grid4.lengths()[axes.1]]
    {
        return Err(Error::InvalidGrid(format!(
            "plane grid {:?} does not match axes {:?} of {:?}",
            g2.dims(),
            axes,
            d4
        )));
    }
    let mut out = vec![0.0; grid4.len()];
    for (p, v) in out.iter_mut().enumerate() {
        let idx = grid4.multi_index(p);
        *v = f.values()[g2.flat_index(&[idx[axes.0], idx[axes.1]])];
    }
    Ok(ScalarField::new_unchecked(grid4, out))
}

/// Restriction to the (axis0, axis1) plane through the origin.
pub fn restrict(f: &ScalarField, axes: (usize, usize)) -> Result<ScalarField> {
    let g = f.grid();
    check_rank4(g)?;
    let g2 = PeriodicGrid::new(&[g.dims()[axes.0], g.dims()[axes.1]], &[g.lengths()[axes.0], g.lengths()[axes.1]])?;
    let mut out = vec![0.0; g2.len()];
    for (q, v) in out.iter_mut().enumerate() {
        let ij = g2.multi_index(q);
        let mut idx = [0usize; 4];
        idx[axes.0] = ij[0];
        idx[axes.1] = ij[1];
        *v = f.values()[g.flat_index(&idx)];
    }
    Ok(ScalarField::new_unchecked(&g2, out))
}

fn check_area_mean(f: &ScalarField, what: &str) -> Result<()> {
    let m = f.mean();
    if (m - 1.0).abs() > 1e-8 {
        return Err(Error::CohomologyMismatch(format!("{what} has mean {m:.12}, the class of ω needs 1")));
    }
    Ok(())
}

/// ρ = u₂ dx₁∧dx₂ + dx₃∧dx₄.
pub fn embed_product(u2: &ScalarField, grid4: &PeriodicGrid) -> Result<TwoForm> {
    check_area_mean(u2, "u₂")?;
    let mut rho = TwoForm::zeros(grid4);
    rho.c[0] = lift(u2, grid4, (0, 1))?;
    rho.c[5] = ScalarField::constant(grid4, 1.0);
    Ok(rho)
}

/// ρ = v(x₁,x₂) dx₁∧dx₂ + w(x₃,x₄) dx₃∧dx₄ with the class of ω.
pub fn embed_vw(v: &ScalarField, w: &ScalarField, grid4: &PeriodicGrid) -> Result<TwoForm> {
    check_area_mean(v, "v")?;
    check_area_mean(w, "w")?;
    let mut rho = TwoForm::zeros(grid4);
    rho.c[0] = lift(v, grid4, (0, 1))?;
    rho.c[5] = lift(w, grid4, (2, 3))?;
    Ok(rho)
}

/// ρ = ω + d(a dx₃ + b dx₄) with a, b functions of (x₁, x₂).
pub fn embed_ab(a: &ScalarField, b: &ScalarField, grid4: &PeriodicGrid) -> Result<TwoForm> {
    let u = ab_volume(a, b)?;
    positive(&u, DEFAULT_U_FLOOR)?;
    let g = a.grid();
    let sa = g.forward_many(&[a.values(), b.values()]);
    let specs = vec![g.partial_spec(&sa[0], 0), g.partial_spec(&sa[0], 1), g.partial_spec(&sa[1], 0), g.partial_spec(&sa[1], 1)];
    let d: Vec<ScalarField> = g.inverse_many(specs).into_iter().map(|v| ScalarField::new_unchecked(g, v)).collect();
    let mut rho = TwoForm::zeros(grid4);
    rho.c[0] = ScalarField::constant(grid4, 1.0);
    rho.c[5] = ScalarField::constant(grid4, 1.0);
    // slots: 0:(1,2) 1:(1,3) 2:(1,4) 3:(2,3) 4:(2,4) 5:(3,4)
    rho.c[1] = lift(&d[0], grid4, (0, 1))?;
    rho.c[3] = lift(&d[1], grid4, (0, 1))?;
    rho.c[2] = lift(&d[2], grid4, (0, 1))?;
    rho.c[4] = lift(&d[3], grid4, (0, 1))?;
    Ok(rho)
}

/// (ρ₁₂ on the (1,2) plane, ρ₃₄ on the (3,4) plane).
pub fn extract_product(rho: &TwoForm) -> Result<(ScalarField, ScalarField)> {
    Ok((restrict(&rho.c[0], (0, 1))?, restrict(&rho.c[5], (2, 3))?))
}

/// Max over the four off-product components.
pub fn off_product_max(rho: &TwoForm) -> f64 {
    [1, 2, 3, 4].iter().map(|&k| rho.c[k].max_abs()).fold(0.0, f64::max)
}
