//! Initial data and scripted experiments.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calculus::{d_one, OneForm};
use crate::error::{Error, Result};
use crate::forms::{check_nondegenerate, u_p, volume_potential, TwoForm, DEFAULT_U_FLOOR, P6};
use crate::grid::{PeriodicGrid, ScalarField};
use crate::reduced::{embed_ab, embed_product, embed_vw, run_reduced_with, ReducedModel, ReducedOptions, ReducedState};

pub const OMEGA: P6 = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];

pub fn make_omega(grid: &PeriodicGrid) -> TwoForm {
    TwoForm::constant(grid, OMEGA)
}

fn signed_mode(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Real field with standard-normal Fourier coefficients on the nonzero modes
/// with |k|∞ ≤ band. Modes are drawn in a fixed order, so a seed gives the
/// same continuous field on every grid that resolves the band.
pub fn random_band_field(grid: &PeriodicGrid, band: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dims = grid.dims().to_vec();
    let b = band as i64;
    let width = 2 * band + 1;
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    let total = width.pow(dims.len() as u32);
    let mut idx = vec![0usize; dims.len()];
    for code in 0..total {
        let mut c = code;
        let mut modes = vec![0i64; dims.len()];
        for a in (0..dims.len()).rev() {
            modes[a] = (c % width) as i64 - b;
            c /= width;
        }
        if modes.iter().all(|&m| m == 0) {
            continue;
        }
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let fits = modes.iter().zip(&dims).all(|(&m, &n)| 2 * m.unsigned_abs() as usize <= n && 2 * m.unsigned_abs() as usize != n);
        if !fits {
            continue;
        }
        for (a, (&m, &n)) in modes.iter().zip(&dims).enumerate() {
            idx[a] = if m >= 0 { m as usize } else { (n as i64 + m) as usize };
        }
        spec[grid.flat_index(&idx)] = Complex64::new(re, im);
    }
    // a single inverse keeps the real part, i.e. the Hermitian projection
    grid.inverse(spec)
}

fn random_one_form(grid: &PeriodicGrid, band: usize, seed: u64) -> OneForm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = std::array::from_fn(|_| ScalarField::new_unchecked(grid, random_band_field(grid, band, &mut rng)));
    OneForm { c }
}

/// base + dζ with ζ a seeded band-limited 1-form scaled so ‖dζ‖∞ = eps.
/// eps is halved until min u > ½·u(base).
pub fn make_random_near(grid: &PeriodicGrid, base: P6, eps: f64, band: usize, seed: u64) -> TwoForm {
    let rho0 = TwoForm::constant(grid, base);
    if eps == 0.0 {
        return rho0;
    }
    let dz = d_one(&random_one_form(grid, band.max(1), seed)).expect("finite random data");
    let m = dz.max_abs();
    let dz = dz.scale(1.0 / m);
    let ub = u_p(&base);
    let mut e = eps;
    loop {
        let mut rho = rho0.clone();
        rho.axpy(e, &dz);
        if ub <= 0.0 || volume_potential(&rho).min() > 0.5 * ub {
            return rho;
        }
        e *= 0.5;
    }
}

/// dζ for a seeded band-limited ζ, scaled to unit RMS over all six
/// components. The RMS of band-limited data does not depend on the grid, so
/// one seed gives the same continuous form at every resolution above the band.
pub fn random_exact_form(grid: &PeriodicGrid, band: usize, seed: u64) -> Result<TwoForm> {
    let dz = d_one(&random_one_form(grid, band.max(1), seed))?;
    let ms = dz.c.iter().map(|f| f.values().iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / grid.len() as f64;
    Ok(dz.scale(1.0 / ms.sqrt()))
}

/// Seeded band-limited (a, b) on a 2D grid with max |∇a|, |∇b| = amp.
pub fn random_ab_pair(grid2: &PeriodicGrid, amp: f64, band: usize, seed: u64) -> (ScalarField, ScalarField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = scale_gradient(random_band_field(grid2, band, &mut rng), grid2, amp);
    let b = scale_gradient(random_band_field(grid2, band, &mut rng), grid2, amp);
    (a, b)
}

pub fn make_random_near_omega(grid: &PeriodicGrid, eps: f64, band: usize, seed: u64) -> TwoForm {
    make_random_near(grid, OMEGA, eps, band, seed)
}

/// v(x₁,x₂) dx₁∧dx₂ + w(x₃,x₄) dx₃∧dx₄.
pub fn make_product_vw(grid4: &PeriodicGrid, v: &ScalarField, w: &ScalarField) -> Result<TwoForm> {
    let rho = embed_vw(v, w, grid4)?;
    check_nondegenerate(&rho, DEFAULT_U_FLOOR)?;
    Ok(rho)
}

/// ρ_s = ω + s·dθ.
pub fn isotopy_path(theta: &OneForm, s: f64) -> Result<TwoForm> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Precondition(format!("isotopy parameter {s} outside [0, 1]")));
    }
    let mut rho = make_omega(theta.grid());
    rho.axpy(s, &d_one(theta)?);
    Ok(rho)
}

/// (s, min u(ρ_s)) on `samples` + 1 equally spaced s values.
pub fn isotopy_min_u(theta: &OneForm, samples: usize) -> Result<Vec<(f64, f64)>> {
    let dth = d_one(theta)?;
    let w = make_omega(theta.grid());
    let mut out = Vec::with_capacity(samples + 1);
    for i in 0..=samples {
        let s = i as f64 / samples.max(1) as f64;
        let mut rho = w.clone();
        rho.axpy(s, &dth);
        let m = volume_potential(&rho).min();
        if m <= DEFAULT_U_FLOOR {
            return Err(Error::DegenerateForm { min_u: m, floor: DEFAULT_U_FLOOR });
        }
        out.push((s, m));
    }
    Ok(out)
}

/// Initial data on S¹: f₀ = sin 2x on [π, 2π] and 0 elsewhere; h₀ the mirror.
pub fn example_310_initial(x: f64) -> (f64, f64) {
    let s = (2.0 * x).sin();
    if x < std::f64::consts::PI {
        (0.0, s)
    } else {
        (s, 0.0)
    }
}

/// Heat-evolved f and h from a truncated Fourier series with `terms` odd
/// harmonics of the sign function. Independent of the grid solver.
pub fn example_310_series(x: f64, t: f64, terms: usize) -> (f64, f64) {
    // h₀ − f₀ = sin 2x·sgn(sin x), sgn(sin x) = (4/π)Σ sin(mx)/m over odd m
    let mut d = 0.0;
    for i in 0..terms {
        let m = (2 * i + 1) as f64;
        let lo = m - 2.0;
        let hi = m + 2.0;
        d += ((-lo * lo * t).exp() * (lo * x).cos() - (-hi * hi * t).exp() * (hi * x).cos()) / m;
    }
    d *= 2.0 / std::f64::consts::PI;
    let s = 0.5 * (-4.0 * t).exp() * (2.0 * x).sin();
    (s - 0.5 * d, s + 0.5 * d)
}

/// Linear-flow counterexample on T⁴: ρ = ω + d(a dx₃ + b dx₄) with
/// a_x = f(x₁), b = h(x₁)e(x₂), e_y = c = A₀e^{−t} sin x₂, so that
/// u = 1 − f·h·c.
#[derive(Clone, Debug)]
pub struct Example310 {
    pub grid1d: PeriodicGrid,
    /// A with 1/A = max |f(·,1)h(·,1)|. The product f·h is nonpositive for
    /// t > 0, so the sign of c = A₀e^{−t} sin y does the rest.
    pub threshold: f64,
    pub a0: f64,
}

/// Builder plus threshold A; `a0 = None` picks A₀ = 2Ae.
pub fn make_example_310(a0: Option<f64>, grid1d: &PeriodicGrid) -> Result<(Example310, f64)> {
    let ex = Example310::new(grid1d, a0)?;
    let a = ex.threshold;
    Ok((ex, a))
}

impl Example310 {
    /// `a0 = None` picks A₀ = 2Ae.
    pub fn new(grid1d: &PeriodicGrid, a0: Option<f64>) -> Result<Self> {
        if grid1d.rank() != 1 || grid1d.dims()[0] < 512 {
            return Err(Error::InvalidGrid("the counterexample needs a rank-1 grid with at least 512 points".into()));
        }
        if (grid1d.lengths()[0] - 2.0 * std::f64::consts::PI).abs() > 1e-12 {
            return Err(Error::InvalidGrid("the counterexample lives on a circle of length 2π".into()));
        }
        let mut ex = Self { grid1d: grid1d.clone(), threshold: f64::NAN, a0: 0.0 };
        let (f, h) = ex.components(1.0)?;
        let peak = f.mul(&h).max_abs();
        if !(peak > 0.0) {
            return Err(Error::NumericalBlowup("f·h vanishes at t = 1".into()));
        }
        ex.threshold = 1.0 / peak;
        ex.a0 = a0.unwrap_or(2.0 * ex.threshold * std::f64::consts::E);
        Ok(ex)
    }

    pub fn initial(&self) -> (ScalarField, ScalarField) {
        let f = ScalarField::from_fn(&self.grid1d, |x| example_310_initial(x[0]).0);
        let h = ScalarField::from_fn(&self.grid1d, |x| example_310_initial(x[0]).1);
        (f, h)
    }

    /// Nodal samples alias the 1/k² tail of the kinked data into every
    /// resolved mode (about 3/N²). Positive times therefore start from the
    /// band-limited projection, computed by FFT on a 256× finer grid.
    pub fn projected_initial(&self) -> Result<(ScalarField, ScalarField)> {
        let n = self.grid1d.dims()[0];
        let m = 256 * n;
        let fine = PeriodicGrid::new(&[m], self.grid1d.lengths())?;
        let f = ScalarField::from_fn(&fine, |x| example_310_initial(x[0]).0);
        let h = ScalarField::from_fn(&fine, |x| example_310_initial(x[0]).1);
        let specs = fine.forward_many(&[f.values(), h.values()]);
        let mut out = specs.iter().map(|sp| {
            let mut c = vec![Complex64::new(0.0, 0.0); n];
            for (j, z) in c.iter_mut().enumerate() {
                let k = signed_mode(j, n);
                if 2 * k.unsigned_abs() as usize != n {
                    *z = sp[k.rem_euclid(m as i64) as usize] * (n as f64 / m as f64);
                }
            }
            c
        });
        let (cf, ch) = (out.next().unwrap(), out.next().unwrap());
        let v = self.grid1d.inverse_many(vec![cf, ch]);
        Ok((ScalarField::new(&self.grid1d, v[0].clone())?, ScalarField::new(&self.grid1d, v[1].clone())?))
    }

    /// f(·,t), h(·,t) from the grid heat solver; nodal values at t = 0.
    pub fn components(&self, t: f64) -> Result<(ScalarField, ScalarField)> {
        if t == 0.0 {
            return Ok(self.initial());
        }
        let (f, h) = self.projected_initial()?;
        let mut out = Vec::new();
        for v in [f, h] {
            let st = ReducedState::new(ReducedModel::Heat, vec![v])?;
            let run = run_reduced_with(st, t, &ReducedOptions::default())?;
            out.push(run.final_state.fields.into_iter().next().unwrap());
        }
        let h = out.pop().unwrap();
        Ok((out.pop().unwrap(), h))
    }

    pub fn c_at(&self, y: f64, t: f64) -> f64 {
        self.a0 * (-t).exp() * y.sin()
    }

    /// u(x, y, t) = 1 − f h c on the (x, y) grid built from the 1D grid and
    /// `ny` points in y.
    pub fn volume_at(&self, t: f64, ny: usize) -> Result<ScalarField> {
        let (f, h) = self.components(t)?;
        let n = self.grid1d.dims()[0];
        let g2 = PeriodicGrid::new(&[n, ny], &[self.grid1d.lengths()[0], 2.0 * std::f64::consts::PI])?;
        let mut u = vec![0.0; g2.len()];
        for (p, v) in u.iter_mut().enumerate() {
            let ij = g2.multi_index(p);
            *v = 1.0 - f.values()[ij[0]] * h.values()[ij[0]] * self.c_at(g2.coord(1, ij[1]), t);
        }
        Ok(ScalarField::new_unchecked(&g2, u))
    }

    fn sampled(&self, t: f64, grid4: &PeriodicGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.grid1d.dims()[0];
        let d = grid4.dims();
        if grid4.rank() != 4 || n % d[0] != 0 || (grid4.lengths()[0] - self.grid1d.lengths()[0]).abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!("axis 1 of {d:?} must subsample the {n}-point circle")));
        }
        if (grid4.lengths()[1] - 2.0 * std::f64::consts::PI).abs() > 1e-12 {
            return Err(Error::InvalidGrid("axis 2 must have length 2π".into()));
        }
        let (f, h) = self.components(t)?;
        let stride = n / d[0];
        let pick = |v: &ScalarField| (0..d[0]).map(|i| v.values()[i * stride]).collect::<Vec<_>>();
        Ok((pick(&f), pick(&h)))
    }

    /// The closed form ρ at time t on `grid4` (axis 1 = x, axis 2 = y).
    /// Built componentwise so that u = 1 − f·h·c holds pointwise; h' is the
    /// spectral derivative on the x-axis of `grid4`, which keeps dρ = 0
    /// exactly in the discrete calculus.
    pub fn two_form_at(&self, t: f64, grid4: &PeriodicGrid) -> Result<TwoForm> {
        let (f, h) = self.sampled(t, grid4)?;
        let gx = PeriodicGrid::new(&grid4.dims()[..1], &grid4.lengths()[..1])?;
        let dh = gx.inverse(gx.partial_spec(&gx.forward(&h), 0));
        let amp = self.a0 * (-t).exp();
        let mut rho = make_omega(grid4);
        let n = grid4.len();
        let (mut r13, mut r14, mut r24) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let idx = grid4.multi_index(p);
            let (i, y) = (idx[0], grid4.coord(1, idx[1]));
            let (e, c) = (-amp * y.cos(), amp * y.sin());
            r13[p] = f[i];
            r14[p] = dh[i] * e;
            r24[p] = h[i] * c;
        }
        rho.c[1] = ScalarField::new(grid4, r13)?;
        rho.c[2] = ScalarField::new(grid4, r14)?;
        rho.c[4] = ScalarField::new(grid4, r24)?;
        Ok(rho)
    }

    /// θ = a dx₃ + b dx₄ with a the mean-free antiderivative of f.
    pub fn theta_at(&self, t: f64, grid4: &PeriodicGrid) -> Result<OneForm> {
        let (f, h) = self.sampled(t, grid4)?;
        let gx = PeriodicGrid::new(&grid4.dims()[..1], &grid4.lengths()[..1])?;
        let mut s = gx.forward(&f);
        let w = gx.wavenumbers(0).to_vec();
        for (z, k) in s.iter_mut().zip(&w) {
            *z = if *k == 0.0 { Complex64::new(0.0, 0.0) } else { *z / Complex64::new(0.0, *k) };
        }
        let a = gx.inverse(s);
        let amp = self.a0 * (-t).exp();
        let mut th = OneForm::zeros(grid4);
        let n = grid4.len();
        let (mut c3, mut c4) = (vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let idx = grid4.multi_index(p);
            let y = grid4.coord(1, idx[1]);
            c3[p] = a[idx[0]];
            c4[p] = h[idx[0]] * (-amp * y.cos());
        }
        th.c[2] = ScalarField::new(grid4, c3)?;
        th.c[3] = ScalarField::new(grid4, c4)?;
        Ok(th)
    }
}

/// Scenario selection as it appears in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Omega {},
    /// u₂ = 1 + amplitude·sin(mode·x₁) on the (1,2) plane.
    ProductU {
        #[serde(default = "default_amp")]
        amplitude: f64,
        #[serde(default = "one")]
        mode: u32,
    },
    /// v = 1 + v_amplitude·sin x₁, w = 1 + w_amplitude·sin x₃.
    ProductVw {
        #[serde(default = "default_amp")]
        v_amplitude: f64,
        #[serde(default = "default_amp")]
        w_amplitude: f64,
    },
    /// Random band-limited (a, b) with max |∇a|, |∇b| equal to amplitude.
    AbPerturbation {
        #[serde(default = "default_eps")]
        amplitude: f64,
        #[serde(default = "default_band")]
        band: usize,
        seed: Option<u64>,
    },
    RandomNearOmega {
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_band")]
        band: usize,
        seed: Option<u64>,
    },
    Example310 {
        /// Omitted means A₀ = 2Ae.
        a0: Option<f64>,
        #[serde(default)]
        t0: f64,
        #[serde(default = "default_n1d")]
        n1d: usize,
    },
    IsotopyPath {
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_band")]
        band: usize,
        seed: Option<u64>,
        #[serde(default = "one_f")]
        s: f64,
    },
}

fn default_amp() -> f64 {
    0.3
}
fn default_eps() -> f64 {
    0.05
}
fn default_band() -> usize {
    4
}
fn default_n1d() -> usize {
    512
}
fn one() -> u32 {
    1
}
fn one_f() -> f64 {
    1.0
}

fn plane(grid4: &PeriodicGrid, axes: (usize, usize)) -> Result<PeriodicGrid> {
    PeriodicGrid::new(&[grid4.dims()[axes.0], grid4.dims()[axes.1]], &[grid4.lengths()[axes.0], grid4.lengths()[axes.1]])
}

/// Rescales to max |∇f| = amp.
fn scale_gradient(f: Vec<f64>, g: &PeriodicGrid, amp: f64) -> ScalarField {
    let f = ScalarField::new_unchecked(g, f);
    let grad = crate::grid::gradient(&f).expect("finite data");
    let m = grad.iter().map(|d| d.max_abs()).fold(0.0, f64::max);
    if m == 0.0 {
        f
    } else {
        f.scale(amp / m)
    }
}

impl ScenarioSpec {
    pub fn build(&self, grid4: &PeriodicGrid, default_seed: u64) -> Result<TwoForm> {
        if grid4.rank() != 4 {
            return Err(Error::InvalidGrid("scenarios need a rank-4 grid".into()));
        }
        let rho = match self {
            ScenarioSpec::Omega {} => make_omega(grid4),
            ScenarioSpec::ProductU { amplitude, mode } => {
                let g = plane(grid4, (0, 1))?;
                let k = 2.0 * std::f64::consts::PI / g.lengths()[0] * *mode as f64;
                embed_product(&ScalarField::from_fn(&g, |x| 1.0 + amplitude * (k * x[0]).sin()), grid4)?
            }
            ScenarioSpec::ProductVw { v_amplitude, w_amplitude } => {
                let g12 = plane(grid4, (0, 1))?;
                let g34 = plane(grid4, (2, 3))?;
                let k1 = 2.0 * std::f64::consts::PI / g12.lengths()[0];
                let k3 = 2.0 * std::f64::consts::PI / g34.lengths()[0];
                let v = ScalarField::from_fn(&g12, |x| 1.0 + v_amplitude * (k1 * x[0]).sin());
                let w = ScalarField::from_fn(&g34, |x| 1.0 + w_amplitude * (k3 * x[0]).sin());
                make_product_vw(grid4, &v, &w)?
            }
            ScenarioSpec::AbPerturbation { amplitude, band, seed } => {
                let g = plane(grid4, (0, 1))?;
                let (a, b) = random_ab_pair(&g, *amplitude, *band, seed.unwrap_or(default_seed));
                embed_ab(&a, &b, grid4)?
            }
            ScenarioSpec::RandomNearOmega { eps, band, seed } => {
                make_random_near_omega(grid4, *eps, *band, seed.unwrap_or(default_seed))
            }
            ScenarioSpec::Example310 { a0, t0, n1d } => {
                let g1 = PeriodicGrid::new(&[*n1d], &[2.0 * std::f64::consts::PI])?;
                Example310::new(&g1, *a0)?.two_form_at(*t0, grid4)?
            }
            ScenarioSpec::IsotopyPath { eps, band, seed, s } => {
                let th = random_one_form(grid4, (*band).max(1), seed.unwrap_or(default_seed));
                let m = d_one(&th)?.max_abs();
                let th = if m > 0.0 { th.scale(eps / m) } else { th };
                isotopy_min_u(&th, 16)?;
                isotopy_path(&th, *s)?
            }
        };
        rho.check_finite("scenario")?;
        Ok(rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{d_two, periods};
    use crate::forms::hodge_star;
    use std::f64::consts::PI;

    fn check_valid(rho: &TwoForm) {
        assert!(d_two(rho).unwrap().max_abs() < 1e-10);
        let p = periods(rho);
        let area = rho.grid().lengths()[0] * rho.grid().lengths()[1];
        let want = [area, 0.0, 0.0, 0.0, 0.0, area];
        for k in 0..6 {
            assert!((p[k] - want[k]).abs() < 1e-9 * area, "period {k}: {}", p[k]);
        }
    }

    #[test]
    fn omega_examples() {
        let g = PeriodicGrid::cube(4, 8).unwrap();
        let w = make_omega(&g);
        assert!(volume_potential(&w).values().iter().all(|&u| u == 1.0));
        assert_eq!(hodge_star(&w).max_abs_diff(&w), 0.0);
        check_valid(&w);
    }

    #[test]
    fn random_near_omega_examples() {
        let g = PeriodicGrid::cube(4, 8).unwrap();
        assert_eq!(make_random_near_omega(&g, 0.0, 4, 1).max_abs_diff(&make_omega(&g)), 0.0);
        let r = make_random_near_omega(&g, 0.05, 4, 42);
        let u = volume_potential(&r);
        assert!(u.min() > 0.8 && u.max() < 1.2);
        assert!((r.sub(&make_omega(&g)).max_abs() - 0.05).abs() < 1e-14);
        check_valid(&r);
        let r2 = make_random_near_omega(&g, 0.05, 4, 42);
        for k in 0..6 {
            assert_eq!(r.c[k].values(), r2.c[k].values());
        }
        assert!(make_random_near_omega(&g, 0.05, 4, 43).max_abs_diff(&r) > 1e-3);
        // large eps is rescaled into the nondegenerate range
        let big = make_random_near_omega(&g, 5.0, 2, 7);
        assert!(volume_potential(&big).min() > 0.5);
    }

    #[test]
    fn product_vw_examples() {
        let g = PeriodicGrid::cube(4, 8).unwrap();
        let g2 = PeriodicGrid::cube(2, 8).unwrap();
        let one = ScalarField::constant(&g2, 1.0);
        assert_eq!(make_product_vw(&g, &one, &one).unwrap().max_abs_diff(&make_omega(&g)), 0.0);
        let v = ScalarField::from_fn(&g2, |x| 1.0 + 0.3 * x[0].sin());
        let rho = make_product_vw(&g, &v, &v).unwrap();
        let want = ScalarField::from_fn(&g, |x| (1.0 + 0.3 * x[0].sin()) * (1.0 + 0.3 * x[2].sin()));
        assert!(volume_potential(&rho).max_abs_diff(&want) < 1e-15);
        check_valid(&rho);
        assert!(matches!(make_product_vw(&g, &v.scale(1.1), &v), Err(Error::CohomologyMismatch(_))));
    }

    #[test]
    fn fourier_series_matches_initial_data() {
        for &x in &[0.3, 1.0, 2.0, 4.0, 5.5] {
            let (f, h) = example_310_series(x, 0.0, 4000);
            let (f0, h0) = example_310_initial(x);
            assert!((f - f0).abs() < 1e-3 && (h - h0).abs() < 1e-3);
        }
    }

    #[test]
    fn heat_solver_matches_series() {
        let g1 = PeriodicGrid::cube(1, 512).unwrap();
        let ex = Example310::new(&g1, Some(1.0)).unwrap();
        for t in [0.1, 1.0] {
            let (f, h) = ex.components(t).unwrap();
            let mut err = 0.0f64;
            for i in 0..512 {
                let (fs, hs) = example_310_series(g1.coord(0, i), t, 200);
                err = err.max((f.values()[i] - fs).abs()).max((h.values()[i] - hs).abs());
            }
            assert!(err < 1e-8, "t = {t}: {err:e}");
        }
        let grid_max = (0..2048)
            .map(|i| {
                let (f, h) = example_310_series(2.0 * PI * i as f64 / 2048.0, 1.0, 200);
                (f * h).abs()
            })
            .fold(f64::MIN, f64::max);
        assert!((ex.threshold * grid_max - 1.0).abs() < 1e-4);
    }

    #[test]
    fn example_310_construction() {
        let g1 = PeriodicGrid::cube(1, 512).unwrap();
        let (ex, a) = make_example_310(None, &g1).unwrap();
        assert_eq!(a, ex.threshold);
        assert!((ex.a0 - 2.0 * ex.threshold * std::f64::consts::E).abs() < 1e-9 * ex.a0);
        let g4 = PeriodicGrid::new(&[64, 8, 8, 8], &[2.0 * PI; 4]).unwrap();
        let r0 = ex.two_form_at(0.0, &g4).unwrap();
        assert!(volume_potential(&r0).values().iter().all(|&u| u == 1.0));
        check_valid(&r0);
        assert!(ex.volume_at(1.0, 64).unwrap().min() < 0.0);
        let r1 = ex.two_form_at(1.0, &g4).unwrap();
        check_valid(&r1);
        let u1 = volume_potential(&r1);
        assert!(u1.min() < 0.0);
        let zero = Example310::new(&g1, Some(0.0)).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert!(zero.volume_at(t, 16).unwrap().values().iter().all(|&u| u == 1.0));
        }
    }

    #[test]
    fn isotopy_examples() {
        let g = PeriodicGrid::cube(4, 8).unwrap();
        let th = random_one_form(&g, 2, 3);
        let th = th.scale(0.1 / d_one(&th).unwrap().max_abs());
        assert_eq!(isotopy_path(&th, 0.0).unwrap().max_abs_diff(&make_omega(&g)), 0.0);
        let w = make_omega(&g);
        let a = isotopy_path(&th, 0.3).unwrap().sub(&w);
        let b = isotopy_path(&th, 0.6).unwrap().sub(&w);
        assert!(b.max_abs_diff(&a.scale(2.0)) < 1e-15);
        assert!(isotopy_path(&th, 1.5).is_err());
        assert_eq!(isotopy_min_u(&th, 4).unwrap().len(), 5);
        // θ from the counterexample at t = 0: f·h vanishes pointwise, so u
        // only moves by the discrete Nyquist part of f that d cannot resolve
        let g1 = PeriodicGrid::cube(1, 512).unwrap();
        let ex = Example310::new(&g1, Some(1.0)).unwrap();
        let g4 = PeriodicGrid::new(&[64, 8, 8, 8], &[2.0 * PI; 4]).unwrap();
        let th = ex.theta_at(0.0, &g4).unwrap();
        let (f, h) = ex.sampled(0.0, &g4).unwrap();
        let nyq = f.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).sum::<f64>() / 64.0;
        for (s, m) in isotopy_min_u(&th, 4).unwrap() {
            let rho = isotopy_path(&th, s).unwrap();
            let u = volume_potential(&rho);
            for p in 0..g4.len() {
                let idx = g4.multi_index(p);
                let sign = if idx[0] % 2 == 0 { 1.0 } else { -1.0 };
                let c = ex.c_at(g4.coord(1, idx[1]), 0.0);
                let want = 1.0 + s * s * nyq * sign * h[idx[0]] * c;
                assert!((u.values()[p] - want).abs() < 1e-12);
            }
            assert!(m > 0.99);
        }
    }

    #[test]
    fn spec_builds_are_valid() {
        let g = PeriodicGrid::cube(4, 8).unwrap();
        let specs: Vec<ScenarioSpec> = vec![
            ScenarioSpec::Omega {},
            ScenarioSpec::ProductU { amplitude: 0.3, mode: 1 },
            ScenarioSpec::ProductVw { v_amplitude: 0.3, w_amplitude: 0.2 },
            ScenarioSpec::AbPerturbation { amplitude: 0.1, band: 2, seed: None },
            ScenarioSpec::RandomNearOmega { eps: 0.05, band: 3, seed: Some(1) },
            ScenarioSpec::IsotopyPath { eps: 0.1, band: 2, seed: None, s: 0.5 },
        ];
        for s in specs {
            let rho = s.build(&g, 42).unwrap();
            check_valid(&rho);
            assert!(volume_potential(&rho).min() > 0.0);
        }
        let t: ScenarioSpec = toml::from_str("kind = \"random_near_omega\"\neps = 0.1").unwrap();
        assert_eq!(t, ScenarioSpec::RandomNearOmega { eps: 0.1, band: 4, seed: None });
        assert!(toml::from_str::<ScenarioSpec>("kind = \"omega\"\nbogus = 1").is_err());
    }
}
