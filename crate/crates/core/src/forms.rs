//! Pointwise algebra of 2-forms on rank-4 grids.
//!
//! Components are stored as ρ12, ρ13, ρ14, ρ23, ρ24, ρ34. Pointwise helpers
//! work on `[f64; 6]`; field-level functions map them over the grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, ScalarField};

pub type P6 = [f64; 6];
pub type Mat4 = [[f64; 4]; 4];

/// Component pairs in storage order.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Storage slot and sign of ρ_ij for any i ≠ j.
pub fn slot(i: usize, j: usize) -> Option<(usize, f64)> {
    let (a, b, s) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
    PAIRS.iter().position(|&p| p == (a, b)).map(|k| (k, s))
}

/// Full antisymmetric matrix of a pointwise form.
pub fn full(p: &P6) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        m[i][j] = p[k];
        m[j][i] = -p[k];
    }
    m
}

pub fn star_p(p: &P6) -> P6 {
    [p[5], -p[4], p[3], p[2], -p[1], p[0]]
}

pub fn u_p(p: &P6) -> f64 {
    p[0] * p[5] - p[1] * p[4] + p[2] * p[3]
}

pub fn norm_sq_p(p: &P6) -> f64 {
    p.iter().map(|x| x * x).sum()
}

pub fn dot_p(a: &P6, b: &P6) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (|ρ⁺|, |ρ⁻|) with norms summed over i<j.
pub fn sd_norms_p(p: &P6) -> (f64, f64) {
    let n2 = norm_sq_p(p);
    let two_u = 2.0 * u_p(p);
    (
        (0.5 * (n2 + two_u)).max(0.0).sqrt(),
        (0.5 * (n2 - two_u)).max(0.0).sqrt(),
    )
}

pub fn lambdas_p(p: &P6) -> (f64, f64) {
    let (np, nm) = sd_norms_p(p);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ((np + nm) * s, (np - nm) * s)
}

fn gram(m: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v: f64 = (0..4).map(|p| m[i][p] * m[j][p]).sum();
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// a_ij = ρ_ip ρ_jp
pub fn a_p(p: &P6) -> Mat4 {
    gram(&full(p))
}

/// b_ij = (*ρ)_ip (*ρ)_jp
pub fn b_p(p: &P6) -> Mat4 {
    gram(&full(&star_p(p)))
}

pub const EPS_EIG: f64 = 1e-12;

/// Choice of the weight h in ∂ₜρ = d(h·(-d*ρ)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowScheme {
    Linear,
    PowerU(f64),
    NormRatio,
    MatrixA1,
    MatrixA2,
    MatrixB1,
    MatrixB2,
    MatrixBHalf,
}

impl FlowScheme {
    pub const fn conformal() -> Self {
        FlowScheme::PowerU(0.5)
    }

    pub fn all() -> Vec<FlowScheme> {
        vec![
            FlowScheme::Linear,
            FlowScheme::conformal(),
            FlowScheme::NormRatio,
            FlowScheme::MatrixA1,
            FlowScheme::MatrixA2,
            FlowScheme::MatrixB1,
            FlowScheme::MatrixB2,
            FlowScheme::MatrixBHalf,
        ]
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, FlowScheme::Linear)
    }

    /// Pointwise weight matrix h. Assumes u > 0 unless the scheme is linear.
    pub fn weight_at(&self, p: &P6) -> Mat4 {
        let diag = |c: f64| {
            let mut m = [[0.0; 4]; 4];
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = c;
            }
            m
        };
        let scaled = |m: Mat4, c: f64| m.map(|r| r.map(|x| x * c));
        let u = u_p(p);
        match *self {
            FlowScheme::Linear => diag(1.0),
            FlowScheme::PowerU(r) => diag(u.powf(-r)),
            FlowScheme::NormRatio => diag(norm_sq_p(p) / u),
            FlowScheme::MatrixA1 => scaled(a_p(p), 1.0 / u),
            FlowScheme::MatrixA2 => scaled(a_p(p), 1.0 / (u * u)),
            FlowScheme::MatrixB1 => scaled(b_p(p), 1.0 / u),
            FlowScheme::MatrixB2 => scaled(b_p(p), 1.0 / (u * u)),
            FlowScheme::MatrixBHalf => {
                let (l1, l2) = lambdas_p(p);
                let mut m = b_p(p);
                for (i, row) in m.iter_mut().enumerate() {
                    row[i] += u;
                }
                scaled(m, 1.0 / ((l1 + l2).max(EPS_EIG) * u))
            }
        }
    }

    /// Largest eigenvalue of h, from λ₁, λ₂ in closed form.
    pub fn spectral_radius_at(&self, p: &P6) -> f64 {
        let u = u_p(p);
        let (l1, _) = lambdas_p(p);
        match *self {
            FlowScheme::Linear => 1.0,
            FlowScheme::PowerU(r) => u.powf(-r),
            FlowScheme::NormRatio => norm_sq_p(p) / u,
            FlowScheme::MatrixA1 | FlowScheme::MatrixB1 => l1 * l1 / u,
            FlowScheme::MatrixA2 | FlowScheme::MatrixB2 => l1 * l1 / (u * u),
            FlowScheme::MatrixBHalf => l1 / u,
        }
    }
}

impl fmt::Display for FlowScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowScheme::Linear => write!(f, "linear"),
            FlowScheme::PowerU(r) if *r == 0.5 => write!(f, "conformal"),
            FlowScheme::PowerU(r) => write!(f, "power_u:{r}"),
            FlowScheme::NormRatio => write!(f, "norm_ratio"),
            FlowScheme::MatrixA1 => write!(f, "matrix_a1"),
            FlowScheme::MatrixA2 => write!(f, "matrix_a2"),
            FlowScheme::MatrixB1 => write!(f, "matrix_b1"),
            FlowScheme::MatrixB2 => write!(f, "matrix_b2"),
            FlowScheme::MatrixBHalf => write!(f, "matrix_b_half"),
        }
    }
}

impl FromStr for FlowScheme {
    type Err = Error;

    /// Accepts the `Display` spellings; `power_u:<r>` carries the exponent.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(r) = s.strip_prefix("power_u:") {
            let r: f64 = r
                .parse()
                .map_err(|_| Error::Config(format!("bad exponent in scheme '{s}'")))?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("power_u exponent must be positive, got {r}")));
            }
            return Ok(FlowScheme::PowerU(r));
        }
        Ok(match s.as_str() {
            "linear" => FlowScheme::Linear,
            "conformal" => FlowScheme::conformal(),
            "norm_ratio" => FlowScheme::NormRatio,
            "matrix_a1" => FlowScheme::MatrixA1,
            "matrix_a2" => FlowScheme::MatrixA2,
            "matrix_b1" => FlowScheme::MatrixB1,
            "matrix_b2" => FlowScheme::MatrixB2,
            "matrix_b_half" => FlowScheme::MatrixBHalf,
            _ => return Err(Error::Config(format!("unknown scheme '{s}'"))),
        })
    }
}

/// Six components on a shared rank-4 grid.
#[derive(Clone, Debug)]
pub struct TwoForm {
    pub c: [ScalarField; 6],
}

impl TwoForm {
    pub fn new(c: [ScalarField; 6]) -> Result<Self> {
        let g = c[0].grid().clone();
        if g.rank() != 4 {
            return Err(Error::InvalidGrid("two-forms need a rank-4 grid".into()));
        }
        if c.iter().any(|f| *f.grid() != g) {
            return Err(Error::InvalidGrid("components live on different grids".into()));
        }
        for f in &c {
            f.check_finite("TwoForm::new")?;
        }
        Ok(Self { c })
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, [0.0; 6])
    }

    pub fn constant(grid: &PeriodicGrid, p: P6) -> Self {
        assert_eq!(grid.rank(), 4, "two-forms need a rank-4 grid");
        Self { c: p.map(|v| ScalarField::constant(grid, v)) }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.c[0].grid()
    }

    pub fn len(&self) -> usize {
        self.c[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.c[0].is_empty()
    }

    /// Component ρ_ij for any i ≠ j (0-based axes), with sign.
    pub fn get(&self, i: usize, j: usize) -> (&ScalarField, f64) {
        let (k, s) = slot(i, j).expect("i != j");
        (&self.c[k], s)
    }

    #[inline]
    pub fn at(&self, idx: usize) -> P6 {
        std::array::from_fn(|k| self.c[k].values()[idx])
    }

    pub fn from_pointwise(grid: &PeriodicGrid, f: impl Fn(usize) -> P6) -> Self {
        let n = grid.len();
        let mut vals: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let p = f(i);
            for k in 0..6 {
                vals[k][i] = p[k];
            }
        }
        Self { c: vals.map(|v| ScalarField::new_unchecked(grid, v)) }
    }

    pub fn scalar_pointwise(&self, f: impl Fn(&P6) -> f64) -> ScalarField {
        let v = (0..self.len()).map(|i| f(&self.at(i))).collect();
        ScalarField::new_unchecked(self.grid(), v)
    }

    pub fn map_pointwise(&self, f: impl Fn(&P6) -> P6) -> Self {
        Self::from_pointwise(self.grid(), |i| f(&self.at(i)))
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { c: std::array::from_fn(|k| self.c[k].add(&o.c[k])) }
    }
    pub fn sub(&self, o: &Self) -> Self {
        Self { c: std::array::from_fn(|k| self.c[k].sub(&o.c[k])) }
    }
    pub fn scale(&self, s: f64) -> Self {
        Self { c: std::array::from_fn(|k| self.c[k].scale(s)) }
    }
    pub fn axpy(&mut self, s: f64, o: &Self) {
        for k in 0..6 {
            self.c[k].axpy(s, &o.c[k]);
        }
    }
    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        (0..6).map(|k| self.c[k].max_abs_diff(&o.c[k])).fold(0.0, f64::max)
    }
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for f in &self.c {
            f.check_finite(what)?;
        }
        Ok(())
    }
    /// Pointwise inner product summed over i<j.
    pub fn inner(&self, o: &Self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid());
        for k in 0..6 {
            out.axpy(1.0, &self.c[k].mul(&o.c[k]));
        }
        out
    }
    pub fn norm_sq(&self) -> ScalarField {
        self.inner(self)
    }
}

/// Ten independent entries of a symmetric 4×4 matrix per point.
#[derive(Clone, Debug)]
pub struct SymMatrixField {
    pub entries: [ScalarField; 10],
}

const SYM: [[usize; 4]; 4] = [[0, 1, 2, 3], [1, 4, 5, 6], [2, 5, 7, 8], [3, 6, 8, 9]];

impl SymMatrixField {
    pub fn from_pointwise(grid: &PeriodicGrid, f: impl Fn(usize) -> Mat4) -> Self {
        let n = grid.len();
        let mut vals: [Vec<f64>; 10] = std::array::from_fn(|_| vec![0.0; n]);
        for p in 0..n {
            let m = f(p);
            for i in 0..4 {
                for j in i..4 {
                    vals[SYM[i][j]][p] = m[i][j];
                }
            }
        }
        Self { entries: vals.map(|v| ScalarField::new_unchecked(grid, v)) }
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[SYM[i][j]]
    }

    pub fn at(&self, p: usize) -> Mat4 {
        std::array::from_fn(|i| std::array::from_fn(|j| self.get(i, j).values()[p]))
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for e in &self.entries {
            e.check_finite(what)?;
        }
        Ok(())
    }
}

pub fn hodge_star(rho: &TwoForm) -> TwoForm {
    let c = &rho.c;
    TwoForm {
        c: [
            c[5].clone(),
            c[4].scale(-1.0),
            c[3].clone(),
            c[2].clone(),
            c[1].scale(-1.0),
            c[0].clone(),
        ],
    }
}

/// (ρ⁺, ρ⁻) with ρ± = ½(ρ ± *ρ).
pub fn sd_asd_split(rho: &TwoForm) -> (TwoForm, TwoForm) {
    let s = hodge_star(rho);
    (rho.add(&s).scale(0.5), rho.sub(&s).scale(0.5))
}

pub fn volume_potential(rho: &TwoForm) -> ScalarField {
    rho.scalar_pointwise(u_p)
}

/// (λ₁, λ₂) = ((|ρ⁺|+|ρ⁻|)/√2, (|ρ⁺|−|ρ⁻|)/√2)
pub fn eigenvalues(rho: &TwoForm) -> (ScalarField, ScalarField) {
    (
        rho.scalar_pointwise(|p| lambdas_p(p).0),
        rho.scalar_pointwise(|p| lambdas_p(p).1),
    )
}

pub fn matrix_ab(rho: &TwoForm) -> (SymMatrixField, SymMatrixField) {
    let g = rho.grid();
    (
        SymMatrixField::from_pointwise(g, |i| a_p(&rho.at(i))),
        SymMatrixField::from_pointwise(g, |i| b_p(&rho.at(i))),
    )
}

/// Fails unless min u exceeds `floor`. Returns min u.
pub fn check_nondegenerate(rho: &TwoForm, floor: f64) -> Result<f64> {
    let min_u = (0..rho.len()).map(|i| u_p(&rho.at(i))).fold(f64::INFINITY, f64::min);
    if min_u > floor {
        Ok(min_u)
    } else {
        Err(Error::DegenerateForm { min_u, floor })
    }
}

pub const DEFAULT_U_FLOOR: f64 = 1e-6;

pub fn weight_h(rho: &TwoForm, scheme: FlowScheme) -> Result<SymMatrixField> {
    weight_h_with_floor(rho, scheme, 0.0)
}

pub fn weight_h_with_floor(rho: &TwoForm, scheme: FlowScheme, floor: f64) -> Result<SymMatrixField> {
    if !scheme.is_linear() {
        check_nondegenerate(rho, floor)?;
    }
    let h = SymMatrixField::from_pointwise(rho.grid(), |i| scheme.weight_at(&rho.at(i)));
    h.check_finite("weight_h")?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::cube(4, 8).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn star_examples() {
        let g = grid();
        let w = TwoForm::constant(&g, [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(hodge_star(&w).max_abs_diff(&w), 0.0);
        let r = TwoForm::constant(&g, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(hodge_star(&r).at(0), [0.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        let r = TwoForm::constant(&g, [2.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!(hodge_star(&r).at(5), [3.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn split_examples() {
        let g = grid();
        let (p, m) = sd_asd_split(&TwoForm::constant(&g, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.at(0), [0.5, 0.0, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(m.at(0), [0.5, 0.0, 0.0, 0.0, 0.0, -0.5]);
        let (p, _) = sd_asd_split(&TwoForm::constant(&g, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.at(0), [0.0, 0.5, 0.0, 0.0, -0.5, 0.0]);
        let (p, m) = sd_asd_split(&TwoForm::constant(&g, [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(p.at(0), [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.max_abs(), 0.0);
    }

    #[test]
    fn volume_and_eigenvalue_examples() {
        assert_eq!(u_p(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 1.0);
        assert_eq!(u_p(&[2.0, 0.0, 0.0, 0.0, 0.0, 3.0]), 6.0);
        assert_eq!(u_p(&[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]), -1.0);
        let (l1, l2) = lambdas_p(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(close(l1, 1.0, 1e-15) && close(l2, 1.0, 1e-15));
        let (l1, l2) = lambdas_p(&[2.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(close(l1, 3.0, 1e-14) && close(l2, 2.0, 1e-14));
        let (l1, l2) = lambdas_p(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(close(l1, 1.0, 1e-15) && close(l2, 0.0, 1e-15));
    }

    #[test]
    fn matrix_examples() {
        let id = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert_eq!(a_p(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]), id);
        assert_eq!(b_p(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]), id);
        let p = [2.0, 0.0, 0.0, 0.0, 0.0, 3.0];
        let diag = |d: [f64; 4]| -> Mat4 {
            std::array::from_fn(|i| std::array::from_fn(|j| if i == j { d[i] } else { 0.0 }))
        };
        assert_eq!(a_p(&p), diag([4.0, 4.0, 9.0, 9.0]));
        assert_eq!(b_p(&p), diag([9.0, 9.0, 4.0, 4.0]));
        let q = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(a_p(&q), diag([1.0, 0.0, 1.0, 0.0]));
        assert_eq!(b_p(&q), diag([0.0, 1.0, 0.0, 1.0]));
        let h = FlowScheme::MatrixB2.weight_at(&p);
        let want = diag([9.0 / 36.0, 9.0 / 36.0, 4.0 / 36.0, 4.0 / 36.0]);
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(h[i][j], want[i][j], 1e-15));
            }
        }
    }

    #[test]
    fn weight_examples() {
        let g = grid();
        let w = TwoForm::constant(&g, [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let h = weight_h(&w, FlowScheme::conformal()).unwrap();
        assert_eq!(h.at(3)[0][0], 1.0);
        assert_eq!(h.at(3)[0][1], 0.0);
        let four = TwoForm::constant(&g, [2.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let h = weight_h(&four, FlowScheme::conformal()).unwrap();
        assert_eq!(h.at(0)[2][2], 0.5);
        let degenerate = TwoForm::constant(&g, [0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            weight_h(&degenerate, FlowScheme::MatrixA1),
            Err(Error::DegenerateForm { .. })
        ));
        assert!(weight_h(&degenerate, FlowScheme::Linear).is_ok());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in FlowScheme::all().into_iter().chain([FlowScheme::PowerU(0.3)]) {
            assert_eq!(s.to_string().parse::<FlowScheme>().unwrap(), s);
        }
        assert!("power_u:-1".parse::<FlowScheme>().is_err());
        assert!("bogus".parse::<FlowScheme>().is_err());
    }

    fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
    }

    fn p6() -> impl Strategy<Value = P6> {
        prop::array::uniform6(-2.0f64..2.0)
    }

    fn nondegenerate() -> impl Strategy<Value = P6> {
        p6().prop_filter("u > 0.05", |p| u_p(p) > 0.05)
    }

    proptest! {
        #[test]
        fn star_is_isometric_involution(a in p6(), b in p6()) {
            prop_assert_eq!(star_p(&star_p(&a)), a);
            prop_assert!(close(dot_p(&star_p(&a), &star_p(&b)), dot_p(&a, &b), 1e-13));
            prop_assert!(close(2.0 * u_p(&a), dot_p(&a, &star_p(&a)), 1e-13));
        }

        #[test]
        fn eigenvalue_identities(p in p6()) {
            let (l1, l2) = lambdas_p(&p);
            let n2 = norm_sq_p(&p);
            prop_assert!(l1 + 1e-15 >= l2.abs());
            prop_assert!(close(l1 * l2, u_p(&p), 1e-11 * n2.max(1e-300)));
            prop_assert!(close(l1 * l1 + l2 * l2, n2, 1e-11 * n2.max(1e-300)));
            let (a, b) = (a_p(&p), b_p(&p));
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { n2 } else { 0.0 };
                    prop_assert!(close(a[i][j] + b[i][j], want, 1e-12 * n2.max(1.0)));
                }
            }
        }

        #[test]
        fn eigenvalues_match_dense_solver(p in nondegenerate()) {
            let a = a_p(&p);
            let m = nalgebra::Matrix4::from_fn(|i, j| a[i][j]);
            let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let (l1, l2) = lambdas_p(&p);
            let want = [l2 * l2, l2 * l2, l1 * l1, l1 * l1];
            for (e, w) in ev.iter().zip(want) {
                prop_assert!(close(*e, w, 1e-9 * (1.0 + w)));
            }
        }

        #[test]
        fn weights_commute_with_form(p in nondegenerate()) {
            let a_mat = full(&p);
            for s in FlowScheme::all() {
                let h = s.weight_at(&p);
                let ha = mat_mul(&h, &a_mat);
                let ah = mat_mul(&a_mat, &h);
                let scale = ha.iter().flatten().fold(1e-300f64, |m, v| m.max(v.abs()));
                for i in 0..4 {
                    for j in 0..4 {
                        prop_assert!(close(ha[i][j], ah[i][j], 1e-11 * scale));
                        prop_assert!(close(h[i][j], h[j][i], 1e-14 * scale));
                    }
                }
                let m = nalgebra::Matrix4::from_fn(|i, j| h[i][j]);
                let ev = m.symmetric_eigen().eigenvalues;
                prop_assert!(ev.min() > 0.0);
                prop_assert!(close(ev.max(), s.spectral_radius_at(&p), 1e-9 * ev.max()));
            }
        }

        #[test]
        fn sqrt_b_squares_to_b(p in nondegenerate()) {
            let (l1, l2) = lambdas_p(&p);
            prop_assume!(l1 + l2 > 1e-8);
            let u = u_p(&p);
            let h = FlowScheme::MatrixBHalf.weight_at(&p);
            let h2 = mat_mul(&h, &h);
            let b = b_p(&p);
            for i in 0..4 {
                for j in 0..4 {
                    let want = b[i][j] / (u * u);
                    prop_assert!(close(h2[i][j], want, 1e-10 * (l1 * l1 / (u * u))));
                }
            }
        }
    }
}
