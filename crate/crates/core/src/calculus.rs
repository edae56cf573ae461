//! Exterior derivative and codifferential on the flat T⁴.
//!
//! Convention: (dζ)_ij = ∂_i ζ_j − ∂_j ζ_i and (d*ρ)_k = Σ_l ∂_l ρ_kl, which
//! is the sign that makes d* the L² adjoint of d for this d.

use crate::error::Result;
use crate::forms::{slot, TwoForm, PAIRS};
use crate::grid::{PeriodicGrid, ScalarField, Spectrum};

#[derive(Clone, Debug)]
pub struct OneForm {
    pub c: [ScalarField; 4],
}

/// Components indexed by the omitted axis; component m holds (dρ)_ijk for the
/// increasing triple {i,j,k} = {0,1,2,3} \ {m}.
#[derive(Clone, Debug)]
pub struct ThreeForm {
    pub c: [ScalarField; 4],
}

impl OneForm {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self { c: std::array::from_fn(|_| ScalarField::zeros(grid)) }
    }
    pub fn grid(&self) -> &PeriodicGrid {
        self.c[0].grid()
    }
    pub fn scale(&self, s: f64) -> Self {
        Self { c: std::array::from_fn(|k| self.c[k].scale(s)) }
    }
    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }
    /// Pointwise Euclidean norm.
    pub fn norm(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid());
        for f in &self.c {
            out.axpy(1.0, &f.mul(f));
        }
        out.map(f64::sqrt)
    }
}

impl ThreeForm {
    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }
}

pub(crate) const TRIPLES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

fn to_fields(grid: &PeriodicGrid, raw: Vec<Vec<f64>>, what: &str) -> Result<Vec<ScalarField>> {
    let out: Vec<ScalarField> = raw.into_iter().map(|v| ScalarField::new_unchecked(grid, v)).collect();
    for f in &out {
        f.check_finite(what)?;
    }
    Ok(out)
}

pub(crate) fn spectra_of(fields: &[ScalarField]) -> Vec<Spectrum> {
    let g = fields[0].grid();
    let raw: Vec<&[f64]> = fields.iter().map(|f| f.values()).collect();
    g.forward_many(&raw)
}

/// d of a 1-form given its component spectra.
pub(crate) fn d_one_spec(grid: &PeriodicGrid, z: &[Spectrum]) -> Vec<Spectrum> {
    PAIRS
        .iter()
        .map(|&(i, j)| {
            let mut a = grid.partial_spec(&z[j], i);
            let b = grid.partial_spec(&z[i], j);
            for (x, y) in a.iter_mut().zip(&b) {
                *x -= y;
            }
            a
        })
        .collect()
}

/// d*ρ given the six component spectra.
pub(crate) fn codiff_spec(grid: &PeriodicGrid, r: &[Spectrum]) -> Vec<Spectrum> {
    (0..4)
        .map(|k| {
            let mut acc = vec![Default::default(); grid.len()];
            for l in 0..4 {
                if l == k {
                    continue;
                }
                let (slot_kl, sign) = slot(k, l).unwrap();
                let d = grid.partial_spec(&r[slot_kl], l);
                for (a, v) in acc.iter_mut().zip(&d) {
                    *a += v * sign;
                }
            }
            acc
        })
        .collect()
}

pub fn d_one(zeta: &OneForm) -> Result<TwoForm> {
    let g = zeta.grid().clone();
    let z = spectra_of(&zeta.c);
    let out = to_fields(&g, g.inverse_many(d_one_spec(&g, &z)), "d_one")?;
    Ok(TwoForm { c: out.try_into().unwrap() })
}

pub fn d_two(rho: &TwoForm) -> Result<ThreeForm> {
    let g = rho.grid().clone();
    let r = spectra_of(&rho.c);
    let specs = TRIPLES
        .iter()
        .map(|&[i, j, k]| {
            let terms = [(i, slot(j, k).unwrap().0, 1.0), (j, slot(i, k).unwrap().0, -1.0), (k, slot(i, j).unwrap().0, 1.0)];
            let mut acc: Spectrum = vec![Default::default(); g.len()];
            for (axis, comp, sign) in terms {
                let d = g.partial_spec(&r[comp], axis);
                for (a, v) in acc.iter_mut().zip(&d) {
                    *a += v * sign;
                }
            }
            acc
        })
        .collect();
    let out = to_fields(&g, g.inverse_many(specs), "d_two")?;
    Ok(ThreeForm { c: out.try_into().unwrap() })
}

pub fn codiff_two(rho: &TwoForm) -> Result<OneForm> {
    let g = rho.grid().clone();
    let r = spectra_of(&rho.c);
    let out = to_fields(&g, g.inverse_many(codiff_spec(&g, &r)), "codiff_two")?;
    Ok(OneForm { c: out.try_into().unwrap() })
}

/// Hodge star of a 3-form, as a 1-form.
pub fn star_three(theta: &ThreeForm) -> OneForm {
    // *(dx_i∧dx_j∧dx_k) = ±dx_m with sign (−1)^(m+1) for 0-based m
    OneForm {
        c: std::array::from_fn(|m| {
            if m % 2 == 1 {
                theta.c[m].clone()
            } else {
                theta.c[m].scale(-1.0)
            }
        }),
    }
}

/// Integrals of ρ_ij over the coordinate (i,j)-tori, averaged over the
/// transverse positions.
pub fn periods(rho: &TwoForm) -> [f64; 6] {
    let l = rho.grid().lengths();
    std::array::from_fn(|k| {
        let (i, j) = PAIRS[k];
        rho.c[k].mean() * l[i] * l[j]
    })
}

/// All first partials ∂_m ρ_ij, indexed [axis][component].
pub fn form_gradient(rho: &TwoForm) -> Result<Vec<Vec<ScalarField>>> {
    let g = rho.grid().clone();
    let r = spectra_of(&rho.c);
    let mut out = Vec::with_capacity(4);
    for m in 0..4 {
        let specs = r.iter().map(|s| g.partial_spec(s, m)).collect();
        out.push(to_fields(&g, g.inverse_many(specs), "form_gradient")?);
    }
    Ok(out)
}

/// |∇ρ|² = Σ_m Σ_{i<j} (∂_m ρ_ij)².
pub fn grad_norm_sq(rho: &TwoForm) -> Result<ScalarField> {
    let grad = form_gradient(rho)?;
    let mut acc = vec![0.0; rho.len()];
    for f in grad.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += v * v;
        }
    }
    Ok(ScalarField::new_unchecked(rho.grid(), acc))
}

/// Largest |dρ| component, the closedness residual.
pub fn closedness_residual(rho: &TwoForm) -> Result<f64> {
    Ok(d_two(rho)?.max_abs())
}
