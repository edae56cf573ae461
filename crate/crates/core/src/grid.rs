//! Periodic lattices, real fields on them, and FFT-based differentiation.
//!
//! Layout is row-major with the last axis fastest. All spectral multipliers
//! used here are Hermitian-preserving, so two real fields can share one
//! complex transform (`forward_many` / `inverse_many`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type Spectrum = Vec<Complex64>;

struct Inner {
    dims: Vec<usize>,
    lengths: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    // first-derivative weight per axis and index; Nyquist weight is zero
    wave: Vec<Vec<f64>>,
    // flat index of the mode -k
    neg: Vec<u32>,
    lap: Vec<f64>,
    scratch_len: usize,
}

/// Uniform periodic lattice of rank 1, 2 or 4. Cheap to clone.
#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<Inner>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dims", &self.inner.dims)
            .field("lengths", &self.inner.lengths)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dims == other.inner.dims && self.inner.lengths == other.inner.lengths)
    }
}

impl PeriodicGrid {
    pub fn new(dims: &[usize], lengths: &[f64]) -> Result<Self> {
        let rank = dims.len();
        if !matches!(rank, 1 | 2 | 4) {
            return Err(Error::InvalidGrid(format!("rank must be 1, 2 or 4, got {rank}")));
        }
        if lengths.len() != rank {
            return Err(Error::InvalidGrid("one length per axis required".into()));
        }
        for (&n, &l) in dims.iter().zip(lengths) {
            if n < 8 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!("axis size {n} must be even and >= 8")));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("axis length {l} must be positive")));
            }
        }
        let len: usize = dims.iter().product();
        let mut strides = vec![1; rank];
        for a in (0..rank.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let mut planner = FftPlanner::new();
        let fwd: Vec<_> = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv: Vec<_> = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let scratch_len = fwd
            .iter()
            .chain(inv.iter())
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);

        let wave: Vec<Vec<f64>> = dims
            .iter()
            .zip(lengths)
            .map(|(&n, &l)| {
                (0..n)
                    .map(|j| {
                        let k = signed_index(j, n);
                        if 2 * j == n {
                            0.0
                        } else {
                            2.0 * PI * k as f64 / l
                        }
                    })
                    .collect()
            })
            .collect();

        let mut neg = vec![0u32; len];
        let mut lap = vec![0.0; len];
        let mut idx = vec![0usize; rank];
        for flat in 0..len {
            let mut nflat = 0;
            let mut sym = 0.0;
            for a in 0..rank {
                let j = idx[a];
                nflat += ((dims[a] - j) % dims[a]) * strides[a];
                sym -= wave[a][j] * wave[a][j];
            }
            neg[flat] = nflat as u32;
            lap[flat] = sym;
            for a in (0..rank).rev() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }

        Ok(Self {
            inner: Arc::new(Inner {
                dims: dims.to_vec(),
                lengths: lengths.to_vec(),
                strides,
                len,
                fwd,
                inv,
                wave,
                neg,
                lap,
                scratch_len,
            }),
        })
    }

    /// Grid with `n` points per axis and side 2π.
    pub fn cube(rank: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; rank], &vec![2.0 * PI; rank])
    }

    pub fn rank(&self) -> usize {
        self.inner.dims.len()
    }
    pub fn dims(&self) -> &[usize] {
        &self.inner.dims
    }
    pub fn lengths(&self) -> &[f64] {
        &self.inner.lengths
    }
    pub fn len(&self) -> usize {
        self.inner.len
    }
    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }
    pub fn strides(&self) -> &[usize] {
        &self.inner.strides
    }
    pub fn spacing(&self, axis: usize) -> f64 {
        self.inner.lengths[axis] / self.inner.dims[axis] as f64
    }
    pub fn min_spacing(&self) -> f64 {
        (0..self.rank()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }
    pub fn volume(&self) -> f64 {
        self.inner.lengths.iter().product()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.rank()];
        for a in (0..self.rank()).rev() {
            out[a] = flat % self.inner.dims[a];
            flat /= self.inner.dims[a];
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.inner.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinate of index `j` along `axis`.
    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        j as f64 * self.spacing(axis)
    }

    /// Derivative weights along `axis` (zero at Nyquist).
    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.inner.wave[axis]
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let inner = &*self.inner;
        let mut scratch = vec![Complex64::new(0.0, 0.0); inner.scratch_len];
        let mut buf: Vec<Complex64> = Vec::new();
        for a in 0..self.rank() {
            let n = inner.dims[a];
            let s = inner.strides[a];
            let plan = if inverse { &inner.inv[a] } else { &inner.fwd[a] };
            if s == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            buf.resize(n * s, Complex64::new(0.0, 0.0));
            for block in data.chunks_exact_mut(n * s) {
                for j in 0..n {
                    let row = &block[j * s..(j + 1) * s];
                    for (i, v) in row.iter().enumerate() {
                        buf[i * n + j] = *v;
                    }
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for j in 0..n {
                    let row = &mut block[j * s..(j + 1) * s];
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = buf[i * n + j];
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / inner.len as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Forward transforms of several real arrays, packed two per FFT.
    pub fn forward_many(&self, fields: &[&[f64]]) -> Vec<Spectrum> {
        let len = self.len();
        let mut out = Vec::with_capacity(fields.len());
        for pair in fields.chunks(2) {
            assert!(pair.iter().all(|f| f.len() == len), "field length does not match grid");
            if pair.len() == 1 {
                let mut z: Spectrum = pair[0].iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.transform(&mut z, false);
                out.push(z);
                continue;
            }
            let mut z: Spectrum = pair[0]
                .iter()
                .zip(pair[1])
                .map(|(&x, &y)| Complex64::new(x, y))
                .collect();
            self.transform(&mut z, false);
            let neg = &self.inner.neg;
            let mut a = vec![Complex64::new(0.0, 0.0); len];
            let mut b = vec![Complex64::new(0.0, 0.0); len];
            for k in 0..len {
                let zk = z[k];
                let zn = z[neg[k] as usize].conj();
                a[k] = (zk + zn) * 0.5;
                let d = (zk - zn) * 0.5;
                b[k] = Complex64::new(d.im, -d.re);
            }
            out.push(a);
            out.push(b);
        }
        out
    }

    pub fn forward(&self, field: &[f64]) -> Spectrum {
        self.forward_many(&[field]).pop().unwrap()
    }

    /// Inverse transforms of Hermitian spectra, packed two per FFT.
    pub fn inverse_many(&self, specs: Vec<Spectrum>) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(specs.len());
        let mut it = specs.into_iter();
        while let Some(mut a) = it.next() {
            match it.next() {
                Some(b) => {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += Complex64::new(-y.im, y.re);
                    }
                    self.transform(&mut a, true);
                    out.push(a.iter().map(|z| z.re).collect());
                    out.push(a.iter().map(|z| z.im).collect());
                }
                None => {
                    self.transform(&mut a, true);
                    out.push(a.iter().map(|z| z.re).collect());
                }
            }
        }
        out
    }

    pub fn inverse(&self, spec: Spectrum) -> Vec<f64> {
        self.inverse_many(vec![spec]).pop().unwrap()
    }

    /// Multiplies a spectrum by i·k along `axis`.
    pub fn apply_partial(&self, spec: &mut [Complex64], axis: usize) {
        let n = self.inner.dims[axis];
        let s = self.inner.strides[axis];
        let w = &self.inner.wave[axis];
        for block in spec.chunks_exact_mut(n * s) {
            for (j, row) in block.chunks_exact_mut(s).enumerate() {
                let k = w[j];
                for v in row.iter_mut() {
                    *v = Complex64::new(-k * v.im, k * v.re);
                }
            }
        }
    }

    pub fn partial_spec(&self, spec: &[Complex64], axis: usize) -> Spectrum {
        let mut out = spec.to_vec();
        self.apply_partial(&mut out, axis);
        out
    }

    pub fn apply_laplacian(&self, spec: &mut [Complex64]) {
        for (v, &l) in spec.iter_mut().zip(&self.inner.lap) {
            *v *= l;
        }
    }

    /// Applies an arbitrary real radial multiplier m(-|k|^2) where the argument
    /// is the Laplacian symbol (Nyquist conventions included).
    pub fn apply_symbol(&self, spec: &mut [Complex64], m: impl Fn(f64) -> f64) {
        for (v, &l) in spec.iter_mut().zip(&self.inner.lap) {
            *v *= m(l);
        }
    }

    /// Visits every point with its coordinates.
    pub fn for_each_point(&self, mut f: impl FnMut(usize, &[f64])) {
        let rank = self.rank();
        let mut idx = vec![0usize; rank];
        let mut x = vec![0.0; rank];
        for flat in 0..self.len() {
            for a in 0..rank {
                x[a] = self.coord(a, idx[a]);
            }
            f(flat, &x);
            for a in (0..rank).rev() {
                idx[a] += 1;
                if idx[a] < self.inner.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Real samples on a [`PeriodicGrid`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let f = Self { grid: grid.clone(), values };
        f.check_finite("ScalarField::new")?;
        Ok(f)
    }

    pub(crate) fn new_unchecked(grid: &PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        grid.for_each_point(|i, x| values[i] = f(x));
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericalBlowup(what.to_string()))
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }
    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        integrate(&self.mul(other))
    }
}

pub fn spectral_partial(field: &ScalarField, axis: usize) -> Result<ScalarField> {
    let g = field.grid();
    if axis >= g.rank() {
        return Err(Error::InvalidGrid(format!("axis {axis} out of range for rank {}", g.rank())));
    }
    let mut s = g.forward(field.values());
    g.apply_partial(&mut s, axis);
    let out = ScalarField::new_unchecked(g, g.inverse(s));
    out.check_finite("spectral_partial")?;
    Ok(out)
}

/// All first partials of one field, sharing a single forward transform.
pub fn gradient(field: &ScalarField) -> Result<Vec<ScalarField>> {
    let g = field.grid();
    let s = g.forward(field.values());
    let specs = (0..g.rank()).map(|a| g.partial_spec(&s, a)).collect();
    let out: Vec<_> = g
        .inverse_many(specs)
        .into_iter()
        .map(|v| ScalarField::new_unchecked(g, v))
        .collect();
    for f in &out {
        f.check_finite("gradient")?;
    }
    Ok(out)
}

/// Sum of second spectral partials. The symbol is (ik)^2 with the Nyquist
/// weight zeroed, so this agrees with repeated `spectral_partial`.
pub fn laplacian(field: &ScalarField) -> Result<ScalarField> {
    let g = field.grid();
    let mut s = g.forward(field.values());
    g.apply_laplacian(&mut s);
    let out = ScalarField::new_unchecked(g, g.inverse(s));
    out.check_finite("laplacian")?;
    Ok(out)
}

/// Laplacians of several fields with packed transforms.
pub fn laplacian_many(fields: &[&ScalarField]) -> Result<Vec<ScalarField>> {
    let Some(first) = fields.first() else { return Ok(vec![]) };
    let g = first.grid();
    let raw: Vec<&[f64]> = fields.iter().map(|f| f.values()).collect();
    let mut specs = g.forward_many(&raw);
    for s in &mut specs {
        g.apply_laplacian(s);
    }
    let out: Vec<_> = g
        .inverse_many(specs)
        .into_iter()
        .map(|v| ScalarField::new_unchecked(g, v))
        .collect();
    for f in &out {
        f.check_finite("laplacian")?;
    }
    Ok(out)
}

pub fn integrate(field: &ScalarField) -> f64 {
    field.mean() * field.grid().volume()
}
