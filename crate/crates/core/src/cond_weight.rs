//! Style-conditioned weight operators.
//!
//! Every linear map in the model depends on the current style vector `y`
//! (length S). Two parameterizations are supported:
//!
//! - **Dense**: one full `out x in` slice per style; the effective map is
//!   the y-weighted sum of slices, `W(y) = sum_s y_s W_s`. Parameter count
//!   `out * in * S`.
//! - **Factored**: three shared factors `Wa (out x F)`, `Wb (F x S)`,
//!   `Wc (F x in)`; the effective map is `Wa diag(Wb y) Wc`. Parameter
//!   count `(out + in + S) * F`, independent of the product `out * in`.
//!
//! `apply` never materializes the effective matrix for the factored form;
//! it goes through the rank-F bottleneck and records the multiply-adds it
//! performs in [`crate::madds`]. For a one-hot `y`, the dense path reduces
//! to exactly one slice-vector product, bit-identical to selecting that
//! slice.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::madds;

#[derive(Debug, Clone)]
pub enum CondWeight {
    Dense { slices: Vec<Array2<f64>> },
    Factored { wa: Array2<f64>, wb: Array2<f64>, wc: Array2<f64> },
}

impl CondWeight {
    pub fn dense(slices: Vec<Array2<f64>>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::shape("dense conditional weight needs at least one style slice"));
        }
        let d = slices[0].dim();
        for (s, m) in slices.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::shape(format!(
                    "style slice {s} has shape {:?}, expected {:?}",
                    m.dim(),
                    d
                )));
            }
        }
        Ok(CondWeight::Dense { slices })
    }

    pub fn factored(wa: Array2<f64>, wb: Array2<f64>, wc: Array2<f64>) -> Result<Self> {
        let f = wa.ncols();
        if wb.nrows() != f || wc.nrows() != f {
            return Err(Error::shape(format!(
                "factor rank mismatch: Wa has {} columns, Wb has {} rows, Wc has {} rows",
                f,
                wb.nrows(),
                wc.nrows()
            )));
        }
        Ok(CondWeight::Factored { wa, wb, wc })
    }

    pub fn zeros_dense(out: usize, input: usize, styles: usize) -> Self {
        CondWeight::Dense { slices: vec![Array2::zeros((out, input)); styles] }
    }

    pub fn zeros_factored(out: usize, input: usize, styles: usize, factors: usize) -> Self {
        CondWeight::Factored {
            wa: Array2::zeros((out, factors)),
            wb: Array2::zeros((factors, styles)),
            wc: Array2::zeros((factors, input)),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CondWeight::Dense { slices } => slices[0].nrows(),
            CondWeight::Factored { wa, .. } => wa.nrows(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            CondWeight::Dense { slices } => slices[0].ncols(),
            CondWeight::Factored { wc, .. } => wc.ncols(),
        }
    }

    pub fn styles(&self) -> usize {
        match self {
            CondWeight::Dense { slices } => slices.len(),
            CondWeight::Factored { wb, .. } => wb.ncols(),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, CondWeight::Factored { .. })
    }

    /// Number of stored scalars.
    pub fn param_count(&self) -> usize {
        match self {
            CondWeight::Dense { slices } => slices.len() * slices[0].len(),
            CondWeight::Factored { wa, wb, wc } => wa.len() + wb.len() + wc.len(),
        }
    }

    fn check_y(&self, y: ArrayView1<f64>) -> Result<()> {
        if y.len() != self.styles() {
            return Err(Error::shape(format!(
                "style vector has length {}, expected {}",
                y.len(),
                self.styles()
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "input vector has length {}, expected {}",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Materialize the effective matrix `W(y)`.
    ///
    /// Intended for inspection and for small exactness tests; the hot path
    /// is [`CondWeight::apply`].
    pub fn effective(&self, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_y(y)?;
        match self {
            CondWeight::Dense { slices } => {
                let mut acc = Array2::zeros(slices[0].dim());
                for (s, slice) in slices.iter().enumerate() {
                    let ys = y[s];
                    if ys != 0.0 {
                        acc.scaled_add(ys, slice);
                    }
                }
                Ok(acc)
            }
            CondWeight::Factored { wa, wb, wc } => {
                let gate = wb.dot(&y);
                let mut scaled = wa.clone();
                for (mut col, &g) in scaled.columns_mut().into_iter().zip(gate.iter()) {
                    col.mapv_inplace(|v| v * g);
                }
                Ok(scaled.dot(wc))
            }
        }
    }

    /// Compute `W(y) x` without materializing `W(y)`, recording the
    /// multiply-adds performed.
    pub fn apply(&self, y: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_y(y)?;
        self.check_x(x)?;
        match self {
            CondWeight::Dense { slices } => {
                let mut acc = Array1::zeros(self.out_dim());
                let mut active = 0u64;
                for (s, slice) in slices.iter().enumerate() {
                    let ys = y[s];
                    if ys != 0.0 {
                        acc.scaled_add(ys, &slice.dot(&x));
                        active += 1;
                    }
                }
                madds::add(active * (self.out_dim() * self.in_dim()) as u64);
                Ok(acc)
            }
            CondWeight::Factored { wa, wb, wc } => {
                let nnz = y.iter().filter(|&&v| v != 0.0).count() as u64;
                let f = wa.ncols() as u64;
                let gate = wb.dot(&y);
                let mut mixed = wc.dot(&x);
                mixed.zip_mut_with(&gate, |m, &g| *m *= g);
                let out = wa.dot(&mixed);
                madds::add(f * (nnz + self.in_dim() as u64 + 1 + self.out_dim() as u64));
                Ok(out)
            }
        }
    }

    pub fn dense_slices(&self) -> Option<&[Array2<f64>]> {
        match self {
            CondWeight::Dense { slices } => Some(slices),
            CondWeight::Factored { .. } => None,
        }
    }

    pub fn factors(&self) -> Option<(&Array2<f64>, &Array2<f64>, &Array2<f64>)> {
        match self {
            CondWeight::Dense { .. } => None,
            CondWeight::Factored { wa, wb, wc } => Some((wa, wb, wc)),
        }
    }

    /// Visit each stored tensor as `(suffix, tensor)`; suffixes are
    /// `s0..s{S-1}` for dense slices and `a`, `b`, `c` for factors.
    pub fn visit(&self, mut f: impl FnMut(String, &Array2<f64>)) {
        match self {
            CondWeight::Dense { slices } => {
                for (s, m) in slices.iter().enumerate() {
                    f(format!("s{s}"), m);
                }
            }
            CondWeight::Factored { wa, wb, wc } => {
                f("a".to_string(), wa);
                f("b".to_string(), wb);
                f("c".to_string(), wc);
            }
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Array2<f64>)) {
        match self {
            CondWeight::Dense { slices } => {
                for (s, m) in slices.iter_mut().enumerate() {
                    f(format!("s{s}"), m);
                }
            }
            CondWeight::Factored { wa, wb, wc } => {
                f("a".to_string(), wa);
                f("b".to_string(), wb);
                f("c".to_string(), wc);
            }
        }
    }
}
