//! Fixed sparse row combinations: `out[r] = sum_k w[k] * input[col[k]]`.
//!
//! Used for gathers and neighbourhood averages over mesh vertices, where the
//! pattern is known ahead of time and a dense matrix would be wasteful.

use std::sync::Arc;

use super::{CustomOp, Tape, Tensor, TensorError, Var};

/// Compressed sparse rows with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f32>,
    in_rows: usize,
}

impl SparseRows {
    /// Builds from per-output-row lists of `(input row, weight)`.
    pub fn from_rows(rows: &[Vec<(u32, f32)>], in_rows: usize) -> Result<Self, TensorError> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for &(c, w) in row {
                if c as usize >= in_rows {
                    return Err(TensorError::InvalidArgument(format!(
                        "sparse column {c} out of range for {in_rows} input rows"
                    )));
                }
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Ok(Self {
            offsets,
            cols,
            weights,
            in_rows,
        })
    }

    /// Row selection: output row `r` copies input row `indices[r]`.
    pub fn gather(indices: &[u32], in_rows: usize) -> Result<Self, TensorError> {
        let rows: Vec<Vec<(u32, f32)>> = indices.iter().map(|&i| vec![(i, 1.0)]).collect();
        Self::from_rows(&rows, in_rows)
    }

    pub fn out_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, TensorError> {
        if input.rank() != 2 || input.shape()[0] != self.in_rows {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_rows",
                lhs: vec![self.out_rows(), self.in_rows],
                rhs: input.shape().to_vec(),
            });
        }
        let d = input.shape()[1];
        let src = input.data();
        let mut out = vec![0.0f32; self.out_rows() * d];
        for r in 0..self.out_rows() {
            let dst = &mut out[r * d..(r + 1) * d];
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.cols[k] as usize;
                let w = self.weights[k];
                for (o, &s) in dst.iter_mut().zip(&src[c * d..(c + 1) * d]) {
                    *o += w * s;
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.out_rows(), d], out))
    }

    fn apply_transpose(&self, grad: &Tensor) -> Tensor {
        let d = grad.shape()[1];
        let g = grad.data();
        let mut out = vec![0.0f32; self.in_rows * d];
        for r in 0..self.out_rows() {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.cols[k] as usize;
                let w = self.weights[k];
                for (o, &gv) in out[c * d..(c + 1) * d]
                    .iter_mut()
                    .zip(&g[r * d..(r + 1) * d])
                {
                    *o += w * gv;
                }
            }
        }
        Tensor::from_parts(vec![self.in_rows, d], out)
    }
}

struct SparseRowsOp(Arc<SparseRows>);

impl CustomOp for SparseRowsOp {
    fn name(&self) -> &'static str {
        "sparse_rows"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Vec<Option<Tensor>> {
        vec![Some(self.0.apply_transpose(grad))]
    }
}

impl Tape {
    /// Applies a fixed sparse row combination to a `[rows, D]` input.
    pub fn sparse_rows(&mut self, map: &Arc<SparseRows>, input: Var) -> Result<Var, TensorError> {
        let out = map.apply(self.value(input)?)?;
        self.custom(&[input], out, Box::new(SparseRowsOp(Arc::clone(map))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};

    #[test]
    fn gather_and_average() {
        let x = Tensor::new([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = SparseRows::gather(&[2, 0, 2], 3).unwrap();
        assert_eq!(g.apply(&x).unwrap().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let avg = SparseRows::from_rows(&[vec![(0, 0.5), (1, 0.5)]], 3).unwrap();
        assert_eq!(avg.apply(&x).unwrap().data(), &[2.0, 3.0]);
        assert!(SparseRows::gather(&[3], 3).is_err());
    }

    #[test]
    fn sparse_rows_gradient() {
        let map = Arc::new(
            SparseRows::from_rows(
                &[
                    vec![(0, 0.25), (2, -1.5)],
                    vec![(1, 2.0)],
                    vec![(2, 1.0), (2, 0.5)],
                ],
                3,
            )
            .unwrap(),
        );
        let x = Tensor::from_fn([3, 2], |i| (i as f32 * 0.7).cos());
        let report = grad_check(
            |t, v| {
                let y = t.sparse_rows(&map, v)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            },
            &x,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
