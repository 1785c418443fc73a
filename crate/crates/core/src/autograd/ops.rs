use std::sync::Arc;

use super::{gemm, Tape, Tensor, Var};

fn transpose_data(t: &Tensor) -> Tensor {
    let (m, n) = t.dims2();
    let src = t.data();
    Tensor::from_fn(vec![n, m], |i| {
        let (r, c) = (i / m, i % m);
        src[c * n + r]
    })
}

impl<'t> Var<'t> {
    fn unary(
        self,
        forward: impl Fn(f64) -> f64,
        // derivative expressed through input and output
        derivative: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| forward(v)).collect());
        let y = Arc::new(y);
        let y_keep = y.clone();
        let out = self.tape.op((*y).clone(), &[self], move || {
            Box::new(move |g, _| {
                let dx = x
                    .data()
                    .iter()
                    .zip(y_keep.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * derivative(xv, yv))
                    .collect();
                vec![Some(Tensor::new(g.shape().to_vec(), dx))]
            })
        });
        out
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let (m, k) = a.dims2();
        let (k2, n) = b.dims2();
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", a.shape(), b.shape());
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), k, 1, b.data(), n, 1, 0.0, &mut c);
        self.tape.op(Tensor::new(vec![m, n], c), &[self, other], move || {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    // g [m,n] x b^T [n,k]
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), n, 1, b.data(), 1, n, 0.0, &mut da);
                    Tensor::new(vec![m, k], da)
                });
                let db = needs[1].then(|| {
                    // a^T [k,m] x g [m,n]
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), 1, k, g.data(), n, 1, 0.0, &mut db);
                    Tensor::new(vec![k, n], db)
                });
                vec![da, db]
            })
        })
    }

    pub fn transpose(self) -> Var<'t> {
        let x = self.value();
        self.tape.op(transpose_data(&x), &[self], || {
            Box::new(|g, _| vec![Some(transpose_data(g))])
        })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.tape.op(Tensor::new(a.shape().to_vec(), data), &[self, other], || {
            Box::new(|g, needs| {
                vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
            })
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.tape.op(Tensor::new(a.shape().to_vec(), data), &[self, other], move || {
            Box::new(move |g, needs| {
                let prod = |t: &Tensor| {
                    let d = g.data().iter().zip(t.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(g.shape().to_vec(), d)
                };
                vec![needs[0].then(|| prod(&b)), needs[1].then(|| prod(&a))]
            })
        })
    }

    /// Adds `other` tiled over the leading elements of `self`
    /// (e.g. a `[n]` bias over the rows of an `[m, n]` matrix).
    pub fn add_bcast(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let period = b.len();
        assert!(
            period > 0 && a.len().is_multiple_of(period),
            "cannot broadcast {:?} over {:?}",
            b.shape(),
            a.shape()
        );
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b.data()[i % period])
            .collect();
        let b_shape = b.shape().to_vec();
        self.tape.op(Tensor::new(a.shape().to_vec(), data), &[self, other], move || {
            Box::new(move |g, needs| {
                let db = needs[1].then(|| {
                    let mut acc = vec![0.0; period];
                    for (i, v) in g.data().iter().enumerate() {
                        acc[i % period] += v;
                    }
                    Tensor::new(b_shape.clone(), acc)
                });
                vec![needs[0].then(|| g.clone()), db]
            })
        })
    }

    /// Multiplies by `other` tiled over the leading elements of `self`.
    pub fn mul_bcast(self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let period = b.len();
        assert!(
            period > 0 && a.len().is_multiple_of(period),
            "cannot broadcast {:?} over {:?}",
            b.shape(),
            a.shape()
        );
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * b.data()[i % period])
            .collect();
        self.tape.op(Tensor::new(a.shape().to_vec(), data), &[self, other], move || {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * b.data()[i % period])
                        .collect();
                    Tensor::new(a.shape().to_vec(), d)
                });
                let db = needs[1].then(|| {
                    let mut acc = vec![0.0; period];
                    for (i, (gv, av)) in g.data().iter().zip(a.data()).enumerate() {
                        acc[i % period] += gv * av;
                    }
                    Tensor::new(b.shape().to_vec(), acc)
                });
                vec![da, db]
            })
        })
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let x = self.value();
        let data = x.data().iter().map(|v| v * factor).collect();
        self.tape.op(Tensor::new(x.shape().to_vec(), data), &[self], move || {
            Box::new(move |g, _| {
                let d = g.data().iter().map(|v| v * factor).collect();
                vec![Some(Tensor::new(g.shape().to_vec(), d))]
            })
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(|v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    /// Softmax over the last axis of a 2-D value. Columns with `mask[j] ==
    /// false` get probability exactly zero and receive no gradient.
    pub fn softmax_rows(self, mask: Option<&[bool]>) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        if let Some(mask) = mask {
            assert_eq!(mask.len(), cols, "softmax mask length");
            assert!(mask.iter().any(|&m| m), "softmax mask excludes every column");
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = x.row(r);
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..cols {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    y[r * cols + j] = e;
                    total += e;
                }
            }
            for v in &mut y[r * cols..(r + 1) * cols] {
                *v /= total;
            }
        }
        let y = Arc::new(Tensor::new(vec![rows, cols], y));
        let y_keep = y.clone();
        self.tape.op((*y).clone(), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y_keep.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dx[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(Tensor::new(vec![rows, cols], dx))]
            })
        })
    }

    /// Per-row standardization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(self, eps: f64) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        let mut y = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for j in 0..cols {
                y[r * cols + j] = (row[j] - mean) * s;
            }
        }
        let y = Arc::new(Tensor::new(vec![rows, cols], y));
        let y_keep = y.clone();
        self.tape.op((*y).clone(), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y_keep.row(r);
                    let gr = g.row(r);
                    let g_mean = gr.iter().sum::<f64>() / cols as f64;
                    let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        dx[r * cols + j] = inv_std[r] * (gr[j] - g_mean - yr[j] * gy_mean);
                    }
                }
                vec![Some(Tensor::new(vec![rows, cols], dx))]
            })
        })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'t> {
        let x = self.value();
        let from = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        self.tape.op(out, &[self], move || {
            Box::new(move |g, _| vec![Some(g.clone().reshape(from.clone()))])
        })
    }

    /// Columns `[start, end)` of a 2-D value.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        assert!(start < end && end <= cols, "column slice {start}..{end} of {cols}");
        let width = end - start;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&x.row(r)[start..end]);
        }
        self.tape.op(Tensor::new(vec![rows, width], out), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + end].copy_from_slice(g.row(r));
                }
                vec![Some(Tensor::new(vec![rows, cols], dx))]
            })
        })
    }

    /// Rows `[start, end)` of a 2-D value.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let (rows, cols) = x.dims2();
        assert!(start < end && end <= rows, "row slice {start}..{end} of {rows}");
        let out = x.data()[start * cols..end * cols].to_vec();
        self.tape.op(Tensor::new(vec![end - start, cols], out), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * cols];
                dx[start * cols..end * cols].copy_from_slice(g.data());
                vec![Some(Tensor::new(vec![rows, cols], dx))]
            })
        })
    }

    /// Rows of a `[vocab, dim]` table selected by `ids`.
    pub fn gather_rows(self, ids: &[usize]) -> Var<'t> {
        let table = self.value();
        let (rows, cols) = table.dims2();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < rows, "row {id} out of range for table of {rows}");
            out.extend_from_slice(table.row(id));
        }
        let ids = ids.to_vec();
        self.tape.op(Tensor::new(vec![ids.len(), cols], out), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * cols];
                for (i, &id) in ids.iter().enumerate() {
                    for (d, v) in dx[id * cols..(id + 1) * cols].iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                vec![Some(Tensor::new(vec![rows, cols], dx))]
            })
        })
    }

    pub fn sum_all(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape.op(Tensor::scalar(x.sum()), &[self], move || {
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0]))])
        })
    }

    /// `-ln(max(p[target], eps))` for a probability vector.
    pub fn neg_log_prob(self, target: usize, eps: f64) -> Var<'t> {
        let p = self.value();
        assert!(target < p.len(), "target {target} out of range {}", p.len());
        let pt = p.data()[target];
        let clamped = pt.max(eps);
        let shape = p.shape().to_vec();
        self.tape.op(Tensor::scalar(-clamped.ln()), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(shape.clone());
                if pt > eps {
                    dx.data_mut()[target] = -g.data()[0] / pt;
                }
                vec![Some(dx)]
            })
        })
    }

    /// 2-D convolution over NHWC input `[b, h, w, c_in]` with a weight laid out
    /// as `[k * k * c_in, c_out]` (row index `(ky * k + kx) * c_in + c`) and a
    /// `[c_out]` bias. Output is `[b, h_out, w_out, c_out]`.
    pub fn conv2d(
        self,
        weight: Var<'t>,
        bias: Var<'t>,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let shape = x.shape().to_vec();
        assert_eq!(shape.len(), 4, "conv2d expects NHWC input");
        let (b, h, wd, c) = (shape[0], shape[1], shape[2], shape[3]);
        let (patch, c_out) = w.dims2();
        assert_eq!(patch, kernel * kernel * c, "conv2d weight shape");
        assert_eq!(bias.value().len(), c_out, "conv2d bias shape");
        assert!(h + 2 * padding >= kernel && wd + 2 * padding >= kernel);
        let ho = (h + 2 * padding - kernel) / stride + 1;
        let wo = (wd + 2 * padding - kernel) / stride + 1;
        let positions = b * ho * wo;

        let mut cols = vec![0.0; positions * patch];
        for n in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((n * ho + oy) * wo + ox) * patch;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let src = ((n * h + iy as usize) * wd + ix as usize) * c;
                            let dst = row + (ky * kernel + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; positions * c_out];
        gemm(positions, patch, c_out, &cols, patch, 1, w.data(), c_out, 1, 0.0, &mut out);
        let bias_v = bias.value();
        for row in out.chunks_mut(c_out) {
            for (o, bv) in row.iter_mut().zip(bias_v.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(vec![b, ho, wo, c_out], out);
        self.tape.op(out, &[self, weight, bias], move || {
            let cols = Arc::new(cols);
            Box::new(move |g, needs| {
                let gd = g.data();
                let dx = needs[0].then(|| {
                    let mut dcols = vec![0.0; positions * patch];
                    gemm(positions, c_out, patch, gd, c_out, 1, w.data(), 1, c_out, 0.0, &mut dcols);
                    let mut dx = vec![0.0; b * h * wd * c];
                    for n in 0..b {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let row = ((n * ho + oy) * wo + ox) * patch;
                                for ky in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kernel {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        let dst = ((n * h + iy as usize) * wd + ix as usize) * c;
                                        let src = row + (ky * kernel + kx) * c;
                                        for ch in 0..c {
                                            dx[dst + ch] += dcols[src + ch];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Tensor::new(vec![b, h, wd, c], dx)
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0; patch * c_out];
                    gemm(patch, positions, c_out, &cols, 1, patch, gd, c_out, 1, 0.0, &mut dw);
                    Tensor::new(vec![patch, c_out], dw)
                });
                let db = needs[2].then(|| {
                    let mut db = vec![0.0; c_out];
                    for row in gd.chunks(c_out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    Tensor::new(vec![c_out], db)
                });
                vec![dx, dw, db]
            })
        })
    }

    /// Adaptive average pooling of NHWC input `[b, h, w, c]` onto an
    /// `out_h x out_w` grid, returned as `[b * out_h * out_w, c]` rows.
    pub fn adaptive_avg_pool(self, out_h: usize, out_w: usize) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert_eq!(shape.len(), 4, "adaptive_avg_pool expects NHWC input");
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        // bin i covers [floor(i*h/out), ceil((i+1)*h/out))
        let bins = |size: usize, out: usize| -> Vec<(usize, usize)> {
            (0..out)
                .map(|i| ((i * size) / out, ((i + 1) * size).div_ceil(out)))
                .collect()
        };
        let ybins = bins(h, out_h);
        let xbins = bins(w, out_w);
        let cells = out_h * out_w;
        let mut out = vec![0.0; b * cells * c];
        for n in 0..b {
            for (oy, &(y0, y1)) in ybins.iter().enumerate() {
                for (ox, &(x0, x1)) in xbins.iter().enumerate() {
                    let dst = (n * cells + oy * out_w + ox) * c;
                    let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            let src = ((n * h + iy) * w + ix) * c;
                            for ch in 0..c {
                                out[dst + ch] += x.data()[src + ch] * inv;
                            }
                        }
                    }
                }
            }
        }
        self.tape.op(Tensor::new(vec![b * cells, c], out), &[self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![0.0; b * h * w * c];
                for n in 0..b {
                    for (oy, &(y0, y1)) in ybins.iter().enumerate() {
                        for (ox, &(x0, x1)) in xbins.iter().enumerate() {
                            let src = (n * cells + oy * out_w + ox) * c;
                            let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    let dst = ((n * h + iy) * w + ix) * c;
                                    for ch in 0..c {
                                        dx[dst + ch] += g.data()[src + ch] * inv;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(vec![b, h, w, c], dx))]
            })
        })
    }
}

impl Tape {
    /// Stacks 2-D values with equal column counts vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].dims2().1;
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for v in &values {
            let (r, c) = v.dims2();
            assert_eq!(c, cols, "concat_rows column mismatch");
            rows.push(r);
            data.extend_from_slice(v.data());
        }
        let total: usize = rows.iter().sum();
        self.op(Tensor::new(vec![total, cols], data), parts, move || {
            Box::new(move |g, needs| {
                let mut offset = 0;
                rows.iter()
                    .zip(needs)
                    .map(|(&r, &need)| {
                        let start = offset;
                        offset += r;
                        need.then(|| {
                            Tensor::new(vec![r, cols], g.data()[start * cols..offset * cols].to_vec())
                        })
                    })
                    .collect()
            })
        })
    }

    /// Joins 2-D values with equal row counts side by side.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].dims2().0;
        let widths: Vec<usize> = values
            .iter()
            .map(|v| {
                let (r, c) = v.dims2();
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        self.op(Tensor::new(vec![rows, total], data), parts, move || {
            Box::new(move |g, needs| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&wdt, &need)| {
                        let s = start;
                        start += wdt;
                        need.then(|| {
                            let mut d = Vec::with_capacity(rows * wdt);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[s..s + wdt]);
                            }
                            Tensor::new(vec![rows, wdt], d)
                        })
                    })
                    .collect()
            })
        })
    }
}
