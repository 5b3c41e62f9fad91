//! Forward ops and their backward rules.
//!
//! Shape preconditions panic with messages naming the offending shapes.
//! Every op that can feed a loss registers a closure computing the
//! vector-Jacobian product into its parents.

use super::Tensor;

impl Tensor {
    // ── elementwise binary ───────────────────────────────────────────

    pub fn add(&self, other: &Tensor) -> Tensor {
        elementwise_binary(self, other, "add", |a, b| a + b, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        elementwise_binary(self, other, "sub", |a, b| a - b, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        elementwise_binary(self, other, "mul", |a, b| a * b, |g, _, b| g * b, |g, a, _| g * a)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        elementwise_binary(
            self,
            other,
            "div",
            |a, b| a / b,
            |g, _, b| g / b,
            |g, a, b| -g * a / (b * b),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    // ── scalar broadcast ─────────────────────────────────────────────

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x + c).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| parent.accumulate_grad(g)),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x * c).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    // ── matrix ops ───────────────────────────────────────────────────

    /// Standard matrix product. Gradient rules dA = dC·Bᵀ, dB = Aᵀ·dC.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(
            self.shape().len() == 2 && other.shape().len() == 2 && self.shape()[1] == other.shape()[0],
            "matmul dimension mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let a = self.to_vec();
        let b = other.to_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aik = a[i * k + p];
                if aik == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.tracked() {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * b[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    pa.accumulate_grad(&da);
                }
                if pb.tracked() {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aik = a[i * k + p];
                            if aik == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                drow[j] += aik * grow[j];
                            }
                        }
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        )
    }

    pub fn transpose(&self) -> Tensor {
        assert!(
            self.shape().len() == 2,
            "transpose expects a matrix, got {:?}",
            self.shape()
        );
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let a = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        drop(a);
        let parent = self.clone();
        Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                parent.accumulate_grad(&da);
            }),
        )
    }

    // ── unary maps ───────────────────────────────────────────────────

    pub fn exp(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.exp()).collect();
        let saved = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g.iter().zip(&saved).map(|(gi, y)| gi * y).collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn ln(&self) -> Tensor {
        let x = self.to_vec();
        let out: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g.iter().zip(&x).map(|(gi, v)| gi / v).collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.sqrt()).collect();
        let saved = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g.iter().zip(&saved).map(|(gi, y)| 0.5 * gi / y).collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        let saved = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(&saved)
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let saved = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(&saved)
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let x = self.to_vec();
        let out: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(&x)
                    .map(|(gi, &v)| if v > 0.0 { *gi } else { gi * slope })
                    .collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let x = self.to_vec();
        let out: Vec<f64> = x.iter().map(|v| v.clamp(lo, hi)).collect();
        let parent = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(&x)
                    .map(|(gi, &v)| if v > lo && v < hi { *gi } else { 0.0 })
                    .collect();
                parent.accumulate_grad(&delta);
            }),
        )
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        let parent = self.clone();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| {
                parent.accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    // ── softmax ──────────────────────────────────────────────────────

    /// Column-wise softmax of `scale * x`, stabilized by per-column max
    /// subtraction. Every column of the result sums to 1.
    pub fn softmax_columns(&self, scale: f64) -> Tensor {
        assert!(
            self.shape().len() == 2,
            "softmax_columns expects a matrix, got {:?}",
            self.shape()
        );
        assert!(scale > 0.0, "softmax_columns scale must be positive, got {scale}");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        assert!(
            x.iter().all(|v| v.is_finite()),
            "numeric error: non-finite input to softmax_columns"
        );
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            let mut m = f64::NEG_INFINITY;
            for i in 0..r {
                m = m.max(x[i * c + j]);
            }
            let mut denom = 0.0;
            for i in 0..r {
                let e = (scale * (x[i * c + j] - m)).exp();
                out[i * c + j] = e;
                denom += e;
            }
            for i in 0..r {
                out[i * c + j] /= denom;
            }
        }
        drop(x);
        let saved = out.clone();
        let parent = self.clone();
        Tensor::from_op(
            vec![r, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut delta = vec![0.0; r * c];
                for j in 0..c {
                    let mut dot = 0.0;
                    for i in 0..r {
                        dot += g[i * c + j] * saved[i * c + j];
                    }
                    for i in 0..r {
                        delta[i * c + j] = scale * saved[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                parent.accumulate_grad(&delta);
            }),
        )
    }

    /// Row-wise softmax of `scale * x`; every row of the result sums to 1.
    pub fn softmax_rows(&self, scale: f64) -> Tensor {
        self.transpose().softmax_columns(scale).transpose()
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let new_numel: usize = shape.iter().product();
        assert_eq!(
            new_numel,
            self.numel(),
            "reshape element count mismatch: {:?} -> {:?}",
            self.shape(),
            shape
        );
        let parent = self.clone();
        Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| parent.accumulate_grad(g)),
        )
    }

    /// Concatenate along axis 0. All trailing dims must match; row-major
    /// layout makes this plain buffer concatenation.
    pub fn concat0(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat0 of zero tensors");
        let tail = &parts[0].shape()[1..];
        let mut dim0 = 0;
        for p in parts {
            assert_eq!(
                &p.shape()[1..],
                tail,
                "concat0 trailing shape mismatch: {:?} vs {:?}",
                p.shape(),
                parts[0].shape()
            );
            dim0 += p.shape()[0];
        }
        let mut shape = vec![dim0];
        shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let closure_parents = owned.clone();
        Tensor::from_op(
            shape,
            data,
            owned,
            Box::new(move |g| {
                let mut offset = 0;
                for (p, &sz) in closure_parents.iter().zip(&sizes) {
                    if p.tracked() {
                        p.accumulate_grad(&g[offset..offset + sz]);
                    }
                    offset += sz;
                }
            }),
        )
    }

    /// Contiguous slice `[start, start+len)` along axis 0.
    pub fn narrow0(&self, start: usize, len: usize) -> Tensor {
        assert!(
            start + len <= self.shape()[0],
            "narrow0 range {}..{} out of bounds for shape {:?}",
            start,
            start + len,
            self.shape()
        );
        let stride: usize = self.shape()[1..].iter().product();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let data = self.data()[start * stride..(start + len) * stride].to_vec();
        let parent = self.clone();
        let total = self.numel();
        Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; total];
                da[start * stride..(start + len) * stride].copy_from_slice(g);
                parent.accumulate_grad(&da);
            }),
        )
    }

    /// Stack 1-D tensors of length r as the columns of an r×n matrix.
    pub fn stack_cols(cols: &[&Tensor]) -> Tensor {
        assert!(!cols.is_empty(), "stack_cols of zero tensors");
        let r = cols[0].numel();
        let n = cols.len();
        for c in cols {
            assert_eq!(
                c.numel(),
                r,
                "stack_cols length mismatch: {:?} vs {:?}",
                c.shape(),
                cols[0].shape()
            );
        }
        let mut data = vec![0.0; r * n];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.data().iter().enumerate() {
                data[i * n + j] = v;
            }
        }
        let owned: Vec<Tensor> = cols.iter().map(|c| (*c).clone()).collect();
        let closure_parents = owned.clone();
        Tensor::from_op(
            vec![r, n],
            data,
            owned,
            Box::new(move |g| {
                for (j, p) in closure_parents.iter().enumerate() {
                    if p.tracked() {
                        let dcol: Vec<f64> = (0..r).map(|i| g[i * n + j]).collect();
                        p.accumulate_grad(&dcol);
                    }
                }
            }),
        )
    }

    /// Column j of a matrix as a 1-D tensor.
    pub fn col(&self, j: usize) -> Tensor {
        assert!(
            self.shape().len() == 2 && j < self.shape()[1],
            "col {} out of bounds for shape {:?}",
            j,
            self.shape()
        );
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data: Vec<f64> = {
            let d = self.data();
            (0..r).map(|i| d[i * c + j]).collect()
        };
        let parent = self.clone();
        Tensor::from_op(
            vec![r],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + j] = g[i];
                }
                parent.accumulate_grad(&da);
            }),
        )
    }

    /// Row i of a matrix as a 1-D tensor (embedding lookup). The gradient
    /// scatters back into that row only.
    pub fn row(&self, i: usize) -> Tensor {
        assert!(
            self.shape().len() == 2 && i < self.shape()[0],
            "row {} out of bounds for shape {:?}",
            i,
            self.shape()
        );
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = self.data()[i * c..(i + 1) * c].to_vec();
        let parent = self.clone();
        Tensor::from_op(
            vec![c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut da = vec![0.0; r * c];
                da[i * c..(i + 1) * c].copy_from_slice(g);
                parent.accumulate_grad(&da);
            }),
        )
    }

    // ── spatial ops ──────────────────────────────────────────────────

    /// 2-D convolution of a [C,H,W] input with an [O,C,kh,kw] kernel.
    /// Zero padding, square stride.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert!(
            self.shape().len() == 3 && kernel.shape().len() == 4 && self.shape()[0] == kernel.shape()[1],
            "conv2d shape mismatch: input {:?} kernel {:?}",
            self.shape(),
            kernel.shape()
        );
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let (ci, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (co, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
        assert!(
            h + 2 * pad >= kh && w + 2 * pad >= kw,
            "conv2d kernel {:?} larger than padded input {:?}",
            kernel.shape(),
            self.shape()
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let x = self.to_vec();
        let k = kernel.to_vec();
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for i in 0..kh {
                            let u = (y * stride + i) as isize - pad as isize;
                            if u < 0 || u >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let v = (xx * stride + j) as isize - pad as isize;
                                if v < 0 || v >= w as isize {
                                    continue;
                                }
                                acc += k[((o * ci + c) * kh + i) * kw + j]
                                    * x[(c * h + u as usize) * w + v as usize];
                            }
                        }
                    }
                    out[(o * ho + y) * wo + xx] = acc;
                }
            }
        }
        let (px, pk) = (self.clone(), kernel.clone());
        Tensor::from_op(
            vec![co, ho, wo],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g| {
                let need_x = px.tracked();
                let need_k = pk.tracked();
                let mut dx = if need_x { vec![0.0; ci * h * w] } else { Vec::new() };
                let mut dk = if need_k { vec![0.0; co * ci * kh * kw] } else { Vec::new() };
                for o in 0..co {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let go = g[(o * ho + y) * wo + xx];
                            if go == 0.0 {
                                continue;
                            }
                            for c in 0..ci {
                                for i in 0..kh {
                                    let u = (y * stride + i) as isize - pad as isize;
                                    if u < 0 || u >= h as isize {
                                        continue;
                                    }
                                    for j in 0..kw {
                                        let v = (xx * stride + j) as isize - pad as isize;
                                        if v < 0 || v >= w as isize {
                                            continue;
                                        }
                                        let xi = (c * h + u as usize) * w + v as usize;
                                        let ki = ((o * ci + c) * kh + i) * kw + j;
                                        if need_k {
                                            dk[ki] += go * x[xi];
                                        }
                                        if need_x {
                                            dx[xi] += go * k[ki];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    px.accumulate_grad(&dx);
                }
                if need_k {
                    pk.accumulate_grad(&dk);
                }
            }),
        )
    }

    /// Add a per-channel bias to a [C,H,W] map.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Tensor {
        assert!(
            self.shape().len() == 3 && bias.shape() == [self.shape()[0]],
            "add_channel_bias shape mismatch: map {:?} bias {:?}",
            self.shape(),
            bias.shape()
        );
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let b = bias.to_vec();
        let mut out = self.to_vec();
        for ch in 0..c {
            for p in 0..hw {
                out[ch * hw + p] += b[ch];
            }
        }
        let (px, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                if px.tracked() {
                    px.accumulate_grad(g);
                }
                if pb.tracked() {
                    let mut db = vec![0.0; c];
                    for ch in 0..c {
                        db[ch] = g[ch * hw..(ch + 1) * hw].iter().sum();
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        )
    }

    /// Nearest-neighbor 2x upsample of a [C,H,W] map.
    pub fn upsample_nearest2x(&self) -> Tensor {
        assert!(
            self.shape().len() == 3,
            "upsample_nearest2x expects [C,H,W], got {:?}",
            self.shape()
        );
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let x = self.data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = x[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        drop(x);
        let parent = self.clone();
        Tensor::from_op(
            vec![c, h2, w2],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * h2 + y) * w2 + xx];
                        }
                    }
                }
                parent.accumulate_grad(&dx);
            }),
        )
    }

    /// Per-channel spatial mean of a [C,H,W] map.
    pub fn global_avg_pool(&self) -> Tensor {
        assert!(
            self.shape().len() == 3,
            "global_avg_pool expects [C,H,W], got {:?}",
            self.shape()
        );
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let x = self.data();
        let out: Vec<f64> = (0..c)
            .map(|ch| x[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        drop(x);
        let parent = self.clone();
        Tensor::from_op(
            vec![c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; c * hw];
                for ch in 0..c {
                    let share = g[ch] / hw as f64;
                    for p in 0..hw {
                        dx[ch * hw + p] = share;
                    }
                }
                parent.accumulate_grad(&dx);
            }),
        )
    }

    /// Broadcast a length-D vector across an H×W grid, giving [D,H,W].
    pub fn replicate_spatial(&self, h: usize, w: usize) -> Tensor {
        assert!(
            self.shape().len() == 1,
            "replicate_spatial expects a vector, got {:?}",
            self.shape()
        );
        let d = self.numel();
        let x = self.data();
        let hw = h * w;
        let mut out = vec![0.0; d * hw];
        for ch in 0..d {
            for p in 0..hw {
                out[ch * hw + p] = x[ch];
            }
        }
        drop(x);
        let parent = self.clone();
        Tensor::from_op(
            vec![d, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let dv: Vec<f64> = (0..d)
                    .map(|ch| g[ch * hw..(ch + 1) * hw].iter().sum())
                    .collect();
                parent.accumulate_grad(&dv);
            }),
        )
    }

    // ── composites ───────────────────────────────────────────────────

    pub fn dot(&self, other: &Tensor) -> Tensor {
        self.mul(other).sum()
    }

    /// Euclidean norm as a scalar tensor.
    pub fn norm(&self) -> Tensor {
        self.mul(self).sum().sqrt()
    }
}

impl std::ops::Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        Tensor::add(self, rhs)
    }
}

impl std::ops::Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        Tensor::sub(self, rhs)
    }
}

impl std::ops::Mul for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: &Tensor) -> Tensor {
        Tensor::mul(self, rhs)
    }
}

fn elementwise_binary(
    a: &Tensor,
    b: &Tensor,
    name: &str,
    f: fn(f64, f64) -> f64,
    da: fn(f64, f64, f64) -> f64,
    db: fn(f64, f64, f64) -> f64,
) -> Tensor {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{name} shape mismatch: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let av = a.to_vec();
    let bv = b.to_vec();
    let out: Vec<f64> = av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.tracked() {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(&gi, (&x, &y))| da(gi, x, y))
                    .collect();
                pa.accumulate_grad(&delta);
            }
            if pb.tracked() {
                let delta: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(&gi, (&x, &y))| db(gi, x, y))
                    .collect();
                pb.accumulate_grad(&delta);
            }
        }),
    )
}
