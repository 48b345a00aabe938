//! Reverse-mode gradient tape.
//!
//! Every op appends one node holding its forward value plus whatever context
//! its backward rule needs. `backward` walks nodes in exact reverse execution
//! order and accumulates parent gradients additively, so a tensor used in two
//! places (the tied embedding matrix in particular) receives the sum of both
//! contributions. Parameters are registered leaves; everything else is a
//! constant leaf with no gradient slot of interest.

use super::{matmul_nn, matmul_nt, matmul_tn, strides, Elem, Tensor};
use crate::error::{CokeError, Result};
use rand::Rng;

/// Handle to a value on the tape.
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct Var(usize);

enum Op<E> {
    Leaf,
    /// b broadcast against the trailing axes of a.
    Add { a: Var, b: Var },
    /// Elementwise product, same shape.
    Mul { a: Var, b: Var },
    /// x[..., k] · w[k, n]
    Linear { x: Var, w: Var },
    /// Batched matmul with identical leading dims: [.., m, k] · [.., k, n].
    Bmm { a: Var, b: Var },
    /// Row gather: table[V, d] by flat ids, reshaped to out_shape.
    Lookup { table: Var, ids: Vec<u32> },
    /// Softmax over the last axis.
    Softmax { x: Var },
    /// Normalize over the last axis, then scale and shift.
    LayerNorm { x: Var, gain: Var, bias: Var },
    Gelu { x: Var },
    /// Elementwise multiplier: 0 for dropped units, 1/(1-rate) for kept ones.
    Dropout { x: Var, mult: Vec<E> },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    /// Fill positions where keep=false with a constant; gradient passes kept slots.
    MaskedFill { x: Var, keep: Vec<bool> },
    Scale { x: Var, c: f64 },
    /// rows[b] selects one K-row of x[B, K, d] per batch element.
    GatherRows { x: Var, rows: Vec<usize> },
    /// z[B, d] · (first `rows` rows of table[V, d])ᵀ → [B, rows].
    TiedLogits { z: Var, table: Var, rows: usize },
    /// Mean over batch of -Σ_t y_t·log(max(p_t, floor)) with the smoothed
    /// label y: eps at the target, (1-eps)/(V-1) elsewhere.
    SmoothedNll {
        probs: Var,
        targets: Vec<u32>,
        eps: f64,
        floor: f64,
    },
    SumAll { x: Var },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Records one forward pass; consumed by a single `backward`.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    params: Vec<Var>,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives a gradient slot but is not a parameter.
    pub fn leaf(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registered trainable parameter. Registration order defines the
    /// gradient output order of `param_grads`.
    pub fn param(&mut self, t: Tensor<E>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.params.push(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    // ---- forward ops ----

    /// a + b where b's shape equals the trailing axes of a's shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(self.shape_err("add", a, b));
        }
        let bn = self.nodes[b.0].value.numel().max(1);
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let data: Vec<E> = av
            .iter()
            .enumerate()
            .map(|(i, x)| E::from_f64(x.to_f64() + bv[i % bn].to_f64()))
            .collect();
        let t = Tensor {
            shape: sa.to_vec(),
            data,
        };
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let data: Vec<E> = av
            .iter()
            .zip(bv.iter())
            .map(|(x, y)| E::from_f64(x.to_f64() * y.to_f64()))
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(t, Op::Mul { a, b }))
    }

    /// x[..., k] · w[k, n] → [..., n]; leading axes of x flattened internally.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(self.shape_err("linear", x, w));
        }
        let k = sw[0];
        let n = sw[1];
        let m = self.nodes[x.0].value.numel() / k;
        let data = matmul_nn(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            m,
            k,
            n,
        );
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor { shape, data }, Op::Linear { x, w }))
    }

    /// Batched matmul: a[.., m, k] · b[.., k, n] with identical leading dims.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == sb.len()
            && sa.len() >= 2
            && sa[..sa.len() - 2] == sb[..sb.len() - 2]
            && sa[sa.len() - 1] == sb[sb.len() - 2];
        if !ok {
            return Err(self.shape_err("bmm", a, b));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let batches: usize = sa[..sa.len() - 2].iter().product();
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut data = Vec::with_capacity(batches * m * n);
        for t in 0..batches {
            data.extend(matmul_nn(
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        Ok(self.push(Tensor { shape, data }, Op::Bmm { a, b }))
    }

    /// Gather rows of table[V, d]; output shape is out_lead + [d].
    pub fn lookup(&mut self, table: Var, ids: &[u32], out_lead: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(self.shape_err("lookup", table, table));
        }
        let (v, d) = (st[0], st[1]);
        let lead: usize = out_lead.iter().product();
        if lead != ids.len() {
            return Err(CokeError::Shape {
                op: "lookup",
                lhs: out_lead.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let tv = self.nodes[table.0].value.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(CokeError::UnknownId(id as u32));
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let mut shape = out_lead.to_vec();
        shape.push(d);
        Ok(self.push(
            Tensor { shape, data },
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Softmax over the last axis; each output row sums to one.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.is_empty() {
            return Err(self.shape_err("softmax", x, x));
        }
        let d = sx[sx.len() - 1];
        let xv = self.nodes[x.0].value.data();
        let mut data = vec![E::ZERO; xv.len()];
        for (row_out, row_in) in data.chunks_mut(d).zip(xv.chunks(d)) {
            let max = row_in
                .iter()
                .map(|v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0f64;
            let mut exps = vec![0f64; d];
            for (e, v) in exps.iter_mut().zip(row_in.iter()) {
                *e = (v.to_f64() - max).exp();
                sum += *e;
            }
            for (o, e) in row_out.iter_mut().zip(exps.iter()) {
                *o = E::from_f64(e / sum);
            }
        }
        Ok(self.push(Tensor { shape: sx, data }, Op::Softmax { x }))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| self.shape_err("layer_norm", x, x))?;
        if self.shape(gain) != [d] {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        if self.shape(bias) != [d] {
            return Err(self.shape_err("layer_norm", x, bias));
        }
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gain.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut data = vec![E::ZERO; xv.len()];
        for (row_out, row_in) in data.chunks_mut(d).zip(xv.chunks(d)) {
            let (mean, inv_std) = row_stats(row_in);
            for ((o, v), (g, b)) in row_out
                .iter_mut()
                .zip(row_in.iter())
                .zip(gv.iter().zip(bv.iter()))
            {
                let xhat = (v.to_f64() - mean) * inv_std;
                *o = E::from_f64(xhat * g.to_f64() + b.to_f64());
            }
        }
        Ok(self.push(Tensor { shape: sx, data }, Op::LayerNorm { x, gain, bias }))
    }

    /// GELU, tanh approximation:
    /// 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.nodes[x.0].value.data();
        let data: Vec<E> = xv.iter().map(|v| E::from_f64(gelu_f64(v.to_f64()))).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(t, Op::Gelu { x }))
    }

    /// Inverted dropout: kept units scale by 1/(1-rate) during training;
    /// identity when rate is 0 or train is false.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(CokeError::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if !train || rate == 0.0 {
            let t = self.nodes[x.0].value.clone();
            return Ok(self.push(t, Op::Reshape { x }));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let xv = self.nodes[x.0].value.data();
        let mut mult = Vec::with_capacity(xv.len());
        for _ in 0..xv.len() {
            let keep = rng.gen::<f64>() >= rate;
            mult.push(if keep { E::from_f64(keep_scale) } else { E::ZERO });
        }
        let data: Vec<E> = xv
            .iter()
            .zip(mult.iter())
            .map(|(v, m)| E::from_f64(v.to_f64() * m.to_f64()))
            .collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(t, Op::Dropout { x, mult }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].value.numel() {
            return Err(CokeError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: self.nodes[x.0].value.data().to_vec(),
        };
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Permute axes, materializing the result.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(CokeError::Shape {
                op: "permute",
                lhs: sx,
                rhs: axes.to_vec(),
            });
        }
        let value = permute_data(&self.nodes[x.0].value, axes);
        Ok(self.push(
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Where keep is false, replace with `fill` (−1e9 for attention masking
    /// rather than −∞, so softmax over a fully masked row stays finite).
    pub fn masked_fill(&mut self, x: Var, keep: &[bool], fill: E) -> Result<Var> {
        if keep.len() != self.nodes[x.0].value.numel() {
            return Err(CokeError::Shape {
                op: "masked_fill",
                lhs: self.shape(x).to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let xv = self.nodes[x.0].value.data();
        let data: Vec<E> = xv
            .iter()
            .zip(keep.iter())
            .map(|(v, &k)| if k { *v } else { fill })
            .collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(
            t,
            Op::MaskedFill {
                x,
                keep: keep.to_vec(),
            },
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.nodes[x.0].value.data();
        let data: Vec<E> = xv.iter().map(|v| E::from_f64(v.to_f64() * c)).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(t, Op::Scale { x, c }))
    }

    /// From x[B, K, d] select row rows[b] per batch element → [B, d].
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || rows.len() != sx[0] || rows.iter().any(|&r| r >= sx[1]) {
            return Err(CokeError::Shape {
                op: "gather_rows",
                lhs: sx,
                rhs: vec![rows.len()],
            });
        }
        let (k, d) = (sx[1], sx[2]);
        let xv = self.nodes[x.0].value.data();
        let mut data = Vec::with_capacity(sx[0] * d);
        for (b, &r) in rows.iter().enumerate() {
            let off = (b * k + r) * d;
            data.extend_from_slice(&xv[off..off + d]);
        }
        let t = Tensor {
            shape: vec![sx[0], d],
            data,
        };
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// z[B, d] · (first `rows` rows of table)ᵀ → [B, rows]. The same table
    /// storage serves input lookups and this classifier, so its gradient
    /// accumulates from both uses.
    pub fn tied_logits(&mut self, z: Var, table: Var, rows: usize) -> Result<Var> {
        let (sz, st) = (self.shape(z).to_vec(), self.shape(table).to_vec());
        if sz.len() != 2 || st.len() != 2 || sz[1] != st[1] || rows > st[0] {
            return Err(self.shape_err("tied_logits", z, table));
        }
        let (b, d) = (sz[0], sz[1]);
        let data = matmul_nt(
            self.nodes[z.0].value.data(),
            &self.nodes[table.0].value.data()[..rows * d],
            b,
            d,
            rows,
        );
        let t = Tensor {
            shape: vec![b, rows],
            data,
        };
        Ok(self.push(t, Op::TiedLogits { z, table, rows }))
    }

    /// Label-smoothed negative log-likelihood, mean over the batch.
    pub fn smoothed_nll(&mut self, probs: Var, targets: &[u32], eps: f64) -> Result<Var> {
        let sp = self.shape(probs).to_vec();
        if sp.len() != 2 || sp[0] != targets.len() {
            return Err(CokeError::Shape {
                op: "smoothed_nll",
                lhs: sp,
                rhs: vec![targets.len()],
            });
        }
        if !(0.0 < eps && eps <= 1.0) {
            return Err(CokeError::Config(format!(
                "label smoothing {eps} outside (0,1]"
            )));
        }
        let v = sp[1];
        if let Some(&t) = targets.iter().find(|&&t| t as usize >= v) {
            return Err(CokeError::UnknownId(t));
        }
        let floor = 1e-12;
        let other = if v > 1 { (1.0 - eps) / (v as f64 - 1.0) } else { 0.0 };
        let pv = self.nodes[probs.0].value.data();
        let mut total = 0f64;
        for (bi, row) in pv.chunks(v).enumerate() {
            let target = targets[bi] as usize;
            let mut row_loss = 0f64;
            for (j, p) in row.iter().enumerate() {
                let y = if j == target { eps } else { other };
                if y != 0.0 {
                    // a plain `max` would swallow NaN probabilities and hide
                    // a diverged forward pass from the non-finite-loss abort
                    let p = p.to_f64();
                    let guarded = if p < floor { floor } else { p };
                    row_loss -= y * guarded.ln();
                }
            }
            total += row_loss;
        }
        let loss = total / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(E::from_f64(loss)),
            Op::SmoothedNll {
                probs,
                targets: targets.to_vec(),
                eps,
                floor,
            },
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.nodes[x.0].value.data().iter().map(|v| v.to_f64()).sum();
        Ok(self.push(Tensor::scalar(E::from_f64(total)), Op::SumAll { x }))
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Fills gradient slots for every node
    /// the loss depends on; parameters not on any path keep a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(CokeError::Shape {
                op: "backward",
                lhs: self.nodes[loss.0].value.shape().to_vec(),
                rhs: vec![1],
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(
            self.nodes[loss.0].value.shape(),
            E::ONE,
        ));
        for id in (0..=loss.0).rev() {
            let g = match self.grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &g)?;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient of a node after `backward`; zeros if the loss never saw it.
    pub fn grad(&self, v: Var) -> Tensor<E> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    /// Gradients of all registered parameters, in registration order.
    pub fn param_grads(&self) -> Vec<Tensor<E>> {
        self.params.iter().map(|&p| self.grad(p)).collect()
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<E>) -> Result<()> {
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn propagate(&mut self, id: usize, g: &Tensor<E>) -> Result<()> {
        // Ops whose backward needs values borrow them immutably first, then
        // accumulate into parent slots.
        enum Delta<E> {
            None,
            One(Var, Tensor<E>),
            Two((Var, Tensor<E>), (Var, Tensor<E>)),
            Three((Var, Tensor<E>), (Var, Tensor<E>), (Var, Tensor<E>)),
        }
        let deltas = match &self.nodes[id].op {
            Op::Leaf => Delta::None,
            Op::Add { a, b } => {
                let bn = self.nodes[b.0].value.numel().max(1);
                let mut gb = vec![0f64; bn];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % bn] += v.to_f64();
                }
                let gb = Tensor {
                    shape: self.nodes[b.0].value.shape().to_vec(),
                    data: gb.into_iter().map(E::from_f64).collect(),
                };
                Delta::Two((*a, g.clone()), (*b, gb))
            }
            Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let ga: Vec<E> = g
                    .data()
                    .iter()
                    .zip(bv.iter())
                    .map(|(gv, v)| E::from_f64(gv.to_f64() * v.to_f64()))
                    .collect();
                let gb: Vec<E> = g
                    .data()
                    .iter()
                    .zip(av.iter())
                    .map(|(gv, v)| E::from_f64(gv.to_f64() * v.to_f64()))
                    .collect();
                Delta::Two(
                    (*a, Tensor { shape: self.nodes[a.0].value.shape().to_vec(), data: ga }),
                    (*b, Tensor { shape: self.nodes[b.0].value.shape().to_vec(), data: gb }),
                )
            }
            Op::Linear { x, w } => {
                let sw = self.nodes[w.0].value.shape().to_vec();
                let (k, n) = (sw[0], sw[1]);
                let m = self.nodes[x.0].value.numel() / k;
                let gx = matmul_nn(g.data(), &transpose2(self.nodes[w.0].value.data(), k, n), m, n, k);
                let gw = matmul_tn(self.nodes[x.0].value.data(), g.data(), m, k, n);
                Delta::Two(
                    (*x, Tensor { shape: self.nodes[x.0].value.shape().to_vec(), data: gx }),
                    (*w, Tensor { shape: sw, data: gw }),
                )
            }
            Op::Bmm { a, b } => {
                let sa = self.nodes[a.0].value.shape().to_vec();
                let sb = self.nodes[b.0].value.shape().to_vec();
                let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
                let batches: usize = sa[..sa.len() - 2].iter().product();
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let mut ga = Vec::with_capacity(av.len());
                let mut gb = Vec::with_capacity(bv.len());
                for t in 0..batches {
                    let gt = &g.data()[t * m * n..(t + 1) * m * n];
                    let at = &av[t * m * k..(t + 1) * m * k];
                    let bt = &bv[t * k * n..(t + 1) * k * n];
                    ga.extend(matmul_nt(gt, bt, m, n, k));
                    gb.extend(matmul_tn(at, gt, m, k, n));
                }
                Delta::Two(
                    (*a, Tensor { shape: sa, data: ga }),
                    (*b, Tensor { shape: sb, data: gb }),
                )
            }
            Op::Lookup { table, ids } => {
                let st = self.nodes[table.0].value.shape().to_vec();
                let d = st[1];
                let mut gt = vec![0f64; st[0] * d];
                for (i, &id) in ids.iter().enumerate() {
                    let dst = id as usize * d;
                    for j in 0..d {
                        gt[dst + j] += g.data()[i * d + j].to_f64();
                    }
                }
                Delta::One(
                    *table,
                    Tensor { shape: st, data: gt.into_iter().map(E::from_f64).collect() },
                )
            }
            Op::Softmax { x } => {
                let d = *self.nodes[id].value.shape().last().unwrap();
                let y = self.nodes[id].value.data();
                let mut gx = vec![E::ZERO; y.len()];
                for ((gx_row, y_row), g_row) in
                    gx.chunks_mut(d).zip(y.chunks(d)).zip(g.data().chunks(d))
                {
                    let dot: f64 = y_row
                        .iter()
                        .zip(g_row.iter())
                        .map(|(yv, gv)| yv.to_f64() * gv.to_f64())
                        .sum();
                    for ((o, yv), gv) in gx_row.iter_mut().zip(y_row.iter()).zip(g_row.iter()) {
                        *o = E::from_f64(yv.to_f64() * (gv.to_f64() - dot));
                    }
                }
                Delta::One(*x, Tensor { shape: self.nodes[id].value.shape().to_vec(), data: gx })
            }
            Op::LayerNorm { x, gain, bias } => {
                let sx = self.nodes[x.0].value.shape().to_vec();
                let d = *sx.last().unwrap();
                let xv = self.nodes[x.0].value.data();
                let gv = self.nodes[gain.0].value.data();
                let mut gx = vec![E::ZERO; xv.len()];
                let mut ggain = vec![0f64; d];
                let mut gbias = vec![0f64; d];
                for ((gx_row, x_row), g_row) in
                    gx.chunks_mut(d).zip(xv.chunks(d)).zip(g.data().chunks(d))
                {
                    let (mean, inv_std) = row_stats(x_row);
                    // gg = upstream ⊙ gain; two row means close the norm terms
                    let mut mean_gg = 0f64;
                    let mut mean_gg_xhat = 0f64;
                    let mut xhat = vec![0f64; d];
                    let mut gg = vec![0f64; d];
                    for j in 0..d {
                        xhat[j] = (x_row[j].to_f64() - mean) * inv_std;
                        gg[j] = g_row[j].to_f64() * gv[j].to_f64();
                        mean_gg += gg[j];
                        mean_gg_xhat += gg[j] * xhat[j];
                        ggain[j] += g_row[j].to_f64() * xhat[j];
                        gbias[j] += g_row[j].to_f64();
                    }
                    mean_gg /= d as f64;
                    mean_gg_xhat /= d as f64;
                    for j in 0..d {
                        gx_row[j] =
                            E::from_f64(inv_std * (gg[j] - mean_gg - xhat[j] * mean_gg_xhat));
                    }
                }
                Delta::Three(
                    (*x, Tensor { shape: sx, data: gx }),
                    (*gain, Tensor { shape: vec![d], data: ggain.into_iter().map(E::from_f64).collect() }),
                    (*bias, Tensor { shape: vec![d], data: gbias.into_iter().map(E::from_f64).collect() }),
                )
            }
            Op::Gelu { x } => {
                let xv = self.nodes[x.0].value.data();
                let gx: Vec<E> = g
                    .data()
                    .iter()
                    .zip(xv.iter())
                    .map(|(gv, v)| E::from_f64(gv.to_f64() * gelu_grad_f64(v.to_f64())))
                    .collect();
                Delta::One(*x, Tensor { shape: self.nodes[x.0].value.shape().to_vec(), data: gx })
            }
            Op::Dropout { x, mult } => {
                let gx: Vec<E> = g
                    .data()
                    .iter()
                    .zip(mult.iter())
                    .map(|(gv, m)| E::from_f64(gv.to_f64() * m.to_f64()))
                    .collect();
                Delta::One(*x, Tensor { shape: self.nodes[x.0].value.shape().to_vec(), data: gx })
            }
            Op::Reshape { x } => {
                let t = Tensor {
                    shape: self.nodes[x.0].value.shape().to_vec(),
                    data: g.data().to_vec(),
                };
                Delta::One(*x, t)
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                Delta::One(*x, permute_data(g, &inverse))
            }
            Op::MaskedFill { x, keep } => {
                let gx: Vec<E> = g
                    .data()
                    .iter()
                    .zip(keep.iter())
                    .map(|(gv, &k)| if k { *gv } else { E::ZERO })
                    .collect();
                Delta::One(*x, Tensor { shape: self.nodes[x.0].value.shape().to_vec(), data: gx })
            }
            Op::Scale { x, c } => {
                let c = *c;
                let gx: Vec<E> = g.data().iter().map(|gv| E::from_f64(gv.to_f64() * c)).collect();
                Delta::One(*x, Tensor { shape: self.nodes[x.0].value.shape().to_vec(), data: gx })
            }
            Op::GatherRows { x, rows } => {
                let sx = self.nodes[x.0].value.shape().to_vec();
                let (k, d) = (sx[1], sx[2]);
                let mut gx = vec![E::ZERO; self.nodes[x.0].value.numel()];
                for (b, &r) in rows.iter().enumerate() {
                    let dst = (b * k + r) * d;
                    gx[dst..dst + d].copy_from_slice(&g.data()[b * d..(b + 1) * d]);
                }
                Delta::One(*x, Tensor { shape: sx, data: gx })
            }
            Op::TiedLogits { z, table, rows } => {
                let rows = *rows;
                let st = self.nodes[table.0].value.shape().to_vec();
                let d = st[1];
                let b = self.nodes[z.0].value.shape()[0];
                let table_slice = &self.nodes[table.0].value.data()[..rows * d];
                let gz = matmul_nn(g.data(), table_slice, b, rows, d);
                let gt_slice = matmul_tn(g.data(), self.nodes[z.0].value.data(), b, rows, d);
                let mut gt = vec![E::ZERO; st[0] * d];
                gt[..rows * d].copy_from_slice(&gt_slice);
                Delta::Two(
                    (*z, Tensor { shape: vec![b, d], data: gz }),
                    (*table, Tensor { shape: st, data: gt }),
                )
            }
            Op::SmoothedNll {
                probs,
                targets,
                eps,
                floor,
            } => {
                let sp = self.nodes[probs.0].value.shape().to_vec();
                let v = sp[1];
                let other = if v > 1 { (1.0 - eps) / (v as f64 - 1.0) } else { 0.0 };
                let scale = g.item().to_f64() / targets.len() as f64;
                let pv = self.nodes[probs.0].value.data();
                let mut gp = vec![E::ZERO; pv.len()];
                for (bi, (gp_row, p_row)) in gp.chunks_mut(v).zip(pv.chunks(v)).enumerate() {
                    let target = targets[bi] as usize;
                    for (j, (o, p)) in gp_row.iter_mut().zip(p_row.iter()).enumerate() {
                        let y = if j == target { *eps } else { other };
                        let p = p.to_f64();
                        // log is flat below the guard floor
                        if y != 0.0 && p >= *floor {
                            *o = E::from_f64(-scale * y / p);
                        }
                    }
                }
                Delta::One(*probs, Tensor { shape: sp, data: gp })
            }
            Op::SumAll { x } => {
                let gv = g.item().to_f64();
                let t = Tensor::full(self.nodes[x.0].value.shape(), E::from_f64(gv));
                Delta::One(*x, t)
            }
        };
        match deltas {
            Delta::None => Ok(()),
            Delta::One(v, d) => self.accumulate(v, d),
            Delta::Two((v1, d1), (v2, d2)) => {
                self.accumulate(v1, d1)?;
                self.accumulate(v2, d2)
            }
            Delta::Three((v1, d1), (v2, d2), (v3, d3)) => {
                self.accumulate(v1, d1)?;
                self.accumulate(v2, d2)?;
                self.accumulate(v3, d3)
            }
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> CokeError {
        CokeError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }
}

const LAYER_NORM_EPS: f64 = 1e-12;

fn row_stats<E: Elem>(row: &[E]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / d;
    let var = row
        .iter()
        .map(|v| {
            let c = v.to_f64() - mean;
            c * c
        })
        .sum::<f64>()
        / d;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

const GELU_COEF: f64 = 0.044715;

fn gelu_f64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad_f64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn transpose2<E: Elem>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn permute_data<E: Elem>(t: &Tensor<E>, axes: &[usize]) -> Tensor<E> {
    let in_shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    let out_strides = strides(&out_shape);
    let mut data = vec![E::ZERO; t.numel()];
    for (flat_in, v) in t.data().iter().enumerate() {
        let mut flat_out = 0;
        for (out_axis, &in_axis) in axes.iter().enumerate() {
            let coord = (flat_in / in_strides[in_axis]) % in_shape[in_axis];
            flat_out += coord * out_strides[out_axis];
        }
        data[flat_out] = *v;
    }
    Tensor {
        shape: out_shape,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filled(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    /// Central finite differences against the tape's analytic gradients.
    /// `build` must construct a scalar loss from the registered params.
    fn grad_check(
        inputs: &[Tensor<f64>],
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.backward(loss).unwrap();
        let analytic = tape.param_grads();

        let eval = |perturbed: &[Tensor<f64>]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
            let loss = build(&mut tape, &vars);
            tape.value(loss).item()
        };

        let h = 1e-5;
        for (pi, base) in inputs.iter().enumerate() {
            for j in 0..base.numel() {
                let mut plus = inputs.to_vec();
                plus[pi].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[pi].data_mut()[j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let got = analytic[pi].data()[j];
                let denom = fd.abs().max(got.abs()).max(1e-6);
                assert!(
                    (fd - got).abs() / denom < 1e-5,
                    "param {pi} element {j}: analytic {got} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[3]));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(filled(&[4, 7], 1));
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).data().chunks(7) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero_before_gain_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::full(&[2, 4], 3.5));
        let gain = tape.leaf(Tensor::full(&[4], 1.0));
        let bias = tape.leaf(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        for v in tape.value(y).data() {
            assert!(v.abs() < 1e-6, "constant row should normalize to zero, got {v}");
        }
    }

    #[test]
    fn masked_fill_uses_large_negative_not_infinity() {
        let mut tape = Tape::new();
        let x = tape.leaf(filled(&[2, 3], 2));
        let keep = [true, false, true, false, false, true];
        let y = tape.masked_fill(x, &keep, -1e9).unwrap();
        let p = tape.softmax(y).unwrap();
        assert!(tape.value(p).all_finite());
        assert_eq!(tape.value(y).data()[1], -1e9);
    }

    #[test]
    fn dropout_identity_when_disabled() {
        let x = filled(&[5, 5], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let eval_mode = tape.dropout(v, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(eval_mode).data(), x.data());
        let zero_rate = tape.dropout(v, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(zero_rate).data(), x.data());
    }

    #[test]
    fn dropout_scales_kept_units_to_preserve_expectation() {
        let x = Tensor::<f64>::full(&[10_000], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let y = tape.dropout(v, 0.3, true, &mut rng).unwrap();
        let keep_scale = 1.0 / 0.7;
        let mut kept = 0usize;
        for &o in tape.value(y).data() {
            assert!(o == 0.0 || (o - keep_scale).abs() < 1e-12);
            if o != 0.0 {
                kept += 1;
            }
        }
        // mean stays ~1 because kept units are scaled up
        let mean: f64 = tape.value(y).data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}, kept {kept}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let theta = tape.param(filled(&[4], 4));
        let loss = tape.sum_all(theta).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(theta).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_at_three_is_six() {
        let mut tape = Tape::new();
        let theta = tape.param(Tensor::scalar(3.0f64));
        let sq = tape.mul(theta, theta).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert!((tape.grad(theta).item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let theta = tape.param(filled(&[3], 5));
        let y = tape.scale(theta, 2.0).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn unused_parameter_gets_exactly_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.param(filled(&[3], 6));
        let unused = tape.param(filled(&[4], 7));
        let loss = tape.sum_all(used).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(unused).data().iter().all(|&g| g == 0.0));
        assert_eq!(tape.param_grads().len(), 2);
    }

    #[test]
    fn shared_parameter_accumulates_both_uses() {
        // the same table feeds a lookup and the tied classifier
        let table = filled(&[4, 3], 8);
        let mut tape = Tape::new();
        let t = tape.param(table.clone());
        let z = tape.lookup(t, &[1, 2], &[2]).unwrap();
        let logits = tape.tied_logits(z, t, 4).unwrap();
        let loss = tape.sum_all(logits).unwrap();
        tape.backward(loss).unwrap();
        let combined = tape.grad(t);

        // lookup-only route
        let mut tape_a = Tape::new();
        let ta = tape_a.param(table.clone());
        let frozen = tape_a.leaf(table.clone());
        let za = tape_a.lookup(ta, &[1, 2], &[2]).unwrap();
        let la = tape_a.tied_logits(za, frozen, 4).unwrap();
        let sa = tape_a.sum_all(la).unwrap();
        tape_a.backward(sa).unwrap();
        // classifier-only route
        let mut tape_b = Tape::new();
        let tb = tape_b.param(table.clone());
        let frozen_b = tape_b.leaf(table.clone());
        let zb = tape_b.lookup(frozen_b, &[1, 2], &[2]).unwrap();
        let lb = tape_b.tied_logits(zb, tb, 4).unwrap();
        let sb = tape_b.sum_all(lb).unwrap();
        tape_b.backward(sb).unwrap();

        for ((c, a), b) in combined
            .data()
            .iter()
            .zip(tape_a.grad(ta).data())
            .zip(tape_b.grad(tb).data())
        {
            assert!((c - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_add_broadcast() {
        grad_check(&[filled(&[2, 3, 4], 10), filled(&[4], 11)], |tape, v| {
            let y = tape.add(v[0], v[1]).unwrap();
            let s = tape.softmax(y).unwrap();
            let w = tape.mul(s, y).unwrap();
            tape.sum_all(w).unwrap()
        });
    }

    #[test]
    fn grad_linear() {
        grad_check(&[filled(&[2, 3, 4], 12), filled(&[4, 5], 13)], |tape, v| {
            let y = tape.linear(v[0], v[1]).unwrap();
            let g = tape.gelu(y).unwrap();
            tape.sum_all(g).unwrap()
        });
    }

    #[test]
    fn grad_bmm_with_permute_reshape() {
        grad_check(&[filled(&[2, 2, 3, 2], 14), filled(&[2, 2, 2, 3], 15)], |tape, v| {
            let y = tape.bmm(v[0], v[1]).unwrap();
            let p = tape.permute(y, &[0, 2, 1, 3]).unwrap();
            let r = tape.reshape(p, &[2, 3, 6]).unwrap();
            let sm = tape.softmax(r).unwrap();
            let w = tape.mul(sm, r).unwrap();
            tape.sum_all(w).unwrap()
        });
    }

    #[test]
    fn grad_lookup_scatter_adds_repeated_ids() {
        grad_check(&[filled(&[5, 3], 16)], |tape, v| {
            // id 2 twice: its row gradient must be the sum of both uses
            let rows = tape.lookup(v[0], &[2, 0, 2], &[3]).unwrap();
            let g = tape.gelu(rows).unwrap();
            tape.sum_all(g).unwrap()
        });
    }

    #[test]
    fn grad_layer_norm() {
        grad_check(
            &[filled(&[3, 6], 17), filled(&[6], 18), filled(&[6], 19)],
            |tape, v| {
                let y = tape.layer_norm(v[0], v[1], v[2]).unwrap();
                let g = tape.gelu(y).unwrap();
                tape.sum_all(g).unwrap()
            },
        );
    }

    #[test]
    fn grad_softmax_masked() {
        let keep: Vec<bool> = vec![true, true, false, true, false, true, true, true];
        grad_check(&[filled(&[2, 4], 20)], move |tape, v| {
            let m = tape.masked_fill(v[0], &keep, -1e9).unwrap();
            let s = tape.softmax(m).unwrap();
            let w = tape.mul(s, s).unwrap();
            tape.sum_all(w).unwrap()
        });
    }

    #[test]
    fn grad_gather_rows() {
        grad_check(&[filled(&[3, 4, 2], 21)], |tape, v| {
            let z = tape.gather_rows(v[0], &[1, 3, 0]).unwrap();
            let g = tape.gelu(z).unwrap();
            tape.sum_all(g).unwrap()
        });
    }

    #[test]
    fn grad_tied_logits() {
        grad_check(&[filled(&[2, 3], 22), filled(&[6, 3], 23)], |tape, v| {
            // classifier over the first 4 of 6 rows
            let logits = tape.tied_logits(v[0], v[1], 4).unwrap();
            let p = tape.softmax(logits).unwrap();
            tape.smoothed_nll(p, &[1, 3], 0.8).unwrap()
        });
    }

    #[test]
    fn grad_smoothed_nll_through_softmax() {
        grad_check(&[filled(&[3, 5], 24)], |tape, v| {
            let p = tape.softmax(v[0]).unwrap();
            tape.smoothed_nll(p, &[0, 4, 2], 0.7).unwrap()
        });
    }

    #[test]
    fn grad_dropout_with_fixed_mask() {
        grad_check(&[filled(&[4, 4], 25)], |tape, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(77); // same mask every call
            let d = tape.dropout(v[0], 0.4, true, &mut rng).unwrap();
            let g = tape.gelu(d).unwrap();
            tape.sum_all(g).unwrap()
        });
    }

    #[test]
    fn grad_scale() {
        grad_check(&[filled(&[3, 3], 26)], |tape, v| {
            let y = tape.scale(v[0], 1.0 / 3.0_f64.sqrt()).unwrap();
            let s = tape.softmax(y).unwrap();
            tape.smoothed_nll(s, &[0, 1, 2], 1.0).unwrap()
        });
    }

    #[test]
    fn smoothed_nll_uniform_probabilities_give_log_v() {
        // -Σ y_t log(1/V) = log V because the smoothed labels sum to one
        for &v in &[3usize, 10, 50] {
            let mut tape = Tape::new();
            let p = tape.leaf(Tensor::<f64>::full(&[2, v], 1.0 / v as f64));
            let loss = tape.smoothed_nll(p, &[0, 1], 0.6).unwrap();
            assert!((tape.value(loss).item() - (v as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothed_nll_eps_one_is_plain_cross_entropy() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let loss = tape.smoothed_nll(p, &[2], 1.0).unwrap();
        assert!((tape.value(loss).item() - -(0.3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn smoothed_nll_hand_computed_fixture() {
        // V=3, ε=0.7, p=[0.5,0.3,0.2], target 0:
        // −(0.7·ln 0.5 + 0.15·ln 0.3 + 0.15·ln 0.2) = 0.9072146339059671
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1, 3], vec![0.5f64, 0.3, 0.2]).unwrap());
        let loss = tape.smoothed_nll(p, &[0], 0.7).unwrap();
        assert!((tape.value(loss).item() - 0.9072146339059671).abs() < 1e-12);
    }

    #[test]
    fn smoothed_nll_guards_zero_probability() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1, 3], vec![0.0f64, 0.5, 0.5]).unwrap());
        let loss = tape.smoothed_nll(p, &[0], 0.9).unwrap();
        assert!(tape.value(loss).item().is_finite());
        assert!(tape.smoothed_nll(p, &[7], 0.9).is_err()); // target out of range
    }

    #[test]
    fn forward_is_bit_stable_across_runs() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::truncated_normal(&[8, 16], 0.5, &mut rng));
            let w = tape.leaf(Tensor::truncated_normal(&[16, 16], 0.5, &mut rng));
            let y = tape.linear(x, w).unwrap();
            let d = tape.dropout(y, 0.2, true, &mut rng).unwrap();
            let s = tape.softmax(d).unwrap();
            tape.value(s).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(xs in proptest::collection::vec(-10.0f64..10.0, 6), c in -5.0f64..5.0) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(vec![6], xs.clone()).unwrap());
            let shifted = tape.leaf(Tensor::from_vec(vec![6], xs.iter().map(|v| v + c).collect()).unwrap());
            let a = tape.softmax(x).unwrap();
            let b = tape.softmax(shifted).unwrap();
            for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }

        #[test]
        fn add_broadcast_matches_manual(b in 1usize..4, k in 1usize..4, d in 1usize..5) {
            let x = filled(&[b, k, d], 31);
            let y = filled(&[d], 32);
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let yv = tape.leaf(y.clone());
            let z = tape.add(xv, yv).unwrap();
            for (i, got) in tape.value(z).data().iter().enumerate() {
                prop_assert!((got - (x.data()[i] + y.data()[i % d])).abs() < 1e-12);
            }
        }
    }
}
