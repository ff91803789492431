use super::tape::{col2im, Op, Tape, Var};
use super::{Elem, ParamId, Tensor, TensorError};

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    params: Vec<Option<Tensor<T>>>,
    vars: Vec<(Var, Tensor<T>)>,
}

impl<T: Elem> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(Option::as_ref)
    }

    pub fn var(&self, v: Var) -> Option<&Tensor<T>> {
        self.vars.iter().find(|(w, _)| *w == v).map(|(_, g)| g)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::all_finite)
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x = *x + *y;
                    }
                }
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.params.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
}

fn acc<T: Elem>(grads: &mut [Option<Vec<T>>], len: usize, v: Var, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.index()].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

fn add_into<T: Elem>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<T: Elem> Tape<'_, T> {
    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if loss.index() >= self.nodes.len() {
            return Err(TensorError::Unrecorded(loss.index()));
        }
        let ls = self.value(loss);
        if ls.len() != 1 {
            return Err(TensorError::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index()] = Some(vec![T::one()]);
        let mut out = Gradients { params: vec![None; self.params.len()], vars: Vec::new() };

        for i in (0..=loss.index()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let len_of = |v: Var| self.value(v).len();
            let want = |v: Var| self.nodes[v.index()].requires_grad;
            match &node.op {
                Op::Constant => {}
                Op::Variable => out.vars.push((Var(i), Tensor::from_parts(self.value(Var(i)).shape().to_vec(), g))),
                Op::Param(id) => {
                    out.params[id.index()] = Some(Tensor::from_parts(self.params.get(*id).shape().to_vec(), g));
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let rows = geom.n * geom.ho * geom.wo;
                    let patch = geom.kh * geom.kw * geom.c;
                    if want(*w) {
                        acc(&mut grads, len_of(*w), *w, |dw| {
                            T::gemm(patch, rows, geom.o, cols, true, &g, false, dw, T::one())
                        });
                    }
                    if want(*b) {
                        acc(&mut grads, geom.o, *b, |db| {
                            for r in g.chunks(geom.o) {
                                add_into(db, r);
                            }
                        });
                    }
                    if want(*x) {
                        let mut dcols = vec![T::zero(); rows * patch];
                        T::gemm(rows, geom.o, patch, &g, false, self.value(*w).data(), true, &mut dcols, T::zero());
                        acc(&mut grads, len_of(*x), *x, |dx| col2im(&dcols, geom, dx));
                    }
                }
                Op::Dense { x, w, b } => {
                    let xs = self.value(*x).shape();
                    let (n, d) = (xs[0], xs[1]);
                    let k = self.value(*w).shape()[1];
                    if want(*w) {
                        let xv = self.value(*x).data();
                        acc(&mut grads, d * k, *w, |dw| T::gemm(d, n, k, xv, true, &g, false, dw, T::one()));
                    }
                    if want(*b) {
                        acc(&mut grads, k, *b, |db| {
                            for r in g.chunks(k) {
                                add_into(db, r);
                            }
                        });
                    }
                    if want(*x) {
                        let wv = self.value(*w).data();
                        acc(&mut grads, n * d, *x, |dx| T::gemm(n, k, d, &g, false, wv, true, dx, T::one()));
                    }
                }
                Op::LeakyRelu { x, alpha } => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, xv.len(), *x, |dx| {
                        for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *d = *d + if xi > T::zero() { gi } else { *alpha * gi };
                        }
                    });
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, xv.len(), *x, |dx| {
                        for ((d, &gi), &xi) in dx.iter_mut().zip(&g).zip(xv) {
                            if xi > T::zero() {
                                *d = *d + gi;
                            }
                        }
                    });
                }
                Op::Softmax { x } => {
                    let y = self.value(Var(i));
                    let k = y.last_dim();
                    acc(&mut grads, y.len(), *x, |dx| {
                        for ((dr, gr), yr) in dx.chunks_mut(k).zip(g.chunks(k)).zip(y.data().chunks(k)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a.f64() * b.f64()).sum();
                            let dot = T::of(dot);
                            for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d = *d + yi * (gi - dot);
                            }
                        }
                    });
                }
                Op::BatchNorm { x, scale, shift, xhat, inv_std, train } => {
                    let ch = inv_std.len();
                    let count = xhat.len() / ch;
                    let gamma = self.value(*scale).data();
                    let mut s_dy = vec![0.0f64; ch];
                    let mut s_dy_xhat = vec![0.0f64; ch];
                    for (gr, hr) in g.chunks(ch).zip(xhat.chunks(ch)) {
                        for c in 0..ch {
                            s_dy[c] += gr[c].f64();
                            s_dy_xhat[c] += gr[c].f64() * hr[c].f64();
                        }
                    }
                    if want(*scale) {
                        acc(&mut grads, ch, *scale, |d| {
                            for c in 0..ch {
                                d[c] = d[c] + T::of(s_dy_xhat[c]);
                            }
                        });
                    }
                    if want(*shift) {
                        acc(&mut grads, ch, *shift, |d| {
                            for c in 0..ch {
                                d[c] = d[c] + T::of(s_dy[c]);
                            }
                        });
                    }
                    if want(*x) {
                        acc(&mut grads, xhat.len(), *x, |dx| {
                            let cnt = count as f64;
                            for ((dr, gr), hr) in dx.chunks_mut(ch).zip(g.chunks(ch)).zip(xhat.chunks(ch)) {
                                for c in 0..ch {
                                    let gs = gamma[c].f64() * inv_std[c].f64();
                                    let v = if *train {
                                        gs * (gr[c].f64() - s_dy[c] / cnt - hr[c].f64() * s_dy_xhat[c] / cnt)
                                    } else {
                                        gs * gr[c].f64()
                                    };
                                    dr[c] = dr[c] + T::of(v);
                                }
                            }
                        });
                    }
                }
                Op::Gap { x, hw } => {
                    let c = self.value(Var(i)).last_dim();
                    let inv = T::of(1.0 / *hw as f64);
                    acc(&mut grads, len_of(*x), *x, |dx| {
                        for (p, dr) in dx.chunks_mut(c).enumerate() {
                            let b = p / hw;
                            for (d, &gi) in dr.iter_mut().zip(&g[b * c..(b + 1) * c]) {
                                *d = *d + gi * inv;
                            }
                        }
                    });
                }
                Op::L2Norm { x, norms } => {
                    let y = self.value(Var(i));
                    let d = y.last_dim().max(1);
                    acc(&mut grads, y.len(), *x, |dx| {
                        for (((dr, gr), yr), &nrm) in
                            dx.chunks_mut(d).zip(g.chunks(d)).zip(y.data().chunks(d)).zip(norms)
                        {
                            if nrm <= T::zero() {
                                continue;
                            }
                            let dot = T::of(gr.iter().zip(yr).map(|(a, b)| a.f64() * b.f64()).sum());
                            for ((dd, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *dd = *dd + (gi - yi * dot) / nrm;
                            }
                        }
                    });
                }
                Op::Dropout { x, mask } => acc(&mut grads, mask.len(), *x, |dx| {
                    for ((d, &gi), &m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d = *d + gi * m;
                    }
                }),
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if want(v) {
                            acc(&mut grads, g.len(), v, |d| add_into(d, &g));
                        }
                    }
                }
                Op::Mul { a, b } => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if want(v) {
                            let ov = self.value(other).data();
                            acc(&mut grads, g.len(), v, |d| {
                                for ((dd, &gi), &o) in d.iter_mut().zip(&g).zip(ov) {
                                    *dd = *dd + gi * o;
                                }
                            });
                        }
                    }
                }
                Op::AddConst { x } | Op::Reshape { x } => acc(&mut grads, g.len(), *x, |d| add_into(d, &g)),
                Op::MulConst { x, c } => acc(&mut grads, g.len(), *x, |d| {
                    for ((dd, &gi), &ci) in d.iter_mut().zip(&g).zip(c) {
                        *dd = *dd + gi * ci;
                    }
                }),
                Op::Scale { x, s } => acc(&mut grads, g.len(), *x, |d| {
                    for (dd, &gi) in d.iter_mut().zip(&g) {
                        *dd = *dd + gi * *s;
                    }
                }),
                Op::AddScalar { x } => acc(&mut grads, g.len(), *x, |d| add_into(d, &g)),
                Op::RowDot { a, b } => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if want(v) {
                            let ov = self.value(other);
                            let dim = ov.last_dim();
                            acc(&mut grads, ov.len(), v, |d| {
                                for ((dr, orow), &gi) in d.chunks_mut(dim).zip(ov.rows()).zip(&g) {
                                    for (dd, &o) in dr.iter_mut().zip(orow) {
                                        *dd = *dd + gi * o;
                                    }
                                }
                            });
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let wa = self.value(*a).last_dim();
                    let wb = self.value(*b).last_dim();
                    if want(*a) {
                        acc(&mut grads, len_of(*a), *a, |d| {
                            for (dr, gr) in d.chunks_mut(wa).zip(g.chunks(wa + wb)) {
                                add_into(dr, &gr[..wa]);
                            }
                        });
                    }
                    if want(*b) {
                        acc(&mut grads, len_of(*b), *b, |d| {
                            for (dr, gr) in d.chunks_mut(wb).zip(g.chunks(wa + wb)) {
                                add_into(dr, &gr[wa..]);
                            }
                        });
                    }
                }
                Op::SliceRows { x, start } => {
                    let inner: usize = self.value(*x).shape()[1..].iter().product();
                    acc(&mut grads, len_of(*x), *x, |d| add_into(&mut d[start * inner..start * inner + g.len()], &g));
                }
                Op::GatherRows { x, rows } => {
                    let inner: usize = self.value(*x).shape()[1..].iter().product();
                    acc(&mut grads, len_of(*x), *x, |d| {
                        for (k, &r) in rows.iter().enumerate() {
                            add_into(&mut d[r * inner..(r + 1) * inner], &g[k * inner..(k + 1) * inner]);
                        }
                    });
                }
                Op::Column { x, col } => {
                    let k = self.value(*x).last_dim();
                    acc(&mut grads, len_of(*x), *x, |d| {
                        for (r, &gi) in g.iter().enumerate() {
                            d[r * k + col] = d[r * k + col] + gi;
                        }
                    });
                }
                Op::Sum { x } => acc(&mut grads, len_of(*x), *x, |d| {
                    d.iter_mut().for_each(|v| *v = *v + g[0]);
                }),
                Op::DotConst { x, c } => acc(&mut grads, c.len(), *x, |d| {
                    for (dd, &ci) in d.iter_mut().zip(c) {
                        *dd = *dd + g[0] * ci;
                    }
                }),
                Op::SumSquares { x } => {
                    let xv = self.value(*x).data();
                    let two = T::of(2.0);
                    acc(&mut grads, xv.len(), *x, |d| {
                        for (dd, &xi) in d.iter_mut().zip(xv) {
                            *dd = *dd + two * xi * g[0];
                        }
                    });
                }
                Op::ChannelsToRows { maps, extra, hw, c } => {
                    let width = hw + 1;
                    let b = len_of(*extra) / c;
                    if want(*maps) {
                        acc(&mut grads, b * hw * c, *maps, |d| {
                            for bi in 0..b {
                                for p in 0..*hw {
                                    for ci in 0..*c {
                                        let o = (bi * hw + p) * c + ci;
                                        d[o] = d[o] + g[(bi * c + ci) * width + p];
                                    }
                                }
                            }
                        });
                    }
                    if want(*extra) {
                        acc(&mut grads, b * c, *extra, |d| {
                            for (r, dd) in d.iter_mut().enumerate() {
                                *dd = *dd + g[r * width + hw];
                            }
                        });
                    }
                }
                Op::MarginBce { p, truth, margin } => {
                    let pv = self.value(*p).data();
                    let m = margin.f64();
                    acc(&mut grads, pv.len(), *p, |d| {
                        for ((dd, &ph), &pt) in d.iter_mut().zip(pv).zip(truth) {
                            let (ph, pt) = (ph.f64(), pt.f64());
                            let mut v = 0.0;
                            if ph + m < 1.0 {
                                v -= pt / (ph + m);
                            }
                            if 1.0 - ph + m < 1.0 {
                                v += (1.0 - pt) / (1.0 - ph + m);
                            }
                            *dd = *dd + T::of(v) * g[0];
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}
