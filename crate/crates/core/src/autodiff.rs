//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! Tensors are dense row-major arrays with explicit shapes. A [`Tape`]
//! records operations as they execute; [`Tape::backward`] walks the record
//! in reverse, invoking each node's gradient closure once. Closures receive
//! the node's own value and its parents' values by reference, so recording
//! an op never copies its operands. Nodes whose ancestors contain no
//! tracked leaf are pruned from the backward pass, so constants (images,
//! masks, targets) cost nothing to differentiate around.
//!
//! The op set is deliberately small: everything the policy network needs is
//! expressible with matmul, gathers, reshapes, row/column broadcasts, a
//! fused layer norm, and a fused masked softmax.

use crate::real::Real;
use std::cell::RefCell;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::ZERO; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Tensor::from_vec(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected a matrix, got {:?}", self.shape);
        self.shape[1]
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    fn assert_same_shape(&self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        self.assert_same_shape(other);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.assert_same_shape(other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Row-major matrix product.
    pub fn matmul(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![T::ZERO; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::ZERO {
                    continue;
                }
                let row = &other.data[p * m..(p + 1) * m];
                let dst = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    dst[j] += a * row[j];
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// self^T * other, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        let (k, n) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
        let mut out = vec![T::ZERO; n * m];
        for p in 0..k {
            let arow = &self.data[p * n..(p + 1) * n];
            let brow = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = arow[i];
                if a == T::ZERO {
                    continue;
                }
                let dst = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    dst[j] += a * brow[j];
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// self * other^T, without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![T::ZERO; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = T::ZERO;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * m + j] = acc;
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    pub fn transpose(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![T::ZERO; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Tensor { shape: vec![m, n], data: out }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&x| x.to_f64() * x.to_f64()).sum::<f64>().sqrt()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x.to_f64()).collect()
    }
}

fn gelu_forward<T: Real>(x: T) -> T {
    // tanh approximation
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let u = c * (x + k * x * x * x);
    T::from_f64(0.5) * x * (T::ONE + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::ONE + T::from_f64(3.0) * k * x * x);
    T::from_f64(0.5) * (T::ONE + t) + T::from_f64(0.5) * x * (T::ONE - t * t) * du
}

/// (grad_out, own_value, parent_values) -> one gradient per parent.
type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[&Tensor<T>]) -> Vec<Tensor<T>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records a computation; one tape per forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    pub id: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads[var.id].as_ref()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var { tape: self, id }
    }

    /// Tracked leaf (a parameter).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, vec![], None, true)
    }

    /// Untracked input (data, masks, targets).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, vec![], None, false)
    }

    pub fn value(&self, var: Var<'_, T>) -> Tensor<T> {
        self.nodes.borrow()[var.id].value.clone()
    }

    pub fn shape(&self, var: Var<'_, T>) -> Vec<usize> {
        self.nodes.borrow()[var.id].value.shape.clone()
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] =
            Some(Tensor::from_vec(&nodes[loss.id].value.shape.clone(), vec![T::ONE]));
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(grad_out) = grads[id].take() else { continue };
            let Some(back) = nodes[id].backward.take() else {
                grads[id] = Some(grad_out); // leaf: keep for the caller
                continue;
            };
            let parents = std::mem::take(&mut nodes[id].parents);
            let parent_grads = {
                let parent_vals: Vec<&Tensor<T>> =
                    parents.iter().map(|&p| &nodes[p].value).collect();
                back(&grad_out, &nodes[id].value, &parent_vals)
            };
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (pid, g) in parents.iter().zip(parent_grads) {
                if !nodes[*pid].requires_grad || g.is_empty() {
                    continue;
                }
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }

    /// Stack vars vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty());
        let (mut data, mut row_counts) = (Vec::new(), Vec::new());
        let cols = parts[0].val(|v| v.cols());
        for p in parts {
            p.val(|v| {
                assert_eq!(v.cols(), cols, "concat_rows column mismatch");
                data.extend_from_slice(&v.data);
                row_counts.push(v.rows());
            });
        }
        let total: usize = row_counts.iter().sum();
        let value = Tensor::from_vec(&[total, cols], data);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        let counts = row_counts.clone();
        self.push(
            value,
            ids,
            Some(Box::new(move |g, _own, _ps| {
                let mut out = Vec::new();
                let mut row = 0;
                for n in &counts {
                    out.push(Tensor::from_vec(
                        &[*n, cols],
                        g.data[row * cols..(row + n) * cols].to_vec(),
                    ));
                    row += n;
                }
                out
            })),
            rg,
        )
    }

    /// Stack vars horizontally.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty());
        let rows = parts[0].val(|v| v.rows());
        let col_counts: Vec<usize> = parts.iter().map(|p| p.val(|v| v.cols())).collect();
        let total: usize = col_counts.iter().sum();
        let mut data = vec![T::ZERO; rows * total];
        let mut off = 0;
        for (p, &c) in parts.iter().zip(&col_counts) {
            p.val(|v| {
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                for i in 0..rows {
                    data[i * total + off..i * total + off + c]
                        .copy_from_slice(&v.data[i * c..(i + 1) * c]);
                }
            });
            off += c;
        }
        let value = Tensor::from_vec(&[rows, total], data);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        self.push(
            value,
            ids,
            Some(Box::new(move |g, _own, _ps| {
                let mut out = Vec::new();
                let mut off = 0;
                for &c in &col_counts {
                    let mut part = vec![T::ZERO; rows * c];
                    for i in 0..rows {
                        part[i * c..(i + 1) * c]
                            .copy_from_slice(&g.data[i * total + off..i * total + off + c]);
                    }
                    out.push(Tensor::from_vec(&[rows, c], part));
                    off += c;
                }
                out
            })),
            rg,
        )
    }
}

impl<'t, T: Real> Var<'t, T> {
    fn val<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn tensor(&self) -> Tensor<T> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape(*self)
    }

    fn unary(
        &self,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Var<'t, T> {
        let rg = self.tape.requires(&[self.id]);
        let back: Option<BackwardFn<T>> = if rg {
            Some(Box::new(move |g, own, ps| backward(g, own, ps[0])))
        } else {
            None
        };
        self.tape.push(value, vec![self.id], back, rg)
    }

    fn binary(
        &self,
        rhs: Var<'t, T>,
        value: Tensor<T>,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Var<'t, T> {
        let rg = self.tape.requires(&[self.id, rhs.id]);
        let back: Option<BackwardFn<T>> = if rg {
            Some(Box::new(move |g, own, ps| backward(g, own, ps[0], ps[1])))
        } else {
            None
        };
        self.tape.push(value, vec![self.id, rhs.id], back, rg)
    }

    pub fn add(&self, rhs: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| rhs.val(|b| a.zip(b, |x, y| x + y)));
        self.binary(rhs, v, |g, _own, _a, _b| vec![g.clone(), g.clone()])
    }

    pub fn sub(&self, rhs: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| rhs.val(|b| a.zip(b, |x, y| x - y)));
        self.binary(rhs, v, |g, _own, _a, _b| vec![g.clone(), g.map(|x| -x)])
    }

    pub fn mul(&self, rhs: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| rhs.val(|b| a.zip(b, |x, y| x * y)));
        self.binary(rhs, v, |g, _own, a, b| {
            vec![g.zip(b, |x, y| x * y), g.zip(a, |x, y| x * y)]
        })
    }

    pub fn div(&self, rhs: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| rhs.val(|b| a.zip(b, |x, y| x / y)));
        self.binary(rhs, v, |g, _own, a, b| {
            let da = g.zip(b, |x, y| x / y);
            let mut db = g.zip(a, |x, y| x * y);
            for (d, bv) in db.data.iter_mut().zip(&b.data) {
                *d = -*d / (*bv * *bv);
            }
            vec![da, db]
        })
    }

    pub fn neg(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| -x));
        self.unary(v, |g, _own, _a| vec![g.map(|x| -x)])
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| x * c));
        self.unary(v, move |g, _own, _a| vec![g.map(|x| x * c)])
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| x + c));
        self.unary(v, |g, _own, _a| vec![g.clone()])
    }

    /// Broadcast add of a [1, m] row over an [n, m] matrix.
    pub fn add_row(&self, row: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| {
            row.val(|r| {
                assert_eq!(r.rows(), 1);
                assert_eq!(a.cols(), r.cols(), "add_row width mismatch");
                let (n, m) = (a.rows(), a.cols());
                let mut data = a.data.clone();
                for i in 0..n {
                    for j in 0..m {
                        data[i * m + j] += r.data[j];
                    }
                }
                Tensor::from_vec(&[n, m], data)
            })
        });
        self.binary(row, v, |g, _own, a, _r| {
            let (n, m) = (a.rows(), a.cols());
            let mut dr = vec![T::ZERO; m];
            for i in 0..n {
                for j in 0..m {
                    dr[j] += g.data[i * m + j];
                }
            }
            vec![g.clone(), Tensor::from_vec(&[1, m], dr)]
        })
    }

    /// Broadcast multiply of a [1, m] row over an [n, m] matrix.
    pub fn mul_row(&self, row: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| {
            row.val(|r| {
                assert_eq!(r.rows(), 1);
                assert_eq!(a.cols(), r.cols(), "mul_row width mismatch");
                let (n, m) = (a.rows(), a.cols());
                let mut data = a.data.clone();
                for i in 0..n {
                    for j in 0..m {
                        data[i * m + j] *= r.data[j];
                    }
                }
                Tensor::from_vec(&[n, m], data)
            })
        });
        self.binary(row, v, |g, _own, a, r| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            let mut dr = vec![T::ZERO; m];
            for i in 0..n {
                for j in 0..m {
                    da[i * m + j] = g.data[i * m + j] * r.data[j];
                    dr[j] += g.data[i * m + j] * a.data[i * m + j];
                }
            }
            vec![Tensor::from_vec(&[n, m], da), Tensor::from_vec(&[1, m], dr)]
        })
    }

    /// Broadcast multiply by a [1,1] scalar variable.
    pub fn mul_scalar_var(&self, s: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| s.val(|sv| a.map(|x| x * sv.item())));
        self.binary(s, v, |g, _own, a, sv| {
            let da = g.map(|x| x * sv.item());
            let ds: T = g.data.iter().zip(&a.data).map(|(&gx, &ax)| gx * ax).sum();
            vec![da, Tensor::scalar(ds)]
        })
    }

    pub fn matmul(&self, rhs: Var<'t, T>) -> Var<'t, T> {
        let v = self.val(|a| rhs.val(|b| a.matmul(b)));
        self.binary(rhs, v, |g, _own, a, b| {
            vec![g.matmul_nt(b), a.matmul_tn(g)]
        })
    }

    pub fn t(&self) -> Var<'t, T> {
        let v = self.val(|a| a.transpose());
        self.unary(v, |g, _own, _a| vec![g.transpose()])
    }

    pub fn gelu(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(gelu_forward));
        self.unary(v, |g, _own, a| vec![g.zip(a, |gx, x| gx * gelu_grad(x))])
    }

    pub fn exp(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| x.exp()));
        self.unary(v, |g, own, _a| vec![g.zip(own, |gx, ex| gx * ex)])
    }

    pub fn ln(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| x.ln()));
        self.unary(v, |g, _own, a| vec![g.zip(a, |gx, x| gx / x)])
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| x.sqrt()));
        self.unary(v, |g, own, _a| {
            vec![g.zip(own, |gx, sx| gx / (T::from_f64(2.0) * sx))]
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let v = self.val(|a| a.map(|x| T::ONE / (T::ONE + (-x).exp())));
        self.unary(v, |g, own, _a| vec![g.zip(own, |gx, s| gx * s * (T::ONE - s))])
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t, T> {
        let v = self.val(|a| {
            assert_eq!(a.len(), shape.iter().product::<usize>(), "reshape size mismatch");
            Tensor::from_vec(shape, a.data.clone())
        });
        self.unary(v, |g, _own, a| vec![Tensor::from_vec(&a.shape, g.data.clone())])
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Var<'t, T> {
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            assert!(start + len <= n, "slice_rows out of range");
            Tensor::from_vec(&[len, m], a.data[start * m..(start + len) * m].to_vec())
        });
        self.unary(v, move |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            da[start * m..(start + len) * m].copy_from_slice(&g.data);
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t, T> {
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            assert!(start + len <= m, "slice_cols out of range");
            let mut data = vec![T::ZERO; n * len];
            for i in 0..n {
                data[i * len..(i + 1) * len]
                    .copy_from_slice(&a.data[i * m + start..i * m + start + len]);
            }
            Tensor::from_vec(&[n, len], data)
        });
        self.unary(v, move |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            for i in 0..n {
                da[i * m + start..i * m + start + len]
                    .copy_from_slice(&g.data[i * len..(i + 1) * len]);
            }
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    /// Select rows by index; duplicates allowed (gradients scatter-add).
    pub fn gather_rows(&self, indices: &[usize]) -> Var<'t, T> {
        let idx = indices.to_vec();
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            let mut data = vec![T::ZERO; idx.len() * m];
            for (r, &i) in idx.iter().enumerate() {
                assert!(i < n, "gather_rows index {i} out of {n}");
                data[r * m..(r + 1) * m].copy_from_slice(&a.data[i * m..(i + 1) * m]);
            }
            Tensor::from_vec(&[idx.len(), m], data)
        });
        self.unary(v, move |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..m {
                    da[i * m + j] += g.data[r * m + j];
                }
            }
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    /// Scale row i by the constant `weights[i]` (used to zero masked rows).
    pub fn scale_rows(&self, weights: &[T]) -> Var<'t, T> {
        let w = weights.to_vec();
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            assert_eq!(w.len(), n);
            let mut data = a.data.clone();
            for i in 0..n {
                for j in 0..m {
                    data[i * m + j] *= w[i];
                }
            }
            Tensor::from_vec(&[n, m], data)
        });
        self.unary(v, move |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = g.data.clone();
            for i in 0..n {
                for j in 0..m {
                    da[i * m + j] *= w[i];
                }
            }
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    /// Mean over rows with `mask[i]` true, giving [1, m].
    pub fn masked_mean_rows(&self, mask: &[bool]) -> Var<'t, T> {
        let msk = mask.to_vec();
        let count = msk.iter().filter(|&&b| b).count();
        assert!(count > 0, "masked_mean_rows with empty mask");
        let inv = T::ONE / T::from_f64(count as f64);
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            assert_eq!(msk.len(), n);
            let mut data = vec![T::ZERO; m];
            for i in 0..n {
                if msk[i] {
                    for j in 0..m {
                        data[j] += a.data[i * m + j] * inv;
                    }
                }
            }
            Tensor::from_vec(&[1, m], data)
        });
        self.unary(v, move |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            for i in 0..n {
                if msk[i] {
                    for j in 0..m {
                        da[i * m + j] = g.data[j] * inv;
                    }
                }
            }
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let v = self.val(|a| Tensor::scalar(a.data.iter().copied().sum()));
        self.unary(v, |g, _own, a| {
            let gv = g.item();
            vec![Tensor::from_vec(&a.shape, vec![gv; a.len()])]
        })
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let (v, inv) = self.val(|a| {
            let inv = T::ONE / T::from_f64(a.len() as f64);
            (Tensor::scalar(a.data.iter().copied().sum::<T>() * inv), inv)
        });
        self.unary(v, move |g, _own, a| {
            let gv = g.item() * inv;
            vec![Tensor::from_vec(&a.shape, vec![gv; a.len()])]
        })
    }

    /// Row sums of a matrix, giving [n, 1].
    pub fn row_sum(&self) -> Var<'t, T> {
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            let mut data = vec![T::ZERO; n];
            for i in 0..n {
                data[i] = a.data[i * m..(i + 1) * m].iter().copied().sum();
            }
            Tensor::from_vec(&[n, 1], data)
        });
        self.unary(v, |g, _own, a| {
            let (n, m) = (a.rows(), a.cols());
            let mut da = vec![T::ZERO; n * m];
            for i in 0..n {
                for j in 0..m {
                    da[i * m + j] = g.data[i];
                }
            }
            vec![Tensor::from_vec(&[n, m], da)]
        })
    }

    /// Subtract the constant `col[i]` from every entry of row i.
    pub fn sub_col_const(&self, col: &[T]) -> Var<'t, T> {
        let c = col.to_vec();
        let v = self.val(|a| {
            let (n, m) = (a.rows(), a.cols());
            assert_eq!(c.len(), n);
            let mut data = a.data.clone();
            for i in 0..n {
                for j in 0..m {
                    data[i * m + j] -= c[i];
                }
            }
            Tensor::from_vec(&[n, m], data)
        });
        self.unary(v, |g, _own, _a| vec![g.clone()])
    }

    /// Diagonal of a square matrix as [n, 1].
    pub fn diag(&self) -> Var<'t, T> {
        let v = self.val(|a| {
            let n = a.rows();
            assert_eq!(a.cols(), n, "diag needs a square matrix");
            Tensor::from_vec(&[n, 1], (0..n).map(|i| a.data[i * n + i]).collect())
        });
        self.unary(v, |g, _own, a| {
            let n = a.rows();
            let mut da = vec![T::ZERO; n * n];
            for i in 0..n {
                da[i * n + i] = g.data[i];
            }
            vec![Tensor::from_vec(&[n, n], da)]
        })
    }

    /// Fused layer norm over the last dimension with affine parameters.
    pub fn layer_norm(&self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Var<'t, T> {
        let epsv = T::from_f64(eps);
        let (value, xhat, inv_std) = self.val(|x| {
            gamma.val(|g_| {
                beta.val(|b_| {
                    let (n, m) = (x.rows(), x.cols());
                    assert_eq!(g_.shape, vec![1, m]);
                    assert_eq!(b_.shape, vec![1, m]);
                    let inv_m = T::ONE / T::from_f64(m as f64);
                    let mut xhat = vec![T::ZERO; n * m];
                    let mut inv_std = vec![T::ZERO; n];
                    let mut out = vec![T::ZERO; n * m];
                    for i in 0..n {
                        let row = &x.data[i * m..(i + 1) * m];
                        let mu: T = row.iter().copied().sum::<T>() * inv_m;
                        let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_m;
                        let istd = T::ONE / (var + epsv).sqrt();
                        inv_std[i] = istd;
                        for j in 0..m {
                            let xh = (row[j] - mu) * istd;
                            xhat[i * m + j] = xh;
                            out[i * m + j] = g_.data[j] * xh + b_.data[j];
                        }
                    }
                    (Tensor::from_vec(&[n, m], out), xhat, inv_std)
                })
            })
        });
        let rg = self.tape.requires(&[self.id, gamma.id, beta.id]);
        let back: Option<BackwardFn<T>> = if rg {
            Some(Box::new(move |g, _own, ps| {
                let gamma_data = &ps[1].data;
                let (n, m) = (ps[0].rows(), ps[0].cols());
                let inv_m = T::ONE / T::from_f64(m as f64);
                let mut dx = vec![T::ZERO; n * m];
                let mut dgamma = vec![T::ZERO; m];
                let mut dbeta = vec![T::ZERO; m];
                for i in 0..n {
                    let mut mean_dy = T::ZERO;
                    let mut mean_dyx = T::ZERO;
                    for j in 0..m {
                        let dy = g.data[i * m + j] * gamma_data[j];
                        mean_dy += dy;
                        mean_dyx += dy * xhat[i * m + j];
                        dgamma[j] += g.data[i * m + j] * xhat[i * m + j];
                        dbeta[j] += g.data[i * m + j];
                    }
                    mean_dy *= inv_m;
                    mean_dyx *= inv_m;
                    for j in 0..m {
                        let dy = g.data[i * m + j] * gamma_data[j];
                        dx[i * m + j] = (dy - mean_dy - xhat[i * m + j] * mean_dyx) * inv_std[i];
                    }
                }
                vec![
                    Tensor::from_vec(&[n, m], dx),
                    Tensor::from_vec(&[1, m], dgamma),
                    Tensor::from_vec(&[1, m], dbeta),
                ]
            }))
        } else {
            None
        };
        self.tape.push(value, vec![self.id, gamma.id, beta.id], back, rg)
    }

    /// Fused masked softmax over rows: active rows normalize over active
    /// columns; inactive rows output exact zeros. Stabilized by subtracting
    /// the row max over active columns.
    pub fn masked_softmax(&self, mask: &[bool]) -> Var<'t, T> {
        let msk = mask.to_vec();
        let v = self.val(|p| {
            let n = p.rows();
            assert_eq!(p.cols(), n, "masked_softmax expects square scores");
            assert_eq!(msk.len(), n);
            let mut out = vec![T::ZERO; n * n];
            for i in 0..n {
                if !msk[i] {
                    continue;
                }
                // An active row always has at least one active key: itself.
                let mut mx = T::from_f64(f64::NEG_INFINITY);
                for j in 0..n {
                    if msk[j] {
                        mx = mx.max(p.data[i * n + j]);
                    }
                }
                let mut sum = T::ZERO;
                for j in 0..n {
                    if msk[j] {
                        let e = (p.data[i * n + j] - mx).exp();
                        out[i * n + j] = e;
                        sum += e;
                    }
                }
                for j in 0..n {
                    out[i * n + j] /= sum;
                }
            }
            Tensor::from_vec(&[n, n], out)
        });
        self.unary(v, move |g, own, _p| {
            let n = own.rows();
            let mut dp = vec![T::ZERO; n * n];
            for i in 0..n {
                if !msk[i] {
                    continue;
                }
                let mut dot = T::ZERO;
                for k in 0..n {
                    dot += g.data[i * n + k] * own.data[i * n + k];
                }
                for j in 0..n {
                    if msk[j] {
                        dp[i * n + j] = own.data[i * n + j] * (g.data[i * n + j] - dot);
                    }
                }
            }
            vec![Tensor::from_vec(&[n, n], dp)]
        })
    }
}
