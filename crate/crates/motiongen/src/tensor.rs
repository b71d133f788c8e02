//! Reverse-mode automatic differentiation on dynamically shaped `f64` tensors.
//!
//! A [`Graph`] is an append-only tape of evaluated nodes; a [`Var`] is a copyable
//! handle into it. Every operation evaluates eagerly and records enough structure
//! for [`grad`] to build the adjoint pass. Crucially, the adjoint pass itself is
//! expressed as new tape nodes, so gradients are differentiable: calling [`grad`]
//! on an expression that already contains gradient nodes yields second-order
//! derivatives. The Wasserstein gradient penalty relies on this.
//!
//! The primitive set is closed under differentiation:
//!
//! * arithmetic with NumPy-style broadcasting (`add`, `sub`, `mul`, `div`),
//!   paired with `sum_to` / `broadcast_to`
//! * unary maps: `neg`, `scale`, `add_scalar`, `powf`, `exp`, `ln`, `tanh`,
//!   `sqrt`, `leaky_relu` (whose mask is treated as constant)
//! * `matmul` over the last two axes, batched over equal leading axes or with a
//!   2-D right operand broadcast across the batch
//! * shape ops: `permute`, `reshape`, `concat` / `slice_axis`, `sum_axis`,
//!   `sum_all`
//! * indexing: `gather_rows` / `scatter_add_rows`
//! * sliding windows on the time axis: `unfold_time` / `fold_time`
//!
//! Reductions like softmax subtract a stop-gradient running maximum, so they are
//! compositions of the primitives above and need no dedicated adjoint.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array3, ArrayD, ArrayViewD, Axis, Ix2, Ix4, IxDyn, Slice, Zip};
use rayon::prelude::*;
use std::cell::{Ref, RefCell};

/// Work threshold (in multiply-adds) below which matrix products stay
/// single-threaded; parallel dispatch overhead dominates under this size.
const PAR_MATMUL_FLOPS: f64 = 1.5e6;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sqrt(usize),
    LeakyRelu(usize, f64),
    Matmul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    BroadcastTo(usize),
    SumTo(usize),
    SumAxis(usize, usize),
    SumAll(usize),
    Concat(Vec<usize>, usize),
    Slice {
        x: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    GatherRows(usize, Vec<usize>),
    ScatterAddRows {
        src: usize,
        indices: Vec<usize>,
    },
    UnfoldTime {
        x: usize,
        k: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    },
    FoldTime {
        src: usize,
        k: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Powf(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::LeakyRelu(a, _)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::SumAxis(a, _)
            | Op::SumAll(a)
            | Op::GatherRows(a, _)
            | Op::Slice { x: a, .. }
            | Op::UnfoldTime { x: a, .. }
            | Op::FoldTime { src: a, .. }
            | Op::ScatterAddRows { src: a, .. } => vec![*a],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Append-only tape of evaluated tensor nodes.
///
/// Not `Sync`: a graph belongs to one training step on one thread. Internal
/// matrix products may fan out over a thread pool, but the tape itself is
/// single-threaded.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op });
        Var { graph: self, id }
    }

    /// Enters a constant (gradient-free leaf) onto the tape.
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A leaf intended as a differentiation target. Structurally identical to
    /// [`Graph::constant`]; the distinction is documentation at call sites.
    pub fn param(&self, value: ArrayD<f64>) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// 0-dimensional constant.
    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        self.constant(ArrayD::zeros(IxDyn(shape)))
    }

    fn value_ref(&self, id: usize) -> Ref<'_, ArrayD<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn op_of(&self, id: usize) -> Op {
        self.nodes.borrow()[id].op.clone()
    }
}

/// Handle to a node on a [`Graph`]. Copyable; all arithmetic allocates new
/// nodes on the same graph.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            panic!("incompatible broadcast shapes {:?} vs {:?}", a, b);
        };
    }
    out
}

fn binop(a: &ArrayD<f64>, b: &ArrayD<f64>, f: impl Fn(f64, f64) -> f64) -> ArrayD<f64> {
    let shape = broadcast_shapes(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

fn reshape_owned(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let total: usize = shape.iter().product();
    assert_eq!(a.len(), total, "reshape element count mismatch");
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape")
}

fn sum_to_impl(a: &ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    assert!(a.ndim() >= target.len(), "sum_to target has more axes");
    let mut cur = a.to_owned();
    while cur.ndim() > target.len() {
        cur = cur.sum_axis(Axis(0));
    }
    for i in 0..target.len() {
        if target[i] == 1 && cur.shape()[i] != 1 {
            cur = cur.sum_axis(Axis(i)).insert_axis(Axis(i));
        } else {
            assert_eq!(
                target[i],
                cur.shape()[i],
                "sum_to incompatible target {:?} for shape {:?}",
                target,
                a.shape()
            );
        }
    }
    cur
}

/// Row-chunked parallel 2-D product; bit-identical to the sequential product
/// because every output element is computed by exactly one deterministic task.
fn matmul2(a: ndarray::ArrayView2<'_, f64>, b: ndarray::ArrayView2<'_, f64>) -> ndarray::Array2<f64> {
    let (m, k) = a.dim();
    let n = b.dim().1;
    let flops = m as f64 * k as f64 * n as f64;
    let threads = rayon::current_num_threads().max(1);
    if flops < PAR_MATMUL_FLOPS || threads == 1 || m < 2 * threads {
        return a.dot(&b);
    }
    let chunk = m.div_ceil(threads);
    let ranges: Vec<(usize, usize)> = (0..threads)
        .map(|i| (i * chunk, ((i + 1) * chunk).min(m)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    let pieces: Vec<ndarray::Array2<f64>> = ranges
        .par_iter()
        .map(|&(lo, hi)| a.slice(ndarray::s![lo..hi, ..]).dot(&b))
        .collect();
    // assemble into a standard-layout output (concatenate may produce a
    // layout that later reshapes reject)
    let mut out = ndarray::Array2::<f64>::zeros((m, n));
    for (&(lo, hi), piece) in ranges.iter().zip(&pieces) {
        out.slice_mut(ndarray::s![lo..hi, ..]).assign(piece);
    }
    out
}

fn matmul_forward(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let sa = a.shape().to_vec();
    let sb = b.shape().to_vec();
    assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs >=2-D operands");
    let k = sa[sa.len() - 1];
    if sb.len() == 2 {
        assert_eq!(k, sb[0], "matmul inner dims {:?} x {:?}", sa, sb);
        let m: usize = sa[..sa.len() - 1].iter().product();
        let a_st = a.as_standard_layout();
        let a2 = a_st
            .view()
            .into_shape_with_order((m, k))
            .expect("flatten lhs");
        let b2 = b.view().into_dimensionality::<Ix2>().expect("rhs 2d");
        let c2 = matmul2(a2, b2);
        // dot can return a column-major result (outer-product fast path);
        // reshape requires standard layout
        let c2 = if c2.is_standard_layout() {
            c2
        } else {
            c2.as_standard_layout().into_owned()
        };
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(sb[1]);
        c2.into_dyn()
            .into_shape_with_order(IxDyn(&out_shape))
            .expect("matmul out reshape")
    } else {
        assert_eq!(
            sa[..sa.len() - 2],
            sb[..sb.len() - 2],
            "matmul leading dims must match: {:?} x {:?}",
            sa,
            sb
        );
        assert_eq!(k, sb[sb.len() - 2], "matmul inner dims {:?} x {:?}", sa, sb);
        let m = sa[sa.len() - 2];
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let a_st = a.as_standard_layout();
        let b_st = b.as_standard_layout();
        let a3 = a_st
            .view()
            .into_shape_with_order((batch, m, k))
            .expect("batch lhs");
        let b3 = b_st
            .view()
            .into_shape_with_order((batch, k, n))
            .expect("batch rhs");
        let mut out = Array3::<f64>::zeros((batch, m, n));
        let flops = batch as f64 * m as f64 * k as f64 * n as f64;
        if flops >= PAR_MATMUL_FLOPS && batch >= 2 && rayon::current_num_threads() > 1 {
            let pieces: Vec<ndarray::Array2<f64>> = (0..batch)
                .into_par_iter()
                .map(|i| a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)))
                .collect();
            for (i, piece) in pieces.into_iter().enumerate() {
                out.index_axis_mut(Axis(0), i).assign(&piece);
            }
        } else {
            for i in 0..batch {
                let av = a3.index_axis(Axis(0), i);
                let bv = b3.index_axis(Axis(0), i);
                let mut cv = out.index_axis_mut(Axis(0), i);
                general_mat_mul(1.0, &av, &bv, 0.0, &mut cv);
            }
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        out.into_dyn()
            .into_shape_with_order(IxDyn(&out_shape))
            .expect("batched matmul out reshape")
    }
}

/// TensorFlow-style SAME padding: output length `ceil(t / stride)` with the
/// shortfall split so the left side gets the smaller half.
pub fn same_padding(t: usize, k: usize, stride: usize) -> (usize, usize, usize) {
    assert!(t > 0 && k > 0 && stride > 0);
    let out_t = t.div_ceil(stride);
    let needed = ((out_t - 1) * stride + k).saturating_sub(t);
    let pad_l = needed / 2;
    let pad_r = needed - pad_l;
    (out_t, pad_l, pad_r)
}

fn unfold_forward(x: &ArrayD<f64>, k: usize, stride: usize, pad_l: usize, pad_r: usize) -> ArrayD<f64> {
    let xv = x.view().into_dimensionality::<Ix4>().expect("unfold_time expects [b, t, nodes, c]");
    let (b, t, nodes, c) = xv.dim();
    let padded = t + pad_l + pad_r;
    assert!(padded >= k, "window larger than padded length");
    let t_out = (padded - k) / stride + 1;
    let mut out = ndarray::Array4::<f64>::zeros((b, t_out, nodes, k * c));
    for u in 0..t_out {
        for j in 0..k {
            let ti = (u * stride + j) as isize - pad_l as isize;
            if ti < 0 || ti >= t as isize {
                continue;
            }
            out.slice_mut(ndarray::s![.., u, .., j * c..(j + 1) * c])
                .assign(&xv.slice(ndarray::s![.., ti as usize, .., ..]));
        }
    }
    out.into_dyn()
}

fn fold_forward(
    g: &ArrayD<f64>,
    k: usize,
    stride: usize,
    pad_l: usize,
    _pad_r: usize,
    orig_t: usize,
) -> ArrayD<f64> {
    let gv = g.view().into_dimensionality::<Ix4>().expect("fold_time expects [b, t_out, nodes, k*c]");
    let (b, t_out, nodes, kc) = gv.dim();
    assert_eq!(kc % k, 0);
    let c = kc / k;
    let mut out = ndarray::Array4::<f64>::zeros((b, orig_t, nodes, c));
    for u in 0..t_out {
        for j in 0..k {
            let ti = (u * stride + j) as isize - pad_l as isize;
            if ti < 0 || ti >= orig_t as isize {
                continue;
            }
            let src = gv.slice(ndarray::s![.., u, .., j * c..(j + 1) * c]);
            let mut dst = out.slice_mut(ndarray::s![.., ti as usize, .., ..]);
            dst += &src;
        }
    }
    out.into_dyn()
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Owned copy of the node's value.
    pub fn value(&self) -> ArrayD<f64> {
        self.graph.value_ref(self.id).clone()
    }

    /// Runs `f` against the node's value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.graph.value_ref(self.id))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_ref(self.id).shape().to_vec()
    }

    /// Value of a 0-dimensional node.
    pub fn scalar_value(&self) -> f64 {
        let v = self.graph.value_ref(self.id);
        assert_eq!(v.ndim(), 0, "scalar_value on non-scalar node");
        v[IxDyn(&[])]
    }

    fn bin(self, rhs: Var<'g>, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            let b = self.graph.value_ref(rhs.id);
            binop(&a, &b, f)
        };
        self.graph.push(value, op(self.id, rhs.id))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.bin(rhs, |x, y| x + y, Op::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.bin(rhs, |x, y| x - y, Op::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.bin(rhs, |x, y| x * y, Op::Mul)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: Var<'g>) -> Var<'g> {
        self.bin(rhs, |x, y| x / y, Op::Div)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let value = self.graph.value_ref(self.id).mapv(f);
        self.graph.push(value, op)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'g> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(|x| c * x, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        self.unary(|x| x.powf(p), Op::Powf(self.id, p))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(f64::ln, Op::Ln(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    /// `max(x, alpha * x)` for `0 <= alpha < 1`. The backward mask uses the
    /// forward sign and is treated as constant under further differentiation.
    pub fn leaky_relu(self, alpha: f64) -> Var<'g> {
        self.unary(
            |x| if x >= 0.0 { x } else { alpha * x },
            Op::LeakyRelu(self.id, alpha),
        )
    }

    pub fn square(self) -> Var<'g> {
        self.mul(self)
    }

    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            let b = self.graph.value_ref(rhs.id);
            matmul_forward(&a, &b)
        };
        self.graph.push(value, Op::Matmul(self.id, rhs.id))
    }

    pub fn permute(self, perm: &[usize]) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            assert_eq!(perm.len(), a.ndim(), "permute rank mismatch");
            a.view().permuted_axes(IxDyn(perm)).to_owned()
        };
        self.graph.push(value, Op::Permute(self.id, perm.to_vec()))
    }

    /// Transposes the last two axes.
    pub fn t2(self) -> Var<'g> {
        let n = self.shape().len();
        assert!(n >= 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            reshape_owned(&a, shape)
        };
        self.graph.push(value, Op::Reshape(self.id))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            a.broadcast(IxDyn(shape))
                .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", a.shape(), shape))
                .to_owned()
        };
        self.graph.push(value, Op::BroadcastTo(self.id))
    }

    /// Reduces by summation to a broadcast-compatible smaller shape; the
    /// adjoint of [`Var::broadcast_to`].
    pub fn sum_to(self, shape: &[usize]) -> Var<'g> {
        if self.shape() == shape {
            return self;
        }
        let value = {
            let a = self.graph.value_ref(self.id);
            sum_to_impl(&a, shape)
        };
        self.graph.push(value, Op::SumTo(self.id))
    }

    /// Sums over one axis, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'g> {
        let value = self.graph.value_ref(self.id).sum_axis(Axis(axis));
        self.graph.push(value, Op::SumAxis(self.id, axis))
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g> {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / n)
    }

    /// Sums all elements into a 0-dimensional node.
    pub fn sum_all(self) -> Var<'g> {
        let total = self.graph.value_ref(self.id).sum();
        self.graph
            .push(ArrayD::from_elem(IxDyn(&[]), total), Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'g> {
        let n: usize = self.shape().iter().product();
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            a.slice_axis(
                Axis(axis),
                Slice::new(start as isize, Some((start + len) as isize), 1),
            )
            .to_owned()
        };
        self.graph.push(
            value,
            Op::Slice {
                x: self.id,
                axis,
                start,
                len,
            },
        )
    }

    /// Treats `self` as a table `[rows, ...]` and gathers the given rows.
    pub fn gather_rows(self, indices: &[usize]) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            let rows = a.shape()[0];
            for &i in indices {
                assert!(i < rows, "gather index {} out of {} rows", i, rows);
            }
            a.select(Axis(0), indices)
        };
        self.graph
            .push(value, Op::GatherRows(self.id, indices.to_vec()))
    }

    /// Adjoint of [`Var::gather_rows`]: sums slices of `self` into a fresh
    /// `[rows, ...]` table at the given row indices.
    pub fn scatter_add_rows(self, indices: &[usize], rows: usize) -> Var<'g> {
        let value = {
            let src = self.graph.value_ref(self.id);
            assert_eq!(src.shape()[0], indices.len());
            let mut shape = src.shape().to_vec();
            shape[0] = rows;
            let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
            for (i, &r) in indices.iter().enumerate() {
                assert!(r < rows);
                let mut dst = out.index_axis_mut(Axis(0), r);
                dst += &src.index_axis(Axis(0), i);
            }
            out
        };
        self.graph.push(
            value,
            Op::ScatterAddRows {
                src: self.id,
                indices: indices.to_vec(),
            },
        )
    }

    /// Extracts temporal windows: `[b, t, nodes, c]` becomes
    /// `[b, t_out, nodes, k * c]` with zero padding outside the sequence.
    pub fn unfold_time(self, k: usize, stride: usize, pad_l: usize, pad_r: usize) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            unfold_forward(&a, k, stride, pad_l, pad_r)
        };
        self.graph.push(
            value,
            Op::UnfoldTime {
                x: self.id,
                k,
                stride,
                pad_l,
                pad_r,
            },
        )
    }

    /// Adjoint of [`Var::unfold_time`]: scatter-adds windows back to
    /// `[b, orig_t, nodes, c]`.
    pub fn fold_time(
        self,
        k: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
        orig_t: usize,
    ) -> Var<'g> {
        let value = {
            let a = self.graph.value_ref(self.id);
            fold_forward(&a, k, stride, pad_l, pad_r, orig_t)
        };
        self.graph.push(
            value,
            Op::FoldTime {
                src: self.id,
                k,
                stride,
                pad_l,
                pad_r,
            },
        )
    }

    /// Numerically stable softmax over the last axis. The subtracted running
    /// maximum enters as a stop-gradient constant, so the whole expression is
    /// a composition of differentiable primitives.
    pub fn softmax_last(self) -> Var<'g> {
        let maxes = self.with_value(|a| {
            let last = a.ndim() - 1;
            a.fold_axis(Axis(last), f64::NEG_INFINITY, |&m, &x| m.max(x))
                .insert_axis(Axis(last))
        });
        let maxc = self.graph.constant(maxes);
        let shifted = self.sub(maxc.broadcast_to(&self.shape()));
        let e = shifted.exp();
        let last = self.shape().len() - 1;
        let mut denom_shape = self.shape();
        denom_shape[last] = 1;
        let denom = e.sum_to(&denom_shape);
        e.div(denom.broadcast_to(&self.shape()))
    }
}

impl<'g> std::ops::Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        Var::add(self, rhs)
    }
}

impl<'g> std::ops::Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        Var::sub(self, rhs)
    }
}

impl<'g> std::ops::Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        Var::mul(self, rhs)
    }
}

impl<'g> std::ops::Div for Var<'g> {
    type Output = Var<'g>;
    fn div(self, rhs: Var<'g>) -> Var<'g> {
        Var::div(self, rhs)
    }
}

impl<'g> std::ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        Var::neg(self)
    }
}

/// Concatenates along `axis`.
pub fn concat<'g>(vars: &[Var<'g>], axis: usize) -> Var<'g> {
    assert!(!vars.is_empty());
    let graph = vars[0].graph;
    let value = {
        let refs: Vec<Ref<'_, ArrayD<f64>>> = vars.iter().map(|v| graph.value_ref(v.id)).collect();
        let views: Vec<ArrayViewD<'_, f64>> = refs.iter().map(|r| r.view()).collect();
        ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch")
    };
    graph.push(value, Op::Concat(vars.iter().map(|v| v.id).collect(), axis))
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Reverse-mode gradients of a scalar `loss` with respect to `targets`.
///
/// The adjoint computation is appended to the same tape, so the returned
/// values are ordinary differentiable nodes: taking `grad` of an expression
/// built from them yields higher-order derivatives. Targets that do not
/// influence the loss get zero gradients.
pub fn grad<'g>(loss: Var<'g>, targets: &[Var<'g>]) -> Vec<Var<'g>> {
    let g = loss.graph;
    assert_eq!(loss.shape(), Vec::<usize>::new(), "grad requires scalar loss");
    let n = loss.id + 1;

    // A node is active when it transitively depends on a target; adjoints are
    // only propagated along active paths.
    let mut active = vec![false; n];
    for t in targets {
        assert!(t.id < n, "target created after loss");
        active[t.id] = true;
    }
    {
        let nodes = g.nodes.borrow();
        for id in 0..n {
            if active[id] {
                continue;
            }
            if nodes[id].op.inputs().iter().any(|&i| active[i]) {
                active[id] = true;
            }
        }
    }

    let mut adjoint: Vec<Option<Var<'g>>> = vec![None; n];
    if active[loss.id] {
        adjoint[loss.id] = Some(g.scalar(1.0));
    }

    for id in (0..n).rev() {
        if !active[id] {
            continue;
        }
        let Some(gout) = adjoint[id] else { continue };
        let op = g.op_of(id);
        let out = Var { graph: g, id };
        let mut sink = |input: usize, contrib: Var<'g>| {
            if !active[input] {
                return;
            }
            adjoint[input] = Some(match adjoint[input] {
                Some(acc) => acc.add(contrib),
                None => contrib,
            });
        };
        let v = |vid: usize| Var { graph: g, id: vid };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sink(a, gout.sum_to(&v(a).shape()));
                sink(b, gout.sum_to(&v(b).shape()));
            }
            Op::Sub(a, b) => {
                sink(a, gout.sum_to(&v(a).shape()));
                sink(b, gout.neg().sum_to(&v(b).shape()));
            }
            Op::Mul(a, b) => {
                sink(a, gout.mul(v(b)).sum_to(&v(a).shape()));
                sink(b, gout.mul(v(a)).sum_to(&v(b).shape()));
            }
            Op::Div(a, b) => {
                sink(a, gout.div(v(b)).sum_to(&v(a).shape()));
                sink(b, gout.mul(out).div(v(b)).neg().sum_to(&v(b).shape()));
            }
            Op::Neg(a) => sink(a, gout.neg()),
            Op::Scale(a, c) => sink(a, gout.scale(c)),
            Op::AddScalar(a) => sink(a, gout),
            Op::Powf(a, p) => sink(a, gout.mul(v(a).powf(p - 1.0).scale(p))),
            Op::Exp(a) => sink(a, gout.mul(out)),
            Op::Ln(a) => sink(a, gout.div(v(a))),
            Op::Tanh(a) => {
                let one_minus = out.square().neg().add_scalar(1.0);
                sink(a, gout.mul(one_minus));
            }
            Op::Sqrt(a) => sink(a, gout.scale(0.5).div(out)),
            Op::LeakyRelu(a, alpha) => {
                let mask = v(a).with_value(|x| x.mapv(|t| if t >= 0.0 { 1.0 } else { alpha }));
                let maskc = g.constant(mask);
                sink(a, gout.mul(maskc));
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (v(a).shape(), v(b).shape());
                if sb.len() == 2 && sa.len() > 2 {
                    sink(a, gout.matmul(v(b).t2()));
                    let m: usize = sa[..sa.len() - 1].iter().product();
                    let k = sa[sa.len() - 1];
                    let nn = sb[1];
                    let a2 = v(a).reshape(&[m, k]);
                    let g2 = gout.reshape(&[m, nn]);
                    sink(b, a2.t2().matmul(g2));
                } else {
                    sink(a, gout.matmul(v(b).t2()));
                    sink(b, v(a).t2().matmul(gout));
                }
            }
            Op::Permute(a, perm) => sink(a, gout.permute(&invert_perm(&perm))),
            Op::Reshape(a) => sink(a, gout.reshape(&v(a).shape())),
            Op::BroadcastTo(a) => sink(a, gout.sum_to(&v(a).shape())),
            Op::SumTo(a) => sink(a, gout.broadcast_to(&v(a).shape())),
            Op::SumAxis(a, axis) => {
                let mut shape = gout.shape();
                shape.insert(axis, 1);
                sink(a, gout.reshape(&shape).broadcast_to(&v(a).shape()));
            }
            Op::SumAll(a) => sink(a, gout.broadcast_to(&v(a).shape())),
            Op::Concat(xs, axis) => {
                let mut offset = 0usize;
                for x in xs {
                    let len = v(x).shape()[axis];
                    sink(x, gout.slice_axis(axis, offset, len));
                    offset += len;
                }
            }
            Op::Slice { x, axis, start, len } => {
                let xs = v(x).shape();
                let total = xs[axis];
                let mut parts: Vec<Var<'g>> = Vec::new();
                if start > 0 {
                    let mut s = xs.clone();
                    s[axis] = start;
                    parts.push(g.zeros(&s));
                }
                parts.push(gout);
                if start + len < total {
                    let mut s = xs.clone();
                    s[axis] = total - start - len;
                    parts.push(g.zeros(&s));
                }
                let padded = if parts.len() == 1 {
                    parts[0]
                } else {
                    concat(&parts, axis)
                };
                sink(x, padded);
            }
            Op::GatherRows(a, indices) => {
                let rows = v(a).shape()[0];
                sink(a, gout.scatter_add_rows(&indices, rows));
            }
            Op::ScatterAddRows { src, indices, .. } => {
                sink(src, gout.gather_rows(&indices));
            }
            Op::UnfoldTime {
                x,
                k,
                stride,
                pad_l,
                pad_r,
            } => {
                let orig_t = v(x).shape()[1];
                sink(x, gout.fold_time(k, stride, pad_l, pad_r, orig_t));
            }
            Op::FoldTime {
                src,
                k,
                stride,
                pad_l,
                pad_r,
            } => {
                sink(src, gout.unfold_time(k, stride, pad_l, pad_r));
            }
        }
    }

    targets
        .iter()
        .map(|t| adjoint[t.id].unwrap_or_else(|| g.zeros(&t.shape())))
        .collect()
}

/// Finite-difference gradient checking harness.
pub mod fdcheck {
    use ndarray::{ArrayD, IxDyn};

    /// Central-difference gradient of `f` at `x`, one coordinate at a time.
    /// The step is `eps * max(1, |x_i|)` per coordinate.
    pub fn central_diff(
        f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
        x: &ArrayD<f64>,
        eps: f64,
    ) -> ArrayD<f64> {
        let mut out = ArrayD::<f64>::zeros(IxDyn(x.shape()));
        let mut xp = x.clone();
        let flat_len = x.len();
        for i in 0..flat_len {
            let orig = x.as_slice().expect("standard layout")[i];
            let h = eps * orig.abs().max(1.0);
            xp.as_slice_mut().unwrap()[i] = orig + h;
            let fp = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig - h;
            let fm = f(&xp);
            xp.as_slice_mut().unwrap()[i] = orig;
            out.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    /// Maximum elementwise relative error with an absolute floor: each
    /// component contributes `|a - n| / max(|a|, |n|, floor)`.
    pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, floor: f64) -> f64 {
        assert_eq!(analytic.shape(), numeric.shape());
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = a.abs().max(n.abs()).max(floor);
            worst = worst.max((a - n).abs() / denom);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::fdcheck::{central_diff, max_rel_err};
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    /// FD-checks `build` (a scalar function of one tensor input) at `x0`.
    fn check_scalar_fn(
        build: impl for<'a> Fn(&'a Graph, Var<'a>) -> Var<'a>,
        x0: &ArrayD<f64>,
        tol: f64,
    ) {
        let g = Graph::new();
        let x = g.param(x0.clone());
        let y = build(&g, x);
        let gx = grad(y, &[x])[0].value();
        let mut f = |xv: &ArrayD<f64>| {
            let g2 = Graph::new();
            let x2 = g2.param(xv.clone());
            build(&g2, x2).scalar_value()
        };
        let num = central_diff(&mut f, x0, 1e-5);
        let err = max_rel_err(&gx, &num, 1e-6);
        assert!(err < tol, "gradient mismatch: rel err {}", err);
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = randn(&mut rng, &[3, 4]);
        check_scalar_fn(|_, x| x.exp().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.tanh().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.square().add_scalar(1.0).ln().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.square().add_scalar(0.5).sqrt().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.leaky_relu(0.2).sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.scale(3.0).add_scalar(-1.0).neg().sum_all(), &x0, 1e-6);
        check_scalar_fn(
            |_, x| x.square().add_scalar(1.0).powf(1.7).sum_all(),
            &x0,
            1e-6,
        );
    }

    #[test]
    fn binary_broadcast_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b0 = randn(&mut rng, &[4]);
        // lhs [3,4] broadcast against rhs [4]
        let x0 = randn(&mut rng, &[3, 4]);
        for mode in 0..4 {
            let b = b0.clone();
            let g = Graph::new();
            let x = g.param(x0.clone());
            let bv = g.param(b.clone());
            let y = match mode {
                0 => x.add(bv),
                1 => x.sub(bv),
                2 => x.mul(bv),
                _ => x.div(bv.square().add_scalar(1.0)),
            }
            .square()
            .sum_all();
            let gs = grad(y, &[x, bv]);
            let gx = gs[0].value();
            let gb = gs[1].value();

            let mut fx = |xv: &ArrayD<f64>| {
                let g2 = Graph::new();
                let x2 = g2.param(xv.clone());
                let b2 = g2.param(b.clone());
                match mode {
                    0 => x2.add(b2),
                    1 => x2.sub(b2),
                    2 => x2.mul(b2),
                    _ => x2.div(b2.square().add_scalar(1.0)),
                }
                .square()
                .sum_all()
                .scalar_value()
            };
            let nx = central_diff(&mut fx, &x0, 1e-5);
            assert!(max_rel_err(&gx, &nx, 1e-6) < 1e-6, "mode {} lhs", mode);

            let mut fb = |bv2: &ArrayD<f64>| {
                let g2 = Graph::new();
                let x2 = g2.param(x0.clone());
                let b2 = g2.param(bv2.clone());
                match mode {
                    0 => x2.add(b2),
                    1 => x2.sub(b2),
                    2 => x2.mul(b2),
                    _ => x2.div(b2.square().add_scalar(1.0)),
                }
                .square()
                .sum_all()
                .scalar_value()
            };
            let nb = central_diff(&mut fb, &b0, 1e-5);
            assert!(max_rel_err(&gb, &nb, 1e-6) < 1e-6, "mode {} rhs", mode);
        }
    }

    #[test]
    fn matmul_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // batched case: [2,3,4] x [2,4,2]
        let a0 = randn(&mut rng, &[2, 3, 4]);
        let b0 = randn(&mut rng, &[2, 4, 2]);
        let g = Graph::new();
        let a = g.param(a0.clone());
        let b = g.param(b0.clone());
        let y = a.matmul(b).square().sum_all();
        let gs = grad(y, &[a, b]);
        let mut fa = |av: &ArrayD<f64>| {
            let g2 = Graph::new();
            let a2 = g2.param(av.clone());
            let b2 = g2.param(b0.clone());
            a2.matmul(b2).square().sum_all().scalar_value()
        };
        let na = central_diff(&mut fa, &a0, 1e-5);
        assert!(max_rel_err(&gs[0].value(), &na, 1e-6) < 1e-6);
        let mut fb = |bv: &ArrayD<f64>| {
            let g2 = Graph::new();
            let a2 = g2.param(a0.clone());
            let b2 = g2.param(bv.clone());
            a2.matmul(b2).square().sum_all().scalar_value()
        };
        let nb = central_diff(&mut fb, &b0, 1e-5);
        assert!(max_rel_err(&gs[1].value(), &nb, 1e-6) < 1e-6);

        // broadcast case: [2,3,4] x [4,5]
        let w0 = randn(&mut rng, &[4, 5]);
        let g = Graph::new();
        let a = g.param(a0.clone());
        let w = g.param(w0.clone());
        let y = a.matmul(w).square().sum_all();
        let gs = grad(y, &[a, w]);
        let mut fw = |wv: &ArrayD<f64>| {
            let g2 = Graph::new();
            let a2 = g2.param(a0.clone());
            let w2 = g2.param(wv.clone());
            a2.matmul(w2).square().sum_all().scalar_value()
        };
        let nw = central_diff(&mut fw, &w0, 1e-5);
        assert!(max_rel_err(&gs[1].value(), &nw, 1e-6) < 1e-6);
        let mut fa2 = |av: &ArrayD<f64>| {
            let g2 = Graph::new();
            let a2 = g2.param(av.clone());
            let w2 = g2.param(w0.clone());
            a2.matmul(w2).square().sum_all().scalar_value()
        };
        let na2 = central_diff(&mut fa2, &a0, 1e-5);
        assert!(max_rel_err(&gs[0].value(), &na2, 1e-6) < 1e-6);
    }

    #[test]
    fn shape_op_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x0 = randn(&mut rng, &[2, 3, 4]);
        check_scalar_fn(
            |_, x| x.permute(&[2, 0, 1]).square().sum_all(),
            &x0,
            1e-6,
        );
        check_scalar_fn(|_, x| x.reshape(&[6, 4]).square().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.sum_axis(1).square().sum_all(), &x0, 1e-6);
        check_scalar_fn(|_, x| x.sum_to(&[1, 3, 1]).square().sum_all(), &x0, 1e-6);
        check_scalar_fn(
            |_, x| x.slice_axis(2, 1, 2).square().sum_all(),
            &x0,
            1e-6,
        );
        check_scalar_fn(
            |_, x| x.broadcast_to(&[5, 2, 3, 4]).square().sum_all(),
            &x0,
            1e-6,
        );
        check_scalar_fn(
            |g, x| {
                let y = x.slice_axis(0, 0, 1);
                let z = x.slice_axis(0, 1, 1);
                let _ = g;
                concat(&[y, z, y], 0).square().sum_all()
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn gather_scatter_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x0 = randn(&mut rng, &[5, 3]);
        check_scalar_fn(
            |_, x| x.gather_rows(&[0, 2, 2, 4]).square().sum_all(),
            &x0,
            1e-6,
        );
        let s0 = randn(&mut rng, &[4, 3]);
        check_scalar_fn(
            |_, x| x.scatter_add_rows(&[1, 1, 0, 2], 3).square().sum_all(),
            &s0,
            1e-6,
        );
    }

    #[test]
    fn unfold_fold_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x0 = randn(&mut rng, &[2, 5, 3, 2]);
        let (_, pad_l, pad_r) = same_padding(5, 4, 2);
        check_scalar_fn(
            move |_, x| x.unfold_time(4, 2, pad_l, pad_r).square().sum_all(),
            &x0,
            1e-6,
        );
        let (t_out, pl, pr) = same_padding(5, 3, 2);
        let g0 = randn(&mut rng, &[2, t_out, 3, 6]);
        check_scalar_fn(
            move |_, x| x.fold_time(3, 2, pl, pr, 5).square().sum_all(),
            &g0,
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grads_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x0 = randn(&mut rng, &[3, 6]);
        let g = Graph::new();
        let x = g.param(x0.clone());
        let s = x.softmax_last();
        let sums = s.value().sum_axis(Axis(1));
        for v in sums.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // weighted sum so the gradient is nontrivial
        let w = randn(&mut rng, &[3, 6]);
        check_scalar_fn(
            |g2, x2| {
                let wv = g2.constant(w.clone());
                x2.softmax_last().mul(wv).sum_all()
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn unfold_same_padding_shapes() {
        let (t_out, pl, pr) = same_padding(16, 4, 2);
        assert_eq!((t_out, pl, pr), (8, 1, 1));
        let (t_out, pl, pr) = same_padding(1, 4, 2);
        assert_eq!(t_out, 1);
        assert_eq!(pl + pr, 3);
        let (t_out, pl, pr) = same_padding(1, 1, 2);
        assert_eq!((t_out, pl, pr), (1, 0, 0));
        let (t_out, _, _) = same_padding(5, 4, 2);
        assert_eq!(t_out, 3);
    }

    #[test]
    fn second_order_derivatives_through_grad() {
        // f(x) = sum(x^3): grad is 3x^2, grad of sum(grad) is 6x.
        let x0 = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, -1.5, 2.0]).unwrap();
        let g = Graph::new();
        let x = g.param(x0.clone());
        let y = x.powf(3.0).sum_all();
        let gx = grad(y, &[x])[0];
        let expected_first = x0.mapv(|v| 3.0 * v * v);
        assert!(max_rel_err(&gx.value(), &expected_first, 1e-9) < 1e-12);
        let z = gx.sum_all();
        let ggx = grad(z, &[x])[0];
        let expected_second = x0.mapv(|v| 6.0 * v);
        assert!(max_rel_err(&ggx.value(), &expected_second, 1e-9) < 1e-12);
    }

    #[test]
    fn second_order_through_norm_matches_closed_form() {
        // r(x) = ||x||, loss = (r - 1)^2; hessian-vector structure exercised by
        // differentiating the penalty with respect to a linear map's weight.
        // D(x) = w . x, xhat fixed; penalty p(w) = (||w|| - 1)^2 since
        // d(w.x)/dx = w. dp/dw = 2(||w|| - 1) * w / ||w||.
        let w0 = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.6, -0.8, 0.5]).unwrap();
        let x0 = ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, 2.0, -1.0]).unwrap();
        let g = Graph::new();
        let w = g.param(w0.clone());
        let x = g.param(x0.clone());
        let score = w.mul(x).sum_all();
        let gx = grad(score, &[x])[0];
        let norm = gx.square().sum_all().sqrt();
        let penalty = norm.add_scalar(-1.0).square();
        let gw = grad(penalty, &[w])[0].value();
        let r = (0.6f64 * 0.6 + 0.64 + 0.25).sqrt();
        let expected = w0.mapv(|v| 2.0 * (r - 1.0) * v / r);
        assert!(max_rel_err(&gw, &expected, 1e-9) < 1e-10);
    }

    #[test]
    fn zero_gradient_for_unrelated_target() {
        let g = Graph::new();
        let x = g.param(ArrayD::from_elem(IxDyn(&[2]), 1.0));
        let y = g.param(ArrayD::from_elem(IxDyn(&[3]), 2.0));
        let loss = x.square().sum_all();
        let gy = grad(loss, &[y])[0].value();
        assert_eq!(gy.shape(), &[3]);
        assert!(gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_accumulates_over_shared_subexpressions() {
        // y = x * x + x: dy/dx = 2x + 1
        let g = Graph::new();
        let x = g.param(ArrayD::from_elem(IxDyn(&[]), 3.0));
        let y = x.mul(x).add(x);
        let gx = grad(y, &[x])[0].scalar_value();
        assert!((gx - 7.0).abs() < 1e-12);
    }

    #[test]
    fn batched_matmul_matches_flattened_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a0 = randn(&mut rng, &[3, 2, 4, 5]);
        let b0 = randn(&mut rng, &[3, 2, 5, 6]);
        let g = Graph::new();
        let c = g.param(a0.clone()).matmul(g.param(b0.clone())).value();
        assert_eq!(c.shape(), &[3, 2, 4, 6]);
        let a4 = a0.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let b4 = b0.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let c4 = c.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let av: ndarray::Array2<f64> = a4.slice(ndarray::s![i, j, .., ..]).to_owned();
                let bv: ndarray::Array2<f64> = b4.slice(ndarray::s![i, j, .., ..]).to_owned();
                let cv = av.dot(&bv);
                let got: ndarray::Array2<f64> = c4.slice(ndarray::s![i, j, .., ..]).to_owned();
                let diff = (&cv - &got).mapv(f64::abs).sum();
                assert!(diff < 1e-12);
            }
        }
    }

}
