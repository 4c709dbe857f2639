//! Forward kernels for rank-2 tensors.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
fn dims(t: &Tensor<impl Scalar>) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// Broadcast result shape of two rank-2 shapes, if compatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != 2 || b.len() != 2 {
        return None;
    }
    let mut out = Vec::with_capacity(2);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            _ if x == y => out.push(x),
            (1, _) => out.push(y),
            (_, 1) => out.push(x),
            _ => return None,
        }
    }
    Some(out)
}

/// `shape` can be broadcast up to `target`.
pub(crate) fn broadcastable_to(shape: &[usize], target: &[usize]) -> bool {
    shape.len() == 2
        && target.len() == 2
        && shape.iter().zip(target).all(|(&s, &t)| s == t || s == 1)
}

pub(crate) fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let (rows, cols) = (out_shape[0], out_shape[1]);
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out_shape.to_vec(), data).expect("shape checked");
    }
    let (ar, ac) = dims(a);
    let (br, bc) = dims(b);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let arow = if ar == 1 { 0 } else { r * ac };
        let brow = if br == 1 { 0 } else { r * bc };
        match (ac == 1 && cols > 1, bc == 1 && cols > 1) {
            (false, false) => {
                let xs = &ad[arow..arow + cols];
                let ys = &bd[brow..brow + cols];
                data.extend(xs.iter().zip(ys).map(|(&x, &y)| f(x, y)));
            }
            (true, false) => {
                let x = ad[arow];
                data.extend(bd[brow..brow + cols].iter().map(|&y| f(x, y)));
            }
            (false, true) => {
                let y = bd[brow];
                data.extend(ad[arow..arow + cols].iter().map(|&x| f(x, y)));
            }
            (true, true) => {
                let v = f(ad[arow], bd[brow]);
                data.extend(std::iter::repeat_n(v, cols));
            }
        }
    }
    Tensor::new(out_shape.to_vec(), data).expect("shape checked")
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (ar, ac) = dims(a);
    let (br, bc) = dims(b);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = Tensor::zeros(&[m, n]);
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`,
    // whose sizes were validated when the node was built.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            T::zero(),
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Sum `t` down to `target` (each target dim equals the source dim or 1).
pub(crate) fn sum_to<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if t.shape() == target {
        return t.clone();
    }
    let rows = t.rows();
    let mut out = Tensor::zeros(target);
    let (tr, tc) = (target[0], target[1]);
    let od = out.data_mut();
    for r in 0..rows {
        let orow = if tr == 1 { 0 } else { r * tc };
        let src = t.row(r);
        if tc == 1 {
            let s: T = src.iter().copied().sum();
            od[orow] = od[orow] + s;
        } else {
            for (o, &x) in od[orow..orow + tc].iter_mut().zip(src) {
                *o = *o + x;
            }
        }
    }
    out
}

pub(crate) fn broadcast_to<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if t.shape() == target {
        return t.clone();
    }
    let (sr, sc) = dims(t);
    let (rows, cols) = (target[0], target[1]);
    let sd = t.data();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let srow = if sr == 1 { 0 } else { r * sc };
        if sc == 1 {
            data.extend(std::iter::repeat_n(sd[srow], cols));
        } else {
            data.extend_from_slice(&sd[srow..srow + cols]);
        }
    }
    Tensor::new(target.to_vec(), data).expect("shape checked")
}

pub(crate) fn slice_cols<T: Scalar>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let rows = t.rows();
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&t.row(r)[start..start + len]);
    }
    Tensor::new(vec![rows, len], data).expect("shape checked")
}

pub(crate) fn pad_cols<T: Scalar>(t: &Tensor<T>, start: usize, total: usize) -> Tensor<T> {
    let (rows, cols) = dims(t);
    let mut out = Tensor::zeros(&[rows, total]);
    let od = out.data_mut();
    for r in 0..rows {
        od[r * total + start..r * total + start + cols].copy_from_slice(t.row(r));
    }
    out
}

pub(crate) fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![rows, total], data).expect("shape checked")
}

/// Index of the minimum along `axis` for every lane; ties go to the first index.
pub(crate) fn argmin<T: Scalar>(t: &Tensor<T>, axis: usize) -> Vec<usize> {
    let (rows, cols) = dims(t);
    let d = t.data();
    if axis == 1 {
        (0..rows)
            .map(|r| {
                let row = &d[r * cols..(r + 1) * cols];
                let mut best = 0;
                for (j, &x) in row.iter().enumerate().skip(1) {
                    if x < row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    } else {
        (0..cols)
            .map(|c| {
                let mut best = 0;
                for r in 1..rows {
                    if d[r * cols + c] < d[best * cols + c] {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }
}

pub(crate) fn min_axis<T: Scalar>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (rows, cols) = dims(t);
    let idx = argmin(t, axis);
    debug_assert_eq!(idx.len(), if axis == 1 { rows } else { cols });
    if axis == 1 {
        let data = idx.iter().enumerate().map(|(r, &j)| t.get(r, j)).collect();
        Tensor::new(vec![rows, 1], data).expect("shape checked")
    } else {
        let data = idx.iter().enumerate().map(|(c, &r)| t.get(r, c)).collect();
        Tensor::new(vec![1, cols], data).expect("shape checked")
    }
}

pub(crate) fn argmin_mask<T: Scalar>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (rows, cols) = dims(t);
    let mut out = Tensor::zeros(&[rows, cols]);
    let od = out.data_mut();
    for (lane, &i) in argmin(t, axis).iter().enumerate() {
        let (r, c) = if axis == 1 { (lane, i) } else { (i, lane) };
        od[r * cols + c] = T::one();
    }
    out
}

pub(crate) fn sum_axis<T: Scalar>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let target = if axis == 0 {
        [1, t.cols()]
    } else {
        [t.rows(), 1]
    };
    sum_to(t, &target)
}

pub(crate) fn gather_rows<T: Scalar>(t: &Tensor<T>, indices: &[usize]) -> Tensor<T> {
    let cols = t.cols();
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![indices.len(), cols], data).expect("shape checked")
}

pub(crate) fn scatter_add_rows<T: Scalar>(t: &Tensor<T>, indices: &[usize], rows: usize) -> Tensor<T> {
    let cols = t.cols();
    let mut out = Tensor::zeros(&[rows, cols]);
    let od = out.data_mut();
    for (src, &i) in indices.iter().enumerate() {
        for (o, &x) in od[i * cols..(i + 1) * cols].iter_mut().zip(t.row(src)) {
            *o = *o + x;
        }
    }
    out
}
