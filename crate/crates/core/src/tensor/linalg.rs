use super::shape::{broadcast_index_map, broadcast_shape};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `out[m,n] += a[m,k] @ b[k,n]`
fn gemm_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] @ b[k,n]^T`
///
/// `b` is transposed once so the inner loop is an axpy over `k`, which
/// vectorizes, instead of a dot-product reduction, which does not.
fn gemm_nt_acc<S: Scalar>(g: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    let mut bt = vec![S::zero(); n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_acc(g, &bt, out, m, n, k);
}

/// `out[k,n] += a[m,k]^T @ g[m,n]`
fn gemm_tn_acc<S: Scalar>(a: &[S], g: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Batched matrix product `[.., m, k] @ [.., k, n] -> [.., m, n]`.
    ///
    /// Leading dimensions broadcast. A rank-2 right operand is applied to
    /// every leading row of the left operand as one large product.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::dim(format!("matmul shape mismatch: {sa:?} @ {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];

        if sb.len() == 2 {
            // fold all leading dims of `a` into the row count
            let rows = numel(&sa) / k.max(1);
            let mut out = vec![S::zero(); rows * n];
            gemm_acc(&self.data(), &other.data(), &mut out, rows, k, n);
            let mut shape = sa.clone();
            *shape.last_mut().unwrap() = n;
            let (pa, pb) = (self.clone(), other.clone());
            return Ok(Tensor::from_op(
                shape,
                out,
                vec![self.clone(), other.clone()],
                move |g, _| {
                    let ga = pa.requires_grad().then(|| {
                        let mut ga = vec![S::zero(); rows * k];
                        gemm_nt_acc(g, &pb.data(), &mut ga, rows, k, n);
                        ga
                    });
                    let gb = pb.requires_grad().then(|| {
                        let mut gb = vec![S::zero(); k * n];
                        gemm_tn_acc(&pa.data(), g, &mut gb, rows, k, n);
                        gb
                    });
                    vec![ga, gb]
                },
            ));
        }

        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let lead = broadcast_shape(lead_a, lead_b)
            .map_err(|_| Error::dim(format!("matmul batch dims not broadcastable: {sa:?} @ {sb:?}")))?;
        let batches = numel(&lead);
        let map_a = broadcast_index_map(lead_a, &lead);
        let map_b = broadcast_index_map(lead_b, &lead);
        let (sz_a, sz_b, sz_o) = (m * k, k * n, m * n);
        let mut out = vec![S::zero(); batches * sz_o];
        {
            let (a, b) = (self.data(), other.data());
            for bi in 0..batches {
                let (oa, ob) = (map_a[bi] * sz_a, map_b[bi] * sz_b);
                gemm_acc(
                    &a[oa..oa + sz_a],
                    &b[ob..ob + sz_b],
                    &mut out[bi * sz_o..(bi + 1) * sz_o],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead.clone();
        shape.extend([m, n]);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            move |g, _| {
                let (a, b) = (pa.data(), pb.data());
                let mut ga = pa.requires_grad().then(|| vec![S::zero(); a.len()]);
                let mut gb = pb.requires_grad().then(|| vec![S::zero(); b.len()]);
                for bi in 0..batches {
                    let (oa, ob) = (map_a[bi] * sz_a, map_b[bi] * sz_b);
                    let gs = &g[bi * sz_o..(bi + 1) * sz_o];
                    if let Some(ga) = ga.as_mut() {
                        gemm_nt_acc(gs, &b[ob..ob + sz_b], &mut ga[oa..oa + sz_a], m, k, n);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gemm_tn_acc(&a[oa..oa + sz_a], gs, &mut gb[ob..ob + sz_b], m, k, n);
                    }
                }
                vec![ga, gb]
            },
        ))
    }
}
