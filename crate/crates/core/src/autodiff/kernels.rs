//! Raw numeric kernels shared by forward and backward passes.

/// `C (+)= op(A) * op(B)` with `op(A)` of shape `[m, k]` and `op(B)` of shape
/// `[k, n]`, all row-major. `ta`/`tb` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above against the dimensions and the
    // strides describe exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Hamilton product on `[w, x, y, z]` arrays.
pub(crate) fn qmul(a: &[f64], b: &[f64]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub(crate) fn qconj(a: &[f64]) -> [f64; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

/// Gradients of `a * b` given the output gradient `g`.
pub(crate) fn qmul_vjp(a: &[f64], b: &[f64], g: &[f64]) -> ([f64; 4], [f64; 4]) {
    (qmul(g, &qconj(b)), qmul(&qconj(a), g))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `v + 2w (u x v) + 2 u x (u x v)`: rotation by a unit quaternion, evaluated
/// as a polynomial so that its derivatives are defined everywhere.
pub(crate) fn qrotate(q: &[f64], v: [f64; 3]) -> [f64; 3] {
    let w = q[0];
    let u = [q[1], q[2], q[3]];
    let t = cross(u, v);
    let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
    let c = cross(u, t);
    [
        v[0] + w * t[0] + c[0],
        v[1] + w * t[1] + c[1],
        v[2] + w * t[2] + c[2],
    ]
}

/// Gradients of [`qrotate`] with respect to `q` and `v`.
pub(crate) fn qrotate_vjp(q: &[f64], v: [f64; 3], g: [f64; 3]) -> ([f64; 4], [f64; 3]) {
    let w = q[0];
    let u = [q[1], q[2], q[3]];
    let uv = dot3(u, v);
    let gu = dot3(g, u);
    let gv = dot3(g, v);
    let uu = dot3(u, u);
    let dw = 2.0 * dot3(g, cross(u, v));
    let vg = cross(v, g);
    let mut dq = [dw, 0.0, 0.0, 0.0];
    for i in 0..3 {
        dq[i + 1] = 2.0 * w * vg[i] + 2.0 * (uv * g[i] + gu * v[i] - 2.0 * gv * u[i]);
    }
    let gxu = cross(g, u);
    let mut dv = [0.0; 3];
    for i in 0..3 {
        dv[i] = g[i] + 2.0 * w * gxu[i] + 2.0 * gu * u[i] - 2.0 * uu * g[i];
    }
    (dq, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn rotate_vjp_matches_differences() {
        let q = [0.7, -0.2, 0.4, 0.3];
        let v = [0.3, -1.1, 0.5];
        let g = [0.2, 0.9, -0.4];
        let (dq, dv) = qrotate_vjp(&q, v, g);
        let f = |q: &[f64], v: [f64; 3]| dot3(qrotate(q, v), g);
        let h = 1e-6;
        for i in 0..4 {
            let mut a = q;
            let mut b = q;
            a[i] += h;
            b[i] -= h;
            assert!(((f(&a, v) - f(&b, v)) / (2.0 * h) - dq[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let mut a = v;
            let mut b = v;
            a[i] += h;
            b[i] -= h;
            assert!(((f(&q, a) - f(&q, b)) / (2.0 * h) - dv[i]).abs() < 1e-8);
        }
    }
}
