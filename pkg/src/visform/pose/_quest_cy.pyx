# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the quaternion pose estimator.

Mirrors ``_quest_py`` function for function; the pure-numpy module is the
fallback twin and the reference for the parity tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

COMPILED = True

cdef double _EPS_LINE = 1e-30
cdef double _F_STOP = 1e-30
cdef double _STEP_STOP = 1e-13
cdef double _LM_INIT = 1e-6
cdef double _LM_UP = 10.0
cdef double _LM_DOWN = 0.5
cdef double _LM_MAX = 1e8
cdef double _LM_MIN = 1e-14
cdef double _REL_STOP = 1e-9


cdef inline void _quat_to_rot(const double* q, double* R) nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = 1 - 2 * (y * y + z * z)
    R[1] = 2 * (x * y - w * z)
    R[2] = 2 * (x * z + w * y)
    R[3] = 2 * (x * y + w * z)
    R[4] = 1 - 2 * (x * x + z * z)
    R[5] = 2 * (y * z - w * x)
    R[6] = 2 * (x * z - w * y)
    R[7] = 2 * (y * z + w * x)
    R[8] = 1 - 2 * (x * x + y * y)


cdef inline void _cross(const double* a, const double* b, double* out) nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot3(const double* a, const double* b) nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void _normalize(double* v, int n) nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += v[i] * v[i]
    s = sqrt(s)
    if s > 0.0:
        for i in range(n):
            v[i] /= s


cdef void _sym3_eig(const double* M, double* evals, double* V) nogil:
    """Cyclic Jacobi eigendecomposition of a symmetric 3x3 (row-major).

    evals ascending; V columns are the matching eigenvectors.
    """
    cdef double A[9]
    cdef int i, j, p, q, sweep, k
    cdef double off, theta, tq, c, s, apq, app, aqq, aip, aiq, vip, viq
    for i in range(9):
        A[i] = M[i]
        V[i] = 0.0
    V[0] = V[4] = V[8] = 1.0
    cdef double scale
    for sweep in range(60):
        off = fabs(A[1]) + fabs(A[2]) + fabs(A[5])
        scale = fabs(A[0]) + fabs(A[4]) + fabs(A[8])
        if off <= 1e-15 * scale or off == 0.0:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = A[3 * p + q]
                if fabs(apq) < 1e-300:
                    continue
                app = A[3 * p + p]
                aqq = A[3 * q + q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    tq = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    tq = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(tq * tq + 1.0)
                s = tq * c
                A[3 * p + p] = app - tq * apq
                A[3 * q + q] = aqq + tq * apq
                A[3 * p + q] = 0.0
                A[3 * q + p] = 0.0
                for i in range(3):
                    if i != p and i != q:
                        aip = A[3 * i + p]
                        aiq = A[3 * i + q]
                        A[3 * i + p] = c * aip - s * aiq
                        A[3 * p + i] = A[3 * i + p]
                        A[3 * i + q] = s * aip + c * aiq
                        A[3 * q + i] = A[3 * i + q]
                for i in range(3):
                    vip = V[3 * i + p]
                    viq = V[3 * i + q]
                    V[3 * i + p] = c * vip - s * viq
                    V[3 * i + q] = s * vip + c * viq
    # insertion sort ascending, permuting eigenvector columns along
    cdef double ev[3]
    cdef int order[3]
    for i in range(3):
        ev[i] = A[3 * i + i]
        order[i] = i
    for i in range(1, 3):
        j = i
        while j > 0 and ev[order[j]] < ev[order[j - 1]]:
            k = order[j]
            order[j] = order[j - 1]
            order[j - 1] = k
            j -= 1
    cdef double Vs[9]
    for j in range(3):
        evals[j] = ev[order[j]]
        for i in range(3):
            Vs[3 * i + j] = V[3 * i + order[j]]
    for i in range(9):
        V[i] = Vs[i]


cdef inline int _chol_solve(double* H, double* g, double* x, int n) nogil:
    """Solve H x = -g for SPD H (size n<=7), in place Cholesky. Returns 0 on success."""
    cdef double L[49]
    cdef double y[7]
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = H[n * i + j]
            for k in range(j):
                s -= L[n * i + k] * L[n * j + k]
            if i == j:
                if s <= 0.0:
                    return 1
                L[n * i + i] = sqrt(s)
            else:
                L[n * i + j] = s / L[n * j + j]
    for i in range(n):
        s = -g[i]
        for k in range(i):
            s -= L[n * i + k] * y[k]
        y[i] = s / L[n * i + i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[n * k + i] * x[k]
        x[i] = s / L[n * i + i]
    return 0


cdef void _rot_jac_point(const double* q, const double* m, double* D) nogil:
    """d(R(q) m)/dq, (3x4) row-major, same off-sphere extension as the numpy twin."""
    cdef double w = q[0]
    cdef double v[3]
    cdef double vxm[3]
    cdef double mxe[3]
    cdef double vm
    cdef int i, k
    v[0] = q[1]
    v[1] = q[2]
    v[2] = q[3]
    _cross(v, m, vxm)
    vm = _dot3(v, m)
    for i in range(3):
        D[4 * i + 0] = 2.0 * (w * m[i] + vxm[i])
    cdef double e[3]
    for k in range(3):
        e[0] = e[1] = e[2] = 0.0
        e[k] = 1.0
        _cross(m, e, mxe)
        for i in range(3):
            D[4 * i + k + 1] = 2.0 * (
                -v[k] * m[i] + vm * e[i] + m[k] * v[i] - w * mxe[i]
            )


cdef double _raw_f(const double* q, const double* t, const double* m, const double* n,
                   int npts, double* r, double* c) nogil:
    """Raw residuals r_i = ((R m_i) x n_i) . t; returns sum of squares."""
    cdef double R[9]
    cdef double a[3]
    cdef double f = 0.0
    cdef int p, i
    _quat_to_rot(q, R)
    for p in range(npts):
        for i in range(3):
            a[i] = R[3 * i] * m[3 * p] + R[3 * i + 1] * m[3 * p + 1] + R[3 * i + 2] * m[3 * p + 2]
        _cross(a, &n[3 * p], &c[3 * p])
        r[p] = _dot3(&c[3 * p], t)
        f += r[p] * r[p]
    return f


def refine_minimal(object m_in, object n_in, object q0_in, int max_iter):
    """Multi-start LM on the five epipolar constraints over (quaternion, direction).

    Same contract as the numpy twin: returns (S, 10) rows
    [qw qx qy qz tx ty tz f lam2 lam3].
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m_arr = np.ascontiguousarray(m_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] n_arr = np.ascontiguousarray(n_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q_arr = np.ascontiguousarray(q0_in, dtype=np.float64)
    cdef int S = q_arr.shape[0]
    cdef int npts = m_arr.shape[0]
    if npts != 5:
        raise ValueError("refine_minimal expects exactly 5 correspondences")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((S, 10), dtype=np.float64)
    cdef double* m = <double*> m_arr.data
    cdef double* n = <double*> n_arr.data

    cdef double q[4]
    cdef double t[3]
    cdef double qt[4]
    cdef double tt[3]
    cdef double r[5]
    cdef double rt[5]
    cdef double c[15]
    cdef double ct[15]
    cdef double M[9]
    cdef double V[9]
    cdef double ev[3]
    cdef double D[12]
    cdef double J[35]
    cdef double H[49]
    cdef double g[7]
    cdef double delta[7]
    cdef double nxt[3]
    cdef double proj, f, f_trial, lam_lm, step
    cdef int s_idx, it, p, i, j, k, retry
    cdef bint accept

    with nogil:
        for s_idx in range(S):
            for i in range(4):
                q[i] = q_arr[s_idx, i]
            # init t as the direction orthogonal to every c_i at the start
            t[0] = 0.0
            t[1] = 0.0
            t[2] = 1.0
            f = _raw_f(q, t, m, n, npts, r, c)
            for i in range(9):
                M[i] = 0.0
            for p in range(npts):
                for i in range(3):
                    for j in range(3):
                        M[3 * i + j] += c[3 * p + i] * c[3 * p + j]
            _sym3_eig(M, ev, V)
            for i in range(3):
                t[i] = V[3 * i]
            f = _raw_f(q, t, m, n, npts, r, c)
            lam_lm = _LM_INIT
            for it in range(max_iter):
                if f <= _F_STOP or lam_lm >= _LM_MAX:
                    break
                # Jacobian rows: [ (n_p x t)^T D_p | c_p ], radial parts removed
                for p in range(npts):
                    _cross(&n[3 * p], t, nxt)
                    _rot_jac_point(q, &m[3 * p], D)
                    for k in range(4):
                        J[7 * p + k] = nxt[0] * D[k] + nxt[1] * D[4 + k] + nxt[2] * D[8 + k]
                    proj = 0.0
                    for k in range(4):
                        proj += J[7 * p + k] * q[k]
                    for k in range(4):
                        J[7 * p + k] -= proj * q[k]
                    proj = _dot3(&c[3 * p], t)
                    for k in range(3):
                        J[7 * p + 4 + k] = c[3 * p + k] - proj * t[k]
                for i in range(7):
                    g[i] = 0.0
                    for j in range(7):
                        H[7 * i + j] = 0.0
                for p in range(npts):
                    for i in range(7):
                        g[i] += J[7 * p + i] * r[p]
                        for j in range(7):
                            H[7 * i + j] += J[7 * p + i] * J[7 * p + j]
                for i in range(7):
                    H[7 * i + i] += lam_lm
                if _chol_solve(H, g, delta, 7) != 0:
                    lam_lm *= _LM_UP
                    continue
                for i in range(4):
                    qt[i] = q[i] + delta[i]
                for i in range(3):
                    tt[i] = t[i] + delta[4 + i]
                _normalize(qt, 4)
                _normalize(tt, 3)
                f_trial = _raw_f(qt, tt, m, n, npts, rt, ct)
                accept = f_trial < f
                if accept:
                    for i in range(4):
                        q[i] = qt[i]
                    for i in range(3):
                        t[i] = tt[i]
                    for p in range(npts):
                        r[p] = rt[p]
                        for i in range(3):
                            c[3 * p + i] = ct[3 * p + i]
                    lam_lm = lam_lm * _LM_DOWN
                    if lam_lm < _LM_MIN:
                        lam_lm = _LM_MIN
                    step = 0.0
                    for i in range(7):
                        step += delta[i] * delta[i]
                    # converged: vanishing step or negligible relative progress
                    if sqrt(step) < _STEP_STOP or f - f_trial <= _REL_STOP * f:
                        f = f_trial
                        break
                    f = f_trial
                else:
                    lam_lm *= _LM_UP
            # degeneracy diagnostics at the final pose
            for i in range(9):
                M[i] = 0.0
            for p in range(npts):
                for i in range(3):
                    for j in range(3):
                        M[3 * i + j] += c[3 * p + i] * c[3 * p + j]
            _sym3_eig(M, ev, V)
            for i in range(4):
                out[s_idx, i] = q[i]
            for i in range(3):
                out[s_idx, 4 + i] = t[i]
            out[s_idx, 7] = f
            out[s_idx, 8] = ev[1]
            out[s_idx, 9] = ev[2]
    return out


def epipolar_residuals(object q_in, object t_in, object ms_in, object ns_in):
    """Signed point-to-epipolar-line residuals in normalized image units."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_arr = np.ascontiguousarray(
        np.asarray(q_in, dtype=np.float64).reshape(-1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ms = np.ascontiguousarray(ms_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ns = np.ascontiguousarray(ns_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_arr = np.ascontiguousarray(
        np.asarray(t_in, dtype=np.float64).reshape(-1))
    cdef int N = ms.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(N, dtype=np.float64)
    cdef double R[9]
    cdef double a[3]
    cdef double l[3]
    cdef double s
    cdef int p, i
    cdef double* q = <double*> q_arr.data
    cdef double* t = <double*> t_arr.data
    with nogil:
        _quat_to_rot(q, R)
        for p in range(N):
            for i in range(3):
                a[i] = R[3 * i] * ms[p, 0] + R[3 * i + 1] * ms[p, 1] + R[3 * i + 2] * ms[p, 2]
            _cross(t, a, l)
            s = sqrt(l[0] * l[0] + l[1] * l[1])
            if s < _EPS_LINE:
                s = _EPS_LINE
            out[p] = (ns[p, 0] * l[0] + ns[p, 1] * l[1] + ns[p, 2] * l[2]) / s
    return out


cdef double _joint_resid_jac(const double* q, const double* t, const double* m,
                             const double* n, int N, double* rho, double* J) nogil:
    """Normalized residuals and (N,7) Jacobian; returns sum of squares."""
    cdef double R[9]
    cdef double a[3]
    cdef double l[3]
    cdef double h[3]
    cdef double hxt[3]
    cdef double axh[3]
    cdef double D[12]
    cdef double s, nl, f, proj
    cdef int p, i, k
    f = 0.0
    _quat_to_rot(q, R)
    for p in range(N):
        for i in range(3):
            a[i] = R[3 * i] * m[3 * p] + R[3 * i + 1] * m[3 * p + 1] + R[3 * i + 2] * m[3 * p + 2]
        _cross(t, a, l)
        s = sqrt(l[0] * l[0] + l[1] * l[1])
        if s < _EPS_LINE:
            s = _EPS_LINE
        nl = _dot3(&n[3 * p], l)
        rho[p] = nl / s
        f += rho[p] * rho[p]
        # h = grad_l rho = n/s - nl * (lx, ly, 0) / s^3
        h[0] = n[3 * p + 0] / s - nl * l[0] / (s * s * s)
        h[1] = n[3 * p + 1] / s - nl * l[1] / (s * s * s)
        h[2] = n[3 * p + 2] / s
        _cross(h, t, hxt)
        _rot_jac_point(q, &m[3 * p], D)
        for k in range(4):
            J[7 * p + k] = hxt[0] * D[k] + hxt[1] * D[4 + k] + hxt[2] * D[8 + k]
        proj = 0.0
        for k in range(4):
            proj += J[7 * p + k] * q[k]
        for k in range(4):
            J[7 * p + k] -= proj * q[k]
        _cross(a, h, axh)
        proj = _dot3(axh, t)
        for k in range(3):
            J[7 * p + 4 + k] = axh[k] - proj * t[k]
    return f


def residual_jacobian(object q_in, object t_in, object ms_in, object ns_in):
    """Residuals and their (N, 7) Jacobian w.r.t. (q, t), radial directions removed."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_arr = np.ascontiguousarray(
        np.asarray(q_in, dtype=np.float64).reshape(-1))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_arr = np.ascontiguousarray(
        np.asarray(t_in, dtype=np.float64).reshape(-1))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ms = np.ascontiguousarray(ms_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ns = np.ascontiguousarray(ns_in, dtype=np.float64)
    cdef int N = ms.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rho = np.empty(N, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] J = np.empty((N, 7), dtype=np.float64)
    _joint_resid_jac(<double*> q_arr.data, <double*> t_arr.data, <double*> ms.data,
                     <double*> ns.data, N, <double*> rho.data, <double*> J.data)
    return rho, J


def refine_joint(object q0_in, object t0_in, object ms_in, object ns_in, int max_iter):
    """Joint Gauss-Newton refinement of (q, t) on the summed squared residuals."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_arr = np.ascontiguousarray(
        np.asarray(q0_in, dtype=np.float64).reshape(-1)).copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_arr = np.ascontiguousarray(
        np.asarray(t0_in, dtype=np.float64).reshape(-1)).copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ms = np.ascontiguousarray(ms_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ns = np.ascontiguousarray(ns_in, dtype=np.float64)
    cdef int N = ms.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rho_a = np.empty(N, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] J_a = np.empty((N, 7), dtype=np.float64)
    cdef double* q = <double*> q_arr.data
    cdef double* t = <double*> t_arr.data
    cdef double* m = <double*> ms.data
    cdef double* n = <double*> ns.data
    cdef double* rho = <double*> rho_a.data
    cdef double* J = <double*> J_a.data

    cdef double H[49]
    cdef double JtJ[49]
    cdef double g[7]
    cdef double delta[7]
    cdef double qt[4]
    cdef double tt[3]
    cdef double lam_lm, f, f_trial, s, step
    cdef int it, retry, p, i, j
    cdef bint accepted

    with nogil:
        _normalize(q, 4)
        _normalize(t, 3)
        f = 0.0
        f = _joint_resid_jac(q, t, m, n, N, rho, J)
        lam_lm = _LM_INIT
        for it in range(max_iter):
            if f <= _F_STOP:
                break
            f = _joint_resid_jac(q, t, m, n, N, rho, J)
            for i in range(7):
                g[i] = 0.0
                for j in range(7):
                    JtJ[7 * i + j] = 0.0
            for p in range(N):
                for i in range(7):
                    g[i] += J[7 * p + i] * rho[p]
                    for j in range(7):
                        JtJ[7 * i + j] += J[7 * p + i] * J[7 * p + j]
            accepted = False
            for retry in range(25):
                for i in range(49):
                    H[i] = JtJ[i]
                for i in range(7):
                    H[7 * i + i] += lam_lm
                if _chol_solve(H, g, delta, 7) != 0:
                    lam_lm *= _LM_UP
                    continue
                for i in range(4):
                    qt[i] = q[i] + delta[i]
                for i in range(3):
                    tt[i] = t[i] + delta[4 + i]
                _normalize(qt, 4)
                _normalize(tt, 3)
                f_trial = 0.0
                step = 0.0
                for i in range(7):
                    step += delta[i] * delta[i]
                step = sqrt(step)
                # residuals only (no jacobian) for the trial point
                f_trial = _trial_f(qt, tt, m, n, N)
                if f_trial < f:
                    for i in range(4):
                        q[i] = qt[i]
                    for i in range(3):
                        t[i] = tt[i]
                    f = f_trial
                    lam_lm = lam_lm * _LM_DOWN
                    if lam_lm < _LM_MIN:
                        lam_lm = _LM_MIN
                    accepted = step >= _STEP_STOP
                    break
                lam_lm *= _LM_UP
            if not accepted:
                break
    return q_arr, t_arr, float(f)


cdef double _trial_f(const double* q, const double* t, const double* m,
                     const double* n, int N) nogil:
    cdef double R[9]
    cdef double a[3]
    cdef double l[3]
    cdef double s, nl, f
    cdef int p, i
    f = 0.0
    _quat_to_rot(q, R)
    for p in range(N):
        for i in range(3):
            a[i] = R[3 * i] * m[3 * p] + R[3 * i + 1] * m[3 * p + 1] + R[3 * i + 2] * m[3 * p + 2]
        _cross(t, a, l)
        s = sqrt(l[0] * l[0] + l[1] * l[1])
        if s < _EPS_LINE:
            s = _EPS_LINE
        nl = _dot3(&n[3 * p], l)
        f += (nl / s) * (nl / s)
    return f
