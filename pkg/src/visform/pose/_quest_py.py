"""Pure-numpy kernels for the quaternion pose estimator.

Fallback twin of the compiled module ``_quest_cy``; both expose the same
functions and implement the same arithmetic, so either backend satisfies the
estimator tests. The compiled module is preferred at import time, this one is
used when the extension is unavailable or ``VISFORM_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

COMPILED = False

_EPS_LINE = 1e-30
_F_STOP = 1e-30
_STEP_STOP = 1e-13
_LM_INIT = 1e-6
_LM_UP = 10.0
_LM_DOWN = 0.5
_LM_MAX = 1e8
_LM_MIN = 1e-14
_REL_STOP = 1e-9


def _quat_to_rot_batch(q: np.ndarray) -> np.ndarray:
    """(S,4) unit quaternions (w,x,y,z) -> (S,3,3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def _objective(q: np.ndarray, m: np.ndarray, n: np.ndarray):
    """Eliminated objective f(q) = lambda_min(sum_i c_i c_i^T), c_i = (R m_i) x n_i.

    Returns (f, t, r, c, lam) where t is the unit eigenvector of the smallest
    eigenvalue (the translation direction), r the raw triple-product residuals
    and lam the ascending eigenvalues.
    """
    R = _quat_to_rot_batch(q)
    a = np.einsum("sij,pj->spi", R, m)
    c = np.cross(a, n[None, :, :])
    M = np.einsum("spi,spj->sij", c, c)
    lam, vec = np.linalg.eigh(M)
    t = vec[:, :, 0]
    r = np.einsum("spi,si->sp", c, t)
    f = np.einsum("sp,sp->s", r, r)
    return f, t, r, c, lam


def _rotmat_jacobian(q: np.ndarray, m: np.ndarray) -> np.ndarray:
    """d(R(q) m_p)/dq for unit q: (S,4) x (P,3) -> (S,P,3,4)."""
    S, P = q.shape[0], m.shape[0]
    w = q[:, 0]
    v = q[:, 1:4]
    D = np.empty((S, P, 3, 4))
    vxm = np.cross(v[:, None, :], m[None, :, :])
    D[:, :, :, 0] = 2.0 * (w[:, None, None] * m[None, :, :] + vxm)
    vm = np.einsum("sk,pk->sp", v, m)
    eye = np.eye(3)
    # m x e_k columns, constant per landmark
    m_cross_e = np.stack([np.cross(m, eye[k]) for k in range(3)], axis=2)  # (P,3,3)
    for k in range(3):
        D[:, :, :, k + 1] = 2.0 * (
            -v[:, k, None, None] * m[None, :, :]
            + vm[:, :, None] * eye[k][None, None, :]
            + m[None, :, k, None] * v[:, None, :]
            - w[:, None, None] * m_cross_e[None, :, :, k]
        )
    return D


def _raw_residuals(q: np.ndarray, t: np.ndarray, m: np.ndarray, n: np.ndarray):
    """Raw triple-product residuals r_i = ((R m_i) x n_i) . t for batched (q, t)."""
    R = _quat_to_rot_batch(q)
    a = np.einsum("sij,pj->spi", R, m)
    c = np.cross(a, n[None, :, :])
    r = np.einsum("spi,si->sp", c, t)
    f = np.einsum("sp,sp->s", r, r)
    return f, r, c


def refine_minimal(m: np.ndarray, n: np.ndarray, q0: np.ndarray, max_iter: int) -> np.ndarray:
    """Multi-start LM on the five epipolar constraints over (quaternion, direction).

    The translation is initialized per start as the smallest eigenvector of
    sum_i c_i c_i^T (the direction orthogonal to every (R m_i) x n_i); the
    residuals are bilinear in (R, t), so the joint Gauss-Newton step uses the
    exact Jacobian and converges quadratically onto exact roots.

    Args:
        m, n: (5, 3) homogeneous bearings of each view.
        q0: (S, 4) unit quaternion starts.
        max_iter: iteration cap per start.

    Returns:
        (S, 10) array, rows [qw qx qy qz tx ty tz f lam2 lam3] where the
        trailing eigenvalues diagnose translation degeneracy at the solution.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    n = np.ascontiguousarray(n, dtype=np.float64)
    q = np.ascontiguousarray(q0, dtype=np.float64).copy()
    S = q.shape[0]
    f, t, r, c, _ = _objective(q, m, n)
    lam_lm = np.full(S, _LM_INIT)
    frozen = np.zeros(S, dtype=bool)
    eye7 = np.eye(7)
    for _ in range(max_iter):
        active = (f > _F_STOP) & (lam_lm < _LM_MAX) & ~frozen
        if not np.any(active):
            break
        D = _rotmat_jacobian(q, m)
        nxt = np.cross(n[None, :, :], t[:, None, :])
        Jq = np.einsum("spi,spik->spk", nxt, D)
        Jq -= np.einsum("spk,sk->sp", Jq, q)[:, :, None] * q[:, None, :]
        Jt = c - np.einsum("spi,si->sp", c, t)[:, :, None] * t[:, None, :]
        J = np.concatenate([Jq, Jt], axis=2)
        H = np.einsum("spk,spl->skl", J, J) + lam_lm[:, None, None] * eye7
        g = np.einsum("spk,sp->sk", J, r)
        delta = -np.linalg.solve(H, g[:, :, None])[:, :, 0]
        q_trial = q + delta[:, :4]
        q_trial /= np.linalg.norm(q_trial, axis=1, keepdims=True)
        t_trial = t + delta[:, 4:]
        t_trial /= np.linalg.norm(t_trial, axis=1, keepdims=True)
        f_trial, r_trial, c_trial = _raw_residuals(q_trial, t_trial, m, n)
        accept = active & (f_trial < f)
        f_prev = f
        q = np.where(accept[:, None], q_trial, q)
        t = np.where(accept[:, None], t_trial, t)
        r = np.where(accept[:, None], r_trial, r)
        c = np.where(accept[:, None, None], c_trial, c)
        f = np.where(accept, f_trial, f)
        lam_lm = np.where(accept, np.maximum(lam_lm * _LM_DOWN, _LM_MIN), lam_lm)
        lam_lm = np.where(active & ~accept, lam_lm * _LM_UP, lam_lm)
        # converged: vanishing step or negligible relative improvement at a
        # non-zero local minimum
        frozen |= accept & (
            (np.linalg.norm(delta, axis=1) < _STEP_STOP) | (f_prev - f <= _REL_STOP * f_prev)
        )
    # eigenvalues of sum c c^T at the final pose diagnose direction uniqueness
    M = np.einsum("spi,spj->sij", c, c)
    lam = np.linalg.eigvalsh(M)
    out = np.empty((S, 10))
    out[:, 0:4] = q
    out[:, 4:7] = t
    out[:, 7] = f
    out[:, 8] = lam[:, 1]
    out[:, 9] = lam[:, 2]
    return out


def epipolar_residuals(q: np.ndarray, t: np.ndarray, ms: np.ndarray, ns: np.ndarray) -> np.ndarray:
    """Signed point-to-epipolar-line residuals in normalized image units.

    residual_i = n_i . (t x R m_i) / || (t x R m_i)_{xy} ||
    """
    q = np.asarray(q, dtype=np.float64).reshape(1, 4)
    R = _quat_to_rot_batch(q)[0]
    a = np.asarray(ms, dtype=np.float64) @ R.T
    l = np.cross(np.asarray(t, dtype=np.float64)[None, :], a)
    s = np.hypot(l[:, 0], l[:, 1])
    s = np.maximum(s, _EPS_LINE)
    return np.einsum("pi,pi->p", np.asarray(ns, dtype=np.float64), l) / s


def residual_jacobian(q: np.ndarray, t: np.ndarray, ms: np.ndarray, ns: np.ndarray):
    """Residuals and their (N, 7) Jacobian w.r.t. (q, t), radial directions removed."""
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    ms = np.asarray(ms, dtype=np.float64)
    ns = np.asarray(ns, dtype=np.float64)
    R = _quat_to_rot_batch(q.reshape(1, 4))[0]
    a = ms @ R.T
    l = np.cross(t[None, :], a)
    s = np.maximum(np.hypot(l[:, 0], l[:, 1]), _EPS_LINE)
    nl = np.einsum("pi,pi->p", ns, l)
    rho = nl / s
    # gradient of rho w.r.t. the epipolar line normal l
    Pl = l.copy()
    Pl[:, 2] = 0.0
    h = ns / s[:, None] - (nl / s**3)[:, None] * Pl
    Jt = np.cross(a, h)
    D = _rotmat_jacobian(q.reshape(1, 4), ms)[0]
    hxt = np.cross(h, t[None, :])
    Jq = np.einsum("pi,pik->pk", hxt, D)
    Jq = Jq - (Jq @ q)[:, None] * q[None, :]
    Jt = Jt - (Jt @ t)[:, None] * t[None, :]
    return rho, np.concatenate([Jq, Jt], axis=1)


def refine_joint(q0: np.ndarray, t0: np.ndarray, ms: np.ndarray, ns: np.ndarray, max_iter: int):
    """Joint Gauss-Newton refinement of (q, t) on the summed squared residuals.

    `max_iter` caps the accepted (descent) steps; each step may retry with a
    larger damping a bounded number of times before the point is declared
    converged. Returns (q, t, f) with q, t unit vectors.
    """
    q = np.asarray(q0, dtype=np.float64).copy()
    q /= np.linalg.norm(q)
    t = np.asarray(t0, dtype=np.float64).copy()
    t /= np.linalg.norm(t)
    rho = epipolar_residuals(q, t, ms, ns)
    f = float(rho @ rho)
    lam_lm = _LM_INIT
    eye7 = np.eye(7)
    for _ in range(max_iter):
        if f < _F_STOP:
            break
        rho, J = residual_jacobian(q, t, ms, ns)
        g = J.T @ rho
        JtJ = J.T @ J
        accepted = False
        for _retry in range(25):
            delta = np.linalg.solve(JtJ + lam_lm * eye7, -g)
            q_trial = q + delta[:4]
            q_trial /= np.linalg.norm(q_trial)
            t_trial = t + delta[4:]
            t_trial /= np.linalg.norm(t_trial)
            rho_t = epipolar_residuals(q_trial, t_trial, ms, ns)
            f_trial = float(rho_t @ rho_t)
            if f_trial < f:
                q, t, f = q_trial, t_trial, f_trial
                lam_lm = max(lam_lm * _LM_DOWN, _LM_MIN)
                accepted = float(np.linalg.norm(delta)) >= _STEP_STOP
                break
            lam_lm *= _LM_UP
        if not accepted:
            break
    return q, t, f
