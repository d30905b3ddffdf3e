"""Hot loops: the backward Riccati sweep and the path-wise Euler-Maruyama
stepper. Each exists twice, as a numba kernel and as a vectorized numpy
routine with the same signature; :func:`riccati_rk4` and :func:`simulate_chunk`
dispatch on :func:`mftg._accel.use_numba`.

Riccati state layout: ``Y[g, i, s]`` with ``g = 0`` the deviation block
``P`` and ``g = 1`` the mean block ``Pbar``; ``D[i, s]`` is the offset
``delta``. Integration runs in reversed time ``tau = T - t``.
"""
import numpy as np

from ._accel import njit, prange, use_numba

# --------------------------------------------------------------------------
# Riccati right-hand side, reversed time:
#   dY/dtau = Q + Y A + A^T Y + sum_{s'} q_{ss'} (Y(s') - Y(s))
#             - Y Cown Y - sum_{j != i} (Y_j Ccross_j Y_i + Y_i Ccross_j Y_j)
#   dD/dtau = <Y_0, N(s)> + sum_{s'} q_{ss'} (D(s') - D(s))


def _rhs_np(Y, D, A, Qrun, Cown, Ccross, gen, noise):
    AY = np.swapaxes(A, -1, -2)[:, None] @ Y
    out = Qrun + Y @ A[:, None] + AY
    S = Y.shape[2]
    if S > 1:
        off = gen - np.diag(np.diag(gen))
        exit_rate = off.sum(axis=1)
        out = out + np.einsum("st,gitab->gisab", off, Y) - exit_rate[None, None, :, None, None] * Y
    out = out - Y @ Cown @ Y
    if Y.shape[1] > 1:
        W = Y @ Ccross
        V = Ccross @ Y
        out = out - (W.sum(axis=1, keepdims=True) - W) @ Y
        out = out - Y @ (V.sum(axis=1, keepdims=True) - V)
    dD = np.einsum("isab,sab->is", Y[0], noise)
    if S > 1:
        dD = dD + D @ off.T - exit_rate[None, :] * D
    return out, dD


def _riccati_rk4_np(Y0, D0, A, Qrun, Cown, Ccross, gen, noise, h, steps, bound):
    hist_Y = np.empty((steps + 1,) + Y0.shape)
    hist_D = np.empty((steps + 1,) + D0.shape)
    Y, D = Y0.copy(), D0.copy()
    hist_Y[0], hist_D[0] = Y, D
    max_asym = 0.0
    args = (A, Qrun, Cown, Ccross, gen, noise)
    for k in range(steps):
        k1, l1 = _rhs_np(Y, D, *args)
        k2, l2 = _rhs_np(Y + 0.5 * h * k1, D + 0.5 * h * l1, *args)
        k3, l3 = _rhs_np(Y + 0.5 * h * k2, D + 0.5 * h * l2, *args)
        k4, l4 = _rhs_np(Y + h * k3, D + h * l3, *args)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        D = D + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        YT = np.swapaxes(Y, -1, -2)
        norms = np.sqrt(np.sum(Y * Y, axis=(-2, -1)))
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(D))) or norms.max() > bound:
            return hist_Y, hist_D, k + 1, max_asym, True
        asym = np.sqrt(np.sum((Y - YT) ** 2, axis=(-2, -1))) * 0.5
        max_asym = max(max_asym, float(np.max(asym / np.maximum(norms, 1e-300))))
        Y = 0.5 * (Y + YT)
        hist_Y[k + 1], hist_D[k + 1] = Y, D
    return hist_Y, hist_D, steps, max_asym, False


@njit(cache=True)
def _mm_acc(a, b, out, sign):
    d = a.shape[0]
    for r in range(d):
        for c in range(d):
            acc = 0.0
            for m in range(d):
                acc += a[r, m] * b[m, c]
            out[r, c] += sign * acc


@njit(cache=True)
def _rhs_nb(Y, D, A, Qrun, Cown, Ccross, gen, noise, oY, oD):
    G, N, S, d, _ = Y.shape
    tmp = np.empty((d, d))
    for g in range(G):
        for i in range(N):
            for s in range(S):
                y = Y[g, i, s]
                o = oY[g, i, s]
                a = A[g, s]
                for r in range(d):
                    for c in range(d):
                        acc = Qrun[g, i, s, r, c]
                        for m in range(d):
                            acc += y[r, m] * a[m, c] + a[m, r] * y[m, c]
                        o[r, c] = acc
                for s2 in range(S):
                    q = gen[s, s2]
                    if s2 != s and q != 0.0:
                        y2 = Y[g, i, s2]
                        for r in range(d):
                            for c in range(d):
                                o[r, c] += q * (y2[r, c] - y[r, c])
                tmp[:, :] = 0.0
                _mm_acc(y, Cown[g, i, s], tmp, 1.0)
                _mm_acc(tmp, y, o, -1.0)
                for j in range(N):
                    if j != i:
                        yj = Y[g, j, s]
                        cj = Ccross[g, j, s]
                        tmp[:, :] = 0.0
                        _mm_acc(yj, cj, tmp, 1.0)
                        _mm_acc(tmp, y, o, -1.0)
                        tmp[:, :] = 0.0
                        _mm_acc(y, cj, tmp, 1.0)
                        _mm_acc(tmp, yj, o, -1.0)
    for i in range(N):
        for s in range(S):
            acc = 0.0
            for r in range(d):
                for c in range(d):
                    acc += Y[0, i, s, r, c] * noise[s, r, c]
            for s2 in range(S):
                q = gen[s, s2]
                if s2 != s and q != 0.0:
                    acc += q * (D[i, s2] - D[i, s])
            oD[i, s] = acc


@njit(cache=True)
def _riccati_rk4_nb(Y0, D0, A, Qrun, Cown, Ccross, gen, noise, h, steps, bound):
    hist_Y = np.empty((steps + 1,) + Y0.shape)
    hist_D = np.empty((steps + 1,) + D0.shape)
    Y = Y0.copy()
    D = D0.copy()
    hist_Y[0] = Y
    hist_D[0] = D
    k1 = np.empty_like(Y)
    k2 = np.empty_like(Y)
    k3 = np.empty_like(Y)
    k4 = np.empty_like(Y)
    l1 = np.empty_like(D)
    l2 = np.empty_like(D)
    l3 = np.empty_like(D)
    l4 = np.empty_like(D)
    G, N, S, d, _ = Y.shape
    max_asym = 0.0
    for k in range(steps):
        _rhs_nb(Y, D, A, Qrun, Cown, Ccross, gen, noise, k1, l1)
        _rhs_nb(Y + 0.5 * h * k1, D + 0.5 * h * l1, A, Qrun, Cown, Ccross, gen, noise, k2, l2)
        _rhs_nb(Y + 0.5 * h * k2, D + 0.5 * h * l2, A, Qrun, Cown, Ccross, gen, noise, k3, l3)
        _rhs_nb(Y + h * k3, D + h * l3, A, Qrun, Cown, Ccross, gen, noise, k4, l4)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        D = D + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        blown = False
        for i in range(N):
            for s in range(S):
                if not np.isfinite(D[i, s]):
                    blown = True
        for g in range(G):
            for i in range(N):
                for s in range(S):
                    nrm = 0.0
                    asym = 0.0
                    for r in range(d):
                        for c in range(d):
                            v = Y[g, i, s, r, c]
                            nrm += v * v
                            e = v - Y[g, i, s, c, r]
                            asym += e * e
                    nrm = np.sqrt(nrm)
                    if not np.isfinite(nrm) or nrm > bound:
                        blown = True
                    elif nrm > 0.0:
                        rel = 0.5 * np.sqrt(asym) / nrm
                        if rel > max_asym:
                            max_asym = rel
                    for r in range(d):
                        for c in range(r + 1, d):
                            m = 0.5 * (Y[g, i, s, r, c] + Y[g, i, s, c, r])
                            Y[g, i, s, r, c] = m
                            Y[g, i, s, c, r] = m
        if blown:
            return hist_Y, hist_D, k + 1, max_asym, True
        hist_Y[k + 1] = Y
        hist_D[k + 1] = D
    return hist_Y, hist_D, steps, max_asym, False


def riccati_rk4(Y0, D0, A, Qrun, Cown, Ccross, gen, noise, h, steps, bound, backend=None):
    """Fixed-step RK4 in reversed time.

    Returns ``(hist_Y, hist_D, steps_done, max_asymmetry, blew_up)``; rows
    of the histories beyond ``steps_done`` are undefined when ``blew_up``.
    """
    backend = backend or ("numba" if use_numba() else "numpy")
    fn = _riccati_rk4_nb if backend == "numba" else _riccati_rk4_np
    arrays = [np.ascontiguousarray(x, dtype=np.float64) for x in (Y0, D0, A, Qrun, Cown, Ccross, gen, noise)]
    return fn(*arrays, float(h), int(steps), float(bound))


# --------------------------------------------------------------------------
# Euler-Maruyama stepping of a block of paths over a chunk of time steps.
#
# State per path: X (d, d) and its conditional mean Xb (d, d). Gains are
# tabulated on the simulation grid as (n, S, K+1, d, d); ``Phi[s, k]`` is the
# one-step RK4 transfer matrix of the conditional-mean ODE in regime s.
# The deviation X - Xb takes the Euler-Maruyama step and X is rebuilt from
# it, so Xb stays the exact conditional mean of the discrete scheme.
# Accumulators (per path, per player): total cost, control cost and the
# completed-square integral against reference gains.


def _quad(M, Y):
    """Batched <M Y, Y> over leading path axis."""
    return np.sum((M @ Y) * Y, axis=(-2, -1))


def _simulate_chunk_np(k0, nk, X, Xb, regs, Phi, Kd, Km, Krd, Krm, A, B2, S0, M, nu,
                       Q, QQ, R, RR, dW, dN, dt, cost, ctrl, cs, rec_X, rec_Xb, rec_U):
    n = Kd.shape[0]
    nrec = rec_X.shape[0]
    has_ref = Krd.shape[0] > 0
    for kk in range(nk):
        k = k0 + kk
        s = regs[:, k]
        dev = X - Xb
        drift = A[s] @ dev
        if nrec:
            rec_X[:, k] = X[:nrec]
            rec_Xb[:, k] = Xb[:nrec]
        for j in range(n):
            udev = -(Kd[j, s, k] @ dev)
            umean = -(Km[j, s, k] @ Xb)
            if nrec:
                rec_U[:, k, j] = (udev + umean)[:nrec]
            c_ctrl = _quad(R[j, s], udev) + _quad(RR[j, s], umean)
            cost[:, j] += dt * (_quad(Q[j, s], dev) + _quad(QQ[j, s], Xb) + c_ctrl)
            ctrl[:, j] += dt * c_ctrl
            if has_ref:
                e = udev + Krd[j, s, k] @ dev
                eb = umean + Krm[j, s, k] @ Xb
                cs[:, j] += dt * (_quad(R[j, s], e) + _quad(RR[j, s], eb))
            drift = drift + B2[j, s] @ udev
        dev = dev + dt * drift + S0[s] @ dW[kk]
        for a in range(nu.shape[0]):
            dev = dev + M[a, s] * (dN[kk, :, a] - nu[a] * dt)[:, None, None]
        Xb = Phi[s, k] @ Xb
        X = Xb + dev
    return X, Xb


@njit(cache=True, parallel=True)
def _simulate_chunk_nb(k0, nk, X, Xb, regs, Phi, Kd, Km, Krd, Krm, A, B2, S0, M, nu,
                       Q, QQ, R, RR, dW, dN, dt, cost, ctrl, cs, rec_X, rec_Xb, rec_U):
    # Scalar indexing only: slicing the coefficient tables inside the loop
    # creates reference-counted views and costs more than the arithmetic.
    P, d, _ = X.shape
    n = Kd.shape[0]
    nrec = rec_X.shape[0]
    has_ref = Krd.shape[0] > 0
    natoms = nu.shape[0]
    for p in prange(P):
        x = np.empty((d, d))
        xb = np.empty((d, d))
        dev = np.empty((d, d))
        drift = np.empty((d, d))
        udev = np.empty((d, d))
        umean = np.empty((d, d))
        e = np.empty((d, d))
        eb = np.empty((d, d))
        for r in range(d):
            for c in range(d):
                x[r, c] = X[p, r, c]
                xb[r, c] = Xb[p, r, c]
        for kk in range(nk):
            k = k0 + kk
            s = regs[p, k]
            for r in range(d):
                for c in range(d):
                    dev[r, c] = x[r, c] - xb[r, c]
                    if p < nrec:
                        rec_X[p, k, r, c] = x[r, c]
                        rec_Xb[p, k, r, c] = xb[r, c]
            for r in range(d):
                for c in range(d):
                    acc = 0.0
                    for m in range(d):
                        acc += A[s, r, m] * dev[m, c]
                    drift[r, c] = acc
            for j in range(n):
                for r in range(d):
                    for c in range(d):
                        a1 = 0.0
                        a2 = 0.0
                        for m in range(d):
                            a1 += Kd[j, s, k, r, m] * dev[m, c]
                            a2 += Km[j, s, k, r, m] * xb[m, c]
                        udev[r, c] = -a1
                        umean[r, c] = -a2
                        if p < nrec:
                            rec_U[p, k, j, r, c] = -a1 - a2
                c_ctrl = 0.0
                c_state = 0.0
                for r in range(d):
                    for c in range(d):
                        a1 = 0.0
                        a2 = 0.0
                        a3 = 0.0
                        a4 = 0.0
                        for m in range(d):
                            a1 += R[j, s, r, m] * udev[m, c]
                            a2 += RR[j, s, r, m] * umean[m, c]
                            a3 += Q[j, s, r, m] * dev[m, c]
                            a4 += QQ[j, s, r, m] * xb[m, c]
                        c_ctrl += a1 * udev[r, c] + a2 * umean[r, c]
                        c_state += a3 * dev[r, c] + a4 * xb[r, c]
                cost[p, j] += dt * (c_state + c_ctrl)
                ctrl[p, j] += dt * c_ctrl
                if has_ref:
                    for r in range(d):
                        for c in range(d):
                            a1 = udev[r, c]
                            a2 = umean[r, c]
                            for m in range(d):
                                a1 += Krd[j, s, k, r, m] * dev[m, c]
                                a2 += Krm[j, s, k, r, m] * xb[m, c]
                            e[r, c] = a1
                            eb[r, c] = a2
                    sq = 0.0
                    for r in range(d):
                        for c in range(d):
                            a1 = 0.0
                            a2 = 0.0
                            for m in range(d):
                                a1 += R[j, s, r, m] * e[m, c]
                                a2 += RR[j, s, r, m] * eb[m, c]
                            sq += a1 * e[r, c] + a2 * eb[r, c]
                    cs[p, j] += dt * sq
                for r in range(d):
                    for c in range(d):
                        acc = 0.0
                        for m in range(d):
                            acc += B2[j, s, r, m] * udev[m, c]
                        drift[r, c] += acc
            # x becomes the new deviation, e the new mean
            for r in range(d):
                for c in range(d):
                    a1 = 0.0
                    a2 = 0.0
                    for m in range(d):
                        a1 += S0[s, r, m] * dW[p, kk, m, c]
                        a2 += Phi[s, k, r, m] * xb[m, c]
                    x[r, c] = dev[r, c] + dt * drift[r, c] + a1
                    e[r, c] = a2
            for a in range(natoms):
                jump = dN[p, kk, a] - nu[a] * dt
                if jump != 0.0:
                    for r in range(d):
                        for c in range(d):
                            x[r, c] += M[a, s, r, c] * jump
            for r in range(d):
                for c in range(d):
                    xb[r, c] = e[r, c]
                    x[r, c] += e[r, c]
        for r in range(d):
            for c in range(d):
                X[p, r, c] = x[r, c]
                Xb[p, r, c] = xb[r, c]
    return X, Xb


def simulate_chunk(k0, nk, X, Xb, regs, Phi, Kd, Km, Krd, Krm, A, B2, S0, M, nu,
                   Q, QQ, R, RR, dW, dN, *rest, backend=None):
    """Advance a block of paths by ``nk`` steps starting at step ``k0``.

    ``dW`` is ``(nk, paths, d, d)`` and ``dN`` is ``(nk, paths, atoms)``;
    accumulators and recording buffers are updated in place. Returns the
    new ``(X, Xbar)``.
    """
    backend = backend or ("numba" if use_numba() else "numpy")
    if backend == "numba":
        # path-major noise keeps the per-path time loop cache friendly
        dW = np.ascontiguousarray(dW.transpose(1, 0, 2, 3))
        dN = np.ascontiguousarray(dN.transpose(1, 0, 2))
        fn = _simulate_chunk_nb
    else:
        fn = _simulate_chunk_np
    return fn(k0, nk, X, Xb, regs, Phi, Kd, Km, Krd, Krm, A, B2, S0, M, nu,
              Q, QQ, R, RR, dW, dN, *rest)
