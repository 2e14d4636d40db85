"""Pure numpy implementation of the directional GRU scan.

One call unrolls a GRU over the time axis of a batch, feeding the cell its
own linear estimate wherever the input is missing:

    yhat_t = h_{t-1} @ W_out + b_out
    u_t    = m_t * x_t + (1 - m_t) * yhat_t
    z      = sigmoid(u_t @ W_z + h_{t-1} @ U_z + b_z)
    r      = sigmoid(u_t @ W_r + h_{t-1} @ U_r + b_r)
    c      = tanh(u_t @ W_h + (r * h_{t-1}) @ U_h + b_h)
    h_t    = (1 - z) * h_{t-1} + z * c

Gate matrices are packed along the last axis in ``z, r, h`` order, so ``W`` is
``(D, 3H)``, ``U`` is ``(H, 3H)`` and ``b`` is ``(3H,)``.  With ``fill=False``
missing inputs are zero instead of ``yhat_t``.

The compiled module ``rdis._scan`` exposes the same two functions with the
same signatures and agrees with this file to rounding error.
"""

import numpy as np


def _sigmoid(a):
    # 0.5 * (1 + tanh(a / 2)) never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * a)


def scan_forward(x, m, W, U, b, Wo, bo, fill=True):
    """Run the scan over ``x`` of shape ``(B, T, D)``.

    Returns ``(hprev, yhat, cache)`` where ``hprev[:, t]`` is the hidden
    state *before* consuming step ``t`` and ``yhat[:, t]`` the directional
    estimate of ``x[:, t]`` made from it.
    """
    B, T, D = x.shape
    H = U.shape[0]
    xt_all = np.ascontiguousarray(x.transpose(1, 0, 2))
    mt_all = np.ascontiguousarray(m.transpose(1, 0, 2))
    hs = np.zeros((T + 1, B, H))
    y = np.empty((T, B, D))
    u = np.empty((T, B, D))
    z = np.empty((T, B, H))
    r = np.empty((T, B, H))
    c = np.empty((T, B, H))

    Uzr, Uh = U[:, : 2 * H], U[:, 2 * H :]
    bzr, bh = b[: 2 * H], b[2 * H :]

    for t in range(T):
        h = hs[t]
        yt = h @ Wo + bo
        y[t] = yt
        mt = mt_all[t]
        if fill:
            ut = mt * xt_all[t] + (1.0 - mt) * yt
        else:
            ut = mt * xt_all[t]
        u[t] = ut
        a = ut @ W
        gzr = _sigmoid(a[:, : 2 * H] + h @ Uzr + bzr)
        zt, rt = gzr[:, :H], gzr[:, H:]
        ct = np.tanh(a[:, 2 * H :] + (rt * h) @ Uh + bh)
        z[t], r[t], c[t] = zt, rt, ct
        hs[t + 1] = h + zt * (ct - h)

    hprev = hs[:T].transpose(1, 0, 2).copy()
    yhat = y.transpose(1, 0, 2).copy()
    cache = (mt_all, W, U, Wo, hs, u, z, r, c, bool(fill))
    return hprev, yhat, cache


def scan_backward(cache, d_hprev, d_yhat):
    """Backpropagate through :func:`scan_forward`.

    ``d_hprev`` and ``d_yhat`` are loss gradients w.r.t. its two outputs.
    Returns ``(dW, dU, db, dWo, dbo)``.
    """
    mt_all, W, U, Wo, hs, u, z, r, c, fill = cache
    T, B, D = u.shape
    H = U.shape[0]
    gh = d_hprev.transpose(1, 0, 2)
    gy = d_yhat.transpose(1, 0, 2)

    WT = W.T
    UzrT = U[:, : 2 * H].T
    UhT = U[:, 2 * H :].T
    WoT = Wo.T

    da = np.empty((T, B, 3 * H))
    rh = np.empty((T, B, H))
    dy = np.empty((T, B, D))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = hs[t]
        zt, rt, ct = z[t], r[t], c[t]

        dz = dh * (ct - hp)
        dac = dh * zt * (1.0 - ct * ct)
        dhp = dh - dh * zt
        drh = dac @ UhT
        da[t, :, :H] = dz * zt * (1.0 - zt)
        da[t, :, H : 2 * H] = drh * hp * rt * (1.0 - rt)
        da[t, :, 2 * H :] = dac
        rh[t] = rt * hp
        dhp += drh * rt
        dhp += da[t, :, : 2 * H] @ UzrT

        dyt = gy[t]
        if fill:
            dyt = dyt + (da[t] @ WT) * (1.0 - mt_all[t])
        dy[t] = dyt
        dhp += dyt @ WoT
        dhp += gh[t]
        dh = dhp

    # parameter gradients as single GEMMs over all (t, batch) rows
    hp_all = hs[:T].reshape(T * B, H)
    da_all = da.reshape(T * B, 3 * H)
    dy_all = dy.reshape(T * B, D)
    dW = u.reshape(T * B, D).T @ da_all
    db = da_all.sum(axis=0)
    dU = np.empty_like(U)
    dU[:, : 2 * H] = hp_all.T @ da_all[:, : 2 * H]
    dU[:, 2 * H :] = rh.reshape(T * B, H).T @ da_all[:, 2 * H :]
    dWo = hp_all.T @ dy_all
    dbo = dy_all.sum(axis=0)
    return dW, dU, db, dWo, dbo
