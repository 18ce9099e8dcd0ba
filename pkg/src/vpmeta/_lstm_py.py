"""Pure numpy LSTM kernels (fallback when the compiled extension is absent).

Layout shared with the compiled kernel:

W : (I + H + 1, 4H)   rows = [input | hidden | bias], columns = gates (i, f, g, o)
V : (H + 1, O)        rows = [hidden | bias]
X : (B, S, I)
Y : (B, O)
"""

import numpy as np


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(W, V, X):
    B, S, I = X.shape
    H = V.shape[0] - 1
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    xh = np.empty((B, I + H + 1))
    xh[:, -1] = 1.0
    for t in range(S):
        xh[:, :I] = X[:, t, :]
        xh[:, I:I + H] = h
        z = xh @ W
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h @ V[:H] + V[H]


def lstm_loss_grad(W, V, X, Y):
    """Mean squared error over every output entry and its exact gradient."""
    B, S, I = X.shape
    H = V.shape[0] - 1
    O = V.shape[1]
    xh = np.empty((S, B, I + H + 1))
    xh[:, :, -1] = 1.0
    acts = np.empty((S, B, 4 * H))
    cs = np.zeros((S + 1, B, H))
    tcs = np.empty((S, B, H))
    h = np.zeros((B, H))
    for t in range(S):
        xh[t, :, :I] = X[:, t, :]
        xh[t, :, I:I + H] = h
        z = xh[t] @ W
        a = acts[t]
        a[:, :H] = _sigmoid(z[:, :H])
        a[:, H:2 * H] = _sigmoid(z[:, H:2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 2 * H:3 * H]
        tcs[t] = np.tanh(cs[t + 1])
        h = a[:, 3 * H:] * tcs[t]

    y = h @ V[:H] + V[H]
    r = y - Y
    loss = float(np.mean(r * r))
    dy = (2.0 / (B * O)) * r

    dW = np.zeros_like(W)
    dV = np.empty_like(V)
    dV[:H] = h.T @ dy
    dV[H] = dy.sum(axis=0)
    dh = dy @ V[:H].T
    dc = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(S - 1, -1, -1):
        a = acts[t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tcs[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc = dc * f
        dW += xh[t].T @ dz
        dh = dz @ W[I:I + H].T
    return loss, dW, dV
