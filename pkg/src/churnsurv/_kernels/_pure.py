"""Numpy reference kernels; same signatures as the compiled module."""
import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def enet_coordinate_descent(w, X, y, alpha, l1_ratio, max_iter, tol):
    n, p = X.shape
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    norms = np.einsum("ij,ij->j", X, X) / n
    r = y - X @ w
    n_iter = 0
    for it in range(max_iter):
        max_dw = 0.0
        max_w = 0.0
        for j in range(p):
            if norms[j] == 0.0:
                continue
            col = X[:, j]
            w_old = w[j]
            rho = float(col @ r) / n + norms[j] * w_old
            if rho > l1:
                w_new = (rho - l1) / (norms[j] + l2)
            elif rho < -l1:
                w_new = (rho + l1) / (norms[j] + l2)
            else:
                w_new = 0.0
            d = w_new - w_old
            if d != 0.0:
                r -= col * d
                w[j] = w_new
            max_dw = max(max_dw, abs(d))
            max_w = max(max_w, abs(w_new))
        n_iter = it + 1
        if max_dw <= tol * max(max_w, 1.0):
            break
    return w, n_iter


def lstm_gates_forward(z, c_prev, c_out, h_out, tanh_c_out):
    H = c_prev.shape[1]
    z[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
    z[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    z[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
    i, f, g, o = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
    c_out[...] = f * c_prev + i * g
    tanh_c_out[...] = np.tanh(c_out)
    h_out[...] = o * tanh_c_out


def lstm_gates_backward(gates, c_prev, tanh_c, dh, dc, dz_out, dc_prev_out):
    H = c_prev.shape[1]
    i, f, g, o = (gates[:, :H], gates[:, H : 2 * H],
                  gates[:, 2 * H : 3 * H], gates[:, 3 * H :])
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz_out[:, :H] = dct * g * i * (1.0 - i)
    dz_out[:, H : 2 * H] = dct * c_prev * f * (1.0 - f)
    dz_out[:, 2 * H : 3 * H] = dct * i * (1.0 - g * g)
    dz_out[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
    dc_prev_out[...] = dct * f
