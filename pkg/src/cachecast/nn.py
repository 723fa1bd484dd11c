"""Small float64 neural kernel: causal/same 1-D convolution, LSTM, GRU and
vanilla RNN layers, a per-step dense head, MSE/MAE, and finite-difference
gradient checking.

Sequence layers take batched input of shape ``(B, T, features)``; a 2-D
``(T, features)`` array is treated as a batch of one. Forward functions return
``(output, cache)`` and the matching backward consumes the cache.

Recurrent gate layout follows the bracket convention ``W @ [h_{t-1}, x_t]``,
so every gate weight is ``hidden x (hidden + input)``.

GRU update (standard three-gate form)::

    z = sigmoid(W_z [h, x] + b_z)          update gate
    r = sigmoid(W_r [h, x] + b_r)          reset gate
    n = tanh(W_n [r * h, x] + b_n)         candidate
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyVector, LengthMismatch, MissingForwardTrace, ShapeMismatch


def sigmoid(z):
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(X: np.ndarray) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        return X[None], True
    if X.ndim != 3:
        raise ShapeMismatch(f"expected (T, N) or (B, T, N) input, got shape {X.shape}")
    return X, False


class _Params:
    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}

    def copy(self):
        return type(self)(**{f.name: (v.copy() if isinstance(v := getattr(self, f.name), np.ndarray) else v)
                             for f in fields(self)})


# -- convolution ------------------------------------------------------------

@dataclass
class Conv1dParams(_Params):
    W: np.ndarray   # (out_channels, in_channels, k)
    b: np.ndarray   # (out_channels,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 3 or self.b.shape != (self.W.shape[0],):
            raise ShapeMismatch("conv kernel must be (out, in, k) with bias (out,)")
        k = self.W.shape[2]
        if k < 1 or k % 2 == 0:
            raise ValueError("conv kernel width must be odd and >= 1")

    @property
    def k(self) -> int:
        return self.W.shape[2]


def _conv_pads(k: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return (k - 1) // 2, (k - 1) // 2
    if padding == "causal":
        return k - 1, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv1d_forward(X, p: Conv1dParams, activation: str = "relu", padding: str = "same"):
    """Zero-padded 1-D convolution over time followed by ``activation``.

    With ``padding="same"`` output step t sees inputs t-(k-1)/2 .. t+(k-1)/2;
    ``"causal"`` shifts the window to t-k+1 .. t so no future step leaks in.
    Output length always equals input length.
    """
    out, _ = conv1d_forward_cached(X, p, activation, padding)
    return out


def conv1d_forward_cached(X, p: Conv1dParams, activation="relu", padding="same"):
    Xb, squeeze = _as_batch(X)
    if Xb.shape[2] != p.W.shape[1]:
        raise ShapeMismatch(f"input has {Xb.shape[2]} channels, kernel expects {p.W.shape[1]}")
    left, right = _conv_pads(p.k, padding)
    Xp = np.pad(Xb, ((0, 0), (left, right), (0, 0)))
    cols = sliding_window_view(Xp, p.k, axis=1)         # (B, T, C, k)
    Z = np.tensordot(cols, p.W, axes=([2, 3], [1, 2])) + p.b
    if activation == "relu":
        A = np.maximum(Z, 0.0)
    elif activation == "identity":
        A = Z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    cache = {"cols": cols, "Z": Z, "activation": activation, "pads": (left, right),
             "T": Xb.shape[1], "params": p, "squeeze": squeeze}
    return (A[0] if squeeze else A), cache


def conv1d_backward(dout, cache):
    if not cache:
        raise MissingForwardTrace("conv1d_backward needs the forward cache")
    p: Conv1dParams = cache["params"]
    dA = dout[None] if cache["squeeze"] else dout
    dZ = dA * (cache["Z"] > 0) if cache["activation"] == "relu" else dA
    cols = cache["cols"]
    dW = np.tensordot(dZ, cols, axes=([0, 1], [0, 1]))   # (out, C, k)
    db = dZ.sum(axis=(0, 1))
    dcols = np.tensordot(dZ, p.W, axes=([2], [0]))       # (B, T, C, k)
    left, right = cache["pads"]
    T = cache["T"]
    dXp = np.zeros((dZ.shape[0], T + left + right, p.W.shape[1]))
    for j in range(p.k):
        dXp[:, j:j + T, :] += dcols[..., j]
    dX = dXp[:, left:left + T, :]
    return (dX[0] if cache["squeeze"] else dX), {"W": dW, "b": db}


# -- LSTM -------------------------------------------------------------------

@dataclass
class LstmParams(_Params):
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.W_i)
        for name in ("W_i", "W_f", "W_o", "W_c"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if getattr(self, name).shape != shape or len(shape) != 2:
                raise ShapeMismatch("all LSTM gate weights must share a 2-D shape")
        H = shape[0]
        for name in ("b_i", "b_f", "b_o", "b_c"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if getattr(self, name).shape != (H,):
                raise ShapeMismatch(f"{name} must have shape ({H},)")
        if shape[1] <= H:
            raise ShapeMismatch("gate weights must be hidden x (hidden + input)")

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.hidden

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([self.W_i, self.W_f, self.W_o, self.W_c]),
                np.concatenate([self.b_i, self.b_f, self.b_o, self.b_c]))


def lstm_cell(x_t, h_prev, c_prev, p: LstmParams):
    """One LSTM step on vectors (or row-batches) -> (h_t, c_t)."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    H = p.hidden
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeMismatch("lstm_cell dimensions do not match parameters")
    z = np.concatenate([h_prev, x_t], axis=-1)
    i = sigmoid(z @ p.W_i.T + p.b_i)
    f = sigmoid(z @ p.W_f.T + p.b_f)
    o = sigmoid(z @ p.W_o.T + p.b_o)
    c = f * c_prev + i * np.tanh(z @ p.W_c.T + p.b_c)
    h = o * np.tanh(c)
    return h, c


def lstm_forward(X, p: LstmParams):
    """Run the LSTM over every step from zero state; returns (B, T, H) hiddens."""
    Xb, squeeze = _as_batch(X)
    B, T, N = Xb.shape
    if N != p.input_size:
        raise ShapeMismatch(f"input width {N} != LSTM input size {p.input_size}")
    H = p.hidden
    W, b = p.stacked()
    Wh, Wx = W[:, :H], W[:, H:]
    Ax = Xb @ Wx.T + b                                 # (B, T, 4H)
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    gates = np.empty((B, T, 4 * H))
    for t in range(T):
        a = Ax[:, t] + hs[:, t] @ Wh.T
        g = np.empty_like(a)
        g[:, :3 * H] = sigmoid(a[:, :3 * H])
        g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        cs[:, t + 1] = g[:, H:2 * H] * cs[:, t] + g[:, :H] * g[:, 3 * H:]
        hs[:, t + 1] = g[:, 2 * H:3 * H] * np.tanh(cs[:, t + 1])
        gates[:, t] = g
    out = hs[:, 1:]
    cache = {"X": Xb, "hs": hs, "cs": cs, "gates": gates, "params": p, "squeeze": squeeze}
    return (out[0] if squeeze else out), cache


def lstm_backward(dH, cache):
    """BPTT over the full sequence; returns (dX, grads keyed like LstmParams)."""
    if not cache:
        raise MissingForwardTrace("lstm_backward needs the forward cache")
    p: LstmParams = cache["params"]
    dH = dH[None] if cache["squeeze"] else dH
    X, hs, cs, gates = cache["X"], cache["hs"], cache["cs"], cache["gates"]
    B, T, _ = X.shape
    H = p.hidden
    W, _ = p.stacked()
    Wh = W[:, :H]
    dA = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cs[:, t + 1])
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dA[:, t]
        da[:, :H] = dc * cand * i * (1.0 - i)
        da[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = da @ Wh
    Z = np.concatenate([hs[:, :-1], X], axis=2)        # (B, T, H+N)
    dW = np.tensordot(dA, Z, axes=([0, 1], [0, 1]))     # (4H, H+N)
    db = dA.sum(axis=(0, 1))
    dX = dA @ W[:, H:]
    grads = {}
    for k, gname in enumerate("ifoc"):
        grads[f"W_{gname}"] = dW[k * H:(k + 1) * H]
        grads[f"b_{gname}"] = db[k * H:(k + 1) * H]
    return (dX[0] if cache["squeeze"] else dX), grads


# -- vanilla RNN and GRU ----------------------------------------------------

@dataclass
class RnnParams(_Params):
    W: np.ndarray   # (H, H + N)
    b: np.ndarray   # (H,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],) or self.W.shape[1] <= self.W.shape[0]:
            raise ShapeMismatch("RNN weight must be hidden x (hidden + input)")

    variant = "VanillaRNN"

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden


@dataclass
class GruParams(_Params):
    W_z: np.ndarray
    W_r: np.ndarray
    W_n: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_n: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.W_z)
        for name in ("W_z", "W_r", "W_n"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if getattr(self, name).shape != shape or len(shape) != 2:
                raise ShapeMismatch("all GRU gate weights must share a 2-D shape")
        for name in ("b_z", "b_r", "b_n"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
            if getattr(self, name).shape != (shape[0],):
                raise ShapeMismatch(f"{name} must have shape ({shape[0]},)")
        if shape[1] <= shape[0]:
            raise ShapeMismatch("gate weights must be hidden x (hidden + input)")

    variant = "GRU"

    @property
    def hidden(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1] - self.hidden


def recurrent_cell(x_t, h_prev, p: RnnParams | GruParams):
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden:
        raise ShapeMismatch("recurrent_cell dimensions do not match parameters")
    z_in = np.concatenate([h_prev, x_t], axis=-1)
    if isinstance(p, RnnParams):
        return np.tanh(z_in @ p.W.T + p.b)
    z = sigmoid(z_in @ p.W_z.T + p.b_z)
    r = sigmoid(z_in @ p.W_r.T + p.b_r)
    n = np.tanh(np.concatenate([r * h_prev, x_t], axis=-1) @ p.W_n.T + p.b_n)
    return (1.0 - z) * n + z * h_prev


def rnn_forward(X, p: RnnParams):
    Xb, squeeze = _as_batch(X)
    B, T, N = Xb.shape
    if N != p.input_size:
        raise ShapeMismatch(f"input width {N} != RNN input size {p.input_size}")
    H = p.hidden
    Wh, Wx = p.W[:, :H], p.W[:, H:]
    Ax = Xb @ Wx.T + p.b
    hs = np.zeros((B, T + 1, H))
    for t in range(T):
        hs[:, t + 1] = np.tanh(Ax[:, t] + hs[:, t] @ Wh.T)
    out = hs[:, 1:]
    return (out[0] if squeeze else out), {"X": Xb, "hs": hs, "params": p, "squeeze": squeeze}


def rnn_backward(dH, cache):
    if not cache:
        raise MissingForwardTrace("rnn_backward needs the forward cache")
    p: RnnParams = cache["params"]
    dH = dH[None] if cache["squeeze"] else dH
    X, hs = cache["X"], cache["hs"]
    B, T, _ = X.shape
    H = p.hidden
    Wh = p.W[:, :H]
    dA = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h = hs[:, t + 1]
        dA[:, t] = (dH[:, t] + dh_next) * (1.0 - h * h)
        dh_next = dA[:, t] @ Wh
    Z = np.concatenate([hs[:, :-1], X], axis=2)
    grads = {"W": np.tensordot(dA, Z, axes=([0, 1], [0, 1])), "b": dA.sum(axis=(0, 1))}
    dX = dA @ p.W[:, H:]
    return (dX[0] if cache["squeeze"] else dX), grads


def gru_forward(X, p: GruParams):
    Xb, squeeze = _as_batch(X)
    B, T, N = Xb.shape
    if N != p.input_size:
        raise ShapeMismatch(f"input width {N} != GRU input size {p.input_size}")
    H = p.hidden
    Wzr = np.concatenate([p.W_z, p.W_r])               # (2H, H+N)
    Ax_zr = Xb @ Wzr[:, H:].T + np.concatenate([p.b_z, p.b_r])
    Ax_n = Xb @ p.W_n[:, H:].T + p.b_n
    Wzr_h, Wn_h = Wzr[:, :H], p.W_n[:, :H]
    hs = np.zeros((B, T + 1, H))
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    ns = np.empty((B, T, H))
    for t in range(T):
        h = hs[:, t]
        zr = sigmoid(Ax_zr[:, t] + h @ Wzr_h.T)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(Ax_n[:, t] + (r * h) @ Wn_h.T)
        hs[:, t + 1] = (1.0 - z) * n + z * h
        zs[:, t], rs[:, t], ns[:, t] = z, r, n
    out = hs[:, 1:]
    cache = {"X": Xb, "hs": hs, "z": zs, "r": rs, "n": ns, "params": p, "squeeze": squeeze}
    return (out[0] if squeeze else out), cache


def gru_backward(dH, cache):
    if not cache:
        raise MissingForwardTrace("gru_backward needs the forward cache")
    p: GruParams = cache["params"]
    dH = dH[None] if cache["squeeze"] else dH
    X, hs, zs, rs, ns = cache["X"], cache["hs"], cache["z"], cache["r"], cache["n"]
    B, T, _ = X.shape
    H = p.hidden
    Wz_h, Wr_h, Wn_h = p.W_z[:, :H], p.W_r[:, :H], p.W_n[:, :H]
    dAz = np.empty((B, T, H))
    dAr = np.empty((B, T, H))
    dAn = np.empty((B, T, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h, z, r, n = hs[:, t], zs[:, t], rs[:, t], ns[:, t]
        dh = dH[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h - n)
        an = dn * (1.0 - n * n)
        d_rh = an @ Wn_h
        az = dz * z * (1.0 - z)
        ar = d_rh * h * r * (1.0 - r)
        dAz[:, t], dAr[:, t], dAn[:, t] = az, ar, an
        dh_next = dh * z + d_rh * r + az @ Wz_h + ar @ Wr_h
    Zh = hs[:, :-1]
    Z = np.concatenate([Zh, X], axis=2)
    Zn = np.concatenate([rs * Zh, X], axis=2)
    grads = {
        "W_z": np.tensordot(dAz, Z, axes=([0, 1], [0, 1])),
        "W_r": np.tensordot(dAr, Z, axes=([0, 1], [0, 1])),
        "W_n": np.tensordot(dAn, Zn, axes=([0, 1], [0, 1])),
        "b_z": dAz.sum(axis=(0, 1)),
        "b_r": dAr.sum(axis=(0, 1)),
        "b_n": dAn.sum(axis=(0, 1)),
    }
    dX = dAz @ p.W_z[:, H:] + dAr @ p.W_r[:, H:] + dAn @ p.W_n[:, H:]
    return (dX[0] if cache["squeeze"] else dX), grads


# -- dense head -------------------------------------------------------------

@dataclass
class DenseParams(_Params):
    W: np.ndarray   # (1, H)
    b: np.ndarray   # (1,)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if self.W.shape[0] != 1 or self.b.shape != (1,):
            raise ShapeMismatch("dense head maps hidden -> scalar: W is (1, H), b is (1,)")


def dense(h, p: DenseParams):
    """``W_y . h + b_y`` over the last axis; a 1-D ``h`` yields a Python float."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != p.W.shape[1]:
        raise ShapeMismatch(f"hidden width {h.shape[-1]} != dense input {p.W.shape[1]}")
    y = h @ p.W[0] + p.b[0]
    return float(y) if h.ndim == 1 else y


def dense_backward(dy, h, p: DenseParams):
    """Gradients of a per-step dense head given dL/dy (same leading shape as y)."""
    dW = np.tensordot(dy, h, axes=(list(range(dy.ndim)), list(range(dy.ndim))))[None]
    db = np.array([dy.sum()])
    dh = dy[..., None] * p.W[0]
    return dh, {"W": dW, "b": db}


# -- losses -----------------------------------------------------------------

def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise EmptyVector("metrics need at least one element")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    d = pred - truth
    return float(np.mean(d * d))


def mae(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def mse_grad(pred, truth) -> np.ndarray:
    pred, truth = _check_pair(pred, truth)
    return 2.0 * (pred - truth) / pred.size


# -- gradient checking ------------------------------------------------------

@dataclass
class GradReport:
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(model, batch, epsilon: float = 1e-5) -> GradReport:
    """Compare ``model.loss_and_grads`` against central differences.

    ``model`` needs ``named_parameters()`` yielding live arrays, ``loss(X, y)``
    and ``loss_and_grads(X, y) -> (loss, {name: grad})``. Every scalar
    parameter is perturbed in place and restored afterwards.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    X, y = batch
    _, analytic = model.loss_and_grads(X, y)
    errors = {}
    for name, arr in model.named_parameters():
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + epsilon
            up = model.loss(X, y)
            arr[idx] = orig - epsilon
            down = model.loss(X, y)
            arr[idx] = orig
            num[idx] = (up - down) / (2.0 * epsilon)
        errors[name] = float(relative_error(analytic[name], num).max()) if arr.size else 0.0
    return GradReport(errors)


class DenseRegressor:
    """Dense head applied per step to raw ``(B, T, H)`` inputs; the
    dense-only architecture used for gradient checks."""

    def __init__(self, p: DenseParams):
        self.p = p

    def named_parameters(self):
        return [(f"dense.{k}", v) for k, v in self.p.arrays().items()]

    def loss(self, X, y) -> float:
        return mse(dense(X, self.p), y)

    def loss_and_grads(self, X, y):
        pred = dense(X, self.p)
        dy = mse_grad(pred, y)
        _, g = dense_backward(dy, np.asarray(X, dtype=np.float64), self.p)
        return mse(pred, y), {f"dense.{k}": v for k, v in g.items()}

