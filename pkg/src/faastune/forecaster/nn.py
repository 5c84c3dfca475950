"""Numpy LSTM / MLP layers with hand-derived backpropagation.

Everything is float64 and purely functional: forward passes return caches,
backward passes return gradient dicts keyed like the parameter dicts. The
gradients are verified against central finite differences in the test suite,
which is why there is no autodiff framework here.

Dropout follows the variational (recurrent) scheme: one mask per sequence,
reused across every timestep of a pass. Masks are inverted-dropout scaled,
so no rescaling is needed at prediction time.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid

__all__ = [
    "init_lstm_layer",
    "init_linear",
    "lstm_layer_forward",
    "lstm_layer_backward",
    "encoder_forward",
    "encoder_backward",
    "encdec_forward",
    "encdec_loss_and_grads",
    "mlp_forward",
    "mlp_backward",
    "prediction_loss_and_grads",
    "dropout_mask",
    "Adam",
    "grad_global_norm",
]


def init_lstm_layer(rng: np.random.Generator, input_dim: int, hidden: int) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in); forget-gate bias starts at 1 for stability."""
    sx = 1.0 / np.sqrt(input_dim)
    sh = 1.0 / np.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return {
        "Wx": rng.uniform(-sx, sx, (input_dim, 4 * hidden)),
        "Wh": rng.uniform(-sh, sh, (hidden, 4 * hidden)),
        "b": b,
    }


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> dict[str, np.ndarray]:
    s = 1.0 / np.sqrt(fan_in)
    return {"W": rng.uniform(-s, s, (fan_in, fan_out)), "b": np.zeros(fan_out)}


def dropout_mask(rng: np.random.Generator, p: float, shape) -> np.ndarray | None:
    if p <= 0:
        return None
    return (rng.random(shape) >= p).astype(float) / (1.0 - p)


def _apply(mask, x):
    return x if mask is None else x * mask


def lstm_layer_forward(x, params, mask_x=None, mask_h=None):
    """x: (B, T, I) -> hidden sequence (B, T, H).

    Gate order in the fused weight matrices is [input, forget, candidate,
    output]. mask_x / mask_h are (B, I) and (B, H) variational dropout masks
    shared across timesteps.
    """
    B, T, I = x.shape
    H = params["Wh"].shape[0]
    if params["Wx"].shape[0] != I:
        raise ValueError(f"input dim {I} does not match weights {params['Wx'].shape[0]}")
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    steps = []
    for t in range(T):
        xt = _apply(mask_x, x[:, t, :])
        hd = _apply(mask_h, h)
        a = xt @ params["Wx"] + hd @ params["Wh"] + params["b"]
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = sigmoid(a[:, 3 * H :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t, :] = h
        steps.append((xt, hd, i, f, g, o, c_prev, tc))
    cache = (steps, params, mask_x, mask_h, (B, T, I), H)
    return hs, cache


def lstm_layer_backward(dhs, cache):
    """dhs: (B, T, H) gradients on every hidden output (the caller folds any
    extra final-state gradient into dhs[:, -1, :])."""
    steps, params, mask_x, mask_h, (B, T, I), H = cache
    dWx = np.zeros_like(params["Wx"])
    dWh = np.zeros_like(params["Wh"])
    db = np.zeros_like(params["b"])
    dx = np.empty((B, T, I))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        xt, hd, i, f, g, o, c_prev, tc = steps[t]
        dh = dhs[:, t, :] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        do = dh * tc
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        da = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dWx += xt.T @ da
        dWh += hd.T @ da
        db += da.sum(axis=0)
        dx[:, t, :] = _apply(mask_x, da @ params["Wx"].T)
        dh_next = _apply(mask_h, da @ params["Wh"].T)
    return dx, {"Wx": dWx, "Wh": dWh, "b": db}


# -- stacked encoder -----------------------------------------------------------


def encoder_forward(x, layers, masks=None):
    """Stacked LSTM; returns (latent Z = last top hidden state, cache).

    masks = {"in": (B,D), "mid": [(B,H)] per between-layer gap,
             "rec": [(B,H)] per layer}, any entry None.
    """
    masks = masks or {}
    rec = masks.get("rec") or [None] * len(layers)
    mids = masks.get("mid") or [None] * (len(layers) - 1)
    caches = []
    inp = x
    mask_x = masks.get("in")
    for li, layer in enumerate(layers):
        hs, cache = lstm_layer_forward(inp, layer, mask_x=mask_x, mask_h=rec[li])
        caches.append(cache)
        if li < len(layers) - 1:
            mid = mids[li]
            inp = hs if mid is None else hs * mid[:, None, :]
            mask_x = None
        else:
            inp = hs
    z = inp[:, -1, :]
    return z, (caches, mids, inp.shape)


def encoder_backward(dz, enc_cache):
    """Backprop a gradient on Z through the stack; returns per-layer grads."""
    caches, mids, top_shape = enc_cache
    B, T, H = top_shape
    dhs = np.zeros((B, T, H))
    dhs[:, -1, :] = dz
    grads = [None] * len(caches)
    for li in reversed(range(len(caches))):
        dx, g = lstm_layer_backward(dhs, caches[li])
        grads[li] = g
        if li > 0:
            mid = mids[li - 1]
            dhs = dx if mid is None else dx * mid[:, None, :]
    return grads


# -- encoder-decoder reconstruction ---------------------------------------------


def encdec_forward(x, enc_layers, dec_layer, dec_out, horizon, masks=None):
    """Encode the input window, then decode the next `horizon` windows from
    the latent vector repeated at every decoder step (no teacher forcing)."""
    z, enc_cache = encoder_forward(x, enc_layers, masks)
    B, He = z.shape
    xdec = np.repeat(z[:, None, :], horizon, axis=1)
    hdec, dec_cache = lstm_layer_forward(xdec, dec_layer)
    B, k, Hd = hdec.shape
    y = hdec.reshape(B * k, Hd) @ dec_out["W"] + dec_out["b"]
    y = y.reshape(B, k, -1)
    return y, (enc_cache, dec_cache, hdec, z.shape)


def encdec_loss_and_grads(x, target, enc_layers, dec_layer, dec_out, masks=None):
    """Mean-squared reconstruction error and exact gradients for every
    encoder, decoder and output parameter."""
    horizon = target.shape[1]
    y, cache = encdec_forward(x, enc_layers, dec_layer, dec_out, horizon, masks)
    enc_cache, dec_cache, hdec, zshape = cache
    diff = y - target
    loss = float(np.mean(diff * diff))
    dy = 2.0 * diff / diff.size
    B, k, D = dy.shape
    Hd = hdec.shape[2]
    dy2 = dy.reshape(B * k, D)
    h2 = hdec.reshape(B * k, Hd)
    g_out = {"W": h2.T @ dy2, "b": dy2.sum(axis=0)}
    dhdec = (dy2 @ dec_out["W"].T).reshape(B, k, Hd)
    dxdec, g_dec = lstm_layer_backward(dhdec, dec_cache)
    dz = dxdec.sum(axis=1)
    g_enc = encoder_backward(dz, enc_cache)
    return loss, y, {"enc": g_enc, "dec": g_dec, "dec_out": g_out}


# -- prediction head --------------------------------------------------------------


def mlp_forward(x, layers, masks=None):
    """Three fully connected layers, tanh after the first two, linear output.
    masks are regular dropout masks on the two hidden activations."""
    masks = masks or [None, None]
    a1 = x @ layers[0]["W"] + layers[0]["b"]
    h1 = np.tanh(a1)
    h1d = _apply(masks[0], h1)
    a2 = h1d @ layers[1]["W"] + layers[1]["b"]
    h2 = np.tanh(a2)
    h2d = _apply(masks[1], h2)
    y = h2d @ layers[2]["W"] + layers[2]["b"]
    return y, (x, h1, h1d, h2, h2d, layers, masks)


def mlp_backward(dy, cache):
    x, h1, h1d, h2, h2d, layers, masks = cache
    g3 = {"W": h2d.T @ dy, "b": dy.sum(axis=0)}
    dh2d = dy @ layers[2]["W"].T
    dh2 = _apply(masks[1], dh2d)
    da2 = dh2 * (1 - h2 * h2)
    g2 = {"W": h1d.T @ da2, "b": da2.sum(axis=0)}
    dh1d = da2 @ layers[1]["W"].T
    dh1 = _apply(masks[0], dh1d)
    da1 = dh1 * (1 - h1 * h1)
    g1 = {"W": x.T @ da1, "b": da1.sum(axis=0)}
    dx = da1 @ layers[0]["W"].T
    return dx, [g1, g2, g3]


def prediction_loss_and_grads(x_seq, ext, target, enc_layers, mlp_layers, masks=None, mlp_masks=None):
    """MSE of the prediction head on [Z; external features]; returns MLP
    gradients only (the encoder stays frozen during head training)."""
    z, _ = encoder_forward(x_seq, enc_layers, masks)
    feat = np.concatenate([z, ext], axis=1)
    y, cache = mlp_forward(feat, mlp_layers, mlp_masks)
    diff = y - target
    loss = float(np.mean(diff * diff))
    dy = 2.0 * diff / diff.size
    _, g_mlp = mlp_backward(dy, cache)
    return loss, y, g_mlp


# -- optimizer ------------------------------------------------------------------


def grad_global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


class Adam:
    """Per-parameter adaptive moments with global-norm gradient clipping.

    Operates on flat {name: array} dicts and mutates params in place.
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, clip_norm: float = 5.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.clip = clip_norm
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        norm = grad_global_norm(grads)
        scale = self.clip / norm if (self.clip and norm > self.clip) else 1.0
        for k, g in grads.items():
            g = g * scale
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
