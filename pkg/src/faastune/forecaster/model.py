"""Hybrid Bayesian forecaster: stacked-LSTM encoder-decoder feature extractor
plus an MLP prediction head, with MC-dropout predictive uncertainty.

Training is two-phase: the encoder-decoder is pre-trained to reconstruct the
next windows of the series, then the encoder is frozen and the head learns to
map [latent; external features] to the next-window count per container type.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nn

__all__ = ["ForecasterConfig", "Forecast", "HybridForecaster"]


@dataclass
class ForecasterConfig:
    input_window: int = 60
    decode_horizon: int = 8
    encoder_hidden: int = 64
    decoder_hidden: int = 16
    encoder_layers: int = 2
    mlp_hidden: int = 32
    dropout_p: float = 0.1
    mc_passes: int = 30
    learning_rate: float = 1e-3
    encoder_epochs: int = 25
    prediction_epochs: int = 50
    batch_size: int = 64
    grad_clip: float = 5.0
    val_fraction: float = 0.2
    sample_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.input_window < 1 or self.decode_horizon < 1 or self.mc_passes < 1:
            raise ValueError("input_window, decode_horizon and mc_passes must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.encoder_layers < 1:
            raise ValueError("need at least one encoder layer")


@dataclass(frozen=True)
class Forecast:
    """Predictive mean/variance per container type over the MC passes."""

    mean: np.ndarray
    variance: np.ndarray
    mc_samples: np.ndarray

    def __post_init__(self):
        if np.any(self.variance < 0):
            raise ValueError("variance must be >= 0")
        if not np.allclose(self.mean, self.mc_samples.mean(axis=0), atol=1e-9):
            raise ValueError("mean must equal the sample mean of mc_samples")
        if not np.allclose(self.variance, self.mc_samples.var(axis=0), atol=1e-9):
            raise ValueError("variance must equal the sample variance of mc_samples")

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "Forecast":
        samples = np.atleast_2d(samples)
        return cls(samples.mean(axis=0), samples.var(axis=0), samples)


class HybridForecaster:
    def __init__(self, num_types: int, num_external: int = 8, config: ForecasterConfig | None = None):
        self.config = config or ForecasterConfig()
        self.num_types = num_types
        self.num_external = num_external
        self.x_mean = np.zeros(num_types)
        self.x_std = np.ones(num_types)
        rng = np.random.default_rng(self.config.seed)
        c = self.config
        self.params: dict[str, np.ndarray] = {}
        in_dim = num_types
        for li in range(c.encoder_layers):
            layer = nn.init_lstm_layer(rng, in_dim, c.encoder_hidden)
            for k, v in layer.items():
                self.params[f"enc{li}_{k}"] = v
            in_dim = c.encoder_hidden
        for k, v in nn.init_lstm_layer(rng, c.encoder_hidden, c.decoder_hidden).items():
            self.params[f"dec_{k}"] = v
        for k, v in nn.init_linear(rng, c.decoder_hidden, num_types).items():
            self.params[f"deco_{k}"] = v
        mlp_dims = [c.encoder_hidden + num_external, c.mlp_hidden, c.mlp_hidden, num_types]
        for li in range(3):
            for k, v in nn.init_linear(rng, mlp_dims[li], mlp_dims[li + 1]).items():
                self.params[f"mlp{li}_{k}"] = v

    # -- parameter views --------------------------------------------------

    def _enc_layers(self):
        return [
            {k: self.params[f"enc{li}_{k}"] for k in ("Wx", "Wh", "b")}
            for li in range(self.config.encoder_layers)
        ]

    def _dec_layer(self):
        return {k: self.params[f"dec_{k}"] for k in ("Wx", "Wh", "b")}

    def _dec_out(self):
        return {"W": self.params["deco_W"], "b": self.params["deco_b"]}

    def _mlp_layers(self):
        return [{"W": self.params[f"mlp{li}_W"], "b": self.params[f"mlp{li}_b"]} for li in range(3)]

    def _subset(self, prefixes) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith(prefixes)}

    # -- data handling -------------------------------------------------------

    def fit_scaler(self, counts: np.ndarray) -> None:
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        self.x_mean = counts.mean(axis=0)
        std = counts.std(axis=0)
        self.x_std = np.where(std > 1e-8, std, 1.0)

    def _z(self, counts) -> np.ndarray:
        return (np.asarray(counts, dtype=float) - self.x_mean) / self.x_std

    def _masks(self, rng, batch):
        """Variational masks for one pass/batch: input, between-layer, recurrent."""
        c = self.config
        p = c.dropout_p
        return {
            "in": nn.dropout_mask(rng, p, (batch, self.num_types)),
            "mid": [nn.dropout_mask(rng, p, (batch, c.encoder_hidden)) for _ in range(c.encoder_layers - 1)],
            "rec": [nn.dropout_mask(rng, p, (batch, c.encoder_hidden)) for _ in range(c.encoder_layers)],
        }

    # -- training -----------------------------------------------------------

    def train_encoder_decoder(self, counts: np.ndarray, epochs: int | None = None) -> list[float]:
        """Pre-train the encoder-decoder to reconstruct the next-k windows.
        Returns the per-batch training-loss curve; keeps the epoch whose
        held-out reconstruction loss is best."""
        c = self.config
        epochs = c.encoder_epochs if epochs is None else epochs
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        if counts.shape[0] <= c.input_window + c.decode_horizon:
            raise ValueError("trace too short for input_window + decode_horizon")
        self.fit_scaler(counts)
        z = self._z(counts)
        t, k = c.input_window, c.decode_horizon
        starts = np.arange(0, len(z) - t - k + 1, c.sample_stride)
        X = np.stack([z[s : s + t] for s in starts])
        Y = np.stack([z[s + t : s + t + k] for s in starts])
        n_val = max(1, int(len(starts) * c.val_fraction)) if len(starts) > 1 else 0
        X_tr, Y_tr = X[: len(X) - n_val], Y[: len(Y) - n_val]
        X_val, Y_val = X[len(X) - n_val :], Y[len(Y) - n_val :]

        rng = np.random.default_rng(c.seed + 1)
        train_keys = tuple(f"enc{li}_" for li in range(c.encoder_layers)) + ("dec_", "deco_")
        trainable = self._subset(train_keys)
        opt = nn.Adam(trainable, lr=c.learning_rate, clip_norm=c.grad_clip)
        curve: list[float] = []

        def val_loss():
            if len(X_val) == 0:
                return float("inf")
            y, _ = nn.encdec_forward(X_val, self._enc_layers(), self._dec_layer(), self._dec_out(), k)
            return float(np.mean((y - Y_val) ** 2))

        best = (val_loss(), copy.deepcopy(self.params))
        for _epoch in range(epochs):
            order = rng.permutation(len(X_tr))
            for lo in range(0, len(order), c.batch_size):
                idx = order[lo : lo + c.batch_size]
                masks = self._masks(rng, len(idx))
                loss, _, grads = nn.encdec_loss_and_grads(
                    X[idx], Y[idx], self._enc_layers(), self._dec_layer(), self._dec_out(), masks
                )
                flat = {}
                for li, g in enumerate(grads["enc"]):
                    for key, arr in g.items():
                        flat[f"enc{li}_{key}"] = arr
                for key, arr in grads["dec"].items():
                    flat[f"dec_{key}"] = arr
                flat["deco_W"] = grads["dec_out"]["W"]
                flat["deco_b"] = grads["dec_out"]["b"]
                opt.step(trainable, flat)
                curve.append(loss)
            vl = val_loss()
            if vl < best[0]:
                best = (vl, copy.deepcopy(self.params))
        if epochs > 0 and best[1] is not None:
            self.params.update(best[1])
        return curve

    def train_prediction_net(
        self, counts: np.ndarray, externals: np.ndarray, epochs: int | None = None
    ) -> list[float]:
        """Train the MLP head on [Z; L] -> next-window counts with the encoder
        frozen; dropout stays active during training."""
        c = self.config
        epochs = c.prediction_epochs if epochs is None else epochs
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        externals = np.atleast_2d(np.asarray(externals, dtype=float))
        if externals.shape[0] != counts.shape[0]:
            raise ValueError("externals must align with count windows")
        if externals.shape[1] != self.num_external:
            raise ValueError(
                f"external feature width {externals.shape[1]} != expected {self.num_external}"
            )
        if counts.shape[0] <= c.input_window:
            raise ValueError("trace too short for input_window")
        z = self._z(counts)
        t = c.input_window
        starts = np.arange(0, len(z) - t, c.sample_stride)
        X = np.stack([z[s : s + t] for s in starts])
        Y = z[starts + t]
        L = externals[starts + t]
        n_val = max(1, int(len(starts) * c.val_fraction)) if len(starts) > 1 else 0
        n_tr = len(starts) - n_val

        rng = np.random.default_rng(c.seed + 2)
        trainable = self._subset(("mlp",))
        opt = nn.Adam(trainable, lr=c.learning_rate, clip_norm=c.grad_clip)
        curve: list[float] = []

        def val_loss():
            if n_val == 0:
                return float("inf")
            zv, _ = nn.encoder_forward(X[n_tr:], self._enc_layers())
            y, _ = nn.mlp_forward(np.concatenate([zv, L[n_tr:]], axis=1), self._mlp_layers())
            return float(np.mean((y - Y[n_tr:]) ** 2))

        best = (val_loss(), copy.deepcopy(trainable))
        for _epoch in range(epochs):
            order = rng.permutation(n_tr)
            for lo in range(0, len(order), c.batch_size):
                idx = order[lo : lo + c.batch_size]
                masks = self._masks(rng, len(idx))
                p = c.dropout_p
                mlp_masks = [
                    nn.dropout_mask(rng, p, (len(idx), c.mlp_hidden)),
                    nn.dropout_mask(rng, p, (len(idx), c.mlp_hidden)),
                ]
                loss, _, grads = nn.prediction_loss_and_grads(
                    X[idx], L[idx], Y[idx], self._enc_layers(), self._mlp_layers(), masks, mlp_masks
                )
                flat = {}
                for li, g in enumerate(grads):
                    flat[f"mlp{li}_W"] = g["W"]
                    flat[f"mlp{li}_b"] = g["b"]
                opt.step(trainable, flat)
                curve.append(loss)
            vl = val_loss()
            if vl < best[0]:
                best = (vl, copy.deepcopy(trainable))
        if epochs > 0 and best[1] is not None:
            self.params.update(best[1])
        return curve

    # -- prediction -----------------------------------------------------------

    def _predict_batch(self, x_seq: np.ndarray, ext: np.ndarray, masks, mlp_masks) -> np.ndarray:
        z, _ = nn.encoder_forward(x_seq, self._enc_layers(), masks)
        feat = np.concatenate([z, ext], axis=1)
        y, _ = nn.mlp_forward(feat, self._mlp_layers(), mlp_masks)
        return y

    def forward_deterministic(self, recent_counts: np.ndarray, external_row: np.ndarray) -> np.ndarray:
        """Single dropout-free pass; returns the de-standardized prediction."""
        x = self._z(np.atleast_2d(recent_counts))[None, :, :]
        y = self._predict_batch(x, np.atleast_2d(external_row), None, None)[0]
        return np.clip(y * self.x_std + self.x_mean, 0.0, None)

    def predict_mc(
        self, recent_counts: np.ndarray, external_row: np.ndarray, passes: int | None = None, seed: int = 0
    ) -> Forecast:
        """T stochastic forward passes with independent variational dropout
        masks per pass; predictive mean/variance over the passes."""
        c = self.config
        T = c.mc_passes if passes is None else passes
        if T < 1:
            raise ValueError("mc passes must be >= 1")
        recent = np.atleast_2d(np.asarray(recent_counts, dtype=float))
        if recent.shape[0] != c.input_window:
            raise ValueError(f"need exactly input_window={c.input_window} recent windows")
        x1 = self._z(recent)
        ext = np.atleast_1d(np.asarray(external_row, dtype=float))
        if c.dropout_p == 0:
            # all masks are identity: every pass is the same computation,
            # so the variance is exactly zero by construction
            y = self._predict_batch(x1[None, :, :], ext[None, :], None, None)[0]
            out = np.clip(y * self.x_std + self.x_mean, 0.0, None)
            return Forecast(out, np.zeros_like(out), np.tile(out, (T, 1)))
        rng = np.random.default_rng(seed)
        x = np.broadcast_to(x1, (T, *x1.shape)).copy()
        exts = np.broadcast_to(ext, (T, len(ext))).copy()
        masks = self._masks(rng, T)
        mlp_masks = [
            nn.dropout_mask(rng, c.dropout_p, (T, c.mlp_hidden)),
            nn.dropout_mask(rng, c.dropout_p, (T, c.mlp_hidden)),
        ]
        y = self._predict_batch(x, exts, masks, mlp_masks)
        samples = np.clip(y * self.x_std + self.x_mean, 0.0, None)
        return Forecast.from_samples(samples)

    # -- checkpointing -----------------------------------------------------------

    def save(self, path) -> None:
        doc = {
            "config": asdict(self.config),
            "num_types": self.num_types,
            "num_external": self.num_external,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "tensors": {
                name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in sorted(self.params.items())
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "HybridForecaster":
        with open(path) as fh:
            doc = json.load(fh)
        config = ForecasterConfig(**doc["config"])
        model = cls(doc["num_types"], doc["num_external"], config)
        model.x_mean = np.array(doc["x_mean"])
        model.x_std = np.array(doc["x_std"])
        for name, spec in doc["tensors"].items():
            model.params[name] = np.array(spec["data"]).reshape(spec["shape"])
        return model
