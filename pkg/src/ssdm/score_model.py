"""Tangent-field score network: MLP, hand-written backprop and AdamW.

Parameters live in one flat float64 buffer; each layer's ``W`` (shape
``(fan_in, fan_out)``) and ``b`` are views into it, so gradients and optimizer
moments are flat arrays with the same layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np

from . import geometry as geo
from .data_io import atomic_write_text
from .rng import RngStream

EMBED_DIM = 128
HIDDEN = 512
N_LAYERS = 5
ROW_CHUNK = 64
CHECKPOINT_VERSION = 1
HEADS = ("horizontal", "identity")

_FREQS = 10.0 ** (4.0 * np.arange(EMBED_DIM // 2) / (EMBED_DIM // 2 - 1))


def time_embed(t, horizon: float = 1.0) -> np.ndarray:
    """Sinusoidal embedding ``[sin(w_k t/T), cos(w_k t/T)]``, ``w_k`` geometric in ``[1, 1e4]``."""
    arg = (np.asarray(t, dtype=float) / horizon)[..., None] * _FREQS
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def _silu(a: np.ndarray) -> np.ndarray:
    return a / (1.0 + np.exp(-a))


def _silu_grad(a: np.ndarray) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-a))
    return sig * (1.0 + a * (1.0 - sig))


@dataclass(eq=False)
class ScoreNet:
    d: int
    widths: tuple[int, ...]
    params: np.ndarray
    head: str = "horizontal"
    horizon: float = 1.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.widths[0] != 2 * self.d + EMBED_DIM or self.widths[-1] != 2 * self.d:
            raise ValueError(f"widths {self.widths} inconsistent with d={self.d}")
        expected = sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))
        self.params = np.ascontiguousarray(self.params, dtype=float)
        if self.params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {self.params.shape}")

    @classmethod
    def create(cls, d: int, rng: RngStream, hidden: int = HIDDEN, n_layers: int = N_LAYERS,
               head: str = "horizontal", horizon: float = 1.0, zero_final: bool = True) -> "ScoreNet":
        widths = (2 * d + EMBED_DIM,) + (hidden,) * (n_layers - 1) + (2 * d,)
        size = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        net = cls(d, widths, np.zeros(size), head=head, horizon=horizon)
        layers = net.layers()
        for i, (w, _) in enumerate(layers):
            if i == len(layers) - 1 and zero_final:
                continue
            bound = np.sqrt(6.0 / w.shape[0])  # He-uniform
            w[...] = rng.uniform(-bound, bound, w.shape)
        return net

    def layers(self, flat: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(W, b)`` views into ``flat`` (default: the parameters)."""
        flat = self.params if flat is None else flat
        out, pos = [], 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            w = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((w, flat[pos:pos + b]))
            pos += b
        return out

    def copy(self) -> "ScoreNet":
        return ScoreNet(self.d, self.widths, self.params.copy(), self.head, self.horizon)


def _features(net: ScoreNet, states: np.ndarray, t: np.ndarray) -> np.ndarray:
    if net.head == "horizontal":
        states = np.asarray(states, dtype=complex)
        x = np.concatenate([states.real, states.imag], axis=-1)
    else:
        x = np.asarray(states, dtype=float)
    if x.shape[-1] != 2 * net.d:
        raise ValueError(f"state dimension {x.shape[-1] // 2} does not match net.d={net.d}")
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
    return np.concatenate([x, time_embed(t, net.horizon)], axis=-1)


def _mlp(net: ScoreNet, h: np.ndarray, keep: bool):
    """Output plus, when ``keep``, every layer's input and every hidden pre-activation."""
    inputs, pre = [], []
    layers = net.layers()
    for i, (w, b) in enumerate(layers):
        if keep:
            inputs.append(h)
        a = h @ w + b
        if i == len(layers) - 1:
            return a, (inputs, pre)
        if keep:
            pre.append(a)
        h = _silu(a)
    raise AssertionError("unreachable")


def forward_raw(net: ScoreNet, states: np.ndarray, t) -> np.ndarray:
    """Raw ``2d`` network output for a batch.

    Rows go through the MLP in fixed blocks of 64 (the last one zero-padded) so
    every row's value is independent of the batch size it arrived in.
    """
    feats = _features(net, states, t)
    n = feats.shape[0]
    out = np.empty((n, 2 * net.d))
    for lo in range(0, n, ROW_CHUNK):
        block = feats[lo:lo + ROW_CHUNK]
        if block.shape[0] < ROW_CHUNK:
            block = np.concatenate([block, np.zeros((ROW_CHUNK - block.shape[0], block.shape[1]))])
        raw, _ = _mlp(net, block, keep=False)
        out[lo:lo + ROW_CHUNK] = raw[:min(ROW_CHUNK, n - lo)]
    return out


def _to_complex(raw: np.ndarray, d: int) -> np.ndarray:
    return raw[..., :d] + 1j * raw[..., d:]


def score_forward(net: ScoreNet, psi: np.ndarray, t) -> np.ndarray:
    """Horizontal score field ``P_psi(raw)``; accepts one state or a batch."""
    psi = np.asarray(psi, dtype=complex)
    single = psi.ndim == 1
    batch = psi[None] if single else psi
    raw = forward_raw(net, batch, np.atleast_1d(t) if single else t)
    out = geo.project_horizontal(batch, _to_complex(raw, net.d)) if net.head == "horizontal" \
        else _to_complex(raw, net.d)
    return out[0] if single else out


def euclidean_score(net: ScoreNet, x: np.ndarray, t) -> np.ndarray:
    """Identity-head output on real ``(B, 2d)`` inputs (VP baseline)."""
    if net.head != "identity":
        raise ValueError("euclidean_score needs an identity-head net")
    return forward_raw(net, x, t)


def loss_and_grads(net: ScoreNet, states: np.ndarray, targets: np.ndarray, t, weights):
    """Weighted mean squared error and its exact gradient w.r.t. ``net.params``.

    For the horizontal head ``states``/``targets`` are complex ``(B, d)`` with
    targets horizontal at their states; for the identity head both are real
    ``(B, 2d)``. The loss is ``mean_b w_b |pred_b - target_b|^2``.
    """
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (len(states),))
    feats = _features(net, states, t)
    raw, cache = _mlp(net, feats, keep=True)
    if net.head == "horizontal":
        states = np.asarray(states, dtype=complex)
        targets = np.asarray(targets, dtype=complex)
        radial = np.abs(geo.inner(states, targets))
        if np.max(radial, initial=0.0) > 1e-8:
            raise ValueError(f"target not horizontal: |<psi, target>| = {np.max(radial):.2e}")
        pred = geo.project_horizontal(states, _to_complex(raw, net.d))
        diff_c = pred - targets
        diff = np.concatenate([diff_c.real, diff_c.imag], axis=-1)
    else:
        diff = raw - np.asarray(targets, dtype=float)
    batch = diff.shape[0]
    per_example = weights * np.sum(diff * diff, axis=-1)
    loss = float(np.mean(per_example))
    # the horizontal projector is real-symmetric and diff is already horizontal,
    # so back through the head the gradient stays 2 w diff / B
    grad_a = (2.0 / batch) * weights[:, None] * diff
    grads = np.empty_like(net.params)
    g_layers = net.layers(grads)
    layers = net.layers()
    inputs, pre = cache
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = g_layers[i]
        gw[...] = inputs[i].T @ grad_a
        gb[...] = grad_a.sum(axis=0)
        if i > 0:
            grad_a = (grad_a @ layers[i][0].T) * _silu_grad(pre[i - 1])
    return loss, grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    last_grad_norm: float = field(default=0.0, compare=False)

    @classmethod
    def for_net(cls, net: ScoreNet, **hyper) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), **hyper)

    def hyperparameters(self) -> dict:
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                    weight_decay=self.weight_decay, clip_norm=self.clip_norm)


@numba.njit(cache=True, nogil=True)
def _adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bias1, bias2):
    decay = 1.0 - lr * weight_decay
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] = p[i] * decay - lr * (m[i] / bias1) / (np.sqrt(v[i] / bias2) + eps)


def adam_step(net: ScoreNet, state: AdamState, grads: np.ndarray, step_index: int | None = None):
    """Clip to the global norm, then one decoupled-weight-decay Adam update (in place)."""
    if grads.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ValueError("gradient / optimizer state shape mismatch")
    if not np.all(np.isfinite(grads)):
        where = state.step if step_index is None else step_index
        raise FloatingPointError(f"non-finite gradient at step {where}")
    gnorm = float(np.sqrt(np.dot(grads, grads)))
    state.last_grad_norm = gnorm
    if gnorm > state.clip_norm:
        grads = grads * (state.clip_norm / gnorm)
    state.step += 1
    _adamw_update(net.params, grads, state.m, state.v, state.lr, state.beta1, state.beta2, state.eps,
                  state.weight_decay, 1.0 - state.beta1**state.step, 1.0 - state.beta2**state.step)
    return net, state


def save_checkpoint(path, net: ScoreNet, state: AdamState | None = None, config: dict | None = None,
                    seed: int | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "d": net.d,
        "head": net.head,
        "horizon": net.horizon,
        "embed_dim": EMBED_DIM,
        "layer_shapes": [[int(w.shape[0]), int(w.shape[1])] for w, _ in net.layers()],
        "params": net.params.tolist(),
        "optimizer": None if state is None else {**state.hyperparameters(), "step": state.step},
        "config": config,
        "seed": seed,
    }
    atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path) -> tuple[ScoreNet, dict]:
    """Return the network and the full checkpoint document (minus parameters)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version!r}")
    shapes = doc["layer_shapes"]
    widths = tuple([shapes[0][0]] + [s[1] for s in shapes])
    net = ScoreNet(int(doc["d"]), widths, np.array(doc.pop("params"), dtype=float),
                   head=doc["head"], horizon=float(doc["horizon"]))
    return net, doc
