"""From-scratch differentiable Q-network.

Per-feature handlers (1-D convolution + global max-pool over the text
matrix, fully connected layers over the count features), a three-layer
fully connected trunk with a linear scalar head, hand-written
backpropagation, Adam, and a binary checkpoint format. Everything is
float64 so gradients can be validated against central finite differences
at tight tolerance.

A network is single-writer while training; once training stops, concurrent
forward evaluation is safe.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureBundle, FeatureConfig

CHECKPOINT_MAGIC = b"QXP1"
CONCAT_ORDER = ("txc", "fcr", "fcd")


class ModelFormatError(ValueError):
    """Checkpoint file is malformed, truncated, or architecture-incompatible."""


@dataclass(frozen=True)
class Architecture:
    """Hyperparameters of the network; stored in every checkpoint."""

    embed_dim: int = 16
    max_words: int = 6
    generations: int = 3
    histogram_len: int = 10
    filters_per_width: int = 8
    filter_widths: tuple[int, ...] = (2, 3)
    fcr_hidden: int = 8
    fcd_hidden: int = 32
    trunk_hidden: tuple[int, int] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "filter_widths", tuple(self.filter_widths))
        object.__setattr__(self, "trunk_hidden", tuple(self.trunk_hidden))
        if any(w < 1 or w > self.max_words for w in self.filter_widths):
            raise ValueError("filter widths must be in 1..max_words")
        if not self.filter_widths:
            raise ValueError("need at least one filter width")

    @classmethod
    def for_features(cls, cfg: FeatureConfig, **overrides) -> "Architecture":
        return cls(
            embed_dim=cfg.embed_dim,
            max_words=cfg.max_words,
            generations=cfg.generations,
            histogram_len=cfg.histogram_len,
            **overrides,
        )

    @property
    def txc_out(self) -> int:
        return self.filters_per_width * len(self.filter_widths)

    @property
    def fcd_in(self) -> int:
        return self.generations * self.histogram_len

    @property
    def trunk_in(self) -> int:
        return self.txc_out + self.fcr_hidden + self.fcd_hidden

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for w in self.filter_widths:
            shapes.append((f"conv{w}_w", (self.filters_per_width, self.embed_dim, w)))
            shapes.append((f"conv{w}_b", (self.filters_per_width,)))
        shapes.append(("fcr_w", (self.fcr_hidden, 1)))
        shapes.append(("fcr_b", (self.fcr_hidden,)))
        shapes.append(("fcd_w", (self.fcd_hidden, self.fcd_in)))
        shapes.append(("fcd_b", (self.fcd_hidden,)))
        h1, h2 = self.trunk_hidden
        shapes.append(("trunk1_w", (h1, self.trunk_in)))
        shapes.append(("trunk1_b", (h1,)))
        shapes.append(("trunk2_w", (h2, h1)))
        shapes.append(("trunk2_b", (h2,)))
        shapes.append(("out_w", (1, h2)))
        shapes.append(("out_b", (1,)))
        return shapes


@dataclass
class TrainingSample:
    bundle: FeatureBundle
    target_q: float


@dataclass
class AdamState:
    """Adam accumulators; moment shapes mirror the parameter shapes."""

    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_network(cls, net: "QNetwork", learning_rate: float = 0.0001) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        for name, value in net.params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def _relu(x):
    return np.maximum(x, 0.0)


class QNetwork:
    """Maps a FeatureBundle to a scalar Q value; differentiable by hand."""

    def __init__(self, arch: Architecture, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params
        for name, shape in arch.param_shapes():
            if name not in params or params[name].shape != shape:
                raise ValueError(f"parameter {name} missing or misshaped")

    @classmethod
    def create(cls, arch: Architecture, seed: int) -> "QNetwork":
        """Glorot-uniform weights, zero biases, seeded and reproducible."""
        rng = np.random.Generator(np.random.Philox(key=seed))
        params = {}
        for name, shape in arch.param_shapes():
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype=np.float64)
            else:
                fan_out = shape[0]
                fan_in = int(np.prod(shape[1:]))
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params[name] = rng.uniform(-limit, limit, shape)
        return cls(arch, params)

    @classmethod
    def zeros(cls, arch: Architecture) -> "QNetwork":
        return cls(arch, {name: np.zeros(shape) for name, shape in arch.param_shapes()})

    def clone(self) -> "QNetwork":
        return QNetwork(self.arch, {k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------------
    # forward / backward (batched core, scalar wrappers)

    def _stack(self, bundles: list[FeatureBundle]):
        a = self.arch
        txc = np.empty((len(bundles), a.embed_dim, a.max_words), dtype=np.float64)
        fcr = np.empty((len(bundles), 1), dtype=np.float64)
        fcd = np.empty((len(bundles), a.fcd_in), dtype=np.float64)
        for i, b in enumerate(bundles):
            if b.txc.shape != (a.embed_dim, a.max_words) or b.fcd.shape != (
                a.generations,
                a.histogram_len,
            ):
                raise ValueError(
                    f"bundle shapes {b.txc.shape}/{b.fcd.shape} do not match architecture"
                )
            txc[i] = b.txc
            fcr[i, 0] = float(b.fcr)
            fcd[i] = b.fcd.astype(np.float64).ravel()
        return txc, fcr, fcd

    def _forward_cached(self, bundles: list[FeatureBundle]) -> dict:
        a = self.arch
        p = self.params
        txc, fcr, fcd = self._stack(bundles)
        cache = {"txc_in": txc, "fcr_in": fcr, "fcd_in": fcd}

        pooled_blocks = []
        for w in a.filter_widths:
            positions = a.max_words - w + 1
            windows = np.stack([txc[:, :, i : i + w] for i in range(positions)], axis=1)
            conv = np.einsum("bplw,flw->bfp", windows, p[f"conv{w}_w"]) + p[f"conv{w}_b"][None, :, None]
            argmax = conv.argmax(axis=2)  # ties resolve to the lowest index
            pooled = np.take_along_axis(conv, argmax[:, :, None], axis=2)[:, :, 0]
            cache[f"windows{w}"] = windows
            cache[f"argmax{w}"] = argmax
            pooled_blocks.append(pooled)
        txc_pre = np.concatenate(pooled_blocks, axis=1)
        cache["txc_pre"] = txc_pre

        fcr_pre = fcr @ p["fcr_w"].T + p["fcr_b"]
        fcd_pre = fcd @ p["fcd_w"].T + p["fcd_b"]
        cache["fcr_pre"] = fcr_pre
        cache["fcd_pre"] = fcd_pre

        x = np.concatenate([_relu(txc_pre), _relu(fcr_pre), _relu(fcd_pre)], axis=1)
        z1 = x @ p["trunk1_w"].T + p["trunk1_b"]
        h1 = _relu(z1)
        z2 = h1 @ p["trunk2_w"].T + p["trunk2_b"]
        h2 = _relu(z2)
        y = h2 @ p["out_w"].T + p["out_b"]
        cache.update(x=x, z1=z1, h1=h1, z2=z2, h2=h2, y=y[:, 0])
        return cache

    def forward_many(self, bundles: list[FeatureBundle]) -> np.ndarray:
        if not bundles:
            return np.zeros(0, dtype=np.float64)
        return self._forward_cached(bundles)["y"].copy()

    def forward(self, bundle: FeatureBundle) -> float:
        return float(self.forward_many([bundle])[0])

    def _backward_cached(self, cache: dict, upstream: np.ndarray) -> dict[str, np.ndarray]:
        a = self.arch
        p = self.params
        grads: dict[str, np.ndarray] = {}

        dy = upstream  # (B,)
        grads["out_b"] = np.array([dy.sum()])
        grads["out_w"] = (dy[:, None] * cache["h2"]).sum(axis=0, keepdims=True)
        dh2 = dy[:, None] * p["out_w"][0][None, :]
        dz2 = dh2 * (cache["z2"] > 0)
        grads["trunk2_w"] = dz2.T @ cache["h1"]
        grads["trunk2_b"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["trunk2_w"]
        dz1 = dh1 * (cache["z1"] > 0)
        grads["trunk1_w"] = dz1.T @ cache["x"]
        grads["trunk1_b"] = dz1.sum(axis=0)
        dx = dz1 @ p["trunk1_w"]

        t = a.txc_out
        d_txc = dx[:, :t] * (cache["txc_pre"] > 0)
        d_fcr = dx[:, t : t + a.fcr_hidden] * (cache["fcr_pre"] > 0)
        d_fcd = dx[:, t + a.fcr_hidden :] * (cache["fcd_pre"] > 0)

        offset = 0
        batch = np.arange(dy.shape[0])
        for w in a.filter_widths:
            block = d_txc[:, offset : offset + a.filters_per_width]  # (B, F)
            offset += a.filters_per_width
            # gradient routes to the argmax window of each filter
            picked = cache[f"windows{w}"][batch[:, None], cache[f"argmax{w}"]]  # (B, F, L, w)
            grads[f"conv{w}_w"] = np.einsum("bf,bflw->flw", block, picked)
            grads[f"conv{w}_b"] = block.sum(axis=0)

        grads["fcr_w"] = d_fcr.T @ cache["fcr_in"]
        grads["fcr_b"] = d_fcr.sum(axis=0)
        grads["fcd_w"] = d_fcd.T @ cache["fcd_in"]
        grads["fcd_b"] = d_fcd.sum(axis=0)
        return grads

    def backward(self, bundle: FeatureBundle, upstream: float) -> dict[str, np.ndarray]:
        """d(output)/d(theta) * upstream for every parameter."""
        cache = self._forward_cached([bundle])
        return self._backward_cached(cache, np.array([float(upstream)]))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Textbook Adam with bias correction; mutates params and state."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, want {value.shape}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def train_batch(net: QNetwork, adam: AdamState, samples: list[TrainingSample]) -> float:
    """One Adam step on the mean squared TD error; returns the pre-update loss."""
    if not samples:
        raise ValueError("empty training batch")
    cache = net._forward_cached([s.bundle for s in samples])
    preds = cache["y"]
    targets = np.array([s.target_q for s in samples], dtype=np.float64)
    residual = preds - targets
    loss = float(np.mean(residual**2))
    grads = net._backward_cached(cache, 2.0 * residual / len(samples))
    adam_step(net.params, grads, adam)
    return loss


# ----------------------------------------------------------------------
# checkpoint io


def _header_lines(net: QNetwork, adam: AdamState) -> list[str]:
    a = net.arch
    return [
        f"embed_dim {a.embed_dim}",
        f"max_words {a.max_words}",
        f"generations {a.generations}",
        f"histogram_len {a.histogram_len}",
        f"filters_per_width {a.filters_per_width}",
        "filter_widths " + ",".join(str(w) for w in a.filter_widths),
        f"fcr_hidden {a.fcr_hidden}",
        f"fcd_hidden {a.fcd_hidden}",
        "trunk_hidden " + ",".join(str(h) for h in a.trunk_hidden),
        "concat " + ",".join(CONCAT_ORDER),
        f"learning_rate {adam.learning_rate!r}",
        f"beta1 {adam.beta1!r}",
        f"beta2 {adam.beta2!r}",
        f"eps {adam.eps!r}",
    ]


def save_model(net: QNetwork, adam: AdamState, path: str | Path) -> None:
    """Magic, text header, blank line, then float64 LE parameter/moment blobs."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + b"\n")
    buf.write("\n".join(_header_lines(net, adam)).encode("ascii") + b"\n\n")
    order = [name for name, _ in net.arch.param_shapes()]
    for name in order:
        buf.write(net.params[name].astype("<f8").tobytes())
    for name in order:
        buf.write(adam.m[name].astype("<f8").tobytes())
    for name in order:
        buf.write(adam.v[name].astype("<f8").tobytes())
    buf.write(np.uint64(adam.step).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path, expect: Architecture | None = None) -> tuple[QNetwork, AdamState]:
    """Inverse of save_model; validates magic, sizes, and any expected arch."""
    blob = Path(path).read_bytes()
    header_end = blob.find(b"\n\n")
    if not blob.startswith(CHECKPOINT_MAGIC + b"\n") or header_end < 0:
        raise ModelFormatError(f"{path}: not a QXP1 checkpoint")
    fields: dict[str, str] = {}
    for line in blob[len(CHECKPOINT_MAGIC) + 1 : header_end].decode("ascii").splitlines():
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        arch = Architecture(
            embed_dim=int(fields["embed_dim"]),
            max_words=int(fields["max_words"]),
            generations=int(fields["generations"]),
            histogram_len=int(fields["histogram_len"]),
            filters_per_width=int(fields["filters_per_width"]),
            filter_widths=tuple(int(w) for w in fields["filter_widths"].split(",")),
            fcr_hidden=int(fields["fcr_hidden"]),
            fcd_hidden=int(fields["fcd_hidden"]),
            trunk_hidden=tuple(int(h) for h in fields["trunk_hidden"].split(",")),
        )
        adam = AdamState(
            learning_rate=float(fields["learning_rate"]),
            beta1=float(fields["beta1"]),
            beta2=float(fields["beta2"]),
            eps=float(fields["eps"]),
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad checkpoint header ({exc})") from exc
    if expect is not None and arch != expect:
        raise ModelFormatError(f"{path}: checkpoint architecture {arch} != expected {expect}")

    shapes = arch.param_shapes()
    n_params = sum(int(np.prod(shape)) for _, shape in shapes)
    body = blob[header_end + 2 :]
    expected_bytes = n_params * 3 * 8 + 8
    if len(body) != expected_bytes:
        raise ModelFormatError(
            f"{path}: body has {len(body)} bytes, want {expected_bytes} (truncated or corrupt)"
        )
    flat = np.frombuffer(body[:-8], dtype="<f8")
    adam.step = int(np.frombuffer(body[-8:], dtype="<u8")[0])

    def take(offset):
        out = {}
        for name, shape in shapes:
            size = int(np.prod(shape))
            out[name] = flat[offset : offset + size].reshape(shape).copy()
            offset += size
        return out, offset

    params, offset = take(0)
    adam.m, offset = take(offset)
    adam.v, _ = take(offset)
    return QNetwork(arch, params), adam
