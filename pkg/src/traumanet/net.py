"""Feedforward binary classifier in plain numpy.

Default topology: input -> Dense(300) -> BN -> ReLU -> Dropout -> Dense(100)
-> BN -> ReLU -> Dropout -> Dense(1) -> sigmoid.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_CLAMP = 1e-7
# Sigmoid outputs are kept strictly inside (0, 1).
PROB_FLOOR = 1e-16


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_out = n_in, n_out
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            # Kaiming (fan-in) initialization for ReLU networks
            w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
        self.params = {"W": w, "b": np.zeros(n_out)}
        self.grads = {}
        self._x = None

    def forward(self, x, train):
        if x.shape[1] != self.n_in:
            raise ValueError(f"Dense expects {self.n_in} input columns, got {x.shape[1]}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads = {"W": self._x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T

    def to_dict(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "W": self.params["W"].tolist(), "b": self.params["b"].tolist()}


class BatchNorm(Layer):
    """Per-feature batch normalization.

    Train mode normalizes with the batch mean and (biased) variance and folds
    them into the running estimates; eval mode uses the running estimates.
    The running variance is updated with the unbiased batch variance.
    """

    def __init__(self, n: int, eps: float = 1e-5, momentum: float = 0.1):
        self.n, self.eps, self.momentum = n, eps, momentum
        self.params = {"gamma": np.ones(n), "beta": np.zeros(n)}
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.grads = {}
        self._cache = None

    def forward(self, x, train):
        if train:
            m = x.shape[0]
            if m < 2:
                raise ValueError("batch normalization in train mode needs at least 2 rows")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mu) * inv_std
            self._cache = (x_hat, inv_std)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * m / (m - 1)
        else:
            x_hat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            self._cache = None
        return self.params["gamma"] * x_hat + self.params["beta"]

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("BatchNorm.backward needs a train-mode forward pass")
        x_hat, inv_std = self._cache
        m = dout.shape[0]
        self.grads = {"gamma": (dout * x_hat).sum(axis=0), "beta": dout.sum(axis=0)}
        dx_hat = dout * self.params["gamma"]
        return (inv_std / m) * (m * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))

    def to_dict(self):
        return {"kind": "batchnorm", "n": self.n, "eps": self.eps, "momentum": self.momentum,
                "gamma": self.params["gamma"].tolist(), "beta": self.params["beta"].tolist(),
                "running_mean": self.running_mean.tolist(), "running_var": self.running_var.tolist()}


class ReLU(Layer):
    def __init__(self):
        self.params, self.grads = {}, {}
        self._mask = None

    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask

    def to_dict(self):
        return {"kind": "relu"}


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) in train mode."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.params, self.grads = {}, {}
        self.mask = None
        self.frozen = False  # reuse self.mask on the next forward passes

    def forward(self, x, train):
        if not train:
            return x
        if self.rate == 0.0:
            self.mask = None
            return x
        if not (self.frozen and self.mask is not None and self.mask.shape == x.shape):
            self.mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self.mask

    def backward(self, dout):
        return dout if self.mask is None else dout * self.mask

    def to_dict(self):
        return {"kind": "dropout", "rate": self.rate}


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), PROB_FLOOR, 1.0 - PROB_FLOOR)


def bce_loss(probabilities, labels) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} probabilities vs {y.shape} labels")
    p = np.clip(p, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple[int, ...] = (300, 100)
    dropout: float = 0.3
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0


class Network:
    """Layer stack ending in a single logit; ``forward`` returns sigmoid probabilities."""

    def __init__(self, layers: list[Layer], n_inputs: int):
        self.layers = layers
        self.n_inputs = n_inputs
        self.mode = "train"
        self._batch = None
        self._probs = None

    @classmethod
    def build(cls, n_inputs: int, cfg: NetConfig = NetConfig()) -> "Network":
        init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
        drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
        layers: list[Layer] = []
        width = n_inputs
        for h in cfg.hidden:
            layers += [Dense(width, h, init_rng), BatchNorm(h, cfg.bn_eps, cfg.bn_momentum), ReLU(),
                       Dropout(cfg.dropout, drop_rng)]
            width = h
        layers.append(Dense(width, 1, init_rng))
        return cls(layers, n_inputs)

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def logits(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"expected a (rows, {self.n_inputs}) batch, got shape {x.shape}")
        train = self.mode == "train"
        if train and x.shape[0] < 2:
            raise ValueError("train-mode forward needs at least 2 rows (batch normalization)")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x[:, 0]

    def forward(self, batch: np.ndarray) -> np.ndarray:
        probs = sigmoid(self.logits(batch))
        self._batch, self._probs = batch, probs
        return probs

    def backward(self, labels: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the mean BCE loss for the batch of the last ``forward``."""
        if self._probs is None or self.mode != "train":
            raise RuntimeError("backward needs a cached train-mode forward pass")
        y = np.asarray(labels, dtype=np.float64)
        if y.shape != self._probs.shape:
            raise ValueError(f"{len(y)} labels for a batch of {len(self._probs)} rows")
        dout = ((self._probs - y) / len(y))[:, None]
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return self.gradients()

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{name}": layer.grads[name]
                for i, layer in enumerate(self.layers) for name in layer.params}

    def freeze_dropout(self, frozen: bool = True) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.frozen = frozen

    def to_dict(self) -> dict:
        return {"n_inputs": self.n_inputs, "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        layers: list[Layer] = []
        width = int(d["n_inputs"])
        for spec in d["layers"]:
            kind = spec["kind"]
            if kind == "dense":
                layer = Dense(int(spec["n_in"]), int(spec["n_out"]))
                w = np.array(spec["W"], dtype=np.float64).reshape(layer.n_in, layer.n_out)
                b = np.array(spec["b"], dtype=np.float64)
                if layer.n_in != width or b.shape != (layer.n_out,):
                    raise ValueError(f"dense layer shape mismatch at width {width}")
                layer.params = {"W": w, "b": b}
                width = layer.n_out
            elif kind == "batchnorm":
                layer = BatchNorm(int(spec["n"]), float(spec["eps"]), float(spec["momentum"]))
                arrays = {k: np.array(spec[k], dtype=np.float64) for k in ("gamma", "beta", "running_mean", "running_var")}
                if layer.n != width or any(a.shape != (width,) for a in arrays.values()):
                    raise ValueError(f"batchnorm shape mismatch at width {width}")
                layer.params = {"gamma": arrays["gamma"], "beta": arrays["beta"]}
                layer.running_mean, layer.running_var = arrays["running_mean"], arrays["running_var"]
            elif kind == "relu":
                layer = ReLU()
            elif kind == "dropout":
                layer = Dropout(float(spec["rate"]), np.random.default_rng(0))
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
            layers.append(layer)
        if width != 1:
            raise ValueError(f"network must end in a single output, ends at width {width}")
        return cls(layers, int(d["n_inputs"]))


def backward(net: Network, batch: np.ndarray, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for ``batch``, which must be the batch of the cached forward pass."""
    if net._batch is None or net._batch is not batch and not np.array_equal(net._batch, batch):
        raise RuntimeError("backward called without a cached forward pass for this batch")
    return net.backward(labels)


@dataclass
class Adam:
    """Adaptive-moment optimizer state with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, net: Network, grads: dict[str, np.ndarray]) -> None:
        params = dict(net.named_parameters())
        if set(grads) != set(params):
            raise ValueError("gradient set does not match the network parameters")
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient {name} has shape {g.shape}, parameter has {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}; step aborted")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
