"""The velocity-field network.

A convolutional embedding lifts (batch, length, features) windows into
d_model channels; a stack of encoder layers then splits each hidden state
into a low-frequency trend (moving average) and a high-frequency seasonal
residual, refines the seasonal part with cross-attention, modulates the
trend with a multi-scale gated convolution, and passes the leftover
residual to the next layer. The velocity estimate is a projection of the
seasonal and trend contributions accumulated across all layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError, NumericError
from .tensor import Tensor, attention, conv1d, moving_average

_LN_EPS = 1e-5
_EMBED_KERNEL = 3
_FFN_MULTIPLE = 2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and ablation switches."""

    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    decomposition_window: int = 5
    kernel_sizes: tuple = (3, 5, 7)
    time_embed_dim: int = 64
    use_cross_attention: bool = True
    use_flow_decomposition: bool = True
    use_self_attention_encoder: bool = True
    gate_activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.decomposition_window % 2 == 0:
            raise ConfigError(
                f"decomposition_window must be odd, got {self.decomposition_window}"
            )
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must all be odd, got {self.kernel_sizes}")
        if self.time_embed_dim % 2 != 0:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.gate_activation not in ("sigmoid", "identity"):
            raise ConfigError(f"unknown gate_activation {self.gate_activation!r}")


def sinusoidal_positions(length, dim):
    """Fixed transformer position encoding, shape (1, length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table[None, :, :]


def time_features(t, batch, dim):
    """Sinusoidal features of integration time, shape (batch, 1, dim).

    t in [0, 1] is spread across geometrically spaced frequencies so that
    nearby grid times map to distinguishable feature vectors.
    """
    t_arr = np.asarray(t, dtype=np.float64).reshape(-1)
    if t_arr.size == 1:
        t_arr = np.full(batch, t_arr[0])
    if t_arr.size != batch:
        raise DataError(f"got {t_arr.size} time values for a batch of {batch}")
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))
    angles = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)[:, None, :]


class VelocityModel:
    """Parameterized velocity field v(x_t, t) over scaled series windows."""

    def __init__(self, config: ModelConfig, n_features: int):
        self.config = config
        self.n_features = int(n_features)
        self.params: dict[str, Tensor] = {}
        self._init_parameters()

    # -- parameter plumbing ---------------------------------------------------

    def _add(self, name, array):
        self.params[name] = Tensor(array, requires_grad=True)

    def _glorot(self, rng, shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def _add_linear(self, rng, name, d_in, d_out, zero=False, bias=True):
        w = np.zeros((d_in, d_out)) if zero else self._glorot(rng, (d_in, d_out), d_in, d_out)
        self._add(f"{name}.w", w)
        if bias:
            self._add(f"{name}.b", np.zeros(d_out))

    def _add_norm(self, name, dim):
        self._add(f"{name}.gain", np.ones(dim))
        self._add(f"{name}.bias", np.zeros(dim))

    def _add_attention_block(self, rng, name, dim, zero_output=False):
        self._add_linear(rng, f"{name}.q", dim, dim)
        # No key bias: softmax is invariant to a shared shift of the scores,
        # so that parameter would be permanently gradient-dead.
        self._add_linear(rng, f"{name}.k", dim, dim, bias=False)
        self._add_linear(rng, f"{name}.v", dim, dim)
        self._add_linear(rng, f"{name}.o", dim, dim, zero=zero_output)

    def _init_parameters(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model

        kw = self._glorot(
            rng,
            (_EMBED_KERNEL, self.n_features, d),
            _EMBED_KERNEL * self.n_features,
            _EMBED_KERNEL * d,
        )
        self._add("embed.conv.w", kw)
        self._add("embed.conv.b", np.zeros(d))
        self._add_linear(rng, "embed.time", cfg.time_embed_dim, d)

        for i in range(cfg.n_layers):
            base = f"layer{i}"
            if cfg.use_self_attention_encoder:
                self._add_norm(f"{base}.enc.norm", d)
                self._add_attention_block(rng, f"{base}.enc", d)
            if cfg.use_flow_decomposition:
                if cfg.use_cross_attention:
                    self._add_attention_block(rng, f"{base}.ca", d, zero_output=True)
                for k in cfg.kernel_sizes:
                    gk = self._glorot(rng, (k, d, d), k * d, k * d)
                    self._add(f"{base}.gate.conv{k}.w", gk)
                    self._add(f"{base}.gate.conv{k}.b", np.zeros(d))
            else:
                self._add_norm(f"{base}.ffn.norm", d)
                self._add_linear(rng, f"{base}.ffn.up", d, _FFN_MULTIPLE * d)
                self._add_linear(rng, f"{base}.ffn.down", _FFN_MULTIPLE * d, d)

        self._add_linear(rng, "proj", d, self.n_features, zero=True)

    def parameters(self):
        return self.params

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Name -> raw float64 array snapshot, insertion-ordered."""
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, arrays):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigError(
                f"parameter table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, value in arrays.items():
            current = self.params[name]
            if current.data.shape != value.shape:
                raise ConfigError(
                    f"parameter {name}: shape {value.shape} != expected {current.data.shape}"
                )
            current.data = np.array(value, dtype=np.float64)

    # -- building blocks --------------------------------------------------------

    def _linear(self, name, x):
        out = x @ self.params[f"{name}.w"]
        bias = self.params.get(f"{name}.b")
        return out if bias is None else out + bias

    def _norm(self, name, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        unit = centered / ((var + _LN_EPS) ** 0.5)
        return unit * self.params[f"{name}.gain"] + self.params[f"{name}.bias"]

    def _split_heads(self, x):
        b, length, d = x.shape
        h = self.config.n_heads
        return x.reshape(b, length, h, d // h).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, h, length, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, length, h * dh)

    def _mha(self, name, query_src, kv_src):
        q = self._split_heads(self._linear(f"{name}.q", query_src))
        k = self._split_heads(self._linear(f"{name}.k", kv_src))
        v = self._split_heads(self._linear(f"{name}.v", kv_src))
        mixed = self._merge_heads(attention(q, k, v))
        return self._linear(f"{name}.o", mixed)

    def embed(self, x, t):
        """Lift (B, L, F) inputs to (B, L, d_model) with position/time context."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if not np.isfinite(x.data).all():
            raise DataError("embed received non-finite input values")
        b, length, _ = x.shape
        cfg = self.config
        token = conv1d(x, self.params["embed.conv.w"]) + self.params["embed.conv.b"]
        pos = Tensor(sinusoidal_positions(length, cfg.d_model))
        time_feat = Tensor(time_features(t, b, cfg.time_embed_dim))
        time_proj = self._linear("embed.time", time_feat)
        return token + pos + time_proj

    def vfe_layer(self, index, hidden):
        """Decompose one layer's hidden state into seasonal/trend/residual.

        Returns (seasonal, trend, residual_for_next_layer). With flow
        decomposition disabled the layer degenerates to a plain encoder
        feed-forward whose output becomes the residual.
        """
        cfg = self.config
        base = f"layer{index}"
        if not cfg.use_flow_decomposition:
            ff_in = self._norm(f"{base}.ffn.norm", hidden)
            ff = self._linear(f"{base}.ffn.down", self._linear(f"{base}.ffn.up", ff_in).relu())
            return hidden, None, hidden + ff

        trend_raw = moving_average(hidden, cfg.decomposition_window)
        seasonal_raw = hidden - trend_raw
        if __debug__:
            np.testing.assert_allclose(
                seasonal_raw.data + trend_raw.data, hidden.data, atol=1e-12, rtol=0
            )

        if cfg.use_cross_attention:
            seasonal = self._mha(f"{base}.ca", seasonal_raw, hidden) + seasonal_raw
        else:
            seasonal = seasonal_raw

        gate = None
        for k in cfg.kernel_sizes:
            term = conv1d(seasonal, self.params[f"{base}.gate.conv{k}.w"]) + self.params[
                f"{base}.gate.conv{k}.b"
            ]
            gate = term if gate is None else gate + term
        if cfg.gate_activation == "sigmoid":
            gate = gate.sigmoid()
        trend = gate * trend_raw

        residual = hidden - seasonal - trend
        if __debug__:
            np.testing.assert_allclose(
                residual.data + seasonal.data + trend.data, hidden.data, atol=1e-10, rtol=0
            )
        return seasonal, trend, residual

    def forward(self, x, t):
        """Velocity estimate with the same shape as x, for t in [0, 1]."""
        cfg = self.config
        state = self.embed(x, t)
        contribution = None
        for i in range(cfg.n_layers):
            if cfg.use_self_attention_encoder:
                normed = self._norm(f"layer{i}.enc.norm", state)
                hidden = state + self._mha(f"layer{i}.enc", normed, normed)
            else:
                hidden = state
            seasonal, trend, state = self.vfe_layer(i, hidden)
            layer_sum = seasonal if trend is None else seasonal + trend
            contribution = layer_sum if contribution is None else contribution + layer_sum
            if not np.isfinite(state.data).all():
                raise NumericError(f"non-finite activations leaving layer {i}")
        return self._linear("proj", contribution)

    __call__ = forward
