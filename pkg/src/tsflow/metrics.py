"""Evaluation of synthetic corpora against real ones.

Four headline scores:
  - discriminative: |held-out accuracy - 0.5| of a recurrent real-vs-synth
    classifier; 0 means indistinguishable.
  - predictive: MAE of a one-step-ahead recurrent forecaster trained on the
    synthetic corpus and tested on the real one.
  - correlational: mean absolute difference between the feature-feature
    correlation matrices of the two corpora.
  - context_fid: Frechet distance between Gaussian fits of sequence
    embeddings produced by a small autoencoder (reconstruction +
    temporal-contrastive objective) trained on the real corpus only.

Plus conditional MSE over hidden cells and a 2-component PCA projection
table for external plotting. Scores are deterministic given (inputs, seed)
and are reported with a repeat-level standard deviation.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractError, DataError
from .tensor import Tensor, no_grad
from .training import AdamOptimizer, TrainConfig


@dataclass(frozen=True)
class MetricConfig:
    """Sizing of the downstream metric models (desk scale: seconds each)."""

    hidden_dim: int = 24
    n_layers: int = 2
    train_steps: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    embed_dim: int = 16
    embed_train_steps: int = 300
    contrastive_weight: float = 0.1
    contrastive_temperature: float = 0.1
    repeats: int = 5
    seed: int = 0

    def fingerprint(self):
        text = repr(sorted(self.__dict__.items()))
        return hashlib.md5(text.encode()).hexdigest()[:8]


@dataclass(frozen=True)
class MetricReport:
    metric: str
    mean: float
    std: float
    repeats: int
    fingerprint: str

    def csv_row(self):
        return [self.metric, repr(self.mean), repr(self.std), self.repeats, self.fingerprint]


def write_metric_reports(path, reports):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "mean", "std", "repeats", "fingerprint"])
        for report in reports:
            writer.writerow(report.csv_row())


def _values(corpus):
    return corpus.values if hasattr(corpus, "values") else np.asarray(corpus, np.float64)


# -- recurrent building block -----------------------------------------------


class RecurrentNetwork:
    """A stack of GRU layers with a linear head, on autodiff tensors."""

    def __init__(self, input_dim, hidden_dim, n_layers, head_dim, seed):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)

        def glorot(shape):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-limit, limit, size=shape)

        for layer in range(n_layers):
            d_in = input_dim if layer == 0 else hidden_dim
            for gate in ("z", "r", "h"):
                self.params[f"l{layer}.W{gate}"] = Tensor(
                    glorot((d_in, hidden_dim)), requires_grad=True
                )
                self.params[f"l{layer}.U{gate}"] = Tensor(
                    glorot((hidden_dim, hidden_dim)), requires_grad=True
                )
                self.params[f"l{layer}.b{gate}"] = Tensor(
                    np.zeros(hidden_dim), requires_grad=True
                )
        self.params["head.w"] = Tensor(glorot((hidden_dim, head_dim)), requires_grad=True)
        self.params["head.b"] = Tensor(np.zeros(head_dim), requires_grad=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _cell(self, layer, x_t, h):
        p = self.params
        z = (x_t @ p[f"l{layer}.Wz"] + h @ p[f"l{layer}.Uz"] + p[f"l{layer}.bz"]).sigmoid()
        r = (x_t @ p[f"l{layer}.Wr"] + h @ p[f"l{layer}.Ur"] + p[f"l{layer}.br"]).sigmoid()
        cand = (x_t @ p[f"l{layer}.Wh"] + (r * h) @ p[f"l{layer}.Uh"] + p[f"l{layer}.bh"]).tanh()
        return (1.0 - z) * h + z * cand

    def hidden_states(self, x):
        """Top-layer hidden state after each timestep of x (B, L, F)."""
        x = np.asarray(x, dtype=np.float64)
        batch, length, _ = x.shape
        hs = [Tensor(np.zeros((batch, self.hidden_dim))) for _ in range(self.n_layers)]
        tops = []
        for t in range(length):
            inp = Tensor(x[:, t, :])
            for layer in range(self.n_layers):
                hs[layer] = self._cell(layer, inp, hs[layer])
                inp = hs[layer]
            tops.append(hs[-1])
        return tops

    def head(self, hidden):
        return hidden @ self.params["head.w"] + self.params["head.b"]


def _abs(t):
    return t.relu() + (-t).relu()


def _softplus(t):
    # log(1 + exp(-|z|)) + relu(z): stable on both tails
    return (1.0 + (-_abs(t)).exp()).log() + t.relu()


def _adam(params, steps, lr):
    return AdamOptimizer(
        params, TrainConfig(steps=max(steps, 1), learning_rate=lr, grad_clip=1.0)
    )


def _repeat_seeds(seed, repeats):
    return [int(np.random.SeedSequence([seed, i]).generate_state(1)[0]) for i in range(repeats)]


def _report(metric, samples, repeats, config):
    arr = np.asarray(samples, dtype=np.float64)
    std = float(arr.std(ddof=1)) if repeats > 1 else 0.0
    return MetricReport(metric, float(arr.mean()), std, repeats, config.fingerprint())


# -- discriminative score -----------------------------------------------------


def _train_test_halves(values, rng):
    order = rng.permutation(values.shape[0])
    cut = values.shape[0] // 2
    return values[order[:cut]], values[order[cut:]]


def _discriminative_once(real, synth, seed, config):
    rng = np.random.default_rng(seed)
    train_r, test_r = _train_test_halves(real, rng)
    train_s, test_s = _train_test_halves(synth, rng)
    train_x = np.concatenate([train_r, train_s])
    train_y = np.concatenate([np.ones(len(train_r)), np.zeros(len(train_s))])

    net = RecurrentNetwork(real.shape[2], config.hidden_dim, config.n_layers, 1,
                           seed=rng.integers(2**31))
    optimizer = _adam(net.params, config.train_steps, config.learning_rate)
    batch = min(config.batch_size, train_x.shape[0])
    for _ in range(config.train_steps):
        idx = rng.integers(0, train_x.shape[0], size=batch)
        logits = net.head(net.hidden_states(train_x[idx])[-1])
        labels = Tensor(train_y[idx].reshape(-1, 1))
        loss = (_softplus(logits) - labels * logits).mean()
        net.zero_grad()
        loss.backward()
        optimizer.step()

    with no_grad():
        test_x = np.concatenate([test_r, test_s])
        test_y = np.concatenate([np.ones(len(test_r)), np.zeros(len(test_s))])
        logits = net.head(net.hidden_states(test_x)[-1]).data.ravel()
    accuracy = float(((logits > 0).astype(float) == test_y).mean())
    return abs(accuracy - 0.5)


def discriminative_score(real, synth, seed, repeats=1, config=MetricConfig()):
    """|held-out accuracy - 0.5| of a real-vs-synthetic classifier."""
    real, synth = _values(real), _values(synth)
    if real.shape[1:] != synth.shape[1:]:
        raise ContractError(
            f"window shapes disagree: {real.shape[1:]} vs {synth.shape[1:]}"
        )
    if min(real.shape[0], synth.shape[0]) < 4:
        raise DataError("need at least 4 windows per side")
    scores = [
        _discriminative_once(real, synth, s, config)
        for s in _repeat_seeds(seed, repeats)
    ]
    return _report("discriminative", scores, repeats, config)


# -- predictive score ---------------------------------------------------------


def _predictive_once(real, synth, seed, config):
    rng = np.random.default_rng(seed)
    features = synth.shape[2]
    # Post-hoc forecaster convention: the last feature is held out of the
    # inputs (it must be inferred from the others), while the target is the
    # full next observation. This keeps the score floor structural rather
    # than an artifact of the training budget.
    in_dim = max(features - 1, 1)
    net = RecurrentNetwork(in_dim, config.hidden_dim, config.n_layers, features,
                           seed=rng.integers(2**31))
    optimizer = _adam(net.params, config.train_steps, config.learning_rate)
    batch = min(config.batch_size, synth.shape[0])
    for _ in range(config.train_steps):
        idx = rng.integers(0, synth.shape[0], size=batch)
        windows = synth[idx]
        tops = net.hidden_states(windows[:, :-1, :in_dim])
        loss = None
        for t, hidden in enumerate(tops):
            pred = net.head(hidden).sigmoid()
            err = _abs(pred - Tensor(windows[:, t + 1, :])).mean()
            loss = err if loss is None else loss + err
        loss = loss / len(tops)
        net.zero_grad()
        loss.backward()
        optimizer.step()

    with no_grad():
        tops = net.hidden_states(real[:, :-1, :in_dim])
        errors = [
            np.abs(net.head(h).sigmoid().data - real[:, t + 1, :]).mean()
            for t, h in enumerate(tops)
        ]
    return float(np.mean(errors))


def predictive_score(real, synth, seed, repeats=1, config=MetricConfig()):
    """Train-on-synthetic test-on-real one-step-ahead MAE, feature-averaged."""
    real, synth = _values(real), _values(synth)
    if real.shape[1] < 2:
        raise DataError("windows must have at least 2 timesteps")
    scores = [
        _predictive_once(real, synth, s, config) for s in _repeat_seeds(seed, repeats)
    ]
    return _report("predictive", scores, repeats, config)


# -- correlational score --------------------------------------------------------


def _pooled_correlation(values, keep):
    flat = values.reshape(-1, values.shape[2])[:, keep]
    return np.corrcoef(flat, rowvar=False)


def correlational_score(real, synth, config=MetricConfig()):
    """Mean absolute entrywise gap between feature-correlation matrices."""
    real, synth = _values(real), _values(synth)
    if real.shape[2] < 2:
        raise ContractError("correlational score needs at least 2 features")
    flat_r = real.reshape(-1, real.shape[2])
    flat_s = synth.reshape(-1, synth.shape[2])
    keep = (np.ptp(flat_r, axis=0) > 0) & (np.ptp(flat_s, axis=0) > 0)
    if not keep.all():
        dropped = [int(i) for i in np.flatnonzero(~keep)]
        warnings.warn(f"zero-variance features excluded from correlation: {dropped}")
    if keep.sum() < 2:
        raise DataError("fewer than 2 features with nonzero variance")
    gap = np.abs(_pooled_correlation(real, keep) - _pooled_correlation(synth, keep))
    return _report("correlational", [float(gap.mean())], 1, config)


# -- context-FID -----------------------------------------------------------------


@dataclass
class EmbedderModel:
    """Sequence encoder trained on real data; inference is deterministic."""

    network: RecurrentNetwork
    embed_dim: int
    window_shape: tuple

    def embed(self, values):
        values = _values(values)
        with no_grad():
            return self.network.head(self.network.hidden_states(values)[-1]).data


def _normalized_rows(t):
    norm = ((t * t).sum(axis=1, keepdims=True) + 1e-12) ** 0.5
    return t / norm


def train_embedder(real, seed, config=MetricConfig()):
    """Fit the context embedder: reconstruction + temporal-contrastive loss."""
    real = _values(real)
    n, length, features = real.shape
    rng = np.random.default_rng(seed)
    net = RecurrentNetwork(features, config.hidden_dim, config.n_layers,
                           config.embed_dim, seed=rng.integers(2**31))
    decoder_w = Tensor(
        np.random.default_rng(rng.integers(2**31)).normal(
            0.0, 0.02, size=(config.embed_dim, length * features)
        ),
        requires_grad=True,
    )
    decoder_b = Tensor(np.zeros(length * features), requires_grad=True)
    params = dict(net.params)
    params["dec.w"] = decoder_w
    params["dec.b"] = decoder_b
    optimizer = _adam(params, config.embed_train_steps, config.learning_rate)

    crop = max(2, (3 * length) // 4)
    batch = min(64, n)
    labels = np.arange(batch)
    for _ in range(config.embed_train_steps):
        idx = rng.integers(0, n, size=batch)
        windows = real[idx]
        embedding = net.head(net.hidden_states(windows)[-1])
        recon = embedding @ decoder_w + decoder_b
        target = Tensor(windows.reshape(batch, -1))
        recon_loss = ((recon - target) ** 2).mean()

        front = _normalized_rows(net.head(net.hidden_states(windows[:, :crop, :])[-1]))
        back = _normalized_rows(net.head(net.hidden_states(windows[:, length - crop:, :])[-1]))
        logits = (front @ back.swapaxes(0, 1)) / config.contrastive_temperature
        log_probs = (logits.softmax(axis=-1) + 1e-12).log()
        nce = -(log_probs[labels, labels].mean())

        loss = recon_loss + config.contrastive_weight * nce
        for p in params.values():
            p.grad = None
        loss.backward()
        optimizer.step()

    return EmbedderModel(net, config.embed_dim, (length, features))


def gaussian_stats(embeddings, shrinkage=1e-6):
    mu = embeddings.mean(axis=0)
    centered = embeddings - mu
    cov = centered.T @ centered / max(embeddings.shape[0] - 1, 1)
    return mu, cov + shrinkage * np.eye(cov.shape[0])


def frechet_distance(mu1, cov1, mu2, cov2):
    """||mu1-mu2||^2 + tr(cov1 + cov2 - 2 (cov1^1/2 cov2 cov1^1/2)^1/2).

    Uses the symmetric-PSD form of the cross term so the matrix square root
    is taken of a symmetric positive-semidefinite matrix.
    """
    diff = float(np.sum((mu1 - mu2) ** 2))
    vals1, vecs1 = np.linalg.eigh((cov1 + cov1.T) / 2.0)
    root1 = (vecs1 * np.sqrt(np.clip(vals1, 0.0, None))) @ vecs1.T
    inner = root1 @ ((cov2 + cov2.T) / 2.0) @ root1
    cross = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = float(np.sqrt(np.clip(cross, 0.0, None)).sum())
    fid = diff + float(np.trace(cov1) + np.trace(cov2)) - 2.0 * tr_cross
    return max(fid, 0.0)


def context_fid(real, synth, embedder, config=MetricConfig()):
    """Frechet distance between embedded real and synthetic clouds."""
    real, synth = _values(real), _values(synth)
    emb_r = embedder.embed(real)
    emb_s = embedder.embed(synth)
    if min(emb_r.shape[0], emb_s.shape[0]) < embedder.embed_dim:
        warnings.warn(
            "fewer samples than embedding dimensions; covariance is shrinkage-regularized"
        )
    score = frechet_distance(*gaussian_stats(emb_r), *gaussian_stats(emb_s))
    return _report("context_fid", [score], 1, config)


def context_fid_repeated(real, synth, seed, repeats=1, config=MetricConfig()):
    """Context-FID with a freshly seeded embedder per repeat."""
    scores = []
    for s in _repeat_seeds(seed, repeats):
        embedder = train_embedder(real, s, config)
        scores.append(context_fid(real, synth, embedder, config).mean)
    return _report("context_fid", scores, repeats, config)


# -- conditional MSE ----------------------------------------------------------------


def conditional_mse(output, reference, mask):
    """Mean squared error over hidden cells, in the caller's data units."""
    output = np.asarray(output, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if output.shape != reference.shape:
        raise ContractError(f"shapes disagree: {output.shape} vs {reference.shape}")
    hidden = ~mask.observed
    if not hidden.any():
        raise ContractError("conditional_mse needs at least one hidden cell")
    gap = output[hidden] - reference[hidden]
    return float((gap**2).mean())


# -- PCA projection -------------------------------------------------------------------


def pca_project(real, synth, k=2):
    """Project both corpora onto the top-k principal axes of the real one.

    Returns (header, rows) where each row is (source, pc1, ..., pck).
    """
    real, synth = _values(real), _values(synth)
    flat_r = real.reshape(real.shape[0], -1)
    flat_s = synth.reshape(synth.shape[0], -1)
    if flat_r.shape[1] < k:
        raise ContractError(f"flattened window dim {flat_r.shape[1]} < k={k}")
    center = flat_r.mean(axis=0)
    _, _, vt = np.linalg.svd(flat_r - center, full_matrices=False)
    axes = vt[:k].T
    header = ["source"] + [f"pc{i + 1}" for i in range(k)]
    rows = []
    for name, flat in (("real", flat_r), ("synthetic", flat_s)):
        proj = (flat - center) @ axes
        rows.extend([name, *map(float, row)] for row in proj)
    return header, rows


def write_projection_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])
