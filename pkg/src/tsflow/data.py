"""Dataset construction: synthetic sines, CSV ingestion, windowing, scaling.

All values handed to models live in [0, 1]; the per-feature (min, max)
scaler recorded on each batch inverts that mapping. Scalers are always fit
on the training portion of a corpus so evaluation data never leaks into
the normalization. Every generator here is a pure function of its
arguments and seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, ContractError, DataError


@dataclass(frozen=True)
class SeriesBatch:
    """A batch of fixed-length multivariate windows plus scaling metadata.

    values: float64 array (batch, length, features), scaled to [0, 1].
    scaler: (feature_count, 2) array of per-feature (min, max) in data units.
    source_name: provenance label used in reports.
    """

    values: np.ndarray
    scaler: np.ndarray
    source_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "scaler", np.asarray(self.scaler, dtype=np.float64))
        if self.values.ndim != 3:
            raise ContractError(f"SeriesBatch values must be 3-d, got {self.values.shape}")
        if self.scaler.shape != (self.values.shape[2], 2):
            raise ContractError(
                f"scaler shape {self.scaler.shape} does not match feature count "
                f"{self.values.shape[2]}"
            )

    @property
    def n_windows(self):
        return self.values.shape[0]

    @property
    def window_length(self):
        return self.values.shape[1]

    @property
    def n_features(self):
        return self.values.shape[2]

    def unscale(self, scaled=None):
        """Map values from [0, 1] back to data units."""
        x = self.values if scaled is None else scaled
        lo, hi = self.scaler[:, 0], self.scaler[:, 1]
        return x * _safe_range(lo, hi) + lo

    def scale(self, raw):
        """Map data-unit values into [0, 1] using this batch's scaler."""
        lo, hi = self.scaler[:, 0], self.scaler[:, 1]
        return (raw - lo) / _safe_range(lo, hi)


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from and how it is windowed."""

    source: str = "sines"
    window_length: int = 24
    stride: int = 1
    feature_count: int = 5
    split_fraction: float = 0.8
    seed: int = 0
    n_windows: int = 2000

    def __post_init__(self):
        if self.window_length < 2:
            raise ConfigError(f"window_length must be >= 2, got {self.window_length}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(
                f"split_fraction must lie in (0, 1), got {self.split_fraction}"
            )


@dataclass(frozen=True)
class ConditionMask:
    """Boolean observation mask plus ground-truth values at observed cells."""

    observed: np.ndarray
    reference: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "observed", np.asarray(self.observed, dtype=bool))
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=np.float64)
            if ref.shape != self.observed.shape:
                raise ContractError(
                    f"reference shape {ref.shape} != mask shape {self.observed.shape}"
                )
            if not np.isfinite(ref[self.observed]).all():
                raise DataError("reference contains non-finite values at observed cells")
            object.__setattr__(self, "reference", ref)

    def with_reference(self, reference):
        return replace(self, reference=reference)


def _safe_range(lo, hi):
    # Constant features scale to 0.0 via a unit range instead of dividing by 0.
    rng = hi - lo
    return np.where(rng > 0, rng, 1.0)


def generate_sines(n_windows, length, features, seed):
    """Synthetic multivariate sinusoid windows.

    Channel j of each window is sin(2*pi*eta_j*tau/length + theta_j) with
    eta_j ~ U[0, 1] and theta_j ~ U[-pi, pi] drawn independently per window
    and channel, rescaled to [0, 1]. Deterministic given the seed.
    """
    if min(n_windows, length, features) < 1:
        raise ConfigError("n_windows, length and features must all be positive")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.0, 1.0, size=(n_windows, 1, features))
    theta = rng.uniform(-np.pi, np.pi, size=(n_windows, 1, features))
    tau = np.arange(length, dtype=np.float64).reshape(1, length, 1)
    raw = np.sin(2.0 * np.pi * eta * tau / length + theta)
    scaler = np.tile([-1.0, 1.0], (features, 1))
    return SeriesBatch((raw + 1.0) / 2.0, scaler, source_name="sines")


def sine_frequencies(n_windows, length, features, seed):
    """The eta draws generate_sines would use for the same arguments."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n_windows, 1, features))[:, 0, :]


def _read_numeric_csv(path):
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open dataset file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line_no}: expected {len(header)} columns, got {len(row)}"
                )
            parsed = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{line_no}: column {col_no} ({header[col_no - 1]!r}) "
                        f"is not numeric: {cell!r}"
                    ) from None
            rows.append(parsed)
    return header, np.asarray(rows, dtype=np.float64)


def window_rows(rows, window_length, stride):
    """Sliding windows over the row axis; floor((rows - L) / stride) + 1 of them."""
    n = rows.shape[0]
    if n < window_length:
        raise DataError(
            f"need at least {window_length} rows to form one window, got {n}"
        )
    count = (n - window_length) // stride + 1
    idx = np.arange(window_length)[None, :] + stride * np.arange(count)[:, None]
    return rows[idx]


def load_csv(path, spec):
    """Load a CSV corpus into a scaled SeriesBatch.

    The file must carry a header row naming feature_count numeric columns
    and one row per timestep. Windows are extracted at the given stride and
    min-max scaled per feature, with the scaler fit on the training side of
    the shuffled split (split_fraction, seed) only.
    """
    header, rows = _read_numeric_csv(path)
    if rows.shape[1] != spec.feature_count:
        raise DataError(
            f"{path}: expected {spec.feature_count} feature columns, "
            f"found {rows.shape[1]} ({header})"
        )
    windows = window_rows(rows, spec.window_length, spec.stride)
    train_idx, _ = _split_indices(windows.shape[0], spec.split_fraction, spec.seed)
    if train_idx.size == 0:
        train_idx = np.arange(windows.shape[0])
    train_windows = windows[train_idx]
    lo = train_windows.reshape(-1, spec.feature_count).min(axis=0)
    hi = train_windows.reshape(-1, spec.feature_count).max(axis=0)
    scaler = np.stack([lo, hi], axis=1)
    scaled = (windows - lo) / _safe_range(lo, hi)
    return SeriesBatch(scaled, scaler, source_name=str(path))


def _split_indices(n, fraction, seed):
    order = np.random.default_rng(seed).permutation(n)
    cut = int(fraction * n)
    return order[:cut], order[cut:]


def split(batch, fraction, seed):
    """Disjoint shuffled partition of a batch; union equals the input."""
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"fraction must lie in (0, 1), got {fraction}")
    left, right = _split_indices(batch.n_windows, fraction, seed)
    return (
        replace(batch, values=batch.values[left]),
        replace(batch, values=batch.values[right]),
    )


def make_condition_mask(shape, mode, value, seed, reference=None):
    """Observation mask for conditional generation.

    mode="imputation": each cell independently observed with probability
    1 - value (value is the missing ratio r in (0, 1)).
    mode="forecast": the first L - value steps are fully observed and the
    trailing `value` steps hidden (value is the horizon h in (0, L)).
    """
    batch, length, features = shape
    if mode == "imputation":
        if not 0.0 < value < 1.0:
            raise ConfigError(f"missing ratio must lie in (0, 1), got {value}")
        rng = np.random.default_rng(seed)
        observed = rng.random(size=shape) < (1.0 - value)
    elif mode == "forecast":
        horizon = int(value)
        if not 0 < horizon < length:
            raise ConfigError(f"forecast horizon must lie in (0, {length}), got {value}")
        observed = np.zeros(shape, dtype=bool)
        observed[:, : length - horizon, :] = True
    else:
        raise ConfigError(f"unknown mask mode {mode!r}")
    return ConditionMask(observed, reference)


def build_dataset(spec):
    """Materialize the SeriesBatch a DatasetSpec describes."""
    if spec.source == "sines":
        return generate_sines(
            spec.n_windows, spec.window_length, spec.feature_count, spec.seed
        )
    return load_csv(spec.source, spec)
