"""Datasets, preprocessing, initialization and metrics for the experiments."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.cluster.vq import kmeans2

DATA_DIR_ENV = "SGPREG_DATA_DIR"


def true_function(x):
    x = np.asarray(x, dtype=float)
    return np.sin(2.0 * x) + 0.2 * np.cos(22.0 * x)


def seed_streams(seed: int, n: int) -> list:
    """Independent generators derived from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 100
    n_val: int = 100
    n_test: int = 100
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> dict:
    """Noisy draws of sin(2x) + 0.2 cos(22x) on uniform inputs in [0, 1].

    Training and validation sets use separate random streams; test inputs
    are an even grid with noise-free targets.
    """
    rng_train, rng_val = seed_streams(spec.seed, 2)

    def draw(rng, n):
        x = rng.uniform(0.0, 1.0, size=n)
        f = true_function(x)
        y = f + spec.noise_sd * rng.standard_normal(n) if spec.noise_sd > 0 else f.copy()
        return x[:, None], y

    X, y = draw(rng_train, spec.n_train)
    X_val, y_val = draw(rng_val, spec.n_val)
    X_test = np.linspace(0.0, 1.0, spec.n_test)[:, None]
    return {"X": X, "y": y, "X_val": X_val, "y_val": y_val,
            "X_test": X_test, "f_test": true_function(X_test[:, 0])}


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


class TableError(ValueError):
    pass


@dataclass
class Table:
    values: np.ndarray
    columns: list

    @property
    def shape(self):
        return self.values.shape


def resolve_data_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get(DATA_DIR_ENV):
        p = Path(os.environ[DATA_DIR_ENV]) / p
    return p


def load_table(path, header: Union[bool, str] = "auto", delimiter: str = ",",
               drop_columns: Sequence[Union[str, int]] = ()) -> Table:
    """Read a delimiter-separated numeric table.

    ``header="auto"`` treats the first row as a header when any of its
    fields fails to parse as a number.  ``drop_columns`` takes names or
    0-based indices.
    """
    path = resolve_data_path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if any(c.strip() for c in r)]
    if not rows:
        raise TableError(f"{path}: empty dataset")

    def numeric(field):
        try:
            float(field)
            return True
        except ValueError:
            return False

    has_header = header if isinstance(header, bool) else not all(numeric(c) for c in rows[0])
    if has_header:
        names, body, first_line = [c.strip() for c in rows[0]], rows[1:], 2
    else:
        names, body, first_line = [f"x{i}" for i in range(len(rows[0]))], rows, 1
    if not body:
        raise TableError(f"{path}: empty dataset")

    drop = set()
    for c in drop_columns:
        if isinstance(c, (int, np.integer)):
            drop.add(int(c))
        elif c in names:
            drop.add(names.index(c))
        else:
            raise TableError(f"{path}: no column named {c!r}")
    keep = [i for i in range(len(names)) if i not in drop]

    out = np.empty((len(body), len(keep)))
    for r, row in enumerate(body):
        if len(row) != len(names):
            raise TableError(f"{path}:{first_line + r}: expected {len(names)} fields, got {len(row)}")
        for j, i in enumerate(keep):
            try:
                v = float(row[i])
            except ValueError:
                raise TableError(
                    f"{path}:{first_line + r}: column {names[i]!r} is not numeric ({row[i]!r})"
                ) from None
            if not np.isfinite(v):
                raise TableError(f"{path}:{first_line + r}: non-finite value in column {names[i]!r}")
            out[r, j] = v
    return Table(out, [names[i] for i in keep])


def write_table(path, values, columns=None, delimiter=","):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        if columns is not None:
            w.writerow(columns)
        for row in values:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, Y):
        return (np.asarray(Y, float) - self.mean) / self.sd

    def inverse(self, Z):
        return np.asarray(Z, float) * self.sd + self.mean


def standardize(Y, columns: Optional[Sequence[str]] = None):
    """Column-wise zero mean / unit (ML) standard deviation.

    Returns ``(standardized, Standardizer)``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] < 1 or Y.shape[0] < 1:
        raise ValueError("need at least one row and one column")
    mean = Y.mean(axis=0)
    sd = Y.std(axis=0)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        name = columns[bad[0]] if columns is not None else f"column {bad[0]}"
        raise ValueError(f"cannot standardize constant feature {name}")
    st = Standardizer(mean, sd)
    return st.transform(Y), st


@dataclass(frozen=True)
class NoiseInjectionSpec:
    n_noisy_rows: int
    noise_sd: float = 1.0
    seed: int = 0


def inject_noise(Y, spec: NoiseInjectionSpec):
    """Add white noise to one randomly chosen feature of randomly chosen rows.

    Returns ``(noisy, mask)`` where ``mask[i, j]`` marks the altered entries.
    """
    Y = np.asarray(Y, dtype=float)
    N, D = Y.shape
    if not 0 <= spec.n_noisy_rows <= N:
        raise ValueError(f"n_noisy_rows={spec.n_noisy_rows} must lie in [0, {N}]")
    rng_rows, rng_feat, rng_noise = seed_streams(spec.seed, 3)
    rows = np.sort(rng_rows.choice(N, size=spec.n_noisy_rows, replace=False))
    feats = rng_feat.integers(0, D, size=spec.n_noisy_rows)
    mask = np.zeros((N, D), dtype=bool)
    mask[rows, feats] = True
    noisy = Y.copy()
    noisy[rows, feats] += spec.noise_sd * rng_noise.standard_normal(spec.n_noisy_rows)
    return noisy, mask


def generate_latent_table(n_rows: int, n_features: int = 8, noise_sd: float = 0.05,
                          seed: int = 0) -> np.ndarray:
    """Smooth nonlinear features of a 2-D Gaussian latent variable.

    Stand-in for real multivariate tabular data when exercising the
    standardize / inject / reconstruct protocol.
    """
    rng_t, rng_e = seed_streams(seed, 2)
    t = rng_t.standard_normal((n_rows, 2))
    a, b = t[:, 0], t[:, 1]
    feats = [np.sin(a), np.cos(b), a * b, np.tanh(a + b), a**2 - b,
             np.exp(-0.5 * b**2), np.sin(a + 2.0 * b), b]
    F = np.stack([feats[i % len(feats)] * (1.0 + i // len(feats)) for i in range(n_features)], axis=1)
    return F + noise_sd * rng_e.standard_normal(F.shape)


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def pca_init(Y, Q: int) -> np.ndarray:
    """Scores of the leading Q principal components of column-centred Y."""
    Y = np.asarray(Y, dtype=float)
    N, D = Y.shape
    if Q > D:
        raise ValueError(f"Q={Q} exceeds the data dimension D={D}")
    Yc = Y - Y.mean(axis=0)
    U, s, _ = np.linalg.svd(Yc, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(N, D) * np.finfo(float).eps)) if s.size and s[0] > 0 else 0
    if Q > rank:
        raise ValueError(f"Q={Q} exceeds the numerical rank {rank} of Y")
    return U[:, :Q] * s[:Q]


def kmeans_init(points, M: int, seed: int = 0, max_sweeps: int = 100) -> np.ndarray:
    """Lloyd's algorithm from k-means++ seeding."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if not 1 <= M <= points.shape[0]:
        raise ValueError(f"M={M} must lie in [1, {points.shape[0]}]")
    rng = np.random.default_rng(seed)
    centers, _ = kmeans2(points, M, iter=max_sweeps, minit="++", missing="warn", seed=rng)
    return centers
