"""Synthetic spiral data, its random linear embedding, and prior-input samplers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True)
class SpiralConfig:
    n_samples: int = 10000
    turns: float = 3.0
    radius: float = 1.0
    height: float = 3.0
    radius_profile: str = "constant"  # or "growing"
    noise_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ValueError("noise_fraction must lie in [0, 1)")
        if self.radius_profile not in ("constant", "growing"):
            raise ValueError(f"unknown radius profile {self.radius_profile!r}")

    @property
    def s_max(self):
        return 2.0 * np.pi * self.turns

    @property
    def pitch(self):
        # z = pitch * s, so the coil rises `height` over all turns
        return self.height / self.s_max


def spiral_curve(config, s):
    """Noiseless spiral points at parameters ``s``, shape ``(len(s), 3)``."""
    s = np.asarray(s, dtype=np.float64)
    if config.radius_profile == "constant":
        r = np.full_like(s, config.radius)
    else:
        r = config.radius * (0.25 + s / config.s_max)
    return np.stack([r * np.cos(s), r * np.sin(s), config.pitch * s], axis=1)


def noise_sigma(config):
    """Noise standard deviation: ``noise_fraction`` times the bounding-box
    diagonal of the noiseless curve."""
    pts = spiral_curve(config, np.linspace(0.0, config.s_max, 20001))
    diag = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    return config.noise_fraction * diag


def generate_spiral(config, rng=None):
    """Sample the spiral uniformly in its parameter and add isotropic noise.

    Returns ``(points, s, clean)``: noisy 3-D points, their curve parameters
    and the noiseless curve points they were generated from.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    s = rng.uniform(0.0, config.s_max, size=config.n_samples)
    clean = spiral_curve(config, s)
    points = clean + noise_sigma(config) * rng.standard_normal(clean.shape)
    return points, s, clean


def random_embedding(rng, ambient_dim=40, intrinsic_dim=3):
    """Gaussian ``(ambient_dim, intrinsic_dim)`` map of full column rank."""
    if ambient_dim < intrinsic_dim:
        raise ValueError("ambient dimension must be >= intrinsic dimension")
    while True:
        A = rng.standard_normal((ambient_dim, intrinsic_dim))
        if np.linalg.matrix_rank(A) == intrinsic_dim:
            return A


def embed(points, embedding):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != embedding.shape[1]:
        raise ValueError(f"points of shape {points.shape} do not match a map with {embedding.shape[1]} columns")
    return points @ embedding.T


def unembed(x, embedding):
    """Least-squares preimage of ambient points under the embedding."""
    return np.asarray(x, dtype=np.float64) @ np.linalg.pinv(embedding).T


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, ambient_dim)
    truth: np.ndarray   # (N, 3) noiseless curve coordinates

    def __post_init__(self):
        if self.inputs.shape[0] != self.truth.shape[0]:
            raise ValueError("inputs and truth must have the same number of rows")

    def __len__(self):
        return self.inputs.shape[0]


def make_spiral_dataset(config, ambient_dim=40):
    """Spiral points embedded in ``ambient_dim``; returns ``(dataset, embedding)``."""
    rng = np.random.default_rng(config.seed)
    points, _, clean = generate_spiral(config, rng)
    A = random_embedding(rng, ambient_dim, 3)
    return Dataset(embed(points, A), clean), A


@dataclass
class PriorInputSampler:
    """Distribution feeding the prior encoder.

    ``kind`` is ``"gaussian"`` (standard normal in ``dim``) or ``"mixture"``
    (equal-weight isotropic Gaussians). ``sigma_scale`` multiplies every
    component's scale; values above 1 probe the tails.
    """

    dim: int = 40
    kind: str = "gaussian"
    means: np.ndarray = None
    scales: np.ndarray = None
    weights: np.ndarray = None
    sigma_scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be > 0")
        if self.kind == "mixture":
            k = len(self.means)
            if self.scales is None:
                self.scales = np.ones(k)
            if self.weights is None:
                self.weights = np.full(k, 1.0 / k)
            if not np.isclose(np.sum(self.weights), 1.0):
                raise ValueError("mixture weights must sum to 1")
        elif self.kind != "gaussian":
            raise ValueError(f"unknown sampler kind {self.kind!r}")


def gaussian_mixture_sampler(dim, n_components, rng, mean_scale=3.0, sigma_scale=1.0):
    means = mean_scale * rng.standard_normal((n_components, dim))
    return PriorInputSampler(dim, "mixture", means, np.ones(n_components),
                             np.full(n_components, 1.0 / n_components), sigma_scale)


def sample_prior_input(sampler, n, rng):
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal((n, sampler.dim))
    if sampler.kind == "gaussian":
        return sampler.sigma_scale * z
    comp = rng.choice(len(sampler.means), size=n, p=sampler.weights)
    return sampler.means[comp] + (sampler.sigma_scale * sampler.scales[comp])[:, None] * z


# -- CSV I/O ----------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def save_dataset(dataset, path):
    path = Path(path)
    d = dataset.inputs.shape[1]
    header = [f"x{i}" for i in range(d)] + [f"t{i}" for i in range(dataset.truth.shape[1])]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row_x, row_t in zip(dataset.inputs, dataset.truth):
            w.writerow([_fmt(v) for v in row_x] + [_fmt(v) for v in row_t])


def load_dataset(path):
    """Read a dataset CSV written by :func:`save_dataset`."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(f"{path}: empty file") from None
        n_x = sum(1 for h in header if h.startswith("x"))
        required = [f"x{i}" for i in range(n_x)] + ["t0", "t1", "t2"]
        for name in required:
            if name not in header:
                raise DatasetParseError(f"{path}: line 1: missing column {name!r}")
        cols = [header.index(name) for name in required]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[c]) for c in cols])
            except ValueError as exc:
                raise DatasetParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DatasetParseError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :n_x], arr[:, n_x:])


def save_matrix(matrix, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            w.writerow([_fmt(v) for v in row])


def load_matrix(path):
    with Path(path).open(newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row], dtype=np.float64)
