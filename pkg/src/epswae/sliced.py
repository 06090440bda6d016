"""Sliced and nonlinear-sliced Wasserstein distances between point clouds.

Clouds are ``(N, d)`` float arrays with equal sample counts. A
:class:`SliceEnsemble` freezes all randomness of one NSW evaluation (the
``L`` random transforms and ``M`` unit directions per transform) so that a
distance and its gradient can be evaluated on exactly the same slices.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy import sparse

KINDS = ("identity", "sine_shear", "cubic", "quintic")
DEGREE = {"cubic": 3, "quintic": 5}

# Full monomial bases beyond this many features are refused (memory).
MAX_BASIS_FEATURES = 200_000


def _as_cloud(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (N, d) array")
    return a


def _check_pair(mu, nu):
    mu, nu = _as_cloud(mu, "mu"), _as_cloud(nu, "nu")
    if mu.shape != nu.shape:
        raise ValueError(f"clouds must have equal shapes, got {mu.shape} and {nu.shape}")
    return mu, nu


def wasserstein_1d(xs, ys, p=2):
    """Closed-form p-Wasserstein distance between two equal-size 1-D samples."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size:
        raise ValueError("samples must have equal length")
    if xs.size == 0:
        raise ValueError("samples must be non-empty")
    diff = np.abs(np.sort(xs) - np.sort(ys))
    return float(np.mean(diff ** p) ** (1.0 / p))


def sample_sphere_directions(d, M, rng):
    """``M`` directions uniform on the unit sphere in ``R^d``, shape ``(M, d)``."""
    if d < 1 or M < 1:
        raise ValueError("need d >= 1 and M >= 1")
    g = rng.standard_normal((M, d))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def sliced_wasserstein(mu, nu, p=2, M=50, rng=None, directions=None):
    """Monte-Carlo sliced Wasserstein distance with linear projections.

    Pass ``directions`` (``(M, d)`` unit rows) to reuse a fixed set of
    slices; otherwise ``M`` are drawn from ``rng``.
    """
    mu, nu = _check_pair(mu, nu)
    if directions is None:
        if rng is None:
            raise ValueError("need either rng or directions")
        directions = sample_sphere_directions(mu.shape[1], M, rng)
    directions = np.asarray(directions, dtype=np.float64)
    if directions.ndim != 2 or directions.shape[1] != mu.shape[1]:
        raise ValueError("direction dimension does not match the clouds")
    a = np.sort(mu @ directions.T, axis=0)
    b = np.sort(nu @ directions.T, axis=0)
    wpp = np.mean(np.abs(a - b) ** p, axis=0)
    return float(np.mean(wpp) ** (1.0 / p))


# -- nonlinear transforms ---------------------------------------------------

@lru_cache(maxsize=None)
def _monomial_tree(d, degree):
    """Index plan for all monomials of degree 1..``degree`` in ``d`` variables.

    Each monomial above degree one is a parent monomial times one variable
    with index >= the parent's last variable, which enumerates every
    multi-index exactly once.
    """
    levels = []
    last = np.arange(d)
    n_prev = d
    for _ in range(1, degree):
        parents, mults = [], []
        for j, lj in enumerate(last):
            for i in range(lj, d):
                parents.append(j)
                mults.append(i)
        parents = np.array(parents)
        mults = np.array(mults)
        n_new = len(parents)
        s_par = sparse.csr_matrix((np.ones(n_new), (np.arange(n_new), parents)), shape=(n_new, n_prev))
        s_mul = sparse.csr_matrix((np.ones(n_new), (np.arange(n_new), mults)), shape=(n_new, d))
        levels.append((parents, mults, s_par, s_mul))
        last = mults
        n_prev = n_new
    return levels


def basis_size(d, degree):
    """Number of monomials of degree 1..degree in d variables."""
    return comb(d + degree, degree) - 1


def _basis_forward(u, degree):
    feats = [u]
    for parents, mults, _, _ in _monomial_tree(u.shape[1], degree):
        feats.append(feats[-1][:, parents] * u[:, mults])
    return feats


def _basis_backward(u, feats, g, degree):
    sizes = [f.shape[1] for f in feats]
    splits = np.cumsum(sizes)[:-1]
    g_levels = np.split(g, splits, axis=1)
    tree = _monomial_tree(u.shape[1], degree)
    gu = np.zeros_like(u)
    carry = g_levels[-1]
    for lvl in range(len(tree) - 1, -1, -1):
        parents, mults, s_par, s_mul = tree[lvl]
        gu += (carry * feats[lvl][:, parents]) @ s_mul
        carry = g_levels[lvl] + (carry * u[:, mults]) @ s_par
    return gu + carry


@dataclass(frozen=True)
class RandomTransform:
    """One random map ``R^d -> R^D`` applied to both clouds before slicing.

    ``identity``: x. ``sine_shear``: ``x + gamma * sin(<zeta/|zeta|, x - center>)``.
    ``cubic``/``quintic``: per-coordinate odd polynomial of the standardized
    coordinate ``u = (x - center) / scale``, i.e. ``scale * (u + a u^3 [+ b u^5])``;
    with ``full_basis`` the map is instead the vector of all monomials of ``u``
    up to the polynomial degree.
    """

    kind: str
    zeta: np.ndarray
    gamma: np.ndarray
    center: np.ndarray = None
    scale: np.ndarray = None
    coeffs: np.ndarray = None  # (d, 2): cubic and quintic coefficient per coordinate
    full_basis: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        d = len(self.zeta)
        if self.center is None:
            object.__setattr__(self, "center", np.zeros(d))
        if self.scale is None:
            object.__setattr__(self, "scale", np.ones(d))
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", np.zeros((d, 2)))

    @property
    def dim(self):
        return len(self.zeta)

    @property
    def out_dim(self):
        if self.full_basis and self.kind in DEGREE:
            return basis_size(self.dim, DEGREE[self.kind])
        return self.dim


@dataclass
class SliceEnsemble:
    """``L`` transforms of one kind (stacked parameter arrays, leading axis
    ``L``) and ``M`` unit directions per transform."""

    kind: str
    zeta: np.ndarray       # (L, d)
    gamma: np.ndarray      # (L, d)
    center: np.ndarray     # (L, d)
    scale: np.ndarray      # (L, d)
    coeffs: np.ndarray     # (L, d, 2)
    directions: np.ndarray  # (L, M, out_dim)
    p: int = 2
    full_basis: bool = False
    zeta_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        self.full_basis = bool(self.full_basis and self.kind in DEGREE)
        L, d = self.zeta.shape
        for name in ("gamma", "center", "scale"):
            if getattr(self, name).shape != (L, d):
                raise ValueError(f"{name} must have shape {(L, d)}")
        if self.directions.ndim != 3 or self.directions.shape[0] != L:
            raise ValueError("directions must have shape (L, M, out_dim)")
        out_dim = basis_size(d, DEGREE[self.kind]) if self.full_basis else d
        if self.directions.shape[2] != out_dim:
            raise ValueError("direction dimension does not match transform output")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.full_basis and not (np.all(self.center == self.center[0]) and np.all(self.scale == self.scale[0])):
            raise ValueError("full-basis transforms must share center and scale")
        norms = np.linalg.norm(self.zeta, axis=1, keepdims=True)
        self.zeta_hat = np.divide(self.zeta, norms, out=np.zeros_like(self.zeta), where=norms > 0)

    @classmethod
    def from_transforms(cls, transforms, directions, p=2):
        transforms = list(transforms)
        if not transforms:
            raise ValueError("ensemble needs at least one transform")
        first = transforms[0]
        if any(t.kind != first.kind or t.full_basis != first.full_basis or t.dim != first.dim
               for t in transforms):
            raise ValueError("all transforms in an ensemble must share kind and dimension")
        return cls(first.kind,
                   np.stack([t.zeta for t in transforms]), np.stack([t.gamma for t in transforms]),
                   np.stack([t.center for t in transforms]), np.stack([t.scale for t in transforms]),
                   np.stack([t.coeffs for t in transforms]),
                   np.asarray(directions, dtype=np.float64), p, first.full_basis)

    @property
    def transforms(self):
        return [RandomTransform(self.kind, self.zeta[l], self.gamma[l], self.center[l],
                                self.scale[l], self.coeffs[l], self.full_basis)
                for l in range(self.L)]

    @property
    def L(self):
        return self.zeta.shape[0]

    @property
    def M(self):
        return self.directions.shape[1]

    @property
    def dim(self):
        return self.zeta.shape[1]


def make_ensemble(reference, kind="sine_shear", L=5, M=50, p=2, rng=None, full_basis=False):
    """Draw a fresh ensemble whose transform scales follow ``reference``.

    ``zeta`` and ``gamma`` are zero-mean Gaussians with the per-coordinate
    variance of ``reference``; polynomial maps center and standardize by the
    reference mean and standard deviation.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown nonlinearity {kind!r}")
    if L < 1 or M < 1:
        raise ValueError("need L >= 1 and M >= 1")
    reference = _as_cloud(reference, "reference")
    d = reference.shape[1]
    full_basis = bool(full_basis and kind in DEGREE)
    out_dim = basis_size(d, DEGREE[kind]) if full_basis else d
    if out_dim > MAX_BASIS_FEATURES:
        raise ValueError(f"full {kind} basis in d={d} has too many features")
    rng = np.random.default_rng() if rng is None else rng
    center = np.broadcast_to(reference.mean(axis=0), (L, d))
    std = reference.std(axis=0)
    scale = np.broadcast_to(np.where(std > 0, std, 1.0), (L, d))
    zeta = rng.standard_normal((L, d)) * std
    gamma = rng.standard_normal((L, d)) * std
    coeffs = rng.standard_normal((L, d, 2))
    if kind == "cubic":
        coeffs[:, :, 1] = 0.0
    directions = sample_sphere_directions(out_dim, L * M, rng).reshape(L, M, out_dim)
    return SliceEnsemble(kind, zeta, gamma, center, scale, coeffs, directions, p, full_basis)


def _push(ens, x):
    """Apply every transform to ``x``; returns ``(Y, ctx)`` with ``Y`` of shape
    ``(L, N, D)`` (or ``(1, N, D)`` when all transforms coincide)."""
    kind = ens.kind
    if kind == "identity":
        return x[None], None
    if kind == "sine_shear":
        arg = ens.zeta_hat @ x.T - (ens.center * ens.zeta_hat).sum(axis=1)[:, None]
        y = x[None] + np.sin(arg)[:, :, None] * ens.gamma[:, None, :]
        return y, arg
    if ens.full_basis:
        u = (x - ens.center[0]) / ens.scale[0]
        feats = _basis_forward(u, DEGREE[kind])
        return np.concatenate(feats, axis=1)[None], (u, feats)
    u = (x[None] - ens.center[:, None, :]) / ens.scale[:, None, :]
    a = ens.coeffs[:, None, :, 0]
    b = ens.coeffs[:, None, :, 1]
    u2 = u * u
    y = ens.scale[:, None, :] * (u + u * u2 * (a + b * u2))
    return y, u


def _pull(ens, x, ctx, gy):
    """Backpropagate ``gy`` (same shape as the push-forward) to ``x``."""
    kind = ens.kind
    if kind == "identity":
        return gy.sum(axis=0)
    if kind == "sine_shear":
        w = np.cos(ctx) * np.matmul(gy, ens.gamma[:, :, None])[:, :, 0]
        return gy.sum(axis=0) + w.T @ ens.zeta_hat
    if ens.full_basis:
        u, feats = ctx
        return _basis_backward(u, feats, gy.sum(axis=0), DEGREE[kind]) / ens.scale[0]
    u = ctx
    a = ens.coeffs[:, None, :, 0]
    b = ens.coeffs[:, None, :, 1]
    u2 = u * u
    return (gy * (1.0 + u2 * (3.0 * a + 5.0 * b * u2))).sum(axis=0)


def apply_nonlinearity(transform, cloud):
    """Push ``cloud`` through a single random transform."""
    cloud = _as_cloud(cloud, "cloud")
    if cloud.shape[1] != transform.dim:
        raise ValueError("transform dimension does not match the cloud")
    ens = SliceEnsemble.from_transforms([transform], np.full((1, 1, transform.out_dim), 1.0 / np.sqrt(transform.out_dim)))
    y, _ = _push(ens, cloud)
    return y[0]


def _projections(ens, y):
    # (L|1, N, D) x (L, M, D) -> (L, M, N)
    return np.matmul(ens.directions, y.transpose(0, 2, 1))


def _check_ensemble(ens, mu):
    if ens.dim != mu.shape[1]:
        raise ValueError(f"ensemble dimension {ens.dim} does not match clouds of dimension {mu.shape[1]}")


def _reduce(ens, diff):
    p = ens.p
    wpp = np.mean(diff * diff if p == 2 else np.abs(diff), axis=-1)
    sw = np.mean(wpp, axis=1)
    if p == 2:
        sw = np.sqrt(sw)
    return sw


def nsw_distance(mu, nu, ensemble):
    """Average over the ensemble of sliced distances between push-forwards."""
    mu, nu = _check_pair(mu, nu)
    _check_ensemble(ensemble, mu)
    a = np.sort(_projections(ensemble, _push(ensemble, mu)[0]), axis=-1)
    b = np.sort(_projections(ensemble, _push(ensemble, nu)[0]), axis=-1)
    return float(np.mean(_reduce(ensemble, a - b)))


def _sorted_with_index(a):
    """Row-wise sort of ``a`` (last axis) ordering ties by original index.

    Returns the sorted values as ``(rows, n)`` and flat indices into ``a``.
    """
    n = a.shape[-1]
    flat = a.reshape(-1)
    base = (np.arange(flat.size // n) * n)[:, None]
    idx = np.argsort(a, axis=-1).reshape(-1, n) + base
    s = flat[idx]
    if np.any(s[:, 1:] == s[:, :-1]):
        idx = np.argsort(a, axis=-1, kind="stable").reshape(-1, n) + base
        s = flat[idx]
    return s, idx


def nsw_value_and_grad(mu, nu, ensemble, wrt="both"):
    """``(value, grad_mu, grad_nu)`` of :func:`nsw_distance`.

    ``wrt`` may be ``"mu"``, ``"nu"`` or ``"both"``; the gradient not asked
    for is returned as ``None``. The sort-induced matching is held fixed,
    which is exact away from ties. Where a transform's sliced distance is
    zero its gradient is taken as 0.
    """
    if wrt not in ("mu", "nu", "both"):
        raise ValueError("wrt must be 'mu', 'nu' or 'both'")
    mu, nu = _check_pair(mu, nu)
    _check_ensemble(ensemble, mu)
    ens = ensemble
    n = mu.shape[0]
    ym, ctx_m = _push(ens, mu)
    yn, ctx_n = _push(ens, nu)
    pm = _projections(ens, ym)
    pn = _projections(ens, yn)
    shape = pm.shape
    if wrt == "nu":
        sm, im = np.sort(pm, axis=-1).reshape(-1, n), None
    else:
        sm, im = _sorted_with_index(pm)
    if wrt == "mu":
        sn, inn = np.sort(pn, axis=-1).reshape(-1, n), None
    else:
        sn, inn = _sorted_with_index(pn)
    diff = (sm - sn).reshape(shape)
    sw = _reduce(ens, diff)
    value = float(np.mean(sw))

    # d value / d diff = (1/L) (1/p) sw^(1-p) (1/M) d|diff|^p / N
    if ens.p == 2:
        safe = np.where(sw > 0, sw, 1.0)
        coef = np.where(sw > 0, 1.0 / safe, 0.0) / (ens.L * ens.M * n)
        gdiff = (diff * coef[:, None, None]).reshape(-1, n)
    else:
        gdiff = np.sign(diff).reshape(-1, n) / (ens.L * ens.M * n)

    grads = []
    for idx, sign, x, ctx in ((im, 1.0, mu, ctx_m), (inn, -1.0, nu, ctx_n)):
        if idx is None:
            grads.append(None)
            continue
        gp = np.empty(pm.size)
        gp[idx] = gdiff if sign > 0 else -gdiff
        gy = np.matmul(gp.reshape(shape).transpose(0, 2, 1), ens.directions)
        grads.append(_pull(ens, x, ctx, gy))
    return value, grads[0], grads[1]


def nsw_gradient(mu, nu, ensemble):
    """Gradients of :func:`nsw_distance` with respect to both clouds."""
    _, g_mu, g_nu = nsw_value_and_grad(mu, nu, ensemble)
    return g_mu, g_nu


# -- timing -----------------------------------------------------------------

@dataclass
class BenchResult:
    kind: str
    d: int
    N: int
    L: int
    M: int
    mean_seconds: float
    std_seconds: float
    full_basis: bool = False

    def row(self):
        return {"kind": self.kind, "d": self.d, "N": self.N, "L": self.L, "M": self.M,
                "mean_seconds": self.mean_seconds, "std_seconds": self.std_seconds,
                "full_basis": self.full_basis}


def bench_nonlinearity(kind, d, N, repetitions, rng, L=5, M=50, p=2, full_basis=False):
    """Wall-clock cost of one NSW evaluation, ensemble construction included."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    full_basis = bool(full_basis and kind in DEGREE)
    mu = rng.standard_normal((N, d))
    nu = rng.standard_normal((N, d)) + 0.5
    # one untimed call warms caches (monomial plans, BLAS)
    nsw_distance(mu, nu, make_ensemble(mu, kind, L, M, p, rng, full_basis))
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        ens = make_ensemble(mu, kind, L, M, p, rng, full_basis)
        nsw_distance(mu, nu, ens)
        times.append(time.perf_counter() - t0)
    std = statistics.stdev(times) if repetitions > 1 else 0.0
    return BenchResult(kind, d, N, L, M, statistics.fmean(times), std, full_basis)
