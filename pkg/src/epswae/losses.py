"""Autoencoder and prior-encoder objectives with gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .sliced import nsw_value_and_grad


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    kappa: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "kappa"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    reconstruction: float
    nsw: float
    fsc: float
    total: float
    grad_recon: np.ndarray = None
    grad_posterior: np.ndarray = None

    def record(self):
        return {k: v for k, v in asdict(self).items() if not k.startswith("grad_")}


def reconstruction_mse(x, x_recon):
    """Mean squared error over samples and coordinates, and its gradient
    with respect to ``x_recon``."""
    x = np.asarray(x, dtype=np.float64)
    x_recon = np.asarray(x_recon, dtype=np.float64)
    if x.shape != x_recon.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_recon.shape}")
    r = x_recon - x
    return float(np.mean(r * r)), (2.0 / r.size) * r


def _pairwise(a):
    sq = np.sum(a * a, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def reference_distances(reference):
    """Pairwise distances of ``reference`` divided by their off-diagonal mean.

    Returned as a full symmetric matrix with zero diagonal; the training
    loop computes it once per minibatch and passes it to :func:`fsc_loss`.
    """
    reference = np.asarray(reference, dtype=np.float64)
    n = reference.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    d = _pairwise(reference)
    np.fill_diagonal(d, 0.0)
    m = d.sum() / (n * (n - 1))
    if m == 0.0:
        raise DegenerateInputError("reference points are all identical")
    return d / m


def fsc_loss(reference, latents, ref_normalized=None):
    """Feature structural consistency between ``reference`` and ``latents``.

    Both sets of pairwise distances are divided by their own mean over
    distinct pairs; the loss is the mean squared difference over distinct
    pairs. Returns ``(value, grad_latents)``.
    """
    latents = np.asarray(latents, dtype=np.float64)
    n = latents.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if ref_normalized is None:
        if np.asarray(reference).shape[0] != n:
            raise ValueError("reference and latents need equal sample counts")
        ref_normalized = reference_distances(reference)
    diffs = latents[:, None, :] - latents[None, :, :]
    dist = np.sqrt(np.sum(diffs * diffs, axis=-1))
    # every distinct pair appears twice in the full matrices
    pairs = n * (n - 1)
    m = dist.sum() / pairs
    if m == 0.0:
        # collapsed latents: the value has a limit, the gradient does not
        return float(np.sum(ref_normalized ** 2) / pairs), np.zeros_like(latents)
    resid = dist / m - ref_normalized
    value = float(np.sum(resid * resid) / pairs)
    # per distinct pair k: dL/dd_k = 2/(P m) * (resid_k - <resid, d>/(P m)), P = pairs/2
    P = pairs / 2
    g_d = (2.0 / (P * m)) * (resid - (np.sum(resid * dist) / 2) / (P * m))
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(dist > 0, g_d / dist, 0.0)
    grad = G.sum(axis=1)[:, None] * latents - G @ latents
    return value, grad


def autoencoder_loss(x, x_recon, posterior, prior, reference, weights, ensemble, ref_normalized=None):
    """Weighted reconstruction + NSW(posterior, prior) + FSC objective.

    Gradients flow to ``x_recon`` and ``posterior`` only; the prior is a
    constant here. Every term is evaluated (and logged) even at zero weight.
    """
    rec, g_rec = reconstruction_mse(x, x_recon)
    nsw, g_nsw, _ = nsw_value_and_grad(posterior, prior, ensemble, wrt="mu")
    fsc, g_fsc = fsc_loss(reference, posterior, ref_normalized)
    total = weights.alpha * rec + weights.beta * nsw + weights.kappa * fsc
    g_post = weights.beta * g_nsw + weights.kappa * g_fsc
    return LossReport(rec, nsw, fsc, total, weights.alpha * g_rec, g_post)


def prior_encoder_loss(posterior, prior, ensemble):
    """NSW(posterior, prior) with its gradient with respect to the prior."""
    value, _, g_prior = nsw_value_and_grad(posterior, prior, ensemble, wrt="nu")
    return value, g_prior
