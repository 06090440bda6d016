"""Alternating autoencoder / prior-encoder training.

Each cycle consumes one data minibatch: ``k1`` autoencoder updates with the
prior encoder frozen, then ``k2`` prior-encoder updates with the
autoencoder frozen. The fixed-Gaussian-prior baseline runs the same loop
without the second phase.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset, PriorInputSampler, sample_prior_input
from .losses import LossWeights, autoencoder_loss, fsc_loss, prior_encoder_loss, reconstruction_mse, reference_distances
from .sliced import KINDS, make_ensemble, nsw_distance

log = logging.getLogger(__name__)

PRIOR_MODES = ("encoded", "gaussian")


class TrainingAborted(RuntimeError):
    def __init__(self, step, term, magnitude):
        super().__init__(f"non-finite {term} loss at step {step}: {magnitude!r}")
        self.step, self.term, self.magnitude = step, term, magnitude


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    k1: int = 1
    k2: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    p: int = 2
    L: int = 5
    M: int = 50
    nonlinearity: str = "sine_shear"
    full_basis: bool = False
    latent_dim: int = 3
    hidden: int = 40
    prior_input_dim: int = 40
    prior_mode: str = "encoded"
    fsc_enabled: bool = True
    pe_resample_data: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("batch_size", "k1", "k2", "L", "M", "latent_dim", "hidden", "prior_input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.nonlinearity not in KINDS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")

    @property
    def effective_weights(self):
        if self.fsc_enabled:
            return self.weights
        return replace(self.weights, kappa=0.0)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpswaeModel:
    encoder: nn.MLP
    decoder: nn.MLP
    prior_encoder: nn.MLP | None
    sampler: PriorInputSampler
    ae_opt: nn.Adam = None
    pe_opt: nn.Adam = None

    @property
    def latent_dim(self):
        return self.encoder.out_dim

    def encode(self, x):
        return self.encoder(x)

    def decode(self, z):
        return self.decoder(z)

    def sample_prior(self, n, rng):
        """Latent prior samples: pushed-forward noise, or N(0, I) without a prior encoder."""
        if self.prior_encoder is None:
            return rng.standard_normal((n, self.latent_dim))
        return self.prior_encoder(sample_prior_input(self.sampler, n, rng))


@dataclass
class TrainingLog:
    steps: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    def epoch_means(self, phase="AE", key="total"):
        """Per-epoch mean of ``key`` over steps of ``phase``."""
        by_epoch = {}
        for rec in self.steps:
            if rec["phase"] == phase:
                by_epoch.setdefault(rec["epoch"], []).append(rec[key])
        return np.array([np.mean(by_epoch[e]) for e in sorted(by_epoch)])

    def write_jsonl(self, path):
        with Path(path).open("w") as fh:
            for rec in self.steps:
                fh.write(json.dumps(rec) + "\n")


def _streams(seed):
    names = ("init_encoder", "init_decoder", "init_prior", "shuffle", "prior_noise", "slices", "pe_data")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def init_model(config, input_dim, streams=None):
    streams = _streams(config.seed) if streams is None else streams
    h, zd = config.hidden, config.latent_dim
    encoder = nn.MLP.build([input_dim, h, h, zd], streams["init_encoder"])
    decoder = nn.MLP.build([zd, h, h, input_dim], streams["init_decoder"])
    prior = None
    if config.prior_mode == "encoded":
        prior = nn.MLP.build([config.prior_input_dim, h, h, zd], streams["init_prior"])
    model = EpswaeModel(encoder, decoder, prior, PriorInputSampler(config.prior_input_dim))
    model.ae_opt = nn.Adam(encoder.params + decoder.params, lr=config.lr)
    if prior is not None:
        model.pe_opt = nn.Adam(prior.params, lr=config.lr)
    return model


def _inputs(data):
    x = data.inputs if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    return x


def _check(step, report):
    for term in ("reconstruction", "nsw", "fsc", "total"):
        v = report[term]
        if v is not None and not np.isfinite(v):
            raise TrainingAborted(step, term, v)


def train(config, data, callback=None):
    """Train a model on ``data`` (a :class:`Dataset` or ``(N, d)`` array).

    ``callback(epoch, log)`` runs after every epoch. Returns ``(model, log)``.
    """
    X = _inputs(data)
    N = X.shape[0]
    bs = config.batch_size
    if bs > N:
        raise ValueError(f"batch_size {bs} exceeds dataset size {N}")
    streams = _streams(config.seed)
    model = init_model(config, X.shape[1], streams)
    weights = config.effective_weights
    kind, L, M, p, fb = config.nonlinearity, config.L, config.M, config.p, config.full_basis
    E, D, PE = model.encoder, model.decoder, model.prior_encoder
    ae_params = E.params + D.params
    out = TrainingLog()
    step = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = streams["shuffle"].permutation(N)
        for b in range(N // bs):
            x = X[order[b * bs:(b + 1) * bs]]
            ref = reference_distances(x)
            for _ in range(config.k1):
                y = model.sample_prior(bs, streams["prior_noise"])
                z, cz = nn.forward(E, x)
                xr, cd = nn.forward(D, z)
                ens = make_ensemble(z, kind, L, M, p, streams["slices"], fb)
                rep = autoencoder_loss(x, xr, z, y, x, weights, ens, ref)
                step += 1
                rec = {"step": step, "epoch": epoch, "phase": "AE", **rep.record()}
                _check(step, rec)
                gD, gz = nn.backward(D, cd, rep.grad_recon)
                gE, _ = nn.backward(E, cz, gz + rep.grad_posterior)
                model.ae_opt.step(ae_params, gE + gD)
                out.steps.append(rec)
            if PE is None:
                continue
            for _ in range(config.k2):
                xb = X[streams["pe_data"].choice(N, bs, replace=False)] if config.pe_resample_data else x
                z = E(xb)
                xi = sample_prior_input(model.sampler, bs, streams["prior_noise"])
                y, cy = nn.forward(PE, xi)
                ens = make_ensemble(z, kind, L, M, p, streams["slices"], fb)
                value, gy = prior_encoder_loss(z, y, ens)
                step += 1
                rec = {"step": step, "epoch": epoch, "phase": "PE",
                       "reconstruction": None, "nsw": value, "fsc": None, "total": value}
                _check(step, rec)
                gP, _ = nn.backward(PE, cy, gy)
                model.pe_opt.step(PE.params, gP)
                out.steps.append(rec)
        out.epoch_seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, out)
    return model, out


def train_swae_baseline(config, data, callback=None):
    """Same loop with a fixed N(0, I) latent prior and no prior encoder."""
    return train(replace(config, prior_mode="gaussian"), data, callback)


def evaluate(model, data, config, seed=20240917, kind="sine_shear"):
    """Reconstruction MSE, prior/posterior NSW and FSC on the whole dataset.

    The NSW ensemble and prior noise are drawn from ``seed`` so repeated
    calls agree. FSC is averaged over consecutive minibatches.
    """
    X = _inputs(data)
    rng = np.random.default_rng(seed)
    z = model.encode(X)
    rec, _ = reconstruction_mse(X, model.decode(z))
    y = model.sample_prior(X.shape[0], rng)
    ens = make_ensemble(z, kind, config.L, config.M, config.p, rng)
    nsw = nsw_distance(z, y, ens)
    bs = config.batch_size
    fsc = [fsc_loss(X[i:i + bs], z[i:i + bs])[0] for i in range(0, X.shape[0] - bs + 1, bs)]
    return {"reconstruction_mse": rec, "nsw_prior_posterior": nsw, "fsc": float(np.mean(fsc))}


def save_model(model, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nn.save(model.encoder, directory / "encoder.json")
    nn.save(model.decoder, directory / "decoder.json")
    meta = {"prior_mode": "gaussian" if model.prior_encoder is None else "encoded",
            "prior_input_dim": model.sampler.dim, "latent_dim": model.latent_dim}
    if model.prior_encoder is not None:
        nn.save(model.prior_encoder, directory / "prior_encoder.json")
    (directory / "model.json").write_text(json.dumps(meta, indent=2))
    return directory


def load_model(directory):
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    prior = None
    if meta["prior_mode"] == "encoded":
        prior = nn.load(directory / "prior_encoder.json")
    return EpswaeModel(nn.load(directory / "encoder.json"), nn.load(directory / "decoder.json"),
                       prior, PriorInputSampler(meta["prior_input_dim"]))
