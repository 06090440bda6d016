"""Command-line entry point.

Subcommands: ``gen``, ``train``, ``eval``, ``interpolate``, ``bench`` and
``rerun``. Every command writes its outputs plus a ``manifest.json`` under
``--out``; ``rerun`` repeats a command from its manifest and checks that
the deterministic outputs come out byte-identical.

Failures print one JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import config as configuration

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")
MANIFEST = "manifest.json"
SEED_KEY = {"gen": "data.seed", "train": "train.seed", "eval": "eval.seed",
            "interpolate": "geodesic.seed", "bench": "bench.seed"}


class CliError(RuntimeError):
    def __init__(self, message, **extra):
        super().__init__(message)
        self.extra = extra


def sha256_path(path):
    """Digest of a file, or of every file under a directory in sorted order."""
    path = Path(path)
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for f in files:
        if path.is_dir():
            h.update(str(f.relative_to(path)).encode() + b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()


def _prepare_out(out):
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {out} is not writable: {exc.strerror}", path=str(out)) from None
    return out


class Run:
    """Output bookkeeping for one command; becomes the manifest."""

    def __init__(self, command, cfg, args, out, deterministic):
        self.command, self.cfg, self.args = command, cfg, args
        self.out = _prepare_out(out)
        self.deterministic = deterministic
        self.outputs = {}
        self.inputs = {}
        self.dataset_sha256 = None
        self.t0 = time.perf_counter()

    def path(self, name, deterministic=True):
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[name] = deterministic
        return p

    def add_input(self, name, path):
        path = Path(path)
        if not path.exists():
            raise CliError(f"{name} not found: {path}", path=str(path))
        digest = sha256_path(path)
        self.inputs[name] = {"path": str(path.resolve()), "sha256": digest}
        if name == "dataset":
            self.dataset_sha256 = digest
        return path

    def finish(self):
        outputs = []
        for name, det in self.outputs.items():
            p = self.out / name
            if not p.exists():
                raise CliError(f"declared output {p} was not written")
            outputs.append({"path": name, "sha256": sha256_path(p), "deterministic": det})
        record = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            "args": self.args,
            "seed": self.cfg.get(SEED_KEY.get(self.command, ""), None),
            "deterministic": self.deterministic,
            "dataset_sha256": self.dataset_sha256,
            "inputs": self.inputs,
            "outputs": outputs,
            "wall_clock_seconds": time.perf_counter() - self.t0,
        }
        (self.out / MANIFEST).write_text(json.dumps(record, indent=2) + "\n")
        return record


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    import csv
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- config plumbing --------------------------------------------------------

def train_config(cfg):
    from .losses import LossWeights
    from .trainer import TrainConfig
    t = configuration.section(cfg, "train")
    return TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], k1=t["k1"], k2=t["k2"],
        weights=LossWeights(t["alpha"], t["beta"], t["kappa"]), p=t["p"], L=t["L"], M=t["M"],
        nonlinearity=t["nonlinearity"], full_basis=t["full_basis"], latent_dim=t["latent_dim"],
        hidden=t["hidden"], prior_input_dim=t["prior_input_dim"],
        prior_mode="gaussian" if t["mode"] == "swae" else "encoded",
        fsc_enabled=t["fsc_enabled"], pe_resample_data=t["pe_resample_data"], seed=t["seed"])


def spiral_config(cfg):
    from .data import SpiralConfig
    d = configuration.section(cfg, "data")
    return SpiralConfig(d["n_samples"], d["turns"], d["radius"], d["height"],
                        d["radius_profile"], d["noise_fraction"], d["seed"])


# -- commands ---------------------------------------------------------------

def cmd_gen(cfg, args, run):
    import numpy as np
    from . import plotting
    from .data import make_spiral_dataset, save_dataset, save_matrix, unembed
    ds, A = make_spiral_dataset(spiral_config(cfg), cfg["data.ambient_dim"])
    save_dataset(ds, run.path("dataset.csv"))
    save_matrix(A, run.path("embedding.csv"))
    show = np.random.default_rng(0).permutation(len(ds))[:2000]
    plotting.spiral_scatter(run.path("spiral.svg"), unembed(ds.inputs[show], A), ds.truth[show])
    run.dataset_sha256 = sha256_path(run.out / "dataset.csv")
    return {"n_samples": len(ds), "ambient_dim": ds.inputs.shape[1]}


def _train_arm(tc, cfg, ds, run, prefix=""):
    import numpy as np
    from . import plotting
    from .data import save_matrix
    from .trainer import evaluate, save_model, train

    model, log = train(tc, ds)
    ckpt = run.out / prefix / "checkpoint"
    save_model(model, ckpt)
    for f in sorted(ckpt.iterdir()):
        run.path(f"{prefix}checkpoint/{f.name}")
    log.write_jsonl(run.path(f"{prefix}log.jsonl"))

    curves = {key: log.epoch_means("AE", key) for key in ("total", "reconstruction", "nsw", "fsc")}
    pe = log.epoch_means("PE", "nsw") if model.prior_encoder is not None else None
    rows = []
    for e in range(len(curves["total"])):
        rows.append([e + 1] + [float(curves[k][e]) for k in curves] + ([float(pe[e])] if pe is not None else []))
    header = ["epoch", "ae_total", "ae_reconstruction", "ae_nsw", "ae_fsc"] + (["pe_nsw"] if pe is not None else [])
    _write_rows(run.path(f"{prefix}loss.csv"), header, rows)

    metrics = evaluate(model, ds, tc, cfg["eval.seed"], cfg["eval.kind"])
    _write_json(run.path(f"{prefix}metrics.json"), metrics)

    z = model.encode(ds.inputs)
    save_matrix(z, run.path(f"{prefix}latent.csv"))
    if tc.epochs:
        plotting.loss_curves(run.path(f"{prefix}loss.svg"), {k: curves[k] for k in ("total", "reconstruction", "nsw")})
    if z.shape[1] >= 3:
        rng = np.random.default_rng(cfg["eval.seed"])
        show = rng.permutation(len(z))[:2000]
        plotting.latent_scatter(run.path(f"{prefix}latent.svg"), z[show], model.sample_prior(len(show), rng))
    _write_json(run.path(f"{prefix}timing.json", deterministic=False), {"epoch_seconds": log.epoch_seconds})
    return metrics


ABLATION_ARMS = {
    "linear_sw": ("identity", False),
    "linear_sw_fsc": ("identity", True),
    "nsw": (None, False),
    "nsw_fsc": (None, True),
}


def cmd_train(cfg, args, run):
    from dataclasses import replace
    import numpy as np
    from . import plotting
    from .data import load_dataset
    ds = load_dataset(run.add_input("dataset", args["dataset"]))
    tc = train_config(cfg)
    if cfg["train.mode"] != "ablation":
        return _train_arm(tc, cfg, ds, run)
    results, rows, curves = {}, [], {}
    for arm, (kind, fsc) in ABLATION_ARMS.items():
        arm_tc = replace(tc, nonlinearity=kind or tc.nonlinearity, fsc_enabled=fsc)
        m = _train_arm(arm_tc, cfg, ds, run, prefix=f"{arm}/")
        results[arm] = m
        rows.append([arm, m["reconstruction_mse"], m["nsw_prior_posterior"], m["fsc"]])
    _write_rows(run.path("ablation.csv"), ["arm", "reconstruction_mse", "nsw_prior_posterior", "fsc"], rows)
    for arm in ABLATION_ARMS:
        loss = np.genfromtxt(run.out / arm / "loss.csv", delimiter=",", names=True)
        curves[arm] = np.atleast_1d(loss["ae_nsw"])
    if tc.epochs:
        plotting.loss_curves(run.path("ablation.svg"), curves, ylabel="posterior/prior NSW")
    return results


def cmd_eval(cfg, args, run):
    from .data import load_dataset
    from .trainer import evaluate, load_model
    model = load_model(run.add_input("checkpoint", args["checkpoint"]))
    ds = load_dataset(run.add_input("dataset", args["dataset"]))
    metrics = evaluate(model, ds, train_config(cfg), cfg["eval.seed"], cfg["eval.kind"])
    _write_json(run.path("metrics.json"), metrics)
    return metrics


def cmd_interpolate(cfg, args, run):
    import numpy as np
    from . import plotting
    from .data import load_dataset, load_matrix, save_matrix, unembed
    from .geodesic import (LatentSampleSet, densify, linear_interpolation, network_geodesic,
                           path_energy, snap_to_nodes)
    from .trainer import load_model

    g = configuration.section(cfg, "geodesic")
    model = load_model(run.add_input("checkpoint", args["checkpoint"]))
    ds = load_dataset(run.add_input("dataset", args["dataset"]))
    A = load_matrix(run.add_input("embedding", args["embedding"])) if args.get("embedding") else None
    N = len(ds)
    i, j = args["endpoints"]
    for e in (i, j):
        if not 0 <= e < N:
            raise CliError(f"endpoint index {e} outside dataset of {N} rows")
    if i == j:
        raise CliError("endpoints must differ")
    if g["n_samples"] < 2 or g["n_samples"] - 2 > N - 2:
        raise CliError(f"n_samples must lie in [2, {N}]")

    rng = np.random.default_rng(g["seed"])
    pool = np.setdiff1d(np.arange(N), [i, j])
    picked = np.sort(rng.choice(pool, g["n_samples"] - 2, replace=False))
    rows = np.concatenate([[i, j], picked])
    points = model.encode(ds.inputs[rows])
    tags = ["endpoint", "endpoint"] + ["posterior"] * len(picked)
    source = rows.tolist()
    if g["prior_samples"]:
        prior = model.sample_prior(g["prior_samples"], rng)
        points = np.vstack([points, prior])
        tags += ["prior"] * len(prior)
        source += [-1] * len(prior)
    samples = LatentSampleSet(points, tags)

    meta = {"method": g["method"], "endpoints": [i, j], "n_samples": len(points)}
    if g["method"] == "geodesic":
        path = network_geodesic(samples, 0, 1, g["k"], g["h"], g["densify"], g["t0"],
                                g["growth_factor"], g["t_max"], g["directed"])
        curve = path.points
        line_nodes = snap_to_nodes(points, linear_interpolation(points[0], points[1], max(len(path.nodes), 2) * 4))
        meta.update(t_final=path.t_final, k=path.k, h=path.h, energy=path.energy, nodes=path.nodes,
                    dataset_rows=[source[n] for n in path.nodes],
                    linear_energy_on_graph=path_energy(path.graph, line_nodes))
    elif g["method"] == "linear":
        curve = linear_interpolation(points[0], points[1], g["n_points"])
        if g["densify"]:
            curve = densify(curve)
    else:
        raise CliError(f"unknown method {g['method']!r}")
    meta["n_points"] = len(curve)

    save_matrix(curve, run.path("path.csv"))
    _write_json(run.path("path.json"), meta)
    _write_rows(run.path("samples.csv"), ["tag", "row"] + [f"z{c}" for c in range(points.shape[1])],
                [[t, s] + p.tolist() for t, s, p in zip(tags, source, points)])
    decoded = model.decode(curve)
    save_matrix(decoded, run.path("decoded_path.csv"))
    if A is not None:
        save_matrix(unembed(decoded, A), run.path("path_3d.csv"))
    if points.shape[1] == 3:
        post = points[np.array(tags) != "prior"]
        prior = points[np.array(tags) == "prior"] if g["prior_samples"] else model.sample_prior(len(post), rng)
        plotting.latent_scatter(run.path("interpolation.svg"), post, prior, curve, title=g["method"])
    return meta


def cmd_bench(cfg, args, run):
    from dataclasses import replace
    import numpy as np
    from . import plotting
    from .sliced import bench_nonlinearity
    b = configuration.section(cfg, "bench")
    rng = np.random.default_rng(b["seed"])
    results = []
    for d in b["dims"]:
        for kind in b["kinds"]:
            results.append(bench_nonlinearity(kind, d, b["n"], b["reps"], rng, b["L"], b["M"],
                                              cfg["train.p"], b["full_basis"]))
    header = ["kind", "d", "N", "L", "M", "mean_seconds", "std_seconds", "full_basis"]
    _write_rows(run.path("bench.csv", deterministic=False), header,
                [[r.row()[h] for h in header] for r in results])
    plotting.bench_plot(run.path("bench.svg", deterministic=False), results)
    summary = {"rows": [r.row() for r in results]}

    if args.get("dataset"):
        from .data import load_dataset
        from .trainer import train
        ds = load_dataset(run.add_input("dataset", args["dataset"]))
        tc = train_config(cfg)
        curves, rows = {}, []
        for kind in b["loss_kinds"]:
            _, log = train(replace(tc, nonlinearity=kind), ds)
            curves[kind] = log.epoch_means("AE", "total")
        for e in range(tc.epochs):
            rows.append([e + 1] + [float(curves[k][e]) for k in b["loss_kinds"]])
        _write_rows(run.path("loss_by_kind.csv"), ["epoch"] + b["loss_kinds"], rows)
        if tc.epochs:
            plotting.loss_curves(run.path("loss_by_kind.svg"), curves, ylabel="autoencoder loss")
        summary["final_loss"] = {k: float(v[-1]) for k, v in curves.items() if len(v)}
    return summary


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "interpolate": cmd_interpolate, "bench": cmd_bench}


def execute(command, cfg, args, out, deterministic=False):
    """Run ``command`` with a resolved config; returns ``(summary, manifest)``."""
    run = Run(command, cfg, args, out, deterministic)
    summary = COMMANDS[command](cfg, args, run)
    return summary, run.finish()


def rerun(manifest_path, out):
    """Repeat the command recorded in a manifest into ``out`` and compare outputs."""
    manifest = json.loads(Path(manifest_path).read_text())
    for name, rec in manifest["inputs"].items():
        p = Path(rec["path"])
        if not p.exists():
            raise CliError(f"input {name} is missing: {p}", path=str(p))
        if sha256_path(p) != rec["sha256"]:
            raise CliError(f"input {name} changed since the manifest was written: {p}", path=str(p))
    _, new = execute(manifest["command"], manifest["config"], manifest["args"], out,
                     manifest.get("deterministic", False))
    new_hashes = {o["path"]: o["sha256"] for o in new["outputs"]}
    compared, mismatched = [], []
    for o in manifest["outputs"]:
        if not o["deterministic"]:
            continue
        compared.append(o["path"])
        if new_hashes.get(o["path"]) != o["sha256"]:
            mismatched.append(o["path"])
    return {"identical": not mismatched, "compared": compared, "mismatched": mismatched}


# -- argument parsing -------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="epswae", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded numerics for bit-reproducible reruns")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key")
        return p

    common(sub.add_parser("gen", help="generate the embedded spiral dataset"))

    p = common(sub.add_parser("train", help="train a model (or the four ablation arms)"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("epswae", "swae", "ablation"))
    p.add_argument("--linear-sw", action="store_true", help="replace NSW with linear sliced Wasserstein")
    p.add_argument("--no-fsc", action="store_true", help="drop the structural consistency term")

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)

    p = common(sub.add_parser("interpolate", help="latent interpolation between two data rows"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--endpoints", type=int, nargs=2, required=True, metavar=("I", "J"))
    p.add_argument("--method", choices=("geodesic", "linear"))
    p.add_argument("--k", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--n-points", type=int, help="points on a linear path")
    p.add_argument("--densify", action="store_true")
    p.add_argument("--embedding", help="embedding CSV; adds the path mapped back to 3-D")

    p = common(sub.add_parser("bench", help="time the nonlinearities"))
    p.add_argument("--dims", help="comma-separated dimensions")
    p.add_argument("--kinds", help="comma-separated nonlinearity kinds")
    p.add_argument("--reps", type=int)
    p.add_argument("--full-basis", action="store_true")
    p.add_argument("--dataset", help="also train once per kind and write loss curves")

    p = sub.add_parser("rerun", help="repeat a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def _overrides(ns):
    over = {}
    for item in ns.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        over[key.strip()] = configuration.parse_value(key.strip(), value)
    if ns.seed is not None:
        over[SEED_KEY[ns.command]] = ns.seed
    flag_keys = {"mode": "train.mode", "method": "geodesic.method", "k": "geodesic.k",
                 "h": "geodesic.h", "n_samples": "geodesic.n_samples", "n_points": "geodesic.n_points",
                 "reps": "bench.reps"}
    for attr, key in flag_keys.items():
        if getattr(ns, attr, None) is not None:
            over[key] = getattr(ns, attr)
    for attr, key in (("dims", "bench.dims"), ("kinds", "bench.kinds")):
        if getattr(ns, attr, None) is not None:
            over[key] = configuration.parse_value(key, getattr(ns, attr))
    if getattr(ns, "linear_sw", False):
        over["train.nonlinearity"] = "identity"
    if getattr(ns, "no_fsc", False):
        over["train.fsc_enabled"] = False
    if getattr(ns, "densify", False):
        over["geodesic.densify"] = True
    if getattr(ns, "full_basis", False):
        over["bench.full_basis"] = True
    return over


def _command_args(ns):
    args = {}
    for name in ("dataset", "checkpoint", "embedding"):
        value = getattr(ns, name, None)
        if value is not None:
            args[name] = str(Path(value).resolve())
    if getattr(ns, "endpoints", None) is not None:
        args["endpoints"] = list(ns.endpoints)
    return args


def _single_thread():
    for var in THREAD_VARS:
        os.environ[var] = "1"


def _error_record(exc, command):
    record = {"error": type(exc).__name__, "message": str(exc), "command": command}
    record.update(getattr(exc, "extra", {}))
    for attr in ("n_components", "t", "step", "term", "magnitude"):
        if hasattr(exc, attr):
            value = getattr(exc, attr)
            record[attr] = value if isinstance(value, (int, float, str)) else repr(value)
    return record


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "rerun":
            manifest = json.loads(Path(ns.manifest).read_text())
            if manifest.get("deterministic"):
                _single_thread()
            result = rerun(ns.manifest, ns.out)
            print(json.dumps(result))
            return 0 if result["identical"] else 3
        if ns.deterministic:
            _single_thread()
        cfg = configuration.resolve(ns.config, _overrides(ns))
        summary, manifest = execute(ns.command, cfg, _command_args(ns), ns.out, ns.deterministic)
        print(json.dumps({"command": ns.command, "out": str(Path(ns.out)), "summary": summary},
                         default=str))
        return 0
    except Exception as exc:  # surfaced as a machine-readable record
        print(json.dumps(_error_record(exc, ns.command), default=str), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
