"""Command-line experiment runner.

Verbs: ``generate``, ``train``, ``complete``, ``denoise``, ``eval``, ``plot``.
Every run writes its artifacts plus ``manifest.yaml`` (the resolved config, a
valid input for ``--config``) into the output directory.
"""

import argparse
import csv
import logging
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checkpoint import load_metadata, load_model, save_model
from .config import TASKS, build_config, preset_names
from .datagen import (SimSpec, add_impulses, apply_missing, continuous_factors, corrupt, cp_values,
                      gen_continuous, gen_entry_samples, gen_factors, smooth_lowrank, true_density,
                      NoiseCaseSpec)
from .dsm import train
from .energy import build_model
from .errors import ArgumentError, ConfigurationError, ScoreTensorError
from .io import MAGIC, read_dense, read_index_list, read_tensor, write_coo, write_dense
from .metrics import evaluate, write_metrics_csv
from .plotting import count_modes, grid_spacing, plot_density, plot_loss, total_variation
from .recovery import BcdConfig, ValueScaler, complete, denoise_bcd, initial_values
from .tensor import DenseTensor, SparseTensor

log = logging.getLogger("scoretensor")


def version_string():
    """Package version, extended with ``git describe`` output when available."""
    try:
        described = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                                   cwd=Path(__file__).parent, capture_output=True, text=True,
                                   timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{__version__}+{described}" if described else __version__


def write_manifest(cfg, out):
    doc = cfg.as_dict()
    doc["run"] = {"version": version_string(), "task": cfg.task, "seed": cfg.seed}
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))


@dataclass
class Data:
    train: SparseTensor = None
    test: SparseTensor = None
    truth: DenseTensor = None
    noisy: object = None
    entry_params: np.ndarray = None


def as_sparse(t):
    return t.to_sparse() if isinstance(t, DenseTensor) else t


def load_data(cfg):
    """Observations for a run, read from files or generated from the root seed."""
    d = cfg.data
    src = d["source"]
    miss = d["missing"]
    out = Data()
    full = None
    if src == "file":
        if d["train"]:
            full = as_sparse(read_tensor(d["train"]))
        if d["test"]:
            out.test = as_sparse(read_tensor(d["test"]))
        if d["truth"]:
            out.truth = read_tensor(d["truth"])
        if d["noisy"]:
            out.noisy = read_tensor(d["noisy"])
    elif src == "sim-entries":
        Z = gen_factors(d["dims"], d["rank"], "uniform", cfg.seed_for("data", "factors"))
        spec = SimSpec(tuple(d["dims"]), d["rank"], d["distribution"], d["samples_per_entry"],
                       cfg.seed_for("data", "samples"))
        full = gen_entry_samples(Z, spec)
        out.entry_params = cp_values(Z)
    elif src == "sim-continuous":
        Z = continuous_factors(tuple(d["dims"]), cfg.seed_for("data", "factors"))
        full = gen_continuous(Z)
    elif src == "synthetic-lowrank":
        out.truth = smooth_lowrank(tuple(d["dims"]), d["rank"], cfg.seed_for("data", "factors"))
        out.noisy = _corrupt(cfg, out.truth)
    elif src == "image":
        out.truth = read_dense(d["truth"])
        out.noisy = _corrupt(cfg, out.truth)
        full = out.truth.to_sparse()
    if full is not None:
        if miss["mode"] is not None and out.test is None:
            split = apply_missing(full, miss["mode"], miss["rate"], miss["bursts"], cfg.seed_for("data", "split"))
            out.train, out.test = split.train, split.test
        else:
            out.train = full
    return out


def _corrupt(cfg, clean):
    noise = cfg.data["noise"]
    x = clean
    if noise["case"] is not None:
        x = corrupt(x, NoiseCaseSpec.from_case(noise["case"]), cfg.seed_for("data", "noise"))
    if noise["impulse_rate"]:
        x, _ = add_impulses(x, noise["impulse_rate"], noise["impulse_magnitude"], cfg.seed_for("data", "impulses"))
    return x


def _model_for(cfg, dims, rank):
    m = cfg.model
    return build_model(m["variant"], dims, rank, m["width"], cfg.seed_for("model", f"r{rank}"),
                       fusion=m["fusion"], depth=m["depth"], time_features=m["time_features"],
                       time_scale=m["time_scale"], coord_features=m["coord_features"],
                       coord_scale=m["coord_scale"])


def _scaler(cfg, train_data):
    if cfg.data["standardize"]:
        return ValueScaler.fit(train_data.values)
    return ValueScaler()


def _fit(cfg, data, rank, out):
    """Train (or load) the model for one rank; returns (model, scaler)."""
    if cfg.model["checkpoint"]:
        model = load_model(cfg.model["checkpoint"])
        meta = load_metadata(cfg.model["checkpoint"])
        scaler = ValueScaler(meta.get("shift", 0.0), meta.get("scale", 1.0))
        return model, scaler
    if data.train is None:
        raise ConfigurationError("no training observations", ["data.train"])
    scaler = _scaler(cfg, data.train)
    model = _model_for(cfg, data.train.dims, rank)
    tcfg = cfg.train_config(f"r{rank}")
    res = train(model, data.train.with_values(scaler.forward(data.train.values)), tcfg,
                workers=cfg.workers, log=lambda e, loss: log.debug("rank %d epoch %d loss %.6g", rank, e, loss))
    res.write_trace(out / f"loss_r{rank}.csv")
    plot_loss(res.trace, out / f"loss_r{rank}.svg")
    save_model(model, out / f"checkpoint_r{rank}", {"shift": scaler.shift, "scale": scaler.scale})
    log.info("rank %d trained: final loss %.6g", rank, res.trace[-1] if res.trace else float("nan"))
    return model, scaler


def run_generate(cfg, out):
    data = load_data(cfg)
    written = []
    for name, t in (("train", data.train), ("test", data.test)):
        if t is not None:
            write_coo(out / f"{name}.coo", t)
            written.append(f"{name}.coo")
    for name, t in (("truth", data.truth), ("noisy", data.noisy)):
        if isinstance(t, DenseTensor):
            write_dense(out / f"{name}.stdt", t)
            written.append(f"{name}.stdt")
    if data.entry_params is not None:
        write_dense(out / "entry_params.stdt", DenseTensor(data.entry_params.shape, data.entry_params))
        written.append("entry_params.stdt")
    log.info("wrote %s", ", ".join(written))


def run_train(cfg, out):
    data = load_data(cfg)
    rows = []
    for rank in cfg.ranks:
        _fit(cfg, data, rank, out)
        trace = _read_trace(out / f"loss_r{rank}.csv")
        rows.append((f"final_loss_r{rank}", trace[-1]))
    write_metrics_csv(out / "metrics.csv", rows)


def _read_trace(path):
    with open(path, newline="") as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


def run_complete(cfg, out):
    data = load_data(cfg)
    test = data.test
    if test is None or len(test) == 0:
        raise ConfigurationError("completion needs held-out positions", ["data.test", "data.missing.mode"])
    if cfg.data["source"] != "file":
        write_coo(out / "test.coo", test)
    rows = []
    for rank in cfg.ranks:
        model, scaler = _fit(cfg, data, rank, out)
        scaled_train = data.train.with_values(scaler.forward(data.train.values)) if data.train is not None else None
        sampler = cfg.sampler["kind"]
        scfg = cfg.sampler_config(f"r{rank}", values=None if scaled_train is None else scaled_train.values)
        init = None
        if sampler == "langevin":
            init = (initial_values(scaled_train, test.indices, test.timestamps) if scaled_train is not None
                    else np.zeros(len(test)))
        res = complete(model, test.indices, sampler, scfg, test.timestamps, init=init, workers=cfg.workers)
        pred = scaler.inverse(res.values)
        write_coo(out / f"pred_r{rank}.coo", test.with_values(pred))
        report = evaluate(pred, test.values, metrics=("rmse", "mae"))
        rows += [(f"rmse_r{rank}", report.rmse), (f"mae_r{rank}", report.mae)]
        if res.errors:
            rows.append((f"failed_chains_r{rank}", float(len(res.errors))))
        log.info("rank %d: rmse %.6g mae %.6g", rank, report.rmse, report.mae)
    write_metrics_csv(out / "metrics.csv", rows)


def run_denoise(cfg, out):
    data = load_data(cfg)
    if data.noisy is None:
        raise ConfigurationError("denoising needs a noisy tensor", ["data.noisy", "data.noise.case"])
    observed = as_sparse(data.noisy)
    rank = cfg.ranks[0]
    if cfg.model["checkpoint"]:
        model = load_model(cfg.model["checkpoint"])
    else:
        model = _model_for(cfg, observed.dims, rank)
    dn = cfg.denoise
    bcfg = BcdConfig(dn["iterations"], dn["lambda_s"], cfg.train_config("bcd"),
                     cfg.train_config("pretrain", epochs=dn["pretrain_epochs"]),
                     cfg.sampler["kind"], cfg.sampler_config("bcd", values=observed.values))
    truth = data.truth if isinstance(data.truth, DenseTensor) else None
    res = denoise_bcd(observed, model, bcfg, reference=truth, workers=cfg.workers)
    write_dense(out / "X.stdt", res.X)
    write_dense(out / "S.stdt", res.S)
    save_model(model, out / f"checkpoint_r{rank}")
    keys = list(res.history[0].keys()) if res.history else ["iteration"]
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in res.history:
            w.writerow([rec[k] if isinstance(rec[k], int) else repr(float(rec[k])) for k in keys])
    rows = [("split_violations", float(sum(r["split_violations"] for r in res.history)))]
    if truth is not None:
        noisy_vals = np.asarray(as_sparse(data.noisy).values)
        idx = tuple(observed.indices.T)
        ref = truth.values[idx]
        metrics = cfg.eval["metrics"]
        if "ssim" in metrics and len(observed) != truth.values.size:
            metrics = [m for m in metrics if m != "ssim"]
        if "ssim" in metrics:
            rep = evaluate(res.X.values, truth.values, metrics=metrics, peak=cfg.eval["peak"])
            base = evaluate(np.asarray(data.noisy.values), truth.values, metrics=metrics, peak=cfg.eval["peak"])
        else:
            rep = evaluate(res.x, ref, metrics=metrics, peak=cfg.eval["peak"])
            base = evaluate(noisy_vals, ref, metrics=metrics, peak=cfg.eval["peak"])
        rows += rep.rows(metrics)
        rows += [(f"observed_{name}", v) for name, v in base.rows(metrics)]
    write_metrics_csv(out / "metrics.csv", rows)


def _load_for_eval(path):
    with open(path, "rb") as fh:
        dense = fh.read(4) == MAGIC
    return read_dense(path) if dense else read_tensor(path)


def _read_mask(path, shape):
    with open(path, "rb") as fh:
        dense = fh.read(4) == MAGIC
    if dense:
        m = read_dense(path).values
        if m.shape != tuple(shape):
            raise ArgumentError(f"mask shape {m.shape} does not match {tuple(shape)}")
        return m != 0
    idx = read_index_list(path)
    if idx.shape[1] != len(shape):
        raise ArgumentError(f"mask lists {idx.shape[1]}-d indices for a {len(shape)}-d tensor")
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(idx.T)] = True
    return mask


def _align_sparse(pred, truth):
    """Values of ``pred`` reordered to the observations of ``truth``."""
    if tuple(pred.dims) != tuple(truth.dims) or len(pred) != len(truth):
        raise ArgumentError("prediction and truth hold different observation sets")

    def keys(t):
        cols = [t.indices[:, d].astype(np.float64) for d in range(t.order)]
        if t.timestamps is not None:
            cols.append(t.timestamps)
        return np.lexsort(cols[::-1]), np.stack(cols, axis=1)

    po, pk = keys(pred)
    to, tk = keys(truth)
    if not np.array_equal(pk[po], tk[to]):
        raise ArgumentError("prediction and truth hold different observation sets")
    out = np.empty(len(truth))
    out[to] = pred.values[po]
    return out


def run_eval(cfg, out):
    e = cfg.eval
    pred, truth = _load_for_eval(e["pred"]), _load_for_eval(e["truth"])
    metrics = list(e["metrics"])
    if isinstance(pred, DenseTensor) and isinstance(truth, DenseTensor):
        if pred.dims != truth.dims:
            raise ArgumentError(f"shape mismatch: {pred.dims} vs {truth.dims}")
        mask = _read_mask(e["mask"], truth.dims) if e["mask"] else None
        report = evaluate(pred.values, truth.values, mask, metrics, e["peak"])
    elif isinstance(pred, SparseTensor) and isinstance(truth, SparseTensor):
        if e["mask"]:
            raise ConfigurationError("masks apply to dense tensors only", ["eval.mask"])
        report = evaluate(_align_sparse(pred, truth), truth.values, None, metrics, e["peak"])
    else:
        raise ArgumentError("prediction and truth must both be dense or both be COO")
    report.write_csv(out / "metrics.csv", metrics)
    log.info("%s", ", ".join(f"{k}={v:.6g}" for k, v in report.rows(metrics)))


def run_plot(cfg, out):
    ckpt = cfg.model["checkpoint"]
    model = load_model(ckpt)
    meta = load_metadata(ckpt)
    scaler = ValueScaler(meta.get("shift", 0.0), meta.get("scale", 1.0))
    p = cfg.plot
    grid = np.linspace(p["lo"], p["hi"], p["points"])
    dx = grid_spacing(grid)
    data = load_data(cfg) if cfg.data["source"] == "sim-entries" else None
    rows = []
    for entry in p["entries"]:
        entry = [float(v) for v in entry]
        if len(entry) not in (model.order, model.order + 1):
            raise ConfigurationError(f"plot entry {entry} does not match a {model.order}-mode model", ["plot.entries"])
        index = np.array(entry[:model.order], dtype=np.int64)
        t = entry[model.order] if len(entry) > model.order else None
        if (t is None) != (model.variant != "temporal"):
            raise ConfigurationError("temporal models need a timestamp per plot entry", ["plot.entries"])
        name = "_".join(str(int(c)) for c in index)
        samples = truth = None
        if data is not None:
            hit = np.all(data.train.indices == index, axis=1)
            samples = data.train.values[hit]
            truth = true_density(cfg.data["distribution"], float(data.entry_params[tuple(index)]), grid)
        density = plot_density(model, index, grid, out / f"density_{name}", samples, t, truth, scaler.forward)
        rows.append((f"modes_{name}", float(count_modes(density))))
        if truth is not None:
            rows.append((f"tv_{name}", total_variation(density, truth, dx)))
    write_metrics_csv(out / "metrics.csv", rows)


RUNNERS = {"generate": run_generate, "train": run_train, "complete": run_complete,
           "denoise": run_denoise, "eval": run_eval, "plot": run_plot}


def run(cfg):
    """Execute a validated config; artifacts go to ``cfg.out``."""
    out = Path(cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, out)
    RUNNERS[cfg.task](cfg, out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="scoretensor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {version_string()}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML file or preset name ({', '.join(preset_names())})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.epochs=10 (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--workers", type=int, help="worker threads (1 = reproducible mode)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in TASKS:
        sub.add_parser(verb, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args.config, args.set, task=args.verb, seed=args.seed,
                           workers=args.workers, out=args.out)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for field in exc.fields:
            print(f"  invalid field: {field}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ScoreTensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
