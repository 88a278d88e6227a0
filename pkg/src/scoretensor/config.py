"""Experiment configuration: YAML documents, shipped presets and ``--set`` overrides.

A config is a nested mapping with the sections below. A document may name a
``base`` preset whose values it overrides. All randomness derives from the
root ``seed``.
"""

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .dsm import TrainConfig
from .errors import ConfigurationError, ParameterError
from .rng import derive_seed
from .samplers import GridConfig, LangevinConfig
from .tensor import make_noise_schedule

TASKS = ("generate", "train", "complete", "denoise", "eval", "plot")
SOURCES = ("file", "sim-entries", "sim-continuous", "synthetic-lowrank", "image")

DEFAULTS = {
    "task": None,
    "seed": 0,
    "workers": 1,
    "out": None,
    "base": None,
    "data": {
        "source": "file",
        "train": None,
        "test": None,
        "truth": None,
        "noisy": None,
        "dims": None,
        "rank": 5,
        "distribution": "mog",
        "samples_per_entry": 200,
        "missing": {"mode": None, "rate": None, "bursts": None},
        "noise": {"case": None, "impulse_rate": 0.0, "impulse_magnitude": 1.0},
        "standardize": False,
    },
    "model": {
        "variant": "tabular",
        "rank": 5,
        "width": 64,
        "depth": 2,
        "fusion": "concat",
        "time_features": 32,
        "time_scale": 10.0,
        "coord_features": None,
        "coord_scale": 10.0,
        "checkpoint": None,
    },
    "train": {
        "epochs": 100,
        "batch_size": 256,
        "sigma_max": 0.2,
        "sigma_min": 0.01,
        "levels": 10,
        "lr": 1e-3,
        "level_mode": "all",
        "smooth_weight": 0.0,
        "smooth_sigma": None,
    },
    "sampler": {
        "kind": "langevin",
        "eps": 2e-5,
        "steps": 100,
        "sigma_max": None,
        "sigma_min": None,
        "levels": None,
        "final_denoise": False,
        "lo": "auto",
        "hi": "auto",
        "points": 256,
    },
    "denoise": {
        "iterations": 5,
        "lambda_s": 0.1,
        "pretrain_epochs": 100,
    },
    "eval": {
        "pred": None,
        "truth": None,
        "mask": None,
        "metrics": ["rmse", "mae"],
        "peak": 1.0,
    },
    "plot": {
        "entries": [[0, 0]],
        "lo": -1.5,
        "hi": 2.0,
        "points": 701,
    },
}

REQUIRED = {
    "generate": [],
    "train": [],
    "complete": [],
    "denoise": [],
    "eval": ["eval.pred", "eval.truth"],
    "plot": ["model.checkpoint"],
}


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("scoretensor.presets").iterdir()
                  if p.name.endswith(".yaml"))


def read_preset(name):
    path = resources.files("scoretensor.presets") / f"{name}.yaml"
    if not path.is_file():
        raise ConfigurationError(f"unknown preset {name!r} (available: {', '.join(preset_names())})", ["base"])
    return yaml.safe_load(path.read_text()) or {}


def merge(base, override):
    """Recursive dictionary update; the override wins on scalars and lists."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _unknown_keys(doc, ref, prefix=""):
    bad = []
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in ref:
            bad.append(path)
        elif isinstance(ref[key], dict):
            if isinstance(value, dict):
                bad.extend(_unknown_keys(value, ref[key], path + "."))
            elif value is not None:
                bad.append(path)
    return bad


def _resolve(doc, seen=()):
    """Expand ``base`` chains into one document (innermost preset first)."""
    base = doc.get("base")
    if not base:
        return doc
    if base in seen:
        raise ConfigurationError(f"preset cycle through {base!r}", ["base"])
    return merge(_resolve(read_preset(base), seen + (base,)), doc)


def load_document(source):
    """A config mapping from a YAML file path or a preset name."""
    if source is None:
        return {}
    path = Path(source)
    if path.is_file():
        doc = yaml.safe_load(path.read_text()) or {}
    else:
        doc = {"base": str(source)}
        read_preset(str(source))
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{source}: a config must be a mapping")
    doc.pop("run", None)
    return doc


def parse_override(item):
    """``a.b.c=value`` -> (["a", "b", "c"], parsed YAML value)."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value", [item])
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw != "" else None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse value of {key}: {exc}", [key]) from exc
    return key.strip().split("."), value


def apply_overrides(doc, overrides):
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        keys, value = parse_override(item)
        node = doc
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return doc


@dataclass
class ExperimentConfig:
    """A validated configuration. Sections are plain mappings."""

    task: str
    seed: int
    workers: int
    out: str
    base: str
    data: dict
    model: dict
    train: dict
    sampler: dict
    denoise: dict
    eval: dict
    plot: dict

    def as_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    def seed_for(self, *labels):
        return derive_seed(self.seed, *labels)

    @property
    def ranks(self):
        r = self.model["rank"]
        return [int(v) for v in r] if isinstance(r, (list, tuple)) else [int(r)]

    def schedule(self):
        t = self.train
        return make_noise_schedule(t["sigma_max"], t["sigma_min"], t["levels"])

    def train_config(self, *labels, epochs=None):
        t = self.train
        return TrainConfig(
            epochs=t["epochs"] if epochs is None else epochs,
            batch_size=t["batch_size"], schedule=self.schedule(), lr=t["lr"],
            seed=self.seed_for("train", *labels), smooth_weight=t["smooth_weight"],
            smooth_sigma=t["smooth_sigma"], level_mode=t["level_mode"])

    def langevin_config(self, *labels):
        s, t = self.sampler, self.train
        sched = make_noise_schedule(
            s["sigma_max"] if s["sigma_max"] is not None else t["sigma_max"],
            s["sigma_min"] if s["sigma_min"] is not None else t["sigma_min"],
            s["levels"] if s["levels"] is not None else t["levels"])
        return LangevinConfig(sched, s["eps"], s["steps"], self.seed_for("sampler", *labels),
                              s["final_denoise"])

    def grid_config(self, values=None, margin=0.1):
        """Grid bounds; ``auto`` spans ``values`` widened by ``margin`` of their range."""
        s = self.sampler
        lo, hi = s["lo"], s["hi"]
        if "auto" in (lo, hi):
            if values is None or not len(values):
                raise ConfigurationError("automatic grid bounds need observations", ["sampler.lo", "sampler.hi"])
            vmin, vmax = float(min(values)), float(max(values))
            pad = margin * (vmax - vmin if vmax > vmin else 1.0)
            lo = vmin - pad if lo == "auto" else lo
            hi = vmax + pad if hi == "auto" else hi
        return GridConfig(float(lo), float(hi), s["points"])

    def sampler_config(self, *labels, values=None):
        if self.sampler["kind"] == "grid":
            return self.grid_config(values)
        return self.langevin_config(*labels)


def _get(doc, dotted):
    node = doc
    for k in dotted.split("."):
        node = node.get(k) if isinstance(node, dict) else None
    return node


def _check(doc):
    """Every offending field of a merged document, as dotted paths."""
    bad = []

    def positive_int(path, allow_zero=False):
        v = _get(doc, path)
        ok = isinstance(v, int) and not isinstance(v, bool) and (v >= 0 if allow_zero else v > 0)
        if not ok:
            bad.append(path)

    def positive(path, allow_none=False):
        v = _get(doc, path)
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            bad.append(path)

    if doc["task"] not in TASKS:
        bad.append("task")
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
        bad.append("seed")
    positive_int("workers")
    if doc["data"]["source"] not in SOURCES:
        bad.append("data.source")
    ranks = doc["model"]["rank"]
    ranks = ranks if isinstance(ranks, list) else [ranks]
    if not ranks or any(not isinstance(r, int) or isinstance(r, bool) or r < 1 for r in ranks):
        bad.append("model.rank")
    if doc["model"]["variant"] not in ("tabular", "temporal", "implicit"):
        bad.append("model.variant")
    if doc["model"]["fusion"] not in ("concat", "sum"):
        bad.append("model.fusion")
    for p in ("model.width", "model.depth", "model.time_features", "train.batch_size",
              "train.levels", "sampler.points", "denoise.iterations", "plot.points"):
        positive_int(p)
    for p in ("train.epochs", "sampler.steps", "denoise.pretrain_epochs"):
        positive_int(p, allow_zero=True)
    for p in ("model.time_scale", "model.coord_scale", "train.sigma_max", "train.sigma_min", "train.lr",
              "sampler.eps", "eval.peak"):
        positive(p)
    for p in ("train.smooth_sigma", "sampler.sigma_max", "sampler.sigma_min"):
        positive(p, allow_none=True)
    if doc["model"]["coord_features"] is not None:
        positive_int("model.coord_features")
    if doc["sampler"]["levels"] is not None:
        positive_int("sampler.levels")
    t = doc["train"]
    if "train.sigma_max" not in bad and "train.sigma_min" not in bad and not t["sigma_max"] > t["sigma_min"]:
        bad.extend(["train.sigma_max", "train.sigma_min"])
    if "train.levels" not in bad and t["levels"] < 2:
        bad.append("train.levels")
    if t["level_mode"] not in ("all", "one"):
        bad.append("train.level_mode")
    if not isinstance(t["smooth_weight"], (int, float)) or t["smooth_weight"] < 0:
        bad.append("train.smooth_weight")
    if doc["sampler"]["kind"] not in ("langevin", "grid"):
        bad.append("sampler.kind")
    lam = doc["denoise"]["lambda_s"]
    if not isinstance(lam, (int, float)) or lam < 0:
        bad.append("denoise.lambda_s")
    miss = doc["data"]["missing"]
    if miss["mode"] not in (None, "random", "burst"):
        bad.append("data.missing.mode")
    if miss["rate"] is not None and not (isinstance(miss["rate"], (int, float)) and 0 < miss["rate"] < 1):
        bad.append("data.missing.rate")
    case = doc["data"]["noise"]["case"]
    if case is not None and case not in range(1, 7):
        bad.append("data.noise.case")
    if doc["task"] in TASKS:
        for p in REQUIRED[doc["task"]]:
            if _get(doc, p) in (None, ""):
                bad.append(p)
        bad.extend(_task_data_fields(doc))
    for p in ("data.train", "data.test", "data.truth", "data.noisy", "model.checkpoint",
              "eval.pred", "eval.truth", "eval.mask"):
        v = _get(doc, p)
        if v not in (None, "") and not Path(v).exists():
            bad.append(p)
    return bad


def _task_data_fields(doc):
    """Fields a task needs from the data section."""
    data, task = doc["data"], doc["task"]
    src = data["source"]
    bad = []
    if task in ("eval", "plot") or src not in SOURCES:
        return bad
    if src == "file":
        if task == "denoise" and data["noisy"] is None:
            bad.append("data.noisy")
        if task in ("train", "complete", "generate") and data["train"] is None:
            bad.append("data.train")
        if task == "complete" and data["test"] is None and data["missing"]["mode"] is None:
            bad.append("data.test")
    elif src == "image" and data["truth"] is None:
        bad.append("data.truth")
    if src in ("sim-entries", "sim-continuous", "synthetic-lowrank") and data["dims"] is None:
        bad.append("data.dims")
    if src == "sim-continuous" and task == "complete" and data["missing"]["mode"] is None:
        bad.append("data.missing.mode")
    return bad


def build_config(source=None, overrides=(), task=None, seed=None, workers=None, out=None):
    """Load, merge onto the defaults, apply overrides and validate.

    Command-line style arguments (``task``, ``seed``, ``workers``, ``out``)
    take precedence over the document. Raises :class:`ConfigurationError`
    naming every invalid field.
    """
    doc = apply_overrides(load_document(source), overrides)
    for key, value in (("task", task), ("seed", seed), ("workers", workers), ("out", out)):
        if value is not None:
            doc[key] = value
    unknown = _unknown_keys(doc, DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config fields: {', '.join(unknown)}", unknown)
    doc = merge(DEFAULTS, _resolve(doc))
    unknown = _unknown_keys(doc, DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config fields: {', '.join(unknown)}", unknown)
    bad = _check(doc)
    if bad:
        raise ConfigurationError(f"invalid config fields: {', '.join(dict.fromkeys(bad))}", list(dict.fromkeys(bad)))
    try:
        make_noise_schedule(doc["train"]["sigma_max"], doc["train"]["sigma_min"], doc["train"]["levels"])
    except ParameterError as exc:
        raise ConfigurationError(str(exc), ["train.sigma_max", "train.sigma_min", "train.levels"]) from exc
    return ExperimentConfig(**{k: doc[k] for k in DEFAULTS})
