"""Model checkpoints: one dense binary file per array plus text sidecars.

A checkpoint directory holds

* ``manifest.txt`` - one line ``name d1 d2 ...`` per stored array;
* ``<name>.stdt`` - the array in the dense binary tensor format;
* ``model.yaml`` - the hyperparameters needed to rebuild the model;
* ``metadata.yaml`` - optional run information such as value scaling.
"""

from pathlib import Path

import numpy as np
import yaml

from .energy import build_model
from .errors import FormatError
from .io import read_dense, write_dense
from .tensor import DenseTensor

MANIFEST = "manifest.txt"
HYPERPARAMETERS = "model.yaml"
METADATA = "metadata.yaml"


def save_model(model, directory, metadata=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = model.state_arrays()
    lines = []
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        write_dense(directory / f"{name}.stdt", DenseTensor(a.shape, a))
        lines.append(" ".join([name] + [str(n) for n in a.shape]))
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    (directory / HYPERPARAMETERS).write_text(yaml.safe_dump(model.hyperparameters(), sort_keys=True))
    if metadata:
        (directory / METADATA).write_text(yaml.safe_dump(metadata, sort_keys=True))
    return directory


def load_metadata(directory):
    path = Path(directory) / METADATA
    return yaml.safe_load(path.read_text()) if path.is_file() else {}


def read_manifest(directory):
    entries = {}
    for line in (Path(directory) / MANIFEST).read_text().splitlines():
        if not line.strip():
            continue
        name, *shape = line.split()
        entries[name] = tuple(int(n) for n in shape)
    return entries


def load_model(directory):
    """Rebuild the model described by ``model.yaml`` and fill in every stored array."""
    directory = Path(directory)
    try:
        hp = yaml.safe_load((directory / HYPERPARAMETERS).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{directory}: not a checkpoint (no {HYPERPARAMETERS})") from exc
    kwargs = dict(fusion=hp.get("fusion", "concat"), depth=hp.get("depth", 2))
    if "time_encoder" in hp:
        kwargs["time_features"] = hp["time_encoder"]["features"]
    if "coord_encoder" in hp:
        kwargs["coord_features"] = hp["coord_encoder"]["features"]
    model = build_model(hp["variant"], hp["dims"], hp["rank"], hp["width"], seed=0, **kwargs)
    for name in ("time_encoder", "coord_encoder"):
        enc = getattr(model, name)
        if enc is not None:
            enc.scale = float(hp[name]["scale"])
            enc.trainable = bool(hp[name]["trainable"])
    arrays = model.state_arrays()
    manifest = read_manifest(directory)
    if set(manifest) != set(arrays):
        missing = sorted(set(arrays) ^ set(manifest))
        raise FormatError(f"{directory}: manifest and model disagree on {missing}")
    for name, shape in manifest.items():
        stored = read_dense(directory / f"{name}.stdt")
        if tuple(stored.dims) != shape or shape != np.shape(arrays[name]):
            raise FormatError(f"{directory}: {name} has shape {stored.dims}, expected {np.shape(arrays[name])}")
        arrays[name][...] = np.asarray(stored.values).reshape(shape)
    return model
