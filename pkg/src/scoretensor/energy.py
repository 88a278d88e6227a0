"""The entry/factor energy E(x, z[, t]) and its score dE/dx.

Three variants share one interface:

* ``tabular``  - z is gathered from learnable per-mode factor tables;
* ``temporal`` - as tabular, plus a Fourier-encoded timestamp;
* ``implicit`` - z is produced from the normalised index by a Fourier
  feature encoder followed by an affine projection.

The value encoder, the factor encoder and the head are softplus MLPs so that
the energy is twice differentiable in x. The head is a two-hidden-layer MLP
rather than a single affine map: with concatenation fusion an affine head
would make E separable in (x, z) and the score blind to the factors.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ConfigurationError
from .nn import FourierEncoder, MlpParams, fourier_encode, init_params, mlp_forward
from .rng import derive_seed
from .tensor import FactorSet, check_index

VARIANTS = ("tabular", "temporal", "implicit")
FUSIONS = ("concat", "sum")


@dataclass
class EnergyModel:
    variant: str
    dims: tuple
    rank: int
    width: int
    value_net: MlpParams
    factor_net: MlpParams
    head: MlpParams
    fusion: str = "concat"
    factors: FactorSet = None
    time_encoder: FourierEncoder = None
    time_net: MlpParams = None
    coord_encoder: FourierEncoder = None
    coord_net: MlpParams = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}", ["variant"])
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"unknown fusion {self.fusion!r}", ["fusion"])
        self.dims = tuple(int(n) for n in self.dims)
        if (self.factors is None) == (self.coord_encoder is None):
            raise ConfigurationError("exactly one factor source (table or coordinate encoder) must be set")
        if (self.variant == "temporal") != (self.time_encoder is not None):
            raise ConfigurationError("a time encoder is required by, and only by, the temporal variant")
        if self.head.out_dim != 1:
            raise ArgumentError("energy head must produce a scalar")
        widths = [self.value_net.out_dim, self.factor_net.out_dim]
        if self.time_net is not None:
            widths.append(self.time_net.out_dim)
        expected = widths[0] if self.fusion == "sum" else int(np.sum(widths))
        if self.fusion == "sum" and len(set(widths)) != 1:
            raise ArgumentError(f"sum fusion needs equal encoder widths, got {widths}")
        if self.head.in_dim != expected:
            raise ArgumentError(f"head input {self.head.in_dim} != fused width {expected}")
        if self.factor_net.in_dim != self.order * self.rank:
            raise ArgumentError("factor encoder input must be D*R")

    @property
    def order(self):
        return len(self.dims)

    def _nets(self):
        nets = {"value_net": self.value_net, "factor_net": self.factor_net, "head": self.head}
        if self.time_net is not None:
            nets["time_net"] = self.time_net
        if self.coord_net is not None:
            nets["coord_net"] = self.coord_net
        return nets

    def parameters(self):
        """Trainable arrays by name. The arrays are the model's own storage."""
        params = {}
        for prefix, net in self._nets().items():
            params.update(net.named(prefix))
        if self.factors is not None:
            for d, m in enumerate(self.factors.matrices):
                params[f"factors.{d}"] = m
        for name, enc in (("time_encoder", self.time_encoder), ("coord_encoder", self.coord_encoder)):
            if enc is not None and enc.trainable:
                params[f"{name}.B"] = enc.B
        return params

    def state_arrays(self):
        """Every array needed to restore the model, trainable or not."""
        arrays = dict(self.parameters())
        for name, enc in (("time_encoder", self.time_encoder), ("coord_encoder", self.coord_encoder)):
            if enc is not None:
                arrays[f"{name}.B"] = enc.B
        return arrays

    def hyperparameters(self):
        hp = {"variant": self.variant, "dims": list(self.dims), "rank": self.rank,
              "width": self.width, "fusion": self.fusion,
              "depth": len(self.value_net.weights)}
        for name, enc in (("time_encoder", self.time_encoder), ("coord_encoder", self.coord_encoder)):
            if enc is not None:
                hp[name] = {"features": enc.out_dim // 2, "scale": float(enc.scale),
                            "trainable": bool(enc.trainable)}
        return hp

    def bind(self, tape=None):
        """Snapshot the parameters as tape leaves (or as constants without a tape)."""
        return BoundEnergy(self, tape)


def build_model(variant, dims, rank, width, seed, fusion="concat", depth=2,
                time_features=32, time_scale=10.0, coord_features=None, coord_scale=10.0,
                factor_scale=1.0):
    """Freshly initialised energy model.

    Every MLP has ``depth`` softplus layers of ``width`` units; the head adds an
    affine scalar output. Frequencies of the Fourier encoders are drawn from
    N(0, scale^2) and kept fixed.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}", ["variant"])
    dims = tuple(int(n) for n in dims)
    D, R, W = len(dims), int(rank), int(width)
    if R < 1 or W < 1 or depth < 1:
        raise ConfigurationError("rank, width and depth must be positive", ["rank", "width"])
    hidden = [W] * depth
    value_net = init_params([1] + hidden, derive_seed(seed, "value_net"), final_activation="softplus")
    factor_net = init_params([D * R] + hidden, derive_seed(seed, "factor_net"), final_activation="softplus")
    parts = [W, W]
    factors = time_encoder = time_net = coord_encoder = coord_net = None
    if variant == "temporal":
        time_encoder = FourierEncoder.random(int(time_features), 1, time_scale, derive_seed(seed, "time_encoder"))
        time_net = init_params([time_encoder.out_dim, W], derive_seed(seed, "time_net"),
                               final_activation="softplus")
        parts.append(W)
    if variant == "implicit":
        m = int(coord_features) if coord_features else max(1, R // 2)
        coord_encoder = FourierEncoder.random(m, D, coord_scale, derive_seed(seed, "coord_encoder"))
        coord_net = init_params([coord_encoder.out_dim, D * R], derive_seed(seed, "coord_net"))
    else:
        rng = np.random.default_rng(derive_seed(seed, "factors"))
        factors = FactorSet([rng.normal(0.0, factor_scale, size=(n, R)) for n in dims])
    fused = W if fusion == "sum" else int(np.sum(parts))
    head = init_params([fused] + hidden + [1], derive_seed(seed, "head"))
    return EnergyModel(variant, dims, R, W, value_net, factor_net, head, fusion,
                       factors, time_encoder, time_net, coord_encoder, coord_net)


def normalize_coords(indices, dims):
    """Map each coordinate to [0, 1] via i_d / (I_d - 1) (0 for singleton modes)."""
    indices = np.asarray(indices, dtype=np.float64)
    denom = np.maximum(np.asarray(dims, dtype=np.float64) - 1.0, 1.0)
    return indices / denom


class BoundEnergy:
    """An :class:`EnergyModel` whose parameters live on a tape (or as constants)."""

    def __init__(self, model, tape=None):
        self.model = model
        self.tape = tape
        arrays = model.state_arrays()
        trainable = model.parameters()
        self.nodes = {}
        for name, value in arrays.items():
            if tape is not None and name in trainable:
                self.nodes[name] = tape.var(value)
            else:
                self.nodes[name] = ad.constant(value)
        self.value_net = model.value_net.bind(self.nodes, "value_net")
        self.factor_net = model.factor_net.bind(self.nodes, "factor_net")
        self.head = model.head.bind(self.nodes, "head")
        self.time_net = model.time_net.bind(self.nodes, "time_net") if model.time_net else None
        self.coord_net = model.coord_net.bind(self.nodes, "coord_net") if model.coord_net else None
        self.time_encoder = self.coord_encoder = None
        if model.time_encoder is not None:
            e = model.time_encoder
            self.time_encoder = FourierEncoder(self.nodes["time_encoder.B"], e.scale, e.trainable)
        if model.coord_encoder is not None:
            e = model.coord_encoder
            self.coord_encoder = FourierEncoder(self.nodes["coord_encoder.B"], e.scale, e.trainable)

    def trainable_nodes(self):
        names = self.model.parameters().keys()
        return {name: self.nodes[name] for name in names}

    def factor_of(self, indices, coord_noise=None):
        """Per-entry factor vectors, shape (n, D*R).

        ``coord_noise`` perturbs the normalised coordinates of the implicit
        variant; it is ignored by tabular factors.
        """
        model = self.model
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, model.order)
        if indices.size and (indices.min() < 0 or np.any(indices >= np.asarray(model.dims))):
            bad = indices[np.any((indices < 0) | (indices >= np.asarray(model.dims)), axis=1)][0]
            check_index(bad, model.dims)
        if model.variant == "implicit":
            coords = normalize_coords(indices, model.dims)
            if coord_noise is not None:
                coords = coords + coord_noise
            feats = fourier_encode(self.coord_encoder, ad.constant(coords))
            return mlp_forward(self.coord_net, feats)
        rows = [ad.take(self.nodes[f"factors.{d}"], indices[:, d]) for d in range(model.order)]
        return rows[0] if len(rows) == 1 else ad.concat(rows, axis=1)

    def energy(self, x, z, t=None):
        """Energies of a batch: x (n,), z (n, D*R), t (n,) or None -> node (n,)."""
        model = self.model
        if (t is None) != (model.variant != "temporal"):
            raise ArgumentError("timestamps are required by, and only by, the temporal variant")
        x = x if isinstance(x, ad.Node) else ad.constant(x)
        n = x.value.size
        if z.value.shape != (n, model.order * model.rank):
            raise ArgumentError(f"factor batch has shape {z.value.shape}, expected {(n, model.order * model.rank)}")
        parts = [mlp_forward(self.value_net, ad.reshape(x, (n, 1))), mlp_forward(self.factor_net, z)]
        if t is not None:
            tt = ad.constant(np.asarray(t, dtype=np.float64).reshape(n, 1))
            parts.append(mlp_forward(self.time_net, fourier_encode(self.time_encoder, tt)))
        if model.fusion == "sum":
            fused = parts[0]
            for p in parts[1:]:
                fused = ad.add(fused, p)
        else:
            fused = ad.concat(parts, axis=1)
        return ad.reshape(mlp_forward(self.head, fused), (n,))

    def score(self, x, z, t=None):
        """dE/dx per entry as a node that stays differentiable in the parameters."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        leaf = self.tape.var(x) if self.tape is not None else ad.constant(x)
        return ad.input_derivative(lambda xv: self.energy(xv, z, t), leaf)

    def energy_at(self, x, indices, t=None):
        return self.energy(x, self.factor_of(indices), t)

    def score_at(self, x, indices, t=None):
        return self.score(x, self.factor_of(indices), t)


def energy_values(model, x, indices, t=None):
    """Plain-array energies for a batch of (x, index[, t])."""
    return model.bind().energy_at(np.asarray(x, dtype=np.float64), indices, t).value.copy()


def score_values(model, x, indices, t=None):
    return model.bind().score_at(x, indices, t).value.copy()
