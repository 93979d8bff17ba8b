"""Network assembly: weight units, vector units, their pairing into units
that transform a cloud pair, and the full rotation-estimation model.

A weight unit turns clouds into rotation-invariant per-point weights (its
input enters only through Gram tensors). A vector unit transforms the cloud
itself rotation-equivariantly (complex-linear mixes and radial activations).
Their pointwise product is one unit step; chaining steps and summing the
final clouds gives a pair of scalars, and the rotation estimate is the
second scalar times the conjugate of the first. The estimate is left
unnormalized on purpose: its modulus is free, only its response to
rotations of either input cloud is pinned down.

Variant vocabulary: `ns`/`nc` are the single-special-point units (weights
equivariant under the stabilizer of index 0, used inside the sum-over-
relabelings forward), `ns_plus`/`nc_plus` the fully permutation-equivariant
ones used by the trainable models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .cloud import CloudPair, PointCloud
from .engine import Tensor
from .layers import (CLinearWeights, ComplexReluParams, FcLayerWeights,
                     SmLayerWeights, Stab0LayerWeights, apply_complex_linear,
                     apply_fc_layer, apply_sm_layer, apply_stab0_layer,
                     complex_relu, gram_tensor, invarize_rows,
                     l2_normalize_channels, leaky_activation)
from .params import ParamStore


@dataclass(frozen=True)
class WeightUnitConfig:
    variant: str  # "ns" or "ns_plus"
    early_channels: tuple
    late_channels: tuple
    two_cloud: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.variant not in ("ns", "ns_plus"):
            raise ValueError(f"unknown weight-unit variant {self.variant!r}")
        if self.variant == "ns" and self.two_cloud:
            raise ValueError("the ns weight unit takes a single cloud")
        if not self.early_channels or not self.late_channels:
            raise ValueError("need at least one early and one late layer")


@dataclass(frozen=True)
class VectorUnitConfig:
    variant: str  # "nc" or "nc_plus"
    channels: tuple

    def __post_init__(self):
        if self.variant not in ("nc", "nc_plus"):
            raise ValueError(f"unknown vector-unit variant {self.variant!r}")
        if not self.channels:
            raise ValueError("need at least one layer")


@dataclass(frozen=True)
class ZZUnitConfig:
    weight: WeightUnitConfig
    vector: VectorUnitConfig

    def __post_init__(self):
        if self.weight.late_channels[-1] != self.vector.channels[-1]:
            raise ValueError("weight and vector units must end in the same "
                             "channel count (their outputs are multiplied)")


@dataclass(frozen=True)
class ModelConfig:
    kind: str  # "zz_net", "nr" or "nr_plus"
    units: tuple

    def __post_init__(self):
        if self.kind not in ("zz_net", "nr", "nr_plus"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("nr", "nr_plus") and len(self.units) != 1:
            raise ValueError(f"{self.kind} models have exactly one unit")
        for u in self.units:
            if self.kind == "zz_net" and not (u.weight.variant == "ns_plus"
                                              and u.weight.two_cloud
                                              and u.vector.variant == "nc_plus"):
                raise ValueError("zz_net units pair a two-cloud ns_plus weight "
                                 "unit with an nc_plus vector unit")
        if self.kind == "nr" and (self.units[0].weight.variant != "ns"
                                  or self.units[0].vector.variant != "nc"):
            raise ValueError("nr pairs an ns weight unit with an nc vector unit")
        if self.kind == "nr_plus" and (self.units[0].weight.variant != "ns_plus"
                                       or self.units[0].vector.variant != "nc_plus"):
            raise ValueError("nr_plus pairs ns_plus with nc_plus")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "units": [{
                "weight": {"variant": u.weight.variant,
                           "early_channels": list(u.weight.early_channels),
                           "late_channels": list(u.weight.late_channels),
                           "two_cloud": u.weight.two_cloud,
                           "normalize": u.weight.normalize},
                "vector": {"variant": u.vector.variant,
                           "channels": list(u.vector.channels)},
            } for u in self.units],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        units = tuple(
            ZZUnitConfig(
                weight=WeightUnitConfig(
                    variant=u["weight"]["variant"],
                    early_channels=tuple(u["weight"]["early_channels"]),
                    late_channels=tuple(u["weight"]["late_channels"]),
                    two_cloud=u["weight"]["two_cloud"],
                    normalize=u["weight"]["normalize"]),
                vector=VectorUnitConfig(
                    variant=u["vector"]["variant"],
                    channels=tuple(u["vector"]["channels"])),
            ) for u in d["units"])
        return cls(kind=d["kind"], units=units)


class WeightUnitNSPlus:
    """Permutation-equivariant weight unit: Gram tensors through early 2->2
    layers, row-sum invarization, late 1->1 layers, channel normalization."""

    def __init__(self, store: ParamStore, name: str, cfg: WeightUnitConfig,
                 in_cloud_ch: int):
        self.cfg = cfg
        in_ch = 2 * in_cloud_ch if cfg.two_cloud else in_cloud_ch
        self.early = []
        for i, ch in enumerate(cfg.early_channels):
            self.early.append(SmLayerWeights.create(store, f"{name}/early{i}",
                                                    in_ch, ch, "early"))
            in_ch = ch
        self.late = []
        for i, ch in enumerate(cfg.late_channels):
            self.late.append(SmLayerWeights.create(store, f"{name}/late{i}",
                                                   in_ch, ch, "late"))
            in_ch = ch

    def __call__(self, zc: Tensor, xc: Tensor = None) -> Tensor:
        h = gram_tensor(zc)
        if self.cfg.two_cloud:
            if xc is None:
                raise ValueError("two-cloud weight unit needs both clouds")
            h = en.concat([h, gram_tensor(xc)], axis=1)
        for w in self.early:
            h = leaky_activation(apply_sm_layer(h, w))
        v = invarize_rows(h)
        for i, w in enumerate(self.late):
            v = apply_sm_layer(v, w)
            if i + 1 < len(self.late):
                v = leaky_activation(v)
        if self.cfg.normalize:
            v = l2_normalize_channels(v)
        return v


class WeightUnitNS:
    """Stab0-equivariant weight unit: fused first layer from the cloud,
    vector layers, sum invarization, then fully connected layers to one
    invariant scalar."""

    def __init__(self, store: ParamStore, name: str, cfg: WeightUnitConfig,
                 in_cloud_ch: int = 1):
        self.cfg = cfg
        in_ch = in_cloud_ch
        self.early = []
        for i, ch in enumerate(cfg.early_channels):
            stage = "first" if i == 0 else "later"
            self.early.append(Stab0LayerWeights.create(store, f"{name}/early{i}",
                                                       in_ch, ch, stage))
            in_ch = ch
        self.late = []
        for i, ch in enumerate(cfg.late_channels):
            self.late.append(FcLayerWeights.create(store, f"{name}/late{i}", in_ch, ch))
            in_ch = ch

    def __call__(self, zc: Tensor) -> Tensor:
        h = zc
        for w in self.early:
            h = leaky_activation(apply_stab0_layer(h, w))
        v = en.tsum(h, axis=-1)  # collapse points to one scalar per channel
        for i, w in enumerate(self.late):
            v = apply_fc_layer(v, w)
            if i + 1 < len(self.late):
                v = leaky_activation(v)
        return v


class VectorUnit:
    """Rotation-equivariant cloud transform: complex-linear channel mixes
    with radial activations between them (none after the last layer)."""

    def __init__(self, store: ParamStore, name: str, cfg: VectorUnitConfig,
                 in_cloud_ch: int):
        self.cfg = cfg
        with_mean = cfg.variant == "nc_plus"
        in_ch = in_cloud_ch
        self.layers, self.relus = [], []
        for i, ch in enumerate(cfg.channels):
            self.layers.append(CLinearWeights.create(store, f"{name}/lin{i}",
                                                     in_ch, ch, with_mean))
            if i + 1 < len(cfg.channels):
                self.relus.append(ComplexReluParams.create(store, f"{name}/relu{i}", ch))
            in_ch = ch

    def __call__(self, zc: Tensor) -> Tensor:
        h = zc
        for i, w in enumerate(self.layers):
            h = apply_complex_linear(h, w)
            if i < len(self.relus):
                h = complex_relu(h, self.relus[i].eta.tensor)
        return h


class ZZUnit:
    """One step of the pair recursion; the same weights act on both orders."""

    def __init__(self, store: ParamStore, name: str, cfg: ZZUnitConfig,
                 in_cloud_ch: int):
        self.cfg = cfg
        self.weight = WeightUnitNSPlus(store, f"{name}/weight", cfg.weight, in_cloud_ch)
        self.vector = VectorUnit(store, f"{name}/vector", cfg.vector, in_cloud_ch)
        self.out_channels = cfg.vector.channels[-1]

    def step(self, zc: Tensor, xc: Tensor):
        az = self.weight(zc, xc)
        ax = self.weight(xc, zc)
        return en.mul(az, self.vector(zc)), en.mul(ax, self.vector(xc))


class Model:
    """A built network: config, parameter store, and unit objects."""

    def __init__(self, config: ModelConfig, store: ParamStore):
        self.config = config
        self.store = store
        self.units = []
        ch = 1
        for i, ucfg in enumerate(config.units):
            if config.kind == "zz_net":
                unit = ZZUnit(store, f"unit{i}", ucfg, ch)
                ch = unit.out_channels
            else:
                wu_cls = WeightUnitNS if ucfg.weight.variant == "ns" else WeightUnitNSPlus
                unit = (wu_cls(store, f"unit{i}/weight", ucfg.weight, ch),
                        VectorUnit(store, f"unit{i}/vector", ucfg.vector, ch))
            self.units.append(unit)

    @property
    def n_params(self) -> int:
        return self.store.n_real_params

    # ---- batched forward passes (arrays shaped (batch, m)) ----

    def pair_scalars(self, z, x):
        """Run the pair recursion; returns (F(Z, X), F(X, Z)) as tensors."""
        if self.config.kind != "zz_net":
            raise ValueError("pair forward is defined for zz_net models")
        zc = _as_cloud_tensor(z)
        xc = _as_cloud_tensor(x)
        for unit in self.units:
            zc, xc = unit.step(zc, xc)
        return en.tsum(zc, axis=(1, 2)), en.tsum(xc, axis=(1, 2))

    def rotation_estimate(self, z, x) -> Tensor:
        f_zx, f_xz = self.pair_scalars(z, x)
        return en.mul(f_xz, en.conj(f_zx))

    def single_cloud_scalar(self, z) -> Tensor:
        """Sum-over-relabelings forward for nr, direct product for nr_plus."""
        if self.config.kind == "nr":
            return _nr_scalar(self, z)
        if self.config.kind == "nr_plus":
            wu, vu = self.units[0]
            zc = _as_cloud_tensor(z)
            prod = en.mul(wu(zc), vu(zc))
            return en.tsum(prod, axis=(1, 2))
        raise ValueError("single-cloud forward is defined for nr/nr_plus models")


def _as_cloud_tensor(z) -> Tensor:
    if isinstance(z, Tensor):
        return z
    arr = np.asarray(z, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim == 2:
        arr = arr[:, None, :]
    return Tensor(arr)


def _tau_stack(z: np.ndarray) -> np.ndarray:
    """All relabelings that swap some index into slot 0: (B, m) -> (B*m, m)."""
    B, m = z.shape
    zt = np.tile(z[:, None, :], (1, m, 1))
    idx = np.arange(m)
    zt[:, idx, 0] = z[:, idx]
    zt[:, idx, idx] = z[:, :1]
    return zt.reshape(B * m, m)


def _nr_scalar(model: Model, z) -> Tensor:
    wu, vu = model.units[0]
    arr = np.asarray(z, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr[None, :]
    B, m = arr.shape
    alpha = wu(_as_cloud_tensor(_tau_stack(arr)))            # (B*m, 1)
    alpha = en.reshape(alpha, (B, m))
    psi = vu(_as_cloud_tensor(arr))                          # (B, 1, m)
    prod = en.mul(alpha, en.tsum(psi, axis=1))
    return en.tsum(prod, axis=-1)


# ---- spec-level convenience wrappers on cloud objects ----


def weight_unit_ns(cloud: PointCloud, unit: WeightUnitNS) -> complex:
    with en.no_grad():
        out = unit(_as_cloud_tensor(cloud.points))
    return complex(out.val[0, 0])


def weight_unit_ns_plus(cloud: PointCloud, unit: WeightUnitNSPlus,
                        other: PointCloud = None) -> np.ndarray:
    with en.no_grad():
        xc = _as_cloud_tensor(other.points) if other is not None else None
        out = unit(_as_cloud_tensor(cloud.points), xc)
    return out.val[0]


def vector_unit(cloud: PointCloud, unit: VectorUnit) -> np.ndarray:
    with en.no_grad():
        out = unit(_as_cloud_tensor(cloud.points))
    return out.val[0]


def zz_unit_step(pair: CloudPair, unit: ZZUnit):
    with en.no_grad():
        zc, xc = unit.step(_as_cloud_tensor(pair.z.points),
                           _as_cloud_tensor(pair.x.points))
    return zc.val[0], xc.val[0]


def nr_forward(cloud: PointCloud, model: Model) -> complex:
    with en.no_grad():
        return complex(model.single_cloud_scalar(cloud.points).val[0])


def nr_plus_forward(cloud: PointCloud, model: Model) -> complex:
    with en.no_grad():
        return complex(model.single_cloud_scalar(cloud.points).val[0])


def zz_net_forward(pair: CloudPair, model: Model):
    with en.no_grad():
        f_zx, f_xz = model.pair_scalars(pair.z.points, pair.x.points)
    return complex(f_zx.val[0]), complex(f_xz.val[0])


def rotation_head(pair: CloudPair, model: Model) -> complex:
    f_zx, f_xz = zz_net_forward(pair, model)
    return f_xz * f_zx.conjugate()


# ---- reference configurations ----


def broad_config() -> ModelConfig:
    unit = ZZUnitConfig(
        weight=WeightUnitConfig("ns_plus", early_channels=(4, 4),
                                late_channels=(4, 16, 4, 1), two_cloud=True),
        vector=VectorUnitConfig("nc_plus", channels=(32, 1)),
    )
    return ModelConfig(kind="zz_net", units=(unit,))


def deep_config() -> ModelConfig:
    def unit(late_last, vec_last):
        return ZZUnitConfig(
            weight=WeightUnitConfig("ns_plus", early_channels=(4,),
                                    late_channels=(4, 8, late_last), two_cloud=True),
            vector=VectorUnitConfig("nc_plus", channels=(vec_last,)),
        )
    return ModelConfig(kind="zz_net", units=(unit(4, 4), unit(4, 4), unit(1, 1)))


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    store = ParamStore()
    model = Model(config, store)
    store.finalize(seed)
    return model


def _median_mag(t: Tensor) -> float:
    return float(np.median(np.abs(t.val)))


def _scale_vector_output(store: ParamStore, unit: ZZUnit, factor: float):
    last = unit.vector.layers[-1]
    store.scale(last.p.name, factor)
    if last.q is not None:
        store.scale(last.q.name, factor)


def calibrate_output_scale(model: Model, z, x) -> list:
    """Data-dependent init rescaling on a calibration batch.

    The weight units emit l2-normalized channels, so every unit contracts
    the working clouds by roughly 1/sqrt(m) and a freshly drawn stack starts
    with estimates orders of magnitude below the unit circle. Each unit's
    last vector layer is homogeneous in its weights, so we can rescale it
    exactly: first so every unit preserves the median point magnitude of its
    input, then once more so the median estimate magnitude over the batch is
    one. Returns the applied factors (one per unit, then the output factor).
    """
    if model.config.kind != "zz_net":
        raise ValueError("output calibration is defined for zz_net models")
    factors = []
    with en.no_grad():
        zc0, xc0 = _as_cloud_tensor(z), _as_cloud_tensor(x)
        target = 0.5 * (_median_mag(zc0) + _median_mag(xc0))
        for k, unit in enumerate(model.units):
            zc, xc = zc0, xc0
            for u in model.units[:k + 1]:
                zc, xc = u.step(zc, xc)
            med = 0.5 * (_median_mag(zc) + _median_mag(xc))
            c = target / max(med, 1e-12)
            _scale_vector_output(model.store, unit, c)
            factors.append(c)
        pred = model.rotation_estimate(zc0, xc0)
        med = float(np.median(np.abs(pred.val)))
        c = 1.0 / np.sqrt(max(med, 1e-12))
        _scale_vector_output(model.store, model.units[-1], c)
        factors.append(c)
    return factors


def make_broad_model(seed: int = 0) -> Model:
    return build_model(broad_config(), seed)


def make_deep_model(seed: int = 0) -> Model:
    return build_model(deep_config(), seed)
