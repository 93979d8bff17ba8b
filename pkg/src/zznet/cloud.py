"""Point clouds in the complex plane and the group actions on them.

A cloud of m points is a length-m complex vector. Rotations act by unit
complex scalars, permutations act by index relabeling, and the two actions
commute. Everything downstream (equivariant bases, layers, networks) is
phrased in terms of these two actions, so they are pinned down here once,
together with the Gram tensor that makes rotation invariance mechanical.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

ROTATION_UNIT_TOL = 1e-9
ROTATION_MIN_NORM = 1e-12
GRAM_TOL = 1e-12
STAB0_MAX_M = 7


def _as_complex_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d complex vector, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("a point cloud needs at least one point")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError("point cloud entries must be finite")
    return arr


@dataclass(frozen=True)
class Rotation:
    """A rotation of the plane, stored as a unit complex scalar."""

    value: complex

    def __post_init__(self):
        v = complex(self.value)
        r = abs(v)
        if r < ROTATION_MIN_NORM:
            raise ValueError(f"rotation modulus {r:g} is too small to normalize")
        object.__setattr__(self, "value", v / r)

    @classmethod
    def from_angle(cls, radians: float) -> "Rotation":
        return cls(complex(math.cos(radians), math.sin(radians)))

    @property
    def angle(self) -> float:
        return math.atan2(self.value.imag, self.value.real)

    def inverse(self) -> "Rotation":
        return Rotation(self.value.conjugate())

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.value * other.value)


@dataclass(frozen=True)
class Permutation:
    """A bijection of {0..m-1}; ``mapping[i]`` is where index i is sent."""

    mapping: tuple
    inverse_mapping: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        m = len(mapping)
        if sorted(mapping) != list(range(m)):
            raise ValueError(f"not a permutation of 0..{m - 1}: {mapping}")
        inv = [0] * m
        for i, j in enumerate(mapping):
            inv[j] = i
        object.__setattr__(self, "mapping", mapping)
        object.__setattr__(self, "inverse_mapping", tuple(inv))

    @classmethod
    def identity(cls, m: int) -> "Permutation":
        return cls(tuple(range(m)))

    @property
    def size(self) -> int:
        return len(self.mapping)

    def compose(self, other: "Permutation") -> "Permutation":
        """Return self after other, i.e. i -> self(other(i))."""
        if self.size != other.size:
            raise ValueError("size mismatch")
        return Permutation(tuple(self.mapping[j] for j in other.mapping))

    def inverse(self) -> "Permutation":
        return Permutation(self.inverse_mapping)

    def fixes_zero(self) -> bool:
        return self.mapping[0] == 0


@dataclass(frozen=True)
class PointCloud:
    """An ordered cloud of m points z_i in the complex plane."""

    points: np.ndarray

    def __post_init__(self):
        arr = _as_complex_vector(self.points).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def m(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CloudPair:
    """Two clouds of equal size, the joint input of the pair networks."""

    z: PointCloud
    x: PointCloud

    def __post_init__(self):
        if self.z.m != self.x.m:
            raise ValueError(f"cloud sizes differ: {self.z.m} vs {self.x.m}")

    @property
    def m(self) -> int:
        return self.z.m


@dataclass(frozen=True)
class GramTensor:
    """Pairwise products z_i * conj(z_j); rotation of the cloud leaves it fixed."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128).copy()
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        herm = np.max(np.abs(arr - arr.conj().T)) if arr.size else 0.0
        if herm > 1e-9:
            raise ValueError(f"not Hermitian: max deviation {herm:g}")
        d = np.diagonal(arr)
        if np.min(d.real) < -GRAM_TOL or np.max(np.abs(d.imag)) > GRAM_TOL:
            raise ValueError("diagonal must be real and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def m(self) -> int:
        return self.values.shape[0]


def rotate(cloud: PointCloud, rotation: Rotation) -> PointCloud:
    return PointCloud(rotation.value * cloud.points)


def permute(cloud: PointCloud, perm: Permutation) -> PointCloud:
    """Relabel points: the new i-th point is the old perm^{-1}(i)-th one."""
    if perm.size != cloud.m:
        raise ValueError("permutation size does not match cloud size")
    return PointCloud(cloud.points[list(perm.inverse_mapping)])


def permute_array(values: np.ndarray, perm: Permutation) -> np.ndarray:
    """Apply the relabeling action on every axis of an order-k array."""
    values = np.asarray(values)
    if values.ndim == 0:
        return values
    inv = list(perm.inverse_mapping)
    for axis in range(values.ndim):
        if values.shape[axis] != perm.size:
            raise ValueError("axis length does not match permutation size")
        values = np.take(values, inv, axis=axis)
    return values


def permute_tensor(tensor: GramTensor, perm: Permutation) -> GramTensor:
    return GramTensor(permute_array(tensor.values, perm))


def tau(i: int, m: int) -> Permutation:
    """The transposition swapping indices 0 and i (identity for i = 0)."""
    if not 0 <= i < m:
        raise ValueError(f"index {i} out of range for size {m}")
    mapping = list(range(m))
    mapping[0], mapping[i] = mapping[i], mapping[0]
    return Permutation(tuple(mapping))


def gram(cloud) -> GramTensor:
    z = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    return GramTensor(np.outer(z, z.conj()))


def angular_error(pred: complex, truth: Rotation) -> float:
    """Euclidean distance in the plane between a prediction and a unit truth."""
    return abs(complex(pred) - truth.value)


def angle_threshold(degrees: float) -> float:
    """Chord length on the unit circle subtending the given angle."""
    return 2.0 * math.sin(math.radians(degrees) / 2.0)


def enumerate_stab0(m: int) -> list:
    """All permutations fixing index 0; factorially many, so m is capped."""
    if m > STAB0_MAX_M:
        raise ValueError(f"refusing to enumerate (m - 1)! permutations for m = {m}")
    return [Permutation((0,) + rest) for rest in itertools.permutations(range(1, m))]


def enumerate_sm(m: int) -> list:
    """All permutations of {0..m-1}; m is capped one notch tighter."""
    if m > STAB0_MAX_M - 1:
        raise ValueError(f"refusing to enumerate m! permutations for m = {m}")
    return [Permutation(p) for p in itertools.permutations(range(m))]
