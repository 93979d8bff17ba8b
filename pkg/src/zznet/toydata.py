"""Synthetic rotation-estimation data: points on a random triangle contour,
a rotated copy, coordinate noise, and a controlled fraction of outliers.

Determinism contract: every example owns a counter-based Philox stream
derived from (root seed, split, index), so a dataset is reproducible point
for point regardless of generation order or thread count, and any single
example can be regenerated in isolation. Each example draws the same fixed
sequence of arrays whatever the noise or outlier settings, so datasets that
differ only in those knobs share the underlying geometry for a fixed seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cloud import CloudPair, PointCloud, Rotation

SPLIT_IDS = {"train": 0, "val": 1, "test": 2}
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class DataGenConfig:
    m: int = 100
    outlier_ratio: float = 0.0
    sigma: float = 0.03
    counts: tuple = (2000, 500, 300)  # train, val, test
    seed: int = 0
    # clamp=False projects onto the infinite line instead of the segment;
    # complex_noise=True spreads sigma over both coordinates (total complex
    # std sigma) instead of sigma per coordinate.
    clamp: bool = True
    complex_noise: bool = False

    def __post_init__(self):
        if self.m < 3:
            raise ValueError("need at least three points per cloud")
        if not 0.0 <= self.outlier_ratio <= 1.0:
            raise ValueError("outlier ratio must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("noise level must be nonnegative")
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ValueError("counts are (train, val, test), all nonnegative")

    def to_dict(self) -> dict:
        return {"m": self.m, "outlier_ratio": self.outlier_ratio,
                "sigma": self.sigma, "counts": list(self.counts),
                "seed": self.seed, "clamp": self.clamp,
                "complex_noise": self.complex_noise}

    @classmethod
    def from_dict(cls, d: dict) -> "DataGenConfig":
        return cls(m=d["m"], outlier_ratio=d["outlier_ratio"], sigma=d["sigma"],
                   counts=tuple(d["counts"]), seed=d["seed"],
                   clamp=d.get("clamp", True),
                   complex_noise=d.get("complex_noise", False))


@dataclass
class ToyExample:
    pair: CloudPair
    theta: Rotation
    inlier_mask: np.ndarray
    seed: int
    split: str = "train"
    index: int = 0


@dataclass
class ArrayDataset:
    """One split as contiguous arrays, the shape the training loop wants."""

    z: np.ndarray       # (n, m) complex
    x: np.ndarray       # (n, m) complex
    theta: np.ndarray   # (n,) complex
    inlier: np.ndarray  # (n, m) bool

    @property
    def n(self) -> int:
        return self.z.shape[0]


def project_to_segment(p: complex, a: complex, b: complex,
                       clamp: bool = True) -> complex:
    """Orthogonal projection of p onto the line through a and b; with clamp
    the result is restricted to the segment between them."""
    d = b - a
    denom = (d * d.conjugate()).real
    if denom == 0.0:
        raise ValueError("degenerate segment: endpoints coincide")
    t = ((p - a) * d.conjugate()).real / denom
    if clamp:
        t = min(1.0, max(0.0, t))
    return a + t * d


def example_stream(seed: int, split: str, index: int) -> np.random.Generator:
    """The counter-based stream owned by one example."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(SPLIT_IDS[split], index))
    return np.random.Generator(np.random.Philox(ss))


def _uniform_disk(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform on the unit disk: sqrt of a uniform radius, uniform angle."""
    r = np.sqrt(rng.random(n))
    phi = 2.0 * np.pi * rng.random(n)
    return r * np.exp(1j * phi)


def generate_example(cfg: DataGenConfig, rng: np.random.Generator,
                     split: str = "train", index: int = 0) -> ToyExample:
    """One example; the draw order below is frozen (it defines the stream).

    1. Three triangle corners, uniform on the unit disk.
    2. m disk points, each projected orthogonally onto a uniformly chosen
       triangle side.
    3. A uniform rotation theta; the pair is (contour + noise,
       theta*contour + noise) with independent centered Gaussian noise on
       each coordinate of every point.
    4. Each pair is replaced, with probability outlier_ratio, by two
       independent uniform disk points.
    """
    m = cfg.m
    corners = _uniform_disk(rng, 3)
    raw = _uniform_disk(rng, m)
    sides = rng.integers(0, 3, size=m)
    # vectorized project_to_segment over all points at once
    a = corners[sides]
    d = corners[(sides + 1) % 3] - a
    denom = (d * d.conj()).real
    if np.any(denom == 0.0):
        raise ValueError("degenerate triangle: two corners coincide")
    t = ((raw - a) * d.conj()).real / denom
    if cfg.clamp:
        t = np.clip(t, 0.0, 1.0)
    contour = a + t * d
    theta = np.exp(2j * np.pi * rng.random())
    noise_z = rng.normal(0.0, 1.0, (m, 2))
    noise_x = rng.normal(0.0, 1.0, (m, 2))
    scale = cfg.sigma / np.sqrt(2.0) if cfg.complex_noise else cfg.sigma
    z = contour + scale * (noise_z[:, 0] + 1j * noise_z[:, 1])
    x = theta * contour + scale * (noise_x[:, 0] + 1j * noise_x[:, 1])
    outlier_u = rng.random(m)
    out_z = _uniform_disk(rng, m)
    out_x = _uniform_disk(rng, m)
    mask = outlier_u < cfg.outlier_ratio
    z = np.where(mask, out_z, z)
    x = np.where(mask, out_x, x)
    pair = CloudPair(PointCloud(z), PointCloud(x))
    return ToyExample(pair=pair, theta=Rotation(complex(theta)),
                      inlier_mask=~mask, seed=cfg.seed, split=split, index=index)


def _make_one(cfg: DataGenConfig, split: str, index: int) -> ToyExample:
    return generate_example(cfg, example_stream(cfg.seed, split, index),
                            split=split, index=index)


def generate_dataset(cfg: DataGenConfig, threads: int = 1) -> dict:
    """All three splits, keyed by split name, as lists of ToyExample."""
    out = {}
    for split, count in zip(SPLIT_NAMES, cfg.counts):
        if threads > 1 and count > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                examples = list(pool.map(lambda i: _make_one(cfg, split, i),
                                         range(count)))
        else:
            examples = [_make_one(cfg, split, i) for i in range(count)]
        out[split] = examples
    return out


def as_arrays(examples: list) -> ArrayDataset:
    if not examples:
        return ArrayDataset(np.zeros((0, 0), complex), np.zeros((0, 0), complex),
                            np.zeros(0, complex), np.zeros((0, 0), bool))
    return ArrayDataset(
        z=np.stack([e.pair.z.points for e in examples]),
        x=np.stack([e.pair.x.points for e in examples]),
        theta=np.array([e.theta.value for e in examples], dtype=np.complex128),
        inlier=np.stack([e.inlier_mask for e in examples]),
    )


# ---------------------------------------------------------------------------
# on-disk format: one JSON record per line, floats at 17 significant digits


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _pair_list(arr: np.ndarray) -> str:
    return "[" + ",".join(f"[{_fmt(c.real)},{_fmt(c.imag)}]" for c in arr) + "]"


def example_record(e: ToyExample) -> str:
    flags = "[" + ",".join("true" if b else "false" for b in e.inlier_mask) + "]"
    th = e.theta.value
    return (f'{{"split":"{e.split}","index":{e.index},"seed":{e.seed},'
            f'"theta":[{_fmt(th.real)},{_fmt(th.imag)}],'
            f'"z":{_pair_list(e.pair.z.points)},"x":{_pair_list(e.pair.x.points)},'
            f'"inlier":{flags}}}')


def save_dataset(path, splits: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for split in SPLIT_NAMES:
            for e in splits.get(split, ()):
                fh.write(example_record(e))
                fh.write("\n")


def load_dataset(path) -> dict:
    """Read a dataset file back as {split: ArrayDataset}."""
    rows = {name: [] for name in SPLIT_NAMES}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rows[rec["split"]].append(rec)
    out = {}
    for split, recs in rows.items():
        recs.sort(key=lambda r: r["index"])
        if not recs:
            out[split] = as_arrays([])
            continue
        z = np.array([[complex(re, im) for re, im in r["z"]] for r in recs])
        x = np.array([[complex(re, im) for re, im in r["x"]] for r in recs])
        theta = np.array([complex(*r["theta"]) for r in recs])
        inlier = np.array([r["inlier"] for r in recs], dtype=bool)
        out[split] = ArrayDataset(z=z, x=x, theta=theta, inlier=inlier)
    return out
