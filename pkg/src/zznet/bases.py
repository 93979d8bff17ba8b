"""Catalogs of equivariant linear maps between low-order tensor spaces.

Two symmetry groups appear. Stab0 is the subgroup of permutations fixing
index 0; its equivariant maps may treat point 0 specially (the e_0 and
"entry 0" constructions below). Sm is the full permutation group, where
only sums, diagonals, traces and broadcasts survive.

Each catalog lists a spanning set of the equivariant linear maps from
order-k to order-l tensors, in a frozen order. The order is part of the
persisted parameter layout, so it must never change; `catalog_hash` pins
it inside checkpoints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import Permutation, enumerate_sm, enumerate_stab0, permute_array, tau

GROUP_STAB0 = "stab0"
GROUP_SM = "sm"

STAB0_SPACES = ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1), (1, 2), (2, 2))
SM_SPACES = ((1, 1), (0, 1), (2, 1), (0, 2), (2, 2))

# Frozen catalog sizes; the rank tests check these are also the span dimensions.
STAB0_SIZES = {(1, 0): 2, (0, 1): 2, (2, 0): 5, (1, 1): 5, (0, 2): 5,
               (2, 1): 15, (1, 2): 15, (2, 2): 52}
SM_SIZES = {(1, 1): 2, (0, 1): 1, (2, 1): 5, (0, 2): 2, (2, 2): 15}


@dataclass(frozen=True)
class SpaceTag:
    """Which equivariance group and which tensor orders a map belongs to."""

    group: str
    k: int
    l: int

    def __post_init__(self):
        if self.group not in (GROUP_STAB0, GROUP_SM):
            raise ValueError(f"unknown group {self.group!r}")


@dataclass(frozen=True)
class BasisMap:
    """One element of a catalog: a named linear map with its space tag."""

    name: str
    tag: SpaceTag
    index: int
    apply: callable = field(compare=False)


def _ones(m):
    return np.ones(m, dtype=np.complex128)


def _e0(m):
    v = np.zeros(m, dtype=np.complex128)
    v[0] = 1.0
    return v


def _scalar_maps_20():
    """The five Stab0-invariant scalars of a matrix, in frozen order."""
    return [
        ("total_sum", lambda T: T.sum()),
        ("trace", lambda T: np.trace(T)),
        ("entry_00", lambda T: T[0, 0]),
        ("row0_sum", lambda T: T[0, :].sum()),
        ("col0_sum", lambda T: T[:, 0].sum()),
    ]


def _const_tensors_02(m):
    """The five Stab0-fixed matrices, in frozen order."""
    one, e0 = _ones(m), _e0(m)
    return [
        ("ones_outer", np.outer(one, one)),
        ("identity", np.eye(m, dtype=np.complex128)),
        ("e0_outer_e0", np.outer(e0, e0)),
        ("e0_outer_ones", np.outer(e0, one)),
        ("ones_outer_e0", np.outer(one, e0)),
    ]


def _vector_maps_21():
    """Matrix-to-vector Stab0 maps 10..14 (the non-broadcast block)."""
    return [
        ("col0", lambda T: T[:, 0].copy()),
        ("row0", lambda T: T[0, :].copy()),
        ("row_sums", lambda T: T.sum(axis=1)),
        ("col_sums", lambda T: T.sum(axis=0)),
        ("diag", lambda T: np.diagonal(T).copy()),
    ]


def _embed_vector_12(m):
    """Vector-to-matrix Stab0 maps 10..14 (the non-broadcast block)."""
    one, e0 = _ones(m), _e0(m)
    return [
        ("e0_outer_v", lambda v: np.outer(e0, v)),
        ("v_outer_e0", lambda v: np.outer(v, e0)),
        ("ones_outer_v", lambda v: np.outer(one, v)),
        ("v_outer_ones", lambda v: np.outer(v, one)),
        ("diag_embed", lambda v: np.diag(v)),
    ]


def catalog_stab0(k: int, l: int, m: int) -> list:
    """Spanning set of Stab0-equivariant linear maps, order-k to order-l."""
    if (k, l) not in STAB0_SIZES:
        raise ValueError(f"no Stab0 catalog for orders ({k}, {l})")
    if m < 2:
        raise ValueError("catalogs need m >= 2")
    tag = SpaceTag(GROUP_STAB0, k, l)
    one, e0 = _ones(m), _e0(m)
    maps = []

    def add(name, fn):
        maps.append(BasisMap(f"stab0({k},{l})/{len(maps):02d}_{name}", tag, len(maps), fn))

    if (k, l) == (1, 0):
        add("entry0", lambda v: v[0])
        add("sum", lambda v: v.sum())
    elif (k, l) == (0, 1):
        add("e0", lambda c: c * e0)
        add("ones", lambda c: c * one)
    elif (k, l) == (2, 0):
        for name, fn in _scalar_maps_20():
            add(name, fn)
    elif (k, l) == (1, 1):
        add("sum_to_ones", lambda v: v.sum() * one)
        add("identity", lambda v: v.copy())
        add("entry0_to_e0", lambda v: v[0] * e0)
        add("sum_to_e0", lambda v: v.sum() * e0)
        add("entry0_to_ones", lambda v: v[0] * one)
    elif (k, l) == (0, 2):
        for name, mat in _const_tensors_02(m):
            add(name, lambda c, mat=mat: c * mat)
    elif (k, l) == (2, 1):
        for name, fn in _scalar_maps_20():
            add(f"{name}_to_e0", lambda T, fn=fn: fn(T) * e0)
        for name, fn in _scalar_maps_20():
            add(f"{name}_to_ones", lambda T, fn=fn: fn(T) * one)
        for name, fn in _vector_maps_21():
            add(name, fn)
    elif (k, l) == (1, 2):
        for name, mat in _const_tensors_02(m):
            add(f"entry0_times_{name}", lambda v, mat=mat: v[0] * mat)
        for name, mat in _const_tensors_02(m):
            add(f"sum_times_{name}", lambda v, mat=mat: v.sum() * mat)
        for name, fn in _embed_vector_12(m):
            add(name, fn)
    else:  # (2, 2), used by the verification suite only
        consts = _const_tensors_02(m)
        for i, (cname, mat) in enumerate(consts):
            for j, (sname, sfn) in enumerate(_scalar_maps_20()):
                add(f"{sname}_times_{cname}", lambda T, sfn=sfn, mat=mat: sfn(T) * mat)
        embeds = _embed_vector_12(m)
        for i, (ename, efn) in enumerate(embeds):
            for j, (vname, vfn) in enumerate(_vector_maps_21()):
                add(f"{ename}_of_{vname}", lambda T, efn=efn, vfn=vfn: efn(vfn(T)))
        add("identity", lambda T: T.copy())
        add("transpose", lambda T: T.T.copy())
    assert len(maps) == STAB0_SIZES[(k, l)]
    return maps


# Frozen order of the 15 Sm matrix-to-matrix maps. Each routes one of the
# invariant reductions (diagonal, row sums, column sums, trace, total sum)
# to one of the placements (diagonal, rows, columns, everywhere), plus the
# two dense maps. The adjoint of each map is again in the list; ADJOINT_SM22
# gives the pairing, which the layer backward pass reuses.
SM22_NAMES = (
    "identity", "transpose",
    "diag_to_diag", "diag_to_rows", "diag_to_cols",
    "rowsum_to_diag", "colsum_to_diag",
    "rowsum_to_rows", "colsum_to_rows", "rowsum_to_cols", "colsum_to_cols",
    "trace_to_diag", "totsum_to_diag", "trace_to_full", "totsum_to_full",
)
ADJOINT_SM22 = (0, 1, 2, 5, 6, 3, 4, 7, 9, 8, 10, 11, 13, 12, 14)

ST11_NAMES = ("sum_to_ones", "identity", "entry0_to_e0", "sum_to_e0", "entry0_to_ones")
ADJOINT_ST11 = (0, 1, 2, 4, 3)

SM11_NAMES = ("identity", "sum_to_ones")
ADJOINT_SM11 = (0, 1)


def _sm22_apply_single(T: np.ndarray, index: int) -> np.ndarray:
    m = T.shape[0]
    d = np.diagonal(T)
    rs, cs = T.sum(axis=1), T.sum(axis=0)
    tr, ts = d.sum(), T.sum()
    one = _ones(m)
    builders = (
        lambda: T.copy(),
        lambda: T.T.copy(),
        lambda: np.diag(d),
        lambda: np.outer(d, one),
        lambda: np.outer(one, d),
        lambda: np.diag(rs),
        lambda: np.diag(cs),
        lambda: np.outer(rs, one),
        lambda: np.outer(cs, one),
        lambda: np.outer(one, rs),
        lambda: np.outer(one, cs),
        lambda: tr * np.eye(m),
        lambda: ts * np.eye(m),
        lambda: tr * np.outer(one, one),
        lambda: ts * np.outer(one, one),
    )
    return builders[index]().astype(np.complex128)


def catalog_sm(k: int, l: int, m: int) -> list:
    """Spanning set of Sm-equivariant linear maps, order-k to order-l."""
    if (k, l) not in SM_SIZES:
        raise ValueError(f"no Sm catalog for orders ({k}, {l})")
    if m < 2:
        raise ValueError("catalogs need m >= 2")
    tag = SpaceTag(GROUP_SM, k, l)
    one = _ones(m)
    maps = []

    def add(name, fn):
        maps.append(BasisMap(f"sm({k},{l})/{len(maps):02d}_{name}", tag, len(maps), fn))

    if (k, l) == (1, 1):
        add("identity", lambda v: v.copy())
        add("sum_to_ones", lambda v: v.sum() * one)
    elif (k, l) == (0, 1):
        add("ones", lambda c: c * one)
    elif (k, l) == (2, 1):
        add("row_sums", lambda T: T.sum(axis=1))
        add("col_sums", lambda T: T.sum(axis=0))
        add("diag", lambda T: np.diagonal(T).copy())
        add("totsum_to_ones", lambda T: T.sum() * one)
        add("trace_to_ones", lambda T: np.trace(T) * one)
    elif (k, l) == (0, 2):
        add("ones_outer", lambda c: c * np.outer(one, one))
        add("identity", lambda c: c * np.eye(m, dtype=np.complex128))
    else:  # (2, 2)
        for idx, name in enumerate(SM22_NAMES):
            add(name, lambda T, idx=idx: _sm22_apply_single(T, idx))
    assert len(maps) == SM_SIZES[(k, l)]
    return maps


def fused_first_layer(points: np.ndarray) -> np.ndarray:
    """Evaluate the 15 stab0(2,1) maps at the Gram tensor of a cloud.

    Works directly from the cloud, never forming the m-by-m tensor: every
    catalog element applied to (z_i conj(z_j))_ij collapses to a closed form
    in z. Input shape (..., m), output (..., 15, m), catalog order.
    """
    z = np.asarray(points, dtype=np.complex128)
    m = z.shape[-1]
    s = z.sum(axis=-1, keepdims=True)
    z0 = z[..., :1]
    sq = (z * z.conj()).real.astype(np.complex128)
    lam = np.stack([
        (s * s.conj())[..., 0],
        sq.sum(axis=-1),
        (z0 * z0.conj())[..., 0],
        (z0 * s.conj())[..., 0],
        (z0.conj() * s)[..., 0],
    ], axis=-1)  # (..., 5)
    out = np.zeros(z.shape[:-1] + (15, m), dtype=np.complex128)
    out[..., 0:5, 0] = lam
    out[..., 5:10, :] = lam[..., None]
    out[..., 10, :] = z0.conj() * z
    out[..., 11, :] = z0 * z.conj()
    out[..., 12, :] = s.conj() * z
    out[..., 13, :] = s * z.conj()
    out[..., 14, :] = sq
    return out


def xi_isomorphism(l0_map: BasisMap, m: int) -> BasisMap:
    """Lift a Stab0 map of orders (k, l) to an Sm map of orders (k, l + 1).

    The lifted map sends T to sum_i e_i (x) tau_i(L0(tau_i T)), stacking a
    relabeled copy of the Stab0 map's output for every choice of which point
    plays the role of index 0. Applied to the whole stab0(k, l) catalog this
    lands in (and spans part of) the sm(k, l + 1) space.
    """
    k, l = l0_map.tag.k, l0_map.tag.l
    if l0_map.tag.group != GROUP_STAB0:
        raise ValueError("xi lifts Stab0 maps only")
    taus = [tau(i, m) for i in range(m)]

    def lifted(T):
        rows = []
        for t in taus:
            Ti = permute_array(np.asarray(T, dtype=np.complex128), t) if k > 0 else T
            r = l0_map.apply(Ti)
            rows.append(permute_array(np.asarray(r), t) if l > 0 else r)
        return np.stack(rows, axis=0)

    return BasisMap(f"xi[{l0_map.name}]", SpaceTag(GROUP_SM, k, l + 1), l0_map.index, lifted)


@dataclass
class EquivarianceReport:
    """Outcome of checking one map against every group element."""

    name: str
    group: str
    k: int
    l: int
    m: int
    trials: int
    group_order: int
    max_deviation: float

    def passed(self, tol: float) -> bool:
        return self.max_deviation <= tol

    def to_dict(self) -> dict:
        return {
            "name": self.name, "group": self.group, "orders": [self.k, self.l],
            "m": self.m, "trials": self.trials, "group_order": self.group_order,
            "max_deviation": self.max_deviation,
        }

    def __str__(self):
        return (f"{self.name}: {self.group} m={self.m} trials={self.trials} "
                f"max_dev={self.max_deviation:.3e}")


def _random_input(k: int, m: int, rng) -> np.ndarray:
    shape = (m,) * k
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) if k > 0 else complex(re + 1j * im)


def check_equivariance(map_fn, tag: SpaceTag, m: int, trials: int = 8,
                       rng=None, name: str = None) -> EquivarianceReport:
    """Exhaustively compare map(g T) with g map(T) over the tagged group."""
    rng = rng if rng is not None else np.random.default_rng(0)
    perms = enumerate_stab0(m) if tag.group == GROUP_STAB0 else enumerate_sm(m)
    worst = 0.0
    for _ in range(trials):
        T = _random_input(tag.k, m, rng)
        base = np.asarray(map_fn(T))
        for p in perms:
            moved = permute_array(np.asarray(T), p) if tag.k > 0 else T
            lhs = np.asarray(map_fn(moved))
            rhs = permute_array(base, p) if tag.l > 0 else base
            dev = float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
            worst = max(worst, dev)
    return EquivarianceReport(
        name=name or getattr(map_fn, "name", getattr(map_fn, "__name__", "map")),
        group=tag.group, k=tag.k, l=tag.l, m=m, trials=trials,
        group_order=len(perms), max_deviation=worst,
    )


def rank_pivoted(matrix: np.ndarray, tol: float = 1e-8) -> int:
    """Rank by Gaussian elimination with partial pivoting (complex entries)."""
    A = np.array(matrix, dtype=np.complex128)
    if A.ndim != 2:
        raise ValueError("need a 2-d matrix")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 0.0)
    rank, rows, cols = 0, A.shape[0], A.shape[1]
    col = 0
    while rank < rows and col < cols:
        p = rank + int(np.argmax(np.abs(A[rank:, col])))
        if np.abs(A[p, col]) <= tol * scale:
            col += 1
            continue
        A[[rank, p]] = A[[p, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, col] / A[rank, col], A[rank])
        rank += 1
        col += 1
    return rank


def evaluation_matrix(maps, k: int, m: int, samples: int = 8, rng=None) -> np.ndarray:
    """Rows are catalog maps, columns their stacked outputs on random inputs.

    The row rank of this matrix is (with probability one) the dimension of
    the span of the maps, which the catalogs claim equals their length.
    Samples must cover the scalar families: maps of the form (scalar
    functional) x (fixed output) contribute one row-space dimension per
    sample until their functionals separate, so fewer than five samples
    cannot certify the full catalogs.
    """
    rng = rng if rng is not None else np.random.default_rng(7)
    inputs = [_random_input(k, m, rng) for _ in range(samples)]
    rows = []
    for bm in maps:
        rows.append(np.concatenate([np.asarray(bm.apply(T), dtype=np.complex128).ravel()
                                    for T in inputs]))
    return np.stack(rows)


def span_rank(maps, k: int, m: int, samples: int = 8, rng=None, tol: float = 1e-8) -> int:
    return rank_pivoted(evaluation_matrix(maps, k, m, samples, rng), tol)


def catalog_descriptor() -> str:
    """Canonical text pinning every catalog's order (hashed into checkpoints)."""
    m = 3
    desc = {"stab0": {}, "sm": {}}
    for k, l in STAB0_SPACES:
        desc["stab0"][f"({k},{l})"] = [bm.name for bm in catalog_stab0(k, l, m)]
    for k, l in SM_SPACES:
        desc["sm"][f"({k},{l})"] = [bm.name for bm in catalog_sm(k, l, m)]
    return json.dumps(desc, sort_keys=True)


def catalog_hash() -> bytes:
    return hashlib.sha256(catalog_descriptor().encode("utf-8")).digest()
