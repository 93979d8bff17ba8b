"""Layer vocabulary: activations, channel normalization, Gram tensors, and
linear layers whose weights sit on the frozen equivariant basis catalogs.

Every linear layer stores, per (output channel, input channel, basis
element), a real-linear coefficient pair (a, b) acting as z -> a z + b
conj(z). With b = 0 this is a complex-linear layer; the conjugation route
is what lets invariant features absorb the reflection-like part of a
target. Biases sit on the constant catalogs of the matching group and use
the same pair form even though those basis elements are real (a and b then
act identically); the persisted parameter layout counts them separately.

Layers are built from the generic graph ops in `engine`, so their backward
passes need no layer-specific derivations; the finite-difference suite
checks the composition anyway. Activations, normalization and the Gram map
are the only custom-gradient primitives here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .engine import Tensor
from .params import KIND_BIAS, KIND_COEFF, KIND_THRESHOLD, ParamHandle, ParamStore

LEAKY_SLOPE = 0.01
RELU_THRESHOLD_INIT = 0.1
NORM_EPS = 1e-12

STAB0_FIRST_NBASIS = 15  # matrix-to-vector catalog, fused from the cloud
STAB0_LATER_NBASIS = 5   # vector-to-vector catalog
STAB0_BIAS_NBASIS = 2    # {e_0, ones}
SM_EARLY_NBASIS = 15     # matrix-to-matrix catalog
SM_LATE_NBASIS = 2       # {identity, sum broadcast}
SM_EARLY_BIAS_NBASIS = 2  # {all-ones matrix, identity matrix}
SM_LATE_BIAS_NBASIS = 1   # {ones}


@dataclass(frozen=True)
class RealLinearCoeff:
    """Scalar coefficient pair: z -> a z + b conj(z)."""

    a: complex
    b: complex

    def apply(self, z: complex) -> complex:
        return self.a * z + self.b * z.conjugate()


@dataclass(frozen=True)
class ComplexLinearCoeff:
    """Plain complex scalar coefficient: z -> c z."""

    c: complex

    def apply(self, z: complex) -> complex:
        return self.c * z


def _uniform(scale):
    return ("uniform", scale)


# ---------------------------------------------------------------------------
# custom-gradient primitives


def complex_relu(z, eta) -> Tensor:
    """Radial shrinkage: keep the phase, ReLU the modulus past a threshold.

    eta is one nonnegative radius per channel (axis 1 of z). The value at
    z = 0 is 0 and so is the gradient there; on the sphere |z| = eta the
    ReLU kink takes subgradient 0.
    """
    z, eta = en.as_tensor(z), en.as_tensor(eta)
    zv, ev = z.val, eta.val
    e = ev.reshape((1, -1) + (1,) * (zv.ndim - 2))
    r = np.abs(zv)
    safe_r = np.maximum(r, NORM_EPS)
    mask = r > e
    f = np.where(mask, 1.0 - e / safe_r, 0.0)
    val = f * zv

    def bwd(g):
        re_gz = (np.conj(g) * zv).real
        z.accumulate(g * f + np.where(mask, e / safe_r ** 3, 0.0) * re_gz * zv)
        eta_contrib = np.where(mask, -re_gz / safe_r, 0.0)
        axes = (0,) + tuple(range(2, zv.ndim))
        eta.accumulate(eta_contrib.sum(axis=axes))

    return en.custom(val, (z, eta), bwd)


def leaky_activation(z, slope: float = LEAKY_SLOPE) -> Tensor:
    """Leaky ReLU applied to real and imaginary parts separately."""
    z = en.as_tensor(z)
    zv = z.val
    if np.iscomplexobj(zv):
        x, y = zv.real, zv.imag
        dre = np.where(x >= 0, 1.0, slope)
        dim = np.where(y >= 0, 1.0, slope)
        val = x * dre + 1j * (y * dim)
        bwd = lambda g: z.accumulate(g.real * dre + 1j * (g.imag * dim))
    else:
        d = np.where(zv >= 0, 1.0, slope)
        val = zv * d
        bwd = lambda g: z.accumulate(g * d)
    return en.custom(val, (z,), bwd)


def l2_normalize_channels(z) -> Tensor:
    """Divide each channel by max(its l2 norm over points, 1e-12)."""
    z = en.as_tensor(z)
    zv = z.val
    n = np.sqrt((zv * np.conj(zv)).real.sum(axis=-1, keepdims=True))
    d = np.maximum(n, NORM_EPS)
    val = zv / d

    def bwd(g):
        gz = (np.conj(g) * zv).real.sum(axis=-1, keepdims=True)
        corr = np.where(n > NORM_EPS, gz / d ** 3, 0.0)
        z.accumulate(g / d - corr * zv)

    return en.custom(val, (z,), bwd)


def gram_tensor(z) -> Tensor:
    """Pairwise products z_i conj(z_j) per channel, (..., m) -> (..., m, m)."""
    z = en.as_tensor(z)
    zv = z.val
    val = zv[..., :, None] * np.conj(zv)[..., None, :]

    def bwd(g):
        zcol = zv[..., None]
        z.accumulate((np.matmul(g, zcol) + np.matmul(np.conj(g).swapaxes(-1, -2), zcol))[..., 0])

    return en.custom(val, (z,), bwd)


def invarize_rows(T) -> Tensor:
    """Collapse a matrix cloud feature to a vector one by summing rows."""
    return en.tsum(T, axis=-1)


# ---------------------------------------------------------------------------
# weight containers


@dataclass
class SmLayerWeights:
    """Permutation-equivariant layer weights, early (2->2) or late (1->1)."""

    stage: str
    in_ch: int
    out_ch: int
    a: ParamHandle
    b: ParamHandle
    bias_a: ParamHandle
    bias_b: ParamHandle

    @classmethod
    def create(cls, store: ParamStore, name: str, in_ch: int, out_ch: int,
               stage: str) -> "SmLayerWeights":
        if stage not in ("early", "late"):
            raise ValueError(f"unknown stage {stage!r}")
        nb = SM_EARLY_NBASIS if stage == "early" else SM_LATE_NBASIS
        nbias = SM_EARLY_BIAS_NBASIS if stage == "early" else SM_LATE_BIAS_NBASIS
        s = 1.0 / np.sqrt(in_ch * nb)
        sb = 1.0 / np.sqrt(nbias)
        return cls(
            stage=stage, in_ch=in_ch, out_ch=out_ch,
            a=store.register(f"{name}/a", (out_ch, in_ch, nb), init=_uniform(s)),
            b=store.register(f"{name}/b", (out_ch, in_ch, nb), init=_uniform(s)),
            bias_a=store.register(f"{name}/bias_a", (out_ch, nbias),
                                  kind=KIND_BIAS, init=_uniform(sb)),
            bias_b=store.register(f"{name}/bias_b", (out_ch, nbias),
                                  kind=KIND_BIAS, init=_uniform(sb)),
        )


@dataclass
class Stab0LayerWeights:
    """Stab0-equivariant layer weights; `first` consumes the cloud directly."""

    stage: str
    in_ch: int
    out_ch: int
    a: ParamHandle
    b: ParamHandle
    bias_a: ParamHandle
    bias_b: ParamHandle

    @classmethod
    def create(cls, store: ParamStore, name: str, in_ch: int, out_ch: int,
               stage: str) -> "Stab0LayerWeights":
        if stage not in ("first", "later"):
            raise ValueError(f"unknown stage {stage!r}")
        nb = STAB0_FIRST_NBASIS if stage == "first" else STAB0_LATER_NBASIS
        s = 1.0 / np.sqrt(in_ch * nb)
        sb = 1.0 / np.sqrt(STAB0_BIAS_NBASIS)
        return cls(
            stage=stage, in_ch=in_ch, out_ch=out_ch,
            a=store.register(f"{name}/a", (out_ch, in_ch, nb), init=_uniform(s)),
            b=store.register(f"{name}/b", (out_ch, in_ch, nb), init=_uniform(s)),
            bias_a=store.register(f"{name}/bias_a", (out_ch, STAB0_BIAS_NBASIS),
                                  kind=KIND_BIAS, init=_uniform(sb)),
            bias_b=store.register(f"{name}/bias_b", (out_ch, STAB0_BIAS_NBASIS),
                                  kind=KIND_BIAS, init=_uniform(sb)),
        )


@dataclass
class FcLayerWeights:
    """Fully connected real-linear layer on channel scalars, complex bias."""

    in_ch: int
    out_ch: int
    a: ParamHandle
    b: ParamHandle
    bias: ParamHandle

    @classmethod
    def create(cls, store: ParamStore, name: str, in_ch: int, out_ch: int) -> "FcLayerWeights":
        s = 1.0 / np.sqrt(in_ch)
        return cls(
            in_ch=in_ch, out_ch=out_ch,
            a=store.register(f"{name}/a", (out_ch, in_ch), init=_uniform(s)),
            b=store.register(f"{name}/b", (out_ch, in_ch), init=_uniform(s)),
            bias=store.register(f"{name}/bias", (out_ch,), kind=KIND_BIAS,
                                init=_uniform(1.0)),
        )


@dataclass
class CLinearWeights:
    """Complex-linear channel mix; `q` adds the mean-broadcast route."""

    in_ch: int
    out_ch: int
    p: ParamHandle
    q: ParamHandle  # None for the purely pointwise variant

    @classmethod
    def create(cls, store: ParamStore, name: str, in_ch: int, out_ch: int,
               with_mean: bool) -> "CLinearWeights":
        nb = 2 if with_mean else 1
        s = 1.0 / np.sqrt(in_ch * nb)
        q = store.register(f"{name}/q", (out_ch, in_ch), init=_uniform(s)) if with_mean else None
        return cls(in_ch=in_ch, out_ch=out_ch,
                   p=store.register(f"{name}/p", (out_ch, in_ch), init=_uniform(s)), q=q)


@dataclass
class ComplexReluParams:
    """One learnable radius per channel, clamped nonnegative after steps."""

    channels: int
    eta: ParamHandle

    @classmethod
    def create(cls, store: ParamStore, name: str, channels: int) -> "ComplexReluParams":
        return cls(channels=channels,
                   eta=store.register(f"{name}/eta", (channels,), is_complex=False,
                                      kind=KIND_THRESHOLD, init=("const", RELU_THRESHOLD_INIT)))


# ---------------------------------------------------------------------------
# layer applications


def _coef_slice(coef: Tensor, k: int) -> Tensor:
    return en.getitem(coef, (slice(None), slice(None), k))


def _e0_vector(m: int) -> np.ndarray:
    e0 = np.zeros(m)
    e0[0] = 1.0
    return e0


def _apply_sm_early(x, w: SmLayerWeights) -> Tensor:
    """2->2 layer: coefficients on the 15 matrix-to-matrix basis maps.

    Reductions (diagonal, row sums, column sums, trace, total sum) are
    computed once per route and placed on the diagonal, the rows, the
    columns or everywhere; only the identity and transpose routes touch
    the full matrix.
    """
    x = en.as_tensor(x)
    a, b = w.a.tensor, w.b.tensor
    terms = []
    for coef, inp in ((a, x), (b, en.conj(x))):
        c = lambda k: _coef_slice(coef, k)
        dg = en.diag_part(inp)
        rs = en.tsum(inp, axis=-1)
        cs = en.tsum(inp, axis=-2)
        tr = en.tsum(dg, axis=-1)
        ts = en.tsum(rs, axis=-1)
        terms.append(en.channel_map(c(0), inp))
        terms.append(en.channel_map(c(1), en.transpose_last2(inp)))
        dvec = en.add_n([en.channel_map(c(2), dg), en.channel_map(c(5), rs),
                         en.channel_map(c(6), cs)])
        dscal = en.add(en.channel_map(c(11), tr), en.channel_map(c(12), ts))
        terms.append(en.diag_embed(en.add(dvec, en.expand_dims(dscal, -1))))
        rows = en.add_n([en.channel_map(c(3), dg), en.channel_map(c(7), rs),
                         en.channel_map(c(8), cs)])
        cols = en.add_n([en.channel_map(c(4), dg), en.channel_map(c(9), rs),
                         en.channel_map(c(10), cs)])
        terms.append(en.expand_dims(rows, -1))
        terms.append(en.expand_dims(cols, -2))
        fscal = en.add(en.channel_map(c(13), tr), en.channel_map(c(14), ts))
        terms.append(en.expand_dims(en.expand_dims(fscal, -1), -1))
    m = x.val.shape[-1]
    cb = en.add(w.bias_a.tensor, w.bias_b.tensor)  # both act on real constants
    ones_bias = en.expand_dims(en.expand_dims(en.getitem(cb, (slice(None), 0)), -1), -1)
    eye_bias = en.diag_embed(en.scale(en.expand_dims(en.getitem(cb, (slice(None), 1)), -1),
                                      np.ones(m)))
    terms += [ones_bias, eye_bias]
    return en.add_n(terms)


def _apply_sm_late(x, w: SmLayerWeights) -> Tensor:
    """1->1 layer: identity route plus a sum broadcast over points."""
    x = en.as_tensor(x)
    a, b = w.a.tensor, w.b.tensor
    terms = []
    for coef, inp in ((a, x), (b, en.conj(x))):
        c = lambda k: _coef_slice(coef, k)
        s = en.tsum(inp, axis=-1)
        terms.append(en.channel_map(c(0), inp))
        terms.append(en.expand_dims(en.channel_map(c(1), s), -1))
    cb = en.add(w.bias_a.tensor, w.bias_b.tensor)
    terms.append(en.expand_dims(en.getitem(cb, (slice(None), 0)), -1))
    return en.add_n(terms)


def apply_sm_layer(x, w: SmLayerWeights) -> Tensor:
    return _apply_sm_early(x, w) if w.stage == "early" else _apply_sm_late(x, w)


def _apply_stab0_first(z, w: Stab0LayerWeights) -> Tensor:
    """Fused first layer: the 15 matrix-to-vector maps evaluated at the
    Gram tensor of the cloud, without ever forming the m-by-m tensor."""
    z = en.as_tensor(z)
    m = z.val.shape[-1]
    e0 = _e0_vector(m)
    s = en.tsum(z, axis=-1, keepdims=True)
    z0 = en.getitem(z, (Ellipsis, slice(0, 1)))
    zc, sc, z0c = en.conj(z), en.conj(s), en.conj(z0)
    sq = en.mul(z, zc)
    scalars = [en.mul(s, sc), en.tsum(sq, axis=-1, keepdims=True), en.mul(z0, z0c),
               en.mul(z0, sc), en.mul(z0c, s)]                      # k = 0..4, (B,I,1)
    vectors = [en.mul(z0c, z), en.mul(z0, zc), en.mul(sc, z),
               en.mul(s, zc), sq]                                   # k = 10..14, (B,I,m)
    terms = []
    for coef, cj in ((w.a.tensor, False), (w.b.tensor, True)):
        c = lambda k: _coef_slice(coef, k)
        feats = [en.conj(f) for f in scalars] if cj else scalars
        vfeat = [en.conj(f) for f in vectors] if cj else vectors
        e0_route = en.add_n([en.channel_map(c(k), feats[k]) for k in range(5)])
        terms.append(en.scale(e0_route, e0))
        terms.append(en.add_n([en.channel_map(c(5 + k), feats[k]) for k in range(5)]))
        terms.append(en.add_n([en.channel_map(c(10 + k), vfeat[k]) for k in range(5)]))
    cb = en.add(w.bias_a.tensor, w.bias_b.tensor)  # bias over {e_0, ones}
    terms.append(en.scale(en.getitem(cb, (slice(None), slice(0, 1))), e0))
    terms.append(en.getitem(cb, (slice(None), slice(1, 2))))
    return en.add_n(terms)


def _apply_stab0_later(x, w: Stab0LayerWeights) -> Tensor:
    """Vector-to-vector layer over the five Stab0 maps, frozen order
    (sum->ones, identity, entry0->e0, sum->e0, entry0->ones)."""
    x = en.as_tensor(x)
    m = x.val.shape[-1]
    e0 = _e0_vector(m)
    terms = []
    for coef, inp in ((w.a.tensor, x), (w.b.tensor, en.conj(x))):
        c = lambda k: _coef_slice(coef, k)
        s = en.tsum(inp, axis=-1)
        x0 = en.getitem(inp, (Ellipsis, 0))
        terms.append(en.channel_map(c(1), inp))
        terms.append(en.expand_dims(en.add(en.channel_map(c(0), s),
                                           en.channel_map(c(4), x0)), -1))
        terms.append(en.scale(en.expand_dims(en.add(en.channel_map(c(2), x0),
                                                    en.channel_map(c(3), s)), -1), e0))
    cb = en.add(w.bias_a.tensor, w.bias_b.tensor)
    terms.append(en.scale(en.getitem(cb, (slice(None), slice(0, 1))), e0))
    terms.append(en.getitem(cb, (slice(None), slice(1, 2))))
    return en.add_n(terms)


def apply_stab0_layer(x, w: Stab0LayerWeights) -> Tensor:
    return _apply_stab0_first(x, w) if w.stage == "first" else _apply_stab0_later(x, w)


def apply_complex_linear(x, w: CLinearWeights) -> Tensor:
    """Channel mix that commutes with rotation; the optional mean route
    makes it commute with permutations as well."""
    x = en.as_tensor(x)
    out = en.channel_map(w.p.tensor, x)
    if w.q is not None:
        out = en.add(out, en.expand_dims(en.channel_map(w.q.tensor, en.tmean(x, -1)), -1))
    return out


def apply_fc_layer(v, w: FcLayerWeights) -> Tensor:
    """Real-linear mix of channel scalars plus a complex bias."""
    v = en.as_tensor(v)
    return en.add_n([en.channel_map(w.a.tensor, v),
                     en.channel_map(w.b.tensor, en.conj(v)),
                     w.bias.tensor])
