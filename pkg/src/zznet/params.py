"""Flat parameter storage shared by the optimizer, checkpoints and layers.

All trainable numbers live in one float64 vector, in registration order.
Complex parameters are views of two consecutive floats per entry (padded to
an even float offset so the complex view is aligned); activation thresholds
are real views. The optimizer and the checkpoint format only ever see the
flat vector, so parameter layout is fixed by construction order alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor

KIND_COEFF = "coeff"
KIND_BIAS = "bias"
KIND_THRESHOLD = "threshold"


@dataclass
class ParamSpec:
    name: str
    shape: tuple
    is_complex: bool
    kind: str
    init: tuple  # ("uniform", scale) or ("const", value)
    offset: int = 0  # in floats, set at finalize
    n_floats: int = 0


class ParamHandle:
    """Deferred reference to one parameter; resolves after finalize."""

    def __init__(self, store: "ParamStore", name: str):
        self._store = store
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self._store.tensor(self.name)

    @property
    def value(self) -> np.ndarray:
        return self._store.tensor(self.name).val


class ParamStore:
    """Registry plus flat value/gradient buffers for every trainable array."""

    def __init__(self):
        self.specs: list = []
        self._by_name: dict = {}
        self.flat: np.ndarray = None
        self.grad_flat: np.ndarray = None
        self._tensors: dict = {}
        self._finalized = False

    def register(self, name: str, shape, is_complex: bool = True,
                 kind: str = KIND_COEFF, init=("uniform", 0.0)) -> ParamHandle:
        if self._finalized:
            raise RuntimeError("cannot register parameters after finalize")
        if name in self._by_name:
            raise ValueError(f"duplicate parameter name {name!r}")
        spec = ParamSpec(name=name, shape=tuple(shape), is_complex=is_complex,
                         kind=kind, init=tuple(init))
        self.specs.append(spec)
        self._by_name[name] = spec
        return ParamHandle(self, name)

    def _layout(self):
        off = 0
        for spec in self.specs:
            n = int(np.prod(spec.shape, dtype=int)) if spec.shape else 1
            if spec.is_complex:
                if off % 2:
                    off += 1  # keep complex views on even float offsets
                spec.offset, spec.n_floats = off, 2 * n
            else:
                spec.offset, spec.n_floats = off, n
            off += spec.n_floats
        return off

    def finalize(self, seed: int = 0):
        """Allocate buffers and draw initial values, in registration order."""
        if self._finalized:
            raise RuntimeError("store already finalized")
        total = self._layout()
        self.flat = np.zeros(total, dtype=np.float64)
        self.grad_flat = np.zeros(total, dtype=np.float64)
        self._finalized = True
        self.reseed(seed)

    def reseed(self, seed: int):
        """Draw fresh initial values into the existing layout."""
        if not self._finalized:
            raise RuntimeError("finalize the store before reseeding")
        rng = np.random.default_rng(seed)
        for spec in self.specs:
            view = self._value_view(spec)
            mode, arg = spec.init
            if mode == "uniform":
                if spec.is_complex:
                    re = rng.uniform(-arg, arg, spec.shape)
                    im = rng.uniform(-arg, arg, spec.shape)
                    view[...] = re + 1j * im
                else:
                    view[...] = rng.uniform(-arg, arg, spec.shape)
            elif mode == "const":
                view[...] = arg
            else:
                raise ValueError(f"unknown init mode {mode!r}")

    def _value_view(self, spec: ParamSpec) -> np.ndarray:
        raw = self.flat[spec.offset:spec.offset + spec.n_floats]
        return raw.view(np.complex128).reshape(spec.shape) if spec.is_complex \
            else raw.reshape(spec.shape)

    def _grad_view(self, spec: ParamSpec) -> np.ndarray:
        raw = self.grad_flat[spec.offset:spec.offset + spec.n_floats]
        return raw.view(np.complex128).reshape(spec.shape) if spec.is_complex \
            else raw.reshape(spec.shape)

    def tensor(self, name: str) -> Tensor:
        if not self._finalized:
            raise RuntimeError("finalize the store before using parameters")
        t = self._tensors.get(name)
        if t is None:
            spec = self._by_name[name]
            t = Tensor(self._value_view(spec), requires_grad=True,
                       grad=self._grad_view(spec))
            self._tensors[name] = t
        return t

    def zero_grad(self):
        self.grad_flat[:] = 0.0

    def scale(self, name: str, factor: float):
        """Multiply one parameter array in place; used by init calibration."""
        if not self._finalized:
            raise RuntimeError("finalize the store before scaling parameters")
        view = self._value_view(self._by_name[name])
        view *= factor

    def clamp_thresholds(self, lo: float = 0.0):
        """Activation radii must stay nonnegative; call after optimizer steps."""
        for spec in self.specs:
            if spec.kind == KIND_THRESHOLD:
                seg = self.flat[spec.offset:spec.offset + spec.n_floats]
                np.maximum(seg, lo, out=seg)

    @property
    def n_real_params(self) -> int:
        return sum(2 * int(np.prod(s.shape, dtype=int)) if s.is_complex
                   else int(np.prod(s.shape, dtype=int)) for s in self.specs)

    @property
    def n_floats(self) -> int:
        return self.flat.shape[0]

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.flat.shape:
            raise ValueError(f"expected {self.flat.shape[0]} floats, got {values.shape}")
        self.flat[:] = values

    def get_grad_flat(self) -> np.ndarray:
        return self.grad_flat.copy()

    def registry_descriptor(self) -> list:
        """Layout summary stored in checkpoints to validate reloads."""
        return [{"name": s.name, "shape": list(s.shape),
                 "complex": s.is_complex, "kind": s.kind} for s in self.specs]
