"""Verification suites: basis-catalog oracles, network equivariance laws,
and finite-difference gradient checks.

Each suite returns a list of CheckResult rows; nothing here raises on a
property failure, so callers can print a full report and exit nonzero at
the end. The suites are deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import engine as en
from . import layers as ly
from .bases import (SM_SIZES, STAB0_SIZES, catalog_sm, catalog_stab0,
                    check_equivariance, fused_first_layer, span_rank,
                    xi_isomorphism)
from .cloud import enumerate_sm, enumerate_stab0, gram
from .engine import Tensor
from .networks import (ModelConfig, VectorUnitConfig, WeightUnitConfig,
                       ZZUnitConfig, broad_config, build_model, deep_config)
from .params import ParamStore
from .training import loss_l2

GRAD_H = 1e-5
GRAD_RTOL = 1e-4
GRAD_DENOM_FLOOR = 1e-6
EXHAUSTIVE_TOL = 1e-10
LAW_TOL = 1e-8
FUSED_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3)}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} ({self.seconds:.2f}s): {self.detail}"


def _timed(name: str, fn) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, passed, detail, time.perf_counter() - t0)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0,
                float(np.max(np.abs(b))) if b.size else 0.0, 1e-300)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def _permute_group_axes(arr: np.ndarray, p, n_axes: int) -> np.ndarray:
    """Apply the permutation action to the trailing n_axes axes."""
    out = arr
    for ax in range(-n_axes, 0):
        out = np.take(out, p.inverse_mapping, axis=ax)
    return out


# ---------------------------------------------------------------------------
# basis-catalog suite


def run_bases_suite(seed: int = 0, trials: int = 4,
                    stab0_catalog=catalog_stab0,
                    sm_catalog=catalog_sm) -> list:
    """Catalog sizes, exhaustive equivariance, ranks, the fused first layer,
    and the lifting oracle. Catalog factories are injectable so a broken map
    can be planted as a negative control."""
    results = []
    rng = np.random.default_rng(seed)

    def sizes():
        bad = []
        for (k, l), want in STAB0_SIZES.items():
            got = len(stab0_catalog(k, l, 4))
            if got != want:
                bad.append(f"stab0({k},{l})={got}, want {want}")
        for (k, l), want in SM_SIZES.items():
            got = len(sm_catalog(k, l, 4))
            if got != want:
                bad.append(f"sm({k},{l})={got}, want {want}")
        return (not bad, "; ".join(bad) or "all catalog sizes match")

    results.append(_timed("catalog sizes", sizes))

    for m in (4, 5):
        def equivariance(m=m):
            failures = []
            worst = 0.0
            for (k, l) in STAB0_SIZES:
                for bm in stab0_catalog(k, l, m):
                    rep = check_equivariance(bm.apply, bm.tag, m, trials, rng, bm.name)
                    worst = max(worst, rep.max_deviation)
                    if not rep.passed(EXHAUSTIVE_TOL):
                        failures.append(f"{bm.name} dev={rep.max_deviation:.2e}")
            for (k, l) in SM_SIZES:
                for bm in sm_catalog(k, l, m):
                    rep = check_equivariance(bm.apply, bm.tag, m, trials, rng, bm.name)
                    worst = max(worst, rep.max_deviation)
                    if not rep.passed(EXHAUSTIVE_TOL):
                        failures.append(f"{bm.name} dev={rep.max_deviation:.2e}")
            if failures:
                return False, "; ".join(failures[:4])
            return True, f"max deviation {worst:.2e} over all catalogs"

        results.append(_timed(f"basis equivariance exhaustive m={m}", equivariance))

    def ranks():
        checks = [
            ("stab0(2,1)", stab0_catalog(2, 1, 5), 2, 15),
            ("sm(2,2)", sm_catalog(2, 2, 5), 2, 15),
            ("stab0(2,2)", stab0_catalog(2, 2, 5), 2, 52),
        ]
        bad = []
        for label, maps, k, want in checks:
            got = span_rank(maps, k, 5, rng=np.random.default_rng(seed + 1))
            if got != want:
                bad.append(f"{label} rank {got}, want {want}")
        return (not bad, "; ".join(bad) or "ranks 15/15/52 at m=5")

    results.append(_timed("span ranks m=5", ranks))

    def fused():
        worst = 0.0
        for m in (3, 5, 8):
            z = rng.standard_normal((6, m)) + 1j * rng.standard_normal((6, m))
            got = fused_first_layer(z)
            maps = stab0_catalog(2, 1, m)
            for b in range(z.shape[0]):
                T = gram(z[b]).values
                explicit = np.stack([bm.apply(T) for bm in maps])
                worst = max(worst, _rel(got[b], explicit))
        return worst <= FUSED_TOL, f"max relative deviation {worst:.2e}"

    results.append(_timed("fused first layer vs explicit catalog", fused))

    def xi_oracle():
        m = 4
        failures = []
        worst = 0.0
        for (k, l) in ((2, 1), (1, 0)):
            for bm in stab0_catalog(k, l, m):
                lifted = xi_isomorphism(bm, m)
                rep = check_equivariance(lifted.apply, lifted.tag, m, trials, rng,
                                         lifted.name)
                worst = max(worst, rep.max_deviation)
                if not rep.passed(EXHAUSTIVE_TOL):
                    failures.append(f"{lifted.name} dev={rep.max_deviation:.2e}")
        if failures:
            return False, "; ".join(failures[:4])
        return True, f"lifted maps Sm-equivariant, max deviation {worst:.2e}"

    results.append(_timed("lifting oracle m=4", xi_oracle))
    return results


# ---------------------------------------------------------------------------
# model equivariance suite


def tiny_nr_config() -> ModelConfig:
    unit = ZZUnitConfig(
        weight=WeightUnitConfig("ns", early_channels=(3,), late_channels=(4, 1)),
        vector=VectorUnitConfig("nc", channels=(2, 1)))
    return ModelConfig("nr", (unit,))


def tiny_nr_plus_config() -> ModelConfig:
    unit = ZZUnitConfig(
        weight=WeightUnitConfig("ns_plus", early_channels=(3,), late_channels=(2, 1)),
        vector=VectorUnitConfig("nc_plus", channels=(2, 1)))
    return ModelConfig("nr_plus", (unit,))


def model_law_deviation(model, m: int, rng) -> float:
    """Worst relative residual of the rotation/permutation laws on random
    inputs for one weight draw."""
    B = 2
    z = rng.standard_normal((B, m)) + 1j * rng.standard_normal((B, m))
    theta = np.exp(2j * np.pi * rng.random())
    perm_order = rng.permutation(m)
    take = np.argsort(perm_order)  # inverse mapping, [pi * v]_i = v_at_inverse
    worst = 0.0
    with en.no_grad():
        if model.config.kind == "zz_net":
            x = rng.standard_normal((B, m)) + 1j * rng.standard_normal((B, m))
            omega = np.exp(2j * np.pi * rng.random())
            fzx, fxz = model.pair_scalars(z, x)
            mzx, mxz = model.pair_scalars(theta * z[:, take], omega * x[:, take])
            worst = max(worst, _rel(mzx.val, theta * fzx.val))
            worst = max(worst, _rel(mxz.val, omega * fxz.val))
            est = model.rotation_estimate(z, x)
            mest = model.rotation_estimate(theta * z[:, take], omega * x[:, take])
            worst = max(worst, _rel(mest.val, omega * np.conj(theta) * est.val))
        else:
            base = model.single_cloud_scalar(z)
            moved = model.single_cloud_scalar(theta * z[:, take])
            worst = max(worst, _rel(moved.val, theta * base.val))
    return worst


def run_model_suite(ms=(3, 4, 5, 10), trials: int = 100, seed: int = 0,
                    layer_checks: bool = True) -> list:
    """Network-level rotation/permutation laws for every architecture plus
    exhaustive per-layer group checks at m=4."""
    results = []
    archs = [
        ("nr", tiny_nr_config()),
        ("nr_plus", tiny_nr_plus_config()),
        ("zz_net broad", broad_config()),
        ("zz_net deep", deep_config()),
    ]
    for label, config in archs:
        def laws(label=label, config=config):
            rng = np.random.default_rng(seed)
            model = build_model(config, seed=seed)
            worst = 0.0
            for t in range(trials):
                if t % 10 == 0:  # fresh weights every few trials
                    model.store.reseed(seed + t)
                m = ms[t % len(ms)]
                worst = max(worst, model_law_deviation(model, m, rng))
            ok = worst <= LAW_TOL
            return ok, (f"max relative law residual {worst:.2e} over {trials} "
                        f"trials, m in {tuple(ms)}")

        results.append(_timed(f"equivariance laws: {label}", laws))

    if layer_checks:
        results.extend(run_layer_checks(seed=seed))
    return results


def _layer_cases(seed: int):
    """Named (apply, input, group, in_axes, out_axes) exhaustive checks."""
    m, B = 4, 2
    rng = np.random.default_rng(seed)

    def cx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    store = ParamStore()
    w_s0_first = ly.Stab0LayerWeights.create(store, "s0f", 2, 3, "first")
    w_s0_later = ly.Stab0LayerWeights.create(store, "s0l", 3, 2, "later")
    w_sm_early = ly.SmLayerWeights.create(store, "sme", 2, 3, "early")
    w_sm_late = ly.SmLayerWeights.create(store, "sml", 3, 2, "late")
    w_nc = ly.CLinearWeights.create(store, "nc", 3, 2, with_mean=False)
    w_ncp = ly.CLinearWeights.create(store, "ncp", 3, 2, with_mean=True)
    w_eta = ly.ComplexReluParams.create(store, "act", 3)
    store.finalize(seed=seed + 7)

    stab0 = enumerate_stab0(m)
    sym = enumerate_sm(m)
    cases = [
        ("stab0 first layer", lambda a: ly.apply_stab0_layer(Tensor(a), w_s0_first).val,
         cx(B, 2, m), stab0, 1, 1),
        ("stab0 later layer", lambda a: ly.apply_stab0_layer(Tensor(a), w_s0_later).val,
         cx(B, 3, m), stab0, 1, 1),
        ("sm early layer", lambda a: ly.apply_sm_layer(Tensor(a), w_sm_early).val,
         cx(B, 2, m, m), sym, 2, 2),
        ("sm late layer", lambda a: ly.apply_sm_layer(Tensor(a), w_sm_late).val,
         cx(B, 3, m), sym, 1, 1),
        ("pointwise complex-linear", lambda a: ly.apply_complex_linear(Tensor(a), w_nc).val,
         cx(B, 3, m), sym, 1, 1),
        ("complex-linear with mean route", lambda a: ly.apply_complex_linear(Tensor(a), w_ncp).val,
         cx(B, 3, m), sym, 1, 1),
        ("complex relu", lambda a: ly.complex_relu(Tensor(a), w_eta.eta.tensor).val,
         0.3 * cx(B, 3, m), sym, 1, 1),
        ("leaky relu", lambda a: ly.leaky_activation(Tensor(a)).val,
         cx(B, 3, m), sym, 1, 1),
        ("channel normalization", lambda a: ly.l2_normalize_channels(Tensor(a)).val,
         cx(B, 3, m), sym, 1, 1),
        ("gram tensor", lambda a: ly.gram_tensor(Tensor(a)).val,
         cx(B, 3, m), sym, 1, 2),
        ("row-sum invarization", lambda a: ly.invarize_rows(Tensor(a)).val,
         cx(B, 3, m, m), sym, 2, 1),
    ]
    return cases


def run_layer_checks(seed: int = 0) -> list:
    results = []
    for name, fn, arr, perms, in_axes, out_axes in _layer_cases(seed):
        def one(fn=fn, arr=arr, perms=perms, in_axes=in_axes, out_axes=out_axes):
            with en.no_grad():
                base = fn(arr)
                worst = 0.0
                for p in perms:
                    lhs = fn(_permute_group_axes(arr, p, in_axes))
                    rhs = _permute_group_axes(base, p, out_axes)
                    worst = max(worst, _rel(lhs, rhs))
            return worst <= EXHAUSTIVE_TOL, f"max deviation {worst:.2e} over {len(perms)} group elements"

        results.append(_timed(f"layer equivariance exhaustive m=4: {name}", one))
    return results


# ---------------------------------------------------------------------------
# gradient suite


def _active_slots(store: ParamStore) -> np.ndarray:
    mask = np.zeros(store.n_floats, dtype=bool)
    for spec in store.specs:
        mask[spec.offset:spec.offset + spec.n_floats] = True
    return np.flatnonzero(mask)


def _analytic_grad(loss_fn, store: ParamStore) -> np.ndarray:
    store.zero_grad()
    loss = loss_fn()
    en.backward(loss)
    return store.get_grad_flat()


def _fd_slope(loss_fn, store: ParamStore, i: int, h: float) -> float:
    old = store.flat[i]
    store.flat[i] = old + h
    up = float(loss_fn().val)
    store.flat[i] = old - h
    down = float(loss_fn().val)
    store.flat[i] = old
    return (up - down) / (2.0 * h)


def gradient_check(loss_fn, store: ParamStore, rng, slots=None, h: float = GRAD_H,
                   rtol: float = GRAD_RTOL, max_resample: int = 5):
    """Compare analytic gradients against central differences slot by slot.

    A disagreement is retried with the offending parameter resampled: a
    parameter sitting within h of an activation kink makes the central
    difference straddle two linear pieces, which is a property of the
    sampling point, not of the gradient. Persistent disagreement across
    resamples is a real failure.
    """
    slots = _active_slots(store) if slots is None else np.asarray(slots)
    grad = _analytic_grad(loss_fn, store)
    worst = 0.0
    failures = []
    for i in slots:
        fd = _fd_slope(loss_fn, store, i, h)
        rel = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), GRAD_DENOM_FLOOR)
        tries = 0
        while rel > rtol and tries < max_resample:
            store.flat[i] = rng.uniform(-0.2, 0.2)
            grad = _analytic_grad(loss_fn, store)
            fd = _fd_slope(loss_fn, store, i, h)
            rel = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), GRAD_DENOM_FLOOR)
            tries += 1
        worst = max(worst, rel)
        if rel > rtol:
            failures.append((int(i), rel))
    return worst, failures


def _grad_cases(seed: int):
    """Per-layer-type loss closures; each owns a store and fixed inputs."""
    m, B = 4, 2
    rng = np.random.default_rng(seed)

    def cx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    def sum_abs2(t):
        return en.tsum(en.abs2(t))

    z2 = cx(B, 2, m)
    z3 = cx(B, 3, m)
    t22 = cx(B, 2, m, m)
    vec = cx(B, 3)

    builders = {
        "stab0 first layer": lambda s: _close(
            ly.Stab0LayerWeights.create(s, "l", 2, 3, "first"),
            lambda w: sum_abs2(ly.apply_stab0_layer(Tensor(z2), w))),
        "stab0 later layer": lambda s: _close(
            ly.Stab0LayerWeights.create(s, "l", 3, 2, "later"),
            lambda w: sum_abs2(ly.apply_stab0_layer(Tensor(z3), w))),
        "sm early layer": lambda s: _close(
            ly.SmLayerWeights.create(s, "l", 2, 3, "early"),
            lambda w: sum_abs2(ly.apply_sm_layer(Tensor(t22), w))),
        "sm late layer": lambda s: _close(
            ly.SmLayerWeights.create(s, "l", 3, 2, "late"),
            lambda w: sum_abs2(ly.apply_sm_layer(Tensor(z3), w))),
        "complex-linear (pointwise)": lambda s: _close(
            ly.CLinearWeights.create(s, "l", 3, 2, with_mean=False),
            lambda w: sum_abs2(ly.apply_complex_linear(Tensor(z3), w))),
        "complex-linear (mean route)": lambda s: _close(
            ly.CLinearWeights.create(s, "l", 3, 2, with_mean=True),
            lambda w: sum_abs2(ly.apply_complex_linear(Tensor(z3), w))),
        "fully connected": lambda s: _close(
            ly.FcLayerWeights.create(s, "l", 3, 2),
            lambda w: sum_abs2(ly.apply_fc_layer(Tensor(vec), w))),
        "complex relu": lambda s: _close(
            (ly.CLinearWeights.create(s, "l", 3, 3, with_mean=False),
             ly.ComplexReluParams.create(s, "act", 3)),
            lambda wp: sum_abs2(ly.complex_relu(
                ly.apply_complex_linear(Tensor(0.5 * z3), wp[0]),
                wp[1].eta.tensor))),
        "leaky relu": lambda s: _close(
            ly.SmLayerWeights.create(s, "l", 3, 2, "late"),
            lambda w: sum_abs2(ly.leaky_activation(ly.apply_sm_layer(Tensor(z3), w)))),
        "channel normalization": lambda s: _close(
            ly.CLinearWeights.create(s, "l", 3, 2, with_mean=False),
            lambda w: sum_abs2(ly.l2_normalize_channels(
                ly.apply_complex_linear(Tensor(z3), w)))),
        "gram and invarization": lambda s: _close(
            ly.CLinearWeights.create(s, "l", 3, 2, with_mean=False),
            lambda w: sum_abs2(ly.invarize_rows(ly.gram_tensor(
                ly.apply_complex_linear(Tensor(z3), w))))),
    }
    cases = []
    for k, (name, build) in enumerate(builders.items()):
        store = ParamStore()
        loss_fn = build(store)
        store.finalize(seed=seed + k)
        cases.append((name, store, loss_fn))
    return cases


def _close(weights, fn):
    """Bind layer weights into a zero-argument loss closure."""
    return lambda: fn(weights)


def run_gradient_suite(seed: int = 0, full_models: bool = True,
                       h: float = GRAD_H, rtol: float = GRAD_RTOL) -> list:
    results = []
    rng = np.random.default_rng(seed + 1000)
    for name, store, loss_fn in _grad_cases(seed):
        def one(store=store, loss_fn=loss_fn):
            worst, failures = gradient_check(loss_fn, store, rng, h=h, rtol=rtol)
            if failures:
                head = ", ".join(f"slot {i} rel={r:.2e}" for i, r in failures[:3])
                return False, f"{len(failures)} slots disagree: {head}"
            return True, f"max relative error {worst:.2e} over {store.n_floats} slots"

        results.append(_timed(f"gradient check: {name}", one))

    if full_models:
        m, B = 5, 3
        data_rng = np.random.default_rng(seed + 2000)
        z = data_rng.standard_normal((B, m)) + 1j * data_rng.standard_normal((B, m))
        x = data_rng.standard_normal((B, m)) + 1j * data_rng.standard_normal((B, m))
        theta = np.exp(2j * np.pi * data_rng.random(B))
        for label, config in (("broad", broad_config()), ("deep", deep_config())):
            def full(config=config):
                model = build_model(config, seed=seed)
                loss_fn = lambda: loss_l2(model.rotation_estimate(z, x), theta)
                worst, failures = gradient_check(loss_fn, model.store, rng, h=h, rtol=rtol)
                if failures:
                    head = ", ".join(f"slot {i} rel={r:.2e}" for i, r in failures[:3])
                    return False, f"{len(failures)} slots disagree: {head}"
                return True, (f"max relative error {worst:.2e} over "
                              f"{model.store.n_floats} slots at m={m}")

            results.append(_timed(f"gradient check: full {label} model m=5", full))
    return results


# ---------------------------------------------------------------------------
# suite registry


SUITES = {
    "bases": run_bases_suite,
    "models": run_model_suite,
    "gradients": run_gradient_suite,
}
SUITE_ALIASES = {"equivariance": "models"}


def run_suites(names, seed: int = 0) -> list:
    out = []
    for raw in names:
        name = SUITE_ALIASES.get(raw, raw)
        if name == "all":
            for fn in SUITES.values():
                out.extend(fn(seed=seed))
            continue
        if name not in SUITES:
            raise ValueError(f"unknown suite {raw!r}; choose from "
                             f"{sorted(SUITES) + ['all']}")
        out.extend(SUITES[name](seed=seed))
    return out
