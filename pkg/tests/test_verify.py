"""The verification suites must be able to fail.

A checker that always returns PASS is worse than no checker, so each suite
gets a planted defect: a catalog entry that is not equivariant, a loss whose
value depends on a parameter its gradient ignores. The suites have to flag
exactly these.
"""

import dataclasses

import numpy as np
import pytest

from zznet import engine as en
from zznet import layers as ly
from zznet import verify
from zznet.bases import catalog_stab0
from zznet.engine import Tensor
from zznet.params import ParamStore
from zznet.verify import (CheckResult, gradient_check, run_bases_suite,
                          run_suites)


def broken_stab0(k, l, m):
    """Real catalog with the last (2,1) map spoiled by index-dependent
    weights, which no permutation-equivariant map can have."""
    maps = catalog_stab0(k, l, m)
    if (k, l) != (2, 1):
        return maps
    victim = maps[-1]
    spoiled = dataclasses.replace(
        victim, apply=lambda T, f=victim.apply: f(T) * np.arange(1, T.shape[-1] + 1))
    return maps[:-1] + [spoiled]


def test_bases_suite_flags_planted_nonequivariant_map():
    results = run_bases_suite(stab0_catalog=broken_stab0)
    by_name = {r.name: r for r in results}
    assert not by_name["basis equivariance exhaustive m=4"].passed
    assert not by_name["basis equivariance exhaustive m=5"].passed
    # sizes are untouched, so that check must still pass
    assert by_name["catalog sizes"].passed


def test_bases_suite_passes_on_real_catalogs():
    results = run_bases_suite()
    assert all(r.passed for r in results)


def test_gradient_check_flags_untracked_dependence():
    # the loss value depends on slot `leak` but the tape never sees it, the
    # shape a forgotten backward rule takes
    store = ParamStore()
    w = ly.CLinearWeights.create(store, "l", 2, 2, with_mean=False)
    store.finalize(seed=3)
    rng = np.random.default_rng(0)
    z = rng.standard_normal((2, 2, 5)) + 1j * rng.standard_normal((2, 2, 5))
    leak = int(np.flatnonzero(store.flat)[0])

    def honest():
        return en.tsum(en.abs2(ly.apply_complex_linear(Tensor(z), w)))

    def leaky():
        return en.scale(honest(), 1.0 + float(store.flat[leak]))

    worst, failures = gradient_check(honest, store, np.random.default_rng(1))
    assert failures == [] and worst < 1e-4

    worst, failures = gradient_check(leaky, store, np.random.default_rng(1),
                                     slots=[leak])
    assert [i for i, _ in failures] == [leak]
    assert worst > 1e-2


def test_run_suites_unknown_name():
    with pytest.raises(ValueError, match="unknown suite 'vibes'"):
        run_suites(["vibes"])


def test_run_suites_alias_and_all(monkeypatch):
    calls = []

    def fake_suite(tag):
        return lambda seed: calls.append((tag, seed)) or [tag]

    monkeypatch.setattr(verify, "SUITES", {"bases": fake_suite("b"),
                                           "models": fake_suite("m"),
                                           "gradients": fake_suite("g")})
    assert run_suites(["equivariance"], seed=4) == ["m"]
    assert calls == [("m", 4)]
    assert run_suites(["all"]) == ["b", "m", "g"]


def test_check_result_line_format():
    ok = CheckResult("thing", True, "fine", 1.234)
    bad = CheckResult("thing", False, "off by 2", 0.05)
    assert ok.line() == "PASS thing (1.23s): fine"
    assert bad.line().startswith("FAIL thing")
    assert ok.to_dict()["seconds"] == 1.234
