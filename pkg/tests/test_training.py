"""Training loop: optimizer arithmetic, schedules, metric computation,
deterministic trajectories, and the binary checkpoint format."""

import math

import numpy as np
import pytest

import zznet.engine as en
from zznet.engine import Tensor
from zznet.networks import (ModelConfig, VectorUnitConfig, WeightUnitConfig,
                            ZZUnitConfig, build_model)
from zznet.params import ParamStore
from zznet.toydata import DataGenConfig, as_arrays, generate_dataset
from zznet.training import (AdamState, BadCheckpointError, GradTape,
                            NanLossError, TapeConsumedError, TrainConfig,
                            adam_step, batch_at_epoch, epoch_stream, evaluate,
                            load_checkpoint, load_model, load_training_state,
                            loss_l2, lr_at_epoch, save_checkpoint, train)


def tiny_config():
    return ModelConfig("zz_net", (ZZUnitConfig(
        weight=WeightUnitConfig("ns_plus", (2,), (2, 1), two_cloud=True),
        vector=VectorUnitConfig("nc_plus", (1,))),))


def tiny_data(seed=0, counts=(8, 4, 4)):
    cfg = DataGenConfig(m=5, outlier_ratio=0.0, sigma=0.02, counts=counts,
                        seed=seed)
    splits = generate_dataset(cfg)
    return {k: as_arrays(v) for k, v in splits.items()}


# ---------------------------------------------------------------------------
# optimizer and schedules


def test_adam_matches_reference_update():
    store = ParamStore()
    store.register("w", (3,), is_complex=False, init=("const", 1.0))
    store.finalize(seed=0)
    state = AdamState.for_store(store)
    lr, b1, b2, eps = 0.1, 0.9, 0.99, 1e-8
    theta = store.get_flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rng = np.random.default_rng(5)
    for t in range(1, 4):
        g = rng.standard_normal(theta.shape)
        adam_step(state, store, g, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(store.get_flat(), theta, atol=1e-14)
    assert state.t == 3


def test_adam_clamps_activation_thresholds():
    store = ParamStore()
    store.register("eta", (2,), is_complex=False, kind="threshold",
                   init=("const", 0.001))
    store.finalize(seed=0)
    state = AdamState.for_store(store)
    adam_step(state, store, np.array([1.0, -1.0]), lr=0.5)
    flat = store.get_flat()
    assert flat[0] == 0.0  # pushed negative, clamped back
    assert flat[1] > 0.0


def test_lr_schedule_frozen_values():
    assert lr_at_epoch(5e-3, 1) == 5e-3
    assert lr_at_epoch(5e-3, 70) == 5e-3
    assert lr_at_epoch(5e-3, 71) == 2.5e-3
    assert lr_at_epoch(5e-3, 150) == 2.5e-3
    assert lr_at_epoch(5e-3, 160) == 1.25e-3
    assert lr_at_epoch(1e-2, 30, halve_after=(10, 20, 25)) == 1.25e-3


def test_batch_schedule():
    assert batch_at_epoch(8, 1, double_after=(18, 30)) == 8
    assert batch_at_epoch(8, 18, double_after=(18, 30)) == 8
    assert batch_at_epoch(8, 19, double_after=(18, 30)) == 16
    assert batch_at_epoch(8, 31, double_after=(18, 30)) == 32
    assert batch_at_epoch(4, 100) == 4


def test_loss_l2_value(rng):
    pred = Tensor(np.array([1.0 + 0j, 2.0j]))
    target = np.array([1.0 + 0j, 0.0])
    loss = loss_l2(pred, target)
    assert np.isclose(float(loss.val), (0.0 + 4.0) / 2.0)


def test_epoch_stream_reproducible():
    a = epoch_stream(3, 5).permutation(10)
    b = epoch_stream(3, 5).permutation(10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, epoch_stream(3, 6).permutation(10))


# ---------------------------------------------------------------------------
# metrics


class StubModel:
    """Fixed predictions, for testing the metric arithmetic in isolation."""

    def __init__(self, preds):
        self.preds = np.asarray(preds)
        self.offset = 0

    def rotation_estimate(self, z, x):
        n = z.shape[0]
        out = Tensor(self.preds[self.offset:self.offset + n])
        self.offset += n
        return out


def test_evaluate_perfect_predictions():
    theta = np.exp(2j * np.pi * np.linspace(0, 0.9, 10))
    data = (np.ones((10, 3), complex), np.ones((10, 3), complex), theta)
    out = evaluate(StubModel(theta), data, batch_size=4)
    assert out["count"] == 10
    assert out["mean_error"] == 0.0
    assert out["acc_1deg"] == out["acc_5deg"] == out["acc_10deg"] == 1.0


def test_evaluate_threshold_boundaries():
    theta = np.ones(4, complex)
    preds = theta * np.exp(1j * math.radians(2.0))  # between 1 and 5 degrees
    data = (np.ones((4, 3), complex), np.ones((4, 3), complex), theta)
    out = evaluate(StubModel(preds), data)
    assert out["acc_1deg"] == 0.0
    assert out["acc_5deg"] == 1.0 and out["acc_10deg"] == 1.0


# ---------------------------------------------------------------------------
# the training loop


def test_training_is_seed_deterministic():
    data = tiny_data()
    cfg = TrainConfig(epochs=3, batch_size=4, lr=1e-3, seed=11, calibrate=False)
    runs = []
    for _ in range(2):
        model = build_model(tiny_config(), seed=2)
        res = train(model, data["train"], data["val"], cfg)
        runs.append(res.final_params)
    np.testing.assert_array_equal(runs[0], runs[1])


def test_training_history_and_callback():
    data = tiny_data()
    model = build_model(tiny_config(), seed=2)
    cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=0, calibrate=False)
    seen = []
    res = train(model, data["train"], data["val"], cfg, callback=seen.append)
    assert len(res.history) == 2 and len(seen) == 2
    row = res.history[0]
    assert row["epoch"] == 1 and row["lr"] == 1e-3
    assert {"train_loss", "val_mean_error", "val_acc_1deg"} <= set(row)
    assert res.adam.t == 4  # two epochs of two batches


def test_early_stop_returns_best_epoch_params():
    data = tiny_data()
    model = build_model(tiny_config(), seed=2)
    cfg = TrainConfig(epochs=4, batch_size=4, lr=5e-2, seed=0,
                      early_stop=True, calibrate=False)
    res = train(model, data["train"], data["val"], cfg)
    assert 1 <= res.best_epoch <= 4
    errs = [r["val_mean_error"] for r in res.history]
    assert res.best_val_error == min(errs)
    assert res.best_epoch == int(np.argmin(errs)) + 1
    np.testing.assert_array_equal(res.final_params, model.store.get_flat())


def test_nan_loss_aborts():
    data = tiny_data()
    model = build_model(tiny_config(), seed=2)
    model.store.flat[:] = np.nan
    cfg = TrainConfig(epochs=1, batch_size=4, calibrate=False)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NanLossError) as info:
            train(model, data["train"], data["val"], cfg)
    assert info.value.epoch == 1


def test_grad_tape_single_use(rng):
    model = build_model(tiny_config(), seed=2)
    z = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    theta = np.exp(2j * np.pi * rng.random(2))
    loss = loss_l2(model.rotation_estimate(z, theta[:, None] * z), theta)
    tape = GradTape(loss, model.store)
    g = tape.backward()
    assert g.shape == (model.store.n_floats,)
    with pytest.raises(TapeConsumedError):
        tape.backward()


def test_train_config_round_trip():
    cfg = TrainConfig(epochs=50, batch_size=2, lr=4e-3, seed=9,
                      halve_after=(10, 20), double_after=(15,), beta2=0.95,
                      clip_norm=5.0, scale_jitter=0.1, early_stop=True,
                      calibrate=False)
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert isinstance(back.halve_after, tuple)


# ---------------------------------------------------------------------------
# checkpoints


def trained_tiny(tmp_path, epochs=2, early_stop=False):
    data = tiny_data()
    model = build_model(tiny_config(), seed=2)
    cfg = TrainConfig(epochs=epochs, batch_size=4, lr=1e-3, seed=0,
                      early_stop=early_stop, calibrate=False)
    res = train(model, data["train"], data["val"], cfg)
    path = tmp_path / "ck.zzn"
    save_checkpoint(path, model, extra={"train_config": cfg.to_dict(),
                                        "epoch": epochs},
                    adam=res.adam)
    return model, res, path, data, cfg


def test_checkpoint_round_trip(tmp_path):
    model, res, path, _, _ = trained_tiny(tmp_path)
    loaded, meta = load_model(path)
    np.testing.assert_array_equal(loaded.store.get_flat(), model.store.get_flat())
    assert loaded.config == model.config
    assert meta["extra"]["epoch"] == 2
    config, store = load_checkpoint(path)
    assert config == model.config
    np.testing.assert_array_equal(store.get_flat(), model.store.get_flat())


def test_checkpoint_optimizer_state_round_trip(tmp_path):
    model, res, path, _, _ = trained_tiny(tmp_path)
    _, _, adam = load_training_state(path)
    assert adam is not None and adam.t == res.adam.t
    np.testing.assert_array_equal(adam.m, res.adam.m)
    np.testing.assert_array_equal(adam.v, res.adam.v)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    data = tiny_data()
    cfg = TrainConfig(epochs=4, batch_size=4, lr=2e-3, seed=5, calibrate=False)

    straight = build_model(tiny_config(), seed=3)
    res_a = train(straight, data["train"], data["val"], cfg)

    first = build_model(tiny_config(), seed=3)
    half = TrainConfig.from_dict({**cfg.to_dict(), "epochs": 2})
    res_b = train(first, data["train"], data["val"], half)
    path = tmp_path / "mid.zzn"
    save_checkpoint(path, first, extra={"epoch": 2}, adam=res_b.adam)

    resumed, _, adam = load_training_state(path)
    res_c = train(resumed, data["train"], data["val"], cfg,
                  start_epoch=3, adam=adam)
    np.testing.assert_array_equal(res_a.final_params, res_c.final_params)


def test_checkpoint_rejects_bad_magic(tmp_path):
    _, _, path, _, _ = trained_tiny(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(BadCheckpointError, match="magic"):
        load_model(path)


def test_checkpoint_rejects_truncation(tmp_path):
    _, _, path, _, _ = trained_tiny(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(BadCheckpointError, match="truncated"):
        load_model(path)


def test_checkpoint_rejects_trailing_garbage(tmp_path):
    _, _, path, _, _ = trained_tiny(tmp_path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(BadCheckpointError, match="trailing"):
        load_model(path)


def test_checkpoint_rejects_catalog_hash_mismatch(tmp_path):
    import struct
    _, _, path, _, _ = trained_tiny(tmp_path)
    raw = bytearray(path.read_bytes())
    (blob_len,) = struct.unpack("<I", raw[9:13])
    raw[13 + blob_len] ^= 0xFF  # first byte of the stored catalog hash
    path.write_bytes(bytes(raw))
    with pytest.raises(BadCheckpointError, match="catalog"):
        load_model(path)


def test_checkpoint_without_optimizer_state(tmp_path):
    model = build_model(tiny_config(), seed=2)
    path = tmp_path / "bare.zzn"
    save_checkpoint(path, model)
    _, _, adam = load_training_state(path)
    assert adam is None
