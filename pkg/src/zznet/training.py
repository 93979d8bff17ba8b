"""Training: l2 loss on the rotation estimate, Adam with a fixed halving
schedule, deterministic batching, and a binary checkpoint format.

Checkpoint layout (little endian, frozen):

    5 bytes   magic "ZZNET"
    u32       format version (currently 1)
    u32       length of the metadata blob
    bytes     canonical JSON: model config, parameter registry, layer
              conventions, caller extras
    32 bytes  sha256 of the basis-catalog ordering descriptor
    u64       number of float64 parameter slots
    f8 * n    the flat parameter vector
    u8        optimizer-state flag
    [u64 step, f8 * n first moments, f8 * n second moments]  if flag is 1

The catalog hash ties saved coefficients to the basis ordering they were
trained against; loading with a different ordering must fail loudly rather
than silently permute weights. The optimizer block makes a checkpoint
resumable: together with the per-epoch shuffle streams it reproduces an
uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import engine as en
from .bases import catalog_hash
from .cloud import angle_threshold
from .engine import Tensor
from .params import ParamStore

CHECKPOINT_MAGIC = b"ZZNET"
CHECKPOINT_VERSION = 1
CONVENTIONS = {
    "invarization": "row_sum",
    "nc_plus_second_route": "mean",
    "bias_coefficients": "real_linear_pairs",
    "activation_order": "after_every_linear_except_unit_final",
}


class TapeConsumedError(RuntimeError):
    pass


class NanLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int, param_norm: float):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch} "
                         f"(parameter norm {param_norm:.6g})")
        self.epoch = epoch
        self.batch = batch
        self.param_norm = param_norm


class BadCheckpointError(RuntimeError):
    pass


class GradTape:
    """One forward pass worth of graph, rooted at a scalar loss."""

    def __init__(self, root: Tensor, store: ParamStore):
        self.root = root
        self.store = store
        self._consumed = False

    def backward(self) -> np.ndarray:
        """Accumulate adjoints into the store and return a copy of them."""
        if self._consumed:
            raise TapeConsumedError("this tape has already been walked; interior "
                                    "buffers are freed during the sweep")
        self._consumed = True
        en.backward(self.root)
        return self.store.get_grad_flat()


def backward(tape: GradTape) -> np.ndarray:
    return tape.backward()


def loss_l2(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared modulus of the prediction error over the batch."""
    target = np.asarray(target, dtype=np.complex128)
    diff = en.add(pred, Tensor(-target))
    return en.scale(en.tsum(en.abs2(diff)), 1.0 / target.shape[0])


def lr_at_epoch(base_lr: float, epoch: int, halve_after=(70, 150)) -> float:
    """Epochs are 1-based; the rate halves after finishing each listed epoch."""
    lr = base_lr
    for t in halve_after:
        if epoch > t:
            lr *= 0.5
    return lr


def batch_at_epoch(base: int, epoch: int, double_after=()) -> int:
    """Growing-batch counterpart of lr_at_epoch: doubles after each listed
    epoch, trading gradient noise for steps as training settles."""
    b = base
    for t in double_after:
        if epoch > t:
            b *= 2
    return b


@dataclass
class AdamState:
    """Elementwise moment estimates over the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_store(cls, store: ParamStore) -> "AdamState":
        n = store.n_floats
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(state: AdamState, store: ParamStore, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; activation radii are re-clamped."""
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    mhat = state.m / (1 - beta1 ** state.t)
    vhat = state.v / (1 - beta2 ** state.t)
    store.flat -= lr * mhat / (np.sqrt(vhat) + eps)
    store.clamp_thresholds()


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 5e-3
    halve_after: tuple = (70, 150)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop: bool = False  # keep the epoch with the best validation mean error
    calibrate: bool = True  # rescale init on the first training batch
    double_after: tuple = ()  # epochs after which the batch size doubles
    clip_norm: float = 0.0  # global gradient-norm ceiling; 0 disables
    scale_jitter: float = 0.0  # half-width of log-uniform cloud rescaling; 0 disables
    jitter_until: int = 0  # last epoch with jitter on; 0 keeps it on throughout
    reflect: bool = False  # mirror half of each batch (conjugate pair and target)
    ema: float = 0.0  # per-step decay of a parameter running average; 0 disables

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "halve_after": list(self.halve_after),
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "seed": self.seed, "early_stop": self.early_stop,
                "calibrate": self.calibrate, "double_after": list(self.double_after),
                "clip_norm": self.clip_norm, "scale_jitter": self.scale_jitter,
                "jitter_until": self.jitter_until, "reflect": self.reflect,
                "ema": self.ema}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["halve_after"] = tuple(d.get("halve_after", (70, 150)))
        d["double_after"] = tuple(d.get("double_after", ()))
        return cls(**d)


@dataclass
class TrainResult:
    history: list
    final_params: np.ndarray
    best_epoch: int
    best_val_error: float
    adam: AdamState = None


def _unpack(data):
    if isinstance(data, tuple):
        z, x, theta = data
    else:
        z, x, theta = data.z, data.x, data.theta
    return (np.asarray(z, dtype=np.complex128), np.asarray(x, dtype=np.complex128),
            np.asarray(theta, dtype=np.complex128))


def evaluate(model, data, batch_size: int = 256) -> dict:
    """Fractions of estimates within the 1, 5 and 10 degree chords."""
    z, x, theta = _unpack(data)
    errors = []
    with en.no_grad():
        for lo in range(0, z.shape[0], batch_size):
            pred = model.rotation_estimate(z[lo:lo + batch_size], x[lo:lo + batch_size]).val
            errors.append(np.abs(pred - theta[lo:lo + batch_size]))
    err = np.concatenate(errors) if errors else np.zeros(0)
    out = {"count": int(err.shape[0]), "mean_error": float(err.mean()) if err.size else float("nan")}
    for deg in (1, 5, 10):
        out[f"acc_{deg}deg"] = float((err <= angle_threshold(deg)).mean()) if err.size else float("nan")
    return out


def epoch_stream(seed: int, epoch: int) -> np.random.Generator:
    """Counter-based stream for one epoch's batch order, so a resumed run
    shuffles exactly like the uninterrupted one."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(epoch,))
    return np.random.Generator(np.random.Philox(ss))


def train(model, train_data, val_data, cfg: TrainConfig, callback=None,
          start_epoch: int = 1, adam: AdamState = None) -> TrainResult:
    """Deterministic minibatch training; returns per-epoch history.

    Each epoch's batch order comes from its own stream derived from
    (cfg.seed, epoch), so a fixed seed reproduces the whole trajectory bit
    for bit in a single-threaded run, including across checkpoint resume
    (pass start_epoch and the saved optimizer state). A non-finite loss
    aborts immediately. With cfg.ema > 0 validation and the returned
    parameters use a running average of the iterates; the average restarts
    on resume.
    """
    z, x, theta = _unpack(train_data)
    n = z.shape[0]
    store = model.store
    if cfg.calibrate and start_epoch == 1 and model.config.kind == "zz_net":
        from .networks import calibrate_output_scale  # deferred, keeps imports acyclic
        k = min(128, n)
        calibrate_output_scale(model, z[:k], x[:k])
    if adam is None:
        adam = AdamState.for_store(store)
    ema_flat = store.get_flat() if cfg.ema > 0.0 else None
    history = []
    best_err, best_epoch, best_params = float("inf"), 0, None
    for epoch in range(start_epoch, cfg.epochs + 1):
        lr = lr_at_epoch(cfg.lr, epoch, cfg.halve_after)
        bs = batch_at_epoch(cfg.batch_size, epoch, cfg.double_after)
        stream = epoch_stream(cfg.seed, epoch)
        order = stream.permutation(n)
        batch_losses = []
        for bidx, lo in enumerate(range(0, n, bs)):
            sel = order[lo:lo + bs]
            zb, xb, tb = z[sel], x[sel], theta[sel]
            if cfg.scale_jitter > 0.0 and (cfg.jitter_until == 0
                                           or epoch <= cfg.jitter_until):
                # rescaling a pair leaves its rotation fixed, so this only
                # teaches the magnitude head scale invariance
                s = np.exp(stream.uniform(-cfg.scale_jitter, cfg.scale_jitter,
                                          sel.shape[0]))
                zb, xb = zb * s[:, None], xb * s[:, None]
            if cfg.reflect:
                # conjugating a pair mirrors both clouds and conjugates the
                # rotation between them, so reflected copies are free labels
                flip = stream.random(sel.shape[0]) < 0.5
                zb = np.where(flip[:, None], zb.conj(), zb)
                xb = np.where(flip[:, None], xb.conj(), xb)
                tb = np.where(flip, tb.conj(), tb)
            store.zero_grad()
            pred = model.rotation_estimate(zb, xb)
            loss = loss_l2(pred, tb)
            lv = float(loss.val)
            if not np.isfinite(lv):
                raise NanLossError(epoch, bidx, float(np.linalg.norm(store.flat)))
            grad = GradTape(loss, store).backward()
            if cfg.clip_norm > 0.0:
                gn = float(np.linalg.norm(grad))
                if gn > cfg.clip_norm:
                    grad = grad * (cfg.clip_norm / gn)
            adam_step(adam, store, grad, lr, cfg.beta1, cfg.beta2, cfg.eps)
            if ema_flat is not None:
                ema_flat *= cfg.ema
                ema_flat += (1.0 - cfg.ema) * store.flat
            batch_losses.append(lv)
        live = None
        if ema_flat is not None:
            live = store.get_flat()
            store.set_flat(ema_flat)
        val_metrics = evaluate(model, val_data)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(batch_losses)),
               "val_mean_error": val_metrics["mean_error"],
               "val_acc_1deg": val_metrics["acc_1deg"],
               "val_acc_5deg": val_metrics["acc_5deg"],
               "val_acc_10deg": val_metrics["acc_10deg"]}
        history.append(row)
        if callback is not None:
            callback(row)
        if val_metrics["mean_error"] < best_err:
            best_err, best_epoch = val_metrics["mean_error"], epoch
            if cfg.early_stop:
                best_params = store.get_flat()
        if live is not None:
            store.set_flat(live)
    if ema_flat is not None:
        store.set_flat(ema_flat)
    if cfg.early_stop and best_params is not None:
        store.set_flat(best_params)
    return TrainResult(history=history, final_params=store.get_flat(),
                       best_epoch=best_epoch, best_val_error=best_err, adam=adam)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, extra: dict = None, adam: AdamState = None):
    meta = {
        "config": model.config.to_dict(),
        "registry": model.store.registry_descriptor(),
        "conventions": CONVENTIONS,
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    flat = model.store.get_flat()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(catalog_hash())
        fh.write(struct.pack("<Q", flat.shape[0]))
        fh.write(flat.astype("<f8").tobytes())
        if adam is None:
            fh.write(b"\x00")
        else:
            if adam.m.shape[0] != flat.shape[0]:
                raise ValueError("optimizer state length does not match parameters")
            fh.write(b"\x01")
            fh.write(struct.pack("<Q", adam.t))
            fh.write(adam.m.astype("<f8").tobytes())
            fh.write(adam.v.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise BadCheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _load(path):
    from .networks import Model, ModelConfig  # deferred to keep imports acyclic

    with open(path, "rb") as fh:
        if _read_exact(fh, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
            raise BadCheckpointError("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise BadCheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        meta = json.loads(_read_exact(fh, blob_len, "metadata").decode("utf-8"))
        saved_hash = _read_exact(fh, 32, "catalog hash")
        if saved_hash != catalog_hash():
            raise BadCheckpointError("catalog ordering hash mismatch; parameters "
                                     "would be misinterpreted")
        (n,) = struct.unpack("<Q", _read_exact(fh, 8, "parameter count"))
        flat = np.frombuffer(_read_exact(fh, 8 * n, "parameters"), dtype="<f8").copy()
        flag = _read_exact(fh, 1, "optimizer flag")
        adam = None
        if flag == b"\x01":
            (t,) = struct.unpack("<Q", _read_exact(fh, 8, "optimizer step"))
            m = np.frombuffer(_read_exact(fh, 8 * n, "first moments"), dtype="<f8").copy()
            v = np.frombuffer(_read_exact(fh, 8 * n, "second moments"), dtype="<f8").copy()
            adam = AdamState(m=m, v=v, t=t)
        elif flag != b"\x00":
            raise BadCheckpointError("corrupt optimizer flag")
        if fh.read(1):
            raise BadCheckpointError("trailing bytes after checkpoint payload")
    config = ModelConfig.from_dict(meta["config"])
    store = ParamStore()
    model = Model(config, store)
    store.finalize(seed=0)
    if store.registry_descriptor() != meta["registry"]:
        raise BadCheckpointError("parameter registry mismatch between the saved "
                                 "model and this build")
    if flat.shape[0] != store.n_floats:
        raise BadCheckpointError("parameter vector length mismatch")
    store.set_flat(flat)
    return model, meta, adam


def load_model(path):
    """Rebuild the model a checkpoint describes and load its parameters."""
    model, meta, _ = _load(path)
    return model, meta


def load_training_state(path):
    """Model, metadata and optimizer state, for resuming a run."""
    return _load(path)


def load_checkpoint(path):
    """Checkpoint as (config, finalized parameter store)."""
    model, _ = load_model(path)
    return model.config, model.store
