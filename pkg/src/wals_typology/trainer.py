"""AdaDelta training loop, learning-rate schedule, gradient clipping and checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .dataset import Dataset, eval_batches, iter_batches
from .evaluator import TAU, accuracy, decode, score
from .losses import ClassWeights, flat_loss, l2_penalty, multitask_loss
from .nn.model import FLAT, Model, ModelConfig, recurrent_weight_names
from .wals_schema import LabelSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    decay: float = 0.9
    decay_steps: float = 3e5
    clip_norm: float = 10.0
    batch_size: int = 8
    l2: float = 0.05
    rho: float = 0.95
    eps: float = 1e-8
    max_steps: int = 100_000
    eval_interval: int = 1000
    checkpoint_interval: int = 0
    two_sided: bool = False
    task_scale: bool = False
    tau: float = TAU
    seed: int = 0
    init_seed: int | None = None
    dropout_seed: int | None = None

    def __post_init__(self):
        positive = ("lr", "decay", "decay_steps", "clip_norm", "batch_size", "rho", "eps",
                    "max_steps", "eval_interval")
        for k in positive:
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.l2 < 0 or self.checkpoint_interval < 0:
            raise ValueError("l2 and checkpoint_interval must be non-negative")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def seeds(self) -> tuple[int, int, int]:
        """(data order, parameter init, dropout) seeds."""
        s = self.seed
        return (s, s + 1 if self.init_seed is None else self.init_seed,
                s + 2 if self.dropout_seed is None else self.dropout_seed)

    def to_dict(self):
        return dataclasses.asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def lr_schedule(step: int, config: TrainConfig = TrainConfig()) -> float:
    """Continuous exponential decay ``lr * decay ** (step / decay_steps)``."""
    return config.lr * config.decay ** (step / config.decay_steps)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_global(grads: dict, max_norm: float = 10.0) -> dict:
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDiverged("non-finite gradient")
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class OptimizerState:
    eg2: dict
    edx2: dict
    rho: float = 0.95
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, rho=0.95, eps=1e-8):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, rho, eps)


def adadelta_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """In-place AdaDelta update; ``lr`` scales the native AdaDelta step."""
    rho, eps = state.rho, state.eps
    for k, p in params.items():
        g = grads[k]
        eg2 = state.eg2[k]
        eg2 *= rho
        eg2 += (1 - rho) * g * g
        dx = -np.sqrt(state.edx2[k] + eps) / np.sqrt(eg2 + eps) * g
        edx2 = state.edx2[k]
        edx2 *= rho
        edx2 += (1 - rho) * dx * dx
        p += lr * dx


# -- checkpoints ------------------------------------------------------------

MAGIC = b"WTCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Write ``MAGIC | u64 manifest length | JSON manifest | little-endian arrays``."""
    entries, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        data = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.newbyteorder("<").str,
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = json.dumps({"version": 1, "meta": meta, "arrays": entries,
                           "payload_sha256": hashlib.sha256(payload).hexdigest()},
                          sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<Q", len(manifest)) + manifest + payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: corrupt checkpoint (bad header)")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + mlen:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated manifest)")
    try:
        manifest = json.loads(blob[16:16 + mlen])
    except ValueError:
        raise CheckpointError(f"{path}: corrupt checkpoint (unreadable manifest)") from None
    payload = blob[16 + mlen:]
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"{path}: corrupt checkpoint (payload checksum mismatch)")
    arrays = {}
    for e in manifest["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, manifest["meta"]


@dataclass
class TrainState:
    step: int = 0
    best_accuracy: float = -1.0
    best_step: int = -1
    loss_sum: float = 0.0
    loss_count: int = 0


def space_meta(space: LabelSpace, catalog_text: str) -> dict:
    return {"catalog": catalog_text, "observed": space.observed.astype(int).tolist()}


def checkpoint_arrays(model: Model, opt: OptimizerState | None) -> dict:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in model.buffers.items()})
    if opt is not None:
        arrays.update({f"opt/eg2/{k}": v for k, v in opt.eg2.items()})
        arrays.update({f"opt/edx2/{k}": v for k, v in opt.edx2.items()})
    return arrays


def write_training_checkpoint(path, model, opt, state: TrainState, tcfg: TrainConfig, extra: dict):
    meta = {"artifact_version": __version__, "model_config": model.config.to_dict(),
            "train_config": tcfg.to_dict(), "train_state": dataclasses.asdict(state), **extra}
    save_checkpoint(path, checkpoint_arrays(model, opt), meta)


def restore(path, config: ModelConfig | None = None):
    """Rebuild ``(model, optimizer state, train state, meta)`` from a checkpoint.

    If ``config`` is given the checkpoint must have been written for exactly
    that architecture.
    """
    arrays, meta = load_checkpoint(path)
    ckpt_cfg = ModelConfig.from_dict(meta["model_config"])
    if config is not None and config != ckpt_cfg:
        diff = sorted(k for k, v in config.to_dict().items() if meta["model_config"].get(k) != v)
        raise CheckpointError(f"{path}: checkpoint was written for a different model ({', '.join(diff)})")
    model = Model(ckpt_cfg, seed=0)
    for group, target in (("param", model.params), ("buffer", model.buffers)):
        for k, ref in target.items():
            got = arrays.get(f"{group}/{k}")
            if got is None or got.shape != ref.shape:
                raise CheckpointError(f"{path}: array {group}/{k} missing or of the wrong shape")
            target[k] = got.astype(ref.dtype)
    extra = {k[len("param/"):] for k in arrays if k.startswith("param/")} - set(model.params)
    if extra:
        raise CheckpointError(f"{path}: unexpected arrays {sorted(extra)}")
    opt = None
    if any(k.startswith("opt/") for k in arrays):
        tc = meta.get("train_config", {})
        opt = OptimizerState({k: arrays[f"opt/eg2/{k}"] for k in model.params},
                             {k: arrays[f"opt/edx2/{k}"] for k in model.params},
                             tc.get("rho", 0.95), tc.get("eps", 1e-8))
    state = TrainState(**meta.get("train_state", {}))
    return model, opt, state, meta


# -- inference --------------------------------------------------------------

def predict_logits(model: Model, dataset: Dataset, batch_size: int = 64) -> np.ndarray:
    out = np.zeros((len(dataset), model.config.n_classes), dtype=np.float64)
    for idx in eval_batches(dataset, batch_size):
        z, _ = model.forward(dataset.batch(idx, model.pad_id), train=False)
        out[idx] = z
    return out


def evaluate(model: Model, dataset: Dataset, space: LabelSpace, tau: float = TAU):
    logits = predict_logits(model, dataset)
    preds = decode(logits, space, model.config.output, tau)
    return preds, score(preds, dataset.gold(space), space.feature_ids, dataset.languages)


# -- training loop ----------------------------------------------------------

def make_loss(config: ModelConfig, space: LabelSpace, weights: ClassWeights, tcfg: TrainConfig) -> Callable:
    if config.output == FLAT:
        return lambda z, t: flat_loss(z, t, space, weights, two_sided=tcfg.two_sided)
    return lambda z, t: multitask_loss(z, t, space, weights, task_scale=tcfg.task_scale)


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    state: TrainState = field(default_factory=TrainState)
    model: Model | None = None


LOG_HEADER = "step,lr,train_loss,dev_accuracy\n"


def train(model: Model, train_set: Dataset, dev_set: Dataset | None, space: LabelSpace,
          weights: ClassWeights, tcfg: TrainConfig, out_dir=None, opt: OptimizerState | None = None,
          state: TrainState | None = None, extra_meta: dict | None = None,
          stop_at: int | None = None) -> TrainResult:
    """Run AdaDelta from ``state.step`` up to ``tcfg.max_steps`` (or ``stop_at``).

    Every ``eval_interval`` steps the dev split is scored and a line is
    appended to ``out_dir/loss_log.csv``; the best dev accuracy is kept in
    ``out_dir/best.ckpt``. ``checkpoint_interval`` additionally writes
    ``out_dir/step-<n>.ckpt``, and the final state goes to ``last.ckpt``.
    """
    opt = opt or OptimizerState.zeros_like(model.params, tcfg.rho, tcfg.eps)
    state = state or TrainState()
    extra_meta = extra_meta or {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logf = out / "loss_log.csv"
        if state.step == 0 or not logf.exists():
            logf.write_text(LOG_HEADER)
    loss_fn = make_loss(model.config, space, weights, tcfg)
    reg_names = recurrent_weight_names(model.params)
    data_seed, _, dropout_seed = tcfg.seeds
    end = min(tcfg.max_steps, stop_at) if stop_at is not None else tcfg.max_steps
    result = TrainResult(state=state, model=model)
    batches = iter_batches(train_set, tcfg.batch_size, data_seed, state.step)
    dtype = model.config.np_dtype

    def save(name):
        if out is not None:
            write_training_checkpoint(out / name, model, opt, state, tcfg, extra_meta)

    while state.step < end:
        idx = next(batches)
        batch = train_set.batch(idx, model.pad_id)
        lr = lr_schedule(state.step, tcfg)
        rng = np.random.default_rng([dropout_seed, state.step])
        logits, cache = model.forward(batch, train=True, rng=rng)
        loss, dz = loss_fn(logits, batch.targets)
        grads = model.backward(dz.astype(dtype), cache)
        reg, rgrads = l2_penalty(model.params, reg_names, tcfg.l2)
        for k, g in rgrads.items():
            grads[k] = grads[k] + g
        total = float(loss) + reg
        if not math.isfinite(total):
            raise TrainingDiverged(f"non-finite loss at step {state.step} (batch {idx.tolist()})")
        try:
            grads = clip_global(grads, tcfg.clip_norm)
        except TrainingDiverged:
            raise TrainingDiverged(f"non-finite gradient at step {state.step} (batch {idx.tolist()})") from None
        adadelta_step(model.params, grads, opt, lr)
        state.step += 1
        state.loss_sum += total
        state.loss_count += 1

        if state.step % tcfg.eval_interval == 0 or state.step == tcfg.max_steps:
            acc = float("nan")
            if dev_set is not None and len(dev_set):
                acc = accuracy(evaluate(model, dev_set, space, tcfg.tau)[1])
            row = (state.step, lr, state.loss_sum / state.loss_count, acc)
            result.log.append(row)
            state.loss_sum, state.loss_count = 0.0, 0
            log.info("step %d lr %.3g loss %.6f dev_acc %.4f", *row)
            if out is not None:
                with open(logf, "a") as fh:
                    fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")
            if acc > state.best_accuracy:
                state.best_accuracy, state.best_step = acc, state.step
                save("best.ckpt")
        if tcfg.checkpoint_interval and state.step % tcfg.checkpoint_interval == 0:
            save(f"step-{state.step}.ckpt")
    save("last.ckpt")
    return result
