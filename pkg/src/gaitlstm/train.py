"""Mini-batch training loop, hyperparameter presets, checkpoints and curve CSVs."""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import NormStats, Segment, stack_segments
from .errors import (
    CheckpointDimensionError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    InvalidConfigError,
    InvalidInputError,
    ShapeError,
    TrainingError,
)
from .model import (
    HeadParameters,
    LstmClassifier,
    LSTM_NAMES,
    LstmParameters,
    data_gradient_sum,
    draw_mask,
    init_classifier,
    predict_proba,
)
from .optim import AdamState, adam_update, l2_gradients, l2_penalty, weight_arrays
from .seeding import DROPOUT, INIT, SHUFFLE, generator

# Segments per gradient work unit. Fixed so the reduction order, and hence
# every result, is independent of the worker count.
GRAD_CHUNK = 16


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int
    epochs: int
    l2_lambda: float
    lr: float
    batch_size: int
    dropout_p: float = 0.5
    seed: int = 0
    preset_name: str | None = None
    dense_dim: int = 0
    select_best_val: bool = False

    def validate(self) -> "TrainConfig":
        if self.hidden_dim < 1:
            raise InvalidConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.epochs < 0:
            raise InvalidConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_lambda < 0:
            raise InvalidConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.lr < 0:
            raise InvalidConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.dropout_p < 1:
            raise InvalidConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.dense_dim < 0:
            raise InvalidConfigError(f"dense_dim must be >= 0, got {self.dense_dim}")
        return self

    def describe(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items())


# hidden, epochs, L2, learning rate, batch size
PRESETS = {
    "model1": TrainConfig(hidden_dim=64, epochs=50, l2_lambda=0.0005, lr=0.001, batch_size=128, preset_name="model1"),
    "model2": TrainConfig(hidden_dim=128, epochs=60, l2_lambda=0.005, lr=0.0001, batch_size=64, preset_name="model2"),
    "model3": TrainConfig(hidden_dim=256, epochs=80, l2_lambda=0.0005, lr=0.0001, batch_size=64, preset_name="model3"),
}

# Reported validation figures for each preset: precision, sensitivity, specificity, accuracy.
REPORTED_METRICS = {
    "model1": {"precision": 0.81, "sensitivity": 0.80, "specificity": 0.82, "accuracy": 0.7692},
    "model2": {"precision": 0.90, "sensitivity": 0.88, "specificity": 0.89, "accuracy": 0.8894},
    "model3": {"precision": 0.98, "sensitivity": 0.99, "specificity": 0.96, "accuracy": 0.9771},
}


def resolve_config(preset: str | None = None, **overrides) -> TrainConfig:
    """Preset values overlaid with every override that is not ``None``."""
    given = {k: v for k, v in overrides.items() if v is not None}
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return replace(PRESETS[preset], **given).validate()
    missing = [k for k in ("hidden_dim", "epochs", "l2_lambda", "lr", "batch_size") if k not in given]
    if missing:
        raise InvalidConfigError(f"without a preset these settings are required: {', '.join(missing)}")
    return TrainConfig(**given).validate()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float

    def progress_line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} train_acc={self.train_accuracy!r} "
            f"val_loss={self.val_loss!r} val_acc={self.val_accuracy!r}"
        )


@dataclass
class Checkpoint:
    config: TrainConfig
    norm: NormStats
    model: LstmClassifier
    adam: AdamState | None = None
    epochs_completed: int = 0
    batches_completed: int = 0
    selected_epoch: int = 0
    format_version: int = 1


def batch_gradients(
    model: LstmClassifier,
    xs: np.ndarray,
    ys: np.ndarray,
    l2: float,
    masks: np.ndarray,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Mean data loss, L2 term and mean-plus-L2 gradient of one mini-batch.

    The batch is cut into fixed ``GRAD_CHUNK`` pieces whose summed gradients
    are reduced in chunk order.
    """
    B = xs.shape[0]
    starts = range(0, B, GRAD_CHUNK)

    def work(s):
        return data_gradient_sum(model, xs[s:s + GRAD_CHUNK], ys[s:s + GRAD_CHUNK], masks[s:s + GRAD_CHUNK])

    parts = list(pool.map(work, starts)) if pool is not None else [work(s) for s in starts]
    ce = 0.0
    total = None
    for ce_part, g in parts:
        ce += ce_part
        if total is None:
            total = {k: v.copy() for k, v in g.items()}
        else:
            for k, v in g.items():
                total[k] += v
    params = model.params()
    reg = l2_gradients(params, l2)
    grads = {k: total[k] / B + reg[k] for k in params}
    return ce / B, l2_penalty(weight_arrays(params), l2), grads


def _evaluate(model: LstmClassifier, xs, ys, l2: float) -> tuple[float, float, np.ndarray]:
    """(loss, accuracy, probs) in inference mode; loss includes the L2 term."""
    probs = predict_proba(model, xs)
    picked = np.clip(probs[np.arange(len(ys)), ys], 1e-12, 1.0)
    loss = float(-np.mean(np.log(picked))) + l2_penalty(weight_arrays(model.params()), l2)
    acc = float(np.mean(np.argmax(probs, axis=1) == ys))
    return loss, acc, probs


def train(
    config: TrainConfig,
    train_segments: Sequence[Segment],
    val_segments: Sequence[Segment],
    norm: NormStats | None = None,
    progress: Callable[[EpochRecord], None] | None = None,
    threads: int = 1,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train from a seeded initialization; returns the final (or best-val) checkpoint and curves.

    Segments are expected to be normalized already; ``norm`` is only recorded.
    """
    config.validate()
    if not train_segments:
        raise InvalidInputError("training set is empty")
    if not val_segments:
        raise InvalidInputError("validation set is empty")
    xs, ys = stack_segments(train_segments)
    vx, vy = stack_segments(val_segments)
    if vx.shape[1:] != xs.shape[1:]:
        raise ShapeError(f"train segments {xs.shape[1:]} and val segments {vx.shape[1:]} differ")
    n, _, d = xs.shape
    norm = norm if norm is not None else NormStats.identity(d)

    model = init_classifier(
        d, config.hidden_dim, generator(config.seed, INIT),
        dense_dim=config.dense_dim, dropout_p=config.dropout_p,
    )
    adam = AdamState.for_params(model.params(), lr=config.lr)
    records: list[EpochRecord] = []
    best: tuple[float, int, LstmClassifier] | None = None
    batches = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = generator(config.seed, SHUFFLE, epoch).permutation(n)
            for b, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start:start + config.batch_size]
                masks = draw_mask(
                    generator(config.seed, DROPOUT, epoch, b), (len(idx), config.hidden_dim), config.dropout_p
                )
                data_loss, reg_loss, grads = batch_gradients(model, xs[idx], ys[idx], config.l2_lambda, masks, pool)
                if not math.isfinite(data_loss + reg_loss) or not all(
                    np.all(np.isfinite(g)) for g in grads.values()
                ):
                    raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
                adam_update(adam, model.params(), grads)
                batches += 1
            tr_loss, tr_acc, _ = _evaluate(model, xs, ys, config.l2_lambda)
            va_loss, va_acc, _ = _evaluate(model, vx, vy, config.l2_lambda)
            rec = EpochRecord(epoch, tr_loss, tr_acc, va_loss, va_acc)
            records.append(rec)
            if progress is not None:
                progress(rec)
            if config.select_best_val and (best is None or va_acc > best[0]):
                best = (va_acc, epoch, model.copy())
    finally:
        if pool is not None:
            pool.shutdown()

    selected_epoch = config.epochs
    if best is not None:
        _, selected_epoch, model = best
    cp = Checkpoint(
        config=config, norm=norm, model=model, adam=adam,
        epochs_completed=config.epochs, batches_completed=batches, selected_epoch=selected_epoch,
    )
    return cp, records


# ---------------------------------------------------------------------------
# checkpoint file
#
#   magic "GLSTMCKP" | u32 version | u32 len + utf-8 "key=value" header lines
#   | u32 tensor count | per tensor: u16 len + name, u8 ndim, u64 dims..., f64 data
#
# All integers and reals little-endian.

MAGIC = b"GLSTMCKP"
FORMAT_VERSION = 1
_CONFIG_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _header(cp: Checkpoint) -> str:
    m = cp.model
    kv = {f"config.{k}": v for k, v in asdict(cp.config).items()}
    kv.update({
        "input_dim": m.lstm.input_dim,
        "hidden_dim": m.lstm.hidden_dim,
        "num_classes": m.head.num_classes,
        "dense_dim": m.head.dense_dim,
        "dropout_p": m.dropout_p,
        "epochs_completed": cp.epochs_completed,
        "batches_completed": cp.batches_completed,
        "selected_epoch": cp.selected_epoch,
        "has_adam": int(cp.adam is not None),
    })
    if cp.adam is not None:
        a = cp.adam
        kv.update({"adam.t": a.t, "adam.lr": a.lr, "adam.beta1": a.beta1,
                   "adam.beta2": a.beta2, "adam.epsilon": a.epsilon})
    return "".join(f"{k}={_enc(v)}\n" for k, v in kv.items())


def _enc(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(int(v))
    return str(v)


def _tensors(cp: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [("norm.mean", cp.norm.mean), ("norm.std", cp.norm.std)]
    out += list(cp.model.params().items())
    if cp.adam is not None:
        for k in cp.model.params():
            out.append((f"adam.m.{k}", cp.adam.m[k]))
            out.append((f"adam.v.{k}", cp.adam.v[k]))
    return out


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", cp.format_version))
    header = _header(cp).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    tensors = _tensors(cp)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("ascii")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(cp: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(cp))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.source}: file ends inside {what} (need {n} bytes at offset {self.pos}, "
                f"{len(self.data) - self.pos} left)"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _parse_value(text: str, typ):
    if text == "none":
        return None
    typ = str(typ)
    if "bool" in typ:
        return bool(int(text))
    if "int" in typ:
        return int(text)
    if "float" in typ:
        return float(text)
    return text


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint: magic, version, headers and every tensor shape."""
    data = Path(path).read_bytes()
    return checkpoint_from_bytes(data, str(path))


def checkpoint_from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    try:
        header_text = r.take(hlen, "header").decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError(f"{source}: header is not valid UTF-8") from None
    kv = dict(line.split("=", 1) for line in header_text.splitlines() if line)
    try:
        cfg = TrainConfig(**{
            k[len("config."):]: _parse_value(v, _CONFIG_TYPES[k[len("config."):]])
            for k, v in kv.items() if k.startswith("config.")
        })
        D, H = int(kv["input_dim"]), int(kv["hidden_dim"])
        K, M = int(kv["num_classes"]), int(kv["dense_dim"])
        dropout_p = float(kv["dropout_p"])
        has_adam = bool(int(kv["has_adam"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: malformed header ({exc})") from None

    expected = {"norm.mean": (D,), "norm.std": (D,)}
    for g in "ifoc":
        expected[f"w_x{g}"] = (H, D)
    for g in "ifoc":
        expected[f"w_h{g}"] = (H, H)
    for g in "ifoc":
        expected[f"b_{g}"] = (H,)
    if M:
        expected["w_mid"] = (M, H)
        expected["b_mid"] = (M,)
        expected["w_out"] = (K, M)
    else:
        expected["w_out"] = (K, H)
    expected["b_out"] = (K,)
    param_names = [k for k in expected if not k.startswith("norm.")]
    if has_adam:
        for k in param_names:
            expected[f"adam.m.{k}"] = expected[k]
            expected[f"adam.v.{k}"] = expected[k]

    (count,) = r.unpack("<I", "tensor count")
    if count != len(expected):
        raise CheckpointDimensionError(f"{source}: {count} tensors stored, header implies {len(expected)}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.take(nlen, "tensor name").decode("ascii", errors="replace")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{ndim}Q", f"dimensions of {name}")
        if name not in expected:
            raise CheckpointDimensionError(f"{source}: unexpected tensor {name!r}")
        if tuple(dims) != expected[name]:
            raise CheckpointDimensionError(
                f"{source}: tensor {name} has dimensions {tuple(dims)}, header implies {expected[name]}"
            )
        size = int(np.prod(dims)) * 8
        have = len(data) - r.pos
        if have < size:
            raise CheckpointDimensionError(
                f"{source}: tensor {name} declares {size // 8} values but only {have // 8} remain"
            )
        tensors[name] = np.frombuffer(r.take(size, name), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointDimensionError(f"{source}: {len(data) - r.pos} trailing bytes after last tensor")
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointDimensionError(f"{source}: missing tensors {sorted(missing)}")

    try:
        lstm = LstmParameters(**{k: tensors[k] for k in LSTM_NAMES})
        head = HeadParameters(
            w_out=tensors["w_out"], b_out=tensors["b_out"],
            w_mid=tensors.get("w_mid"), b_mid=tensors.get("b_mid"),
        )
        model = LstmClassifier(lstm, head, dropout_p)
    except ShapeError as exc:
        raise CheckpointDimensionError(f"{source}: {exc}") from None

    adam = None
    if has_adam:
        adam = AdamState(
            lr=float(kv["adam.lr"]), beta1=float(kv["adam.beta1"]), beta2=float(kv["adam.beta2"]),
            epsilon=float(kv["adam.epsilon"]), t=int(kv["adam.t"]),
            m={k: tensors[f"adam.m.{k}"] for k in param_names},
            v={k: tensors[f"adam.v.{k}"] for k in param_names},
        )
    return Checkpoint(
        config=cfg,
        norm=NormStats(tensors["norm.mean"], tensors["norm.std"]),
        model=model,
        adam=adam,
        epochs_completed=int(kv["epochs_completed"]),
        batches_completed=int(kv["batches_completed"]),
        selected_epoch=int(kv["selected_epoch"]),
        format_version=version,
    )


def export_text(cp: Checkpoint) -> str:
    """Lossless human-readable dump: the header lines, then every tensor value via ``repr``."""
    out = [f"format_version={cp.format_version}", _header(cp).rstrip("\n")]
    for name, arr in _tensors(cp):
        out.append(f"tensor {name} {' '.join(str(d) for d in arr.shape)}")
        out.append(" ".join(repr(float(v)) for v in np.ravel(arr)))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# curves

CURVE_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


def emit_curves(records: Sequence[EpochRecord], path) -> None:
    if not records:
        raise InvalidInputError("no epoch records to write")
    lines = [CURVE_HEADER]
    for r in records:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.train_accuracy!r},{r.val_loss!r},{r.val_accuracy!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curves(path) -> list[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise InvalidInputError(f"{path}: missing curve header {CURVE_HEADER!r}")
    out = []
    for line in lines[1:]:
        e, a, b, c, d = line.split(",")
        out.append(EpochRecord(int(e), float(a), float(b), float(c), float(d)))
    return out
