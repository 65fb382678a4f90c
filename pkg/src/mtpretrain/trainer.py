"""The training loop: schedule execution, optimization, checkpoints, metrics.

One step consumes one batch of batch_size x max_seq_len token slots
(padding included, so token budgets stay deterministic). Batches and
dropout masks are pure functions of (seed, step index), which makes a
resumed run bit-identical to an uninterrupted one: parameters and Adam
moments are stored losslessly in 32-bit checkpoints and every remaining
source of randomness is re-derived per step.

Also provides a small probe: a frozen-encoder adjacency classifier used to
compare pre-trained encoders against random initialization.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as ls
from . import scheduler as sch
from . import tensor as tz
from .corpus import load_corpus
from .model import Model, ModelConfig
from .taskbuild import assemble_batch
from .tokenizer import load_vocab

_MODEL_INIT_TAG = 1
_DROPOUT_TAG = 13
_PROBE_TAG = 17


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    corpus: str
    vocab: str
    total_tokens: int
    tasks: "list[str]" = field(default_factory=lambda: ["mlm"])
    strategy: str = "sum"
    batch_size: int = 128
    max_seq_len: int = 128
    seed: int = 0
    layers: int = 2
    hidden: int = 64
    heads: int = 2
    dropout: float = 0.1
    task_vocab: int = 16
    base_lr: float = 1e-4
    warmup_frac: float = 0.01
    checkpoint_interval: int = 0     # tokens; 0 means total_tokens // 10
    checkpoint_path: str = ""        # final/periodic checkpoint file
    metrics_path: str = ""           # JSON-lines metrics log
    resume_from: str = ""
    prefetch: int = 0                # batches to build ahead (0 = in-line)

    def __post_init__(self):
        batch_tokens = self.batch_size * self.max_seq_len
        if self.total_tokens < batch_tokens:
            raise ValueError(
                f"total_tokens {self.total_tokens} below one batch "
                f"({batch_tokens})")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["tasks"] = list(self.tasks)
        return d


_CONFIG_TYPES = {
    "total_tokens": int, "batch_size": int, "max_seq_len": int, "seed": int,
    "layers": int, "hidden": int, "heads": int, "task_vocab": int,
    "checkpoint_interval": int, "prefetch": int,
    "dropout": float, "base_lr": float, "warmup_frac": float,
}


def parse_config_text(text: str) -> TrainConfig:
    """Parse the flat key=value config format (comments with '#')."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "tasks":
            values[key] = [t.strip() for t in val.split(",") if t.strip()]
        elif key in _CONFIG_TYPES:
            values[key] = _CONFIG_TYPES[key](val)
        else:
            values[key] = val
    missing = {"corpus", "vocab", "total_tokens"} - set(values)
    if missing:
        raise ValueError(f"config missing keys: {', '.join(sorted(missing))}")
    unknown = set(values) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class StepRecord:
    step: int
    tokens_seen: int
    lr: float
    losses: "dict[str, float]"
    wall: float


@dataclass
class TrainResult:
    config: TrainConfig
    records: "list[StepRecord]"
    checkpoint_path: str
    accounting: "dict[str, int]"


def _batch_for_step(reader, vocab, step, config):
    return assemble_batch(reader, vocab, step.tasks, config.batch_size,
                          config.max_seq_len, seed=config.seed,
                          step=step.index, task_id=step.task_id)


def _batch_stream(reader, vocab, steps, config):
    """Yield (step, batch); optionally built ahead on a worker thread."""
    if config.prefetch <= 0:
        for step in steps:
            yield step, _batch_for_step(reader, vocab, step, config)
        return
    q: "queue.Queue" = queue.Queue(maxsize=config.prefetch)
    stop = object()

    def worker():
        try:
            for step in steps:
                q.put((step, _batch_for_step(reader, vocab, step, config)))
        except Exception as exc:   # surfaced on the consumer side
            q.put(exc)
        q.put(stop)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is stop:
            break
        if isinstance(item, Exception):
            raise item
        yield item
    thread.join()


def build_model(config: TrainConfig, vocab, n_task_ids: int) -> Model:
    mc = ModelConfig(vocab=len(vocab.id_to_token), layers=config.layers,
                     hidden=config.hidden, heads=config.heads,
                     max_seq_len=config.max_seq_len,
                     task_vocab=max(config.task_vocab, n_task_ids),
                     dropout=config.dropout)
    return Model(mc, np.random.default_rng([config.seed, _MODEL_INIT_TAG]))


def train(config: TrainConfig) -> TrainResult:
    vocab = load_vocab(config.vocab)
    reader = load_corpus(config.corpus)
    reader.check_vocab(vocab)

    batch_tokens = config.batch_size * config.max_seq_len
    schedule = sch.make_schedule(config.strategy, config.tasks,
                                 config.total_tokens, batch_tokens)
    n_task_ids = len(set(s.task_id for s in schedule.steps))
    model = build_model(config, vocab, n_task_ids)
    optimizer = tz.Adam(model.params)

    start_step = 0
    tokens_seen = 0
    if config.resume_from:
        ck = tz.load_checkpoint(config.resume_from)
        model.load_values(ck.params)
        if ck.adam_m is None:
            raise TrainingError(
                f"{config.resume_from} has no optimizer state to resume from")
        optimizer.m = {k: v.astype(tz.default_dtype()) for k, v in ck.adam_m.items()}
        optimizer.v = {k: v.astype(tz.default_dtype()) for k, v in ck.adam_v.items()}
        optimizer.t = ck.adam_t
        start_step = int(ck.train_state["step"]) + 1
        tokens_seen = int(ck.train_state["tokens_seen"])

    interval = config.checkpoint_interval or max(batch_tokens,
                                                 config.total_tokens // 10)
    total_for_lr = schedule.total_tokens()
    ckpt_path = config.checkpoint_path or "model.mtpt"
    metrics_fh = None
    if config.metrics_path:
        mode = "a" if start_step else "w"
        metrics_fh = open(config.metrics_path, mode, encoding="utf-8")

    records: "list[StepRecord]" = []
    last_checkpoint = tokens_seen
    started = time.monotonic()

    def write_checkpoint(step_index: int) -> None:
        tz.save_checkpoint(ckpt_path, model.params,
                           config={"model": model.config.to_dict(),
                                   "train": config.to_dict()},
                           train_state={"step": step_index,
                                        "tokens_seen": tokens_seen},
                           optimizer=optimizer)

    try:
        remaining = schedule.steps[start_step:]
        for step, batch in _batch_stream(reader, vocab, remaining, config):
            drop_rng = np.random.default_rng(
                [config.seed, step.index, _DROPOUT_TAG])
            loss_map = ls.batch_losses(model, batch, training=True,
                                       rng=drop_rng)
            total = ls.combine_losses(loss_map, step.tasks)
            value = total.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at step {step.index}: {value}")
            optimizer.zero_grad()
            total.backward()
            tokens_seen += step.tokens
            lr = tz.lr_at(tokens_seen, total_for_lr, base_lr=config.base_lr,
                          warmup_frac=config.warmup_frac)
            optimizer.step(lr)
            record = StepRecord(
                step=step.index, tokens_seen=tokens_seen, lr=lr,
                losses={t: l.item() for t, l in loss_map.items()},
                wall=time.monotonic() - started)
            records.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps({
                    "step": record.step, "tokens_seen": record.tokens_seen,
                    "lr": record.lr, "losses": record.losses,
                    "wall": round(record.wall, 3)}) + "\n")
            if tokens_seen - last_checkpoint >= interval:
                write_checkpoint(step.index)
                last_checkpoint = tokens_seen
        write_checkpoint(len(schedule.steps) - 1)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    return TrainResult(config=config, records=records,
                       checkpoint_path=str(ckpt_path),
                       accounting=sch.token_accounting(schedule))


# ------------------------------------------------------------------ probe

@dataclass
class ProbeSpec:
    n_train_batches: int = 8
    n_eval_batches: int = 8
    batch_size: int = 32
    max_seq_len: int = 64
    epochs: int = 3
    lr: float = 0.05
    seed: int = 0


def _probe_features(model: Model, reader, vocab, spec: ProbeSpec,
                    n_batches: int, tag: int):
    """Frozen-encoder [CLS] features and order labels for probe batches."""
    feats, labels = [], []
    for k in range(n_batches):
        batch = assemble_batch(
            reader, vocab, ("so",), spec.batch_size, spec.max_seq_len,
            rng=np.random.default_rng([spec.seed, _PROBE_TAG, tag, k]))
        emb = model.embed(batch, training=False)
        hidden = model.encode(emb, batch.attention_mask, training=False)
        feats.append(model.cls_rows(hidden).data.copy())
        labels.append(batch.labels["so"].copy())
    return np.concatenate(feats), np.concatenate(labels)


def evaluate_probe(model: Model, reader, vocab,
                   spec: "ProbeSpec | None" = None) -> float:
    """Held-out accuracy of a linear order-detection probe on [CLS].

    The encoder stays frozen; only a fresh 2-way linear head is fitted,
    for spec.epochs passes over the probe training split (epochs=0 leaves
    the zero-initialized head untrained, yielding chance behaviour).
    """
    spec = spec or ProbeSpec()
    x_train, y_train = _probe_features(model, reader, vocab, spec,
                                       spec.n_train_batches, tag=0)
    x_eval, y_eval = _probe_features(model, reader, vocab, spec,
                                     spec.n_eval_batches, tag=1)
    h = x_train.shape[1]
    w = tz.parameter(np.zeros((h, 2)), name="probe.head.weight")
    b = tz.parameter(np.zeros(2), name="probe.head.bias")
    opt = tz.Adam({"probe.head.weight": w, "probe.head.bias": b},
                  weight_decay=0.0)
    rng = np.random.default_rng([spec.seed, _PROBE_TAG, 2])
    n = x_train.shape[0]
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, spec.batch_size):
            sel = order[lo:lo + spec.batch_size]
            logits = tz.constant(x_train[sel]) @ w + b
            loss = tz.cross_entropy(logits, y_train[sel])
            opt.zero_grad()
            loss.backward()
            opt.step(spec.lr)
    scores = x_eval @ w.data + b.data
    return float((scores.argmax(axis=1) == y_eval).mean())
