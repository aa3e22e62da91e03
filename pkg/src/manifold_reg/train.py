"""Plain mini-batch SGD over the combined objective, with per-epoch metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, MiniBatch, minibatches
from .exceptions import ConfigError, ContractError, NumericAbort, NumericError
from .losses import LossBreakdown, LossWeights, total_objective
from .memory import MemoryLedger
from .model import Network, NetworkConfig, build

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    net: NetworkConfig
    loss: LossWeights | None = None
    epochs: int = 200
    lr: float = 0.01
    batch_size: int = 5
    seed: int = 0
    eval_every: int = 1
    eval_batch: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1 or self.eval_batch < 1:
            raise ConfigError("eval_every and eval_batch must be >= 1")
        if self.loss is None:
            object.__setattr__(self, "loss", LossWeights.default(len(self.net.hidden_widths())))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("epochs", "lr", "batch_size", "seed", "eval_every", "eval_batch")}
        d["net"] = self.net.to_dict()
        d["loss"] = {**asdict(self.loss), "alpha": list(self.loss.alpha)}
        return d


@dataclass
class EpochRecord:
    epoch: int
    supervised: float
    unsupervised: float
    unsupervised_per_k: list[float]
    total: float
    train_acc: float | None = None
    test_acc: float | None = None
    generalization_error: float | None = None


@dataclass
class TrainingReport:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    def summary(self) -> dict:
        f = self.final
        return {
            "epochs": len(self.epochs),
            "train_acc": f.train_acc,
            "test_acc": f.test_acc,
            "generalization_error": f.generalization_error,
            "final_total_loss": f.total,
        }

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"config": self.config, "summary": self.summary(), "epochs": [asdict(e) for e in self.epochs]}
        if include_timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_acc", "test_acc", "generalization_error", "supervised", "unsupervised", "total"])
        for e in self.epochs:
            w.writerow([
                e.epoch,
                "" if e.train_acc is None else repr(e.train_acc),
                "" if e.test_acc is None else repr(e.test_acc),
                "" if e.generalization_error is None else repr(e.generalization_error),
                repr(e.supervised), repr(e.unsupervised), repr(e.total),
            ])
        return buf.getvalue()


def sgd_step(params, lr: float, grads=None) -> None:
    """``theta <- theta - lr * grad``; parameters without a gradient are left alone."""
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise ContractError("one gradient per parameter expected")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if np.shape(g) != p.shape:
            raise ContractError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        p.data = p.data - lr * g


def predict_logits(net: Network, x: np.ndarray, batch: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for start in range(0, len(x), batch):
            out.append(net(x[start : start + batch]).logits.data)
    return np.concatenate(out) if out else np.zeros((0, net.config.num_classes))


def evaluate(net: Network, ds: Dataset, batch: int = 256) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label."""
    if len(ds) == 0:
        return 0.0
    correct = 0
    with ad.no_grad():
        for start in range(0, len(ds), batch):
            idx = np.arange(start, min(start + batch, len(ds)))
            pred = np.argmax(net(ds.batch(idx)).logits.data, axis=1)
            correct += int((pred == ds.labels[idx]).sum())
    return correct / len(ds)


def register_parameters(net: Network, ledger: MemoryLedger) -> None:
    for p in net.parameters():
        if not ledger.is_live(("param", p.id)):
            ledger.alloc(("param", p.id), p.size, "param")


def train_step(net: Network, batch: MiniBatch, weights: LossWeights, lr: float,
               ledger: MemoryLedger | None = None) -> LossBreakdown:
    """Forward, combined loss, backward and one SGD update on a single mini-batch."""
    params = net.trainable_parameters()
    if ledger is None:
        fwd = net(batch.x)
        total, parts = total_objective(net, fwd, batch.y, weights)
        total.backward()
        sgd_step(params, lr)
        ad.zero_grad(params)
        return parts

    with ledger.activate():
        ledger.set_phase("fwd1" if net.extractor else "fwd2")
        ledger.alloc("batch", batch.x.size + batch.y.size, "data")
        try:
            fwd = net(batch.x)
            total, parts = total_objective(net, fwd, batch.y, weights)
            total.backward()
        finally:
            ledger.set_phase("idle")
        sgd_step(params, lr)
        ad.zero_grad(params)
        ledger.release(("activation", "ephemeral"))
        ledger.free("batch")
    return parts


def _mean_parts(parts: list[LossBreakdown]) -> tuple[float, float, list[float], float]:
    sup = float(np.mean([p.supervised for p in parts]))
    uns = float(np.mean([p.unsupervised for p in parts]))
    per_k = np.mean([p.unsupervised_per_k for p in parts], axis=0) if parts[0].unsupervised_per_k else []
    tot = float(np.mean([p.total for p in parts]))
    return sup, uns, [float(v) for v in per_k], tot


def train(config: TrainConfig, train_ds: Dataset, test_ds: Dataset | None = None,
          net: Network | None = None, ledger: MemoryLedger | None = None,
          on_epoch=None) -> tuple[Network, TrainingReport]:
    """Run the full protocol; returns the trained network and its report.

    When ``ledger`` is given, only the first step is instrumented.
    Raises :class:`NumericAbort` if a loss or activation becomes non-finite.
    """
    if train_ds.sample_shape != config.net.input_shape:
        raise ConfigError(f"dataset samples {train_ds.sample_shape} do not match net input {config.net.input_shape}")
    if config.batch_size > len(train_ds):
        raise ContractError(f"batch size {config.batch_size} exceeds training set size {len(train_ds)}")
    net = net or build(config.net, config.seed)
    report = TrainingReport(config.to_dict())
    start = time.perf_counter()
    if ledger is not None:
        register_parameters(net, ledger)

    for epoch in range(1, config.epochs + 1):
        parts: list[LossBreakdown] = []
        for b, batch in enumerate(minibatches(train_ds, config.batch_size, config.seed, epoch)):
            step_ledger = ledger if (ledger is not None and epoch == 1 and b == 0) else None
            try:
                p = train_step(net, batch, config.loss, config.lr, step_ledger)
            except NumericError as exc:
                snapshot = {"epoch": epoch, "batch": b, "last_parts": asdict(parts[-1]) if parts else None}
                raise NumericAbort(f"non-finite value at epoch {epoch}, batch {b}: {exc}", snapshot) from exc
            if not np.isfinite(p.total):
                raise NumericAbort(f"non-finite loss at epoch {epoch}, batch {b}",
                                   {"epoch": epoch, "batch": b, "parts": asdict(p)})
            parts.append(p)

        sup, uns, per_k, tot = _mean_parts(parts)
        rec = EpochRecord(epoch, sup, uns, per_k, tot)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            rec.train_acc = 100.0 * evaluate(net, train_ds, config.eval_batch)
            if test_ds is not None:
                rec.test_acc = 100.0 * evaluate(net, test_ds, config.eval_batch)
                rec.generalization_error = rec.train_acc - rec.test_acc
        report.epochs.append(rec)
        log.info("epoch %d loss %.4f train %s test %s", epoch, tot, rec.train_acc, rec.test_acc)
        if on_epoch is not None:
            on_epoch(rec)

    report.wall_clock_seconds = time.perf_counter() - start
    return net, report


def profile_step(net: Network, batch: MiniBatch, weights: LossWeights, lr: float = 0.0,
                 bytes_per_element: int = 4) -> tuple[MemoryLedger, int, int]:
    """Instrument one training step.

    Returns the ledger and the event window ``[start, stop)`` that spans the
    forward and backward phases of the step (parameter registration and the
    post-step cleanup are outside it).
    """
    ledger = MemoryLedger(bytes_per_element)
    register_parameters(net, ledger)
    train_step(net, batch, weights, lr, ledger)
    start, stop = ledger.steps[-1]
    return ledger, start, stop
