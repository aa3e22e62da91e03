"""Post-training probes: generalization tables, 2-D embeddings and LDA separability."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .exceptions import ContractError, NumericError
from .seeding import substream


# -- generalization tables ------------------------------------------------------


@dataclass(frozen=True)
class TableRow:
    W: int | None
    L: int
    regularized: bool
    train_acc: float
    accuracy: float
    gen_error: float


def _row_from_report(report) -> TableRow:
    cfg = report.config if hasattr(report, "config") else report["config"]
    final = report.final if hasattr(report, "final") else report["epochs"][-1]
    get = (lambda k: getattr(final, k)) if hasattr(final, "train_acc") else final.__getitem__
    train_acc, test_acc = get("train_acc"), get("test_acc")
    if train_acc is None or test_acc is None:
        raise ContractError("report has no final train/test accuracy")
    net = cfg["net"]
    W = net["min_width"] if net.get("head", "bottleneck") == "bottleneck" else None
    regularized = any(a > 0 for a in cfg["loss"]["alpha"])
    return TableRow(W, cfg["batch_size"], regularized, train_acc, test_acc, train_acc - test_acc)


def generalization_table(reports) -> list[TableRow]:
    """One row per report, sorted by mini-batch size then width (both descending)."""
    if not reports:
        raise ContractError("at least one report is required")
    rows = [_row_from_report(r) for r in reports]
    return sorted(rows, key=lambda r: (-r.L, -(r.W or 0), r.regularized))


def render_table(rows: list[TableRow], value: str = "accuracy") -> str:
    """Text table shaped like the accuracy / generalization-error tables: one block per L."""
    widths = sorted({r.W for r in rows}, key=lambda w: -(w or 0))
    head = ["Method"] + [("vanilla" if w is None else f"W={w}") for w in widths]
    lines = []
    for L in sorted({r.L for r in rows}, reverse=True):
        lines.append(f"Mini-batch size = {L}")
        lines.append("  ".join(f"{h:>20}" if i == 0 else f"{h:>8}" for i, h in enumerate(head)))
        for reg in (False, True):
            cells = []
            for w in widths:
                match = [r for r in rows if r.L == L and r.W == w and r.regularized == reg]
                cells.append(f"{getattr(match[0], value):8.2f}" if match else f"{'-':>8}")
            if any(c.strip() != "-" for c in cells):
                name = "With regularizer" if reg else "Without regularizer"
                lines.append(f"{name:>20}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


# -- PCA --------------------------------------------------------------------------


def pca_components(acts: np.ndarray, n_components: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, principal directions (rows) and variances, with a fixed sign convention."""
    x = np.asarray(acts, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ContractError(f"pca needs an N x D matrix with N >= 3, D >= 2; got {x.shape}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:n_components].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    var = s[:n_components] ** 2 / (x.shape[0] - 1)
    return mean, comps, var


def pca_2d(acts) -> np.ndarray:
    """Project mean-centred rows onto the top two principal directions."""
    x = np.asarray(acts.data if isinstance(acts, ad.Tensor) else acts, dtype=np.float64)
    mean, comps, var = pca_components(x, 2)
    out = (x - mean) @ comps.T
    scale = var[0] if var.size and var[0] > 0 else 1.0
    if var.size < 2 or var[1] <= 1e-12 * scale:
        warnings.warn("activations have rank < 2; second embedding axis set to zero", RuntimeWarning)
        out[:, 1] = 0.0
    return out


# -- LDA --------------------------------------------------------------------------


@dataclass(frozen=True)
class LdaModel:
    classes: np.ndarray
    means: np.ndarray
    covariance: np.ndarray
    priors: np.ndarray

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        prec_means = np.linalg.solve(self.covariance, self.means.T)  # D x C
        return x @ prec_means - 0.5 * np.sum(self.means.T * prec_means, axis=0) + np.log(self.priors)

    def predict(self, x) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(x), axis=1)]


def lda_fit(coords, labels, ridge: float = 1e-6) -> LdaModel:
    """Linear discriminant with pooled within-class covariance plus ``ridge * I``."""
    x = np.asarray(coords, dtype=np.float64)
    y = np.asarray(labels)
    if ridge < 0:
        raise ContractError("ridge must be non-negative")
    classes = np.unique(y)
    if classes.size < 2:
        raise ContractError("LDA needs at least two classes")
    if x.shape[0] <= classes.size:
        raise ContractError("LDA needs more samples than classes")
    means = np.stack([x[y == c].mean(axis=0) for c in classes])
    centred = x - means[np.searchsorted(classes, y)]
    cov = centred.T @ centred / (x.shape[0] - classes.size) + ridge * np.eye(x.shape[1])
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-12 * max(eig.max(), 1.0):
        raise NumericError("pooled covariance is singular; fit with ridge > 0")
    priors = np.array([(y == c).mean() for c in classes])
    return LdaModel(classes, means, cov, priors)


def lda_accuracy(model: LdaModel, coords, labels) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        return 0.0
    return float((model.predict(coords) == y).mean())


# -- layer probe ------------------------------------------------------------------


def activations(net, x: np.ndarray, batch: int = 256) -> dict[str, np.ndarray]:
    """Extractor output and every tap for ``x``, keyed ``extractor``, ``fc0``, ``fc1``, ..."""
    chunks: dict[str, list[np.ndarray]] = {}
    with ad.no_grad():
        for start in range(0, len(x), batch):
            fwd = net(x[start : start + batch])
            chunks.setdefault("extractor", []).append(fwd.features.data)
            for k, tap in enumerate(fwd.taps):
                chunks.setdefault(f"fc{k}", []).append(tap.data)
    return {name: np.concatenate(parts) for name, parts in chunks.items()}


def probe_subset(ds: Dataset, classes: tuple[int, int], sample_cap: int, seed: int = 0) -> np.ndarray:
    a, b = classes
    if a == b:
        raise ContractError("probe classes must differ")
    rng = substream(seed, "probe")
    picked = []
    for c in (a, b):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            raise ContractError(f"class {c} is absent from the dataset")
        if idx.size > sample_cap:
            idx = np.sort(rng.choice(idx, size=sample_cap, replace=False))
        picked.append(idx)
    return np.concatenate(picked)


@dataclass
class EmbeddingSet:
    layers: list[str]
    coords: dict[str, np.ndarray]
    labels: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "sample", "label", "x", "y"])
        for layer in self.layers:
            for i, (px, py) in enumerate(self.coords[layer]):
                w.writerow([layer, i, int(self.labels[i]), repr(float(px)), repr(float(py))])
        return buf.getvalue()


def embed_layers(net, ds: Dataset, classes: tuple[int, int], sample_cap: int = 500, seed: int = 0) -> EmbeddingSet:
    idx = probe_subset(ds, classes, sample_cap, seed)
    acts = activations(net, ds.batch(idx))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        coords = {name: pca_2d(a) for name, a in acts.items()}
    return EmbeddingSet(list(acts), coords, ds.labels[idx])


def layer_probe(net, ds: Dataset, classes: tuple[int, int], sample_cap: int = 500,
                seed: int = 0, ridge: float = 1e-6) -> list[tuple[str, float]]:
    """LDA accuracy on the 2-D PCA embedding of each probed layer."""
    emb = embed_layers(net, ds, classes, sample_cap, seed)
    curve = []
    for layer in emb.layers:
        model = lda_fit(emb.coords[layer], emb.labels, ridge)
        curve.append((layer, lda_accuracy(model, emb.coords[layer], emb.labels)))
    return curve


def probe_csv(curve: list[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "lda_accuracy"])
    for layer, acc in curve:
        w.writerow([layer, repr(acc)])
    return buf.getvalue()
