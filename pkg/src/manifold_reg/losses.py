"""Supervised and layer-wise distance-preserving objectives.

The total objective is cross-entropy plus a weighted sum of local terms, one
per regularized pair of adjacent bottleneck layers ``(k, k-1)`` with
``k = 1, 3, 5, ...``.  Each local term compares the pairwise distance matrix
of the mini-batch in layer ``k`` with that in layer ``k-1`` and adds a
squared-norm penalty on the weights and biases of those two layers.

Under the ``scoped`` policy a local term only reaches layers ``k`` and
``k-1``: the input of layer ``k-1`` is detached and both layers are
re-applied to it, so the recomputed activations equal the taps exactly while
the graph upstream of them is cut.  The cross-entropy term always
backpropagates through the whole network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, pairwise_distances
from .exceptions import ConfigError, ContractError, DimensionError

SCOPES = ("scoped", "global")


def regularized_pairs(n_taps: int) -> list[tuple[int, int]]:
    """Layer pairs ``(k, k-1)`` carrying a distance-preserving term."""
    return [(k, k - 1) for k in range(1, n_taps, 2)]


def default_alpha(n_pairs: int, low: float = 0.001, high: float = 0.01) -> tuple[float, ...]:
    """Smaller weights on the first half of the pairs, larger on the second half."""
    return tuple(low if i < n_pairs // 2 else high for i in range(n_pairs))


@dataclass(frozen=True)
class LossWeights:
    alpha: tuple[float, ...]
    lam: float = 1e-4
    scope: str = "scoped"
    normalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if any(a < 0 for a in self.alpha):
            raise ConfigError("alpha weights must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")

    @classmethod
    def default(cls, n_taps: int, lam: float = 1e-4, scope: str = "scoped") -> "LossWeights":
        return cls(default_alpha(len(regularized_pairs(n_taps))), lam, scope)

    @classmethod
    def none(cls, n_taps: int) -> "LossWeights":
        return cls((0.0,) * len(regularized_pairs(n_taps)), 0.0)

    @property
    def active(self) -> bool:
        return any(a > 0 for a in self.alpha)


@dataclass(frozen=True)
class LossBreakdown:
    supervised: float
    unsupervised_per_k: tuple[float, ...]
    alpha: tuple[float, ...]
    total: float

    @property
    def unsupervised(self) -> float:
        return float(sum(a * u for a, u in zip(self.alpha, self.unsupervised_per_k)))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Summed (not averaged) negative log-likelihood over the mini-batch."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or logits.shape[0] < 1:
        raise DimensionError(f"cross_entropy needs L x C logits and L labels, got {logits.shape}, {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"labels must lie in [0, {logits.shape[1]})")
    return -ad.tsum(ad.pick(ad.log_softmax(logits), labels))


def parameter_penalty(params) -> Tensor:
    total = None
    for p in params:
        term = ad.tsum(ad.square(p))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def distance_preserving_loss(acts_k: Tensor, acts_km1: Tensor, params=(), lam: float = 0.0,
                             normalize: bool = False, eps: float = 1e-12) -> Tensor:
    """Squared mismatch of pairwise distances between two layers' activations.

    Sums over all ordered pairs ``(n, m)`` and adds ``lam * |theta|^2`` over
    ``params``.  ``normalize`` divides the distance term by ``L**2``.
    """
    if acts_k.ndim != 2 or acts_km1.ndim != 2:
        raise DimensionError("activations must be L x D matrices")
    L = acts_k.shape[0]
    if acts_km1.shape[0] != L:
        raise ContractError(f"batch sizes differ: {L} vs {acts_km1.shape[0]}")
    mismatch = pairwise_distances(acts_k, eps) - pairwise_distances(acts_km1, eps)
    loss = ad.tsum(ad.square(mismatch))
    if normalize:
        loss = loss * (1.0 / (L * L))
    if lam and params:
        loss = loss + lam * parameter_penalty(params)
    return loss


def pair_activations(net, fwd, k: int, scope: str) -> tuple[Tensor, Tensor]:
    """Activations ``(layer k, layer k-1)`` wired according to ``scope``."""
    if scope == "global":
        return fwd.taps[k], fwd.taps[k - 1]
    source = fwd.features if k - 1 == 0 else fwd.hidden[k - 2]
    h_prev, tap_prev = net.dense_step(k - 1, ad.detach(source))
    _, tap_k = net.dense_step(k, h_prev)
    return tap_k, tap_prev


def scoped_unsupervised_total(net, fwd, weights: LossWeights) -> tuple[Tensor, list[Tensor]]:
    """Weighted sum of the local distance-preserving terms and the unweighted terms."""
    if len(fwd.taps) < 2:
        raise ContractError("at least two taps are needed for a distance-preserving term")
    pairs = regularized_pairs(len(fwd.taps))
    if len(weights.alpha) != len(pairs):
        raise ContractError(f"expected {len(pairs)} alpha weights, got {len(weights.alpha)}")
    total, terms = None, []
    for (k, _), alpha in zip(pairs, weights.alpha):
        acts_k, acts_km1 = pair_activations(net, fwd, k, weights.scope)
        params = net.dense_parameters(k - 1) + net.dense_parameters(k)
        term = distance_preserving_loss(acts_k, acts_km1, params, weights.lam, weights.normalize)
        terms.append(term)
        weighted = alpha * term
        total = weighted if total is None else total + weighted
    return total, terms


def total_objective(net, fwd, labels, weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Cross-entropy plus the weighted local terms, with a float breakdown."""
    supervised = cross_entropy(fwd.logits, labels)
    if not weights.active:
        n_pairs = len(weights.alpha)
        value = supervised.item()
        return supervised, LossBreakdown(value, (0.0,) * n_pairs, weights.alpha, value)
    unsup, terms = scoped_unsupervised_total(net, fwd, weights)
    total = supervised + unsup
    return total, LossBreakdown(
        supervised.item(), tuple(t.item() for t in terms), weights.alpha, total.item()
    )
