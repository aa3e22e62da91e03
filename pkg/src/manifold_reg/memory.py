"""Exact, in-process byte accounting for training steps.

The ledger does not look at the operating system or at any device.  It
counts the logical allocations our own engine makes: parameters, gradients,
activations saved for backward, temporary buffers and the input batch.  Each
allocation is tagged with a category and with the training phase during which
it happened, so a single step can be replayed as a timeline:

    fwd1  forward through the convolutional extractor
    fwd2  forward through the fully connected head (and the losses)
    bwd2  backward through the fully connected head
    bwd1  backward through the convolutional extractor
    idle  anything between steps (parameter registration, cleanup)

Model-related memory is parameter storage plus resident buffers.  Everything
else is computation-related.
"""

from __future__ import annotations

import contextlib
import csv
import io
from dataclasses import dataclass

from .exceptions import AccountingError

CATEGORIES = ("param", "grad", "activation", "ephemeral", "data")
PHASES = ("idle", "fwd1", "fwd2", "bwd2", "bwd1")

# Allowed phase transitions inside one step.  A network without a conv
# extractor skips fwd1/bwd1; a step that is never backpropagated returns to idle.
_TRANSITIONS = {
    "idle": {"idle", "fwd1", "fwd2"},
    "fwd1": {"fwd1", "fwd2", "idle"},
    "fwd2": {"fwd2", "bwd2", "idle"},
    "bwd2": {"bwd2", "bwd1", "idle"},
    "bwd1": {"bwd1", "idle"},
}

_ACTIVE: "MemoryLedger | None" = None


def active_ledger() -> "MemoryLedger | None":
    """Return the ledger currently receiving allocation events, if any."""
    return _ACTIVE


@dataclass(frozen=True)
class Event:
    step: int
    delta_bytes: int
    category: str
    phase: str
    live_bytes: int


class MemoryLedger:
    """Append-only allocation log with live and peak totals."""

    def __init__(self, bytes_per_element: int = 4):
        if bytes_per_element <= 0:
            raise ValueError("bytes_per_element must be positive")
        self.bytes_per_element = int(bytes_per_element)
        self.events: list[Event] = []
        self.live_bytes = 0
        self.peak_bytes = 0
        self.peak_event: int | None = None
        self._phase = "idle"
        self._live: dict[object, tuple[int, str]] = {}
        # event-index windows [start, stop) of each non-idle stretch (one per step)
        self.steps: list[tuple[int, int | None]] = []

    # -- phases -----------------------------------------------------------

    @property
    def phase(self) -> str:
        return self._phase

    def set_phase(self, phase: str) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if phase not in _TRANSITIONS[self._phase]:
            raise ValueError(f"illegal phase transition {self._phase} -> {phase}")
        if self._phase == "idle" and phase != "idle":
            self.steps.append((len(self.events), None))
        elif self._phase != "idle" and phase == "idle":
            self.steps[-1] = (self.steps[-1][0], len(self.events))
        self._phase = phase

    @contextlib.contextmanager
    def activate(self):
        """Route allocation events from the autodiff engine to this ledger."""
        global _ACTIVE
        previous = _ACTIVE
        _ACTIVE = self
        try:
            yield self
        finally:
            _ACTIVE = previous

    # -- raw events -------------------------------------------------------

    def record(self, category: str, phase: str | None, delta_bytes: int) -> None:
        """Append one signed allocation event and update live/peak totals."""
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        phase = self._phase if phase is None else phase
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        live = self.live_bytes + int(delta_bytes)
        if live < 0:
            raise AccountingError(f"live bytes would become negative ({live}) after {category} event")
        self.live_bytes = live
        self.events.append(Event(len(self.events), int(delta_bytes), category, phase, live))
        if live > self.peak_bytes:
            self.peak_bytes = live
            self.peak_event = len(self.events) - 1

    # -- keyed allocations used by the engine ------------------------------

    def alloc(self, key, n_elements: int, category: str) -> None:
        if key in self._live:
            raise AccountingError(f"allocation key {key!r} already live")
        nbytes = int(n_elements) * self.bytes_per_element
        self._live[key] = (nbytes, category)
        self.record(category, None, nbytes)

    def free(self, key) -> None:
        entry = self._live.pop(key, None)
        if entry is None:
            return
        nbytes, category = entry
        self.record(category, None, -nbytes)

    def is_live(self, key) -> bool:
        return key in self._live

    def release(self, categories=("activation", "ephemeral")) -> None:
        """Free every still-live allocation in the given categories."""
        for key in [k for k, (_, c) in self._live.items() if c in categories]:
            self.free(key)

    def live_by_category(self) -> dict[str, int]:
        out = dict.fromkeys(CATEGORIES, 0)
        for nbytes, category in self._live.values():
            out[category] += nbytes
        return out

    @property
    def peak_phase(self) -> str | None:
        if self.peak_event is None:
            return None
        return self.events[self.peak_event].phase

    def mark(self) -> int:
        """Index of the next event; use with :func:`timeline_csv` to slice."""
        return len(self.events)

    def peak_between(self, start: int, stop: int | None = None) -> tuple[int, str | None]:
        window = self.events[start:stop]
        if not window:
            return self.live_bytes, None
        best = max(window, key=lambda e: (e.live_bytes, -e.step))
        return best.live_bytes, best.phase


def timeline_csv(ledger: MemoryLedger, start: int = 0, stop: int | None = None) -> str:
    """Render events as CSV rows ``step,phase,category,delta_bytes,live_bytes``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "phase", "category", "delta_bytes", "live_bytes"])
    for ev in ledger.events[start:stop]:
        writer.writerow([ev.step, ev.phase, ev.category, ev.delta_bytes, ev.live_bytes])
    return buf.getvalue()


def model_memory(net_or_config, bytes_per_element: int = 4) -> tuple[int, int, int]:
    """Model-related bytes: ``(parameters, resident buffers, total)``."""
    from .model import count_parameters, count_buffers

    _, n_params = count_parameters(net_or_config)
    n_buffers = count_buffers(net_or_config)
    params = n_params * bytes_per_element
    buffers = n_buffers * bytes_per_element
    return params, buffers, params + buffers


def memory_table(entries: dict[str, tuple[int, int, int]]) -> str:
    """Plain-text table with rows Model Parameters / Resident Buffer / Total."""
    names = list(entries)
    labels = ["Model Parameters", "Resident Buffer", "Total"]
    cells = [[f"{entries[n][i]:,}" for n in names] for i in range(3)]
    first = max(len(s) for s in labels)
    widths = [max(len(n), *(len(row[j]) for row in cells)) for j, n in enumerate(names)]
    lines = [" " * first + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths))]
    for label, row in zip(labels, cells):
        lines.append(label.ljust(first) + "  " + "  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
