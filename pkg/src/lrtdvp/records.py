"""Observables and run records shared by every engine."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .state import expectation, expectation_dense


def _real(values):
    return float(np.real(values[0]))


@dataclass(frozen=True)
class Observable:
    """A scalar built from expectation values of one or more operators.

    ``combine`` receives the list of complex expectations and returns a
    float (``nan`` for undefined values). By default the real part of the
    single expectation is returned.
    """

    name: str
    operators: tuple
    combine: Callable = _real

    def of_state(self, state) -> float:
        return float(self.combine([expectation(state, op) for op in self.operators]))

    def of_dense(self, rho) -> float:
        return float(self.combine([expectation_dense(rho, op) for op in self.operators]))


@dataclass
class RankEvent:
    t: float
    kind: str  # inflate | deflate | rewind | max_rank
    M_before: int
    M_after: int
    chi: float
    discarded_mass: float = 0.0


@dataclass
class RunRecord:
    """Time series at output times plus a per-step trace of the control quantity."""

    engine: str
    observable_names: list = field(default_factory=list)
    times: list = field(default_factory=list)
    rank: list = field(default_factory=list)
    chi: list = field(default_factory=list)
    trace_dev: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    values: list = field(default_factory=list)
    # one entry per accepted step
    step_t: list = field(default_factory=list)
    step_rank: list = field(default_factory=list)
    step_chi: list = field(default_factory=list)
    step_trace_dev: list = field(default_factory=list)
    step_herm_defect: list = field(default_factory=list)
    step_gram_drift: list = field(default_factory=list)
    step_tangency: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    warnings: list = field(default_factory=list)
    final_state: object = None
    final_time: float = math.nan
    stats: dict = field(default_factory=dict)
    states: list = field(default_factory=list)

    def add_output(self, t, rank, chi, trace_dev, entropy, values):
        self.times.append(float(t))
        self.rank.append(int(rank))
        self.chi.append(float(chi))
        self.trace_dev.append(float(trace_dev))
        self.entropy.append(float(entropy))
        self.values.append([float(v) for v in values])

    def series(self, name: str) -> np.ndarray:
        builtin = {"t": self.times, "rank": self.rank, "chi": self.chi,
                   "trace_dev": self.trace_dev, "entropy": self.entropy}
        if name in builtin:
            return np.asarray(builtin[name], dtype=float)
        idx = self.observable_names.index(name)
        return np.array([row[idx] for row in self.values], dtype=float)

    def lengths(self) -> dict:
        return {k: len(getattr(self, k)) for k in _TRUNCATABLE}

    def truncate(self, lengths: dict):
        for k, n in lengths.items():
            del getattr(self, k)[n:]

    @property
    def max_rank(self) -> int:
        ranks = self.step_rank or self.rank
        return int(max(ranks)) if ranks else 0

    def write_csv(self, path):
        """Columns ``t, rank, chi, trace_dev, entropy`` then one per observable."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "rank", "chi", "trace_dev", "entropy", *self.observable_names])
            for i, t in enumerate(self.times):
                w.writerow([_fmt(t), self.rank[i], _fmt(self.chi[i]), _fmt(self.trace_dev[i]),
                            _fmt(self.entropy[i]), *(_fmt(v) for v in self.values[i])])

    def write_steps_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "rank", "chi", "trace_dev"])
            for row in zip(self.step_t, self.step_rank, self.step_chi, self.step_trace_dev):
                w.writerow([_fmt(row[0]), row[1], _fmt(row[2]), _fmt(row[3])])

    def write_events_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "event", "M_before", "M_after", "chi", "discarded_mass"])
            for e in self.events:
                w.writerow([_fmt(e.t), e.kind, e.M_before, e.M_after, _fmt(e.chi),
                            _fmt(e.discarded_mass)])

    def summary(self) -> dict:
        out = {
            "engine": self.engine,
            "status": self.status,
            "message": self.message,
            "final_time": self.final_time,
            "max_rank": self.max_rank,
            "final_rank": self.rank[-1] if self.rank else None,
            "n_events": len(self.events),
            "warnings": list(self.warnings),
            "stats": self.stats,
        }
        if self.times:
            out["final"] = {n: self.values[-1][i] for i, n in enumerate(self.observable_names)}
            out["final"]["entropy"] = self.entropy[-1]
        return out


_TRUNCATABLE = (
    "times", "rank", "chi", "trace_dev", "entropy", "values", "step_t", "step_rank",
    "step_chi", "step_trace_dev", "step_herm_defect", "step_gram_drift", "step_tangency",
    "events", "states",
)


def _fmt(x) -> str:
    x = float(x) + 0.0  # folds -0.0 into 0.0
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


def read_csv(path) -> dict:
    """Load a record CSV back into ``{column: np.ndarray}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)
