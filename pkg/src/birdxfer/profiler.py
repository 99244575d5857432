"""Stage timing and linear extrapolation to a hidden-test runtime budget.

Wall-clock time is measured while BLAS/OpenMP pools are limited to one
thread; the budget being modelled is CPU time, so measurements must stay
single-threaded for the extrapolation to hold.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

from threadpoolctl import threadpool_limits

from birdxfer.errors import DataError


class StageError(RuntimeError):
    """A profiled stage raised; the message names the stage."""


@dataclass(frozen=True)
class BudgetSpec:
    n_test: int = 1100
    budget_minutes: float = 120.0
    recording_minutes: float = 4.0

    def __post_init__(self) -> None:
        if self.n_test <= 0 or self.budget_minutes <= 0 or self.recording_minutes <= 0:
            raise DataError("budget values must be positive")


@dataclass(frozen=True)
class ProfileResult:
    name: str
    profile_sec: float
    n_profiled: int
    rate_sec_per_recording: float
    estimate_hours: float
    fits_budget: bool


def extrapolate(profile_sec: float, n_profiled: int, budget: BudgetSpec = BudgetSpec(), name: str = "") -> ProfileResult:
    """Per-recording rate and the projected hours for ``budget.n_test`` recordings."""
    if profile_sec < 0:
        raise DataError(f"profile time must be non-negative, got {profile_sec}")
    if n_profiled < 1:
        raise DataError(f"n_profiled must be >= 1, got {n_profiled}")
    rate = profile_sec / n_profiled
    hours = rate * budget.n_test / 3600.0
    return ProfileResult(name, float(profile_sec), int(n_profiled), rate, hours, hours * 60.0 <= budget.budget_minutes)


def time_stage(
    stage: Callable[[Sequence[Any]], Any],
    recordings: Sequence[Any],
    repetitions: int = 3,
    name: str | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> float:
    """Median wall seconds of ``stage(recordings)`` over ``repetitions`` runs."""
    if repetitions < 1:
        raise DataError(f"repetitions must be >= 1, got {repetitions}")
    if len(recordings) == 0:
        return 0.0
    name = name or getattr(stage, "__name__", repr(stage))
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(repetitions):
            t0 = clock()
            try:
                stage(recordings)
            except Exception as exc:
                raise StageError(f"stage {name!r} failed: {exc}") from exc
            samples.append(clock() - t0)
    return float(statistics.median(samples))


@dataclass
class BudgetReport:
    budget: BudgetSpec
    rows: list[ProfileResult] = field(default_factory=list)

    @property
    def total_hours(self) -> float:
        return float(sum(r.estimate_hours for r in self.rows))

    @property
    def total_fits(self) -> bool:
        return self.total_hours * 60.0 <= self.budget.budget_minutes

    def to_dict(self) -> dict:
        return {
            "budget": asdict(self.budget),
            "stages": [dict(asdict(r), verdict="fits" if r.fits_budget else "exceeds") for r in self.rows],
            "total_hours": self.total_hours,
            "total_verdict": "fits" if self.total_fits else "exceeds",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        width = max([5] + [len(r.name) for r in self.rows])
        lines = [
            f"{'stage':<{width}}  {'profile_s':>10}  {'n':>4}  {'rate_s':>8}  {'est_h':>7}  verdict",
        ]
        for r in self.rows:
            verdict = "fits" if r.fits_budget else "exceeds"
            lines.append(
                f"{r.name:<{width}}  {r.profile_sec:>10.2f}  {r.n_profiled:>4d}  "
                f"{r.rate_sec_per_recording:>8.2f}  {r.estimate_hours:>7.2f}  {verdict}"
            )
        verdict = "fits" if self.total_fits else "exceeds"
        lines.append(f"{'total':<{width}}  {'':>10}  {'':>4}  {'':>8}  {self.total_hours:>7.2f}  {verdict}")
        lines.append(f"budget: {self.budget.budget_minutes:g} min for {self.budget.n_test} recordings")
        return "\n".join(lines)


def budget_report(results: Sequence[ProfileResult], budget: BudgetSpec = BudgetSpec()) -> BudgetReport:
    """Stage table against ``budget``; estimates are recomputed so every verdict uses the same budget."""
    rows = [extrapolate(r.profile_sec, r.n_profiled, budget, r.name) for r in results]
    return BudgetReport(budget, rows)
