"""Learning trigger: windowed empirical stopping times vs the model-implied mean.

A learning experiment is warranted when the empirical average of recent
inter-communication times drifts away from the expectation implied by the
current prediction model. For i.i.d. samples bounded by tau_max, Hoeffding's
inequality calibrates the tolerance kappa so that a perfect model trips the
comparison with probability at most eta per evaluated window:

    exact mode        kappa = tau_max * sqrt(-ln(eta/2) / (2N))
    approximated mode kappa = tau_max * sqrt(-(2/N) * ln(eta/4))

The approximated mode budgets additional slack for replacing the exact
expectation by a Monte-Carlo average of M > N simulated stopping times. A
sustained-duration gate suppresses firing on short-lived exceedances.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .stopping import StoppingTimeEstimate

__all__ = [
    "TriggerConfig",
    "TauWindow",
    "SustainGate",
    "kappa_exact",
    "kappa_approx",
    "evaluate_exact",
    "evaluate_approx",
    "sustained_gate",
]

MODE_EXACT = "exact"
MODE_APPROX = "approximated"

COUNT_WINDOW = "count"
DURATION_WINDOW = "duration"

# Minimum sample count before a duration-mode window may be evaluated.
DURATION_SAMPLE_FLOOR = 10


def kappa_exact(eta: float, n: int, tau_max: float) -> float:
    """Hoeffding threshold for the trigger that uses the exact expectation."""
    _check_kappa_args(eta, n, tau_max)
    return tau_max * math.sqrt(-math.log(eta / 2.0) / (2.0 * n))


def kappa_approx(eta: float, n: int, tau_max: float) -> float:
    """Hoeffding threshold for the trigger that uses a sampled expectation."""
    _check_kappa_args(eta, n, tau_max)
    return tau_max * math.sqrt(-(2.0 / n) * math.log(eta / 4.0))


def _check_kappa_args(eta: float, n: int, tau_max: float) -> None:
    # eta values >= 1 make the formulas vanish or turn imaginary; they are
    # rejected at config level but tolerated here for formula unit tests.
    if eta <= 0:
        raise ValueError("eta must be positive")
    if n < 1:
        raise ValueError("window size must be at least 1")
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")


@dataclass(frozen=True)
class TriggerConfig:
    """All constants of the learning trigger.

    Parameters
    ----------
    eta : float
        Tolerated false-trigger probability per evaluated window, in (0, 1).
    tau_max : float
        Upper bound on inter-communication times, seconds.
    window : int or float
        Window size: number of samples in count mode, seconds in duration mode.
    window_mode : str
        "count" or "duration".
    sim_samples : int
        Monte-Carlo sample count M for the model-implied mean; must exceed the
        (effective) window size in approximated mode.
    mode : str
        "exact" or "approximated".
    kappa : float, optional
        User override of the threshold. Overrides are honored but are not
        covered by the Hoeffding guarantee; they are flagged by
        ``kappa_is_certified``.
    sustain : float
        Seconds the raw condition must hold continuously before firing.
    """

    eta: float
    tau_max: float
    window: float
    window_mode: str = COUNT_WINDOW
    sim_samples: int = 10000
    mode: str = MODE_APPROX
    kappa: Optional[float] = None
    sustain: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if not self.tau_max > 0:
            raise ValueError("tau_max must be positive")
        if self.window_mode not in (COUNT_WINDOW, DURATION_WINDOW):
            raise ValueError(f"unknown window mode {self.window_mode!r}")
        if self.window_mode == COUNT_WINDOW:
            if int(self.window) != self.window or self.window < 1:
                raise ValueError("count-mode window must be a positive integer")
        elif not self.window > 0:
            raise ValueError("duration-mode window must be positive (seconds)")
        if self.mode not in (MODE_EXACT, MODE_APPROX):
            raise ValueError(f"unknown trigger mode {self.mode!r}")
        if self.sim_samples < 1:
            raise ValueError("sim_samples must be positive")
        if self.mode == MODE_APPROX and self.window_mode == COUNT_WINDOW:
            if self.sim_samples <= int(self.window):
                raise ValueError("approximated mode requires sim_samples > window size")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa override must be positive")
        if self.sustain < 0:
            raise ValueError("sustain must be nonnegative")

    @property
    def kappa_is_certified(self) -> bool:
        return self.kappa is None

    def threshold(self, effective_n: Optional[int] = None) -> float:
        """Kappa in effect for a window of ``effective_n`` samples.

        Count mode ignores ``effective_n`` (the window size is fixed).
        """
        if self.kappa is not None:
            return self.kappa
        if self.window_mode == COUNT_WINDOW:
            n = int(self.window)
        else:
            if effective_n is None:
                raise ValueError("duration mode needs the observed sample count")
            n = max(effective_n, DURATION_SAMPLE_FLOOR)
        if self.mode == MODE_EXACT:
            return kappa_exact(self.eta, n, self.tau_max)
        return kappa_approx(self.eta, n, self.tau_max)


class TauWindow:
    """Moving window over the most recent inter-communication times.

    Count mode keeps the last N samples; duration mode keeps every sample
    whose event time lies within the trailing T seconds. The window is
    cleared atomically when a learning experiment completes, and evaluation
    stays suppressed until it has refilled (count mode: N samples; duration
    mode: T seconds elapsed since the reset epoch and a minimum sample count).
    """

    def __init__(self, config: TriggerConfig, epoch: float = 0.0):
        self.config = config
        self._times: deque = deque()
        self._taus: deque = deque()
        self.epoch = epoch

    def append(self, tau: float, t: float) -> None:
        """Record a sample tau observed at event time t."""
        self._taus.append(tau)
        self._times.append(t)
        if self.config.window_mode == COUNT_WINDOW:
            limit = int(self.config.window)
            while len(self._taus) > limit:
                self._taus.popleft()
                self._times.popleft()
        else:
            cutoff = t - self.config.window
            while self._times and self._times[0] < cutoff:
                self._taus.popleft()
                self._times.popleft()

    def reset(self, epoch: float) -> None:
        self._taus.clear()
        self._times.clear()
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self._taus)

    def mean(self) -> Optional[float]:
        if not self._taus:
            return None
        return float(sum(self._taus) / len(self._taus))

    def is_full(self, now: float) -> bool:
        if self.config.window_mode == COUNT_WINDOW:
            return len(self._taus) >= int(self.config.window)
        return (now - self.epoch) >= self.config.window and len(
            self._taus
        ) >= DURATION_SAMPLE_FLOOR


def evaluate_exact(
    window: TauWindow, expected_tau: float, kappa: float, now: Optional[float] = None
) -> Optional[int]:
    """Trigger decision against the exact expectation.

    Returns 1 or 0 once the window is full, and None (no decision, distinct
    from 0) while it is still filling.
    """
    if now is None:
        now = window._times[-1] if window._times else window.epoch
    if not window.is_full(now):
        return None
    return int(abs(window.mean() - expected_tau) >= kappa)


def evaluate_approx(
    window: TauWindow,
    sim_estimate: StoppingTimeEstimate,
    kappa: float,
    now: Optional[float] = None,
) -> Optional[int]:
    """Trigger decision against a Monte-Carlo estimate of the expectation."""
    if sim_estimate.sample_count <= len(window):
        raise ValueError(
            "approximated trigger needs more simulated samples than empirical ones"
        )
    return evaluate_exact(window, sim_estimate.mean, kappa, now=now)


class SustainGate:
    """Passes a raw decision through only after it has held continuously.

    ``update`` consumes the raw decision at time t (None counts as not-true
    and restarts the clock) and returns the gated decision. sustain = 0
    degenerates to a pass-through.
    """

    def __init__(self, sustain: float):
        if sustain < 0:
            raise ValueError("sustain must be nonnegative")
        self.sustain = float(sustain)
        self._true_since: Optional[float] = None

    def reset(self) -> None:
        self._true_since = None

    def update(self, t: float, raw: Optional[int]) -> int:
        if not raw:
            self._true_since = None
            return 0
        if self._true_since is None:
            self._true_since = t
        return int(t - self._true_since >= self.sustain)


def sustained_gate(
    times: Sequence[float], raw_decisions: Sequence[Optional[int]], sustain: float
) -> np.ndarray:
    """Apply the sustained-duration rule to a time-indexed decision series."""
    gate = SustainGate(sustain)
    return np.array([gate.update(t, raw) for t, raw in zip(times, raw_decisions)], dtype=int)
