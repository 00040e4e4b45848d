"""Sender/receiver prediction-reset-trigger protocol with message accounting.

Both agents run the same deterministic predictor

    x_hat(k+1) = A_cl_hat x_hat(k) + B_hat r(k)

and the sender transmits the true state whenever the prediction error norm
reaches the threshold, or unconditionally once ``tau_max_steps`` have elapsed
since the last communication. Every transmission resets both predictors to
the transmitted state, so between communications the two predictions are
bit-identical (lockstep). The elapsed time between transmissions is the
inter-communication time sample fed to the learning trigger.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .linsys import GaussianSampler, _PSD_TOL
from .wire import ModelUpdate, StateUpdate, decode_message, encode_message

__all__ = [
    "ModelEstimate",
    "Predictor",
    "CommEvent",
    "Transport",
    "EtseLink",
    "StepOutcome",
    "LockstepError",
    "predict",
    "state_trigger",
    "protocol_step",
    "broadcast_model",
]

CAUSE_THRESHOLD = "threshold"
CAUSE_FORCED = "tau-max-forced"


class LockstepError(RuntimeError):
    """Sender and receiver predictions diverged: a protocol bug, not a model issue."""


@dataclass(frozen=True)
class ModelEstimate:
    """Prediction model (A_cl_hat, B_hat, Sigma_hat) shared by both agents.

    ``version`` increases strictly every time a newly learned model replaces
    the current one.
    """

    a_cl: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    version: int = 0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_cl, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"a_cl must be square, got {a.shape}")
        if b.shape[0] != n:
            raise ValueError(f"b must have {n} rows, got {b.shape}")
        if s.shape != (n, n):
            raise ValueError(f"sigma must be {n}x{n}, got {s.shape}")
        sym = 0.5 * (s + s.T)
        w = np.linalg.eigvalsh(sym)
        tol = _PSD_TOL * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
        if w.size and np.min(w) < -tol:
            raise ValueError(f"sigma is not PSD (min eigenvalue {np.min(w):.3e})")
        object.__setattr__(self, "a_cl", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sym)

    @property
    def n(self) -> int:
        return self.a_cl.shape[0]

    @property
    def q(self) -> int:
        return self.b.shape[1]


class Predictor:
    """One agent's predictor state: current prediction, step index and model."""

    def __init__(self, model: ModelEstimate, x0: np.ndarray, k: int = 0):
        self.model = model
        self.x_hat = np.asarray(x0, dtype=float).reshape(model.n).copy()
        self.k = k

    def advance(self, r: np.ndarray) -> None:
        self.x_hat = self.model.a_cl @ self.x_hat + self.model.b @ np.asarray(r, dtype=float)
        self.k += 1

    def reset(self, x: np.ndarray) -> None:
        self.x_hat = np.asarray(x, dtype=float).reshape(self.model.n).copy()

    def adopt(self, model: ModelEstimate, x: np.ndarray) -> None:
        self.model = model
        self.reset(x)


def predict(p: Predictor, r: np.ndarray) -> np.ndarray:
    """One-step prediction with the current model (pure; does not mutate p)."""
    return p.model.a_cl @ p.x_hat + p.model.b @ np.asarray(r, dtype=float)


def state_trigger(x: np.ndarray, x_hat: np.ndarray, delta: float) -> int:
    """1 iff the prediction error norm reaches the threshold (closed: >=)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    err = np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)
    return int(np.linalg.norm(err) >= delta)


@dataclass(frozen=True)
class CommEvent:
    step: int
    kind: str  # "state-update" | "model-update"
    payload: bytes
    cause: Optional[str] = None  # state-update only


class Transport:
    """Lossless in-memory channel with message and byte accounting."""

    def __init__(self):
        self.messages = 0
        self.bytes = 0
        self._subscribers: List[Callable[[bytes], None]] = []

    def subscribe(self, callback: Callable[[bytes], None]) -> None:
        self._subscribers.append(callback)

    def send(self, payload: bytes) -> None:
        self.messages += 1
        self.bytes += len(payload)
        for cb in self._subscribers:
            cb(payload)


@dataclass
class StepOutcome:
    z_norm: float
    event: Optional[CommEvent]
    tau: Optional[float]  # inter-communication time in seconds, if an event fired


class EtseLink:
    """One sender-receiver pair running the event-triggered protocol.

    The caller owns the plant: it steps the truth and hands the fresh state to
    :meth:`step`, which advances both predictors, applies the trigger and
    performs the reset through the transport.
    """

    def __init__(
        self,
        model: ModelEstimate,
        x0: np.ndarray,
        delta: float,
        tau_max_steps: int,
        ts: float,
        transport: Optional[Transport] = None,
    ):
        if not delta > 0:
            raise ValueError("delta must be positive")
        if tau_max_steps < 1:
            raise ValueError("tau_max_steps must be at least 1")
        self.delta = float(delta)
        self.tau_max_steps = int(tau_max_steps)
        self.ts = float(ts)
        self.sender = Predictor(model, x0)
        self.receiver = Predictor(model, x0)
        self.transport = transport if transport is not None else Transport()
        self.steps_since_comm = 0
        self._inbox: List[bytes] = []
        self.transport.subscribe(self._inbox.append)

    def _check_lockstep(self) -> None:
        diff = float(np.max(np.abs(self.sender.x_hat - self.receiver.x_hat)))
        if diff > 1e-12:
            raise LockstepError(
                f"sender/receiver predictions diverged by {diff:.3e} at step {self.sender.k}"
            )

    def step(self, x_true: np.ndarray, r: np.ndarray) -> StepOutcome:
        """Advance one step given the already-updated true state x(k+1).

        Returns the pre-reset error norm, the communication event (if any) and
        the inter-communication time sample it closed.
        """
        self.sender.advance(r)
        self.receiver.advance(r)
        self._check_lockstep()

        x_true = np.asarray(x_true, dtype=float).reshape(self.sender.model.n)
        z_norm = float(np.linalg.norm(x_true - self.sender.x_hat))
        self.steps_since_comm += 1

        fired = z_norm >= self.delta
        forced = self.steps_since_comm >= self.tau_max_steps
        if not (fired or forced):
            return StepOutcome(z_norm=z_norm, event=None, tau=None)

        # A sample hitting the cap is always recorded as forced, so that
        # tau == tau_max identifies capped samples unambiguously.
        cause = CAUSE_THRESHOLD if (fired and not forced) else CAUSE_FORCED
        tau = self.steps_since_comm * self.ts
        payload = encode_message(StateUpdate(step=self.sender.k, x=x_true))
        self.transport.send(payload)
        delivered = decode_message(self._inbox.pop())
        assert isinstance(delivered, StateUpdate)
        self.sender.reset(x_true)
        self.receiver.reset(delivered.x)
        self._check_lockstep()
        self.steps_since_comm = 0
        event = CommEvent(step=self.sender.k, kind="state-update", payload=payload, cause=cause)
        return StepOutcome(z_norm=z_norm, event=event, tau=tau)

    def broadcast_model(self, model: ModelEstimate, x_true: np.ndarray) -> CommEvent:
        """Share a model with the receiver; both predictors re-sync to x_true.

        The state sync mirrors the initialization rule x_hat(0) = x(0), so the
        lockstep property holds immediately after adoption.
        """
        payload = encode_message(
            ModelUpdate(version=model.version, a_cl=model.a_cl, b=model.b, sigma=model.sigma)
        )
        self.transport.send(payload)
        delivered = decode_message(self._inbox.pop())
        assert isinstance(delivered, ModelUpdate)
        x_true = np.asarray(x_true, dtype=float)
        self.sender.adopt(model, x_true)
        self.receiver.adopt(
            ModelEstimate(
                a_cl=delivered.a_cl, b=delivered.b, sigma=delivered.sigma, version=delivered.version
            ),
            x_true,
        )
        self._check_lockstep()
        self.steps_since_comm = 0
        return CommEvent(step=self.sender.k, kind="model-update", payload=payload, cause=None)


def protocol_step(link: EtseLink, x_true: np.ndarray, r: np.ndarray) -> StepOutcome:
    """Functional alias for :meth:`EtseLink.step`."""
    return link.step(x_true, r)


def broadcast_model(link: EtseLink, model: ModelEstimate, x_true: np.ndarray) -> CommEvent:
    """Functional alias for :meth:`EtseLink.broadcast_model`."""
    return link.broadcast_model(model, x_true)
