"""Discrete-time linear Gaussian systems under state feedback, plus reference signals.

The plant model is

    x(k+1) = A x(k) + B u(k) + eps(k),      eps(k) ~ N(0, Sigma)
    u(k)   = F x(k) + r(k)

so that the closed loop reads x(k+1) = (A + B F) x(k) + B r(k) + eps(k).
All simulation noise is drawn by the caller's RNG stream and passed into
:func:`step`, which keeps the dynamics pure and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "LinearSystem",
    "ReferenceSignal",
    "GaussianSampler",
    "make_closed_loop",
    "step",
    "sample_noise",
    "eval_reference",
]

# Absolute floor (scaled by the largest eigenvalue magnitude) below which a
# covariance eigenvalue counts as genuinely negative rather than round-off.
_PSD_TOL = 1e-12


def _as_matrix(value, rows: int, cols: int, name: str) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {m.shape}")
    return m


class GaussianSampler:
    """Zero-mean Gaussian sampler for a fixed PSD covariance.

    The covariance is factored once via a symmetric eigendecomposition with
    negative eigenvalues clipped at zero (tolerance 1e-12), which stays robust
    for rank-deficient covariances coming out of residual estimation.
    """

    def __init__(self, sigma: np.ndarray):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError(f"covariance must be square, got shape {sigma.shape}")
        sym = 0.5 * (sigma + sigma.T)
        w, v = np.linalg.eigh(sym)
        tol = _PSD_TOL * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
        if np.min(w) < -tol:
            raise ValueError(
                f"covariance is not positive semi-definite (min eigenvalue {np.min(w):.3e})"
            )
        self.n = sigma.shape[0]
        self._factor = v * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one sample with the configured covariance."""
        return self._factor @ rng.standard_normal(self.n)

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` samples; returns shape (count, n)."""
        return rng.standard_normal((count, self.n)) @ self._factor.T


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time linear Gaussian plant with a stabilizing state feedback.

    Parameters
    ----------
    A : (n, n) array
        Open-loop dynamics.
    B : (n, q) array
        Input gain; the reference enters the closed loop through B.
    Sigma : (n, n) array
        Per-step process-noise covariance, symmetric PSD.
    F : (q, n) array
        State-feedback gain. A + B F must have spectral radius < 1.
    Ts : float
        Sample time in seconds.
    """

    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    F: np.ndarray
    Ts: float
    n: int = field(init=False)
    q: int = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got shape {B.shape}")
        q = B.shape[1]
        F = _as_matrix(self.F, q, n, "F")
        Sigma = _as_matrix(self.Sigma, n, n, "Sigma")
        if not (self.Ts > 0 and math.isfinite(self.Ts)):
            raise ValueError(f"Ts must be a positive finite number, got {self.Ts}")

        a_cl = A + B @ F
        rho = float(np.max(np.abs(np.linalg.eigvals(a_cl))))
        if rho >= 1.0:
            raise ValueError(
                f"closed loop A + B*F must be stable; spectral radius is {rho:.6g}"
            )

        sampler = GaussianSampler(Sigma)  # validates PSD

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Sigma", 0.5 * (Sigma + Sigma.T))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "_a_cl", a_cl)
        object.__setattr__(self, "_sampler", sampler)

    @property
    def A_cl(self) -> np.ndarray:
        """Closed-loop matrix A + B F."""
        return self._a_cl

    def noise_sampler(self) -> GaussianSampler:
        return self._sampler


def make_closed_loop(sys: LinearSystem) -> np.ndarray:
    """Return the closed-loop matrix A + B*F."""
    return sys.A + sys.B @ sys.F


def step(sys: LinearSystem, x: np.ndarray, r: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """One closed-loop transition: A_cl x + B r + noise.

    The noise vector is drawn externally (typically from the harness RNG via
    :func:`sample_noise`), so the transition itself is a pure function.
    """
    x = np.asarray(x, dtype=float).reshape(sys.n)
    r = np.asarray(r, dtype=float).reshape(sys.q)
    noise = np.asarray(noise, dtype=float).reshape(sys.n)
    return sys.A_cl @ x + sys.B @ r + noise


def sample_noise(sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one N(0, sigma) sample; sigma must be symmetric PSD.

    For repeated draws with the same covariance, build a
    :class:`GaussianSampler` once instead.
    """
    return GaussianSampler(sigma).sample(rng)


@dataclass(frozen=True)
class ReferenceSignal:
    """Known reference r(k), evaluated on the discrete time grid t = k*Ts.

    Kinds
    -----
    zero
        r = 0.
    cosine
        r = amplitude * cos(omega * t).
    chirp
        r = amplitude * cos(2*pi*phase(t)) with the instantaneous frequency
        sweeping linearly from f0 to f1 (Hz) over ``duration`` seconds and
        holding f1 afterwards. Used to excite the plant during learning
        experiments.
    """

    kind: str
    amplitude: float = 0.0
    omega: float = 0.0
    f0: float = 0.0
    f1: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "cosine", "chirp"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "chirp":
            if not (0.0 < self.f0 < self.f1):
                raise ValueError("chirp requires 0 < f0 < f1")
            if not self.duration > 0.0:
                raise ValueError("chirp requires duration > 0")

    @classmethod
    def zero(cls) -> "ReferenceSignal":
        return cls(kind="zero")

    @classmethod
    def cosine(cls, amplitude: float, omega: float) -> "ReferenceSignal":
        return cls(kind="cosine", amplitude=amplitude, omega=omega)

    @classmethod
    def chirp(cls, amplitude: float, f0: float, f1: float, duration: float) -> "ReferenceSignal":
        return cls(kind="chirp", amplitude=amplitude, f0=f0, f1=f1, duration=duration)

    def value(self, k: int, ts: float) -> float:
        """Scalar signal value at step k."""
        if self.kind == "zero":
            return 0.0
        t = k * ts
        if self.kind == "cosine":
            return self.amplitude * math.cos(self.omega * t)
        # linear sweep: phase(t) = f0*t + (f1-f0)/(2*duration)*t^2, then hold f1
        if t <= self.duration:
            phase = self.f0 * t + 0.5 * (self.f1 - self.f0) / self.duration * t * t
        else:
            phase_end = 0.5 * (self.f0 + self.f1) * self.duration
            phase = phase_end + self.f1 * (t - self.duration)
        return self.amplitude * math.cos(2.0 * math.pi * phase)


def eval_reference(sig: ReferenceSignal, k: int, ts: float, q: int = 1) -> np.ndarray:
    """Evaluate the reference at step k as a q-vector (same scalar per channel)."""
    if k < 0:
        raise ValueError("step index must be nonnegative")
    return np.full(q, sig.value(k, ts))
