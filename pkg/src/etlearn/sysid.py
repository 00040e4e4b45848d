"""Least-squares identification of the closed-loop model from input-state data.

Stacking M transitions of the closed loop gives Y = [A_cl B] X + noise with

    X = [x(0) ... x(M-1); r(0) ... r(M-1)]   shape (n+q, M)
    Y = [x(1) ... x(M)]                      shape (n, M)

The estimator is the ordinary least-squares solution [A_cl_hat B_hat]
= Y X^T (X X^T)^{-1}, computed through a numerically stable factorization
rather than by forming the inverse. Chirp references keep X X^T invertible
(persistent excitation); without sufficient excitation the fit is refused.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .linsys import LinearSystem, ReferenceSignal, eval_reference, step
from .protocol import ModelEstimate

__all__ = [
    "RegressionData",
    "InsufficientExcitationError",
    "assemble",
    "ols_fit",
    "collect_learning_data",
    "run_learning_experiment",
]

_COND_LIMIT = 1e12


class InsufficientExcitationError(RuntimeError):
    """The regressor Gram matrix is numerically singular; excitation too poor."""


@dataclass(frozen=True)
class RegressionData:
    """Column-aligned regression matrices: column i of Y succeeds column i of X."""

    X: np.ndarray  # (n+q, M)
    Y: np.ndarray  # (n, M)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
            raise ValueError(f"misaligned regression data: X {X.shape}, Y {Y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def sample_count(self) -> int:
        return self.X.shape[1]


def assemble(trajectory: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> RegressionData:
    """Stack (x, r, x_next) samples into regression matrices."""
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    xs, rs, xns = zip(*trajectory)
    x_mat = np.column_stack([np.asarray(x, dtype=float).reshape(-1) for x in xs])
    r_mat = np.column_stack([np.asarray(r, dtype=float).reshape(-1) for r in rs])
    y_mat = np.column_stack([np.asarray(xn, dtype=float).reshape(-1) for xn in xns])
    if y_mat.shape[0] != x_mat.shape[0]:
        raise ValueError("state and successor-state dimensions differ")
    return RegressionData(X=np.vstack([x_mat, r_mat]), Y=y_mat)


def ols_fit(data: RegressionData, n: Optional[int] = None, version: int = 1) -> ModelEstimate:
    """Ordinary least-squares fit of (A_cl_hat, B_hat, Sigma_hat).

    Parameters
    ----------
    data : RegressionData
    n : int, optional
        State dimension used to split the coefficient block; defaults to the
        row count of Y.
    version : int
        Version tag for the returned model.

    Raises
    ------
    InsufficientExcitationError
        If the condition number of X X^T exceeds 1e12 (rank-revealing SVD).
    """
    if n is None:
        n = data.Y.shape[0]
    nq = data.X.shape[0]
    q = nq - n
    if q < 1:
        raise ValueError(f"regressor rows ({nq}) must exceed state dimension ({n})")
    m = data.sample_count
    if m < nq:
        raise ValueError(f"need at least n+q={nq} samples, got {m}")

    sv = np.linalg.svd(data.X, compute_uv=False)
    if sv[-1] == 0.0 or (sv[0] / sv[-1]) ** 2 >= _COND_LIMIT:
        raise InsufficientExcitationError(
            "regressor Gram matrix is numerically singular; "
            "use a persistently exciting reference (e.g. a chirp)"
        )

    # theta solves X^T theta^T ~= Y^T in the least-squares sense
    theta, *_ = np.linalg.lstsq(data.X.T, data.Y.T, rcond=None)
    theta = theta.T  # (n, n+q)
    a_cl = theta[:, :n]
    b = theta[:, n:]

    resid = data.Y - theta @ data.X
    dof = m - nq
    scale = dof if dof > 0 else m
    sigma = (resid @ resid.T) / scale
    sigma = 0.5 * (sigma + sigma.T)
    return ModelEstimate(a_cl=a_cl, b=b, sigma=sigma, version=version)


def collect_learning_data(
    sys: LinearSystem,
    reference: ReferenceSignal,
    num_samples: int,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
) -> Tuple[List[Tuple[np.ndarray, np.ndarray, np.ndarray]], np.ndarray]:
    """Roll out the true closed loop under the given reference.

    Returns the (x, r, x_next) triplets for :func:`assemble` plus the final
    state, so a caller embedding the experiment in a longer run can continue
    the plant from where the experiment left off.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    sampler = sys.noise_sampler()
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(sys.n)
    triplets = []
    for k in range(num_samples):
        r = eval_reference(reference, k, sys.Ts, sys.q)
        x_next = step(sys, x, r, sampler.sample(rng))
        triplets.append((x, r, x_next))
        x = x_next
    return triplets, x


def run_learning_experiment(
    sys: LinearSystem,
    chirp: ReferenceSignal,
    num_samples: int,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
    version: int = 1,
) -> ModelEstimate:
    """Simulate a chirp-excited experiment and fit the model by least squares.

    The experiment visits num_samples + 1 states (initial state included) and
    yields num_samples regression columns.
    """
    if num_samples < sys.n + sys.q:
        raise ValueError(
            f"num_samples={num_samples} is below the identifiability "
            f"minimum n+q={sys.n + sys.q}"
        )
    if chirp.kind == "chirp" and chirp.duration < num_samples * sys.Ts:
        raise ValueError(
            f"chirp duration {chirp.duration}s is shorter than the experiment "
            f"({num_samples * sys.Ts}s)"
        )
    triplets, _ = collect_learning_data(sys, chirp, num_samples, rng, x0=x0)
    return ols_fit(assemble(triplets), n=sys.n, version=version)
