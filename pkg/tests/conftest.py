import numpy as np
import pytest

from etlearn import LinearSystem, ModelEstimate, ReferenceSignal


@pytest.fixture
def scalar_system() -> LinearSystem:
    """The scalar benchmark plant: 0.9 x + 0.01 r + N(0, 2.5e-5), Ts = 10 ms."""
    return LinearSystem(A=[[0.9]], B=[[0.01]], Sigma=[[2.5e-5]], F=[[0.0]], Ts=0.01)


@pytest.fixture
def scalar_system_noiseless() -> LinearSystem:
    return LinearSystem(A=[[0.9]], B=[[0.01]], Sigma=[[0.0]], F=[[0.0]], Ts=0.01)


@pytest.fixture
def perturbed_model() -> ModelEstimate:
    """The deliberately degraded prediction model 0.85 x + 0.005 r."""
    return ModelEstimate(a_cl=[[0.85]], b=[[0.005]], sigma=[[2.5e-5]], version=0)


@pytest.fixture
def exact_model() -> ModelEstimate:
    return ModelEstimate(a_cl=[[0.9]], b=[[0.01]], sigma=[[2.5e-5]], version=0)


@pytest.fixture
def cosine_ref() -> ReferenceSignal:
    return ReferenceSignal.cosine(amplitude=1.0, omega=0.2)


def random_stable_system(rng: np.random.Generator, n: int = 3, radius: float = 0.9):
    """A random stable A_cl with strictly positive real eigenpart (real log exists)."""
    while True:
        a = rng.normal(size=(n, n)) * 0.4
        eig = np.linalg.eigvals(a)
        rho = np.max(np.abs(eig))
        a = a * (radius / rho)
        eig = np.linalg.eigvals(a)
        # keep away from the negative real axis so the matrix log is real
        if np.all((np.abs(np.imag(eig)) > 1e-6) | (np.real(eig) > 1e-3)):
            return a
