"""Complex linear algebra and circular statistics shared by the simulator."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * np.pi


class ConvergenceError(RuntimeError):
    """Power iteration did not settle within the iteration cap."""

    def __init__(self, message: str, vector: np.ndarray, iterations: int):
        super().__init__(message)
        self.vector = vector
        self.iterations = iterations


def complex_gaussian_vector(n: int, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. CN(0, variance) entries.

    Real and imaginary parts are independent with ``variance / 2`` each.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    z = rng.standard_normal((2, n))
    return np.sqrt(variance / 2.0) * (z[0] + 1j * z[1])


def complex_gaussian_matrix(rows: int, cols: int, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    return complex_gaussian_vector(rows * cols, variance, rng).reshape(rows, cols)


def _canonical_phase(v: np.ndarray) -> np.ndarray:
    # rotate so the largest-magnitude entry is real and non-negative
    k = int(np.argmax(np.abs(v)))
    a = v[k]
    if a == 0:
        return v
    out = v * (np.conj(a) / abs(a))
    out[k] = abs(out[k])  # drop rounding residue in the imaginary part
    return out


def dominant_left_singular_vector(
    Y: np.ndarray, tol: float = 1e-10, max_iters: int = 200, squarings: int = 3
) -> np.ndarray:
    """Unit-norm dominant left singular vector of ``Y`` by power iteration on ``Y Y^H``.

    The iteration runs on ``(Y Y^H)^(2**squarings)``, which has the same
    dominant eigenvector but a gap raised to that power; each squaring is
    trace-normalised to stay in floating-point range. The returned vector is
    phase-normalised so that its largest-magnitude entry is real and
    non-negative.

    Raises
    ------
    ValueError
        If ``Y`` is all zeros.
    ConvergenceError
        If the iterate still moves by more than ``tol`` after ``max_iters``
        steps. The last iterate is attached as ``exc.vector``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    if not np.all(np.isfinite(Y)):
        raise ValueError("matrix has non-finite entries")
    if not np.any(Y):
        raise ValueError("zero matrix has no dominant singular vector")

    A = Y @ Y.conj().T
    for _ in range(squarings):
        A = A / np.trace(A).real
        A = A @ A
    col_norms = np.linalg.norm(Y, axis=0)
    v = Y[:, int(np.argmax(col_norms))].copy()
    v /= np.linalg.norm(v)
    if A.shape[0] == 1:
        return _canonical_phase(np.ones(1, dtype=complex))

    for it in range(1, max_iters + 1):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart from a generic direction
            w = A @ np.ones(A.shape[0], dtype=complex)
            nw = np.linalg.norm(w)
        w /= nw
        # residual after removing the unit-modulus phase ambiguity
        ip = np.vdot(v, w)
        rot = ip / abs(ip) if ip != 0 else 1.0
        if np.linalg.norm(w - rot * v) < tol:
            return _canonical_phase(w)
        v = w
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations", _canonical_phase(v), max_iters
    )


def wrap_angle(x):
    """Wrap radians into (-pi, pi]. Works on scalars and arrays."""
    if isinstance(x, (float, int, np.floating, np.integer)):
        w = math.remainder(float(x), TWO_PI)
        return math.pi if w <= -math.pi else w
    x = np.asarray(x, dtype=float)
    w = np.mod(x + np.pi, TWO_PI) - np.pi
    w = np.where(w <= -np.pi, w + TWO_PI, w)
    return float(w) if w.ndim == 0 else w


def rmse_circular(errors) -> float:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("rmse of an empty error list is undefined")
    w = wrap_angle(e)
    return float(np.sqrt(np.mean(np.square(w))))
