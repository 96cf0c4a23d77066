"""Real periodic scalar fields on the unit parameter interval.

Fields are stored as half-spectrum complex coefficients ``c[k]``,
``k = 0..K``, representing

    f(y) = c[0] + sum_{k>=1} 2 Re(c[k] exp(2 pi i k y)),

which is the ``numpy.fft.rfft`` convention divided by the sample count.
All beam displacements, beam velocities and boundary data use this type.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


class PeriodicField:
    """Real 1-periodic function given by half-spectrum Fourier coefficients.

    Parameters
    ----------
    coeffs : array_like of complex
        ``coeffs[k]`` multiplies ``exp(2 pi i k y)``; the conjugate modes
        are implied. The zero mode is forced real.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex)).copy()
        c[0] = c[0].real
        self.coeffs = c

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, n_modes: int = 1) -> "PeriodicField":
        return cls(np.zeros(max(1, n_modes), dtype=complex))

    @classmethod
    def from_samples(cls, values) -> "PeriodicField":
        """Field interpolating uniform samples on [0, 1)."""
        values = np.asarray(values, dtype=float)
        c = np.fft.rfft(values) / len(values)
        # rfft keeps the Nyquist mode for even n; it aliases with its own
        # conjugate, so halve it to keep evaluation consistent.
        if len(values) % 2 == 0 and len(c) > 1:
            c[-1] *= 0.5
        return cls(c)

    @classmethod
    def from_function(cls, fn, n_samples: int = 256) -> "PeriodicField":
        y = np.arange(n_samples) / n_samples
        return cls.from_samples(fn(y))

    @classmethod
    def from_mode_list(cls, modes) -> "PeriodicField":
        """Build from ``[(k, cos_amp, sin_amp), ...]`` triples.

        The field is ``sum_k cos_amp_k cos(2 pi k y) + sin_amp_k sin(2 pi k y)``;
        for ``k = 0`` the sine amplitude must be zero.
        """
        if not modes:
            return cls.zero()
        kmax = int(max(m[0] for m in modes))
        c = np.zeros(kmax + 1, dtype=complex)
        for k, a, b in modes:
            if int(k) == 0:
                if b != 0.0:
                    raise ValueError("constant mode has no sine amplitude")
                c[0] += a
            else:
                c[int(k)] += 0.5 * (a - 1j * b)
        return cls(c)

    # -- basic queries ------------------------------------------------
    @property
    def n_modes(self) -> int:
        return len(self.coeffs)

    @property
    def max_mode(self) -> int:
        return len(self.coeffs) - 1

    def eval(self, y, deriv: int = 0):
        """Evaluate the ``deriv``-th derivative at parameter values ``y``."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        yv = np.atleast_1d(y)
        k = np.arange(self.n_modes)
        phase = np.exp(2j * np.pi * np.outer(yv, k))
        if deriv:
            phase = phase * (2j * np.pi * k) ** deriv
        vals = 2.0 * (phase @ self.coeffs).real
        if deriv == 0:
            vals -= self.coeffs[0].real
        return float(vals[0]) if scalar else vals

    def derivative(self, order: int = 1) -> "PeriodicField":
        k = np.arange(self.n_modes)
        return PeriodicField(self.coeffs * (2j * np.pi * k) ** order)

    def mode_energies(self) -> np.ndarray:
        """Full-spectrum squared amplitudes: ``|c_0|^2, 2|c_k|^2`` for k >= 1."""
        e = 2.0 * np.abs(self.coeffs) ** 2
        e[0] = self.coeffs[0].real ** 2
        return e

    def l2_norm(self) -> float:
        return float(np.sqrt(self.mode_energies().sum()))

    def deriv_l2_norm(self, order: int) -> float:
        k = np.arange(self.n_modes, dtype=float)
        return float(np.sqrt((self.mode_energies() * (TWO_PI * k) ** (2 * order)).sum()))

    def sup_norm(self, n_samples: int = 4096) -> float:
        n = max(n_samples, 8 * self.n_modes)
        return float(np.abs(self.eval(np.arange(n) / n)).max())

    def mean(self) -> float:
        return float(self.coeffs[0].real)

    # -- arithmetic ---------------------------------------------------
    def _aligned(self, other: "PeriodicField"):
        n = max(self.n_modes, other.n_modes)
        a = np.zeros(n, dtype=complex)
        b = np.zeros(n, dtype=complex)
        a[: self.n_modes] = self.coeffs
        b[: other.n_modes] = other.coeffs
        return a, b

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        a, b = self._aligned(other)
        return PeriodicField(a + b)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        a, b = self._aligned(other)
        return PeriodicField(a - b)

    def __mul__(self, scalar: float) -> "PeriodicField":
        return PeriodicField(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"PeriodicField(K={self.max_mode}, l2={self.l2_norm():.3e})"

    # -- real mode-vector layout used by the coupled solver ------------
    def to_real_modes(self, k_max: int) -> np.ndarray:
        """Coefficients in the layout ``[a0, a1..aK, b1..bK]`` where
        ``f = a0 + sum a_k cos(2 pi k y) + b_k sin(2 pi k y)``."""
        out = np.zeros(2 * k_max + 1)
        kk = min(k_max, self.max_mode)
        out[0] = self.coeffs[0].real
        out[1 : kk + 1] = 2.0 * self.coeffs[1 : kk + 1].real
        out[k_max + 1 : k_max + kk + 1] = -2.0 * self.coeffs[1 : kk + 1].imag
        return out

    @classmethod
    def from_real_modes(cls, vec) -> "PeriodicField":
        vec = np.asarray(vec, dtype=float)
        k_max = (len(vec) - 1) // 2
        c = np.zeros(k_max + 1, dtype=complex)
        c[0] = vec[0]
        c[1:] = 0.5 * (vec[1 : k_max + 1] - 1j * vec[k_max + 1 :])
        return cls(c)


def real_mode_deriv_weights(k_max: int, order: int) -> np.ndarray:
    """Multipliers ``(2 pi k)^order`` matching the real mode-vector layout."""
    k = np.arange(k_max + 1, dtype=float)
    w = (TWO_PI * k) ** order
    return np.concatenate([w, w[1:]])


def real_mode_mass_weights(k_max: int) -> np.ndarray:
    """Diagonal of the L2(0,1) Gram matrix in the real mode layout."""
    w = np.full(2 * k_max + 1, 0.5)
    w[0] = 1.0
    return w


def real_mode_basis(y, k_max: int) -> np.ndarray:
    """Basis values ``[1, cos(2 pi k y).., sin(2 pi k y)..]`` at points y.

    Rows follow ``y``, columns follow the real mode-vector layout.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    k = np.arange(1, k_max + 1)
    ang = TWO_PI * np.outer(y, k)
    return np.concatenate(
        [np.ones((len(y), 1)), np.cos(ang), np.sin(ang)], axis=1)
