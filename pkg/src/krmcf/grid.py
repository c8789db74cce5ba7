"""Structured grids and derivative stencils.

Two topologies are supported:

* ``torus``: a doubly periodic ``n_x x n_y`` grid on ``[0, 2pi)^2``.
* ``sphere``: a rotationally symmetric reduction of the round sphere.  Fields
  live on a staggered polar-angle grid ``theta_i = (i + 1/2) pi / n`` and do
  not depend on the azimuth, so arrays have shape ``(n, 1)``.  Values beyond
  the poles are obtained by reflection with a parity sign.  Polar-angle
  derivatives are spectral on the reflected ``2n``-periodic extension by
  default; the centered stencil loses accuracy in the cells next to a pole,
  where the mean curvature is a near-cancellation of ``1/theta`` terms.

Array axis ``a`` always corresponds to coordinate ``a`` of the parameter
domain.  Every derivative routine acts on the last two axes, so stacks of
fields (vectors, tensors) can be differentiated in one call.
"""

from dataclasses import dataclass, field

import numpy as np

TOPOLOGIES = ("torus", "sphere")
METHODS = ("fd", "spectral")


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on a compact surface chart.

    Parameters
    ----------
    n_x, n_y : int
        Number of cells per direction.  For ``sphere`` grids ``n_x`` is the
        number of polar cells and ``n_y`` is the (virtual) azimuthal
        resolution used only for quadratures that break the symmetry.
    topology : {"torus", "sphere"}
    method : {"fd", "spectral"}
        Derivative scheme.  On sphere grids ``spectral`` differentiates the
        parity-extended polar profile.
    """

    n_x: int
    n_y: int
    topology: str = "torus"
    method: str = "fd"
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown derivative method {self.method!r}")
        for n in (self.n_x, self.n_y):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError("grid counts must be even integers >= 8")

    @classmethod
    def torus(cls, n, method="fd"):
        return cls(n, n, "torus", method)

    @classmethod
    def sphere(cls, n, method="spectral"):
        return cls(n, 2 * n, "sphere", method)

    @property
    def is_sphere(self):
        return self.topology == "sphere"

    @property
    def shape(self):
        if self.is_sphere:
            return (self.n_x, 1)
        return (self.n_x, self.n_y)

    @property
    def spacing_x(self):
        if self.is_sphere:
            return np.pi / self.n_x
        return 2 * np.pi / self.n_x

    @property
    def spacing_y(self):
        return 2 * np.pi / self.n_y

    @property
    def h(self):
        """Largest coordinate spacing of the differentiated directions."""
        if self.is_sphere:
            return self.spacing_x
        return max(self.spacing_x, self.spacing_y)

    @property
    def axis_parity(self):
        """Reflection parity of each coordinate (-1 for the polar angle)."""
        return (-1, 1) if self.is_sphere else (1, 1)

    @property
    def density_parity(self):
        """Parity of area densities such as ``sqrt(det g)`` (odd at a pole)."""
        return -1 if self.is_sphere else 1

    def coords(self):
        """Coordinate arrays ``(x, y)`` broadcast to :attr:`shape`."""
        if self.is_sphere:
            theta = (np.arange(self.n_x) + 0.5) * self.spacing_x
            return theta[:, None], np.zeros((self.n_x, 1))
        x = np.arange(self.n_x) * self.spacing_x
        y = np.arange(self.n_y) * self.spacing_y
        return np.meshgrid(x, y, indexing="ij")

    def cell_weight(self):
        """Coordinate-cell measure for quadrature (``dx dy``)."""
        if self.is_sphere:
            return self.spacing_x * 2 * np.pi
        return self.spacing_x * self.spacing_y

    def integrate(self, density):
        """Integrate a density (already multiplied by ``sqrt(det g)``).

        numpy's pairwise summation keeps the result independent of any
        parallel schedule.
        """
        total = np.sum(np.asarray(density, dtype=float), axis=(-2, -1)) * self.cell_weight()
        return float(total) if np.ndim(total) == 0 else total

    # ------------------------------------------------------------------
    # derivatives

    def _pad_polar(self, f, parity):
        parity = np.asarray(parity, dtype=float)
        if parity.ndim:
            parity = parity.reshape(parity.shape + (1, 1))
        lo = parity * f[..., :1, :]
        hi = parity * f[..., -1:, :]
        return np.concatenate([lo, f, hi], axis=-2)

    def _polar_spectral(self, f, parity, order):
        """Derivative of the reflected ``2n``-periodic extension along theta."""
        parity = np.asarray(parity, dtype=float)
        if parity.ndim:
            parity = parity.reshape(parity.shape + (1, 1))
        ext = np.concatenate([parity * f[..., ::-1, :], f], axis=-2)
        ik, k2 = self._wavenumbers(0, 2 * self.n_x)
        mult = ik if order == 1 else k2
        out = np.real(np.fft.ifft(np.fft.fft(ext, axis=-2) * mult, axis=-2))
        return out[..., self.n_x:, :]

    def _wavenumbers(self, axis, n=None):
        key = ("k", axis, n)
        if key not in self._cache:
            n = n or self.shape[axis]
            k = np.fft.fftfreq(n, d=1.0 / n)
            k1 = k.copy()
            k1[n // 2] = 0.0
            shape = [1, 1]
            shape[axis] = n
            self._cache[key] = (1j * k1.reshape(shape), -(k ** 2).reshape(shape))
        return self._cache[key]

    def d(self, f, axis, parity=1):
        """First derivative along ``axis`` (second-order centered or spectral).

        ``parity`` is the reflection parity of ``f`` across the poles (sphere
        grids only); it may be an array broadcasting against the leading axes
        of ``f``.
        """
        f = np.asarray(f, dtype=float)
        if self.is_sphere:
            if axis == 1:
                return np.zeros_like(f)
            if self.method == "spectral":
                return self._polar_spectral(f, parity, 1)
            g = self._pad_polar(f, parity)
            return (g[..., 2:, :] - g[..., :-2, :]) / (2 * self.spacing_x)
        ax = f.ndim - 2 + axis
        h = self.spacing_x if axis == 0 else self.spacing_y
        if self.method == "spectral":
            ik, _ = self._wavenumbers(axis)
            return np.real(np.fft.ifft(np.fft.fft(f, axis=ax) * _expand(ik, axis, f.ndim), axis=ax))
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * h)

    def d2(self, f, axis, parity=1):
        """Compact second derivative along ``axis``."""
        f = np.asarray(f, dtype=float)
        if self.is_sphere:
            if axis == 1:
                return np.zeros_like(f)
            if self.method == "spectral":
                return self._polar_spectral(f, parity, 2)
            g = self._pad_polar(f, parity)
            return (g[..., 2:, :] - 2 * f + g[..., :-2, :]) / self.spacing_x ** 2
        ax = f.ndim - 2 + axis
        h = self.spacing_x if axis == 0 else self.spacing_y
        if self.method == "spectral":
            _, k2 = self._wavenumbers(axis)
            return np.real(np.fft.ifft(np.fft.fft(f, axis=ax) * _expand(k2, axis, f.ndim), axis=ax))
        return (np.roll(f, -1, axis=ax) - 2 * f + np.roll(f, 1, axis=ax)) / h ** 2

    def hessian(self, f, parity=1):
        """Second derivatives ``(f_00, f_01, f_11)``."""
        f00 = self.d2(f, 0, parity)
        f11 = self.d2(f, 1, parity)
        if self.is_sphere:
            f01 = np.zeros_like(f00)
        else:
            f01 = self.d(self.d(f, 0, parity), 1, parity)
        return f00, f01, f11

    def flat_laplacian(self, f):
        """Laplacian of the base metric (flat on the torus, round on the sphere)."""
        f = np.asarray(f, dtype=float)
        if not self.is_sphere:
            return self.d2(f, 0) + self.d2(f, 1)
        # conservative form; the pole fluxes vanish with sin(0) = sin(pi) = 0
        h = self.spacing_x
        theta = (np.arange(self.n_x) + 0.5) * h
        half = np.sin(np.arange(self.n_x + 1) * h)
        half[0] = 0.0
        half[-1] = 0.0
        flux = np.zeros(f.shape[:-2] + (self.n_x + 1, f.shape[-1]))
        flux[..., 1:-1, :] = half[1:-1, None] * (f[..., 1:, :] - f[..., :-1, :]) / h
        return (flux[..., 1:, :] - flux[..., :-1, :]) / (h * np.sin(theta)[:, None])


def _expand(arr, axis, ndim):
    shape = [1] * ndim
    shape[ndim - 2 + axis] = arr.size
    return arr.reshape(shape)
