"""Gaussian prior N(0, beta^2 A^(-alpha)) on divergence-free fields.

A is the Stokes operator, diagonal in the psi_k basis with eigenvalues
|k|^2.  Sampling uses the Karhunen-Loeve form: each stored coefficient is

    u_k = (beta / sqrt(2)) |k|^(-alpha) * xi_k,

with Re(xi_k), Im(xi_k) iid standard normal.  Equivalently Re(u_k) and
Im(u_k) are iid N(0, beta^2 |k|^(-2 alpha) / 2).  Log densities omit
normalizing constants throughout; every downstream use is a ratio.
"""

from dataclasses import dataclass, field

import numpy as np

from .spectral import FreqLattice, SpectralField


@dataclass(frozen=True)
class PriorSpec:
    """Hyper-parameters (magnitude beta, regularity alpha) plus the lattice.

    alpha > 1 is required for the covariance operator to be trace class,
    i.e. for the prior to be a well-defined Gaussian measure.
    """

    beta: float
    alpha: float
    lattice: FreqLattice
    mean: SpectralField | None = field(default=None)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1 (trace-class covariance)")
        if self.mean is not None and self.mean.lattice != self.lattice:
            raise ValueError("mean field lives on a different lattice")

    @classmethod
    def from_variance(cls, beta2, alpha, lattice):
        """Construct from the squared magnitude beta^2 (the config-file convention)."""
        return cls(float(np.sqrt(beta2)), float(alpha), lattice)

    def coeff_std(self):
        """Per-mode scale (beta/sqrt(2)) |k|^(-alpha) of Re u_k and Im u_k."""
        return (self.beta / np.sqrt(2.0)) * self.lattice.kmag ** (-self.alpha)

    def mean_coeffs(self):
        if self.mean is None:
            return np.zeros(self.lattice.n_modes, dtype=np.complex128)
        return self.mean.coeffs


def sample_prior_coeffs(spec, rng, size=None):
    """Draw coefficient vectors; shape (n_modes,) or (size, n_modes)."""
    nm = spec.lattice.n_modes
    shape = (nm,) if size is None else (int(size), nm)
    z = rng.standard_normal(shape + (2,))
    xi = z[..., 0] + 1j * z[..., 1]
    return spec.mean_coeffs() + spec.coeff_std() * xi


def sample_prior(spec, rng):
    """One draw from the prior as a SpectralField."""
    return SpectralField(spec.lattice, sample_prior_coeffs(spec, rng))


def resolve_window(lattice, window):
    """Normalize a window given as stored-mode indices or (k1, k2) pairs."""
    window = list(window) if not isinstance(window, np.ndarray) else window
    if len(window) and isinstance(window[0], (tuple, list, np.ndarray)) and np.ndim(window[0]) == 1:
        idx = []
        for k in window:
            if int(k[0]) == 0 and int(k[1]) == 0:
                raise ValueError("window may not contain k = 0")
            idx.append(lattice.index_of(k))
        return np.asarray(idx, dtype=np.intp)
    return np.asarray(window, dtype=np.intp)


def prior_window_weights(spec, window_idx):
    """Quadratic-form weights beta^(-2) |k|^(2 alpha) over a window."""
    idx = np.asarray(window_idx, dtype=np.intp)
    return spec.lattice.ksq[idx] ** spec.alpha / spec.beta**2


def prior_log_density_window(field_or_coeffs, window, spec):
    """Unnormalized prior log density restricted to a frequency window.

    Returns -sum_{k in window} beta^(-2) |k|^(2 alpha) |u_k|^2, the log of
    the product of the marginal Gaussian densities of (Re u_k, Im u_k) up
    to an additive constant.  Accepts a trailing batch of coefficient
    vectors, in which case an array is returned.
    """
    coeffs = np.asarray(getattr(field_or_coeffs, "coeffs", field_or_coeffs))
    idx = resolve_window(spec.lattice, window)
    w = prior_window_weights(spec, idx)
    out = -np.sum(w * np.abs(coeffs[..., idx]) ** 2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
