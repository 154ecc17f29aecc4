"""Divergence-free spectral velocity fields on the 2D torus [0, 2pi)^2.

A mean-zero, divergence-free, real vector field is expanded in the
orthonormal basis

    psi_k(x) = k_perp / (2 pi |k|) * exp(i k . x),   k in Z^2 \\ {0},

with k_perp = (-k2, k1)'.  Reality of the field forces the conjugate-pair
constraint u_{-k} = -conj(u_k), so only one coefficient per pair is stored.
The stored half of the lattice ("upper set") is

    k1 + k2 > 0,  or  (k1 + k2 = 0 and k1 > 0),

truncated to the square max(|k1|, |k2|) <= half_width.  All transforms are
FFT-based and exact for band-limited fields.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


def in_upper_set(k1, k2):
    """Membership test for the stored half of the frequency lattice."""
    s = k1 + k2
    return (s > 0) | ((s == 0) & (k1 > 0))


def fft_grid_size(half_width):
    """Smallest even 5-smooth grid size that resolves the lattice losslessly.

    A grid of n points per axis represents frequencies |k| <= n/2 - 1
    unambiguously, so n >= 2*half_width + 2 is required.
    """
    n = 2 * half_width + 2
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1 and n % 2 == 0:
            return n
        n += 1


class FreqLattice:
    """Square-truncated half lattice of nonzero integer frequencies.

    Stores one representative per conjugate pair; mirrors -k are implied by
    u_{-k} = -conj(u_k) and never materialized.  Enumeration order is
    lexicographic in (k1, k2), fixed so that serialized fields and RNG draw
    orders are reproducible.

    Attributes:
        half_width: truncation K such that max(|k1|, |k2|) <= K.
        kx, ky: integer arrays (n_modes,) with the stored frequencies.
        ksq, kmag: |k|^2 and |k| as float arrays.
        n_modes: number of stored modes, equal to 2K^2 + 2K.
    """

    def __init__(self, half_width):
        if half_width < 1:
            raise ValueError("half_width must be >= 1")
        self.half_width = int(half_width)
        rng_1d = np.arange(-self.half_width, self.half_width + 1)
        k1g, k2g = np.meshgrid(rng_1d, rng_1d, indexing="ij")
        keep = in_upper_set(k1g, k2g)
        self.kx = k1g[keep].astype(np.int64)
        self.ky = k2g[keep].astype(np.int64)
        order = np.lexsort((self.ky, self.kx))
        self.kx = self.kx[order]
        self.ky = self.ky[order]
        self.n_modes = self.kx.size
        self.ksq = (self.kx.astype(float)) ** 2 + (self.ky.astype(float)) ** 2
        self.kmag = np.sqrt(self.ksq)
        # k_perp/(2 pi |k|): the constant vector factor of psi_k, shape (2, n_modes)
        self.psi_vec = np.stack([-self.ky, self.kx]) / (TWO_PI * self.kmag)
        self._index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.kx, self.ky))}
        self._plans = {}

    def __eq__(self, other):
        return isinstance(other, FreqLattice) and other.half_width == self.half_width

    def __hash__(self):
        return hash(("FreqLattice", self.half_width))

    def __repr__(self):
        return f"FreqLattice(half_width={self.half_width})"

    @property
    def upper_set(self):
        """Stored frequencies as a list of (k1, k2) tuples."""
        return list(zip(self.kx.tolist(), self.ky.tolist()))

    def contains(self, k):
        k1, k2 = int(k[0]), int(k[1])
        return (k1, k2) in self._index or (-k1, -k2) in self._index

    def index_of(self, k):
        """Index of a stored frequency; raises KeyError for mirrors or outsiders."""
        return self._index[(int(k[0]), int(k[1]))]

    def representative(self, k):
        """Map any nonzero frequency to (stored index, is_mirror)."""
        k1, k2 = int(k[0]), int(k[1])
        if (k1, k2) in self._index:
            return self._index[(k1, k2)], False
        if (-k1, -k2) in self._index:
            return self._index[(-k1, -k2)], True
        raise KeyError(f"frequency {k} outside lattice")

    def window_mask(self, K):
        """Boolean mask of stored modes inside the square window of half-width K.

        On the stored half-lattice, max(k1, k2) <= K and
        max(|k1|, |k2|) <= K select the same modes.
        """
        return np.maximum(np.abs(self.kx), np.abs(self.ky)) <= K

    def min_grid_size(self):
        return 2 * self.half_width + 2

    def plan(self, size):
        """Cached transform tables binding this lattice to a grid size."""
        key = int(size)
        if key not in self._plans:
            self._plans[key] = TransformPlan(self, key)
        return self._plans[key]


@dataclass(frozen=True)
class SpectralField:
    """Coefficients of a divergence-free field against psi_k over the stored half-lattice."""

    lattice: FreqLattice
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.lattice.n_modes,):
            raise ValueError(
                f"coeffs shape {c.shape} does not match lattice with {self.lattice.n_modes} modes"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, lattice):
        return cls(lattice, np.zeros(lattice.n_modes, dtype=np.complex128))

    def copy(self):
        return SpectralField(self.lattice, self.coeffs.copy())

    def coefficient(self, k):
        """Coefficient u_k for any nonzero lattice frequency (mirrors derived)."""
        idx, mirror = self.lattice.representative(k)
        c = self.coeffs[idx]
        return -np.conj(c) if mirror else c


@dataclass(frozen=True)
class PhysicalGrid:
    """Real velocity samples on the uniform grid x_j = 2 pi j / size.

    values has shape (2, size, size); values[c, i, j] is component c at
    x = (2 pi i / size, 2 pi j / size).
    """

    size: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (2, self.size, self.size):
            raise ValueError(f"values shape {v.shape} != (2, {self.size}, {self.size})")
        object.__setattr__(self, "values", v)


class TransformPlan:
    """Precomputed scatter/gather index tables for FFTs on a given grid.

    Two layouts are prepared: the full complex spectrum (used by the
    reference transforms, which assert the imaginary residue) and the
    rfft half-spectrum (used by the solver hot loop).
    """

    def __init__(self, lattice, size):
        n = int(size)
        if n % 2 != 0 or n < lattice.min_grid_size():
            raise ValueError(
                f"grid size {n} too small for half_width {lattice.half_width}; "
                f"need even size >= {lattice.min_grid_size()}"
            )
        self.lattice = lattice
        self.size = n
        kx, ky = lattice.kx, lattice.ky

        # Full complex layout: entries for +k and for the mirror -k.
        self.full_pos = (kx % n, ky % n)
        self.full_neg = ((-kx) % n, (-ky) % n)

        # rfft layout (n, n//2 + 1).  Modes with ky < 0 are placed as the
        # conjugate at the mirror; ky == 0 modes additionally place their
        # conjugate on the negative-kx side of the b = 0 column.
        neg = ky < 0
        self.half_rows = np.where(neg, (-kx) % n, kx % n)
        self.half_cols = np.where(neg, -ky, ky)
        self.half_conj = neg
        zero_col = np.nonzero(ky == 0)[0]
        self.zero_col_idx = zero_col
        self.zero_col_rows = (n - kx[zero_col]) % n

        # i * k_l factors for spectral differentiation, shape (2, n_modes).
        self.ik = 1j * np.stack([kx, ky]).astype(np.complex128)

        # Scaling folded into scatter/gather weights: synthesis places
        # n^2 * u_k * k_perp/(2 pi |k|); analysis reads back with the inverse.
        self.scatter_vec = lattice.psi_vec * (n * n)
        self.gather_vec = TWO_PI * np.stack([-ky, kx]) / (lattice.kmag * (n * n))

    # -- full complex spectrum ------------------------------------------------

    def full_spectrum(self, coeffs, weight=None):
        """Complex FFT-layout spectrum (..., 2, n, n) of exp-basis vector coefficients.

        weight defaults to the psi_k vector factor, i.e. the input is taken
        to be scalar psi-basis coefficients.
        """
        c = np.asarray(coeffs, dtype=np.complex128)
        batch = c.shape[:-1]
        n = self.size
        w = self.lattice.psi_vec if weight is None else weight
        vals = c[..., None, :] * w  # (..., 2, n_modes)
        spec = np.zeros(batch + (2, n, n), dtype=np.complex128)
        spec[..., self.full_pos[0], self.full_pos[1]] = vals
        spec[..., self.full_neg[0], self.full_neg[1]] = np.conj(vals)
        return spec

    # -- rfft half spectrum (hot path) ----------------------------------------

    def scatter_half(self, stack):
        """Place (..., C, n_modes) exp-basis values into zeroed rfft layout (..., C, n, n//2+1)."""
        s = np.asarray(stack)
        n = self.size
        out = np.zeros(s.shape[:-1] + (n, n // 2 + 1), dtype=np.complex128)
        vals = np.where(self.half_conj, np.conj(s), s)
        out[..., self.half_rows, self.half_cols] = vals
        if self.zero_col_idx.size:
            out[..., self.zero_col_rows, 0] = np.conj(s[..., self.zero_col_idx])
        return out

    def gather_half(self, fhat):
        """Read stored-mode values back from an rfft2 result (..., n, n//2+1)."""
        vals = fhat[..., self.half_rows, self.half_cols]
        return np.where(self.half_conj, np.conj(vals), vals)


def basis_eval(k, x):
    """Evaluate psi_k(x) = k_perp exp(i k.x) / (2 pi |k|) as a complex 2-vector."""
    k1, k2 = int(k[0]), int(k[1])
    if k1 == 0 and k2 == 0:
        raise ValueError("psi_k is undefined for k = 0")
    x = np.asarray(x, dtype=float)
    mag = np.hypot(k1, k2)
    phase = np.exp(1j * (k1 * x[0] + k2 * x[1]))
    return np.array([-k2, k1], dtype=float) / (TWO_PI * mag) * phase


def to_physical(field, size):
    """Sample the field on a uniform size x size grid via the inverse FFT.

    The full mirrored spectrum is synthesized, so the result is real up to
    rounding; the imaginary residue is asserted below 1e-10 (relative) and
    dropped.
    """
    plan = field.lattice.plan(size)
    spec = plan.full_spectrum(field.coeffs)
    grid = sfft.ifft2(spec, axes=(-2, -1)) * (size * size)
    scale = max(np.max(np.abs(grid.real)), 1.0)
    resid = np.max(np.abs(grid.imag))
    if resid > 1e-10 * scale:
        raise FloatingPointError(f"imaginary residue {resid:.3e} exceeds tolerance")
    return PhysicalGrid(size, np.ascontiguousarray(grid.real))


def from_physical(grid, lattice):
    """Project grid samples onto the psi_k basis, truncating outside the lattice."""
    values = np.asarray(grid.values)
    if np.iscomplexobj(values):
        raise TypeError("physical values must be real")
    n = grid.size
    plan = lattice.plan(n)
    fhat = sfft.fft2(values, axes=(-2, -1))
    vx = fhat[0][plan.full_pos]
    vy = fhat[1][plan.full_pos]
    coeffs = vx * plan.gather_vec[0] + vy * plan.gather_vec[1]
    return SpectralField(lattice, coeffs)


def apply_stokes_power(field, s):
    """Multiply each coefficient by |k|^(2s) (fractional Stokes operator)."""
    return SpectralField(field.lattice, field.coeffs * field.lattice.ksq**s)


def vorticity(field, size):
    """Scalar vorticity -(d_x1 u2 - d_x2 u1) on the grid; clockwise rotation is positive.

    Single sign convention pinned by tests: a mode u_k contributes
    -i |k| u_k exp(i k.x) / (2 pi) plus its conjugate mirror.
    """
    lat = field.lattice
    n = int(size)
    plan = lat.plan(n)
    w = -1j * lat.kmag * field.coeffs / TWO_PI
    spec = np.zeros((n, n), dtype=np.complex128)
    spec[plan.full_pos] = w
    spec[plan.full_neg] = np.conj(w)
    grid = sfft.ifft2(spec) * (n * n)
    scale = max(np.max(np.abs(grid.real)), 1.0)
    resid = np.max(np.abs(grid.imag))
    if resid > 1e-10 * scale:
        raise FloatingPointError(f"imaginary residue {resid:.3e} exceeds tolerance")
    return np.ascontiguousarray(grid.real)


def leray_project(coeff_grid, lattice, rtol=1e-10):
    """Project full-lattice exp-basis vector coefficients onto the psi_k basis.

    coeff_grid has shape (2, n, n) in FFT index layout and must be
    Hermitian-symmetric (a real field); the k = 0 component is dropped and
    frequencies outside the lattice are truncated.  Keeping only the
    component along k_perp/|k| removes the gradient part.
    """
    spec = np.asarray(coeff_grid, dtype=np.complex128)
    if spec.ndim != 3 or spec.shape[0] != 2 or spec.shape[1] != spec.shape[2]:
        raise ValueError("coeff_grid must have shape (2, n, n)")
    n = spec.shape[1]
    if n < 2 * lattice.half_width + 1:
        raise ValueError("coefficient grid too small for the lattice")
    mirrored = np.conj(spec[:, (-np.arange(n)) % n][:, :, (-np.arange(n)) % n])
    scale = max(np.max(np.abs(spec)), 1.0)
    if np.max(np.abs(spec - mirrored)) > rtol * scale:
        raise ValueError("coefficients are not Hermitian-symmetric (field not real)")
    pos = (lattice.kx % n, lattice.ky % n)
    vx = spec[0][pos]
    vy = spec[1][pos]
    coeffs = (vx * -lattice.ky + vy * lattice.kx) * (TWO_PI / lattice.kmag)
    return SpectralField(lattice, coeffs)


def energy(field):
    """Squared L2 norm sum over the full mirrored lattice, sum_k |u_k|^2."""
    return 2.0 * float(np.sum(np.abs(field.coeffs) ** 2))


def save_field(field, path):
    """Write (k1, k2, Re u_k, Im u_k) rows over the stored half-lattice as CSV."""
    with open(path, "w") as fh:
        fh.write("k1,k2,re,im\n")
        for k1, k2, c in zip(field.lattice.kx, field.lattice.ky, field.coeffs):
            fh.write(f"{k1},{k2},{c.real!r},{c.imag!r}\n")


def load_field(path, lattice=None):
    """Read a field written by save_field; the lattice is inferred if not given."""
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "k1,k2,re,im":
            raise ValueError(f"unrecognized field file header: {header!r}")
        for line in fh:
            if not line.strip():
                continue
            a, b, re, im = line.split(",")
            rows.append((int(a), int(b), float(re), float(im)))
    if lattice is None:
        half_width = max(max(abs(r[0]), abs(r[1])) for r in rows)
        lattice = FreqLattice(half_width)
    if len(rows) != lattice.n_modes:
        raise ValueError(f"expected {lattice.n_modes} modes, file has {len(rows)}")
    coeffs = np.zeros(lattice.n_modes, dtype=np.complex128)
    for a, b, re, im in rows:
        coeffs[lattice.index_of((a, b))] = re + 1j * im
    return SpectralField(lattice, coeffs)
