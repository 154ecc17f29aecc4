"""Eulerian observation datasets and block log-likelihoods.

Observations are noisy velocity readings on a fixed set of torus points at
times n * delta for n = 1..T:

    y_{n,s} = v(x_s, n delta) + gamma * zeta_{n,s},

with independent N(0, gamma^2) noise per velocity component.  The block
log-likelihood at epoch n is the squared Euclidean misfit

    log l_n(y_n; u) = -1/(2 gamma^2) sum_s ||y_{n,s} - v(x_s, n delta)||^2,

up to an additive constant that cancels in every ratio this package forms.
Point evaluation is exact band-limited Fourier summation, never grid
interpolation.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import nse
from .spectral import SpectralField, FreqLattice

NEG_INF = float("-inf")


def default_positions(upsilon):
    """Uniform s x s observation grid with half-cell offsets, for upsilon = s^2."""
    s = int(round(np.sqrt(upsilon)))
    if s * s != upsilon:
        raise ValueError(f"upsilon={upsilon} is not a perfect square; give explicit positions")
    ticks = 2.0 * np.pi * (np.arange(s) + 0.5) / s
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class Dataset:
    """Observation grid, schedule, noise scale, records and synthesis provenance.

    records has shape (T, upsilon, 2): records[n-1, s] is the 2-vector
    observed at position s and time n * delta.
    """

    positions: np.ndarray
    delta: float
    gamma: float
    records: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.records = np.asarray(self.records, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (upsilon, 2)")
        if np.any(self.positions < 0) or np.any(self.positions >= 2 * np.pi):
            raise ValueError("positions must lie in [0, 2 pi)^2")
        if len({tuple(p) for p in self.positions.tolist()}) != len(self.positions):
            raise ValueError("positions must be distinct")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        T, ups = self.records.shape[:2]
        if self.records.shape != (T, len(self.positions), 2):
            raise ValueError("records must have shape (T, upsilon, 2)")

    @property
    def horizon(self):
        return self.records.shape[0]

    @property
    def upsilon(self):
        return len(self.positions)


def point_phases(lattice, points):
    """exp(i k . x) for every stored mode and point, shape (n_modes, n_points)."""
    pts = np.asarray(points, dtype=float)
    arg = lattice.kx[:, None] * pts[None, :, 0] + lattice.ky[:, None] * pts[None, :, 1]
    return np.exp(1j * arg)


def eval_velocity_coeffs(C, lattice, phases):
    """Velocities at precomputed phases; C is (B, n_modes), result (B, n_points, 2).

    Uses u(x) = Re sum_k u_k k_perp exp(i k.x) / (pi |k|), the stored-half
    form of the mirrored Fourier sum.
    """
    row = lattice.psi_vec * 2.0  # k_perp / (pi |k|)
    vx = (C * row[0]) @ phases
    vy = (C * row[1]) @ phases
    return np.stack([vx.real, vy.real], axis=-1)


def eval_velocity_at(fld, points):
    """Exact band-limited velocities at arbitrary torus points, shape (n_points, 2)."""
    phases = point_phases(fld.lattice, points)
    return eval_velocity_coeffs(fld.coeffs[None, :], fld.lattice, phases)[0]


def synthesize(u_true, positions, delta, T, gamma, solver, rng):
    """Generate a Dataset by evolving u_true and adding iid Gaussian noise.

    The noise array is drawn in one call of shape (T, upsilon, 2) so a given
    generator state yields a bit-reproducible dataset.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.size == 0:
        raise ValueError("at least one observation position is required")
    steps = nse.steps_for(solver, delta)
    if steps == 0:
        raise ValueError("delta must be a positive multiple of dt")
    phases = point_phases(u_true.lattice, positions)
    C = u_true.coeffs[None, :]
    clean = np.empty((int(T), len(positions), 2))
    for n in range(int(T)):
        C = nse.evolve_coeffs(C, steps, solver)
        clean[n] = eval_velocity_coeffs(C, u_true.lattice, phases)[0]
    noise = rng.standard_normal(clean.shape)
    records = clean + gamma * noise
    return Dataset(positions, float(delta), float(gamma), records)


def gaussian_block_loglik(residual_sq_sum, gamma):
    """-ss/(2 gamma^2) with the gamma = 0 limit: 0 on exact match, else -inf."""
    if gamma == 0.0:
        return np.where(residual_sq_sum <= 1e-20, 0.0, NEG_INF)
    return -residual_sq_sum / (2.0 * gamma * gamma)


class DatasetLikelihood:
    """Batched block log-likelihood evaluator bound to a dataset and solver.

    block_log_liks runs one forward pass per particle, recording the state
    at every observation time on the way, so evaluating blocks 1..n costs a
    single length-(n delta) solve.  `calls` counts per-particle forward
    passes and `delta_units` the accumulated solve length in units of delta.
    """

    def __init__(self, dataset, solver):
        self.dataset = dataset
        self.solver = solver
        self.steps_per_block = nse.steps_for(solver, dataset.delta)
        if self.steps_per_block == 0:
            raise ValueError("dt must divide delta with at least one step")
        self.phases = point_phases(solver.lattice, dataset.positions)
        self.calls = 0
        self.delta_units = 0

    @property
    def horizon(self):
        return self.dataset.horizon

    def _block_misfit(self, C, n):
        v = eval_velocity_coeffs(C, self.solver.lattice, self.phases)
        resid = v - self.dataset.records[n - 1]
        return np.sum(resid * resid, axis=(1, 2))

    def block_log_liks(self, C, n):
        """Log l_s for s = 1..n plus the evolved state at n delta.

        C is (B, n_modes); returns (loglik (B, n), states (B, n_modes)).
        """
        C = np.atleast_2d(np.asarray(C, dtype=np.complex128))
        b = C.shape[0]
        if not 1 <= n <= self.horizon:
            raise ValueError(f"block index {n} outside 1..{self.horizon}")
        out = np.empty((b, n))
        states = C
        for s in range(1, n + 1):
            states = nse.evolve_coeffs(states, self.steps_per_block, self.solver)
            out[:, s - 1] = gaussian_block_loglik(self._block_misfit(states, s), self.dataset.gamma)
        self.calls += b
        self.delta_units += b * n
        return out, states

    def advance_block(self, states, n):
        """One incremental block: evolve cached states at (n-1) delta to n delta.

        Returns (log l_n (B,), new states).  Counts as one forward pass of
        length delta per particle.
        """
        if not 1 <= n <= self.horizon:
            raise ValueError(f"block index {n} outside 1..{self.horizon}")
        states = nse.evolve_coeffs(states, self.steps_per_block, self.solver)
        ll = gaussian_block_loglik(self._block_misfit(states, n), self.dataset.gamma)
        self.calls += states.shape[0]
        self.delta_units += states.shape[0]
        return ll, states


def log_lik_block(u, n, dataset, solver, cache=None):
    """Block log-likelihood of a single field, reusing an evolved state if given.

    cache, when supplied, must be the field's evolved state at (n-1) delta
    (a SpectralField).  Returns (log l_n, evolved state at n delta).
    """
    like = DatasetLikelihood(dataset, solver)
    if cache is not None:
        ll, states = like.advance_block(cache.coeffs[None, :], n)
        return float(ll[0]), SpectralField(solver.lattice, states[0])
    ll, states = like.block_log_liks(u.coeffs[None, :], n)
    return float(ll[0, n - 1]), SpectralField(solver.lattice, states[0])


# -- dataset files -------------------------------------------------------------


def save_dataset(ds, path):
    """Write a dataset as a structured JSON document (deterministic layout)."""
    doc = {
        "format": "nsinfer-dataset-v1",
        "delta": ds.delta,
        "gamma": ds.gamma,
        "T": ds.horizon,
        "upsilon": ds.upsilon,
        "positions": ds.positions.tolist(),
        "records": ds.records.tolist(),
        "provenance": ds.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "nsinfer-dataset-v1":
        raise ValueError(f"not a dataset file: {path}")
    return Dataset(
        np.asarray(doc["positions"]),
        float(doc["delta"]),
        float(doc["gamma"]),
        np.asarray(doc["records"]),
        doc.get("provenance", {}),
    )
