"""Markov kernels invariant for the tempered posteriors.

Two kernels are provided.  The prior-preserving pCN kernel proposes

    u~ = rho u + sqrt(1 - rho^2) Z,   Z ~ prior,

and accepts with the likelihood ratio alone — the proposal is reversible
with respect to the Gaussian prior, so prior terms cancel and the rule
stays well defined under mesh refinement.

The windowed kernel adapts to a particle population: coefficients inside a
low-frequency window move by an autoregressive step toward the estimated
ensemble mean with the estimated 2x2 covariance of (Re u_k, Im u_k), while
the remaining high frequencies take the pCN update.  Its acceptance ratio
carries, besides the tempered likelihood ratio, the windowed prior ratio

    mu0(u_L) = exp(-sum_{k in W} beta^-2 |k|^(2 alpha) |u_k|^2)

and the forward/backward proposal ratio of the window move.

All acceptance arithmetic is in log space; a proposal with -inf
log-likelihood is always rejected.  Batched cores operate on (B, n_modes)
coefficient blocks with one caller-owned Generator per particle, so
mutation of distinct particles can proceed on independent threads.
"""

from dataclasses import dataclass

import numpy as np

from .prior import (
    PriorSpec,
    prior_log_density_window,
    prior_window_weights,
    sample_prior_coeffs,
)
from .spectral import SpectralField


def _chol2x2(cov):
    """Lower Cholesky factors of a stack of symmetric 2x2 matrices."""
    a = cov[..., 0, 0]
    b = cov[..., 1, 0]
    c = cov[..., 1, 1]
    l11 = np.sqrt(a)
    l21 = b / l11
    l22 = np.sqrt(c - l21 * l21)
    out = np.zeros_like(cov)
    out[..., 0, 0] = l11
    out[..., 1, 0] = l21
    out[..., 1, 1] = l22
    return out


def _inv2x2(cov):
    a = cov[..., 0, 0]
    b = cov[..., 1, 0]
    c = cov[..., 1, 1]
    det = a * c - b * b
    out = np.empty_like(cov)
    out[..., 0, 0] = c / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -b / det
    out[..., 1, 1] = a / det
    return out


@dataclass(frozen=True)
class WindowMoments:
    """Per-mode mean and regularized SPD covariance of (Re u_k, Im u_k) on a window.

    Inverse, Cholesky factor and log-determinant are precomputed; the
    structure is immutable and shared read-only during a mutation sweep.
    """

    window_idx: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    chol: np.ndarray
    logdet: np.ndarray

    @classmethod
    def from_arrays(cls, window_idx, mean, cov):
        window_idx = np.asarray(window_idx, dtype=np.intp)
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        return cls(
            window_idx,
            mean,
            cov,
            _inv2x2(cov),
            _chol2x2(cov),
            np.log(cov[..., 0, 0] * cov[..., 1, 1] - cov[..., 1, 0] ** 2),
        )

    @classmethod
    def from_prior(cls, prior, window_idx):
        """Moments matching the prior marginals: zero mean, (beta^2/2)|k|^(-2 alpha) I."""
        window_idx = np.asarray(window_idx, dtype=np.intp)
        var = 0.5 * prior.beta**2 * prior.lattice.ksq[window_idx] ** (-prior.alpha)
        cov = np.zeros((len(window_idx), 2, 2))
        cov[:, 0, 0] = var
        cov[:, 1, 1] = var
        return cls.from_arrays(window_idx, np.zeros((len(window_idx), 2)), cov)


def regularize_moments(window_idx, mean, raw_cov, prior, eff_count, eps=1e-6):
    """Build SPD WindowMoments from raw weighted sample moments.

    raw_cov gets eps * trace/2 added on the diagonal; degenerate modes
    (effective count <= 1 or zero trace) fall back to the prior marginal
    covariance so the proposal never collapses.
    """
    window_idx = np.asarray(window_idx, dtype=np.intp)
    cov = np.array(raw_cov, dtype=float)
    tr = cov[..., 0, 0] + cov[..., 1, 1]
    bump = eps * tr / 2.0
    cov[..., 0, 0] += bump
    cov[..., 1, 1] += bump
    floor_var = 0.5 * prior.beta**2 * prior.lattice.ksq[window_idx] ** (-prior.alpha)
    degenerate = (tr <= 0.0) | (eff_count <= 1.0)
    if np.any(degenerate):
        cov[degenerate] = 0.0
        cov[degenerate, 0, 0] = floor_var[degenerate]
        cov[degenerate, 1, 1] = floor_var[degenerate]
    return WindowMoments.from_arrays(window_idx, mean, cov)


@dataclass(frozen=True)
class TemperedTarget:
    """A tempered posterior: blocks 1..n-1 at full power, block n at power phi."""

    likelihood: object
    n: int
    phi: float
    prior: PriorSpec

    def __post_init__(self):
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("temperature phi must lie in [0, 1]")
        if not 1 <= self.n <= self.likelihood.horizon:
            raise ValueError("block index outside the dataset horizon")


@dataclass
class ChainState:
    """A field plus its cached per-block log-likelihoods and evolved state."""

    field: SpectralField
    log_liks: np.ndarray
    evolved: np.ndarray | None = None

    @classmethod
    def fresh(cls, field, likelihood, n):
        ll, states = likelihood.block_log_liks(field.coeffs[None, :], n)
        return cls(field, ll[0], states[0])


def tempered_log_target(state, target):
    """phi * log l_n + sum_{s<n} log l_s from the cached block values."""
    ll = np.asarray(state.log_liks, dtype=float)
    n = target.n
    return float(target.phi * ll[n - 1] + np.sum(ll[: n - 1]))


def _tempered_delta(ll_new, ll_old, n, phi):
    """Log ratio of tempered likelihoods, batched; -inf rows stay -inf."""
    delta = phi * (ll_new[:, n - 1] - ll_old[:, n - 1])
    if n > 1:
        delta = delta + np.sum(ll_new[:, : n - 1] - ll_old[:, : n - 1], axis=1)
    delta = np.where(np.isneginf(ll_new).any(axis=1), -np.inf, delta)
    return delta


def _reim(C, idx):
    """(Re, Im) pairs of selected coefficients, shape (B, len(idx), 2)."""
    sel = C[:, idx]
    return np.stack([sel.real, sel.imag], axis=-1)


def pcn_block(C, log_liks, rho, target, rngs):
    """One pCN step on a block of particles.

    Per-particle draw order (fixed for reproducibility): prior normals of
    shape (n_modes, 2), then one acceptance uniform.  Returns the updated
    coefficients, log-likelihood table, evolved states of accepted rows,
    the acceptance mask and the per-particle log acceptance probability.
    """
    b, nm = C.shape
    z = np.empty((b, nm, 2))
    u = np.empty(b)
    for j, rng in enumerate(rngs):
        z[j] = rng.standard_normal((nm, 2))
        u[j] = rng.uniform()
    zc = target.prior.coeff_std() * (z[..., 0] + 1j * z[..., 1])
    prop = rho * C + np.sqrt(max(1.0 - rho * rho, 0.0)) * zc

    ll_prop, states_prop = target.likelihood.block_log_liks(prop, target.n)
    log_acc = np.minimum(0.0, _tempered_delta(ll_prop, log_liks, target.n, target.phi))
    accept = _accept_mask(u, log_acc)
    return prop, ll_prop, states_prop, accept, log_acc


def _accept_mask(u, log_acc):
    with np.errstate(divide="ignore"):
        return np.log(u) < log_acc


def windowed_block(C, log_liks, rho_l, rho_h, moments, target, rngs):
    """One windowed MH step on a block of particles.

    Per-particle draw order: window normals (n_window, 2), high-frequency
    normals (n_high, 2), then one acceptance uniform.  The acceptance log
    ratio combines the tempered likelihood ratio, the windowed prior ratio
    and the forward/backward window-proposal ratio.
    """
    b, nm = C.shape
    prior = target.prior
    widx = moments.window_idx
    in_window = np.zeros(nm, dtype=bool)
    in_window[widx] = True
    hidx = np.nonzero(~in_window)[0]
    nw, nh = len(widx), len(hidx)

    zw = np.empty((b, nw, 2))
    zh = np.empty((b, nh, 2))
    u = np.empty(b)
    for j, rng in enumerate(rngs):
        zw[j] = rng.standard_normal((nw, 2))
        zh[j] = rng.standard_normal((nh, 2))
        u[j] = rng.uniform()

    prop = C.copy()
    log_q_diff = np.zeros(b)
    log_prior_diff = np.zeros(b)
    if nw and rho_l < 1.0:
        uw = _reim(C, widx)
        step = np.einsum("kab,jkb->jka", moments.chol, zw)
        pw = moments.mean + rho_l * (uw - moments.mean) + np.sqrt(1.0 - rho_l**2) * step
        prop[:, widx] = pw[..., 0] + 1j * pw[..., 1]
        log_prior_diff = prior_log_density_window(prop, widx, prior) - prior_log_density_window(
            C, widx, prior
        )
        fwd = pw - moments.mean - rho_l * (uw - moments.mean)
        bwd = uw - moments.mean - rho_l * (pw - moments.mean)
        q_fwd = np.einsum("jka,kab,jkb->j", fwd, moments.cov_inv, fwd)
        q_bwd = np.einsum("jka,kab,jkb->j", bwd, moments.cov_inv, bwd)
        log_q_diff = (q_fwd - q_bwd) / (2.0 * (1.0 - rho_l * rho_l))
    if nh and rho_h < 1.0:
        sigma = prior.coeff_std()[hidx]
        zc = sigma * (zh[..., 0] + 1j * zh[..., 1])
        prop[:, hidx] = rho_h * C[:, hidx] + np.sqrt(1.0 - rho_h**2) * zc

    ll_prop, states_prop = target.likelihood.block_log_liks(prop, target.n)
    delta = _tempered_delta(ll_prop, log_liks, target.n, target.phi)
    log_acc = np.minimum(0.0, delta + log_prior_diff + log_q_diff)
    accept = _accept_mask(u, log_acc)
    return prop, ll_prop, states_prop, accept, log_acc


def mutate_block(C, log_liks, states, n_steps, kernel, rngs):
    """Apply n_steps kernel updates to a block, tracking acceptance counts.

    kernel(C, log_liks, rngs) -> (prop, ll, states, accept, log_acc).
    Returns updated (C, log_liks, states, accept_counts).
    """
    C = C.copy()
    log_liks = log_liks.copy()
    states = states.copy()
    counts = np.zeros(C.shape[0], dtype=np.int64)
    for _ in range(int(n_steps)):
        prop, ll, st, accept, _ = kernel(C, log_liks, rngs)
        C[accept] = prop[accept]
        log_liks[accept] = ll[accept]
        states[accept] = st[accept]
        counts += accept
    return C, log_liks, states, counts


def _single(state, target, stepper, rng):
    C = state.field.coeffs[None, :]
    ll = np.asarray(state.log_liks, dtype=float)[None, : target.n]
    prop, ll_prop, states_prop, accept, _ = stepper(C, ll, [rng])
    if accept[0]:
        new = ChainState(
            SpectralField(state.field.lattice, prop[0]), ll_prop[0], states_prop[0]
        )
        return new, True
    return state, False


def pcn_step(state, rho, target, rng):
    """One pCN update of a single chain state; returns (state, accepted)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    return _single(
        state, target, lambda C, ll, rngs: pcn_block(C, ll, rho, target, rngs), rng
    )


def windowed_step(state, rho_l, rho_h, moments, target, rng):
    """One windowed update of a single chain state; returns (state, accepted)."""
    if not (0.0 <= rho_l <= 1.0 and 0.0 <= rho_h <= 1.0):
        raise ValueError("rho_l and rho_h must lie in [0, 1]")
    return _single(
        state,
        target,
        lambda C, ll, rngs: windowed_block(C, ll, rho_l, rho_h, moments, target, rngs),
        rng,
    )


def mutate(state, n_steps, target, rng, moments=None, rho_l=None, rho_h=None, rho=None):
    """n_steps kernel applications on one state; returns (state, accepted count).

    Uses the windowed kernel when moments are given, otherwise pCN with rho.
    """
    accepted = 0
    for _ in range(int(n_steps)):
        if moments is not None:
            state, ok = windowed_step(state, rho_l, rho_h, moments, target, rng)
        else:
            state, ok = pcn_step(state, rho, target, rng)
        accepted += ok
    return state, accepted


def run_pcn_chain(
    prior,
    likelihood,
    rho,
    n_iters,
    rng,
    n_blocks=None,
    track_idx=None,
    record_every=1,
    init_coeffs=None,
):
    """A full pCN chain targeting the posterior over the first n_blocks blocks.

    Records the tracked coefficients every record_every iterations together
    with the acceptance trace.  Returns a dict with keys "trace"
    (n_records, n_track) complex, "accepts" (n_iters,) bool, "acc_rate",
    and "final" (the last coefficient vector).
    """
    n = likelihood.horizon if n_blocks is None else int(n_blocks)
    target = TemperedTarget(likelihood, n, 1.0, prior)
    C = sample_prior_coeffs(prior, rng) if init_coeffs is None else np.asarray(init_coeffs)
    ll, _ = likelihood.block_log_liks(C[None, :], n)
    ll = ll[0]
    track_idx = (
        np.arange(prior.lattice.n_modes) if track_idx is None else np.asarray(track_idx)
    )
    n_rec = int(n_iters) // int(record_every)
    trace = np.empty((n_rec, len(track_idx)), dtype=np.complex128)
    accepts = np.zeros(int(n_iters), dtype=bool)
    Cb = C[None, :].copy()
    llb = ll[None, :].copy()
    rec = 0
    for m in range(int(n_iters)):
        prop, ll_prop, _, accept, _ = pcn_block(Cb, llb, rho, target, [rng])
        if accept[0]:
            Cb[0] = prop[0]
            llb[0] = ll_prop[0]
            accepts[m] = True
        if (m + 1) % record_every == 0 and rec < n_rec:
            trace[rec] = Cb[0, track_idx]
            rec += 1
    return {
        "trace": trace[:rec],
        "accepts": accepts,
        "acc_rate": float(np.mean(accepts)),
        "final": Cb[0].copy(),
        "log_liks": llb[0].copy(),
    }
