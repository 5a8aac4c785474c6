"""Pilot transmission, noise at a target SNR, LS/LMMSE estimation and NMSE.

Conventions follow the row-vector downlink model ``r = h^T s + e`` with
``s`` of shape (M, T_p) and ``r`` of length T_p.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .scene import ChannelVector

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class InvalidCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class PilotBlock:
    s: np.ndarray

    @property
    def num_antennas(self) -> int:
        return self.s.shape[0]

    @property
    def t_p(self) -> int:
        return self.s.shape[1]


@dataclass(frozen=True)
class RxSignal:
    r: np.ndarray
    snr_db: float


def _entries(h) -> np.ndarray:
    return h.entries if isinstance(h, ChannelVector) else np.asarray(h)


def make_pilots(m: int, t_p: int, seed=None, max_tries: int = 100) -> PilotBlock:
    """I.i.d. unit-power QPSK pilots; redrawn while rank-deficient when T_p >= M."""
    if m < 1 or t_p < 1:
        raise ValueError("M and T_p must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        s = QPSK[rng.integers(0, 4, size=(m, t_p))]
        if t_p < m or np.linalg.matrix_rank(s) == m:
            return PilotBlock(s)
    raise RankDeficiencyError(f"could not draw full-rank {m}x{t_p} pilots in {max_tries} tries")


def noise_variance(clean: np.ndarray, snr_db: float) -> float:
    """Noise power giving ``snr_db`` relative to the mean power of ``clean``."""
    if np.isposinf(snr_db):
        return 0.0
    return float(np.mean(np.abs(clean) ** 2) / 10.0 ** (snr_db / 10.0))


def standard_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def receive(h, pilots: PilotBlock, snr_db: float, seed=None, noise: np.ndarray | None = None
            ) -> RxSignal:
    """r = h^T s + e, noise power set per sample from the mean of |h^T s|^2.

    ``noise`` may carry pre-drawn unit-variance noise so the same realisation
    can be rescaled to several SNRs; otherwise it is drawn from ``seed``.
    ``snr_db=inf`` disables noise.
    """
    h = _entries(h)
    s = pilots.s
    if len(h) != s.shape[0]:
        raise ValueError(f"channel length {len(h)} != pilot rows {s.shape[0]}")
    clean = h @ s
    sigma2 = noise_variance(clean, snr_db)
    if sigma2 == 0.0:
        return RxSignal(clean, float(snr_db))
    if noise is None:
        noise = standard_noise(np.random.default_rng(seed), clean.shape)
    return RxSignal(clean + np.sqrt(sigma2) * noise, float(snr_db))


def ls_estimate(r, pilots: PilotBlock) -> ChannelVector | np.ndarray:
    """h_LS = r s^H (s s^H)^-1; needs T_p >= M and a non-singular Gram matrix."""
    rv = r.r if isinstance(r, RxSignal) else np.asarray(r)
    s = pilots.s
    m, t_p = s.shape
    if t_p < m:
        raise RankDeficiencyError(f"LS needs T_p >= M (T_p={t_p}, M={m})")
    gram = s @ s.conj().T
    if np.linalg.matrix_rank(gram) < m:
        raise RankDeficiencyError("pilot Gram matrix is singular")
    # x gram = r s^H  <=>  gram^T x^T = (r s^H)^T
    return np.linalg.solve(gram.T, rv @ s.conj().T)


def analytic_ls_error(pilots: PilotBlock, sigma2: float) -> float:
    """Expected ||h_LS - h||^2 for noise variance ``sigma2``: sigma2 * tr((s s^H)^-1)."""
    gram = pilots.s @ pilots.s.conj().T
    return float(sigma2 * np.real(np.trace(np.linalg.inv(gram))))


def lmmse_estimate(r, pilots: PilotBlock, r_h: np.ndarray, sigma2: float) -> np.ndarray:
    """h = R_h A^H (A R_h A^H + sigma2 I)^+ r^T with A = s^T.

    A pseudo-inverse is used so the noiseless, over-determined case reduces to LS.
    """
    rv = r.r if isinstance(r, RxSignal) else np.asarray(r)
    r_h = np.asarray(r_h)
    scale = max(np.abs(r_h).max(), np.finfo(float).tiny)
    if r_h.shape[0] != r_h.shape[1] or not np.allclose(r_h, r_h.conj().T, atol=1e-10 * scale):
        raise InvalidCovarianceError("channel covariance must be Hermitian")
    a = pilots.s.T
    k = a @ r_h @ a.conj().T + sigma2 * np.eye(a.shape[0])
    w = np.linalg.lstsq(k, rv, rcond=None)[0]
    return r_h @ a.conj().T @ w


def empirical_covariance(channels: np.ndarray) -> np.ndarray:
    """Hermitian-symmetrised second-moment matrix (1/N) sum h h^H of rows of ``channels``."""
    h = np.asarray(channels)
    r = h.T @ h.conj() / len(h)
    return 0.5 * (r + r.conj().T)


def xi(z) -> np.ndarray:
    """Complex (..., n) -> real (..., 2n): real parts first, then imaginary parts."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def xi_inv(x) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[-1]
    if n % 2:
        raise ValueError(f"xi_inv needs an even length, got {n}")
    return x[..., : n // 2] + 1j * x[..., n // 2:]


def nmse_per_sample(h_hat, h_true) -> np.ndarray:
    h_hat = np.atleast_2d(np.asarray(h_hat))
    h_true = np.atleast_2d(np.asarray(h_true))
    err = np.sum(np.abs(h_hat - h_true) ** 2, axis=-1)
    power = np.sum(np.abs(h_true) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return err / power


def nmse(h_hat, h_true) -> float:
    """Mean over samples of ||h_hat - h||^2 / ||h||^2.

    Samples whose true channel is all-zero are dropped with a warning.
    """
    h_true = np.atleast_2d(np.asarray(h_true))
    ratios = nmse_per_sample(h_hat, h_true)
    zero = np.sum(np.abs(h_true) ** 2, axis=-1) == 0
    if zero.any():
        warnings.warn(f"nmse: excluded {int(zero.sum())} sample(s) with zero-norm true channel",
                      RuntimeWarning, stacklevel=2)
        ratios = ratios[~zero]
    if ratios.size == 0:
        raise ValueError("nmse: no samples with nonzero true channel")
    return float(np.mean(ratios))


def to_db(x: float) -> float:
    return float(10.0 * np.log10(x)) if x > 0 else float("-inf")
