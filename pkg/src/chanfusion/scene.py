"""Deterministic single-bounce scatterer scene.

Stands in for a ray tracer: for any user position it yields the per-path
attenuation, phase, delay and departure angles, from which the ULA channel at
any carrier frequency is synthesised as

    h(f) = sum_p alpha_p * exp(-j 2 pi f tau_p + j phi_p) * a(f, az_p, el_p)

with the array manifold a_m = exp(j * 2 pi d f / c * m * sin(el) * cos(az)).
The array lies along the x-axis; azimuth is measured from +x in the xy-plane
and elevation is the polar angle from +z (pi/2 is horizontal).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

C = 299_792_458.0
F_UPLINK = 2.50e9
F_DOWNLINK = 2.62e9


class DegenerateGeometryError(ValueError):
    pass


class InsufficientHistoryError(ValueError):
    pass


class InvalidMaskError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    bs_position: tuple[float, float, float]
    num_antennas: int
    antenna_spacing: float
    scatterer_positions: tuple[tuple[float, float, float], ...]
    include_los: bool = True
    max_paths: int = 25
    seed: int = 0
    f_ref: float = F_DOWNLINK
    # ((x0, x1), (y0, y1), (z0, z1)); None means unbounded
    service_area: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        object.__setattr__(self, "scatterer_positions",
                           tuple(tuple(float(v) for v in s) for s in self.scatterer_positions))
        if self.service_area is not None:
            object.__setattr__(self, "service_area",
                               tuple(tuple(float(v) for v in b) for b in self.service_area))
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        if not self.antenna_spacing > 0:
            raise ValueError("antenna_spacing must be > 0")
        needed = self.max_paths - 1 if self.include_los else self.max_paths
        if len(self.scatterer_positions) < needed:
            raise ValueError(f"scene needs at least {needed} scatterers for max_paths="
                             f"{self.max_paths}, got {len(self.scatterer_positions)}")

    @property
    def wavelength_ref(self) -> float:
        return C / self.f_ref

    def contains(self, pos) -> bool:
        if self.service_area is None:
            return True
        return all(lo <= v <= hi for v, (lo, hi) in zip(pos, self.service_area))


@dataclass(frozen=True)
class PathSet:
    """Per-path parameters stored column-wise (one array per field)."""

    alpha: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    theta_az: np.ndarray
    theta_el: np.ndarray

    def __post_init__(self):
        cols = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float))
                for k in ("alpha", "phi", "tau", "theta_az", "theta_el")]
        n = len(cols[0])
        if any(len(c) != n for c in cols):
            raise ValueError("PathSet columns differ in length")
        if n < 1:
            raise ValueError("PathSet needs at least one path")
        if np.any(cols[0] <= 0) or np.any(cols[2] <= 0):
            raise ValueError("alpha and tau must be positive")
        if not all(np.all(np.isfinite(c)) for c in cols):
            raise ValueError("PathSet values must be finite")
        for k, c in zip(("alpha", "phi", "tau", "theta_az", "theta_el"), cols):
            object.__setattr__(self, k, c)

    def __len__(self) -> int:
        return len(self.alpha)

    def __getitem__(self, idx) -> "PathSet":
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return PathSet(self.alpha[idx], self.phi[idx], self.tau[idx],
                       self.theta_az[idx], self.theta_el[idx])

    def strongest(self, n: int) -> "PathSet":
        order = np.argsort(-self.alpha, kind="stable")[:n]
        return self[order]

    def singletons(self) -> list["PathSet"]:
        return [self[i] for i in range(len(self))]

    def records(self) -> list[dict]:
        return [dict(alpha=a, phi=p, tau=t, theta_az=az, theta_el=el)
                for a, p, t, az, el in zip(self.alpha, self.phi, self.tau,
                                           self.theta_az, self.theta_el)]


@dataclass(frozen=True)
class ChannelVector:
    entries: np.ndarray
    carrier_freq: float

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Trajectory:
    positions: tuple[tuple[float, float, float], ...]
    step: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("trajectory positions must be 3-D coordinates")
        d = np.diff(pos, axis=0)
        if len(d) and (not np.allclose(d[:, [0, 2]], 0.0) or not np.allclose(d[:, 1], self.step)):
            raise ValueError("consecutive trajectory positions must differ by `step` along y only")
        object.__setattr__(self, "positions", tuple(tuple(p) for p in pos))

    @classmethod
    def ending_at(cls, final_pos, n_prev: int, step: float) -> "Trajectory":
        """Trajectory moving along +y that reaches ``final_pos`` after ``n_prev`` steps."""
        x, y, z = (float(v) for v in final_pos)
        return cls(tuple((x, y - k * step, z) for k in range(n_prev, -1, -1)), step)


def default_spacing(f_downlink: float = F_DOWNLINK) -> float:
    """Half-wavelength spacing at the downlink carrier."""
    return C / (2.0 * f_downlink)


def default_scene(num_antennas: int = 64, max_paths: int = 25, seed: int = 0,
                  include_los: bool = True, num_scatterers: int | None = None) -> SceneConfig:
    """Seeded random scatterer field around a BS at (0, 0, 10) m.

    Users live in the service box x in [-40, 40], y in [30, 90], z = 1.5 m.
    """
    rng = np.random.default_rng(seed)
    if num_scatterers is None:
        num_scatterers = max_paths - 1 if include_los else max_paths
    sx = rng.uniform(-120.0, 120.0, num_scatterers)
    sy = rng.uniform(-30.0, 160.0, num_scatterers)
    sz = rng.uniform(0.0, 30.0, num_scatterers)
    return SceneConfig(
        bs_position=(0.0, 0.0, 10.0),
        num_antennas=num_antennas,
        antenna_spacing=default_spacing(),
        scatterer_positions=tuple(zip(sx, sy, sz)),
        include_los=include_los,
        max_paths=max_paths,
        seed=seed,
        service_area=((-40.0, 40.0), (30.0, 90.0), (1.5, 1.5)),
    )


def _angles(v: np.ndarray) -> tuple[float, float]:
    r = np.linalg.norm(v)
    return float(np.arctan2(v[1], v[0])), float(np.arccos(np.clip(v[2] / r, -1.0, 1.0)))


def derive_paths(scene: SceneConfig, user_pos) -> PathSet:
    """Single-bounce path parameters for a user, strongest first, at most ``max_paths``."""
    bs = np.asarray(scene.bs_position)
    user = np.asarray(user_pos, dtype=float)
    lam = scene.wavelength_ref
    rows = []
    if scene.include_los:
        direct = user - bs
        length = np.linalg.norm(direct)
        if length == 0.0:
            raise DegenerateGeometryError("user coincides with the base station")
        rows.append((length, *_angles(direct)))
    for s in scene.scatterer_positions:
        s = np.asarray(s)
        leg1, leg2 = s - bs, user - s
        l1, l2 = np.linalg.norm(leg1), np.linalg.norm(leg2)
        if l1 == 0.0 or l2 == 0.0:
            raise DegenerateGeometryError(f"zero-length segment through scatterer {tuple(s)}")
        rows.append((l1 + l2, *_angles(leg1)))
    length = np.array([r[0] for r in rows])
    tau = length / C
    alpha = lam / (4.0 * np.pi * length)
    phi = np.mod(-2.0 * np.pi * scene.f_ref * tau, 2.0 * np.pi)
    paths = PathSet(alpha, phi, tau, np.array([r[1] for r in rows]), np.array([r[2] for r in rows]))
    return paths.strongest(scene.max_paths)


def manifold(scene: SceneConfig, f: float, theta_az, theta_el) -> np.ndarray:
    """ULA steering vector(s). Scalar angles give shape (M,), arrays give (len, M)."""
    if not f > 0:
        raise ValueError("carrier frequency must be positive")
    varpi = 2.0 * np.pi * scene.antenna_spacing * f / C
    m = np.arange(scene.num_antennas)
    cosine = np.sin(np.asarray(theta_el, dtype=float)) * np.cos(np.asarray(theta_az, dtype=float))
    return np.exp(1j * varpi * np.multiply.outer(cosine, m))


def synthesize_channel(scene: SceneConfig, paths: PathSet, f: float) -> ChannelVector:
    gains = paths.alpha * np.exp(-2j * np.pi * f * paths.tau + 1j * paths.phi)
    a = manifold(scene, f, paths.theta_az, paths.theta_el)  # (P, M)
    return ChannelVector(gains @ a, float(f))


def channel_at(scene: SceneConfig, pos, f: float) -> ChannelVector:
    return synthesize_channel(scene, derive_paths(scene, pos), f)


def channel_history(scene: SceneConfig, trajectory: Trajectory, f: float,
                    t_unit: int) -> list[ChannelVector]:
    """Channels at the ``t_unit`` positions before the final one, most recent first."""
    pos = trajectory.positions
    if len(pos) < t_unit + 1:
        raise InsufficientHistoryError(
            f"trajectory has {len(pos)} positions, need {t_unit + 1} for T_unit={t_unit}")
    return [channel_at(scene, pos[-1 - k], f) for k in range(1, t_unit + 1)]


def partial_channel(h, mask: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """Split a channel into (known entries at ``mask``, remaining entries), both ascending."""
    entries = h.entries if isinstance(h, ChannelVector) else np.asarray(h)
    m = len(entries)
    known_idx, unknown_idx = split_indices(m, mask)
    return entries[known_idx].copy(), entries[unknown_idx].copy()


def split_indices(m: int, mask: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.unique(np.asarray(list(mask), dtype=int))
    if idx.size == 0 or idx.size >= m:
        raise InvalidMaskError(f"mask must be a non-empty proper subset of 0..{m - 1}")
    if idx[0] < 0 or idx[-1] >= m:
        raise InvalidMaskError(f"mask indices must lie in 0..{m - 1}")
    rest = np.setdiff1d(np.arange(m), idx)
    return idx, rest


def reassemble(known, unknown, mask: Iterable[int], m: int) -> np.ndarray:
    """Inverse of :func:`partial_channel`."""
    idx = np.unique(np.asarray(list(mask), dtype=int))
    out = np.empty(m, dtype=np.result_type(known, unknown))
    out[idx] = known
    out[np.setdiff1d(np.arange(m), idx)] = unknown
    return out


def make_mask(m: int, m_fb: int, mode: str = "prefix", seed: int = 0) -> np.ndarray:
    if mode == "prefix":
        return np.arange(m_fb)
    if mode == "random":
        return np.sort(np.random.default_rng(seed).choice(m, size=m_fb, replace=False))
    raise ValueError(f"unknown mask mode {mode!r}")


# --------------------------------------------------------------------- files
def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "bs_position": list(scene.bs_position),
        "num_antennas": scene.num_antennas,
        "antenna_spacing": scene.antenna_spacing,
        "include_los": scene.include_los,
        "max_paths": scene.max_paths,
        "seed": scene.seed,
        "f_ref": scene.f_ref,
        "service_area": None if scene.service_area is None else [list(b) for b in scene.service_area],
        "scatterers": [list(s) for s in scene.scatterer_positions],
    }


def scene_from_dict(d: dict) -> SceneConfig:
    d = dict(d)
    if "default" in d:
        # {"default": {num_antennas, max_paths, seed, ...}} expands to default_scene
        base = default_scene(**d.pop("default"))
        return replace(base, **{k: v for k, v in d.items() if k != "scatterers"})
    spacing = d.get("antenna_spacing", "half_wavelength")
    if spacing == "half_wavelength":
        spacing = default_spacing()
    return SceneConfig(
        bs_position=tuple(d["bs_position"]),
        num_antennas=int(d["num_antennas"]),
        antenna_spacing=float(spacing),
        scatterer_positions=tuple(tuple(s) for s in d.get("scatterers", [])),
        include_los=bool(d.get("include_los", True)),
        max_paths=int(d.get("max_paths", 25)),
        seed=int(d.get("seed", 0)),
        f_ref=float(d.get("f_ref", F_DOWNLINK)),
        service_area=d.get("service_area"),
    )


def save_scene(scene: SceneConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene), sort_keys=False))


def load_scene(path) -> SceneConfig:
    return scene_from_dict(yaml.safe_load(Path(path).read_text()))
