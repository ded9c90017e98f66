"""Two-body astrodynamics in nondimensional units.

Length is scaled by the Earth-Sun mean distance, velocity by the matching
circular speed and mass by the initial spacecraft mass, so the Sun's
gravitational parameter is exactly 1 inside the simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateOrbit, NonConvergence

AU_KM = 149.6e6
DAY_S = 86400.0

KEPLER_MAX_ITER = 50
KEPLER_TOL = 1e-12
DEGENERATE_H = 1e-12


@dataclass(frozen=True)
class MissionConfig:
    """Earth-Mars rendezvous data in physical units (km, km/s, kg, days, N)."""

    N: int = 40
    t_f: float = 358.79
    T_max: float = 0.50
    u_eq: float = 19.6133
    m0: float = 1000.0
    mu_sun: float = 132712440018.0
    r_earth: tuple[float, float, float] = (-140699693.0, -51614428.0, 980.0)
    v_earth: tuple[float, float, float] = (9.774596, -28.07828, 4.337725e-4)
    r_mars: tuple[float, float, float] = (-172682023.0, 176959469.0, 7948912.0)
    v_mars: tuple[float, float, float] = (-16.427384, -14.860506, 9.21486e-2)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError(f"N must be an integer >= 2, got {self.N}")
        for name in ("t_f", "T_max", "u_eq", "m0", "mu_sun"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value}")
        for name in ("r_earth", "v_earth", "r_mars", "v_mars"):
            vec = tuple(float(x) for x in getattr(self, name))
            if len(vec) != 3 or not all(math.isfinite(x) for x in vec):
                raise ConfigError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, vec)
        object.__setattr__(self, "N", int(self.N))


@dataclass(frozen=True)
class ScaleSet:
    r_ref: float
    v_ref: float
    m_ref: float
    t_ref: float


def make_scales(config: MissionConfig) -> ScaleSet:
    r_ref = AU_KM
    v_ref = math.sqrt(config.mu_sun / r_ref)
    return ScaleSet(r_ref=r_ref, v_ref=v_ref, m_ref=config.m0, t_ref=r_ref / v_ref)


@dataclass(frozen=True)
class NondimMission:
    """Mission constants converted once to simulation units."""

    config: MissionConfig
    scales: ScaleSet
    N: int
    t_f: float
    dt: float
    thrust: float
    u_eq: float
    m0: float
    mu: float
    r_earth: np.ndarray = field(repr=False)
    v_earth: np.ndarray = field(repr=False)
    r_mars: np.ndarray = field(repr=False)
    v_mars: np.ndarray = field(repr=False)

    @classmethod
    def from_config(cls, config: MissionConfig) -> "NondimMission":
        sc = make_scales(config)
        t_f = config.t_f * DAY_S / sc.t_ref
        # T_max [N] -> kg km/s^2, then scaled by m_ref v_ref / t_ref
        thrust = (config.T_max / 1000.0) * sc.t_ref / (sc.m_ref * sc.v_ref)
        return cls(
            config=config,
            scales=sc,
            N=config.N,
            t_f=t_f,
            dt=t_f / config.N,
            thrust=thrust,
            u_eq=config.u_eq / sc.v_ref,
            m0=config.m0 / sc.m_ref,
            mu=config.mu_sun * sc.t_ref**2 / sc.r_ref**3,
            r_earth=np.array(config.r_earth) / sc.r_ref,
            v_earth=np.array(config.v_earth) / sc.v_ref,
            r_mars=np.array(config.r_mars) / sc.r_ref,
            v_mars=np.array(config.v_mars) / sc.v_ref,
        )


@dataclass
class StateVector:
    r: np.ndarray
    v: np.ndarray
    m: float
    k: int = 0

    def copy(self) -> "StateVector":
        return StateVector(self.r.copy(), self.v.copy(), self.m, self.k)


def stumpff_c(z: float) -> float:
    if abs(z) < 0.1:
        return 0.5 + z * (-1 / 24 + z * (1 / 720 + z * (-1 / 40320 + z * (1 / 3628800 + z * (-1 / 479001600 + z / 87178291200)))))
    if z > 0:
        return (1.0 - math.cos(math.sqrt(z))) / z
    return (math.cosh(math.sqrt(-z)) - 1.0) / (-z)


def stumpff_s(z: float) -> float:
    if abs(z) < 0.1:
        return 1 / 6 + z * (-1 / 120 + z * (1 / 5040 + z * (-1 / 362880 + z * (1 / 39916800 + z * (-1 / 6227020800 + z / 1307674368000)))))
    if z > 0:
        sz = math.sqrt(z)
        return (sz - math.sin(sz)) / sz**3
    sz = math.sqrt(-z)
    return (math.sinh(sz) - sz) / sz**3


def _solve_universal_anomaly(r0n, sigma0, alpha, dt, mu):
    """Newton iteration on the universal Kepler equation, kept inside a bracket.

    sigma0 is r0.v0 / sqrt(mu). The time-of-flight function is monotone in the
    universal anomaly (its derivative is the radius), so a sign bracket is
    always available and bisection takes over whenever Newton leaves it.
    """
    sqmu = math.sqrt(mu)
    target = sqmu * dt

    def tof(chi):
        z = alpha * chi * chi
        c, s = stumpff_c(z), stumpff_s(z)
        f = sigma0 * chi * chi * c + (1.0 - alpha * r0n) * chi**3 * s + r0n * chi - target
        dfdchi = sigma0 * chi * (1.0 - z * s) + (1.0 - alpha * r0n) * chi * chi * c + r0n
        return f, dfdchi, c, s

    if dt == 0.0:
        return 0.0, stumpff_c(0.0), stumpff_s(0.0)

    sign = 1.0 if dt > 0 else -1.0
    if alpha > 1e-12:
        chi = sqmu * alpha * dt
    else:
        chi = target / r0n
    lo, hi = (0.0, math.inf) if sign > 0 else (-math.inf, 0.0)

    for _ in range(KEPLER_MAX_ITER):
        f, dfdchi, c, s = tof(chi)
        if f == 0.0:
            return chi, c, s
        if f < 0:
            lo = max(lo, chi)
        else:
            hi = min(hi, chi)
        step = f / dfdchi
        new = chi - step
        if not (lo < new < hi) or not math.isfinite(new):
            if math.isinf(hi):
                new = 2.0 * lo + 1.0
            elif math.isinf(lo):
                new = 2.0 * hi - 1.0
            else:
                new = 0.5 * (lo + hi)
        if abs(new - chi) <= KEPLER_TOL * max(1.0, abs(chi)):
            z = alpha * new * new
            return new, stumpff_c(z), stumpff_s(z)
        chi = new
    raise NonConvergence(f"universal Kepler iteration did not converge in {KEPLER_MAX_ITER} steps (dt={dt})")


def lagrange_coefficients(r0, v0, dt: float, mu: float = 1.0):
    """Return (f, g, fdot, gdot) mapping (r0, v0) to the two-body state after dt."""
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    r0n = math.sqrt(float(r0 @ r0))
    if r0n == 0.0:
        raise DegenerateOrbit("zero position vector")
    h = np.cross(r0, v0)
    if math.sqrt(float(h @ h)) < DEGENERATE_H:
        raise DegenerateOrbit("rectilinear orbit: angular momentum is zero")
    if not math.isfinite(dt):
        raise ValueError(f"dt must be finite, got {dt}")
    if dt == 0.0:
        return 1.0, 0.0, 0.0, 1.0

    sqmu = math.sqrt(mu)
    v2 = float(v0 @ v0)
    alpha = 2.0 / r0n - v2 / mu
    sigma0 = float(r0 @ v0) / sqmu
    chi, c, s = _solve_universal_anomaly(r0n, sigma0, alpha, dt, mu)

    chi2 = chi * chi
    f = 1.0 - chi2 / r0n * c
    g = dt - chi2 * chi / sqmu * s
    r1 = f * r0 + g * v0
    r1n = math.sqrt(float(r1 @ r1))
    fdot = sqmu / (r1n * r0n) * (alpha * chi2 * chi * s - chi)
    gdot = 1.0 - chi2 / r1n * c
    return f, g, fdot, gdot


def kepler_propagate(r0, v0, dt: float, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if dt == 0.0:
        return r0.copy(), v0.copy()
    f, g, fdot, gdot = lagrange_coefficients(r0, v0, dt, mu)
    return f * r0 + g * v0, fdot * r0 + gdot * v0


def tsiolkovsky_mass(m: float, dv_mag: float, u_eq: float) -> float:
    return m * math.exp(-dv_mag / u_eq)


def orbital_energy(r, v, mu: float = 1.0) -> float:
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    return 0.5 * float(v @ v) - mu / math.sqrt(float(r @ r))


def angular_momentum(r, v) -> np.ndarray:
    return np.cross(np.asarray(r, dtype=float), np.asarray(v, dtype=float))
