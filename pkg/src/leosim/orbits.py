"""Walker-Delta constellation geometry: satellite positions over time, ground
nodes, and the geometric predicates (chord distance, elevation) that decide
link availability.

All positions are kilometres in an Earth-centered inertial frame. Orbits are
circular (no perturbations); ground nodes are Earth-fixed and rotated into the
inertial frame at the sidereal rate when queried.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

EARTH_RADIUS_KM = 6371.0
MU_KM3_S2 = 3.986004418e5          # gravitational parameter
SIDEREAL_DAY_S = 86164.0905        # Earth rotation period


class SatId(NamedTuple):
    plane: int
    idx: int

    def __str__(self):
        return f"S{self.plane}-{self.idx}"


class ConfigurationError(ValueError):
    """Raised for invalid constellation or scenario configuration."""


@dataclass(frozen=True)
class ConstellationConfig:
    planes: int = 8
    sats_per_plane: int = 20
    altitude_km: float = 550.0
    inclination_deg: float = 53.0
    raan_spread_deg: float = 360.0
    phasing_factor: int = 1
    epoch_s: float = 0.0

    def __post_init__(self):
        if self.planes < 1:
            raise ConfigurationError("planes: must be >= 1")
        if self.sats_per_plane < 1:
            raise ConfigurationError("sats_per_plane: must be >= 1")
        if self.altitude_km <= 0:
            raise ConfigurationError("altitude_km: must be > 0")
        if not 0 < self.inclination_deg <= 180:
            raise ConfigurationError("inclination_deg: must be in (0, 180]")

    @property
    def n_sats(self) -> int:
        return self.planes * self.sats_per_plane

    @property
    def radius_km(self) -> float:
        return EARTH_RADIUS_KM + self.altitude_km

    @property
    def period_s(self) -> float:
        """Circular orbital period from Kepler's third law."""
        return 2.0 * math.pi * math.sqrt(self.radius_km ** 3 / MU_KM3_S2)

    @property
    def mean_motion_deg_s(self) -> float:
        return 360.0 / self.period_s


@dataclass(frozen=True)
class SatellitePosition:
    sat_id: SatId
    position_km: np.ndarray
    time_s: float


@dataclass(frozen=True)
class GroundNode:
    node_id: str
    kind: str                      # "gateway" | "user-terminal"
    latitude_deg: float
    longitude_deg: float
    position_km: np.ndarray = field(default=None)  # Earth-fixed, derived

    def __post_init__(self):
        if self.kind not in ("gateway", "user-terminal"):
            raise ConfigurationError(f"kind: unknown ground node kind {self.kind!r}")
        if self.position_km is None:
            object.__setattr__(self, "position_km", _ecef_from_latlon(self.latitude_deg, self.longitude_deg))

    def inertial_position_km(self, t: float) -> np.ndarray:
        """Earth-fixed position rotated into the inertial frame at time t."""
        theta = _earth_rotation_rad(t)
        c, s = math.cos(theta), math.sin(theta)
        x, y, z = self.position_km
        return np.array([c * x - s * y, s * x + c * y, z])


def _ecef_from_latlon(lat_deg, lon_deg, radius_km=EARTH_RADIUS_KM):
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    return radius_km * np.array(
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    )


def _earth_rotation_rad(t: float) -> float:
    return 2.0 * math.pi * (t / SIDEREAL_DAY_S)


def sat_ids(config: ConstellationConfig) -> list[SatId]:
    return [SatId(p, s) for p in range(config.planes) for s in range(config.sats_per_plane)]


def position_array(config: ConstellationConfig, t: float) -> np.ndarray:
    """(N, 3) inertial positions at time t, ordered as sat_ids(config).

    Satellite (p, s) has RAAN = p * raan_spread / P and argument of latitude
    u = s * 360/S + p * F * 360/(P*S) + n * (t + epoch), n the mean motion.
    """
    if t < 0:
        raise ConfigurationError("t: must be >= 0")
    P, S = config.planes, config.sats_per_plane
    r = config.radius_km
    inc = math.radians(config.inclination_deg)

    p_idx, s_idx = np.divmod(np.arange(P * S), S)
    raan = np.radians(p_idx * (config.raan_spread_deg / P))
    u = np.radians(
        s_idx * (360.0 / S)
        + p_idx * config.phasing_factor * (360.0 / (P * S))
        + config.mean_motion_deg_s * (t + config.epoch_s)
    )

    cos_u, sin_u = np.cos(u), np.sin(u)
    cos_O, sin_O = np.cos(raan), np.sin(raan)
    cos_i, sin_i = math.cos(inc), math.sin(inc)
    x = r * (cos_O * cos_u - sin_O * sin_u * cos_i)
    y = r * (sin_O * cos_u + cos_O * sin_u * cos_i)
    z = r * (sin_u * sin_i)
    return np.column_stack([x, y, z])


def propagate(config: ConstellationConfig, t: float) -> list[SatellitePosition]:
    """All P*S satellite positions at time t (seconds from the epoch)."""
    pos = position_array(config, t)
    return [
        SatellitePosition(sid, pos[i], t)
        for i, sid in enumerate(sat_ids(config))
    ]


def chord_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Straight-line distance between two position vectors, km."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def elevation_deg(ground: GroundNode, sat: SatellitePosition, t: float) -> float:
    """Elevation of the satellite above the ground node's local horizon."""
    g = ground.inertial_position_km(t)
    rho = sat.position_km - g
    sin_el = float(rho @ g) / (np.linalg.norm(rho) * np.linalg.norm(g))
    return math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))


def elevations_deg(ground_ecef_inertial: np.ndarray, sat_positions: np.ndarray) -> np.ndarray:
    """(G, N) elevation matrix; vectorized form of elevation_deg."""
    g = np.asarray(ground_ecef_inertial, dtype=float)      # (G, 3)
    s = np.asarray(sat_positions, dtype=float)             # (N, 3)
    rho = s[None, :, :] - g[:, None, :]                    # (G, N, 3)
    num = np.einsum("gns,gs->gn", rho, g)
    den = np.linalg.norm(rho, axis=2) * np.linalg.norm(g, axis=1)[:, None]
    return np.degrees(np.arcsin(np.clip(num / den, -1.0, 1.0)))


def walker_neighbors(sat_id: SatId, config: ConstellationConfig) -> dict[str, SatId]:
    """Fixed-grid ISL neighbors: east/west in the same plane, forward/backward
    at the same in-plane index in the adjacent planes."""
    p, s = sat_id
    P, S = config.planes, config.sats_per_plane
    if not (0 <= p < P and 0 <= s < S):
        raise ConfigurationError(f"sat_id: {sat_id} out of range for {P}x{S}")
    return {
        "E": SatId(p, (s + 1) % S),
        "W": SatId(p, (s - 1) % S),
        "Fwd": SatId((p + 1) % P, s),
        "Bwd": SatId((p - 1) % P, s),
    }


def central_angle_deg(lat1, lon1, lat2, lon2) -> float:
    a = _ecef_from_latlon(lat1, lon1, 1.0)
    b = _ecef_from_latlon(lat2, lon2, 1.0)
    return math.degrees(math.acos(max(-1.0, min(1.0, float(a @ b)))))


def generate_ground_nodes(n_gateways: int, n_user_terminals: int, seed: int,
                          max_latitude_deg: float = 55.0,
                          min_separation_deg: float = 5.0) -> list[GroundNode]:
    """Default ground segment: seeded area-uniform placement within the
    latitude band the inclined constellation serves. Clusters are kept at
    least min_separation_deg apart (rejection sampling) so co-located nodes
    do not starve each other of the single feeder a satellite offers."""
    if n_gateways < 0 or n_user_terminals < 0:
        raise ConfigurationError("ground: node counts must be >= 0")
    rng = np.random.default_rng(seed)
    nodes = []
    sin_max = math.sin(math.radians(max_latitude_deg))
    for kind, prefix, count in (("gateway", "GW", n_gateways),
                                ("user-terminal", "UT", n_user_terminals)):
        for i in range(count):
            for _ in range(1000):
                lat = math.degrees(math.asin(rng.uniform(-sin_max, sin_max)))
                lon = rng.uniform(-180.0, 180.0)
                if all(central_angle_deg(lat, lon, n.latitude_deg, n.longitude_deg)
                       >= min_separation_deg for n in nodes):
                    break
            nodes.append(GroundNode(f"{prefix}-{i:02d}", kind, lat, lon))
    return nodes


def write_ground_file(nodes: list[GroundNode], path) -> None:
    """One node per line: node_id kind lat lon."""
    with open(path, "w") as f:
        f.write("# node_id kind latitude_deg longitude_deg\n")
        for n in nodes:
            f.write(f"{n.node_id} {n.kind} {n.latitude_deg:.6f} {n.longitude_deg:.6f}\n")


def read_ground_file(path) -> list[GroundNode]:
    nodes = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ConfigurationError(f"ground_file: bad line {line!r}")
            nodes.append(GroundNode(parts[0], parts[1], float(parts[2]), float(parts[3])))
    return nodes
