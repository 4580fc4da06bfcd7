"""Manhattan-grid mobility and a three-regime (LOS/WLOS/NLOS) V2V channel.

Streets are the lines x = i*block and y = j*block of a square area, by
default wrapped into a torus.  Each transmitter drives along a street and
turns at intersections; its receiver trails it on the same street at a
slowly varying gap.

The channel is a configurable surrogate: class-dependent log-distance path
loss, AR(1) log-normal shadowing per link and unit-mean Rayleigh fading per
link and resource block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .config import ChannelParams, MobilityParams, SeedStreams

_EPS = 1e-6

_HEADINGS = np.array([(1, 0), (0, 1), (-1, 0), (0, -1)], dtype=float)


class LinkClass(str, Enum):
    LOS = "LOS"
    WLOS = "WLOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class ManhattanGrid:
    side: float = 250.0
    block: float = 50.0
    wrap: bool = True

    @classmethod
    def from_params(cls, mp: MobilityParams) -> "ManhattanGrid":
        return cls(mp.area, mp.block, mp.boundary == "wrap")

    def delta(self, a: float, b: float) -> float:
        """Signed displacement b - a (minimal image on the torus)."""
        d = b - a
        if self.wrap:
            d = (d + self.side / 2) % self.side - self.side / 2
        return d

    def on_street(self, c: float) -> bool:
        r = c % self.block
        return r < _EPS or self.block - r < _EPS

    def snap(self, c: float) -> float:
        return round(c / self.block) * self.block

    def same_line(self, a: float, b: float) -> bool:
        return abs(self.delta(a, b)) < _EPS

    def wrap_pos(self, c: float) -> float:
        return c % self.side if self.wrap else c


@dataclass(frozen=True)
class VuePairState:
    tx: tuple[float, float]
    heading: int  # index into _HEADINGS: 0=+x, 1=+y, 2=-x, 3=-y
    speed: float
    gap: float

    @property
    def heading_vec(self) -> np.ndarray:
        return _HEADINGS[self.heading]

    def rx(self, grid: "ManhattanGrid") -> tuple[float, float]:
        return receiver_position(self, grid)


def receiver_position(state: VuePairState, grid: ManhattanGrid) -> tuple[float, float]:
    """Receiver trails the transmitter by ``gap`` on the transmitter's street."""
    hx, hy = _HEADINGS[state.heading]
    x = state.tx[0] - state.gap * hx
    y = state.tx[1] - state.gap * hy
    if grid.wrap:
        return (x % grid.side, y % grid.side)
    return (min(max(x, 0.0), grid.side), min(max(y, 0.0), grid.side))


def random_pair_state(grid: ManhattanGrid, mp: MobilityParams, rng: np.random.Generator) -> VuePairState:
    n_lines = int(round(grid.side / grid.block))
    heading = int(rng.integers(4))
    line = rng.integers(n_lines) * grid.block
    along = rng.uniform(0.0, grid.side)
    tx = (along, line) if heading % 2 == 0 else (line, along)
    speed = mp.speed * (1.0 + mp.speed_jitter * rng.uniform(-1.0, 1.0))
    return VuePairState(tx=(float(tx[0]), float(tx[1])), heading=heading, speed=float(speed),
                        gap=mp.gap_mean)


def _turn(heading: int, mp: MobilityParams, rng: np.random.Generator) -> int:
    u = rng.random()
    if u < mp.p_straight:
        return heading
    if u < mp.p_straight + mp.p_left:
        return (heading + 1) % 4
    return (heading - 1) % 4


def step_mobility(state: VuePairState, grid: ManhattanGrid, tau: float,
                  rng: np.random.Generator, mp: MobilityParams = MobilityParams()) -> VuePairState:
    """Advance one slot: drive ``speed*tau`` (turning at intersections) and walk the gap.

    The gap follows a clamped mean-reverting walk
    ``g <- clip(g + rev*(mean - g) + noise*N(0,1), gap_min, gap_max)``.
    Exactly one normal draw is consumed for the gap, plus one uniform per
    intersection crossed.
    """
    x, y = state.tx
    heading = state.heading
    remaining = state.speed * tau
    axis = heading % 2
    while remaining > 0:
        hx, hy = _HEADINGS[heading]
        pos = x if axis == 0 else y
        sign = hx if axis == 0 else hy
        frac = pos % grid.block
        to_next = (grid.block - frac) if sign > 0 else frac
        if to_next < _EPS:
            to_next = grid.block
        if not grid.wrap:
            edge = grid.side - pos if sign > 0 else pos
            if edge < _EPS:
                heading = (heading + 2) % 4
                continue
            to_next = min(to_next, edge)
        if remaining < to_next:
            if axis == 0:
                x += sign * remaining
            else:
                y += sign * remaining
            break
        remaining -= to_next
        if axis == 0:
            x = grid.snap(x + sign * to_next)
        else:
            y = grid.snap(y + sign * to_next)
        if grid.wrap:
            x, y = x % grid.side, y % grid.side
        at_edge = not grid.wrap and (
            (axis == 0 and (x <= _EPS or x >= grid.side - _EPS))
            or (axis == 1 and (y <= _EPS or y >= grid.side - _EPS)))
        new_heading = _turn(heading, mp, rng)
        if at_edge and new_heading == heading:
            new_heading = (heading + 2) % 4
        heading = new_heading
        axis = heading % 2
    if grid.wrap:
        x, y = x % grid.side, y % grid.side
    gap = state.gap + mp.gap_reversion * (mp.gap_mean - state.gap) + mp.gap_noise * rng.standard_normal()
    gap = min(max(gap, mp.gap_min), mp.gap_max)
    return replace(state, tx=(float(x), float(y)), heading=heading, gap=float(gap))


@dataclass(frozen=True)
class LinkGeometry:
    cls: LinkClass
    distance: float
    corner_distances: tuple[float, float] | None = None
    path_distance: float = 0.0
    corners: int = 0


def _street_lines(grid: ManhattanGrid, pos):
    """Streets through ``pos`` as ('h', y) / ('v', x) tuples."""
    lines = []
    if grid.on_street(pos[1]):
        lines.append(("h", grid.snap(pos[1]) % grid.side if grid.wrap else grid.snap(pos[1])))
    if grid.on_street(pos[0]):
        lines.append(("v", grid.snap(pos[0]) % grid.side if grid.wrap else grid.snap(pos[0])))
    return lines


def classify_link(grid: ManhattanGrid, tx_pos, rx_pos) -> LinkGeometry:
    """LOS on a shared street; WLOS around one nearby corner; otherwise NLOS."""
    dx = abs(grid.delta(tx_pos[0], rx_pos[0]))
    dy = abs(grid.delta(tx_pos[1], rx_pos[1]))
    direct = math.hypot(dx, dy)
    manhattan = dx + dy
    la, lb = _street_lines(grid, tx_pos), _street_lines(grid, rx_pos)
    for kind_a, c_a in la:
        for kind_b, c_b in lb:
            if kind_a == kind_b and grid.same_line(c_a, c_b):
                return LinkGeometry(LinkClass.LOS, direct, None, direct, 0)
    best = None
    for kind_a, c_a in la:
        for kind_b, c_b in lb:
            if kind_a == kind_b:
                continue
            # corner where tx's street meets rx's street
            if kind_a == "h":
                d1 = abs(grid.delta(tx_pos[0], c_b))
                d2 = abs(grid.delta(rx_pos[1], c_a))
            else:
                d1 = abs(grid.delta(tx_pos[1], c_b))
                d2 = abs(grid.delta(rx_pos[0], c_a))
            if best is None or d1 + d2 < sum(best):
                best = (d1, d2)
    if best is not None:
        if best[0] <= grid.block + _EPS and best[1] <= grid.block + _EPS:
            return LinkGeometry(LinkClass.WLOS, direct, best, best[0] + best[1], 1)
        return LinkGeometry(LinkClass.NLOS, direct, best, best[0] + best[1], 1)
    return LinkGeometry(LinkClass.NLOS, direct, None, manhattan, 2)


def path_loss_db(geom: LinkGeometry, params: ChannelParams) -> float:
    """Class-specific log-distance path loss (dB)."""
    d0 = params.ref_distance
    dmin = params.min_distance
    if geom.cls is LinkClass.LOS:
        d = max(geom.distance, dmin)
        return params.ref_loss_db + 10 * params.los_exponent * math.log10(d / d0)
    d = max(geom.path_distance, dmin)
    base = params.ref_loss_db + 10 * params.los_exponent * math.log10(d / d0)
    if geom.cls is LinkClass.WLOS:
        return base + params.wlos_corner_loss_db
    extra = 10 * (params.nlos_exponent - params.los_exponent) * math.log10(max(d, d0) / d0)
    return base + extra + geom.corners * params.nlos_corner_loss_db


def shadow_std(geom: LinkGeometry, params: ChannelParams) -> float:
    return {
        LinkClass.LOS: params.shadow_std_los_db,
        LinkClass.WLOS: params.shadow_std_wlos_db,
        LinkClass.NLOS: params.shadow_std_nlos_db,
    }[geom.cls]


def channel_gain(geom: LinkGeometry, params: ChannelParams, shadow_db: float = 0.0,
                 fading: float = 1.0) -> float:
    """Linear power gain ``10^(-(PL + S)/10) * F`` for one link and RB.

    ``shadow_db`` is the link's current shadowing (dB), ``fading`` the RB's
    small-scale fading power; both are drawn by :class:`LinkChannel`.
    """
    return 10.0 ** (-(path_loss_db(geom, params) + shadow_db) / 10.0) * fading


class LinkChannel:
    """Random state of one transmitter->receiver link: shadowing and per-RB fading.

    Owns its own generator so links can be drawn independently (or in
    parallel) and in any order.
    """

    def __init__(self, params: ChannelParams, n_rb: int, rng: np.random.Generator):
        self.params = params
        self.n_rb = n_rb
        self.rng = rng
        self._z = None  # unit-variance shadowing state
        self._h = None  # complex fading state per RB

    def draw(self, geom: LinkGeometry) -> tuple[float, np.ndarray]:
        """Advance one slot; return (shadow_db, fading powers[n_rb])."""
        p = self.params
        e = self.rng.standard_normal()
        if self._z is None:
            self._z = e
        else:
            rho = p.shadow_ar
            self._z = rho * self._z + math.sqrt(1 - rho * rho) * e
        shadow = shadow_std(geom, p) * self._z
        if p.fading == "none":
            return shadow, np.ones(self.n_rb)
        w = (self.rng.standard_normal(self.n_rb) + 1j * self.rng.standard_normal(self.n_rb)) / math.sqrt(2)
        if self._h is None or p.fading_ar == 0.0:
            self._h = w
        else:
            self._h = p.fading_ar * self._h + math.sqrt(1 - p.fading_ar ** 2) * w
        return shadow, np.abs(self._h) ** 2

    def gains(self, geom: LinkGeometry) -> np.ndarray:
        shadow, fading = self.draw(geom)
        return 10.0 ** (-(path_loss_db(geom, self.params) + shadow) / 10.0) * fading


class VehicularEnv:
    """K pairs on a Manhattan grid producing a K x K x N gain tensor per slot.

    ``gains[k', k, n]`` is the gain from transmitter k' to receiver k on RB n.
    """

    def __init__(self, K: int, N: int, tau: float, channel: ChannelParams,
                 mobility: MobilityParams, streams: SeedStreams):
        self.K, self.N, self.tau = K, N, tau
        self.channel_params = channel
        self.mobility = mobility
        self.grid = ManhattanGrid.from_params(mobility)
        self._mob_rng = streams.generator("mobility")
        init_rng = streams.generator("mobility", 1)
        self.states = [random_pair_state(self.grid, mobility, init_rng) for _ in range(K)]
        self.links = [[LinkChannel(channel, N, streams.generator("fading", a, b))
                       for b in range(K)] for a in range(K)]
        self.slot = -1

    def positions(self):
        tx = [s.tx for s in self.states]
        rx = [receiver_position(s, self.grid) for s in self.states]
        return tx, rx

    def step(self) -> np.ndarray:
        """Move every vehicle one slot, then draw that slot's gain tensor."""
        self.states = [step_mobility(s, self.grid, self.tau, self._mob_rng, self.mobility)
                       for s in self.states]
        self.slot += 1
        return self.gain_matrix()

    def geometries(self):
        tx, rx = self.positions()
        return [[classify_link(self.grid, tx[a], rx[b]) for b in range(self.K)]
                for a in range(self.K)]

    def gain_matrix(self) -> np.ndarray:
        geoms = self.geometries()
        self.last_geometries = geoms
        G = np.empty((self.K, self.K, self.N))
        for a in range(self.K):
            for b in range(self.K):
                G[a, b] = self.links[a][b].gains(geoms[a][b])
        return G


def gain_matrix(env: VehicularEnv) -> np.ndarray:
    return env.gain_matrix()


def write_mobility_trace(path, rows) -> None:
    """CSV with columns slot, pair, tx_x, tx_y, rx_x, rx_y, class."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "pair", "tx_x", "tx_y", "rx_x", "rx_y", "class"])
        for row in rows:
            w.writerow(row)


def mobility_rows(env: VehicularEnv):
    tx, rx = env.positions()
    geoms = getattr(env, "last_geometries", None) or env.geometries()
    for k in range(env.K):
        yield (env.slot, k, repr(tx[k][0]), repr(tx[k][1]), repr(rx[k][0]), repr(rx[k][1]),
               geoms[k][k].cls.value)
