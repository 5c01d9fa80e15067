"""System description: soft links, strain bases, base placements, loop-closure
joints, tendon channels, and the inertial parameter vectors.

World frame convention for the default two-arm system: ``x`` runs from the
first base toward the second, ``z`` points up, ``y`` completes the
right-handed triad.  Both arms leave their base plates nearly vertically and
bend toward each other; the flexible object spans the two tips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liegroup import Pose, exp_se3

XI_STRAIGHT = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])


@dataclass(frozen=True)
class StrainBasisSpec:
    """Per-strain-row polynomial orders: -1 inactive, 0 constant, 1 affine.

    Rows follow the twist ordering (wx, wy, wz, vx, vy, vz); affine rows are
    evaluated in the normalized coordinate X/L.
    """

    orders: tuple[int, int, int, int, int, int]

    def __post_init__(self):
        if len(self.orders) != 6:
            raise ValueError("basis needs exactly 6 strain rows")
        if any(o not in (-1, 0, 1) for o in self.orders):
            raise ValueError("supported polynomial orders are -1, 0, 1")

    @property
    def n_coords(self) -> int:
        return sum(o + 1 for o in self.orders if o >= 0)

    def evaluate(self, X: float, length: float) -> np.ndarray:
        """Basis matrix B(X) of shape (6, n_coords)."""
        out = np.zeros((6, self.n_coords))
        s = X / length
        col = 0
        for row, order in enumerate(self.orders):
            if order < 0:
                continue
            out[row, col] = 1.0
            col += 1
            if order >= 1:
                out[row, col] = s
                col += 1
        return out


@dataclass(frozen=True)
class SoftLinkSpec:
    """Geometry and material of one slender circular-section rod."""

    name: str
    length: float
    radius: float
    density: float
    youngs: float
    poisson: float
    basis: StrainBasisSpec
    quadrature_points: int = 7
    xi_star: np.ndarray = field(default_factory=lambda: XI_STRAIGHT.copy())
    free_base_joint: bool = False

    def __post_init__(self):
        if min(self.length, self.radius, self.density, self.youngs) <= 0.0:
            raise ValueError(f"link '{self.name}': L, r, rho, E must be positive")
        if not 0.0 < self.poisson < 0.5:
            raise ValueError(f"link '{self.name}': Poisson ratio out of (0, 0.5)")
        if self.quadrature_points < 2:
            raise ValueError(f"link '{self.name}': need at least 2 quadrature points")

    @property
    def area(self) -> float:
        return np.pi * self.radius**2

    @property
    def second_moment_bending(self) -> float:
        # J_y = J_z for a circular section
        return np.pi * self.radius**4 / 4.0

    @property
    def second_moment_torsion(self) -> float:
        # perpendicular-axis relation J_x = J_y + J_z
        return 2.0 * self.second_moment_bending

    @property
    def shear_modulus(self) -> float:
        return self.youngs / (2.0 * (1.0 + self.poisson))

    @property
    def n_strain_coords(self) -> int:
        return self.basis.n_coords

    @property
    def n_coords(self) -> int:
        return self.n_strain_coords + (6 if self.free_base_joint else 0)

    def stiffness_diag(self) -> np.ndarray:
        """Sectional stiffness diag(G Jx, E Jy, E Jz, E A, G A, G A)."""
        E, G, A = self.youngs, self.shear_modulus, self.area
        Jy = self.second_moment_bending
        Jx = self.second_moment_torsion
        return np.array([G * Jx, E * Jy, E * Jy, E * A, G * A, G * A])


def theta_of_link(spec: SoftLinkSpec) -> np.ndarray:
    """Inertial parameter block rho * (Jx, Jy, Jz, A) of one link."""
    return spec.density * np.array(
        [
            spec.second_moment_torsion,
            spec.second_moment_bending,
            spec.second_moment_bending,
            spec.area,
        ]
    )


@dataclass(frozen=True)
class TendonChannel:
    """One antagonistic tendon pair routed straight along a link.

    ``row`` is the bending strain row the pair couples to (1 = wy, 2 = wz);
    ``direction`` is the local radial placement of the positive tendon, chosen
    so that positive bending in ``row`` shortens it.
    """

    link: int
    row: int
    offset: float
    direction: np.ndarray
    label: str


@dataclass(frozen=True)
class LoopJoint:
    """Rigid (weld) loop-closure joint between frames on two links.

    The constrained frame on each side is the backbone frame at the given
    abscissa composed with a constant offset pose.
    """

    link_a: int
    X_a: float
    offset_a: Pose
    link_b: int
    X_b: float
    offset_b: Pose


@dataclass
class LinkTables:
    """Precomputed quadrature stations and basis evaluations for one link.

    Stations are ordered [base?] + gauss nodes + [tip]; one Magnus step spans
    each interval between consecutive knots 0, X_1, ..., X_m, L.
    """

    stations_X: np.ndarray          # (n_st,)
    gauss_stations: np.ndarray      # indices into stations of quadrature nodes
    gauss_weights: np.ndarray       # (m,)
    tip_station: int
    base_station: int               # -1 when the base frame is not a station
    B_station: np.ndarray           # (n_st, 6, nk) basis at stations
    interval_h: np.ndarray          # (n_iv,)
    B_colloc: np.ndarray            # (n_iv, 2, 6, nk) basis at collocation pts
    B_integral: np.ndarray          # (6, nk) integral of B over [0, L]


_GAUSS2 = (0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0)


def _build_tables(spec: SoftLinkSpec) -> LinkTables:
    m = spec.quadrature_points
    L = spec.length
    nodes, weights = np.polynomial.legendre.leggauss(m)
    gauss_X = 0.5 * L * (nodes + 1.0)
    gauss_w = 0.5 * L * weights

    if spec.free_base_joint:
        stations_X = np.concatenate(([0.0], gauss_X, [L]))
        gauss_stations = np.arange(1, m + 1)
        base_station = 0
    else:
        stations_X = np.concatenate((gauss_X, [L]))
        gauss_stations = np.arange(m)
        base_station = -1
    tip_station = len(stations_X) - 1

    nk = spec.basis.n_coords
    B_station = np.stack([spec.basis.evaluate(X, L) for X in stations_X])

    knots = np.concatenate(([0.0], gauss_X, [L]))
    interval_h = np.diff(knots)
    B_colloc = np.zeros((len(interval_h), 2, 6, nk))
    for j, (x0, h) in enumerate(zip(knots[:-1], interval_h)):
        for c, frac in enumerate(_GAUSS2):
            B_colloc[j, c] = spec.basis.evaluate(x0 + frac * h, L)

    B_integral = np.einsum("g,gij->ij", gauss_w, B_station[gauss_stations])

    return LinkTables(
        stations_X=stations_X,
        gauss_stations=gauss_stations,
        gauss_weights=gauss_w,
        tip_station=tip_station,
        base_station=base_station,
        B_station=B_station,
        interval_h=interval_h,
        B_colloc=B_colloc,
        B_integral=B_integral,
    )


@dataclass
class SystemModel:
    """Immutable description of the coupled system; treat as read-only.

    Generalized coordinates stack per link: strain-basis coefficients for
    fixed-base links, and a 6-coordinate exponential chart block followed by
    the strain coefficients for a link with a free base joint.
    """

    links: tuple[SoftLinkSpec, ...]
    base_poses: tuple[Pose, ...]
    loop_joints: tuple[LoopJoint, ...]
    tendons: tuple[TendonChannel, ...]
    gravity: np.ndarray
    inertia_scale: float
    beta_damping: float
    theta_true: np.ndarray
    theta_nominal: np.ndarray
    tables: tuple[LinkTables, ...]
    coord_slices: tuple[slice, ...]
    n_coords: int
    stiffness: np.ndarray
    damping: np.ndarray
    tendon_matrix: np.ndarray
    anchor_q: np.ndarray
    build_params: dict

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_constraints(self) -> int:
        return 6 * len(self.loop_joints)

    def joint_slice(self, link: int) -> slice:
        """Global columns of the free-joint block of a link (empty if fixed)."""
        s = self.coord_slices[link]
        if self.links[link].free_base_joint:
            return slice(s.start, s.start + 6)
        return slice(s.start, s.start)

    def strain_slice(self, link: int) -> slice:
        """Global columns of the strain-coefficient block of a link."""
        s = self.coord_slices[link]
        offset = 6 if self.links[link].free_base_joint else 0
        return slice(s.start + offset, s.stop)

    def coordinate_map(self) -> list[tuple[int, int]]:
        """(link, local index) of every global coordinate, in order."""
        out = []
        for k, s in enumerate(self.coord_slices):
            out.extend((k, i) for i in range(s.stop - s.start))
        return out

    def theta_block(self, theta: np.ndarray, link: int) -> np.ndarray:
        return theta[4 * link : 4 * link + 4]


def _assemble_stiffness(links, tables, coord_slices, n_coords, beta):
    K = np.zeros((n_coords, n_coords))
    for k, (spec, tab) in enumerate(zip(links, tables)):
        kappa = spec.stiffness_diag()
        Bg = tab.B_station[tab.gauss_stations]
        Kl = np.einsum("g,gri,r,grj->ij", tab.gauss_weights, Bg, kappa, Bg)
        offset = 6 if spec.free_base_joint else 0
        s = coord_slices[k]
        rows = slice(s.start + offset, s.stop)
        K[rows, rows] += Kl
    return K, beta * K


def _assemble_tendon_matrix(links, tables, tendons, coord_slices, n_coords):
    H = np.zeros((n_coords, len(tendons)))
    for c, ch in enumerate(tendons):
        spec = links[ch.link]
        tab = tables[ch.link]
        offset = 6 if spec.free_base_joint else 0
        s = coord_slices[ch.link]
        # generalized moment per unit tension, conjugate to the bending row
        H[s.start + offset : s.stop, c] = ch.offset * tab.B_integral[ch.row]
    return H


def build_system(
    links,
    base_poses,
    loop_joints=(),
    tendons=(),
    gravity=(0.0, 0.0, 0.0, 0.0, 0.0, -9.81),
    inertia_scale: float = 1.0,
    beta_damping: float = 0.01,
    anchor_q=None,
    build_params=None,
) -> SystemModel:
    """Assemble a SystemModel from link specs and placements."""
    if inertia_scale <= 0.0:
        raise ValueError("inertia scale must be positive")
    links = tuple(links)
    base_poses = tuple(base_poses)
    tables = tuple(_build_tables(spec) for spec in links)

    coord_slices = []
    start = 0
    for spec in links:
        coord_slices.append(slice(start, start + spec.n_coords))
        start += spec.n_coords
    n_coords = start
    coord_slices = tuple(coord_slices)

    theta_nominal = np.concatenate([theta_of_link(spec) for spec in links])
    theta_true = inertia_scale * theta_nominal

    K, D = _assemble_stiffness(links, tables, coord_slices, n_coords, beta_damping)
    H = _assemble_tendon_matrix(links, tables, tendons, coord_slices, n_coords)

    if anchor_q is None:
        anchor_q = np.zeros(n_coords)

    return SystemModel(
        links=links,
        base_poses=base_poses,
        loop_joints=tuple(loop_joints),
        tendons=tuple(tendons),
        gravity=np.asarray(gravity, dtype=float),
        inertia_scale=float(inertia_scale),
        beta_damping=float(beta_damping),
        theta_true=theta_true,
        theta_nominal=theta_nominal,
        tables=tables,
        coord_slices=coord_slices,
        n_coords=n_coords,
        stiffness=K,
        damping=D,
        tendon_matrix=H,
        anchor_q=np.asarray(anchor_q, dtype=float),
        build_params=dict(build_params or {}),
    )


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# local x -> world z (up), local y -> world y, local z -> -world x
_R_UPRIGHT = np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def _arm_tip(base: Pose, curvature: float, length: float) -> Pose:
    xi = np.array([0.0, curvature, 0.0, 1.0, 0.0, 0.0])
    return base @ exp_se3(length * xi)


def _solve_anchor_curvature(base: Pose, length: float, reach_x: float) -> float:
    """Smallest constant curvature that places the arm tip at world x = reach_x.

    Tip reach is not monotone in curvature (the arm eventually curls back), so
    bracket the first crossing on a grid before bisecting.
    """

    def tip_x(kappa):
        return _arm_tip(base, kappa, length).p[0] - reach_x

    grid = np.linspace(1e-9, 1.5 * np.pi / length, 256)
    values = [tip_x(k) for k in grid]
    bracket = None
    for i in range(len(grid) - 1):
        if values[i] == 0.0:
            return float(grid[i])
        if values[i] * values[i + 1] < 0.0:
            bracket = (grid[i], grid[i + 1])
            break
    if bracket is None:
        raise ValueError("anchor geometry is unreachable with the given tilt")
    lo, hi = bracket
    f_lo = tip_x(lo)
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        f_mid = tip_x(mid)
        if f_lo * f_mid <= 0.0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


CR_BENDING_BASIS = StrainBasisSpec(orders=(-1, 1, 1, -1, -1, -1))
OBJECT_BENDING_BASIS = StrainBasisSpec(orders=(-1, 0, 0, -1, -1, -1))

# effective distributed density of an arm: backbone plus tendons and disks
CR_EFFECTIVE_DENSITY = 39_317.0

DEFAULT_BUILD_PARAMS = {
    "cr_length": 0.4,
    "cr_radius": 0.9e-3,
    "cr_density": CR_EFFECTIVE_DENSITY,
    "cr_youngs": 120e9,
    "cr_poisson": 0.3,
    "object_length": 0.22,
    "object_radius": 0.8e-3,
    "object_density": 6450.0,
    "object_youngs": 50e9,
    "object_poisson": 0.3,
    "quadrature_points": 7,
    "base_separation": 0.629,
    "base_tilt": 0.0,
    "tendon_offset": 1.8e-3,
    "beta_damping": 0.01,
    "gravity": (0.0, 0.0, 0.0, 0.0, 0.0, -9.81),
}


def build_default_model(inertia_scale: float = 1.0, **overrides) -> SystemModel:
    """Two tendon-driven arms rigidly coupled through a flexible rod.

    ``inertia_scale`` scales the plant-side (true) inertial parameters
    relative to the nominal ones used by the controller.
    """
    if inertia_scale <= 0.0:
        raise ValueError("inertia scale must be positive")
    params = dict(DEFAULT_BUILD_PARAMS)
    unknown = set(overrides) - set(params)
    if unknown:
        raise ValueError(f"unknown model overrides: {sorted(unknown)}")
    params.update(overrides)

    qp = int(params["quadrature_points"])
    cr1 = SoftLinkSpec(
        name="cr1",
        length=params["cr_length"],
        radius=params["cr_radius"],
        density=params["cr_density"],
        youngs=params["cr_youngs"],
        poisson=params["cr_poisson"],
        basis=CR_BENDING_BASIS,
        quadrature_points=qp,
    )
    cr2 = SoftLinkSpec(
        name="cr2",
        length=params["cr_length"],
        radius=params["cr_radius"],
        density=params["cr_density"],
        youngs=params["cr_youngs"],
        poisson=params["cr_poisson"],
        basis=CR_BENDING_BASIS,
        quadrature_points=qp,
    )
    obj = SoftLinkSpec(
        name="object",
        length=params["object_length"],
        radius=params["object_radius"],
        density=params["object_density"],
        youngs=params["object_youngs"],
        poisson=params["object_poisson"],
        basis=OBJECT_BENDING_BASIS,
        quadrature_points=qp,
        free_base_joint=True,
    )

    tilt = float(params["base_tilt"])
    sep = float(params["base_separation"])
    base1 = Pose(_rot_y(+tilt) @ _R_UPRIGHT, np.zeros(3))
    base2 = Pose(_rot_y(-tilt) @ _R_UPRIGHT, np.array([sep, 0.0, 0.0]))

    reach = 0.5 * (sep - obj.length)
    kappa = _solve_anchor_curvature(base1, cr1.length, reach)
    tip1 = _arm_tip(base1, +kappa, cr1.length)
    tip2 = _arm_tip(base2, -kappa, cr2.length)
    if abs(tip2.p[0] - (sep - reach)) > 1e-9 or abs(tip1.p[2] - tip2.p[2]) > 1e-9:
        raise AssertionError("anchor assembly lost its mirror symmetry")

    # Object chart reference: straight rod spanning the two tips along +x.
    g_ref = Pose(np.eye(3), tip1.p.copy())
    obj_end = Pose(np.eye(3), tip1.p + np.array([obj.length, 0.0, 0.0]))
    if np.linalg.norm(obj_end.p - tip2.p) > 1e-9:
        raise AssertionError("anchor object span does not meet the second tip")

    joints = (
        LoopJoint(
            link_a=0,
            X_a=cr1.length,
            offset_a=tip1.inverse() @ g_ref,
            link_b=2,
            X_b=0.0,
            offset_b=Pose.identity(),
        ),
        LoopJoint(
            link_a=1,
            X_a=cr2.length,
            offset_a=tip2.inverse() @ obj_end,
            link_b=2,
            X_b=obj.length,
            offset_b=Pose.identity(),
        ),
    )

    r_t = float(params["tendon_offset"])
    tendons = (
        TendonChannel(link=0, row=1, offset=r_t,
                      direction=np.array([0.0, 0.0, 1.0]), label="u1"),
        TendonChannel(link=0, row=2, offset=r_t,
                      direction=np.array([0.0, -1.0, 0.0]), label="u2"),
        TendonChannel(link=1, row=1, offset=r_t,
                      direction=np.array([0.0, 0.0, 1.0]), label="u3"),
    )

    anchor_q = np.zeros(16)
    anchor_q[0] = +kappa
    anchor_q[4] = -kappa

    model = build_system(
        links=(cr1, cr2, obj),
        base_poses=(base1, base2, g_ref),
        loop_joints=joints,
        tendons=tendons,
        gravity=params["gravity"],
        inertia_scale=inertia_scale,
        beta_damping=float(params["beta_damping"]),
        anchor_q=anchor_q,
        build_params={**params, "anchor_curvature": kappa},
    )
    if model.n_coords != 16:
        raise AssertionError("default system must carry 16 generalized coordinates")
    return model
