"""Deterministic quasi-static chain world.

The deformable linear object is an ordered chain of equal-length links with a
per-joint bend limit. A pick-and-place action pins one keypoint and drags it
along a straight segment in 64 substeps; after each substep up to 10
projection iterations re-solve the chain with a constrained follow-the-leader
pass outward from the pin (exact link lengths, bends clamped into the joint
cone, placements kept inside the workspace and outside the obstacle discs),
with radial pushes as a backstop for residual midpoint penetrations. A settle
phase at the end of the drag plus a final exact inextensibility rebuild make
link lengths exact while preserving link directions, so bend angles survive
unchanged; obstacle and wall violations left by genuinely conflicting
constraints stay within a millimeter-scale slack.

Everything here is a pure function of (state, action, config) or of
(config, seed); there is no hidden state and no wall-clock dependence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .config import TaskConfig
from .geometry import Obstacle, Point, Segment, sequence_feasible

SUBSTEPS = 64
PROJECTION_ITERS = 10
SETTLE_ITERS = 50
GENERATION_BUDGET = 10_000

# Slack tolerances of the executor contract.
DISPLACEMENT_TOL = 1e-9
_FTL_SKIP = 1e-13
_CONVERGED = 1e-12


class GenerationError(RuntimeError):
    """Environment generation exhausted its rejection budget."""


class InfeasibleActionError(ValueError):
    """Action violates execute() preconditions; the state is unchanged."""


def quantize(x: float) -> float:
    """Round to 9 significant digits, the file precision for coordinates."""
    return float(format(x, ".9g"))


@dataclass(frozen=True, eq=False)
class EnvState:
    """M ordered keypoints plus B obstacle centers; q[0] corresponds to
    arm 1 and q[-1] to arm 2."""

    q: np.ndarray
    o: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        o = np.asarray(self.o, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 2 or q.shape[0] < 3:
            raise ValueError(f"keypoints must be (M>=3, 2), got {q.shape}")
        o = o.reshape(-1, 2) if o.size else o.reshape(0, 2)
        q.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "o", o)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.o, other.o)

    @property
    def keypoint_count(self) -> int:
        return self.q.shape[0]

    def link_length(self) -> float:
        """Mean consecutive keypoint distance; for valid chains this is the
        common link length."""
        diffs = np.diff(self.q, axis=0)
        return float(np.mean(np.hypot(diffs[:, 0], diffs[:, 1])))

    def dlo_length(self) -> float:
        return self.link_length() * (self.keypoint_count - 1)

    def obstacles(self, config: TaskConfig) -> list[Obstacle]:
        return [config.obstacle((float(x), float(y))) for x, y in self.o]

    def quantized(self) -> "EnvState":
        """Copy rounded to the 9-significant-digit file precision."""
        q = np.array([[quantize(x), quantize(y)] for x, y in self.q])
        o = np.array([[quantize(x), quantize(y)] for x, y in self.o]).reshape(-1, 2)
        return EnvState(q, o)

    def to_obj(self) -> dict:
        return {
            "q": [[quantize(float(x)), quantize(float(y))] for x, y in self.q],
            "o": [[quantize(float(x)), quantize(float(y))] for x, y in self.o],
        }

    @staticmethod
    def from_obj(obj: dict) -> "EnvState":
        if not isinstance(obj, dict) or "q" not in obj or "o" not in obj:
            raise ValueError("state object must carry 'q' and 'o'")
        return EnvState(np.asarray(obj["q"], dtype=np.float64),
                        np.asarray(obj["o"], dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True)
class PickPlace:
    """One arm's straight drag of one keypoint."""

    arm_id: int
    pick_index: int
    pick: tuple[float, float]
    place: tuple[float, float]

    def __post_init__(self) -> None:
        if self.arm_id not in (1, 2):
            raise ValueError(f"arm_id must be 1 or 2, got {self.arm_id}")
        object.__setattr__(self, "pick", (float(self.pick[0]), float(self.pick[1])))
        object.__setattr__(self, "place", (float(self.place[0]), float(self.place[1])))

    def segment(self) -> Segment:
        return Segment(Point(*self.pick), Point(*self.place))

    def displacement(self) -> float:
        return math.hypot(self.place[0] - self.pick[0], self.place[1] - self.pick[1])

    def to_obj(self) -> dict:
        return {
            "arm": self.arm_id,
            "k": self.pick_index,
            "pick": [quantize(self.pick[0]), quantize(self.pick[1])],
            "place": [quantize(self.place[0]), quantize(self.place[1])],
        }

    @staticmethod
    def from_obj(obj: dict) -> "PickPlace":
        return PickPlace(int(obj["arm"]), int(obj["k"]),
                         (obj["pick"][0], obj["pick"][1]),
                         (obj["place"][0], obj["place"][1]))


@dataclass(frozen=True)
class ActionPair:
    """Bimanual action: a leader drag and an optional follower drag."""

    leader: PickPlace
    follower: PickPlace | None = None

    def sequences(self) -> Iterator[PickPlace]:
        yield self.leader
        if self.follower is not None:
            yield self.follower

    def to_obj(self) -> dict:
        return {
            "leader": self.leader.to_obj(),
            "follower": None if self.follower is None else self.follower.to_obj(),
        }

    @staticmethod
    def from_obj(obj: dict) -> "ActionPair":
        follower = obj.get("follower")
        return ActionPair(
            PickPlace.from_obj(obj["leader"]),
            None if follower is None else PickPlace.from_obj(follower),
        )


@dataclass
class ExecStats:
    """Projection diagnostics, mainly for tests and audits."""

    joint_clamps: int = 0
    obstacle_pushes: int = 0
    workspace_clamps: int = 0
    placement_conflicts: int = 0


def goal_reached(state: EnvState, config: TaskConfig) -> bool:
    """True iff endpoint 1 is a valid waypoint for arm 1 and endpoint M for
    arm 2."""
    q = state.q
    return _waypoint_valid_fast(
        float(q[0, 0]), float(q[0, 1]), config, 1, state
    ) and _waypoint_valid_fast(float(q[-1, 0]), float(q[-1, 1]), config, 2, state)


def _waypoint_valid_fast(
    px: float, py: float, config: TaskConfig, arm_id: int, state: EnvState
) -> bool:
    bx, by = config.arm_bases[arm_id - 1]
    d = math.hypot(px - bx, py - by)
    if not config.reach_min < d < config.reach_max:
        return False
    clearance = config.obstacle_clearance
    for ox, oy in state.o:
        if math.hypot(px - ox, py - oy) <= clearance:
            return False
    return True


def reward(next_state: EnvState, config: TaskConfig) -> int:
    """Sparse reward: 1 iff the next state lies in the goal space."""
    return 1 if goal_reached(next_state, config) else 0


# Executor


def execute(state: EnvState, action: ActionPair, config: TaskConfig) -> EnvState:
    new_state, _ = execute_with_stats(state, action, config)
    return new_state


def execute_with_stats(
    state: EnvState, action: ActionPair, config: TaskConfig
) -> tuple[EnvState, ExecStats]:
    """Run the quasi-static transition, leader first then follower.

    Raises InfeasibleActionError (leaving the state untouched) when either
    swept segment fails feasibility for its arm, when the structural action
    invariants are violated, or when a pick does not match the keypoint it
    names in the input state.
    """
    _validate_action(state, action, config)

    xs = state.q[:, 0].tolist()
    ys = state.q[:, 1].tolist()
    link_len = state.link_length()
    obstacles = [tuple(c) for c in state.o.tolist()]
    stats = ExecStats()
    for pp in action.sequences():
        _drag(
            xs,
            ys,
            pp.pick_index,
            pp.place[0],
            pp.place[1],
            link_len,
            config,
            obstacles,
            stats,
        )
    q = np.column_stack([xs, ys])
    return EnvState(q, state.o), stats


def _validate_action(state: EnvState, action: ActionPair, config: TaskConfig) -> None:
    m = state.keypoint_count
    obstacles = state.obstacles(config)
    for pp in action.sequences():
        if not 0 <= pp.pick_index < m:
            raise InfeasibleActionError(
                f"pick index {pp.pick_index} outside 0..{m - 1}"
            )
        kx, ky = state.q[pp.pick_index]
        if math.hypot(pp.pick[0] - kx, pp.pick[1] - ky) > 1e-9:
            raise InfeasibleActionError(
                f"pick {pp.pick} does not match keypoint {pp.pick_index}"
            )
        if pp.displacement() > config.max_step + DISPLACEMENT_TOL:
            raise InfeasibleActionError(
                f"displacement {pp.displacement():.6f} exceeds max step "
                f"{config.max_step}"
            )
        if not sequence_feasible(pp.segment(), config.arm(pp.arm_id), obstacles):
            raise InfeasibleActionError(
                f"swept segment {pp.pick}->{pp.place} infeasible for arm {pp.arm_id}"
            )
    if action.follower is not None:
        if action.follower.arm_id == action.leader.arm_id:
            raise InfeasibleActionError("leader and follower must use different arms")
        sep = math.hypot(
            action.leader.pick[0] - action.follower.pick[0],
            action.leader.pick[1] - action.follower.pick[1],
        )
        if sep <= config.min_pick_separation:
            raise InfeasibleActionError(
                f"pick separation {sep:.6f} not above {config.min_pick_separation}"
            )


def _drag(
    xs: list[float],
    ys: list[float],
    pin: int,
    tx: float,
    ty: float,
    link_len: float,
    config: TaskConfig,
    obstacles: list[tuple[float, float]],
    stats: ExecStats,
) -> None:
    """Drag the keypoint at `pin` from its current position to (tx, ty).

    Each substep moves the pin one increment and re-projects the chain with
    the constrained follow-the-leader pass, which restores link lengths while
    keeping bends inside the joint cone and placements inside the workspace
    and outside the obstacle discs; chains pressed against a wall or an
    obstacle slide along it. Residual midpoint penetrations are pushed out
    radially when accumulated motion may have consumed the last measured
    clearance. A settle phase guarantees the drag never finishes mid-fight,
    and the exact rebuild makes link lengths exact while preserving
    directions, so bends survive it unchanged.
    """
    x0 = xs[pin]
    y0 = ys[pin]
    if tx == x0 and ty == y0:
        return
    mu = config.obstacle_radius
    width = config.workspace_width
    height = config.workspace_height
    cos_lim = math.cos(config.joint_limit)
    sin_lim = math.sin(config.joint_limit)
    dot_lim = cos_lim * link_len * link_len

    # Conservative per-obstacle lower bounds on the clearance of every
    # keypoint and link midpoint; backstop scans touch an obstacle only when
    # accumulated motion may have consumed its bound (scanning a clean
    # obstacle never moves points, so skipping it cannot change the result).
    budgets = (
        [_obstacle_margin_one(xs, ys, ox, oy, mu) for ox, oy in obstacles]
        if obstacles
        else []
    )

    inv = 1.0 / SUBSTEPS
    step_x = tx - x0
    step_y = ty - y0
    for s in range(1, SUBSTEPS + 1):
        if s == SUBSTEPS:
            px, py = tx, ty
        else:
            t = s * inv
            px = x0 + step_x * t
            py = y0 + step_y * t
        moved = math.hypot(px - xs[pin], py - ys[pin])
        cpx = 0.0 if px < 0.0 else (width if px > width else px)
        cpy = 0.0 if py < 0.0 else (height if py > height else py)
        if cpx != px or cpy != py:
            stats.workspace_clamps += 1
            px, py = cpx, cpy
        xs[pin] = px
        ys[pin] = py
        for b in range(len(budgets)):
            budgets[b] -= moved

        for _ in range(PROJECTION_ITERS):
            max_move, conflicts, cone = _constrained_pass(
                xs, ys, pin, link_len, cos_lim, sin_lim, dot_lim,
                width, height, obstacles, mu,
            )
            stats.joint_clamps += cone
            stats.placement_conflicts += conflicts
            pushes = 0
            for b in range(len(budgets)):
                budgets[b] -= max_move
                if budgets[b] <= 0.0:
                    ox, oy = obstacles[b]
                    p, budgets[b] = _resolve_obstacle_one(
                        xs, ys, pin, ox, oy, mu
                    )
                    pushes += p
            stats.obstacle_pushes += pushes
            if not pushes and (not conflicts or max_move <= _CONVERGED):
                break

    # settle: rounds end with the constrained pass, so the chain leaves the
    # drag with exact lengths and in-cone bends; leftover obstacle or wall
    # violations stay within the executor's slack
    for _ in range(SETTLE_ITERS):
        pushes = 0
        for b in range(len(budgets)):
            if budgets[b] <= 0.0:
                ox, oy = obstacles[b]
                p, budgets[b] = _resolve_obstacle_one(xs, ys, pin, ox, oy, mu)
                pushes += p
        stats.obstacle_pushes += pushes
        max_move, conflicts, cone = _constrained_pass(
            xs, ys, pin, link_len, cos_lim, sin_lim, dot_lim,
            width, height, obstacles, mu,
        )
        stats.joint_clamps += cone
        stats.placement_conflicts += conflicts
        for b in range(len(budgets)):
            budgets[b] -= max_move
        if not pushes and max_move <= _CONVERGED:
            break

    _exact_rebuild(xs, ys, pin, link_len)


def _constrained_pass(
    xs: list[float],
    ys: list[float],
    pin: int,
    link_len: float,
    cos_lim: float,
    sin_lim: float,
    dot_lim: float,
    width: float,
    height: float,
    obstacles: list[tuple[float, float]],
    mu: float,
) -> tuple[float, int, int]:
    """Follow-the-leader projection outward from the pin in both directions.

    Each point is placed at exact link length from its (already projected)
    neighbor, inside the bend cone of the previous link, inside the
    workspace, and outside every obstacle disc for both the point and the
    trailing link midpoint. Conflicting constraints resolve in favor of the
    cone, leaving a bounded wall or obstacle violation for the slack budget.

    Returns (largest point displacement, conflict count, cone clamp count).
    """
    max_move = 0.0
    conflicts = 0
    cone_clamps = 0
    m = len(xs)
    sqrt = math.sqrt
    inv_len = 1.0 / link_len
    skip2 = 2.0 * link_len * _FTL_SKIP
    link2 = link_len * link_len
    cone_dot = dot_lim * inv_len  # threshold for dot(raw link, unit ref)
    reach = link_len + mu

    for direction in (1, -1):
        if direction == 1:
            first = pin + 1
            last = m
            ref = pin - 1
        else:
            first = pin - 1
            last = -1
            ref = pin + 1
        if first == last:
            continue
        prev_x = xs[pin]
        prev_y = ys[pin]
        # cone reference: the link on the other side of the pin, reversed
        have_ref = 0 <= ref < m
        upx = 0.0
        upy = 0.0
        if have_ref:
            rx = prev_x - xs[ref]
            ry = prev_y - ys[ref]
            rn = sqrt(rx * rx + ry * ry)
            if rn > 1e-15:
                upx = rx / rn
                upy = ry / rn
            else:
                have_ref = False
        for i in range(first, last, direction):
            cx = xs[i]
            cy = ys[i]
            dx = cx - prev_x
            dy = cy - prev_y
            d2 = dx * dx + dy * dy
            err = d2 - link2
            if err <= skip2 and err >= -skip2:
                # length already exact; accept unless cone or walls object
                if (not have_ref or dx * upx + dy * upy >= cone_dot) and (
                    0.0 <= cx <= width and 0.0 <= cy <= height
                ):
                    prev_x, prev_y = cx, cy
                    upx = dx * inv_len
                    upy = dy * inv_len
                    have_ref = True
                    continue
                ux = dx * inv_len
                uy = dy * inv_len
            else:
                d = sqrt(d2)
                if d < 1e-15:
                    if have_ref:
                        ux, uy = upx, upy
                    else:
                        ux, uy = float(direction), 0.0
                else:
                    ux = dx / d
                    uy = dy / d
            nx = prev_x + ux * link_len
            ny = prev_y + uy * link_len
            clean = 0.0 <= nx <= width and 0.0 <= ny <= height
            if clean and have_ref and ux * upx + uy * upy < cos_lim:
                clean = False
            if clean and obstacles:
                for ox, oy in obstacles:
                    if (
                        abs(nx - ox) < reach
                        and abs(ny - oy) < reach
                        and (nx - ox) ** 2 + (ny - oy) ** 2 < mu * mu
                    ):
                        clean = False
                        break
                    # trailing link midpoint against the same disc
                    mx = 0.5 * (prev_x + nx)
                    my = 0.5 * (prev_y + ny)
                    if (
                        abs(mx - ox) < reach
                        and abs(my - oy) < reach
                        and (mx - ox) ** 2 + (my - oy) ** 2 < mu * mu
                    ):
                        clean = False
                        break
            if not clean:
                resolved = False
                if have_ref and ux * upx + uy * upy < cos_lim:
                    # minimal rotation to the nearer cone edge; commit when
                    # the result is already wall- and disc-clean (the full
                    # candidate search would pick the same direction)
                    if upx * uy - upy * ux >= 0.0:
                        ex = upx * cos_lim - upy * sin_lim
                        ey = upy * cos_lim + upx * sin_lim
                    else:
                        ex = upx * cos_lim + upy * sin_lim
                        ey = upy * cos_lim - upx * sin_lim
                    tx2 = prev_x + ex * link_len
                    ty2 = prev_y + ey * link_len
                    if 0.0 <= tx2 <= width and 0.0 <= ty2 <= height:
                        ok2 = True
                        if obstacles:
                            mx2 = 0.5 * (prev_x + tx2)
                            my2 = 0.5 * (prev_y + ty2)
                            for ox, oy in obstacles:
                                if (
                                    abs(tx2 - ox) < reach
                                    and abs(ty2 - oy) < reach
                                    and (tx2 - ox) ** 2 + (ty2 - oy) ** 2
                                    < mu * mu
                                ):
                                    ok2 = False
                                    break
                                if (
                                    abs(mx2 - ox) < reach
                                    and abs(my2 - oy) < reach
                                    and (mx2 - ox) ** 2 + (my2 - oy) ** 2
                                    < mu * mu
                                ):
                                    ok2 = False
                                    break
                        if ok2:
                            nx, ny = tx2, ty2
                            cone_clamps += 1
                            resolved = True
                if not resolved:
                    nx, ny, conflicted, clamped = _place_constrained(
                        prev_x, prev_y, ux, uy, have_ref, upx, upy,
                        cos_lim, sin_lim, link_len, width, height, obstacles,
                        mu,
                    )
                    conflicts += conflicted
                    cone_clamps += clamped
            move = math.hypot(nx - cx, ny - cy)
            if move > max_move:
                max_move = move
            xs[i] = nx
            ys[i] = ny
            upx = (nx - prev_x) * inv_len
            upy = (ny - prev_y) * inv_len
            have_ref = True
            prev_x, prev_y = nx, ny
    return max_move, conflicts, cone_clamps


_SNAP = 1e-13
_FEAS_WALL = 1e-12
_FEAS_CONE = 5e-10
_FEAS_OBS = 1e-9


def _disc_fits(
    px: float, py: float, ccx: float, ccy: float, radius: float, link_len: float
) -> list[tuple[float, float]]:
    """Unit directions from (px, py) whose endpoint lands exactly on the
    circle (center (ccx, ccy), radius); standard circle-circle intersection.
    """
    wx = ccx - px
    wy = ccy - py
    d2 = wx * wx + wy * wy
    d = math.sqrt(d2)
    if d < 1e-15 or d > link_len + radius or d < abs(link_len - radius):
        return []
    a = (d2 + link_len * link_len - radius * radius) / (2.0 * d)
    h2 = link_len * link_len - a * a
    h = math.sqrt(h2) if h2 > 0.0 else 0.0
    bx = wx / d
    by = wy / d
    inv = 1.0 / link_len
    return [
        ((a * bx - h * by) * inv, (a * by + h * bx) * inv),
        ((a * bx + h * by) * inv, (a * by - h * bx) * inv),
    ]


def _place_constrained(
    px: float,
    py: float,
    ux: float,
    uy: float,
    have_ref: bool,
    upx: float,
    upy: float,
    cos_lim: float,
    sin_lim: float,
    link_len: float,
    width: float,
    height: float,
    obstacles: list[tuple[float, float]],
    mu: float,
) -> tuple[float, float, int, int]:
    """Placement at distance link_len from (px, py) satisfying the bend
    cone, the workspace, and the obstacle discs, as close as possible to
    direction (ux, uy).

    The feasible direction set is an arc intersection whose boundary points
    are cone edges, wall fits, or disc tangencies, so searching those
    candidates (plus the desired direction itself) is exact. When nothing
    satisfies every constraint the cone wins and the leftover violation is
    reported as a conflict. Returns (x, y, conflicted, cone_clamped).
    """
    cone_violated = have_ref and ux * upx + uy * upy < cos_lim
    influence = link_len + 2.0 * mu
    near = [
        (ox, oy)
        for ox, oy in obstacles
        if abs(ox - px) < influence and abs(oy - py) < influence
    ]
    candidates: list[tuple[float, float]] = [(ux, uy)]
    if have_ref:
        candidates.append(
            (upx * cos_lim - upy * sin_lim, upy * cos_lim + upx * sin_lim)
        )
        candidates.append(
            (upx * cos_lim + upy * sin_lim, upy * cos_lim - upx * sin_lim)
        )
    lo_x = -px / link_len
    hi_x = (width - px) / link_len
    lo_y = -py / link_len
    hi_y = (height - py) / link_len
    if ux < lo_x or ux > hi_x:
        cxb = lo_x if ux < lo_x else hi_x
        # a bound beyond the unit circle is unsatisfiable by any direction
        if -1.0 <= cxb <= 1.0:
            mag2 = 1.0 - cxb * cxb
            mag = math.sqrt(mag2) if mag2 > 0.0 else 0.0
            candidates.append((cxb, mag))
            candidates.append((cxb, -mag))
    if uy < lo_y or uy > hi_y:
        cyb = lo_y if uy < lo_y else hi_y
        if -1.0 <= cyb <= 1.0:
            mag2 = 1.0 - cyb * cyb
            mag = math.sqrt(mag2) if mag2 > 0.0 else 0.0
            candidates.append((mag, cyb))
            candidates.append((-mag, cyb))
    for ox, oy in near:
        # endpoint disc and trailing-midpoint disc
        candidates.extend(_disc_fits(px, py, ox, oy, mu, link_len))
        candidates.extend(
            _disc_fits(px, py, 2.0 * ox - px, 2.0 * oy - py, 2.0 * mu, link_len)
        )

    mu_feas2 = (mu - _FEAS_OBS) * (mu - _FEAS_OBS)
    best = None
    best_dot = -2.0
    for wx, wy in candidates:
        if wx < lo_x - _FEAS_WALL or wx > hi_x + _FEAS_WALL:
            continue
        if wy < lo_y - _FEAS_WALL or wy > hi_y + _FEAS_WALL:
            continue
        if have_ref and wx * upx + wy * upy < cos_lim - _FEAS_CONE:
            continue
        ok = True
        if near:
            ex = px + wx * link_len
            ey = py + wy * link_len
            mx = 0.5 * (px + ex)
            my = 0.5 * (py + ey)
            for ox, oy in near:
                if (ex - ox) ** 2 + (ey - oy) ** 2 < mu_feas2:
                    ok = False
                    break
                if (mx - ox) ** 2 + (my - oy) ** 2 < mu_feas2:
                    ok = False
                    break
        if not ok:
            continue
        dot = wx * ux + wy * uy
        if dot > best_dot:
            best_dot = dot
            best = (wx, wy)
    conflicted = 0
    if best is None:
        conflicted = 1
        # the cone wins; everything else becomes slack. Among the in-cone
        # fallbacks prefer the one that stays closest to the workspace so a
        # pressed chain heads back inside instead of marching out.
        if have_ref:
            fallbacks = [
                (upx * cos_lim - upy * sin_lim, upy * cos_lim + upx * sin_lim),
                (upx * cos_lim + upy * sin_lim, upy * cos_lim - upx * sin_lim),
            ]
            if not cone_violated:
                fallbacks.append((ux, uy))
            best_key = None
            for wx, wy in fallbacks:
                ex = px + wx * link_len
                ey = py + wy * link_len
                out = 0.0
                if ex < 0.0:
                    out -= ex
                elif ex > width:
                    out += ex - width
                if ey < 0.0:
                    out -= ey
                elif ey > height:
                    out += ey - height
                for ox, oy in near:
                    d = math.hypot(ex - ox, ey - oy)
                    if d < mu:
                        out += mu - d
                    d = math.hypot(0.5 * (px + ex) - ox, 0.5 * (py + ey) - oy)
                    if d < mu:
                        out += mu - d
                key = (out, -(wx * ux + wy * uy))
                if best_key is None or key < best_key:
                    best_key = key
                    best = (wx, wy)
        else:
            best = (ux, uy)
    nx = px + best[0] * link_len
    ny = py + best[1] * link_len
    # snap hairline overhangs from rounding onto the bound
    if -_SNAP <= nx < 0.0:
        nx = 0.0
    elif width < nx <= width + _SNAP:
        nx = width
    if -_SNAP <= ny < 0.0:
        ny = 0.0
    elif height < ny <= height + _SNAP:
        ny = height
    return nx, ny, conflicted, 1 if cone_violated else 0



def _resolve_obstacle_one(
    xs: list[float], ys: list[float], pin: int, ox: float, oy: float, mu: float
) -> tuple[int, float]:
    """Scan one obstacle: push penetrating keypoints and link midpoints to
    its surface; returns (push count, fresh margin for this obstacle)."""
    pushes, margin = _resolve_obstacles(xs, ys, pin, [(ox, oy)], mu)
    return pushes, margin


def _obstacle_margin_one(
    xs: list[float], ys: list[float], ox: float, oy: float, mu: float
) -> float:
    return _obstacle_margin(xs, ys, [(ox, oy)], mu)


def _resolve_obstacles(
    xs: list[float],
    ys: list[float],
    pin: int,
    obstacles: list[tuple[float, float]],
    mu: float,
) -> tuple[int, float]:
    """Push penetrating keypoints and link midpoints to the obstacle surface;
    returns (push count, fresh clearance margin). After pushes the margin is
    conservatively zero, which forces a rescan on the next iteration."""
    pushes = 0
    m = len(xs)
    mu2 = mu * mu
    min_d2 = math.inf
    for ox, oy in obstacles:
        for i in range(m):
            dx = xs[i] - ox
            dy = ys[i] - oy
            d2 = dx * dx + dy * dy
            if d2 < mu2:
                if i == pin:
                    continue
                d = math.sqrt(d2)
                if d < 1e-15:
                    dx, dy, d = 1.0, 0.0, 1.0
                scale = mu / d
                xs[i] = ox + dx * scale
                ys[i] = oy + dy * scale
                pushes += 1
            elif d2 < min_d2:
                min_d2 = d2
        for i in range(m - 1):
            mx = 0.5 * (xs[i] + xs[i + 1])
            my = 0.5 * (ys[i] + ys[i + 1])
            dx = mx - ox
            dy = my - oy
            d2 = dx * dx + dy * dy
            if d2 < mu2:
                d = math.sqrt(d2)
                if d < 1e-15:
                    dx, dy, d = 1.0, 0.0, 1.0
                shift = mu / d - 1.0
                sx = dx * shift
                sy = dy * shift
                if i == pin:
                    xs[i + 1] += 2.0 * sx
                    ys[i + 1] += 2.0 * sy
                elif i + 1 == pin:
                    xs[i] += 2.0 * sx
                    ys[i] += 2.0 * sy
                else:
                    xs[i] += sx
                    ys[i] += sy
                    xs[i + 1] += sx
                    ys[i + 1] += sy
                pushes += 1
            elif d2 < min_d2:
                min_d2 = d2
    if pushes:
        return pushes, 0.0
    return 0, math.sqrt(min_d2) - mu


def _obstacle_margin(
    xs: list[float], ys: list[float], obstacles: list[tuple[float, float]], mu: float
) -> float:
    """Smallest clearance of any keypoint or link midpoint over all obstacle
    surfaces (negative means penetration)."""
    margin = math.inf
    m = len(xs)
    for ox, oy in obstacles:
        best = math.inf
        for i in range(m):
            dx = xs[i] - ox
            dy = ys[i] - oy
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        for i in range(m - 1):
            dx = 0.5 * (xs[i] + xs[i + 1]) - ox
            dy = 0.5 * (ys[i] + ys[i + 1]) - oy
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        margin = min(margin, math.sqrt(best) - mu)
    return margin


def _clamp_workspace(
    xs: list[float], ys: list[float], width: float, height: float
) -> tuple[int, float]:
    clamps = 0
    max_move = 0.0
    for i in range(len(xs)):
        x = xs[i]
        y = ys[i]
        cx = 0.0 if x < 0.0 else (width if x > width else x)
        cy = 0.0 if y < 0.0 else (height if y > height else y)
        if cx != x or cy != y:
            move = math.hypot(cx - x, cy - y)
            if move > max_move:
                max_move = move
            xs[i] = cx
            ys[i] = cy
            clamps += 1
    return clamps, max_move


def _exact_rebuild(xs: list[float], ys: list[float], pin: int, link_len: float) -> None:
    """Rebuild the chain outward from the pin with exact link lengths along
    the current link directions; bend angles are preserved exactly."""
    m = len(xs)
    dirs_x = [0.0] * (m - 1)
    dirs_y = [0.0] * (m - 1)
    last_dx, last_dy = 1.0, 0.0
    for i in range(m - 1):
        dx = xs[i + 1] - xs[i]
        dy = ys[i + 1] - ys[i]
        d = math.sqrt(dx * dx + dy * dy)
        if d < 1e-15:
            dx, dy = last_dx, last_dy
        else:
            dx /= d
            dy /= d
            last_dx, last_dy = dx, dy
        dirs_x[i] = dx
        dirs_y[i] = dy
    for i in range(pin + 1, m):
        xs[i] = xs[i - 1] + dirs_x[i - 1] * link_len
        ys[i] = ys[i - 1] + dirs_y[i - 1] * link_len
    for i in range(pin - 1, -1, -1):
        xs[i] = xs[i + 1] - dirs_x[i] * link_len
        ys[i] = ys[i + 1] - dirs_y[i] * link_len


# Environment generation


def generate_env(config: TaskConfig, seed: int) -> EnvState:
    """Sample obstacles and a valid chain, rejecting goal-space initial
    states so the task is never already solved; deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rejections = 0
    mu = config.obstacle_radius
    width = config.workspace_width
    height = config.workspace_height

    centers: list[tuple[float, float]] = []
    while len(centers) < config.obstacle_count:
        ox = rng.uniform(mu, width - mu)
        oy = rng.uniform(mu, height - mu)
        if all(math.hypot(ox - cx, oy - cy) >= 3.0 * mu for cx, cy in centers):
            centers.append((ox, oy))
        else:
            rejections += 1
            if rejections >= GENERATION_BUDGET:
                raise GenerationError(
                    f"obstacle placement failed after {GENERATION_BUDGET} rejections"
                )
    o = np.asarray(centers, dtype=np.float64).reshape(-1, 2)

    while True:
        lam = rng.uniform(*config.dlo_length_range)
        chain = _sample_chain(rng, lam, config, centers)
        if chain is not None:
            state = EnvState(chain, o)
            if not goal_reached(state, config):
                return state
        rejections += 1
        if rejections >= GENERATION_BUDGET:
            raise GenerationError(
                f"chain placement failed after {GENERATION_BUDGET} rejections"
            )


def _sample_chain(
    rng: np.random.Generator,
    lam: float,
    config: TaskConfig,
    centers: Sequence[tuple[float, float]],
) -> np.ndarray | None:
    """One bounded-random-walk attempt; None when it leaves the workspace or
    penetrates an obstacle."""
    m = config.keypoint_count
    link_len = lam / (m - 1)
    mu = config.obstacle_radius
    width = config.workspace_width
    height = config.workspace_height

    x = rng.uniform(0.0, width)
    y = rng.uniform(0.0, height)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    turns = rng.uniform(-config.joint_limit, config.joint_limit, size=m - 2)

    xs = [x]
    ys = [y]
    for i in range(m - 1):
        if i > 0:
            heading += turns[i - 1]
        nx = xs[-1] + link_len * math.cos(heading)
        ny = ys[-1] + link_len * math.sin(heading)
        if not (0.0 <= nx <= width and 0.0 <= ny <= height):
            return None
        xs.append(nx)
        ys.append(ny)

    mu2 = mu * mu
    for ox, oy in centers:
        for i in range(m):
            if (xs[i] - ox) ** 2 + (ys[i] - oy) ** 2 < mu2:
                return None
        for i in range(m - 1):
            mx = 0.5 * (xs[i] + xs[i + 1])
            my = 0.5 * (ys[i] + ys[i + 1])
            if (mx - ox) ** 2 + (my - oy) ** 2 < mu2:
                return None
    return np.column_stack([xs, ys])
