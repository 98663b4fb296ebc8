"""Timed elastic band: a trajectory as configs plus time diffs, optimized
by damped Gauss-Newton over stacked soft-constraint residuals.

A band holds n+1 configs (x, y, heading) and n positive time diffs.  The
objective is a weighted sum of per-family terms (travel time, obstacle
clearance, kinodynamic feasibility, human safety/visibility field costs,
agent separation).  Inequality terms use one-sided quadratic hinges
``max(0, margin)**2``; distance hinges carry a small epsilon so the
gradient does not die exactly at the boundary.  First and last configs
are pinned and never move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import BandParams, HumanLayerParams, KinodynamicLimits, ObjectiveWeights
from .costmap import HumanLayerSource
from .world import Pose2D, wrap_angle


class OptimizationDiverged(RuntimeError):
    """Objective went non-finite; the band cannot be trusted."""


def _wrap_arr(a: np.ndarray) -> np.ndarray:
    out = np.arctan2(np.sin(a), np.cos(a))
    return np.where(out <= -math.pi, out + 2.0 * math.pi, out)


@dataclass(frozen=True)
class TimedBand:
    """Sequence of timed configs; poses is (n+1, 3), dts is (n,)."""

    poses: np.ndarray
    dts: np.ndarray

    def __post_init__(self) -> None:
        poses = np.asarray(self.poses, dtype=float).reshape(-1, 3).copy()
        dts = np.asarray(self.dts, dtype=float).reshape(-1).copy()
        if len(poses) == 0:
            raise ValueError("band needs at least one config")
        if len(dts) != len(poses) - 1:
            raise ValueError("time diff count must be config count - 1")
        if len(dts) and dts.min() <= 0:
            raise ValueError("time diffs must be positive")
        poses.setflags(write=False)
        dts.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "dts", dts)

    @classmethod
    def _raw(cls, poses: np.ndarray, dts: np.ndarray) -> "TimedBand":
        """Wrap freshly built arrays without validation or copying.

        Optimizer-internal: callers guarantee shapes and positive dts.
        """
        band = object.__new__(cls)
        poses.setflags(write=False)
        dts.setflags(write=False)
        object.__setattr__(band, "poses", poses)
        object.__setattr__(band, "dts", dts)
        return band

    @property
    def n_configs(self) -> int:
        return len(self.poses)

    @property
    def at_goal(self) -> bool:
        return len(self.dts) == 0

    @property
    def total_time(self) -> float:
        return float(self.dts.sum())

    @property
    def times(self) -> np.ndarray:
        """Cumulative time at each config, starting at 0."""
        return np.concatenate(([0.0], np.cumsum(self.dts)))

    @property
    def start(self) -> Pose2D:
        return Pose2D(*self.poses[0])

    @property
    def goal(self) -> Pose2D:
        return Pose2D(*self.poses[-1])

    def path_length(self) -> float:
        d = np.diff(self.poses[:, :2], axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


@dataclass(frozen=True)
class OtherAgent:
    """Another agent's band, as seen by a separation constraint."""

    band: TimedBand
    radius: float = 0.3


@dataclass(frozen=True)
class BandContext:
    """Everything the objective needs besides the band itself.

    ``obstacles`` is an (K, 3) array of x, y, radius point obstacles.
    ``layer_sources`` are the humans whose safety/visibility Gaussians
    apply to this band (normally taken from the costmap stack).
    """

    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    limits: KinodynamicLimits = field(default_factory=KinodynamicLimits)
    params: BandParams = field(default_factory=BandParams)
    self_radius: float = 0.3
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    others: tuple[OtherAgent, ...] = ()
    layer_params: HumanLayerParams = field(default_factory=HumanLayerParams)
    layer_sources: tuple[HumanLayerSource, ...] = ()
    v_init: float = 0.0
    omega_init: float = 0.0
    nonholo_scale: float = 1.0
    partner_fields: bool = False     # safety/visibility vs partner bands too
    terminal_rest: bool = True       # band must come to rest at its far pin

    def __post_init__(self) -> None:
        obs = np.asarray(self.obstacles, dtype=float).reshape(-1, 3).copy()
        obs.setflags(write=False)
        object.__setattr__(self, "obstacles", obs)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Unweighted per-family values plus the weighted total."""

    time: float
    obstacle: float
    kinodynamic: float
    human_safety: float
    human_visibility: float
    agent_separation: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "time": self.time, "obstacle": self.obstacle,
            "kinodynamic": self.kinodynamic, "human_safety": self.human_safety,
            "human_visibility": self.human_visibility,
            "agent_separation": self.agent_separation, "total": self.total,
        }


_FAMILIES = ("time", "obstacle", "kinodynamic", "human_safety",
             "human_visibility", "agent_separation")


class _Rows:
    """Accumulates residual values and sparse Jacobian writes."""

    def __init__(self) -> None:
        self.vals: list[np.ndarray] = []
        self.scatters: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self.blocks: list[tuple[int, str, int, int, float]] = []
        self.n = 0

    def add(self, band_i: int, family: str, weight: float,
            values: np.ndarray, scatters) -> None:
        if len(values) == 0:
            return
        base = self.n
        self.vals.append(np.asarray(values, dtype=float))
        for rows, cols, vals in scatters:
            rows = np.asarray(rows, dtype=np.int64) + base
            self.scatters.append((rows, np.asarray(cols, dtype=np.int64),
                                  np.asarray(vals, dtype=float)))
        self.n += len(values)
        self.blocks.append((band_i, family, base, self.n, weight))


class _Layout:
    """Free-variable column layout for one band inside the joint vector."""

    def __init__(self, band: TimedBand, base: int, frozen: bool) -> None:
        n = len(band.dts)
        self.n = n
        self.frozen = frozen
        cols = np.full(band.n_configs, -1, dtype=np.int64)
        if not frozen and n >= 2:
            cols[1:n] = base + 3 * np.arange(n - 1)
        self.cx = cols
        self.cy = np.where(cols >= 0, cols + 1, -1)
        self.cb = np.where(cols >= 0, cols + 2, -1)
        if frozen:
            self.ct = np.full(n, -1, dtype=np.int64)
            self.dim = 0
        else:
            self.ct = base + 3 * max(n - 1, 0) + np.arange(n, dtype=np.int64)
            self.dim = 3 * max(n - 1, 0) + n


def _segment_quantities(P: np.ndarray, T: np.ndarray):
    """Per-segment signed speed, yaw rate, lateral offset, and partials."""
    dx = P[1:, 0] - P[:-1, 0]
    dy = P[1:, 1] - P[:-1, 1]
    db = _wrap_arr(P[1:, 2] - P[:-1, 2])
    theta = P[:-1, 2] + 0.5 * db
    c, s = np.cos(theta), np.sin(theta)
    lon = c * dx + s * dy
    lat = -s * dx + c * dy
    v = lon / T
    w = db / T
    return dx, dy, db, c, s, lon, lat, v, w


def _assemble(bands: list[TimedBand], ctxs: list[BandContext],
              frozen: list[bool], need_jac: bool):
    """Build residual rows (and Jacobian writes) for all free bands."""
    layouts: list[_Layout] = []
    dim = 0
    for band, frz in zip(bands, frozen):
        lay = _Layout(band, dim, frz)
        layouts.append(lay)
        dim += lay.dim
    rows = _Rows()

    for bi, (band, ctx, lay) in enumerate(zip(bands, ctxs, layouts)):
        if lay.frozen:
            continue
        P, T = band.poses, band.dts
        n = lay.n
        w = ctx.weights
        lim = ctx.limits
        prm = ctx.params
        eps = prm.epsilon

        # --- travel time: f = sum(dt) via residual sqrt(dt)
        if n:
            vals = np.sqrt(T)
            scat = []
            if need_jac:
                r = np.arange(n)
                scat = [(r, lay.ct, 0.5 / vals)]
            rows.add(bi, "time", w.time, vals, scat)

        # --- obstacle clearance: nearest point within the binding radius
        obs = ctx.obstacles
        if len(obs):
            diff = P[:, None, :2] - obs[None, :, :2]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            surf = dist - obs[None, :, 2]
            nearest = np.argmin(surf, axis=1)
            idx = np.arange(band.n_configs)
            best_surf = surf[idx, nearest]
            bind = max(1.2 * prm.d_safe, prm.d_safe + 2.0 * eps)
            viol = prm.d_safe + eps - best_surf
            active = (best_surf <= bind) & (viol > 0.0)
            if active.any():
                ai = idx[active]
                d = np.maximum(dist[ai, nearest[active]], 1e-9)
                vals = viol[active]
                scat = []
                if need_jac:
                    ux = diff[ai, nearest[active], 0] / d
                    uy = diff[ai, nearest[active], 1] / d
                    r = np.arange(len(ai))
                    scat = [(r, lay.cx[ai], -ux), (r, lay.cy[ai], -uy)]
                rows.add(bi, "obstacle", w.obstacle, vals, scat)

        # --- kinodynamics over finite differences
        if n:
            dx, dy, db, c, s, lon, lat, v, wv = _segment_quantities(P, T)
            seg = np.arange(n)
            i0, i1 = seg, seg + 1

            if need_jac:
                # partials of v per segment, 7 slots each
                dv = {
                    "xi": -c / T, "yi": -s / T, "bi": 0.5 * lat / T,
                    "xj": c / T, "yj": s / T, "bj": 0.5 * lat / T, "t": -v / T,
                }
                dlat = {
                    "xi": s, "yi": -c, "bi": -0.5 * lon,
                    "xj": -s, "yj": c, "bj": -0.5 * lon, "t": np.zeros(n),
                }
                dw = {
                    "xi": np.zeros(n), "yi": np.zeros(n), "bi": -1.0 / T,
                    "xj": np.zeros(n), "yj": np.zeros(n), "bj": 1.0 / T,
                    "t": -wv / T,
                }
            else:
                dv = dlat = dw = None

            def seg_cols(k, segs):
                if k == "xi":
                    return lay.cx[i0[segs]]
                if k == "yi":
                    return lay.cy[i0[segs]]
                if k == "bi":
                    return lay.cb[i0[segs]]
                if k == "xj":
                    return lay.cx[i1[segs]]
                if k == "yj":
                    return lay.cy[i1[segs]]
                if k == "bj":
                    return lay.cb[i1[segs]]
                return lay.ct[segs]

            def scatter_segments(r, segs, part, sign):
                out = []
                for k in ("xi", "yi", "bi", "xj", "yj", "bj", "t"):
                    out.append((r, seg_cols(k, segs), sign * part[k][segs]))
                return out

            kin_vals: list[np.ndarray] = []
            kin_scat: list = []
            cursor = 0

            def add_kin(values, scats):
                nonlocal cursor
                kin_vals.append(values)
                kin_scat.extend(scats)
                cursor += len(values)

            up = v > lim.v_max
            if up.any():
                r = np.arange(up.sum()) + cursor
                add_kin(v[up] - lim.v_max,
                        scatter_segments(r, seg[up], dv, 1.0) if need_jac else [])
            lo = v < lim.v_min
            if lo.any():
                r = np.arange(lo.sum()) + cursor
                add_kin(lim.v_min - v[lo],
                        scatter_segments(r, seg[lo], dv, -1.0) if need_jac else [])
            wa = np.abs(wv) > lim.omega_max
            if wa.any():
                r = np.arange(wa.sum()) + cursor
                sg = np.sign(wv[wa])
                scats = []
                if need_jac:
                    for (rr, cc, vvv) in scatter_segments(r, seg[wa], dw, 1.0):
                        scats.append((rr, cc, vvv * sg))
                add_kin(np.abs(wv[wa]) - lim.omega_max, scats)
            # nonholonomic lateral drift, always active
            nh = math.sqrt(max(ctx.nonholo_scale, 0.0))
            if nh > 0.0:
                r = np.arange(n) + cursor
                scats = []
                if need_jac:
                    for (rr, cc, vvv) in scatter_segments(r, seg, dlat, 1.0):
                        scats.append((rr, cc, nh * vvv))
                add_kin(nh * lat, scats)

            # accelerations: interior junctions plus start/goal anchors
            def accel_rows(q, dq, q_init, a_lim):
                """Hinge rows for d(q)/dt with boundary anchors at q_init and 0."""
                n_in = n - 1 if n >= 2 else 0
                parts = []
                if n_in:
                    S_all = T[:-1] + T[1:]
                    parts.append(2.0 * (q[1:] - q[:-1]) / S_all)
                parts.append(np.array([(q[0] - q_init) / T[0]]))
                if ctx.terminal_rest:
                    parts.append(np.array([(0.0 - q[-1]) / T[-1]]))
                a_arr = np.concatenate(parts)
                act = np.abs(a_arr) > a_lim
                if not act.any():
                    return
                vals = np.abs(a_arr[act]) - a_lim
                scats = []
                if need_jac:
                    pos = np.cumsum(act) - 1       # row slot of each candidate
                    sgn_all = np.where(a_arr >= 0.0, 1.0, -1.0)
                    jj = np.nonzero(act[:n_in])[0]
                    if len(jj):
                        r = cursor + pos[jj]
                        S = S_all[jj]
                        sgn = sgn_all[jj]
                        for k in ("xi", "yi", "bi", "xj", "yj", "bj", "t"):
                            scats.append((r, seg_cols(k, jj),
                                          sgn * (-2.0 / S) * dq[k][jj]))
                            scats.append((r, seg_cols(k, jj + 1),
                                          sgn * (2.0 / S) * dq[k][jj + 1]))
                        extra = sgn * (-a_arr[jj] / S)
                        scats.append((r, lay.ct[jj], extra))
                        scats.append((r, lay.ct[jj + 1], extra))
                    for off, sidx, sb in ((n_in, 0, 1.0), (n_in + 1, n - 1, -1.0)):
                        if off >= len(a_arr) or not act[off]:
                            continue
                        r = np.full(1, cursor + pos[off])
                        sg = np.arange(1) + sidx
                        sgn = sgn_all[off]
                        for k in ("xi", "yi", "bi", "xj", "yj", "bj", "t"):
                            scats.append((r, seg_cols(k, sg),
                                          np.array([sgn * sb * dq[k][sidx] / T[sidx]])))
                        scats.append((r, lay.ct[sg],
                                      np.array([sgn * (-a_arr[off] / T[sidx])])))
                add_kin(vals, scats)

            accel_rows(v, dv, ctx.v_init, lim.acc_max)
            accel_rows(wv, dw, ctx.omega_init, lim.ang_acc_max)

            if kin_vals:
                rows.add(bi, "kinodynamic", w.kinodynamic,
                         np.concatenate(kin_vals), kin_scat)

        # --- human layer fields, sampled analytically at configs
        if ctx.layer_sources:
            lp = ctx.layer_params
            for src in ctx.layer_sources:
                hx, hy, hh = src.pose.x, src.pose.y, src.pose.heading
                ddx = P[:, 0] - hx
                ddy = P[:, 1] - hy
                d2 = ddx * ddx + ddy * ddy
                if src.safety and w.human_safety > 0.0:
                    m = d2 <= lp.safety_cutoff ** 2
                    if m.any():
                        # normalized field; strength comes from the weight
                        vals = np.exp(-d2[m] / (4.0 * lp.safety_sigma ** 2))
                        scat = []
                        if need_jac:
                            r = np.arange(m.sum())
                            k = 1.0 / (2.0 * lp.safety_sigma ** 2)
                            scat = [(r, lay.cx[m], -vals * ddx[m] * k),
                                    (r, lay.cy[m], -vals * ddy[m] * k)]
                        rows.add(bi, "human_safety", w.human_safety, vals, scat)
                if src.visibility and w.human_visibility > 0.0:
                    bearing = _wrap_arr(np.arctan2(ddy, ddx) - hh)
                    m = (d2 <= lp.visibility_cutoff ** 2) & (d2 > 0.0) \
                        & (np.abs(bearing) > math.pi / 2.0)
                    if m.any():
                        vals = np.exp(-d2[m] / (4.0 * lp.visibility_sigma ** 2))
                        scat = []
                        if need_jac:
                            r = np.arange(m.sum())
                            k = 1.0 / (2.0 * lp.visibility_sigma ** 2)
                            scat = [(r, lay.cx[m], -vals * ddx[m] * k),
                                    (r, lay.cy[m], -vals * ddy[m] * k)]
                        rows.add(bi, "human_visibility", w.human_visibility, vals, scat)

        # --- separation from other agents' bands, time-aligned
        partners: list[tuple[TimedBand, float, _Layout | None]] = []
        for oj, (ob, octx, olay) in enumerate(zip(bands, ctxs, layouts)):
            if oj != bi and not olay.frozen:
                partners.append((ob, octx.self_radius, olay))
            elif oj != bi:
                partners.append((ob, octx.self_radius, None))
        for oa in ctx.others:
            partners.append((oa.band, oa.radius, None))
        if partners:
            t_self = band.times
            for ob, oradius, olay in partners:
                if w.agent_separation > 0.0:
                    vals, scat = _separation_rows(
                        band, lay, t_self, ob, olay, ctx.self_radius, oradius,
                        prm.d_agent, eps, need_jac)
                    if len(vals):
                        rows.add(bi, "agent_separation", w.agent_separation,
                                 vals, scat)
                if ctx.partner_fields:
                    yal, hal, val = _align_partner(ob, t_self)
                    for fam, wf in (("human_safety", w.human_safety),
                                    ("human_visibility", w.human_visibility)):
                        if wf <= 0.0:
                            continue
                        vals, scat = _partner_field_rows(
                            P, lay, yal, hal, val, ctx.layer_params, fam,
                            need_jac)
                        if len(vals):
                            rows.add(bi, fam, wf, vals, scat)

    if rows.n == 0:
        return rows, np.zeros(0), np.zeros((0, dim)), dim
    r = np.concatenate(rows.vals)
    if not need_jac:
        return rows, r, np.zeros((0, dim)), dim
    J = np.zeros((rows.n, dim))
    if rows.scatters:
        rr = np.concatenate([s[0] for s in rows.scatters])
        cc = np.concatenate([s[1] for s in rows.scatters])
        vv = np.concatenate([s[2] for s in rows.scatters])
        m = cc >= 0                    # pinned/frozen slots have no column
        np.add.at(J, (rr[m], cc[m]), vv[m])
    return rows, r, J, dim


def _align_partner(other: TimedBand, t_self: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partner positions and headings at the given trajectory times.

    The validity mask is False past the partner's horizon; a partner
    already at its goal is treated as parked there for all time.
    """
    Q = other.poses
    if other.at_goal:
        y = np.broadcast_to(Q[0, :2], (len(t_self), 2))
        hd = np.full(len(t_self), Q[0, 2])
        return y, hd, np.ones(len(t_self), dtype=bool)
    u = other.times
    j1 = np.clip(np.searchsorted(u, t_self, side="right"), 1, len(u) - 1)
    j0 = j1 - 1
    seg = Q[j1, :2] - Q[j0, :2]
    frac = np.clip((t_self - u[j0]) / (u[j1] - u[j0]), 0.0, 1.0)
    y = Q[j0, :2] + frac[:, None] * seg
    hd = np.arctan2(seg[:, 1], seg[:, 0])
    return y, hd, t_self <= u[-1] + 1e-9


def _partner_field_rows(P: np.ndarray, lay: _Layout, y: np.ndarray,
                        hd: np.ndarray, valid: np.ndarray, lp,
                        family: str, need_jac: bool):
    """Safety or visibility Gaussian rows against time-aligned partner
    poses.  Jacobians cover the config positions only; coupling through
    the time variables is left to the value-checked damping loop."""
    ddx = P[:, 0] - y[:, 0]
    ddy = P[:, 1] - y[:, 1]
    d2 = ddx * ddx + ddy * ddy
    if family == "human_safety":
        m = valid & (d2 <= lp.safety_cutoff ** 2)
        sigma = lp.safety_sigma
    else:
        bearing = _wrap_arr(np.arctan2(ddy, ddx) - hd)
        m = valid & (d2 <= lp.visibility_cutoff ** 2) & (d2 > 0.0) \
            & (np.abs(bearing) > math.pi / 2.0)
        sigma = lp.visibility_sigma
    if not m.any():
        return np.zeros(0), []
    vals = np.exp(-d2[m] / (4.0 * sigma ** 2))
    if not need_jac:
        return vals, []
    r = np.arange(int(m.sum()))
    k = 1.0 / (2.0 * sigma ** 2)
    return vals, [(r, lay.cx[m], -vals * ddx[m] * k),
                  (r, lay.cy[m], -vals * ddy[m] * k)]


def _separation_rows(band: TimedBand, lay: _Layout, t_self: np.ndarray,
                     other: TimedBand, olay: _Layout | None,
                     r_self: float, r_other: float, d_agent: float,
                     eps: float, need_jac: bool):
    """Hinge rows keeping this band's configs clear of the other agent,
    sampled at matching trajectory times (linear interpolation, clamped)."""
    P = band.poses
    Q = other.poses
    req = r_self + r_other + d_agent + eps
    if other.at_goal:
        y = np.broadcast_to(Q[0, :2], (len(P), 2))
        frac = np.zeros(len(P))
        j0 = np.zeros(len(P), dtype=np.int64)
        j1 = j0
        clamped = np.ones(len(P), dtype=bool)
        seg_dt = np.ones(len(P))
    else:
        u = other.times
        j1 = np.clip(np.searchsorted(u, t_self, side="right"), 1, len(u) - 1)
        j0 = j1 - 1
        seg_dt = u[j1] - u[j0]
        raw = (t_self - u[j0]) / seg_dt
        frac = np.clip(raw, 0.0, 1.0)
        clamped = (raw <= 0.0) | (raw >= 1.0)
        y = Q[j0, :2] + frac[:, None] * (Q[j1, :2] - Q[j0, :2])
    dvec = P[:, :2] - y
    d = np.hypot(dvec[:, 0], dvec[:, 1])
    viol = req - d
    if not other.at_goal:
        # past the other agent's horizon its position is unknown, not parked
        viol = np.where(t_self > other.times[-1] + 1e-9, 0.0, viol)
    active = viol > 0.0
    if not active.any():
        return np.zeros(0), []
    ai = np.nonzero(active)[0]
    dd = np.maximum(d[ai], 1e-9)
    ux = dvec[ai, 0] / dd
    uy = dvec[ai, 1] / dd
    vals = viol[ai]
    if not need_jac:
        return vals, []
    r = np.arange(len(ai))
    scat = [(r, lay.cx[ai], -ux), (r, lay.cy[ai], -uy)]
    # time partials: moving self time shifts the sample point on the other band
    if not other.at_goal:
        vel = (Q[j1, :2] - Q[j0, :2]) / seg_dt[:, None]
        kappa = ux * vel[ai, 0] + uy * vel[ai, 1]
        kappa = np.where(clamped[ai], 0.0, kappa)
        live = [k for k, i in enumerate(ai) if i > 0 and kappa[k] != 0.0]
        if live:
            rr = np.concatenate([np.full(ai[k], k) for k in live])
            cc = np.concatenate([lay.ct[:ai[k]] for k in live])
            vv = np.concatenate([np.full(ai[k], kappa[k]) for k in live])
            scat.append((rr, cc, vv))
        if olay is not None and not olay.frozen:
            # partials into the other band's variables
            fa = frac[ai]
            oj0, oj1 = j0[ai], j1[ai]
            scat.append((np.tile(r, 4),
                         np.concatenate([olay.cx[oj0], olay.cy[oj0],
                                         olay.cx[oj1], olay.cy[oj1]]),
                         np.concatenate([(1.0 - fa) * ux, (1.0 - fa) * uy,
                                         fa * ux, fa * uy])))
            # d r / d T_other[m]: -kappa for m < j0, -kappa*frac for m == j0
            ot = [k for k in range(len(ai)) if kappa[k] != 0.0]
            if ot:
                rr = np.concatenate(
                    [np.full(oj0[k] + 1, k) for k in ot])
                cc = np.concatenate([olay.ct[:oj0[k] + 1] for k in ot])
                vv = np.concatenate(
                    [np.full(oj0[k] + 1, -kappa[k]) *
                     np.where(np.arange(oj0[k] + 1) == oj0[k], fa[k], 1.0)
                     for k in ot])
                scat.append((rr, cc, vv))
    return vals, scat


def _breakdowns(rows: _Rows, r: np.ndarray, n_bands: int,
                weights: list[ObjectiveWeights]) -> list[ObjectiveBreakdown]:
    per = [dict.fromkeys(_FAMILIES, 0.0) for _ in range(n_bands)]
    for band_i, family, lo, hi, _w in rows.blocks:
        per[band_i][family] += float(np.sum(r[lo:hi] ** 2))
    out = []
    for bi in range(n_bands):
        w = weights[bi]
        d = per[bi]
        total = (w.time * d["time"] + w.obstacle * d["obstacle"]
                 + w.kinodynamic * d["kinodynamic"]
                 + w.human_safety * d["human_safety"]
                 + w.human_visibility * d["human_visibility"]
                 + w.agent_separation * d["agent_separation"])
        out.append(ObjectiveBreakdown(total=total, **d))
    return out


def evaluate_objective(band: TimedBand, ctx: BandContext) -> ObjectiveBreakdown:
    """Per-family objective values for one band (others held fixed)."""
    rows, r, _J, _dim = _assemble([band], [ctx], [False], need_jac=False)
    bd = _breakdowns(rows, r, 1, [ctx.weights])[0]
    if not math.isfinite(bd.total):
        raise OptimizationDiverged("objective is not finite")
    return bd


def objective_gradient(band: TimedBand, ctx: BandContext) -> np.ndarray:
    """Analytic gradient of the weighted total w.r.t. the free variables.

    Variable order: interior configs flattened (x, y, heading), then the
    time diffs.  Matches the internal optimizer layout.
    """
    rows, r, J, dim = _assemble([band], [ctx], [False], need_jac=True)
    if rows.n == 0:
        return np.zeros(dim)
    sw = np.empty(rows.n)
    for _bi, _fam, lo, hi, w in rows.blocks:
        sw[lo:hi] = w
    return 2.0 * J.T @ (sw * r)


def _total(rows: _Rows, r: np.ndarray) -> float:
    total = 0.0
    for _bi, _fam, lo, hi, w in rows.blocks:
        total += w * float(np.sum(r[lo:hi] ** 2))
    return total


def _apply_step(bands: list[TimedBand], frozen: list[bool],
                delta: np.ndarray, dt_floor: float) -> list[TimedBand]:
    out = []
    cursor = 0
    for band, frz in zip(bands, frozen):
        if frz:
            out.append(band)
            continue
        n = len(band.dts)
        P = band.poses.copy()
        T = band.dts.copy()
        if n >= 2:
            k = 3 * (n - 1)
            dz = delta[cursor:cursor + k].reshape(-1, 3)
            P[1:n, 0] += dz[:, 0]
            P[1:n, 1] += dz[:, 1]
            P[1:n, 2] = _wrap_arr(P[1:n, 2] + dz[:, 2])
            cursor += k
        if n:
            T = np.maximum(T + delta[cursor:cursor + n], dt_floor)
            cursor += n
        out.append(TimedBand._raw(P, T))
    return out


def optimize_joint(bands: list[TimedBand], ctxs: list[BandContext],
                   iterations: int) -> list[TimedBand]:
    """Damped Gauss-Newton over one or more coupled bands.

    Steps that do not strictly decrease the weighted total are rejected
    (with increased damping), so the returned objective never exceeds
    the input objective.  Raises OptimizationDiverged if the objective
    is not finite.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not bands:
        return []
    frozen = [b.at_goal for b in bands]  # nothing to optimize on an at-goal band
    if all(frozen):
        return list(bands)
    dt_floor = max(c.params.dt_floor for c in ctxs)
    lam = ctxs[0].params.lm_damping

    def value(state: list[TimedBand]) -> float:
        rows, r, _J, _ = _assemble(state, ctxs, frozen, need_jac=False)
        return _total(rows, r)

    f = value(bands)
    if not math.isfinite(f):
        raise OptimizationDiverged("objective is not finite")
    state = list(bands)
    for _ in range(iterations):
        rows, r, J, dim = _assemble(state, ctxs, frozen, need_jac=True)
        if rows.n == 0 or dim == 0:
            break
        sw = np.empty(rows.n)
        for _bi, _fam, lo, hi, wgt in rows.blocks:
            sw[lo:hi] = wgt
        Js = J * sw[:, None]
        g = Js.T @ r
        if np.abs(g).max() < 1e-10:
            break
        H = Js.T @ J
        diag = np.diag(H).copy()
        diag[diag < 1e-8] = 1e-8
        accepted = False
        didx = np.arange(dim)
        while lam <= 1e8:  # hinge turn-on can demand heavy damping after a split
            try:
                Hd = H.copy()
                Hd[didx, didx] += lam * diag
                delta = np.linalg.solve(Hd, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = _apply_step(state, frozen, delta, dt_floor)
            f_new = value(cand)
            if math.isfinite(f_new) and f_new < f:
                drop = f - f_new
                state, f = cand, f_new
                lam = max(lam / 3.0, 1e-9)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if drop < 1e-6 * max(1.0, f):  # converged, stop polishing
            break
    return state


def optimize(band: TimedBand, ctx: BandContext, iterations: int = 20) -> TimedBand:
    """Optimize a single band; other agents in ``ctx.others`` stay fixed."""
    return optimize_joint([band], [ctx], iterations)[0]


def initialize_band(path: list[Pose2D] | tuple[Pose2D, ...],
                    limits: KinodynamicLimits,
                    params: BandParams) -> TimedBand:
    """Seed a band from a path: resample at most ``spacing`` apart, time
    diffs assume a fraction of v_max over each segment."""
    pts = [(p.x, p.y, p.heading) for p in path]
    if not pts:
        raise ValueError("empty path")
    # drop consecutive duplicates
    dedup = [pts[0]]
    for p in pts[1:]:
        if math.hypot(p[0] - dedup[-1][0], p[1] - dedup[-1][1]) > 1e-9:
            dedup.append(p)
    if len(dedup) == 1:
        return TimedBand(np.array([dedup[0]]), np.zeros(0))
    configs: list[tuple[float, float, float]] = []
    for a, b in zip(dedup[:-1], dedup[1:]):
        seg = math.hypot(b[0] - a[0], b[1] - a[1])
        tangent = math.atan2(b[1] - a[1], b[0] - a[0])
        pieces = max(1, int(math.ceil(seg / params.spacing - 1e-9)))
        for k in range(pieces):
            f = k / pieces
            heading = a[2] if k == 0 else tangent
            configs.append((a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), heading))
    configs.append(dedup[-1])
    if len(configs) > params.max_configs:
        keep = np.unique(np.round(np.linspace(0, len(configs) - 1,
                                              params.max_configs)).astype(int))
        configs = [configs[i] for i in keep]
    P = np.array(configs, dtype=float)
    P[0] = dedup[0]
    P[-1] = dedup[-1]
    d = np.hypot(np.diff(P[:, 0]), np.diff(P[:, 1]))
    speed = params.init_speed_fraction * limits.v_max
    T = np.maximum(d / speed, params.dt_floor)
    return TimedBand(P, T)


def band_maintenance(band: TimedBand, params: BandParams) -> TimedBand:
    """One resize pass over the band's configs.

    Drops interior configs that have geometrically collapsed onto their
    predecessor or whose time diffs are under-short, then splits
    over-long time diffs at segment midpoints.  Total time is conserved
    exactly; without the geometric rule, configs bunched up by a
    transient squeeze linger and the head of the band can fold.
    """
    if band.at_goal:
        return band
    hi = params.dt_ref * (1.0 + params.dt_hysteresis)
    lo = params.dt_ref * (1.0 - params.dt_hysteresis)
    P = [tuple(p) for p in band.poses]
    T = list(band.dts)

    # merge pass: walk interior configs, folding each dropped one's time
    # into the diff entering the next survivor
    P2: list[tuple] = [P[0]]
    T2: list[float] = []
    pending = T[0]
    for i in range(1, len(P) - 1):
        a = P2[-1]
        d = math.hypot(P[i][0] - a[0], P[i][1] - a[1])
        both_tiny = pending + T[i] < lo
        one_short = (pending < lo or T[i] < lo) and pending + T[i] <= hi
        if d < params.min_seg or both_tiny or one_short:
            pending += T[i]
        else:
            P2.append(P[i])
            T2.append(pending)
            pending = T[i]
    P2.append(P[-1])
    T2.append(pending)

    # split pass
    out_p: list[tuple] = [P2[0]]
    out_t: list[float] = []
    n_now = len(P2)
    for i, dt in enumerate(T2):
        a, b = P2[i], P2[i + 1]
        if dt > hi and n_now < params.max_configs:
            db = wrap_angle(b[2] - a[2])
            mid = (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), wrap_angle(a[2] + 0.5 * db))
            out_p.append(mid)
            out_p.append(b)
            half = 0.5 * dt
            out_t.extend([half, dt - half])
            n_now += 1
        else:
            out_p.append(b)
            out_t.append(dt)
    return TimedBand(np.array(out_p), np.maximum(np.array(out_t), params.dt_floor))


def extract_command(band: TimedBand, limits: KinodynamicLimits) -> tuple[float, float]:
    """Velocity command from the first band segment, clamped to limits."""
    if band.at_goal:
        return 0.0, 0.0
    p0, p1 = band.poses[0], band.poses[1]
    dt = float(band.dts[0])
    db = wrap_angle(float(p1[2] - p0[2]))
    theta = p0[2] + 0.5 * db
    lon = math.cos(theta) * (p1[0] - p0[0]) + math.sin(theta) * (p1[1] - p0[1])
    v = min(max(lon / dt, limits.v_min), limits.v_max)
    w = min(max(db / dt, -limits.omega_max), limits.omega_max)
    return v, w
