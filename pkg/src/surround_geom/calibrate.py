"""Surround-ring pose calibration by loop-constrained bundle adjustment.

Jointly optimizes the front-camera trajectory, all ring-relative poses, and
the landmark positions against reprojection error. Because every relative
pose appears in residuals shared with both of its ring neighbors, the 360
loop constrains each camera from two sides. Acceptance gates follow the
published filtering criteria: a minimum per-pair match count, an iteration
cap, and a bound on how far any relative translation may move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .correspond import CorrespondenceGraph
from .errors import DegenerateGeometryError, InsufficientDataError, InvalidArgumentError
from .geometry import Pose, compose, quat_multiply, quat_normalize
from .matching import PairMatcher, extract_correspondences
from .rig import Camera, RigCalibration


@dataclass(frozen=True)
class CalibrationConfig:
    max_iters: int = 200
    alpha_m: float = 0.3          # max allowed relative-translation drift
    huber_delta_px: float = 2.0
    beta: int = 200               # min verified matches per image pair
    ransac_threshold_px: float = 1.0
    ftol: float = 1e-12
    gtol: float = 1e-12
    xtol: float = 1e-12
    seed: int = 0


@dataclass
class CalibrationReport:
    converged: bool
    iterations: int
    initial_rms: float
    final_rms: float
    gates: dict[str, bool] = field(default_factory=dict)
    accepted: bool = False
    cost_history: list[float] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "initial_rms": self.initial_rms,
            "final_rms": self.final_rms,
            "gates": dict(self.gates),
            "accepted": self.accepted,
            "message": self.message,
        }


def _exp_so3(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        W = _skew(w)
        return np.eye(3) + W + 0.5 * W @ W
    axis = w / theta
    W = _skew(axis)
    return np.eye(3) + math.sin(theta) * W + (1 - math.cos(theta)) * (W @ W)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]],
                     [v[2], 0, -v[0]],
                     [-v[1], v[0], 0]], dtype=np.float64)


def _batch_skew(v: np.ndarray) -> np.ndarray:
    n = len(v)
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


class _BAProblem:
    """State + residual/Jacobian machinery for the joint optimization.

    Parameters: 6 per free front-frame pose (all but the first frame), 6 per
    non-front relative pose, 3 per landmark. The first front pose is frozen
    for the rigid gauge; the scale gauge is removed by rescaling the scene
    so the first non-front relative translation keeps its initial norm.
    """

    def __init__(self, graph: CorrespondenceGraph, init: RigCalibration):
        self.graph = graph
        self.camera_ids = list(init.camera_ids())
        self.frame_ids = sorted(init.front_trajectory)
        if graph.frame_ids and set(graph.frame_ids) - set(self.frame_ids):
            raise InvalidArgumentError("graph references frames missing from init")

        self.front_idx = self.camera_ids.index(init.front_camera_id)
        self.R_front = np.stack([init.front_trajectory[t].rotation_matrix()
                                 for t in self.frame_ids])
        self.t_front = np.stack([init.front_trajectory[t].translation
                                 for t in self.frame_ids])
        self.R_rel = np.stack([init.camera(c).pose_rel.rotation_matrix()
                               for c in self.camera_ids])
        self.t_rel = np.stack([init.camera(c).pose_rel.translation
                               for c in self.camera_ids])
        self.L = graph.landmarks.copy()

        self.K = []
        for c in self.camera_ids:
            m = init.camera(c).model
            self.K.append((m.fx, m.fy, m.cx, m.cy))

        # observation indexing: graph camera/frame ids -> local indices
        cam_map = np.array([self.camera_ids.index(c) for c in graph.camera_ids])
        frame_map = np.array([self.frame_ids.index(f) for f in graph.frame_ids])
        self.obs_cam = cam_map[graph.obs_camera]
        self.obs_frame = frame_map[graph.obs_frame]
        self.obs_lm = graph.obs_landmark.copy()
        self.obs_px = graph.obs_pixel.copy()

        # free pose blocks: frames[1:] then non-front cameras
        self.free_frames = list(range(1, len(self.frame_ids)))
        self.free_cams = [i for i in range(len(self.camera_ids)) if i != self.front_idx]
        self.n_pose_blocks = len(self.free_frames) + len(self.free_cams)
        self.frame_block = {f: i for i, f in enumerate(self.free_frames)}
        self.cam_block = {c: len(self.free_frames) + i for i, c in enumerate(self.free_cams)}

        # scale gauge: first free camera in ring order with non-zero baseline
        self.scale_cam = None
        for cid in init.ring_order:
            idx = self.camera_ids.index(cid)
            if idx != self.front_idx and np.linalg.norm(self.t_rel[idx]) > 1e-9:
                self.scale_cam = idx
                break
        self.scale_norm = (np.linalg.norm(self.t_rel[self.scale_cam])
                           if self.scale_cam is not None else None)

    # -- state snapshots ---------------------------------------------------
    def state(self):
        return (self.R_front.copy(), self.t_front.copy(),
                self.R_rel.copy(), self.t_rel.copy(), self.L.copy())

    def restore(self, s):
        self.R_front, self.t_front, self.R_rel, self.t_rel, self.L = \
            s[0].copy(), s[1].copy(), s[2].copy(), s[3].copy(), s[4].copy()

    # -- geometry ----------------------------------------------------------
    def project_all(self):
        """Per-observation camera-frame points and pixel predictions."""
        Rf = self.R_front[self.obs_frame]
        tf = self.t_front[self.obs_frame]
        Rr = self.R_rel[self.obs_cam]
        tr = self.t_rel[self.obs_cam]
        pts = self.L[self.obs_lm]
        a = np.einsum("nij,nj->ni", Rf.transpose(0, 2, 1), pts - tf)
        p_cam = np.einsum("nij,nj->ni", Rr.transpose(0, 2, 1), a - tr)
        fx, fy, cx, cy = (np.array([self.K[c][k] for c in self.obs_cam])
                          for k in range(4))
        z = p_cam[:, 2]
        safe_z = np.where(z > 1e-9, z, 1.0)
        u = fx * p_cam[:, 0] / safe_z + cx
        v = fy * p_cam[:, 1] / safe_z + cy
        return a, p_cam, np.stack([u, v], axis=1), (fx, fy)

    def residuals(self):
        _, p_cam, pred, _ = self.project_all()
        res = self.obs_px - pred
        behind = p_cam[:, 2] <= 1e-9
        return res, behind

    def cost(self, delta: float) -> float:
        """Robust (Huber) cost; +inf when any landmark falls behind a camera."""
        res, behind = self.residuals()
        if behind.any():
            return np.inf
        s = np.linalg.norm(res, axis=1)
        quad = s <= delta
        return float(np.sum(0.5 * s[quad] ** 2)
                     + np.sum(delta * (s[~quad] - 0.5 * delta)))

    def rms(self) -> float:
        res, _ = self.residuals()
        return float(np.sqrt(np.mean(res ** 2)))

    # -- linearization -----------------------------------------------------
    def linearize(self, delta: float):
        """Undamped normal-equation blocks at the current state."""
        a, p_cam, pred, (fx, fy) = self.project_all()
        res = (self.obs_px - pred)
        s = np.linalg.norm(res, axis=1)
        w = np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-12))
        sw = np.sqrt(w)

        z = p_cam[:, 2]
        n = len(res)
        Jpi = np.zeros((n, 2, 3))
        Jpi[:, 0, 0] = fx / z
        Jpi[:, 0, 2] = -fx * p_cam[:, 0] / z ** 2
        Jpi[:, 1, 1] = fy / z
        Jpi[:, 1, 2] = -fy * p_cam[:, 1] / z ** 2

        RrT = self.R_rel[self.obs_cam].transpose(0, 2, 1)
        RfT = self.R_front[self.obs_frame].transpose(0, 2, 1)
        RrTRfT = np.einsum("nij,njk->nik", RrT, RfT)

        # residual = observed - projected, so jacobians carry a minus sign
        J_lm = -np.einsum("nij,njk->nik", Jpi, RrTRfT)
        J_front = np.zeros((n, 2, 6))
        J_front[:, :, :3] = -np.einsum("nij,njk,nkl->nil", Jpi, RrT, _batch_skew(a))
        J_front[:, :, 3:] = np.einsum("nij,njk->nik", Jpi, RrTRfT)  # -(-R^T) = +
        J_rel = np.zeros((n, 2, 6))
        J_rel[:, :, :3] = -np.einsum("nij,njk->nik", Jpi, _batch_skew(p_cam))
        J_rel[:, :, 3:] = np.einsum("nij,njk->nik", Jpi, RrT)

        # weight everything
        res_w = res * sw[:, None]
        J_lm = J_lm * sw[:, None, None]
        J_front = J_front * sw[:, None, None]
        J_rel = J_rel * sw[:, None, None]

        nb = self.n_pose_blocks
        nl = len(self.L)
        A = np.zeros((nb, nb, 6, 6))
        Bm = np.zeros((nb * nl, 18))
        C = np.zeros((nl, 3, 3))
        g_pose = np.zeros((nb, 6))
        g_lm = np.zeros((nl, 3))

        has_front = np.array([self.frame_block.get(f, -1) for f in range(len(self.frame_ids))])
        has_cam = np.array([self.cam_block.get(c, -1) for c in range(len(self.camera_ids))])
        bf = has_front[self.obs_frame]
        bc = has_cam[self.obs_cam]

        def acc_AtA(bi, Ji, bj, Jj, symmetric):
            sel = (bi >= 0) & (bj >= 0)
            if not sel.any():
                return
            blocks = np.einsum("nai,naj->nij", Ji[sel], Jj[sel]).reshape(-1, 36)
            idx = bi[sel] * nb + bj[sel]
            flat = np.zeros((nb * nb, 36))
            for k in range(36):
                flat[:, k] = np.bincount(idx, weights=blocks[:, k], minlength=nb * nb)
            A[...] += flat.reshape(nb, nb, 6, 6)
            if not symmetric:
                A[...] += flat.reshape(nb, nb, 6, 6).transpose(1, 0, 3, 2)

        acc_AtA(bf, J_front, bf, J_front, True)
        acc_AtA(bc, J_rel, bc, J_rel, True)
        acc_AtA(bf, J_front, bc, J_rel, False)

        lm_blocks = np.einsum("nai,naj->nij", J_lm, J_lm).reshape(-1, 9)
        for k in range(9):
            C.reshape(-1, 9)[:, k] = np.bincount(self.obs_lm, weights=lm_blocks[:, k],
                                                 minlength=nl)
        for b_idx, J in ((bf, J_front), (bc, J_rel)):
            sel = b_idx >= 0
            if not sel.any():
                continue
            cross = np.einsum("nai,naj->nij", J[sel], J_lm[sel]).reshape(-1, 18)
            idx = b_idx[sel] * nl + self.obs_lm[sel]
            for k in range(18):
                Bm[:, k] += np.bincount(idx, weights=cross[:, k], minlength=nb * nl)
            gp = -np.einsum("nai,na->ni", J[sel], res_w[sel]).reshape(-1, 6)
            for k in range(6):
                g_pose[:, k] += np.bincount(b_idx[sel], weights=gp[:, k], minlength=nb)
        gl = -np.einsum("nai,na->ni", J_lm, res_w)
        for k in range(3):
            g_lm[:, k] = np.bincount(self.obs_lm, weights=gl[:, k], minlength=nl)

        Bf = Bm.reshape(nb, nl, 6, 3).transpose(1, 0, 2, 3).reshape(nl, nb * 6, 3)
        return A, Bf, C, g_pose, g_lm

    def solve_step(self, lin, mu: float):
        """Damped Schur-complement solve on a cached linearization."""
        A0, Bf, C0, g_pose, g_lm = lin  # Bf: (nl, nb*6, 3)
        nb, nl = A0.shape[0], C0.shape[0]
        A = A0 + mu * np.eye(6)[None, None] * np.eye(nb)[:, :, None, None]
        C = C0 + mu * np.eye(3)
        try:
            C_inv = np.linalg.inv(C)
        except np.linalg.LinAlgError as e:
            raise DegenerateGeometryError("landmark blocks are singular") from e
        # S = A - B C^-1 B^T ; rhs = g_pose - B C^-1 g_lm (BLAS-shaped)
        BCinv = Bf @ C_inv                                   # (nl, nb6, 3)
        M1 = BCinv.transpose(1, 0, 2).reshape(nb * 6, nl * 3)
        M2 = Bf.transpose(1, 0, 2).reshape(nb * 6, nl * 3)
        S_flat = A.transpose(0, 2, 1, 3).reshape(nb * 6, nb * 6) - M1 @ M2.T
        rhs_flat = g_pose.reshape(nb * 6) - M1 @ g_lm.reshape(nl * 3)
        try:
            dp = np.linalg.solve(S_flat, rhs_flat).reshape(nb, 6)
        except np.linalg.LinAlgError as e:
            raise DegenerateGeometryError("pose normal equations are singular") from e
        # back-substitute landmarks: C dl = g_lm - B^T dp
        rhs_lm = g_lm - np.einsum("lpj,p->lj", Bf, dp.reshape(nb * 6))
        dl = np.einsum("lij,lj->li", C_inv, rhs_lm)
        return dp, dl

    def apply_step(self, dp: np.ndarray, dl: np.ndarray):
        for f, b in self.frame_block.items():
            self.R_front[f] = self.R_front[f] @ _exp_so3(dp[b, :3])
            self.t_front[f] = self.t_front[f] + dp[b, 3:]
        for c, b in self.cam_block.items():
            self.R_rel[c] = self.R_rel[c] @ _exp_so3(dp[b, :3])
            self.t_rel[c] = self.t_rel[c] + dp[b, 3:]
        self.L = self.L + dl
        self.renormalize_scale()

    def retriangulate(self):
        """Re-solve every landmark by DLT under the current poses (keeps the
        old position on cheirality failure). Pulls landmarks whose initial
        triangulation under a miscalibrated rig was far off back into the
        basin of the current pose estimate."""
        R_abs = np.einsum("nij,njk->nik", self.R_front[self.obs_frame],
                          self.R_rel[self.obs_cam])
        t_abs = np.einsum("nij,nj->ni", self.R_front[self.obs_frame],
                          self.t_rel[self.obs_cam]) + self.t_front[self.obs_frame]
        fx, fy, cx, cy = (np.array([self.K[c][k] for c in self.obs_cam])
                          for k in range(4))
        # projection rows of K [R|t]^(world->cam) per observation
        RT = R_abs.transpose(0, 2, 1)
        tw = -np.einsum("nij,nj->ni", RT, t_abs)
        P0 = fx[:, None] * RT[:, 0, :] + cx[:, None] * RT[:, 2, :]
        P1 = fy[:, None] * RT[:, 1, :] + cy[:, None] * RT[:, 2, :]
        P2 = RT[:, 2, :]
        q0 = fx * tw[:, 0] + cx * tw[:, 2]
        q1 = fy * tw[:, 1] + cy * tw[:, 2]
        q2 = tw[:, 2]
        order = np.argsort(self.obs_lm, kind="stable")
        lm_sorted = self.obs_lm[order]
        starts = np.searchsorted(lm_sorted, np.arange(len(self.L)))
        ends = np.searchsorted(lm_sorted, np.arange(len(self.L)) + 1)
        for li in range(len(self.L)):
            sel = order[starts[li]:ends[li]]
            if len(sel) < 2:
                continue
            u = self.obs_px[sel, 0]
            v = self.obs_px[sel, 1]
            rows = np.concatenate([
                np.concatenate([u[:, None] * P2[sel] - P0[sel],
                                (u * q2 - q0)[sel.argsort().argsort() * 0 + np.arange(len(sel))][:, None]], axis=1),
                np.concatenate([v[:, None] * P2[sel] - P1[sel],
                                (v * q2 - q1)[np.arange(len(sel))][:, None]], axis=1),
            ])
            try:
                _, _, vt = np.linalg.svd(rows)
            except np.linalg.LinAlgError:
                continue
            X = vt[-1]
            if abs(X[3]) < 1e-12 or not np.all(np.isfinite(X)):
                continue
            X = X[:3] / X[3]
            z = np.einsum("ni,i->n", P2[sel], X) + q2[sel]
            if np.all(z > 1e-6):
                self.L[li] = X

    def renormalize_scale(self):
        """Exact gauge transform: rescale the scene about the frozen first
        front-camera center so the scale camera keeps its initial baseline."""
        if self.scale_cam is None:
            return
        cur = np.linalg.norm(self.t_rel[self.scale_cam])
        if cur < 1e-12:
            return
        srel = self.scale_norm / cur
        if abs(srel - 1.0) < 1e-15:
            return
        c0 = self.t_front[0]
        self.t_rel *= srel
        self.t_front = c0 + (self.t_front - c0) * srel
        self.L = c0 + (self.L - c0) * srel

    def to_rig(self, template: RigCalibration) -> RigCalibration:
        cams = []
        for i, cid in enumerate(self.camera_ids):
            pose = Pose.from_rt(self.R_rel[i], self.t_rel[i])
            cams.append(Camera(cid, template.camera(cid).model, pose))
        traj = {t: Pose.from_rt(self.R_front[i], self.t_front[i])
                for i, t in enumerate(self.frame_ids)}
        return RigCalibration(cams, template.front_camera_id, list(template.ring_order),
                              traj, template.sequence_id, template.frame_rate_hz)


def bundle_adjust(graph: CorrespondenceGraph, init: RigCalibration,
                  config: CalibrationConfig | None = None
                  ) -> tuple[RigCalibration, CalibrationReport]:
    """Levenberg-Marquardt minimization of robust reprojection error over the
    front trajectory, ring-relative poses, and landmarks.

    The first front pose is frozen (rigid gauge); the first ring baseline
    keeps its initial length (scale gauge). The report's gates record the
    iteration cap and the relative-translation drift bound; beta filtering is
    assumed done upstream.
    """
    config = config or CalibrationConfig()
    if graph.n_observations < 8:
        raise InsufficientDataError("too few observations for bundle adjustment")
    prob = _BAProblem(graph, init)
    delta = config.huber_delta_px

    initial_rms = prob.rms()
    cost = prob.cost(delta)
    if not np.isfinite(cost):
        raise DegenerateGeometryError("initial state places landmarks behind cameras")
    history = [cost]

    nu = 2.0
    converged = False
    iterations = 0
    message = ""
    lin = prob.linearize(delta)
    # damping seeded from the normal-equation curvature (Madsen-Nielsen);
    # a cost-scaled seed can be orders too small and turn the first step
    # into an undamped Gauss-Newton leap into the wrong basin
    diag_max = 1.0
    if lin[0].size:
        diag_max = max(diag_max, float(np.max(np.einsum("bbii->bi", lin[0]))))
    if lin[2].size:
        diag_max = max(diag_max, float(np.max(np.einsum("lii->li", lin[2]))))
    mu = 1e-6 * diag_max
    for it in range(config.max_iters):
        iterations = it + 1
        dp, dl = prob.solve_step(lin, mu)
        step_inf = max(np.abs(dp).max() if dp.size else 0.0,
                       np.abs(dl).max() if dl.size else 0.0)
        snapshot = prob.state()
        prob.apply_step(dp, dl)
        new_cost = prob.cost(delta)
        if new_cost < cost:
            rel_drop = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            history.append(cost)
            mu = max(mu / 3.0, 1e-15)
            nu = 2.0
            if rel_drop < config.ftol or step_inf < config.xtol:
                converged = True
                message = "converged: small relative cost decrease"
                break
            if cost <= 1e-24:
                converged = True
                message = "converged: zero cost"
                break
            lin = prob.linearize(delta)
        else:
            prob.restore(snapshot)
            mu *= nu
            nu *= 2.0
            if step_inf < config.xtol:
                converged = True
                message = "converged: step below tolerance"
                break
            if mu > 1e18:
                converged = True
                message = "converged: damping saturated"
                break

    final_rms = prob.rms()
    gates = {"beta": True, "iterations": converged}
    alpha_ok = True
    for cid in init.camera_ids():
        if cid == init.front_camera_id:
            continue
        i = prob.camera_ids.index(cid)
        drift = float(np.linalg.norm(prob.t_rel[i] - init.camera(cid).pose_rel.translation))
        if drift > config.alpha_m:
            alpha_ok = False
    gates["alpha"] = alpha_ok
    accepted = converged and all(gates.values())
    if not converged and not message:
        message = f"iteration cap {config.max_iters} reached without convergence"

    report = CalibrationReport(
        converged=converged, iterations=iterations,
        initial_rms=initial_rms, final_rms=final_rms,
        gates=gates, accepted=accepted, cost_history=history, message=message)
    return prob.to_rig(init), report


def calibrate_sequence(images: dict, init: RigCalibration, matcher: PairMatcher,
                       n_frames: int = 7, config: CalibrationConfig | None = None
                       ) -> tuple[RigCalibration, CalibrationReport]:
    """End-to-end calibration: extract, filter, bundle-adjust, gate.

    Uses the first ``n_frames`` frames of the sequence. On any gate failure
    the initial calibration is returned unchanged, with the report saying
    which gate fired.
    """
    config = config or CalibrationConfig()
    frames = sorted({f for (_, f) in images})
    if len(frames) < n_frames:
        raise InsufficientDataError(
            f"sequence has {len(frames)} frames, need {n_frames}")
    frames = frames[:n_frames]
    use = {k: v for k, v in images.items() if k[1] in frames}
    missing = [t for t in frames if t not in init.front_trajectory]
    if missing:
        raise InvalidArgumentError(f"init lacks front poses for frames {missing}")

    try:
        graph = extract_correspondences(use, init, matcher,
                                        ransac_threshold=config.ransac_threshold_px,
                                        beta=config.beta, frames=frames,
                                        seed=config.seed)
    except InsufficientDataError as e:
        report = CalibrationReport(
            converged=False, iterations=0, initial_rms=float("nan"),
            final_rms=float("nan"),
            gates={"beta": False, "iterations": False, "alpha": False},
            accepted=False, message=str(e))
        return init, report

    rig, report = bundle_adjust(graph, init, config)
    if not report.accepted:
        return init, report
    return rig, report


def pairwise_calibrate(graph: CorrespondenceGraph, init: RigCalibration,
                       config: CalibrationConfig | None = None) -> RigCalibration:
    """Loop-free ablation: adjust each adjacent pair independently, then
    chain the pair poses around the ring (the closing pair is unused).

    Exists to quantify what the geometric loop constraint buys; the joint
    optimizer in :func:`bundle_adjust` is the real calibrator.
    """
    config = config or CalibrationConfig()
    ring = list(init.ring_order)
    pair_pose: dict[tuple[str, str], Pose] = {}
    for i in range(len(ring) - 1):
        a, b = ring[i], ring[i + 1]
        sub = graph.restricted_to_cameras([a, b])
        if sub.n_observations < 8:
            pair_pose[(a, b)] = _relative_between(init, a, b)
            continue
        rel_a = init.camera(a).pose_rel
        rel_b = init.camera(b).pose_rel
        sub_rig = RigCalibration(
            cameras=[Camera(a, init.camera(a).model, Pose.identity()),
                     Camera(b, init.camera(b).model, compose(rel_b, rel_a.inverse()))],
            front_camera_id=a,
            ring_order=[a, b],
            front_trajectory={t: compose(rel_a, p)
                              for t, p in init.front_trajectory.items()},
            sequence_id=init.sequence_id, frame_rate_hz=init.frame_rate_hz)
        try:
            adjusted, rep = bundle_adjust(sub, sub_rig, config)
            pair_pose[(a, b)] = adjusted.camera(b).pose_rel
        except (DegenerateGeometryError, InsufficientDataError):
            pair_pose[(a, b)] = _relative_between(init, a, b)

    new_rel: dict[str, Pose] = {ring[0]: Pose.identity()}
    acc = Pose.identity()
    for i in range(len(ring) - 1):
        acc = compose(pair_pose[(ring[i], ring[i + 1])], acc)
        new_rel[ring[i + 1]] = acc
    # ring starts at the front camera by construction of our rigs; if not,
    # rebase so the front camera stays the identity
    front = init.front_camera_id
    rebase = new_rel[front].inverse()
    rebased = {cid: compose(p, rebase) for cid, p in new_rel.items()}
    return init.with_relative_poses(rebased)


def _relative_between(rig: RigCalibration, a: str, b: str) -> Pose:
    return compose(rig.camera(b).pose_rel, rig.camera(a).pose_rel.inverse())


def relative_pose_error(truth: RigCalibration, estimate: RigCalibration
                        ) -> tuple[float, float]:
    """Gauge-fixed error of the ring-relative poses.

    Returns (mean rotation error in degrees, mean translation error in
    meters). Rotations are gauge-invariant; translations are compared after
    a least-squares global scale alignment, which removes the scale gauge
    that reprojection-only adjustment cannot observe.
    """
    rot_errs = []
    ts_true = []
    ts_est = []
    for cid in truth.camera_ids():
        if cid == truth.front_camera_id:
            continue
        Rt = truth.camera(cid).pose_rel.rotation_matrix()
        Re = estimate.camera(cid).pose_rel.rotation_matrix()
        c = (np.trace(Rt.T @ Re) - 1.0) / 2.0
        rot_errs.append(math.degrees(math.acos(min(1.0, max(-1.0, c)))))
        ts_true.append(truth.camera(cid).pose_rel.translation)
        ts_est.append(estimate.camera(cid).pose_rel.translation)
    ts_true = np.asarray(ts_true)
    ts_est = np.asarray(ts_est)
    denom = float(np.sum(ts_est * ts_est))
    scale = float(np.sum(ts_true * ts_est)) / denom if denom > 0 else 1.0
    trans_errs = np.linalg.norm(scale * ts_est - ts_true, axis=1)
    return float(np.mean(rot_errs)), float(np.mean(trans_errs))


def interpolate_trajectory(anchors: dict[int, Pose], frame_ids: list[int]) -> dict[int, Pose]:
    """Constant-velocity interpolation of front poses between anchor frames
    (used to initialize non-keyframe poses before adjustment)."""
    if not anchors:
        raise InvalidArgumentError("need at least one anchor pose")
    keys = sorted(anchors)
    out: dict[int, Pose] = {}
    for t in frame_ids:
        if t in anchors:
            out[t] = anchors[t]
            continue
        prev = max((k for k in keys if k < t), default=None)
        nxt = min((k for k in keys if k > t), default=None)
        if prev is None:
            out[t] = anchors[keys[0]]
            continue
        if nxt is None:
            out[t] = anchors[keys[-1]]
            continue
        alpha = (t - prev) / (nxt - prev)
        pa, pb = anchors[prev], anchors[nxt]
        trans = (1 - alpha) * pa.translation + alpha * pb.translation
        out[t] = Pose(_slerp(pa.quaternion, pb.quaternion, alpha), trans)
    return out


def _slerp(qa: np.ndarray, qb: np.ndarray, alpha: float) -> np.ndarray:
    dot = float(np.dot(qa, qb))
    if dot < 0:
        qb = -qb
        dot = -dot
    if dot > 1 - 1e-12:
        return quat_normalize((1 - alpha) * qa + alpha * qb)
    theta = math.acos(min(1.0, dot))
    return quat_normalize((math.sin((1 - alpha) * theta) * qa
                           + math.sin(alpha * theta) * qb) / math.sin(theta))
