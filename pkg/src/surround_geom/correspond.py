"""Correspondence graph: filtered 2-D matches plus triangulated landmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

ViewKey = tuple[str, int]  # (camera_id, frame_id)


@dataclass
class CorrespondenceGraph:
    """Multi-view observations of shared landmarks, ready for bundle adjustment.

    ``observations`` rows are (camera_id, frame_id, landmark_idx, pixel);
    ``landmarks`` holds one 3-D point (world, meters) per landmark index.
    ``pair_counts`` records how many verified matches each image pair
    contributed, keyed by ((cam_a, frame_a), (cam_b, frame_b)).
    ``true_landmarks`` is only populated by the synthetic oracle.
    """

    camera_ids: list[str]
    frame_ids: list[int]
    obs_camera: np.ndarray      # (n_obs,) int index into camera_ids
    obs_frame: np.ndarray       # (n_obs,) int index into frame_ids
    obs_landmark: np.ndarray    # (n_obs,) int index into landmarks
    obs_pixel: np.ndarray       # (n_obs, 2) float
    landmarks: np.ndarray       # (n_lm, 3) float
    pair_counts: dict[tuple[ViewKey, ViewKey], int] = field(default_factory=dict)
    true_landmarks: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.obs_pixel)
        if not (len(self.obs_camera) == len(self.obs_frame) == len(self.obs_landmark) == n):
            raise InvalidArgumentError("observation arrays must have equal length")
        if n:
            counts = np.bincount(self.obs_landmark, minlength=len(self.landmarks))
            if counts.min(initial=2) < 2:
                raise InvalidArgumentError("every landmark needs at least 2 observations")

    @property
    def n_observations(self) -> int:
        return len(self.obs_pixel)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    def restricted_to_cameras(self, keep: list[str]) -> "CorrespondenceGraph":
        """Sub-graph with only the given cameras, dropping landmarks that fall
        below two observations."""
        new_ids = [c for c in self.camera_ids if c in keep]
        cam_remap = np.full(len(self.camera_ids), -1, dtype=np.int64)
        for i, c in enumerate(self.camera_ids):
            if c in keep:
                cam_remap[i] = new_ids.index(c)
        sel = cam_remap[self.obs_camera] >= 0
        cam = cam_remap[self.obs_camera[sel]]
        frm = self.obs_frame[sel]
        lms = self.obs_landmark[sel]
        pix = self.obs_pixel[sel]
        counts = np.bincount(lms, minlength=self.n_landmarks)
        good_lm = counts >= 2
        sel2 = good_lm[lms]
        cam, frm, lms, pix = cam[sel2], frm[sel2], lms[sel2], pix[sel2]
        remap = -np.ones(self.n_landmarks, dtype=np.int64)
        remap[good_lm] = np.arange(int(good_lm.sum()))
        pairs = {k: v for k, v in self.pair_counts.items()
                 if k[0][0] in keep and k[1][0] in keep}
        return CorrespondenceGraph(
            camera_ids=new_ids,
            frame_ids=list(self.frame_ids),
            obs_camera=cam, obs_frame=frm, obs_landmark=remap[lms], obs_pixel=pix,
            landmarks=self.landmarks[good_lm],
            pair_counts=pairs,
            true_landmarks=None if self.true_landmarks is None else self.true_landmarks[good_lm],
        )


def build_graph(records: list[tuple[str, int, int, float, float]],
                landmarks: np.ndarray,
                camera_ids: list[str],
                frame_ids: list[int],
                pair_counts: dict | None = None,
                true_landmarks: np.ndarray | None = None) -> CorrespondenceGraph:
    """Assemble a graph from (camera_id, frame_id, landmark_idx, u, v) records."""
    cam_index = {c: i for i, c in enumerate(camera_ids)}
    frame_index = {f: i for i, f in enumerate(frame_ids)}
    n = len(records)
    obs_camera = np.empty(n, dtype=np.int64)
    obs_frame = np.empty(n, dtype=np.int64)
    obs_landmark = np.empty(n, dtype=np.int64)
    obs_pixel = np.empty((n, 2), dtype=np.float64)
    for i, (cid, fid, lm, u, v) in enumerate(records):
        obs_camera[i] = cam_index[cid]
        obs_frame[i] = frame_index[fid]
        obs_landmark[i] = lm
        obs_pixel[i] = (u, v)
    return CorrespondenceGraph(
        camera_ids=list(camera_ids), frame_ids=list(frame_ids),
        obs_camera=obs_camera, obs_frame=obs_frame,
        obs_landmark=obs_landmark, obs_pixel=obs_pixel,
        landmarks=np.asarray(landmarks, dtype=np.float64).reshape(-1, 3),
        pair_counts=pair_counts or {},
        true_landmarks=true_landmarks,
    )
