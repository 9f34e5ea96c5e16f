"""Command-line pipeline: synth -> fisheye-split -> calibrate -> prior -> eval
-> pointcloud.

Exit codes: 0 success, 1 domain error, 2 usage error. All randomness is
controlled by --seed; output trees are byte-identical across reruns and
thread counts (cap threads with SURROUND_GEOM_THREADS, 0 = auto).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sgio
from .calibrate import CalibrationConfig, calibrate_sequence
from .errors import SurroundGeomError
from .geometry import FisheyeModel
from .matching import GuidedCornerMatcher
from .metrics import evaluate
from .rig import RigCalibration
from .sgm import SgmParams
from .stereo import build_all_priors, normalize_prior
from .synth import drive_trajectory, make_preset, make_scene, perturb_rig, render
from .virtual import split_rig, virtual_camera_id, warp_to_virtual


def _cmd_synth(args) -> int:
    out = Path(args.out)
    preset = make_preset(args.preset)
    rig = drive_trajectory(preset.rig, args.frames, args.step, args.yaw_step)
    scene = make_scene(args.seed)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    for cam in rig.cameras:
        for t in sorted(rig.front_trajectory):
            img, depth = render(scene, cam.model, rig.absolute_pose(cam.camera_id, t))
            img_path = sgio.frame_path(out / "images", cam.camera_id, t)
            depth_path = sgio.frame_path(out / "depth", cam.camera_id, t, ".pfm")
            img_path.parent.mkdir(parents=True, exist_ok=True)
            depth_path.parent.mkdir(parents=True, exist_ok=True)
            sgio.save_image(img_path, img)
            sgio.save_pfm(depth_path, depth)
    sgio.save_rig(out / "rig.json", rig)
    if args.noise_rot > 0 or args.noise_trans > 0:
        noisy = perturb_rig(rig, args.noise_rot, args.noise_trans, args.seed,
                            fixed_magnitude=args.noise_exact)
        sgio.save_rig(out / "rig_perturbed.json", noisy)
    print(f"wrote {args.preset} sequence ({args.frames} frames) to {out}")
    return 0


def _cmd_fisheye_split(args) -> int:
    rig = sgio.load_rig(args.rig)
    vrig, specs = split_rig(rig, target_hfov_deg=args.hfov,
                            target_size=(args.width, args.height))
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    frames = sorted(rig.front_trajectory)
    for cam in rig.cameras:
        assert isinstance(cam.model, FisheyeModel)
        for t in frames:
            src = sgio.frame_path(Path(args.images), cam.camera_id, t)
            if not src.exists():
                continue
            image = sgio.load_image(src)
            for side, spec in zip(("left", "right"), specs[cam.camera_id]):
                vid = virtual_camera_id(cam.camera_id, side)
                warped = warp_to_virtual(image, cam.model, cam.pose_rel, spec,
                                         camera_id=cam.camera_id)
                ipath = sgio.frame_path(out / "images", vid, t)
                mpath = sgio.frame_path(out / "masks", vid, t)
                ipath.parent.mkdir(parents=True, exist_ok=True)
                mpath.parent.mkdir(parents=True, exist_ok=True)
                sgio.save_image(ipath, warped.pixels)
                sgio.save_mask(mpath, warped.valid_mask)
    sgio.save_rig(out / "rig.json", vrig)
    print(f"wrote {2 * len(rig.cameras)} virtual cameras to {out}")
    return 0


def _cmd_calibrate(args) -> int:
    init = sgio.load_rig(args.rig)
    images = sgio.load_image_set(args.images, init.camera_ids())
    config = CalibrationConfig(max_iters=args.max_iters, alpha_m=args.alpha,
                               beta=args.beta, huber_delta_px=args.huber,
                               ransac_threshold_px=args.ransac_threshold,
                               seed=args.seed)
    matcher = GuidedCornerMatcher(init)
    rig, report = calibrate_sequence(images, init, matcher, n_frames=args.frames,
                                     config=config)
    sgio.save_rig(args.out, rig)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                     encoding="utf-8")
    status = "accepted" if report.accepted else f"rejected ({report.message})"
    print(f"calibration {status}: rms {report.initial_rms:.3f} -> "
          f"{report.final_rms:.3f} px in {report.iterations} iterations")
    return 0


def _load_masked_images(images_dir: Path, rig: RigCalibration, frame: int) -> dict:
    images = {}
    for cid in rig.camera_ids():
        ipath = sgio.frame_path(images_dir / "images", cid, frame)
        if not ipath.exists():
            ipath = sgio.frame_path(images_dir, cid, frame)
        if not ipath.exists():
            raise SurroundGeomError(f"missing image for camera {cid} frame {frame}")
        image = sgio.load_image(ipath)
        mpath = sgio.frame_path(images_dir / "masks", cid, frame)
        if mpath.exists():
            images[cid] = (image, sgio.load_mask(mpath))
        else:
            images[cid] = image
    return images


def _cmd_prior(args) -> int:
    rig = sgio.load_rig(args.rig)
    images = _load_masked_images(Path(args.images), rig, args.frame)
    params = SgmParams(num_disp=args.num_disp, p1=args.p1, p2=args.p2)
    priors = build_all_priors(rig, images, args.frame, params,
                              max_range=args.max_range, half_res=args.half_res)
    out = Path(args.out)
    for cid, prior in priors.items():
        dpath = sgio.frame_path(out / "prior", cid, args.frame, ".pfm")
        mpath = sgio.frame_path(out / "prior_mask", cid, args.frame)
        dpath.parent.mkdir(parents=True, exist_ok=True)
        mpath.parent.mkdir(parents=True, exist_ok=True)
        sgio.save_pfm(dpath, np.where(prior.valid, prior.depth, 0.0))
        sgio.save_mask(mpath, prior.valid)
        if args.normalized:
            npath = sgio.frame_path(out / "prior_normalized", cid, args.frame, ".pfm")
            npath.parent.mkdir(parents=True, exist_ok=True)
            sgio.save_pfm(npath, normalize_prior(prior, args.max_range))
    n_valid = sum(int(p.valid.sum()) for p in priors.values())
    print(f"wrote priors for {len(priors)} cameras ({n_valid} valid pixels) to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    preds = sorted(pred_dir.rglob("*.pfm"))
    if not preds:
        raise SurroundGeomError(f"no PFM files under {pred_dir}")
    per_file = {}
    all_pred = []
    all_gt = []
    for ppath in preds:
        rel = ppath.relative_to(pred_dir)
        gpath = gt_dir / rel
        if not gpath.exists():
            raise SurroundGeomError(f"missing ground truth for {rel}")
        pred = sgio.load_pfm(ppath)
        gt = sgio.load_pfm(gpath)
        if pred.shape != gt.shape:
            raise SurroundGeomError(
                f"size mismatch for {rel}: pred {pred.shape} vs gt {gt.shape}")
        mask = pred > 0
        if mask.any():
            valid = mask & (gt > 0) & (gt <= args.max_range)
            if valid.any():
                per_file[str(rel)] = evaluate(pred, gt, mask, args.max_range).to_dict()
                all_pred.append(pred[valid])
                all_gt.append(gt[valid])
    if not all_pred:
        raise SurroundGeomError("no valid pixels to evaluate")
    overall = evaluate(np.concatenate(all_pred), np.concatenate(all_gt),
                       max_range=args.max_range).to_dict()
    result = {"overall": overall, "per_file": per_file}
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    print(json.dumps(overall, indent=2, sort_keys=True))
    return 0


def _cmd_pointcloud(args) -> int:
    rig = sgio.load_rig(args.rig)
    points = []
    colors = []
    for cid in rig.camera_ids():
        dpath = sgio.frame_path(Path(args.prior) / "prior", cid, args.frame, ".pfm")
        if not dpath.exists():
            continue
        depth = sgio.load_pfm(dpath)
        model = rig.camera(cid).model
        pose = rig.absolute_pose(cid, args.frame)
        vs, us = np.nonzero(depth > 0)
        if len(us) == 0:
            continue
        z = depth[vs, us].astype(np.float64)
        x = (us - model.cx) / model.fx * z
        y = (vs - model.cy) / model.fy * z
        points.append(pose.transform(np.stack([x, y, z], axis=-1)))
        ipath = sgio.frame_path(Path(args.images) / "images", cid, args.frame) \
            if args.images else None
        if ipath and ipath.exists():
            img = sgio.load_image(ipath)
            g = img[vs, us]
            colors.append(np.stack([g, g, g], axis=-1))
        else:
            colors.append(np.full((len(us), 3), 200, dtype=np.uint8))
    if not points:
        raise SurroundGeomError("no prior depth found to export")
    sgio.save_ply(args.out, np.concatenate(points), np.concatenate(colors),
                  binary=not args.ascii)
    print(f"wrote {sum(len(p) for p in points)} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surround-geom",
        description="Geometric depth priors for 360-degree surround camera rings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic surround sequence")
    p.add_argument("--preset", choices=["ring6_pinhole", "ring4_fisheye"],
                   default="ring6_pinhole")
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=0.8, help="forward motion m/frame")
    p.add_argument("--yaw-step", type=float, default=1.0, help="yaw deg/frame")
    p.add_argument("--noise-rot", type=float, default=0.0,
                   help="rig perturbation, degrees")
    p.add_argument("--noise-trans", type=float, default=0.0,
                   help="rig perturbation, meters")
    p.add_argument("--noise-exact", action="store_true",
                   help="use exact perturbation magnitudes instead of uniform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fisheye-split", help="convert fisheye rig to virtual pinholes")
    p.add_argument("--rig", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--hfov", type=float, default=None,
                   help="virtual camera horizontal FOV, degrees")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fisheye_split)

    p = sub.add_parser("calibrate", help="loop-constrained rig calibration")
    p.add_argument("--rig", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--beta", type=int, default=200,
                   help="minimum verified matches per image pair")
    p.add_argument("--alpha", type=float, default=0.3,
                   help="max relative-translation drift, meters")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--huber", type=float, default=2.0)
    p.add_argument("--ransac-threshold", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("prior", help="stereo depth prior for one frame")
    p.add_argument("--rig", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--max-range", type=float, default=200.0)
    p.add_argument("--num-disp", type=int, default=128)
    p.add_argument("--p1", type=int, default=10)
    p.add_argument("--p2", type=int, default=120)
    p.add_argument("--half-res", action="store_true",
                   help="match at half resolution for speed")
    p.add_argument("--normalized", action="store_true",
                   help="also write priors normalized to [0, 1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prior)

    p = sub.add_parser("eval", help="depth metrics between two PFM trees")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--max-range", type=float, default=200.0)
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pointcloud", help="export merged priors as PLY")
    p.add_argument("--rig", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pointcloud)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SurroundGeomError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
