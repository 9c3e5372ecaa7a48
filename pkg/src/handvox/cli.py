"""Single multi-subcommand CLI orchestrating the pipeline.

Subcommands: synth, voxelize, heatmap, augment, register, eval. Exit codes:
0 success, 1 validation/usage error, 2 I/O error. Diagnostics go to stderr;
with a fixed seed every subcommand writes byte-identical outputs across runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import io as hio
from . import metrics, registration, synthhand, voxgrid
from .heatmap import JointSet, decode_heatmaps, make_heatmaps
from .voxgrid import CameraIntrinsics, CubeFrame

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2


def _triple(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z - got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _quad(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected fx,fy,cx,cy - got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handvox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic hand samples")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cube-size", type=float, default=voxgrid.DEFAULT_CUBE_MM)
    p.add_argument("--grid-dim", type=int, default=88)
    p.add_argument("--shape-dim", type=int, default=64)
    p.add_argument("--image-size", type=int, default=240)
    p.add_argument("--focal", type=float, default=300.0)
    p.add_argument("--standoff", type=float, default=600.0, help="camera distance to the hand, mm")
    p.add_argument("--report", help="write a JSON manifest here")

    p = sub.add_parser("voxelize", help="depth map or mesh to occupancy grid")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--depth", help="input 16-bit PGM depth map")
    src.add_argument("--mesh", help="input OBJ mesh")
    p.add_argument("--intrinsics", type=_quad, help="fx,fy,cx,cy (depth input)")
    ctr = p.add_mutually_exclusive_group(required=True)
    ctr.add_argument("--center", type=_triple, help="cube center x,y,z in mm")
    ctr.add_argument("--joints", help="joints JSON; cube centered on the palm center")
    p.add_argument("--cube-size", type=float, default=voxgrid.DEFAULT_CUBE_MM)
    p.add_argument("--grid-dim", type=int, default=88, help="resolution for depth input")
    p.add_argument("--shape-dim", type=int, default=64, help="resolution for mesh input")
    p.add_argument("--out", required=True)

    p = sub.add_parser("heatmap", help="encode joints to 3D Gaussian heatmaps (or decode back)")
    p.add_argument("--decode", action="store_true", help="decode a stack back to joints")
    p.add_argument("--joints", help="input joints JSON (encode)")
    p.add_argument("--stack", help="input heatmap stack (decode)")
    p.add_argument("--center", type=_triple, help="cube center (encode; default: palm center)")
    p.add_argument("--cube-size", type=float, default=voxgrid.DEFAULT_CUBE_MM)
    p.add_argument("--heatmap-dim", type=int, default=44)
    p.add_argument("--sigma", type=float, help="Gaussian sigma in mm (default 1.7 voxel edges)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="rotate/scale/translate a grid (and joints) in voxel space")
    p.add_argument("--grid", required=True, help="input VGRD")
    p.add_argument("--out", required=True, help="output VGRD")
    p.add_argument("--joints", help="joints JSON transformed consistently with the grid")
    p.add_argument("--joints-out", help="output joints JSON (requires --joints)")
    p.add_argument("--center", type=_triple, help="cube center for the joint transform")
    p.add_argument("--seed", type=int, help="draw parameters at random")
    p.add_argument("--theta-x", type=float, default=0.0)
    p.add_argument("--theta-y", type=float, default=0.0)
    p.add_argument("--theta-z", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--translate", type=_triple, help="tx,ty,tz in voxels")

    p = sub.add_parser("register", help="fit a mesh to a target occupancy grid")
    p.add_argument("--mesh", required=True, help="input OBJ")
    p.add_argument("--target", required=True, help="target VGRD")
    p.add_argument("--method", choices=("dispfield", "nrga"), default="dispfield")
    p.add_argument("--center", type=_triple, required=True, help="cube center x,y,z in mm")
    p.add_argument("--cube-size", type=float, default=voxgrid.DEFAULT_CUBE_MM)
    p.add_argument("--iterations", type=int, default=30, help="nrga iterations")
    p.add_argument("--step", type=float, default=0.5, help="nrga step size")
    p.add_argument("--radius", type=float, help="correspondence radius in mm")
    p.add_argument("--lambda", dest="smooth_lambda", type=float, default=0.5, help="smoothing weight")
    p.add_argument("--smooth-iterations", type=int, default=2)
    p.add_argument("--out", required=True, help="output OBJ")
    p.add_argument("--report", help="write a JSON report (per-iteration traces for nrga)")

    p = sub.add_parser("eval", help="compare predictions against ground truth")
    p.add_argument("--pred-mesh")
    p.add_argument("--gt-mesh")
    p.add_argument("--pred-joints")
    p.add_argument("--gt-joints")
    p.add_argument("--pred-grid")
    p.add_argument("--gt-grid")
    p.add_argument("--out", help="report path (default: stdout)")
    return parser


def _cmd_synth(args) -> int:
    if args.count < 1:
        raise ValueError("--count must be >= 1")
    out_dir = Path(args.out)
    model = synthhand.default_hand_model()
    half = args.image_size / 2.0
    intr = CameraIntrinsics(args.focal, args.focal, half, half)
    standoff = np.array([0.0, 0.0, args.standoff])

    samples = []
    for i in range(args.count):
        pose = synthhand.sample_pose(args.seed + i).translated(standoff)
        mesh, joints = synthhand.pose_hand(model, pose)
        frame = CubeFrame(synthhand.palm_center(joints), args.cube_size)
        depth = synthhand.render_depth(mesh, intr, args.image_size)
        cloud = voxgrid.crop_points(voxgrid.depth_to_points(depth, intr), frame)
        vdepth = voxgrid.voxelize_points(cloud, frame, args.grid_dim)
        vshape = voxgrid.voxelize_mesh(mesh, frame, args.shape_dim)
        samples.append((i, mesh, joints, depth, vdepth, vshape, frame))

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"count": args.count, "seed": args.seed, "cube_size": args.cube_size, "samples": []}
    for i, mesh, joints, depth, vdepth, vshape, frame in samples:
        stem = f"hand_{i:04d}"
        hio.save_mesh(out_dir / f"{stem}.obj", mesh)
        hio.save_joints(out_dir / f"{stem}_joints.json", joints)
        hio.save_depth(out_dir / f"{stem}_depth.pgm", depth)
        hio.save_grid(out_dir / f"{stem}_vdepth.vgrd", vdepth)
        hio.save_grid(out_dir / f"{stem}_vshape.vgrd", vshape)
        manifest["samples"].append(
            {"stem": stem, "palm_center": [float(c) for c in frame.center]}
        )
    if args.report:
        Path(args.report).write_text(json.dumps(manifest, indent=2) + "\n")
    return EXIT_OK


def _frame_from_args(args) -> CubeFrame:
    if args.center is not None:
        return CubeFrame(args.center, args.cube_size)
    joints = hio.load_joints(args.joints)
    return CubeFrame(synthhand.palm_center(joints), args.cube_size)


def _cmd_voxelize(args) -> int:
    frame = _frame_from_args(args)
    if args.depth:
        if args.intrinsics is None:
            raise ValueError("--intrinsics is required with --depth")
        depth = hio.load_depth(args.depth)
        intr = CameraIntrinsics(*args.intrinsics)
        cloud = voxgrid.crop_points(voxgrid.depth_to_points(depth, intr), frame)
        grid = voxgrid.voxelize_points(cloud, frame, args.grid_dim)
    else:
        mesh = hio.load_mesh(args.mesh)
        grid = voxgrid.voxelize_mesh(mesh, frame, args.shape_dim)
    hio.save_grid(args.out, grid)
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    if args.decode:
        if not args.stack:
            raise ValueError("--decode requires --stack")
        joints = decode_heatmaps(hio.load_heatmaps(args.stack))
        hio.save_joints(args.out, joints)
        return EXIT_OK
    if not args.joints:
        raise ValueError("encoding requires --joints")
    joints = hio.load_joints(args.joints)
    center = args.center if args.center is not None else synthhand.palm_center(joints)
    frame = CubeFrame(center, args.cube_size)
    stack = make_heatmaps(joints, frame, args.heatmap_dim, args.sigma)
    hio.save_heatmaps(args.out, stack)
    return EXIT_OK


def _cmd_augment(args) -> int:
    grid = hio.load_grid(args.grid)
    if args.seed is not None:
        params = aug.sample_params(args.seed)
    else:
        params = aug.AugmentParams(
            theta_x=args.theta_x,
            theta_y=args.theta_y,
            theta_z=args.theta_z,
            scale=args.scale,
            translation=args.translate if args.translate is not None else np.zeros(3),
        )
    joints_out = None
    if args.joints:
        if args.center is None:
            raise ValueError("--joints requires --center for the frame")
        if not args.joints_out:
            raise ValueError("--joints requires --joints-out")
        joints = hio.load_joints(args.joints)
        frame = CubeFrame(args.center, grid.dims[0] * grid.voxel_size)
        joints_out, left_frame = aug.transform_joints(joints, frame, params, grid.voxel_size)
        if left_frame.any():
            print(
                f"warning: {int(left_frame.sum())} joint(s) left the frame after augmentation",
                file=sys.stderr,
            )
    warped = aug.transform_grid(grid, params)
    hio.save_grid(args.out, warped)
    if joints_out is not None:
        hio.save_joints(args.joints_out, joints_out)
    return EXIT_OK


def _cmd_register(args) -> int:
    mesh = hio.load_mesh(args.mesh)
    target = hio.load_grid(args.target)
    frame = CubeFrame(args.center, args.cube_size)
    report: dict = {"method": args.method}
    if args.method == "nrga":
        cfg_kwargs = {"iterations": args.iterations, "step": args.step}
        if args.radius is not None:
            cfg_kwargs["correspondence_radius"] = args.radius
        result = registration.nrga_register(mesh, target, registration.NrgaConfig(**cfg_kwargs))
        fitted = result.mesh
        report.update(
            converged=result.converged,
            failed_fraction=result.failed_fraction,
            trace=[float(t) for t in result.trace],
        )
        if not result.converged:
            print("warning: nrga registration did not converge; writing partial result", file=sys.stderr)
    else:
        fitted = registration.register(
            mesh,
            target,
            "dispfield",
            frame,
            correspondence_radius=args.radius,
            smooth_iterations=args.smooth_iterations,
            smooth_lambda=args.smooth_lambda,
        )
    report["mean_vertex_shift_mm"] = float(
        np.linalg.norm(fitted.vertices - mesh.vertices, axis=1).mean()
    )
    hio.save_mesh(args.out, fitted)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = {}
    if args.pred_mesh or args.gt_mesh:
        if not (args.pred_mesh and args.gt_mesh):
            raise ValueError("mesh comparison needs both --pred-mesh and --gt-mesh")
        report["vertex_error_mm"] = metrics.vertex_error(
            hio.load_mesh(args.pred_mesh), hio.load_mesh(args.gt_mesh)
        )
    if args.pred_joints or args.gt_joints:
        if not (args.pred_joints and args.gt_joints):
            raise ValueError("joint comparison needs both --pred-joints and --gt-joints")
        report["joint_error_mm"] = metrics.joint_error(
            hio.load_joints(args.pred_joints), hio.load_joints(args.gt_joints)
        )
    if args.pred_grid or args.gt_grid:
        if not (args.pred_grid and args.gt_grid):
            raise ValueError("grid comparison needs both --pred-grid and --gt-grid")
        report["shape_error_bce"] = metrics.shape_error(
            hio.load_grid(args.pred_grid), hio.load_grid(args.gt_grid)
        )
    if not report:
        raise ValueError("nothing to evaluate; pass at least one pred/gt pair")
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "voxelize": _cmd_voxelize,
    "heatmap": _cmd_heatmap,
    "augment": _cmd_augment,
    "register": _cmd_register,
    "eval": _cmd_eval,
}


def run(argv) -> int:
    """Parse arguments and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except hio.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
