"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error. Logs go to
stderr; machine-readable data goes to stdout or files. The FRAPPE_KIT_SEED
environment variable supplies the default seed where --seed is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import container
from .dataio.records import MANIFEST_VERSION
from .errors import FrappeKitError, ValidationError

_USAGE_EXIT = 1
_RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(_USAGE_EXIT)


def _log(message: str):
    print(message, file=sys.stderr)


def _default_seed() -> int:
    raw = os.environ.get("FRAPPE_KIT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"FRAPPE_KIT_SEED must be an integer, got {raw!r}") from exc


def _load_points(path: Path) -> np.ndarray:
    """N x 3 marker coordinates from an array container, CSV, or whitespace text."""
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    if path.suffix == ".mpro":
        pts = container.read_array(path)
    else:
        pts = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"{path}: expected N x 3 points, got shape {pts.shape}")
    return pts


def cmd_synth(args) -> int:
    from .dataio import SynthConfig, build_synthetic_dataset

    config = SynthConfig(
        participants=args.participants, sequences=args.sequences, frames=args.frames,
        seed=args.seed, out_dir=Path(args.out), mat_rows=args.mat_rows,
        mat_cols=args.mat_cols, cell_pitch=args.cell_pitch,
        image_kind=args.image_kind, image_size=args.image_size)
    manifest = build_synthetic_dataset(config)
    _log(f"wrote {len(manifest.records)} sequences to {manifest.root}")
    return 0


def cmd_annotate(args) -> int:
    from .body_model import forward_sequence
    from .contact import annotate_contact
    from .dataio import (load_dataset_body_model, load_manifest, load_sequence,
                         save_manifest)

    manifest = load_manifest(Path(args.dataset))
    body = load_dataset_body_model(manifest)
    for rec in manifest.records:
        record = load_sequence(manifest, rec)
        joints, _ = forward_sequence(body, record.beta, record.thetas, record.trans)
        labels = annotate_contact(joints, record.pressure.astype(np.float64),
                                  manifest.mat, tau1=args.tau1, tau2=args.tau2,
                                  radius=args.radius)
        container.write_array(manifest.root / rec.path / "contact.mpro", labels.labels)
        _log(f"annotated {rec.path}: {int(labels.labels.sum())} contact entries")
    manifest.thresholds.update({"tau1": args.tau1, "tau2": args.tau2,
                                "radius": args.radius})
    save_manifest(manifest)
    return 0


def cmd_calibrate(args) -> int:
    from .alignment import rigid_register

    local = _load_points(Path(args.markers_local))
    world = _load_points(Path(args.markers_world))
    xform = rigid_register(local, world)
    residual = float(np.linalg.norm(xform.apply(local) - world, axis=1).mean())
    doc = {"rotation": [float(v) for v in xform.rotation.reshape(-1)],
           "translation": [float(v) for v in xform.translation],
           "mean_residual_m": residual}
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, train

    config = TrainConfig.from_json_file(Path(args.config))
    ckpt, runlog = train(config, Path(args.dataset), Path(args.out))
    _log(f"trained {config.steps} steps, final loss "
         f"{runlog.steps[-1]['total']:.6f}, checkpoint at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .training import evaluate

    report = evaluate(Path(args.checkpoint), Path(args.dataset), split=args.split,
                      bypass_gt=args.gt_bypass, baseline=args.baseline)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    _log(f"wrote {out}")
    return 0


def cmd_report(args) -> int:
    from .metrics import MetricsReport

    runs_dir = Path(args.runs)
    if not runs_dir.is_dir():
        raise ValidationError(f"no such directory: {runs_dir}")
    reports = {}
    for path in sorted(runs_dir.glob("**/*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and doc and all(
                isinstance(v, dict) and "value" in v for v in doc.values()):
            reports[path.stem] = MetricsReport.from_json(path.read_text(encoding="utf-8"))
    if not reports:
        raise ValidationError(f"no metric reports found under {runs_dir}")

    names = sorted({name for rep in reports.values() for name in rep.values})
    rows = [["run"] + names]
    for run, rep in sorted(reports.items()):
        rows.append([run] + [f"{rep.values[n]:.3f}" if n in rep.values else ""
                             for n in names])
    if args.format == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerows(rows)
    elif args.format == "json":
        doc = {run: rep.values for run, rep in sorted(reports.items())}
        print(json.dumps(doc, indent=1, sort_keys=True))
    else:  # md
        print("| " + " | ".join(rows[0]) + " |")
        print("|" + "---|" * len(rows[0]))
        for row in rows[1:]:
            print("| " + " | ".join(row) + " |")
    return 0


def cmd_cop_trace(args) -> int:
    from .body_model import forward_sequence
    from .dataio import load_dataset_body_model, load_manifest, load_sequence
    from .metrics import com_projection, point_polygon_distance, support_region
    from .pressure_sim import PressureFrame, center_of_pressure

    manifest = load_manifest(Path(args.dataset))
    matches = [r for r in manifest.records if r.path == args.sequence
               or Path(r.path).name == args.sequence]
    if not matches:
        known = ", ".join(r.path for r in manifest.records)
        raise ValidationError(f"sequence {args.sequence!r} not found; have: {known}")
    rec = matches[0]
    record = load_sequence(manifest, rec)
    body = load_dataset_body_model(manifest)
    _, verts = forward_sequence(body, record.beta, record.thetas, record.trans)
    com = com_projection(verts)

    rows = [["frame", "time_s", "total_force", "cop_x", "cop_y",
             "com_x", "com_y", "cop_support_dist_m", "com_support_dist_m"]]
    for i in range(record.num_frames):
        frame = PressureFrame(grid=record.pressure[i].astype(np.float64))
        total = float(frame.grid.sum())
        cop = center_of_pressure(frame, record.mat)
        region = support_region(frame, record.mat, args.threshold)
        cop_d = com_d = ""
        cop_x = cop_y = ""
        if cop is not None:
            cop_x, cop_y = f"{cop[0]:.6f}", f"{cop[1]:.6f}"
            if len(region):
                cop_d = f"{point_polygon_distance(cop, region):.6f}"
        if len(region):
            com_d = f"{point_polygon_distance(com[i], region):.6f}"
        rows.append([str(i), f"{i / record.fps:.6f}", f"{total:.6f}", cop_x, cop_y,
                     f"{com[i][0]:.6f}", f"{com[i][1]:.6f}", cop_d, com_d])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)
    _log(f"wrote {out}")
    if args.plot:
        _plot_cop_trace(rows[1:], Path(args.plot))
        _log(f"wrote {args.plot}")
    return 0


def _plot_cop_trace(rows, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [float(r[3]) for r in rows if r[3]]
    ys = [float(r[4]) for r in rows if r[3]]
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(xs, ys, "-", lw=0.8, label="CoP")
    ax.plot([float(r[5]) for r in rows], [float(r[6]) for r in rows],
            "--", lw=0.8, label="CoM projection")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_parser() -> _Parser:
    parser = _Parser(prog="frappe-kit",
                     description="Pressure-aware motion capture toolkit")
    parser.add_argument("--version", action="version",
                        version=f"frappe-kit {__version__} "
                                f"(container v{container.FORMAT_VERSION}, "
                                f"manifest v{MANIFEST_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _default_seed()

    p = sub.add_parser("synth", help="build a synthetic dataset")
    p.add_argument("--participants", type=int, required=True)
    p.add_argument("--sequences", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    p.add_argument("--mat-rows", type=int, default=48)
    p.add_argument("--mat-cols", type=int, default=64)
    p.add_argument("--cell-pitch", type=float, default=0.025)
    p.add_argument("--image-kind", choices=["raster", "features", "none"],
                   default="raster")
    p.add_argument("--image-size", type=int, default=48)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("annotate", help="recompute contact labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--tau1", type=float, required=True)
    p.add_argument("--tau2", type=float, required=True)
    p.add_argument("--radius", type=int, required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("calibrate", help="rigid registration of marker files")
    p.add_argument("--markers-world", required=True)
    p.add_argument("--markers-local", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train an estimator")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--baseline", choices=["mean-pose"], default=None)
    p.add_argument("--gt-bypass", action="store_true",
                   help="feed ground truth as the prediction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate metric reports")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", choices=["csv", "json", "md"], default="md")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("cop-trace", help="per-frame CoP/CoM trace as CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=1e-6)
    p.add_argument("--plot", default=None, help="optional PNG path")
    p.set_defaults(func=cmd_cop_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else _USAGE_EXIT
        return code
    except (ValidationError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return _USAGE_EXIT
    except FrappeKitError as exc:
        _log(f"error: {exc}")
        return _RUNTIME_EXIT
    except Exception as exc:  # noqa: BLE001
        _log(f"internal error: {type(exc).__name__}: {exc}")
        return _RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
