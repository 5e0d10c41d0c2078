"""Command-line surface for the full pipeline.

Subcommands: train-forest, compile, fuse, detect, verify, bench,
localize, filter-ride, eval. Every command is a pure function of its
named inputs; the FOREST2FCN_THREADS environment variable caps how many
images `detect` processes concurrently. Failures exit nonzero with a
single machine-parsable `error: <kind>: <detail>` line on stderr.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import convnet, detector, evalkit, formats, geo, kernels, netmap, ridefilter
from .convnet import ShapeError
from .forest import TrainConfig, train_forest
from .formats import ChecksumError, FormatError, VersionError


class CliError(Exception):
    def __init__(self, kind, detail):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


def _need_file(path):
    if not Path(path).is_file():
        raise CliError("missing-file", path)
    return path


def _load_matrix(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.replace(",", " ").split()])
    if not rows:
        raise CliError("format", f"{path} holds no feature vectors")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise CliError("format", f"{path} has inconsistent vector lengths")
    return np.asarray(rows)


def _load_labels(path):
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                labels.append(int(line))
    return np.asarray(labels, dtype=np.intp)


def _parse_constants(text):
    try:
        c01, c12 = (float(v) for v in text.split(","))
    except ValueError:
        raise CliError("usage", f"--constants expects 'c01,c12', got {text!r}") from None
    return netmap.MapConstants(c01=c01, c12=c12)


def _timestamp():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_or_print(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------- subcommands

def cmd_train_forest(args):
    X = _load_matrix(_need_file(args.features))
    y = _load_labels(_need_file(args.labels))
    if y.shape[0] != X.shape[0]:
        raise CliError("format", "label count does not match feature rows")
    cfg = TrainConfig(n_trees=args.trees, max_depth=args.depth,
                      min_samples_split=args.min_split,
                      features_per_split=args.features_per_split,
                      bootstrap=not args.no_bootstrap, rng_seed=args.seed)
    f = train_forest(X, y, cfg)
    formats.save_forest(f, args.out)
    print(f"trained {len(f.trees)} trees on {X.shape[0]} samples "
          f"({f.n_classes} classes, input_dim {f.input_dim}) -> {args.out}")
    return 0


def cmd_compile(args):
    f = formats.load_forest(_need_file(args.forest))
    head = netmap.map_forest(f, _parse_constants(args.constants))
    formats.save_head(head, args.out)
    print(f"compiled {len(f.trees)} trees into {head.n_splits} split neurons "
          f"and {head.n_leaves} leaf neurons -> {args.out}")
    return 0


def cmd_fuse(args):
    feature = formats.load_network(_need_file(args.feature_net))
    head = formats.load_head(_need_file(args.head))
    fused = convnet.fuse(feature, head)
    if args.classes:
        names = args.classes.split(",")
        if len(names) != head.n_classes:
            raise CliError("usage", f"--classes names {len(names)} classes, "
                                    f"model has {head.n_classes}")
        bad = [n for n in names if not n or " " in n or "," in n]
        if bad or len(set(names)) != len(names):
            raise CliError("usage", "class names must be unique, nonempty and "
                                    "free of spaces/commas")
    else:
        names = ["background"] + [f"class{i}" for i in range(1, head.n_classes)]
    bundle = formats.ModelBundle(feature_net=feature, rf_head=head,
                                 fused_net=fused, class_names=names)
    formats.save_bundle(bundle, args.out)
    print(f"fused model: patch {bundle.patch_size}, stride {bundle.total_stride}, "
          f"classes {','.join(names)} -> {args.out}")
    return 0


def _detector_config(args, bundle):
    if args.config:
        cfg = formats.load_detector_config(_need_file(args.config), bundle.class_names)
    else:
        cfg = detector.DetectorConfig(
            part_table=detector.default_part_table(bundle.class_names))
    if args.scales:
        cfg.scales = [float(s) for s in args.scales.split(",")]
    if args.tmin is not None:
        cfg.t_min = args.tmin
    return cfg


def cmd_detect(args):
    bundle = formats.load_bundle(_need_file(args.model))
    cfg = _detector_config(args, bundle)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sorted(args.images)
    for img in images:
        _need_file(img)

    def run(img_path):
        image = formats.load_image(img_path)
        boxes = detector.detect(image, bundle.fused_net, cfg)
        stem = Path(img_path).stem
        formats.save_detections(stem, boxes, bundle.class_names,
                                out_dir / f"{stem}.det.txt")
        return stem, len(boxes)

    workers = max(1, int(os.environ.get("FOREST2FCN_THREADS", "1")))
    if workers > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, images))
    else:
        results = [run(img) for img in images]
    for stem, count in results:
        print(f"{stem}: {count} boxes")
    return 0


def cmd_verify(args):
    f = formats.load_forest(_need_file(args.forest))
    bundle = formats.load_bundle(_need_file(args.model))
    rng = np.random.default_rng(args.seed)
    X = netmap.threshold_clear_samples(f, args.samples, rng, margin=args.margin)
    hard = netmap.verify_equivalence(
        f, netmap.map_forest(f, netmap.MapConstants(hard_mode=True)),
        rng.uniform(size=(args.samples, f.input_dim)), margin_eps=0.0)
    constants = bundle.rf_head.constants
    soft = netmap.verify_equivalence(f, bundle.rf_head, X, margin_eps=args.margin)

    # Fully convolutional vs patch-wise spot check on a random image.
    patch = bundle.patch_size
    stride = bundle.total_stride
    image = rng.uniform(size=(patch + 8 * stride, patch + 8 * stride, 3)).astype(np.float32)
    maps = convnet.forward(bundle.fused_net, image)
    max_cell_diff = 0.0
    for i in range(maps.shape[0]):
        for j in range(maps.shape[1]):
            window = image[stride * i:stride * i + patch, stride * j:stride * j + patch]
            cell = convnet.forward(bundle.fused_net, window).reshape(-1)
            max_cell_diff = max(max_cell_diff, float(np.abs(maps[i, j] - cell).max()))

    ok = (hard.n_agree == hard.n_tested and hard.max_prob_gap <= 1e-12
          and soft.n_agree == soft.n_tested and max_cell_diff < 1e-4)
    lines = [
        "forest2fcn-verify-report 1",
        f"generated {_timestamp()}",
        f"constants c01 {constants.c01:g} c12 {constants.c12:g} c23 {constants.c23:g}",
        f"hard n_tested {hard.n_tested} n_agree {hard.n_agree} "
        f"max_prob_gap {hard.max_prob_gap:.3e}",
        f"soft n_tested {soft.n_tested} n_agree {soft.n_agree} "
        f"max_prob_gap {soft.max_prob_gap:.3e} margin {args.margin:g}",
        f"fcn_patch cells {maps.shape[0] * maps.shape[1]} max_abs_diff {max_cell_diff:.3e}",
        f"result {'PASS' if ok else 'FAIL'}",
    ]
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0 if ok else 1


def cmd_bench(args):
    bundle = formats.load_bundle(_need_file(args.model))
    image = formats.load_image(_need_file(args.image))
    scales = [float(s) for s in args.scales.split(",")]
    fused = bundle.fused_net
    patch = bundle.patch_size
    stride = bundle.total_stride

    # Warm both paths (allocator and BLAS thread pools) before timing.
    detector.probability_maps(fused, image, scales)
    convnet.forward(fused, image[:patch, :patch])

    t0 = time.perf_counter()
    maps, _ = detector.probability_maps(fused, image, scales)
    fcn_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    patch_maps = []
    n_patches = 0
    for s in scales:
        oh = max(1, int(round(image.shape[0] * s)))
        ow = max(1, int(round(image.shape[1] * s)))
        if oh < patch or ow < patch:
            continue
        scaled = convnet.resize_bilinear(image, oh, ow)
        rows = (oh - patch) // stride + 1
        cols = (ow - patch) // stride + 1
        grid = np.zeros((rows, cols, maps[0].probs.shape[2]), dtype=np.float32)
        for i in range(rows):
            for j in range(cols):
                window = scaled[stride * i:stride * i + patch,
                                stride * j:stride * j + patch]
                grid[i, j] = convnet.forward(fused, window).reshape(-1)
                n_patches += 1
        patch_maps.append(grid)
    patch_seconds = time.perf_counter() - t0

    max_diff = 0.0
    for grid, sm in zip(patch_maps, maps):
        h = min(grid.shape[0], sm.probs.shape[0])
        w = min(grid.shape[1], sm.probs.shape[1])
        max_diff = max(max_diff, float(np.abs(grid[:h, :w] - sm.probs[:h, :w]).max()))

    speedup = patch_seconds / fcn_seconds if fcn_seconds > 0 else float("inf")
    lines = [
        "forest2fcn-bench-report 1",
        f"generated {_timestamp()}",
        f"kernel_backend {kernels.backend_name()}",
        f"image {args.image} {image.shape[0]}x{image.shape[1]}",
        "scales " + ",".join(f"{s:g}" for s in scales),
        f"patchwise_seconds {patch_seconds:.4f} patches {n_patches}",
        f"fcn_seconds {fcn_seconds:.4f}",
        f"speedup {speedup:.2f}",
        f"max_abs_diff {max_diff:.3e}",
        f"result {'PASS' if fcn_seconds < patch_seconds else 'FAIL'}",
    ]
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0 if fcn_seconds < patch_seconds else 1


def cmd_localize(args):
    camera_cfg = formats.load_camera_config(_need_file(args.camera))
    track = formats.load_track(_need_file(args.track))
    class_names = _scan_class_names(args.detections)
    signs = []
    for det_path in sorted(args.detections):
        image_id, boxes = formats.load_detections(_need_file(det_path), class_names)
        if image_id not in track:
            raise CliError("format", f"no track entry for image {image_id!r}")
        img_geo = track[image_id]
        for box in boxes:
            name = class_names[box.cls]
            width, height = camera_cfg.size_for(name)
            spec = geo.SignSpec(cls=box.cls, physical_width=width, physical_height=height)
            sign = geo.project_sign(img_geo, box, camera_cfg.camera, spec)
            sign.source_image = image_id
            signs.append(sign)
    formats.save_geo_document(signs, class_names, args.out)
    print(f"localized {len(signs)} signs -> {args.out}")
    return 0


def cmd_filter_ride(args):
    cfg = ridefilter.FilterConfig(
        speed_sigma=args.speed_sigma,
        speed_drop_threshold=args.speed_drop,
        accel_sigma_short=args.accel_sigma_short,
        accel_sigma_long=args.accel_sigma_long,
        ratio_k=args.ratio_k,
        keep_window=args.keep_window)
    speed = formats.load_speed_trace(_need_file(args.speed))
    accel = formats.load_accel_trace(_need_file(args.accel))
    ids, stamps = formats.load_image_index(_need_file(args.images))
    s_events = ridefilter.speed_events(speed, cfg)
    a_events = ridefilter.accel_events(accel, cfg)
    kept = ridefilter.filter_images(stamps, s_events, a_events, cfg.keep_window)
    text = "".join(ids[i] + "\n" for i in kept)
    _write_or_print(text, args.out)
    if args.out:
        print(f"kept {len(kept)} of {len(ids)} images "
              f"({len(s_events)} speed events, {len(a_events)} accel events)")
    return 0


def _scan_class_names(det_paths, truth_path=None):
    names = set()
    for path in det_paths:
        with open(_need_file(path), encoding="utf-8") as fh:
            for line in fh:
                fields = line.split()
                if fields and fields[0] == "box":
                    names.add(fields[5] if len(fields) == 7 else fields[-1])
    if truth_path:
        with open(_need_file(truth_path), encoding="utf-8") as fh:
            for line in fh:
                fields = line.split()
                if fields and fields[0] == "box":
                    names.add(fields[6])
    return sorted(names)


def cmd_eval(args):
    class_names = _scan_class_names(args.detections, args.truth)
    dets = []
    for path in sorted(args.detections):
        image_id, boxes = formats.load_detections(path, class_names)
        for b in boxes:
            dets.append(evalkit.Detection(image_id, b.x, b.y, b.w, b.h, b.cls, b.score))
    gts = formats.load_ground_truth(args.truth, class_names)
    curves, aps, mean_ap, notices = evalkit.evaluate(dets, gts, iou_min=args.iou)
    thresholds, t_notices = evalkit.select_thresholds(curves)
    lines = ["forest2fcn-eval-report 1",
             f"generated {_timestamp()}",
             "matching greedy-by-score",
             f"iou_min {args.iou:g}"]
    for cls in sorted(aps):
        lines.append(f"class {class_names[cls]} ap {aps[cls]:.6f} "
                     f"n_gt {sum(1 for g in gts if g.cls == cls)} "
                     f"threshold {thresholds.get(cls, 1.01):g}")
    lines.append(f"map {mean_ap:.6f}")
    for notice in notices + t_notices:
        lines.append(f"notice {notice}")
    for cls in sorted(curves):
        curve = curves[cls]
        triples = " ".join(f"{t:g}:{p:.4f}:{r:.4f}" for t, p, r in
                           zip(curve.thresholds, curve.precisions, curve.recalls))
        lines.append(f"pr {class_names[cls]} {triples}")
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0


# ----------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="forest2fcn",
        description="Compile random forests into networks and run the "
                    "fully convolutional detection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-forest", help="train a random forest from feature vectors")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--min-split", type=int, default=2)
    p.add_argument("--features-per-split", type=int, default=None)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_forest)

    p = sub.add_parser("compile", help="map a forest to a network head")
    p.add_argument("--forest", required=True)
    p.add_argument("--constants", default="10000,10000", metavar="c01,c12")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("fuse", help="fuse a feature network with a compiled head")
    p.add_argument("--feature-net", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--classes", default=None, help="comma-separated class names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("detect", help="run detection over images")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--scales", default=None, help="comma-separated scale factors")
    p.add_argument("--tmin", type=float, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("verify", help="check forest/network equivalence")
    p.add_argument("--forest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=float, default=1e-3)
    p.add_argument("--hard-mode", action="store_true",
                   help="kept for compatibility; hard mode always runs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time the fused model against a naive patch loop")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--scales", default="1.0,0.76923077,0.59171598")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("localize", help="project detections onto the map")
    p.add_argument("--track", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("detections", nargs="+")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("filter-ride", help="keep images near speed/accel events")
    p.add_argument("--speed", required=True)
    p.add_argument("--accel", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--keep-window", type=float, default=3.0,
                   help="seconds of images kept around each event")
    # Bandwidths are sigmas in seconds on the resampled grids (speed 1 Hz,
    # acceleration 10 Hz).
    p.add_argument("--speed-sigma", type=float, default=2.0)
    p.add_argument("--speed-drop", type=float, default=1.0,
                   help="km/h per second of deceleration that marks an event")
    p.add_argument("--accel-sigma-short", type=float, default=1.5)
    p.add_argument("--accel-sigma-long", type=float, default=10.0)
    p.add_argument("--ratio-k", type=float, default=2.8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_filter_ride)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.add_argument("detections", nargs="+")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err.kind}: {err.detail}", file=sys.stderr)
    except FileNotFoundError as err:
        print(f"error: missing-file: {err.filename}", file=sys.stderr)
    except ChecksumError as err:
        print(f"error: checksum: {err}", file=sys.stderr)
    except VersionError as err:
        print(f"error: version: {err}", file=sys.stderr)
    except FormatError as err:
        print(f"error: format: {err}", file=sys.stderr)
    except ShapeError as err:
        print(f"error: dimension: {err}", file=sys.stderr)
    except ValueError as err:
        print(f"error: invalid: {err}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
