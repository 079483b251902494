"""Command-line front door.

Exit codes: 0 success, 2 argument/format error, 3 I/O error,
4 segmenter failure. Every command writing an output file also writes a
run manifest (<out>.manifest.json) with config echo, input digests, tool
version and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clickgen import generate_click
from .crop import compute_crop
from .errors import (
    ChildExitNonzero,
    ChildLaunchFailed,
    ChildTimeout,
    ProtocolError,
    VoxPromptError,
)
from .harness import EpisodeConfig, evaluate_case, fuse_multiclass, run_episode
from .prompts import BBox3
from .segmenter import (
    ExternalSegmenter,
    OracleConfig,
    OracleSegmenter,
    RegionGrowthSegmenter,
)
from .volume import (
    WINDOW_PRESETS,
    decode_npy,
    decode_vvol,
    encode_vvol,
    preprocess_ct,
    preprocess_percentile,
)

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_IO = 3
EXIT_SEGMENTER = 4

_SEGMENTER_ERRORS = (ChildLaunchFailed, ChildTimeout, ChildExitNonzero, ProtocolError)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    try:
        return int(os.environ.get("VOXPROMPT_SEED", "0"))
    except ValueError:
        return 0


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _write_bytes(path: str, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def load_volume(path: str) -> np.ndarray:
    data = _read_bytes(path)
    try:
        if path.endswith(".npy"):
            return decode_npy(data)
        return decode_vvol(data)
    except VoxPromptError as exc:
        raise CliError(EXIT_FORMAT, f"{path}: {exc}") from exc


def _digest(path: str) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def write_manifest(out_path: str, command: str, config: dict, inputs: list[str], seed: int) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: _digest(p) for p in inputs},
        "version": __version__,
        "seed": seed,
    }
    _write_bytes(out_path + ".manifest.json", json.dumps(manifest, indent=2).encode())


def _parse_bbox(text: str) -> BBox3:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 6:
        raise CliError(EXIT_FORMAT, "--bbox needs z0,y0,x0,z1,y1,x1")
    return BBox3(tuple(parts[:3]), tuple(parts[3:]))


def _parse_triple(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise CliError(EXIT_FORMAT, "expected D,H,W or a single size")
    return tuple(parts)


def make_segmenter(spec_text: str, args, gt: np.ndarray | None):
    if spec_text == "oracle":
        if gt is None:
            raise CliError(EXIT_FORMAT, "oracle segmenter requires a ground truth")
        cfg = OracleConfig(
            flip_rate=args.flip_rate,
            blob_count=args.blob_count,
            decay=args.decay,
            seed=args.seed,
        )
        return OracleSegmenter(gt, cfg)
    if spec_text == "growth":
        return RegionGrowthSegmenter(tol=args.tol)
    if spec_text.startswith("exec:"):
        return ExternalSegmenter(spec_text[5:].split(), timeout=args.budget)
    raise CliError(EXIT_FORMAT, f"unknown segmenter {spec_text!r}")


# --- subcommands ---


def cmd_convert(args) -> int:
    data = _read_bytes(args.input)
    try:
        vol = decode_npy(data) if args.from_format == "npy" else decode_vvol(data)
    except VoxPromptError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    _write_bytes(args.output, encode_vvol(vol))
    write_manifest(args.output, "convert", {"from": args.from_format, "to": "vvol"},
                   [args.input], _default_seed())
    return EXIT_OK


def cmd_preprocess(args) -> int:
    vol = load_volume(args.input)
    try:
        if args.mode == "ct":
            out = preprocess_ct(vol, WINDOW_PRESETS[args.preset])
        else:
            out = preprocess_percentile(vol)
            if out.dtype == np.uint8 and not out.any() and vol.size > 0 and vol.dtype != np.uint8:
                print("warning: degenerate percentile range, output all zeros",
                      file=sys.stderr)
    except (TypeError, VoxPromptError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    _write_bytes(args.output, encode_vvol(out))
    write_manifest(args.output, "preprocess",
                   {"mode": args.mode, "preset": args.preset},
                   [args.input], _default_seed())
    return EXIT_OK


def cmd_crop(args) -> int:
    bbox = _parse_bbox(args.bbox)
    shape = _parse_triple(args.shape)
    patch = _parse_triple(args.patch)
    try:
        spec = compute_crop(bbox, patch, shape)
    except VoxPromptError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    out = {
        "z": spec.zoom,
        "scaled_patch": list(spec.scaled_patch),
        "origin": list(spec.origin),
        "target_patch": list(spec.target_patch),
    }
    print(json.dumps(out))
    return EXIT_OK


def cmd_clickgen(args) -> int:
    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    try:
        prop = generate_click(pred.astype(np.float32), gt)
    except VoxPromptError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    if prop is None:
        print(json.dumps(None))
    else:
        z, y, x = prop.click.center
        print(json.dumps({"z": z, "y": y, "x": x,
                          "polarity": prop.click.polarity,
                          "component_size": prop.component_size}))
    return EXIT_OK


def _episode_config(args) -> EpisodeConfig:
    if args.no_bbox:
        mode = "none"
    elif args.default_bbox:
        mode = "default"
    else:
        mode = "provided"
    return EpisodeConfig(
        n_clicks=args.clicks,
        bbox_mode=mode,
        per_class_budget=args.budget,
        seed=args.seed,
        tau=args.tau,
        patch=_parse_triple(args.patch),
    )


def cmd_simulate(args) -> int:
    image = load_volume(args.image)
    gt = load_volume(args.gt)
    bbox = _parse_bbox(args.bbox) if args.bbox else None
    if bbox is None and not (args.default_bbox or args.no_bbox):
        raise CliError(EXIT_FORMAT, "one of --bbox / --default-bbox / --no-bbox required")
    cfg = _episode_config(args)
    seg = make_segmenter(args.segmenter, args, gt)
    try:
        result = run_episode(image, gt, bbox, seg, cfg)
    except _SEGMENTER_ERRORS as exc:
        print(f"segmenter failure: {exc}", file=sys.stderr)
        return EXIT_SEGMENTER
    report = result.to_json()
    _write_bytes(args.out, json.dumps(report, indent=2).encode())
    write_manifest(args.out, "simulate",
                   {"segmenter": args.segmenter, "clicks": args.clicks,
                    "budget": args.budget, "tau": args.tau,
                    "bbox": args.bbox, "default_bbox": args.default_bbox,
                    "no_bbox": args.no_bbox, "patch": args.patch},
                   [args.image, args.gt], args.seed)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        cases = json.loads(_read_bytes(args.cases))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_FORMAT, f"bad cases manifest: {exc}") from exc
    case_reports = []
    by_modality: dict[str, list[dict]] = {}
    for case in cases:
        image = load_volume(case["image"])
        gts, bboxes = [], []
        for cls in case["classes"]:
            gts.append(load_volume(cls["gt"]))
            bb = cls.get("bbox")
            bboxes.append(BBox3(tuple(bb[:3]), tuple(bb[3:])) if bb else None)
        if args.segmenter == "oracle":
            seg = lambda gt: make_segmenter("oracle", args, gt)  # noqa: E731
        else:
            seg = make_segmenter(args.segmenter, args, None)
        cfg = _episode_config(args)
        try:
            results, fused = evaluate_case(image, gts, bboxes, seg, cfg)
        except _SEGMENTER_ERRORS as exc:
            print(f"segmenter failure: {exc}", file=sys.stderr)
            return EXIT_SEGMENTER
        rep = {
            "name": case.get("name", case["image"]),
            "modality": case.get("modality", "unknown"),
            "classes": [r.to_json(class_id=i + 1) for i, r in enumerate(results)],
            "fused_labels": int(fused.max()),
        }
        case_reports.append(rep)
        by_modality.setdefault(rep["modality"], []).append(rep)

    def _means(reports):
        keys = ("dsc_final", "nsd_final", "dsc_auc", "nsd_auc")
        vals = {k: [] for k in keys}
        for rep in reports:
            for cls in rep["classes"]:
                for k in keys:
                    vals[k].append(cls[k])
        return {k: (sum(v) / len(v) if v else 0.0) for k, v in vals.items()}

    report = {
        "cases": case_reports,
        "per_modality": {m: _means(r) for m, r in sorted(by_modality.items())},
        "overall": _means(case_reports),
    }
    _write_bytes(args.out, json.dumps(report, indent=2).encode())
    write_manifest(args.out, "evaluate",
                   {"segmenter": args.segmenter, "clicks": args.clicks,
                    "budget": args.budget, "tau": args.tau, "patch": args.patch},
                   [args.cases], args.seed)
    return EXIT_OK


def _add_episode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segmenter", default="growth",
                   help="oracle | growth | exec:<command>")
    p.add_argument("--clicks", type=int, default=5)
    p.add_argument("--budget", type=float, default=90.0)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--patch", default="192")
    p.add_argument("--tol", type=float, default=10.0,
                   help="intensity tolerance for the growth segmenter")
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.add_argument("--blob-count", type=int, default=0)
    p.add_argument("--decay", type=float, default=1.0)
    p.add_argument("--default-bbox", action="store_true")
    p.add_argument("--no-bbox", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxprompt")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert NPY/VVOL volumes to VVOL")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--from", dest="from_format", choices=("npy", "vvol"), default="npy")
    p.add_argument("--to", dest="to_format", choices=("vvol",), default="vvol")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("preprocess", help="intensity preprocessing to uint8 [0,255]")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=("ct", "percentile"), default="percentile")
    p.add_argument("--preset", choices=sorted(WINDOW_PRESETS), default="soft")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("crop", help="print the crop spec for a bbox as JSON")
    p.add_argument("--bbox", required=True, help="z0,y0,x0,z1,y1,x1")
    p.add_argument("--shape", required=True, help="D,H,W")
    p.add_argument("--patch", default="192")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("clickgen", help="propose the next corrective click")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_clickgen)

    p = sub.add_parser("simulate", help="run one interactive episode")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--bbox", help="z0,y0,x0,z1,y1,x1")
    p.add_argument("--out", required=True)
    _add_episode_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="evaluate a manifest of cases")
    p.add_argument("--cases", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_episode_flags(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except _SEGMENTER_ERRORS as exc:
        print(f"segmenter failure: {exc}", file=sys.stderr)
        return EXIT_SEGMENTER
    except VoxPromptError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
