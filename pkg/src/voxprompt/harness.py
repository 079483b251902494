"""Episode driver: the interactive refinement loop, stochastic training
sampling, multiclass fusion, and per-class time budgets."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .clickgen import apply_click, generate_click
from .crop import CropSpec, compute_crop, extract_patch, paste_prediction, to_patch_coords
from .errors import EmptyClassList, InvalidBBox, ShapeMismatch
from .prompts import BBox3, Click, default_bbox, stamp_sphere
from .scoring import DEFAULT_NSD_TAU, IterationScore, auc, dice, nsd, trapezoid
from .segmenter import SegmenterBase

PRNG_NAME = "pcg64"  # numpy default_rng bit generator

Shape3 = tuple[int, int, int]


@dataclass(frozen=True)
class EpisodeConfig:
    n_clicks: int = 5
    bbox_mode: str = "provided"  # provided | default | none
    per_class_budget: float = 90.0  # seconds
    p_click: float = 0.5
    seed: int = 0
    tau: float = DEFAULT_NSD_TAU
    patch: Shape3 = (192, 192, 192)
    sample_ties: bool = False

    def __post_init__(self):
        if self.n_clicks < 0:
            raise ValueError("n_clicks must be >= 0")
        if not 0.0 <= self.p_click <= 1.0:
            raise ValueError("p_click must be in [0, 1]")
        if self.per_class_budget <= 0:
            raise ValueError("per_class_budget must be positive")
        if self.bbox_mode not in ("provided", "default", "none"):
            raise ValueError(f"bad bbox_mode {self.bbox_mode!r}")


@dataclass
class EpisodeResult:
    per_iteration: list  # IterationScore; index 0 is the bbox-only pass when present
    click_scores: list  # the n_clicks scores AUC is computed from
    dsc_auc: float
    nsd_auc: float
    dsc_final: float
    nsd_final: float
    clicks: list  # Click actually issued
    budget_exceeded: bool
    seed: int
    prng: str = PRNG_NAME
    final_prob: np.ndarray | None = None  # full-volume probabilities, not serialized

    def to_json(self, class_id=None) -> dict:
        d = {
            "scores": [
                {"iter": i, "dsc": s.dsc, "nsd": s.nsd, "wall_ms": s.wall_ms}
                for i, s in enumerate(self.per_iteration)
            ],
            "dsc_auc": self.dsc_auc,
            "nsd_auc": self.nsd_auc,
            "dsc_final": self.dsc_final,
            "nsd_final": self.nsd_final,
            "budget_exceeded": self.budget_exceeded,
            "clicks": [
                {"z": c.center[0], "y": c.center[1], "x": c.center[2],
                 "polarity": c.polarity}
                for c in self.clicks
            ],
            "seed": self.seed,
            "prng": self.prng,
        }
        if class_id is not None:
            d = {"class_id": class_id, **d}
        return d


@dataclass(frozen=True)
class TrainingSample:
    prompt: np.ndarray  # (5, P, P, P) float32 in patch coordinates
    target: np.ndarray  # binary ground truth in patch coordinates
    setting: str  # "bbox-only" | "one-click-with-prev"


def fuse_multiclass(probs: list[np.ndarray]) -> np.ndarray:
    """Argmax fusion over background and foreground probabilities.

    Background probability is the product of the per-class negatives;
    label 0 is background, ties break toward the smallest index.
    """
    if len(probs) == 0:
        raise EmptyClassList("need at least one class")
    shape = probs[0].shape
    for p in probs:
        if p.shape != shape:
            raise ShapeMismatch(f"{p.shape} vs {shape}")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in probs])
    p_bg = np.prod(1.0 - stack, axis=0)
    all_p = np.concatenate([p_bg[None], stack], axis=0)
    return np.argmax(all_p, axis=0).astype(np.int32)


def _resolve_bbox(bbox: BBox3 | None, mode: str, shape: Shape3) -> BBox3 | None:
    if bbox is not None:
        return bbox
    if mode == "provided":
        raise InvalidBBox("bbox_mode 'provided' but no bbox given")
    if mode == "default":
        return default_bbox(shape)
    return None


def build_prompt_patch(
    image: np.ndarray,
    bbox: BBox3 | None,
    clicks: list[Click],
    prev_bin: np.ndarray | None,
    spec: CropSpec,
) -> np.ndarray:
    """Assemble the 5-channel patch: image trilinear, bbox/prev nearest,
    clicks mapped through the crop and stamped as radius-4 spheres in
    patch coordinates."""
    target = spec.target_patch
    out = np.zeros((5,) + target, dtype=np.float32)
    out[0] = extract_patch(image.astype(np.float32), spec, "trilinear")
    if bbox is not None:
        mask = np.zeros(image.shape, dtype=np.uint8)
        z0, y0, x0 = bbox.lo
        z1, y1, x1 = bbox.hi
        mask[z0:z1, y0:y1, x0:x1] = 1
        out[1] = extract_patch(mask, spec, "nearest").astype(np.float32)
    for c in clicks:
        p = to_patch_coords(spec, c.center)
        if p is None:
            continue
        chan = 2 if c.polarity == "positive" else 3
        stamp_sphere(out[chan], p)
    if prev_bin is not None and (prev_bin > 0).any():
        out[4] = extract_patch(
            (prev_bin > 0).astype(np.uint8), spec, "nearest"
        ).astype(np.float32)
    return out


def run_episode(
    image: np.ndarray,
    gt: np.ndarray,
    bbox: BBox3 | None,
    seg: SegmenterBase,
    cfg: EpisodeConfig = EpisodeConfig(),
) -> EpisodeResult:
    """Drive one interactive refinement episode for a single class.

    With a bbox (given or defaulted), iteration 0 is the bbox-only
    prediction; it is scored but excluded from AUC. Each click round
    generates the next corrective click against the pasted full-volume
    prediction, re-runs the segmenter with all prompts plus the hard
    previous segmentation, and scores the result. Exceeding the per-class
    wall-clock budget sets budget_exceeded and zeroes all aggregates.
    """
    if image.shape != gt.shape:
        raise ShapeMismatch(f"{image.shape} vs {gt.shape}")
    shape = image.shape
    box = _resolve_bbox(bbox, cfg.bbox_mode, shape)
    crop_box = box if box is not None else BBox3((0, 0, 0), shape)
    spec = compute_crop(crop_box, cfg.patch, shape)
    rng = np.random.default_rng(cfg.seed)

    clicks: list[Click] = []
    per_iteration: list[IterationScore] = []
    click_scores: list[IterationScore] = []
    prob_full = np.zeros(shape, dtype=np.float32)
    prev_bin = np.zeros(shape, dtype=np.uint8)
    spent = 0.0
    budget_exceeded = False

    def predict() -> np.ndarray:
        patch = build_prompt_patch(image, box, clicks, prev_bin, spec)
        seg.set_frame(spec, shape)
        prob_patch = seg.segment(patch)
        return paste_prediction(prob_patch, spec, shape)

    def score(elapsed_ms: float) -> IterationScore:
        pred_bin = prob_full > 0.5
        return IterationScore(
            dsc=dice(pred_bin, gt), nsd=nsd(pred_bin, gt, cfg.tau), wall_ms=elapsed_ms
        )

    if box is not None:
        t0 = time.perf_counter()
        prob_full = predict()
        prev_bin = (prob_full > 0.5).astype(np.uint8)
        elapsed = time.perf_counter() - t0
        spent += elapsed
        per_iteration.append(score(elapsed * 1000.0))
        if spent > cfg.per_class_budget:
            budget_exceeded = True

    for _ in range(cfg.n_clicks):
        if budget_exceeded:
            break
        t0 = time.perf_counter()
        proposal = generate_click(prob_full, gt, rng=rng, sample_ties=cfg.sample_ties)
        if proposal is None:
            # error-free: no click issued, the prediction carries over
            elapsed = time.perf_counter() - t0
            spent += elapsed
            s = score(elapsed * 1000.0)
        else:
            clicks = apply_click(clicks, proposal)
            prob_full = predict()
            prev_bin = (prob_full > 0.5).astype(np.uint8)
            elapsed = time.perf_counter() - t0
            spent += elapsed
            s = score(elapsed * 1000.0)
        per_iteration.append(s)
        click_scores.append(s)
        if spent > cfg.per_class_budget:
            budget_exceeded = True

    if budget_exceeded:
        dsc_auc = nsd_auc = dsc_final = nsd_final = 0.0
    else:
        ds = [s.dsc for s in click_scores]
        ns = [s.nsd for s in click_scores]
        dsc_auc = auc(ds) if len(ds) == 5 else trapezoid(ds)
        nsd_auc = auc(ns) if len(ns) == 5 else trapezoid(ns)
        last = per_iteration[-1] if per_iteration else IterationScore(0.0, 0.0, 0.0)
        dsc_final, nsd_final = last.dsc, last.nsd

    return EpisodeResult(
        per_iteration=per_iteration,
        click_scores=click_scores,
        dsc_auc=dsc_auc,
        nsd_auc=nsd_auc,
        dsc_final=dsc_final,
        nsd_final=nsd_final,
        clicks=clicks,
        budget_exceeded=budget_exceeded,
        seed=cfg.seed,
        final_prob=prob_full,
    )


def sample_training_example(
    image: np.ndarray,
    gt: np.ndarray,
    bbox: BBox3 | None,
    seg: SegmenterBase,
    cfg: EpisodeConfig = EpisodeConfig(),
) -> TrainingSample:
    """Draw one of the two training settings with a seeded Bernoulli(p_click).

    Setting 0: bbox-only prompt. Setting 1: run the bbox-only prediction,
    hard-threshold it into the previous-segmentation channel, and add the
    one generated click. A perfect prediction leaves the click channels
    empty (documented fallback).
    """
    if image.shape != gt.shape:
        raise ShapeMismatch(f"{image.shape} vs {gt.shape}")
    shape = image.shape
    box = _resolve_bbox(bbox, cfg.bbox_mode if bbox is None else "provided", shape)
    crop_box = box if box is not None else BBox3((0, 0, 0), shape)
    spec = compute_crop(crop_box, cfg.patch, shape)
    rng = np.random.default_rng(cfg.seed)
    target = extract_patch((gt > 0).astype(np.uint8), spec, "nearest")

    one_click = bool(rng.random() < cfg.p_click)
    if not one_click:
        prompt = build_prompt_patch(image, box, [], None, spec)
        return TrainingSample(prompt=prompt, target=target, setting="bbox-only")

    bare = build_prompt_patch(image, box, [], None, spec)
    seg.set_frame(spec, shape)
    prob_full = paste_prediction(seg.segment(bare), spec, shape)
    prev_bin = (prob_full > 0.5).astype(np.uint8)
    proposal = generate_click(prob_full, gt, rng=rng, sample_ties=cfg.sample_ties)
    clicks = [proposal.click] if proposal is not None else []
    prompt = build_prompt_patch(image, box, clicks, prev_bin, spec)
    return TrainingSample(prompt=prompt, target=target, setting="one-click-with-prev")


def evaluate_case(
    image: np.ndarray,
    gts: list[np.ndarray],
    bboxes: list[BBox3 | None],
    seg,
    cfg: EpisodeConfig = EpisodeConfig(),
) -> tuple[list[EpisodeResult], np.ndarray]:
    """Run one episode per class and fuse the final probabilities.

    `seg` is either a shared SegmenterBase or a factory gt -> SegmenterBase
    (needed for per-class oracles). Returns the per-class results and the
    fused label map (0 = background).
    """
    if len(gts) == 0:
        raise EmptyClassList("need at least one class")
    if len(bboxes) != len(gts):
        raise ShapeMismatch("bboxes and gts must have equal length")
    results = []
    for gt, box in zip(gts, bboxes):
        backend = seg(gt) if not isinstance(seg, SegmenterBase) else seg
        results.append(run_episode(image, gt, box, backend, cfg))
    fused = fuse_multiclass([r.final_prob for r in results])
    return results, fused
