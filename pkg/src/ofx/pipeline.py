"""Augmentation workflow, dataset construction, manifests and splitting.

Every random draw for a sample comes from its own generator, derived from
``(global_seed, sample_id, stage_tag)``. Output therefore never depends on the
order in which samples are processed or on the number of workers.
"""

import csv
import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import imaging
from .offaxis import TiltDraws, WarpDraws, apply_tilt, warp_sample
from .quality import QualityDraws, apply_contrast, apply_motion_blur, apply_shadow

log = logging.getLogger(__name__)

ORIGINAL = "original"
UNCONSTRAINED = "unconstrained"
OFF_AXIS = "off_axis"
OFF_AXIS_UNCONSTRAINED = "off_axis_unconstrained"
SUBSETS = (ORIGINAL, UNCONSTRAINED, OFF_AXIS, OFF_AXIS_UNCONSTRAINED)
SPLITS = ("train", "val", "test")

DEFAULT_MULTIPLIERS = {OFF_AXIS: 2, UNCONSTRAINED: 1, OFF_AXIS_UNCONSTRAINED: 2}
DEFAULT_RATIOS = (0.70, 0.20, 0.10)

MANIFEST_HEADER = ["sample_id", "source_id", "image_path", "mask_path", "subset", "split", "plan_json"]

FLAG_NAMES = ("warped", "tilted", "contrasted", "blurred", "shadowed")

# (label, (warped, tilted, contrasted, blurred, shadowed), target share %, subset)
COMPOSITION_TARGETS = [
    ("Contrast & Blur", (0, 0, 1, 1, 0), 8.5, UNCONSTRAINED),
    ("Contrast & Blur & Shadows", (0, 0, 1, 1, 1), 8.5, UNCONSTRAINED),
    ("Warp", (1, 0, 0, 0, 0), 8.5, OFF_AXIS),
    ("Tilt", (0, 1, 0, 0, 0), 16.5, OFF_AXIS),
    ("Warp & Tilt", (1, 1, 0, 0, 0), 8.5, OFF_AXIS),
    ("Warp & Contrast & Blur", (1, 0, 1, 1, 0), 4.0, OFF_AXIS_UNCONSTRAINED),
    ("Tilt & Contrast & Blur", (0, 1, 1, 1, 0), 8.5, OFF_AXIS_UNCONSTRAINED),
    ("Tilt & Contrast & Blur & Shadows", (0, 1, 1, 1, 1), 8.5, OFF_AXIS_UNCONSTRAINED),
    ("Warp & Contrast & Blur & Shadows", (1, 0, 1, 1, 1), 4.0, OFF_AXIS_UNCONSTRAINED),
    ("Warp & Tilt & Contrast & Blur", (1, 1, 1, 1, 0), 4.0, OFF_AXIS_UNCONSTRAINED),
    ("Warp & Tilt & Contrast & Blur & Shadows", (1, 1, 1, 1, 1), 4.0, OFF_AXIS_UNCONSTRAINED),
    ("No augmentation", (0, 0, 0, 0, 0), 16.5, ORIGINAL),
]


class PlanError(ValueError):
    """An augmentation plan violates the workflow's structural rules."""


# --- seeding --------------------------------------------------------------

@dataclass(frozen=True)
class SeedPolicy:
    global_seed: int = 0

    def stream(self, sample_id, stage_tag):
        digest = hashlib.sha256(f"{sample_id}\0{stage_tag}".encode()).digest()
        words = [int(w) for w in np.frombuffer(digest, dtype="<u4")]
        seed = self.global_seed & (2**64 - 1)
        entropy = [seed & 0xFFFFFFFF, seed >> 32, *words]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# --- plans ----------------------------------------------------------------

@dataclass
class AugmentationPlan:
    sample_id: str
    subset: str
    warped: bool = False
    tilted: bool = False
    contrasted: bool = False
    blurred: bool = False
    shadowed: bool = False
    warp_draws: Optional[WarpDraws] = None
    tilt_draws: Optional[TiltDraws] = None
    quality_draws: Optional[QualityDraws] = None
    output_sha256: Optional[str] = None

    @property
    def flags(self):
        return tuple(bool(getattr(self, n)) for n in FLAG_NAMES)

    def validate(self):
        geo = self.warped or self.tilted
        qual = self.contrasted or self.blurred or self.shadowed
        if self.subset not in SUBSETS:
            raise PlanError(f"unknown subset {self.subset!r}")
        if self.subset == ORIGINAL and (geo or qual):
            raise PlanError("original samples carry no augmentation")
        if self.subset == OFF_AXIS and not (geo and not qual):
            raise PlanError("off-axis plans are geometric only")
        if self.subset == UNCONSTRAINED and not (self.contrasted and self.blurred and not geo):
            raise PlanError("unconstrained plans are contrast+blur without geometry")
        if self.subset == OFF_AXIS_UNCONSTRAINED and not (geo and self.contrasted and self.blurred):
            raise PlanError("combined plans need geometry plus contrast+blur")
        if self.shadowed and not (self.contrasted and self.blurred):
            raise PlanError("shadow only follows contrast and blur")
        if self.warped != (self.warp_draws is not None):
            raise PlanError("warp flag and warp draws disagree")
        if self.tilted != (self.tilt_draws is not None):
            raise PlanError("tilt flag and tilt draws disagree")
        if (self.contrasted or self.blurred) != (self.quality_draws is not None):
            raise PlanError("quality flags and quality draws disagree")
        if self.quality_draws is not None and self.shadowed != self.quality_draws.apply_shadow:
            raise PlanError("shadow flag and shadow draws disagree")
        return self

    def to_dict(self):
        d = {"sample_id": self.sample_id, "subset": self.subset}
        d.update({n: bool(getattr(self, n)) for n in FLAG_NAMES})
        d["warp_draws"] = self.warp_draws.to_dict() if self.warp_draws else None
        d["tilt_draws"] = self.tilt_draws.to_dict() if self.tilt_draws else None
        d["quality_draws"] = self.quality_draws.to_dict() if self.quality_draws else None
        if self.output_sha256 is not None:
            d["output_sha256"] = self.output_sha256
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("warp_draws") is not None:
            d["warp_draws"] = WarpDraws.from_dict(d["warp_draws"])
        if d.get("tilt_draws") is not None:
            d["tilt_draws"] = TiltDraws.from_dict(d["tilt_draws"])
        if d.get("quality_draws") is not None:
            d["quality_draws"] = QualityDraws.from_dict(d["quality_draws"])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def draw_offaxis_plan(rng):
    """Warp with p=0.5; unwarped samples are always tilted, warped ones are
    tilted with p=0.5."""
    warped = bool(rng.random() < 0.5)
    tilted = True if not warped else bool(rng.random() < 0.5)
    warp = WarpDraws.sample(rng) if warped else None
    tilt = TiltDraws.sample(rng) if tilted else None
    return {"warped": warped, "tilted": tilted, "warp_draws": warp, "tilt_draws": tilt}


def draw_quality_plan(rng):
    """Contrast and blur always; shadow with p=0.5."""
    draws = QualityDraws.sample(rng)
    return {"contrasted": True, "blurred": True, "shadowed": draws.apply_shadow, "quality_draws": draws}


def make_plan(seed, sample_id, subset):
    """Draw a complete plan for one sample from its private streams."""
    if isinstance(seed, int):
        seed = SeedPolicy(seed)
    fields_ = {}
    if subset in (OFF_AXIS, OFF_AXIS_UNCONSTRAINED):
        fields_.update(draw_offaxis_plan(seed.stream(sample_id, "offaxis")))
    if subset in (UNCONSTRAINED, OFF_AXIS_UNCONSTRAINED):
        fields_.update(draw_quality_plan(seed.stream(sample_id, "quality")))
    return AugmentationPlan(sample_id, subset, **fields_).validate()


def execute_plan(img, mask, plan):
    """Geometry first (warp, tilt), then contrast, blur, shadow.

    Only the geometric stages alter the mask.
    """
    imaging.check_pair(img, mask)
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.uint8)
    if plan.warped:
        img, mask = warp_sample(img, mask, plan.warp_draws)
    if plan.tilted:
        img, mask = apply_tilt(img, mask, plan.tilt_draws)
    q = plan.quality_draws
    if plan.contrasted:
        img = apply_contrast(img, mask, q)
    if plan.blurred:
        img = apply_motion_blur(img, q)
    if plan.shadowed:
        img = apply_shadow(img, q)
    return np.clip(img, 0.0, 255.0), mask


def output_hash(img, mask):
    """SHA-256 over the quantised image and the mask as they are stored."""
    h = hashlib.sha256()
    q = imaging.quantize(img)
    h.update(f"{q.shape[0]}x{q.shape[1]}".encode())
    h.update(q.tobytes())
    h.update(np.asarray(mask, dtype=np.uint8).tobytes())
    return h.hexdigest()


# --- manifests ------------------------------------------------------------

@dataclass
class Record:
    sample_id: str
    source_id: str
    image_path: str
    mask_path: str
    subset: str
    split: str = ""
    plan: Optional[AugmentationPlan] = None

    def row(self):
        plan = self.plan or AugmentationPlan(self.sample_id, self.subset)
        return [self.sample_id, self.source_id, self.image_path, self.mask_path,
                self.subset, self.split, plan.to_json()]


def write_manifest(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: unexpected manifest header {reader.fieldnames}")
        records = []
        for row in reader:
            plan = AugmentationPlan.from_json(row["plan_json"]) if row["plan_json"] else None
            records.append(Record(row["sample_id"], row["source_id"], row["image_path"],
                                  row["mask_path"], row["subset"], row["split"], plan))
    return records


def resolve(manifest_path, p):
    """Manifest paths are relative to the manifest's directory."""
    p = Path(p)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# --- dataset construction -------------------------------------------------

@dataclass
class BuildConfig:
    seed: int = 0
    multipliers: dict = field(default_factory=lambda: dict(DEFAULT_MULTIPLIERS))
    visible_light_mode: bool = False
    output_dir: str = "augmented"
    target_size: tuple = imaging.CANONICAL_SHAPE

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in ("seed", "multipliers", "visible_light_mode", "output_dir", "target_size") if k in d}
        cfg = cls(**known)
        cfg.multipliers = {**DEFAULT_MULTIPLIERS, **cfg.multipliers}
        cfg.target_size = tuple(int(v) for v in cfg.target_size)
        return cfg

    def to_dict(self):
        return {"seed": self.seed, "multipliers": dict(self.multipliers),
                "visible_light_mode": self.visible_light_mode,
                "output_dir": str(self.output_dir), "target_size": list(self.target_size)}


def plan_passes(config):
    """(subset, pass count) in build order for one source."""
    m = config.multipliers
    if config.visible_light_mode:
        return [(OFF_AXIS, int(m[OFF_AXIS]))]
    return [(OFF_AXIS, int(m[OFF_AXIS])), (UNCONSTRAINED, int(m[UNCONSTRAINED])),
            (OFF_AXIS_UNCONSTRAINED, int(m[OFF_AXIS_UNCONSTRAINED]))]


def load_pair(image_path, mask_path, target_size=imaging.CANONICAL_SHAPE):
    img = imaging.read_image(image_path)
    mask = imaging.read_mask(mask_path)
    imaging.check_pair(img, mask)
    h, w = target_size
    if img.shape != (h, w):
        img = imaging.resize(img, h, w, "bilinear")
        mask = imaging.resize_mask(mask, h, w)
    return img, mask


def _run_source(job):
    """Worker: build every sample of one source image. Returns (source_id, [(plan, img_rel, mask_rel)])."""
    source_id, image_path, mask_path, plans, out_dir, target_size = job
    img, mask = load_pair(image_path, mask_path, target_size)
    out = []
    for plan in plans:
        out_img, out_mask = execute_plan(img, mask, plan)
        plan.output_sha256 = output_hash(out_img, out_mask)
        img_rel = f"images/{plan.sample_id}.png"
        mask_rel = f"masks/{plan.sample_id}.png"
        imaging.write_image(Path(out_dir) / img_rel, out_img)
        imaging.write_mask(Path(out_dir) / mask_rel, out_mask)
        out.append((plan, img_rel, mask_rel))
    return source_id, out


def sample_ids(source_id, config):
    ids = [(f"{source_id}-orig", ORIGINAL)]
    for subset, count in plan_passes(config):
        ids += [(f"{source_id}-{subset}-{k}", subset) for k in range(count)]
    return ids


def build_dataset(sources, config, jobs=1, manifest_dir=None):
    """Augment every source pair and write images, masks and records.

    ``sources`` are :class:`Record` objects whose paths resolve against
    ``manifest_dir``. Returns ``(records, warnings)``; records are ordered by
    source, then pass. A source whose mask is missing is skipped with a
    warning; an unreadable file aborts the build.
    """
    out_dir = Path(config.output_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    seed = SeedPolicy(int(config.seed))
    base = Path(manifest_dir) if manifest_dir is not None else Path(".")
    jobs_list = []
    warnings = 0
    seen = set()
    for src in sources:
        if src.source_id in seen:
            continue
        seen.add(src.source_id)
        image_path = src.image_path if Path(src.image_path).is_absolute() else base / src.image_path
        mask_path = src.mask_path if Path(src.mask_path).is_absolute() else base / src.mask_path
        if not src.mask_path or not Path(mask_path).is_file():
            log.warning("source %s has no mask (%s); skipped", src.source_id, mask_path)
            warnings += 1
            continue
        plans = [make_plan(seed, sid, subset) for sid, subset in sample_ids(src.source_id, config)]
        jobs_list.append((src.source_id, str(image_path), str(mask_path), plans, str(out_dir), tuple(config.target_size)))

    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_source, jobs_list, chunksize=max(1, len(jobs_list) // (jobs * 8))))
    else:
        results = [_run_source(j) for j in jobs_list]

    records = []
    for source_id, items in results:
        for plan, img_rel, mask_rel in items:
            records.append(Record(plan.sample_id, source_id, img_rel, mask_rel, plan.subset, "", plan))
    log.info("built %d records from %d sources (%d skipped)", len(records), len(jobs_list), warnings)
    return records, warnings


def replay_record(record, source_image, source_mask, target_size=imaging.CANONICAL_SHAPE):
    """Re-execute a record's plan on its source; True when the hash matches."""
    img, mask = load_pair(source_image, source_mask, target_size)
    plan = record.plan
    out_img, out_mask = execute_plan(img, mask, plan)
    return output_hash(out_img, out_mask) == plan.output_sha256


# --- composition audit ----------------------------------------------------

def composition(plans):
    """Share (in %) of each composition row, keyed by row label."""
    by_flags = {tuple(bool(v) for v in flags): label for label, flags, _, _ in COMPOSITION_TARGETS}
    counts = Counter()
    for plan in plans:
        label = by_flags.get(plan.flags)
        if label is None:
            raise PlanError(f"plan {plan.sample_id} has an unlisted flag combination {plan.flags}")
        counts[label] += 1
    n = max(1, len(plans))
    return {label: 100.0 * counts[label] / n for label, _, _, _ in COMPOSITION_TARGETS}


def subset_fractions(plans):
    counts = Counter(p.subset for p in plans)
    n = max(1, len(plans))
    return {s: counts[s] / n for s in SUBSETS}


def audit_table(plans):
    comp = composition(plans)
    lines = [f"{'Augmentation techniques':<42} {'built %':>8} {'target %':>8}  subset"]
    for label, _, target, subset in COMPOSITION_TARGETS:
        lines.append(f"{label:<42} {comp[label]:>8.2f} {target:>8.1f}  {subset}")
    lines.append(f"{'total records':<42} {len(plans):>8d}")
    return "\n".join(lines)


# --- splitting ------------------------------------------------------------

def _split_counts(n, ratios):
    raw = [r * n for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(records, ratios=DEFAULT_RATIOS, seed=0):
    """Assign train/val/test by source group so variants never straddle splits."""
    if not records:
        raise ValueError("cannot split an empty manifest")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    groups = sorted({r.source_id for r in records})
    rng = SeedPolicy(int(seed)).stream("__split__", "split")
    perm = rng.permutation(len(groups))
    counts = _split_counts(len(groups), ratios)
    assignment = {}
    start = 0
    for name, count in zip(SPLITS, counts):
        for gi in perm[start:start + count]:
            assignment[groups[gi]] = name
        start += count
    return [replace(r, split=assignment[r.source_id]) for r in records]


def default_jobs():
    return max(1, min(os.cpu_count() or 1, 8))
