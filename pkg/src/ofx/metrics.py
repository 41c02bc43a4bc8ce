"""Output thresholding and per-image segmentation metrics.

Iris is the positive class. A metric whose denominator is zero is reported as
``None`` (undefined) and left out of the aggregate mean/std, but counted.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "npv", "f1")
NIR_THRESHOLD = 0.55
VISIBLE_THRESHOLD = 0.4
MODE_THRESHOLDS = {"nir": NIR_THRESHOLD, "visible": VISIBLE_THRESHOLD}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["metrics", "n_images"],
    "properties": {
        "n_images": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["nir", "visible"]},
        "threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "metrics": {
            "type": "object",
            "required": list(METRIC_NAMES),
            "additionalProperties": False,
            "properties": {
                name: {
                    "type": "object",
                    "required": ["mu", "sigma", "undefined_count"],
                    "additionalProperties": False,
                    "properties": {
                        "mu": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                        "sigma": {"type": ["number", "null"], "minimum": 0},
                        "undefined_count": {"type": "integer", "minimum": 0},
                    },
                }
                for name in METRIC_NAMES
            },
        },
    },
}


def binarize(prob, threshold=NIR_THRESHOLD):
    """1 where ``prob`` is strictly greater than ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(prob) > threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(pred, truth):
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {truth.shape} differ in shape")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num, den):
    return num / den if den > 0 else None


def metrics(counts):
    """The six per-image metrics as a dict; undefined ones are ``None``."""
    if counts.total <= 0:
        raise ValueError("confusion counts are empty")
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    sens = _ratio(tp, tp + fn)
    prec = _ratio(tp, tp + fp)
    if sens is None or prec is None:
        f1 = None
    else:
        f1 = _ratio(2 * prec * sens, prec + sens)
    return {
        "accuracy": (tp + tn) / counts.total,
        "sensitivity": sens,
        "specificity": _ratio(tn, tn + fp),
        "precision": prec,
        "npv": _ratio(tn, tn + fn),
        "f1": f1,
    }


@dataclass
class MetricsReport:
    per_image: list
    mu: dict
    sigma: dict
    undefined_count: dict

    def to_dict(self, mode=None, threshold=None):
        d = {"n_images": len(self.per_image)}
        if mode is not None:
            d["mode"] = mode
        if threshold is not None:
            d["threshold"] = threshold
        d["metrics"] = {
            name: {"mu": self.mu[name], "sigma": self.sigma[name], "undefined_count": self.undefined_count[name]}
            for name in METRIC_NAMES
        }
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)


def aggregate(per_image):
    """Mean and population standard deviation of each metric over images."""
    per_image = list(per_image)
    if not per_image:
        raise ValueError("need at least one image to aggregate")
    mu, sigma, undefined = {}, {}, {}
    for name in METRIC_NAMES:
        vals = [m[name] for m in per_image if m[name] is not None]
        undefined[name] = len(per_image) - len(vals)
        if vals:
            mean = math.fsum(vals) / len(vals)
            mu[name] = mean
            sigma[name] = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
        else:
            mu[name] = sigma[name] = None
    return MetricsReport(per_image, mu, sigma, undefined)


def evaluate(prob_maps, truths, threshold=NIR_THRESHOLD):
    return aggregate(metrics(confusion(binarize(p, threshold), t)) for p, t in zip(prob_maps, truths))
