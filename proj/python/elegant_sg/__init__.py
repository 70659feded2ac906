"""Python access to the elegant scene-graph engine.

Structured values (entities, graphs, predictions) are plain dicts in the
same shape the CLI reads and writes.
"""

import json

from . import _core
from ._core import (
    CannotCalibrateError,
    Error,
    ValidationError,
    clip_score,
    iou,
    penalty,
    render_calibration,
    render_rationale,
    render_thinker_closed,
    render_thinker_open,
    render_verify,
    render_vqa,
    triplet_caption,
)

__all__ = [
    "CannotCalibrateError",
    "Error",
    "ValidationError",
    "clip_score",
    "dataset_eclipse",
    "iou",
    "mean_recall_at_k",
    "parse_triplets",
    "penalty",
    "recall_at_k",
    "render_calibration",
    "render_rationale",
    "render_thinker_closed",
    "render_thinker_open",
    "render_verify",
    "render_vqa",
    "run_cli",
    "triplet_caption",
]


def dataset_eclipse(graphs, scores, alpha, aggregation="per_local"):
    """ECLIPSE report for local graphs; scores[i] holds the per-relation
    CLIPScores of graphs[i]."""
    return json.loads(_core.dataset_eclipse_json(json.dumps(graphs), scores, alpha, aggregation))


def recall_at_k(predictions, gts, k, match="gt_boxes", iou_threshold=0.5):
    """R@K in percent, or None when there are no ground-truth triplets."""
    return _core.recall_at_k_json(json.dumps(predictions), json.dumps(gts), k, match, iou_threshold)


def mean_recall_at_k(predictions, gts, k, vocab="visualds20", match="gt_boxes", iou_threshold=0.5):
    return _core.mean_recall_at_k_json(json.dumps(predictions), json.dumps(gts), k, vocab, match, iou_threshold)


def parse_triplets(completion, subject, objects):
    return json.loads(_core.parse_triplets_json(completion, json.dumps(subject), json.dumps(objects)))


def run_cli(argv, env=None):
    """Runs one CLI invocation in-process; returns (exit_code, stdout, stderr)."""
    return _core.run_cli(list(argv), dict(env or {}))
