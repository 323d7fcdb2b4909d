"""ROC AUC, the one-vs-rest rater-agreement protocol, and bootstrap CIs.

AUC is the Mann-Whitney statistic (ties count half), computed by sorting and
mid-ranking in O(n log n).  Per-label AUCs aggregate by macro averaging over
the labels where both classes occur; a pooled "micro" mode exists for
sensitivity checks.  Confidence intervals use the percentile bootstrap with
the test image as the resampling unit: a resampled index vector is applied
jointly to the score matrix and every rater's labels, preserving inter-rater
structure.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import derive_rng, encode_labels
from .errors import (
    AlignmentError,
    ProtocolError,
    ShapeError,
    UndefinedAUCError,
    ValidationError,
)


def _check_binary(arr, what):
    if not np.all((arr == 0) | (arr == 1)):
        raise ValidationError(f"{what} must be binary (0/1)")


def roc_auc(scores, truth) -> float:
    """Probability that a random positive outranks a random negative, ties
    counted half; raises UndefinedAUCError when truth has a single class."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if s.ndim != 1 or s.shape != t.shape:
        raise ShapeError(f"roc_auc: need matching 1-D arrays, got {s.shape} and {t.shape}")
    if not np.isfinite(s).all():
        raise ValidationError("roc_auc: scores must be finite")
    _check_binary(t, "roc_auc truth")
    n = s.shape[0]
    n_pos = int(t.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"truth has {n_pos} positives and {n_neg} negatives")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    ends = np.r_[starts[1:], n]
    # tie group occupying 0-based [a, b) gets the average of 1-based ranks a+1..b
    ranks = np.empty(n)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    pos_rank_sum = ranks[t == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class MacroAucResult:
    mean_auc: float
    per_label: tuple  # float, or None where the label had a single class
    skipped: tuple  # indices of skipped labels
    aggregation: str = "macro"


def macro_auc(scores, truth, average="macro") -> MacroAucResult:
    """Per-label AUC over an (N,K) score/truth pair.

    macro: mean of per-label AUCs over computable labels.  micro: one AUC on
    the pooled (N*K) pairs.  Either way labels with a single class are
    reported in ``skipped``.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if s.ndim != 2 or s.shape != t.shape:
        raise ShapeError(f"macro_auc: need matching (N,K) arrays, got {s.shape} and {t.shape}")
    if average not in ("macro", "micro"):
        raise ValidationError(f"macro_auc: average must be 'macro' or 'micro', got {average!r}")
    per_label, skipped = [], []
    for k in range(s.shape[1]):
        try:
            per_label.append(roc_auc(s[:, k], t[:, k]))
        except UndefinedAUCError:
            per_label.append(None)
            skipped.append(k)
    computable = [a for a in per_label if a is not None]
    if not computable:
        raise UndefinedAUCError("no label has both classes present")
    if average == "micro":
        mean = roc_auc(s.ravel(), t.ravel())
    else:
        mean = float(np.mean(computable))
    return MacroAucResult(
        mean_auc=mean, per_label=tuple(per_label), skipped=tuple(skipped), aggregation=average
    )


def _check_raters(raters):
    r = np.asarray(raters, dtype=np.float64)
    if r.ndim != 3:
        raise ShapeError(f"rater tensor must be (R,N,K), got {r.shape}")
    _check_binary(r, "rater labels")
    return r


@dataclass(frozen=True)
class ProtocolResult:
    per_expert: tuple  # MacroAucResult per held-out expert
    mean_auc: float


def expert_consensus_auc(raters, average="macro") -> ProtocolResult:
    """Hold each rater out in turn: score = mean of the other raters' binary
    labels (kept fractional), truth = the held-out rater."""
    r = _check_raters(raters)
    n_raters = r.shape[0]
    if n_raters < 2:
        raise ValidationError(f"consensus protocol needs >= 2 raters, got {n_raters}")
    results = []
    for e in range(n_raters):
        others = np.delete(r, e, axis=0)
        results.append(macro_auc(others.mean(axis=0), r[e], average=average))
    return ProtocolResult(
        per_expert=tuple(results),
        mean_auc=float(np.mean([res.mean_auc for res in results])),
    )


def model_vs_experts_auc(model_scores, raters, average="macro") -> ProtocolResult:
    """Model scores against each rater's labels as truth; the mean over
    raters is the headline model figure."""
    r = _check_raters(raters)
    s = np.asarray(model_scores, dtype=np.float64)
    if s.shape != r.shape[1:]:
        raise ShapeError(f"model scores {s.shape} do not match rater grid {r.shape[1:]}")
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        raise ValidationError("model scores must lie in [0, 1]")
    results = [macro_auc(s, r[e], average=average) for e in range(r.shape[0])]
    return ProtocolResult(
        per_expert=tuple(results),
        mean_auc=float(np.mean([res.mean_auc for res in results])),
    )


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    lower: float
    upper: float
    resamples: int
    level: float
    redraws: int
    seed: int
    stream: int = 0


def bootstrap_ci(metric, n_rows, resamples=10000, level=0.95, seed=0, stream=0) -> BootstrapResult:
    """Percentile bootstrap of ``metric`` over resampled row indices.

    ``metric`` receives an int index array (length n_rows, drawn with
    replacement) and returns a float; resamples where it raises
    UndefinedAUCError are redrawn and counted, and the run aborts once
    undefined draws outnumber the requested resamples (the metric is then
    undefined on more than half of all attempts).  Each attempt's index
    vector comes from its own (seed, stream, attempt) substream, so results
    are independent of any parallel evaluation order.
    """
    if resamples < 1:
        raise ValidationError(f"bootstrap_ci: resamples must be >= 1, got {resamples}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"bootstrap_ci: level must be in (0,1), got {level}")
    if n_rows < 1:
        raise ValidationError(f"bootstrap_ci: n_rows must be >= 1, got {n_rows}")
    try:
        point = float(metric(np.arange(n_rows)))
    except UndefinedAUCError as exc:
        raise ProtocolError(f"metric undefined on the full sample: {exc}") from exc
    values = np.empty(resamples)
    got = 0
    redraws = 0
    attempt = 0
    while got < resamples:
        idx = derive_rng(seed, stream, attempt).integers(0, n_rows, size=n_rows)
        attempt += 1
        try:
            values[got] = metric(idx)
        except UndefinedAUCError:
            redraws += 1
            if redraws > resamples:
                raise ProtocolError(
                    f"metric undefined on more than half of {attempt} bootstrap draws; "
                    "test set too degenerate"
                )
            continue
        got += 1
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(values, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return BootstrapResult(
        point=point,
        lower=float(lower),
        upper=float(upper),
        resamples=resamples,
        level=level,
        redraws=redraws,
        seed=seed,
        stream=stream,
    )


def rater_matrix(rater_records, image_paths, vocab) -> np.ndarray:
    """Assemble the (R,N,K) binary tensor from rater CSV records.

    Requires a complete grid: rater ids exactly 1..R, one row per (rater,
    image) for every manifest test image; offending paths/pairs are listed.
    """
    paths = list(image_paths)
    path_idx = {p: i for i, p in enumerate(paths)}
    ids = sorted({rec.rater_id for rec in rater_records})
    if not ids:
        raise AlignmentError("rater file contains no records")
    if ids != list(range(1, len(ids) + 1)):
        raise AlignmentError(f"rater ids must be exactly 1..R, got {ids}")
    unknown = sorted({rec.image_path for rec in rater_records if rec.image_path not in path_idx})
    if unknown:
        raise AlignmentError(f"rater file references images not in the manifest test split: {unknown[:10]}")
    mat = np.zeros((len(ids), len(paths), len(vocab)))
    seen = set()
    for rec in rater_records:
        seen.add((rec.rater_id, rec.image_path))
        mat[rec.rater_id - 1, path_idx[rec.image_path]] = encode_labels(rec, vocab)
    missing = [(r, p) for r in ids for p in paths if (r, p) not in seen]
    if missing:
        raise AlignmentError(f"rater file missing {len(missing)} (rater, image) pairs, e.g. {missing[:5]}")
    return mat


@dataclass(frozen=True)
class ReportRow:
    name: str
    auc: float
    ci_lower: float
    ci_upper: float
    redraws: int


@dataclass(frozen=True)
class EvalReport:
    """One row per held-out expert, the expert mean, and the model."""

    labels: tuple
    rows: tuple  # ReportRow
    expert_detail: tuple  # per-expert MacroAucResult for the consensus rows
    model_detail: tuple  # per-expert MacroAucResult for the model rows
    aggregation: str
    resamples: int
    level: float
    seed: int

    def to_json_obj(self):
        def detail(res):
            return {"mean_auc": res.mean_auc, "per_label": list(res.per_label), "skipped": list(res.skipped)}

        return {
            "labels": list(self.labels),
            "aggregation": self.aggregation,
            "resamples": self.resamples,
            "level": self.level,
            "seed": self.seed,
            "rows": [
                {
                    "name": r.name,
                    "auc": r.auc,
                    "ci_lower": r.ci_lower,
                    "ci_upper": r.ci_upper,
                    "redraws": r.redraws,
                }
                for r in self.rows
            ],
            "expert_consensus_detail": [detail(d) for d in self.expert_detail],
            "model_vs_expert_detail": [detail(d) for d in self.model_detail],
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("name,auc,ci_lower,ci_upper\n")
            for r in self.rows:
                fh.write(f"{r.name},{r.auc!r},{r.ci_lower!r},{r.ci_upper!r}\n")


def build_eval_report(
    model_scores, raters, labels, resamples=10000, level=0.95, seed=0, average="macro"
) -> EvalReport:
    """Full comparison table: each expert one-vs-rest, their mean, and the
    model (omitted when ``model_scores`` is None).

    Every row's CI bootstraps its own statistic over test images (the expert
    mean row bootstraps the mean-of-R statistic itself, not an average of
    per-expert intervals).
    """
    r = _check_raters(raters)
    n_raters, n_images = r.shape[0], r.shape[1]
    consensus = expert_consensus_auc(r, average=average)
    model_res = None
    if model_scores is not None:
        s = np.asarray(model_scores, dtype=np.float64)
        model_res = model_vs_experts_auc(s, r, average=average)

    rows = []

    def expert_metric(e):
        others = np.delete(r, e, axis=0).mean(axis=0)

        def metric(idx):
            return macro_auc(others[idx], r[e][idx], average=average).mean_auc

        return metric

    for e in range(n_raters):
        ci = bootstrap_ci(expert_metric(e), n_images, resamples, level, seed=seed, stream=e)
        rows.append(
            ReportRow(
                name=f"expert_{e + 1}",
                auc=consensus.per_expert[e].mean_auc,
                ci_lower=ci.lower,
                ci_upper=ci.upper,
                redraws=ci.redraws,
            )
        )

    def mean_metric(idx):
        vals = []
        for e in range(n_raters):
            others = np.delete(r, e, axis=0).mean(axis=0)
            vals.append(macro_auc(others[idx], r[e][idx], average=average).mean_auc)
        return float(np.mean(vals))

    ci = bootstrap_ci(mean_metric, n_images, resamples, level, seed=seed, stream=n_raters)
    rows.append(
        ReportRow(
            name="expert_mean",
            auc=consensus.mean_auc,
            ci_lower=ci.lower,
            ci_upper=ci.upper,
            redraws=ci.redraws,
        )
    )

    if model_res is not None:

        def model_metric(idx):
            vals = [macro_auc(s[idx], r[e][idx], average=average).mean_auc for e in range(n_raters)]
            return float(np.mean(vals))

        ci = bootstrap_ci(model_metric, n_images, resamples, level, seed=seed, stream=n_raters + 1)
        rows.append(
            ReportRow(
                name="model",
                auc=model_res.mean_auc,
                ci_lower=ci.lower,
                ci_upper=ci.upper,
                redraws=ci.redraws,
            )
        )

    return EvalReport(
        labels=tuple(labels),
        rows=tuple(rows),
        expert_detail=consensus.per_expert,
        model_detail=model_res.per_expert if model_res is not None else (),
        aggregation=average,
        resamples=resamples,
        level=level,
        seed=seed,
    )
