"""Functional-similarity metrics and report emission."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

COLUMNS = ("N@10", "R@10", "Agr@1", "Agr@10")


@dataclass
class EvalProtocol:
    ks: tuple = (1, 10)
    negatives: int = 100
    seed: int = 0
    users: object = None  # None means every test user

    def errors(self, prefix=""):
        errs = []
        if not self.ks or any(int(k) < 1 for k in self.ks):
            errs.append((f"{prefix}ks", "every K must be >= 1"))
        if self.negatives < 1:
            errs.append((f"{prefix}negatives", "must be >= 1"))
        return errs

    def to_dict(self):
        d = asdict(self)
        d["ks"] = list(self.ks)
        if self.users is not None:
            d["users"] = [int(u) for u in self.users]
        return d


def roc_auc(scores, labels):
    """Area under the ROC curve by the trapezoidal rule over tied score groups.

    Returns ``None`` when either class is missing.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # cut points where the score changes, plus the end
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def pairwise_auc(scores, labels):
    """Brute-force AUC: share of positive/negative pairs ordered correctly, ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if not len(pos) or not len(neg):
        return None
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def rank_among(gt_score, gt_item, neg_scores, neg_items):
    """1-based rank of the ground truth among itself and the negatives (ties: lower id first)."""
    neg_scores = np.asarray(neg_scores)
    neg_items = np.asarray(neg_items)
    higher = neg_scores > gt_score
    tied = (neg_scores == gt_score) & (neg_items < gt_item)
    return 1 + int(higher.sum() + tied.sum())


def metrics_from_ranks(ranks, ks):
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {}
    for k in ks:
        hit = ranks <= k
        out[f"N@{k}"] = float(np.mean(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)))
        out[f"R@{k}"] = float(np.mean(hit))
    return out


def sample_eval_negatives(split, protocol):
    """Per-user negatives excluding the user's whole history; deterministic in the protocol seed."""
    users = _users(split, protocol)
    rng = np.random.default_rng(protocol.seed)
    out = {}
    for u in users:
        seen = np.zeros(split.n_items, dtype=bool)
        seen[split.history(u)] = True
        allowed = np.nonzero(~seen)[0]
        out[u] = np.sort(rng.choice(allowed, size=min(protocol.negatives, len(allowed)), replace=False))
    return out


def _users(split, protocol):
    users = list(range(split.n_users)) if protocol.users is None else [int(u) for u in protocol.users]
    if not users:
        raise ValueError("empty user set")
    for u in users:
        if not 0 <= u < split.n_users:
            raise ValueError(f"user {u} has no test item")
    return users


def rank_metrics(model, split, protocol=None, negatives=None):
    """Mean N@K / R@K over test users under the 1-positive + sampled-negatives protocol."""
    protocol = protocol or EvalProtocol()
    negatives = negatives or sample_eval_negatives(split, protocol)
    users = _users(split, protocol)
    prefixes = [np.r_[split.train[u], split.val[u]] for u in users]
    scores = model.score_prefixes(prefixes)
    ranks = []
    for r, u in enumerate(users):
        gt = int(split.test[u])
        neg = negatives[u]
        ranks.append(rank_among(scores[r, gt], gt, scores[r, neg], neg))
    return metrics_from_ranks(ranks, protocol.ks)


def agreement_at_k(a, b, k):
    a, b = list(a), list(b)
    if len(a) < k or len(b) < k:
        raise ValueError(f"list shorter than K={k}")
    return len(set(a[:k]) & set(b[:k])) / k


def mean_agreement(tops_a, tops_b, ks):
    """Row-wise Agr@K averaged over rows of two (P, >=K) id arrays."""
    tops_a, tops_b = np.asarray(tops_a), np.asarray(tops_b)
    out = {}
    for k in ks:
        a, b = tops_a[:, :k], tops_b[:, :k]
        hits = (a[:, :, None] == b[:, None, :]).any(-1).sum(1)
        out[f"Agr@{k}"] = float(np.mean(hits / k))
    return out


@dataclass
class MetricReport:
    models: dict
    agreement: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"models": self.models, "agreement": self.agreement, "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(models=d["models"], agreement=d["agreement"], meta=d.get("meta", {}))

    def row(self, model="surrogate"):
        m = self.models[model]
        return {"N@10": m.get("N@10"), "R@10": m.get("R@10"), **{k: self.agreement.get(k) for k in ("Agr@1", "Agr@10")}}


def compare_models(victim, surrogate, split, protocol=None, meta=None):
    protocol = protocol or EvalProtocol()
    users = _users(split, protocol)
    negatives = sample_eval_negatives(split, protocol)
    models = {
        "victim": rank_metrics(victim, split, protocol, negatives),
        "surrogate": rank_metrics(surrogate, split, protocol, negatives),
    }
    prefixes = [split.train[u] for u in users]
    kmax = max(protocol.ks)
    top_v = kernels.topk_rows(victim.score_prefixes(prefixes), kmax)
    top_s = kernels.topk_rows(surrogate.score_prefixes(prefixes), kmax)
    return MetricReport(models=models, agreement=mean_agreement(top_s, top_v, protocol.ks), meta=dict(meta or {}))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def report_rows(reports):
    """Flat rows in fixed column order: label, model, then COLUMNS."""
    rows = []
    for label, rep in reports.items():
        for model in ("victim", "surrogate"):
            if model not in rep.models:
                continue
            m = rep.models[model]
            agr = rep.agreement if model == "surrogate" else {}
            rows.append([label, model, m.get("N@10"), m.get("R@10"), agr.get("Agr@1"), agr.get("Agr@10")])
    return rows


def emit_report(reports, path, format="json"):
    """Write one or more reports (``{label: MetricReport}`` or a single report)."""
    if isinstance(reports, MetricReport):
        reports = {"run": reports}
    if not reports:
        raise ValueError("no reports to emit")
    path = Path(path)
    if format == "json":
        body = {label: r.to_dict() for label, r in reports.items()}
        text = json.dumps(body, indent=1, sort_keys=True) + "\n"
    elif format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "model", *COLUMNS])
        for r in report_rows(reports):
            w.writerow([r[0], r[1], *(_fmt(v) for v in r[2:])])
        text = buf.getvalue()
    elif format in ("md", "md-table"):
        lines = ["| label | model | " + " | ".join(COLUMNS) + " |", "|" + "---|" * (2 + len(COLUMNS))]
        for r in report_rows(reports):
            lines.append("| " + " | ".join([r[0], r[1], *(_fmt(v) for v in r[2:])]) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    try:
        path.write_text(text)
    except OSError as e:
        raise OSError(f"unwritable path {path}: {e}") from e
    return path


def load_report(path):
    body = json.loads(Path(path).read_text())
    return {label: MetricReport.from_dict(d) for label, d in body.items()}


def emit_grid(grid, row_values, col_values, path, row_name="low_weight", col_name="high_weight"):
    """CSV grid with one row per ``row_values`` entry, ``grid[(row, col)]`` in cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{row_name}\\{col_name}", *(repr(float(c)) for c in col_values)])
    for r in row_values:
        w.writerow([repr(float(r)), *(_fmt(grid[(r, c)]) for c in col_values)])
    Path(path).write_text(buf.getvalue())
    return path


def emit_series(name, xs, series, path):
    """CSV series: column ``name`` then one column per key of ``series`` (each a list aligned with xs)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(series)
    w.writerow([name, *keys])
    for i, x in enumerate(xs):
        w.writerow([x, *(_fmt(series[k][i]) for k in keys)])
    Path(path).write_text(buf.getvalue())
    return path
