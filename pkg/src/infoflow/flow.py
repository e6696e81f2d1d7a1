"""Categorical pattern matching between a response tree and covariate trees.

A response-side clustering composition is matched against a covariate-side
one over the same subjects. Each covariate cluster is scored by the entropy of
the response labels it contains, confirmed against random subsets of the same
size, and, if nearly exclusive, reported as a knowledge locus. Several
covariate stages combine into an information flow whose predictions are an
entropy-weighted vote.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dcg import ClusteringComposition, FeatureGroup, UltrametricTree, composition_at
from .entropy import _log, entropy_from_counts
from .errors import EmptyStages, FlowError, SubjectMismatch, UnknownSubject
from .mechanics import CouplingGeometry

DEFAULT_N_SIMS = 1000
DEFAULT_PURITY = 0.95
WEIGHT_EPS = 1e-9
# simulated entropies within this distance of the observed one count as ties
_TIE_TOL = 1e-12
RULES = ("majority", "randomized")


@dataclass(frozen=True)
class ClusterStat:
    cluster: int
    size: int
    label_counts: tuple[int, ...]
    cond_entropy: float
    p_value: float | None = None
    null_quantiles: tuple[float, ...] | None = None  # min, q25, median, q75, max of simulated entropies

    @property
    def majority_label(self) -> int:
        return int(np.argmax(self.label_counts))

    @property
    def purity(self) -> float:
        return max(self.label_counts) / self.size

    def to_dict(self) -> dict:
        out = {
            "cluster": self.cluster,
            "size": self.size,
            "label_counts": list(self.label_counts),
            "cond_entropy": self.cond_entropy,
            "p_value": self.p_value,
        }
        if self.null_quantiles is not None:
            out["null_quantiles"] = list(self.null_quantiles)
        return out


@dataclass(frozen=True)
class MatchReport:
    response_comp: ClusteringComposition
    covariate_comp: ClusteringComposition
    per_cluster: tuple[ClusterStat, ...]
    overall_response_entropy: float
    conditional_entropy: float
    directed_nce: float
    log_base: str = "natural"
    n_sims: int | None = None

    @property
    def n_response(self) -> int:
        return self.response_comp.k

    @property
    def p_values(self) -> list[float | None]:
        return [c.p_value for c in self.per_cluster]

    @property
    def cond_entropies(self) -> list[float]:
        return [c.cond_entropy for c in self.per_cluster]

    def to_dict(self) -> dict:
        return {
            "log_base": self.log_base,
            "n_sims": self.n_sims,
            "response_k": self.response_comp.k,
            "covariate_k": self.covariate_comp.k,
            "overall_response_entropy": self.overall_response_entropy,
            "conditional_entropy": self.conditional_entropy,
            "directed_nce": self.directed_nce,
            "clusters": [c.to_dict() for c in self.per_cluster],
            "response_assignment": _pairs(self.response_comp),
            "covariate_assignment": _pairs(self.covariate_comp),
        }


def _pairs(comp: ClusteringComposition) -> list:
    return [[leaf, lab] for leaf, lab in zip(comp.leaves, comp.labels)]


def match_trees(resp: ClusteringComposition, cov: ClusteringComposition, log_base: str = "natural") -> MatchReport:
    """Tabulate response labels inside every covariate cluster."""
    if set(resp.leaves) != set(cov.leaves) or resp.n != cov.n:
        raise SubjectMismatch("response and covariate compositions cover different subjects")
    r = resp.k
    resp_of = resp.assignment
    stats = []
    for c, members in enumerate(cov.clusters()):
        counts = np.bincount([resp_of[s] for s in members], minlength=r)
        stats.append(ClusterStat(c, len(members), tuple(int(v) for v in counts), entropy_from_counts(counts, log_base)))
    total = np.bincount(np.asarray(resp.labels), minlength=r)
    h_resp = entropy_from_counts(total, log_base)
    h_cond = float(sum(s.size / resp.n * s.cond_entropy for s in stats))
    dnce = 0.0 if h_resp == 0.0 else min(1.0, max(0.0, h_cond / h_resp))
    return MatchReport(resp, cov, tuple(stats), h_resp, h_cond, dnce, log_base)


def _entropy_rows(counts: np.ndarray, log_base: str) -> np.ndarray:
    size = counts.sum(axis=1, keepdims=True)
    p = counts / size
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * _log(np.where(p > 0, p, 1.0), log_base), 0.0)
    return np.maximum(0.0, -terms.sum(axis=1))


def simulate_cluster_entropies(pooled: np.ndarray, size: int, n_sims: int, rng: np.random.Generator, n_labels: int, log_base="natural") -> np.ndarray:
    """Entropies of ``n_sims`` random size-``size`` subsets drawn without replacement from ``pooled``."""
    n = pooled.size
    keys = rng.random((n_sims, n))
    if size < n:
        idx = np.argpartition(keys, size - 1, axis=1)[:, :size]
    else:
        idx = np.broadcast_to(np.arange(n), (n_sims, n))
    drawn = pooled[idx]
    counts = np.zeros((n_sims, n_labels))
    np.add.at(counts, (np.repeat(np.arange(n_sims), size), drawn.ravel()), 1)
    return _entropy_rows(counts, log_base)


def permutation_pvalues(report: MatchReport, n_sims: int = DEFAULT_N_SIMS, seed: int = 0, stream: Sequence[int] = ()) -> MatchReport:
    """Fill one-sided p-values: how often a random cluster of equal size is at least as pure.

    Each cluster draws from its own stream ``SeedSequence(seed, spawn_key=(*stream, cluster))``.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    pooled = np.asarray(report.response_comp.labels, dtype=np.intp)
    out = []
    for stat in report.per_cluster:
        ss = np.random.SeedSequence(seed, spawn_key=(*stream, stat.cluster))
        sims = simulate_cluster_entropies(pooled, stat.size, n_sims, np.random.default_rng(ss), report.n_response, report.log_base)
        hits = int(np.count_nonzero(sims <= stat.cond_entropy + _TIE_TOL))
        q = tuple(float(v) for v in np.quantile(sims, [0.0, 0.25, 0.5, 0.75, 1.0]))
        out.append(replace(stat, p_value=(1 + hits) / (1 + n_sims), null_quantiles=q))
    return replace(report, per_cluster=tuple(out), n_sims=n_sims)


@dataclass(frozen=True)
class KnowledgeLocus:
    covariate_cluster: int
    dominant_response_cluster: int
    purity: float
    cond_entropy: float
    p_value: float
    size: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def knowledge_loci(report: MatchReport, purity_threshold: float = DEFAULT_PURITY) -> list[KnowledgeLocus]:
    """Covariate clusters whose most common response label reaches ``purity_threshold``."""
    if any(p is None for p in report.p_values):
        raise FlowError("knowledge loci need p-values; run permutation_pvalues first")
    return [
        KnowledgeLocus(s.cluster, s.majority_label, s.purity, s.cond_entropy, s.p_value, s.size)
        for s in report.per_cluster
        if s.purity >= purity_threshold
    ]


def error_rate(report: MatchReport, rule: str = "majority") -> dict:
    """Within-cluster prediction error, per cluster and size-weighted overall.

    ``majority`` predicts the modal label (error ``1 - max p``); ``randomized``
    predicts a label drawn from the cluster's label frequencies (expected
    error ``1 - sum p^2``).
    """
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}, got {rule!r}")
    per = []
    for s in report.per_cluster:
        p = np.asarray(s.label_counts, dtype=float) / s.size
        per.append(float(1.0 - p.max()) if rule == "majority" else float(1.0 - np.sum(p * p)))
    sizes = np.array([s.size for s in report.per_cluster], dtype=float)
    return {"rule": rule, "per_cluster": per, "overall": float(np.dot(sizes, per) / sizes.sum())}


def _plurality(scores: np.ndarray) -> tuple[int, bool]:
    """Index of the largest score (lowest index on ties) and whether a tie occurred."""
    top = scores.max()
    winners = np.flatnonzero(scores >= top - 1e-12)
    return int(winners[0]), winners.size > 1


@dataclass
class FlowStage:
    feature_group: FeatureGroup
    geometry: CouplingGeometry
    cov_k: int
    report: MatchReport
    loci: list[KnowledgeLocus]

    def to_dict(self) -> dict:
        return {
            "feature_group": self.feature_group.to_dict(),
            "cov_k": self.cov_k,
            "covariate_k": self.report.covariate_comp.k,
            "report": self.report.to_dict(),
            "loci": [l.to_dict() for l in self.loci],
            "error_majority": error_rate(self.report, "majority"),
            "error_randomized": error_rate(self.report, "randomized"),
        }


@dataclass
class InformationFlow:
    response_tree: UltrametricTree
    response_comp: ClusteringComposition
    stages: list[FlowStage]
    stage_weights: np.ndarray
    predictions: dict
    votes: dict
    ties: list = field(default_factory=list)

    @property
    def truth(self) -> dict:
        return self.response_comp.assignment

    @property
    def error_rate(self) -> float:
        truth = self.truth
        wrong = sum(1 for s, p in self.predictions.items() if truth[s] != p)
        return wrong / len(self.predictions)

    def mispredicted(self) -> list:
        truth = self.truth
        return [s for s in self.response_comp.leaves if self.predictions[s] != truth[s]]

    def to_dict(self) -> dict:
        truth = self.truth
        return {
            "response_k": self.response_comp.k,
            "stage_weights": [float(w) for w in self.stage_weights],
            "stages": [st.to_dict() for st in self.stages],
            "error_rate": self.error_rate,
            "mispredicted": self.mispredicted(),
            "ties": self.ties,
            "predictions": [
                {"subject": s, "truth": truth[s], "predicted": self.predictions[s], "votes": list(self.votes[s])}
                for s in self.response_comp.leaves
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=1)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def serial_flow(
    resp_tree: UltrametricTree,
    resp_k: int,
    stages: Sequence[tuple[FeatureGroup, CouplingGeometry, int]],
    log_base: str = "natural",
    n_sims: int = DEFAULT_N_SIMS,
    seed: int = 0,
    purity_threshold: float = DEFAULT_PURITY,
    stream: Sequence[int] = (),
) -> InformationFlow:
    """Link the response composition at ``resp_k`` to each covariate stage in turn.

    Stage ``i`` uses the row tree of its geometry cut at its ``cov_k``. Every
    subject receives one vote per stage (the majority label of its covariate
    cluster), weighted by ``1 / (eps + H(resp | stage))``. Stage ``i`` draws
    its permutation streams under the spawn-key prefix ``(*stream, i)``.
    """
    if not stages:
        raise EmptyStages("an information flow needs at least one stage")
    resp = composition_at(resp_tree, resp_k)
    built = []
    for i, (group, geom, cov_k) in enumerate(stages):
        cov = composition_at(geom.row_tree, cov_k)
        report = permutation_pvalues(match_trees(resp, cov, log_base), n_sims, seed, stream=(*stream, i))
        built.append(FlowStage(group, geom, cov_k, report, knowledge_loci(report, purity_threshold)))
    raw = np.array([1.0 / (WEIGHT_EPS + st.report.conditional_entropy) for st in built])
    weights = raw / raw.sum()

    predictions, votes, ties = {}, {}, []
    stage_maps = []
    for st in built:
        maj = [s.majority_label for s in st.report.per_cluster]
        stage_maps.append({subj: maj[c] for subj, c in st.report.covariate_comp.assignment.items()})
    for subj in resp.leaves:
        v = tuple(m[subj] for m in stage_maps)
        scores = np.zeros(resp.k)
        for w, lab in zip(weights, v):
            scores[lab] += w
        pred, tied = _plurality(scores)
        if tied:
            ties.append(subj)
        predictions[subj] = pred
        votes[subj] = v
    return InformationFlow(resp_tree, resp, built, weights, predictions, votes, ties)


def predict_held_out(flow: InformationFlow, subject_id) -> int:
    """Predict ``subject_id`` with its own response label removed from every tally.

    The subject keeps its position in each covariate clustering. A stage whose
    cluster holds no other subject abstains; if every stage abstains the
    pooled leave-one-out majority is returned.
    """
    truth = flow.truth
    if subject_id not in truth:
        raise UnknownSubject(f"subject {subject_id!r} is not part of this flow")
    own = truth[subject_id]
    scores = np.zeros(flow.response_comp.k)
    voted = False
    for w, st in zip(flow.stage_weights, flow.stages):
        c = st.report.covariate_comp.assignment[subject_id]
        counts = np.array(st.report.per_cluster[c].label_counts)
        counts[own] -= 1
        if counts.sum() == 0:
            continue
        scores[_plurality(counts.astype(float))[0]] += w
        voted = True
    if not voted:
        pooled = np.bincount(np.asarray(flow.response_comp.labels), minlength=flow.response_comp.k)
        pooled[own] -= 1
        return _plurality(pooled.astype(float))[0]
    return _plurality(scores)[0]


def held_out_error(flow: InformationFlow, n_repeats: int, seed: int = 0) -> float:
    """Error of :func:`predict_held_out` over ``n_repeats`` randomly selected subjects."""
    subjects = list(flow.response_comp.leaves)
    truth = flow.truth
    cache = {s: predict_held_out(flow, s) for s in subjects}
    picks = np.random.default_rng(seed).integers(0, len(subjects), n_repeats)
    return float(np.mean([cache[subjects[i]] != truth[subjects[i]] for i in picks]))
