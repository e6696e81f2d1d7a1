"""End-to-end run: renormalize, group features, seriate, match, and flow.

:func:`run_pipeline` takes a :class:`RunConfig` and returns every
intermediate result in a :class:`PipelineResult`; the CLI writes them out.
Canonical case-study configurations ship as YAML under ``casestudies/``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Any

import numpy as np
import yaml

from .baseline import LogisticFit, logistic_error_rate, logistic_mle
from .dcg import DEFAULT_CE_THRESHOLD, DEFAULT_SCALE_COUNT, FeatureGroup, composition_at, feature_tree, synergistic_groups
from .entropy import LOG_BASES, EntropyMatrix, entropy_matrix, mutual_ce
from .errors import ConfigError, InfoflowError, UnknownDataset
from .flow import DEFAULT_N_SIMS, DEFAULT_PURITY, InformationFlow, MatchReport, match_trees, permutation_pvalues, serial_flow
from .ingest import BUILTIN_DATASETS, RawTable, builtin_dataset, load_table
from .mechanics import DEFAULT_MAX_ITER, CouplingGeometry, data_mechanics
from .renorm import DEFAULT_GAP_FACTOR, DEFAULT_MAX_BINS, DigitalCodedMatrix, renormalize_matrix

DEFAULT_SEED = 20170220
# spawn-key prefixes for the named random streams
STREAM_FLOW = 1
STREAM_REPORT = 2


@dataclass
class RunConfig:
    dataset: str | None = None
    csv: str | None = None
    manifest: str | None = None
    log_base: str = "natural"
    max_bins: int = DEFAULT_MAX_BINS
    gap_factor: float = DEFAULT_GAP_FACTOR
    scale_count: int | None = DEFAULT_SCALE_COUNT
    ce_threshold: float = DEFAULT_CE_THRESHOLD
    resp_features: list | None = None
    resp_k: int = 2
    cov_k: list = field(default_factory=lambda: [3])
    serial: Any = None  # None: all detected groups; "all": one stage with every covariate; or a list
    report_k: list = field(default_factory=list)
    n_sims: int = DEFAULT_N_SIMS
    purity: float = DEFAULT_PURITY
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = DEFAULT_SEED
    output_dir: str | None = None
    baseline: dict | None = None

    def __post_init__(self):
        if isinstance(self.cov_k, int):
            self.cov_k = [self.cov_k]
        self.cov_k = [int(k) for k in self.cov_k]
        self.report_k = [int(k) for k in self.report_k]
        self.validate()

    def validate(self) -> None:
        if (self.dataset is None) == (self.csv is None):
            raise ConfigError("give exactly one of dataset or csv (with manifest)")
        if self.csv is not None and self.manifest is None:
            raise ConfigError("csv input needs a manifest")
        if self.dataset is not None and self.dataset not in BUILTIN_DATASETS:
            raise UnknownDataset(f"unknown dataset {self.dataset!r}; choose from {', '.join(BUILTIN_DATASETS)}")
        if self.log_base not in LOG_BASES:
            raise ConfigError(f"log_base must be one of {LOG_BASES}")
        if self.max_bins < 1 or self.max_bins > 10:
            raise ConfigError("max_bins must lie in 1..10 (codes run 0..9)")
        if self.gap_factor <= 0:
            raise ConfigError("gap_factor must be positive")
        if self.scale_count is not None and self.scale_count < 1:
            raise ConfigError("scale_count must be >= 1")
        if not 0.0 <= self.ce_threshold <= 1.0:
            raise ConfigError("ce_threshold must lie in [0, 1]")
        if self.resp_k < 1 or any(k < 1 for k in self.cov_k + self.report_k) or not self.cov_k:
            raise ConfigError("cluster counts must be >= 1 and cov_k nonempty")
        if self.n_sims < 1:
            raise ConfigError("n_sims must be >= 1")
        if not 0.0 < self.purity <= 1.0:
            raise ConfigError("purity must lie in (0, 1]")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    config: RunConfig
    table: RawTable
    coded: DigitalCodedMatrix
    resp_features: list[str]
    cov_features: list[str]
    xi_response: EntropyMatrix
    xi_covariate: EntropyMatrix
    cov_groups: list[FeatureGroup]
    resp_geometry: CouplingGeometry
    all_geometry: CouplingGeometry
    stage_groups: list[FeatureGroup]
    stage_geometries: list[CouplingGeometry]
    flow: InformationFlow
    reports: dict = field(default_factory=dict)  # k -> MatchReport on the all-covariate geometry
    baseline: dict | None = None

    def summary(self) -> dict:
        f = self.flow
        return {
            "n": self.coded.n,
            "response_features": self.resp_features,
            "covariate_features": self.cov_features,
            "covariate_groups": [g.to_dict() for g in self.cov_groups],
            "stages": [list(g.members) for g in self.stage_groups],
            "stage_weights": [float(w) for w in f.stage_weights],
            "flow_error_rate": f.error_rate,
            "overall_response_entropy": f.stages[0].report.overall_response_entropy,
            "stage_entropies": [st.report.cond_entropies for st in f.stages],
            "stage_p_values": [st.report.p_values for st in f.stages],
            "loci": [[l.to_dict() for l in st.loci] for st in f.stages],
            "reports": {str(k): r.to_dict() for k, r in self.reports.items()},
            "baseline": self.baseline,
        }


def load_input(config: RunConfig) -> RawTable:
    if config.dataset is not None:
        return builtin_dataset(config.dataset)
    return load_table(config.csv, config.manifest)


def _stage_groups(config: RunConfig, cov_features: list[str], groups: list[FeatureGroup], xi: EntropyMatrix) -> list[FeatureGroup]:
    if config.serial == "all":
        return [FeatureGroup(tuple(cov_features), 0, float(xi.values.max()))]
    if config.serial is None:
        return list(groups)
    by_id = {g.group_id: g for g in groups}
    out = []
    for item in config.serial:
        if isinstance(item, (list, tuple)):
            missing = [f for f in item if f not in cov_features]
            if missing:
                raise ConfigError(f"serial stage names unknown covariates {missing}")
            sub = xi.subset(list(item))
            out.append(FeatureGroup(tuple(item), 0, float(sub.values.max())))
        else:
            if int(item) not in by_id:
                raise ConfigError(f"serial names group {item}, but only groups {sorted(by_id)} exist")
            out.append(by_id[int(item)])
    if not out:
        raise ConfigError("serial lists no stages")
    return out


def run_baseline(table: RawTable, spec: dict) -> dict:
    """Logistic fit of one binary response on raw covariates."""
    resp = spec["response"]
    covs = list(spec["covariates"])
    labels = table.column(resp)
    positive = str(spec.get("positive", max(set(labels))))
    y = np.array([1.0 if str(v) == positive else 0.0 for v in labels])
    x = np.column_stack([np.asarray(table.column(c), dtype=float) for c in covs])
    threshold = float(spec.get("threshold", 0.5))
    fit: LogisticFit = logistic_mle(x, y)
    return {
        "response": resp,
        "positive": positive,
        "covariates": covs,
        "beta": [float(b) for b in fit.beta],
        "converged": fit.converged,
        "threshold": threshold,
        "error_rate": logistic_error_rate(fit, x, y, threshold),
    }


def run_pipeline(config: RunConfig, table: RawTable | None = None) -> PipelineResult:
    table = load_input(config) if table is None else table
    coded = renormalize_matrix(table, config.max_bins, config.gap_factor, config.log_base)

    resp_features = list(config.resp_features or coded.names_with_role("response"))
    cov_features = coded.names_with_role("covariate")
    unknown = [f for f in resp_features if f not in coded.feature_names]
    if unknown:
        raise ConfigError(f"unknown response features {unknown}")
    if not resp_features or not cov_features:
        raise ConfigError("need at least one response and one covariate feature")

    xi_r = entropy_matrix(coded, resp_features, config.log_base)
    xi_c = entropy_matrix(coded, cov_features, config.log_base)
    cov_groups = synergistic_groups(xi_c, feature_tree(xi_c, config.scale_count), config.ce_threshold)
    stage_groups = _stage_groups(config, cov_features, cov_groups, xi_c)
    cov_k = config.cov_k if len(config.cov_k) == len(stage_groups) else [config.cov_k[0]] * len(stage_groups)
    if len(config.cov_k) not in (1, len(stage_groups)):
        raise ConfigError(f"cov_k has {len(config.cov_k)} entries for {len(stage_groups)} stages")
    n = coded.n
    for k in [config.resp_k, *cov_k, *config.report_k]:
        if k > n:
            raise ConfigError(f"cluster count {k} exceeds the {n} subjects")

    def seriate(names, levels):
        return data_mechanics(
            coded.matrix(names), config.max_iter, config.scale_count, config.seed,
            row_ids=coded.subjects, col_ids=names, row_levels=sorted(set(levels)),
        )

    resp_geom = seriate(resp_features, [config.resp_k])
    all_geom = seriate(cov_features, [*cov_k, *config.report_k])
    stage_geoms = []
    for g, k in zip(stage_groups, cov_k):
        if tuple(g.members) == tuple(cov_features):
            # the all-covariate geometry already carries every requested level
            stage_geoms.append(all_geom)
        else:
            stage_geoms.append(seriate(list(g.members), [k]))

    flow = serial_flow(
        resp_geom.row_tree, config.resp_k, list(zip(stage_groups, stage_geoms, cov_k)),
        config.log_base, config.n_sims, config.seed, config.purity, stream=(STREAM_FLOW,),
    )
    resp_comp = composition_at(resp_geom.row_tree, config.resp_k)
    reports = {}
    for k in config.report_k:
        rep = match_trees(resp_comp, composition_at(all_geom.row_tree, k), config.log_base)
        reports[k] = permutation_pvalues(rep, config.n_sims, config.seed, stream=(STREAM_REPORT, k))
    base = run_baseline(table, config.baseline) if config.baseline else None
    return PipelineResult(
        config, table, coded, resp_features, cov_features, xi_r, xi_c, cov_groups,
        resp_geom, all_geom, stage_groups, stage_geoms, flow, reports, base,
    )


# ---------------------------------------------------------------- case studies

CASESTUDIES = BUILTIN_DATASETS


def casestudy_config(name: str) -> dict:
    """The canonical YAML document for one of the bundled case studies."""
    if name not in CASESTUDIES:
        raise UnknownDataset(f"unknown case study {name!r}; choose from {', '.join(CASESTUDIES)}")
    text = resources.files("infoflow").joinpath(f"casestudies/{name}.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def run_casestudy(name: str, overrides: dict | None = None) -> tuple[dict, dict[str, PipelineResult]]:
    """Run every configured run of a case study and evaluate its reference-value checks."""
    doc = casestudy_config(name)
    base = dict(doc.get("defaults", {}))
    base["dataset"] = doc["dataset"]
    base.update(overrides or {})
    results = {}
    for run in doc["runs"]:
        cfg = dict(base)
        cfg.update({k: v for k, v in run.items() if k != "name"})
        results[run["name"]] = run_pipeline(RunConfig.from_dict(cfg))
    checks = [evaluate_check(c, results) for c in doc.get("checks", [])]
    summary = {
        "casestudy": name,
        "description": doc.get("description", ""),
        "runs": {k: r.summary() for k, r in results.items()},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    return summary, results


def _stage_report(res: PipelineResult, check: dict) -> MatchReport:
    if "k" in check:
        k = int(check["k"])
        if k in res.reports:
            return res.reports[k]
        resp = composition_at(res.resp_geometry.row_tree, res.config.resp_k)
        rep = match_trees(resp, composition_at(res.all_geometry.row_tree, k), res.config.log_base)
        return permutation_pvalues(rep, res.config.n_sims, res.config.seed, stream=(STREAM_REPORT, k))
    return res.flow.stages[int(check.get("stage", 1)) - 1].report


def _match_entropies(computed: list[float], expected: list[float]) -> list[int]:
    """For each expected value, the index of the closest unused computed cluster."""
    used, out = set(), []
    for e in expected:
        cands = [(abs(c - e), i) for i, c in enumerate(computed) if i not in used]
        if not cands:
            out.append(-1)
            continue
        _, i = min(cands)
        used.add(i)
        out.append(i)
    return out


def evaluate_check(check: dict, results: dict[str, PipelineResult]) -> dict:
    """Compare one computed quantity with its reference value.

    Every check reports ``computed``, ``expected``, ``passed`` and, where the
    outcome depends on the clustering, whether the composition matched.
    """
    kind = check["kind"]
    res = results[check.get("run", next(iter(results)))]
    out = {"kind": kind, "label": check.get("label", kind)}
    try:
        if kind == "baseline_error":
            val = res.baseline["error_rate"]
            out.update(computed=val, expected=check["expected"], passed=abs(val - check["expected"]) <= check["tol"])
        elif kind == "mutual_ce":
            val = mutual_ce(res.coded.codes(check["a"]), res.coded.codes(check["b"]), res.config.log_base)
            out.update(computed=val, expected=f">= {check['min']}", passed=val >= check["min"])
        elif kind == "overall_entropy":
            val = _stage_report(res, check).overall_response_entropy
            out.update(computed=val, expected=check["expected"], passed=abs(val - check["expected"]) <= check["tol"])
        elif kind == "cluster_entropies":
            rep = _stage_report(res, check)
            ent = rep.cond_entropies
            expected = list(check["expected"])
            matched = rep.covariate_comp.k == len(expected)
            picks = _match_entropies(ent, expected)
            vals = [ent[i] if i >= 0 else None for i in picks]
            pvals = [rep.per_cluster[i].p_value if i >= 0 else None for i in picks]
            ok = all(v is not None and abs(v - e) <= check["tol"] for v, e in zip(vals, expected))
            if "p_max" in check:
                ok = ok and all(p is not None and p <= pm for p, pm in zip(pvals, check["p_max"]))
            if "significant" in check:
                alpha = check.get("alpha", 0.01)
                ok = ok and all(p is not None and (p < alpha) == bool(s) for p, s in zip(pvals, check["significant"]))
            downgraded = False
            if not matched and check.get("downgrade", False):
                alpha = check.get("alpha", 0.01)
                ps = rep.p_values
                ok = any(p < alpha for p in ps) and any(p >= alpha for p in ps)
                downgraded = True
            out.update(computed={"entropies": vals, "p_values": pvals, "all_entropies": ent},
                       expected=expected, composition_matched=matched, downgraded=downgraded, passed=ok)
        elif kind == "significant_fraction":
            rep = _stage_report(res, check)
            sig = [p < check["alpha"] for p in rep.p_values]
            frac = sum(sig) / len(sig)
            out.update(computed={"significant": int(sum(sig)), "clusters": len(sig), "p_values": rep.p_values},
                       expected=f">= {check['min_fraction']} of {check.get('k', 'stage')} clusters",
                       composition_matched=rep.covariate_comp.k == check.get("k", rep.covariate_comp.k),
                       passed=frac >= check["min_fraction"])
        elif kind == "zero_entropy_clusters":
            rep = _stage_report(res, check)
            zeros = sum(1 for h in rep.cond_entropies if h == 0.0)
            ok = zeros >= check["min_count"]
            if "dominated" in check:
                mixed = [s for s in rep.per_cluster if s.cond_entropy > 0]
                ok = ok and sum(1 for s in mixed if s.purity >= check["dominated"]) >= 1
            out.update(computed={"zero_entropy": zeros, "entropies": rep.cond_entropies,
                                 "purities": [s.purity for s in rep.per_cluster]},
                       expected=f">= {check['min_count']}", passed=ok)
        elif kind == "loci":
            rep = _stage_report(res, check)
            purity = check["purity"]
            loci = [s for s in rep.per_cluster if s.purity >= purity]
            ok = len(loci) >= check["min_count"]
            per_resp = {}
            for s in loci:
                per_resp.setdefault(s.majority_label, []).append(s.cluster)
            if "per_response" in check:
                ok = ok and len(per_resp) == rep.response_comp.k and all(
                    len(v) >= check["per_response"] for v in per_resp.values()
                )
            if check.get("extremes", False):
                # loci at both ends of the seriated layout, for different response clusters
                ends = [rep.per_cluster[0], rep.per_cluster[-1]]
                ok = ok and all(s.purity >= purity for s in ends) and ends[0].majority_label != ends[1].majority_label
            out.update(computed={"loci": len(loci), "by_response": {str(k): v for k, v in per_resp.items()},
                                 "purity_table": [[s.cluster, s.size, list(s.label_counts), s.purity] for s in rep.per_cluster]},
                       expected=f">= {check['min_count']} loci at purity {purity}", passed=ok)
        else:
            raise ConfigError(f"unknown check kind {kind!r}")
    except InfoflowError:
        raise
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"malformed check {check}: {exc}") from None
    return out
