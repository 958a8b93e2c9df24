"""Statistical evaluation of rating and NLG score data.

Implements the analysis battery used on rater output: percentile bootstrap
CIs of the mean, the Wilcoxon signed-rank test (exact for small n, tie- and
continuity-corrected normal approximation beyond), the six-way preference
mapping of rating pairs, preference summaries with the both-rated-low
exclusion rule, severity and tissue stratification, rater confusion
matrices, and NLG-versus-rating tabulations.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

NEED_MORE_INFO = "need_more_info"

# source identifier reserved for the ground-truth report text
ORIGINAL_SOURCE = "original"


class DegenerateData(ValueError):
    """Raised when a test statistic is undefined (e.g. all-zero differences)."""


class PreferenceCategory(Enum):
    TEXT1_PREFERRED = "text1_preferred"
    BOTH_OK_TEXT1 = "both_ok_text1_preferred"
    BOTH_OK_SAME = "both_ok_same_rating"
    BOTH_OK_TEXT2 = "both_ok_text2_preferred"
    TEXT2_PREFERRED = "text2_preferred"
    BOTH_WITH_ERRORS = "both_with_errors"


@dataclass(frozen=True)
class RatingRecord:
    part_id: str
    rater_id: str
    text_source: str
    score: int | str  # 1..5 or NEED_MORE_INFO
    comment: str = ""

    def __post_init__(self):
        if self.score != NEED_MORE_INFO and self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"invalid score {self.score!r}")

    @property
    def is_numeric(self) -> bool:
        return self.score != NEED_MORE_INFO


def load_ratings(path) -> list[RatingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                RatingRecord(
                    part_id=obj["part_id"],
                    rater_id=obj["rater_id"],
                    text_source=obj["text_source"],
                    score=obj["score"],
                    comment=obj.get("comment", ""),
                )
            )
    return records


def bootstrap_ci(
    values: Sequence[float],
    replicates: int = 10000,
    level: float = 0.95,
    seed: int | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean.

    Resamples n-with-replacement ``replicates`` times and returns the
    empirical (alpha/2, 1-alpha/2) percentiles of the resampled means with
    linear interpolation. Deterministic per seed.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("bootstrap_ci requires non-empty input")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    rng = np.random.default_rng(seed)
    n = v.size
    means = np.empty(replicates)
    # chunked so huge replicate counts stay memory-bounded
    chunk = max(1, min(replicates, int(2e7) // max(n, 1)))
    done = 0
    while done < replicates:
        take = min(chunk, replicates - done)
        idx = rng.integers(0, n, size=(take, n))
        means[done : done + take] = v[idx].mean(axis=1)
        done += take
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return float(lo), float(hi)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+ = sum of ranks of positive differences
    p_two_sided: float
    method: str  # "exact" or "normal_approx"
    n: int  # sample size after zero removal


def _doubled_average_ranks(abs_diffs: Sequence[float]) -> list[int]:
    # average ranks doubled so tied groups stay integral
    order = sorted(range(len(abs_diffs)), key=lambda i: abs_diffs[i])
    doubled = [0] * len(abs_diffs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and abs_diffs[order[j + 1]] == abs_diffs[order[i]]:
            j += 1
        # ranks i+1 .. j+1 share average (i+j+2)/2; doubled = i+j+2
        for k in range(i, j + 1):
            doubled[order[k]] = i + j + 2
        i = j + 1
    return doubled


def _exact_two_sided_p(two_ranks: list[int], two_w_plus: int) -> float:
    # distribution of 2*W+ under sign-flip null, by convolution over ranks
    total = sum(two_ranks)
    counts: dict[int, int] = {0: 1}
    for tr in two_ranks:
        nxt: dict[int, int] = defaultdict(int)
        for value, c in counts.items():
            nxt[value] += c
            nxt[value + tr] += c
        counts = dict(nxt)
    dev_obs = abs(2 * two_w_plus - total)
    extreme = sum(c for value, c in counts.items() if abs(2 * value - total) >= dev_obs)
    return extreme / (2 ** len(two_ranks))


def wilcoxon_signed_rank(
    diffs: Sequence[float], exact_threshold: int = 20
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped (Wilcoxon's method) and ties receive average ranks.
    For n <= ``exact_threshold`` the p-value is exact over all 2^n sign
    assignments of the observed ranks; beyond that a normal approximation
    with tie-corrected variance and continuity correction is used.
    """
    nonzero = [float(d) for d in diffs if d != 0]
    if not nonzero:
        raise DegenerateData("all differences are zero")
    n = len(nonzero)
    abs_diffs = [abs(d) for d in nonzero]
    two_ranks = _doubled_average_ranks(abs_diffs)
    two_w_plus = sum(tr for tr, d in zip(two_ranks, nonzero) if d > 0)
    w_plus = two_w_plus / 2.0

    if n <= exact_threshold:
        p = _exact_two_sided_p(two_ranks, two_w_plus)
        return WilcoxonResult(w_plus, p, "exact", n)

    mu = n * (n + 1) / 4.0
    tie_term = 0.0
    seen: dict[float, int] = defaultdict(int)
    for d in abs_diffs:
        seen[d] += 1
    for t in seen.values():
        tie_term += t**3 - t
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    if var <= 0:
        return WilcoxonResult(w_plus, 1.0, "normal_approx", n)
    dev = w_plus - mu
    # continuity correction shrinks the deviation by 0.5
    cc = 0.5 if dev > 0 else (-0.5 if dev < 0 else 0.0)
    z = (dev - cc) / math.sqrt(var)
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(w_plus, p, "normal_approx", n)


def preference_category(r1: int, r2: int) -> PreferenceCategory:
    """Map a pair of 1-5 ratings for (text1, text2) to a relative category."""
    for r in (r1, r2):
        if r not in (1, 2, 3, 4, 5):
            raise ValueError(f"score out of range: {r!r}")
    if r1 >= 4 and r2 <= 3:
        return PreferenceCategory.TEXT1_PREFERRED
    if r1 <= 3 and r2 >= 4:
        return PreferenceCategory.TEXT2_PREFERRED
    if r1 <= 3 and r2 <= 3:
        return PreferenceCategory.BOTH_WITH_ERRORS
    # both >= 4
    if r1 == 5 and r2 == 4:
        return PreferenceCategory.BOTH_OK_TEXT1
    if r1 == 4 and r2 == 5:
        return PreferenceCategory.BOTH_OK_TEXT2
    return PreferenceCategory.BOTH_OK_SAME


@dataclass
class PreferenceSummary:
    source_a: str
    source_b: str
    n_parts: int
    n_units: int  # rater-part pairs entering the tally
    proportions: dict[str, float]
    at_least_as_good: float
    ci: tuple[float, float]
    excluded_parts: list[str]
    need_more_info_units: int


def _numeric_score_index(
    ratings: Iterable[RatingRecord],
) -> tuple[dict[tuple[str, str, str], int], int]:
    index: dict[tuple[str, str, str], int] = {}
    nmi = 0
    for r in ratings:
        key = (r.part_id, r.rater_id, r.text_source)
        if r.is_numeric:
            index[key] = int(r.score)
        else:
            nmi += 1
    return index, nmi


def preference_summary(
    ratings: Sequence[RatingRecord],
    sources: tuple[str, str],
    replicates: int = 10000,
    seed: int | None = 0,
) -> PreferenceSummary:
    """Tally preference categories for source pair (a, b) over rater-part units.

    A part is excluded outright when at least one rater scored both texts at
    3 or lower. ``at_least_as_good`` is the fraction of units where text a
    was not rated strictly worse than text b; its CI comes from a part-level
    percentile bootstrap.
    """
    source_a, source_b = sources
    scores, _ = _numeric_score_index(ratings)
    rated_keys = {(r.part_id, r.rater_id, r.text_source) for r in ratings}
    nmi_units = 0

    raters_by_part: dict[str, set[str]] = defaultdict(set)
    for r in ratings:
        if r.text_source in (source_a, source_b):
            raters_by_part[r.part_id].add(r.rater_id)

    pair_units: dict[str, list[tuple[int, int]]] = defaultdict(list)
    excluded: set[str] = set()
    for part_id in sorted(raters_by_part):
        for rater_id in sorted(raters_by_part[part_id]):
            sa = scores.get((part_id, rater_id, source_a))
            sb = scores.get((part_id, rater_id, source_b))
            if sa is None or sb is None:
                # both texts were rated but at least one was need-more-info:
                # the unit drops out of the score math and is reported as such
                both_rated = all(
                    (part_id, rater_id, s) in rated_keys for s in (source_a, source_b)
                )
                if both_rated:
                    nmi_units += 1
                continue
            if sa <= 3 and sb <= 3:
                excluded.add(part_id)
            pair_units[part_id].append((sa, sb))

    included = [p for p in sorted(pair_units) if p not in excluded]
    if not included:
        raise DegenerateData("no parts left after exclusion rule")

    units: list[tuple[str, PreferenceCategory]] = []
    for part_id in included:
        for sa, sb in pair_units[part_id]:
            units.append((part_id, preference_category(sa, sb)))

    counts = {cat: 0 for cat in PreferenceCategory}
    for _, cat in units:
        counts[cat] += 1
    n_units = len(units)
    proportions = {cat.value: counts[cat] / n_units for cat in PreferenceCategory}

    worse_per_part = np.zeros(len(included))
    total_per_part = np.zeros(len(included))
    for k, p in enumerate(included):
        for sa, sb in pair_units[p]:
            cat = preference_category(sa, sb)
            total_per_part[k] += 1
            if cat in (
                PreferenceCategory.TEXT2_PREFERRED,
                PreferenceCategory.BOTH_OK_TEXT2,
            ):
                worse_per_part[k] += 1

    point = 1.0 - worse_per_part.sum() / total_per_part.sum()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(included), size=(replicates, len(included)))
    stats = 1.0 - worse_per_part[idx].sum(axis=1) / total_per_part[idx].sum(axis=1)
    lo, hi = np.percentile(stats, [2.5, 97.5])

    return PreferenceSummary(
        source_a=source_a,
        source_b=source_b,
        n_parts=len(included),
        n_units=n_units,
        proportions=proportions,
        at_least_as_good=point,
        ci=(float(lo), float(hi)),
        excluded_parts=sorted(excluded),
        need_more_info_units=nmi_units,
    )


DEFAULT_SIGNIFICANT_STEMS = (
    "carcinoma",
    "dysplasia",
    "malignan",
    "invasive",
    "metasta",
    "sarcoma",
    "lymphoma",
    "melanoma",
)

DEFAULT_MILD_STEMS = (
    "inflammat",
    "gastritis",
    "esophagitis",
    "adenoma",
    "polyp",
    "hyperplas",
    "metaplas",
)


@dataclass(frozen=True)
class SeverityLexicon:
    significant: tuple[str, ...] = DEFAULT_SIGNIFICANT_STEMS
    mild: tuple[str, ...] = DEFAULT_MILD_STEMS


def severity_classify(finding: str, lexicon: SeverityLexicon | None = None) -> str:
    """Classify a finding as normal/mild/significant by lexicon stem matching.

    Stems match case-insensitively anywhere in the text so plural and
    compound forms ("adenocarcinoma", "carcinomas") are caught; significant
    stems take precedence over mild ones.
    """
    lex = lexicon or SeverityLexicon()
    text = finding.lower()
    if any(s in text for s in lex.significant):
        return "significant"
    if any(s in text for s in lex.mild):
        return "mild"
    return "normal"


DEFAULT_COMMON_TISSUES = frozenset({"colorectal", "skin", "cervix"})


class InsufficientStratum(ValueError):
    """Raised when a stratum cannot supply its share of the eval sample."""


def select_eval_sample(
    parts: Sequence,
    n: int,
    common: frozenset[str] | set[str] = DEFAULT_COMMON_TISSUES,
    seed: int | None = 0,
) -> list:
    """Stratified seeded sample: ceil(n/2) common-tissue parts, floor(n/2) uncommon."""
    common_lc = {c.lower() for c in common}
    pool_common = [p for p in parts if (p.tissue or "").lower() in common_lc]
    pool_uncommon = [p for p in parts if (p.tissue or "").lower() not in common_lc]
    n_common = (n + 1) // 2
    n_uncommon = n // 2
    if len(pool_common) < n_common:
        raise InsufficientStratum(
            f"need {n_common} common parts, have {len(pool_common)}"
        )
    if len(pool_uncommon) < n_uncommon:
        raise InsufficientStratum(
            f"need {n_uncommon} uncommon parts, have {len(pool_uncommon)}"
        )
    rng = np.random.default_rng(seed)
    pool_common = sorted(pool_common, key=lambda p: p.part_id)
    pool_uncommon = sorted(pool_uncommon, key=lambda p: p.part_id)
    picked_common = [
        pool_common[i]
        for i in sorted(rng.choice(len(pool_common), size=n_common, replace=False))
    ]
    picked_uncommon = [
        pool_uncommon[i]
        for i in sorted(rng.choice(len(pool_uncommon), size=n_uncommon, replace=False))
    ]
    return picked_common + picked_uncommon


def rater_confusion(
    ratings: Sequence[RatingRecord], source: str
) -> tuple[tuple[str, str], np.ndarray]:
    """5x5 score confusion matrix between the two raters for one text source.

    Rows index the first rater's score, columns the second's (rater ids in
    sorted order); only parts with numeric scores from both raters count.
    """
    per_part: dict[str, dict[str, int]] = defaultdict(dict)
    raters: set[str] = set()
    for r in ratings:
        if r.text_source == source and r.is_numeric:
            per_part[r.part_id][r.rater_id] = int(r.score)
            raters.add(r.rater_id)
    if len(raters) != 2:
        raise ValueError(f"confusion matrix needs exactly 2 raters, found {len(raters)}")
    ra, rb = sorted(raters)
    matrix = np.zeros((5, 5), dtype=int)
    for part_scores in per_part.values():
        if ra in part_scores and rb in part_scores:
            matrix[part_scores[ra] - 1, part_scores[rb] - 1] += 1
    return (ra, rb), matrix


def group_rare(counts: Mapping[str, int], threshold: float = 0.01) -> dict[str, int]:
    """Fold labels whose share of the total is <= threshold into "other"."""
    total = sum(counts.values())
    if total == 0:
        return {}
    kept: dict[str, int] = {}
    other = 0
    for label in sorted(counts, key=lambda k: (-counts[k], k)):
        if counts[label] / total <= threshold:
            other += counts[label]
        else:
            kept[label] = counts[label]
    if other:
        kept["other"] = other
    return kept


@dataclass(frozen=True)
class RatingBucketSummary:
    n: int
    q1: float
    median: float
    q3: float


def nlg_vs_rating(
    ratings: Sequence[RatingRecord],
    nlg_scores: Mapping[tuple[str, str], float],
    generated_sources: Sequence[str] | None = None,
) -> dict[int, RatingBucketSummary]:
    """Quartiles of NLG scores per rating bucket for generated texts.

    A read is one (part, rater) pair; reads where the rater scored the
    original text below 4 (or did not score it numerically) are dropped,
    since NLG scores are measured against that original text.
    """
    scores, _ = _numeric_score_index(ratings)
    if generated_sources is None:
        generated_sources = sorted(
            {r.text_source for r in ratings if r.text_source != ORIGINAL_SOURCE}
        )
    reads: set[tuple[str, str]] = {
        (r.part_id, r.rater_id) for r in ratings if r.text_source in generated_sources
    }
    by_bucket: dict[int, list[float]] = defaultdict(list)
    for part_id, rater_id in sorted(reads):
        orig = scores.get((part_id, rater_id, ORIGINAL_SOURCE))
        if orig is None or orig < 4:
            continue
        for source in generated_sources:
            rating = scores.get((part_id, rater_id, source))
            nlg = nlg_scores.get((part_id, source))
            if rating is not None and nlg is not None:
                by_bucket[rating].append(nlg)
    out: dict[int, RatingBucketSummary] = {}
    for bucket in sorted(by_bucket):
        vals = np.asarray(by_bucket[bucket])
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        out[bucket] = RatingBucketSummary(len(vals), float(q1), float(med), float(q3))
    return out


@dataclass
class SourceStats:
    mean: float
    ci: tuple[float, float]
    n_units: int
    need_more_info: int


@dataclass
class AnalysisReport:
    source_stats: dict[str, SourceStats]
    p_values: dict[str, dict]
    preferences: dict[str, PreferenceSummary]
    preferences_by_severity: dict[str, dict[str, PreferenceSummary]]
    confusions: dict[str, list[list[int]]]
    tissue_groups: dict[str, int]
    nlg_by_rating: dict[int, RatingBucketSummary]
    excluded_parts: list[str]
    need_more_info_total: int


def mean_scores_by_source(
    ratings: Sequence[RatingRecord],
    replicates: int = 10000,
    seed: int = 0,
) -> dict[str, SourceStats]:
    """Average score per source across rater-part units, with part-level bootstrap CI."""
    out: dict[str, SourceStats] = {}
    sources = sorted({r.text_source for r in ratings})
    for source in sources:
        per_part: dict[str, list[int]] = defaultdict(list)
        nmi = 0
        for r in ratings:
            if r.text_source != source:
                continue
            if r.is_numeric:
                per_part[r.part_id].append(int(r.score))
            else:
                nmi += 1
        if not per_part:
            continue
        part_means = [float(np.mean(v)) for _, v in sorted(per_part.items())]
        all_scores = [s for _, v in sorted(per_part.items()) for s in v]
        lo, hi = bootstrap_ci(part_means, replicates=replicates, seed=seed)
        out[source] = SourceStats(
            mean=float(np.mean(all_scores)),
            ci=(lo, hi),
            n_units=len(all_scores),
            need_more_info=nmi,
        )
    return out


def paired_score_diffs(
    ratings: Sequence[RatingRecord], source_a: str, source_b: str
) -> list[float]:
    """Per-part differences of scores averaged across raters (a minus b)."""
    per_part: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for r in ratings:
        if r.is_numeric and r.text_source in (source_a, source_b):
            per_part[r.part_id][r.text_source].append(int(r.score))
    diffs = []
    for part_id in sorted(per_part):
        scores = per_part[part_id]
        if source_a in scores and source_b in scores:
            diffs.append(
                float(np.mean(scores[source_a])) - float(np.mean(scores[source_b]))
            )
    return diffs


def build_analysis_report(
    ratings: Sequence[RatingRecord],
    nlg_scores: Mapping[tuple[str, str], float] | None = None,
    parts: Sequence | None = None,
    generated_sources: Sequence[str] | None = None,
    replicates: int = 10000,
    seed: int = 0,
) -> AnalysisReport:
    """Run the full analysis battery over one ratings file.

    ``parts`` (objects with part_id/tissue/section.finding) unlocks the
    severity and tissue breakdowns; ``nlg_scores`` maps (part_id, source) to
    an averaged NLG score for the rating-vs-metric table. Sources never rated
    are simply absent from the output.
    """
    if generated_sources is None:
        generated_sources = sorted(
            {r.text_source for r in ratings if r.text_source != ORIGINAL_SOURCE}
        )

    source_stats = mean_scores_by_source(ratings, replicates=replicates, seed=seed)

    p_values: dict[str, dict] = {}
    for source in generated_sources:
        diffs = paired_score_diffs(ratings, source, ORIGINAL_SOURCE)
        try:
            res = wilcoxon_signed_rank(diffs)
        except DegenerateData:
            continue
        p_values[f"{source}_vs_{ORIGINAL_SOURCE}"] = {
            "statistic": res.statistic,
            "p_two_sided": res.p_two_sided,
            "method": res.method,
            "n": res.n,
        }

    preferences: dict[str, PreferenceSummary] = {}
    for source in generated_sources:
        try:
            preferences[source] = preference_summary(
                ratings, (source, ORIGINAL_SOURCE), replicates=replicates, seed=seed
            )
        except DegenerateData:
            continue

    preferences_by_severity: dict[str, dict[str, PreferenceSummary]] = {}
    tissue_groups: dict[str, int] = {}
    if parts is not None:
        severity_of = {
            p.part_id: (p.severity or severity_classify(p.section.finding))
            for p in parts
        }
        tissue_counts: dict[str, int] = defaultdict(int)
        for p in parts:
            tissue_counts[p.tissue or "unknown"] += 1
        tissue_groups = group_rare(tissue_counts)
        for severity in ("normal", "mild", "significant"):
            part_ids = {pid for pid, s in severity_of.items() if s == severity}
            subset = [r for r in ratings if r.part_id in part_ids]
            if not subset:
                continue
            per_source: dict[str, PreferenceSummary] = {}
            for source in generated_sources:
                try:
                    per_source[source] = preference_summary(
                        subset, (source, ORIGINAL_SOURCE),
                        replicates=replicates, seed=seed,
                    )
                except (DegenerateData, ZeroDivisionError):
                    continue
            if per_source:
                preferences_by_severity[severity] = per_source

    confusions: dict[str, list[list[int]]] = {}
    all_sources = sorted({r.text_source for r in ratings})
    for source in all_sources:
        try:
            _, matrix = rater_confusion(ratings, source)
        except ValueError:
            continue
        confusions[source] = matrix.tolist()

    nlg_by_rating: dict[int, RatingBucketSummary] = {}
    if nlg_scores:
        nlg_by_rating = nlg_vs_rating(ratings, nlg_scores, generated_sources)

    excluded = sorted(
        {pid for summary in preferences.values() for pid in summary.excluded_parts}
    )
    nmi_total = sum(1 for r in ratings if not r.is_numeric)

    return AnalysisReport(
        source_stats=source_stats,
        p_values=p_values,
        preferences=preferences,
        preferences_by_severity=preferences_by_severity,
        confusions=confusions,
        tissue_groups=tissue_groups,
        nlg_by_rating=nlg_by_rating,
        excluded_parts=excluded,
        need_more_info_total=nmi_total,
    )


def report_to_json(report: AnalysisReport) -> dict:
    """JSON-able view of an AnalysisReport (tuples to lists, dataclasses to dicts)."""

    def _pref(summary: PreferenceSummary) -> dict:
        return {
            "source_a": summary.source_a,
            "source_b": summary.source_b,
            "n_parts": summary.n_parts,
            "n_units": summary.n_units,
            "proportions": summary.proportions,
            "at_least_as_good": summary.at_least_as_good,
            "ci": list(summary.ci),
            "excluded_parts": summary.excluded_parts,
            "need_more_info_units": summary.need_more_info_units,
        }

    return {
        "source_stats": {
            src: {
                "mean": st.mean,
                "ci": list(st.ci),
                "n_units": st.n_units,
                "need_more_info": st.need_more_info,
            }
            for src, st in report.source_stats.items()
        },
        "p_values": report.p_values,
        "preferences": {src: _pref(s) for src, s in report.preferences.items()},
        "preferences_by_severity": {
            sev: {src: _pref(s) for src, s in by_src.items()}
            for sev, by_src in report.preferences_by_severity.items()
        },
        "confusions": report.confusions,
        "tissue_groups": report.tissue_groups,
        "nlg_by_rating": {
            str(bucket): {
                "n": b.n, "q1": b.q1, "median": b.median, "q3": b.q3,
            }
            for bucket, b in report.nlg_by_rating.items()
        },
        "excluded_parts": report.excluded_parts,
        "need_more_info_total": report.need_more_info_total,
    }
