"""Aggregate tables over site verdicts, plus the validation sampling math.

Percentages follow one contract everywhere: one decimal place, round half
up, computed exactly on counts (Decimal, not binary floats).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from scipy.stats import norm

from formscope.model import PiiField, SENSITIVE_VERTICALS, SiteRecord, SiteVerdict

#: Pinned z for 95% two-sided confidence. 1.96 reproduces the same sample
#: sizes; this value is pinned for determinism.
Z_95 = 1.959964


def percent(count: int, denom: int) -> str:
    """count/denom as a percentage string with one decimal, half-up."""
    if denom <= 0:
        raise ZeroDivisionError("percentage with zero denominator")
    value = Decimal(count) * 100 / Decimal(denom)
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def percent_or_na(count: int, denom: int) -> str:
    return percent(count, denom) if denom > 0 else "n/a"


@dataclass(frozen=True)
class OverviewRow:
    """One Table-2-style row: installation / configuration / collection counts
    for a provider (or the union)."""

    label: str
    installed: int
    configured: int | None  # Meta static analysis only
    fdc: int


@dataclass(frozen=True)
class OverviewCounts:
    total_sites: int
    google: OverviewRow
    meta: OverviewRow
    union: OverviewRow

    @property
    def zero_denominator(self) -> bool:
        return self.total_sites == 0


@dataclass(frozen=True)
class VerticalRow:
    label: str
    websites: int
    google_installed: int
    google_fdc: int
    meta_installed: int
    meta_fdc: int


@dataclass(frozen=True)
class SubsetRow:
    """FDC inside one tracker-presence subset (both / Google-only / Meta-only)."""

    label: str
    websites: int
    google_fdc: int | None
    meta_fdc: int | None


@dataclass(frozen=True)
class SubsetCounts:
    both: SubsetRow
    google_only: SubsetRow
    meta_only: SubsetRow


@dataclass(frozen=True)
class FieldBreakdownCounts:
    """Field configuration counts over sites with exactly one Meta pixel and
    static configuration enabled. combined(f) = default + custom(f), on
    counts, before any rounding."""

    total: int
    default: int
    custom: dict[PiiField, int] = field(default_factory=dict)

    def combined(self, pii_field: PiiField) -> int:
        return self.default + self.custom.get(pii_field, 0)

    def default_share(self) -> str:
        return percent_or_na(self.default, self.total)

    def custom_share(self, pii_field: PiiField) -> str:
        return percent_or_na(self.custom.get(pii_field, 0), self.total)

    def combined_share(self, pii_field: PiiField) -> str:
        return percent_or_na(self.combined(pii_field), self.total)


@dataclass(frozen=True)
class SummaryTables:
    overview: OverviewCounts
    verticals: tuple[VerticalRow, ...]
    subsets: SubsetCounts
    fields: FieldBreakdownCounts


def _vertical_group(record: SiteRecord) -> str:
    return record.vertical if record.vertical in SENSITIVE_VERTICALS else "non_sensitive"


def aggregate(verdicts: list[SiteVerdict]) -> SummaryTables:
    """Build all summary tables from deduplicated per-site verdicts."""
    domains = [v.site.domain for v in verdicts]
    if len(domains) != len(set(domains)):
        raise ValueError("verdicts must be deduplicated by site")

    total = len(verdicts)
    g_installed = [v for v in verdicts if v.google.installed]
    m_installed = [v for v in verdicts if v.meta.installed]
    union_installed = [v for v in verdicts if v.google.installed or v.meta.installed]

    overview = OverviewCounts(
        total_sites=total,
        google=OverviewRow(
            "Google",
            installed=len(g_installed),
            configured=None,
            fdc=sum(1 for v in verdicts if v.google.fdc),
        ),
        meta=OverviewRow(
            "Meta",
            installed=len(m_installed),
            configured=sum(1 for v in verdicts if v.meta.configured),
            fdc=sum(1 for v in verdicts if v.meta.fdc),
        ),
        union=OverviewRow(
            "Google or Meta",
            installed=len(union_installed),
            configured=None,
            fdc=sum(1 for v in verdicts if v.google.fdc or v.meta.fdc),
        ),
    )

    rows: list[VerticalRow] = []
    for label in ("non_sensitive", "health", "finance"):
        group = [v for v in verdicts if _vertical_group(v.site) == label]
        rows.append(_vertical_row(label, group))
    rows.append(_vertical_row("total", verdicts))

    return SummaryTables(
        overview=overview,
        verticals=tuple(rows),
        subsets=subset_breakdown(verdicts),
        fields=field_breakdown(verdicts),
    )


def _vertical_row(label: str, group: list[SiteVerdict]) -> VerticalRow:
    return VerticalRow(
        label=label,
        websites=len(group),
        google_installed=sum(1 for v in group if v.google.installed),
        google_fdc=sum(1 for v in group if v.google.fdc),
        meta_installed=sum(1 for v in group if v.meta.installed),
        meta_fdc=sum(1 for v in group if v.meta.fdc),
    )


def subset_breakdown(verdicts: list[SiteVerdict]) -> SubsetCounts:
    """Partition sites that have at least one tracker into both / Google-only
    / Meta-only, with per-provider FDC counts inside each subset."""
    both = [v for v in verdicts if v.google.installed and v.meta.installed]
    google_only = [v for v in verdicts if v.google.installed and not v.meta.installed]
    meta_only = [v for v in verdicts if v.meta.installed and not v.google.installed]
    return SubsetCounts(
        both=SubsetRow(
            "both",
            websites=len(both),
            google_fdc=sum(1 for v in both if v.google.fdc),
            meta_fdc=sum(1 for v in both if v.meta.fdc),
        ),
        google_only=SubsetRow(
            "google_only",
            websites=len(google_only),
            google_fdc=sum(1 for v in google_only if v.google.fdc),
            meta_fdc=None,
        ),
        meta_only=SubsetRow(
            "meta_only",
            websites=len(meta_only),
            google_fdc=None,
            meta_fdc=sum(1 for v in meta_only if v.meta.fdc),
        ),
    )


def field_breakdown(verdicts: list[SiteVerdict]) -> FieldBreakdownCounts:
    """Default vs. custom field-selection counts, restricted to sites with
    exactly one Meta pixel and static configuration enabled (multi-pixel
    sites behave unpredictably and are excluded)."""
    eligible = [
        v
        for v in verdicts
        if len({i.tracker_id for i in v.meta.installations}) == 1 and v.meta.configured
    ]
    all_fields = frozenset(PiiField)
    default_count = 0
    custom: dict[PiiField, int] = {f: 0 for f in PiiField}
    for v in eligible:
        if v.meta.config_fields == all_fields:
            default_count += 1
        else:
            for f in v.meta.config_fields:
                custom[f] += 1
    return FieldBreakdownCounts(
        total=len(eligible),
        default=default_count,
        custom={f: c for f, c in custom.items() if c},
    )


def is_default_verdict_config(verdict: SiteVerdict) -> bool:
    return verdict.meta.config_fields == frozenset(PiiField)


def sample_size(
    population: int,
    confidence: float = 0.95,
    margin: float = 0.05,
    p_hat: float = 0.5,
) -> int:
    """Finite-population-corrected sample size:
    n = ceil(n0 / (1 + (n0 - 1)/N)) with n0 = z^2 p(1-p)/margin^2."""
    if population < 1:
        raise ValueError("population must be >= 1")
    if not 0 < margin < 1:
        raise ValueError("margin must be in (0, 1)")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    if not 0 < p_hat < 1:
        raise ValueError("p_hat must be in (0, 1)")
    if confidence == 0.95:
        z = Z_95
    else:
        z = float(norm.ppf(0.5 + confidence / 2))
    n0 = z * z * p_hat * (1 - p_hat) / (margin * margin)
    n = n0 / (1 + (n0 - 1) / population)
    return math.ceil(n)


def draw_sample(population: list, n: int, seed: int) -> list:
    """Uniform sample without replacement, deterministic per seed. Drawing the
    whole population returns it in its original order."""
    if n > len(population):
        raise ValueError(f"cannot sample {n} from population of {len(population)}")
    if n == len(population):
        return list(population)
    return random.Random(seed).sample(population, n)
