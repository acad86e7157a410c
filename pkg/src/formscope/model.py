"""Domain types shared by every stage of the pipeline, and verdict merging.

All types here are immutable values; they can be freely shared between
worker threads. Verdicts follow "ever observed" semantics: a site is
considered installed / collecting if any visit showed it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class PiiField(enum.Enum):
    """The eleven PII categories Meta's automatic matching supports.

    The set is closed; wire abbreviations live in DetectionRules, not here.
    """

    EMAIL = "email"
    PHONE_NUMBER = "phone_number"
    FIRST_NAME = "first_name"
    LAST_NAME = "last_name"
    CITY = "city"
    STATE = "state"
    ZIP_CODE = "zip_code"
    GENDER = "gender"
    COUNTRY = "country"
    DATE_OF_BIRTH = "date_of_birth"
    EXTERNAL_ID = "external_id"


# Fields the injected form carries (everything a plain contact form would ask).
FORM_FIELDS = (
    PiiField.EMAIL,
    PiiField.PHONE_NUMBER,
    PiiField.FIRST_NAME,
    PiiField.LAST_NAME,
    PiiField.CITY,
    PiiField.STATE,
    PiiField.ZIP_CODE,
)


class Provider(enum.Enum):
    META = "meta"
    GOOGLE = "google"


class CollectionMode(enum.Enum):
    """How a tracker obtained form values.

    UNKNOWN is first-class: unrecognized parameter keys surface in reports
    instead of being dropped. Google events carry no automatic/manual
    distinction on the wire and are always recorded as UNKNOWN.
    """

    AUTOMATIC = "automatic"
    MANUAL = "manual"
    UNKNOWN = "unknown"


class TagKind(enum.Enum):
    ADS = "ads"
    FLOODLIGHT = "floodlight"
    GA4 = "ga4"
    UNIVERSAL_ANALYTICS = "universal_analytics"
    PIXEL = "pixel"


#: Google tag ID prefix -> product. Total over exactly these prefixes.
GOOGLE_TAG_PREFIXES = {
    "AW": TagKind.ADS,
    "DC": TagKind.FLOODLIGHT,
    "G": TagKind.GA4,
    "GT": TagKind.GA4,
    "UA": TagKind.UNIVERSAL_ANALYTICS,
}


class UnknownTagPrefixError(ValueError):
    """Raised for a Google tag ID whose prefix is not in the known table."""


def google_tag_kind(tag_id: str) -> TagKind:
    """Map a Google tag ID like "AW-123" to its product via the ID prefix.

    Longest-prefix match so "GT-XYZ" resolves to GT, not G. Raises
    UnknownTagPrefixError for anything outside {AW, DC, G, GT, UA}.
    """
    prefix = tag_id.split("-", 1)[0].upper()
    if prefix not in GOOGLE_TAG_PREFIXES:
        raise UnknownTagPrefixError(f"unrecognized Google tag prefix: {tag_id!r}")
    return GOOGLE_TAG_PREFIXES[prefix]


VERTICAL_HEALTH = "health"
VERTICAL_FINANCE = "finance"
SENSITIVE_VERTICALS = (VERTICAL_HEALTH, VERTICAL_FINANCE)


def canonical_vertical(raw: str) -> str:
    """Map a raw vertical label: health/finance pass through, the rest
    become "non_sensitive:<raw>"."""
    label = raw.strip().lower()
    if not label:
        raise ValueError("vertical label must be non-empty")
    if label in SENSITIVE_VERTICALS:
        return label
    if label.startswith("non_sensitive:"):
        return label
    return f"non_sensitive:{label}"


@dataclass(frozen=True)
class SiteRecord:
    domain: str
    rank: int
    vertical: str

    def __post_init__(self) -> None:
        if not self.domain:
            raise ValueError("domain must be non-empty")
        if self.domain != self.domain.lower():
            raise ValueError(f"domain must be lowercase: {self.domain!r}")
        if "://" in self.domain:
            raise ValueError(f"domain must not carry a scheme: {self.domain!r}")
        if self.rank < 1:
            raise ValueError(f"rank must be positive: {self.rank}")

    @property
    def is_sensitive(self) -> bool:
        return self.vertical in SENSITIVE_VERTICALS


class VisitOutcome(enum.Enum):
    OK = "ok"
    UNREACHABLE = "unreachable"
    TIMEOUT = "timeout"
    BOT_SUSPECTED = "bot_suspected"


class Initiator(enum.Enum):
    TOP_DOCUMENT = "top_document"
    SUBFRAME = "subframe"


@dataclass(frozen=True)
class NetworkRequest:
    """One captured request. query_params is the URL-decoded, order-preserving
    multimap of the query string; decoding happened exactly once, at ingest."""

    method: str
    url: str
    query_params: tuple[tuple[str, str], ...] = ()
    body: bytes = b""
    initiator: Initiator = Initiator.TOP_DOCUMENT
    timestamp_ms: int = 0


@dataclass(frozen=True)
class VisitCapture:
    site: SiteRecord
    visit_index: int
    requests: tuple[NetworkRequest, ...] = ()
    scripts: dict[str, str] = field(default_factory=dict)
    form_injected: bool = False
    visit_outcome: VisitOutcome = VisitOutcome.OK

    def __post_init__(self) -> None:
        if self.visit_index < 1:
            raise ValueError("visit_index must be >= 1")
        request_urls = {r.url for r in self.requests}
        stray = set(self.scripts) - request_urls
        if stray:
            raise ValueError(f"script bodies without matching requests: {sorted(stray)}")


@dataclass(frozen=True)
class TrackerInstallation:
    provider: Provider
    tracker_id: str
    tag_kind: TagKind
    first_party_mode: bool
    source_url: str


@dataclass(frozen=True)
class PixelConfiguration:
    pixel_id: str
    selected_match_keys: frozenset[PiiField]
    automatic_matching_enabled: bool
    raw_excerpt: str

    def __post_init__(self) -> None:
        if self.automatic_matching_enabled != bool(self.selected_match_keys):
            raise ValueError("automatic_matching_enabled must track non-empty selected_match_keys")


@dataclass(frozen=True)
class FdcEvent:
    provider: Provider
    mode: CollectionMode
    matched_fields: frozenset[PiiField]
    request_url: str
    matched_digests: tuple[tuple[PiiField, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.matched_fields:
            raise ValueError("an FdcEvent must match at least one field")


@dataclass(frozen=True)
class ParseWarning:
    site: str
    url: str
    reason: str

    def __post_init__(self) -> None:
        if not self.reason:
            raise ValueError("warning reason must be non-empty")


@dataclass(frozen=True)
class ProviderVerdict:
    """Per-provider slice of a site verdict. `configured` and `config_fields`
    are only ever populated for Meta (static analysis of Google configs is
    out of scope)."""

    installed: bool = False
    installations: tuple[TrackerInstallation, ...] = ()
    configured: bool = False
    config_fields: frozenset[PiiField] = frozenset()
    fdc: bool = False
    fdc_fields: frozenset[PiiField] = frozenset()
    fdc_modes: frozenset[CollectionMode] = frozenset()
    fdc_events: tuple[FdcEvent, ...] = ()

    def __post_init__(self) -> None:
        if self.fdc and not self.fdc_events:
            raise ValueError("fdc=True requires at least one recorded FdcEvent")


@dataclass(frozen=True)
class SiteVerdict:
    site: SiteRecord
    meta: ProviderVerdict = field(default_factory=ProviderVerdict)
    google: ProviderVerdict = field(default_factory=ProviderVerdict)
    visits_used: int = 1
    diagnostics: tuple[ParseWarning, ...] = ()

    def for_provider(self, provider: Provider) -> ProviderVerdict:
        return self.meta if provider is Provider.META else self.google


def _merge_provider(parts: list[ProviderVerdict]) -> ProviderVerdict:
    installations: list[TrackerInstallation] = []
    for part in parts:
        for inst in part.installations:
            if inst not in installations:
                installations.append(inst)
    events: list[FdcEvent] = []
    for part in parts:
        for ev in part.fdc_events:
            if ev not in events:
                events.append(ev)
    return ProviderVerdict(
        installed=any(p.installed for p in parts),
        installations=tuple(installations),
        configured=any(p.configured for p in parts),
        config_fields=frozenset().union(*(p.config_fields for p in parts)),
        fdc=any(p.fdc for p in parts),
        fdc_fields=frozenset().union(*(p.fdc_fields for p in parts)),
        fdc_modes=frozenset().union(*(p.fdc_modes for p in parts)),
        fdc_events=tuple(events),
    )


def merge_verdicts(visit_verdicts: list[SiteVerdict]) -> SiteVerdict:
    """Fold per-visit verdicts for one site into the ever-observed verdict.

    Booleans OR, field sets union, visits_used counts inputs. Idempotent,
    commutative and associative up to installation/event ordering.
    """
    if not visit_verdicts:
        raise ValueError("merge_verdicts needs at least one verdict")
    domains = {v.site.domain for v in visit_verdicts}
    if len(domains) != 1:
        raise ValueError(f"cannot merge verdicts for different sites: {sorted(domains)}")
    first = visit_verdicts[0]
    diagnostics: list[ParseWarning] = []
    for v in visit_verdicts:
        for w in v.diagnostics:
            if w not in diagnostics:
                diagnostics.append(w)
    return SiteVerdict(
        site=first.site,
        meta=_merge_provider([v.meta for v in visit_verdicts]),
        google=_merge_provider([v.google for v in visit_verdicts]),
        visits_used=sum(v.visits_used for v in visit_verdicts),
        diagnostics=tuple(diagnostics),
    )


# --- verdict (de)serialization: formscope-verdict/1, one JSON object per site ---

VERDICT_FORMAT = "formscope-verdict/1"


def _installation_to_dict(inst: TrackerInstallation) -> dict:
    return {
        "provider": inst.provider.value,
        "tracker_id": inst.tracker_id,
        "tag_kind": inst.tag_kind.value,
        "first_party_mode": inst.first_party_mode,
        "source_url": inst.source_url,
    }


def _installation_from_dict(d: dict) -> TrackerInstallation:
    return TrackerInstallation(
        provider=Provider(d["provider"]),
        tracker_id=d["tracker_id"],
        tag_kind=TagKind(d["tag_kind"]),
        first_party_mode=d["first_party_mode"],
        source_url=d["source_url"],
    )


def _event_to_dict(ev: FdcEvent) -> dict:
    return {
        "provider": ev.provider.value,
        "mode": ev.mode.value,
        "matched_fields": sorted(f.value for f in ev.matched_fields),
        "request_url": ev.request_url,
        "matched_digests": [[f.value, h] for f, h in ev.matched_digests],
    }


def _event_from_dict(d: dict) -> FdcEvent:
    return FdcEvent(
        provider=Provider(d["provider"]),
        mode=CollectionMode(d["mode"]),
        matched_fields=frozenset(PiiField(f) for f in d["matched_fields"]),
        request_url=d["request_url"],
        matched_digests=tuple((PiiField(f), h) for f, h in d["matched_digests"]),
    )


def _provider_to_dict(p: ProviderVerdict) -> dict:
    return {
        "installed": p.installed,
        "installations": [_installation_to_dict(i) for i in p.installations],
        "configured": p.configured,
        "config_fields": sorted(f.value for f in p.config_fields),
        "fdc": p.fdc,
        "fdc_fields": sorted(f.value for f in p.fdc_fields),
        "fdc_modes": sorted(m.value for m in p.fdc_modes),
        "fdc_events": [_event_to_dict(e) for e in p.fdc_events],
    }


def _provider_from_dict(d: dict) -> ProviderVerdict:
    return ProviderVerdict(
        installed=d["installed"],
        installations=tuple(_installation_from_dict(i) for i in d["installations"]),
        configured=d["configured"],
        config_fields=frozenset(PiiField(f) for f in d["config_fields"]),
        fdc=d["fdc"],
        fdc_fields=frozenset(PiiField(f) for f in d["fdc_fields"]),
        fdc_modes=frozenset(CollectionMode(m) for m in d["fdc_modes"]),
        fdc_events=tuple(_event_from_dict(e) for e in d["fdc_events"]),
    )


def verdict_to_dict(v: SiteVerdict) -> dict:
    return {
        "format": VERDICT_FORMAT,
        "site": {"domain": v.site.domain, "rank": v.site.rank, "vertical": v.site.vertical},
        "meta": _provider_to_dict(v.meta),
        "google": _provider_to_dict(v.google),
        "visits_used": v.visits_used,
        "diagnostics": [
            {"site": w.site, "url": w.url, "reason": w.reason} for w in v.diagnostics
        ],
    }


def verdict_from_dict(d: dict) -> SiteVerdict:
    if d.get("format") != VERDICT_FORMAT:
        raise ValueError(f"unsupported verdict format: {d.get('format')!r}")
    site = d["site"]
    return SiteVerdict(
        site=SiteRecord(site["domain"], site["rank"], site["vertical"]),
        meta=_provider_from_dict(d["meta"]),
        google=_provider_from_dict(d["google"]),
        visits_used=d["visits_used"],
        diagnostics=tuple(
            ParseWarning(w["site"], w["url"], w["reason"]) for w in d["diagnostics"]
        ),
    )


__all__ = [
    "PiiField",
    "FORM_FIELDS",
    "Provider",
    "CollectionMode",
    "TagKind",
    "GOOGLE_TAG_PREFIXES",
    "UnknownTagPrefixError",
    "google_tag_kind",
    "canonical_vertical",
    "SENSITIVE_VERTICALS",
    "VERTICAL_HEALTH",
    "VERTICAL_FINANCE",
    "SiteRecord",
    "VisitOutcome",
    "Initiator",
    "NetworkRequest",
    "VisitCapture",
    "TrackerInstallation",
    "PixelConfiguration",
    "FdcEvent",
    "ParseWarning",
    "ProviderVerdict",
    "SiteVerdict",
    "merge_verdicts",
    "VERDICT_FORMAT",
    "verdict_to_dict",
    "verdict_from_dict",
    "replace",
]
