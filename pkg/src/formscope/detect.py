"""Detection and static analysis: tracker installation detection, form-data
collection (FDC) event detection via hashed-needle search, wire-key mode
classification, and Meta pixel configuration parsing.

Everything here is a pure function of (capture, identity, rules); identical
captures always yield identical verdicts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from urllib.parse import urlsplit

from formscope.identity import PlaceholderIdentity
from formscope.model import (
    CollectionMode,
    FdcEvent,
    NetworkRequest,
    ParseWarning,
    PiiField,
    PixelConfiguration,
    Provider,
    ProviderVerdict,
    SiteVerdict,
    TagKind,
    TrackerInstallation,
    VisitCapture,
)
from formscope.rules import DetectionRules

_TAG_ID_RE = re.compile(r"\b(AW|DC|GT|G|UA)-[A-Za-z0-9_]+\b")
_BRACKET_KEY_RE = re.compile(r"^([a-z]+)\[([^\]]+)\]$")


class ConfigParseError(ValueError):
    """selectedMatchKeys was present but its list could not be parsed."""

    def __init__(self, message: str, raw_excerpt: str):
        super().__init__(message)
        self.raw_excerpt = raw_excerpt


def host_path(url: str) -> str:
    """Lowercased host + path with any leading "www." stripped, for prefix
    matching against rule URLs like "facebook.com/tr"."""
    parts = urlsplit(url)
    host = parts.hostname or ""
    if host.startswith("www."):
        host = host[4:]
    return host + parts.path


def matches_prefix(url: str, prefix: str) -> bool:
    return host_path(url).startswith(prefix)


def collection_provider(url: str, rules: DetectionRules) -> Provider | None:
    """Which provider's collection endpoint this URL hits, if any."""
    hp = host_path(url)
    for provider, prefixes in rules.collection_urls.items():
        if any(hp.startswith(p) for p in prefixes):
            return provider
    return None


def detect_meta_installations(
    capture: VisitCapture, rules: DetectionRules, warnings: list[ParseWarning] | None = None
) -> list[TrackerInstallation]:
    """One installation per distinct pixel ID whose config GET appears."""
    installations: list[TrackerInstallation] = []
    seen_ids: set[str] = set()
    for request in capture.requests:
        if request.method != "GET":
            continue
        if not matches_prefix(request.url, rules.meta_config_url_prefix):
            continue
        rest = host_path(request.url)[len(rules.meta_config_url_prefix):]
        pixel_id = rest.split("/", 1)[0]
        if not pixel_id:
            if warnings is not None:
                warnings.append(
                    ParseWarning(
                        capture.site.domain, request.url, "Meta config URL without pixel ID"
                    )
                )
            continue
        if pixel_id in seen_ids:
            continue
        seen_ids.add(pixel_id)
        installations.append(
            TrackerInstallation(
                provider=Provider.META,
                tracker_id=pixel_id,
                tag_kind=TagKind.PIXEL,
                first_party_mode=False,
                source_url=request.url,
            )
        )
    return installations


def _classify_tag_id(tag_id: str, rules: DetectionRules) -> TagKind | None:
    prefix = tag_id.split("-", 1)[0].upper()
    return rules.google_tag_prefixes.get(prefix)


def detect_google_installations(
    capture: VisitCapture, rules: DetectionRules, warnings: list[ParseWarning] | None = None
) -> list[TrackerInstallation]:
    """Installations from config GETs to the canonical googletagmanager host,
    plus first-party-mode installations: other hosts whose final path segment
    carries the googletagmanager file name and whose body passes the
    structural probe."""
    installations: list[TrackerInstallation] = []
    seen: set[tuple[str, bool]] = set()

    def emit(tag_id: str, first_party: bool, source_url: str) -> None:
        kind = _classify_tag_id(tag_id, rules)
        if kind is None:
            if warnings is not None:
                warnings.append(
                    ParseWarning(
                        capture.site.domain,
                        source_url,
                        f"unrecognized Google tag ID prefix: {tag_id}",
                    )
                )
            return
        key = (tag_id, first_party)
        if key in seen:
            return
        seen.add(key)
        installations.append(
            TrackerInstallation(
                provider=Provider.GOOGLE,
                tracker_id=tag_id,
                tag_kind=kind,
                first_party_mode=first_party,
                source_url=source_url,
            )
        )

    canonical = rules.google_config_host
    for request in capture.requests:
        if request.method != "GET":
            continue
        parts = urlsplit(request.url)
        host = (parts.hostname or "").lower()
        if host.startswith("www."):
            host = host[4:]
        if host == canonical or host.endswith("." + canonical):
            for key, value in request.query_params:
                if key == "id" and value:
                    emit(value, False, request.url)
        else:
            last_segment = parts.path.rsplit("/", 1)[-1]
            if rules.first_party_filename_marker not in last_segment:
                continue
            body = capture.scripts.get(request.url)
            if body is None or not _passes_structure_probe(body, rules):
                continue
            tag_id = next((v for k, v in request.query_params if k == "id" and v), None)
            if tag_id is None:
                match = _TAG_ID_RE.search(body)
                tag_id = match.group(0) if match else None
            if tag_id is None:
                if warnings is not None:
                    warnings.append(
                        ParseWarning(
                            capture.site.domain,
                            request.url,
                            "first-party Google config without extractable tag ID",
                        )
                    )
                continue
            emit(tag_id, True, request.url)
    return installations


def _passes_structure_probe(body: str, rules: DetectionRules) -> bool:
    if not _TAG_ID_RE.search(body):
        return False
    return any(marker in body for marker in rules.first_party_structure_markers)


def classify_meta_param(
    key: str, rules: DetectionRules
) -> tuple[CollectionMode, PiiField | None]:
    """Classify a decoded Meta query key: "udff[<abbr>]" is automatic,
    "ud[<abbr>]" (or the unabbreviated external_id) manual, anything else
    unknown."""
    match = _BRACKET_KEY_RE.match(key)
    if not match:
        return CollectionMode.UNKNOWN, None
    prefix, token = match.groups()
    if prefix == rules.automatic_key:
        mode = CollectionMode.AUTOMATIC
    elif prefix == rules.manual_key:
        mode = CollectionMode.MANUAL
    else:
        return CollectionMode.UNKNOWN, None
    return mode, rules.field_for_token(token)


def detect_fdc_events(
    capture: VisitCapture,
    identity: PlaceholderIdentity,
    rules: DetectionRules,
    warnings: list[ParseWarning] | None = None,
) -> list[FdcEvent]:
    """Scan decoded query values and bodies of requests to known collection
    URLs for the identity's per-provider digests (case-insensitive hex
    substring). Digests seen anywhere else never produce events."""
    events: list[FdcEvent] = []
    for request in capture.requests:
        provider = collection_provider(request.url, rules)
        if provider is None:
            continue
        events.extend(_events_for_request(request, provider, capture, identity, rules, warnings))
    return events


def _events_for_request(
    request: NetworkRequest,
    provider: Provider,
    capture: VisitCapture,
    identity: PlaceholderIdentity,
    rules: DetectionRules,
    warnings: list[ParseWarning] | None,
) -> list[FdcEvent]:
    is_meta = provider is Provider.META
    digests = {
        field: identity.digest(field, provider_meta=is_meta) for field in identity.fields
    }

    # mode -> {field: digest}
    by_mode: dict[CollectionMode, dict[PiiField, str]] = {}

    def record(field: PiiField, digest: str, mode: CollectionMode) -> None:
        by_mode.setdefault(mode, {})[field] = digest

    for key, value in request.query_params:
        lowered = value.lower()
        for field, digest in digests.items():
            if digest not in lowered:
                continue
            if is_meta:
                mode, mapped = classify_meta_param(key, rules)
                if mode is CollectionMode.UNKNOWN or mapped is None:
                    if warnings is not None:
                        warnings.append(
                            ParseWarning(
                                capture.site.domain,
                                request.url,
                                f"digest for {field.value} carried by unmapped key {key!r}",
                            )
                        )
                    record(field, digest, CollectionMode.UNKNOWN)
                else:
                    record(field, digest, mode)
            else:
                record(field, digest, CollectionMode.UNKNOWN)

    if request.body:
        body_text = request.body.decode("utf-8", "replace").lower()
        for field, digest in digests.items():
            if digest in body_text and not any(field in fields for fields in by_mode.values()):
                record(field, digest, CollectionMode.UNKNOWN)

    return [
        FdcEvent(
            provider=provider,
            mode=mode,
            matched_fields=frozenset(fields),
            request_url=request.url,
            matched_digests=tuple(sorted(fields.items(), key=lambda kv: kv[0].value)),
        )
        for mode, fields in sorted(by_mode.items(), key=lambda kv: kv[0].value)
    ]


_MATCH_KEYS_TOKEN = "selectedMatchKeys"
_STRING_RE = re.compile(r"""["']([^"']*)["']""")


def parse_meta_pixel_config(
    script: str,
    source_url: str,
    rules: DetectionRules,
    warnings: list[ParseWarning] | None = None,
) -> PixelConfiguration:
    """Extract the selectedMatchKeys list from a Meta pixel configuration
    script. An absent token or empty list means automatic matching is off;
    a present-but-unparseable list raises ConfigParseError (never a silent
    false)."""
    pixel_id = _pixel_id_from_config_url(source_url, rules)
    index = script.find(_MATCH_KEYS_TOKEN)
    if index == -1:
        return PixelConfiguration(pixel_id, frozenset(), False, "")

    after = script[index + len(_MATCH_KEYS_TOKEN):]
    open_idx = after.find("[")
    # The list must start close to the token; a far-away bracket means we'd
    # be parsing unrelated code.
    if open_idx == -1 or open_idx > 16 or not re.fullmatch(r"""["'\s:=]*""", after[:open_idx]):
        raise ConfigParseError(
            "selectedMatchKeys present but no following list",
            script[index:index + 80],
        )
    close_idx = after.find("]", open_idx)
    if close_idx == -1:
        raise ConfigParseError(
            "selectedMatchKeys list is unterminated", script[index:index + 120]
        )
    body = after[open_idx + 1:close_idx]
    excerpt = script[index:index + len(_MATCH_KEYS_TOKEN) + close_idx + 1]
    stripped = body.strip()
    if stripped and not _STRING_RE.search(stripped):
        raise ConfigParseError("selectedMatchKeys list has no string tokens", excerpt)

    fields: set[PiiField] = set()
    for token in _STRING_RE.findall(body):
        mapped = rules.field_for_token(token)
        if mapped is None:
            if warnings is not None:
                warnings.append(
                    ParseWarning(
                        "", source_url, f"unknown selectedMatchKeys token {token!r}"
                    )
                )
            continue
        fields.add(mapped)
    return PixelConfiguration(
        pixel_id=pixel_id,
        selected_match_keys=frozenset(fields),
        automatic_matching_enabled=bool(fields),
        raw_excerpt=excerpt,
    )


def _pixel_id_from_config_url(source_url: str, rules: DetectionRules) -> str:
    hp = host_path(source_url)
    if hp.startswith(rules.meta_config_url_prefix):
        return hp[len(rules.meta_config_url_prefix):].split("/", 1)[0]
    return ""


def is_default_configuration(cfg: PixelConfiguration) -> bool:
    """True iff every one of the 11 supported fields is selected."""
    return cfg.selected_match_keys == frozenset(PiiField)


@dataclass(frozen=True)
class VisitAnalysis:
    verdict: SiteVerdict
    configurations: tuple[PixelConfiguration, ...]


def analyze_visit(
    capture: VisitCapture, identity: PlaceholderIdentity, rules: DetectionRules
) -> SiteVerdict:
    """Compose the detectors into a single-visit verdict. Parse warnings end
    up in the verdict's diagnostics; a broken pixel config becomes a warning
    rather than aborting the visit."""
    return analyze_visit_detailed(capture, identity, rules).verdict


def analyze_visit_detailed(
    capture: VisitCapture, identity: PlaceholderIdentity, rules: DetectionRules
) -> VisitAnalysis:
    warnings: list[ParseWarning] = []
    meta_installs = detect_meta_installations(capture, rules, warnings)
    google_installs = detect_google_installations(capture, rules, warnings)
    events = detect_fdc_events(capture, identity, rules, warnings)

    configs: list[PixelConfiguration] = []
    for url, script in sorted(capture.scripts.items()):
        if not matches_prefix(url, rules.meta_config_url_prefix):
            continue
        try:
            configs.append(parse_meta_pixel_config(script, url, rules, warnings))
        except ConfigParseError as exc:
            warnings.append(ParseWarning(capture.site.domain, url, str(exc)))

    if len({c.automatic_matching_enabled for c in configs}) > 1:
        warnings.append(
            ParseWarning(
                capture.site.domain,
                "",
                "multiple Meta pixels with conflicting configurations; "
                "runtime collection behavior is unpredictable",
            )
        )

    verdict = SiteVerdict(
        site=capture.site,
        meta=_provider_verdict(Provider.META, meta_installs, events, configs),
        google=_provider_verdict(Provider.GOOGLE, google_installs, events, None),
        visits_used=1,
        diagnostics=tuple(warnings),
    )
    return VisitAnalysis(verdict=verdict, configurations=tuple(configs))


def _provider_verdict(
    provider: Provider,
    installations: list[TrackerInstallation],
    events: list[FdcEvent],
    configs: list[PixelConfiguration] | None,
) -> ProviderVerdict:
    own_events = [e for e in events if e.provider is provider]
    config_fields: frozenset[PiiField] = frozenset()
    configured = False
    if configs:
        configured = any(c.automatic_matching_enabled for c in configs)
        config_fields = frozenset().union(*(c.selected_match_keys for c in configs))
    return ProviderVerdict(
        installed=bool(installations),
        installations=tuple(installations),
        configured=configured,
        config_fields=config_fields,
        fdc=bool(own_events),
        fdc_fields=frozenset().union(*(e.matched_fields for e in own_events))
        if own_events
        else frozenset(),
        fdc_modes=frozenset(e.mode for e in own_events),
        fdc_events=tuple(own_events),
    )
