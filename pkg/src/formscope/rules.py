"""Externalized detection rules: install-URL patterns, collection endpoints,
the wire abbreviation map and mode keys.

These live in data, not code, so corrections (e.g. a new collection endpoint
or abbreviation) need no rebuild, and so the visitor-warning browser
extension can consume the exact same file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from formscope.model import PiiField, Provider, TagKind

RULES_FORMAT = "formscope-rules/1"

DEFAULT_ABBREVIATIONS: dict[str, PiiField] = {
    "em": PiiField.EMAIL,
    "ph": PiiField.PHONE_NUMBER,
    "fn": PiiField.FIRST_NAME,
    "ln": PiiField.LAST_NAME,
    "ct": PiiField.CITY,
    "st": PiiField.STATE,
    "zp": PiiField.ZIP_CODE,
    "ge": PiiField.GENDER,
    "country": PiiField.COUNTRY,
    "db": PiiField.DATE_OF_BIRTH,
    "external_id": PiiField.EXTERNAL_ID,
}

DEFAULT_COLLECTION_URLS: dict[Provider, tuple[str, ...]] = {
    Provider.META: (
        "facebook.com/privacy_sandbox/register/trigger",
        "facebook.com/tr",
    ),
    Provider.GOOGLE: (
        "googleadservices.com/pagead/conversion",
        "google.com/ccm/form-data/",
        "analytics.google.com/g/collect",
        "google.com/pagead/form-data/",
    ),
}


@dataclass(frozen=True)
class DetectionRules:
    meta_config_url_prefix: str = "connect.facebook.net/signals/config/"
    google_config_host: str = "googletagmanager.com"
    google_tag_prefixes: dict[str, TagKind] = field(
        default_factory=lambda: {
            "AW": TagKind.ADS,
            "DC": TagKind.FLOODLIGHT,
            "G": TagKind.GA4,
            "GT": TagKind.GA4,
            "UA": TagKind.UNIVERSAL_ANALYTICS,
        }
    )
    collection_urls: dict[Provider, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_COLLECTION_URLS)
    )
    abbreviation_map: dict[str, PiiField] = field(
        default_factory=lambda: dict(DEFAULT_ABBREVIATIONS)
    )
    automatic_key: str = "udff"
    manual_key: str = "ud"
    first_party_filename_marker: str = "googletagmanager"
    # Structural probe for first-party Google configs: body must contain a
    # recognizable tag ID plus at least one of these bootstrap markers.
    first_party_structure_markers: tuple[str, ...] = ("dataLayer", "gtag(")

    def __post_init__(self) -> None:
        fields = list(self.abbreviation_map.values())
        if len(fields) != len(set(fields)):
            raise ValueError("abbreviation_map must be injective")
        for provider, urls in self.collection_urls.items():
            if not urls:
                raise ValueError(f"collection_urls empty for {provider.value}")

    def field_for_token(self, token: str) -> PiiField | None:
        return self.abbreviation_map.get(token)

    def token_for_field(self, pii_field: PiiField) -> str:
        for token, mapped in self.abbreviation_map.items():
            if mapped is pii_field:
                return token
        raise KeyError(pii_field)


def default_rules() -> DetectionRules:
    return DetectionRules()


def rules_to_dict(rules: DetectionRules) -> dict:
    return {
        "format": RULES_FORMAT,
        "meta_config_url_prefix": rules.meta_config_url_prefix,
        "google_config_host": rules.google_config_host,
        "google_tag_prefixes": {p: k.value for p, k in rules.google_tag_prefixes.items()},
        "collection_urls": {
            provider.value: list(urls) for provider, urls in rules.collection_urls.items()
        },
        "abbreviation_map": {t: f.value for t, f in rules.abbreviation_map.items()},
        "automatic_key": rules.automatic_key,
        "manual_key": rules.manual_key,
        "first_party_filename_marker": rules.first_party_filename_marker,
        "first_party_structure_markers": list(rules.first_party_structure_markers),
    }


def rules_from_dict(data: dict) -> DetectionRules:
    if data.get("format") != RULES_FORMAT:
        raise ValueError(f"unsupported rules format: {data.get('format')!r}")
    return DetectionRules(
        meta_config_url_prefix=data["meta_config_url_prefix"],
        google_config_host=data["google_config_host"],
        google_tag_prefixes={p: TagKind(k) for p, k in data["google_tag_prefixes"].items()},
        collection_urls={
            Provider(p): tuple(urls) for p, urls in data["collection_urls"].items()
        },
        abbreviation_map={t: PiiField(f) for t, f in data["abbreviation_map"].items()},
        automatic_key=data["automatic_key"],
        manual_key=data["manual_key"],
        first_party_filename_marker=data["first_party_filename_marker"],
        first_party_structure_markers=tuple(data["first_party_structure_markers"]),
    )


def save_rules(rules: DetectionRules, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(rules_to_dict(rules), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_rules(path: str | Path) -> DetectionRules:
    return rules_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
