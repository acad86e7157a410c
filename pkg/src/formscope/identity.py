"""Placeholder identity: the synthetic persona whose per-provider digests are
the needles searched for in outbound traffic.

Meta hashes normalized values with SHA-256; Google hashes the base64 text of
the value with SHA-256 (standard alphabet, with padding). Detection only needs
the injecting side and the matching side to agree on normalization, so the
recipe below is fixed rather than provider-exact.
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from formscope.model import FORM_FIELDS, PiiField

_WS = re.compile(r"\s+")


def normalize(field: PiiField, raw: str) -> str:
    """Canonicalize a raw value before hashing. Idempotent per field."""
    if not raw or not raw.strip():
        raise ValueError(f"empty value for {field.value}")
    value = raw.strip()
    if field is PiiField.EMAIL:
        return value.lower()
    if field is PiiField.PHONE_NUMBER:
        digits = re.sub(r"\D", "", value)
        if not digits:
            raise ValueError(f"phone number contains no digits: {raw!r}")
        return digits
    if field is PiiField.ZIP_CODE:
        return value
    # names, city, state and the remaining free-text categories
    return _WS.sub(" ", value).lower()


def meta_digest(normalized: str) -> str:
    """Lowercase hex SHA-256 over the UTF-8 bytes of the normalized value."""
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def google_digest(normalized: str) -> str:
    """Lowercase hex SHA-256 over the standard base64 encoding (with padding)
    of the UTF-8 bytes of the normalized value."""
    encoded = base64.b64encode(normalized.encode("utf-8"))
    return hashlib.sha256(encoded).hexdigest()


@dataclass(frozen=True)
class IdentityEntry:
    raw: str
    normalized: str
    meta_digest: str
    google_digest: str


@dataclass(frozen=True)
class PlaceholderIdentity:
    """Synthetic persona; no real person's data. Covers at least the seven
    injected form fields; external_id is intentionally excluded."""

    entries: dict[PiiField, IdentityEntry]

    def raw_value(self, field: PiiField) -> str:
        return self.entries[field].raw

    def digest(self, field: PiiField, provider_meta: bool) -> str:
        entry = self.entries[field]
        return entry.meta_digest if provider_meta else entry.google_digest

    @property
    def fields(self) -> frozenset[PiiField]:
        return frozenset(self.entries)


REQUIRED_FIELDS = FORM_FIELDS

#: Default synthetic persona. The .invalid TLD guarantees no real inbox.
DEFAULT_SEED: dict[PiiField, str] = {
    PiiField.EMAIL: "casey.formscope@example-placeholder.invalid",
    PiiField.PHONE_NUMBER: "+1 (555) 010-0199",
    PiiField.FIRST_NAME: "Casey",
    PiiField.LAST_NAME: "Placeholder",
    PiiField.CITY: "Springfield",
    PiiField.STATE: "Ohio",
    PiiField.ZIP_CODE: "45501",
}


def build_identity(seed_values: dict[PiiField, str]) -> PlaceholderIdentity:
    """Build the identity from raw seed values.

    The seed must cover the seven injected form fields; anything beyond
    external_id may be added. Colliding normalized values are rejected so a
    digest always attributes to exactly one field.
    """
    missing = [f.value for f in REQUIRED_FIELDS if f not in seed_values]
    if missing:
        raise ValueError(f"seed is missing required fields: {', '.join(missing)}")
    if PiiField.EXTERNAL_ID in seed_values:
        raise ValueError("external_id is not part of the placeholder identity")
    entries: dict[PiiField, IdentityEntry] = {}
    seen_normalized: dict[str, PiiField] = {}
    for field, raw in seed_values.items():
        norm = normalize(field, raw)
        if norm in seen_normalized:
            raise ValueError(
                f"normalized value collision between {seen_normalized[norm].value} "
                f"and {field.value}: {norm!r}"
            )
        seen_normalized[norm] = field
        entries[field] = IdentityEntry(
            raw=raw,
            normalized=norm,
            meta_digest=meta_digest(norm),
            google_digest=google_digest(norm),
        )
    return PlaceholderIdentity(entries=entries)


def default_identity() -> PlaceholderIdentity:
    return build_identity(DEFAULT_SEED)


def save_identity(identity: PlaceholderIdentity, path: str | Path) -> None:
    """Write the identity as a flat key=value file (raw values only; the
    normalized forms and digests are recomputed on load)."""
    lines = [f"{field.value}={entry.raw}" for field, entry in sorted(
        identity.entries.items(), key=lambda kv: kv[0].value)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_identity(path: str | Path) -> PlaceholderIdentity:
    seed: dict[PiiField, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        try:
            field = PiiField(key.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: unknown field {key.strip()!r}") from exc
        seed[field] = raw
    return build_identity(seed)
