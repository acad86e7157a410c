"""Ingest: the versioned visit-capture archive format, a lossy HAR 1.2 import
shim, and the site-list CSV loader.

The capture schema is a strict subset of HAR semantics (url, method, query,
body, initiator, timing) because nothing downstream needs more. Query strings
are decoded exactly once, here, so detectors never re-decode.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

from formscope.model import (
    Initiator,
    NetworkRequest,
    ParseWarning,
    SiteRecord,
    VisitCapture,
    VisitOutcome,
    canonical_vertical,
)

CAPTURE_FORMAT = "formscope-capture/1"


class CaptureError(ValueError):
    """The archive as a whole is unusable (individual bad entries only warn)."""


def load_site_list(path: str | Path) -> list[SiteRecord]:
    """Parse a `domain,rank,vertical` CSV into validated SiteRecords.

    Duplicate domains and malformed rows are hard errors with line numbers.
    """
    records: list[SiteRecord] = []
    seen: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CaptureError(f"{path}: empty site list") from None
        if [h.strip().lower() for h in header] != ["domain", "rank", "vertical"]:
            raise CaptureError(f"{path}:1: expected header domain,rank,vertical")
        for lineno, row in enumerate(reader, 2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise CaptureError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            domain = row[0].strip().lower()
            if domain in seen:
                raise CaptureError(
                    f"{path}:{lineno}: duplicate domain {domain!r} "
                    f"(first seen at line {seen[domain]})"
                )
            try:
                rank = int(row[1])
                record = SiteRecord(domain, rank, canonical_vertical(row[2]))
            except ValueError as exc:
                raise CaptureError(f"{path}:{lineno}: {exc}") from exc
            seen[domain] = lineno
            records.append(record)
    return records


def decode_query(url: str) -> tuple[tuple[str, str], ...]:
    """URL-decode the query string into an ordered key/value multimap."""
    query = urlsplit(url).query
    return tuple(parse_qsl(query, keep_blank_values=True))


@dataclass(frozen=True)
class ParsedCapture:
    capture: VisitCapture
    warnings: tuple[ParseWarning, ...]


def _body_digest(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()[:16]


def parse_capture(data: bytes | str | dict) -> ParsedCapture:
    """Materialize a capture archive. Individual malformed entries are skipped
    and counted as warnings; duplicates across the two recording channels are
    removed by (method, url, body digest, 1 s timestamp bucket)."""
    if isinstance(data, (bytes, str)):
        try:
            doc = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CaptureError(f"unparseable capture archive: {exc}") from exc
    else:
        doc = data
    if not isinstance(doc, dict) or doc.get("format") != CAPTURE_FORMAT:
        raise CaptureError(f"unsupported capture format: {doc.get('format')!r}")

    site_doc = doc["site"]
    site = SiteRecord(site_doc["domain"], site_doc["rank"], site_doc["vertical"])

    warnings: list[ParseWarning] = []
    requests: list[NetworkRequest] = []
    seen_keys: set[tuple[str, str, str, int]] = set()
    for entry in doc.get("entries", []):
        url = entry.get("url", "")
        parts = urlsplit(url)
        if not parts.scheme or not parts.netloc:
            warnings.append(ParseWarning(site.domain, url, "entry has invalid URL; skipped"))
            continue
        body = base64.b64decode(entry.get("body_b64", "")) if entry.get("body_b64") else b""
        time_ms = int(entry.get("time_ms", 0))
        method = entry.get("method", "GET")
        key = (method, url, _body_digest(body), time_ms // 1000)
        if key in seen_keys:
            continue
        seen_keys.add(key)
        requests.append(
            NetworkRequest(
                method=method,
                url=url,
                query_params=decode_query(url),
                body=body,
                initiator=Initiator(entry.get("initiator", "top_document")),
                timestamp_ms=time_ms,
            )
        )

    request_urls = {r.url for r in requests}
    scripts: dict[str, str] = {}
    for url, text in doc.get("scripts", {}).items():
        if url not in request_urls:
            warnings.append(
                ParseWarning(site.domain, url, "script body without matching request; skipped")
            )
            continue
        scripts[url] = text

    capture = VisitCapture(
        site=site,
        visit_index=int(doc.get("visit_index", 1)),
        requests=tuple(requests),
        scripts=scripts,
        form_injected=bool(doc.get("form_injected", False)),
        visit_outcome=VisitOutcome(doc.get("visit_outcome", "ok")),
    )
    return ParsedCapture(capture=capture, warnings=tuple(warnings))


def capture_to_dict(capture: VisitCapture) -> dict:
    return {
        "format": CAPTURE_FORMAT,
        "site": {
            "domain": capture.site.domain,
            "rank": capture.site.rank,
            "vertical": capture.site.vertical,
        },
        "visit_index": capture.visit_index,
        "form_injected": capture.form_injected,
        "visit_outcome": capture.visit_outcome.value,
        "entries": [
            {
                "method": r.method,
                "url": r.url,
                "body_b64": base64.b64encode(r.body).decode("ascii") if r.body else "",
                "initiator": r.initiator.value,
                "time_ms": r.timestamp_ms,
            }
            for r in capture.requests
        ],
        "scripts": dict(capture.scripts),
    }


def save_capture(capture: VisitCapture, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(capture_to_dict(capture), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_capture(path: str | Path) -> ParsedCapture:
    return parse_capture(Path(path).read_bytes())


def har_to_capture_dict(har: dict, site: SiteRecord, *, visit_index: int = 1,
                        form_injected: bool = False) -> dict:
    """Lossy-map a standard HAR 1.2 document into the native capture schema.

    Timings become millisecond offsets from the earliest entry; script bodies
    are retained for entries whose response mime type looks like JavaScript.
    """
    try:
        entries = har["log"]["entries"]
    except (KeyError, TypeError) as exc:
        raise CaptureError("not a HAR 1.2 document (missing log.entries)") from exc

    starts: list[float] = []
    for entry in entries:
        started = entry.get("startedDateTime")
        starts.append(_parse_har_time(started) if started else 0.0)
    base = min(starts) if starts else 0.0

    out_entries = []
    scripts: dict[str, str] = {}
    for entry, start in zip(entries, starts):
        request = entry.get("request", {})
        url = request.get("url", "")
        body = b""
        post = request.get("postData") or {}
        if post.get("text"):
            body = post["text"].encode("utf-8")
        out_entries.append(
            {
                "method": request.get("method", "GET"),
                "url": url,
                "body_b64": base64.b64encode(body).decode("ascii") if body else "",
                "initiator": "top_document",
                "time_ms": int((start - base) * 1000),
            }
        )
        content = (entry.get("response") or {}).get("content") or {}
        mime = content.get("mimeType", "")
        if "javascript" in mime and content.get("text"):
            scripts[url] = content["text"]

    return {
        "format": CAPTURE_FORMAT,
        "site": {"domain": site.domain, "rank": site.rank, "vertical": site.vertical},
        "visit_index": visit_index,
        "form_injected": form_injected,
        "visit_outcome": "ok",
        "entries": out_entries,
        "scripts": scripts,
    }


def _parse_har_time(text: str) -> float:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text).timestamp()
