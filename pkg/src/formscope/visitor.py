"""Page visitors: how a site visit actually happens.

`EmulatedVisitor` is a lightweight page runtime that speaks plain HTTP
against the testbed through a resolver map (hostname -> address). It loads
the page, fetches referenced scripts, injects and "submits" the placeholder
form, and then behaves the way the trackers' client code does: reads the
fetched config scripts and fires collection requests with hashed values.

`CdpVisitor` attaches to an externally launched browser over the DevTools
WebSocket protocol for crawling real sites. It needs a running browser and
is exercised only structurally in the test suite.

Neither visitor consults DetectionRules: what they emit is judged later by
the detectors, and on the testbed by the collection ledger.
"""

from __future__ import annotations

import http.client
import re
import socket
import time
from dataclasses import dataclass
from urllib.parse import quote, urlencode, urlsplit

from formscope.capture import decode_query
from formscope.identity import PlaceholderIdentity
from formscope.model import (
    FORM_FIELDS,
    Initiator,
    NetworkRequest,
    PiiField,
    SiteRecord,
    VisitCapture,
    VisitOutcome,
)

# The page runtime's own wire-token table (kept separate from DetectionRules
# on purpose; both mirror the providers' public parameter names).
_FIELD_TOKENS = {
    PiiField.EMAIL: "em",
    PiiField.PHONE_NUMBER: "ph",
    PiiField.FIRST_NAME: "fn",
    PiiField.LAST_NAME: "ln",
    PiiField.CITY: "ct",
    PiiField.STATE: "st",
    PiiField.ZIP_CODE: "zp",
    PiiField.GENDER: "ge",
    PiiField.COUNTRY: "country",
    PiiField.DATE_OF_BIRTH: "db",
    PiiField.EXTERNAL_ID: "external_id",
}
_TOKEN_FIELDS = {token: field for field, token in _FIELD_TOKENS.items()}

_SCRIPT_SRC_RE = re.compile(r"<script[^>]+src=\"([^\"]+)\"", re.IGNORECASE)
_MATCH_KEYS_RE = re.compile(r"selectedMatchKeys\"?\s*[:=]\s*\[([^\]]*)\]")
_TOKEN_RE = re.compile(r"""["']([^"']+)["']""")
_MANUAL_MARKER_RE = re.compile(
    r'<meta name="manual-collection" content="([^":]+):([^"]*)"'
)
_GTAG_FDC_RE = re.compile(r'"formDataCollection"\s*:\s*true')
_GTAG_ID_RE = re.compile(r"gtag\('config','([^']+)'\)")

_BOT_MARKERS = ("captcha", "cf-chl", "challenge-platform", "are you a robot")


def build_injection_script(identity: PlaceholderIdentity) -> str:
    """JavaScript that appends the placeholder form to the first div/span
    (falling back to body), fills it, and clicks submit. Runs in the top
    document only; it never reaches into nested frames."""
    inputs = []
    fills = []
    for field in FORM_FIELDS:
        name = field.value
        value = identity.raw_value(field).replace("\\", "\\\\").replace("'", "\\'")
        inputs.append(
            f"var i_{name} = document.createElement('input');"
            f"i_{name}.name = '{name}';"
            f"form.appendChild(i_{name});"
        )
        fills.append(f"i_{name}.value = '{value}';")
    return (
        "(function () {\n"
        "  var anchor = document.querySelector('div, span') || document.body;\n"
        "  var form = document.createElement('form');\n"
        "  " + "\n  ".join(inputs) + "\n"
        "  " + "\n  ".join(fills) + "\n"
        "  var submit = document.createElement('button');\n"
        "  submit.type = 'submit';\n"
        "  form.appendChild(submit);\n"
        "  anchor.appendChild(form);\n"
        "  submit.click();\n"
        "})();"
    )


class FetchError(Exception):
    pass


@dataclass
class _Fetched:
    status: int
    body: bytes


class EmulatedVisitor:
    """HTTP-level page runtime against a resolver map. Thread-safe: each
    visit uses only local state."""

    def __init__(self, resolver: dict[str, str], page_timeout_s: float = 180.0):
        self.resolver = dict(resolver)
        self.page_timeout_s = page_timeout_s

    def _resolve(self, host: str) -> tuple[str, int]:
        for candidate in (host, host.removeprefix("www.")):
            if candidate in self.resolver:
                addr = self.resolver[candidate]
                ip, _, port = addr.partition(":")
                return ip, int(port or "80")
        raise FetchError(f"no resolver entry for host {host!r}")

    def _fetch(self, url: str, method: str = "GET", body: bytes = b"") -> _Fetched:
        parts = urlsplit(url)
        host = parts.hostname or ""
        ip, port = self._resolve(host)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        conn = http.client.HTTPConnection(ip, port, timeout=self.page_timeout_s)
        try:
            conn.request(method, path, body=body or None, headers={"Host": host})
            response = conn.getresponse()
            return _Fetched(status=response.status, body=response.read())
        except socket.timeout as exc:
            raise TimeoutError(str(exc)) from exc
        except OSError as exc:
            raise FetchError(str(exc)) from exc
        finally:
            conn.close()

    def visit(self, site: SiteRecord, identity: PlaceholderIdentity,
              visit_index: int = 1) -> VisitCapture:
        start = time.monotonic()
        requests: list[NetworkRequest] = []
        scripts: dict[str, str] = {}

        def record(url: str, method: str = "GET", body: bytes = b"") -> None:
            requests.append(
                NetworkRequest(
                    method=method,
                    url=url,
                    query_params=decode_query(url),
                    body=body,
                    initiator=Initiator.TOP_DOCUMENT,
                    timestamp_ms=int((time.monotonic() - start) * 1000),
                )
            )

        def capture(outcome: VisitOutcome, form_injected: bool = False) -> VisitCapture:
            return VisitCapture(
                site=site,
                visit_index=visit_index,
                requests=tuple(requests),
                scripts=scripts,
                form_injected=form_injected,
                visit_outcome=outcome,
            )

        page_url = f"https://{site.domain}/"
        try:
            page = self._fetch(page_url)
        except TimeoutError:
            return capture(VisitOutcome.TIMEOUT)
        except FetchError:
            return capture(VisitOutcome.UNREACHABLE)
        if page.status >= 400:
            return capture(VisitOutcome.UNREACHABLE)
        html = page.body.decode("utf-8", "replace")
        if any(marker in html.lower() for marker in _BOT_MARKERS):
            record(page_url)
            return capture(VisitOutcome.BOT_SUSPECTED)
        record(page_url)

        # load referenced scripts, like a browser would
        for src in _SCRIPT_SRC_RE.findall(html):
            try:
                fetched = self._fetch(src)
            except (FetchError, TimeoutError):
                continue
            record(src)
            if fetched.status == 200:
                scripts[src] = fetched.body.decode("utf-8", "replace")

        # form injection + submission triggers the tracker runtimes
        self._run_meta_runtime(html, scripts, identity, record)
        self._run_google_runtime(scripts, identity, record)
        return capture(VisitOutcome.OK, form_injected=True)

    # tracker client behavior, driven purely by the fetched config scripts

    def _run_meta_runtime(self, html: str, scripts: dict[str, str],
                          identity: PlaceholderIdentity, record) -> None:
        manual: dict[str, list[str]] = {}
        for pixel_id, tokens in _MANUAL_MARKER_RE.findall(html):
            manual[pixel_id] = [t for t in tokens.split(",") if t]

        for url, body in sorted(scripts.items()):
            parts = urlsplit(url)
            if (parts.hostname or "") != "connect.facebook.net":
                continue
            if not parts.path.startswith("/signals/config/"):
                continue
            pixel_id = parts.path[len("/signals/config/"):].split("/", 1)[0]

            pairs: list[tuple[str, str]] = [("id", pixel_id), ("ev", "SubscribedButtonClick")]
            match = _MATCH_KEYS_RE.search(body)
            if match:
                for token in _TOKEN_RE.findall(match.group(1)):
                    field = _TOKEN_FIELDS.get(token)
                    if field in identity.fields:
                        pairs.append(
                            (f"udff[{token}]", identity.digest(field, provider_meta=True))
                        )
            for token in manual.get(pixel_id, ()):
                field = _TOKEN_FIELDS.get(token)
                if field in identity.fields:
                    pairs.append((f"ud[{token}]", identity.digest(field, provider_meta=True)))
            if len(pairs) == 2:  # nothing configured, no collection event
                continue
            query = urlencode(pairs, quote_via=quote)
            hit_url = f"https://www.facebook.com/tr?{query}"
            try:
                self._fetch(hit_url)
            except (FetchError, TimeoutError):
                pass
            record(hit_url)

    def _run_google_runtime(self, scripts: dict[str, str],
                            identity: PlaceholderIdentity, record) -> None:
        for url, body in sorted(scripts.items()):
            if not _GTAG_FDC_RE.search(body):
                continue
            match = _GTAG_ID_RE.search(body)
            if not match:
                continue
            tag_id = match.group(1)
            digest = identity.digest(PiiField.EMAIL, provider_meta=False)
            # digest rides inside a longer parameter blob, as on the wire
            pairs = [("tid", tag_id), ("v", "1"), ("em", f"tv.1~em.{digest}~cs.0")]
            query = urlencode(pairs, quote_via=quote)
            hit_url = f"https://www.google.com/ccm/form-data/?{query}"
            try:
                self._fetch(hit_url)
            except (FetchError, TimeoutError):
                pass
            record(hit_url)
