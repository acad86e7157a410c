"""Local deterministic simulation of the tracker ecosystem: generated site
pages, a mock config/collection server, and an append-only collection ledger
that provides ground truth for end-to-end acceptance.

The testbed deliberately does NOT import DetectionRules: its wire shapes
(config URLs, selectedMatchKeys scripts, udff/ud collection hits) are
produced from its own tables so detector bugs cannot cancel out against
generator bugs.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

CORPUS_FORMAT = "formscope-corpus/1"

#: Wire token per form field, as emitted by real Meta pixels.
META_WIRE_TOKENS = {
    "email": "em",
    "phone_number": "ph",
    "first_name": "fn",
    "last_name": "ln",
    "city": "ct",
    "state": "st",
    "zip_code": "zp",
    "gender": "ge",
    "country": "country",
    "date_of_birth": "db",
    "external_id": "external_id",
}

ALL_FIELD_NAMES = tuple(META_WIRE_TOKENS)

META_CONFIG_HOST = "connect.facebook.net"
GOOGLE_CONFIG_HOST = "www.googletagmanager.com"
META_COLLECTION_HOST = "www.facebook.com"
GOOGLE_COLLECTION_HOSTS = (
    "www.google.com",
    "www.googleadservices.com",
    "analytics.google.com",
)


@dataclass(frozen=True)
class PixelSpec:
    provider: str  # "meta" | "google"
    tracker_id: str
    # Field names (see ALL_FIELD_NAMES); None means collection never enabled.
    selected_match_keys: tuple[str, ...] | None = None
    first_party_mode: bool = False
    manual_mode: bool = False  # Meta only: site code passes values explicitly

    def __post_init__(self) -> None:
        if self.provider not in ("meta", "google"):
            raise ValueError(f"unknown provider {self.provider!r}")
        if self.selected_match_keys:
            unknown = set(self.selected_match_keys) - set(ALL_FIELD_NAMES)
            if unknown:
                raise ValueError(f"unknown field names: {sorted(unknown)}")
        if self.first_party_mode and self.provider != "google":
            raise ValueError("first_party_mode only applies to Google tags")

    @property
    def collecting(self) -> bool:
        return bool(self.selected_match_keys)


@dataclass(frozen=True)
class SiteSpec:
    domain: str
    vertical: str = "shopping"
    pixels: tuple[PixelSpec, ...] = ()
    anchor: str = "div"  # "div" | "span" | "none" (degenerate page)
    has_native_form: bool = False
    latency_s: float = 0.0
    failure: str = "none"  # "none" | "slow_load" | "unreachable"
    fail_first_visits: int = 0  # page 503s for this many page loads

    def __post_init__(self) -> None:
        ids = [p.tracker_id for p in self.pixels]
        if len(ids) != len(set(ids)):
            raise ValueError(f"{self.domain}: tracker IDs must be unique within a spec")
        if self.anchor not in ("div", "span", "none"):
            raise ValueError(f"bad anchor {self.anchor!r}")
        if self.failure not in ("none", "slow_load", "unreachable"):
            raise ValueError(f"bad failure mode {self.failure!r}")


def spec_to_dict(spec: SiteSpec) -> dict:
    return {
        "domain": spec.domain,
        "vertical": spec.vertical,
        "pixels": [
            {
                "provider": p.provider,
                "tracker_id": p.tracker_id,
                "selected_match_keys": list(p.selected_match_keys)
                if p.selected_match_keys is not None
                else None,
                "first_party_mode": p.first_party_mode,
                "manual_mode": p.manual_mode,
            }
            for p in spec.pixels
        ],
        "anchor": spec.anchor,
        "has_native_form": spec.has_native_form,
        "latency_s": spec.latency_s,
        "failure": spec.failure,
        "fail_first_visits": spec.fail_first_visits,
    }


def spec_from_dict(d: dict) -> SiteSpec:
    return SiteSpec(
        domain=d["domain"],
        vertical=d.get("vertical", "shopping"),
        pixels=tuple(
            PixelSpec(
                provider=p["provider"],
                tracker_id=p["tracker_id"],
                selected_match_keys=tuple(p["selected_match_keys"])
                if p.get("selected_match_keys") is not None
                else None,
                first_party_mode=p.get("first_party_mode", False),
                manual_mode=p.get("manual_mode", False),
            )
            for p in d.get("pixels", [])
        ),
        anchor=d.get("anchor", "div"),
        has_native_form=d.get("has_native_form", False),
        latency_s=d.get("latency_s", 0.0),
        failure=d.get("failure", "none"),
        fail_first_visits=d.get("fail_first_visits", 0),
    )


def save_corpus(corpus: list[SiteSpec], path: str | Path) -> None:
    doc = {"format": CORPUS_FORMAT, "sites": [spec_to_dict(s) for s in corpus]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_corpus(path: str | Path) -> list[SiteSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CORPUS_FORMAT:
        raise ValueError(f"unsupported corpus format: {doc.get('format')!r}")
    return [spec_from_dict(d) for d in doc["sites"]]


# --- page and script generation ---


def generate_site(spec: SiteSpec) -> str:
    """Static page embedding the loader snippets for each pixel, mirroring
    the loader-then-config flow of real installations."""
    loaders: list[str] = []
    manual_markers: list[str] = []
    for pixel in spec.pixels:
        if pixel.provider == "meta":
            loaders.append(
                f'<script src="https://{META_CONFIG_HOST}/signals/config/'
                f'{pixel.tracker_id}?v=2.9&r=stable"></script>'
            )
            if pixel.manual_mode and pixel.selected_match_keys:
                tokens = ",".join(META_WIRE_TOKENS[f] for f in pixel.selected_match_keys)
                manual_markers.append(
                    f'<meta name="manual-collection" '
                    f'content="{pixel.tracker_id}:{tokens}">'
                )
        else:
            if pixel.first_party_mode:
                src = (
                    f"https://{spec.domain}/metrics/googletagmanager.js"
                    f"?id={pixel.tracker_id}"
                )
            else:
                src = f"https://{GOOGLE_CONFIG_HOST}/gtag/js?id={pixel.tracker_id}"
            loaders.append(f'<script async src="{src}"></script>')

    if spec.anchor == "div":
        anchor_html = '<div id="content"><p>Welcome.</p></div>'
    elif spec.anchor == "span":
        anchor_html = '<span id="content">Welcome.</span>'
    else:
        anchor_html = "<p>Plain page with no div or span anchors.</p>"

    native_form = ""
    if spec.has_native_form:
        native_form = (
            '<form action="/subscribe" method="post">'
            '<input name="newsletter_email" type="email">'
            '<button type="submit">Subscribe</button></form>'
        )

    return (
        "<!doctype html><html><head><title>"
        + spec.domain
        + "</title>"
        + "".join(manual_markers)
        + "".join(loaders)
        + "</head><body>"
        + anchor_html
        + native_form
        + "</body></html>"
    )


def meta_config_script(pixel: PixelSpec, plain: bool = False) -> str:
    """Config script for a Meta pixel. Automatic-matching pixels carry a
    selectedMatchKeys list; manual or non-collecting pixels do not. By
    default the token is buried in minified-JS noise so static parsers are
    exercised against realistic surroundings."""
    if pixel.selected_match_keys and not pixel.manual_mode:
        tokens = ",".join(
            f'"{META_WIRE_TOKENS[f]}"' for f in pixel.selected_match_keys
        )
        keys_js = f'"selectedMatchKeys":[{tokens}]'
    else:
        keys_js = '"topLevelDomain":null'
    if plain:
        return (
            f'{{"pixelID":"{pixel.tracker_id}","automaticMatching":{{{keys_js}}}}}'
        )
    return (
        'fbq.registerPlugin("'
        + pixel.tracker_id
        + '",{__fbEventsPlugin:1,plugin:function(e,t,r){t.configLoaded("'
        + pixel.tracker_id
        + '")}});e.exports={"pixels":[{"id":"'
        + pixel.tracker_id
        + '","automaticMatching":{'
        + keys_js
        + '},"inferredEvents":{"buttonSelector":null},"standardParams":{"a":1}}]};'
    )


def google_config_script(pixel: PixelSpec) -> str:
    """Structurally valid Google tag bootstrap. The form-data flag is the
    channel through which the page runtime learns whether this tag collects
    form data (stand-in for the real tag's opaque internal config)."""
    collecting = "true" if pixel.collecting else "false"
    return (
        "window.dataLayer=window.dataLayer||[];function gtag()"
        "{dataLayer.push(arguments);}gtag('js',new Date());"
        f"gtag('config','{pixel.tracker_id}');"
        f'var g__cfg={{"tagId":"{pixel.tracker_id}","formDataCollection":{collecting}}};'
    )


# --- the mock server and ledger ---


@dataclass(frozen=True)
class LedgerHit:
    endpoint: str  # host + path
    url: str
    params: tuple[tuple[str, str], ...]
    body_digest: str
    timestamp: float


@dataclass
class CollectionLedger:
    hits: list[LedgerHit] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, hit: LedgerHit) -> None:
        with self._lock:
            self.hits.append(hit)

    def snapshot(self) -> list[LedgerHit]:
        with self._lock:
            return list(self.hits)


COLLECTION_PATHS = {
    "www.facebook.com": ("/tr", "/privacy_sandbox/register/trigger"),
    "facebook.com": ("/tr", "/privacy_sandbox/register/trigger"),
    "www.google.com": ("/ccm/form-data/", "/pagead/form-data/"),
    "google.com": ("/ccm/form-data/", "/pagead/form-data/"),
    "www.googleadservices.com": ("/pagead/conversion",),
    "googleadservices.com": ("/pagead/conversion",),
    "analytics.google.com": ("/g/collect",),
}


class TestbedServer:
    """One HTTP server plays every host: site pages, both providers' config
    endpoints, and the collection endpoints. Requests are routed on the Host
    header; the resolver map tells clients to connect here for each name."""

    def __init__(self, corpus: list[SiteSpec], bind: str = "127.0.0.1", port: int = 0,
                 plain_configs: bool = False):
        self.corpus = {spec.domain: spec for spec in corpus}
        if len(self.corpus) != len(corpus):
            raise ValueError("duplicate domains in corpus")
        self.pixels_by_id: dict[str, PixelSpec] = {}
        for spec in corpus:
            for pixel in spec.pixels:
                if pixel.tracker_id in self.pixels_by_id:
                    raise ValueError(f"tracker ID reused across corpus: {pixel.tracker_id}")
                self.pixels_by_id[pixel.tracker_id] = pixel
        self.ledger = CollectionLedger()
        self.plain_configs = plain_configs
        self.page_loads: dict[str, int] = {}
        self._page_lock = threading.Lock()

        testbed = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):  # keep test output clean
                pass

            def do_GET(self):
                testbed._handle(self, b"")

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length) if length else b""
                testbed._handle(self, body)

        try:
            self.httpd = ThreadingHTTPServer((bind, port), Handler)
        except OSError as exc:
            raise RuntimeError(f"cannot bind testbed to {bind}:{port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def resolver_map(self) -> dict[str, str]:
        """hostname -> host:port for every name the testbed answers for.
        Unreachable-mode sites resolve to a closed port so connections are
        actually refused."""
        host, port = self.address
        endpoint = f"{host}:{port}"
        closed = f"{host}:1"  # port 1 is never bound here
        mapping: dict[str, str] = {}
        for name in (
            META_CONFIG_HOST,
            GOOGLE_CONFIG_HOST,
            "googletagmanager.com",
            *COLLECTION_PATHS,
        ):
            mapping[name] = endpoint
        for spec in self.corpus.values():
            mapping[spec.domain] = closed if spec.failure == "unreachable" else endpoint
        return mapping

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    # request routing

    def _handle(self, handler: BaseHTTPRequestHandler, body: bytes) -> None:
        host = (handler.headers.get("Host") or "").split(":")[0].lower()
        parts = urlsplit(handler.path)
        path = parts.path

        if host in self.corpus:
            spec = self.corpus[host]
            if path.endswith("googletagmanager.js"):
                tag_id = dict(parse_qsl(parts.query)).get("id", "")
                pixel = self.pixels_by_id.get(tag_id)
                if pixel is None:
                    self._respond(handler, 404, b"unknown tag")
                    return
                self._respond_js(handler, google_config_script(pixel))
                return
            self._serve_page(handler, spec)
            return

        if host == META_CONFIG_HOST and path.startswith("/signals/config/"):
            pixel_id = path[len("/signals/config/"):].split("/", 1)[0]
            pixel = self.pixels_by_id.get(pixel_id)
            if pixel is None or pixel.provider != "meta":
                self._respond(handler, 404, b"unknown pixel")
                return
            self._respond_js(handler, meta_config_script(pixel, self.plain_configs))
            return

        if host in (GOOGLE_CONFIG_HOST, "googletagmanager.com") and path.startswith("/gtag/js"):
            tag_id = dict(parse_qsl(parts.query)).get("id", "")
            pixel = self.pixels_by_id.get(tag_id)
            if pixel is None or pixel.provider != "google":
                self._respond(handler, 404, b"unknown tag")
                return
            self._respond_js(handler, google_config_script(pixel))
            return

        collection_paths = COLLECTION_PATHS.get(host, ())
        if any(path.startswith(p) for p in collection_paths):
            url = f"https://{host}{handler.path}"
            self.ledger.record(
                LedgerHit(
                    endpoint=host.removeprefix("www.") + path,
                    url=url,
                    params=tuple(parse_qsl(parts.query, keep_blank_values=True)),
                    body_digest=hashlib.sha256(body).hexdigest() if body else "",
                    timestamp=time.time(),
                )
            )
            self._respond(handler, 200, b"GIF89a")
            return

        self._respond(handler, 404, b"not found")

    def _serve_page(self, handler: BaseHTTPRequestHandler, spec: SiteSpec) -> None:
        with self._page_lock:
            count = self.page_loads.get(spec.domain, 0) + 1
            self.page_loads[spec.domain] = count
        if count <= spec.fail_first_visits:
            self._respond(handler, 503, b"temporarily unavailable")
            return
        if spec.failure == "slow_load" or spec.latency_s:
            time.sleep(spec.latency_s or 2.0)
        self._respond(
            handler, 200, generate_site(spec).encode("utf-8"), "text/html; charset=utf-8"
        )

    def _respond(self, handler: BaseHTTPRequestHandler, status: int, body: bytes,
                 content_type: str = "text/plain") -> None:
        try:
            handler.send_response(status)
            handler.send_header("Content-Type", content_type)
            handler.send_header("Content-Length", str(len(body)))
            handler.end_headers()
            handler.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _respond_js(self, handler: BaseHTTPRequestHandler, script: str) -> None:
        self._respond(handler, 200, script.encode("utf-8"), "application/javascript")


# --- ground truth and diffing ---


@dataclass(frozen=True)
class ExpectedHit:
    domain: str
    provider: str
    tracker_id: str


def expected_hits(corpus: list[SiteSpec], max_visits: int = 3) -> set[ExpectedHit]:
    """Collection hits a complete campaign over the corpus must produce:
    one per collecting pixel on a page that is ever reachable."""
    expected: set[ExpectedHit] = set()
    for spec in corpus:
        if spec.failure == "unreachable":
            continue
        if spec.fail_first_visits >= max_visits:
            continue
        for pixel in spec.pixels:
            if pixel.collecting:
                expected.add(ExpectedHit(spec.domain, pixel.provider, pixel.tracker_id))
    return expected


@dataclass(frozen=True)
class LedgerDiff:
    missing: tuple[ExpectedHit, ...]
    unexpected: tuple[str, ...]  # tracker ids observed but never expected

    @property
    def clean(self) -> bool:
        return not self.missing and not self.unexpected


def observed_tracker_ids(ledger: CollectionLedger) -> set[str]:
    ids: set[str] = set()
    for hit in ledger.snapshot():
        params = dict(hit.params)
        for key in ("id", "tid"):
            if params.get(key):
                ids.add(params[key])
    return ids


def ledger_diff(ledger: CollectionLedger, corpus: list[SiteSpec],
                max_visits: int = 3) -> LedgerDiff:
    """Compare the ledger against the corpus ground truth, attributing hits
    to sites through the tracker ID carried in each collection request."""
    expected = expected_hits(corpus, max_visits)
    observed = observed_tracker_ids(ledger)
    missing = tuple(
        sorted((e for e in expected if e.tracker_id not in observed),
               key=lambda e: (e.domain, e.tracker_id))
    )
    expected_ids = {e.tracker_id for e in expected}
    unexpected = tuple(sorted(observed - expected_ids))
    return LedgerDiff(missing=missing, unexpected=unexpected)
