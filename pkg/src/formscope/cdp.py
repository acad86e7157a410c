"""DevTools-protocol page visitor for crawling with a real browser.

The browser is an external process started with remote debugging enabled
(e.g. `chromium --headless --remote-debugging-port=9222`); we attach over
its WebSocket endpoint. One page per visitor; the crawler owns restarts.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import time

import websockets

from formscope.capture import decode_query
from formscope.identity import PlaceholderIdentity
from formscope.model import (
    Initiator,
    NetworkRequest,
    SiteRecord,
    VisitCapture,
    VisitOutcome,
)
from formscope.visitor import build_injection_script

_SCRIPT_MIME_HINTS = ("javascript", "ecmascript")


class CdpVisitor:
    def __init__(self, endpoint: str, page_timeout_s: float = 180.0,
                 quiesce_s: float = 10.0):
        self.endpoint = endpoint
        self.page_timeout_s = page_timeout_s
        self.quiesce_s = quiesce_s

    def visit(self, site: SiteRecord, identity: PlaceholderIdentity,
              visit_index: int = 1) -> VisitCapture:
        return asyncio.run(self._visit(site, identity, visit_index))

    async def _visit(self, site: SiteRecord, identity: PlaceholderIdentity,
                     visit_index: int) -> VisitCapture:
        requests: list[NetworkRequest] = []
        scripts: dict[str, str] = {}
        outcome = VisitOutcome.OK
        form_injected = False
        start = time.monotonic()

        try:
            async with websockets.connect(self.endpoint, max_size=64 * 1024 * 1024) as ws:
                session = _CdpSession(ws)
                target = await session.call("Target.createTarget", {"url": "about:blank"})
                attach = await session.call(
                    "Target.attachToTarget",
                    {"targetId": target["targetId"], "flatten": True},
                )
                sid = attach["sessionId"]

                await session.call("Page.enable", session_id=sid)
                await session.call("Network.enable", session_id=sid)
                await session.call("Runtime.enable", session_id=sid)

                request_meta: dict[str, dict] = {}
                script_requests: dict[str, str] = {}  # requestId -> url
                last_activity = time.monotonic()

                def on_event(method: str, params: dict) -> None:
                    nonlocal last_activity
                    if method == "Network.requestWillBeSent":
                        last_activity = time.monotonic()
                        request_meta[params["requestId"]] = params
                    elif method == "Network.responseReceived":
                        last_activity = time.monotonic()
                        mime = params.get("response", {}).get("mimeType", "")
                        if any(hint in mime for hint in _SCRIPT_MIME_HINTS):
                            script_requests[params["requestId"]] = params["response"]["url"]

                session.on_event = on_event

                loaded = session.wait_for("Page.loadEventFired")
                await session.call(
                    "Page.navigate", {"url": f"https://{site.domain}/"}, session_id=sid
                )
                try:
                    await asyncio.wait_for(loaded, timeout=self.page_timeout_s)
                except asyncio.TimeoutError:
                    outcome = VisitOutcome.TIMEOUT

                if outcome is VisitOutcome.OK:
                    await session.call(
                        "Runtime.evaluate",
                        {"expression": build_injection_script(identity)},
                        session_id=sid,
                    )
                    form_injected = True
                    deadline = start + self.page_timeout_s
                    while time.monotonic() < deadline:
                        await session.pump(timeout=0.25)
                        if time.monotonic() - last_activity > self.quiesce_s:
                            break

                for request_id, params in request_meta.items():
                    req = params.get("request", {})
                    url = req.get("url", "")
                    if not url.startswith(("http://", "https://")):
                        continue
                    body = (req.get("postData") or "").encode("utf-8")
                    frame_top = params.get("frameId") == request_meta.get(
                        next(iter(request_meta)), {}
                    ).get("frameId")
                    requests.append(
                        NetworkRequest(
                            method=req.get("method", "GET"),
                            url=url,
                            query_params=decode_query(url),
                            body=body,
                            initiator=Initiator.TOP_DOCUMENT
                            if frame_top
                            else Initiator.SUBFRAME,
                            timestamp_ms=int((time.monotonic() - start) * 1000),
                        )
                    )
                    if request_id in script_requests:
                        try:
                            result = await session.call(
                                "Network.getResponseBody",
                                {"requestId": request_id},
                                session_id=sid,
                            )
                            if not result.get("base64Encoded"):
                                scripts[script_requests[request_id]] = result["body"]
                        except CdpError:
                            pass

                await session.call("Target.closeTarget", {"targetId": target["targetId"]})
        except (OSError, websockets.WebSocketException):
            outcome = VisitOutcome.UNREACHABLE

        scripts = {url: text for url, text in scripts.items()
                   if url in {r.url for r in requests}}
        return VisitCapture(
            site=site,
            visit_index=visit_index,
            requests=tuple(requests),
            scripts=scripts,
            form_injected=form_injected,
            visit_outcome=outcome,
        )


class CdpError(Exception):
    pass


class _CdpSession:
    """Minimal flat-session DevTools client over one WebSocket."""

    def __init__(self, ws):
        self.ws = ws
        self.ids = itertools.count(1)
        self.pending: dict[int, asyncio.Future] = {}
        self.waiters: dict[str, asyncio.Future] = {}
        self.on_event = None

    def wait_for(self, method: str) -> asyncio.Future:
        future = asyncio.get_event_loop().create_future()
        self.waiters[method] = future
        return future

    async def call(self, method: str, params: dict | None = None,
                   session_id: str | None = None) -> dict:
        msg_id = next(self.ids)
        message = {"id": msg_id, "method": method, "params": params or {}}
        if session_id:
            message["sessionId"] = session_id
        future = asyncio.get_event_loop().create_future()
        self.pending[msg_id] = future
        await self.ws.send(json.dumps(message))
        while not future.done():
            await self._receive_one()
        return future.result()

    async def pump(self, timeout: float) -> None:
        try:
            await asyncio.wait_for(self._receive_one(), timeout=timeout)
        except asyncio.TimeoutError:
            pass

    async def _receive_one(self) -> None:
        raw = await self.ws.recv()
        message = json.loads(raw)
        if "id" in message:
            future = self.pending.pop(message["id"], None)
            if future and not future.done():
                if "error" in message:
                    future.set_exception(CdpError(message["error"].get("message", "")))
                else:
                    future.set_result(message.get("result", {}))
            return
        method = message.get("method", "")
        params = message.get("params", {})
        waiter = self.waiters.get(method)
        if waiter and not waiter.done():
            waiter.set_result(params)
        if self.on_event:
            self.on_event(method, params)
