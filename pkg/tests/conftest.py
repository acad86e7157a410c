"""Shared builders for the test suite."""

from __future__ import annotations

import pytest

from formscope.capture import decode_query
from formscope.identity import default_identity
from formscope.model import (
    Initiator,
    NetworkRequest,
    SiteRecord,
    VisitCapture,
    VisitOutcome,
)
from formscope.rules import default_rules

IDENTITY = default_identity()
RULES = default_rules()


def make_site(domain: str = "example-site.test", rank: int = 1,
              vertical: str = "non_sensitive:shopping") -> SiteRecord:
    return SiteRecord(domain, rank, vertical)


def make_request(url: str, method: str = "GET", body: bytes = b"",
                 initiator: Initiator = Initiator.TOP_DOCUMENT,
                 timestamp_ms: int = 0) -> NetworkRequest:
    return NetworkRequest(
        method=method,
        url=url,
        query_params=decode_query(url),
        body=body,
        initiator=initiator,
        timestamp_ms=timestamp_ms,
    )


def make_capture(requests=(), scripts=None, site: SiteRecord | None = None,
                 visit_index: int = 1, form_injected: bool = True,
                 outcome: VisitOutcome = VisitOutcome.OK) -> VisitCapture:
    reqs = tuple(
        r if isinstance(r, NetworkRequest) else make_request(r) for r in requests
    )
    return VisitCapture(
        site=site or make_site(),
        visit_index=visit_index,
        requests=reqs,
        scripts=dict(scripts or {}),
        form_injected=form_injected,
        visit_outcome=outcome,
    )


@pytest.fixture(scope="session")
def identity():
    return IDENTITY


@pytest.fixture(scope="session")
def rules():
    return RULES
