"""Campaign orchestration: the retry policy, worker pool, capture
persistence, and resumable state.

A site is revisited until either every provider has shown a collection
event or the visit budget (default 3) is spent; collection for one provider
freezes retries for that provider only, since the two are independent.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from formscope.capture import load_capture, save_capture
from formscope.detect import analyze_visit
from formscope.identity import PlaceholderIdentity
from formscope.model import (
    Provider,
    SiteRecord,
    SiteVerdict,
    VisitCapture,
    VisitOutcome,
    merge_verdicts,
)
from formscope.rules import DetectionRules

STATE_FILENAME = "campaign-state.json"
MAX_CRASHES = 3

REVISIT = "revisit"
DONE = "done"


@dataclass(frozen=True)
class CrawlPolicy:
    page_timeout_s: float = 180.0
    max_visits: int = 3
    concurrency: int = 4
    quiesce_s: float = 10.0
    browser_restart_every: int = 50  # visits per browser process before restart

    def __post_init__(self) -> None:
        if self.max_visits < 1:
            raise ValueError("max_visits must be >= 1")
        if self.page_timeout_s <= 0:
            raise ValueError("page_timeout_s must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


@dataclass
class SiteState:
    visits_done: int = 0
    fdc_seen: dict[str, bool] = field(
        default_factory=lambda: {p.value: False for p in Provider}
    )
    tracker_seen: dict[str, bool] = field(
        default_factory=lambda: {p.value: False for p in Provider}
    )
    last_outcome: str = ""
    crashes: int = 0
    quarantined: bool = False
    quarantine_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "visits_done": self.visits_done,
            "fdc_seen": dict(self.fdc_seen),
            "tracker_seen": dict(self.tracker_seen),
            "last_outcome": self.last_outcome,
            "crashes": self.crashes,
            "quarantined": self.quarantined,
            "quarantine_reason": self.quarantine_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SiteState":
        state = cls()
        state.visits_done = d["visits_done"]
        state.fdc_seen = dict(d["fdc_seen"])
        state.tracker_seen = dict(d["tracker_seen"])
        state.last_outcome = d.get("last_outcome", "")
        state.crashes = d.get("crashes", 0)
        state.quarantined = d.get("quarantined", False)
        state.quarantine_reason = d.get("quarantine_reason", "")
        return state


@dataclass
class CampaignState:
    sites: dict[str, SiteState] = field(default_factory=dict)
    decision_log: list[dict] = field(default_factory=list)

    def save(self, path: Path) -> None:
        doc = {
            "format": "formscope-campaign/1",
            "sites": {domain: s.to_dict() for domain, s in self.sites.items()},
            "decision_log": self.decision_log,
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "CampaignState":
        doc = json.loads(path.read_text(encoding="utf-8"))
        state = cls()
        state.sites = {
            domain: SiteState.from_dict(d) for domain, d in doc["sites"].items()
        }
        state.decision_log = doc.get("decision_log", [])
        return state


def schedule_next(state: SiteState, policy: CrawlPolicy) -> str:
    """Retry decision for one site: revisit while budget remains and some
    provider has not yet shown a collection event (which covers both "no
    tracker found" and "tracker found but no collection")."""
    if state.quarantined:
        return DONE
    if state.visits_done >= policy.max_visits:
        return DONE
    if state.visits_done == 0:
        return REVISIT
    if all(state.fdc_seen.values()):
        return DONE
    return REVISIT


@dataclass
class CampaignResult:
    verdicts: dict[str, SiteVerdict]
    state: CampaignState
    captures_dir: Path


def capture_path(out_dir: Path, domain: str, visit_index: int) -> Path:
    return out_dir / domain / f"visit-{visit_index}.capture"


def run_campaign(
    sites: list[SiteRecord],
    policy: CrawlPolicy,
    identity: PlaceholderIdentity,
    visitor,
    out_dir: str | Path,
    rules: DetectionRules,
) -> CampaignResult:
    """Visit every site until schedule_next says done, persisting captures as
    they complete. Interruptible: rerunning with the same out_dir resumes
    from the persisted state and yields the same final verdicts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / STATE_FILENAME
    state = CampaignState.load(state_path) if state_path.exists() else CampaignState()
    for site in sites:
        state.sites.setdefault(site.domain, SiteState())
    by_domain = {site.domain: site for site in sites}
    lock = threading.Lock()

    def one_visit(site: SiteRecord) -> None:
        site_state = state.sites[site.domain]
        visit_index = site_state.visits_done + 1
        capture = visitor.visit(site, identity, visit_index=visit_index)
        path = capture_path(out, site.domain, visit_index)
        path.parent.mkdir(parents=True, exist_ok=True)
        if not path.exists():  # capture files are append-only, never mutated
            save_capture(capture, path)
        verdict = analyze_visit(capture, identity, rules)
        with lock:
            site_state.visits_done = visit_index
            site_state.last_outcome = capture.visit_outcome.value
            for provider in Provider:
                part = verdict.for_provider(provider)
                if part.installed:
                    site_state.tracker_seen[provider.value] = True
                if part.fdc:
                    site_state.fdc_seen[provider.value] = True
            state.decision_log.append(
                {
                    "domain": site.domain,
                    "visit": visit_index,
                    "outcome": capture.visit_outcome.value,
                    "fdc_seen": dict(site_state.fdc_seen),
                    "justified_by": [
                        p.value for p in Provider if not site_state.fdc_seen[p.value]
                    ] or ["initial"],
                }
            )
            state.save(state_path)

    while True:
        pending = [
            by_domain[domain]
            for domain, site_state in state.sites.items()
            if domain in by_domain and schedule_next(site_state, policy) == REVISIT
        ]
        if not pending:
            break
        with ThreadPoolExecutor(max_workers=policy.concurrency) as pool:
            futures = {pool.submit(one_visit, site): site for site in pending}
            for future in as_completed(futures):
                site = futures[future]
                exc = future.exception()
                if exc is None:
                    continue
                with lock:
                    site_state = state.sites[site.domain]
                    site_state.crashes += 1
                    if site_state.crashes >= MAX_CRASHES:
                        site_state.quarantined = True
                        site_state.quarantine_reason = (
                            f"worker crashed {site_state.crashes} times; last: {exc}"
                        )
                    state.save(state_path)

    verdicts = collect_verdicts(out, by_domain, identity, rules, state)
    return CampaignResult(verdicts=verdicts, state=state, captures_dir=out)


def collect_verdicts(
    out_dir: Path,
    by_domain: dict[str, SiteRecord],
    identity: PlaceholderIdentity,
    rules: DetectionRules,
    state: CampaignState | None = None,
) -> dict[str, SiteVerdict]:
    """Re-analyze all persisted captures and merge per site. Sites with no
    usable capture (e.g. always unreachable) still get an all-false verdict
    so aggregate denominators stay honest."""
    verdicts: dict[str, SiteVerdict] = {}
    for domain, site in sorted(by_domain.items()):
        visit_verdicts: list[SiteVerdict] = []
        site_dir = out_dir / domain
        if site_dir.is_dir():
            for path in sorted(site_dir.glob("visit-*.capture")):
                parsed = load_capture(path)
                visit_verdicts.append(analyze_visit(parsed.capture, identity, rules))
        if visit_verdicts:
            verdicts[domain] = merge_verdicts(visit_verdicts)
        else:
            verdicts[domain] = SiteVerdict(site=site, visits_used=0)
    return verdicts


def successful(verdicts: dict[str, SiteVerdict], out_dir: Path) -> dict[str, SiteVerdict]:
    """Restrict to sites with at least one ok visit (the analysis population;
    unreachable sites are excluded the way failed visits were)."""
    kept: dict[str, SiteVerdict] = {}
    for domain, verdict in verdicts.items():
        site_dir = out_dir / domain
        if not site_dir.is_dir():
            continue
        outcomes = [
            load_capture(path).capture.visit_outcome
            for path in sorted(site_dir.glob("visit-*.capture"))
        ]
        if any(o is VisitOutcome.OK for o in outcomes):
            kept[domain] = verdict
    return kept
