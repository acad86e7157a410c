"""The page visitor against the simulated ecosystem, the retry policy, and
campaign persistence/resume behavior."""

from __future__ import annotations

import json

import pytest

from formscope import crawler
from formscope.capture import load_capture
from formscope.crawler import (
    DONE,
    REVISIT,
    CampaignState,
    CrawlPolicy,
    SiteState,
    capture_path,
    run_campaign,
    schedule_next,
    successful,
)
from formscope.model import PiiField, Provider, SiteRecord, VisitOutcome
from formscope.testbed import PixelSpec, SiteSpec, TestbedServer
from formscope.visitor import EmulatedVisitor, build_injection_script

from conftest import IDENTITY, RULES


def _corpus():
    return [
        # collects for both providers on the first successful visit
        SiteSpec("easy.test", "health", pixels=(
            PixelSpec("meta", "9001", selected_match_keys=("email", "phone_number")),
            PixelSpec("google", "AW-9101", selected_match_keys=("email",)),
        )),
        # page 503s once, then collects for both providers
        SiteSpec("flaky.test", pixels=(
            PixelSpec("meta", "9002", selected_match_keys=("email",)),
            PixelSpec("google", "AW-9102", selected_match_keys=("email",)),
        ), fail_first_visits=1),
        # tracker installed but never collecting
        SiteSpec("quiet.test", pixels=(
            PixelSpec("meta", "9003", selected_match_keys=None),
        )),
        # no trackers at all
        SiteSpec("bare.test"),
        # connection refused forever
        SiteSpec("dead.test", failure="unreachable"),
        # manual-mode collection
        SiteSpec("manual.test", pixels=(
            PixelSpec("meta", "9004", selected_match_keys=("email",), manual_mode=True),
        )),
        # Google tag served first-party
        SiteSpec("firstparty.test", pixels=(
            PixelSpec("google", "G-9105", selected_match_keys=("email",),
                      first_party_mode=True),
        )),
    ]


@pytest.fixture
def server():
    srv = TestbedServer(_corpus(), port=0)
    srv.start()
    yield srv
    srv.stop()


def _sites():
    return [
        SiteRecord(s.domain, i + 1,
                   s.vertical if s.vertical in ("health", "finance")
                   else f"non_sensitive:{s.vertical}")
        for i, s in enumerate(_corpus())
    ]


def _visitor(server):
    return EmulatedVisitor(server.resolver_map(), page_timeout_s=5)


class TestInjectionScript:
    def test_covers_the_seven_form_fields(self):
        script = build_injection_script(IDENTITY)
        for field in (PiiField.EMAIL, PiiField.PHONE_NUMBER, PiiField.FIRST_NAME,
                      PiiField.LAST_NAME, PiiField.CITY, PiiField.STATE,
                      PiiField.ZIP_CODE):
            assert f"'{field.value}'" in script
        assert IDENTITY.raw_value(PiiField.EMAIL) in script

    def test_anchor_fallback_and_submission(self):
        script = build_injection_script(IDENTITY)
        assert "querySelector('div, span') || document.body" in script
        assert "submit.click()" in script


class TestEmulatedVisitor:
    def test_ok_visit_captures_page_scripts_and_hits(self, server):
        capture = _visitor(server).visit(_sites()[0], IDENTITY)
        assert capture.visit_outcome is VisitOutcome.OK
        assert capture.form_injected
        urls = [r.url for r in capture.requests]
        assert urls[0] == "https://easy.test/"
        assert any("signals/config/9001" in u for u in urls)
        assert any("facebook.com/tr" in u for u in urls)
        assert any("ccm/form-data" in u for u in urls)
        assert any("signals/config/9001" in u for u in capture.scripts)

    def test_collection_params_arrive_percent_encoded(self, server):
        capture = _visitor(server).visit(_sites()[0], IDENTITY)
        hit = next(r for r in capture.requests if "facebook.com/tr" in r.url)
        assert "udff%5Bem%5D=" in hit.url
        # decoded exactly once at capture time
        assert ("udff[em]", IDENTITY.digest(PiiField.EMAIL, True)) in hit.query_params

    def test_unreachable_site(self, server):
        dead = next(s for s in _sites() if s.domain == "dead.test")
        capture = _visitor(server).visit(dead, IDENTITY)
        assert capture.visit_outcome is VisitOutcome.UNREACHABLE
        assert not capture.form_injected

    def test_failing_page_counts_as_unreachable(self, server):
        flaky = next(s for s in _sites() if s.domain == "flaky.test")
        capture = _visitor(server).visit(flaky, IDENTITY)
        assert capture.visit_outcome is VisitOutcome.UNREACHABLE

    def test_bot_challenge_detected(self, server, monkeypatch):
        import formscope.visitor as visitor_mod

        visitor = _visitor(server)
        monkeypatch.setattr(
            visitor, "_fetch",
            lambda url, **kw: visitor_mod._Fetched(200, b"<html>CAPTCHA required</html>"),
        )
        capture = visitor.visit(_sites()[0], IDENTITY)
        assert capture.visit_outcome is VisitOutcome.BOT_SUSPECTED

    def test_non_collecting_pixel_fires_nothing(self, server):
        quiet = next(s for s in _sites() if s.domain == "quiet.test")
        capture = _visitor(server).visit(quiet, IDENTITY)
        assert not any("facebook.com/tr" in r.url for r in capture.requests)


class TestSchedulePolicy:
    POLICY = CrawlPolicy(max_visits=3)

    def _state(self, visits, meta_fdc=False, google_fdc=False, quarantined=False):
        state = SiteState()
        state.visits_done = visits
        state.fdc_seen = {"meta": meta_fdc, "google": google_fdc}
        state.quarantined = quarantined
        return state

    def test_first_visit_always_scheduled(self):
        assert schedule_next(self._state(0), self.POLICY) == REVISIT

    def test_stops_when_every_provider_collected(self):
        assert schedule_next(self._state(1, True, True), self.POLICY) == DONE

    def test_retries_while_any_provider_missing(self):
        assert schedule_next(self._state(1, True, False), self.POLICY) == REVISIT
        assert schedule_next(self._state(2, False, True), self.POLICY) == REVISIT

    def test_budget_exhausted(self):
        assert schedule_next(self._state(3, False, False), self.POLICY) == DONE

    def test_quarantine_wins(self):
        assert schedule_next(self._state(0, quarantined=True), self.POLICY) == DONE

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            CrawlPolicy(max_visits=0)
        with pytest.raises(ValueError):
            CrawlPolicy(page_timeout_s=0)
        with pytest.raises(ValueError):
            CrawlPolicy(concurrency=0)


class TestCampaign:
    POLICY = CrawlPolicy(page_timeout_s=5, max_visits=3, concurrency=4)

    def test_visit_counts_follow_retry_policy(self, server, tmp_path):
        result = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                              tmp_path, RULES)
        visits = {d: s.visits_done for d, s in result.state.sites.items()}
        assert visits["easy.test"] == 1       # both providers collected at once
        assert visits["flaky.test"] == 2      # one failure, then collection
        assert visits["quiet.test"] == 3      # tracker present, never collects
        assert visits["bare.test"] == 3       # nothing to find, budget spent
        assert visits["dead.test"] == 3       # unreachable every time

    def test_verdicts_match_corpus(self, server, tmp_path):
        result = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                              tmp_path, RULES)
        verdicts = result.verdicts
        assert verdicts["easy.test"].meta.fdc and verdicts["easy.test"].google.fdc
        assert verdicts["flaky.test"].meta.fdc
        assert verdicts["quiet.test"].meta.installed
        assert not verdicts["quiet.test"].meta.fdc
        assert not verdicts["bare.test"].meta.installed
        assert verdicts["dead.test"].visits_used == 3  # all unreachable captures
        assert not verdicts["dead.test"].meta.installed
        assert verdicts["manual.test"].meta.fdc
        fp = verdicts["firstparty.test"]
        assert fp.google.installed
        assert any(i.first_party_mode for i in fp.google.installations)
        assert fp.google.fdc

    def test_state_and_decision_log_persisted(self, server, tmp_path):
        run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server), tmp_path, RULES)
        state_doc = json.loads((tmp_path / crawler.STATE_FILENAME).read_text())
        assert state_doc["sites"]["easy.test"]["fdc_seen"] == {"meta": True, "google": True}
        log = state_doc["decision_log"]
        assert any(e["domain"] == "flaky.test" and e["visit"] == 2 for e in log)
        # each retry names the providers that justified it
        retry = next(e for e in log if e["domain"] == "quiet.test" and e["visit"] == 1)
        assert set(retry["justified_by"]) == {"meta", "google"}

    def test_rerun_resumes_and_is_idempotent(self, server, tmp_path):
        first = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                             tmp_path, RULES)
        snapshot = {
            p: p.read_bytes() for p in tmp_path.rglob("visit-*.capture")
        }
        second = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                              tmp_path, RULES)
        # captures are append-only: no existing file changed
        for path, blob in snapshot.items():
            assert path.read_bytes() == blob
        assert first.verdicts == second.verdicts

    def test_resume_continues_after_budget_increase(self, server, tmp_path):
        short = CrawlPolicy(page_timeout_s=5, max_visits=1)
        run_campaign(_sites(), short, IDENTITY, _visitor(server), tmp_path, RULES)
        flaky_v1 = capture_path(tmp_path, "flaky.test", 1).read_bytes()
        assert load_capture(
            capture_path(tmp_path, "flaky.test", 1)
        ).capture.visit_outcome is VisitOutcome.UNREACHABLE

        result = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                              tmp_path, RULES)
        assert capture_path(tmp_path, "flaky.test", 1).read_bytes() == flaky_v1
        assert result.state.sites["flaky.test"].visits_done == 2
        assert result.verdicts["flaky.test"].meta.fdc

    def test_crashing_visitor_is_quarantined(self, tmp_path):
        class Exploding:
            def visit(self, site, identity, visit_index=1):
                raise RuntimeError("render process died")

        sites = [SiteRecord("crash.test", 1, "non_sensitive:shopping")]
        result = run_campaign(sites, self.POLICY, IDENTITY, Exploding(),
                              tmp_path, RULES)
        state = result.state.sites["crash.test"]
        assert state.quarantined
        assert state.crashes == crawler.MAX_CRASHES
        assert "died" in state.quarantine_reason
        assert not result.verdicts["crash.test"].meta.installed

    def test_successful_filter_drops_never_reachable(self, server, tmp_path):
        result = run_campaign(_sites(), self.POLICY, IDENTITY, _visitor(server),
                              tmp_path, RULES)
        kept = successful(result.verdicts, tmp_path)
        assert "dead.test" not in kept
        assert "easy.test" in kept
        assert "flaky.test" in kept  # one failed visit, then an ok one


def test_state_round_trip(tmp_path):
    state = CampaignState()
    site = SiteState()
    site.visits_done = 2
    site.fdc_seen = {"meta": True, "google": False}
    site.crashes = 1
    state.sites["a.test"] = site
    state.decision_log.append({"domain": "a.test", "visit": 1})
    path = tmp_path / crawler.STATE_FILENAME
    state.save(path)
    loaded = CampaignState.load(path)
    assert loaded.sites["a.test"] == site
    assert loaded.decision_log == state.decision_log
