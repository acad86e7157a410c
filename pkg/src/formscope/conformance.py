"""Shared conformance fixtures for the pixel-config parsing contract.

The browser extension re-implements selectedMatchKeys parsing in TypeScript;
these fixtures pin the exact behavior both implementations must share. Each
fixture is a config script plus the expected outcome: the selected field
names, whether automatic matching is enabled, or "error" for scripts where
the token is present but the list is unparseable.
"""

from __future__ import annotations

from formscope.detect import ConfigParseError, parse_meta_pixel_config
from formscope.rules import default_rules

CONFORMANCE_FORMAT = "formscope-config-conformance/1"

_CONFIG_URL = "https://connect.facebook.net/signals/config/1111?v=2.9"

#: name -> script. Expectations are computed by the reference parser, so the
#: export can never disagree with the shipping implementation.
FIXTURE_SCRIPTS: dict[str, str] = {
    "all-eleven-fields": (
        '{"automaticMatching":{"selectedMatchKeys":["em","ph","fn","ln","ct",'
        '"st","zp","ge","country","db","external_id"]}}'
    ),
    "email-only": '{"selectedMatchKeys":["em"]}',
    "email-and-phone": 'cfg={"selectedMatchKeys":["em","ph"]};',
    "empty-list": '{"selectedMatchKeys":[]}',
    "token-absent": '{"automaticMatching":{"topLevelDomain":null}}',
    "single-quoted-tokens": "x.selectedMatchKeys=['em','fn','ln'];",
    "whitespace-around-list": '{"selectedMatchKeys" : [ "em" , "zp" ]}',
    "unknown-token-ignored": '{"selectedMatchKeys":["em","zodiac_sign"]}',
    "only-unknown-tokens": '{"selectedMatchKeys":["zodiac_sign"]}',
    "buried-in-minified-js": (
        'fbq.registerPlugin("1111",{p:function(e){e.c("1111")}});'
        'e.exports={"pixels":[{"id":"1111","automaticMatching":'
        '{"selectedMatchKeys":["em","ph","ct"]},"inferredEvents":{"b":null}}]};'
    ),
    "duplicate-tokens-dedupe": '{"selectedMatchKeys":["em","em","ph"]}',
    "unterminated-list": '{"selectedMatchKeys":["em","ph"',
    "no-list-after-token": '{"selectedMatchKeys":42}',
    "list-too-far-away": 'var selectedMatchKeys; somethingElse(["em"]);',
    "non-string-list": '{"selectedMatchKeys":[1,2,3]}',
}


def build_conformance_fixtures() -> dict:
    """Run the reference parser over every fixture script and freeze the
    results into the exportable document."""
    rules = default_rules()
    fixtures = []
    for name, script in sorted(FIXTURE_SCRIPTS.items()):
        try:
            cfg = parse_meta_pixel_config(script, _CONFIG_URL, rules)
        except ConfigParseError as exc:
            fixtures.append(
                {"name": name, "script": script, "expected": {"error": str(exc)}}
            )
            continue
        fixtures.append(
            {
                "name": name,
                "script": script,
                "expected": {
                    "enabled": cfg.automatic_matching_enabled,
                    "fields": sorted(f.value for f in cfg.selected_match_keys),
                },
            }
        )
    return {"format": CONFORMANCE_FORMAT, "fixtures": fixtures}
