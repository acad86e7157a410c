"""Command line interface.

`formscope testbed` serves the simulated tracker ecosystem, `scan` runs a
visit campaign against it (or a real browser endpoint), `analyze` turns
captures into verdicts, and the reporting commands consume verdicts.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from formscope import capture as capture_mod
from formscope import crawler, regression, report, stats, testbed
from formscope.detect import analyze_visit
from formscope.identity import default_identity, load_identity, save_identity
from formscope.model import (
    Provider,
    SiteRecord,
    canonical_vertical,
    merge_verdicts,
    verdict_from_dict,
    verdict_to_dict,
)
from formscope.rules import default_rules, load_rules, save_rules
from formscope.visitor import EmulatedVisitor


@click.group()
def main() -> None:
    """Tracker installation and form-data-collection measurement pipeline."""


def _load_identity(path: str | None):
    return load_identity(path) if path else default_identity()


def _load_rules(path: str | None):
    return load_rules(path) if path else default_rules()


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Site list CSV (domain,rank,vertical).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Capture output directory.")
@click.option("--max-visits", default=3, show_default=True)
@click.option("--page-timeout", default=180.0, show_default=True)
@click.option("--concurrency", default=4, show_default=True)
@click.option("--browser-endpoint", default=None,
              help="DevTools WebSocket URL of an externally launched browser.")
@click.option("--resolver", "resolver_path", default=None, type=click.Path(exists=True),
              help="Resolver map JSON (hostname -> host:port) for the built-in "
                   "HTTP visitor; written by `formscope testbed`.")
@click.option("--identity", "identity_path", default=None, type=click.Path(exists=True))
@click.option("--rules", "rules_path", default=None, type=click.Path(exists=True))
def scan(input_path, out_dir, max_visits, page_timeout, concurrency,
         browser_endpoint, resolver_path, identity_path, rules_path):
    """Visit every site, inject the placeholder form, persist captures."""
    sites = capture_mod.load_site_list(input_path)
    policy = crawler.CrawlPolicy(
        page_timeout_s=page_timeout, max_visits=max_visits, concurrency=concurrency
    )
    identity = _load_identity(identity_path)
    rules = _load_rules(rules_path)
    if browser_endpoint:
        from formscope.cdp import CdpVisitor

        visitor = CdpVisitor(browser_endpoint, page_timeout_s=page_timeout,
                             quiesce_s=policy.quiesce_s)
    elif resolver_path:
        resolver = json.loads(Path(resolver_path).read_text(encoding="utf-8"))
        visitor = EmulatedVisitor(resolver, page_timeout_s=page_timeout)
    else:
        raise click.UsageError("need --browser-endpoint or --resolver")
    result = crawler.run_campaign(sites, policy, identity, visitor, out_dir, rules)
    ok = sum(1 for s in result.state.sites.values() if s.last_outcome == "ok")
    click.echo(f"visited {len(result.verdicts)} sites ({ok} with an ok visit); "
               f"captures under {out_dir}")


@main.command()
@click.option("--captures", "captures_dir", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", default=None, type=click.Path(exists=True))
@click.option("--identity", "identity_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def analyze(captures_dir, rules_path, identity_path, out_path):
    """Analyze persisted captures into one merged verdict per site (JSONL)."""
    identity = _load_identity(identity_path)
    rules = _load_rules(rules_path)
    captures_root = Path(captures_dir)
    lines = []
    for site_dir in sorted(p for p in captures_root.iterdir() if p.is_dir()):
        visit_verdicts = []
        for path in sorted(site_dir.glob("visit-*.capture")):
            parsed = capture_mod.load_capture(path)
            visit_verdicts.append(analyze_visit(parsed.capture, identity, rules))
        if visit_verdicts:
            merged = merge_verdicts(visit_verdicts)
            lines.append(json.dumps(verdict_to_dict(merged), sort_keys=True))
    Path(out_path).write_text("\n".join(lines) + ("\n" if lines else ""),
                              encoding="utf-8")
    click.echo(f"wrote {len(lines)} verdicts to {out_path}")


def _read_verdicts(path: str):
    verdicts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            verdicts.append(verdict_from_dict(json.loads(line)))
    return verdicts


@main.command("report")
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="md", show_default=True,
              type=click.Choice(["md", "markdown", "csv"]))
@click.option("--regress", "regress_model", default=None,
              type=click.Choice(["meta", "google"]),
              help="Include a collection-odds model fitted on the verdicts.")
def report_cmd(verdicts_path, fmt, regress_model):
    """Emit the summary tables (and optionally a regression) as md/csv."""
    verdicts = _read_verdicts(verdicts_path)
    tables = stats.aggregate(verdicts)
    fit = None
    if regress_model:
        provider = Provider.META if regress_model == "meta" else Provider.GOOGLE
        X, y, names = regression.build_model_matrix(verdicts, provider)
        fit = regression.fit_logistic(X, y, names)
    fmt = "markdown" if fmt in ("md", "markdown") else "csv"
    click.echo(report.render_report(tables, fit, fmt), nl=False)


@main.command()
@click.option("--population", required=True, type=int)
@click.option("--confidence", default=0.95, show_default=True)
@click.option("--margin", default=0.05, show_default=True)
@click.option("--p-hat", default=0.5, show_default=True)
def samplesize(population, confidence, margin, p_hat):
    """Finite-population-corrected validation sample size."""
    click.echo(stats.sample_size(population, confidence, margin, p_hat))


@main.command()
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--model", required=True, type=click.Choice(["meta", "google"]))
def regress(verdicts_path, model):
    """Fit the collection-odds logistic model and print the fit table."""
    verdicts = _read_verdicts(verdicts_path)
    provider = Provider.META if model == "meta" else Provider.GOOGLE
    X, y, names = regression.build_model_matrix(verdicts, provider)
    fit = regression.fit_logistic(X, y, names)
    click.echo(f"model: {model} (n={len(y)})")
    for i, name in enumerate(fit.feature_names):
        click.echo(
            f"  {name:18s} OR={fit.odds_ratios[i]:8.3f}  p={fit.p_values[i]:.3f}  "
            f"CI=[{fit.ci_low[i]:.3f}, {fit.ci_high[i]:.3f}]"
        )
    click.echo(f"pseudo R-squared (McFadden): {fit.pseudo_r_squared:.4f}")
    if model == "google":
        click.echo(f"note: {regression.DROPPED_FEATURE_NOTE}")
    if not fit.converged:
        click.echo(f"WARNING: {fit.note or 'did not converge'}", err=True)


@main.command()
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--sites", "sites_path", required=True, type=click.Path(exists=True))
@click.option("--template", "template_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--name-affiliation", default="a researcher studying web tracking")
@click.option("--sender-name", default="The formscope maintainers")
@click.option("--contact-email", default="replies@example.invalid")
def notify(verdicts_path, sites_path, template_path, out_dir,
           name_affiliation, sender_name, contact_email):
    """Screen health/finance sites for collection and render letters."""
    verdicts = _read_verdicts(verdicts_path)
    capture_mod.load_site_list(sites_path)  # validates the list the verdicts came from
    template = (
        Path(template_path).read_text(encoding="utf-8")
        if template_path
        else report.DEFAULT_NOTIFICATION_TEMPLATE
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    violations = report.compliance_screen(verdicts)
    for violation in violations:
        letter = report.render_notification(
            violation,
            template,
            name_affiliation=name_affiliation,
            name=sender_name,
            contact_email=contact_email,
        )
        path = out / f"{violation.site}-{violation.provider.value}.txt"
        path.write_text(letter, encoding="utf-8")
    click.echo(f"wrote {len(violations)} letters to {out}")


@main.command("testbed")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--bind", default="127.0.0.1:8800", show_default=True)
@click.option("--resolver-out", default=None, type=click.Path(),
              help="Where to write the hostname resolver map for `scan`.")
@click.option("--plain", is_flag=True, help="Serve unminified config scripts.")
def testbed_cmd(corpus_path, bind, resolver_out, plain):
    """Serve the simulated tracker ecosystem until interrupted."""
    corpus = testbed.load_corpus(corpus_path)
    host, _, port = bind.partition(":")
    server = testbed.TestbedServer(corpus, host, int(port or 0), plain_configs=plain)
    if resolver_out:
        Path(resolver_out).write_text(
            json.dumps(server.resolver_map(), indent=1, sort_keys=True), encoding="utf-8"
        )
    actual_host, actual_port = server.address
    click.echo(f"testbed serving {len(corpus)} sites on {actual_host}:{actual_port}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path())
def rules(out_path):
    """Write the default detection rules file (formscope-rules/1)."""
    save_rules(default_rules(), out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path())
def identity(out_path):
    """Write the default placeholder identity key-value file."""
    save_identity(default_identity(), out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--from-har", "har_path", required=True, type=click.Path(exists=True))
@click.option("--domain", required=True)
@click.option("--rank", default=1, show_default=True, type=int)
@click.option("--vertical", default="unknown", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def convert(har_path, domain, rank, vertical, out_path):
    """Lossy-import a standard HAR 1.2 file into the native capture format."""
    har = json.loads(Path(har_path).read_text(encoding="utf-8"))
    site = SiteRecord(domain.lower(), rank, canonical_vertical(vertical))
    doc = capture_mod.har_to_capture_dict(har, site)
    Path(out_path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path())
def conformance(out_path):
    """Export config-parsing conformance fixtures for the browser extension."""
    from formscope.conformance import build_conformance_fixtures

    doc = build_conformance_fixtures()
    Path(out_path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")
    click.echo(f"wrote {len(doc['fixtures'])} fixtures to {out_path}")


if __name__ == "__main__":
    sys.exit(main())
