"""Compliance screening, notification rendering, and report emission.

Health and finance sites are barred from automatic form data collection by
both providers; any such site with an observed collection event becomes a
ViolationRecord with its full evidence trail.
"""

from __future__ import annotations

import io
import string
from dataclasses import dataclass

from formscope.model import (
    FdcEvent,
    PiiField,
    Provider,
    SENSITIVE_VERTICALS,
    SiteVerdict,
    TrackerInstallation,
)
from formscope.regression import RegressionFit
from formscope.stats import (
    FieldBreakdownCounts,
    OverviewRow,
    SubsetRow,
    SummaryTables,
    percent_or_na,
)


@dataclass(frozen=True)
class ViolationRecord:
    site: str
    vertical: str
    provider: Provider
    installations: tuple[TrackerInstallation, ...]
    config_fields: frozenset[PiiField]
    fdc_events: tuple[FdcEvent, ...]
    contact_email: str = ""

    def __post_init__(self) -> None:
        if self.vertical not in SENSITIVE_VERTICALS:
            raise ValueError(f"violations only apply to sensitive verticals: {self.vertical}")
        if not self.installations and not self.fdc_events:
            raise ValueError("violation requires evidence")


def compliance_screen(verdicts: list[SiteVerdict]) -> list[ViolationRecord]:
    """Every health/finance site with an observed FDC event for a provider
    yields one violation for that provider."""
    violations: list[ViolationRecord] = []
    for verdict in sorted(verdicts, key=lambda v: v.site.domain):
        if verdict.site.vertical not in SENSITIVE_VERTICALS:
            continue
        for provider in (Provider.GOOGLE, Provider.META):
            part = verdict.for_provider(provider)
            if not part.fdc:
                continue
            violations.append(
                ViolationRecord(
                    site=verdict.site.domain,
                    vertical=verdict.site.vertical,
                    provider=provider,
                    installations=part.installations,
                    config_fields=part.config_fields,
                    fdc_events=part.fdc_events,
                )
            )
    return violations


# Mirrors the disclosure letter shape: bracketed alternatives become
# placeholders, filled per vertical and provider.
DEFAULT_NOTIFICATION_TEMPLATE = """\
To Whom It May Concern,

I am ${name_affiliation}. Our research team is studying third-party tracker \
configurations on ${vertical} websites. Based on the products and services \
detailed on your website, we believe you can be classified as a ${vertical} \
website.

We believe that your website includes a ${provider} tracker (with ID \
${tracker_id}) that is configured to collect ${data_description} and send \
them to ${provider}. This configuration may be set up through the \
${provider} user interface. However, websites categorized as ${vertical} are \
not permitted to use this collection feature by ${provider}. Therefore, we \
believe trackers included in your website have been mis-categorized during \
setup.

As it is currently configured, the tracker(s) may collect data and share it \
with ${provider} when a user visits your website and fills out a form, such \
as a login, contact, or subscription form. We did not specifically verify \
that your website has a form requesting this information from visitors, and \
all of our testing was done with fabricated data; we did not view any real \
customer information.

Sincerely,
${name}
${contact_email}
"""

REQUIRED_PLACEHOLDERS = (
    "name_affiliation",
    "vertical",
    "provider",
    "tracker_id",
    "data_description",
)

PROVIDER_DISPLAY = {Provider.GOOGLE: "Google", Provider.META: "Meta"}
PROVIDER_DATA_DESCRIPTION = {
    Provider.GOOGLE: "emails",
    Provider.META: "visitor data, including emails",
}


def render_notification(
    violation: ViolationRecord,
    template: str = DEFAULT_NOTIFICATION_TEMPLATE,
    *,
    name_affiliation: str,
    name: str,
    contact_email: str,
) -> str:
    """Instantiate the disclosure letter for one violation. The template must
    contain every required placeholder; a missing substitution value is an
    error naming the placeholder."""
    tmpl = string.Template(template)
    present = {
        m.group("named") or m.group("braced")
        for m in tmpl.pattern.finditer(template)
        if m.group("named") or m.group("braced")
    }
    missing_slots = [p for p in REQUIRED_PLACEHOLDERS if p not in present]
    if missing_slots:
        raise ValueError(f"template is missing placeholders: {', '.join(missing_slots)}")

    tracker_ids = sorted({i.tracker_id for i in violation.installations}) or ["unknown"]
    values = {
        "name_affiliation": name_affiliation,
        "vertical": violation.vertical,
        "provider": PROVIDER_DISPLAY[violation.provider],
        "tracker_id": ", ".join(tracker_ids),
        "data_description": PROVIDER_DATA_DESCRIPTION[violation.provider],
        "name": name,
        "contact_email": contact_email,
    }
    for key, value in values.items():
        if key in present and not value:
            raise ValueError(f"missing value for placeholder {key!r}")
    try:
        return tmpl.substitute(values)
    except KeyError as exc:
        raise ValueError(f"missing value for placeholder {exc.args[0]!r}") from exc


# --- report emission ---

_FIELD_LABELS = {
    PiiField.EMAIL: "Email",
    PiiField.PHONE_NUMBER: "Phone Number",
    PiiField.FIRST_NAME: "First Name",
    PiiField.LAST_NAME: "Last Name",
    PiiField.CITY: "City",
    PiiField.STATE: "State",
    PiiField.ZIP_CODE: "ZIP Code",
    PiiField.GENDER: "Gender",
    PiiField.COUNTRY: "Country",
    PiiField.DATE_OF_BIRTH: "Date of Birth",
    PiiField.EXTERNAL_ID: "External ID",
}


def render_report(tables: SummaryTables, fit: RegressionFit | None,
                  format: str = "markdown") -> str:
    """Deterministic document for the same inputs, in markdown or csv."""
    if format == "markdown":
        return _render_markdown(tables, fit)
    if format == "csv":
        return _render_csv(tables, fit)
    raise ValueError(f"unknown report format: {format!r}")


def _overview_cells(row: OverviewRow, total: int) -> list[str]:
    def cell(count: int | None, denom: int) -> str:
        if count is None:
            return "-"
        return f"{count} ({percent_or_na(count, denom)}%)" if denom else "no data"

    return [
        row.label,
        cell(row.installed, total),
        cell(row.configured, total),
        cell(row.configured, row.installed) if row.configured is not None else "-",
        cell(row.fdc, total),
        cell(row.fdc, row.installed),
    ]


def _subset_cells(row: SubsetRow) -> list[str]:
    def cell(count: int | None) -> str:
        if count is None:
            return "-"
        return f"{count} ({percent_or_na(count, row.websites)}%)" if row.websites else "no data"

    return [row.label, str(row.websites), cell(row.google_fdc), cell(row.meta_fdc)]


def _field_rows(fields: FieldBreakdownCounts) -> list[list[str]]:
    rows = [["Default (all fields)", fields.default_share() + "%", ""]]
    order = sorted(
        fields.custom.items(), key=lambda kv: (-kv[1], kv[0].value)
    )
    for pii_field, _count in order:
        rows.append(
            [
                _FIELD_LABELS[pii_field],
                fields.custom_share(pii_field) + "%",
                fields.combined_share(pii_field) + "%",
            ]
        )
    if not fields.custom and fields.total == 0:
        rows.append(["no data", "", ""])
    return rows


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(out)


def _render_markdown(tables: SummaryTables, fit: RegressionFit | None) -> str:
    overview = tables.overview
    parts = ["# Tracker installation and form data collection report", ""]

    parts.append(f"Total websites: {overview.total_sites}")
    if overview.zero_denominator:
        parts.append("**No data: zero websites in input.**")
    parts.append("")
    parts.append("## Installations and collection")
    rows = (
        [
            _overview_cells(r, overview.total_sites)
            for r in (overview.google, overview.meta, overview.union)
        ]
        if overview.total_sites
        else [["no data", "-", "-", "-", "-", "-"]]
    )
    parts.append(
        _md_table(
            ["Provider", "Installed", "Configured", "Configured/installed",
             "FDC", "FDC/installed"],
            rows,
        )
    )

    parts.append("")
    parts.append("## Verticals")
    vrows = []
    for row in tables.verticals:
        vrows.append(
            [
                row.label,
                str(row.websites),
                f"{row.google_installed} ({percent_or_na(row.google_installed, row.websites)}%)"
                if row.websites
                else "no data",
                f"{percent_or_na(row.google_fdc, row.google_installed)}%"
                if row.google_installed
                else "-",
                f"{row.meta_installed} ({percent_or_na(row.meta_installed, row.websites)}%)"
                if row.websites
                else "no data",
                f"{percent_or_na(row.meta_fdc, row.meta_installed)}%"
                if row.meta_installed
                else "-",
            ]
        )
    parts.append(
        _md_table(
            ["Vertical", "Websites", "Google installed", "Google FDC/installed",
             "Meta installed", "Meta FDC/installed"],
            vrows,
        )
    )

    parts.append("")
    parts.append("## Tracker subsets")
    parts.append(
        _md_table(
            ["Subset", "Websites", "Google FDC", "Meta FDC"],
            [
                _subset_cells(tables.subsets.both),
                _subset_cells(tables.subsets.google_only),
                _subset_cells(tables.subsets.meta_only),
            ],
        )
    )

    parts.append("")
    parts.append("## Meta field configuration (single-pixel sites)")
    parts.append(f"Eligible sites: {tables.fields.total}")
    parts.append(_md_table(["Field", "Custom share", "Combined share"],
                           _field_rows(tables.fields)))

    if fit is not None:
        parts.append("")
        parts.append("## Collection-odds model")
        frows = []
        for i, feature in enumerate(fit.feature_names):
            frows.append(
                [
                    feature,
                    f"{fit.odds_ratios[i]:.3f}",
                    f"{fit.p_values[i]:.3f}",
                    f"[{fit.ci_low[i]:.3f}, {fit.ci_high[i]:.3f}]",
                ]
            )
        parts.append(_md_table(["Feature", "OR", "p-value", "95% CI"], frows))
        parts.append("")
        parts.append(f"Pseudo R-squared (McFadden): {fit.pseudo_r_squared:.4f}")
        parts.append(f"Converged: {fit.converged} ({fit.iterations} iterations)")
        if fit.note:
            parts.append(f"Note: {fit.note}")
        parts.append(
            "Footnote: p-values and confidence intervals are Wald-based; the "
            "pseudo R-squared variant is McFadden."
        )
    parts.append("")
    return "\n".join(parts)


def _render_csv(tables: SummaryTables, fit: RegressionFit | None) -> str:
    import csv

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    overview = tables.overview
    writer.writerow(["section", "label", "metric", "count", "share"])
    if overview.total_sites == 0:
        writer.writerow(["overview", "all", "websites", 0, "no data"])
    for row in (overview.google, overview.meta, overview.union):
        if overview.total_sites == 0:
            continue
        writer.writerow(["overview", row.label, "installed", row.installed,
                         percent_or_na(row.installed, overview.total_sites)])
        if row.configured is not None:
            writer.writerow(["overview", row.label, "configured", row.configured,
                             percent_or_na(row.configured, overview.total_sites)])
        writer.writerow(["overview", row.label, "fdc", row.fdc,
                         percent_or_na(row.fdc, overview.total_sites)])
    for vrow in tables.verticals:
        writer.writerow(["vertical", vrow.label, "websites", vrow.websites, ""])
        writer.writerow(["vertical", vrow.label, "google_installed",
                         vrow.google_installed,
                         percent_or_na(vrow.google_installed, vrow.websites)
                         if vrow.websites else "no data"])
        writer.writerow(["vertical", vrow.label, "meta_installed",
                         vrow.meta_installed,
                         percent_or_na(vrow.meta_installed, vrow.websites)
                         if vrow.websites else "no data"])
    for srow in (tables.subsets.both, tables.subsets.google_only, tables.subsets.meta_only):
        writer.writerow(["subset", srow.label, "websites", srow.websites, ""])
        if srow.google_fdc is not None:
            writer.writerow(["subset", srow.label, "google_fdc", srow.google_fdc,
                             percent_or_na(srow.google_fdc, srow.websites)
                             if srow.websites else "no data"])
        if srow.meta_fdc is not None:
            writer.writerow(["subset", srow.label, "meta_fdc", srow.meta_fdc,
                             percent_or_na(srow.meta_fdc, srow.websites)
                             if srow.websites else "no data"])
    writer.writerow(["fields", "default", "share", tables.fields.default,
                     tables.fields.default_share()])
    for pii_field in sorted(tables.fields.custom, key=lambda f: f.value):
        writer.writerow(["fields", pii_field.value, "custom",
                         tables.fields.custom[pii_field],
                         tables.fields.custom_share(pii_field)])
        writer.writerow(["fields", pii_field.value, "combined",
                         tables.fields.combined(pii_field),
                         tables.fields.combined_share(pii_field)])
    if fit is not None:
        for i, feature in enumerate(fit.feature_names):
            writer.writerow(["regression", feature, "odds_ratio",
                             f"{fit.odds_ratios[i]:.6f}",
                             f"p={fit.p_values[i]:.6f}"])
    return buf.getvalue()
