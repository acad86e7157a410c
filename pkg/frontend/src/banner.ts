/** The on-page warning banner.
 *
 * Shown before any user input is required, dismissible, and strictly
 * additive: the page's forms are never modified, blocked, or reordered.
 */

import { PageScanResult } from "./scan.js";

export const BANNER_ID = "visitor-guard-banner";

/** Canonical field name -> plain language shown to the visitor. */
export const FIELD_LABELS: Record<string, string> = {
  email: "email address",
  phone_number: "phone number",
  first_name: "first name",
  last_name: "last name",
  city: "city",
  state: "state",
  zip_code: "ZIP code",
  gender: "gender",
  country: "country",
  date_of_birth: "date of birth",
  external_id: "advertising identifier",
};

export function fieldLabel(field: string): string {
  return FIELD_LABELS[field] ?? field.replace(/_/g, " ");
}

export function bannerMessage(result: PageScanResult): string {
  const fields = [...new Set(result.configs.flatMap((c) => c.fields))].sort();
  const labels = fields.map(fieldLabel);
  const listed =
    labels.length <= 1
      ? labels.join("")
      : `${labels.slice(0, -1).join(", ")} and ${labels[labels.length - 1]}`;
  const unknown = result.configs.some((c) => c.status === "unknown configuration");
  let message =
    "This page's Meta Pixel is set up to automatically collect what you " +
    `type into forms: ${listed}.`;
  if (unknown) {
    message += " One of its tracking configurations could not be read.";
  }
  return message;
}

/** Insert (or refresh) the banner when the scan found enabled collection;
 * remove any stale banner otherwise. Returns the banner element or null. */
export function renderWarning(result: PageScanResult, doc: Document): HTMLElement | null {
  const stale = doc.getElementById(BANNER_ID);
  if (stale) {
    stale.remove();
  }
  if (!result.anyEnabled) {
    return null;
  }

  const banner = doc.createElement("div");
  banner.id = BANNER_ID;
  banner.setAttribute("role", "alert");
  banner.style.cssText =
    "position:fixed;top:0;left:0;right:0;z-index:2147483647;" +
    "background:#7a1f1f;color:#fff;padding:10px 14px;" +
    "font:14px/1.4 system-ui,sans-serif;display:flex;gap:12px;" +
    "align-items:center;justify-content:space-between;";

  const text = doc.createElement("span");
  text.textContent = bannerMessage(result);
  banner.appendChild(text);

  const dismiss = doc.createElement("button");
  dismiss.textContent = "Dismiss";
  dismiss.setAttribute("aria-label", "Dismiss warning");
  dismiss.style.cssText =
    "background:#fff;color:#7a1f1f;border:0;padding:4px 10px;" +
    "border-radius:3px;cursor:pointer;font:inherit;";
  dismiss.addEventListener("click", () => banner.remove());
  banner.appendChild(dismiss);

  (doc.body ?? doc.documentElement).appendChild(banner);
  return banner;
}
