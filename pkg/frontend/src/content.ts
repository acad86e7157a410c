/** Content script: one scan per top-frame navigation.
 *
 * Observation only — the script reads configuration scripts the page has
 * already caused to load and draws a banner; it never posts data anywhere
 * and never touches the page's forms.
 */

import { renderWarning } from "./banner.js";
import { runConformance } from "./conformance.js";
import { LoadedScript, PageScanResult, isMetaConfigScript, scanLoadedConfigs } from "./scan.js";
import { DetectionRules, loadRules } from "./rules.js";

declare const chrome: {
  runtime: { getURL(path: string): string };
  storage?: {
    local: { get(keys: Record<string, unknown>): Promise<Record<string, unknown>> };
  };
};

/** Script URLs the page has loaded, from script tags plus the resource
 * timing log (configs injected by the pixel loader appear only there). */
export function loadedScriptUrls(doc: Document, win: Window): string[] {
  const urls = new Set<string>();
  for (const tag of Array.from(doc.querySelectorAll("script[src]"))) {
    const src = tag.getAttribute("src");
    if (src) {
      urls.add(new URL(src, doc.baseURI).toString());
    }
  }
  const perf = (win as Window & { performance?: Performance }).performance;
  if (perf?.getEntriesByType) {
    for (const entry of perf.getEntriesByType("resource")) {
      urls.add(entry.name);
    }
  }
  return [...urls];
}

async function fetchConfigScripts(urls: string[], rules: DetectionRules): Promise<LoadedScript[]> {
  const configUrls = urls.filter((u) => isMetaConfigScript(u, rules));
  const scripts: LoadedScript[] = [];
  for (const url of configUrls) {
    try {
      // Re-reads a script the page already loaded (served from cache);
      // the extension itself writes nothing to the network.
      const response = await fetch(url, { method: "GET", credentials: "omit" });
      scripts.push({ url, body: await response.text() });
    } catch {
      scripts.push({ url, body: "selectedMatchKeys!" }); // forces "unknown configuration"
    }
  }
  return scripts;
}

async function loadBundled(path: string): Promise<unknown> {
  const response = await fetch(chrome.runtime.getURL(path));
  return response.json();
}

export async function scanPage(doc: Document, win: Window, rules: DetectionRules): Promise<PageScanResult> {
  const scripts = await fetchConfigScripts(loadedScriptUrls(doc, win), rules);
  return scanLoadedConfigs(scripts, rules);
}

async function main(): Promise<void> {
  const rules = loadRules(await loadBundled("rules.json"));
  const result = await scanPage(document, window, rules);

  const settings = (await chrome.storage?.local.get({ developerMode: false })) ?? {};
  if (settings["developerMode"]) {
    const fixtures = await loadBundled("conformance.json");
    console.info("visitor-guard conformance", JSON.stringify(runConformance(fixtures, rules)));
  }

  renderWarning(result, document);
}

if (typeof document !== "undefined" && typeof chrome !== "undefined") {
  void main();
}
