/** Page-level scanning: collect every loaded Meta Pixel configuration
 * script, parse each one, and aggregate the results per pixel. */

import { ConfigParseError, parseMetaPixelConfig, pixelIdFromConfigUrl } from "./parser.js";
import { DetectionRules, hostPath } from "./rules.js";

export interface LoadedScript {
  url: string;
  body: string;
}

export type ConfigStatus = "parsed" | "unknown configuration";

export interface ScannedConfig {
  pixelId: string;
  status: ConfigStatus;
  /** canonical field names; empty when status is "unknown configuration" */
  fields: string[];
  enabled: boolean;
  detail: string;
}

export interface PageScanResult {
  configs: ScannedConfig[];
  anyEnabled: boolean;
  scannedAt: string;
}

export function isMetaConfigScript(url: string, rules: DetectionRules): boolean {
  return hostPath(url).startsWith(rules.metaConfigUrlPrefix);
}

/** Scan the configuration scripts a page has loaded.
 *
 * Unparseable configs are listed with an "unknown configuration" status
 * rather than dropped — a visitor should know the pixel is there even when
 * we cannot say what it collects. Multiple scripts for the same pixel are
 * merged (field union; any parse failure keeps the pixel flagged unknown).
 */
export function scanLoadedConfigs(
  scripts: LoadedScript[],
  rules: DetectionRules,
  now: () => Date = () => new Date(),
): PageScanResult {
  const byPixel = new Map<string, ScannedConfig>();
  for (const script of scripts) {
    if (!isMetaConfigScript(script.url, rules)) {
      continue;
    }
    let scanned: ScannedConfig;
    try {
      const cfg = parseMetaPixelConfig(script.body, script.url, rules);
      scanned = {
        pixelId: cfg.pixelId,
        status: "parsed",
        fields: cfg.selectedFields,
        enabled: cfg.automaticMatchingEnabled,
        detail: cfg.rawExcerpt,
      };
    } catch (err) {
      if (!(err instanceof ConfigParseError)) {
        throw err;
      }
      scanned = {
        pixelId: pixelIdFromConfigUrl(script.url, rules),
        status: "unknown configuration",
        fields: [],
        enabled: false,
        detail: err.message,
      };
    }
    const prior = byPixel.get(scanned.pixelId);
    byPixel.set(scanned.pixelId, prior ? merge(prior, scanned) : scanned);
  }
  const configs = [...byPixel.values()].sort((a, b) => a.pixelId.localeCompare(b.pixelId));
  return {
    configs,
    anyEnabled: configs.some((c) => c.fields.length > 0),
    scannedAt: now().toISOString(),
  };
}

function merge(a: ScannedConfig, b: ScannedConfig): ScannedConfig {
  const fields = [...new Set([...a.fields, ...b.fields])].sort();
  const unknown = a.status === "unknown configuration" || b.status === "unknown configuration";
  return {
    pixelId: a.pixelId,
    status: unknown ? "unknown configuration" : "parsed",
    fields,
    enabled: fields.length > 0,
    detail: a.detail || b.detail,
  };
}
