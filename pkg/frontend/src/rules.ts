/** Loading and validation of the shared detection-rules file.
 *
 * The extension bundles the exact `formscope-rules/1` JSON that the analysis
 * CLI exports; nothing is fetched remotely. Only the pieces needed for
 * static config scanning are read here.
 */

export const RULES_FORMAT = "formscope-rules/1";

export interface DetectionRules {
  metaConfigUrlPrefix: string;
  /** wire token (e.g. "em") -> canonical field name (e.g. "email") */
  abbreviationMap: Record<string, string>;
}

export function loadRules(doc: unknown): DetectionRules {
  const data = doc as Record<string, unknown>;
  if (!data || data["format"] !== RULES_FORMAT) {
    throw new Error(`unsupported rules format: ${String(data?.["format"])}`);
  }
  const prefix = data["meta_config_url_prefix"];
  const abbrev = data["abbreviation_map"];
  if (typeof prefix !== "string" || !prefix) {
    throw new Error("rules file missing meta_config_url_prefix");
  }
  if (typeof abbrev !== "object" || abbrev === null) {
    throw new Error("rules file missing abbreviation_map");
  }
  const abbreviationMap: Record<string, string> = {};
  for (const [token, field] of Object.entries(abbrev as Record<string, unknown>)) {
    if (typeof field !== "string") {
      throw new Error(`abbreviation_map value for ${token} is not a string`);
    }
    abbreviationMap[token] = field;
  }
  const mapped = Object.values(abbreviationMap);
  if (new Set(mapped).size !== mapped.length) {
    throw new Error("abbreviation_map must be injective");
  }
  return { metaConfigUrlPrefix: prefix, abbreviationMap };
}

/** Lowercased host + path with any leading "www." stripped — the same
 * canonical form the rules file's URL prefixes are written in. */
export function hostPath(url: string): string {
  let parsed: URL;
  try {
    parsed = new URL(url);
  } catch {
    return "";
  }
  let host = parsed.hostname.toLowerCase();
  if (host.startsWith("www.")) {
    host = host.slice(4);
  }
  return host + parsed.pathname;
}
