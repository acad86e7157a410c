/** Static extraction of the automatic-matching field list from a Meta Pixel
 * configuration script.
 *
 * This mirrors the analysis pipeline's parser token for token; the shared
 * conformance fixture set (shared/conformance.json) pins both
 * implementations to identical behavior, including the error messages.
 */

import { DetectionRules, hostPath } from "./rules.js";

const MATCH_KEYS_TOKEN = "selectedMatchKeys";
/** The list must start close to the token, through only quote/space/punct
 * characters; a far-away bracket would mean parsing unrelated code. */
const MAX_BRACKET_DISTANCE = 16;
const BRIDGE_RE = /^["'\s:=]*$/;
const STRING_RE = /["']([^"']*)["']/g;

export class ConfigParseError extends Error {
  readonly rawExcerpt: string;

  constructor(message: string, rawExcerpt: string) {
    super(message);
    this.name = "ConfigParseError";
    this.rawExcerpt = rawExcerpt;
  }
}

export interface PixelConfiguration {
  pixelId: string;
  /** canonical field names, sorted, deduplicated */
  selectedFields: string[];
  automaticMatchingEnabled: boolean;
  rawExcerpt: string;
}

export function pixelIdFromConfigUrl(sourceUrl: string, rules: DetectionRules): string {
  const hp = hostPath(sourceUrl);
  if (hp.startsWith(rules.metaConfigUrlPrefix)) {
    const rest = hp.slice(rules.metaConfigUrlPrefix.length);
    return rest.split("/", 1)[0] ?? "";
  }
  return "";
}

/** An absent token or empty list means automatic matching is off; a
 * present-but-unparseable list throws ConfigParseError, never a silent
 * false. */
export function parseMetaPixelConfig(
  script: string,
  sourceUrl: string,
  rules: DetectionRules,
): PixelConfiguration {
  const pixelId = pixelIdFromConfigUrl(sourceUrl, rules);
  const index = script.indexOf(MATCH_KEYS_TOKEN);
  if (index === -1) {
    return { pixelId, selectedFields: [], automaticMatchingEnabled: false, rawExcerpt: "" };
  }

  const after = script.slice(index + MATCH_KEYS_TOKEN.length);
  const openIdx = after.indexOf("[");
  if (openIdx === -1 || openIdx > MAX_BRACKET_DISTANCE || !BRIDGE_RE.test(after.slice(0, openIdx))) {
    throw new ConfigParseError(
      "selectedMatchKeys present but no following list",
      script.slice(index, index + 80),
    );
  }
  const closeIdx = after.indexOf("]", openIdx);
  if (closeIdx === -1) {
    throw new ConfigParseError(
      "selectedMatchKeys list is unterminated",
      script.slice(index, index + 120),
    );
  }
  const body = after.slice(openIdx + 1, closeIdx);
  const excerpt = script.slice(index, index + MATCH_KEYS_TOKEN.length + closeIdx + 1);
  const stripped = body.trim();
  if (stripped !== "" && !new RegExp(STRING_RE.source).test(stripped)) {
    throw new ConfigParseError("selectedMatchKeys list has no string tokens", excerpt);
  }

  const fields = new Set<string>();
  for (const match of body.matchAll(STRING_RE)) {
    const token = match[1] ?? "";
    const mapped = rules.abbreviationMap[token];
    if (mapped !== undefined) {
      fields.add(mapped);
    }
  }
  return {
    pixelId,
    selectedFields: [...fields].sort(),
    automaticMatchingEnabled: fields.size > 0,
    rawExcerpt: excerpt,
  };
}
