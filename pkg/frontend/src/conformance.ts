/** Developer-mode self check against the shared conformance fixtures.
 *
 * The fixture file is exported by the analysis CLI; running it here proves
 * the TypeScript parser and the analysis parser agree byte-for-byte on the
 * configuration-parsing contract.
 */

import { ConfigParseError, parseMetaPixelConfig } from "./parser.js";
import { DetectionRules } from "./rules.js";

export const CONFORMANCE_FORMAT = "formscope-config-conformance/1";

const FIXTURE_URL = "https://connect.facebook.net/signals/config/1111?v=2.9";

export interface Fixture {
  name: string;
  script: string;
  expected: { enabled?: boolean; fields?: string[]; error?: string };
}

export interface FixtureResult {
  name: string;
  passed: boolean;
  got: string;
  want: string;
}

export interface ConformanceReport {
  format: string;
  total: number;
  passed: number;
  results: FixtureResult[];
}

export function runConformance(doc: unknown, rules: DetectionRules): ConformanceReport {
  const data = doc as { format?: string; fixtures?: Fixture[] };
  if (data?.format !== CONFORMANCE_FORMAT || !Array.isArray(data.fixtures)) {
    throw new Error(`unsupported conformance format: ${String(data?.format)}`);
  }
  const results: FixtureResult[] = [];
  for (const fixture of data.fixtures) {
    const want =
      fixture.expected.error !== undefined
        ? `error: ${fixture.expected.error}`
        : JSON.stringify({
            enabled: fixture.expected.enabled,
            fields: fixture.expected.fields,
          });
    let got: string;
    try {
      const cfg = parseMetaPixelConfig(fixture.script, FIXTURE_URL, rules);
      got = JSON.stringify({
        enabled: cfg.automaticMatchingEnabled,
        fields: cfg.selectedFields,
      });
    } catch (err) {
      if (!(err instanceof ConfigParseError)) {
        throw err;
      }
      got = `error: ${err.message}`;
    }
    results.push({ name: fixture.name, passed: got === want, got, want });
  }
  return {
    format: CONFORMANCE_FORMAT,
    total: results.length,
    passed: results.filter((r) => r.passed).length,
    results,
  };
}
