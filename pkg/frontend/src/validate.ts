/**
 * Client-side mirror of the registry's field-definition invariants.
 *
 * The server remains the authority; this exists so obviously invalid edits
 * are rejected inline before any request is sent.
 */

import type { FieldDefinition } from "./api.js";

/** Path grammar: `$` followed by `.key`, `[*]`, or `["quoted key"]` steps. */
export const FIELD_PATH_RE = /^\$(?:\.[A-Za-z0-9_-]+|\[\*\]|\["(?:[^"\\]|\\.)*"\])*$/;

export function isValidFieldPath(expression: string): boolean {
  return FIELD_PATH_RE.test(expression);
}

export type Violation =
  | "SPECIAL_CATEGORY_WITHOUT_PERSONAL_DATA"
  | "EMPTY_PURPOSES"
  | "BAD_FIELD_PATH";

export function validateFieldDefinition(definition: FieldDefinition): Violation[] {
  const violations: Violation[] = [];
  if (definition.specialCategory && !definition.personalData) {
    violations.push("SPECIAL_CATEGORY_WITHOUT_PERSONAL_DATA");
  }
  if (definition.personalData && definition.purposes.length === 0) {
    violations.push("EMPTY_PURPOSES");
  }
  if (!isValidFieldPath(definition.path)) {
    violations.push("BAD_FIELD_PATH");
  }
  return violations;
}

export const VIOLATION_MESSAGES: Record<Violation, string> = {
  SPECIAL_CATEGORY_WITHOUT_PERSONAL_DATA:
    "a special-category field must also be marked as personal data",
  EMPTY_PURPOSES: "personal data requires at least one processing purpose",
  BAD_FIELD_PATH: 'field path must match the $.a["b"][*] grammar',
};
