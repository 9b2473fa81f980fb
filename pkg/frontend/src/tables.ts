/**
 * Table view models: stable sorting and conjunctive filtering over
 * aggregation rows. The numbers themselves come from the API untouched.
 */

export type SortDirection = "asc" | "desc";

export interface SortSpec<T> {
  key: (row: T) => string | number;
  direction: SortDirection;
}

/**
 * Stable sort: rows comparing equal keep their input order, so sorting the
 * same data twice yields the same result.
 */
export function stableSort<T>(rows: readonly T[], spec: SortSpec<T>): T[] {
  const sign = spec.direction === "asc" ? 1 : -1;
  return rows
    .map((row, index) => ({ row, index }))
    .sort((a, b) => {
      const ka = spec.key(a.row);
      const kb = spec.key(b.row);
      if (ka < kb) return -sign;
      if (ka > kb) return sign;
      return a.index - b.index;
    })
    .map((entry) => entry.row);
}

/** Active filters compose conjunctively: a row must satisfy every one. */
export interface Filters {
  service?: string;
  pathPattern?: string;
  fieldPath?: string;
}

export interface FilterableRow {
  service?: string;
  pathPattern?: string;
  path?: string;
}

export function applyFilters<T extends FilterableRow>(rows: readonly T[], filters: Filters): T[] {
  return rows.filter(
    (row) =>
      (filters.service === undefined || row.service === filters.service) &&
      (filters.pathPattern === undefined || row.pathPattern === filters.pathPattern) &&
      (filters.fieldPath === undefined || row.path === filters.fieldPath),
  );
}

export const TABLE_QUERIES = [
  "REQUESTS_PER_SERVICE",
  "REQUESTS_PER_ENDPOINT",
  "FLOWS_BETWEEN_SERVICES",
  "FIELD_OCCURRENCES",
  "INITIATORS",
] as const;

export type TableQuery = (typeof TABLE_QUERIES)[number];

export function isTableQuery(name: string): name is TableQuery {
  return (TABLE_QUERIES as readonly string[]).includes(name);
}
