import { describe, expect, it } from "vitest";

import { applyFilters, isTableQuery, stableSort } from "../src/tables.js";

describe("stableSort", () => {
  const rows = [
    { service: "b", count: 2 },
    { service: "a", count: 5 },
    { service: "c", count: 2 },
    { service: "d", count: 2 },
  ];

  it("sorts by count descending", () => {
    const sorted = stableSort(rows, { key: (row) => row.count, direction: "desc" });
    expect(sorted.map((row) => row.service)).toEqual(["a", "b", "c", "d"]);
  });

  it("is stable: equal keys keep input order, twice in a row", () => {
    const once = stableSort(rows, { key: (row) => row.count, direction: "desc" });
    const twice = stableSort(once, { key: (row) => row.count, direction: "desc" });
    expect(twice).toEqual(once);
    expect(once.slice(1).map((row) => row.service)).toEqual(["b", "c", "d"]);
  });

  it("does not mutate its input", () => {
    const copy = [...rows];
    stableSort(rows, { key: (row) => row.service, direction: "asc" });
    expect(rows).toEqual(copy);
  });
});

describe("applyFilters", () => {
  const rows = [
    { service: "orders", pathPattern: "/orders", path: "$.k" },
    { service: "orders", pathPattern: "/orders/{*}", path: "$.user" },
    { service: "payment", pathPattern: "/pay", path: "$.k" },
  ];

  it("applies no filters as identity", () => {
    expect(applyFilters(rows, {})).toEqual(rows);
  });

  it("composes filters conjunctively", () => {
    expect(applyFilters(rows, { service: "orders", fieldPath: "$.k" })).toEqual([rows[0]]);
  });

  it("returns nothing when one conjunct fails", () => {
    expect(applyFilters(rows, { service: "payment", pathPattern: "/orders" })).toEqual([]);
  });
});

describe("isTableQuery", () => {
  it("accepts the documented aggregation names", () => {
    for (const name of [
      "REQUESTS_PER_SERVICE",
      "REQUESTS_PER_ENDPOINT",
      "FLOWS_BETWEEN_SERVICES",
      "FIELD_OCCURRENCES",
      "INITIATORS",
    ]) {
      expect(isTableQuery(name)).toBe(true);
    }
  });

  it("rejects unknown names so the router can show the 404 view", () => {
    expect(isTableQuery("EVERYTHING")).toBe(false);
    expect(isTableQuery("")).toBe(false);
  });
});
