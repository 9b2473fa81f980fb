import { describe, expect, it } from "vitest";

import { buildGraph, layoutNodes } from "../src/graph.js";

describe("buildGraph", () => {
  it("renders ten a->b exchanges as a single edge labeled 10", () => {
    const graph = buildGraph([{ client: "a", server: "b", count: 10 }]);
    expect(graph.nodes).toEqual(["a", "b"]);
    expect(graph.edges).toEqual([{ client: "a", server: "b", count: 10, active: false }]);
    expect(graph.empty).toBe(false);
  });

  it("reports the empty state when there is no traffic", () => {
    const graph = buildGraph([]);
    expect(graph.empty).toBe(true);
    expect(graph.nodes).toEqual([]);
    expect(graph.edges).toEqual([]);
  });

  it("keeps two disjoint pairs as two disconnected edges", () => {
    const graph = buildGraph([
      { client: "c", server: "d", count: 2 },
      { client: "a", server: "b", count: 1 },
    ]);
    expect(graph.nodes).toEqual(["a", "b", "c", "d"]);
    expect(graph.edges.map((edge) => `${edge.client}->${edge.server}`)).toEqual([
      "a->b",
      "c->d",
    ]);
  });

  it("marks an edge active when its count grew since the previous poll", () => {
    const first = buildGraph([{ client: "a", server: "b", count: 3 }]);
    const second = buildGraph(
      [
        { client: "a", server: "b", count: 5 },
        { client: "a", server: "c", count: 1 },
      ],
      first,
    );
    const byPair = new Map(second.edges.map((edge) => [`${edge.client}->${edge.server}`, edge]));
    expect(byPair.get("a->b")?.active).toBe(true); // grew
    expect(byPair.get("a->c")?.active).toBe(true); // newly appeared
    const third = buildGraph([{ client: "a", server: "b", count: 5 }], second);
    expect(third.edges[0].active).toBe(false); // unchanged
  });

  it("never animates on the very first poll", () => {
    const graph = buildGraph([{ client: "a", server: "b", count: 9 }], null);
    expect(graph.edges[0].active).toBe(false);
  });
});

describe("layoutNodes", () => {
  it("places every node inside the unit square, deterministically", () => {
    const nodes = ["a", "b", "c", "d", "e"];
    const first = layoutNodes(nodes);
    const second = layoutNodes(nodes);
    for (const node of nodes) {
      const at = first.get(node)!;
      expect(at.x).toBeGreaterThanOrEqual(0);
      expect(at.x).toBeLessThanOrEqual(1);
      expect(at.y).toBeGreaterThanOrEqual(0);
      expect(at.y).toBeLessThanOrEqual(1);
      expect(second.get(node)).toEqual(at);
    }
  });
});
