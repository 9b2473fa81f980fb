/**
 * Dashboard entry point: hash-routed single page with three views —
 * service graph, tabular summaries, and the mapping configuration page —
 * polling the registry every two seconds.
 */

import {
  ApiError,
  RegistryClient,
  ValidationError,
  endpointKey,
  submitFieldDefinition,
  type Endpoint,
  type FieldDefinition,
  type TimeRange,
} from "./api.js";
import { buildGraph, layoutNodes, type ServiceGraph } from "./graph.js";
import { applyFilters, isTableQuery, stableSort, type Filters, type SortDirection } from "./tables.js";
import { VIOLATION_MESSAGES, validateFieldDefinition } from "./validate.js";

const POLL_INTERVAL_MS = 2000;

interface ViewState {
  range: TimeRange;
  filters: Filters & { purpose?: string };
  sortColumn: string;
  sortDirection: SortDirection;
  pendingDefinition: FieldDefinition;
}

function defaultDefinition(): FieldDefinition {
  return {
    endpoint: { service: "", method: "POST", pathPattern: "" },
    path: "",
    name: "",
    personalData: true,
    specialCategory: false,
    purposes: [],
    legalBasis: "",
    recipients: [],
  };
}

const state: ViewState = {
  range: {},
  filters: {},
  sortColumn: "count",
  sortDirection: "desc",
  pendingDefinition: defaultDefinition(),
};

function apiBaseUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  return fromQuery ?? localStorage.getItem("hawk-api") ?? "http://127.0.0.1:8900";
}

let client = new RegistryClient(apiBaseUrl());
let lastGraph: ServiceGraph | null = null;

const $ = (id: string): HTMLElement => {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing element #${id}`);
  return element;
};

function showError(message: string): void {
  const banner = $("error-banner");
  banner.textContent = message;
  banner.hidden = false;
}

function clearError(): void {
  $("error-banner").hidden = true;
}

// -- routing ----------------------------------------------------------------

type Route =
  | { view: "graph" }
  | { view: "config" }
  | { view: "table"; query: string }
  | { view: "not-found"; detail: string };

function currentRoute(): Route {
  const hash = location.hash.replace(/^#\/?/, "");
  if (hash === "" || hash === "graph") return { view: "graph" };
  if (hash === "config") return { view: "config" };
  if (hash.startsWith("table/")) {
    const query = hash.slice("table/".length).toUpperCase();
    if (isTableQuery(query)) return { view: "table", query };
    return { view: "not-found", detail: `unknown table query: ${query}` };
  }
  return { view: "not-found", detail: `unknown page: ${hash}` };
}

function showView(route: Route): void {
  for (const id of ["view-graph", "view-table", "view-config", "view-404"]) {
    $(id).hidden = true;
  }
  if (route.view === "graph") $("view-graph").hidden = false;
  else if (route.view === "table") $("view-table").hidden = false;
  else if (route.view === "config") $("view-config").hidden = false;
  else {
    $("view-404").hidden = false;
    $("not-found-detail").textContent = route.detail;
  }
}

// -- graph view -------------------------------------------------------------

function renderGraph(graph: ServiceGraph): void {
  const svg = $("graph-svg") as unknown as SVGSVGElement;
  const emptyState = $("graph-empty");
  emptyState.hidden = !graph.empty;
  svg.innerHTML = "";
  if (graph.empty) return;

  const width = svg.clientWidth || 640;
  const height = svg.clientHeight || 420;
  const positions = layoutNodes(graph.nodes);
  const ns = "http://www.w3.org/2000/svg";

  for (const edge of graph.edges) {
    const from = positions.get(edge.client)!;
    const to = positions.get(edge.server)!;
    const line = document.createElementNS(ns, "line");
    line.setAttribute("x1", String(from.x * width));
    line.setAttribute("y1", String(from.y * height));
    line.setAttribute("x2", String(to.x * width));
    line.setAttribute("y2", String(to.y * height));
    line.setAttribute("class", edge.active ? "edge active" : "edge");
    line.addEventListener("click", () => {
      state.filters.service = edge.server;
      location.hash = "#/table/REQUESTS_PER_ENDPOINT";
    });
    svg.appendChild(line);

    const label = document.createElementNS(ns, "text");
    label.setAttribute("x", String(((from.x + to.x) / 2) * width));
    label.setAttribute("y", String(((from.y + to.y) / 2) * height - 6));
    label.setAttribute("class", "edge-label");
    label.textContent = String(edge.count);
    svg.appendChild(label);
  }
  for (const node of graph.nodes) {
    const at = positions.get(node)!;
    const circle = document.createElementNS(ns, "circle");
    circle.setAttribute("cx", String(at.x * width));
    circle.setAttribute("cy", String(at.y * height));
    circle.setAttribute("r", "22");
    circle.setAttribute("class", "node");
    svg.appendChild(circle);
    const label = document.createElementNS(ns, "text");
    label.setAttribute("x", String(at.x * width));
    label.setAttribute("y", String(at.y * height + 4));
    label.setAttribute("class", "node-label");
    label.textContent = node;
    svg.appendChild(label);
  }
}

// -- table view -------------------------------------------------------------

function renderTable(headers: string[], rows: Array<Record<string, unknown>>): void {
  const head = $("table-head");
  const body = $("table-body");
  head.innerHTML = "";
  for (const header of headers) {
    const cell = document.createElement("th");
    cell.textContent = header;
    cell.addEventListener("click", () => {
      state.sortDirection =
        state.sortColumn === header && state.sortDirection === "desc" ? "asc" : "desc";
      state.sortColumn = header;
      void refresh();
    });
    head.appendChild(cell);
  }
  body.innerHTML = "";
  const sorted = stableSort(rows, {
    key: (row) => (row[state.sortColumn] as string | number) ?? "",
    direction: state.sortDirection,
  });
  for (const row of sorted) {
    const tr = document.createElement("tr");
    for (const header of headers) {
      const cell = document.createElement("td");
      cell.textContent = String(row[header] ?? "");
      tr.appendChild(cell);
    }
    body.appendChild(tr);
  }
  $("table-empty").hidden = rows.length > 0;
}

async function loadTable(query: string): Promise<void> {
  const range = state.range;
  if (query === "REQUESTS_PER_SERVICE") {
    const rows = applyFilters(await client.requestsPerService(range), state.filters);
    renderTable(["service", "count"], rows as never);
  } else if (query === "INITIATORS") {
    const rows = applyFilters(await client.initiators(range), state.filters);
    renderTable(["service", "count"], rows as never);
  } else if (query === "FLOWS_BETWEEN_SERVICES") {
    renderTable(["client", "server", "count"], (await client.flows(range)) as never);
  } else if (query === "REQUESTS_PER_ENDPOINT") {
    const rows = applyFilters(
      await client.requestsPerEndpoint(range, state.filters.purpose),
      state.filters,
    );
    renderTable(["service", "method", "pathPattern", "count"], rows as never);
  } else if (query === "FIELD_OCCURRENCES") {
    const rows = applyFilters(
      await client.fieldOccurrences({ path: state.filters.fieldPath }, range),
      state.filters,
    );
    renderTable(["service", "method", "pathPattern", "path", "count"], rows as never);
  }
}

// -- configuration view -----------------------------------------------------

function renderFields(fields: FieldDefinition[]): void {
  const body = $("fields-body");
  body.innerHTML = "";
  for (const field of fields) {
    const tr = document.createElement("tr");
    const cells = [
      endpointKey(field.endpoint),
      field.path,
      field.name,
      field.personalData ? "yes" : "no",
      field.purposes.join(", "),
    ];
    for (const value of cells) {
      const cell = document.createElement("td");
      cell.textContent = value;
      tr.appendChild(cell);
    }
    const actions = document.createElement("td");
    const edit = document.createElement("button");
    edit.textContent = "edit";
    edit.addEventListener("click", () => {
      state.pendingDefinition = structuredClone(field);
      fillEditor();
    });
    const remove = document.createElement("button");
    remove.textContent = "delete";
    remove.addEventListener("click", () => {
      void client
        .deleteField(field.endpoint, field.path)
        .then(refresh)
        .catch((error) => showError(String(error)));
    });
    actions.append(edit, remove);
    tr.appendChild(actions);
    body.appendChild(tr);
  }
}

function renderUnmapped(rows: Array<{ service: string; method: string; pathPattern: string; path: string; occurrences: number }>): void {
  const body = $("unmapped-body");
  body.innerHTML = "";
  for (const row of rows) {
    const tr = document.createElement("tr");
    for (const value of [
      `${row.service} ${row.method} ${row.pathPattern}`,
      row.path,
      String(row.occurrences),
    ]) {
      const cell = document.createElement("td");
      cell.textContent = value;
      tr.appendChild(cell);
    }
    const actions = document.createElement("td");
    const label = document.createElement("button");
    label.textContent = "label";
    label.addEventListener("click", () => {
      state.pendingDefinition = {
        ...defaultDefinition(),
        endpoint: { service: row.service, method: row.method, pathPattern: row.pathPattern },
        path: row.path,
      };
      fillEditor();
    });
    actions.appendChild(label);
    tr.appendChild(actions);
    body.appendChild(tr);
  }
  $("unmapped-empty").hidden = rows.length > 0;
}

function editorEndpoint(): Endpoint {
  return {
    service: ($("edit-service") as HTMLInputElement).value.trim(),
    method: ($("edit-method") as HTMLInputElement).value.trim().toUpperCase(),
    pathPattern: ($("edit-pattern") as HTMLInputElement).value.trim(),
  };
}

function readEditor(): FieldDefinition {
  return {
    endpoint: editorEndpoint(),
    path: ($("edit-path") as HTMLInputElement).value.trim(),
    name: ($("edit-name") as HTMLInputElement).value.trim(),
    personalData: ($("edit-personal") as HTMLInputElement).checked,
    specialCategory: ($("edit-special") as HTMLInputElement).checked,
    purposes: ($("edit-purposes") as HTMLInputElement).value
      .split(",")
      .map((entry) => entry.trim())
      .filter(Boolean),
    legalBasis: ($("edit-basis") as HTMLInputElement).value.trim(),
  };
}

function fillEditor(): void {
  const definition = state.pendingDefinition;
  ($("edit-service") as HTMLInputElement).value = definition.endpoint.service;
  ($("edit-method") as HTMLInputElement).value = definition.endpoint.method;
  ($("edit-pattern") as HTMLInputElement).value = definition.endpoint.pathPattern;
  ($("edit-path") as HTMLInputElement).value = definition.path;
  ($("edit-name") as HTMLInputElement).value = definition.name;
  ($("edit-personal") as HTMLInputElement).checked = definition.personalData;
  ($("edit-special") as HTMLInputElement).checked = definition.specialCategory ?? false;
  ($("edit-purposes") as HTMLInputElement).value = definition.purposes.join(", ");
  ($("edit-basis") as HTMLInputElement).value = definition.legalBasis ?? "";
  $("edit-violations").textContent = "";
}

async function saveEditor(): Promise<void> {
  const definition = readEditor();
  state.pendingDefinition = definition; // edits survive any failure below
  const violations = validateFieldDefinition(definition);
  const inline = $("edit-violations");
  if (violations.length > 0) {
    inline.textContent = violations.map((v) => VIOLATION_MESSAGES[v]).join("; ");
    return; // invalid: nothing is sent
  }
  inline.textContent = "";
  try {
    await submitFieldDefinition(client, definition);
    state.pendingDefinition = defaultDefinition();
    fillEditor();
    await refresh();
  } catch (error) {
    if (error instanceof ValidationError || error instanceof ApiError) {
      showError(error.message);
    } else {
      showError(String(error));
    }
  }
}

async function loadSuggestions(): Promise<void> {
  const target = $("suggestions-list");
  try {
    const suggestions = await client.suggestions(editorEndpoint());
    target.innerHTML = "";
    for (const suggestion of suggestions) {
      const item = document.createElement("li");
      const apply = document.createElement("button");
      apply.textContent = `apply ${suggestion.templateId}`;
      apply.addEventListener("click", () => {
        void client
          .applyTemplate(suggestion.templateId, suggestion.endpoint)
          .then(refresh)
          .catch((error) => showError(String(error)));
      });
      item.textContent = `${suggestion.templateId} — score ${suggestion.score.toFixed(2)} `;
      item.appendChild(apply);
      target.appendChild(item);
    }
  } catch (error) {
    showError(String(error));
  }
}

// -- polling ----------------------------------------------------------------

async function refresh(): Promise<void> {
  const route = currentRoute();
  showView(route);
  try {
    if (route.view === "graph") {
      const graph = buildGraph(await client.flows(state.range), lastGraph);
      renderGraph(graph);
      lastGraph = graph;
    } else if (route.view === "table") {
      await loadTable(route.query);
    } else if (route.view === "config") {
      renderFields(await client.listFields());
      renderUnmapped(await client.unmapped(state.range));
      const templates = await client.templates();
      $("templates-list").textContent = templates
        .map((template) => `${template.templateId} (${template.entries.length} entries)`)
        .join(", ");
    }
    const health = await client.health();
    $("status").textContent = `${health.records} records`;
    clearError();
  } catch (error) {
    // non-destructive: the banner appears, current content and edits stay
    showError(String(error));
  }
}

function wireControls(): void {
  const base = $("api-base") as HTMLInputElement;
  base.value = client.baseUrl;
  base.addEventListener("change", () => {
    localStorage.setItem("hawk-api", base.value);
    client = new RegistryClient(base.value);
    lastGraph = null;
    void refresh();
  });
  for (const [id, key] of [
    ["range-from", "from"],
    ["range-to", "to"],
  ] as const) {
    const input = $(id) as HTMLInputElement;
    input.addEventListener("change", () => {
      const value = input.value.trim();
      state.range = { ...state.range, [key]: value ? Number(value) : undefined };
      void refresh();
    });
  }
  for (const [id, key] of [
    ["filter-service", "service"],
    ["filter-purpose", "purpose"],
    ["filter-path", "fieldPath"],
  ] as const) {
    const input = $(id) as HTMLInputElement;
    input.addEventListener("change", () => {
      state.filters = { ...state.filters, [key]: input.value.trim() || undefined };
      void refresh();
    });
  }
  $("edit-save").addEventListener("click", () => void saveEditor());
  $("edit-suggest").addEventListener("click", () => void loadSuggestions());
  window.addEventListener("hashchange", () => void refresh());
}

export function start(): void {
  wireControls();
  fillEditor();
  void refresh();
  setInterval(() => void refresh(), POLL_INTERVAL_MS);
}

start();
