/**
 * Typed client for the registry's REST API. Every number the dashboard shows
 * comes through here, so a direct call with the same parameters reproduces it.
 */

import { validateFieldDefinition, type Violation } from "./validate.js";

export interface Endpoint {
  service: string;
  method: string;
  pathPattern: string;
}

export interface TimeRange {
  from?: number;
  to?: number;
}

export interface FlowRow {
  client: string;
  server: string;
  count: number;
}

export interface ServiceCountRow {
  service: string;
  count: number;
}

export interface EndpointCountRow extends Endpoint {
  count: number;
}

export interface FieldOccurrenceRow extends Endpoint {
  path: string;
  count: number;
}

export interface UnmappedRow extends Endpoint {
  path: string;
  occurrences: number;
}

export interface FieldDefinition {
  endpoint: Endpoint;
  path: string;
  name: string;
  description?: string;
  personalData: boolean;
  specialCategory?: boolean;
  purposes: string[];
  legalBasis?: string;
  recipients?: string[];
  storagePeriod?: string | null;
}

export interface TemplateEntry {
  path: string;
  name: string;
  personalData: boolean;
  specialCategory?: boolean;
  purposes?: string[];
  legalBasis?: string;
}

export interface MappingTemplate {
  templateId: string;
  description?: string;
  entries: TemplateEntry[];
}

export interface Suggestion {
  endpoint: Endpoint;
  templateId: string;
  score: number;
}

export interface HealthInfo {
  status: string;
  records: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string = "",
  ) {
    super(`${code} (HTTP ${status})${detail ? `: ${detail}` : ""}`);
  }
}

/** Thrown by submitFieldDefinition before any request leaves the browser. */
export class ValidationError extends Error {
  constructor(readonly violations: Violation[]) {
    super(`invalid field definition: ${violations.join(", ")}`);
  }
}

type FetchLike = typeof fetch;

function query(params: Record<string, string | number | undefined>): string {
  const search = new URLSearchParams();
  for (const [key, value] of Object.entries(params)) {
    if (value !== undefined && value !== "") search.set(key, String(value));
  }
  const text = search.toString();
  return text ? `?${text}` : "";
}

function rangeParams(range?: TimeRange): Record<string, number | undefined> {
  return { from: range?.from, to: range?.to };
}

export class RegistryClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? fetch;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const text = await response.text();
    if (!response.ok) {
      let code = `HTTP_${response.status}`;
      let detail = text;
      try {
        const body = JSON.parse(text);
        code = body.error ?? code;
        detail = body.detail ?? "";
      } catch {
        /* non-JSON error body; keep the raw text as detail */
      }
      throw new ApiError(response.status, code, detail);
    }
    return JSON.parse(text) as T;
  }

  async flows(range?: TimeRange): Promise<FlowRow[]> {
    const body = await this.request<{ rows: FlowRow[] }>(
      `/v1/aggregations/FLOWS_BETWEEN_SERVICES${query(rangeParams(range))}`,
    );
    return body.rows;
  }

  async requestsPerService(range?: TimeRange): Promise<ServiceCountRow[]> {
    const body = await this.request<{ rows: ServiceCountRow[] }>(
      `/v1/aggregations/REQUESTS_PER_SERVICE${query(rangeParams(range))}`,
    );
    return body.rows;
  }

  async initiators(range?: TimeRange): Promise<ServiceCountRow[]> {
    const body = await this.request<{ rows: ServiceCountRow[] }>(
      `/v1/aggregations/INITIATORS${query(rangeParams(range))}`,
    );
    return body.rows;
  }

  async requestsPerEndpoint(range?: TimeRange, purpose?: string): Promise<EndpointCountRow[]> {
    const body = await this.request<{ rows: EndpointCountRow[] }>(
      `/v1/aggregations/REQUESTS_PER_ENDPOINT${query({ ...rangeParams(range), purpose })}`,
    );
    return body.rows;
  }

  async fieldOccurrences(
    filter: { path?: string; name?: string },
    range?: TimeRange,
  ): Promise<FieldOccurrenceRow[]> {
    const body = await this.request<{ rows: FieldOccurrenceRow[] }>(
      `/v1/aggregations/FIELD_OCCURRENCES${query({ ...rangeParams(range), ...filter })}`,
    );
    return body.rows;
  }

  async unmapped(range?: TimeRange): Promise<UnmappedRow[]> {
    const body = await this.request<{ unmapped: UnmappedRow[] }>(
      `/v1/unmapped${query(rangeParams(range))}`,
    );
    return body.unmapped;
  }

  async listFields(endpoint?: Endpoint): Promise<FieldDefinition[]> {
    const params = endpoint
      ? { service: endpoint.service, method: endpoint.method, pathPattern: endpoint.pathPattern }
      : {};
    const body = await this.request<{ fields: FieldDefinition[] }>(`/v1/fields${query(params)}`);
    return body.fields;
  }

  async saveField(definition: FieldDefinition): Promise<void> {
    await this.request(`/v1/fields`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(definition),
    });
  }

  async deleteField(endpoint: Endpoint, fieldPath: string): Promise<void> {
    await this.request(
      `/v1/fields${query({
        service: endpoint.service,
        method: endpoint.method,
        pathPattern: endpoint.pathPattern,
        fieldPath,
      })}`,
      { method: "DELETE" },
    );
  }

  async templates(): Promise<MappingTemplate[]> {
    const body = await this.request<{ templates: MappingTemplate[] }>(`/v1/templates`);
    return body.templates;
  }

  async applyTemplate(templateId: string, endpoint: Endpoint): Promise<number> {
    const body = await this.request<{ created: number }>(
      `/v1/templates/${encodeURIComponent(templateId)}/apply`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(endpoint),
      },
    );
    return body.created;
  }

  async suggestions(endpoint: Endpoint): Promise<Suggestion[]> {
    const body = await this.request<{ suggestions: Suggestion[] }>(
      `/v1/suggestions${query({
        service: endpoint.service,
        method: endpoint.method,
        pathPattern: endpoint.pathPattern,
      })}`,
    );
    return body.suggestions;
  }

  async health(): Promise<HealthInfo> {
    return this.request<HealthInfo>(`/-/health`);
  }
}

/**
 * Save gate for the mapping editor: enforces the definition invariants
 * client-side and throws ValidationError without issuing any request when
 * they are violated. The server still re-validates on its side.
 */
export async function submitFieldDefinition(
  client: RegistryClient,
  definition: FieldDefinition,
): Promise<void> {
  const violations = validateFieldDefinition(definition);
  if (violations.length > 0) {
    throw new ValidationError(violations);
  }
  await client.saveField(definition);
}

export function endpointKey(endpoint: Endpoint): string {
  return `${endpoint.service} ${endpoint.method} ${endpoint.pathPattern}`;
}
