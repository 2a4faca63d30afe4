/** Thin typed client over fetch; the fetch function is injected so contract
 * tests run against a mock with no live backend. */

import type { MetaResponse, SearchRequestBody, SearchResponse } from "./types.js";

export type FetchLike = (
  input: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  readonly status: number | null;

  constructor(message: string, status: number | null = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

async function errorMessage(status: number, payload: unknown): Promise<never> {
  const detail =
    isRecord(payload) && typeof payload["error"] === "string"
      ? payload["error"]
      : `request failed with status ${status}`;
  throw new ApiError(detail, status);
}

/** Structural check so a confused proxy or wrong port fails loudly instead of
 * rendering garbage. */
export function validateSearchResponse(payload: unknown): SearchResponse {
  if (!isRecord(payload) || !Array.isArray(payload["results"]) || !isRecord(payload["timings"])) {
    throw new ApiError("malformed response: expected {results, timings, ...}");
  }
  for (const item of payload["results"]) {
    if (!isRecord(item) || typeof item["id"] !== "string" || typeof item["rank"] !== "number") {
      throw new ApiError("malformed response: bad result entry");
    }
  }
  const t = payload["timings"] as Record<string, unknown>;
  for (const key of ["encode_ms", "lookup_ms", "rerank_ms"]) {
    if (typeof t[key] !== "number") {
      throw new ApiError(`malformed response: timings missing ${key}`);
    }
  }
  return payload as unknown as SearchResponse;
}

export async function postSearch(
  base: string,
  body: SearchRequestBody,
  fetchFn: FetchLike,
): Promise<SearchResponse> {
  let response;
  try {
    response = await fetchFn(`${base}/api/search`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (exc) {
    throw new ApiError(`network error: ${exc instanceof Error ? exc.message : String(exc)}`);
  }
  let payload: unknown;
  try {
    payload = await response.json();
  } catch {
    throw new ApiError("malformed response: not JSON", response.status);
  }
  if (!response.ok) {
    return errorMessage(response.status, payload);
  }
  return validateSearchResponse(payload);
}

export async function getMeta(base: string, fetchFn: FetchLike): Promise<MetaResponse> {
  let response;
  try {
    response = await fetchFn(`${base}/api/meta`);
  } catch (exc) {
    throw new ApiError(`network error: ${exc instanceof Error ? exc.message : String(exc)}`);
  }
  let payload: unknown;
  try {
    payload = await response.json();
  } catch {
    throw new ApiError("malformed response: not JSON", response.status);
  }
  if (!response.ok) {
    return errorMessage(response.status, payload);
  }
  if (!isRecord(payload) || typeof payload["index_size"] !== "number") {
    throw new ApiError("malformed response: expected {index_size, ...}");
  }
  return payload as unknown as MetaResponse;
}
