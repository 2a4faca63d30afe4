/** Pure view-state machine for the search console.
 *
 * All transitions return a new state (plus, where relevant, the request body
 * the caller should send). Responses are matched to requests by sequence
 * number: only the newest request's response is applied, so a slow older
 * response can never clobber the results of a newer query.
 */

import type { SearchMode, SearchRequestBody, SearchResponse } from "./types.js";

export const K_MIN = 1;
export const K_MAX = 100;

export interface SearchViewState {
  query: string;
  mode: SearchMode;
  kRerank: number;
  kResults: number;
  /** Sequence number of the newest issued request; 0 before any request. */
  seq: number;
  inFlight: boolean;
  response: SearchResponse | null;
  /** Error banner text (network/HTTP/shape failures). */
  error: string | null;
  /** Inline validation message (bad input; no request was sent). */
  validation: string | null;
}

export interface Issued {
  state: SearchViewState;
  /** Non-null when the caller should POST this body tagged with state.seq. */
  request: SearchRequestBody | null;
}

export function initialState(): SearchViewState {
  return {
    query: "",
    mode: "cascade",
    kRerank: 10,
    kResults: 10,
    seq: 0,
    inFlight: false,
    response: null,
    error: null,
    validation: null,
  };
}

export function setQuery(state: SearchViewState, query: string): SearchViewState {
  return { ...state, query, validation: null };
}

function clampK(value: number): number {
  return Math.min(K_MAX, Math.max(K_MIN, Math.round(value)));
}

function requestBody(state: SearchViewState): SearchRequestBody {
  return {
    query: state.query,
    mode: state.mode,
    k_rerank: state.kRerank,
    k_results: state.kResults,
  };
}

/** Validate and issue a search. Empty queries never leave the client. */
export function submitSearch(state: SearchViewState): Issued {
  if (state.query.trim() === "") {
    return {
      state: { ...state, validation: "type a query first" },
      request: null,
    };
  }
  const next: SearchViewState = {
    ...state,
    seq: state.seq + 1,
    inFlight: true,
    error: null,
    validation: null,
  };
  return { state: next, request: requestBody(next) };
}

/** Slider movement: clamp, store, and re-issue the current query so the
 * displayed results always correspond to the displayed K. */
export function adjustK(state: SearchViewState, newK: number): Issued {
  const updated = { ...state, kRerank: clampK(newK) };
  if (updated.query.trim() === "") {
    return { state: updated, request: null };
  }
  return submitSearch(updated);
}

export function adjustKResults(state: SearchViewState, newK: number): Issued {
  const updated = { ...state, kResults: clampK(newK) };
  if (updated.query.trim() === "") {
    return { state: updated, request: null };
  }
  return submitSearch(updated);
}

/** Mode toggle re-queries for the same reason adjustK does. */
export function setMode(state: SearchViewState, mode: SearchMode): Issued {
  const updated = { ...state, mode };
  if (updated.query.trim() === "") {
    return { state: updated, request: null };
  }
  return submitSearch(updated);
}

/** Apply a response for request `seq`; stale responses are dropped whole. */
export function applyResponse(
  state: SearchViewState,
  seq: number,
  response: SearchResponse,
): SearchViewState {
  if (seq !== state.seq) {
    return state;
  }
  return { ...state, inFlight: false, response, error: null };
}

/** A failed request surfaces a banner but keeps the previous results. */
export function applyFailure(
  state: SearchViewState,
  seq: number,
  message: string,
): SearchViewState {
  if (seq !== state.seq) {
    return state;
  }
  return { ...state, inFlight: false, error: message };
}
