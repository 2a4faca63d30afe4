/** Wire types for the codesearch HTTP API. */

export type SearchMode = "fast" | "cascade" | "slow";

export interface SearchRequestBody {
  query: string;
  mode: SearchMode;
  k_rerank: number;
  k_results: number;
}

export interface SearchResult {
  id: string;
  docstring: string;
  code: string;
  /** Bi-encoder cosine; null for results produced by the slow full scorer. */
  fast_score: number | null;
  rank: number;
  /** Classifier probability; present only for entries the reranker scored. */
  rerank_score?: number;
}

export interface StageTimings {
  encode_ms: number;
  lookup_ms: number;
  rerank_ms: number;
}

export interface SearchResponse {
  results: SearchResult[];
  timings: StageTimings;
  mode: SearchMode;
  k_rerank: number;
  pool_size: number;
}

export interface MetaResponse {
  index_size: number;
  model_config: Record<string, unknown>;
  default_k: number;
  uptime_seconds: number;
}
