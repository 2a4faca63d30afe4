/** HTML-string renderers: pure functions from state to markup.
 *
 * Keeping these DOM-free means the contract tests assert on strings in a
 * plain node environment; main.ts is the only module that touches document.
 */

import type { SearchResponse, SearchResult, StageTimings } from "./types.js";
import type { SearchViewState } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function escapeRegExp(text: string): string {
  return text.replace(/[.*+?^${}()|[\]\\]/g, "\\$&");
}

/** Wrap occurrences of each query term in <mark>. Escapes first, then marks,
 * so user-controlled text can never inject markup. Display aid only. */
export function highlightTerms(text: string, query: string): string {
  let html = escapeHtml(text);
  const terms = query
    .split(/\s+/)
    .map((t) => t.trim())
    .filter((t) => t.length > 0);
  for (const term of terms) {
    const pattern = new RegExp(escapeRegExp(escapeHtml(term)), "gi");
    html = html.replace(pattern, (m) => `<mark>${m}</mark>`);
  }
  return html;
}

function formatScore(value: number | null | undefined): string {
  if (value === null || value === undefined) {
    return "n/a";
  }
  return value.toFixed(4);
}

function stageBadge(result: SearchResult): string {
  return result.rerank_score !== undefined
    ? '<span class="badge badge-reranked">reranked</span>'
    : '<span class="badge badge-fast">fast</span>';
}

export function renderResult(result: SearchResult, query: string): string {
  return [
    `<li class="result" data-id="${escapeHtml(result.id)}">`,
    `<div class="result-head">`,
    `<span class="rank">#${result.rank}</span>`,
    stageBadge(result),
    `<span class="score">fast ${formatScore(result.fast_score)}</span>`,
    result.rerank_score !== undefined
      ? `<span class="score">rerank ${formatScore(result.rerank_score)}</span>`
      : "",
    `<span class="result-id">${escapeHtml(result.id)}</span>`,
    `</div>`,
    `<p class="doc">${highlightTerms(result.docstring, query)}</p>`,
    `<pre class="code"><code>${highlightTerms(result.code, query)}</code></pre>`,
    `</li>`,
  ].join("");
}

/** Results render strictly in response order; the client never re-sorts. */
export function renderResults(response: SearchResponse, query: string): string {
  if (response.results.length === 0) {
    return '<p class="empty">no results</p>';
  }
  const items = response.results.map((r) => renderResult(r, query)).join("\n");
  return `<ol class="results">\n${items}\n</ol>`;
}

export function totalMs(timings: StageTimings): number {
  return timings.encode_ms + timings.lookup_ms + timings.rerank_ms;
}

/** Horizontal bar with one segment per stage; widths are percentages of the
 * stage sum, so segments always fill the bar exactly. */
export function renderTimingBar(timings: StageTimings): string {
  const total = totalMs(timings);
  const segments: Array<[string, number]> = [
    ["encode", timings.encode_ms],
    ["lookup", timings.lookup_ms],
    ["rerank", timings.rerank_ms],
  ];
  const bars = segments
    .map(([name, ms]) => {
      const pct = total > 0 ? (100 * ms) / total : 0;
      return (
        `<span class="seg seg-${name}" style="width:${pct.toFixed(2)}%" ` +
        `title="${name} ${ms.toFixed(2)} ms"></span>`
      );
    })
    .join("");
  const labels = segments
    .map(([name, ms]) => `<span class="seg-label">${name} ${ms.toFixed(2)} ms</span>`)
    .join(" ");
  return (
    `<div class="timing"><div class="timing-bar">${bars}</div>` +
    `<div class="timing-labels">${labels} ` +
    `<span class="seg-label total">total ${total.toFixed(2)} ms</span></div></div>`
  );
}

export function renderStatus(response: SearchResponse): string {
  return (
    `<span class="status">mode ${escapeHtml(response.mode)}, ` +
    `K=${response.k_rerank}, pool ${response.pool_size}</span>`
  );
}

export function renderBanner(state: SearchViewState): string {
  if (state.error !== null) {
    return `<div class="banner banner-error">${escapeHtml(state.error)}</div>`;
  }
  if (state.validation !== null) {
    return `<div class="banner banner-validation">${escapeHtml(state.validation)}</div>`;
  }
  return "";
}

export function renderApp(state: SearchViewState): string {
  const banner = renderBanner(state);
  const busy = state.inFlight ? '<div class="spinner">searching ...</div>' : "";
  if (state.response === null) {
    return `${banner}${busy}`;
  }
  return [
    banner,
    busy,
    renderStatus(state.response),
    renderTimingBar(state.response.timings),
    renderResults(state.response, state.query),
  ].join("\n");
}
