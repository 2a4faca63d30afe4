/** Browser entry point: wires DOM events to the pure state machine.
 *
 * This is the only module that touches document/window; everything it calls
 * is covered by the node contract tests.
 */

import { getMeta, postSearch, type FetchLike } from "./api.js";
import {
  adjustK,
  adjustKResults,
  applyFailure,
  applyResponse,
  initialState,
  setMode,
  setQuery,
  submitSearch,
  type Issued,
  type SearchViewState,
} from "./state.js";
import { renderApp } from "./render.js";
import type { SearchMode } from "./types.js";

const base = "";
const fetchFn: FetchLike = (input, init) => fetch(input, init);

let state: SearchViewState = initialState();

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const queryInput = byId<HTMLInputElement>("query");
const modeSelect = byId<HTMLSelectElement>("mode");
const kSlider = byId<HTMLInputElement>("k-rerank");
const kLabel = byId<HTMLSpanElement>("k-rerank-value");
const kResultsInput = byId<HTMLInputElement>("k-results");
const form = byId<HTMLFormElement>("search-form");
const output = byId<HTMLDivElement>("output");
const metaLine = byId<HTMLDivElement>("meta");

function render(): void {
  kLabel.textContent = String(state.kRerank);
  output.innerHTML = renderApp(state);
}

function dispatch(issued: Issued): void {
  state = issued.state;
  render();
  if (issued.request === null) {
    return;
  }
  const seq = state.seq;
  const body = issued.request;
  postSearch(base, body, fetchFn).then(
    (response) => {
      state = applyResponse(state, seq, response);
      render();
    },
    (exc: unknown) => {
      const message = exc instanceof Error ? exc.message : String(exc);
      state = applyFailure(state, seq, message);
      render();
    },
  );
}

form.addEventListener("submit", (event) => {
  event.preventDefault();
  state = setQuery(state, queryInput.value);
  dispatch(submitSearch(state));
});

modeSelect.addEventListener("change", () => {
  dispatch(setMode(state, modeSelect.value as SearchMode));
});

kSlider.addEventListener("change", () => {
  dispatch(adjustK(state, Number(kSlider.value)));
});
kSlider.addEventListener("input", () => {
  kLabel.textContent = kSlider.value;
});

kResultsInput.addEventListener("change", () => {
  dispatch(adjustKResults(state, Number(kResultsInput.value)));
});

getMeta(base, fetchFn).then(
  (meta) => {
    metaLine.textContent =
      `index: ${meta.index_size} candidates, default K=${meta.default_k}`;
  },
  () => {
    metaLine.textContent = "service metadata unavailable";
  },
);

render();
