/** Playground bootstrap: wire the session to the DOM. */

import { CompletionClient } from "./api.js";
import { MAX_PREFIX, Session, defaultParentIndex } from "./state.js";
import type { NodeSpec } from "./types.js";
import { renderCandidates, renderError, renderGraph, renderPrefix } from "./view.js";

const FIXTURE_PREFIX: NodeSpec[] = [
  { type: "Module" },
  { type: "FunctionDef", parent: 0 },
  { type: "arguments", parent: 1 },
  { type: "NameParam", value: "a", parent: 2 },
  { type: "NameParam", value: "b", parent: 2 },
  { type: "If", parent: 1 },
  { type: "CompareGt", parent: 5 },
  { type: "NameLoad", value: "a", parent: 6 },
  { type: "NameLoad", value: "b", parent: 6 },
];

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get("service") ?? "";
  const client = new CompletionClient(serviceUrl);
  const session = new Session(client, FIXTURE_PREFIX);

  const prefixBox = byId("prefix");
  const candidatesBox = byId("candidates");
  const graphBox = byId("graph");
  const errorBox = byId("error");
  const jsonInput = byId("prefix-json") as HTMLTextAreaElement;
  const typeInput = byId("node-type") as HTMLInputElement;
  const valueInput = byId("node-value") as HTMLInputElement;
  const parentInput = byId("node-parent") as HTMLInputElement;
  const undoButton = byId("undo") as HTMLButtonElement;
  const acceptState = byId("accept-state");

  function redraw(): void {
    renderPrefix(prefixBox, session.state.prefix);
    renderCandidates(candidatesBox, session.state, (value, type) => {
      void session.accept(value, type).then(redraw);
    });
    renderGraph(graphBox, session.state.lastResponse?.graph);
    renderError(errorBox, session.state.error);
    undoButton.disabled = !session.canUndo;
    jsonInput.value = JSON.stringify(session.state.prefix, null, 1);
    if (session.state.prefix.length >= MAX_PREFIX) {
      acceptState.textContent = `window limit reached (${MAX_PREFIX} nodes); undo to continue`;
    } else {
      acceptState.textContent = `history: ${session.state.history.length} accepted`;
    }
  }

  byId("submit").addEventListener("click", () => {
    void session.submit().then(redraw);
  });
  undoButton.addEventListener("click", () => {
    session.undo();
    redraw();
  });
  byId("load-json").addEventListener("click", () => {
    try {
      const doc = JSON.parse(jsonInput.value) as NodeSpec[] | { nodes: NodeSpec[] };
      session.replacePrefix(Array.isArray(doc) ? doc : doc.nodes);
      redraw();
    } catch (err) {
      renderError(errorBox, `could not parse prefix JSON: ${err}`);
    }
  });
  byId("add-node").addEventListener("click", () => {
    const type = typeInput.value.trim();
    if (!type) {
      renderError(errorBox, "node needs a type");
      return;
    }
    const parentRaw = parentInput.value.trim();
    const node: NodeSpec = {
      type,
      value: valueInput.value.trim() || null,
      parent: parentRaw === "" ? defaultParentIndex(session.state.prefix) ?? null
        : Number(parentRaw),
    };
    session.replacePrefix([...session.state.prefix, node]);
    redraw();
  });
  byId("reset").addEventListener("click", () => {
    session.replacePrefix(FIXTURE_PREFIX);
    redraw();
  });

  redraw();
  void session.submit().then(redraw);
}

main();
