/** DOM rendering; reads session state, never mutates it. */

import { layoutGraph } from "./graphlayout.js";
import type { SessionState } from "./state.js";
import type { GraphPayload, NodeSpec } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderPrefix(container: HTMLElement, prefix: NodeSpec[]): void {
  container.replaceChildren();
  prefix.forEach((node, i) => {
    const label = node.value == null ? node.type : `${node.type}:${node.value}`;
    const chip = el("span", { class: "chip", title: `parent: ${node.parent ?? "none"}` },
      `${i} ${label}`);
    container.appendChild(chip);
  });
}

export function renderCandidates(
  container: HTMLElement,
  state: SessionState,
  onAccept: (value: string, type: string) => void,
): void {
  container.replaceChildren();
  const response = state.lastResponse;
  if (!response) return;

  const grid = el("div", { class: "candidates" });
  const valueCol = el("div", { class: "col" });
  valueCol.appendChild(el("h3", {}, "values"));
  for (const row of response.values) {
    valueCol.appendChild(probabilityRow(row.value, row.probability));
  }
  const typeCol = el("div", { class: "col" });
  typeCol.appendChild(el("h3", {}, "types"));
  for (const row of response.types) {
    typeCol.appendChild(probabilityRow(row.type, row.probability));
  }
  grid.append(valueCol, typeCol);
  container.appendChild(grid);

  const acceptBar = el("div", { class: "accept-bar" });
  acceptBar.appendChild(el("span", {}, "accept: "));
  const topValue = response.values[0]?.value ?? "EMPTY";
  for (const t of response.types) {
    const button = el("button", {}, `(${topValue}, ${t.type})`);
    button.addEventListener("click", () => onAccept(topValue, t.type));
    acceptBar.appendChild(button);
  }
  container.appendChild(acceptBar);
}

function probabilityRow(label: string, probability: number): HTMLElement {
  const row = el("div", { class: "prob-row" });
  const bar = el("div", { class: "bar" });
  bar.style.width = `${Math.round(probability * 100)}%`;
  row.appendChild(el("span", { class: "label" }, label));
  row.appendChild(bar);
  row.appendChild(el("span", { class: "pct" }, `${(probability * 100).toFixed(1)}%`));
  return row;
}

export function renderGraph(container: HTMLElement, graph: GraphPayload | undefined): void {
  container.replaceChildren();
  if (!graph) return;
  const layout = layoutGraph(graph);
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
  svg.setAttribute("class", "graph");

  for (const edge of layout.edges) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(edge.x1));
    line.setAttribute("y1", String(edge.y1));
    line.setAttribute("x2", String(edge.x2));
    line.setAttribute("y2", String(edge.y2));
    line.setAttribute("class", edge.kind === "parent" ? "edge-parent" : "edge-adjacency");
    if (edge.kind === "parent") {
      line.setAttribute("stroke-dasharray", "6 4");
      line.setAttribute("marker-end", "url(#arrow)");
    }
    svg.appendChild(line);
    if (edge.label) {
      const text = document.createElementNS(SVG_NS, "text");
      text.setAttribute("x", String(edge.midX));
      text.setAttribute("y", String(edge.midY));
      text.setAttribute("class", "edge-weight");
      text.textContent = edge.label;
      svg.appendChild(text);
    }
  }

  const defs = document.createElementNS(SVG_NS, "defs");
  defs.innerHTML =
    '<marker id="arrow" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto">' +
    '<path d="M0,0 L8,4 L0,8 z"/></marker>';
  svg.appendChild(defs);

  for (const node of layout.nodes) {
    const g = document.createElementNS(SVG_NS, "g");
    const circle = document.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", String(node.x));
    circle.setAttribute("cy", String(node.y));
    circle.setAttribute("r", "16");
    circle.setAttribute("class", node.isRightmost ? "node rightmost" : "node");
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = `${node.label} | distance to rightmost: ${node.positionDistance}`;
    circle.appendChild(title);
    const text = document.createElementNS(SVG_NS, "text");
    text.setAttribute("x", String(node.x));
    text.setAttribute("y", String(node.y - 20));
    text.setAttribute("class", "node-label");
    text.textContent = node.label;
    g.append(circle, text);
    svg.appendChild(g);
  }
  container.appendChild(svg);
}

export function renderError(container: HTMLElement, error: string | null): void {
  container.replaceChildren();
  if (error) {
    container.appendChild(el("div", { class: "banner" }, error));
  }
}
