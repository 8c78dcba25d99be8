/** Pure layout for the graph inspector: circle placement plus edge
 * descriptors ready for SVG rendering. Node-node edges render solid with
 * weight labels; parent-child edges render dashed with an arrow; the
 * rightmost node is flagged for highlighting. */

import type { GraphPayload } from "./types.js";

export interface LaidOutNode {
  index: number;
  x: number;
  y: number;
  label: string;
  positionDistance: number;
  isRightmost: boolean;
}

export interface LaidOutEdge {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  kind: "adjacency" | "parent";
  label?: string;
  /** offset fraction along the edge for the label */
  midX: number;
  midY: number;
}

export interface GraphLayout {
  nodes: LaidOutNode[];
  edges: LaidOutEdge[];
  width: number;
  height: number;
}

export function nodeLabel(node: GraphPayload["nodes"][number]): string {
  const type = node.type ?? `type#${node.type_id}`;
  const value = node.value ?? `value#${node.value_id}`;
  return value === "EMPTY" ? type : `${type}:${value}`;
}

export function layoutGraph(graph: GraphPayload, size = 420): GraphLayout {
  const n = graph.nodes.length;
  const cx = size / 2;
  const cy = size / 2;
  const radius = n === 1 ? 0 : size * 0.38;

  const nodes: LaidOutNode[] = graph.nodes.map((node, i) => {
    const angle = (2 * Math.PI * i) / Math.max(n, 1) - Math.PI / 2;
    return {
      index: i,
      x: cx + radius * Math.cos(angle),
      y: cy + radius * Math.sin(angle),
      label: nodeLabel(node),
      positionDistance: node.position_distance,
      isRightmost: i === graph.rightmost,
    };
  });

  const edges: LaidOutEdge[] = [];
  for (const { a, b, weight } of graph.nn_edges) {
    const from = nodes[a];
    const to = nodes[b];
    edges.push({
      x1: from.x, y1: from.y, x2: to.x, y2: to.y,
      kind: "adjacency",
      label: String(weight),
      midX: (from.x + to.x) / 2,
      midY: (from.y + to.y) / 2,
    });
  }
  for (const [parent, child] of graph.pc_edges) {
    const from = nodes[parent];
    const to = nodes[child];
    // bow parent edges slightly so they stay visible next to adjacency edges
    edges.push({
      x1: from.x, y1: from.y, x2: to.x, y2: to.y,
      kind: "parent",
      midX: (from.x + to.x) / 2 + 8,
      midY: (from.y + to.y) / 2 + 8,
    });
  }
  return { nodes, edges, width: size, height: size };
}
