/** Wire types mirroring the completion service's /v1 schemas. */

export interface NodeSpec {
  type: string;
  value?: string | null;
  parent?: number | null;
}

export interface CompletionRequest {
  nodes: NodeSpec[];
  top_k?: number;
  include_graph?: boolean;
}

export interface RankedValue {
  value: string;
  probability: number;
}

export interface RankedType {
  type: string;
  probability: number;
}

export interface GraphNodePayload {
  type_id: number;
  value_id: number;
  position_distance: number;
  type?: string;
  value?: string;
}

export interface GraphPayload {
  nodes: GraphNodePayload[];
  nn_edges: { a: number; b: number; weight: number }[];
  pc_edges: [number, number][];
  rightmost: number;
}

export interface CompletionResponse {
  values: RankedValue[];
  types: RankedType[];
  graph?: GraphPayload;
  model_info: { checkpoint: string; config_hash: string };
}

export interface HealthResponse {
  status: string;
  checkpoint: string | null;
  vocab_hashes: { value: string; type: string } | null;
}
