/** Session state machine for the interactive completion loop.
 *
 * All mutation goes through the session object; the DOM layer only reads.
 * Accepting a suggestion appends exactly one node and immediately asks for
 * the next prediction; undo restores the previous state snapshot exactly.
 */

import { CompletionClient, ServiceError } from "./api.js";
import type { CompletionResponse, NodeSpec } from "./types.js";

export const MAX_PREFIX = 49;

export interface SessionState {
  prefix: NodeSpec[];
  history: { value: string; type: string }[];
  lastResponse: CompletionResponse | null;
  serviceUrl: string;
  error: string | null;
}

export function initialState(serviceUrl: string, prefix: NodeSpec[] = []): SessionState {
  return { prefix, history: [], lastResponse: null, serviceUrl, error: null };
}

function deepCopy<T>(x: T): T {
  return JSON.parse(JSON.stringify(x)) as T;
}

/** Most recent non-leaf node (no value), the heuristic "open" parent. */
export function defaultParentIndex(prefix: NodeSpec[]): number | undefined {
  for (let i = prefix.length - 1; i >= 0; i--) {
    if (prefix[i].value === undefined || prefix[i].value === null) return i;
  }
  return prefix.length > 0 ? prefix.length - 1 : undefined;
}

export class Session {
  state: SessionState;
  topK = 3;
  includeGraph = true;
  private undoStack: SessionState[] = [];
  private requestSeq = 0;

  constructor(private client: CompletionClient, prefix: NodeSpec[] = []) {
    this.state = initialState(client.baseUrl, prefix);
  }

  /** Ask the service for predictions on the current prefix. */
  async submit(): Promise<SessionState> {
    if (this.state.prefix.length === 0) {
      this.state = { ...this.state, error: "prefix is empty" };
      return this.state;
    }
    if (this.state.prefix.length > MAX_PREFIX) {
      this.state = { ...this.state, error: `prefix longer than ${MAX_PREFIX} nodes` };
      return this.state;
    }
    const seq = ++this.requestSeq;
    try {
      const response = await this.client.complete({
        nodes: this.state.prefix,
        top_k: this.topK,
        include_graph: this.includeGraph,
      });
      if (seq !== this.requestSeq) return this.state; // superseded request
      this.state = { ...this.state, lastResponse: response, error: null };
    } catch (err) {
      if (seq !== this.requestSeq) return this.state;
      const detail = err instanceof ServiceError ? err.message : `service unreachable: ${err}`;
      // state (and in particular the prefix) is preserved on failure
      this.state = { ...this.state, error: detail };
    }
    return this.state;
  }

  /** Append an accepted (value, type) suggestion and request the next one. */
  async accept(value: string, type: string, parent?: number): Promise<SessionState> {
    if (this.state.lastResponse === null) {
      this.state = { ...this.state, error: "nothing to accept: submit a prefix first" };
      return this.state;
    }
    if (this.state.prefix.length >= MAX_PREFIX) {
      this.state = {
        ...this.state,
        error: `prefix is at the ${MAX_PREFIX}-node window limit`,
      };
      return this.state;
    }
    this.undoStack.push(deepCopy(this.state));
    const node: NodeSpec = {
      type,
      value: value === "EMPTY" ? null : value,
      parent: parent ?? defaultParentIndex(this.state.prefix) ?? null,
    };
    this.state = {
      ...this.state,
      prefix: [...this.state.prefix, node],
      history: [...this.state.history, { value, type }],
      lastResponse: null,
      error: null,
    };
    return this.submit();
  }

  /** Restore the exact state before the most recent accept. */
  undo(): SessionState {
    const previous = this.undoStack.pop();
    if (previous !== undefined) {
      this.requestSeq++; // invalidate any in-flight request
      this.state = previous;
    }
    return this.state;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  replacePrefix(prefix: NodeSpec[]): SessionState {
    this.requestSeq++;
    this.undoStack = [];
    this.state = initialState(this.state.serviceUrl, deepCopy(prefix));
    return this.state;
  }
}
