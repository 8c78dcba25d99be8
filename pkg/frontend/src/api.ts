/** Thin fetch client for the completion service. */

import type { CompletionRequest, CompletionResponse, HealthResponse } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(`service returned ${status}: ${detail}`);
  }
}

export class CompletionClient {
  constructor(
    readonly baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async complete(request: CompletionRequest): Promise<CompletionResponse> {
    const resp = await this.fetchImpl(`${this.baseUrl}/v1/complete`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!resp.ok) {
      throw new ServiceError(resp.status, await resp.text());
    }
    return (await resp.json()) as CompletionResponse;
  }

  async health(): Promise<HealthResponse> {
    const resp = await this.fetchImpl(`${this.baseUrl}/v1/health`);
    return (await resp.json()) as HealthResponse;
  }
}
