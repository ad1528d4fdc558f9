import type { AnswerResponse, ClaimResponse } from './types.js';

/** Thin typed client over the gateway's worker-facing endpoints. */
export class GatewayApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async claim(workerId: string): Promise<ClaimResponse> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/workers/${encodeURIComponent(workerId)}/claim`,
      { method: 'POST' },
    );
    if (!response.ok) {
      throw new Error(`claim failed: ${response.status}`);
    }
    return (await response.json()) as ClaimResponse;
  }

  async postAnswer(gameId: string, workerId: string, text: string): Promise<AnswerResponse> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/games/${encodeURIComponent(gameId)}/answers`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ worker_id: workerId, text }),
      },
    );
    if (!response.ok) {
      throw new Error(`answer failed: ${response.status}`);
    }
    return (await response.json()) as AnswerResponse;
  }
}
