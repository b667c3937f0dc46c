import type { Recommendation, StepResponse } from "./types.js";

/** Thin client for the recommendation service; base URL is configurable so
 * the page can point at any deployment (empty string = same origin). */
export class ServiceClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl ? `${this.baseUrl}${path}` : path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.url(path), {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      let detail = `${res.status}`;
      try {
        const body = await res.json();
        detail = body.message ?? body.code ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new Error(detail);
    }
    return res.json() as Promise<T>;
  }

  async openSession(): Promise<string> {
    const body = await this.request<{ session_id: string }>("/sessions", {
      method: "POST",
    });
    return body.session_id;
  }

  sendMessage(sessionId: string, text: string): Promise<StepResponse> {
    return this.request<StepResponse>(`/sessions/${sessionId}/messages`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  async recommendations(sessionId: string, k: number): Promise<Recommendation[]> {
    const body = await this.request<{ recommendations: Recommendation[] }>(
      `/sessions/${sessionId}/recommendations?k=${k}`,
    );
    return body.recommendations;
  }
}
