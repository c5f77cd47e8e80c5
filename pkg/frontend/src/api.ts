/** Typed client for the rebutkit REST API, with 202 poll handling. */

import type { ApiErrorBody, FlowView, SessionView } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(body.message);
  }
}

export interface CreateSessionInput {
  paper_title: string;
  paper_content: string;
  review: string;
  context_mode?: string;
}

const POLL_INTERVAL_MS = 250;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class RebutkitClient {
  constructor(
    private baseUrl: string,
    private token: string,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      ...init,
      headers: {
        'Content-Type': 'application/json',
        Authorization: `Bearer ${this.token}`,
        ...(init?.headers ?? {}),
      },
    });
    const body = await response.json();
    if (response.status === 202 && body.poll_url) {
      return this.poll<T>(body.poll_url as string);
    }
    if (!response.ok) {
      throw new ApiError(response.status, body as ApiErrorBody);
    }
    return body as T;
  }

  /** Slow model calls answer 202 + poll URL; poll until the result lands. */
  private async poll<T>(pollUrl: string): Promise<T> {
    for (;;) {
      const response = await fetch(`${this.baseUrl}${pollUrl}`, {
        headers: { Authorization: `Bearer ${this.token}` },
      });
      const body = await response.json();
      if (response.status === 202) {
        await sleep(POLL_INTERVAL_MS);
        continue;
      }
      if (!response.ok) {
        throw new ApiError(response.status, body as ApiErrorBody);
      }
      return body as T;
    }
  }

  createSession(input: CreateSessionInput): Promise<SessionView> {
    return this.request<SessionView>('/sessions', {
      method: 'POST',
      body: JSON.stringify(input),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(`/sessions/${sessionId}`);
  }

  submitVerdict(
    sessionId: string,
    segmentId: string,
    verdict: 'accept' | 'reject',
    feedback?: string,
    override?: string,
  ): Promise<FlowView> {
    return this.request<FlowView>(`/sessions/${sessionId}/segments/${segmentId}/verdict`, {
      method: 'POST',
      body: JSON.stringify({ verdict, feedback: feedback ?? null, override: override ?? null }),
    });
  }

  editRebuttal(sessionId: string, segmentId: string, text: string): Promise<FlowView> {
    return this.request<FlowView>(`/sessions/${sessionId}/segments/${segmentId}/edit`, {
      method: 'POST',
      body: JSON.stringify({ text }),
    });
  }

  finalize(sessionId: string): Promise<{ session_id: string; final_rebuttal: string }> {
    return this.request(`/sessions/${sessionId}/finalize`, { method: 'POST' });
  }
}
