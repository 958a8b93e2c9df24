// Typed client for the rating-service HTTP API. Everything the workbench
// does goes through this module; there is no other backend surface.

export const NEED_MORE_INFO = 'need_more_info' as const;

export type Score = 1 | 2 | 3 | 4 | 5 | typeof NEED_MORE_INFO;

export interface SessionInfo {
  session_id: string;
  rater_id: string;
  total: number;
  completed: number;
}

export interface CandidateCard {
  blinded_text_id: string;
  text: string;
  rated: boolean;
}

export interface TaskView {
  done: false;
  part_id: string;
  label: string;
  slide_ids: string[];
  candidates: CandidateCard[];
  completed: number;
  total: number;
}

export interface SessionDone {
  done: true;
  completed: number;
  total: number;
}

export type NextTask = TaskView | SessionDone;

export interface RatingSubmission {
  part_id: string;
  blinded_text_id: string;
  score: Score;
  comment: string;
}

export interface SubmitAck {
  ok: boolean;
  completed: number;
  total: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

export interface ClientOptions {
  token?: string;
  fetchFn?: FetchLike;
}

export class RatingClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    private readonly opts: ClientOptions = {},
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
    this.fetchFn = opts.fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private headers(json: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h['content-type'] = 'application/json';
    if (this.opts.token) h['authorization'] = `Bearer ${this.opts.token}`;
    return h;
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: unknown };
        if (typeof body.detail === 'string') detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return res;
  }

  async createSession(raterId: string, seed = 0): Promise<SessionInfo> {
    const res = await this.request('/sessions', {
      method: 'POST',
      headers: this.headers(true),
      body: JSON.stringify({ rater_id: raterId, seed }),
    });
    return (await res.json()) as SessionInfo;
  }

  async nextTask(sessionId: string): Promise<NextTask> {
    const res = await this.request(`/sessions/${sessionId}/next`, {
      headers: this.headers(false),
    });
    return (await res.json()) as NextTask;
  }

  async submitRating(sessionId: string, body: RatingSubmission): Promise<SubmitAck> {
    const res = await this.request(`/sessions/${sessionId}/ratings`, {
      method: 'POST',
      headers: this.headers(true),
      body: JSON.stringify(body),
    });
    return (await res.json()) as SubmitAck;
  }

  /** Unblinded JSONL for the analysis pipeline; not part of the rating flow. */
  async exportRatings(sessionId: string): Promise<string> {
    const res = await this.request(`/sessions/${sessionId}/export`, {
      headers: this.headers(false),
    });
    return res.text();
  }

  exportUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/export`;
  }

  mosaicUrl(partId: string, slideId: string): string {
    return `${this.baseUrl}/parts/${partId}/mosaic/${slideId}`;
  }
}
