/** Typed client for the labelling service JSON API. */

export type SessionStatus = "awaiting_label" | "retraining" | "done";

export interface PendingQuery {
  index: number;
  asset_url: string | null;
  embedding: number[];
}

export interface CurvePoint {
  train_size: number;
  accuracy: number | null;
}

export interface SessionState {
  status: SessionStatus;
  step: number;
  budget: number;
  train_size: number;
  pending: PendingQuery | null;
  classes: string[];
  accuracy_curve: CurvePoint[];
}

export interface SubmitResult {
  status: number;
  state: SessionState | null;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  async state(): Promise<SessionState> {
    const response = await fetch(`${this.base}/api/state`);
    if (!response.ok) {
      throw new Error(`state fetch failed: ${response.status}`);
    }
    return (await response.json()) as SessionState;
  }

  /**
   * Post one label. Returns the HTTP status plus the refreshed state on
   * success; a 409 (stale query) or 400 (bad class) yields state null and
   * the caller decides how to re-sync.
   */
  async submitLabel(index: number, cls: number): Promise<SubmitResult> {
    const response = await fetch(`${this.base}/api/label`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ index, class: cls }),
    });
    if (response.status === 200) {
      return { status: 200, state: (await response.json()) as SessionState };
    }
    return { status: response.status, state: null };
  }

  async metricsCsv(): Promise<string> {
    const response = await fetch(`${this.base}/api/metrics.csv`);
    if (!response.ok) {
      throw new Error(`metrics fetch failed: ${response.status}`);
    }
    return await response.text();
  }
}
