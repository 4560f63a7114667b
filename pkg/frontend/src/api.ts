/**
 * Typed client for the annotation queue service.
 *
 * The protocol is four read/write calls: list pending queries, submit a
 * verdict, read per-run progress, read the audit log. Errors split into two
 * families the UI treats differently: ValidationError (the submission was
 * understood and refused; do not retry) and ServiceUnreachableError (the
 * service never saw it; safe to retry).
 */

export type Outcome = { label: number } | { unknown: true };

export interface QueryEntry {
  sample_id: string;
  image_base64: string;
  width: number;
  height: number;
  channels: number;
  run_id: string;
  stage: number;
  num_classes: number;
  class_names: string[] | null;
  status: "pending" | "answered";
  outcome: Outcome | null;
}

export interface Progress {
  pending: number;
  labeled: number;
  rejected: number;
}

export class ValidationError extends Error {
  constructor(readonly detail: string) {
    super(detail);
    this.name = "ValidationError";
  }
}

export class ServiceUnreachableError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ServiceUnreachableError";
  }
}

async function refusalDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    // fall through to the status line
  }
  return `request refused (${res.status})`;
}

/** What the controller needs from the service; ApiClient is the real one. */
export interface QueueApi {
  pendingQueries(runId?: string): Promise<QueryEntry[]>;
  submitLabel(sampleId: string, outcome: Outcome): Promise<void>;
  progress(runId: string): Promise<Progress>;
}

export class ApiClient implements QueueApi {
  constructor(private readonly baseUrl: string = "") {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceUnreachableError(String(err));
    }
    if (res.status >= 500) {
      throw new ServiceUnreachableError(`service error (${res.status})`);
    }
    if (!res.ok) {
      throw new ValidationError(await refusalDetail(res));
    }
    return res;
  }

  async pendingQueries(runId?: string): Promise<QueryEntry[]> {
    const params = new URLSearchParams({ status: "pending" });
    if (runId !== undefined) params.set("run_id", runId);
    const res = await this.request(`/v1/queries?${params}`);
    const body = (await res.json()) as { items: QueryEntry[] };
    return body.items;
  }

  async submitLabel(sampleId: string, outcome: Outcome): Promise<void> {
    await this.request("/v1/labels", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sample_id: sampleId, outcome }),
    });
  }

  async progress(runId: string): Promise<Progress> {
    const res = await this.request(`/v1/runs/${encodeURIComponent(runId)}/progress`);
    return (await res.json()) as Progress;
  }
}
