/**
 * Orchestration between the queue state and the service client: optimistic
 * submission with rollback on refusal, a retry queue for submissions the
 * service never saw, and polling with exponential backoff while offline.
 */

import {
  Progress,
  QueueApi,
  ServiceUnreachableError,
  ValidationError,
} from "./api.js";
import { AnnotatorState, Verdict, outcomeFor } from "./state.js";

export type SubmitResult = "submitted" | "queued" | "rejected" | "blocked";

interface PendingRetry {
  sampleId: string;
  verdict: Verdict;
}

const BACKOFF_BASE_MS = 1000;
const BACKOFF_CAP_MS = 30000;

export class Annotator {
  readonly state = new AnnotatorState();
  progress: Progress | null = null;
  offline = false;
  runId: string | null;

  private failures = 0;
  private retryQueue: PendingRetry[] = [];

  constructor(
    private readonly api: QueueApi,
    runId?: string,
    private readonly now: () => number = Date.now,
  ) {
    this.runId = runId ?? null;
  }

  retriesQueued(): number {
    return this.retryQueue.length;
  }

  /** Delay before the next poll: 0 while healthy, doubling while offline. */
  backoffMs(): number {
    if (this.failures === 0) return 0;
    return Math.min(BACKOFF_CAP_MS, BACKOFF_BASE_MS * 2 ** (this.failures - 1));
  }

  async submit(sampleId: string, verdict: Verdict): Promise<SubmitResult> {
    const check = this.state.canSubmit(sampleId);
    if (!check.ok) {
      this.state.setNotice(check.note);
      return "blocked";
    }
    const task = this.state.task(sampleId)!;
    if (verdict.kind === "label" && verdict.classIndex >= task.palette.length) {
      this.state.rollback(sampleId, `no class ${verdict.classIndex} in this run`);
      return "rejected";
    }
    this.state.markSubmitting(sampleId);
    return this.send(sampleId, verdict);
  }

  /** Re-attempt queued submissions, oldest first; stop on the first outage. */
  async flushRetries(): Promise<void> {
    while (this.retryQueue.length > 0) {
      const { sampleId, verdict } = this.retryQueue[0];
      this.retryQueue.shift();
      const result = await this.send(sampleId, verdict);
      if (result === "queued") return;
    }
  }

  /** One poll tick: drain retries, then mirror server queue and progress. */
  async refresh(): Promise<void> {
    await this.flushRetries();
    try {
      const entries = await this.api.pendingQueries(this.runId ?? undefined);
      this.state.reconcile(entries);
      if (this.runId === null && entries.length > 0) {
        this.runId = entries[0].run_id;
      }
      if (this.runId !== null) {
        this.progress = await this.api.progress(this.runId);
      }
      this.noteSuccess();
    } catch (err) {
      if (!(err instanceof ServiceUnreachableError)) throw err;
      this.noteFailure();
    }
  }

  private async send(sampleId: string, verdict: Verdict): Promise<SubmitResult> {
    try {
      await this.api.submitLabel(sampleId, outcomeFor(verdict));
    } catch (err) {
      if (err instanceof ValidationError) {
        this.state.rollback(sampleId, err.detail);
        return "rejected";
      }
      if (err instanceof ServiceUnreachableError) {
        this.state.markQueued(sampleId);
        this.retryQueue.push({ sampleId, verdict });
        this.noteFailure();
        return "queued";
      }
      throw err;
    }
    this.state.markSubmitted(sampleId, verdict, this.now());
    this.noteSuccess();
    return "submitted";
  }

  private noteFailure(): void {
    this.failures++;
    this.offline = true;
  }

  private noteSuccess(): void {
    this.failures = 0;
    this.offline = false;
  }
}
