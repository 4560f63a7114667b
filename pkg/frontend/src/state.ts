/**
 * Client-side queue state. The server is the source of truth; this module
 * only tracks what the annotator is doing right now (in-flight and
 * retry-queued submissions, per-task errors) plus a local audit log of
 * acknowledged verdicts. A reload throws all of it away and rebuilds from
 * the server's pending list, which is exactly why answered tasks can never
 * reappear or be double-submitted across reloads.
 */

import type { Outcome, QueryEntry } from "./api.js";

export type Verdict = { kind: "label"; classIndex: number } | { kind: "unknown" };

export type TaskStatus = "pending" | "submitting" | "queued" | "submitted";

export interface PaletteEntry {
  index: number;
  name: string;
}

export interface AnnotationTask {
  sampleId: string;
  runId: string;
  stage: number;
  image: { base64: string; width: number; height: number; channels: number };
  palette: PaletteEntry[];
  status: TaskStatus;
  error: string | null;
}

export interface AuditEntry {
  sampleId: string;
  verdict: Verdict;
  at: number;
}

export function taskFromQuery(entry: QueryEntry): AnnotationTask {
  const palette: PaletteEntry[] = [];
  for (let i = 0; i < entry.num_classes; i++) {
    palette.push({ index: i, name: entry.class_names?.[i] ?? `class ${i}` });
  }
  return {
    sampleId: entry.sample_id,
    runId: entry.run_id,
    stage: entry.stage,
    image: {
      base64: entry.image_base64,
      width: entry.width,
      height: entry.height,
      channels: entry.channels,
    },
    palette,
    status: "pending",
    error: null,
  };
}

/** Keyboard mapping: digits label the first ten classes, U marks unknown. */
export function verdictForKey(key: string, numClasses: number): Verdict | null {
  if (key === "u" || key === "U") return { kind: "unknown" };
  if (key.length === 1 && key >= "0" && key <= "9") {
    const classIndex = key.charCodeAt(0) - 48;
    if (classIndex < numClasses) return { kind: "label", classIndex };
  }
  return null;
}

export function outcomeFor(verdict: Verdict): Outcome {
  return verdict.kind === "label" ? { label: verdict.classIndex } : { unknown: true };
}

export function describeVerdict(verdict: Verdict, palette: PaletteEntry[]): string {
  if (verdict.kind === "unknown") return "unknown";
  return palette[verdict.classIndex]?.name ?? `class ${verdict.classIndex}`;
}

export type SubmitCheck = { ok: true } | { ok: false; note: string };

export class AnnotatorState {
  tasks: AnnotationTask[] = [];
  auditLog: AuditEntry[] = [];
  /** Transient banner line, e.g. the audit note for a blocked resubmission. */
  notice: string | null = null;
  version = 0;

  private byId = new Map<string, AnnotationTask>();

  private touch(): void {
    this.version++;
  }

  setNotice(notice: string | null): void {
    this.notice = notice;
    this.touch();
  }

  task(sampleId: string): AnnotationTask | undefined {
    return this.byId.get(sampleId);
  }

  /** Tasks still waiting on a verdict, in queue order. */
  visibleTasks(): AnnotationTask[] {
    return this.tasks.filter((t) => t.status !== "submitted");
  }

  firstActionable(): AnnotationTask | undefined {
    return this.tasks.find((t) => t.status === "pending");
  }

  /**
   * Replace the task list with the server's pending entries, preserving
   * server order. Known tasks keep their local status: a submission in
   * flight stays in flight, and an acknowledged one stays hidden even when
   * the snapshot is stale because the fetch raced the acknowledgment.
   */
  reconcile(entries: QueryEntry[]): void {
    const next: AnnotationTask[] = [];
    const nextById = new Map<string, AnnotationTask>();
    for (const entry of entries) {
      const task = this.byId.get(entry.sample_id) ?? taskFromQuery(entry);
      next.push(task);
      nextById.set(task.sampleId, task);
    }
    this.tasks = next;
    this.byId = nextById;
    this.touch();
  }

  canSubmit(sampleId: string): SubmitCheck {
    const task = this.byId.get(sampleId);
    if (!task) return { ok: false, note: "task is no longer queued" };
    if (task.status === "pending") return { ok: true };
    const prior = this.lastAuditFor(sampleId);
    if (prior) {
      const when = new Date(prior.at).toLocaleTimeString();
      const what = describeVerdict(prior.verdict, task.palette);
      return { ok: false, note: `already submitted as "${what}" at ${when}` };
    }
    return { ok: false, note: `submission already ${task.status}` };
  }

  markSubmitting(sampleId: string): void {
    this.setStatus(sampleId, "submitting", null);
  }

  markQueued(sampleId: string): void {
    this.setStatus(sampleId, "queued", null);
  }

  /** Server acknowledged: clear the card and log the verdict exactly once. */
  markSubmitted(sampleId: string, verdict: Verdict, at: number): void {
    this.setStatus(sampleId, "submitted", null);
    this.auditLog.push({ sampleId, verdict, at });
    this.touch();
  }

  /** Refused submission: back to pending with the refusal inline. */
  rollback(sampleId: string, error: string): void {
    this.setStatus(sampleId, "pending", error);
  }

  lastAuditFor(sampleId: string): AuditEntry | undefined {
    for (let i = this.auditLog.length - 1; i >= 0; i--) {
      if (this.auditLog[i].sampleId === sampleId) return this.auditLog[i];
    }
    return undefined;
  }

  private setStatus(sampleId: string, status: TaskStatus, error: string | null): void {
    const task = this.byId.get(sampleId);
    if (!task) return;
    task.status = status;
    task.error = error;
    this.touch();
  }
}
