/**
 * DOM rendering. The whole view re-renders from state on each change;
 * at queue sizes this tool sees (tens of cards) that is simpler and safer
 * than incremental updates.
 */

import { Progress } from "./api.js";
import { decodeImage, displayScale, drawImageScaled } from "./pixels.js";
import { AnnotationTask, AnnotatorState, Verdict } from "./state.js";

export interface ViewModel {
  state: AnnotatorState;
  progress: Progress | null;
  offline: boolean;
  backoffMs: number;
  retriesQueued: number;
  runId: string | null;
}

export interface Handlers {
  onVerdict(sampleId: string, verdict: Verdict): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderProgress(doc: Document, progress: Progress | null): HTMLElement {
  const bar = el(doc, "div", "progress");
  if (!progress) {
    bar.appendChild(el(doc, "span", "progress-item", "no run selected"));
    return bar;
  }
  bar.appendChild(el(doc, "span", "progress-item", `pending ${progress.pending}`));
  bar.appendChild(el(doc, "span", "progress-item", `labeled ${progress.labeled}`));
  bar.appendChild(el(doc, "span", "progress-item", `rejected ${progress.rejected}`));
  return bar;
}

function renderBanner(doc: Document, view: ViewModel): HTMLElement | null {
  if (!view.offline) return null;
  const banner = el(doc, "div", "banner");
  const seconds = Math.round(view.backoffMs / 1000);
  let text = `service unreachable, retrying in ${seconds}s`;
  if (view.retriesQueued > 0) {
    text += ` (${view.retriesQueued} submission${view.retriesQueued === 1 ? "" : "s"} queued)`;
  }
  banner.textContent = text;
  return banner;
}

function statusText(task: AnnotationTask): string {
  switch (task.status) {
    case "pending":
      return "";
    case "submitting":
      return "sending";
    case "queued":
      return "queued for retry";
    case "submitted":
      return "submitted";
  }
}

function renderCard(
  doc: Document,
  task: AnnotationTask,
  focused: boolean,
  handlers: Handlers,
): HTMLElement {
  const card = el(doc, "div", focused ? "card focused" : "card");
  card.dataset.sampleId = task.sampleId;

  const canvas = el(doc, "canvas", "sample");
  try {
    const img = decodeImage(
      task.image.base64,
      task.image.width,
      task.image.height,
      task.image.channels,
    );
    if (!drawImageScaled(canvas, img, displayScale(img.width, img.height))) {
      canvas.dataset.fallback = "1";
    }
  } catch {
    canvas.dataset.fallback = "1";
  }
  card.appendChild(canvas);

  const meta = el(doc, "div", "meta");
  meta.appendChild(el(doc, "span", "sample-id", task.sampleId));
  meta.appendChild(el(doc, "span", "stage", `stage ${task.stage}`));
  const status = statusText(task);
  if (status) meta.appendChild(el(doc, "span", "status", status));
  card.appendChild(meta);

  const busy = task.status !== "pending";
  const buttons = el(doc, "div", "palette");
  for (const entry of task.palette) {
    const button = el(doc, "button", "label-button", `${entry.index} ${entry.name}`);
    button.disabled = busy;
    button.addEventListener("click", () =>
      handlers.onVerdict(task.sampleId, { kind: "label", classIndex: entry.index }),
    );
    buttons.appendChild(button);
  }
  const unknown = el(doc, "button", "label-button unknown", "U unknown");
  unknown.disabled = busy;
  unknown.addEventListener("click", () =>
    handlers.onVerdict(task.sampleId, { kind: "unknown" }),
  );
  buttons.appendChild(unknown);
  card.appendChild(buttons);

  if (task.error) card.appendChild(el(doc, "div", "task-error", task.error));
  return card;
}

export function render(root: HTMLElement, view: ViewModel, handlers: Handlers): void {
  const doc = root.ownerDocument;
  root.textContent = "";

  const header = el(doc, "header");
  header.appendChild(el(doc, "h1", undefined, "annotation queue"));
  if (view.runId) header.appendChild(el(doc, "span", "run-id", view.runId));
  header.appendChild(renderProgress(doc, view.progress));
  root.appendChild(header);

  const banner = renderBanner(doc, view);
  if (banner) root.appendChild(banner);

  if (view.state.notice) root.appendChild(el(doc, "div", "notice", view.state.notice));

  const tasks = view.state.visibleTasks();
  if (tasks.length === 0) {
    root.appendChild(el(doc, "div", "idle", "queue empty, waiting for the next batch"));
    return;
  }

  const focus = view.state.firstActionable();
  const list = el(doc, "div", "cards");
  for (const task of tasks) {
    list.appendChild(renderCard(doc, task, task === focus, handlers));
  }
  root.appendChild(list);

  const hint = el(
    doc,
    "div",
    "hint",
    "keys 0-9 label the highlighted sample, U marks it unknown",
  );
  root.appendChild(hint);
}
