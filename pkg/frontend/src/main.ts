/**
 * Entry point: wire the controller, renderer, keyboard, and poll loop
 * together. The run id comes from the ?run= query parameter when given;
 * otherwise the client adopts the run of the first task it sees.
 */

import { ApiClient } from "./api.js";
import { Annotator } from "./controller.js";
import { render, ViewModel } from "./render.js";
import { Verdict, verdictForKey } from "./state.js";

const POLL_MS = 1500;

export interface App {
  annotator: Annotator;
  stop(): void;
}

export function start(root: HTMLElement, baseUrl = "", pollMs = POLL_MS): App {
  const params = new URLSearchParams(root.ownerDocument.location?.search ?? "");
  const annotator = new Annotator(new ApiClient(baseUrl), params.get("run") ?? undefined);

  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | undefined;
  let painted = "";

  const view = (): ViewModel => ({
    state: annotator.state,
    progress: annotator.progress,
    offline: annotator.offline,
    backoffMs: annotator.backoffMs(),
    retriesQueued: annotator.retriesQueued(),
    runId: annotator.runId,
  });

  const handlers = {
    onVerdict(sampleId: string, verdict: Verdict): void {
      annotator.state.setNotice(null);
      void annotator.submit(sampleId, verdict).then(paint);
    },
  };

  function paint(): void {
    const v = view();
    const key = JSON.stringify([
      annotator.state.version,
      v.progress,
      v.offline,
      v.backoffMs,
      v.retriesQueued,
    ]);
    if (key === painted) return;
    painted = key;
    render(root, v, handlers);
  }

  function onKey(event: KeyboardEvent): void {
    const task = annotator.state.firstActionable();
    if (!task) return;
    const verdict = verdictForKey(event.key, task.palette.length);
    if (!verdict) return;
    event.preventDefault();
    handlers.onVerdict(task.sampleId, verdict);
  }
  root.ownerDocument.addEventListener("keydown", onKey);

  async function tick(): Promise<void> {
    await annotator.refresh();
    if (stopped) return;
    paint();
    const wait = annotator.offline ? annotator.backoffMs() : pollMs;
    timer = setTimeout(() => void tick(), wait);
  }
  void tick();

  return {
    annotator,
    stop() {
      stopped = true;
      if (timer !== undefined) clearTimeout(timer);
      root.ownerDocument.removeEventListener("keydown", onKey);
    },
  };
}

const rootElement = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootElement) {
  (window as Window & { app?: App }).app = start(rootElement);
}
