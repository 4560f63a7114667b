import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiClient,
  ServiceUnreachableError,
  ValidationError,
} from "../src/api.js";
import { entry } from "./helpers.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("pendingQueries", () => {
  it("asks for pending items scoped to the run", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ items: [entry("a")] }));
    vi.stubGlobal("fetch", fetchMock);
    const items = await new ApiClient().pendingQueries("run-a");
    expect(fetchMock).toHaveBeenCalledWith(
      "/v1/queries?status=pending&run_id=run-a",
      undefined,
    );
    expect(items.map((i) => i.sample_id)).toEqual(["a"]);
  });

  it("omits the run filter when no run is chosen", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ items: [] }));
    vi.stubGlobal("fetch", fetchMock);
    await new ApiClient().pendingQueries();
    expect(fetchMock).toHaveBeenCalledWith("/v1/queries?status=pending", undefined);
  });
});

describe("submitLabel", () => {
  it("posts the verdict as json", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ ok: true }));
    vi.stubGlobal("fetch", fetchMock);
    await new ApiClient("http://oracle:1").submitLabel("s0", { label: 3 });
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://oracle:1/v1/labels");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body)).toEqual({ sample_id: "s0", outcome: { label: 3 } });
  });

  it("turns a 422 into a ValidationError carrying the server detail", async () => {
    const fetchMock = vi
      .fn()
      .mockResolvedValue(jsonResponse({ detail: "label 12 outside [0, 10)" }, 422));
    vi.stubGlobal("fetch", fetchMock);
    const err = await new ApiClient()
      .submitLabel("s0", { label: 12 })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ValidationError);
    expect((err as ValidationError).detail).toBe("label 12 outside [0, 10)");
  });

  it("turns a refused connection into ServiceUnreachableError", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("fetch failed")));
    const err = await new ApiClient()
      .submitLabel("s0", { unknown: true })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ServiceUnreachableError);
  });

  it("treats 5xx as an outage, not a refusal", async () => {
    vi.stubGlobal("fetch", vi.fn().mockResolvedValue(jsonResponse({}, 503)));
    const err = await new ApiClient()
      .submitLabel("s0", { label: 0 })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ServiceUnreachableError);
  });
});

describe("progress", () => {
  it("reads the counters verbatim", async () => {
    const fetchMock = vi
      .fn()
      .mockResolvedValue(jsonResponse({ pending: 3, labeled: 88, rejected: 9 }));
    vi.stubGlobal("fetch", fetchMock);
    const progress = await new ApiClient().progress("run a/b");
    expect(fetchMock.mock.calls[0][0]).toBe("/v1/runs/run%20a%2Fb/progress");
    expect(progress).toEqual({ pending: 3, labeled: 88, rejected: 9 });
  });
});
