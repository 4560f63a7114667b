import type { QueryEntry } from "../src/api.js";

export function b64(bytes: number[]): string {
  return btoa(String.fromCharCode(...bytes));
}

/** A 2x2 grayscale pending query with sensible defaults. */
export function entry(id: string, over: Partial<QueryEntry> = {}): QueryEntry {
  return {
    sample_id: id,
    image_base64: b64([0, 64, 128, 255]),
    width: 2,
    height: 2,
    channels: 1,
    run_id: "run-a",
    stage: 0,
    num_classes: 4,
    class_names: null,
    status: "pending",
    outcome: null,
    ...over,
  };
}
