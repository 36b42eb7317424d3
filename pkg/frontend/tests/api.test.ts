import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";

const STATE = {
  status: "awaiting_label",
  step: 0,
  budget: 10,
  train_size: 6,
  pending: { index: 3, asset_url: null, embedding: [0.1, 0.2] },
  classes: ["a", "b"],
  accuracy_curve: [{ train_size: 6, accuracy: 0.5 }],
};

function mockFetch(status: number, body: unknown) {
  return vi.fn(async () => ({
    ok: status === 200,
    status,
    json: async () => body,
    text: async () => String(body),
  })) as unknown as typeof fetch;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ApiClient", () => {
  it("fetches state from the api", async () => {
    const fetcher = mockFetch(200, STATE);
    vi.stubGlobal("fetch", fetcher);
    const state = await new ApiClient("").state();
    expect(state.pending?.index).toBe(3);
    expect(fetcher).toHaveBeenCalledWith("/api/state");
  });

  it("posts labels with the wire body {index, class}", async () => {
    const fetcher = mockFetch(200, STATE);
    vi.stubGlobal("fetch", fetcher);
    const result = await new ApiClient("").submitLabel(3, 1);
    expect(result.status).toBe(200);
    expect(result.state?.train_size).toBe(6);
    const [url, init] = (fetcher as any).mock.calls[0];
    expect(url).toBe("/api/label");
    expect(JSON.parse(init.body)).toEqual({ index: 3, class: 1 });
  });

  it("surfaces a 409 without throwing", async () => {
    vi.stubGlobal("fetch", mockFetch(409, { detail: "stale" }));
    const result = await new ApiClient("").submitLabel(3, 1);
    expect(result).toEqual({ status: 409, state: null });
  });

  it("throws on a failed state fetch", async () => {
    vi.stubGlobal("fetch", mockFetch(500, "boom"));
    await expect(new ApiClient("").state()).rejects.toThrow("500");
  });

  it("prefixes a base url", async () => {
    const fetcher = mockFetch(200, "a,b\n");
    vi.stubGlobal("fetch", fetcher);
    await new ApiClient("http://x:1").metricsCsv();
    expect((fetcher as any).mock.calls[0][0]).toBe("http://x:1/api/metrics.csv");
  });
});
