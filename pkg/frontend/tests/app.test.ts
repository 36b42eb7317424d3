// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import type { ApiClient, SessionState } from "../src/api.js";
import { LabelApp } from "../src/app.js";

function makeState(overrides: Partial<SessionState> = {}): SessionState {
  return {
    status: "awaiting_label",
    step: 0,
    budget: 10,
    train_size: 6,
    pending: { index: 3, asset_url: null, embedding: [0.4, -0.2, 1.0] },
    classes: ["alpha", "beta", "gamma"],
    accuracy_curve: [{ train_size: 6, accuracy: 0.5 }],
    ...overrides,
  };
}

function fakeClient(overrides: Partial<Record<keyof ApiClient, any>> = {}) {
  return {
    state: vi.fn(async () => makeState()),
    submitLabel: vi.fn(async () => ({ status: 200, state: makeState() })),
    metricsCsv: vi.fn(async () => ""),
    ...overrides,
  } as unknown as ApiClient;
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app") as HTMLElement;
});

describe("rendering", () => {
  it("renders one enabled button per class while awaiting a label", () => {
    const app = new LabelApp(root, fakeClient());
    app.render(makeState());
    const buttons = root.querySelectorAll<HTMLButtonElement>(".class-button");
    expect(buttons.length).toBe(3);
    expect([...buttons].every((b) => !b.disabled)).toBe(true);
    expect(buttons[1].textContent).toBe("beta");
  });

  it("renders eleven buttons for eleven classes", () => {
    const names = Array.from({ length: 11 }, (_, i) => `class ${i}`);
    const app = new LabelApp(root, fakeClient());
    app.render(makeState({ classes: names }));
    expect(root.querySelectorAll(".class-button").length).toBe(11);
  });

  it("disables buttons and shows a banner when done", () => {
    const app = new LabelApp(root, fakeClient());
    app.render(makeState({ status: "done", pending: null, train_size: 10 }));
    const buttons = root.querySelectorAll<HTMLButtonElement>(".class-button");
    expect([...buttons].every((b) => b.disabled)).toBe(true);
    expect(root.querySelector(".done-banner")).not.toBeNull();
  });

  it("shows the feature glyph when no asset exists", () => {
    const app = new LabelApp(root, fakeClient());
    app.render(makeState());
    expect(root.querySelector(".query-glyph svg")).not.toBeNull();
    expect(root.querySelector("img")).toBeNull();
  });

  it("binds an img to the asset url when present", () => {
    const app = new LabelApp(root, fakeClient());
    const state = makeState();
    state.pending!.asset_url = "/api/asset/3";
    app.render(state);
    const img = root.querySelector<HTMLImageElement>("img.query-asset");
    expect(img).not.toBeNull();
    expect(img!.getAttribute("src")).toBe("/api/asset/3");
  });

  it("falls back to the glyph with a notice when the asset errors", () => {
    const app = new LabelApp(root, fakeClient());
    const state = makeState();
    state.pending!.asset_url = "/api/asset/3";
    app.render(state);
    const img = root.querySelector<HTMLImageElement>("img.query-asset")!;
    img.dispatchEvent(new Event("error"));
    expect(root.querySelector(".query-glyph svg")).not.toBeNull();
    expect(root.querySelector(".asset-notice")?.textContent).toContain("unavailable");
  });

  it("shows a progress bar proportional to the budget", () => {
    const app = new LabelApp(root, fakeClient());
    app.render(makeState({ train_size: 5, budget: 10 }));
    const fill = root.querySelector<HTMLElement>(".progress-fill")!;
    expect(fill.style.width).toBe("50.0%");
    expect(root.querySelector(".progress-text")?.textContent).toBe("5 / 10 labels");
  });

  it("renders the accuracy curve with one point per evaluation", () => {
    const app = new LabelApp(root, fakeClient());
    const curve = [
      { train_size: 6, accuracy: 0.5 },
      { train_size: 7, accuracy: 0.6 },
      { train_size: 8, accuracy: 0.7 },
    ];
    app.render(makeState({ accuracy_curve: curve }));
    const line = root.querySelector(".curve-line")!;
    const points = (line.getAttribute("points") ?? "").trim().split(/\s+/);
    expect(points.length).toBe(3);
    expect(root.querySelector(".curve-label")?.textContent).toContain("70.0%");
  });
});

describe("submission", () => {
  it("posts the pending index and re-renders on success", async () => {
    const next = makeState({ train_size: 7, step: 1 });
    const client = fakeClient({
      submitLabel: vi.fn(async () => ({ status: 200, state: next })),
    });
    const app = new LabelApp(root, client);
    app.render(makeState());
    const outcome = await app.submit(2);
    expect(outcome).toBe("accepted");
    expect((client.submitLabel as any).mock.calls[0]).toEqual([3, 2]);
    expect(app.currentState?.train_size).toBe(7);
  });

  it("never issues two concurrent posts", async () => {
    let release!: (value: { status: number; state: SessionState }) => void;
    const gate = new Promise<{ status: number; state: SessionState }>((resolve) => {
      release = resolve;
    });
    const client = fakeClient({ submitLabel: vi.fn(() => gate) });
    const app = new LabelApp(root, client);
    app.render(makeState());

    const first = app.submit(0);
    const second = await app.submit(1); // while the first is in flight
    expect(second).toBe("locked");
    release({ status: 200, state: makeState({ train_size: 7 }) });
    expect(await first).toBe("accepted");
    expect((client.submitLabel as any).mock.calls.length).toBe(1);
  });

  it("re-syncs without an error banner on 409", async () => {
    const refreshed = makeState({ train_size: 7 });
    const client = fakeClient({
      submitLabel: vi.fn(async () => ({ status: 409, state: null })),
      state: vi.fn(async () => refreshed),
    });
    const app = new LabelApp(root, client);
    app.render(makeState());
    const outcome = await app.submit(0);
    expect(outcome).toBe("stale");
    expect(app.currentState?.train_size).toBe(7);
    expect(root.querySelector(".notice")?.textContent).toBe("");
  });

  it("keeps local state and offers retry on network failure", async () => {
    const client = fakeClient({
      submitLabel: vi.fn(async () => {
        throw new Error("socket closed");
      }),
    });
    const app = new LabelApp(root, client);
    const initial = makeState();
    app.render(initial);
    const outcome = await app.submit(0);
    expect(outcome).toBe("failed");
    expect(app.currentState?.train_size).toBe(initial.train_size);
    expect(root.querySelector(".notice")?.textContent).toContain("try again");
    expect(app.isSubmitting).toBe(false); // lock released for the retry
  });

  it("ignores clicks when no query is pending", async () => {
    const client = fakeClient();
    const app = new LabelApp(root, client);
    app.render(makeState({ status: "done", pending: null }));
    expect(await app.submit(0)).toBe("rejected");
    expect((client.submitLabel as any).mock.calls.length).toBe(0);
  });
});
