/** Labelling view: one pending query at a time, one button per class.
 *
 * A submission lock guarantees a single in-flight label post; a 409 from a
 * stale submission silently re-syncs (another submission won). Network
 * failures leave the rendered state untouched and show a retry notice.
 * State is re-polled every second to follow refits triggered elsewhere.
 */

import { ApiClient, SessionState } from "./api.js";
import { renderGlyph } from "./glyph.js";

export interface AppOptions {
  pollMs?: number;
}

export type SubmitOutcome = "accepted" | "stale" | "rejected" | "locked" | "failed";

export class LabelApp {
  private readonly pollMs: number;
  private timer: ReturnType<typeof setInterval> | null = null;
  private submitting = false;
  private state: SessionState | null = null;
  private notice = "";

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    options: AppOptions = {},
  ) {
    this.pollMs = options.pollMs ?? 1000;
  }

  get currentState(): SessionState | null {
    return this.state;
  }

  get isSubmitting(): boolean {
    return this.submitting;
  }

  async start(): Promise<void> {
    await this.refresh();
    this.timer = setInterval(() => {
      if (!this.submitting) {
        void this.refresh();
      }
    }, this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    try {
      const state = await this.client.state();
      this.notice = "";
      this.render(state);
    } catch {
      this.notice = "connection lost, retrying";
      this.renderNotice();
    }
  }

  /** Post a label for the pending query; serialized by the submission lock. */
  async submit(cls: number): Promise<SubmitOutcome> {
    const state = this.state;
    if (this.submitting) {
      return "locked";
    }
    if (!state || state.status !== "awaiting_label" || !state.pending) {
      return "rejected";
    }
    this.submitting = true;
    try {
      const result = await this.client.submitLabel(state.pending.index, cls);
      if (result.status === 200 && result.state) {
        this.notice = "";
        this.render(result.state);
        return "accepted";
      }
      if (result.status === 409) {
        // another submission won; re-sync without an error banner
        await this.refreshUnlocked();
        return "stale";
      }
      this.notice = `label rejected (${result.status})`;
      this.renderNotice();
      return "rejected";
    } catch {
      // no local state mutation on network failure
      this.notice = "label post failed, try again";
      this.renderNotice();
      return "failed";
    } finally {
      this.submitting = false;
    }
  }

  private async refreshUnlocked(): Promise<void> {
    try {
      const state = await this.client.state();
      this.notice = "";
      this.render(state);
    } catch {
      this.notice = "connection lost, retrying";
      this.renderNotice();
    }
  }

  private doc(): Document {
    return this.root.ownerDocument;
  }

  render(state: SessionState): void {
    this.state = state;
    const doc = this.doc();
    this.root.textContent = "";

    const header = doc.createElement("div");
    header.className = "header";
    header.appendChild(this.progressBar(state));
    this.root.appendChild(header);

    this.root.appendChild(this.queryPanel(state));
    this.root.appendChild(this.classButtons(state));
    this.root.appendChild(this.curvePanel(state));
    this.renderNotice();
  }

  private renderNotice(): void {
    const doc = this.doc();
    let box = this.root.querySelector<HTMLElement>(".notice");
    if (!box) {
      box = doc.createElement("div");
      box.className = "notice";
      this.root.appendChild(box);
    }
    box.textContent = this.notice;
  }

  private progressBar(state: SessionState): HTMLElement {
    const doc = this.doc();
    const wrap = doc.createElement("div");
    wrap.className = "progress";
    const fraction = state.budget > 0 ? state.train_size / state.budget : 0;
    const fill = doc.createElement("div");
    fill.className = "progress-fill";
    fill.style.width = `${Math.min(100, fraction * 100).toFixed(1)}%`;
    wrap.appendChild(fill);
    const text = doc.createElement("span");
    text.className = "progress-text";
    text.textContent = `${state.train_size} / ${state.budget} labels`;
    wrap.appendChild(text);
    return wrap;
  }

  private queryPanel(state: SessionState): HTMLElement {
    const doc = this.doc();
    const panel = doc.createElement("div");
    panel.className = "query";
    if (state.status === "done") {
      const banner = doc.createElement("div");
      banner.className = "done-banner";
      banner.textContent = "Budget reached. Labelling complete.";
      panel.appendChild(banner);
      return panel;
    }
    const pending = state.pending;
    if (!pending) {
      panel.textContent =
        state.status === "retraining" ? "retraining..." : "waiting for a query";
      return panel;
    }
    const caption = doc.createElement("div");
    caption.className = "query-caption";
    caption.textContent = `input #${pending.index}`;
    panel.appendChild(caption);

    if (pending.asset_url) {
      const img = doc.createElement("img");
      img.className = "query-asset";
      img.src = pending.asset_url;
      img.alt = `input ${pending.index}`;
      img.addEventListener("error", () => {
        this.showGlyphFallback(panel, pending.embedding, "asset unavailable");
      });
      panel.appendChild(img);
    } else {
      this.showGlyphFallback(panel, pending.embedding, "");
    }
    return panel;
  }

  private showGlyphFallback(panel: HTMLElement, dims: number[], note: string): void {
    const doc = this.doc();
    const old = panel.querySelector(".query-asset");
    if (old) {
      old.remove();
    }
    const holder = doc.createElement("div");
    holder.className = "query-glyph";
    holder.innerHTML = renderGlyph(dims);
    panel.appendChild(holder);
    if (note) {
      const notice = doc.createElement("div");
      notice.className = "asset-notice";
      notice.textContent = note;
      panel.appendChild(notice);
    }
  }

  private classButtons(state: SessionState): HTMLElement {
    const doc = this.doc();
    const bar = doc.createElement("div");
    bar.className = "classes";
    const enabled = state.status === "awaiting_label" && state.pending !== null;
    state.classes.forEach((name, cls) => {
      const button = doc.createElement("button");
      button.className = "class-button";
      button.textContent = name;
      button.disabled = !enabled;
      button.dataset.cls = String(cls);
      button.addEventListener("click", () => {
        void this.submit(cls);
      });
      bar.appendChild(button);
    });
    return bar;
  }

  private curvePanel(state: SessionState): HTMLElement {
    const doc = this.doc();
    const panel = doc.createElement("div");
    panel.className = "curve";
    const points = state.accuracy_curve.filter((p) => p.accuracy !== null);
    if (points.length === 0) {
      panel.textContent = "no evaluations yet";
      return panel;
    }
    const last = points[points.length - 1];
    const label = doc.createElement("div");
    label.className = "curve-label";
    label.textContent =
      `test accuracy ${((last.accuracy as number) * 100).toFixed(1)}%` +
      ` at ${last.train_size} labels`;
    panel.appendChild(label);

    const width = 280;
    const height = 80;
    const minSize = points[0].train_size;
    const span = Math.max(1, (state.budget || last.train_size) - minSize);
    const coords = points
      .map((p) => {
        const x = (((p.train_size - minSize) / span) * (width - 8) + 4).toFixed(1);
        const y = (height - 4 - (p.accuracy as number) * (height - 8)).toFixed(1);
        return `${x},${y}`;
      })
      .join(" ");
    const holder = doc.createElement("div");
    holder.innerHTML =
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"` +
      ` viewBox="0 0 ${width} ${height}" class="curve-svg">` +
      `<polyline fill="none" class="curve-line" points="${coords}"/></svg>`;
    panel.appendChild(holder);
    return panel;
  }
}
