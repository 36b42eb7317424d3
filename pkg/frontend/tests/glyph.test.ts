import { describe, expect, it } from "vitest";

import { renderGlyph } from "../src/glyph.js";

describe("renderGlyph", () => {
  it("is deterministic for equal inputs", () => {
    const dims = [0.5, -1.25, 3.0, 0.0, 2.2];
    expect(renderGlyph(dims)).toBe(renderGlyph([...dims]));
  });

  it("renders one bar per dimension up to sixteen", () => {
    const dims = Array.from({ length: 24 }, (_, i) => i - 12);
    const svg = renderGlyph(dims);
    const bars = svg.match(/<rect /g) ?? [];
    expect(bars.length).toBe(16);
  });

  it("separates positive and negative bars", () => {
    const svg = renderGlyph([1.0, -1.0]);
    expect(svg).toContain("glyph-pos");
    expect(svg).toContain("glyph-neg");
  });

  it("handles empty input with a placeholder", () => {
    const svg = renderGlyph([]);
    expect(svg).toContain("no features");
  });

  it("scales by the largest magnitude", () => {
    const svg = renderGlyph([2.0, 1.0]);
    const heights = [...svg.matchAll(/height="([0-9.]+)"/g)].map((m) =>
      parseFloat(m[1]),
    );
    // first bar twice the height of the second (viewport height excluded)
    expect(heights[1]).toBeCloseTo(heights[2] * 2, 5);
  });
});
