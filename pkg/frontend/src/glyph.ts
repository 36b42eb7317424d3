/** Deterministic bar glyph standing in for inputs without a renderable asset. */

const MAX_BARS = 16;

/**
 * Render up to the first 16 embedding dimensions as an SVG bar chart.
 * Bars grow up for positive values and down for negative ones, scaled by
 * the largest magnitude; equal inputs always yield identical markup.
 */
export function renderGlyph(dims: number[], width = 240, height = 120): string {
  const values = dims.slice(0, MAX_BARS);
  if (values.length === 0) {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"` +
      ` viewBox="0 0 ${width} ${height}" class="glyph" role="img">` +
      `<text x="4" y="16">no features</text></svg>`
    );
  }
  const peak = Math.max(...values.map((v) => Math.abs(v)), 1e-12);
  const mid = height / 2;
  const slot = width / values.length;
  const barWidth = Math.max(1, slot * 0.7);
  const bars = values
    .map((value, i) => {
      const scaled = (Math.abs(value) / peak) * (mid - 2);
      const x = (i * slot + (slot - barWidth) / 2).toFixed(2);
      const y = (value >= 0 ? mid - scaled : mid).toFixed(2);
      const cls = value >= 0 ? "glyph-pos" : "glyph-neg";
      return (
        `<rect class="${cls}" x="${x}" y="${y}"` +
        ` width="${barWidth.toFixed(2)}" height="${scaled.toFixed(2)}"/>`
      );
    })
    .join("");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"` +
    ` viewBox="0 0 ${width} ${height}" class="glyph" role="img">` +
    `<line x1="0" y1="${mid}" x2="${width}" y2="${mid}" class="glyph-axis"/>` +
    bars +
    `</svg>`
  );
}
