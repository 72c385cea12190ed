/** Selection-span algebra: all spans are half-open frame intervals snapped
 * outward to whole-token (4-frame) boundaries, kept sorted and disjoint. */

import { FRAMES_PER_TOKEN, Span } from "./types.js";

/** Snap a raw span outward so it covers whole tokens. */
export function snapSpan(start: number, end: number): Span {
  if (!(start < end) || start < 0) {
    throw new Error(`invalid span [${start}, ${end})`);
  }
  return {
    start: Math.floor(start / FRAMES_PER_TOKEN) * FRAMES_PER_TOKEN,
    end: Math.ceil(end / FRAMES_PER_TOKEN) * FRAMES_PER_TOKEN,
  };
}

/** Snap a drag over inclusive frame indices [a, b] (either order). */
export function snapDrag(a: number, b: number): Span {
  const lo = Math.min(a, b);
  const hi = Math.max(a, b);
  return snapSpan(lo, hi + 1);
}

function normalize(spans: Span[]): Span[] {
  const sorted = spans
    .filter((s) => s.end > s.start)
    .slice()
    .sort((x, y) => x.start - y.start);
  const out: Span[] = [];
  for (const span of sorted) {
    const last = out[out.length - 1];
    if (last && span.start <= last.end) {
      last.end = Math.max(last.end, span.end);
    } else {
      out.push({ ...span });
    }
  }
  return out;
}

/** Add a snapped span to the selection, merging overlaps and adjacency. */
export function addSpan(selection: Span[], span: Span): Span[] {
  return normalize([...selection, span]);
}

/** Remove a snapped span's range from the selection. */
export function subtractSpan(selection: Span[], span: Span): Span[] {
  const out: Span[] = [];
  for (const s of selection) {
    if (span.end <= s.start || span.start >= s.end) {
      out.push({ ...s });
      continue;
    }
    if (s.start < span.start) out.push({ start: s.start, end: span.start });
    if (span.end < s.end) out.push({ start: span.end, end: s.end });
  }
  return normalize(out);
}

/** Clip the selection to the motion length (itself a token multiple). */
export function clipSelection(selection: Span[], nFrames: number): Span[] {
  return normalize(
    selection.map((s) => ({ start: Math.min(s.start, nFrames), end: Math.min(s.end, nFrames) })),
  );
}

export function selectAll(nFrames: number): Span[] {
  return nFrames > 0 ? [{ start: 0, end: nFrames }] : [];
}

export function selectionCoversFrame(selection: Span[], frame: number): boolean {
  return selection.some((s) => frame >= s.start && frame < s.end);
}

/** Token positions (1-indexed, inclusive) covered by the selection. */
export function selectionTokens(selection: Span[]): number[] {
  const tokens = new Set<number>();
  for (const s of selection) {
    for (let p = s.start / FRAMES_PER_TOKEN + 1; p <= s.end / FRAMES_PER_TOKEN; p++) {
      tokens.add(p);
    }
  }
  return [...tokens].sort((a, b) => a - b);
}
