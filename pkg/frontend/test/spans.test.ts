import { describe, expect, it } from "vitest";

import {
  addSpan,
  clipSelection,
  selectAll,
  selectionCoversFrame,
  selectionTokens,
  snapDrag,
  snapSpan,
  subtractSpan,
} from "../src/spans.js";

describe("snapSpan", () => {
  it("snaps a raw span outward to token boundaries", () => {
    expect(snapSpan(23, 42)).toEqual({ start: 20, end: 44 });
  });

  it("keeps aligned spans unchanged", () => {
    expect(snapSpan(20, 44)).toEqual({ start: 20, end: 44 });
  });

  it("rejects empty or negative spans", () => {
    expect(() => snapSpan(10, 10)).toThrow();
    expect(() => snapSpan(-1, 8)).toThrow();
  });
});

describe("snapDrag", () => {
  it("covers the dragged frames 23..41 as [20, 44)", () => {
    expect(snapDrag(23, 41)).toEqual({ start: 20, end: 44 });
  });

  it("is direction-agnostic", () => {
    expect(snapDrag(41, 23)).toEqual(snapDrag(23, 41));
  });

  it("maps a single-frame click to one token", () => {
    expect(snapDrag(5, 5)).toEqual({ start: 4, end: 8 });
  });
});

describe("selection algebra", () => {
  it("merges overlapping and adjacent spans", () => {
    let sel = addSpan([], { start: 0, end: 8 });
    sel = addSpan(sel, { start: 8, end: 16 });
    sel = addSpan(sel, { start: 24, end: 32 });
    expect(sel).toEqual([
      { start: 0, end: 16 },
      { start: 24, end: 32 },
    ]);
  });

  it("subtracts ranges, splitting spans when needed", () => {
    const sel = [{ start: 0, end: 32 }];
    expect(subtractSpan(sel, { start: 8, end: 16 })).toEqual([
      { start: 0, end: 8 },
      { start: 16, end: 32 },
    ]);
  });

  it("subtracting everything empties the selection", () => {
    expect(subtractSpan([{ start: 4, end: 12 }], { start: 0, end: 16 })).toEqual([]);
  });

  it("select-all covers the whole clip", () => {
    expect(selectAll(48)).toEqual([{ start: 0, end: 48 }]);
    expect(selectAll(0)).toEqual([]);
  });

  it("clips to the motion length", () => {
    expect(clipSelection([{ start: 40, end: 64 }], 48)).toEqual([{ start: 40, end: 48 }]);
    expect(clipSelection([{ start: 48, end: 64 }], 48)).toEqual([]);
  });

  it("reports covered frames and token positions", () => {
    const sel = [{ start: 8, end: 16 }];
    expect(selectionCoversFrame(sel, 8)).toBe(true);
    expect(selectionCoversFrame(sel, 16)).toBe(false);
    expect(selectionTokens(sel)).toEqual([3, 4]);
  });
});
