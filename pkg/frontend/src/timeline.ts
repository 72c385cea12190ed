/** Timeline bar: maps pointer gestures to snapped frame spans and draws
 * the selection, changed regions, and the playhead. */

import { addSpan, snapDrag, subtractSpan } from "./spans.js";
import { Canvas2d } from "./skeleton.js";
import { Span } from "./types.js";

export interface TimelineGeometry {
  width: number;
  height: number;
  nFrames: number;
}

export function frameAtX(x: number, geo: TimelineGeometry): number {
  if (geo.nFrames === 0) return 0;
  const frame = Math.floor((x / geo.width) * geo.nFrames);
  return Math.max(0, Math.min(frame, geo.nFrames - 1));
}

export function xAtFrame(frame: number, geo: TimelineGeometry): number {
  return geo.nFrames === 0 ? 0 : (frame / geo.nFrames) * geo.width;
}

export class BrushGesture {
  private anchor: number | null = null;

  constructor(readonly subtract: boolean) {}

  begin(frame: number): void {
    this.anchor = frame;
  }

  /** Current snapped span for a drag ending at `frame`; null before begin. */
  preview(frame: number): Span | null {
    return this.anchor === null ? null : snapDrag(this.anchor, frame);
  }

  /** Apply the finished drag to the selection. */
  commit(selection: Span[], frame: number): Span[] {
    const span = this.preview(frame);
    this.anchor = null;
    if (!span) return selection;
    return this.subtract ? subtractSpan(selection, span) : addSpan(selection, span);
  }
}

export interface TimelineStyle {
  background: string;
  selection: string;
  changed: string;
  playhead: string;
  preview: string;
}

export function drawTimeline(
  ctx: Canvas2d & { fillRect(x: number, y: number, w: number, h: number): void },
  geo: TimelineGeometry,
  selection: Span[],
  changed: Span[],
  playFrame: number,
  preview: Span | null,
  style: TimelineStyle,
): void {
  ctx.fillStyle = style.background;
  ctx.fillRect(0, 0, geo.width, geo.height);
  ctx.globalAlpha = 0.8;
  ctx.fillStyle = style.changed;
  for (const span of changed) {
    ctx.fillRect(xAtFrame(span.start, geo), 0, xAtFrame(span.end - span.start, geo), geo.height);
  }
  ctx.globalAlpha = 0.5;
  ctx.fillStyle = style.selection;
  for (const span of selection) {
    ctx.fillRect(xAtFrame(span.start, geo), 0, xAtFrame(span.end - span.start, geo), geo.height);
  }
  if (preview) {
    ctx.globalAlpha = 0.35;
    ctx.fillStyle = style.preview;
    ctx.fillRect(
      xAtFrame(preview.start, geo),
      0,
      xAtFrame(preview.end - preview.start, geo),
      geo.height,
    );
  }
  ctx.globalAlpha = 1.0;
  ctx.fillStyle = style.playhead;
  ctx.fillRect(xAtFrame(playFrame, geo) - 1, 0, 2, geo.height);
}
