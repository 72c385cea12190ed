/** Canvas rendering of the planar skeleton plus a root-trajectory inset.
 *
 * Feature layout per frame: five joints (head, left hand, right hand,
 * left foot, right foot) as (x, y) offsets from the hip, then the 2-d
 * root velocity. Any other feature dimension is a layout mismatch.
 */

export const JOINT_COUNT = 5;
export const FEATURE_DIM = 2 * JOINT_COUNT + 2;

/** The 2-d canvas surface we rely on (kept minimal so tests can stub it). */
export interface Canvas2d {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  globalAlpha: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
}

export class LayoutMismatch extends Error {}

interface Point {
  x: number;
  y: number;
}

function joints(frame: number[]): Point[] {
  if (frame.length !== FEATURE_DIM) {
    throw new LayoutMismatch(
      `frame has ${frame.length} features, renderer expects ${FEATURE_DIM}`,
    );
  }
  const out: Point[] = [];
  for (let j = 0; j < JOINT_COUNT; j++) {
    out.push({ x: frame[2 * j], y: frame[2 * j + 1] });
  }
  return out;
}

/** World (hip-relative, y up) to canvas coordinates. */
function project(p: Point, cx: number, cy: number, scale: number): Point {
  return { x: cx + p.x * scale, y: cy - p.y * scale };
}

export interface SkeletonStyle {
  color: string;
  alpha?: number;
}

export function drawSkeleton(
  ctx: Canvas2d,
  frame: number[],
  cx: number,
  cy: number,
  scale: number,
  style: SkeletonStyle,
): void {
  const [head, lhand, rhand, lfoot, rfoot] = joints(frame);
  const hip = { x: 0, y: 0 };
  // Shoulder sits 80% of the way up the spine.
  const shoulder = { x: head.x * 0.8, y: head.y * 0.8 };
  const bones: [Point, Point][] = [
    [hip, shoulder],
    [shoulder, head],
    [shoulder, lhand],
    [shoulder, rhand],
    [hip, lfoot],
    [hip, rfoot],
  ];
  ctx.globalAlpha = style.alpha ?? 1.0;
  ctx.strokeStyle = style.color;
  ctx.fillStyle = style.color;
  ctx.lineWidth = 3;
  for (const [a, b] of bones) {
    const pa = project(a, cx, cy, scale);
    const pb = project(b, cx, cy, scale);
    ctx.beginPath();
    ctx.moveTo(pa.x, pa.y);
    ctx.lineTo(pb.x, pb.y);
    ctx.stroke();
  }
  for (const joint of [head, lhand, rhand, lfoot, rfoot, hip]) {
    const p = project(joint, cx, cy, scale);
    ctx.beginPath();
    ctx.arc(p.x, p.y, joint === head ? 7 : 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.globalAlpha = 1.0;
}

/** Integrate per-frame root velocity into a planar path (top-down). */
export function rootTrajectory(frames: number[][]): Point[] {
  const path: Point[] = [{ x: 0, y: 0 }];
  for (const frame of frames) {
    if (frame.length !== FEATURE_DIM) {
      throw new LayoutMismatch(
        `frame has ${frame.length} features, renderer expects ${FEATURE_DIM}`,
      );
    }
    const prev = path[path.length - 1];
    path.push({ x: prev.x + frame[FEATURE_DIM - 2], y: prev.y + frame[FEATURE_DIM - 1] });
  }
  return path;
}

export function drawTrajectory(
  ctx: Canvas2d,
  frames: number[][],
  upTo: number,
  cx: number,
  cy: number,
  scale: number,
  color: string,
): void {
  const path = rootTrajectory(frames);
  let minX = 0, maxX = 0, minY = 0, maxY = 0;
  for (const p of path) {
    minX = Math.min(minX, p.x);
    maxX = Math.max(maxX, p.x);
    minY = Math.min(minY, p.y);
    maxY = Math.max(maxY, p.y);
  }
  const extent = Math.max(maxX - minX, maxY - minY, 1e-6);
  const fit = scale / extent;
  const ox = cx - ((minX + maxX) / 2) * fit;
  const oy = cy + ((minY + maxY) / 2) * fit;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.globalAlpha = 0.9;
  ctx.beginPath();
  ctx.moveTo(ox + path[0].x * fit, oy - path[0].y * fit);
  const last = Math.min(upTo + 1, path.length - 1);
  for (let i = 1; i <= last; i++) {
    ctx.lineTo(ox + path[i].x * fit, oy - path[i].y * fit);
  }
  ctx.stroke();
  const here = path[last];
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(ox + here.x * fit, oy - here.y * fit, 3, 0, 2 * Math.PI);
  ctx.fill();
  ctx.globalAlpha = 1.0;
}
