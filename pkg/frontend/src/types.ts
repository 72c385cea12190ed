/** Shared data shapes for the editing console. */

/** Half-open frame interval [start, end). */
export interface Span {
  start: number;
  end: number;
}

/** A motion clip as served by the backend: frames[tau][featureDim]. */
export interface Motion {
  frames: number[][];
  fps: number;
}

export interface LabelInfo {
  id: number;
  name: string;
}

export interface GenerateResponse {
  frames: number[][];
  tokens: number[];
  length: number;
  confidences: number[];
}

export interface EditResponse {
  frames: number[][];
  tokens: number[];
  preserved_positions: number[];
}

export type EditTask = "inpaint" | "outpaint" | "prefix" | "suffix" | "custom";

/** Frames covered by one motion token. */
export const FRAMES_PER_TOKEN = 4;

export function cloneFrames(frames: number[][]): number[][] {
  return frames.map((row) => row.slice());
}

export function framesEqual(a: number[][], b: number[][]): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    if (a[i].length !== b[i].length) return false;
    for (let j = 0; j < a[i].length; j++) {
      if (a[i][j] !== b[i][j]) return false;
    }
  }
  return true;
}
