/** Editing session: current motion plus base tokens, brush selection,
 * and an append-only history with an undo pointer.
 *
 * Edits replace only the regenerated token spans: frames inside preserved
 * token positions are kept from the pre-edit motion byte for byte, so
 * everything outside the brushed region is bit-identical after a
 * regenerate. The preserved badge reports whether the server echoed the
 * source tokens unchanged at every preserved position.
 */

import { EditParams, MotionApi } from "./api.js";
import { clipSelection, selectionTokens } from "./spans.js";
import {
  cloneFrames,
  EditTask,
  FRAMES_PER_TOKEN,
  Motion,
  Span,
} from "./types.js";

export interface Snapshot {
  motion: Motion;
  tokens: number[];
  label: number;
  /** The request that produced this state, null for the initial generate. */
  request: EditParams | null;
}

export interface EditOutcome {
  ok: boolean;
  message: string;
  preservedVerified: boolean;
  changedSpans: Span[];
}

function cloneSnapshot(snap: Snapshot): Snapshot {
  return {
    motion: { frames: cloneFrames(snap.motion.frames), fps: snap.motion.fps },
    tokens: snap.tokens.slice(),
    label: snap.label,
    request: snap.request,
  };
}

export class Session {
  private history: Snapshot[] = [];
  private cursor = -1; // index of the current snapshot
  selection: Span[] = [];
  playbackFrame = 0;
  playbackRate = 1.0;
  playing = false;

  get current(): Snapshot | null {
    return this.cursor >= 0 ? this.history[this.cursor] : null;
  }

  get motion(): Motion | null {
    return this.current?.motion ?? null;
  }

  get tokens(): number[] {
    return this.current?.tokens ?? [];
  }

  get nFrames(): number {
    return this.motion?.frames.length ?? 0;
  }

  get canUndo(): boolean {
    return this.cursor > 0;
  }

  get canRedo(): boolean {
    return this.cursor < this.history.length - 1;
  }

  /** Install a freshly generated motion, clearing selection and history. */
  load(motion: Motion, tokens: number[], label: number): void {
    this.history = [cloneSnapshot({ motion, tokens, label, request: null })];
    this.cursor = 0;
    this.selection = [];
    this.playbackFrame = 0;
  }

  undo(): boolean {
    if (!this.canUndo) return false;
    this.cursor -= 1;
    this.afterHistoryMove();
    return true;
  }

  redo(): boolean {
    if (!this.canRedo) return false;
    this.cursor += 1;
    this.afterHistoryMove();
    return true;
  }

  private afterHistoryMove(): void {
    this.selection = clipSelection(this.selection, this.nFrames);
    this.playbackFrame = Math.min(this.playbackFrame, Math.max(this.nFrames - 1, 0));
  }

  /** Submit the edit; on success the new state is pushed onto history
   * (truncating any redo tail). On failure the session is unchanged. */
  async submitEdit(api: MotionApi, task: EditTask, seed?: number): Promise<EditOutcome> {
    const current = this.current;
    if (!current) {
      return { ok: false, message: "no motion loaded", preservedVerified: false, changedSpans: [] };
    }
    if (task === "custom" && this.selection.length === 0) {
      return {
        ok: false,
        message: "custom edit needs a selection",
        preservedVerified: false,
        changedSpans: [],
      };
    }
    const request: EditParams = {
      label: current.label,
      task,
      tokens: current.tokens.slice(),
      spans: task === "custom" ? this.selection.map((s) => ({ ...s })) : undefined,
      seed,
    };
    let response;
    try {
      response = await api.edit(request);
    } catch (err) {
      return {
        ok: false,
        message: err instanceof Error ? err.message : String(err),
        preservedVerified: false,
        changedSpans: [],
      };
    }

    const preserved = new Set(response.preserved_positions);
    const preservedVerified = response.preserved_positions.every(
      (p) => response.tokens[p - 1] === current.tokens[p - 1],
    );

    // Composite: keep source frames at preserved token positions, take the
    // server's frames only where tokens were regenerated.
    const frames = cloneFrames(response.frames);
    const changedSpans: Span[] = [];
    const t = response.tokens.length;
    for (let p = 1; p <= t; p++) {
      const start = (p - 1) * FRAMES_PER_TOKEN;
      if (preserved.has(p) && start + FRAMES_PER_TOKEN <= current.motion.frames.length) {
        for (let f = start; f < start + FRAMES_PER_TOKEN; f++) {
          frames[f] = current.motion.frames[f].slice();
        }
      } else if (!preserved.has(p)) {
        const last = changedSpans[changedSpans.length - 1];
        if (last && last.end === start) last.end = start + FRAMES_PER_TOKEN;
        else changedSpans.push({ start, end: start + FRAMES_PER_TOKEN });
      }
    }

    this.history = this.history.slice(0, this.cursor + 1);
    this.history.push(
      cloneSnapshot({
        motion: { frames, fps: current.motion.fps },
        tokens: response.tokens.slice(),
        label: current.label,
        request,
      }),
    );
    this.cursor = this.history.length - 1;
    return { ok: true, message: "edit applied", preservedVerified, changedSpans };
  }
}
