/** Frame-accurate playback stepping, kept pure for testing. */

export interface PlayerState {
  frame: number;
  /** Fractional frame accumulator carried between ticks. */
  carry: number;
}

/** Advance by elapsed wall-clock seconds; one frame per 1/fps at rate 1. */
export function advance(
  state: PlayerState,
  dtSeconds: number,
  fps: number,
  rate: number,
  nFrames: number,
  loop = true,
): PlayerState {
  if (nFrames <= 0) return { frame: 0, carry: 0 };
  const total = state.carry + dtSeconds * fps * rate;
  const whole = Math.floor(total);
  let frame = state.frame + whole;
  if (loop) {
    frame = ((frame % nFrames) + nFrames) % nFrames;
  } else {
    frame = Math.max(0, Math.min(frame, nFrames - 1));
  }
  return { frame, carry: total - whole };
}
