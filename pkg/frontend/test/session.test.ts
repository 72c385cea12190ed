import { describe, expect, it } from "vitest";

import { MotionApi } from "../src/api.js";
import { Session } from "../src/session.js";
import { cloneFrames, framesEqual } from "../src/types.js";

const FEATURES = 12;

function makeFrames(n: number, salt = 0): number[][] {
  return Array.from({ length: n }, (_, i) =>
    Array.from({ length: FEATURES }, (_, j) => Math.sin(i * 0.37 + j * 1.3 + salt)),
  );
}

/** Server stub: regenerates masked token spans, preserves the rest. */
function stubApi(
  preserved: number[],
  opts: { corruptPreserved?: boolean; fail?: boolean } = {},
): MotionApi {
  const fetchStub = (async (url: RequestInfo | URL, init?: RequestInit) => {
    if (String(url).endsWith("/edit")) {
      if (opts.fail) {
        return new Response(
          JSON.stringify({ error: { code: "bad_request", message: "boom" } }),
          { status: 400 },
        );
      }
      const body = JSON.parse(String(init?.body));
      const tokens: number[] = body.tokens.slice();
      const t = tokens.length;
      const preservedSet = new Set(preserved);
      for (let p = 1; p <= t; p++) {
        if (!preservedSet.has(p)) tokens[p - 1] = 1000 + p;
        else if (opts.corruptPreserved) tokens[p - 1] += 1;
      }
      const frames = makeFrames(4 * t, 9999); // decoder output differs everywhere
      return new Response(
        JSON.stringify({ frames, tokens, preserved_positions: preserved }),
        { status: 200 },
      );
    }
    throw new Error(`unexpected url ${url}`);
  }) as typeof fetch;
  return new MotionApi("http://stub", fetchStub);
}

function loadedSession(nTokens = 12): { session: Session; frames: number[][] } {
  const session = new Session();
  const frames = makeFrames(4 * nTokens);
  session.load({ frames: cloneFrames(frames), fps: 20 }, Array.from({ length: nTokens }, (_, i) => i), 2);
  return { session, frames };
}

describe("submitEdit", () => {
  it("keeps frames outside the regenerated spans bit-identical", async () => {
    const { session, frames } = loadedSession();
    session.selection = [{ start: 16, end: 32 }]; // tokens 5..8
    const preserved = [1, 2, 3, 4, 9, 10, 11, 12];
    const outcome = await session.submitEdit(stubApi(preserved), "custom", 1);
    expect(outcome.ok).toBe(true);
    expect(outcome.preservedVerified).toBe(true);
    const after = session.motion!.frames;
    for (let f = 0; f < 16; f++) expect(after[f]).toEqual(frames[f]);
    for (let f = 32; f < 48; f++) expect(after[f]).toEqual(frames[f]);
    // regenerated region actually replaced
    expect(framesEqual(after.slice(16, 32), frames.slice(16, 32))).toBe(false);
    expect(outcome.changedSpans).toEqual([{ start: 16, end: 32 }]);
  });

  it("flags unverified preservation when the server alters preserved tokens", async () => {
    const { session } = loadedSession();
    session.selection = [{ start: 0, end: 8 }];
    const preserved = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
    const outcome = await session.submitEdit(
      stubApi(preserved, { corruptPreserved: true }),
      "custom",
      1,
    );
    expect(outcome.ok).toBe(true);
    expect(outcome.preservedVerified).toBe(false);
  });

  it("pushes history so undo restores the prior motion exactly", async () => {
    const { session, frames } = loadedSession();
    session.selection = [{ start: 0, end: 16 }];
    await session.submitEdit(stubApi([5, 6, 7, 8, 9, 10, 11, 12]), "custom", 1);
    expect(session.canUndo).toBe(true);
    const edited = cloneFrames(session.motion!.frames);
    expect(session.undo()).toBe(true);
    expect(framesEqual(session.motion!.frames, frames)).toBe(true);
    expect(session.redo()).toBe(true);
    expect(framesEqual(session.motion!.frames, edited)).toBe(true);
  });

  it("leaves the session unchanged on an HTTP error", async () => {
    const { session, frames } = loadedSession();
    session.selection = [{ start: 0, end: 8 }];
    const outcome = await session.submitEdit(stubApi([], { fail: true }), "custom", 1);
    expect(outcome.ok).toBe(false);
    expect(outcome.message).toContain("boom");
    expect(session.canUndo).toBe(false);
    expect(framesEqual(session.motion!.frames, frames)).toBe(true);
  });

  it("requires a selection for the custom task", async () => {
    const { session } = loadedSession();
    const outcome = await session.submitEdit(stubApi([]), "custom", 1);
    expect(outcome.ok).toBe(false);
    expect(outcome.message).toContain("selection");
  });

  it("different seeds reach the server request", async () => {
    const { session } = loadedSession();
    session.selection = [{ start: 0, end: 8 }];
    const seeds: number[] = [];
    const fetchStub = (async (_url: RequestInfo | URL, init?: RequestInit) => {
      const body = JSON.parse(String(init?.body));
      seeds.push(body.seed);
      const t: number = body.tokens.length;
      return new Response(
        JSON.stringify({
          frames: makeFrames(4 * t, body.seed),
          tokens: body.tokens,
          preserved_positions: [],
        }),
        { status: 200 },
      );
    }) as typeof fetch;
    const api = new MotionApi("http://stub", fetchStub);
    await session.submitEdit(api, "custom", 7);
    await session.submitEdit(api, "custom", 8);
    expect(seeds).toEqual([7, 8]);
  });

  it("a redo tail is dropped when editing after undo", async () => {
    const { session } = loadedSession();
    session.selection = [{ start: 0, end: 8 }];
    const api = stubApi([3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
    await session.submitEdit(api, "custom", 1);
    session.undo();
    await session.submitEdit(api, "custom", 2);
    expect(session.canRedo).toBe(false);
  });
});

describe("load", () => {
  it("resets history and selection", async () => {
    const { session } = loadedSession();
    session.selection = [{ start: 0, end: 8 }];
    await session.submitEdit(stubApi([2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]), "custom", 1);
    session.load({ frames: makeFrames(16), fps: 20 }, [0, 1, 2, 3], 0);
    expect(session.canUndo).toBe(false);
    expect(session.selection).toEqual([]);
    expect(session.nFrames).toBe(16);
  });
});
