/** DOM wiring for the editing console. */

import { MotionApi } from "./api.js";
import { advance, PlayerState } from "./player.js";
import { Session } from "./session.js";
import { selectAll } from "./spans.js";
import {
  drawSkeleton,
  drawTrajectory,
  FEATURE_DIM,
  LayoutMismatch,
} from "./skeleton.js";
import { BrushGesture, drawTimeline, frameAtX, TimelineGeometry } from "./timeline.js";
import { EditTask, Span } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new MotionApi("http://127.0.0.1:8722");
const session = new Session();

let player: PlayerState = { frame: 0, carry: 0 };
let lastTick = performance.now();
let changedSpans: Span[] = [];
let previewSpan: Span | null = null;
let showPrevious = false;
let gesture: BrushGesture | null = null;

function toast(message: string, isError = false): void {
  const el = $("toast");
  el.textContent = message;
  el.className = isError ? "toast error" : "toast";
  el.style.opacity = "1";
  setTimeout(() => (el.style.opacity = "0"), 3500);
}

function setBadge(visible: boolean): void {
  $("preserved-badge").style.display = visible ? "inline-block" : "none";
}

function syncButtons(): void {
  ($("undo") as HTMLButtonElement).disabled = !session.canUndo;
  ($("redo") as HTMLButtonElement).disabled = !session.canRedo;
  ($("submit") as HTMLButtonElement).disabled = session.motion === null;
}

async function refreshLabels(): Promise<void> {
  try {
    const labels = await api.labels();
    const select = $("label") as HTMLSelectElement;
    select.innerHTML = "";
    for (const info of labels) {
      const opt = document.createElement("option");
      opt.value = String(info.id);
      opt.textContent = `${info.id}: ${info.name}`;
      select.appendChild(opt);
    }
    toast(`connected; ${labels.length} labels`);
  } catch (err) {
    toast(`cannot reach service: ${err instanceof Error ? err.message : err}`, true);
  }
}

async function generate(): Promise<void> {
  const label = Number(($("label") as HTMLSelectElement).value);
  const lengthRaw = ($("length") as HTMLInputElement).value;
  const seedRaw = ($("seed") as HTMLInputElement).value;
  try {
    const resp = await api.generate({
      label,
      length: lengthRaw ? Number(lengthRaw) : undefined,
      seed: seedRaw ? Number(seedRaw) : undefined,
    });
    session.load({ frames: resp.frames, fps: 20 }, resp.tokens, label);
    changedSpans = [];
    player = { frame: 0, carry: 0 };
    session.playing = true;
    setBadge(false);
    toast(`generated ${resp.length} frames`);
  } catch (err) {
    toast(`generate failed: ${err instanceof Error ? err.message : err}`, true);
  }
  syncButtons();
}

async function submitEdit(): Promise<void> {
  const task = ($("task") as HTMLSelectElement).value as EditTask;
  const seedRaw = ($("edit-seed") as HTMLInputElement).value;
  const button = $("submit") as HTMLButtonElement;
  button.disabled = true; // single in-flight edit
  try {
    const outcome = await session.submitEdit(
      api,
      task,
      seedRaw ? Number(seedRaw) : Math.floor(Math.random() * 2 ** 31),
    );
    if (!outcome.ok) {
      toast(outcome.message, true);
      return;
    }
    changedSpans = outcome.changedSpans;
    setBadge(outcome.preservedVerified);
    toast(outcome.preservedVerified ? "edit applied; preserved spans verified" : "edit applied");
  } finally {
    button.disabled = false;
    syncButtons();
  }
}

function drawScene(): void {
  const canvas = $("scene") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const motion = session.motion;
  if (!motion) return;
  const frame = motion.frames[Math.min(player.frame, motion.frames.length - 1)];
  try {
    if (frame.length !== FEATURE_DIM) throw new LayoutMismatch(`got ${frame.length} features`);
    const cx = canvas.width / 2;
    const cy = canvas.height * 0.55;
    const scale = canvas.height * 0.3;
    const previous = session.canUndo && showPrevious
      ? (session as unknown as { history: { motion: { frames: number[][] } }[]; cursor: number })
      : null;
    if (previous) {
      const prevFrames = previous.history[previous.cursor - 1].motion.frames;
      const prevFrame = prevFrames[Math.min(player.frame, prevFrames.length - 1)];
      drawSkeleton(ctx, prevFrame, cx, cy, scale, { color: "#4a7bd0", alpha: 0.45 });
    }
    drawSkeleton(ctx, frame, cx, cy, scale, { color: "#d05a4a" });
    drawTrajectory(ctx, motion.frames, player.frame, canvas.width - 70, 70, 50, "#888");
    $("error-banner").style.display = "none";
  } catch (err) {
    if (err instanceof LayoutMismatch) {
      const banner = $("error-banner");
      banner.textContent = `cannot render: ${err.message}`;
      banner.style.display = "block";
    } else {
      throw err;
    }
  }
}

function drawBar(): void {
  const canvas = $("timeline") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const geo: TimelineGeometry = {
    width: canvas.width,
    height: canvas.height,
    nFrames: session.nFrames,
  };
  drawTimeline(ctx, geo, session.selection, changedSpans, player.frame, previewSpan, {
    background: "#22262b",
    selection: "#e0b34c",
    changed: "#d05a4a",
    playhead: "#eeeeee",
    preview: "#e0b34c",
  });
}

function tick(now: number): void {
  const dt = (now - lastTick) / 1000;
  lastTick = now;
  if (session.playing && session.nFrames > 0) {
    const fps = session.motion?.fps ?? 20;
    player = advance(player, dt, fps, session.playbackRate, session.nFrames);
  }
  drawScene();
  drawBar();
  requestAnimationFrame(tick);
}

function timelineGeometry(): TimelineGeometry {
  const canvas = $("timeline") as HTMLCanvasElement;
  return { width: canvas.width, height: canvas.height, nFrames: session.nFrames };
}

function wireTimeline(): void {
  const canvas = $("timeline") as HTMLCanvasElement;
  canvas.addEventListener("mousedown", (ev) => {
    if (session.nFrames === 0) return;
    gesture = new BrushGesture(ev.altKey);
    gesture.begin(frameAtX(ev.offsetX, timelineGeometry()));
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!gesture) return;
    previewSpan = gesture.preview(frameAtX(ev.offsetX, timelineGeometry()));
  });
  const finish = (ev: MouseEvent) => {
    if (!gesture) return;
    session.selection = gesture.commit(session.selection, frameAtX(ev.offsetX, timelineGeometry()));
    gesture = null;
    previewSpan = null;
  };
  canvas.addEventListener("mouseup", finish);
  canvas.addEventListener("mouseleave", (ev) => {
    if (gesture) finish(ev);
  });
}

function wireControls(): void {
  $("connect").addEventListener("click", () => {
    api.setBaseUrl(($("base-url") as HTMLInputElement).value);
    void refreshLabels();
  });
  $("generate").addEventListener("click", () => void generate());
  $("submit").addEventListener("click", () => void submitEdit());
  $("undo").addEventListener("click", () => {
    if (session.undo()) {
      changedSpans = [];
      setBadge(false);
      syncButtons();
    }
  });
  $("redo").addEventListener("click", () => {
    if (session.redo()) {
      syncButtons();
    }
  });
  $("play").addEventListener("click", () => (session.playing = !session.playing));
  $("select-all").addEventListener("click", () => {
    session.selection = selectAll(session.nFrames);
  });
  $("clear-selection").addEventListener("click", () => (session.selection = []));
  $("compare").addEventListener("change", (ev) => {
    showPrevious = (ev.target as HTMLInputElement).checked;
  });
  ($("rate") as HTMLInputElement).addEventListener("input", (ev) => {
    session.playbackRate = Number((ev.target as HTMLInputElement).value);
  });
}

window.addEventListener("DOMContentLoaded", () => {
  wireControls();
  wireTimeline();
  syncButtons();
  void refreshLabels();
  requestAnimationFrame((now) => {
    lastTick = now;
    requestAnimationFrame(tick);
  });
});
