/** Onset editor: pick a clip, edit markers on the timeline, choose
 * conditioning, regenerate audio, audition in sync with the video frames.
 *
 * All server interaction goes through Client; the only mutating call is
 * POST /generate. Edits stay local until then.
 */

import { ApiError, Client, type JobResult } from "./api.js";
import {
  applyEdit,
  canRegenerate,
  conditioningPayload,
  createTimeline,
  type EditAction,
  type TimelineState,
} from "./timeline.js";
import { readVideoNpz, type VideoData } from "./npz.js";
import { drawFrame, drawTimeline, hitTest, timeAtPixel } from "./render.js";
import { JobFailed, pollJob, PollTimeout } from "./backoff.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const client = new Client("");

const clipSelect = $<HTMLSelectElement>("clip-select");
const retryBtn = $<HTMLButtonElement>("retry-btn");
const statusLine = $<HTMLElement>("status");
const frameCanvas = $<HTMLCanvasElement>("frame-canvas");
const timelineCanvas = $<HTMLCanvasElement>("timeline-canvas");
const playBtn = $<HTMLButtonElement>("play-btn");
const condText = $<HTMLInputElement>("cond-text");
const condClip = $<HTMLSelectElement>("cond-clip");
const regenBtn = $<HTMLButtonElement>("regen-btn");
const cancelBtn = $<HTMLButtonElement>("cancel-btn");
const audioEl = $<HTMLAudioElement>("audio");
const reportEl = $<HTMLElement>("report");
const hintEl = $<HTMLElement>("hint");

let state: TimelineState | null = null;
let video: VideoData | null = null;
let inFlightJob: string | null = null;
let pollCancelled = false;
let previewT = 0; // transport fallback before any audio exists
let previewPlaying = false;
let lastTick = 0;

function setStatus(msg: string, isError = false): void {
  statusLine.textContent = msg;
  statusLine.className = isError ? "error" : "";
  retryBtn.hidden = !isError;
}

function condChoice(): TimelineState["conditioning"] {
  const mode = (document.querySelector('input[name="cond-mode"]:checked') as HTMLInputElement | null)?.value;
  if (mode === "text" && condText.value.trim()) {
    return { kind: "text", prompt: condText.value.trim() };
  }
  if (mode === "clip" && condClip.value) {
    return { kind: "clip", clipId: condClip.value };
  }
  return null;
}

function refreshControls(): void {
  if (!state) return;
  state = { ...state, conditioning: condChoice() };
  regenBtn.disabled = !canRegenerate(state) || inFlightJob !== null;
  cancelBtn.hidden = inFlightJob === null;
  if (state.markers.length === 0) {
    hintEl.textContent = "no markers: add onsets to enable generation";
  } else if (!state.conditioning) {
    hintEl.textContent = "choose text or reference-clip conditioning";
  } else {
    hintEl.textContent = "";
  }
  redraw();
}

function transportTime(): number {
  if (audioEl.src && !audioEl.paused) return audioEl.currentTime;
  if (audioEl.src && audioEl.currentTime > 0) return audioEl.currentTime;
  return previewT;
}

function redraw(): void {
  if (!state) return;
  const t = Math.min(transportTime(), state.duration);
  const ctx = timelineCanvas.getContext("2d");
  if (ctx) drawTimeline(ctx, state, t);
  if (video) {
    const fctx = frameCanvas.getContext("2d");
    if (fctx) drawFrame(fctx, video, Math.floor(t * video.fps));
  }
}

function tick(now: number): void {
  if (previewPlaying && state && (!audioEl.src || audioEl.paused)) {
    previewT += (now - lastTick) / 1000;
    if (previewT >= state.duration) {
      previewT = 0;
      previewPlaying = false;
    }
  }
  lastTick = now;
  redraw();
  requestAnimationFrame(tick);
}

async function loadClipList(): Promise<void> {
  setStatus("loading clips...");
  try {
    const clips = await client.listClips();
    clipSelect.innerHTML = "";
    condClip.innerHTML = "";
    for (const c of clips) {
      const opt = document.createElement("option");
      opt.value = c.id;
      opt.textContent = `${c.id} (${c.duration.toFixed(1)}s, ${c.n_onsets} onsets)`;
      clipSelect.appendChild(opt);
      const ref = document.createElement("option");
      ref.value = c.id;
      ref.textContent = c.id;
      condClip.appendChild(ref);
    }
    setStatus("");
    if (clips.length > 0) await loadClip(clips[0]!.id);
  } catch (err) {
    setStatus(describeError(err), true);
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? `network failure: ${err.message}` : `server error [${err.code}]: ${err.message}`;
  }
  return String(err);
}

async function loadClip(id: string): Promise<void> {
  if (state?.dirty && !window.confirm("Discard unsaved marker edits?")) {
    clipSelect.value = state.clipId;
    return;
  }
  setStatus(`loading ${id}...`);
  try {
    const [onsets, buf] = await Promise.all([client.clipOnsets(id), client.fetchVideo(id)]);
    video = await readVideoNpz(buf);
    const [T] = video.shape;
    const duration = T / video.fps;
    state = createTimeline(id, duration, video.fps, onsets.onsets);
    previewT = 0;
    previewPlaying = false;
    audioEl.removeAttribute("src");
    reportEl.textContent = "";
    inFlightJob = null;
    setStatus("");
  } catch (err) {
    setStatus(describeError(err), true);
  }
  refreshControls();
}

function edit(action: EditAction): void {
  if (!state) return;
  const { state: next, error } = applyEdit(state, action);
  state = next;
  if (error) setStatus(error, true);
  else setStatus("");
  refreshControls();
}

let dragIndex: number | null = null;

timelineCanvas.addEventListener("mousedown", (ev) => {
  if (!state) return;
  const rect = timelineCanvas.getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const hit = hitTest(state, x, timelineCanvas.width);
  if (hit !== null) {
    dragIndex = hit;
    state = { ...state, selection: hit };
    redraw();
  } else {
    edit({ type: "add", t: timeAtPixel(state, x, timelineCanvas.width) });
  }
});

timelineCanvas.addEventListener("mousemove", (ev) => {
  if (dragIndex === null || !state) return;
  const rect = timelineCanvas.getBoundingClientRect();
  const t = timeAtPixel(state, ev.clientX - rect.left, timelineCanvas.width);
  edit({ type: "move", index: dragIndex, t });
  dragIndex = state.selection;
});

window.addEventListener("mouseup", () => {
  dragIndex = null;
});

window.addEventListener("keydown", (ev) => {
  if (!state || state.selection === null) return;
  if (ev.key === "Delete" || ev.key === "Backspace") {
    edit({ type: "delete", index: state.selection });
  }
});

regenBtn.addEventListener("click", async () => {
  if (!state || !canRegenerate(state) || inFlightJob !== null) return;
  const clipAtSubmit = state.clipId;
  const choice = state.conditioning!;
  pollCancelled = false;
  try {
    const jobId = await client.generate({
      duration: state.duration,
      onsets: state.markers,
      conditioning: conditioningPayload(choice),
    });
    inFlightJob = jobId;
    refreshControls();
    setStatus(`job ${jobId} running...`);
    const done = await pollJob(client, jobId, {
      sleep: (ms) =>
        new Promise((resolve, reject) =>
          setTimeout(() => (pollCancelled ? reject(new Error("cancelled")) : resolve()), ms),
        ),
    });
    if (!state || state.clipId !== clipAtSubmit) return; // stale view
    state = { ...state, dirty: false, lastJobId: jobId };
    audioEl.src = done.result.audio_url;
    showReport(done.result);
    setStatus("generation done");
  } catch (err) {
    if (err instanceof JobFailed) setStatus(`generation failed: ${err.message}`, true);
    else if (err instanceof PollTimeout) setStatus(`timed out waiting for job ${err.jobId}`, true);
    else if ((err as Error).message === "cancelled") setStatus("polling cancelled; job keeps running server-side");
    else setStatus(describeError(err), true);
  } finally {
    if (!state || state.clipId === clipAtSubmit) inFlightJob = null;
    refreshControls();
  }
});

cancelBtn.addEventListener("click", () => {
  pollCancelled = true;
});

function showReport(result: JobResult): void {
  const rate = result.sync_rate === null ? "n/a" : `${(result.sync_rate * 100).toFixed(0)}%`;
  reportEl.textContent = [
    `requested onsets: ${result.requested_onsets.length}`,
    `extracted onsets: ${result.extracted_onsets.length}`,
    `sync rate (±${(result.tolerance * 1000).toFixed(0)} ms): ${rate}`,
  ].join("\n");
}

playBtn.addEventListener("click", () => {
  if (audioEl.src) {
    if (audioEl.paused) void audioEl.play();
    else audioEl.pause();
  } else {
    previewPlaying = !previewPlaying;
  }
});

clipSelect.addEventListener("change", () => void loadClip(clipSelect.value));
retryBtn.addEventListener("click", () => {
  if (state) void loadClip(state.clipId);
  else void loadClipList();
});
condText.addEventListener("input", refreshControls);
condClip.addEventListener("change", refreshControls);
for (const radio of document.querySelectorAll('input[name="cond-mode"]')) {
  radio.addEventListener("change", refreshControls);
}

window.addEventListener("beforeunload", (ev) => {
  if (state?.dirty) {
    ev.preventDefault();
    ev.returnValue = "";
  }
});

requestAnimationFrame((now) => {
  lastTick = now;
  requestAnimationFrame(tick);
});
void loadClipList();
