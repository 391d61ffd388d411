/** Timeline and video drawing. Geometry is kept pure so marker placement is
 * testable without a canvas. */

import type { TimelineState } from "./timeline.js";
import type { VideoData } from "./npz.js";

export interface MarkerPosition {
  index: number;
  x: number; // pixels from the left edge
  t: number;
}

/** A marker at time t sits at x = (t / duration) * width. */
export function markerPositions(state: TimelineState, width: number): MarkerPosition[] {
  return state.markers.map((t, index) => ({
    index,
    x: (t / state.duration) * width,
    t,
  }));
}

export function timeAtPixel(state: TimelineState, x: number, width: number): number {
  return (x / width) * state.duration;
}

/** Nearest marker within grabRadius pixels of x, or null. */
export function hitTest(
  state: TimelineState,
  x: number,
  width: number,
  grabRadius = 6,
): number | null {
  let best: number | null = null;
  let bestDist = grabRadius;
  for (const m of markerPositions(state, width)) {
    const d = Math.abs(m.x - x);
    if (d <= bestDist) {
      best = m.index;
      bestDist = d;
    }
  }
  return best;
}

export function drawTimeline(
  ctx: CanvasRenderingContext2D,
  state: TimelineState,
  playheadT: number | null,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#1d1f24";
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = "#3a3f4a";
  ctx.beginPath();
  ctx.moveTo(0, height / 2);
  ctx.lineTo(width, height / 2);
  ctx.stroke();

  for (const m of markerPositions(state, width)) {
    ctx.strokeStyle = m.index === state.selection ? "#ffcf5c" : "#6ab0f3";
    ctx.lineWidth = m.index === state.selection ? 3 : 2;
    ctx.beginPath();
    ctx.moveTo(m.x, 4);
    ctx.lineTo(m.x, height - 4);
    ctx.stroke();
  }
  ctx.lineWidth = 1;

  if (playheadT !== null) {
    const x = (playheadT / state.duration) * width;
    ctx.strokeStyle = "#e05d5d";
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
  }
}

/** Paint one decoded frame. Frames are tiny (64px), so per-frame ImageData
 * construction is fine. */
export function drawFrame(
  ctx: CanvasRenderingContext2D,
  video: VideoData,
  frameIdx: number,
): void {
  const [T, H, W] = video.shape;
  const idx = Math.max(0, Math.min(T - 1, frameIdx));
  const rgba = new Uint8ClampedArray(W * H * 4);
  const base = idx * H * W * 3;
  for (let p = 0; p < H * W; p++) {
    rgba[p * 4] = video.frames[base + p * 3]!;
    rgba[p * 4 + 1] = video.frames[base + p * 3 + 1]!;
    rgba[p * 4 + 2] = video.frames[base + p * 3 + 2]!;
    rgba[p * 4 + 3] = 255;
  }
  const image = new ImageData(rgba, W, H);
  const off = ctx.canvas;
  if (off.width !== W || off.height !== H) {
    off.width = W;
    off.height = H;
  }
  ctx.putImageData(image, 0, 0);
}
