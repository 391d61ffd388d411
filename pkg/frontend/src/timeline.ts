/** Editable onset-marker state for one clip.
 *
 * Invariants (re-established after every edit, property-tested):
 *   - markers sorted ascending
 *   - unique within one video frame (two markers never share floor(t * fps))
 *   - every marker within [0, duration)
 *
 * Edits are pure: each returns a fresh state plus an optional rejection
 * message (out-of-range times never mutate the list). Edits live client-side
 * only; the server sees markers exclusively as a /generate payload.
 */

export type ConditioningChoice =
  | { kind: "text"; prompt: string }
  | { kind: "clip"; clipId: string };

export interface TimelineState {
  clipId: string;
  duration: number;
  fps: number;
  markers: number[];
  selection: number | null; // index into markers
  dirty: boolean;
  conditioning: ConditioningChoice | null;
  lastJobId: string | null;
}

export type EditAction =
  | { type: "add"; t: number }
  | { type: "move"; index: number; t: number }
  | { type: "delete"; index: number };

export interface EditResult {
  state: TimelineState;
  error?: string;
}

export function frameIndex(t: number, fps: number): number {
  return Math.floor(t * fps);
}

export function createTimeline(
  clipId: string,
  duration: number,
  fps: number,
  initialMarkers: number[] = [],
): TimelineState {
  if (!(duration > 0)) throw new Error(`duration must be positive, got ${duration}`);
  if (!(fps > 0)) throw new Error(`fps must be positive, got ${fps}`);
  let state: TimelineState = {
    clipId,
    duration,
    fps,
    markers: [],
    selection: null,
    dirty: false,
    conditioning: null,
    lastJobId: null,
  };
  for (const t of initialMarkers) {
    state = applyEdit(state, { type: "add", t }).state;
  }
  // loading detector output is not an edit
  return { ...state, dirty: false };
}

function inRange(state: TimelineState, t: number): boolean {
  return Number.isFinite(t) && t >= 0 && t < state.duration;
}

/** Insert keeping sort order; merge instead when the frame is taken. */
function insertMarker(markers: number[], t: number, fps: number): number[] {
  const frame = frameIndex(t, fps);
  if (markers.some((m) => frameIndex(m, fps) === frame)) return markers;
  const out = [...markers, t];
  out.sort((a, b) => a - b);
  return out;
}

export function applyEdit(state: TimelineState, action: EditAction): EditResult {
  switch (action.type) {
    case "add": {
      if (!inRange(state, action.t)) {
        return { state, error: `time ${action.t} outside [0, ${state.duration})` };
      }
      const markers = insertMarker(state.markers, action.t, state.fps);
      if (markers === state.markers) {
        // merged with the marker already in that frame; still an edit intent
        return { state: { ...state, dirty: true } };
      }
      const selection = markers.indexOf(action.t);
      return { state: { ...state, markers, selection, dirty: true } };
    }
    case "move": {
      const from = state.markers[action.index];
      if (from === undefined) {
        return { state, error: `no marker at index ${action.index}` };
      }
      if (!inRange(state, action.t)) {
        return { state, error: `time ${action.t} outside [0, ${state.duration})` };
      }
      const without = state.markers.filter((_, i) => i !== action.index);
      const markers = insertMarker(without, action.t, state.fps);
      const idx = markers.indexOf(action.t);
      return {
        state: {
          ...state,
          markers,
          selection: idx >= 0 ? idx : null,
          dirty: true,
        },
      };
    }
    case "delete": {
      if (state.markers[action.index] === undefined) {
        return { state, error: `no marker at index ${action.index}` };
      }
      const markers = state.markers.filter((_, i) => i !== action.index);
      return { state: { ...state, markers, selection: null, dirty: true } };
    }
  }
}

export function canRegenerate(state: TimelineState): boolean {
  return state.markers.length > 0 && state.conditioning !== null;
}

export function conditioningPayload(
  choice: ConditioningChoice,
): { modality: "text" | "audio"; payload: string } {
  return choice.kind === "text"
    ? { modality: "text", payload: choice.prompt }
    : { modality: "audio", payload: choice.clipId };
}

/** Throws when an invariant is broken; used by tests after every edit. */
export function assertInvariants(state: TimelineState): void {
  const { markers, fps, duration } = state;
  const frames = new Set<number>();
  for (let i = 0; i < markers.length; i++) {
    const t = markers[i]!;
    if (!(t >= 0 && t < duration)) throw new Error(`marker ${t} out of range`);
    if (i > 0 && markers[i - 1]! > t) throw new Error("markers not sorted");
    const f = frameIndex(t, fps);
    if (frames.has(f)) throw new Error(`two markers in frame ${f}`);
    frames.add(f);
  }
  if (state.selection !== null && markers[state.selection] === undefined) {
    throw new Error(`selection ${state.selection} dangling`);
  }
}
