import { describe, expect, it } from "vitest";
import {
  applyEdit,
  assertInvariants,
  canRegenerate,
  createTimeline,
  frameIndex,
  type EditAction,
  type TimelineState,
} from "../src/timeline.js";

const FPS = 15;
const DURATION = 8;

function fresh(markers: number[] = []): TimelineState {
  return createTimeline("clip0000", DURATION, FPS, markers);
}

describe("createTimeline", () => {
  it("starts clean with detector markers loaded", () => {
    const s = fresh([0.5, 2.0, 4.5]);
    expect(s.markers).toEqual([0.5, 2.0, 4.5]);
    expect(s.dirty).toBe(false);
    assertInvariants(s);
  });

  it("sorts and dedupes unordered detector output", () => {
    const s = fresh([4.5, 0.5, 0.51, 2.0]); // 0.5 and 0.51 share frame 7
    expect(s.markers).toEqual([0.5, 2.0, 4.5]);
  });

  it("rejects nonpositive duration", () => {
    expect(() => createTimeline("x", 0, FPS)).toThrow(/duration/);
  });
});

describe("applyEdit / add", () => {
  it("keeps the list sorted after an interior add", () => {
    let s = fresh([0.5, 4.5]);
    s = applyEdit(s, { type: "add", t: 1.234 }).state;
    expect(s.markers).toEqual([0.5, 1.234, 4.5]);
    expect(s.dirty).toBe(true);
  });

  it("merges a duplicate within one video frame, count unchanged", () => {
    let s = fresh([1.0]);
    // 1.0 and 1.05 both land in frame 15 at 15 fps
    expect(frameIndex(1.0, FPS)).toBe(frameIndex(1.05, FPS));
    const r = applyEdit(s, { type: "add", t: 1.05 });
    expect(r.error).toBeUndefined();
    expect(r.state.markers).toEqual([1.0]);
    expect(r.state.dirty).toBe(true);
  });

  it("rejects out-of-range times with a message and no mutation", () => {
    const s = fresh([1.0]);
    for (const t of [-0.1, DURATION, DURATION + 3, NaN, Infinity]) {
      const r = applyEdit(s, { type: "add", t });
      expect(r.error).toBeTruthy();
      expect(r.state.markers).toEqual([1.0]);
    }
  });

  it("accepts t = 0 and rejects t = duration (half-open range)", () => {
    expect(applyEdit(fresh(), { type: "add", t: 0 }).error).toBeUndefined();
    expect(applyEdit(fresh(), { type: "add", t: DURATION }).error).toBeTruthy();
  });
});

describe("applyEdit / move", () => {
  it("re-sorts when a marker moves past a neighbor", () => {
    let s = fresh([1.0, 2.0, 3.0]);
    const r = applyEdit(s, { type: "move", index: 0, t: 2.5 });
    expect(r.state.markers).toEqual([2.0, 2.5, 3.0]);
    expect(r.state.selection).toBe(1); // follows the moved marker
  });

  it("keeps the original on an out-of-range target", () => {
    const s = fresh([1.0, 2.0]);
    const r = applyEdit(s, { type: "move", index: 1, t: -5 });
    expect(r.error).toBeTruthy();
    expect(r.state.markers).toEqual([1.0, 2.0]);
  });

  it("merges into an occupied frame, dropping one marker", () => {
    const s = fresh([1.0, 5.0]);
    const r = applyEdit(s, { type: "move", index: 1, t: 1.02 });
    expect(r.error).toBeUndefined();
    expect(r.state.markers).toEqual([1.0]);
  });

  it("rejects a dangling index", () => {
    const s = fresh([1.0]);
    expect(applyEdit(s, { type: "move", index: 7, t: 2.0 }).error).toBeTruthy();
  });
});

describe("applyEdit / delete", () => {
  it("removes by index and clears selection", () => {
    let s = { ...fresh([1.0, 2.0, 3.0]), selection: 1 };
    const r = applyEdit(s, { type: "delete", index: 1 });
    expect(r.state.markers).toEqual([1.0, 3.0]);
    expect(r.state.selection).toBeNull();
  });

  it("rejects a dangling index", () => {
    expect(applyEdit(fresh([1.0]), { type: "delete", index: 3 }).error).toBeTruthy();
  });
});

describe("canRegenerate", () => {
  it("requires at least one marker and a conditioning choice", () => {
    const empty = fresh();
    expect(canRegenerate(empty)).toBe(false);
    const withMarker = applyEdit(empty, { type: "add", t: 1.0 }).state;
    expect(canRegenerate(withMarker)).toBe(false);
    expect(canRegenerate({ ...withMarker, conditioning: { kind: "text", prompt: "metal hit" } })).toBe(true);
    expect(canRegenerate({ ...empty, conditioning: { kind: "clip", clipId: "clip0001" } })).toBe(false);
  });
});

// deterministic PRNG so the 1000-action sequence is reproducible
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("property: invariants under random edit sequences", () => {
  it("holds after each of 1000 random scripted actions", () => {
    const rand = mulberry32(20260814);
    let s = fresh([0.5, 2.0, 4.5, 6.25]);
    let applied = 0;
    let rejected = 0;
    for (let step = 0; step < 1000; step++) {
      const roll = rand();
      let action: EditAction;
      if (roll < 0.45) {
        // range deliberately overshoots [0, duration) to exercise rejection
        action = { type: "add", t: rand() * (DURATION + 1) - 0.5 };
      } else if (roll < 0.8) {
        action = {
          type: "move",
          index: Math.floor(rand() * (s.markers.length + 2)),
          t: rand() * (DURATION + 1) - 0.5,
        };
      } else {
        action = { type: "delete", index: Math.floor(rand() * (s.markers.length + 2)) };
      }
      const before = s.markers;
      const r = applyEdit(s, action);
      if (r.error) {
        expect(r.state.markers).toEqual(before); // rejection never mutates
        rejected++;
      } else {
        expect(r.state.dirty).toBe(true);
        applied++;
      }
      s = r.state;
      assertInvariants(s);
    }
    // the mix should exercise both paths heavily
    expect(applied).toBeGreaterThan(200);
    expect(rejected).toBeGreaterThan(100);
  });

  it("keeps marker count bounded by distinct frames", () => {
    const rand = mulberry32(7);
    let s = fresh();
    for (let i = 0; i < 500; i++) {
      s = applyEdit(s, { type: "add", t: rand() * DURATION * 0.999 }).state;
    }
    assertInvariants(s);
    expect(s.markers.length).toBeLessThanOrEqual(DURATION * FPS);
    const frames = new Set(s.markers.map((t) => frameIndex(t, FPS)));
    expect(frames.size).toBe(s.markers.length);
  });
});
