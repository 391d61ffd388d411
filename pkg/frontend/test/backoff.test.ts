import { describe, expect, it } from "vitest";
import { Client, type JobState } from "../src/api.js";
import { JobFailed, pollJob, PollTimeout } from "../src/backoff.js";

function clientFromStates(states: JobState[]): Client {
  let i = 0;
  return new Client("http://svc", async () => {
    const s = states[Math.min(i, states.length - 1)];
    i++;
    return new Response(JSON.stringify(s), {
      status: 200,
      headers: { "content-type": "application/json" },
    });
  });
}

const doneState: JobState = {
  id: "j1",
  state: "done",
  result: {
    audio_url: "/audio/j1",
    sample_rate: 8000,
    extracted_onsets: [],
    requested_onsets: [],
    sync_rate: null,
    tolerance: 0.05,
  },
};

function recordingSleep(): { delays: number[]; sleep: (ms: number) => Promise<void> } {
  const delays: number[] = [];
  return {
    delays,
    sleep: async (ms) => {
      delays.push(ms);
    },
  };
}

describe("pollJob", () => {
  it("returns the done state without sleeping when already finished", async () => {
    const { delays, sleep } = recordingSleep();
    const got = await pollJob(clientFromStates([doneState]), "j1", { sleep });
    expect(got.state).toBe("done");
    expect(delays).toEqual([]);
  });

  it("grows delays geometrically up to the cap", async () => {
    const pending: JobState = { id: "j1", state: "running" };
    const states = [...Array(7).fill(pending), doneState] as JobState[];
    const { delays, sleep } = recordingSleep();
    await pollJob(clientFromStates(states), "j1", {
      sleep,
      initialMs: 100,
      factor: 2,
      maxMs: 1000,
    });
    expect(delays).toEqual([100, 200, 400, 800, 1000, 1000, 1000]);
  });

  it("passes queued states through the same loop", async () => {
    const states: JobState[] = [{ id: "j1", state: "queued" }, { id: "j1", state: "running" }, doneState];
    const { delays, sleep } = recordingSleep();
    const got = await pollJob(clientFromStates(states), "j1", { sleep, initialMs: 50, factor: 3 });
    expect(got.state).toBe("done");
    expect(delays).toEqual([50, 150]);
  });

  it("throws JobFailed carrying the server's message", async () => {
    const states: JobState[] = [
      { id: "j1", state: "running" },
      { id: "j1", state: "failed", error: "sampler exploded" },
    ];
    const { sleep } = recordingSleep();
    const err = await pollJob(clientFromStates(states), "j1", { sleep }).catch((e) => e);
    expect(err).toBeInstanceOf(JobFailed);
    expect(err.message).toBe("sampler exploded");
    expect(err.jobId).toBe("j1");
  });

  it("gives up after the timeout budget", async () => {
    const stuck: JobState = { id: "j1", state: "running" };
    const { delays, sleep } = recordingSleep();
    const err = await pollJob(clientFromStates([stuck]), "j1", {
      sleep,
      initialMs: 100,
      factor: 1,
      timeoutMs: 450,
    }).catch((e) => e);
    expect(err).toBeInstanceOf(PollTimeout);
    expect(err.waitedMs).toBeGreaterThanOrEqual(450);
    // 100ms per wait, so five sleeps pushes waited past 450
    expect(delays.length).toBe(5);
  });
});
