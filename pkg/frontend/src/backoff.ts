/** Poll a generation job until it settles, with exponential backoff.
 *
 * Delay schedule: initialMs, initialMs*factor, ... capped at maxMs. The sleep
 * function is injectable so tests can record delays without waiting.
 */

import type { Client, JobState } from "./api.js";

export interface PollOptions {
  initialMs?: number;
  factor?: number;
  maxMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const realSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class JobFailed extends Error {
  constructor(public jobId: string, message: string) {
    super(message);
    this.name = "JobFailed";
  }
}

export class PollTimeout extends Error {
  constructor(public jobId: string, public waitedMs: number) {
    super(`job ${jobId} still pending after ${waitedMs}ms`);
    this.name = "PollTimeout";
  }
}

export async function pollJob(
  client: Client,
  jobId: string,
  opts: PollOptions = {},
): Promise<Extract<JobState, { state: "done" }>> {
  const initialMs = opts.initialMs ?? 250;
  const factor = opts.factor ?? 1.5;
  const maxMs = opts.maxMs ?? 4000;
  const timeoutMs = opts.timeoutMs ?? 10 * 60 * 1000;
  const sleep = opts.sleep ?? realSleep;

  let delay = initialMs;
  let waited = 0;
  for (;;) {
    const job = await client.job(jobId);
    if (job.state === "done") return job;
    if (job.state === "failed") throw new JobFailed(jobId, job.error);
    if (waited >= timeoutMs) throw new PollTimeout(jobId, waited);
    await sleep(delay);
    waited += delay;
    delay = Math.min(delay * factor, maxMs);
  }
}
