/** Live round trip against a running generation service.
 *
 * Exercises the editor workflow end to end: load a clip, parse its npz video,
 * delete every other detected marker, regenerate with text conditioning, and
 * check the server's sync report. Also regenerates with reference-clip
 * conditioning to confirm the two waveforms differ.
 *
 * Usage: npm run roundtrip [-- http://127.0.0.1:8080 [clipId]]
 * Exits nonzero when the sync report comes back under 80%.
 */

import { Client } from "../src/api.js";
import { pollJob } from "../src/backoff.js";
import { applyEdit, assertInvariants, createTimeline } from "../src/timeline.js";
import { readVideoNpz } from "../src/npz.js";

const baseUrl = process.argv[2] ?? process.env.SERVICE_URL ?? "http://127.0.0.1:8080";
const wantedClip = process.argv[3];

function fail(msg: string): never {
  console.error(`FAIL: ${msg}`);
  process.exit(1);
}

async function generateAndWait(
  client: Client,
  duration: number,
  onsets: number[],
  conditioning: { modality: "text" | "audio"; payload: string },
) {
  const jobId = await client.generate({ duration, onsets, conditioning });
  console.log(`  job ${jobId} (${conditioning.modality}: ${conditioning.payload})`);
  const done = await pollJob(client, jobId, { initialMs: 500, maxMs: 3000 });
  return done.result;
}

async function main(): Promise<void> {
  const client = new Client(baseUrl);
  const clips = await client.listClips();
  if (clips.length === 0) fail("service has no clips");
  const clip = wantedClip
    ? clips.find((c) => c.id === wantedClip) ?? fail(`no clip ${wantedClip}`)
    : clips.find((c) => c.n_onsets >= 4) ?? clips[0]!;
  console.log(`clip ${clip.id}: ${clip.duration}s @ ${clip.fps}fps, ${clip.n_onsets} detected onsets`);

  const video = await readVideoNpz(await client.fetchVideo(clip.id));
  if (Math.abs(video.fps - clip.fps) > 1e-6) fail(`npz fps ${video.fps} != listed ${clip.fps}`);
  if (video.shape[0] !== clip.n_frames) fail(`npz frames ${video.shape[0]} != listed ${clip.n_frames}`);
  console.log(`video ok: ${video.shape.join("x")}`);

  const onsets = await client.clipOnsets(clip.id);
  let state = createTimeline(clip.id, clip.duration, clip.fps, onsets.onsets);
  if (state.markers.length < 2) fail(`need >=2 markers to halve, got ${state.markers.length}`);

  // delete every other marker, back to front so indices stay valid
  for (let i = state.markers.length - 1; i >= 0; i -= 2) {
    const r = applyEdit(state, { type: "delete", index: i });
    if (r.error) fail(`delete rejected: ${r.error}`);
    state = r.state;
    assertInvariants(state);
  }
  console.log(`markers: ${onsets.onsets.length} -> ${state.markers.length} after edit`);

  const textResult = await generateAndWait(client, clip.duration, state.markers, {
    modality: "text",
    payload: "metal hit",
  });
  const rate = textResult.sync_rate;
  console.log(
    `sync report: ${textResult.extracted_onsets.length} extracted vs ` +
      `${textResult.requested_onsets.length} requested, rate=${rate} ` +
      `(tol ${textResult.tolerance * 1000}ms)`,
  );
  if (textResult.requested_onsets.length !== state.markers.length) {
    fail("server echoed a different marker list");
  }
  if (rate === null || rate < 0.8) fail(`sync rate ${rate} below 0.80`);

  // same markers, different conditioning: waveforms must differ
  const refClip = clips.find((c) => c.id !== clip.id) ?? clip;
  const audioResult = await generateAndWait(client, clip.duration, state.markers, {
    modality: "audio",
    payload: refClip.id,
  });
  const wavA = new Uint8Array(await (await fetch(baseUrl + textResult.audio_url)).arrayBuffer());
  const wavB = new Uint8Array(await (await fetch(baseUrl + audioResult.audio_url)).arrayBuffer());
  const identical = wavA.length === wavB.length && wavA.every((b, i) => b === wavB[i]);
  if (identical) fail("text and reference conditioning produced identical audio");
  console.log(`conditioning contrast ok: ${wavA.length} vs ${wavB.length} byte WAVs differ`);

  console.log("PASS: round trip sync >= 80% after deleting half the markers");
}

main().catch((err) => fail(String(err)));
