import { deflateRawSync } from "node:zlib";
import { describe, expect, it } from "vitest";
import { parseNpy, readNpz, readVideoNpz } from "../src/npz.js";

/** Serialize an npy buffer the way numpy's format spec describes it. */
function npyBytes(descr: string, shape: number[], data: Uint8Array, version = 1): Uint8Array {
  const shapeStr =
    shape.length === 0 ? "()" : shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${descr}', 'fortran_order': False, 'shape': ${shapeStr}, }`;
  const prefix = version === 1 ? 10 : 12;
  const pad = (64 - ((prefix + header.length + 1) % 64)) % 64;
  header = header + " ".repeat(pad) + "\n";
  const out = new Uint8Array(prefix + header.length + data.length);
  out.set([0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59, version, 0]);
  const view = new DataView(out.buffer);
  if (version === 1) view.setUint16(8, header.length, true);
  else view.setUint32(8, header.length, true);
  for (let i = 0; i < header.length; i++) out[prefix + i] = header.charCodeAt(i);
  out.set(data, prefix + header.length);
  return out;
}

interface Member {
  name: string;
  data: Uint8Array;
  method: 0 | 8;
}

/** Hand-rolled zip writer covering exactly the layout np.savez produces
 * (local headers, central directory, EOCD). CRCs are zeroed; the reader
 * does not verify them. */
function buildZip(members: Member[], comment = ""): ArrayBuffer {
  const chunks: Uint8Array[] = [];
  const central: Uint8Array[] = [];
  let offset = 0;
  for (const m of members) {
    const name = new TextEncoder().encode(m.name);
    const payload = m.method === 8 ? new Uint8Array(deflateRawSync(m.data)) : m.data;

    const local = new Uint8Array(30 + name.length);
    const lv = new DataView(local.buffer);
    lv.setUint32(0, 0x04034b50, true);
    lv.setUint16(4, 20, true);
    lv.setUint16(8, m.method, true);
    lv.setUint32(18, payload.length, true);
    lv.setUint32(22, m.data.length, true);
    lv.setUint16(26, name.length, true);
    local.set(name, 30);
    chunks.push(local, payload);

    const cd = new Uint8Array(46 + name.length);
    const cv = new DataView(cd.buffer);
    cv.setUint32(0, 0x02014b50, true);
    cv.setUint16(10, m.method, true);
    cv.setUint32(20, payload.length, true);
    cv.setUint32(24, m.data.length, true);
    cv.setUint16(28, name.length, true);
    cv.setUint32(42, offset, true);
    cd.set(name, 46);
    central.push(cd);
    offset += local.length + payload.length;
  }
  const cdSize = central.reduce((n, c) => n + c.length, 0);
  const commentBytes = new TextEncoder().encode(comment);
  const eocd = new Uint8Array(22 + commentBytes.length);
  const ev = new DataView(eocd.buffer);
  ev.setUint32(0, 0x06054b50, true);
  ev.setUint16(8, members.length, true);
  ev.setUint16(10, members.length, true);
  ev.setUint32(12, cdSize, true);
  ev.setUint32(16, offset, true);
  ev.setUint16(20, commentBytes.length, true);
  eocd.set(commentBytes, 22);

  const total = [...chunks, ...central, eocd];
  const buf = new Uint8Array(total.reduce((n, c) => n + c.length, 0));
  let pos = 0;
  for (const c of total) {
    buf.set(c, pos);
    pos += c.length;
  }
  return buf.buffer;
}

const frameValues = Uint8Array.from({ length: 2 * 2 * 2 * 3 }, (_, i) => i * 3);
const fpsValue = new Uint8Array(new Float64Array([15.0]).buffer);

describe("parseNpy", () => {
  it("reads a v1 uint8 array", () => {
    const arr = parseNpy(npyBytes("|u1", [2, 2, 2, 3], frameValues));
    expect(arr.dtype).toBe("|u1");
    expect(arr.shape).toEqual([2, 2, 2, 3]);
    expect(Array.from(arr.data as Uint8Array)).toEqual(Array.from(frameValues));
  });

  it("reads a v2 header (32-bit length field)", () => {
    const arr = parseNpy(npyBytes("<f8", [], fpsValue, 2));
    expect(arr.shape).toEqual([]);
    expect((arr.data as Float64Array)[0]).toBe(15.0);
  });

  it("reads float32 and int64 payloads", () => {
    const f = new Float32Array([1.5, -2.25, 3]);
    const got = parseNpy(npyBytes("<f4", [3], new Uint8Array(f.buffer)));
    expect(Array.from(got.data as Float32Array)).toEqual([1.5, -2.25, 3]);

    const i = new BigInt64Array([-7n, 42n]);
    const gotI = parseNpy(npyBytes("<i8", [2], new Uint8Array(i.buffer)));
    expect(Array.from(gotI.data as BigInt64Array)).toEqual([-7n, 42n]);
  });

  it("rejects non-npy bytes, fortran order, and unknown dtypes", () => {
    expect(() => parseNpy(new Uint8Array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10]))).toThrow(/npy/);
    const fortran = npyBytes("|u1", [2], new Uint8Array([1, 2]));
    const text = new TextDecoder("latin1").decode(fortran);
    const flipped = Uint8Array.from(text.replace("False", "True "), (c) => c.charCodeAt(0));
    expect(() => parseNpy(flipped)).toThrow(/fortran/);
    expect(() => parseNpy(npyBytes("<c16", [1], new Uint8Array(16)))).toThrow(/dtype/);
  });
});

describe("readNpz", () => {
  it("extracts deflated and stored members by name", async () => {
    const zip = buildZip([
      { name: "frames.npy", data: npyBytes("|u1", [2, 2, 2, 3], frameValues), method: 8 },
      { name: "fps.npy", data: npyBytes("<f8", [], fpsValue), method: 0 },
    ]);
    const members = await readNpz(zip);
    expect([...members.keys()].sort()).toEqual(["fps", "frames"]);
    expect(members.get("frames")!.shape).toEqual([2, 2, 2, 3]);
    expect((members.get("fps")!.data as Float64Array)[0]).toBe(15.0);
  });

  it("finds the directory behind a trailing archive comment", async () => {
    const zip = buildZip(
      [{ name: "fps.npy", data: npyBytes("<f8", [], fpsValue), method: 8 }],
      "written by a test",
    );
    const members = await readNpz(zip);
    expect((members.get("fps")!.data as Float64Array)[0]).toBe(15.0);
  });

  it("rejects non-zip data", async () => {
    await expect(readNpz(new Uint8Array(64).buffer)).rejects.toThrow(/zip/);
  });
});

describe("readVideoNpz", () => {
  it("returns frames, shape, and fps together", async () => {
    const zip = buildZip([
      { name: "frames.npy", data: npyBytes("|u1", [2, 2, 2, 3], frameValues), method: 8 },
      { name: "fps.npy", data: npyBytes("<f8", [], fpsValue), method: 8 },
    ]);
    const video = await readVideoNpz(zip);
    expect(video.shape).toEqual([2, 2, 2, 3]);
    expect(video.fps).toBe(15.0);
    expect(video.frames[5]).toBe(frameValues[5]);
  });

  it("rejects an archive missing the frames member", async () => {
    const zip = buildZip([{ name: "fps.npy", data: npyBytes("<f8", [], fpsValue), method: 8 }]);
    await expect(readVideoNpz(zip)).rejects.toThrow(/missing/);
  });

  it("rejects frames that are not [T,H,W,3]", async () => {
    const zip = buildZip([
      { name: "frames.npy", data: npyBytes("|u1", [4, 3, 2], new Uint8Array(24)), method: 8 },
      { name: "fps.npy", data: npyBytes("<f8", [], fpsValue), method: 8 },
    ]);
    await expect(readVideoNpz(zip)).rejects.toThrow(/T,H,W,3/);
  });
});
