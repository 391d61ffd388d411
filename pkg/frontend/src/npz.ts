/** Minimal reader for the server's .npz video payload.
 *
 * An npz is a zip archive of .npy members. We only need the two members the
 * service ships (frames: uint8 [T,H,W,3], fps: float64 scalar), so this
 * walks the central directory, inflates with DecompressionStream, and parses
 * the npy header dict with a regex. No dependency needed for that.
 */

export interface NpyArray {
  dtype: string;
  shape: number[];
  data: Uint8Array | Float32Array | Float64Array | BigInt64Array;
}

export interface VideoData {
  frames: Uint8Array; // T*H*W*3, C-order
  shape: [number, number, number, number];
  fps: number;
}

function u16(view: DataView, off: number): number {
  return view.getUint16(off, true);
}

function u32(view: DataView, off: number): number {
  return view.getUint32(off, true);
}

interface ZipEntry {
  name: string;
  method: number;
  compressedSize: number;
  headerOffset: number;
}

function readCentralDirectory(buf: ArrayBuffer): ZipEntry[] {
  const view = new DataView(buf);
  // EOCD: scan back past an optional trailing comment
  let eocd = -1;
  for (let i = buf.byteLength - 22; i >= 0; i--) {
    if (u32(view, i) === 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) throw new Error("not a zip: no end-of-central-directory");
  const count = u16(view, eocd + 10);
  let off = u32(view, eocd + 16);
  const entries: ZipEntry[] = [];
  for (let i = 0; i < count; i++) {
    if (u32(view, off) !== 0x02014b50) throw new Error("bad central directory entry");
    const method = u16(view, off + 10);
    const compressedSize = u32(view, off + 20);
    const nameLen = u16(view, off + 28);
    const extraLen = u16(view, off + 30);
    const commentLen = u16(view, off + 32);
    const headerOffset = u32(view, off + 42);
    const name = new TextDecoder().decode(new Uint8Array(buf, off + 46, nameLen));
    entries.push({ name, method, compressedSize, headerOffset });
    off += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}

async function inflateRaw(bytes: Uint8Array): Promise<Uint8Array> {
  const ds = new DecompressionStream("deflate-raw");
  const stream = new Blob([bytes as BlobPart]).stream().pipeThrough(ds);
  const out = new Uint8Array(await new Response(stream).arrayBuffer());
  return out;
}

async function extractEntry(buf: ArrayBuffer, entry: ZipEntry): Promise<Uint8Array> {
  const view = new DataView(buf);
  const off = entry.headerOffset;
  if (u32(view, off) !== 0x04034b50) throw new Error(`bad local header for ${entry.name}`);
  // local extra field can differ from the central one, so re-read lengths
  const nameLen = u16(view, off + 26);
  const extraLen = u16(view, off + 28);
  const start = off + 30 + nameLen + extraLen;
  const raw = new Uint8Array(buf, start, entry.compressedSize);
  if (entry.method === 0) return new Uint8Array(raw); // stored
  if (entry.method === 8) return inflateRaw(raw);
  throw new Error(`unsupported compression method ${entry.method}`);
}

export function parseNpy(bytes: Uint8Array): NpyArray {
  const magic = new TextDecoder("latin1").decode(bytes.subarray(0, 6));
  if (magic !== "\x93NUMPY") throw new Error("not an npy file");
  const major = bytes[6]!;
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let headerLen: number;
  let headerStart: number;
  if (major === 1) {
    headerLen = view.getUint16(8, true);
    headerStart = 10;
  } else {
    headerLen = view.getUint32(8, true);
    headerStart = 12;
  }
  const header = new TextDecoder().decode(
    bytes.subarray(headerStart, headerStart + headerLen),
  );
  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeStr = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shapeStr === undefined) {
    throw new Error(`unparseable npy header: ${header}`);
  }
  if (fortran === "True") throw new Error("fortran-order arrays not supported");
  const shape = shapeStr
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));

  const body = bytes.subarray(headerStart + headerLen);
  // copy so the typed array is aligned and independent of the zip buffer
  const aligned = new Uint8Array(body.length);
  aligned.set(body);
  let data: NpyArray["data"];
  switch (descr) {
    case "|u1":
      data = aligned;
      break;
    case "<f4":
      data = new Float32Array(aligned.buffer);
      break;
    case "<f8":
      data = new Float64Array(aligned.buffer);
      break;
    case "<i8":
      data = new BigInt64Array(aligned.buffer);
      break;
    default:
      throw new Error(`unsupported dtype ${descr}`);
  }
  return { dtype: descr, shape, data };
}

export async function readNpz(buf: ArrayBuffer): Promise<Map<string, NpyArray>> {
  const out = new Map<string, NpyArray>();
  for (const entry of readCentralDirectory(buf)) {
    const bytes = await extractEntry(buf, entry);
    const name = entry.name.endsWith(".npy") ? entry.name.slice(0, -4) : entry.name;
    out.set(name, parseNpy(bytes));
  }
  return out;
}

export async function readVideoNpz(buf: ArrayBuffer): Promise<VideoData> {
  const members = await readNpz(buf);
  const frames = members.get("frames");
  const fps = members.get("fps");
  if (!frames || !fps) throw new Error("npz missing frames/fps members");
  if (frames.shape.length !== 4 || frames.shape[3] !== 3) {
    throw new Error(`expected [T,H,W,3] frames, got ${frames.shape}`);
  }
  const fpsValue = fps.data instanceof Float64Array ? fps.data[0]! : Number(fps.data[0]!);
  return {
    frames: frames.data as Uint8Array,
    shape: frames.shape as [number, number, number, number],
    fps: fpsValue,
  };
}
