/**
 * Minimal NIfTI-1 reader/writer for the toolkit's file subset.
 *
 * Single-file little-endian `.nii` / `.nii.gz`, 3-D, datatypes uint8,
 * int16, int32, float32, float64, no header extensions. Voxel data is
 * kept in file order (x fastest), so a flat buffer with dims
 * [nx, ny, nz] reads as a C-ordered tensor of shape [nz, ny, nx].
 * Writes gzip with a zeroed mtime, so equal volumes yield equal bytes.
 */

import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import { gzipSync, gunzipSync } from "node:zlib";

export const HEADER_SIZE = 348;
const MAGIC = "n+1\0";

export interface NiftiVolume {
  /** voxel values in file order, x fastest */
  data: Float32Array;
  /** [nx, ny, nz] */
  dims: [number, number, number];
  /** voxel size in mm per axis */
  spacing: [number, number, number];
  /** rows of the sform matrix, 3 x 4, row-major */
  srows: Float32Array;
}

export class NiftiError extends Error {}

const DTYPE_BYTES: Record<number, number> = { 2: 1, 4: 2, 8: 4, 16: 4, 64: 8 };

function readPayload(path: string): Buffer {
  let raw = readFileSync(path);
  if (path.endsWith(".gz")) {
    try {
      raw = gunzipSync(raw);
    } catch (err) {
      throw new NiftiError(`${path}: corrupt gzip stream (${err})`);
    }
  }
  return raw;
}

export function readNifti(path: string): NiftiVolume {
  const raw = readPayload(path);
  if (raw.length < HEADER_SIZE + 4) {
    throw new NiftiError(`${path}: file shorter than a NIfTI-1 header`);
  }
  const sizeofHdr = raw.readInt32LE(0);
  if (sizeofHdr !== HEADER_SIZE) {
    throw new NiftiError(`${path}: sizeof_hdr is ${sizeofHdr}, not 348`);
  }
  if (raw.toString("latin1", 344, 348) !== MAGIC) {
    throw new NiftiError(`${path}: bad magic`);
  }

  const ndim = raw.readInt16LE(40);
  const dims: [number, number, number] = [
    raw.readInt16LE(42),
    raw.readInt16LE(44),
    raw.readInt16LE(46),
  ];
  const trailing = raw.readInt16LE(48);
  if (ndim !== 3 && !(ndim === 4 && trailing === 1)) {
    throw new NiftiError(`${path}: dim[0] is ${ndim}, only 3-D supported`);
  }
  if (Math.min(...dims) < 1) {
    throw new NiftiError(`${path}: non-positive dims ${dims}`);
  }

  const datatype = raw.readInt16LE(70);
  const itemBytes = DTYPE_BYTES[datatype];
  if (itemBytes === undefined) {
    throw new NiftiError(`${path}: unsupported datatype code ${datatype}`);
  }

  const spacing: [number, number, number] = [
    raw.readFloatLE(80),
    raw.readFloatLE(84),
    raw.readFloatLE(88),
  ];
  if (!spacing.every((s) => Number.isFinite(s) && s > 0)) {
    throw new NiftiError(`${path}: non-positive pixdim ${spacing}`);
  }

  const voxOffset = Math.round(raw.readFloatLE(108));
  const sclSlope = raw.readFloatLE(112);
  const sclInter = raw.readFloatLE(116);
  const sformCode = raw.readInt16LE(254);

  let srows: Float32Array;
  if (sformCode > 0) {
    srows = new Float32Array(12);
    for (let i = 0; i < 12; i++) srows[i] = raw.readFloatLE(280 + 4 * i);
  } else {
    // diagonal fallback; good enough for files the primary toolkit writes
    srows = new Float32Array([
      spacing[0], 0, 0, 0,
      0, spacing[1], 0, 0,
      0, 0, spacing[2], 0,
    ]);
  }

  const n = dims[0] * dims[1] * dims[2];
  const end = voxOffset + n * itemBytes;
  if (raw.length < end) {
    throw new NiftiError(
      `${path}: truncated data section, expected ${n * itemBytes} bytes`,
    );
  }
  const body = raw.subarray(voxOffset, end);
  const view = new DataView(body.buffer, body.byteOffset, body.byteLength);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    switch (datatype) {
      case 2: data[i] = view.getUint8(i); break;
      case 4: data[i] = view.getInt16(2 * i, true); break;
      case 8: data[i] = view.getInt32(4 * i, true); break;
      case 16: data[i] = view.getFloat32(4 * i, true); break;
      default: data[i] = view.getFloat64(8 * i, true);
    }
  }
  // slope 0 means "no scaling stored"
  if ((sclSlope !== 0 && sclSlope !== 1) || sclInter !== 0) {
    const slope = sclSlope !== 0 ? sclSlope : 1;
    for (let i = 0; i < n; i++) data[i] = data[i] * slope + sclInter;
  }
  return { data, dims, spacing, srows };
}

function buildHeader(
  vol: NiftiVolume,
  datatype: number,
  bitpix: number,
): Buffer {
  const h = Buffer.alloc(HEADER_SIZE);
  h.writeInt32LE(HEADER_SIZE, 0);
  h.write("r", 38, "latin1"); // regular
  h.writeInt16LE(3, 40);
  h.writeInt16LE(vol.dims[0], 42);
  h.writeInt16LE(vol.dims[1], 44);
  h.writeInt16LE(vol.dims[2], 46);
  for (let i = 4; i <= 7; i++) h.writeInt16LE(1, 40 + 2 * i);
  h.writeInt16LE(datatype, 70);
  h.writeInt16LE(bitpix, 72);
  h.writeFloatLE(1, 76); // pixdim[0] (qfac)
  h.writeFloatLE(vol.spacing[0], 80);
  h.writeFloatLE(vol.spacing[1], 84);
  h.writeFloatLE(vol.spacing[2], 88);
  h.writeFloatLE(HEADER_SIZE + 4, 108); // vox_offset
  h.writeFloatLE(1, 112); // scl_slope
  h.writeUInt8(2, 123); // xyzt_units: mm
  h.write("lesionforge-trainer", 148, "latin1"); // descrip
  h.writeInt16LE(0, 252); // qform_code
  h.writeInt16LE(1, 254); // sform_code
  for (let i = 0; i < 12; i++) h.writeFloatLE(vol.srows[i], 280 + 4 * i);
  h.write(MAGIC, 344, "latin1");
  return h;
}

function writeBlob(path: string, blob: Buffer): void {
  mkdirSync(dirname(path), { recursive: true });
  if (path.endsWith(".gz")) {
    const gz = gzipSync(blob);
    gz[9] = 255; // OS byte: unknown, matching the primary toolkit's output
    writeFileSync(path, gz);
  } else {
    writeFileSync(path, blob);
  }
}

/** Write float32 voxel data (probability maps). */
export function writeNifti(path: string, vol: NiftiVolume): void {
  const header = buildHeader(vol, 16, 32);
  const body = Buffer.alloc(vol.data.length * 4);
  for (let i = 0; i < vol.data.length; i++) body.writeFloatLE(vol.data[i], 4 * i);
  writeBlob(path, Buffer.concat([header, Buffer.alloc(4), body]));
}

/** Write uint8 voxel data (binary masks); any nonzero value maps to 1. */
export function writeNiftiMask(path: string, vol: NiftiVolume): void {
  const header = buildHeader(vol, 2, 8);
  const body = Buffer.alloc(vol.data.length);
  for (let i = 0; i < vol.data.length; i++) body[i] = vol.data[i] !== 0 ? 1 : 0;
  writeBlob(path, Buffer.concat([header, Buffer.alloc(4), body]));
}

export function sameGeometry(a: NiftiVolume, b: NiftiVolume, atol = 1e-4): boolean {
  if (a.dims.some((d, i) => d !== b.dims[i])) return false;
  if (a.spacing.some((s, i) => Math.abs(s - b.spacing[i]) > atol)) return false;
  for (let i = 0; i < 12; i++) {
    if (Math.abs(a.srows[i] - b.srows[i]) > atol) return false;
  }
  return true;
}
