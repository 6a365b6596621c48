/**
 * EMB1 binary tables, wire-compatible with the refine-kit loader.
 *
 * Layout (little-endian): magic "EMB1", u32 version = 1, u64 count,
 * u32 dim, u32 dtype code (0 = float32), then count*dim float32 values
 * row-major, then a UTF-8 JSON trailer {"crc32": <u32>, "ids": [...]}.
 */

import * as fs from "node:fs";

const MAGIC = Buffer.from("EMB1", "ascii");
const HEADER_SIZE = 24;
const VERSION = 1;
const DTYPE_FLOAT32 = 0;

let CRC_TABLE: Uint32Array | null = null;

function crcTable(): Uint32Array {
  if (CRC_TABLE) return CRC_TABLE;
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  CRC_TABLE = table;
  return table;
}

export function crc32(buf: Buffer): number {
  const table = crcTable();
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = table[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export interface EmbeddingTable {
  ids: string[];
  dim: number;
  /** count * dim values, row-major. */
  data: Float32Array;
}

export function writeTable(path: string, table: EmbeddingTable): void {
  const count = table.ids.length;
  if (count < 1 || table.dim < 1) {
    throw new Error(`table must be non-empty, got ${count}x${table.dim}`);
  }
  if (table.data.length !== count * table.dim) {
    throw new Error(
      `data length ${table.data.length} != count*dim ${count * table.dim}`,
    );
  }
  for (let i = 0; i < table.data.length; i++) {
    if (!Number.isFinite(table.data[i])) {
      throw new Error(`non-finite value in row ${Math.floor(i / table.dim)}`);
    }
  }
  const seen = new Set<string>();
  for (const id of table.ids) {
    if (seen.has(id)) throw new Error(`duplicate id ${JSON.stringify(id)}`);
    seen.add(id);
  }

  const header = Buffer.alloc(HEADER_SIZE);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 4);
  header.writeBigUInt64LE(BigInt(count), 8);
  header.writeUInt32LE(table.dim, 16);
  header.writeUInt32LE(DTYPE_FLOAT32, 20);

  const payload = Buffer.alloc(table.data.length * 4);
  for (let i = 0; i < table.data.length; i++) {
    payload.writeFloatLE(table.data[i], i * 4);
  }
  // Keys sorted, matching the primary writer byte-for-byte.
  const trailer = Buffer.from(
    JSON.stringify({ crc32: crc32(payload), ids: table.ids }),
    "utf-8",
  );
  const tmp = `${path}.tmp.${process.pid}`;
  fs.writeFileSync(tmp, Buffer.concat([header, payload, trailer]));
  fs.renameSync(tmp, path);
}

export function readTable(path: string): EmbeddingTable {
  const blob = fs.readFileSync(path);
  if (blob.length < HEADER_SIZE) throw new Error(`${path}: truncated header`);
  if (!blob.subarray(0, 4).equals(MAGIC)) throw new Error(`${path}: bad magic`);
  if (blob.readUInt32LE(4) !== VERSION) throw new Error(`${path}: bad version`);
  const count = Number(blob.readBigUInt64LE(8));
  const dim = blob.readUInt32LE(16);
  if (blob.readUInt32LE(20) !== DTYPE_FLOAT32) {
    throw new Error(`${path}: unsupported dtype`);
  }
  const dataEnd = HEADER_SIZE + count * dim * 4;
  if (blob.length < dataEnd) throw new Error(`${path}: truncated data block`);
  const payload = blob.subarray(HEADER_SIZE, dataEnd);
  const trailer = JSON.parse(blob.subarray(dataEnd).toString("utf-8"));
  if (crc32(payload) !== trailer.crc32) throw new Error(`${path}: checksum mismatch`);
  if (!Array.isArray(trailer.ids) || trailer.ids.length !== count) {
    throw new Error(`${path}: trailer ids disagree with count`);
  }
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = payload.readFloatLE(i * 4);
  }
  return { ids: trailer.ids.map(String), dim, data };
}

export interface ManifestPair {
  image: string;
  text: string;
}

export function writeManifest(path: string, pairs: ManifestPair[]): void {
  const doc = { pairs: pairs.map((p) => ({ image: p.image, text: p.text })) };
  const tmp = `${path}.tmp.${process.pid}`;
  fs.writeFileSync(tmp, JSON.stringify(doc));
  fs.renameSync(tmp, path);
}
