/**
 * Dual-encoder backends.
 *
 * The built-in "mock-clip/<dim>" backend is fully deterministic and runs
 * offline: text features are hashed token/bigram vectors, image features
 * are a fixed random projection of patch color statistics. It stands in
 * for a real CLIP-family checkpoint in environments without model
 * downloads; a real backend plugs in behind the same interface (encode
 * raw pre-normalization float32 vectors, eval-mode determinism).
 */

import { PNG } from "pngjs";

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA bytes from pngjs. */
  data: Buffer;
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** Stable digest of the preprocessing pipeline, for the metadata sidecar. */
  readonly preprocessingHash: string;
  encodeText(text: string): Float32Array;
  encodeImage(image: DecodedImage): Float32Array;
}

function fnv1a(text: string, seed: number): number {
  let h = (0x811c9dc5 ^ seed) >>> 0;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: tiny deterministic PRNG over a 32-bit state. */
function prng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function hashVector(key: string, dim: number): Float32Array {
  const next = prng(fnv1a(key, 0xa5a5a5a5));
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    out[i] = 2.0 * next() - 1.0;
  }
  return out;
}

function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^a-z0-9]+/)
    .filter((t) => t.length > 0);
}

const DESCRIPTOR_SPEC =
  "rgba->quadrant-mean-std(rgb)+global-mean-std(rgb)+hist8(rgb)+grad-energy:v1";

function imageDescriptor(image: DecodedImage): number[] {
  const { width, height, data } = image;
  const desc: number[] = [];
  const quadStats = (x0: number, y0: number, x1: number, y1: number) => {
    const sums = [0, 0, 0];
    const sq = [0, 0, 0];
    let n = 0;
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        const o = (y * width + x) * 4;
        for (let c = 0; c < 3; c++) {
          const v = data[o + c] / 255;
          sums[c] += v;
          sq[c] += v * v;
        }
        n++;
      }
    }
    for (let c = 0; c < 3; c++) {
      const mean = sums[c] / n;
      desc.push(mean, Math.sqrt(Math.max(sq[c] / n - mean * mean, 0)));
    }
  };
  const mx = Math.floor(width / 2);
  const my = Math.floor(height / 2);
  quadStats(0, 0, mx, my);
  quadStats(mx, 0, width, my);
  quadStats(0, my, mx, height);
  quadStats(mx, my, width, height);
  quadStats(0, 0, width, height);

  const hist = new Array<number>(24).fill(0);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const bin = Math.min(7, Math.floor((data[i * 4 + c] / 256) * 8));
      hist[c * 8 + bin] += 1;
    }
  }
  for (const h of hist) desc.push(h / (width * height));

  let gx = 0;
  let gy = 0;
  for (let y = 0; y < height - 1; y++) {
    for (let x = 0; x < width - 1; x++) {
      const o = (y * width + x) * 4;
      const right = o + 4;
      const down = o + width * 4;
      for (let c = 0; c < 3; c++) {
        gx += Math.abs(data[right + c] - data[o + c]) / 255;
        gy += Math.abs(data[down + c] - data[o + c]) / 255;
      }
    }
  }
  const pixels = (width - 1) * (height - 1) * 3;
  desc.push(gx / pixels, gy / pixels);
  return desc;
}

class MockClip implements Encoder {
  readonly name: string;
  readonly dim: number;
  readonly preprocessingHash: string;
  private projection: Float32Array[] | null = null;

  constructor(dim: number) {
    this.name = `mock-clip/${dim}`;
    this.dim = dim;
    this.preprocessingHash = fnv1a(DESCRIPTOR_SPEC, 0x13579bdf)
      .toString(16)
      .padStart(8, "0");
  }

  encodeText(text: string): Float32Array {
    const tokens = tokenize(text);
    if (tokens.length === 0) {
      throw new Error("cannot encode an empty caption");
    }
    const out = new Float32Array(this.dim);
    for (const token of tokens) {
      const vec = hashVector(`txt:${token}`, this.dim);
      for (let i = 0; i < this.dim; i++) out[i] += vec[i];
    }
    for (let k = 0; k + 1 < tokens.length; k++) {
      const vec = hashVector(`txt2:${tokens[k]}_${tokens[k + 1]}`, this.dim);
      for (let i = 0; i < this.dim; i++) out[i] += 0.5 * vec[i];
    }
    return out;
  }

  encodeImage(image: DecodedImage): Float32Array {
    const desc = imageDescriptor(image);
    if (this.projection === null || this.projection[0].length !== desc.length) {
      this.projection = [];
      for (let j = 0; j < this.dim; j++) {
        this.projection.push(hashVector(`img-proj:${j}`, desc.length));
      }
    }
    const out = new Float32Array(this.dim);
    for (let j = 0; j < this.dim; j++) {
      let acc = 0;
      const row = this.projection[j];
      for (let k = 0; k < desc.length; k++) acc += row[k] * desc[k];
      out[j] = acc;
    }
    return out;
  }
}

export function decodePng(buffer: Buffer): DecodedImage {
  const png = PNG.sync.read(buffer);
  return { width: png.width, height: png.height, data: png.data };
}

export function createEncoder(model: string): Encoder {
  const match = /^mock-clip\/(\d+)$/.exec(model);
  if (match) {
    const dim = parseInt(match[1], 10);
    if (dim < 2) throw new Error(`mock-clip dim must be >= 2, got ${dim}`);
    return new MockClip(dim);
  }
  throw new Error(
    `unknown model ${JSON.stringify(model)}; built-in backends: mock-clip/<dim>`,
  );
}
