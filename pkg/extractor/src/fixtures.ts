/**
 * Deterministic image-caption fixture generator used by the tests and the
 * demo flow: colored shapes on colored backgrounds, with captions that
 * describe them.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { PNG } from "pngjs";

const COLORS: Array<[string, [number, number, number]]> = [
  ["red", [200, 40, 40]],
  ["green", [40, 170, 60]],
  ["blue", [40, 70, 200]],
  ["yellow", [220, 200, 50]],
  ["purple", [140, 60, 170]],
  ["orange", [230, 130, 30]],
  ["teal", [30, 150, 150]],
  ["gray", [120, 120, 120]],
];

const SHAPES = ["square", "circle", "cross"] as const;

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

function drawShape(
  png: PNG,
  shape: (typeof SHAPES)[number],
  color: [number, number, number],
  cx: number,
  cy: number,
  r: number,
): void {
  for (let y = 0; y < png.height; y++) {
    for (let x = 0; x < png.width; x++) {
      let inside = false;
      if (shape === "square") {
        inside = Math.abs(x - cx) <= r && Math.abs(y - cy) <= r;
      } else if (shape === "circle") {
        inside = (x - cx) ** 2 + (y - cy) ** 2 <= r * r;
      } else {
        inside =
          (Math.abs(x - cx) <= Math.ceil(r / 3) && Math.abs(y - cy) <= r) ||
          (Math.abs(y - cy) <= Math.ceil(r / 3) && Math.abs(x - cx) <= r);
      }
      if (inside) {
        const o = (y * png.width + x) * 4;
        png.data[o] = color[0];
        png.data[o + 1] = color[1];
        png.data[o + 2] = color[2];
        png.data[o + 3] = 255;
      }
    }
  }
}

export function generateFixtures(
  dir: string,
  count: number,
  seed = 7,
  size = 48,
): { imagesDir: string; captionsFile: string } {
  const imagesDir = path.join(dir, "images");
  fs.mkdirSync(imagesDir, { recursive: true });
  const next = prng(seed);
  const captions: Record<string, string> = {};
  for (let i = 0; i < count; i++) {
    const [bgName, bg] = COLORS[Math.floor(next() * COLORS.length)];
    let [fgName, fg] = COLORS[Math.floor(next() * COLORS.length)];
    if (fgName === bgName) {
      const alt = COLORS[(COLORS.findIndex(([n]) => n === fgName) + 1) % COLORS.length];
      fgName = alt[0];
      fg = alt[1];
    }
    const shape = SHAPES[Math.floor(next() * SHAPES.length)];
    const png = new PNG({ width: size, height: size });
    for (let p = 0; p < size * size; p++) {
      png.data[p * 4] = bg[0];
      png.data[p * 4 + 1] = bg[1];
      png.data[p * 4 + 2] = bg[2];
      png.data[p * 4 + 3] = 255;
    }
    const cx = 10 + Math.floor(next() * (size - 20));
    const cy = 10 + Math.floor(next() * (size - 20));
    const r = 5 + Math.floor(next() * 8);
    drawShape(png, shape, fg, cx, cy, r);
    const id = `pair-${String(i).padStart(5, "0")}`;
    fs.writeFileSync(path.join(imagesDir, `${id}.png`), PNG.sync.write(png));
    captions[id] = `a ${fgName} ${shape} on a ${bgName} background`;
  }
  const captionsFile = path.join(dir, "captions.json");
  fs.writeFileSync(captionsFile, JSON.stringify(captions, null, 2));
  return { imagesDir, captionsFile };
}
