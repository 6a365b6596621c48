/**
 * Extraction pipelines: image/caption datasets and class-prompt tables.
 *
 * Outputs are the primary tool's external interfaces: EMB1 tables with
 * raw (pre-normalization) float32 embeddings, a pairing manifest, and a
 * metadata sidecar naming the model, preprocessing hash, and library
 * versions.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { createEncoder, decodePng } from "./encoder";
import { writeManifest, writeTable, type ManifestPair } from "./emb1";

export interface ExtractResult {
  images: string;
  texts: string;
  manifest: string;
  meta: string;
  count: number;
  dim: number;
}

interface CaptionMap {
  [imageId: string]: string | string[];
}

function listImages(imagesDir: string): Array<{ id: string; file: string }> {
  const entries = fs
    .readdirSync(imagesDir)
    .filter((f) => f.toLowerCase().endsWith(".png"))
    .sort();
  if (entries.length === 0) {
    throw new Error(`no .png images found in ${imagesDir}`);
  }
  return entries.map((f) => ({
    id: path.basename(f, path.extname(f)),
    file: path.join(imagesDir, f),
  }));
}

function captionsFor(id: string, captions: CaptionMap): string[] {
  const entry = captions[id];
  if (entry === undefined) {
    throw new Error(`no caption for image id ${JSON.stringify(id)}`);
  }
  const list = Array.isArray(entry) ? entry : [entry];
  if (list.length === 0) {
    throw new Error(`empty caption list for image id ${JSON.stringify(id)}`);
  }
  return list.map(String);
}

function versions(): Record<string, string> {
  const pkg = JSON.parse(
    fs.readFileSync(path.join(__dirname, "..", "package.json"), "utf-8"),
  );
  return {
    node: process.version,
    extractor: pkg.version,
    pngjs: pkg.dependencies?.pngjs ?? "unknown",
  };
}

export function extractDataset(opts: {
  model: string;
  imagesDir: string;
  captionsFile: string;
  outPrefix: string;
}): ExtractResult {
  const encoder = createEncoder(opts.model);
  const captions: CaptionMap = JSON.parse(fs.readFileSync(opts.captionsFile, "utf-8"));
  const images = listImages(opts.imagesDir);

  const imgIds: string[] = [];
  const imgData = new Float32Array(images.length * encoder.dim);
  const txtIds: string[] = [];
  const txtRows: Float32Array[] = [];
  const pairs: ManifestPair[] = [];

  images.forEach((entry, row) => {
    let decoded;
    try {
      decoded = decodePng(fs.readFileSync(entry.file));
    } catch (err) {
      throw new Error(`unreadable image ${JSON.stringify(entry.id)}: ${err}`);
    }
    imgIds.push(entry.id);
    imgData.set(encoder.encodeImage(decoded), row * encoder.dim);
    captionsFor(entry.id, captions).forEach((caption, k) => {
      const textId = `${entry.id}#${k}`;
      txtIds.push(textId);
      txtRows.push(encoder.encodeText(caption));
      pairs.push({ image: entry.id, text: textId });
    });
  });

  const txtData = new Float32Array(txtRows.length * encoder.dim);
  txtRows.forEach((row, i) => txtData.set(row, i * encoder.dim));

  const result: ExtractResult = {
    images: `${opts.outPrefix}-images.emb1`,
    texts: `${opts.outPrefix}-texts.emb1`,
    manifest: `${opts.outPrefix}-manifest.json`,
    meta: `${opts.outPrefix}-meta.json`,
    count: images.length,
    dim: encoder.dim,
  };
  writeTable(result.images, { ids: imgIds, dim: encoder.dim, data: imgData });
  writeTable(result.texts, { ids: txtIds, dim: encoder.dim, data: txtData });
  writeManifest(result.manifest, pairs);
  fs.writeFileSync(
    result.meta,
    JSON.stringify(
      {
        model: encoder.name,
        dim: encoder.dim,
        preprocessing_hash: encoder.preprocessingHash,
        versions: versions(),
      },
      null,
      2,
    ),
  );
  return result;
}

export function extractPrompts(opts: {
  model: string;
  classesFile: string;
  template: string;
  outPath: string;
}): { count: number; dim: number } {
  const encoder = createEncoder(opts.model);
  const classes = fs
    .readFileSync(opts.classesFile, "utf-8")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
  if (classes.length === 0) {
    throw new Error(`no classes found in ${opts.classesFile}`);
  }
  const seen = new Set<string>();
  for (const cls of classes) {
    if (seen.has(cls)) throw new Error(`duplicate class ${JSON.stringify(cls)}`);
    seen.add(cls);
  }
  if (!opts.template.includes("{}")) {
    throw new Error("prompt template must contain {}");
  }
  const data = new Float32Array(classes.length * encoder.dim);
  classes.forEach((cls, row) => {
    data.set(encoder.encodeText(opts.template.replace("{}", cls)), row * encoder.dim);
  });
  writeTable(opts.outPath, { ids: classes, dim: encoder.dim, data });
  return { count: classes.length, dim: encoder.dim };
}
