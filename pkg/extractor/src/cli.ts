#!/usr/bin/env node
/**
 * refine-kit-extract: embed an image/caption dataset (or class prompts)
 * into EMB1 tables consumable by the refine-kit CLI.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { extractDataset, extractPrompts } from "./extract";
import { generateFixtures } from "./fixtures";

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      "extract",
      "embed an image directory plus captions file into EMB1 tables",
      (y) =>
        y
          .option("model", { type: "string", default: "mock-clip/64" })
          .option("images", { type: "string", demandOption: true, describe: "directory of .png files" })
          .option("captions", { type: "string", demandOption: true, describe: "JSON {image_id: caption | [captions...]}" })
          .option("out", { type: "string", demandOption: true, describe: "output path prefix" }),
      (argv) => {
        const result = extractDataset({
          model: argv.model,
          imagesDir: argv.images,
          captionsFile: argv.captions,
          outPrefix: argv.out,
        });
        console.log(JSON.stringify(result));
      },
    )
    .command(
      "extract-prompts",
      "embed one prompt per class name into an EMB1 table",
      (y) =>
        y
          .option("model", { type: "string", default: "mock-clip/64" })
          .option("classes", { type: "string", demandOption: true, describe: "file with one class name per line" })
          .option("template", { type: "string", default: "a photo of a {}" })
          .option("out", { type: "string", demandOption: true }),
      (argv) => {
        const result = extractPrompts({
          model: argv.model,
          classesFile: argv.classes,
          template: argv.template,
          outPath: argv.out,
        });
        console.log(JSON.stringify(result));
      },
    )
    .command(
      "gen-fixtures",
      "generate a deterministic shapes-and-captions dataset (for demos and tests)",
      (y) =>
        y
          .option("dir", { type: "string", demandOption: true })
          .option("count", { type: "number", default: 120 })
          .option("seed", { type: "number", default: 7 }),
      (argv) => {
        const result = generateFixtures(argv.dir, argv.count, argv.seed);
        console.log(JSON.stringify(result));
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(err ? `error: ${err.message}` : msg);
      process.exit(1);
    })
    .parseAsync();
}

main();
