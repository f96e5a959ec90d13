#!/usr/bin/env node
/**
 * oodemb-export: bridge real vision-language checkpoints into OODEMB1.
 *
 *   export-images --root DIR --classes a,b,c --out file.oodemb
 *                 [--unlabeled] [--backend clip|stub] [--model ID] [--stub-dim N]
 *   export-text   --classes a,b,c --template "a photo of a {}" --out file.oodemb
 *                 [--backend clip|stub] [--model ID] [--stub-dim N]
 *
 * --classes accepts a comma-separated list or @file (one name per line).
 * Exit codes: 0 ok, 1 export failure, 2 usage error.
 */

import { promises as fs } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { parseArgs } from "node:util";

import { CheckpointLoadError, loadBackend } from "./backend.js";
import { MissingClassDirError, exportImages, exportText, manifestPath } from "./export.js";

const USAGE = `usage:
  oodemb-export export-images --root DIR --classes a,b,c --out FILE [--unlabeled]
                              [--backend clip|stub] [--model ID] [--stub-dim N]
  oodemb-export export-text   --classes a,b,c --template "a photo of a {}" --out FILE
                              [--backend clip|stub] [--model ID] [--stub-dim N]`;

async function parseClasses(value: string): Promise<string[]> {
  let names: string[];
  if (value.startsWith("@")) {
    const body = await fs.readFile(value.slice(1), "utf-8");
    names = body.split("\n").map((s) => s.trim()).filter(Boolean);
  } else {
    names = value.split(",").map((s) => s.trim()).filter(Boolean);
  }
  if (names.length === 0) {
    throw new UsageError("--classes resolved to an empty list");
  }
  return names;
}

class UsageError extends Error {}

async function run(argv: string[]): Promise<number> {
  const command = argv[0];
  if (command !== "export-images" && command !== "export-text") {
    throw new UsageError(`unknown command: ${command ?? "(none)"}`);
  }
  const { values } = parseArgs({
    args: argv.slice(1),
    options: {
      root: { type: "string" },
      classes: { type: "string" },
      out: { type: "string" },
      template: { type: "string", default: "a photo of a {}" },
      unlabeled: { type: "boolean", default: false },
      backend: { type: "string", default: "clip" },
      model: { type: "string" },
      "stub-dim": { type: "string" },
    },
  });

  if (!values.classes || !values.out) {
    throw new UsageError("--classes and --out are required");
  }
  if (values.backend !== "clip" && values.backend !== "stub") {
    throw new UsageError(`--backend must be clip or stub, got ${values.backend}`);
  }
  if (command === "export-images" && !values.root) {
    throw new UsageError("export-images requires --root");
  }
  const classes = await parseClasses(values.classes);
  const backend = await loadBackend(
    values.backend,
    values.model,
    values["stub-dim"] ? Number(values["stub-dim"]) : undefined,
  );

  if (command === "export-images") {
    const manifest = await exportImages(backend, values.root!, classes, values.out, {
      unlabeled: values.unlabeled,
    });
    console.log(`wrote ${manifest.count} image embeddings to ${values.out}`);
  } else {
    const manifest = await exportText(backend, classes, values.template, values.out);
    console.log(`wrote ${manifest.count} text prototypes to ${values.out}`);
  }
  console.log(`manifest: ${manifestPath(values.out)}`);
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  try {
    return await run(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}\n${USAGE}`);
      return 2;
    }
    if (err instanceof CheckpointLoadError || err instanceof MissingClassDirError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    console.error(`error: ${err}`);
    return 1;
  }
}

const invokedPath = process.argv[1] ? path.resolve(process.argv[1]) : "";
if (invokedPath && fileURLToPath(import.meta.url) === invokedPath) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
