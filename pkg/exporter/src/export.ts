/**
 * Export pipelines: image directories and class-name prompts into
 * OODEMB1 files, each with a JSON manifest beside it. The manifest pins
 * everything needed to re-export: checkpoint id, preprocessing, dataset
 * root, class list, template, normalization. Row order follows the
 * sorted file listing so re-exports are deterministic.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import { EmbeddingBackend } from "./backend.js";
import { EmbeddingFile, NO_LABEL, encodeOodemb } from "./oodemb.js";

export class MissingClassDirError extends Error {}

export interface ExportManifest {
  model: string;
  preprocessing: string;
  dataset_root: string | null;
  classes: string[];
  template: string | null;
  normalized: boolean;
  count: number;
}

const IMAGE_EXTENSIONS = new Set([".jpg", ".jpeg", ".png", ".bmp", ".webp", ".gif"]);

async function listImages(dir: string): Promise<string[]> {
  const entries = await fs.readdir(dir, { withFileTypes: true });
  return entries
    .filter((e) => e.isFile() && IMAGE_EXTENSIONS.has(path.extname(e.name).toLowerCase()))
    .map((e) => e.name)
    .sort();
}

export interface ImageExportOptions {
  unlabeled?: boolean;
}

export async function exportImages(
  backend: EmbeddingBackend,
  datasetRoot: string,
  classes: string[],
  outPath: string,
  options: ImageExportOptions = {},
): Promise<ExportManifest> {
  const vectors: Float32Array[] = [];
  const labels: number[] = [];

  for (const [index, className] of classes.entries()) {
    const dir = path.join(datasetRoot, className);
    let files: string[];
    try {
      files = await listImages(dir);
    } catch {
      throw new MissingClassDirError(`class directory does not exist: ${dir}`);
    }
    for (const name of files) {
      const bytes = await fs.readFile(path.join(dir, name));
      vectors.push(await backend.embedImage(bytes));
      labels.push(options.unlabeled ? NO_LABEL : index);
    }
  }

  const data: EmbeddingFile = {
    dim: backend.dim,
    classes,
    modality: "image",
    normalized: true,
    vectors,
    labels,
  };
  await fs.writeFile(outPath, encodeOodemb(data));
  const manifest: ExportManifest = {
    model: backend.modelId,
    preprocessing: backend.preprocessing,
    dataset_root: datasetRoot,
    classes,
    template: null,
    normalized: true,
    count: vectors.length,
  };
  await writeManifest(outPath, manifest);
  return manifest;
}

export async function exportText(
  backend: EmbeddingBackend,
  classes: string[],
  template: string,
  outPath: string,
): Promise<ExportManifest> {
  const vectors: Float32Array[] = [];
  for (const className of classes) {
    vectors.push(await backend.embedText(renderTemplate(template, className)));
  }
  const data: EmbeddingFile = {
    dim: backend.dim,
    classes,
    modality: "text",
    normalized: true,
    vectors,
    labels: classes.map((_, i) => i),
  };
  await fs.writeFile(outPath, encodeOodemb(data));
  const manifest: ExportManifest = {
    model: backend.modelId,
    preprocessing: backend.preprocessing,
    dataset_root: null,
    classes,
    template,
    normalized: true,
    count: classes.length,
  };
  await writeManifest(outPath, manifest);
  return manifest;
}

export function renderTemplate(template: string, className: string): string {
  if (!template.includes("{}")) {
    throw new Error(`template must contain a {} placeholder: ${template}`);
  }
  return template.replaceAll("{}", className);
}

export function manifestPath(outPath: string): string {
  return `${outPath}.manifest.json`;
}

async function writeManifest(outPath: string, manifest: ExportManifest): Promise<void> {
  await fs.writeFile(manifestPath(outPath), JSON.stringify(manifest, null, 2) + "\n");
}
