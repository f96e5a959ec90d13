/**
 * Embedding backends. The real backend runs a pretrained CLIP checkpoint
 * through transformers.js; the stub backend derives deterministic
 * pseudo-embeddings from content hashes and exists so the export
 * pipeline, file format, and engine interop are testable without a
 * checkpoint or network access.
 */

import { createHash } from "node:crypto";

import { l2Normalize } from "./oodemb.js";

export class CheckpointLoadError extends Error {}

export interface EmbeddingBackend {
  /** identifier recorded in the manifest */
  readonly modelId: string;
  /** human-readable preprocessing description for the manifest */
  readonly preprocessing: string;
  readonly dim: number;
  embedImage(bytes: Buffer): Promise<Float32Array>;
  embedText(text: string): Promise<Float32Array>;
}

function hashToUnitVector(seedBytes: Buffer, dim: number): Float32Array {
  const out = new Float32Array(dim);
  let block = Buffer.alloc(0);
  for (let i = 0; i < dim; i++) {
    if (i % 8 === 0) {
      const counter = Buffer.alloc(4);
      counter.writeUInt32LE(i / 8);
      block = createHash("sha256").update(seedBytes).update(counter).digest();
    }
    const u32 = block.readUInt32LE((i % 8) * 4);
    out[i] = (u32 / 2 ** 32) * 2 - 1;
  }
  return l2Normalize(out);
}

export class StubBackend implements EmbeddingBackend {
  readonly modelId: string;
  readonly preprocessing = "sha256 content hash expanded to a unit vector";
  readonly dim: number;

  constructor(dim = 512) {
    this.dim = dim;
    this.modelId = `stub-hash-${dim}`;
  }

  async embedImage(bytes: Buffer): Promise<Float32Array> {
    return hashToUnitVector(createHash("sha256").update("image").update(bytes).digest(), this.dim);
  }

  async embedText(text: string): Promise<Float32Array> {
    return hashToUnitVector(createHash("sha256").update("text").update(text, "utf-8").digest(), this.dim);
  }
}

/** CLIP via transformers.js; the checkpoint is fetched/cached by the library. */
export class ClipBackend implements EmbeddingBackend {
  readonly modelId: string;
  readonly preprocessing: string;
  readonly dim: number;

  private constructor(
    modelId: string,
    dim: number,
    private readonly lib: any,
    private readonly visionModel: any,
    private readonly processor: any,
    private readonly textModel: any,
    private readonly tokenizer: any,
  ) {
    this.modelId = modelId;
    this.dim = dim;
    this.preprocessing = "transformers.js AutoProcessor defaults for the checkpoint";
  }

  static async load(modelId = "Xenova/clip-vit-base-patch16"): Promise<ClipBackend> {
    let lib: any;
    // optional dependency: resolved at runtime only when the clip backend
    // is requested, so builds and stub-backed tests never need it
    const specifier = "@xenova/transformers";
    try {
      lib = await import(specifier);
    } catch (err) {
      throw new CheckpointLoadError(
        `@xenova/transformers is not installed; the clip backend needs it (${err})`,
      );
    }
    try {
      const [visionModel, processor, textModel, tokenizer] = await Promise.all([
        lib.CLIPVisionModelWithProjection.from_pretrained(modelId),
        lib.AutoProcessor.from_pretrained(modelId),
        lib.CLIPTextModelWithProjection.from_pretrained(modelId),
        lib.AutoTokenizer.from_pretrained(modelId),
      ]);
      const dim = visionModel.config.projection_dim ?? 512;
      return new ClipBackend(modelId, dim, lib, visionModel, processor, textModel, tokenizer);
    } catch (err) {
      throw new CheckpointLoadError(`cannot load checkpoint ${modelId}: ${err}`);
    }
  }

  async embedImage(bytes: Buffer): Promise<Float32Array> {
    const image = await this.lib.RawImage.fromBlob(new Blob([Uint8Array.from(bytes)]));
    const inputs = await this.processor(image);
    const { image_embeds } = await this.visionModel(inputs);
    return l2Normalize(Float32Array.from(image_embeds.data));
  }

  async embedText(text: string): Promise<Float32Array> {
    const inputs = this.tokenizer([text], { padding: true, truncation: true });
    const { text_embeds } = await this.textModel(inputs);
    return l2Normalize(Float32Array.from(text_embeds.data));
  }
}

export async function loadBackend(
  kind: "clip" | "stub",
  modelId?: string,
  stubDim?: number,
): Promise<EmbeddingBackend> {
  if (kind === "stub") {
    return new StubBackend(stubDim ?? 512);
  }
  return ClipBackend.load(modelId);
}
