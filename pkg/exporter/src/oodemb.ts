/**
 * OODEMB1 binary format, mirrored from the engine's format docs:
 *
 *   magic    8 bytes  "OODEMB1\n"
 *   header   one UTF-8 JSON line ending in "\n":
 *            {"dim":d,"count":n,"classes":[...],"modality":...,"normalized":...}
 *   vectors  n*d little-endian IEEE-754 binary32, row-major
 *   labels   n little-endian int32, -1 = unlabeled
 *
 * No padding anywhere. The header keys are written in this exact order.
 */

export const MAGIC = "OODEMB1\n";
export const NO_LABEL = -1;

export type Modality = "image" | "text";

export interface EmbeddingFile {
  dim: number;
  classes: string[];
  modality: Modality;
  normalized: boolean;
  vectors: Float32Array[];
  labels: number[];
}

export function encodeOodemb(data: EmbeddingFile): Buffer {
  const { dim, classes, modality, normalized, vectors, labels } = data;
  if (labels.length !== vectors.length) {
    throw new Error(`labels (${labels.length}) and vectors (${vectors.length}) differ`);
  }
  for (const [i, v] of vectors.entries()) {
    if (v.length !== dim) {
      throw new Error(`row ${i} has ${v.length} values, expected dim=${dim}`);
    }
  }
  for (const label of labels) {
    if (label < NO_LABEL || label >= classes.length) {
      throw new Error(`label ${label} outside -1..${classes.length - 1}`);
    }
  }

  const header = JSON.stringify({
    dim,
    count: vectors.length,
    classes,
    modality,
    normalized,
  });
  const head = Buffer.from(MAGIC + header + "\n", "utf-8");

  const body = Buffer.alloc(4 * vectors.length * dim + 4 * labels.length);
  const view = new DataView(body.buffer, body.byteOffset);
  let offset = 0;
  for (const row of vectors) {
    for (let j = 0; j < dim; j++) {
      view.setFloat32(offset, row[j], true);
      offset += 4;
    }
  }
  for (const label of labels) {
    view.setInt32(offset, label, true);
    offset += 4;
  }
  return Buffer.concat([head, body]);
}

export function decodeOodemb(buffer: Buffer): EmbeddingFile {
  const magic = buffer.subarray(0, MAGIC.length).toString("utf-8");
  if (magic !== MAGIC) {
    throw new Error("missing OODEMB1 magic bytes");
  }
  const newline = buffer.indexOf(0x0a, MAGIC.length);
  if (newline < 0) {
    throw new Error("unterminated header line");
  }
  const header = JSON.parse(buffer.subarray(MAGIC.length, newline).toString("utf-8"));
  const { dim, count, classes, modality, normalized } = header;
  const body = buffer.subarray(newline + 1);
  const expected = 4 * count * dim + 4 * count;
  if (body.length !== expected) {
    throw new Error(`payload is ${body.length} bytes, expected ${expected}`);
  }
  const view = new DataView(body.buffer, body.byteOffset, body.byteLength);
  const vectors: Float32Array[] = [];
  let offset = 0;
  for (let i = 0; i < count; i++) {
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = view.getFloat32(offset, true);
      offset += 4;
    }
    vectors.push(row);
  }
  const labels: number[] = [];
  for (let i = 0; i < count; i++) {
    labels.push(view.getInt32(offset, true));
    offset += 4;
  }
  return { dim, classes, modality, normalized, vectors, labels };
}

export function l2Normalize(vector: Float32Array): Float32Array {
  let sum = 0;
  for (const value of vector) sum += value * value;
  const norm = Math.sqrt(sum);
  if (norm === 0) {
    throw new Error("cannot normalize a zero vector");
  }
  const out = new Float32Array(vector.length);
  for (let i = 0; i < vector.length; i++) out[i] = vector[i] / norm;
  return out;
}
