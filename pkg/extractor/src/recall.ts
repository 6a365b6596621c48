/**
 * Reference retrieval scorer, independent of the primary implementation:
 * cosine ranking over normalized vectors, ties broken toward the lower
 * gallery index.
 */

export function normalizeRows(data: Float32Array, dim: number): Float64Array {
  const n = data.length / dim;
  const out = new Float64Array(data.length);
  for (let i = 0; i < n; i++) {
    let norm = 0;
    for (let k = 0; k < dim; k++) {
      const v = data[i * dim + k];
      norm += v * v;
    }
    norm = Math.sqrt(norm);
    for (let k = 0; k < dim; k++) {
      out[i * dim + k] = data[i * dim + k] / norm;
    }
  }
  return out;
}

export function recallAtK(
  queries: Float64Array,
  gallery: Float64Array,
  dim: number,
  truth: number[],
  ks: number[],
): Record<number, number> {
  const nq = queries.length / dim;
  const ng = gallery.length / dim;
  const hits: Record<number, number> = {};
  for (const k of ks) hits[k] = 0;
  for (let i = 0; i < nq; i++) {
    const scores = new Float64Array(ng);
    for (let j = 0; j < ng; j++) {
      let acc = 0;
      for (let k = 0; k < dim; k++) {
        acc += queries[i * dim + k] * gallery[j * dim + k];
      }
      scores[j] = acc;
    }
    const trueScore = scores[truth[i]];
    let rank = 1;
    for (let j = 0; j < ng; j++) {
      if (scores[j] > trueScore || (scores[j] === trueScore && j < truth[i])) {
        rank++;
      }
    }
    for (const k of ks) {
      if (rank <= k) hits[k]++;
    }
  }
  const out: Record<number, number> = {};
  for (const k of ks) out[k] = hits[k] / nq;
  return out;
}
