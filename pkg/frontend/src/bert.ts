import type { TableRow } from './tableFormat.js'

/**
 * Token-level output of a masked language model for one piece of text:
 * per-token last-layer hidden states plus a parallel flag marking special
 * tokens (CLS/SEP/PAD) that must not enter the word vector.
 */
export interface EncodedTokens {
  hiddenStates: number[][]
  isSpecial: boolean[]
}

export interface TokenEncoder {
  dim: number
  encode(text: string): Promise<EncodedTokens>
}

export interface BertResult {
  dim: number
  rows: TableRow[]
}

/**
 * Mean over the non-special subword token states: one context-free vector
 * per word, encoded in isolation.
 */
export function poolWordVector(word: string, encoded: EncodedTokens): number[] {
  const kept = encoded.hiddenStates.filter((_, i) => !encoded.isSpecial[i])
  if (kept.length === 0) {
    throw new Error(`word produced no non-special tokens: ${word}`)
  }
  const dim = kept[0].length
  const out = new Array<number>(dim).fill(0)
  for (const state of kept) {
    for (let k = 0; k < dim; k++) {
      out[k] += state[k]
    }
  }
  for (let k = 0; k < dim; k++) {
    out[k] /= kept.length
  }
  return out
}

export async function extractFromEncoder(encoder: TokenEncoder, vocab: string[]): Promise<BertResult> {
  const rows: TableRow[] = []
  for (const word of vocab) {
    rows.push({ word, vector: poolWordVector(word, await encoder.encode(word)) })
  }
  return { dim: encoder.dim, rows }
}

/**
 * Real model-backed encoder via transformers.js.  The library (and the
 * model weights) are optional at install time; a clear error tells the user
 * what is missing when the bert source is requested without them.
 */
export async function loadBertEncoder(model = 'bert-base-uncased'): Promise<TokenEncoder> {
  let transformers: any
  try {
    // optional dependency: not installed in minimal environments
    transformers = await import('@xenova/transformers' as string)
  } catch {
    throw new Error(
      "the bert source needs the optional '@xenova/transformers' package; " +
        'install it (plus a local copy of the model) or use --source glove-file',
    )
  }
  const { AutoTokenizer, AutoModel } = transformers
  const tokenizer = await AutoTokenizer.from_pretrained(model)
  const net = await AutoModel.from_pretrained(model)
  const dim = net.config.hidden_size as number

  return {
    dim,
    async encode(text: string): Promise<EncodedTokens> {
      const inputs = await tokenizer(text)
      const output = await net(inputs)
      const hidden = output.last_hidden_state // [1, tokens, dim]
      const nTokens = hidden.dims[1]
      const ids: bigint[] = Array.from(inputs.input_ids.data)
      const specialIds = new Set<number>(
        tokenizer.all_special_ids ? Array.from(tokenizer.all_special_ids, Number) : [],
      )
      const hiddenStates: number[][] = []
      const isSpecial: boolean[] = []
      for (let t = 0; t < nTokens; t++) {
        const row = Array.from(hidden.data.slice(t * dim, (t + 1) * dim), Number)
        hiddenStates.push(row)
        isSpecial.push(specialIds.has(Number(ids[t])))
      }
      return { hiddenStates, isSpecial }
    },
  }
}
