import { createInterface } from 'node:readline'
import { createReadStream } from 'node:fs'

import type { TableRow } from './tableFormat.js'

export interface GloveResult {
  dim: number
  rows: TableRow[]
}

/**
 * Stream a GloVe-format text file (word followed by its values, no header)
 * and keep only the requested vocabulary.  Rows come back in vocabulary
 * order; every vocabulary word must be present.
 */
export async function extractFromGlove(glovePath: string, vocab: string[]): Promise<GloveResult> {
  const wanted = new Set(vocab)
  const found = new Map<string, number[]>()
  let dim = -1

  const reader = createInterface({ input: createReadStream(glovePath, 'utf-8'), crlfDelay: Infinity })
  let lineNo = 0
  for await (const line of reader) {
    lineNo += 1
    if (!line.trim()) {
      continue
    }
    const parts = line.split(' ')
    if (dim === -1) {
      dim = parts.length - 1
      if (dim < 1) {
        throw new Error(`${glovePath} line ${lineNo}: no embedding values`)
      }
    }
    const word = parts[0]
    if (!wanted.has(word) || found.has(word)) {
      continue
    }
    if (parts.length - 1 !== dim) {
      throw new Error(`${glovePath} line ${lineNo}: expected ${dim} values, got ${parts.length - 1}`)
    }
    const vector = parts.slice(1).map(Number)
    if (vector.some((v) => !Number.isFinite(v))) {
      throw new Error(`${glovePath} line ${lineNo}: non-numeric value`)
    }
    found.set(word, vector)
    if (found.size === wanted.size) {
      break
    }
  }

  const missing = vocab.filter((w) => !found.has(w))
  if (missing.length > 0) {
    throw new Error(`vocabulary words missing from ${glovePath}: ${missing.join(', ')}`)
  }
  return { dim, rows: vocab.map((word) => ({ word, vector: found.get(word)! })) }
}
