import { readFileSync } from 'node:fs'

/** Load a vocabulary file: one lowercase word per line, order preserved. */
export function loadVocab(path: string): string[] {
  const words = readFileSync(path, 'utf-8')
    .split('\n')
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
  if (words.length === 0) {
    throw new Error(`vocabulary file is empty: ${path}`)
  }
  const seen = new Set<string>()
  for (const word of words) {
    if (word !== word.toLowerCase()) {
      throw new Error(`vocabulary word is not lowercase: ${word}`)
    }
    if (seen.has(word)) {
      throw new Error(`duplicate vocabulary word: ${word}`)
    }
    seen.add(word)
  }
  return words
}
