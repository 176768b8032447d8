import { writeFileSync } from 'node:fs'

export interface TableRow {
  word: string
  vector: number[]
}

/**
 * Serialize one value with 9 significant digits so a re-parse stays within
 * 1e-6 of the original while files remain diffable.
 */
export function formatValue(v: number): string {
  if (!Number.isFinite(v)) {
    throw new Error(`non-finite embedding value: ${v}`)
  }
  if (v === 0) {
    return '0'
  }
  return v.toPrecision(9)
}

/**
 * Render the flat table format: header line `dim <d>`, then one line per
 * word with d space-separated decimal values, in vocabulary order.
 */
export function renderTable(dim: number, rows: TableRow[]): string {
  if (!Number.isInteger(dim) || dim < 1) {
    throw new Error(`table dimension must be a positive integer, got ${dim}`)
  }
  const lines = [`dim ${dim}`]
  for (const { word, vector } of rows) {
    if (vector.length !== dim) {
      throw new Error(`word ${word}: expected ${dim} values, got ${vector.length}`)
    }
    lines.push(`${word} ${vector.map(formatValue).join(' ')}`)
  }
  return lines.join('\n') + '\n'
}

export function writeTable(outPath: string, dim: number, rows: TableRow[]): void {
  writeFileSync(outPath, renderTable(dim, rows), 'utf-8')
}
