import { describe, expect, it } from 'vitest'

import { formatValue, renderTable } from '../src/tableFormat.js'

describe('formatValue', () => {
  it('keeps nine significant digits', () => {
    expect(formatValue(0.123456789123)).toBe('0.123456789')
    expect(formatValue(-1.5)).toBe('-1.50000000')
    expect(formatValue(0)).toBe('0')
  })

  it('round trips within 1e-6 relative error', () => {
    for (const v of [1.2345678912345, -0.000123456789, 987654.321, 3.14159265358979]) {
      const back = Number(formatValue(v))
      expect(Math.abs(back - v) / Math.abs(v)).toBeLessThan(1e-6)
    }
  })

  it('rejects non-finite values', () => {
    expect(() => formatValue(Number.NaN)).toThrow()
    expect(() => formatValue(Infinity)).toThrow()
  })
})

describe('renderTable', () => {
  it('writes the header and one row per word in order', () => {
    const text = renderTable(2, [
      { word: 'bb', vector: [1, 2] },
      { word: 'aa', vector: [3, 4] },
    ])
    const lines = text.trimEnd().split('\n')
    expect(lines[0]).toBe('dim 2')
    expect(lines[1].startsWith('bb ')).toBe(true)
    expect(lines[2].startsWith('aa ')).toBe(true)
  })

  it('rejects dimension mismatches', () => {
    expect(() => renderTable(3, [{ word: 'x', vector: [1, 2] }])).toThrow(/expected 3 values/)
  })
})
