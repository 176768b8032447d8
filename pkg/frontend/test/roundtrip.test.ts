import { spawnSync } from 'node:child_process'
import { mkdtempSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join, resolve } from 'node:path'
import { describe, expect, it } from 'vitest'

import { main } from '../src/cli.js'

const GLOVE_FIXTURE = resolve(__dirname, '../../data/glove_fixture_300d.txt')
const LEXICON = resolve(__dirname, '../../data/lexicon.txt')

/**
 * The exported file is the contract with the consumer: its loader must
 * parse the table and return the exported vectors through its own text
 * encoder within 1e-6.
 */
describe('consumer round trip', () => {
  it('exported vectors survive load_table + embed_text', async (ctx) => {
    const probe = spawnSync('python3', ['-c', 'import textspot'], { encoding: 'utf-8' })
    if (probe.status !== 0) {
      ctx.skip()
      return
    }
    const dir = mkdtempSync(join(tmpdir(), 'rt-'))
    const out = join(dir, 'table.txt')
    const code = await main([
      '--source', 'glove-file', '--vocab', LEXICON, '--out', out,
      '--glove-file', GLOVE_FIXTURE,
    ])
    expect(code).toBe(0)

    const script = `
import json, sys
import numpy as np
from textspot.embed import load_table, embed_text

table = load_table(sys.argv[1])
glove = {}
for line in open(sys.argv[2], encoding="utf-8"):
    parts = line.split()
    glove[parts[0]] = np.array([float(v) for v in parts[1:]])
worst = 0.0
for word in table.words():
    got = embed_text(table, word)
    ref = glove[word]
    worst = max(worst, float(np.abs(got - ref).max()))
print(json.dumps({"dim": table.dim, "n": len(table), "worst": worst}))
`
    const run = spawnSync('python3', ['-c', script, out, GLOVE_FIXTURE], { encoding: 'utf-8' })
    expect(run.status).toBe(0)
    const report = JSON.parse(run.stdout.trim())
    expect(report.dim).toBe(300)
    expect(report.n).toBe(20)
    expect(report.worst).toBeLessThan(1e-6)
  })
})
