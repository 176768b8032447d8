#!/usr/bin/env node
import { extractFromEncoder, loadBertEncoder } from './bert.js'
import { extractFromGlove } from './glove.js'
import { writeTable } from './tableFormat.js'
import { loadVocab } from './vocab.js'

const USAGE = `usage: export-embeddings --source <bert-base-uncased|glove-file> --vocab <file> --out <file>
                         [--glove-file <path>] [--model <name-or-path>]

Writes a flat embedding table ("dim <d>" header, then one word per line)
for every vocabulary word, in vocabulary order.  The glove-file source
filters an existing GloVe text file; the bert source encodes each word in
isolation and mean-pools the last-layer hidden states of its subword
tokens (special tokens excluded).`

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>()
  for (let i = 0; i < argv.length; i++) {
    const key = argv[i]
    if (key === '--help' || key === '-h') {
      args.set('help', '1')
      continue
    }
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`bad argument: ${key}`)
    }
    args.set(key.slice(2), argv[++i])
  }
  return args
}

export async function main(argv: string[]): Promise<number> {
  let args: Map<string, string>
  try {
    args = parseArgs(argv)
  } catch (err) {
    console.error(String(err))
    console.error(USAGE)
    return 1
  }
  if (args.has('help')) {
    console.log(USAGE)
    return 0
  }
  const source = args.get('source')
  const vocabPath = args.get('vocab')
  const outPath = args.get('out')
  if (!source || !vocabPath || !outPath) {
    console.error('error: --source, --vocab and --out are required')
    console.error(USAGE)
    return 1
  }

  try {
    const vocab = loadVocab(vocabPath)
    if (source === 'glove-file') {
      const glovePath = args.get('glove-file')
      if (!glovePath) {
        console.error('error: --source glove-file requires --glove-file <path>')
        return 1
      }
      const { dim, rows } = await extractFromGlove(glovePath, vocab)
      writeTable(outPath, dim, rows)
      console.error(`wrote ${rows.length} words (dim ${dim}) to ${outPath}`)
      return 0
    }
    if (source === 'bert-base-uncased') {
      const encoder = await loadBertEncoder(args.get('model') ?? 'bert-base-uncased')
      const { dim, rows } = await extractFromEncoder(encoder, vocab)
      writeTable(outPath, dim, rows)
      console.error(`wrote ${rows.length} words (dim ${dim}) to ${outPath}`)
      return 0
    }
    console.error(`error: unknown source ${source}; use bert-base-uncased or glove-file`)
    return 1
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    return 1
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code
  })
}
