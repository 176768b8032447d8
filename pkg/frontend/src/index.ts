export { extractFromGlove } from './glove.js'
export { extractFromEncoder, loadBertEncoder, poolWordVector } from './bert.js'
export type { EncodedTokens, TokenEncoder } from './bert.js'
export { formatValue, renderTable, writeTable } from './tableFormat.js'
export { loadVocab } from './vocab.js'
