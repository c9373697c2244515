/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_attentionbench_free: (a: number, b: number) => void;
export const attentionbench_classical: (a: number) => number;
export const attentionbench_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const attentionbench_unified: (a: number) => number;
export const glst_weights: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const score_entries: (a: number, b: number, c: number) => [number, number];
export const synth_signal: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
