/* tslint:disable */
/* eslint-disable */

/**
 * Prepared random inputs for repeated attention passes.
 */
export class AttentionBench {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * One axial forward pass; returns the score entries it materialised.
     */
    classical(): number;
    constructor(t: number, n: number, d: number, heads: number);
    /**
     * One unified forward pass; returns the score entries it materialised.
     */
    unified(): number;
}

/**
 * Spatial attention weights of head 0 for one synthetic window, from a
 * freshly initialised model: `nodes²` global weights followed by `nodes²`
 * local weights.
 */
export function glst_weights(nodes: number, graph: string, mask_mode: string, seed: bigint): Float64Array;

/**
 * `[unified, classical]` attention-score entries per forward pass.
 */
export function score_entries(t: number, n: number, heads: number): Float64Array;

/**
 * Row-major `steps × nodes` synthetic signal.
 */
export function synth_signal(nodes: number, days: number, steps_per_day: number, seed: bigint, noise: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_attentionbench_free: (a: number, b: number) => void;
    readonly attentionbench_classical: (a: number) => number;
    readonly attentionbench_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly attentionbench_unified: (a: number) => number;
    readonly glst_weights: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly score_entries: (a: number, b: number, c: number) => [number, number];
    readonly synth_signal: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
