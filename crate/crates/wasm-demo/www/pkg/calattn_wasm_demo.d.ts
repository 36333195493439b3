/* tslint:disable */
/* eslint-disable */

/**
 * A population whose logits are the true ones multiplied by `sharpness`,
 * so temperature `sharpness` restores calibration.
 */
export class Population {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Grid-searched temperature minimising ECE.
     */
    fitted_temperature(bins: number): number;
    constructor(samples: number, classes: number, sharpness: number, seed: bigint);
    /**
     * Reliability diagram and metrics after dividing the logits by `t`.
     */
    view(t: number, bins: number): ReliabilityView;
}

export class ReliabilityView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    accuracy: number;
    ada_ece: number;
    confidence: number;
    ece: number;
    mce: number;
    smece: number;
    svg: string;
}

/**
 * Loss-minimising scale for one sample.
 */
export function best_scale(logits: Float64Array, label: number, lambda: number): number;

/**
 * `[s, loss, dloss/ds]` triples for `points` values of `s` spaced
 * geometrically over `[lo, hi]`, flattened.
 */
export function scale_curve(logits: Float64Array, label: number, lambda: number, lo: number, hi: number, points: number): Float64Array;

/**
 * Softmax of `logits / t`.
 */
export function softmax_at(logits: Float64Array, t: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_get_reliabilityview_accuracy: (a: number) => number;
    readonly __wbg_get_reliabilityview_ada_ece: (a: number) => number;
    readonly __wbg_get_reliabilityview_confidence: (a: number) => number;
    readonly __wbg_get_reliabilityview_ece: (a: number) => number;
    readonly __wbg_get_reliabilityview_mce: (a: number) => number;
    readonly __wbg_get_reliabilityview_smece: (a: number) => number;
    readonly __wbg_get_reliabilityview_svg: (a: number) => [number, number];
    readonly __wbg_population_free: (a: number, b: number) => void;
    readonly __wbg_reliabilityview_free: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_accuracy: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_ada_ece: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_confidence: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_ece: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_mce: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_smece: (a: number, b: number) => void;
    readonly __wbg_set_reliabilityview_svg: (a: number, b: number, c: number) => void;
    readonly best_scale: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly population_fitted_temperature: (a: number, b: number) => [number, number, number];
    readonly population_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly population_view: (a: number, b: number, c: number) => [number, number, number];
    readonly scale_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly softmax_at: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
