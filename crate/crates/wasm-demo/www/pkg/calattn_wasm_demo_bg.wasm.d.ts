/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_get_reliabilityview_accuracy: (a: number) => number;
export const __wbg_get_reliabilityview_ada_ece: (a: number) => number;
export const __wbg_get_reliabilityview_confidence: (a: number) => number;
export const __wbg_get_reliabilityview_ece: (a: number) => number;
export const __wbg_get_reliabilityview_mce: (a: number) => number;
export const __wbg_get_reliabilityview_smece: (a: number) => number;
export const __wbg_get_reliabilityview_svg: (a: number) => [number, number];
export const __wbg_population_free: (a: number, b: number) => void;
export const __wbg_reliabilityview_free: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_accuracy: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_ada_ece: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_confidence: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_ece: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_mce: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_smece: (a: number, b: number) => void;
export const __wbg_set_reliabilityview_svg: (a: number, b: number, c: number) => void;
export const best_scale: (a: number, b: number, c: number, d: number) => [number, number, number];
export const population_fitted_temperature: (a: number, b: number) => [number, number, number];
export const population_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const population_view: (a: number, b: number, c: number) => [number, number, number];
export const scale_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const softmax_at: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
