/* tslint:disable */
/* eslint-disable */

export function aperture(c: Float64Array, beta: number): Float64Array;

export function capacity(c: Float64Array): number;

/**
 * `op` is one of `and`, `or`, `not` (`b` is ignored for `not`).
 */
export function combine(op: string, a: Float64Array, b: Float64Array): Float64Array;

/**
 * Conceptor of a point cloud given as `[x0, y0, x1, y1, ...]`.
 */
export function conceptor_from_points(xy: Float64Array, alpha: number): Float64Array;

/**
 * `[s1, s2, angle]`: semi-axes (the eigenvalues, descending) and the angle in
 * radians of the major axis.
 */
export function ellipse(c: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly aperture: (a: number, b: number, c: number) => [number, number, number, number];
    readonly capacity: (a: number, b: number) => [number, number, number];
    readonly combine: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly conceptor_from_points: (a: number, b: number, c: number) => [number, number, number, number];
    readonly ellipse: (a: number, b: number) => [number, number, number, number];
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
