/* tslint:disable */
/* eslint-disable */

/**
 * Class probabilities for a unit feature at `feature_deg` against unit class
 * embeddings at `class_deg`, with temperature `tau`.
 */
export function class_probabilities(feature_deg: number, class_deg: Float64Array, tau: number): Float64Array;

/**
 * Mean radial power spectrum of `count` images, in log10.
 */
export function mean_log_spectrum(kind: string, side: number, f0: number, strength: number, count: number, seed: number): Float64Array;

/**
 * Blurs (`blur`, param = sigma) or recompresses (`jpeg`, param = quality).
 */
export function perturb(pixels: Float64Array, side: number, kind: string, param: number): Float64Array;

/**
 * Grayscale pixels of one rendered image, row-major in [0, 1].
 * `kind` is `real`, `periodic` or `broadband`; `strength` is the periodic
 * amplitude or the broadband noise std.
 */
export function render_image(kind: string, side: number, f0: number, strength: number, seed: number): Float64Array;

/**
 * Spike bins of the same mean spectrum.
 */
export function spike_bins(kind: string, side: number, f0: number, strength: number, count: number, seed: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly class_probabilities: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly mean_log_spectrum: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly perturb: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly render_image: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly spike_bins: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
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
