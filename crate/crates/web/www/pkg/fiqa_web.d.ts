/* tslint:disable */
/* eslint-disable */

/**
 * The face under the capture-style pipeline for the same family.
 */
export function capture(face_seed: number, size: number, family: string, strength: number, seed: number): Uint8Array;

/**
 * The face under a synthetic degradation of `family` at `strength` in `[0, 1]`.
 */
export function degrade(face_seed: number, size: number, family: string, strength: number, seed: number): Uint8Array;

/**
 * PSNR in dB of the synthetic degradation against the clean face.
 */
export function degraded_psnr(face_seed: number, size: number, family: string, strength: number, seed: number): number;

/**
 * Names of the selectable degradation families, clean excluded.
 */
export function families(): string[];

/**
 * One face under every benchmark family at one strength, tiled left to right.
 */
export function family_strip(face_seed: number, size: number, strength: number, seed: number): Uint8Array;

/**
 * Recipe used by [`degrade`] as JSON, for display.
 */
export function recipe_json(family: string, strength: number, seed: number): string;

/**
 * The clean procedural face for `face_seed`.
 */
export function render_face(face_seed: number, size: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly capture: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly degrade: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly degraded_psnr: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly families: () => [number, number];
    readonly family_strip: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly recipe_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly render_face: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
